"""Zero-inflated negative binomial distribution.

Convention: ``p`` multiplies the count, i.e. for y > 0

    P(Y = y) = (1 - pi) * C(y + n - 1, y) * p**y * (1 - p)**n

and P(Y = 0) = pi + (1 - pi) * (1 - p)**n. The mean is (1 - pi) * n * p / (1 - p).
"""

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from scipy.special import gammaln, logsumexp

P_FLOOR = 1e-6
N_FLOOR = 1e-6
TAIL_MASS = 1e-12


@dataclass
class ZINBParams:
    n: np.ndarray
    p: np.ndarray
    pi: np.ndarray

    def __post_init__(self):
        self.n = np.asarray(self.n, dtype=float)
        self.p = np.asarray(self.p, dtype=float)
        self.pi = np.asarray(self.pi, dtype=float)
        if not (np.all(np.isfinite(self.n)) and np.all(np.isfinite(self.p)) and np.all(np.isfinite(self.pi))):
            raise ValueError("ZINB parameters must be finite")
        if np.any(self.n <= 0) or np.any((self.p <= 0) | (self.p >= 1)) or np.any((self.pi < 0) | (self.pi > 1)):
            raise ValueError("ZINB parameters out of range: need n > 0, 0 < p < 1, 0 <= pi <= 1")

    def mean(self) -> np.ndarray:
        return zinb_mean(self.n, self.p, self.pi)

    def quantile(self, q) -> np.ndarray:
        return zinb_quantile(q, self.n, self.p, self.pi)

    def take(self, idx) -> "ZINBParams":
        return ZINBParams(self.n[idx], self.p[idx], self.pi[idx])


# ---------------------------------------------------------------- numpy side

def zinb_logpmf(y, n, p, pi) -> np.ndarray:
    y = np.asarray(y)
    if np.any(y < 0):
        raise ValueError("ZINB support is the non-negative integers")
    y, n, p, pi = np.broadcast_arrays(np.asarray(y, dtype=float), n, p, pi)
    with np.errstate(divide="ignore"):
        log_nb = (gammaln(y + n) - gammaln(y + 1) - gammaln(n)
                  + np.where(y > 0, y * np.log(p), 0.0) + n * np.log1p(-p))
        log_pi = np.log(pi)
        log_1m_pi = np.log1p(-pi)
    zero = logsumexp(np.stack([log_pi, log_1m_pi + log_nb]), axis=0)
    return np.where(y == 0, zero, log_1m_pi + log_nb)


def zinb_pmf(y, n, p, pi) -> np.ndarray:
    return np.exp(zinb_logpmf(y, n, p, pi))


def zinb_mean(n, p, pi) -> np.ndarray:
    return (1.0 - np.asarray(pi)) * np.asarray(n) * np.asarray(p) / (1.0 - np.asarray(p))


def zinb_var(n, p, pi) -> np.ndarray:
    n, p, pi = (np.asarray(a, dtype=float) for a in (n, p, pi))
    m_nb = n * p / (1 - p)
    v_nb = n * p / (1 - p) ** 2
    return (1 - pi) * (v_nb + m_nb ** 2) - ((1 - pi) * m_nb) ** 2


def support_bound(n, p, pi, tail=TAIL_MASS) -> int:
    """Upper count beyond which every node's remaining mass is below ``tail``."""
    mean = np.max(zinb_mean(n, p, np.zeros_like(np.asarray(pi, dtype=float))))
    sd = np.sqrt(np.max(zinb_var(n, p, np.zeros_like(np.asarray(pi, dtype=float)))))
    hi = int(np.ceil(mean + 12 * sd + 20))
    while True:
        grid = np.arange(hi + 1)[:, None]
        cdf = np.exp(zinb_logpmf(grid, np.ravel(n)[None], np.ravel(p)[None], np.ravel(pi)[None])).sum(axis=0)
        if np.all(1.0 - cdf < tail):
            return hi
        hi *= 2


def zinb_quantile(q, n, p, pi) -> np.ndarray:
    """Smallest integer y with CDF(y) >= q, found by scanning the CDF upward.

    The scan stops for a node once the remaining tail mass drops below
    ``TAIL_MASS``; nodes still short of ``q`` then report the current count.
    """
    n, p, pi = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (n, p, pi)))
    shape = n.shape
    n, p, pi = n.ravel(), p.ravel(), pi.ravel()
    out = np.zeros(n.size, dtype=np.int64)
    if n.size == 0:
        return out.reshape(shape)
    log_p, log_1m_pi = np.log(p), np.log1p(-np.minimum(pi, 1.0))
    log_nb = n * np.log1p(-p)  # NB log-pmf at y = 0
    cdf = pi + np.exp(log_1m_pi + log_nb)
    active = np.flatnonzero(cdf < q)
    y = 0
    while active.size:
        y += 1
        a = active
        log_nb[a] += log_p[a] + np.log(y - 1 + n[a]) - np.log(y)
        cdf[a] += np.exp(log_1m_pi[a] + log_nb[a])
        out[a] = y
        active = a[(cdf[a] < q) & (1.0 - cdf[a] >= TAIL_MASS)]
    return out.reshape(shape)


# ---------------------------------------------------------------- torch side

def zinb_log_prob(y: torch.Tensor, n: torch.Tensor, p: torch.Tensor, pi: torch.Tensor) -> torch.Tensor:
    """Elementwise log P(Y = y) with numerical floors on the parameters."""
    n = n.clamp(min=N_FLOOR)
    p = p.clamp(P_FLOOR, 1 - P_FLOOR)
    pi = pi.clamp(0.0, 1 - P_FLOOR)
    log_1m_p = torch.log1p(-p)
    log_1m_pi = torch.log1p(-pi)
    log_nb = (torch.lgamma(y + n) - torch.lgamma(y + 1) - torch.lgamma(n)
              + y * torch.log(p) + n * log_1m_p)
    # exact at pi = 0; the tiny floor only guards a fully underflowed zero mass
    zero_mass = pi + (1 - pi) * torch.exp(n * log_1m_p)
    zero = torch.log(zero_mass.clamp(min=torch.finfo(zero_mass.dtype).tiny))
    return torch.where(y == 0, zero, log_1m_pi + log_nb)


def zinb_nll(y: torch.Tensor, n: torch.Tensor, p: torch.Tensor, pi: torch.Tensor) -> torch.Tensor:
    """Mean negative log-likelihood of integer targets ``y``."""
    return -zinb_log_prob(y, n, p, pi).mean()


def activate(n_pre: torch.Tensor, p_pre: torch.Tensor, pi_pre: torch.Tensor):
    """Map unconstrained head outputs to (n > 0, p in (0,1), pi in (0,1))."""
    return F.softplus(n_pre), torch.sigmoid(p_pre), torch.sigmoid(pi_pre)
