"""STZINB forecaster: spatial (diffusion GCN) and temporal (TCN) branches whose
ZINB parameter heads are fused by elementwise product.

The optional cross-attention block lets the 1D weather window query the
temporal branch's per-parameter embeddings before fusion.
"""

import logging
import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
import torch
import torch.nn as nn

from .zinb import N_FLOOR, P_FLOOR, ZINBParams, activate

logger = logging.getLogger(__name__)

PARAMS = ("n", "p", "pi")


@dataclass
class STZINBConfig:
    input_horizon: int = 12
    diffusion_order: int = 2
    gcn_widths: tuple = (32, 32, 32)
    tcn_widths: tuple = (32, 32, 32)
    attention: bool = False
    embed_dim: int = 32
    heads: int = 4
    lr: float = 1e-4
    batch_size: int = 32
    max_epochs: int = 200
    patience: int = 10
    seed: int = 0

    def __post_init__(self):
        self.gcn_widths = tuple(int(w) for w in self.gcn_widths)
        self.tcn_widths = tuple(int(w) for w in self.tcn_widths)
        if self.diffusion_order < 1:
            raise ValueError("diffusion_order must be >= 1")
        if self.embed_dim % self.heads:
            raise ValueError(f"embed_dim {self.embed_dim} is not divisible by {self.heads} heads")
        if self.gcn_widths[-1] != self.embed_dim or self.tcn_widths[-1] != self.embed_dim:
            raise ValueError("last GCN and TCN widths must equal embed_dim")

    def as_dict(self) -> dict:
        d = asdict(self)
        d["gcn_widths"] = list(self.gcn_widths)
        d["tcn_widths"] = list(self.tcn_widths)
        return d


def transition_matrix(A) -> np.ndarray:
    """Row-normalized ``A``; rows of isolated nodes stay zero."""
    A = np.asarray(A, dtype=float)
    if np.any(A < 0):
        raise ValueError("diffusion convolution needs a non-negative adjacency")
    rs = A.sum(axis=1, keepdims=True)
    isolated = np.flatnonzero(rs[:, 0] <= 0)
    if isolated.size:
        logger.info("diffusion graph: %d isolated nodes get zero transition rows", isolated.size)
    return np.divide(A, rs, out=np.zeros_like(A), where=rs > 0)


class DiffusionGraphConv(nn.Module):
    """ReLU(sum_{k=1..K} T_k(W_f) h Theta_f^k + T_k(W_b) h Theta_b^k).

    ``T_k`` is the Chebyshev polynomial of the transition matrix; the
    backward transition is built from ``A`` transposed (equal to the forward
    one for symmetric graphs).
    """

    def __init__(self, c_in: int, c_out: int, adjacency, order: int = 2):
        super().__init__()
        self.c_in, self.c_out, self.order = c_in, c_out, order
        self.theta_f = nn.Parameter(torch.empty(order, c_in, c_out))
        self.theta_b = nn.Parameter(torch.empty(order, c_in, c_out))
        bound = math.sqrt(6.0 / (c_in * order * 2 + c_out))
        nn.init.uniform_(self.theta_f, -bound, bound)
        nn.init.uniform_(self.theta_b, -bound, bound)
        A = np.asarray(adjacency, dtype=float)
        dtype = torch.get_default_dtype()
        self.register_buffer("W_f", torch.as_tensor(transition_matrix(A), dtype=dtype))
        self.register_buffer("W_b", torch.as_tensor(transition_matrix(A.T), dtype=dtype))

    def set_adjacency(self, adjacency) -> None:
        A = np.asarray(adjacency, dtype=float)
        self.W_f = torch.as_tensor(transition_matrix(A), dtype=self.theta_f.dtype)
        self.W_b = torch.as_tensor(transition_matrix(A.T), dtype=self.theta_f.dtype)

    @staticmethod
    def _cheb_terms(W, h, order):
        x0 = h
        x1 = torch.einsum("nm,bmc->bnc", W, h)
        terms = [x1]
        for _ in range(2, order + 1):
            x2 = 2 * torch.einsum("nm,bmc->bnc", W, x1) - x0
            terms.append(x2)
            x0, x1 = x1, x2
        return terms

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        if h.shape[-1] != self.c_in:
            raise ValueError(f"expected {self.c_in} input channels, got {h.shape[-1]}")
        out = 0
        W_f, W_b = self.W_f.to(h.dtype), self.W_b.to(h.dtype)
        for k, (tf, tb) in enumerate(zip(self._cheb_terms(W_f, h, self.order), self._cheb_terms(W_b, h, self.order))):
            out = out + tf @ self.theta_f[k] + tb @ self.theta_b[k]
        return torch.relu(out)


class TemporalConvTCN(nn.Module):
    """ReLU(Gamma h + b) mapping a width-``w_in`` temporal feature to width ``w_out`` per node."""

    def __init__(self, w_in: int, w_out: int):
        super().__init__()
        self.w_in, self.w_out = w_in, w_out
        self.gamma = nn.Linear(w_in, w_out)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        if h.shape[-1] != self.w_in:
            raise ValueError(f"TCN layer expects width {self.w_in}, got {h.shape[-1]}")
        return torch.relu(self.gamma(h))


def multihead_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, heads: int,
                        scale_dim: Optional[int] = None) -> torch.Tensor:
    """softmax(Q K^T / sqrt(d_k / heads)) V computed per head.

    ``q`` is (B, Tq, d), ``k`` and ``v`` are (B, Tk, d); ``scale_dim`` is d_k
    and defaults to d.
    """
    B, Tq, d = q.shape
    Tk = k.shape[1]
    if d % heads:
        raise ValueError(f"model width {d} is not divisible by {heads} heads")
    dh = d // heads
    scale = math.sqrt((scale_dim or d) / heads)
    qh = q.reshape(B, Tq, heads, dh).transpose(1, 2)
    kh = k.reshape(B, Tk, heads, dh).transpose(1, 2)
    vh = v.reshape(B, Tk, heads, dh).transpose(1, 2)
    w = torch.softmax(qh @ kh.transpose(-1, -2) / scale, dim=-1)
    return (w @ vh).transpose(1, 2).reshape(B, Tq, d)


class CrossAttention(nn.Module):
    """Weather-window queries over node embeddings, folded back onto every node.

    Queries come from the (B, T_in, W) weather window, keys and values from the
    (B, N, d) node embedding. The attended summary is averaged over the
    weather steps and added residually to each node's embedding, then a
    residual feed-forward layer follows. One layer only.
    """

    def __init__(self, weather_dim: int, embed_dim: int = 32, heads: int = 4, ff_mult: int = 2):
        super().__init__()
        if embed_dim % heads:
            raise ValueError(f"embed_dim {embed_dim} is not divisible by {heads} heads")
        self.heads = heads
        self.W_Q = nn.Linear(weather_dim, embed_dim, bias=False)
        self.W_K = nn.Linear(embed_dim, embed_dim, bias=False)
        self.W_V = nn.Linear(embed_dim, embed_dim, bias=False)
        self.W_O = nn.Linear(embed_dim, embed_dim, bias=False)
        self.ff = nn.Sequential(
            nn.Linear(embed_dim, ff_mult * embed_dim),
            nn.ReLU(),
            nn.Linear(ff_mult * embed_dim, embed_dim),
        )

    def attend(self, h: torch.Tensor, weather: torch.Tensor) -> torch.Tensor:
        """Residual attention sublayer only: ``h + W_O mean_t Attn_t``."""
        ctx = multihead_attention(self.W_Q(weather), self.W_K(h), self.W_V(h), self.heads)
        return h + self.W_O(ctx.mean(dim=1)).unsqueeze(1)

    def forward(self, h: torch.Tensor, weather: torch.Tensor) -> torch.Tensor:
        h = self.attend(h, weather)
        return h + self.ff(h)


class STZINB(nn.Module):
    """Spatio-temporal zero-inflated negative binomial network.

    ``forward(x, weather)`` with ``x`` of shape (B, T_in, N) returns the
    activated ``(n, p, pi)``, each (B, N). Weather is only read when the
    model was built with attention.
    """

    def __init__(self, adjacency, config: Optional[STZINBConfig] = None, weather_dim: int = 0):
        super().__init__()
        self.config = cfg = config or STZINBConfig()
        if cfg.attention and weather_dim <= 0:
            raise ValueError("attention needs weather_dim > 0")
        self.weather_dim = weather_dim if cfg.attention else 0
        widths = (cfg.input_horizon,) + cfg.gcn_widths
        self.spatial = nn.ModuleList(
            DiffusionGraphConv(a, b, adjacency, cfg.diffusion_order) for a, b in zip(widths, widths[1:])
        )
        widths = (cfg.input_horizon,) + cfg.tcn_widths
        self.temporal = nn.ModuleList(TemporalConvTCN(a, b) for a, b in zip(widths, widths[1:]))
        d = cfg.embed_dim
        self.spatial_heads = nn.ModuleDict({k: nn.Linear(d, 1) for k in PARAMS})
        self.param_embed = nn.ModuleDict({k: nn.Linear(d, d) for k in PARAMS})
        self.temporal_heads = nn.ModuleDict({k: nn.Linear(d, 1) for k in PARAMS})
        self.attention = (
            nn.ModuleDict({k: CrossAttention(weather_dim, d, cfg.heads) for k in PARAMS}) if cfg.attention else None
        )
        # product of pre-activations has a saddle at zero; start both factors away from it
        init = {"n": (1.0, 1.0), "p": (1.0, 0.5), "pi": (1.0, -2.0)}
        with torch.no_grad():
            for k, (bs, bt) in init.items():
                self.spatial_heads[k].bias.fill_(bs)
                self.temporal_heads[k].bias.fill_(bt)

    def set_adjacency(self, adjacency) -> None:
        for layer in self.spatial:
            layer.set_adjacency(adjacency)

    def embeddings(self, x: torch.Tensor):
        h = x.transpose(1, 2)  # B, N, T_in
        hs = h
        for layer in self.spatial:
            hs = layer(hs)
        ht = h
        for layer in self.temporal:
            ht = layer(ht)
        return hs, ht

    def pre_activations(self, x: torch.Tensor, weather: Optional[torch.Tensor] = None) -> dict:
        hs, ht = self.embeddings(x)
        out = {}
        for k in PARAMS:
            e = self.param_embed[k](ht)
            if self.attention is not None:
                if weather is None:
                    raise ValueError("attention variant needs a weather window")
                if weather.shape[:2] != x.shape[:2]:
                    raise ValueError("weather window is not aligned with the count window")
                e = self.attention[k](e, weather)
            spatial = self.spatial_heads[k](hs).squeeze(-1)
            temporal = self.temporal_heads[k](e).squeeze(-1)
            out[k] = spatial * temporal
        return out

    def forward(self, x: torch.Tensor, weather: Optional[torch.Tensor] = None):
        pre = self.pre_activations(x, weather)
        for k, v in pre.items():
            if not torch.all(torch.isfinite(v)):
                raise FloatingPointError(f"non-finite pre-activation for ZINB parameter {k}")
        return activate(pre["n"], pre["p"], pre["pi"])

    def predict_distribution(self, x: torch.Tensor, weather: Optional[torch.Tensor] = None) -> ZINBParams:
        """Per-node predictive ZINB parameters as float64 numpy arrays."""
        if not getattr(self, "fitted", False):
            raise RuntimeError("model has not been trained; fit it or load a checkpoint first")
        self.eval()
        with torch.no_grad():
            n, p, pi = (t.double().numpy() for t in self(x, weather))
        return ZINBParams(np.maximum(n, N_FLOOR), np.clip(p, P_FLOOR, 1 - P_FLOOR), np.clip(pi, P_FLOOR, 1 - P_FLOOR))
