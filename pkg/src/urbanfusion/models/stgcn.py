"""STGCN forecaster: gated temporal convolutions around Chebyshev graph convolutions.

Tensors are laid out ``(batch, time, node, channel)`` throughout.
"""

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import torch
import torch.nn as nn


@dataclass
class STGCNConfig:
    input_horizon: int = 12
    temporal_kernel: int = 3
    cheb_order: int = 3
    blocks: tuple = ((64, 16, 64), (64, 16, 64))
    head_hidden: int = 128
    huber_delta: float = 10.0
    lr: float = 1e-3
    decay_rate: float = 0.7
    decay_every: int = 5
    batch_size: int = 32
    max_epochs: int = 200
    patience: int = 10
    layer_norm: bool = True
    seed: int = 0

    def __post_init__(self):
        self.blocks = tuple(tuple(int(c) for c in b) for b in self.blocks)
        if self.cheb_order < 1:
            raise ValueError("cheb_order must be >= 1")
        if self.huber_delta <= 0:
            raise ValueError("huber_delta must be positive")
        if self.output_length() < 1:
            raise ValueError(
                f"input_horizon {self.input_horizon} leaves no time steps after {len(self.blocks)} "
                f"blocks with temporal kernel {self.temporal_kernel}"
            )

    def output_length(self) -> int:
        return self.input_horizon - len(self.blocks) * 2 * (self.temporal_kernel - 1)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["blocks"] = [list(b) for b in self.blocks]
        return d


def scaled_laplacian(A, self_loops: bool = True) -> np.ndarray:
    """``2 L / lambda_max - I`` for the symmetric-normalized Laplacian of ``A``.

    Self-loops are added before normalizing. An edgeless graph has L = 0 and
    uses lambda_max = 2.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("adjacency must be square")
    if not np.allclose(A, A.T, atol=1e-12, rtol=0):
        raise ValueError("Chebyshev graph convolution needs a symmetric adjacency")
    n = A.shape[0]
    if self_loops:
        A = A + np.eye(n)
    deg = A.sum(axis=1)
    inv_sqrt = np.zeros(n)
    inv_sqrt[deg > 0] = deg[deg > 0] ** -0.5
    L = np.eye(n) - inv_sqrt[:, None] * A * inv_sqrt[None, :]
    L = 0.5 * (L + L.T)
    lam = float(np.linalg.eigvalsh(L).max())
    if lam < 1e-10:
        lam = 2.0
    return 2.0 * L / lam - np.eye(n)


class TemporalGatedConv(nn.Module):
    """(W_f * h + b_f) * sigmoid(W_g * h + b_g), a valid convolution along time."""

    def __init__(self, c_in: int, c_out: int, kernel: int = 3):
        super().__init__()
        self.c_in, self.c_out, self.kernel = c_in, c_out, kernel
        self.filter = nn.Conv2d(c_in, c_out, (kernel, 1))
        self.gate = nn.Conv2d(c_in, c_out, (kernel, 1))

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        if h.shape[1] < self.kernel:
            raise ValueError(f"sequence of length {h.shape[1]} is shorter than the temporal kernel {self.kernel}")
        if h.shape[-1] != self.c_in:
            raise ValueError(f"expected {self.c_in} input channels, got {h.shape[-1]}")
        x = h.permute(0, 3, 1, 2)  # B, C, T, N
        out = self.filter(x) * torch.sigmoid(self.gate(x))
        return out.permute(0, 2, 3, 1)


class ChebGraphConv(nn.Module):
    """ReLU(sum_k T_k(L~) h Theta_k) with ``order`` Chebyshev terms."""

    def __init__(self, c_in: int, c_out: int, order: int, laplacian):
        super().__init__()
        self.order = order
        self.theta = nn.Parameter(torch.empty(order, c_in, c_out))
        bound = 1.0 / np.sqrt(c_in * order)
        nn.init.uniform_(self.theta, -bound, bound)
        self.register_buffer("laplacian", torch.as_tensor(np.asarray(laplacian), dtype=torch.get_default_dtype()))

    def set_laplacian(self, laplacian) -> None:
        self.laplacian = torch.as_tensor(np.asarray(laplacian), dtype=self.theta.dtype)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        L = self.laplacian.to(h.dtype)
        x0 = h
        out = x0 @ self.theta[0]
        if self.order > 1:
            x1 = torch.einsum("nm,btmc->btnc", L, x0)
            out = out + x1 @ self.theta[1]
            for k in range(2, self.order):
                x2 = 2 * torch.einsum("nm,btmc->btnc", L, x1) - x0
                out = out + x2 @ self.theta[k]
                x0, x1 = x1, x2
        return torch.relu(out)


class STConvBlock(nn.Module):
    """Temporal -> spatial -> temporal sandwich; shortens time by 2 * (kernel - 1)."""

    def __init__(self, c_in: int, channels, kernel: int, order: int, laplacian, layer_norm: bool = True):
        super().__init__()
        c_t, c_s, c_o = channels
        self.temporal1 = TemporalGatedConv(c_in, c_t, kernel)
        self.spatial = ChebGraphConv(c_t, c_s, order, laplacian)
        self.temporal2 = TemporalGatedConv(c_s, c_o, kernel)
        self.norm = nn.LayerNorm(c_o) if layer_norm else nn.Identity()

    def forward(self, h):
        return self.norm(self.temporal2(self.spatial(self.temporal1(h))))


class STGCN(nn.Module):
    """Stacked ST blocks followed by a per-node fully connected head.

    ``forward(x, weather)`` takes ``x`` of shape (B, T_in, N) or (B, T_in, N, C)
    and optional ``weather`` of shape (B, T_in, W); weather is broadcast to
    every node and concatenated as extra input channels. Returns (B, N).
    """

    def __init__(self, adjacency, config: Optional[STGCNConfig] = None, in_channels: int = 1,
                 weather_dim: int = 0):
        super().__init__()
        self.config = config or STGCNConfig()
        self.weather_dim = weather_dim
        self.in_channels = in_channels
        L = scaled_laplacian(adjacency)
        c = in_channels + weather_dim
        blocks = []
        for ch in self.config.blocks:
            blocks.append(STConvBlock(c, ch, self.config.temporal_kernel, self.config.cheb_order, L,
                                      self.config.layer_norm))
            c = ch[-1]
        self.blocks = nn.ModuleList(blocks)
        t_out = self.config.output_length()
        self.head = nn.Sequential(
            nn.Linear(t_out * c, self.config.head_hidden),
            nn.ReLU(),
            nn.Linear(self.config.head_hidden, 1),
        )

    def set_adjacency(self, adjacency) -> None:
        L = scaled_laplacian(adjacency)
        for b in self.blocks:
            b.spatial.set_laplacian(L)

    def zero_head(self) -> None:
        nn.init.zeros_(self.head[-1].weight)
        nn.init.zeros_(self.head[-1].bias)

    def forward(self, x: torch.Tensor, weather: Optional[torch.Tensor] = None) -> torch.Tensor:
        if x.dim() == 3:
            x = x.unsqueeze(-1)
        if self.weather_dim:
            if weather is None:
                raise ValueError("this model was built with weather channels; pass weather")
            if weather.shape[:2] != x.shape[:2] or weather.shape[-1] != self.weather_dim:
                raise ValueError(f"weather shape {tuple(weather.shape)} does not match window {tuple(x.shape)}")
            w = weather.unsqueeze(2).expand(-1, -1, x.shape[2], -1)
            x = torch.cat([x, w], dim=-1)
        h = x
        for block in self.blocks:
            h = block(h)
        B, T, N, C = h.shape
        h = h.permute(0, 2, 1, 3).reshape(B, N, T * C)
        return self.head(h).squeeze(-1)


def huber_loss(y: torch.Tensor, y_hat: torch.Tensor, delta: float = 10.0) -> torch.Tensor:
    """Mean Huber loss: quadratic for |r| <= delta, linear beyond."""
    r = torch.abs(y - y_hat)
    quad = 0.5 * r ** 2
    lin = delta * r - 0.5 * delta ** 2
    return torch.where(r <= delta, quad, lin).mean()
