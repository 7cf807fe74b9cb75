"""Window assembly and the shared mini-batch training loop."""

import copy
import logging
import math
import random
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import torch

logger = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


def seed_everything(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed % (2 ** 32))
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True)


@dataclass
class Windows:
    """Sliding one-step-ahead windows.

    ``x[i]`` covers steps ``targets[i] - T_in .. targets[i] - 1``; ``y[i]`` is
    the count at ``targets[i]``.
    """

    x: torch.Tensor  # B, T_in, N
    y: torch.Tensor  # B, N
    weather: Optional[torch.Tensor]  # B, T_in, W
    targets: np.ndarray

    def __len__(self):
        return len(self.targets)


def make_windows(inputs: np.ndarray, targets: np.ndarray, horizon: int, segment: range,
                 weather: Optional[np.ndarray] = None, dtype=torch.float32) -> Windows:
    """Windows whose target step lies in ``segment`` (inputs may reach back before it)."""
    idx = np.array([t for t in segment if t >= horizon], dtype=np.int64)
    if idx.size == 0:
        raise TrainingError(f"segment {segment} has no step with {horizon} steps of history")
    gather = idx[:, None] - horizon + np.arange(horizon)[None, :]
    x = torch.as_tensor(np.asarray(inputs, dtype=float)[gather], dtype=dtype)
    y = torch.as_tensor(np.asarray(targets, dtype=float)[idx], dtype=dtype)
    w = None
    if weather is not None:
        w = torch.as_tensor(np.asarray(weather, dtype=float)[gather], dtype=dtype)
    return Windows(x, y, w, idx)


@dataclass
class History:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    initial_val_loss: float = float("nan")
    best_epoch: int = -1
    stopped_early: bool = False
    diverged: bool = False
    optimizer_state: Optional[dict] = field(default=None, repr=False)

    @property
    def best_val_loss(self) -> float:
        return min(self.val_loss) if self.val_loss else float("nan")

    @property
    def converged(self) -> bool:
        return (not self.diverged and bool(self.val_loss) and math.isfinite(self.best_val_loss)
                and self.best_val_loss < self.initial_val_loss)

    def as_dict(self) -> dict:
        return {
            "train_loss": self.train_loss, "val_loss": self.val_loss, "lr": self.lr,
            "initial_val_loss": self.initial_val_loss, "best_epoch": self.best_epoch,
            "stopped_early": self.stopped_early, "diverged": self.diverged, "converged": self.converged,
        }


def step_lr(base_lr: float, epoch: int, decay_rate: Optional[float], decay_every: Optional[int]) -> float:
    """Learning rate in force during 0-based ``epoch`` under step decay."""
    if not decay_rate or not decay_every:
        return base_lr
    return base_lr * decay_rate ** (epoch // decay_every)


def evaluate_loss(model, loss_fn: Callable, data: Windows, batch_size: int = 256) -> float:
    model.eval()
    total, count = 0.0, 0
    with torch.no_grad():
        for s in range(0, len(data), batch_size):
            sl = slice(s, s + batch_size)
            w = data.weather[sl] if data.weather is not None else None
            loss = loss_fn(model, data.x[sl], w, data.y[sl])
            n = data.y[sl].numel()
            total += float(loss) * n
            count += n
    return total / max(count, 1)


def fit(model, loss_fn: Callable, train: Windows, val: Windows, *, lr: float, batch_size: int,
        max_epochs: int, patience: int, seed: int, decay_rate: Optional[float] = None,
        decay_every: Optional[int] = None) -> History:
    """Adam with optional step decay and early stopping on validation loss.

    ``loss_fn(model, x, weather, y)`` returns a scalar tensor. The weights of
    the best validation epoch are restored before returning. A non-finite
    training loss stops the run with ``history.diverged`` set.
    """
    history = History()
    gen = torch.Generator().manual_seed(seed)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    history.initial_val_loss = evaluate_loss(model, loss_fn, val)
    best_state = copy.deepcopy(model.state_dict())
    best = history.initial_val_loss
    since_best = 0
    for epoch in range(max_epochs):
        cur_lr = step_lr(lr, epoch, decay_rate, decay_every)
        for g in opt.param_groups:
            g["lr"] = cur_lr
        model.train()
        perm = torch.randperm(len(train), generator=gen)
        running, seen = 0.0, 0
        for s in range(0, len(train), batch_size):
            idx = perm[s:s + batch_size]
            w = train.weather[idx] if train.weather is not None else None
            try:
                loss = loss_fn(model, train.x[idx], w, train.y[idx])
            except FloatingPointError as exc:
                logger.error("epoch %d: %s", epoch, exc)
                history.diverged = True
                break
            if not torch.isfinite(loss):
                logger.error("epoch %d: non-finite training loss", epoch)
                history.diverged = True
                break
            opt.zero_grad()
            loss.backward()
            opt.step()
            running += float(loss.detach()) * len(idx)
            seen += len(idx)
        if history.diverged:
            break
        val_loss = evaluate_loss(model, loss_fn, val)
        history.train_loss.append(running / max(seen, 1))
        history.val_loss.append(val_loss)
        history.lr.append(cur_lr)
        if not math.isfinite(val_loss):
            history.diverged = True
            break
        if val_loss < best:
            best, since_best = val_loss, 0
            best_state = copy.deepcopy(model.state_dict())
            history.best_epoch = epoch
        else:
            since_best += 1
            if since_best >= patience:
                history.stopped_early = True
                break
    model.load_state_dict(best_state)
    model.eval()
    model.fitted = True
    history.optimizer_state = opt.state_dict()
    return history
