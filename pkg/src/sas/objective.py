"""MLM softmax loss, RTD binary cross-entropy, their weighted sum and the RTD weight schedule."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .numerics import Tensor


@dataclass(frozen=True)
class LambdaSchedule:
    mode: str = "constant"
    start: float = 50.0
    end: float = 50.0
    total_epochs: int = 1

    def __post_init__(self):
        if self.mode not in ("constant", "linear"):
            raise ValueError(f"unknown lambda mode {self.mode!r}")
        if self.total_epochs < 1:
            raise ValueError("total_epochs must be >= 1")

    @classmethod
    def constant(cls, value: float, total_epochs: int = 1) -> "LambdaSchedule":
        return cls("constant", value, value, total_epochs)

    @classmethod
    def linear(cls, start: float, end: float, total_epochs: int) -> "LambdaSchedule":
        return cls("linear", start, end, total_epochs)

    def __call__(self, epoch: int) -> float:
        if self.mode == "constant" or self.total_epochs == 1:
            return float(self.start)
        return float(self.start + (self.end - self.start) * epoch / (self.total_epochs - 1))


@dataclass
class LossBreakdown:
    mlm_loss: float
    rtd_loss: float
    lambda_t: float
    total: float
    mlm_empty: bool = False


def _per_instance_mean(values: Tensor, owner: np.ndarray, n_instances: int) -> tuple[Tensor, int]:
    """Average ``values`` within each owner, then across owners that have any value."""
    owner = np.asarray(owner, dtype=np.int64)
    counts = np.bincount(owner, minlength=n_instances).astype(np.float64)
    present = counts > 0
    weights = np.zeros(len(owner), dtype=values.data.dtype)
    weights[:] = (1.0 / counts[owner]) / present.sum()
    return nx.sum(nx.mul(values, Tensor(weights, dtype=values.data.dtype))), int(present.sum())


def mlm_loss(log_probs: Tensor, targets: np.ndarray, owner: np.ndarray | None = None) -> Tensor:
    """Mean negative log-likelihood of the original tokens at the selected positions.

    ``log_probs`` holds one row per selected position; ``owner[r]`` is the
    batch instance the row belongs to (a single instance when omitted).
    """
    targets = np.asarray(targets, dtype=np.int64)
    m = len(targets)
    if m == 0:
        warnings.warn("mlm_loss over an empty position set; returning 0", RuntimeWarning, stacklevel=2)
        return Tensor(0.0, dtype=log_probs.data.dtype)
    if log_probs.shape[0] != m:
        raise nx.ShapeError(f"mlm_loss: log_probs {log_probs.shape} vs targets {targets.shape}")
    owner = np.zeros(m, dtype=np.int64) if owner is None else np.asarray(owner, dtype=np.int64)
    picked = nx.take(log_probs, (np.arange(m), targets))
    total, _ = _per_instance_mean(picked, owner, int(owner.max()) + 1)
    return nx.scale(total, -1.0)


def rtd_loss(probs: Tensor, labels: np.ndarray, pad_mask: np.ndarray) -> Tensor:
    """Binary cross-entropy of original-vs-replaced over all non-pad positions.

    Averaged per instance, then over the batch. ``probs`` must already be
    strictly inside (0, 1), which :func:`numerics.sigmoid` guarantees.
    """
    mask = np.asarray(pad_mask, dtype=bool)
    if probs.shape != mask.shape:
        raise nx.ShapeError(f"rtd_loss: probs {probs.shape} vs pad_mask {mask.shape}")
    rows, cols = np.nonzero(mask)
    y = np.asarray(labels)[rows, cols].astype(probs.data.dtype)
    d = nx.take(probs, (rows, cols))
    ll = nx.add(nx.mul(nx.log(d), Tensor(y, dtype=d.data.dtype)),
                nx.mul(nx.log(nx.sub(1.0, d)), Tensor(1.0 - y, dtype=d.data.dtype)))
    total, _ = _per_instance_mean(ll, rows, mask.shape[0])
    return nx.scale(total, -1.0)


def combined_loss(mlm: Tensor, rtd: Tensor | None, schedule: LambdaSchedule | None, epoch: int) -> tuple[Tensor, LossBreakdown]:
    """mlm + lambda_t * rtd. ``rtd=None`` means an MLM-only strategy (lambda reported as 0)."""
    if schedule is not None and epoch >= schedule.total_epochs:
        raise ValueError(f"epoch {epoch} outside schedule of {schedule.total_epochs} epochs")
    if rtd is None:
        total = mlm
        lam, rtd_val = 0.0, 0.0
    else:
        lam = schedule(epoch) if schedule is not None else 1.0
        total = nx.add(mlm, nx.scale(rtd, lam))
        rtd_val = float(rtd.data)
    mlm_val = float(mlm.data)
    for name, v in (("mlm", mlm_val), ("rtd", rtd_val)):
        if not math.isfinite(v):
            raise FloatingPointError(f"non-finite {name} loss: {v}")
    # report total from the rounded components so that total == mlm + lam*rtd is exact in the log
    return total, LossBreakdown(mlm_val, rtd_val, lam, mlm_val + lam * rtd_val)
