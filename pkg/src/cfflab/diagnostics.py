"""Saturation and stability diagnostics."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "DiagnosticSnapshot",
    "clamp_activation_rate",
    "layer_gradient_norm",
    "variance_ratio",
    "epoch_mean_car",
]


@dataclass
class DiagnosticSnapshot:
    epoch: int
    per_layer_car: list[float] = field(default_factory=list)
    per_layer_grad_norm: list[float] = field(default_factory=list)
    margin_per_layer: list[float] = field(default_factory=list)

    def __post_init__(self):
        lengths = {len(self.per_layer_car), len(self.per_layer_grad_norm), len(self.margin_per_layer)}
        if len(lengths) != 1:
            raise ValueError("per-layer lists must have equal length")
        if any(not 0.0 <= c <= 1.0 for c in self.per_layer_car):
            raise ValueError("CAR values must lie in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> DiagnosticSnapshot:
        return cls(**data)


def clamp_activation_rate(S, mask, m: float) -> float:
    """Fraction of ordered positive pairs with ``s + m > 1`` (strict).

    ``S`` may be a Tensor or array. Values are clipped to [-1, 1] first so
    rounding on near-identical rows cannot register at ``m = 0``.
    """
    s = np.clip(np.asarray(getattr(S, "values", S), dtype=np.float64), -1.0, 1.0)
    mask = np.asarray(mask, dtype=bool)
    n_pos = int(mask.sum())
    if n_pos == 0:
        raise ValueError("no positive pairs: CAR is undefined")
    return float(np.count_nonzero((s + m > 1.0) & mask)) / n_pos


def epoch_mean_car(batch_values: Iterable[float]) -> float:
    """Unweighted mean over minibatches (a short last batch counts the same)."""
    vals = list(batch_values)
    if not vals:
        raise ValueError("no minibatch CAR values")
    return float(np.mean(vals))


def layer_gradient_norm(grads: Sequence[np.ndarray | None]) -> float:
    """Euclidean norm of all gradient entries of one block, taken together."""
    if not grads or any(g is None for g in grads):
        raise ValueError("missing gradients for layer parameters")
    return float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads)))


def variance_ratio(acc_clamp: Sequence[float], acc_subtract: Sequence[float]) -> float:
    """Sample variance of the first group over that of the second (ddof=1)."""
    a = np.asarray(acc_clamp, dtype=np.float64)
    b = np.asarray(acc_subtract, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise ValueError("each group needs at least two values")
    vb = b.var(ddof=1)
    if vb == 0:
        raise ZeroDivisionError("denominator group has zero variance")
    return float(a.var(ddof=1) / vb)
