"""Layer-local supervised contrastive loss with positive-pair margins.

Two margin variants are provided:

``clamp``
    ``s~ = min(s + m, 1)`` on positive pairs before the temperature. Pairs that
    hit the cap stop contributing gradient through their own numerator.
``subtract``
    log-probabilities are computed from raw similarities and ``m`` is taken off
    each positive afterwards. Under the mean-over-positives reduction this
    only adds ``m`` to the loss, so gradients match ``margin_type="none"``.

The row-max stability shift is either detached (``detach``) or left on the
tape (``direct``); forward values agree either way.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

__all__ = [
    "LossConfig",
    "SimilarityContext",
    "positive_mask",
    "similarity_matrix",
    "apply_clamp_margin",
    "layer_loss",
    "contrastive_loss",
    "NeutralityReport",
    "subtract_neutrality_check",
]

MarginType = Literal["clamp", "subtract", "none"]
StabilityMode = Literal["detach", "direct"]

UNIT_NORM_TOL = 1e-4


@dataclass(frozen=True)
class LossConfig:
    temperature: float = 0.15
    margin: float = 0.0
    margin_type: MarginType = "clamp"
    stability_mode: StabilityMode = "detach"

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if self.margin < 0:
            raise ValueError("margin must be nonnegative")
        if self.margin_type not in ("clamp", "subtract", "none"):
            raise ValueError(f"unknown margin_type {self.margin_type!r}")
        if self.stability_mode not in ("detach", "direct"):
            raise ValueError(f"unknown stability_mode {self.stability_mode!r}")

    @property
    def effective_logit_shift(self) -> float:
        """Logit-space size of the margin before saturation (``m / tau``)."""
        return self.margin / self.temperature


@dataclass
class SimilarityContext:
    """Cosine similarities of the concatenated view batch and its positive mask."""

    S: Tensor
    mask: np.ndarray
    labels: np.ndarray

    @property
    def positive_sets(self) -> list[np.ndarray]:
        return [np.flatnonzero(row) for row in self.mask]

    @property
    def clipped(self) -> np.ndarray:
        """Similarities clipped to [-1, 1]; for reporting only, never differentiated."""
        return np.clip(self.S.values, -1.0, 1.0)


def positive_mask(labels) -> np.ndarray:
    """``M[u, v] = 1`` iff ``y(u) == y(v)`` and ``u != v``."""
    labels = np.asarray(labels)
    mask = labels[:, None] == labels[None, :]
    np.fill_diagonal(mask, False)
    return mask


def similarity_matrix(Z: Tensor, labels) -> SimilarityContext:
    """Build ``S = Z Z^T`` for unit-norm rows of ``Z``."""
    norms = np.linalg.norm(Z.values, axis=1)
    if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOL):
        worst = float(np.max(np.abs(norms - 1.0)))
        raise ValueError(f"rows of Z must be unit norm (max deviation {worst:.3g})")
    labels = np.asarray(labels)
    if labels.shape != (Z.shape[0],):
        raise ValueError("need one label per row of Z")
    S = ad.matmul(Z, ad.transpose(Z))
    return SimilarityContext(S=S, mask=positive_mask(labels), labels=labels)


def apply_clamp_margin(S, mask, m: float) -> Tensor:
    """``min(s + m, 1)`` on positive pairs, untouched elsewhere."""
    if m < 0:
        raise ValueError("margin must be nonnegative")
    S = S if isinstance(S, Tensor) else Tensor(S)
    return ad.where(mask, ad.clamp_upper(S + m, 1.0), S)


def _anchor_weights(mask: np.ndarray) -> tuple[np.ndarray, int]:
    counts = mask.sum(axis=1)
    active = counts > 0
    n_active = int(active.sum())
    if n_active == 0:
        raise ValueError("no anchor has a positive pair")
    weights = np.zeros(mask.shape, dtype=np.float64)
    weights[active] = mask[active] / counts[active, None]
    return weights, n_active


def layer_loss(ctx: SimilarityContext, cfg: LossConfig) -> Tensor:
    """Mean-over-positives supervised contrastive loss for one layer.

    Anchors without positives are left out of the outer average.
    """
    mask = ctx.mask
    weights, n_active = _anchor_weights(mask)
    S = ctx.S

    if cfg.margin_type == "clamp":
        s_mod = apply_clamp_margin(S, mask, cfg.margin)
    else:
        s_mod = S
    b = s_mod * (1.0 / cfg.temperature)

    alpha = ad.row_max(b, exclude_self=True)
    if cfg.stability_mode == "detach":
        alpha = ad.stop_gradient(alpha)
    g = b - ad.reshape(alpha, (-1, 1))

    lse = ad.row_logsumexp_excluding_self(g)
    logp = g - ad.reshape(lse, (-1, 1))
    if cfg.margin_type == "subtract":
        logp = logp - cfg.margin * mask.astype(logp.dtype)

    total = ad.sum(logp * weights.astype(logp.dtype))
    loss = total * (-1.0 / n_active)
    if not np.isfinite(loss.values):
        raise ad.NonFiniteError("contrastive loss is not finite")
    return loss


def contrastive_loss(Z: Tensor, labels, cfg: LossConfig) -> Tensor:
    return layer_loss(similarity_matrix(Z, labels), cfg)


@dataclass(frozen=True)
class NeutralityReport:
    forward_shift: float
    max_grad_diff: float
    margin: float


def subtract_neutrality_check(Z_fn, params, labels, temperature: float, margin: float,
                       stability_mode: StabilityMode = "detach") -> NeutralityReport:
    """Compare subtract-margin and no-margin losses on the same batch.

    ``Z_fn`` maps nothing to a fresh ``(2B, d)`` unit-row tensor computed from
    ``params`` under the active tape; it is called once per loss so each gets
    its own graph.
    """
    results = []
    for kind in ("subtract", "none"):
        cfg = LossConfig(temperature, margin, kind, stability_mode)
        with ad.Tape() as tape:
            loss = contrastive_loss(Z_fn(), labels, cfg)
        results.append((float(loss.values), tape.grad(loss, params)))
    (l_sub, g_sub), (l_none, g_none) = results
    diff = max((float(np.max(np.abs(a - b))) if a.size else 0.0) for a, b in zip(g_sub, g_none))
    return NeutralityReport(forward_shift=l_sub - l_none, max_grad_diff=diff, margin=margin)
