"""Two-stage training: layer-local contrastive pretraining, then a linear probe.

Seeding: one integer seed ``sigma`` yields three independent PCG64 streams
via ``numpy.random.SeedSequence(sigma, spawn_key=(k,))`` with ``k = 0``
(weight init), ``1`` (shuffling and the validation split) and ``2``
(augmentation draws). Runs are bit-reproducible in float64 on one thread.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Literal, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import AugmentConfig, ImageDataset, make_two_view_batch, normalize, split_validation
from .diagnostics import DiagnosticSnapshot, clamp_activation_rate, epoch_mean_car, layer_gradient_norm
from .loss import LossConfig, layer_loss, similarity_matrix
from .vit import Encoder, EncoderConfig, forward_all_layers, init_encoder

__all__ = [
    "margin_schedule",
    "AdamW",
    "adamw_step",
    "TrainConfig",
    "RunRecord",
    "ProbeResult",
    "DivergenceError",
    "rng_streams",
    "stage1_train",
    "extract_features",
    "stage2_linear_probe",
    "run_seeded_experiment",
]

log = logging.getLogger(__name__)

INIT_STREAM, SHUFFLE_STREAM, AUGMENT_STREAM = 0, 1, 2


class DivergenceError(FloatingPointError):
    """Training produced a non-finite loss or parameter."""


def margin_schedule(m_first: float, m_last: float, num_layers: int) -> list[float]:
    """Linear interpolation from ``m_first`` (layer 0) to ``m_last`` (layer L-1)."""
    if num_layers < 1:
        raise ValueError("need at least one layer")
    if num_layers == 1:
        return [float(m_first)]
    return [m_first + (m_last - m_first) * l / (num_layers - 1) for l in range(num_layers)]


def rng_streams(seed: int) -> tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    """(init, shuffle, augment) generators for one run."""
    return tuple(
        np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(k,))))
        for k in (INIT_STREAM, SHUFFLE_STREAM, AUGMENT_STREAM)
    )


# ---------------------------------------------------------------------------
# optimizer


def adamw_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: dict,
               lr: float, betas=(0.9, 0.999), weight_decay: float = 0.0, eps: float = 1e-8) -> None:
    """In-place AdamW update with decoupled weight decay.

    ``state`` starts as ``{}``; it holds ``step``, ``m`` and ``v``.
    """
    if any(not np.all(np.isfinite(g)) for g in grads):
        raise DivergenceError("non-finite gradient")
    if not state:
        state["step"] = 0
        state["m"] = [np.zeros_like(p) for p in params]
        state["v"] = [np.zeros_like(p) for p in params]
    b1, b2 = betas
    state["step"] += 1
    t = state["step"]
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state["m"], state["v"]):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if weight_decay:
            p -= lr * weight_decay * p
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


class AdamW:
    def __init__(self, params: Sequence[Tensor], lr: float, betas=(0.9, 0.999),
                 weight_decay: float = 0.0, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.betas, self.weight_decay, self.eps = lr, betas, weight_decay, eps
        self.state: dict = {}

    def step(self, grads: Sequence[np.ndarray]) -> None:
        adamw_step([p.values for p in self.params], grads, self.state,
                   self.lr, self.betas, self.weight_decay, self.eps)


# ---------------------------------------------------------------------------
# configuration and records


@dataclass
class TrainConfig:
    stage1_epochs: int = 30
    stage2_epochs: int = 50
    batch_size: int = 32
    lr1: float = 4e-3
    betas1: tuple[float, float] = (0.9, 0.999)
    weight_decay1: float = 1e-4
    lr2: float = 0.05
    betas2: tuple[float, float] = (0.9, 0.999)
    weight_decay2: float = 0.0
    temperature: float = 0.15
    margin_type: Literal["clamp", "subtract", "none"] = "clamp"
    stability_mode: Literal["detach", "direct"] = "detach"
    margin_first: float = 0.4
    margin_last: float = 0.1
    seed: int = 1
    val_size: int = 0
    probe_features: Literal["final", "all"] = "final"
    diagnostic_epochs: tuple[int, ...] | None = None
    dtype: str = "float64"

    def __post_init__(self):
        if self.stage1_epochs < 0 or self.stage2_epochs < 1:
            raise ValueError("epochs must be positive")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")
        self.betas1 = tuple(self.betas1)
        self.betas2 = tuple(self.betas2)
        if self.diagnostic_epochs is not None:
            self.diagnostic_epochs = tuple(self.diagnostic_epochs)
        LossConfig(self.temperature, 0.0, self.margin_type, self.stability_mode)

    @classmethod
    def full_scale(cls, **overrides) -> TrainConfig:
        """Full-scale hyperparameters (600 + 50 epochs, batch 512)."""
        base = dict(stage1_epochs=600, stage2_epochs=50, batch_size=512, lr1=4e-3, weight_decay1=1e-4,
                    lr2=5e-4, temperature=0.15, margin_first=0.4, margin_last=0.1, val_size=5000)
        base.update(overrides)
        return cls(**base)

    @property
    def condition(self) -> str:
        return f"{self.margin_type}_{self.stability_mode}"

    def margins(self, num_layers: int) -> list[float]:
        return margin_schedule(self.margin_first, self.margin_last, num_layers)


@dataclass
class ProbeResult:
    test_accuracy: float
    best_epoch: int
    val_curve: list[float]
    test_curve: list[float]
    train_accuracy: float


@dataclass
class RunRecord:
    seed: int
    condition: str
    test_accuracy: float | None
    status: str = "ok"
    error: str | None = None
    best_epoch: int | None = None
    val_curve: list[float] = field(default_factory=list)
    stage1_loss: list[list[float]] = field(default_factory=list)
    snapshots: list[DiagnosticSnapshot] = field(default_factory=list)
    init_checksum: str = ""
    final_checksum: str = ""
    seconds: float = 0.0

    def __post_init__(self):
        if self.test_accuracy is not None and not 0.0 <= self.test_accuracy <= 100.0:
            raise ValueError("accuracy must be a percentage")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["snapshots"] = [s.to_dict() if isinstance(s, DiagnosticSnapshot) else s for s in self.snapshots]
        return d

    @classmethod
    def from_dict(cls, data: dict) -> RunRecord:
        data = dict(data)
        data["snapshots"] = [DiagnosticSnapshot.from_dict(s) for s in data.get("snapshots", [])]
        return cls(**data)


# ---------------------------------------------------------------------------
# stage 1


def _batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    perm = rng.permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size) if len(perm[i:i + batch_size]) >= 2]


def stage1_step(encoder: Encoder, views, cfg: TrainConfig, margins: Sequence[float],
                optimizers: Sequence[AdamW] | None = None, layers: Sequence[int] | None = None):
    """One minibatch of layer-local training.

    Returns ``(losses, grads, sims)`` where ``grads[l]`` lists the gradient of
    ``L_l`` for every tensor in ``encoder.layer_param_sets()[l]`` and
    ``sims[l]`` is the similarity context of layer ``l``.
    """
    groups = encoder.layer_param_sets()
    active = range(len(groups)) if layers is None else layers
    with ad.Tape() as tape:
        outs = forward_all_layers(views, encoder)
        ctxs, losses = {}, {}
        for l in active:
            ctxs[l] = similarity_matrix(outs[l][1], views.labels)
            losses[l] = layer_loss(ctxs[l], LossConfig(cfg.temperature, margins[l], cfg.margin_type,
                                                        cfg.stability_mode))
    grads = {l: tape.grad(losses[l], groups[l]) for l in active}
    if optimizers is not None:
        for l in active:
            optimizers[l].step(grads[l])
    return {l: float(v.values) for l, v in losses.items()}, grads, ctxs


def stage1_train(encoder: Encoder, data: ImageDataset, cfg: TrainConfig, aug: AugmentConfig,
                 shuffle_rng: np.random.Generator, augment_rng: np.random.Generator
                 ) -> tuple[list[list[float]], list[DiagnosticSnapshot]]:
    """Train every block against its own loss; return per-epoch losses and snapshots."""
    L = encoder.config.num_layers
    margins = cfg.margins(L)
    optimizers = [AdamW(group, cfg.lr1, cfg.betas1, cfg.weight_decay1) for group in encoder.layer_param_sets()]
    diag_epochs = set(cfg.diagnostic_epochs) if cfg.diagnostic_epochs is not None else {cfg.stage1_epochs}
    history, snapshots = [], []
    for epoch in range(1, cfg.stage1_epochs + 1):
        want_diag = epoch in diag_epochs
        car_batches: list[list[float]] = [[] for _ in range(L)]
        grad_norms: list[float] | None = None
        epoch_losses = np.zeros(L)
        batches = _batches(len(data), cfg.batch_size, shuffle_rng)
        for idx in batches:
            views = make_two_view_batch(data, idx, aug, augment_rng)
            views.views = views.views.astype(cfg.dtype, copy=False)
            try:
                losses, grads, ctxs = stage1_step(encoder, views, cfg, margins, optimizers)
            except (ad.NonFiniteError, DivergenceError, OverflowError) as exc:
                raise DivergenceError(f"epoch {epoch}: {exc}") from exc
            epoch_losses += [losses[l] for l in range(L)]
            if want_diag:
                for l in range(L):
                    if ctxs[l].mask.any():
                        car_batches[l].append(clamp_activation_rate(ctxs[l].S, ctxs[l].mask, margins[l]))
                if grad_norms is None:
                    grad_norms = [layer_gradient_norm(grads[l]) for l in range(L)]
        for p in encoder.named_parameters().values():
            if not np.all(np.isfinite(p.values)):
                raise DivergenceError(f"epoch {epoch}: non-finite parameters")
        history.append(list(epoch_losses / max(len(batches), 1)))
        if want_diag:
            snapshots.append(DiagnosticSnapshot(
                epoch=epoch,
                per_layer_car=[epoch_mean_car(c) for c in car_batches],
                per_layer_grad_norm=grad_norms or [0.0] * L,
                margin_per_layer=list(margins),
            ))
        log.debug("epoch %d losses %s", epoch, history[-1])
    return history, snapshots


# ---------------------------------------------------------------------------
# stage 2


def extract_features(encoder: Encoder, images: np.ndarray, which: Literal["final", "all"] = "final",
                     batch_size: int = 256) -> np.ndarray:
    """Frozen representations (no tape, so no gradient reaches the encoder)."""
    feats = []
    for i in range(0, len(images), batch_size):
        outs = forward_all_layers(images[i:i + batch_size], encoder)
        zs = [z.values for _, z in outs]
        feats.append(zs[-1] if which == "final" else np.concatenate(zs, axis=1))
    return np.concatenate(feats)


def _cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    shifted = logits - ad.reshape(ad.stop_gradient(ad.row_max(logits)), (-1, 1))
    lse = ad.log(ad.sum(ad.exp(shifted), axis=1))
    onehot = np.zeros(logits.shape)
    onehot[np.arange(len(labels)), labels] = 1.0
    picked = ad.sum(shifted * onehot, axis=1)
    return ad.mean(lse - picked)


def _accuracy(feats, labels, W, b) -> float:
    pred = np.argmax(feats @ W + b, axis=1)
    return 100.0 * float(np.mean(pred == labels))


def stage2_linear_probe(train: tuple[np.ndarray, np.ndarray], val: tuple[np.ndarray, np.ndarray] | None,
                        test: tuple[np.ndarray, np.ndarray], num_classes: int, cfg: TrainConfig,
                        shuffle_rng: np.random.Generator) -> ProbeResult:
    """Softmax regression on fixed features.

    Reports test accuracy at the epoch with the best validation accuracy
    (earliest on ties); without a validation set, the last epoch.
    """
    Xtr, ytr = train
    W = Tensor(np.zeros((Xtr.shape[1], num_classes), dtype=Xtr.dtype), requires_grad=True)
    b = Tensor(np.zeros(num_classes, dtype=Xtr.dtype), requires_grad=True)
    opt = AdamW([W, b], cfg.lr2, cfg.betas2, cfg.weight_decay2)
    val_curve, test_curve = [], []
    best, best_epoch = -1.0, 0
    for epoch in range(1, cfg.stage2_epochs + 1):
        for idx in _batches(len(ytr), cfg.batch_size, shuffle_rng):
            with ad.Tape() as tape:
                loss = _cross_entropy(ad.matmul(Tensor(Xtr[idx]), W) + b, ytr[idx])
            opt.step(tape.grad(loss, [W, b]))
        test_curve.append(_accuracy(*test, W.values, b.values))
        if val is not None:
            acc = _accuracy(*val, W.values, b.values)
            val_curve.append(acc)
            if acc > best:
                best, best_epoch = acc, epoch
    if val is None:
        best_epoch = cfg.stage2_epochs
    return ProbeResult(test_curve[best_epoch - 1], best_epoch, val_curve, test_curve,
                       _accuracy(Xtr, ytr, W.values, b.values))


# ---------------------------------------------------------------------------
# full run


def run_seeded_experiment(train_data: ImageDataset, test_data: ImageDataset, encoder_config: EncoderConfig,
                          cfg: TrainConfig, aug: AugmentConfig, encoder_out: list | None = None) -> RunRecord:
    """Stage 1 + probe for one seed. Divergence is recorded, not raised.

    If ``encoder_out`` is a list, the trained encoder is appended to it.
    """
    start = time.perf_counter()
    init_rng, shuffle_rng, augment_rng = rng_streams(cfg.seed)
    dtype = np.dtype(cfg.dtype)
    encoder = init_encoder(encoder_config, init_rng, dtype=dtype)
    record = RunRecord(seed=cfg.seed, condition=cfg.condition, test_accuracy=None,
                       init_checksum=encoder.checksum())
    if cfg.val_size:
        train_part, val_part = split_validation(train_data, cfg.val_size, shuffle_rng)
    else:
        train_part, val_part = train_data, None
    try:
        record.stage1_loss, record.snapshots = stage1_train(encoder, train_part, cfg, aug, shuffle_rng, augment_rng)
    except DivergenceError as exc:
        record.status, record.error = "failed", str(exc)
        record.seconds = time.perf_counter() - start
        log.warning("seed %d (%s) diverged: %s", cfg.seed, cfg.condition, exc)
        return record

    def feats(ds: ImageDataset):
        return extract_features(encoder, normalize(ds.images, aug).astype(dtype), cfg.probe_features), ds.labels

    probe = stage2_linear_probe(feats(train_part), feats(val_part) if val_part is not None else None,
                                feats(test_data), train_data.num_classes, cfg, shuffle_rng)
    record.test_accuracy = probe.test_accuracy
    record.best_epoch = probe.best_epoch
    record.val_curve = probe.val_curve
    record.final_checksum = encoder.checksum()
    record.seconds = time.perf_counter() - start
    if encoder_out is not None:
        encoder_out.append(encoder)
    if not math.isfinite(record.test_accuracy):
        record.status = "failed"
    return record
