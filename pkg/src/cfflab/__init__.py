"""Layer-local contrastive training of small vision transformers, with seed-variance auditing."""

from .diagnostics import DiagnosticSnapshot, clamp_activation_rate, layer_gradient_norm, variance_ratio
from .loss import LossConfig, contrastive_loss, layer_loss, positive_mask, similarity_matrix
from .stats import AuditReport, audit, bootstrap_vr_ci, f_test_two_sided, shapiro_wilk, welch_t_test
from .training import RunRecord, TrainConfig, margin_schedule, run_seeded_experiment
from .vit import Encoder, EncoderConfig, init_encoder

__version__ = "0.1.0"

__all__ = [
    "AuditReport", "DiagnosticSnapshot", "Encoder", "EncoderConfig", "LossConfig", "RunRecord", "TrainConfig",
    "audit", "bootstrap_vr_ci", "clamp_activation_rate", "contrastive_loss", "f_test_two_sided", "init_encoder",
    "layer_gradient_norm", "layer_loss", "margin_schedule", "positive_mask", "run_seeded_experiment",
    "shapiro_wilk", "similarity_matrix", "variance_ratio", "welch_t_test",
]
