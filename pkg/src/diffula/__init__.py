"""DiffULA Package.

This package contains a desk-scale laboratory for user-level gradient
inversion with a denoising-diffusion prior: victim models, a federated
capture simulator, label recovery, gradient matching, a toy DDPM, the
attack drivers and the evaluation harness.
"""

from src.diffula.attacks import ReconstructionResult, run_diffula, run_inverting
from src.diffula.capture import GradientCapture, deserialize_capture, serialize_capture
from src.diffula.config import PIXEL_RANGE, AttackConfig, RunConfig
from src.diffula.diffusion import DiffusionModel, denoise_from, forward_sample, prior_loss
from src.diffula.labels import LabelEstimate, recover_labels
from src.diffula.metrics import MetricsReport, disambiguate, score_run
from src.diffula.victim import VictimModel, batch_gradient, build_victim

__all__ = [
    "PIXEL_RANGE",
    "AttackConfig",
    "DiffusionModel",
    "GradientCapture",
    "LabelEstimate",
    "MetricsReport",
    "ReconstructionResult",
    "RunConfig",
    "VictimModel",
    "batch_gradient",
    "build_victim",
    "denoise_from",
    "deserialize_capture",
    "disambiguate",
    "forward_sample",
    "prior_loss",
    "recover_labels",
    "run_diffula",
    "run_inverting",
    "score_run",
    "serialize_capture",
]
