"""Attack drivers.

DiffULA (one image per user, diffusion prior) and the inverting-gradients
baseline (B images, total-variation prior). Both consume a GradientCapture
and return a ReconstructionResult.
"""

from src.diffula.attacks.diffula import measure_step_cost, run_diffula
from src.diffula.attacks.inverting import run_inverting
from src.diffula.attacks.result import ReconstructionResult, StepTrace, load_result, save_result

__all__ = [
    "ReconstructionResult",
    "StepTrace",
    "load_result",
    "measure_step_cost",
    "run_diffula",
    "run_inverting",
    "save_result",
]
