"""
Cronogramas do ataque: tempo de difusao tau_i e fator de clipping zeta_i.
"""

import logging
import math

import numpy as np

from src.diffula.config import ScheduleSpec

logger = logging.getLogger(__name__)


def progress(step: int, total_steps: int) -> float:
    """s = step / (S - 1), com s = 0 quando S = 1."""
    if not 0 <= step < total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps})")
    if total_steps == 1:
        return 0.0
    return step / (total_steps - 1)


def time_envelope(spec: ScheduleSpec, s: float) -> float:
    """Envelope sem ruido: descida linear modulada por k ondulacoes de cosseno.

    Vale start em s=0 e end em s=1; a modulacao nunca passa de 1, entao o
    envelope fica sempre em [end, start].
    """
    ripple = 1.0 - spec.modulation_depth * 0.5 * (1.0 - math.cos(2.0 * math.pi * spec.ripples * s))
    return spec.end_value + (spec.start_value - spec.end_value) * (1.0 - s) * ripple


def time_at(spec: ScheduleSpec, step: int) -> int:
    if spec.kind != "time_cosine_linear":
        raise ValueError(f"time_at needs a time_cosine_linear schedule, got {spec.kind!r}")
    s = progress(step, spec.total_steps)
    value = time_envelope(spec, s)

    if spec.noise_halfwidth > 0:
        # gerador por passo: tau_i nao depende da ordem de avaliacao
        rng = np.random.default_rng([spec.seed, step])
        value += rng.uniform(-spec.noise_halfwidth, spec.noise_halfwidth)

    tau = int(np.rint(value))
    return int(min(max(tau, spec.end_value), spec.start_value))


def time_sequence(spec: ScheduleSpec) -> np.ndarray:
    return np.array([time_at(spec, i) for i in range(spec.total_steps)], dtype=np.int64)


def zeta_at_progress(spec: ScheduleSpec, s: float) -> float:
    s = min(max(s, 0.0), 1.0)
    return spec.end_value + (spec.start_value - spec.end_value) * 0.5 * (1.0 + math.cos(math.pi * s))


def zeta_at(spec: ScheduleSpec, step: int) -> float:
    if spec.kind != "zeta_cosine_ramp":
        raise ValueError(f"zeta_at needs a zeta_cosine_ramp schedule, got {spec.kind!r}")
    return zeta_at_progress(spec, progress(step, spec.total_steps))


def zeta_at_timestep(zeta_spec: ScheduleSpec, time_spec: ScheduleSpec, tau: int) -> float:
    """zeta indexado pelo tempo tau (leitura literal de zeta_{tau_i})."""
    if zeta_spec.kind != "zeta_cosine_ramp":
        raise ValueError(f"expected a zeta_cosine_ramp schedule, got {zeta_spec.kind!r}")
    span = time_spec.start_value - time_spec.end_value
    if span <= 0:
        return zeta_at_progress(zeta_spec, 0.0)
    return zeta_at_progress(zeta_spec, (time_spec.start_value - tau) / span)
