"""
Ataque DiffULA: inversao em nivel de usuario com prior de difusao.

Otimiza uma unica imagem x0 no espaco do prior. A cada passo:
    - termo do prior: g_p = grad ||eps - eps_theta(x_tau, tau)||^2
    - termo de gradient matching: g_gm = grad d(F(A(x0)), grad_w), onde
      A(x0) e o lote de B copias aumentadas e F e o gradiente da vitima
    - g_gm e recortado para ||g_gm|| <= zeta * ||g_p||
    - x0 <- x0 - lr * (g_p + g_gm)
No fim a imagem passa pela cadeia reversa a partir de t* e o adaptador
semantico infere os atributos do usuario.
"""

import logging
import time
from dataclasses import replace
from typing import Any, Dict, List, Optional, Tuple

import torch
import torchvision.transforms.functional as TF
from torchvision.transforms import InterpolationMode

from src.diffula.adapters import SemanticAdapter
from src.diffula.attacks.result import ReconstructionResult, StepTrace
from src.diffula.augment import make_batch
from src.diffula.capture import GradientCapture, check_manifest
from src.diffula.config import PIXEL_RANGE, AttackConfig
from src.diffula.diffusion import DiffusionModel, denoise_from, prior_loss, to_pixel_range
from src.diffula.distance import ClipResult, LayerWeighting, clip_to_prior, gradient_distance, window_at_step
from src.diffula.errors import AttackDivergedError, NonFiniteError
from src.diffula.labels import LabelEstimate
from src.diffula.schedules import time_at, zeta_at, zeta_at_timestep
from src.diffula.victim import VictimModel, parameter_gradients

logger = logging.getLogger(__name__)


def check_attack_inputs(capture: GradientCapture, model: VictimModel, labels: LabelEstimate) -> None:
    check_manifest(capture, model.layers)
    if labels.batch_size != capture.batch_size:
        raise ValueError(
            f"label estimate covers {labels.batch_size} samples, capture has B={capture.batch_size}",
        )
    if any(not 0 <= c < model.num_classes for c in labels.multiset):
        raise ValueError(f"label multiset {labels.multiset} has classes outside the model")


def _check_prior(prior: DiffusionModel, model: VictimModel, cfg: AttackConfig) -> None:
    if prior.image_shape[0] != model.input_shape[0]:
        raise ValueError(
            f"prior has {prior.image_shape[0]} channels, victim expects {model.input_shape[0]}",
        )
    if cfg.t_star > prior.T:
        raise ValueError(f"t_star={cfg.t_star} exceeds the prior's T={prior.T}")
    if cfg.time_start > prior.T or cfg.time_end < 1:
        raise ValueError(f"time schedule [{cfg.time_end}, {cfg.time_start}] outside [1, {prior.T}]")


def victim_view(x0: torch.Tensor, size: Tuple[int, int]) -> torch.Tensor:
    """x0 (espaco do prior) -> imagem em [0, 1] na resolucao da vitima, (1, C, H, W)."""
    lo, hi = PIXEL_RANGE
    image = to_pixel_range(x0.detach()).unsqueeze(0)
    if tuple(image.shape[-2:]) != tuple(size):
        image = TF.resize(image, list(size), interpolation=InterpolationMode.BILINEAR, antialias=True)
    return image.clamp(lo, hi)


def matching_gradient(
    x0: torch.Tensor,
    model: VictimModel,
    target: List[torch.Tensor],
    labels: torch.Tensor,
    cfg: AttackConfig,
    step: int,
    weighting: LayerWeighting,
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Distancia d(F(A(x0)), grad_w) e seu gradiente em relacao a x0."""
    x = x0.detach().requires_grad_(True)
    with torch.enable_grad():
        batch = make_batch(
            to_pixel_range(x),
            len(labels),
            cfg.augment,
            seed=(cfg.seed, step),
            output_size=model.input_shape[1:],
        )
        grads = parameter_gradients(model, batch.to(model.dtype), labels, create_graph=True)
        loss = gradient_distance(cfg.distance, grads, target, weighting)
        (grad,) = torch.autograd.grad(loss, x)
    return loss.detach(), grad.to(x0.dtype)


def _zeta(cfg: AttackConfig, step: int, tau: int) -> float:
    if cfg.zeta_indexing == "timestep":
        return zeta_at_timestep(cfg.zeta_schedule(), cfg.time_schedule(), tau)
    return zeta_at(cfg.zeta_schedule(), step)


def _finite(*tensors: torch.Tensor) -> bool:
    return all(bool(torch.isfinite(t).all()) for t in tensors)


def run_diffula(
    capture: GradientCapture,
    model: VictimModel,
    prior: DiffusionModel,
    labels: LabelEstimate,
    cfg: AttackConfig,
    adapter: Optional[SemanticAdapter] = None,
    record_weights: bool = False,
) -> ReconstructionResult:
    """Executa o ataque em nivel de usuario e devolve uma unica imagem."""
    check_attack_inputs(capture, model, labels)
    _check_prior(prior, model, cfg)

    start_time = time.time()
    steps = cfg.steps
    dtype = prior.dtype
    victim_size = model.input_shape[1:]
    target = capture.to(model.dtype).tensors
    y = labels.labels()
    time_spec = cfg.time_schedule()

    generator = torch.Generator().manual_seed(cfg.seed)
    x0 = torch.randn(prior.image_shape, generator=generator, dtype=torch.float64).to(dtype)

    traces: List[StepTrace] = []
    snapshots: List[Tuple[int, torch.Tensor]] = []
    updates: Optional[List[Dict[str, torch.Tensor]]] = [] if cfg.keep_updates else None
    clipped_steps = 0

    logger.info(
        f"DiffULA attack: S={steps}, B={capture.batch_size}, prior T={prior.T}, "
        f"search dim={x0.numel()}, distance={cfg.distance}, prior={'on' if cfg.use_prior else 'off'}",
    )

    for i in range(steps):
        if i % cfg.snapshot_every == 0:
            snapshots.append((i, victim_view(x0, victim_size)))

        tau = time_at(time_spec, i)
        zeta = _zeta(cfg, i, tau)
        eps = torch.randn(prior.image_shape, generator=generator, dtype=torch.float64).to(dtype)
        weighting = window_at_step(i, steps, len(target), cfg.window)

        try:
            if cfg.use_prior:
                p_loss, g_p = prior_loss(prior, x0, tau, eps)
            else:
                p_loss, g_p = torch.zeros((), dtype=dtype), torch.zeros_like(x0)
            gm_loss, g_gm = matching_gradient(x0, model, target, y, cfg, i, weighting)
        except NonFiniteError as e:
            logger.error(f"Non-finite value at step {i}: {e}")
            raise AttackDivergedError("attack", i, snapshots[-1][1] if snapshots else None) from e

        if not _finite(gm_loss, g_gm, g_p):
            raise AttackDivergedError("attack", i, snapshots[-1][1] if snapshots else None)

        if cfg.use_prior:
            clip = clip_to_prior(g_gm, g_p, zeta)
        else:
            clip = ClipResult(g_gm, 1.0, False, False)
        clipped_steps += int(clip.clipped)

        update = -cfg.lr * (g_p + clip.gradient)
        if updates is not None:
            updates.append({
                "x0": x0.clone(),
                "g_p": g_p.clone(),
                "g_gm": clip.gradient.clone(),
                "update": update.clone(),
            })
        x0 = x0 + update

        traces.append(StepTrace(
            step=i,
            gm_loss=float(gm_loss),
            prior_loss=float(p_loss),
            tau=tau,
            zeta=zeta,
            clipped=clip.clipped,
            gm_norm=float(g_gm.norm()),
            clipped_norm=float(clip.gradient.norm()),
            prior_norm=float(g_p.norm()),
            update_norm=float(update.norm()),
            layer_weights=weighting.weights.tolist() if record_weights else None,
        ))

        logger.debug(f"step {i}: tau={tau}, zeta={zeta:.4f}, weights={weighting.weights.tolist()}")
        if (i + 1) % cfg.log_every == 0 or i == steps - 1:
            logger.info(
                f"Step {i + 1}/{steps} - gm loss {float(gm_loss):.4f}, "
                f"prior loss {float(p_loss):.2f}, tau {tau}, clipped {clipped_steps}",
            )

    if not _finite(x0):
        raise AttackDivergedError("attack", steps, snapshots[-1][1] if snapshots else None)

    x_hat_raw = victim_view(x0, victim_size)
    snapshots.append((steps, x_hat_raw))

    if cfg.t_star > 0:
        denoised = denoise_from(prior, x0.unsqueeze(0), cfg.t_star, seed=cfg.seed + 1)[0]
    else:
        denoised = x0
    if not _finite(denoised):
        raise AttackDivergedError("denoise", steps, x_hat_raw)
    x_hat = victim_view(denoised, victim_size)

    h_c_hat = None
    if adapter is not None and adapter.supports("predict"):
        h_c_hat = adapter.infer_attributes(x_hat)

    elapsed = time.time() - start_time
    logger.info(f"DiffULA finished in {elapsed:.1f}s ({clipped_steps}/{steps} steps clipped)")

    return ReconstructionResult(
        mode="diffula",
        x_hat_raw=x_hat_raw,
        x_hat=x_hat,
        traces=traces,
        snapshots=snapshots,
        h_c_hat=h_c_hat,
        labels=labels.to_dict(),
        search_dim=int(x0.numel()),
        updates=updates,
        metadata={
            "batch_size": capture.batch_size,
            "steps": steps,
            "seed": cfg.seed,
            "t_star": cfg.t_star,
            "prior_T": prior.T,
            "use_prior": cfg.use_prior,
            "clipped_steps": clipped_steps,
            "wall_time": elapsed,
        },
    )


def measure_step_cost(
    capture: GradientCapture,
    model: VictimModel,
    prior: DiffusionModel,
    labels: LabelEstimate,
    cfg: AttackConfig,
    steps: int = 3,
) -> Dict[str, Any]:
    """Tempo por passo e dimensao do estado otimizado para um tamanho de lote.

    O estado do DiffULA e sempre uma imagem do prior, qualquer que seja B.
    """
    short = replace(cfg, steps=steps, snapshot_every=steps + 1, keep_updates=True, t_star=0)
    start_time = time.perf_counter()
    result = run_diffula(capture, model, prior, labels, short)
    elapsed = time.perf_counter() - start_time

    state_shapes = {tuple(u["x0"].shape) for u in result.updates}
    if len(state_shapes) != 1:
        raise RuntimeError(f"optimizer state changed shape during the run: {state_shapes}")
    return {
        "batch_size": capture.batch_size,
        "search_dim": result.search_dim,
        "state_shape": list(state_shapes.pop()),
        "seconds_per_step": elapsed / steps,
    }
