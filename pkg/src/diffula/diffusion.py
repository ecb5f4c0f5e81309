"""
Modelo de difusao (DDPM) usado como prior do ataque.

Cronograma de ruido, amostragem direta q(x_t | x_0), perda do prior com seu
gradiente em relacao a x_0, passo reverso, denoising a partir de t*,
treino toy e checkpoints. Os timesteps vao de 1 a T; o vetor beta guarda
beta_t na posicao t - 1.
"""

import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import torch
import torch.nn.functional as F
from torch import nn
from tqdm import tqdm

from src.diffula.capture import atomic_write_bytes
from src.diffula.config import BETA_END, BETA_SCHEDULES, BETA_START, DEFAULT_TIMESTEPS, PriorConfig
from src.diffula.errors import NonFiniteError, TrainingDivergedError
from src.diffula.unet import ToyUNet

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1

Timestep = Union[int, torch.Tensor]


def to_model_range(images: torch.Tensor) -> torch.Tensor:
    """[0, 1] -> [-1, 1]"""
    return images * 2.0 - 1.0


def to_pixel_range(images: torch.Tensor) -> torch.Tensor:
    """[-1, 1] -> [0, 1]"""
    return (images + 1.0) / 2.0


def linear_betas(timesteps: int, start: float = BETA_START, end: float = BETA_END) -> torch.Tensor:
    # reescala para T curto mantendo o mesmo ruido total da convencao T=1000
    scale = DEFAULT_TIMESTEPS / timesteps
    return torch.linspace(start * scale, min(end * scale, 0.999), timesteps, dtype=torch.float64)


def cosine_betas(timesteps: int, s: float = 0.008) -> torch.Tensor:
    steps = torch.arange(timesteps + 1, dtype=torch.float64)
    alpha_bar = torch.cos(((steps / timesteps) + s) / (1 + s) * math.pi * 0.5) ** 2
    alpha_bar = alpha_bar / alpha_bar[0]
    betas = 1.0 - alpha_bar[1:] / alpha_bar[:-1]
    return betas.clamp(1e-5, 0.999)


@dataclass(frozen=True)
class NoiseSchedule:
    beta: torch.Tensor
    kind: str = "linear"

    def __post_init__(self) -> None:
        if self.beta.dim() != 1 or len(self.beta) < 1:
            raise ValueError("beta must be a non-empty vector")
        if not ((self.beta > 0) & (self.beta < 1)).all():
            raise ValueError("every beta_t must lie in (0, 1)")

    @property
    def T(self) -> int:
        return len(self.beta)

    @property
    def alpha(self) -> torch.Tensor:
        return 1.0 - self.beta

    @property
    def alpha_bar(self) -> torch.Tensor:
        return torch.cumprod(self.alpha, dim=0)

    @property
    def sigma(self) -> torch.Tensor:
        return torch.sqrt(self.beta)

    def check_timestep(self, t: int) -> None:
        if not 1 <= int(t) <= self.T:
            raise ValueError(f"timestep {t} outside [1, {self.T}]")


def make_schedule(kind: str = "linear", timesteps: int = DEFAULT_TIMESTEPS) -> NoiseSchedule:
    if kind not in BETA_SCHEDULES:
        raise ValueError(f"unknown beta schedule {kind!r}, expected one of {BETA_SCHEDULES}")
    if timesteps < 1:
        raise ValueError("timesteps must be positive")
    betas = linear_betas(timesteps) if kind == "linear" else cosine_betas(timesteps)
    return NoiseSchedule(beta=betas, kind=kind)


@dataclass
class DiffusionModel:
    schedule: NoiseSchedule
    eps_net: nn.Module
    image_shape: Tuple[int, int, int]
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.image_shape = tuple(self.image_shape)
        self.eps_net.eval()

    @property
    def T(self) -> int:
        return self.schedule.T

    @property
    def dtype(self) -> torch.dtype:
        return next(self.eps_net.parameters()).dtype

    def double(self) -> "DiffusionModel":
        self.eps_net.double()
        return self

    def predict_eps(self, x_t: torch.Tensor, t: Timestep) -> torch.Tensor:
        """Aceita uma imagem (C, H, W) ou um lote (B, C, H, W)."""
        single = x_t.dim() == 3
        batch = x_t.unsqueeze(0) if single else x_t
        if isinstance(t, torch.Tensor) and t.dim() == 1:
            t_vec = t
        else:
            t_vec = torch.full((batch.shape[0],), int(t), dtype=torch.long)
        eps_hat = self.eps_net(batch, t_vec)
        if eps_hat.shape != batch.shape:
            raise ValueError(f"eps_net returned {tuple(eps_hat.shape)} for input {tuple(batch.shape)}")
        return eps_hat[0] if single else eps_hat

    def _coef(self, values: torch.Tensor, t: Timestep, like: torch.Tensor) -> torch.Tensor:
        if isinstance(t, torch.Tensor) and t.dim() == 1:
            coef = values[t.long() - 1].to(like.dtype)
            return coef.view(-1, *([1] * (like.dim() - 1)))
        return values[int(t) - 1].to(like.dtype)


def forward_sample(model: DiffusionModel, x0: torch.Tensor, t: Timestep, eps: torch.Tensor) -> torch.Tensor:
    """sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps"""
    _check_timesteps(model, t)
    alpha_bar = model._coef(model.schedule.alpha_bar, t, x0)
    return torch.sqrt(alpha_bar) * x0 + torch.sqrt(1.0 - alpha_bar) * eps


def _check_timesteps(model: DiffusionModel, t: Timestep) -> None:
    if isinstance(t, torch.Tensor) and t.dim() == 1:
        if len(t) and (int(t.min()) < 1 or int(t.max()) > model.T):
            raise ValueError(f"timesteps outside [1, {model.T}]")
        return
    model.schedule.check_timestep(int(t))


def prior_loss(
    model: DiffusionModel,
    x0: torch.Tensor,
    t: int,
    eps: torch.Tensor,
) -> Tuple[torch.Tensor, torch.Tensor]:
    """||eps - eps_theta(x_t, t)||^2 com pesos w_t = 1 e seu gradiente em x0."""
    x0 = x0.detach().requires_grad_(True)
    with torch.enable_grad():
        x_t = forward_sample(model, x0, t, eps)
        eps_hat = model.predict_eps(x_t, t)
        loss = (eps - eps_hat).pow(2).sum()
        if not torch.isfinite(loss):
            raise NonFiniteError(f"prior loss is not finite at t={t}")
        (grad,) = torch.autograd.grad(loss, x0)
    return loss.detach(), grad


def reverse_step(
    model: DiffusionModel,
    x_t: torch.Tensor,
    t: int,
    z: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """x_{t-1} = (x_t - beta_t / sqrt(1 - alpha_bar_t) eps_theta) / sqrt(alpha_t) + sigma_t z"""
    model.schedule.check_timestep(t)
    if z is None:
        z = torch.zeros_like(x_t)
    elif t == 1 and bool(z.abs().max() > 0):
        raise ValueError("the last reverse step (t=1) must use z = 0")

    schedule = model.schedule
    beta = schedule.beta[t - 1].item()
    alpha = schedule.alpha[t - 1].item()
    alpha_bar = schedule.alpha_bar[t - 1].item()
    sigma = schedule.sigma[t - 1].item()

    with torch.no_grad():
        eps_hat = model.predict_eps(x_t, t)
    return (x_t - (beta / math.sqrt(1.0 - alpha_bar)) * eps_hat) / math.sqrt(alpha) + sigma * z


def denoise_from(model: DiffusionModel, x: torch.Tensor, t_star: int, seed: int) -> torch.Tensor:
    """Cadeia reversa de t* ate 1 com ruido semeado (z = 0 no ultimo passo)."""
    model.schedule.check_timestep(t_star)
    generator = torch.Generator().manual_seed(seed)
    x = x.detach()
    for t in range(t_star, 0, -1):
        if t > 1:
            z = torch.randn(x.shape, generator=generator, dtype=torch.float64).to(x.dtype)
        else:
            z = None
        x = reverse_step(model, x, t, z)
    return x


def sample(model: DiffusionModel, count: int, seed: int) -> torch.Tensor:
    """Amostragem ancestral completa a partir de x_T ~ N(0, I)."""
    generator = torch.Generator().manual_seed(seed)
    x_T = torch.randn((count,) + model.image_shape, generator=generator).to(model.dtype)
    return denoise_from(model, x_T, model.T, seed + 1)


def build_prior(config: PriorConfig) -> DiffusionModel:
    """Modelo nao treinado com a arquitetura e o cronograma da configuracao."""
    channels, height, width = config.image_shape
    net = ToyUNet(channels, config.base_channels, config.channel_mults)
    if height % net.downsampling_factor or width % net.downsampling_factor:
        raise ValueError(f"prior image size must be divisible by {net.downsampling_factor}")
    return DiffusionModel(
        schedule=make_schedule(config.schedule, config.timesteps),
        eps_net=net,
        image_shape=tuple(config.image_shape),
    )


def evaluate_denoising_loss(model: DiffusionModel, images: torch.Tensor, seed: int) -> float:
    """Media por imagem de ||eps - eps_theta||^2 com t ~ U{1..T} semeado."""
    if len(images) == 0:
        raise ValueError("no images to evaluate")
    generator = torch.Generator().manual_seed(seed)
    t = torch.randint(1, model.T + 1, (len(images),), generator=generator)
    eps = torch.randn(images.shape, generator=generator).to(images.dtype)
    with torch.no_grad():
        x_t = forward_sample(model, images, t, eps)
        eps_hat = model.predict_eps(x_t, t)
    return float((eps - eps_hat).pow(2).flatten(1).sum(dim=1).mean())


def train_toy(
    images: torch.Tensor,
    config: PriorConfig,
    holdout: Optional[torch.Tensor] = None,
    progress: bool = False,
) -> DiffusionModel:
    """Treina o prior toy na perda simplificada ||eps - eps_theta(x_t, t)||^2 (w_t = 1).

    images ja devem estar em [-1, 1] e na resolucao do prior. Todo o
    sorteio usa geradores proprios, entao duas execucoes com a mesma
    semente dao o mesmo modelo.
    """
    if tuple(images.shape[1:]) != tuple(config.image_shape):
        raise ValueError(f"images have shape {tuple(images.shape[1:])}, prior expects {config.image_shape}")

    generator = torch.Generator().manual_seed(config.seed)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(config.seed)
        model = build_prior(config)

    if holdout is None and config.holdout_fraction > 0 and len(images) > 1:
        order = torch.randperm(len(images), generator=generator)
        n_holdout = max(1, int(round(len(images) * config.holdout_fraction)))
        holdout = images[order[:n_holdout]]
        images = images[order[n_holdout:]]

    net = model.eps_net
    optimizer = torch.optim.Adam(net.parameters(), lr=config.lr)
    history: List[float] = []

    baseline = evaluate_denoising_loss(model, holdout, config.seed) if holdout is not None else None
    if baseline is not None:
        logger.info(f"Untrained held-out denoising loss: {baseline:.4f}")

    step = 0
    last_loss = float("nan")
    net.train()
    for epoch in tqdm(range(config.epochs), desc="train-prior", disable=not progress):
        order = torch.randperm(len(images), generator=generator)
        epoch_loss = 0.0
        batches = 0
        for start in range(0, len(images), config.batch_size):
            x0 = images[order[start:start + config.batch_size]]
            t = torch.randint(1, model.T + 1, (len(x0),), generator=generator)
            eps = torch.randn(x0.shape, generator=generator)
            x_t = forward_sample(model, x0, t, eps)
            loss = F.mse_loss(net(x_t, t), eps)

            if not torch.isfinite(loss):
                net.eval()
                raise TrainingDivergedError(
                    f"prior training diverged at epoch {epoch}, step {step}",
                    epoch=epoch,
                    step=step,
                    last_loss=last_loss,
                )

            optimizer.zero_grad()
            loss.backward()
            optimizer.step()

            last_loss = float(loss)
            epoch_loss += last_loss
            batches += 1
            step += 1

        history.append(epoch_loss / max(batches, 1))
        logger.info(f"Epoch {epoch + 1}/{config.epochs} - loss per pixel {history[-1]:.5f}")

    net.eval()
    model.metadata = {
        "history": history,
        "train_images": int(len(images)),
        "seed": config.seed,
    }
    if holdout is not None:
        model.metadata["baseline_loss"] = baseline
        model.metadata["heldout_loss"] = evaluate_denoising_loss(model, holdout, config.seed)
        logger.info(f"Held-out denoising loss: {model.metadata['heldout_loss']:.4f} (untrained {baseline:.4f})")
    return model


def save_checkpoint(model: DiffusionModel, path: Path) -> Path:
    if not isinstance(model.eps_net, ToyUNet):
        raise TypeError("only ToyUNet priors can be checkpointed")
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "schedule_kind": model.schedule.kind,
        "beta": model.schedule.beta.clone(),
        "image_shape": list(model.image_shape),
        "net_config": model.eps_net.config(),
        "state_dict": {k: v.detach().clone() for k, v in model.eps_net.state_dict().items()},
        "metadata": model.metadata,
    }
    buffer = io.BytesIO()
    torch.save(payload, buffer)
    atomic_write_bytes(Path(path), buffer.getvalue())
    logger.info(f"Saved prior checkpoint to {path}")
    return Path(path)


def load_checkpoint(path: Path) -> DiffusionModel:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Prior checkpoint not found: {path}")
    payload = torch.load(io.BytesIO(path.read_bytes()), map_location="cpu", weights_only=True)

    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported prior checkpoint version {version}")

    net_config = payload["net_config"]
    net = ToyUNet(
        in_channels=net_config["in_channels"],
        base_channels=net_config["base_channels"],
        channel_mults=tuple(net_config["channel_mults"]),
    )
    net.load_state_dict(payload["state_dict"])
    net = net.to(next(iter(payload["state_dict"].values())).dtype)
    return DiffusionModel(
        schedule=NoiseSchedule(beta=payload["beta"], kind=payload["schedule_kind"]),
        eps_net=net,
        image_shape=tuple(payload["image_shape"]),
        metadata=dict(payload.get("metadata") or {}),
    )
