"""
Distancias de gradient matching, prior de variacao total e clipping.

"""

import logging
import math
import warnings
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence, Union

import torch

from src.diffula.capture import GradientCapture
from src.diffula.config import WindowParams
from src.diffula.errors import ManifestMismatchError, ZeroGradientWarning

logger = logging.getLogger(__name__)

GradientLike = Union[GradientCapture, Sequence[torch.Tensor]]


@dataclass(frozen=True)
class LayerWeighting:
    weights: torch.Tensor
    params: Optional[WindowParams] = None

    def __post_init__(self) -> None:
        if self.weights.dim() != 1 or len(self.weights) == 0:
            raise ValueError("weights must be a non-empty vector")
        if (self.weights < 0).any() or (self.weights > 1).any():
            raise ValueError("layer weights must lie in [0, 1]")
        if not (self.weights > 0).any():
            raise ValueError("at least one layer weight must be positive")

    @classmethod
    def uniform(cls, layer_count: int) -> "LayerWeighting":
        return cls(weights=torch.ones(layer_count, dtype=torch.float64))

    def __len__(self) -> int:
        return len(self.weights)


def _as_tensors(gradient: GradientLike) -> List[torch.Tensor]:
    if isinstance(gradient, GradientCapture):
        return gradient.tensors
    return list(gradient)


def _check_pair(g_a: GradientLike, g_b: GradientLike, weighting: Optional[LayerWeighting]):
    if isinstance(g_a, GradientCapture) and isinstance(g_b, GradientCapture):
        if g_a.names != g_b.names:
            raise ManifestMismatchError("gradient captures have different layer names")

    a, b = _as_tensors(g_a), _as_tensors(g_b)
    if len(a) != len(b):
        raise ManifestMismatchError(f"layer count mismatch: {len(a)} vs {len(b)}")
    for i, (ta, tb) in enumerate(zip(a, b)):
        if ta.shape != tb.shape:
            raise ManifestMismatchError(f"layer {i} shape mismatch: {tuple(ta.shape)} vs {tuple(tb.shape)}")

    weighting = weighting if weighting is not None else LayerWeighting.uniform(len(a))
    if len(weighting) != len(a):
        raise ManifestMismatchError(f"weighting has {len(weighting)} entries for {len(a)} layers")
    return a, b, weighting


def cosine_distance(
    g_a: GradientLike,
    g_b: GradientLike,
    weighting: Optional[LayerWeighting] = None,
) -> torch.Tensor:
    """Distancia de cosseno por camada, combinada pelos pesos normalizados.

    Camadas com norma zero contribuem distancia 1 (e emitem aviso).
    """
    a, b, weighting = _check_pair(g_a, g_b, weighting)
    dtype = a[0].dtype
    weights = weighting.weights.to(dtype)

    total = torch.zeros((), dtype=dtype, device=a[0].device)
    zero_layers: List[int] = []
    for i, (ta, tb) in enumerate(zip(a, b)):
        w = weights[i]
        if w == 0:
            continue
        norm_a, norm_b = ta.norm(), tb.norm()
        if norm_a.item() == 0.0 or norm_b.item() == 0.0:
            zero_layers.append(i)
            total = total + w
            continue
        cosine = (ta * tb).sum() / (norm_a * norm_b)
        total = total + w * (1.0 - cosine)

    if zero_layers:
        warnings.warn(f"zero-norm gradient in layers {zero_layers}", ZeroGradientWarning, stacklevel=2)
    return total / weights.sum()


def global_cosine_distance(g_a: GradientLike, g_b: GradientLike) -> torch.Tensor:
    """Cosseno sobre o gradiente achatado inteiro (formulacao inverting gradients)."""
    a, b, _ = _check_pair(g_a, g_b, None)
    dot = sum((ta * tb).sum() for ta, tb in zip(a, b))
    norm_a = torch.sqrt(sum(ta.pow(2).sum() for ta in a))
    norm_b = torch.sqrt(sum(tb.pow(2).sum() for tb in b))
    if norm_a.item() == 0.0 or norm_b.item() == 0.0:
        warnings.warn("zero-norm gradient", ZeroGradientWarning, stacklevel=2)
        return torch.ones((), dtype=a[0].dtype)
    return 1.0 - dot / (norm_a * norm_b)


def euclidean_distance(
    g_a: GradientLike,
    g_b: GradientLike,
    weighting: Optional[LayerWeighting] = None,
) -> torch.Tensor:
    """Soma ponderada das distancias L2 ao quadrado por camada."""
    a, b, weighting = _check_pair(g_a, g_b, weighting)
    weights = weighting.weights.to(a[0].dtype)
    total = torch.zeros((), dtype=a[0].dtype, device=a[0].device)
    for i, (ta, tb) in enumerate(zip(a, b)):
        if weights[i] == 0:
            continue
        total = total + weights[i] * (ta - tb).pow(2).sum()
    return total


def gradient_distance(
    kind: str,
    g_a: GradientLike,
    g_b: GradientLike,
    weighting: Optional[LayerWeighting] = None,
) -> torch.Tensor:
    if kind == "cosine":
        return cosine_distance(g_a, g_b, weighting)
    if kind == "cosine-global":
        return global_cosine_distance(g_a, g_b)
    if kind == "euclidean":
        return euclidean_distance(g_a, g_b, weighting)
    raise ValueError(f"unknown distance {kind!r}")


def tv_prior(image: torch.Tensor) -> torch.Tensor:
    """Variacao total anisotropica: soma das diferencas absolutas entre vizinhos."""
    if image.dim() < 2:
        raise ValueError(f"image must have at least 2 dimensions, got shape {tuple(image.shape)}")
    horizontal = (image[..., :, 1:] - image[..., :, :-1]).abs().sum()
    vertical = (image[..., 1:, :] - image[..., :-1, :]).abs().sum()
    return horizontal + vertical


class ClipResult(NamedTuple):
    gradient: torch.Tensor
    scale: float
    clipped: bool
    degenerate: bool


def clip_to_prior(g_gm: torch.Tensor, g_p: torch.Tensor, zeta: float) -> ClipResult:
    """g_gm / max(1, ||g_gm|| / (zeta * ||g_p||))."""
    if zeta <= 0:
        raise ValueError("zeta must be positive")
    if g_gm.shape != g_p.shape:
        raise ValueError(f"shape mismatch: {tuple(g_gm.shape)} vs {tuple(g_p.shape)}")

    prior_norm = float(g_p.norm())
    if prior_norm == 0.0:
        warnings.warn("prior gradient has zero norm; clipping skipped", ZeroGradientWarning, stacklevel=2)
        return ClipResult(g_gm, 1.0, False, True)

    gm_norm = float(g_gm.norm())
    limit = zeta * prior_norm
    if gm_norm <= limit:
        return ClipResult(g_gm, 1.0, False, False)

    scale = limit / gm_norm
    return ClipResult(g_gm * scale, scale, True, False)


def hamming(u: torch.Tensor) -> torch.Tensor:
    """Lobulo de Hamming 0.54 + 0.46 cos(pi u), zero fora de |u| <= 1."""
    lobe = 0.54 + 0.46 * torch.cos(math.pi * u)
    return torch.where(u.abs() <= 1.0, lobe, torch.zeros_like(u))


def window_center(step: int, total_steps: int) -> float:
    if total_steps <= 1:
        return 1.0
    return 1.0 - step / (total_steps - 1)


def window_at_step(
    step: int,
    total_steps: int,
    layer_count: int,
    params: Optional[WindowParams] = None,
) -> LayerWeighting:
    """Janela de Hamming assimetrica deslizando das camadas profundas as rasas.

    Profundidade d em [0, 1] (0 = mais rasa). O centro c vai de 1 a 0; do
    lado raso (d < c) a largura e left_width. Do lado profundo a largura
    right_width e esticada por 1 / (1 - progresso), de modo que camadas ja
    introduzidas continuam ativas e a janela termina totalmente aberta.
    """
    params = params if params is not None else WindowParams()
    if not 0 <= step < total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps})")
    if layer_count < 1:
        raise ValueError("layer_count must be positive")
    if not params.enabled:
        return LayerWeighting.uniform(layer_count)

    if layer_count == 1:
        depth = torch.ones(1, dtype=torch.float64)
    else:
        depth = torch.linspace(0.0, 1.0, layer_count, dtype=torch.float64)

    center = window_center(step, total_steps)
    progress = 1.0 - center
    shallow = depth < center
    u = torch.where(
        shallow,
        (depth - center) / params.left_width,
        # largura efetiva right_width / (1 - progresso): no ultimo passo u = 0 e todas as camadas ficam com peso 1
        (depth - center) * (1.0 - progress) / params.right_width,
    )
    weights = params.floor + (1.0 - params.floor) * hamming(u)
    return LayerWeighting(weights=weights.clamp(params.floor, 1.0), params=params)
