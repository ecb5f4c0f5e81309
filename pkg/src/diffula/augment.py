"""
Transformacoes que preservam semantica e o construtor de lote A(x).

Cada copia sorteia seus parametros de forma independente (gerador proprio
por elemento), passa pelas transformacoes habilitadas, cada uma com
probabilidade apply_probability, e e redimensionada para o tamanho de
entrada da vitima. Todas as operacoes sao diferenciaveis em relacao a x.
"""

import logging
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torchvision.transforms.functional as TF
from torchvision.transforms import InterpolationMode

from src.diffula.config import PIXEL_RANGE, AugmentSpec

logger = logging.getLogger(__name__)


def _perspective_points(
    height: int,
    width: int,
    scale: float,
    rng: np.random.Generator,
) -> Tuple[List[List[int]], List[List[int]]]:
    """Cantos deslocados para dentro ate scale * metade da imagem."""
    half_h, half_w = height // 2, width // 2
    dh, dw = int(scale * half_h), int(scale * half_w)
    top_left = [int(rng.integers(0, dw + 1)), int(rng.integers(0, dh + 1))]
    top_right = [int(width - 1 - rng.integers(0, dw + 1)), int(rng.integers(0, dh + 1))]
    bottom_right = [int(width - 1 - rng.integers(0, dw + 1)), int(height - 1 - rng.integers(0, dh + 1))]
    bottom_left = [int(rng.integers(0, dw + 1)), int(height - 1 - rng.integers(0, dh + 1))]
    start = [[0, 0], [width - 1, 0], [width - 1, height - 1], [0, height - 1]]
    end = [top_left, top_right, bottom_right, bottom_left]
    return start, end


def transform_once(image: torch.Tensor, spec: AugmentSpec, rng: np.random.Generator) -> torch.Tensor:
    """Aplica T a uma imagem (C, H, W) com os sorteios de rng."""
    out = image
    p = spec.apply_probability
    channels, height, width = image.shape

    if spec.noise and rng.random() < p:
        sigma = rng.uniform(0.0, spec.noise_sigma)
        noise = torch.from_numpy(rng.standard_normal(image.shape)).to(image.dtype)
        out = out + sigma * noise

    if spec.color_jitter and rng.random() < p:
        brightness = rng.uniform(1.0 - spec.brightness, 1.0 + spec.brightness)
        contrast = rng.uniform(1.0 - spec.contrast, 1.0 + spec.contrast)
        saturation = rng.uniform(1.0 - spec.saturation, 1.0 + spec.saturation)
        out = TF.adjust_brightness(out, brightness)
        out = TF.adjust_contrast(out, contrast)
        if channels == 3:
            out = TF.adjust_saturation(out, saturation)

    if spec.perspective and rng.random() < p:
        start, end = _perspective_points(height, width, spec.perspective_scale, rng)
        out = TF.perspective(out, start, end, interpolation=InterpolationMode.BILINEAR)

    if spec.blur and rng.random() < p:
        sigma = rng.uniform(*spec.blur_sigma)
        # sigma 0 nao e aceito pelo torchvision
        sigma = max(float(sigma), 1e-3)
        out = TF.gaussian_blur(out, [spec.blur_kernel, spec.blur_kernel], [sigma, sigma])

    return out


def make_batch(
    x_hat: torch.Tensor,
    batch_size: int,
    spec: AugmentSpec,
    seed: Union[int, Sequence[int]],
    output_size: Optional[Tuple[int, int]] = None,
) -> torch.Tensor:
    """A(x_hat) = {T(x_hat)}_{i=1..B}, shape (B, C, H_out, W_out).

    seed pode ser uma sequencia de inteiros (ex.: semente do ataque e passo).
    """
    if x_hat.dim() != 3:
        raise ValueError(f"x_hat must have shape (C, H, W), got {tuple(x_hat.shape)}")
    if batch_size < 1:
        raise ValueError("batch size must be at least 1")

    size = output_size or spec.output_size or tuple(x_hat.shape[1:])
    size = [int(size[0]), int(size[1])]
    lo, hi = PIXEL_RANGE

    words = [int(seed)] if isinstance(seed, int) else [int(s) for s in seed]
    copies: List[torch.Tensor] = []
    for i in range(batch_size):
        rng = np.random.default_rng(words + [i])
        copies.append(transform_once(x_hat, spec, rng))
    batch = torch.stack(copies)

    if list(batch.shape[-2:]) != size:
        batch = TF.resize(batch, size, interpolation=InterpolationMode.BILINEAR, antialias=True)
    return batch.clamp(lo, hi)
