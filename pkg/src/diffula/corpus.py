"""
Gerador sintetico de imagens "tipo rosto" com atributos conhecidos.

Cada usuario tem atributos fixos (forma, paleta, escala) e um fundo proprio;
cada imagem desenha o motivo do usuario na metade esquerda (rotulo 0) ou
direita (rotulo 1), com jitter de posicao, brilho e ruido.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np
import torch

from src.diffula.config import CorpusConfig

logger = logging.getLogger(__name__)

ATTRIBUTE_NAMES: Tuple[str, ...] = ("shape", "palette", "scale")
# Atributos ordinais sao avaliados por erro absoluto (analogo da idade)
ORDINAL_ATTRIBUTES: Tuple[str, ...] = ("scale",)

# Cores RGB de cada paleta
PALETTE_COLORS = np.array([
    [0.90, 0.20, 0.20],
    [0.20, 0.80, 0.30],
    [0.20, 0.30, 0.90],
    [0.90, 0.80, 0.20],
    [0.70, 0.30, 0.80],
])
_LUMA = np.array([0.299, 0.587, 0.114])


@dataclass
class LabeledImageCollection:
    images: torch.Tensor
    labels: torch.Tensor
    user_ids: List[str]
    attributes: List[Dict[str, int]]

    def __post_init__(self) -> None:
        n = self.images.shape[0]
        if not (len(self.labels) == len(self.user_ids) == len(self.attributes) == n):
            raise ValueError("images, labels, user_ids and attributes must have the same length")

    def __len__(self) -> int:
        return int(self.images.shape[0])

    def record(self, index: int) -> Dict[str, object]:
        return {
            "index": index,
            "user_id": self.user_ids[index],
            "label": int(self.labels[index]),
            "attributes": self.attributes[index],
        }


def attribute_cardinalities(config: CorpusConfig) -> Dict[str, int]:
    return {
        "shape": 2,
        "palette": len(config.palette_probs),
        "scale": config.scale_levels,
    }


def attribute_marginals(config: CorpusConfig) -> Dict[str, np.ndarray]:
    """Distribuicao configurada de cada atributo (por usuario)."""
    return {
        "shape": np.array([1.0 - config.shape_prob, config.shape_prob]),
        "palette": np.asarray(config.palette_probs, dtype=np.float64),
        "scale": np.full(config.scale_levels, 1.0 / config.scale_levels),
    }


def observed_marginals(table: Dict[str, Dict[str, int]], cardinalities: Dict[str, int]) -> Dict[str, np.ndarray]:
    """Frequencia de cada valor de atributo na tabela de usuarios."""
    if not table:
        raise ValueError("attribute table is empty")
    counts = {name: np.zeros(card) for name, card in cardinalities.items()}
    for attributes in table.values():
        for name, value in attributes.items():
            counts[name][value] += 1
    return {name: c / len(table) for name, c in counts.items()}


def sample_user_attributes(config: CorpusConfig, rng: np.random.Generator) -> Dict[str, int]:
    return {
        "shape": int(rng.random() < config.shape_prob),
        "palette": int(rng.choice(len(config.palette_probs), p=np.asarray(config.palette_probs))),
        "scale": int(rng.integers(config.scale_levels)),
    }


def motif_color(palette: int, channels: int) -> np.ndarray:
    color = PALETTE_COLORS[palette % len(PALETTE_COLORS)]
    if channels == 1:
        return np.array([float(color @ _LUMA)])
    if channels == 3:
        return color
    return np.resize(color, channels)


def render_image(
    attributes: Dict[str, int],
    label: int,
    background: float,
    shape: Tuple[int, int, int],
    scale_levels: int,
    noise_std: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Desenha uma imagem (C, H, W) em [0, 1]."""
    channels, height, width = shape
    yy, xx = np.meshgrid(np.arange(height) + 0.5, np.arange(width) + 0.5, indexing="ij")

    side = 0.3 if label == 0 else 0.7
    cx = width * side + rng.normal(0.0, 0.04 * width)
    cy = height * 0.5 + rng.normal(0.0, 0.08 * height)
    radius = min(height, width) * (0.12 + 0.16 * attributes["scale"] / max(scale_levels - 1, 1))

    dx, dy = xx - cx, yy - cy
    if attributes["shape"] == 0:
        dist = np.sqrt(dx ** 2 + dy ** 2)
    else:
        dist = np.maximum(np.abs(dx), np.abs(dy))
    # borda suave de um pixel
    alpha = np.clip(radius - dist + 0.5, 0.0, 1.0)

    brightness = rng.uniform(0.85, 1.0)
    color = motif_color(attributes["palette"], channels)[:, None, None]
    image = background * (1.0 - alpha)[None] + brightness * color * alpha[None]
    image = image + rng.normal(0.0, noise_std, size=image.shape)
    return np.clip(image, 0.0, 1.0)


def generate_corpus(config: CorpusConfig) -> Tuple[LabeledImageCollection, Dict[str, Dict[str, int]]]:
    """Gera o corpus completo e a tabela de atributos por usuario."""
    rng = np.random.default_rng(config.seed)

    images: List[np.ndarray] = []
    labels: List[int] = []
    user_ids: List[str] = []
    attributes: List[Dict[str, int]] = []
    table: Dict[str, Dict[str, int]] = {}

    for u in range(config.num_users):
        user_id = f"user{u:03d}"
        user_attributes = sample_user_attributes(config, rng)
        background = float(rng.uniform(0.05, 0.35))
        table[user_id] = user_attributes

        count = config.images_per_user
        if config.size_spread:
            count += int(rng.integers(-config.size_spread, config.size_spread + 1))
        count = max(count, 1)

        for _ in range(count):
            label = int(rng.integers(2))
            images.append(render_image(
                user_attributes,
                label,
                background,
                tuple(config.image_shape),
                config.scale_levels,
                config.noise_std,
                rng,
            ))
            labels.append(label)
            user_ids.append(user_id)
            attributes.append(dict(user_attributes))

    collection = LabeledImageCollection(
        images=torch.from_numpy(np.stack(images).astype(np.float32)),
        labels=torch.tensor(labels, dtype=torch.long),
        user_ids=user_ids,
        attributes=attributes,
    )

    logger.info(f"Generated synthetic corpus: {config.num_users} users, {len(collection)} images")
    return collection, table


def noise_images(count: int, shape: Tuple[int, int, int], seed: int) -> torch.Tensor:
    """Imagens de ruido uniforme, sem motivo (nao "detectaveis")."""
    generator = torch.Generator().manual_seed(seed)
    return torch.rand((count,) + tuple(shape), generator=generator)
