"""
Simulacao do cenario federado cross-device.

Agrupa o corpus por usuario (dados nao-IID), sorteia o lote privado de cada
rodada e produz o gradiente que o servidor observa.
"""

import logging
from collections import OrderedDict
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional

import torch

from src.diffula.capture import GradientCapture
from src.diffula.corpus import LabeledImageCollection
from src.diffula.victim import LabeledBatch, VictimModel, batch_gradient

logger = logging.getLogger(__name__)


@dataclass
class UserDataset:
    user_id: str
    images: torch.Tensor
    labels: torch.Tensor
    attributes: Dict[str, int]

    def __post_init__(self) -> None:
        if self.images.shape[0] < 1:
            raise ValueError(f"user {self.user_id!r} has no images")
        if self.labels.shape[0] != self.images.shape[0]:
            raise ValueError(f"user {self.user_id!r}: labels and images differ in length")

    def __len__(self) -> int:
        return int(self.images.shape[0])


def _user_key(record: Dict[str, Any]) -> str:
    return str(record["user_id"])


def partition_by_user(
    dataset: LabeledImageCollection,
    grouping: Callable[[Dict[str, Any]], str] = _user_key,
    min_images: int = 1,
    max_users: Optional[int] = None,
) -> List[UserDataset]:
    """Particiona o corpus por usuario, na ordem de primeira aparicao.

    Usuarios com menos de min_images imagens sao descartados; max_users
    mantem apenas os primeiros usuarios que passam no filtro.
    """
    groups: "OrderedDict[str, List[int]]" = OrderedDict()
    for index in range(len(dataset)):
        groups.setdefault(grouping(dataset.record(index)), []).append(index)

    users: List[UserDataset] = []
    for user_id, indices in groups.items():
        if len(indices) < min_images:
            logger.debug(f"Skipping {user_id}: {len(indices)} < {min_images} images")
            continue

        attributes = dataset.attributes[indices[0]]
        # premissa de consistencia semantica: atributos iguais dentro do usuario
        for i in indices[1:]:
            if dataset.attributes[i] != attributes:
                raise ValueError(f"user {user_id!r} has inconsistent attributes")

        idx = torch.tensor(indices, dtype=torch.long)
        users.append(UserDataset(
            user_id=user_id,
            images=dataset.images[idx],
            labels=dataset.labels[idx],
            attributes=dict(attributes),
        ))
        if max_users is not None and len(users) >= max_users:
            break

    if not users:
        raise ValueError(f"no user has at least {min_images} images after filtering")

    logger.info(f"Partitioned {len(dataset)} images into {len(users)} users")
    return users


def sample_batch_indices(user: UserDataset, batch_size: int, seed: int) -> torch.Tensor:
    if batch_size > len(user):
        raise ValueError(f"batch size {batch_size} exceeds the {len(user)} images of {user.user_id}")
    generator = torch.Generator().manual_seed(seed)
    return torch.randperm(len(user), generator=generator)[:batch_size]


def capture_round(
    model: VictimModel,
    user: UserDataset,
    batch_size: int,
    seed: int,
    known_labels: bool = False,
    timestamp: Optional[str] = None,
) -> GradientCapture:
    """Uma rodada: o usuario sorteia um lote e envia o gradiente medio."""
    indices = sample_batch_indices(user, batch_size, seed)
    batch = LabeledBatch(images=user.images[indices], labels=user.labels[indices])
    capture = batch_gradient(model, batch)

    if known_labels:
        counts: Dict[int, int] = {}
        for label in batch.labels.tolist():
            counts[int(label)] = counts.get(int(label), 0) + 1
        capture.label_multiset_hint = counts

    capture.metadata = {
        "seed": seed,
        "dataset_id": user.user_id,
        "indices": indices.tolist(),
        "timestamp": timestamp,
    }

    logger.debug(f"Captured round for {user.user_id}: B={batch_size}, seed={seed}")
    return capture


def private_batch(user: UserDataset, capture: GradientCapture) -> torch.Tensor:
    """Recupera as imagens originais do lote capturado (so para avaliacao)."""
    indices = capture.metadata.get("indices")
    if indices is None:
        return user.images
    return user.images[torch.tensor(indices, dtype=torch.long)]
