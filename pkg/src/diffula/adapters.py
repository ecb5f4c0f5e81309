"""
Adaptadores semanticos: predicao de atributos, embedding e deteccao.

O adaptador toy e um classificador de atributos treinado no corpus
sintetico. Cada cabeca tem uma classe extra "nenhum" treinada com imagens
de ruido; a deteccao exige que, em todas as cabecas, a maior probabilidade
entre as classes reais passe do limiar. Outros adaptadores (ex.: LPIPS)
entram pelo registro ADAPTERS.
"""

import io
import logging
import warnings
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Callable, Dict, Tuple

import torch
import torch.nn.functional as F
from torch import nn

from src.diffula.capture import atomic_write_bytes
from src.diffula.config import AdapterConfig
from src.diffula.corpus import ATTRIBUTE_NAMES, LabeledImageCollection, noise_images
from src.diffula.errors import DegenerateEmbeddingWarning

logger = logging.getLogger(__name__)

ADAPTER_FORMAT_VERSION = 1


class SemanticAdapter(ABC):
    """Interface comum (name, predict, embed, detect) usada pela avaliacao."""

    name: str = "adapter"
    capabilities: Tuple[str, ...] = ("predict", "embed", "detect")

    @property
    @abstractmethod
    def attributes(self) -> Dict[str, int]:
        """Nome do atributo -> numero de classes."""

    @abstractmethod
    def predict(self, images: torch.Tensor) -> Dict[str, torch.Tensor]:
        """(N, C, H, W) -> {atributo: posterior (N, K)} com linhas somando 1."""

    @abstractmethod
    def embed(self, images: torch.Tensor) -> torch.Tensor:
        """(N, C, H, W) -> (N, D)"""

    @abstractmethod
    def detect(self, images: torch.Tensor) -> torch.Tensor:
        """(N, C, H, W) -> mascara booleana (N,)"""

    def supports(self, capability: str) -> bool:
        return capability in self.capabilities

    def infer_attributes(self, images: torch.Tensor) -> Dict[str, Dict[str, object]]:
        """argmax do posterior medio das imagens, por atributo."""
        posteriors = self.predict(images)
        inferred: Dict[str, Dict[str, object]] = {}
        for name, probs in posteriors.items():
            mean = probs.mean(dim=0)
            inferred[name] = {
                "value": int(torch.argmax(mean)),
                "scores": [round(float(p), 6) for p in mean],
            }
        return inferred


class AttributeNet(nn.Module):
    def __init__(self, in_channels: int, embed_dim: int, head_sizes: Dict[str, int]) -> None:
        super().__init__()
        self.trunk = nn.Sequential(
            nn.Conv2d(in_channels, 16, 3, padding=1),
            nn.ReLU(),
            nn.Conv2d(16, 32, 3, stride=2, padding=1),
            nn.ReLU(),
            nn.Conv2d(32, 32, 3, stride=2, padding=1),
            nn.ReLU(),
            nn.AdaptiveAvgPool2d(1),
            nn.Flatten(),
        )
        self.embedding = nn.Linear(32, embed_dim)
        # uma classe extra por cabeca: "nenhum" (imagem fora da distribuicao)
        self.heads = nn.ModuleDict({
            name: nn.Linear(embed_dim, size + 1) for name, size in head_sizes.items()
        })

    def embed(self, x: torch.Tensor) -> torch.Tensor:
        return self.embedding(self.trunk(x))

    def forward(self, x: torch.Tensor) -> Dict[str, torch.Tensor]:
        h = F.relu(self.embed(x))
        return {name: head(h) for name, head in self.heads.items()}


class ToyAttributeAdapter(SemanticAdapter):
    name = "toy"

    def __init__(
        self,
        net: AttributeNet,
        head_sizes: Dict[str, int],
        input_shape: Tuple[int, int, int],
        detection_threshold: float,
    ) -> None:
        self.net = net.eval()
        self.head_sizes = dict(head_sizes)
        self.input_shape = tuple(input_shape)
        self.detection_threshold = detection_threshold

    @property
    def attributes(self) -> Dict[str, int]:
        return dict(self.head_sizes)

    def _prepare(self, images: torch.Tensor) -> torch.Tensor:
        if images.dim() == 3:
            images = images.unsqueeze(0)
        if tuple(images.shape[1:]) != self.input_shape:
            raise ValueError(f"adapter expects {self.input_shape}, got {tuple(images.shape[1:])}")
        return images.detach().to(torch.float32)

    def _full_posteriors(self, images: torch.Tensor) -> Dict[str, torch.Tensor]:
        with torch.no_grad():
            logits = self.net(self._prepare(images))
        return {name: torch.softmax(value.to(torch.float64), dim=1) for name, value in logits.items()}

    def predict(self, images: torch.Tensor) -> Dict[str, torch.Tensor]:
        posteriors = {}
        for name, probs in self._full_posteriors(images).items():
            real = probs[:, :-1]
            posteriors[name] = real / real.sum(dim=1, keepdim=True).clamp_min(1e-300)
        return posteriors

    def embed(self, images: torch.Tensor) -> torch.Tensor:
        with torch.no_grad():
            return self.net.embed(self._prepare(images)).to(torch.float64)

    def detection_scores(self, images: torch.Tensor) -> torch.Tensor:
        scores = [probs[:, :-1].max(dim=1).values for probs in self._full_posteriors(images).values()]
        return torch.stack(scores, dim=1).min(dim=1).values

    def detect(self, images: torch.Tensor) -> torch.Tensor:
        return self.detection_scores(images) > self.detection_threshold


def embedding_distance(a: torch.Tensor, b: torch.Tensor) -> Tuple[float, bool]:
    """1 - cos(a, b) e um flag de embedding nulo (distancia 1 nesse caso)."""
    na, nb = float(a.norm()), float(b.norm())
    if na == 0.0 or nb == 0.0:
        warnings.warn("zero embedding in perceptual distance", DegenerateEmbeddingWarning, stacklevel=2)
        return 1.0, True
    return float(1.0 - torch.dot(a.flatten(), b.flatten()) / (na * nb)), False


def train_attribute_adapter(
    collection: LabeledImageCollection,
    head_sizes: Dict[str, int],
    config: AdapterConfig,
) -> ToyAttributeAdapter:
    """Treina o classificador de atributos (mais imagens de ruido como "nenhum")."""
    images = collection.images.to(torch.float32)
    input_shape = tuple(images.shape[1:])
    targets = {
        name: torch.tensor([attrs[name] for attrs in collection.attributes], dtype=torch.long)
        for name in head_sizes
    }

    negatives = noise_images(max(len(images) // 4, 1), input_shape, seed=config.seed + 1)
    all_images = torch.cat([images, negatives])
    for name, size in head_sizes.items():
        none_class = torch.full((len(negatives),), size, dtype=torch.long)
        targets[name] = torch.cat([targets[name], none_class])

    generator = torch.Generator().manual_seed(config.seed)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(config.seed)
        net = AttributeNet(input_shape[0], config.embed_dim, head_sizes)

    optimizer = torch.optim.Adam(net.parameters(), lr=config.lr)
    net.train()
    for epoch in range(config.epochs):
        order = torch.randperm(len(all_images), generator=generator)
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            logits = net(all_images[idx])
            loss = sum(F.cross_entropy(logits[name], targets[name][idx]) for name in head_sizes)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += float(loss) * len(idx)
        logger.info(f"Adapter epoch {epoch + 1}/{config.epochs} - loss {total / len(order):.4f}")

    adapter = ToyAttributeAdapter(net, head_sizes, input_shape, config.detection_threshold)
    accuracy = attribute_accuracy(adapter, collection)
    logger.info(f"Adapter training accuracy: {accuracy}")
    return adapter


def attribute_accuracy(adapter: SemanticAdapter, collection: LabeledImageCollection) -> Dict[str, float]:
    posteriors = adapter.predict(collection.images)
    accuracy = {}
    for name, probs in posteriors.items():
        truth = torch.tensor([attrs[name] for attrs in collection.attributes])
        accuracy[name] = round(float((probs.argmax(dim=1) == truth).double().mean()), 4)
    return accuracy


def save_adapter(adapter: ToyAttributeAdapter, path: Path) -> Path:
    payload = {
        "format_version": ADAPTER_FORMAT_VERSION,
        "kind": adapter.name,
        "head_sizes": adapter.head_sizes,
        "input_shape": list(adapter.input_shape),
        "embed_dim": adapter.net.embedding.out_features,
        "detection_threshold": adapter.detection_threshold,
        "state_dict": {k: v.detach().clone() for k, v in adapter.net.state_dict().items()},
    }
    buffer = io.BytesIO()
    torch.save(payload, buffer)
    atomic_write_bytes(Path(path), buffer.getvalue())
    logger.info(f"Saved adapter to {path}")
    return Path(path)


def _load_toy(path: Path) -> ToyAttributeAdapter:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Adapter checkpoint not found: {path}")
    payload = torch.load(io.BytesIO(path.read_bytes()), map_location="cpu", weights_only=True)
    if payload.get("format_version") != ADAPTER_FORMAT_VERSION:
        raise ValueError(f"unsupported adapter checkpoint version {payload.get('format_version')}")

    head_sizes = {str(k): int(v) for k, v in payload["head_sizes"].items()}
    input_shape = tuple(payload["input_shape"])
    net = AttributeNet(input_shape[0], int(payload["embed_dim"]), head_sizes)
    net.load_state_dict(payload["state_dict"])
    return ToyAttributeAdapter(net, head_sizes, input_shape, float(payload["detection_threshold"]))


# Registro de adaptadores: nome -> carregador de checkpoint.
# Um adaptador LPIPS/face real entra aqui com register_adapter.
ADAPTERS: Dict[str, Callable[[Path], SemanticAdapter]] = {
    "toy": _load_toy,
}


def register_adapter(kind: str, loader: Callable[[Path], SemanticAdapter]) -> None:
    ADAPTERS[kind] = loader


def load_adapter(path: Path, kind: str = "toy") -> SemanticAdapter:
    if kind not in ADAPTERS:
        raise ValueError(f"unknown adapter kind {kind!r}, registered: {sorted(ADAPTERS)}")
    return ADAPTERS[kind](Path(path))


def default_head_sizes(cardinalities: Dict[str, int]) -> Dict[str, int]:
    return {name: int(cardinalities[name]) for name in ATTRIBUTE_NAMES if name in cardinalities}
