"""
Modelos vitima f_w e calculo de gradientes.

Duas arquiteturas sem normalizacao (sem estatisticas de BatchNorm expostas):
"small-cnn" (2 conv + 2 fc) e "small-resnet" (4 blocos residuais).
"""

import hashlib
import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from src.diffula.capture import GradientCapture
from src.diffula.config import SUPPORTED_ARCHITECTURES, ModelSpec
from src.diffula.errors import NonFiniteError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LabeledBatch:
    images: torch.Tensor
    labels: torch.Tensor

    def __post_init__(self) -> None:
        if self.images.dim() != 4 or self.images.shape[0] < 1:
            raise ValueError(f"images must be (B, C, H, W) with B >= 1, got {tuple(self.images.shape)}")
        if self.labels.shape != (self.images.shape[0],):
            raise ValueError("labels must be a vector with one entry per image")
        if not torch.isfinite(self.images).all():
            raise ValueError("images must be finite")

    @property
    def batch_size(self) -> int:
        return int(self.images.shape[0])


class SmallCNN(nn.Module):

    def __init__(self, input_shape: Tuple[int, int, int], num_classes: int, width: int, hidden: int) -> None:
        super().__init__()
        channels, height, width_px = input_shape
        self.conv1 = nn.Conv2d(channels, width, kernel_size=3, padding=1)
        self.conv2 = nn.Conv2d(width, 2 * width, kernel_size=3, stride=2, padding=1)
        self.fc1 = nn.Linear(2 * width * (height // 2) * (width_px // 2), hidden)
        self.fc2 = nn.Linear(hidden, num_classes)

    def features(self, x: torch.Tensor) -> torch.Tensor:
        x = F.relu(self.conv1(x))
        x = F.relu(self.conv2(x))
        return F.relu(self.fc1(x.flatten(1)))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(self.features(x))


class ResidualBlock(nn.Module):
    """Bloco basico; a normalizacao do ResNet original vira identidade."""

    def __init__(self, in_channels: int, out_channels: int, stride: int) -> None:
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, out_channels, kernel_size=3, stride=stride, padding=1)
        self.conv2 = nn.Conv2d(out_channels, out_channels, kernel_size=3, padding=1)
        if stride != 1 or in_channels != out_channels:
            self.shortcut: nn.Module = nn.Conv2d(in_channels, out_channels, kernel_size=1, stride=stride)
        else:
            self.shortcut = nn.Identity()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = F.relu(self.conv1(x))
        out = self.conv2(out)
        return F.relu(out + self.shortcut(x))


class SmallResNet(nn.Module):

    def __init__(self, input_shape: Tuple[int, int, int], num_classes: int, width: int) -> None:
        super().__init__()
        self.stem = nn.Conv2d(input_shape[0], width, kernel_size=3, padding=1)
        self.blocks = nn.ModuleList([
            ResidualBlock(width, width, stride=1),
            ResidualBlock(width, 2 * width, stride=2),
            ResidualBlock(2 * width, 4 * width, stride=2),
            ResidualBlock(4 * width, 8 * width, stride=2),
        ])
        self.fc = nn.Linear(8 * width, num_classes)

    def features(self, x: torch.Tensor) -> torch.Tensor:
        x = F.relu(self.stem(x))
        for block in self.blocks:
            x = block(x)
        return x.mean(dim=(2, 3))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc(self.features(x))


class VictimModel:
    """Classificador vitima com camadas nomeadas e ordem estavel.

    A rede nunca e treinada aqui: os gradientes sao pedidos explicitamente
    via torch.autograd.grad e nenhum otimizador toca nos pesos.
    """

    def __init__(self, spec: ModelSpec, net: nn.Module, last_layer: str) -> None:
        self.spec = spec
        self.net = net
        self.last_layer = last_layer
        self.net.eval()

    @property
    def input_shape(self) -> Tuple[int, int, int]:
        return tuple(self.spec.input_shape)

    @property
    def num_classes(self) -> int:
        return self.spec.num_classes

    @property
    def layers(self) -> List[Tuple[str, Tuple[int, ...]]]:
        return [(name, tuple(p.shape)) for name, p in self.net.named_parameters()]

    @property
    def layer_names(self) -> List[str]:
        return [name for name, _ in self.net.named_parameters()]

    @property
    def parameters(self) -> List[torch.Tensor]:
        return [p for _, p in self.net.named_parameters()]

    @property
    def dtype(self) -> torch.dtype:
        return self.parameters[0].dtype

    def parameter(self, name: str) -> torch.Tensor:
        return dict(self.net.named_parameters())[name]

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return self.net(images)

    def features(self, images: torch.Tensor) -> torch.Tensor:
        return self.net.features(images)

    def double(self) -> "VictimModel":
        """Copia em float64 (usada pelos oraculos de diferencas finitas)."""
        clone = build_victim(self.spec)
        clone.net.load_state_dict(self.net.state_dict())
        clone.net.double()
        return clone

    def manifest(self) -> Dict[str, Any]:
        layers = self.layers
        return {
            "architecture": self.spec.architecture,
            "input_shape": list(self.input_shape),
            "num_classes": self.num_classes,
            "layers": [{"name": name, "shape": list(shape)} for name, shape in layers],
            "layer_count": len(layers),
            "parameter_count": int(sum(int(np.prod(shape)) for _, shape in layers)),
            "weights_hash": self.weights_hash(),
        }

    def weights_hash(self) -> str:
        """SHA-256 dos nomes e pesos (float32 little-endian), em hexadecimal."""
        digest = hashlib.sha256()
        for name, param in self.net.named_parameters():
            digest.update(name.encode("utf-8"))
            data = param.detach().cpu().to(torch.float32).numpy().astype("<f4")
            digest.update(data.tobytes())
        return digest.hexdigest()


def _init_weights(net: nn.Module, last_layer_module: str, seed: int) -> None:
    # Gaussiana escalada pelo fan-in; ganho sqrt(2) antes de ReLU, 1 na camada final
    generator = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for module_name, module in net.named_modules():
            if not isinstance(module, (nn.Conv2d, nn.Linear)):
                continue
            weight = module.weight
            fan_in = int(np.prod(weight.shape[1:]))
            gain = 1.0 if module_name == last_layer_module else 2.0
            std = (gain / fan_in) ** 0.5
            weight.copy_(torch.randn(weight.shape, generator=generator) * std)
            if module.bias is not None:
                module.bias.zero_()


def build_victim(spec: ModelSpec) -> VictimModel:
    """Constroi a vitima deterministicamente a partir da semente do spec."""
    if spec.architecture not in SUPPORTED_ARCHITECTURES:
        raise ValueError(
            f"Unsupported architecture {spec.architecture!r}; "
            f"expected one of {SUPPORTED_ARCHITECTURES}",
        )

    channels, height, width_px = spec.input_shape
    if channels < 1:
        raise ValueError("input shape must have at least one channel")

    if spec.architecture == "small-cnn":
        if height < 2 or width_px < 2 or height % 2 or width_px % 2:
            raise ValueError(f"small-cnn needs even spatial dimensions, got {spec.input_shape}")
        net: nn.Module = SmallCNN(spec.input_shape, spec.num_classes, spec.resolved_width, spec.hidden)
        last_module = "fc2"
    else:
        if height < 8 or width_px < 8 or height % 8 or width_px % 8:
            raise ValueError(
                f"small-resnet needs spatial dimensions divisible by 8, got {spec.input_shape}",
            )
        net = SmallResNet(spec.input_shape, spec.num_classes, spec.resolved_width)
        last_module = "fc"

    _init_weights(net, last_module, spec.seed)
    model = VictimModel(spec, net, last_layer=last_module)

    logger.debug(
        f"Built {spec.architecture} victim with {len(model.layers)} layers "
        f"for input {tuple(spec.input_shape)}",
    )
    return model


def parameter_gradients(
    model: VictimModel,
    images: torch.Tensor,
    labels: torch.Tensor,
    create_graph: bool = False,
) -> List[torch.Tensor]:
    """Gradiente medio da entropia cruzada em relacao a cada parametro nomeado.

    Com create_graph=True o resultado continua diferenciavel em relacao as
    imagens (necessario para o gradient matching).
    """
    params = model.parameters
    logits = model.forward(images)
    loss = F.cross_entropy(logits, labels)
    if not torch.isfinite(loss):
        raise NonFiniteError(f"non-finite victim loss ({loss.item()})")
    grads = torch.autograd.grad(loss, params, create_graph=create_graph)
    return list(grads)


def batch_gradient(model: VictimModel, batch: LabeledBatch) -> GradientCapture:
    """Gradiente observado pelo servidor: media sobre o lote de B imagens."""
    expected = model.input_shape
    if tuple(batch.images.shape[1:]) != expected:
        raise ValueError(
            f"Batch shape {tuple(batch.images.shape[1:])} does not match model input {expected}",
        )

    images = batch.images.to(model.dtype)
    grads = parameter_gradients(model, images, batch.labels)
    entries = [(name, g.detach().clone()) for name, g in zip(model.layer_names, grads)]
    return GradientCapture(
        entries=entries,
        model_ref=model.weights_hash(),
        batch_size=batch.batch_size,
    )


def expand_labels(multiset: Dict[int, int]) -> torch.Tensor:
    """Converte {classe: contagem} em um vetor ordenado de rotulos."""
    labels: List[int] = []
    for cls in sorted(multiset):
        labels.extend([int(cls)] * int(multiset[cls]))
    return torch.tensor(labels, dtype=torch.long)


def loss_value(model: VictimModel, images: torch.Tensor, labels: Sequence[int]) -> float:
    with torch.no_grad():
        logits = model.forward(images.to(model.dtype))
        return float(F.cross_entropy(logits, torch.as_tensor(labels, dtype=torch.long)))
