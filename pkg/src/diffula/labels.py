"""
Recuperacao analitica dos rotulos a partir do gradiente da ultima camada.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np
import torch

from src.diffula.capture import GradientCapture
from src.diffula.config import LABEL_MODES, PIXEL_RANGE
from src.diffula.victim import VictimModel, expand_labels

logger = logging.getLogger(__name__)

AUXILIARY_SAMPLES = 64


@dataclass
class LabelEstimate:
    multiset: Dict[int, int]
    confidence: Dict[int, float]
    method: str

    def __post_init__(self) -> None:
        if self.method not in LABEL_MODES:
            raise ValueError(f"method must be one of {LABEL_MODES}")
        if any(count < 0 for count in self.multiset.values()):
            raise ValueError("label counts must be nonnegative")

    @property
    def batch_size(self) -> int:
        return int(sum(self.multiset.values()))

    def labels(self) -> torch.Tensor:
        return expand_labels(self.multiset)

    def to_dict(self) -> Dict[str, object]:
        return {
            "multiset": {str(k): v for k, v in sorted(self.multiset.items())},
            "confidence": {str(k): round(v, 6) for k, v in sorted(self.confidence.items())},
            "method": self.method,
        }


def _last_layer_gradients(capture: GradientCapture, model: VictimModel):
    weight_name = f"{model.last_layer}.weight"
    bias_name = f"{model.last_layer}.bias"
    if weight_name not in capture.names:
        raise KeyError(f"last layer {weight_name!r} not found in capture")
    weight = capture.gradient(weight_name).to(torch.float64)
    bias = capture.gradient(bias_name).to(torch.float64) if bias_name in capture.names else None
    return weight, bias


def _single_sample(weight: torch.Tensor, bias: Optional[torch.Tensor]) -> int:
    # g_c = (p_c - 1{c=y}) * h com h >= 0 (ReLU antes da camada final)
    row_sums = weight.sum(dim=1)
    negative = (row_sums < 0).nonzero().flatten()
    if len(negative) == 1:
        return int(negative[0])
    if bias is not None:
        # features todas nulas: o gradiente do bias e p - onehot exatamente
        return int(torch.argmin(bias))
    return int(torch.argmin(row_sums))


def _largest_remainder(raw: np.ndarray, total: int) -> np.ndarray:
    """Arredonda para inteiros >= 0 somando total; empates vao para a menor classe."""
    raw = np.clip(raw, 0.0, None)
    if raw.sum() <= 0:
        raw = np.ones_like(raw)
    raw = raw * (total / raw.sum())
    counts = np.floor(raw).astype(int)
    remainders = raw - counts
    # ordem estavel: maior resto primeiro, menor indice no empate
    order = sorted(range(len(raw)), key=lambda c: (-remainders[c], c))
    for c in order[: total - counts.sum()]:
        counts[c] += 1
    return counts


def _auxiliary_statistics(model: VictimModel, auxiliary: Optional[torch.Tensor], seed: int):
    if auxiliary is None:
        generator = torch.Generator().manual_seed(seed)
        lo, hi = PIXEL_RANGE
        auxiliary = lo + (hi - lo) * torch.rand(
            (AUXILIARY_SAMPLES,) + model.input_shape,
            generator=generator,
        )
    with torch.no_grad():
        images = auxiliary.to(model.dtype)
        probs = torch.softmax(model.forward(images), dim=1).mean(dim=0)
        feature_sum = model.features(images).sum(dim=1).mean()
    return probs.to(torch.float64), float(feature_sum)


def recover_labels(
    capture: GradientCapture,
    model: VictimModel,
    mode: str = "analytic",
    auxiliary: Optional[torch.Tensor] = None,
    seed: int = 0,
) -> LabelEstimate:
    """Estima o multiconjunto de rotulos do lote privado.

    B=1 usa a regra de sinal (exata para entropia cruzada). Para B>1 ajusta
    por minimos quadrados g = s * (p_medio - n / B), com p_medio e s estimados
    em imagens auxiliares, e arredonda para um multiconjunto que soma B.
    """
    if mode == "provided":
        if capture.label_multiset_hint is None:
            raise ValueError("label mode 'provided' needs a capture with a label hint")
        hint = dict(capture.label_multiset_hint)
        return LabelEstimate(
            multiset=hint,
            confidence={c: 1.0 for c in hint},
            method="provided",
        )
    if mode != "analytic":
        raise ValueError(f"unknown label mode {mode!r}")
    if not capture.batch_size:
        raise ValueError("capture has no batch size")

    weight, bias = _last_layer_gradients(capture, model)
    num_classes = weight.shape[0]
    batch_size = capture.batch_size

    if batch_size == 1:
        cls = _single_sample(weight, bias)
        confidence = {c: float(c == cls) for c in range(num_classes)}
        return LabelEstimate(multiset={cls: 1}, confidence=confidence, method="analytic")

    mean_probs, feature_sum = _auxiliary_statistics(model, auxiliary, seed)
    if bias is not None:
        observed, scale = bias, 1.0
    else:
        observed, scale = weight.sum(dim=1), max(feature_sum, 1e-12)

    raw = batch_size * (mean_probs - observed / scale)
    # projeta na restricao sum(n) = B (solucao de minimos quadrados com restricao)
    raw = raw + (batch_size - raw.sum()) / num_classes
    raw_np = raw.numpy()
    counts = _largest_remainder(raw_np, batch_size)

    multiset = {c: int(n) for c, n in enumerate(counts) if n > 0}
    confidence = {
        c: float(max(0.0, 1.0 - abs(raw_np[c] - counts[c])))
        for c in range(num_classes)
    }

    logger.debug(f"Recovered label multiset {multiset} from B={batch_size} capture")
    return LabelEstimate(multiset=multiset, confidence=confidence, method="analytic")
