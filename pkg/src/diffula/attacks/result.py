"""
Resultado de um ataque: imagens, atributos inferidos, tracos e snapshots.
"""

import io
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import torch

from src.diffula.capture import atomic_write_bytes

logger = logging.getLogger(__name__)

RESULT_FORMAT_VERSION = 1


@dataclass
class StepTrace:
    step: int
    gm_loss: float
    prior_loss: float
    tau: Optional[int] = None
    zeta: Optional[float] = None
    clipped: bool = False
    gm_norm: float = 0.0
    clipped_norm: float = 0.0
    prior_norm: float = 0.0
    update_norm: float = 0.0
    layer_weights: Optional[List[float]] = None

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        if data["layer_weights"] is None:
            del data["layer_weights"]
        return data


@dataclass
class ReconstructionResult:
    """Saida de run_diffula (1 imagem) ou run_inverting (B imagens).

    x_hat e x_hat_raw ficam na faixa de pixels [0, 1] e na resolucao da
    vitima, sempre com shape (N, C, H, W).
    """

    mode: str
    x_hat_raw: torch.Tensor
    x_hat: torch.Tensor
    traces: List[StepTrace]
    snapshots: List[Tuple[int, torch.Tensor]]
    h_c_hat: Optional[Dict[str, Dict[str, Any]]] = None
    labels: Optional[Dict[str, Any]] = None
    search_dim: int = 0
    updates: Optional[List[Dict[str, torch.Tensor]]] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.x_hat.dim() != 4:
            raise ValueError("x_hat must have shape (N, C, H, W)")
        if not torch.isfinite(self.x_hat).all():
            raise ValueError("x_hat is not finite")

    @property
    def is_user_level(self) -> bool:
        return self.mode == "diffula"

    @property
    def steps(self) -> int:
        return len(self.traces)

    def trace_column(self, name: str) -> List[Any]:
        return [getattr(t, name) for t in self.traces]

    def traces_to_dict(self) -> List[Dict[str, Any]]:
        return [t.to_dict() for t in self.traces]


def save_result(result: ReconstructionResult, path: Path) -> Path:
    payload = {
        "format_version": RESULT_FORMAT_VERSION,
        "mode": result.mode,
        "x_hat_raw": result.x_hat_raw.detach().cpu(),
        "x_hat": result.x_hat.detach().cpu(),
        "traces": result.traces_to_dict(),
        "snapshot_steps": [step for step, _ in result.snapshots],
        "snapshot_images": [image.detach().cpu() for _, image in result.snapshots],
        "h_c_hat": result.h_c_hat,
        "labels": result.labels,
        "search_dim": result.search_dim,
        "metadata": result.metadata,
    }
    buffer = io.BytesIO()
    torch.save(payload, buffer)
    atomic_write_bytes(Path(path), buffer.getvalue())
    return Path(path)


def load_result(path: Path) -> ReconstructionResult:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Result file not found: {path}")
    payload = torch.load(io.BytesIO(path.read_bytes()), map_location="cpu", weights_only=True)
    if payload.get("format_version") != RESULT_FORMAT_VERSION:
        raise ValueError(f"unsupported result format version {payload.get('format_version')}")

    return ReconstructionResult(
        mode=payload["mode"],
        x_hat_raw=payload["x_hat_raw"],
        x_hat=payload["x_hat"],
        traces=[StepTrace(**t) for t in payload["traces"]],
        snapshots=list(zip(payload["snapshot_steps"], payload["snapshot_images"])),
        h_c_hat=payload["h_c_hat"],
        labels=payload["labels"],
        search_dim=payload["search_dim"],
        metadata=payload["metadata"],
    )
