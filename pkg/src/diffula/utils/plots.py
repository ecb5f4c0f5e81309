"""
Figuras estaticas dos ataques: grades de snapshots (PNG via Pillow) e
curvas de perda/similaridade por passo (matplotlib, backend Agg).
"""

import logging
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import torch  # noqa: E402
from PIL import Image  # noqa: E402
from torchvision.utils import make_grid  # noqa: E402

from src.diffula.data_loader import to_uint8  # noqa: E402

logger = logging.getLogger(__name__)

# Limite de imagens por linha na grade (ataques em nivel de amostra)
MAX_GRID_COLUMNS = 8


def snapshot_grid(snapshots: Sequence[Tuple[int, torch.Tensor]], max_columns: int = MAX_GRID_COLUMNS) -> torch.Tensor:
    """Uma linha por snapshot; cada linha mostra ate max_columns imagens."""
    if not snapshots:
        raise ValueError("no snapshots to draw")
    columns = min(max_columns, max(len(images) for _, images in snapshots))
    tiles: List[torch.Tensor] = []
    for _, images in snapshots:
        images = images[:columns].detach().to(torch.float32).cpu()
        # completa a linha com branco
        pad = torch.ones((columns - len(images),) + tuple(images.shape[1:]))
        tiles.extend(torch.cat([images, pad]))
    return make_grid(torch.stack(tiles), nrow=columns, padding=1, pad_value=1.0)


def save_snapshot_grid(snapshots: Sequence[Tuple[int, torch.Tensor]], path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(snapshot_grid(snapshots))).save(path, format="PNG")
    logger.debug(f"Saved snapshot grid with {len(snapshots)} rows to {path}")
    return path


def plot_traces(traces: Dict[str, List[Dict[str, float]]], path: Path) -> Path:
    """Perda de gradient matching e do prior por passo, uma curva por execucao."""
    fig, (ax_gm, ax_prior) = plt.subplots(1, 2, figsize=(12, 4))
    for label, rows in sorted(traces.items()):
        steps = [r["step"] for r in rows]
        ax_gm.plot(steps, [r["gm_loss"] for r in rows], label=label, linewidth=1)
        ax_prior.plot(steps, [r["prior_loss"] for r in rows], label=label, linewidth=1)

    ax_gm.set_title("gradient matching loss")
    ax_gm.set_xlabel("step")
    ax_prior.set_title("prior loss")
    ax_prior.set_xlabel("step")
    ax_prior.set_yscale("symlog")
    if len(traces) <= 10:
        ax_gm.legend(fontsize="small")

    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_similarity(similarity: Dict[str, List[Dict[str, float]]], path: Path) -> Path:
    """Similaridade de cada snapshot com o lote original, por passo."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, rows in sorted(similarity.items()):
        ax.plot([r["step"] for r in rows], [r["similarity"] for r in rows], marker=".", label=label)
    ax.set_xlabel("step")
    ax.set_ylabel("similarity to original batch")
    ax.set_ylim(-1.0, 1.0)
    if len(similarity) <= 10:
        ax.legend(fontsize="small")

    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
