"""
Metricas de avaliacao dos ataques.

Qualidade de imagem (MSE, PSNR, distancia perceptual via adaptador),
pareamento otimo original/reconstrucao para ataques em nivel de amostra,
filtro de ensemble por deteccao e metricas semanticas contra os atributos
do usuario. Convencao de PSNR: max_value = 1, PSNR por par e depois media.
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

from src.diffula.adapters import SemanticAdapter, embedding_distance
from src.diffula.attacks.result import ReconstructionResult
from src.diffula.config import EvalConfig
from src.diffula.corpus import ORDINAL_ATTRIBUTES
from src.diffula.fl_sim import UserDataset
from src.diffula.solvers import solve_assignment

logger = logging.getLogger(__name__)

MAX_ASSIGNMENT_SIZE = 64
REQUIRED_CAPABILITIES = ("predict", "embed", "detect")


def mse(a: torch.Tensor, b: torch.Tensor) -> float:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    diff = a.detach().to(torch.float64) - b.detach().to(torch.float64)
    return float(diff.pow(2).mean())


def psnr_from_mse(error: float, max_value: float = 1.0) -> float:
    if max_value <= 0:
        raise ValueError("max_value must be positive")
    if error == 0.0:
        return math.inf
    return 10.0 * math.log10(max_value ** 2 / error)


def psnr(a: torch.Tensor, b: torch.Tensor, max_value: float = 1.0) -> float:
    """10 log10(max^2 / mse); imagens identicas dao +inf."""
    return psnr_from_mse(mse(a, b), max_value)


def perceptual_distance(a: torch.Tensor, b: torch.Tensor, adapter: SemanticAdapter) -> float:
    """1 - cos dos embeddings do adaptador, em [0, 2] (substituto do LPIPS).

    Embedding nulo vale 1.0 e gera aviso no log.
    """
    if not adapter.supports("embed"):
        raise ValueError(f"adapter {adapter.name!r} cannot embed images")
    emb = adapter.embed(torch.stack([a, b]))
    distance, degenerate = embedding_distance(emb[0], emb[1])
    if degenerate:
        logger.warning(f"Adapter {adapter.name!r} produced a zero embedding; perceptual distance set to {distance}")
    return distance


def _pair_distances(emb_a: torch.Tensor, emb_b: torch.Tensor) -> np.ndarray:
    out = np.zeros((len(emb_a), len(emb_b)))
    degenerate = 0
    for i in range(len(emb_a)):
        for j in range(len(emb_b)):
            out[i, j], flag = embedding_distance(emb_a[i], emb_b[j])
            degenerate += int(flag)
    if degenerate:
        logger.warning(f"{degenerate} of {out.size} image pairs had a zero embedding (distance set to 1.0)")
    return out


def mse_matrix(originals: torch.Tensor, reconstructions: torch.Tensor) -> np.ndarray:
    a = originals.detach().to(torch.float64).flatten(1)
    b = reconstructions.detach().to(torch.float64).flatten(1)
    return (a[:, None, :] - b[None, :, :]).pow(2).mean(dim=2).numpy()


def disambiguate(
    originals: torch.Tensor,
    reconstructions: torch.Tensor,
    backend: str = "scipy",
) -> List[int]:
    """Permutacao pi que minimiza sum_i mse(original_i, reconstrucao_pi(i))."""
    n = len(originals)
    if n != len(reconstructions):
        raise ValueError(f"{n} originals but {len(reconstructions)} reconstructions")
    if n > MAX_ASSIGNMENT_SIZE:
        raise ValueError(f"assignment limited to {MAX_ASSIGNMENT_SIZE} images, got {n}")
    if n == 0:
        return []
    if n == 1:
        return [0]

    solution = solve_assignment(mse_matrix(originals, reconstructions), backend=backend)
    logger.debug(
        f"Assignment via {solution['solver_name']}: cost {solution['objective_value']:.6f}, "
        f"{solution['processing_time']:.4f}s",
    )
    return [int(j) for j in solution["assignment"]]


def ensemble_filter(reconstructions: torch.Tensor, adapter: SemanticAdapter) -> Tuple[List[int], bool]:
    """Indices detectados; lista vazia liga o modo de chute aleatorio."""
    if not adapter.supports("detect"):
        raise ValueError(f"adapter {adapter.name!r} cannot detect")
    detected = adapter.detect(reconstructions)
    kept = [int(i) for i in torch.nonzero(detected).flatten()]
    return kept, not kept


def _chance_scores(truth: Dict[str, int], cardinalities: Dict[str, int]) -> Dict[str, float]:
    """Valor esperado das metricas semanticas sob chute uniforme."""
    scores = {}
    for name, k in cardinalities.items():
        if name in ORDINAL_ATTRIBUTES:
            scores[f"{name}_error"] = float(np.mean([abs(g - truth[name]) for g in range(k)]))
        else:
            scores[f"{name}_acc"] = 1.0 / k
    return scores


def attribute_scores(inferred: Dict[str, Dict[str, Any]], truth: Dict[str, int]) -> Dict[str, float]:
    scores = {}
    for name, entry in inferred.items():
        if name not in truth:
            continue
        if name in ORDINAL_ATTRIBUTES:
            scores[f"{name}_error"] = float(abs(int(entry["value"]) - int(truth[name])))
        else:
            scores[f"{name}_acc"] = float(int(entry["value"]) == int(truth[name]))
    return scores


@dataclass
class MetricsReport:
    mode: str
    user_id: str
    mse: float
    psnr: float
    perceptual: float
    semantic: Dict[str, float]
    pairs: List[Dict[str, float]]
    assignment: Optional[List[int]] = None
    ensemble_kept: Optional[List[int]] = None
    random_guess: bool = False
    intra_user_reference: Dict[str, Optional[float]] = field(default_factory=dict)
    original_reference: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "MetricsReport":
        return cls(**data)


def _image_block(
    pairs: Sequence[Tuple[torch.Tensor, torch.Tensor]],
    distances: Sequence[float],
    max_value: float,
) -> Tuple[float, float, float, List[Dict[str, float]]]:
    records = []
    for (a, b), dist in zip(pairs, distances):
        error = mse(a, b)
        records.append({"mse": error, "psnr": psnr_from_mse(error, max_value), "perceptual": float(dist)})
    return (
        float(np.mean([r["mse"] for r in records])),
        float(np.mean([r["psnr"] for r in records])),
        float(np.mean([r["perceptual"] for r in records])),
        records,
    )


def intra_user_reference(
    originals: torch.Tensor,
    adapter: SemanticAdapter,
    max_value: float = 1.0,
) -> Dict[str, Optional[float]]:
    """Media das metricas entre pares distintos (i, j) do lote original."""
    n = len(originals)
    if n < 2:
        return {"mse": None, "psnr": None, "perceptual": None, "similarity": None}
    emb = adapter.embed(originals)
    dist = _pair_distances(emb, emb)
    pairs = [(originals[i], originals[j]) for i in range(n) for j in range(n) if i != j]
    distances = [dist[i, j] for i in range(n) for j in range(n) if i != j]
    mse_value, psnr_value, perceptual_value, _ = _image_block(pairs, distances, max_value)
    return {
        "mse": mse_value,
        "psnr": psnr_value,
        "perceptual": perceptual_value,
        "similarity": 1.0 - perceptual_value,
    }


def original_reference(originals: torch.Tensor, truth: Dict[str, int], adapter: SemanticAdapter) -> Dict[str, float]:
    """Metricas semanticas do adaptador no proprio lote original."""
    reference = {"detection_rate": float(adapter.detect(originals).double().mean())}
    reference.update(attribute_scores(adapter.infer_attributes(originals), truth))
    return reference


def score_run(
    result: ReconstructionResult,
    user: UserDataset,
    adapter: SemanticAdapter,
    eval_cfg: Optional[EvalConfig] = None,
    originals: Optional[torch.Tensor] = None,
) -> MetricsReport:
    """Pontua um ataque contra o lote privado do usuario.

    Nivel de usuario: cada metrica e a media sobre os pares (x_hat, x_i) de
    todos os originais. Nivel de amostra: pares depois do pareamento otimo.
    """
    eval_cfg = eval_cfg if eval_cfg is not None else EvalConfig()
    missing = [c for c in REQUIRED_CAPABILITIES if not adapter.supports(c)]
    if missing:
        raise ValueError(f"adapter {adapter.name!r} lacks capabilities {missing}")

    originals = user.images if originals is None else originals
    originals = originals.to(torch.float64)
    recons = result.x_hat.to(torch.float64)
    if tuple(recons.shape[1:]) != tuple(originals.shape[1:]):
        raise ValueError(
            f"reconstruction shape {tuple(recons.shape[1:])} differs from user images {tuple(originals.shape[1:])}",
        )

    emb_orig = adapter.embed(originals)
    emb_recon = adapter.embed(recons)
    dist = _pair_distances(emb_orig, emb_recon)
    truth = user.attributes
    cardinalities = {name: k for name, k in adapter.attributes.items() if name in truth}

    assignment = None
    if result.is_user_level:
        x_hat = recons[0]
        pairs = [(x_hat, originals[i]) for i in range(len(originals))]
        distances = [dist[i, 0] for i in range(len(originals))]
        detected = adapter.detect(recons)
        inferred = result.h_c_hat if result.h_c_hat is not None else adapter.infer_attributes(recons)
        semantic = {
            "detection_rate": float(detected.double().mean()),
            "similarity": float(1.0 - dist[:, 0].mean()),
        }
        # x_hat e a unica previsao; sem ensemble no nivel de usuario
        semantic.update(attribute_scores(inferred, truth))
        kept, random_guess = None, False
    else:
        assignment = disambiguate(originals, recons, eval_cfg.assignment_backend)
        pairs = [(originals[i], recons[assignment[i]]) for i in range(len(originals))]
        distances = [dist[i, assignment[i]] for i in range(len(originals))]
        detected = adapter.detect(recons)
        kept, random_guess = ensemble_filter(recons, adapter)
        semantic = {
            "detection_rate": float(detected.double().mean()),
            "batch_detection": float(bool(detected.any())),
        }
        if random_guess:
            semantic["similarity"] = 0.0
            semantic.update(_chance_scores(truth, cardinalities))
        else:
            semantic["similarity"] = float(1.0 - dist[:, kept].mean())
            semantic.update(attribute_scores(adapter.infer_attributes(recons[kept]), truth))

    mse_value, psnr_value, perceptual_value, records = _image_block(pairs, distances, eval_cfg.max_pixel)
    report = MetricsReport(
        mode=result.mode,
        user_id=user.user_id,
        mse=mse_value,
        psnr=psnr_value,
        perceptual=perceptual_value,
        semantic=semantic,
        pairs=records,
        assignment=assignment,
        ensemble_kept=kept,
        random_guess=random_guess,
        intra_user_reference=intra_user_reference(originals, adapter, eval_cfg.max_pixel),
        original_reference=original_reference(originals, truth, adapter),
    )
    logger.info(
        f"Scored {result.mode} run for {user.user_id}: mse {mse_value:.4f}, psnr {psnr_value:.2f}, "
        f"perceptual {perceptual_value:.4f}",
    )
    return report


# Colunas da tabela agregada (na ordem de exibicao)
TABLE_COLUMNS = ("mse", "psnr", "perceptual", "detection_rate", "similarity")


def _mean(values: Sequence[Optional[float]]) -> Optional[float]:
    finite = [v for v in values if v is not None]
    return float(np.mean(finite)) if finite else None


def aggregate_reports(reports: Sequence[MetricsReport]) -> List[Dict[str, Any]]:
    """Uma linha por modo de ataque, mais as linhas de referencia.

    Medias sobre usuarios e replicas; psnr vira inf se alguma execucao for inf.
    """
    if not reports:
        raise ValueError("no reports to aggregate")

    semantic_keys = sorted({k for r in reports for k in r.semantic} - set(TABLE_COLUMNS))
    rows: List[Dict[str, Any]] = []
    for mode in sorted({r.mode for r in reports}):
        group = [r for r in reports if r.mode == mode]
        row: Dict[str, Any] = {"method": mode, "runs": len(group)}
        row["mse"] = _mean([r.mse for r in group])
        row["psnr"] = _mean([r.psnr for r in group])
        row["perceptual"] = _mean([r.perceptual for r in group])
        for key in ("detection_rate", "similarity", *semantic_keys):
            row[key] = _mean([r.semantic.get(key) for r in group])
        rows.append(row)

    intra = {"method": "intra-user", "runs": len(reports)}
    for key in ("mse", "psnr", "perceptual", "similarity"):
        intra[key] = _mean([r.intra_user_reference.get(key) for r in reports])
    rows.append(intra)

    original = {"method": "original batch", "runs": len(reports)}
    for key in ("detection_rate", *semantic_keys):
        original[key] = _mean([r.original_reference.get(key) for r in reports])
    rows.append(original)
    return rows


def snapshot_similarity(
    snapshots: Sequence[Tuple[int, torch.Tensor]],
    originals: torch.Tensor,
    adapter: SemanticAdapter,
) -> List[Dict[str, float]]:
    """Similaridade media de cada snapshot com todas as imagens originais."""
    emb_orig = adapter.embed(originals)
    trace = []
    for step, images in snapshots:
        dist = _pair_distances(adapter.embed(images), emb_orig)
        trace.append({"step": int(step), "similarity": float(1.0 - dist.mean())})
    return trace
