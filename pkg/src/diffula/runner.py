"""
Comandos do laboratorio: corpus, treino do prior e do adaptador, captura,
ataque, relatorio e amostragem.

Cada comando recebe a configuracao ja resolvida. Artefatos compartilhados
(corpus, checkpoints) ficam em output_dir; cada ataque cria um diretorio de
execucao novo e auto-contido, e nenhum comando altera execucoes anteriores.
"""

import logging
import shutil
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import torch
import torchvision.transforms.functional as TF
from torchvision.transforms import InterpolationMode

from src.diffula.adapters import (
    SemanticAdapter,
    default_head_sizes,
    load_adapter,
    save_adapter,
    train_attribute_adapter,
)
from src.diffula.attacks import ReconstructionResult, run_diffula, run_inverting, save_result
from src.diffula.capture import GradientCapture, serialize_capture
from src.diffula.config import RunConfig
from src.diffula.corpus import (
    LabeledImageCollection,
    attribute_cardinalities,
    attribute_marginals,
    generate_corpus,
    observed_marginals,
)
from src.diffula.data_loader import file_hash, load_corpus, load_json, save_corpus, save_json, tree_hash
from src.diffula.diffusion import (
    DiffusionModel,
    load_checkpoint,
    sample,
    save_checkpoint,
    to_model_range,
    to_pixel_range,
    train_toy,
)
from src.diffula.errors import ConfigError, IncompatibleRunsError
from src.diffula.fl_sim import UserDataset, capture_round, partition_by_user, private_batch
from src.diffula.labels import recover_labels
from src.diffula.metrics import MetricsReport, aggregate_reports, score_run, snapshot_similarity
from src.diffula.utils.output import print_comparison, print_report
from src.diffula.utils.plots import MAX_GRID_COLUMNS, plot_similarity, plot_traces, save_snapshot_grid
from src.diffula.victim import VictimModel, build_victim

logger = logging.getLogger(__name__)

# Imagens de outros usuarios usadas como dados auxiliares na recuperacao de rotulos
AUXILIARY_IMAGES = 256


def corpus_dir(config: RunConfig) -> Path:
    if config.corpus.directory:
        return Path(config.corpus.directory)
    return Path(config.output_dir) / "corpus"


def prior_path(config: RunConfig) -> Path:
    return Path(config.prior.checkpoint) if config.prior.checkpoint else Path(config.output_dir) / "prior.pt"


def adapter_path(config: RunConfig) -> Path:
    return Path(config.adapter.checkpoint) if config.adapter.checkpoint else Path(config.output_dir) / "adapter.pt"


def fresh_directory(parent: Path, name: str) -> Path:
    """Cria parent/name, ou parent/name_001, ... se ja existir."""
    parent.mkdir(parents=True, exist_ok=True)
    candidate = parent / name
    suffix = 0
    while candidate.exists():
        suffix += 1
        candidate = parent / f"{name}_{suffix:03d}"
    candidate.mkdir()
    return candidate


# -------------------------------------------------------------------------
# corpus, prior e adaptador
# -------------------------------------------------------------------------

def cmd_corpus(config: RunConfig, force: bool = False) -> Path:
    directory = corpus_dir(config)
    if directory.exists() and any(directory.iterdir()):
        if not force:
            raise ConfigError(f"Corpus directory {directory} already exists (use --force to overwrite)")
        logger.warning(f"Overwriting corpus at {directory}")
        shutil.rmtree(directory)

    collection, table = generate_corpus(config.corpus)
    save_corpus(collection, table, directory)
    observed = observed_marginals(table, attribute_cardinalities(config.corpus))
    for name, expected in attribute_marginals(config.corpus).items():
        logger.info(
            f"Attribute {name}: observed {[round(float(v), 3) for v in observed[name]]}, "
            f"configured {[round(float(v), 3) for v in expected]}",
        )
    logger.info(f"Corpus hash: {tree_hash(directory)}")
    return directory


def ensure_corpus(config: RunConfig) -> Tuple[LabeledImageCollection, Dict[str, Dict[str, int]]]:
    """Carrega o corpus do disco, ou gera em memoria se ainda nao existir."""
    directory = corpus_dir(config)
    if (directory / "index.json").exists():
        return load_corpus(directory)
    logger.info(f"No corpus at {directory}; generating it in memory")
    return generate_corpus(config.corpus)


def attacked_users(config: RunConfig, collection: LabeledImageCollection) -> List[UserDataset]:
    min_images = max(config.corpus.min_images, config.capture.batch_size)
    users = partition_by_user(collection, min_images=min_images, max_users=config.corpus.max_users)
    return users[: config.capture.num_users]


def prior_images(config: RunConfig, collection: LabeledImageCollection, exclude: Sequence[str]) -> torch.Tensor:
    """Imagens de treino do prior em [-1, 1], sem os usuarios atacados quando possivel."""
    keep = [i for i, uid in enumerate(collection.user_ids) if uid not in set(exclude)]
    if not keep:
        logger.warning("Every user is attacked; training the prior on the whole corpus")
        keep = list(range(len(collection)))
    images = collection.images[torch.tensor(keep)]
    size = list(config.prior.image_shape[1:])
    if list(images.shape[-2:]) != size:
        images = TF.resize(images, size, interpolation=InterpolationMode.BILINEAR, antialias=True)
    return to_model_range(images.clamp(0.0, 1.0))


def cmd_train_prior(config: RunConfig) -> Path:
    collection, _ = ensure_corpus(config)
    exclude = [u.user_id for u in attacked_users(config, collection)]
    images = prior_images(config, collection, exclude)
    logger.info(f"Training prior on {len(images)} images of shape {tuple(images.shape[1:])}")
    model = train_toy(images, config.prior, progress=True)
    return save_checkpoint(model, prior_path(config))


def ensure_prior(config: RunConfig, collection: LabeledImageCollection, exclude: Sequence[str]) -> DiffusionModel:
    path = prior_path(config)
    if path.exists():
        return load_checkpoint(path)
    logger.info(f"No prior checkpoint at {path}; training one")
    model = train_toy(prior_images(config, collection, exclude), config.prior)
    save_checkpoint(model, path)
    return model


def cmd_train_adapter(config: RunConfig) -> Path:
    collection, _ = ensure_corpus(config)
    head_sizes = default_head_sizes(attribute_cardinalities(config.corpus))
    adapter = train_attribute_adapter(collection, head_sizes, config.adapter)
    return save_adapter(adapter, adapter_path(config))


def ensure_adapter(config: RunConfig, collection: LabeledImageCollection) -> SemanticAdapter:
    path = adapter_path(config)
    if path.exists():
        return load_adapter(path, kind=config.adapter.kind)
    logger.info(f"No adapter checkpoint at {path}; training one")
    head_sizes = default_head_sizes(attribute_cardinalities(config.corpus))
    adapter = train_attribute_adapter(collection, head_sizes, config.adapter)
    save_adapter(adapter, path)
    return adapter


# -------------------------------------------------------------------------
# captura
# -------------------------------------------------------------------------

def capture_seed(config: RunConfig, user_index: int, replicate: int) -> int:
    return config.seed * 100_003 + user_index * 101 + replicate


def cmd_capture(config: RunConfig) -> Path:
    collection, _ = ensure_corpus(config)
    model = build_victim(config.victim)
    users = attacked_users(config, collection)
    directory = fresh_directory(Path(config.output_dir) / "captures", f"B{config.capture.batch_size}_s{config.seed}")

    save_json(directory / "victim_manifest.json", model.manifest())
    index = []
    for u, user in enumerate(users):
        for r in range(config.capture.replicates):
            capture = capture_round(
                model,
                user,
                config.capture.batch_size,
                seed=capture_seed(config, u, r),
                known_labels=config.capture.known_labels,
            )
            path = serialize_capture(capture, directory / f"{user.user_id}_r{r}.gcap")
            index.append({"user_id": user.user_id, "replicate": r, "file": path.name, "sha256": file_hash(path)})
    save_json(directory / "captures.json", index)

    logger.info(f"Captured {len(index)} rounds into {directory}")
    return directory


# -------------------------------------------------------------------------
# ataque
# -------------------------------------------------------------------------

@dataclass
class AttackJob:
    user_index: int
    replicate: int
    user: UserDataset

    @property
    def name(self) -> str:
        return f"{self.user.user_id}_r{self.replicate}"


@dataclass
class AttackContext:
    """Estado somente-leitura compartilhado entre os workers."""

    config: RunConfig
    model: VictimModel
    prior: Optional[DiffusionModel]
    adapter: SemanticAdapter
    collection: LabeledImageCollection


def _auxiliary_images(collection: LabeledImageCollection, user_id: str) -> Optional[torch.Tensor]:
    keep = [i for i, uid in enumerate(collection.user_ids) if uid != user_id][:AUXILIARY_IMAGES]
    return collection.images[torch.tensor(keep)] if keep else None


def _run_job(ctx: AttackContext, job: AttackJob, run_dir: Path) -> MetricsReport:
    config = ctx.config
    job_dir = run_dir / job.name
    job_dir.mkdir()

    seed = capture_seed(config, job.user_index, job.replicate)
    capture: GradientCapture = capture_round(
        ctx.model,
        job.user,
        config.capture.batch_size,
        seed=seed,
        known_labels=config.capture.known_labels,
    )
    serialize_capture(capture, job_dir / "capture.gcap")

    labels = recover_labels(
        capture,
        ctx.model,
        mode=config.capture.label_mode,
        auxiliary=_auxiliary_images(ctx.collection, job.user.user_id),
        seed=seed,
    )
    attack_cfg = replace(config.attack, seed=config.attack.seed + job.replicate)
    record_weights = config.trace_level == "debug"

    if attack_cfg.mode == "diffula":
        result = run_diffula(capture, ctx.model, ctx.prior, labels, attack_cfg, ctx.adapter, record_weights)
    else:
        result = run_inverting(capture, ctx.model, labels, attack_cfg, ctx.adapter)

    originals = private_batch(job.user, capture)
    report = score_run(result, job.user, ctx.adapter, config.eval, originals=originals)
    _write_job(job_dir, result, report, snapshot_similarity(result.snapshots, originals, ctx.adapter), labels.to_dict())
    return report


def _write_job(
    job_dir: Path,
    result: ReconstructionResult,
    report: MetricsReport,
    similarity: List[Dict[str, float]],
    labels: Dict[str, Any],
) -> None:
    save_result(result, job_dir / "result.pt")
    save_json(job_dir / "traces.json", result.traces_to_dict())
    save_json(job_dir / "metrics.json", report.to_dict())
    save_json(job_dir / "similarity.json", similarity)
    save_json(job_dir / "labels.json", labels)
    save_snapshot_grid(result.snapshots, job_dir / "snapshots.png")


def _input_hashes(config: RunConfig, model: VictimModel, collection: LabeledImageCollection) -> Dict[str, Any]:
    directory = corpus_dir(config)
    hashes: Dict[str, Any] = {
        "corpus": tree_hash(directory) if directory.exists() else None,
        "corpus_config": asdict(config.corpus),
        "corpus_images": int(len(collection)),
        "victim_weights": model.weights_hash(),
        "adapter": file_hash(adapter_path(config)) if adapter_path(config).exists() else None,
    }
    if config.attack.mode == "diffula" and prior_path(config).exists():
        hashes["prior"] = file_hash(prior_path(config))
    return hashes


def cmd_attack(config: RunConfig) -> Path:
    start_time = time.time()
    collection, _ = ensure_corpus(config)
    model = build_victim(config.victim)
    users = attacked_users(config, collection)
    exclude = [u.user_id for u in users]

    prior = ensure_prior(config, collection, exclude) if config.attack.mode == "diffula" else None
    adapter = ensure_adapter(config, collection)

    name = config.run_name or f"{config.attack.mode}_B{config.capture.batch_size}_s{config.seed}"
    run_dir = fresh_directory(Path(config.output_dir) / "runs", name)
    save_json(run_dir / "config.json", config.to_dict())
    save_json(run_dir / "victim_manifest.json", model.manifest())
    save_json(run_dir / "inputs.json", _input_hashes(config, model, collection))

    ctx = AttackContext(config=config, model=model, prior=prior, adapter=adapter, collection=collection)
    jobs = [
        AttackJob(user_index=u, replicate=r, user=user)
        for u, user in enumerate(users)
        for r in range(config.capture.replicates)
    ]
    logger.info(f"Running {len(jobs)} {config.attack.mode} attacks with {config.workers} workers into {run_dir}")

    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        futures = [pool.submit(_run_job, ctx, job, run_dir) for job in jobs]
        reports = [future.result() for future in futures]

    rows = aggregate_reports(reports)
    elapsed = time.time() - start_time
    save_json(run_dir / "summary.json", {
        "mode": config.attack.mode,
        "jobs": [job.name for job in jobs],
        "table": rows,
        "wall_time": elapsed,
        "steps": config.attack.steps,
    })

    for job, report in zip(jobs, reports):
        print_report(report.to_dict(), job.name)
    print_comparison(rows)
    logger.info(f"Attack run finished in {elapsed:.1f}s ({config.attack.steps} steps per attack)")
    return run_dir


# -------------------------------------------------------------------------
# relatorio e amostragem
# -------------------------------------------------------------------------

def _load_run(run_dir: Path) -> Dict[str, Any]:
    summary = load_json(run_dir / "summary.json")
    inputs = load_json(run_dir / "inputs.json")
    jobs = []
    for name in summary["jobs"]:
        job_dir = run_dir / name
        jobs.append({
            "name": f"{run_dir.name}/{name}",
            "report": MetricsReport.from_dict(load_json(job_dir / "metrics.json")),
            "traces": load_json(job_dir / "traces.json"),
            "similarity": load_json(job_dir / "similarity.json"),
        })
    return {"dir": run_dir, "inputs": inputs, "jobs": jobs}


def _corpus_key(inputs: Dict[str, Any]) -> Any:
    return inputs.get("corpus") or inputs.get("corpus_config")


def cmd_report(config: RunConfig, run_dirs: Sequence[Path]) -> Dict[str, Any]:
    """Tabela agregada e graficos a partir de execucoes ja gravadas."""
    if not run_dirs:
        raise ConfigError("report needs at least one run directory")
    runs = [_load_run(Path(d)) for d in run_dirs]

    corpus = _corpus_key(runs[0]["inputs"])
    for run in runs[1:]:
        if _corpus_key(run["inputs"]) != corpus:
            raise IncompatibleRunsError(f"{run['dir']} was produced on a different corpus than {runs[0]['dir']}")

    reports = [job["report"] for run in runs for job in run["jobs"]]
    rows = aggregate_reports(reports)
    print_comparison(rows)

    out_dir = fresh_directory(Path(config.output_dir) / "reports", "report")
    save_json(out_dir / "table.json", {"runs": [str(r["dir"]) for r in runs], "rows": rows})
    traces = {job["name"]: job["traces"] for run in runs for job in run["jobs"]}
    similarity = {job["name"]: job["similarity"] for run in runs for job in run["jobs"]}
    save_json(out_dir / "traces.json", traces)
    plot_traces(traces, out_dir / "traces.png")
    plot_similarity(similarity, out_dir / "similarity.png")

    logger.info(f"Report for {len(runs)} runs written to {out_dir}")
    return {"rows": rows, "directory": out_dir}


def cmd_sample(config: RunConfig, count: int = 16) -> Path:
    model = load_checkpoint(prior_path(config))
    images = to_pixel_range(sample(model, count, config.seed)).clamp(0.0, 1.0)
    out_dir = fresh_directory(Path(config.output_dir) / "samples", f"s{config.seed}")
    rows = [(i, images[i:i + MAX_GRID_COLUMNS]) for i in range(0, count, MAX_GRID_COLUMNS)]
    path = save_snapshot_grid(rows, out_dir / "samples.png")
    logger.info(f"Saved {count} prior samples to {path}")
    return path
