"""
Carregamento e gravacao de dados do laboratorio.

Arquivo de configuracao (JSON), corpus sintetico em disco (PNGs + tabela de
atributos) e pequenos utilitarios de JSON.
"""

import hashlib
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

import numpy as np
import torch
from PIL import Image

from src.diffula.capture import atomic_write_bytes
from src.diffula.config import ENV_OUTPUT_DIR, ENV_SEED, RunConfig, build_run_config
from src.diffula.corpus import LabeledImageCollection
from src.diffula.errors import ConfigError

logger = logging.getLogger(__name__)

CORPUS_INDEX = "index.json"
ATTRIBUTE_TABLE = "attributes.json"


def load_json(path: Path) -> Any:
    if not path.exists():
        raise FileNotFoundError(f"JSON file not found: {path}")
    # UTF-8 explicito para nao depender da plataforma
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def save_json(path: Path, data: Any) -> None:
    text = json.dumps(data, indent=2, sort_keys=True)
    atomic_write_bytes(Path(path), (text + "\n").encode("utf-8"))


def load_run_config(
    path: Path,
    environ: Optional[Mapping[str, str]] = None,
) -> RunConfig:
    """Le o arquivo de configuracao e aplica as variaveis de ambiente.

    O arquivo deve ter a estrutura:
    {
        "output_dir": "...", "seed": 0, ...,
        "corpus": {...}, "victim": {...}, "capture": {...},
        "prior": {...}, "adapter": {...}, "attack": {...}, "eval": {...}
    }
    """
    raw = load_json(Path(path))
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top-level value must be an object")

    environ = os.environ if environ is None else environ
    if environ.get(ENV_SEED):
        try:
            raw["seed"] = int(environ[ENV_SEED])
        except ValueError as e:
            raise ConfigError(f"{ENV_SEED} must be an integer") from e
    if environ.get(ENV_OUTPUT_DIR):
        raw["output_dir"] = environ[ENV_OUTPUT_DIR]

    config = build_run_config(raw)
    logger.info(f"Loaded run config from {path}")
    return config


def save_corpus(
    collection: LabeledImageCollection,
    table: Dict[str, Dict[str, int]],
    directory: Path,
) -> Path:
    """Grava cada imagem como PNG 8-bit e os metadados em JSON."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    index: List[Dict[str, Any]] = []
    counters: Dict[str, int] = {}
    for i in range(len(collection)):
        user_id = collection.user_ids[i]
        n = counters.get(user_id, 0)
        counters[user_id] = n + 1
        relative = f"{user_id}/{n:03d}.png"
        _save_png(collection.images[i], directory / relative)
        index.append({"file": relative, "user_id": user_id, "label": int(collection.labels[i])})

    save_json(directory / CORPUS_INDEX, index)
    save_json(directory / ATTRIBUTE_TABLE, table)

    logger.info(f"Saved {len(collection)} images of {len(table)} users to {directory}")
    return directory


def load_corpus(directory: Path) -> Tuple[LabeledImageCollection, Dict[str, Dict[str, int]]]:
    directory = Path(directory)
    index = load_json(directory / CORPUS_INDEX)
    table = load_json(directory / ATTRIBUTE_TABLE)

    images = [_load_png(directory / entry["file"]) for entry in index]
    collection = LabeledImageCollection(
        images=torch.stack(images),
        labels=torch.tensor([entry["label"] for entry in index], dtype=torch.long),
        user_ids=[entry["user_id"] for entry in index],
        attributes=[dict(table[entry["user_id"]]) for entry in index],
    )

    logger.info(f"Loaded {len(collection)} images of {len(table)} users from {directory}")
    return collection, table


def quantize(images: torch.Tensor) -> torch.Tensor:
    """Mesma quantizacao de 8 bits usada pelos PNGs."""
    return torch.round(images.clamp(0.0, 1.0) * 255.0) / 255.0


def to_uint8(image: torch.Tensor) -> np.ndarray:
    """(C, H, W) em [0, 1] -> array HxW ou HxWxC uint8."""
    array = np.round(image.detach().cpu().clamp(0.0, 1.0).numpy() * 255.0).astype(np.uint8)
    if array.shape[0] == 1:
        return array[0]
    return np.transpose(array, (1, 2, 0))


def _save_png(image: torch.Tensor, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(image)).save(path, format="PNG")


def _load_png(path: Path) -> torch.Tensor:
    if not path.exists():
        raise FileNotFoundError(f"Image file not found: {path}")
    with Image.open(path) as img:
        array = np.asarray(img, dtype=np.float32) / 255.0
    if array.ndim == 2:
        array = array[None]
    else:
        array = np.transpose(array, (2, 0, 1))
    return torch.from_numpy(np.ascontiguousarray(array))


def tree_hash(directory: Path) -> str:
    """Hash SHA-256 de todos os arquivos (caminho relativo + conteudo)."""
    directory = Path(directory)
    digest = hashlib.sha256()
    for path in sorted(p for p in directory.rglob("*") if p.is_file()):
        digest.update(path.relative_to(directory).as_posix().encode("utf-8"))
        digest.update(path.read_bytes())
    return digest.hexdigest()


def file_hash(path: Union[str, Path]) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
