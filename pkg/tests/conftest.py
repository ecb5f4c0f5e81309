import json
from pathlib import Path
from typing import Dict

import pytest
import torch
from torch import nn

from src.diffula.adapters import SemanticAdapter
from src.diffula.config import AttackConfig, AugmentSpec, CorpusConfig, ModelSpec, PriorConfig
from src.diffula.corpus import generate_corpus
from src.diffula.diffusion import DiffusionModel, build_prior, to_model_range, train_toy
from src.diffula.fl_sim import partition_by_user
from src.diffula.victim import build_victim

DATA_DIR = Path(__file__).parent / "data"
SMOKE_CONFIG = Path(__file__).parent.parent / "configs" / "smoke.json"


class IntensityAdapter(SemanticAdapter):
    """Adaptador deterministico para os testes de avaliacao.

    embed = pixels achatados; "shape" = brilho medio acima de 0.5;
    detect = brilho medio acima do limiar.
    """

    name = "intensity"

    def __init__(self, threshold: float = 0.1) -> None:
        self.threshold = threshold

    @property
    def attributes(self) -> Dict[str, int]:
        return {"shape": 2}

    def predict(self, images: torch.Tensor) -> Dict[str, torch.Tensor]:
        bright = images.to(torch.float64).flatten(1).mean(dim=1)
        p1 = (bright > 0.5).to(torch.float64) * 0.8 + 0.1
        return {"shape": torch.stack([1.0 - p1, p1], dim=1)}

    def embed(self, images: torch.Tensor) -> torch.Tensor:
        return images.to(torch.float64).flatten(1)

    def detect(self, images: torch.Tensor) -> torch.Tensor:
        return images.to(torch.float64).flatten(1).mean(dim=1) > self.threshold


@pytest.fixture
def intensity_adapter():
    return IntensityAdapter()


@pytest.fixture
def tiny_spec():
    return ModelSpec("small-cnn", (3, 8, 8), 2, seed=0, width=2, hidden=8)


@pytest.fixture
def tiny_victim(tiny_spec):
    return build_victim(tiny_spec)


@pytest.fixture
def corpus_config():
    return CorpusConfig(
        num_users=4,
        images_per_user=6,
        image_shape=(3, 8, 8),
        min_images=2,
        max_users=None,
        seed=0,
    )


@pytest.fixture
def corpus(corpus_config):
    collection, table = generate_corpus(corpus_config)
    return collection, table


@pytest.fixture
def users(corpus):
    collection, _ = corpus
    return partition_by_user(collection)


@pytest.fixture
def prior_config():
    return PriorConfig(timesteps=20, image_shape=(3, 8, 8), base_channels=4, epochs=1, batch_size=8)


@pytest.fixture
def toy_prior(prior_config) -> DiffusionModel:
    """Prior nao treinado com a convolucao de saida reinicializada (gradiente nao nulo)."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(3)
        model = build_prior(prior_config)
        nn.init.normal_(model.eps_net.out_conv.weight, std=0.05)
    return model


@pytest.fixture(scope="session")
def trained_prior() -> DiffusionModel:
    """Prior toy treinado no corpus 8x8 com T=200 (so os testes lentos usam)."""
    collection, _ = generate_corpus(
        CorpusConfig(num_users=40, images_per_user=20, image_shape=(3, 8, 8), min_images=1, seed=11),
    )
    config = PriorConfig(timesteps=200, image_shape=(3, 8, 8), base_channels=8, epochs=40, batch_size=32)
    return train_toy(to_model_range(collection.images), config)


@pytest.fixture
def attack_config():
    return AttackConfig(
        steps=3,
        lr=0.05,
        t_star=2,
        snapshot_every=2,
        time_start=20,
        time_end=10,
        time_noise_halfwidth=0.0,
        augment=AugmentSpec.identity(),
        log_every=1,
    )


@pytest.fixture
def smoke_raw(tmp_path):
    """Configuracao de fumaca apontando para um diretorio temporario."""
    with open(SMOKE_CONFIG, "r", encoding="utf-8") as f:
        raw = json.load(f)
    raw["output_dir"] = str(tmp_path / "out")
    raw["attack"]["steps"] = 4
    raw["attack"]["snapshot_every"] = 2
    return raw


@pytest.fixture
def write_config(tmp_path):
    def _write(raw, name="config.json"):
        path = tmp_path / name
        with open(path, "w", encoding="utf-8") as f:
            json.dump(raw, f)
        return path
    return _write
