import pytest
import torch

from src.diffula.adapters import (
    ADAPTERS,
    attribute_accuracy,
    default_head_sizes,
    embedding_distance,
    load_adapter,
    register_adapter,
    save_adapter,
    train_attribute_adapter,
)
from src.diffula.config import AdapterConfig
from src.diffula.corpus import attribute_cardinalities, noise_images
from src.diffula.errors import DegenerateEmbeddingWarning


@pytest.fixture
def trained_adapter(corpus, corpus_config):
    collection, _ = corpus
    head_sizes = default_head_sizes(attribute_cardinalities(corpus_config))
    return train_attribute_adapter(collection, head_sizes, AdapterConfig(epochs=2, batch_size=8, embed_dim=8))


def test_heads_follow_the_corpus_attributes(trained_adapter, corpus_config):
    assert trained_adapter.attributes == {"shape": 2, "palette": 3, "scale": corpus_config.scale_levels}


def test_posteriors_embeddings_and_detection(trained_adapter, corpus):
    collection, _ = corpus
    images = collection.images[:5]
    posteriors = trained_adapter.predict(images)
    for name, probs in posteriors.items():
        assert probs.shape == (5, trained_adapter.attributes[name])
        torch.testing.assert_close(probs.sum(dim=1), torch.ones(5, dtype=torch.float64))

    embedding = trained_adapter.embed(images)
    assert embedding.shape == (5, 8)
    detected = trained_adapter.detect(images)
    assert detected.dtype == torch.bool and detected.shape == (5,)

    inferred = trained_adapter.infer_attributes(images)
    assert set(inferred) == {"shape", "palette", "scale"}
    for entry in inferred.values():
        assert 0 <= entry["value"] < len(entry["scores"])


def test_single_image_and_wrong_shape(trained_adapter):
    assert trained_adapter.embed(torch.rand(3, 8, 8)).shape == (1, 8)
    with pytest.raises(ValueError):
        trained_adapter.embed(torch.rand(1, 3, 16, 16))


def test_training_is_seeded(corpus, corpus_config, trained_adapter):
    collection, _ = corpus
    head_sizes = default_head_sizes(attribute_cardinalities(corpus_config))
    again = train_attribute_adapter(collection, head_sizes, AdapterConfig(epochs=2, batch_size=8, embed_dim=8))
    torch.testing.assert_close(again.embed(collection.images), trained_adapter.embed(collection.images))
    accuracy = attribute_accuracy(again, collection)
    assert all(0.0 <= v <= 1.0 for v in accuracy.values())


def test_save_and_load(trained_adapter, tmp_path, corpus):
    collection, _ = corpus
    path = save_adapter(trained_adapter, tmp_path / "adapter.pt")
    loaded = load_adapter(path)
    assert loaded.attributes == trained_adapter.attributes
    assert loaded.detection_threshold == trained_adapter.detection_threshold
    torch.testing.assert_close(loaded.embed(collection.images), trained_adapter.embed(collection.images))

    with pytest.raises(ValueError):
        load_adapter(path, kind="deepface")
    with pytest.raises(FileNotFoundError):
        load_adapter(tmp_path / "nothing.pt")


def test_register_custom_adapter(intensity_adapter, tmp_path):
    register_adapter("intensity", lambda path: intensity_adapter)
    try:
        assert load_adapter(tmp_path / "ignored", kind="intensity") is intensity_adapter
    finally:
        ADAPTERS.pop("intensity")


def test_embedding_distance():
    a = torch.tensor([1.0, 0.0], dtype=torch.float64)
    distance, degenerate = embedding_distance(a, a)
    assert distance == pytest.approx(0.0) and not degenerate
    assert embedding_distance(a, -a)[0] == pytest.approx(2.0)
    with pytest.warns(DegenerateEmbeddingWarning):
        distance, degenerate = embedding_distance(a, torch.zeros(2, dtype=torch.float64))
    assert distance == 1.0 and degenerate


@pytest.mark.slow
def test_noise_images_are_not_detected():
    from src.diffula.config import CorpusConfig
    from src.diffula.corpus import generate_corpus

    corpus_config = CorpusConfig(num_users=30, images_per_user=20, image_shape=(3, 16, 16))
    collection, _ = generate_corpus(corpus_config)
    adapter = train_attribute_adapter(
        collection,
        default_head_sizes(attribute_cardinalities(corpus_config)),
        AdapterConfig(epochs=15),
    )
    assert float(adapter.detect(collection.images).double().mean()) >= 0.9
    assert float(adapter.detect(noise_images(100, (3, 16, 16), seed=99)).double().mean()) <= 0.1
