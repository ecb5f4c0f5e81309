import itertools
import logging
import math

import numpy as np
import pytest
import torch

from src.diffula.attacks.result import ReconstructionResult
from src.diffula.errors import DegenerateEmbeddingWarning
from src.diffula.fl_sim import UserDataset
from src.diffula.metrics import (
    MetricsReport,
    TABLE_COLUMNS,
    aggregate_reports,
    disambiguate,
    ensemble_filter,
    mse,
    mse_matrix,
    perceptual_distance,
    psnr,
    score_run,
    snapshot_similarity,
)
from tests.conftest import IntensityAdapter


def _images(n, seed=0, low=0.55, high=0.95):
    generator = torch.Generator().manual_seed(seed)
    return low + (high - low) * torch.rand((n, 3, 8, 8), generator=generator, dtype=torch.float64)


def _user(images, attributes=None):
    return UserDataset(
        user_id="user000",
        images=images,
        labels=torch.zeros(len(images), dtype=torch.long),
        attributes=attributes if attributes is not None else {"shape": 1, "scale": 2},
    )


def _result(mode, x_hat):
    return ReconstructionResult(mode=mode, x_hat_raw=x_hat, x_hat=x_hat, traces=[], snapshots=[])


def test_psnr_conventions():
    image = _images(1)[0]
    assert psnr(image, image) == math.inf
    other = image + 0.1
    assert mse(image, other) == pytest.approx(0.01)
    assert psnr(image, other) == pytest.approx(20.0)

    generator = torch.Generator().manual_seed(4)
    for _ in range(10):
        a = torch.rand((3, 4, 4), generator=generator, dtype=torch.float64)
        b = torch.rand((3, 4, 4), generator=generator, dtype=torch.float64)
        expected = 10.0 * math.log10(1.0 / float((a - b).pow(2).mean()))
        assert psnr(a, b) == pytest.approx(expected)
    with pytest.raises(ValueError):
        mse(a, b[:2])


def test_perceptual_distance(intensity_adapter):
    a, b = _images(2)
    assert perceptual_distance(a, a, intensity_adapter) == pytest.approx(0.0, abs=1e-12)
    assert 0.0 < perceptual_distance(a, b, intensity_adapter) <= 2.0


def test_perceptual_distance_flags_zero_embedding(intensity_adapter, caplog):
    a = _images(1)[0]
    blank = torch.zeros_like(a)
    with caplog.at_level(logging.WARNING, logger="src.diffula.metrics"):
        with pytest.warns(DegenerateEmbeddingWarning):
            distance = perceptual_distance(a, blank, intensity_adapter)
    assert distance == 1.0
    assert "zero embedding" in caplog.text

    caplog.clear()
    with caplog.at_level(logging.WARNING, logger="src.diffula.metrics"):
        perceptual_distance(a, a * 0.5, intensity_adapter)
    assert "zero embedding" not in caplog.text


def test_disambiguate_inverts_a_shuffle():
    originals = _images(5)
    perm = torch.tensor([3, 0, 4, 1, 2])
    assignment = disambiguate(originals, originals[perm])
    assert assignment == torch.argsort(perm).tolist()
    assert disambiguate(originals[:1], originals[:1]) == [0]


def test_disambiguate_matches_brute_force():
    rng = np.random.default_rng(0)
    for instance in range(20):
        n = int(rng.integers(2, 7))
        originals = _images(n, seed=instance)
        recons = _images(n, seed=100 + instance)
        cost = mse_matrix(originals, recons)
        best = min(sum(cost[i, p[i]] for i in range(n)) for p in itertools.permutations(range(n)))
        assignment = disambiguate(originals, recons)
        assert sorted(assignment) == list(range(n))
        assert sum(cost[i, assignment[i]] for i in range(n)) == pytest.approx(best)


def test_disambiguate_limits():
    with pytest.raises(ValueError):
        disambiguate(_images(65), _images(65))
    with pytest.raises(ValueError):
        disambiguate(_images(2), _images(3))
    with pytest.raises(ValueError):
        disambiguate(_images(2), _images(2), backend="cplex")


def test_ensemble_filter():
    images = torch.cat([_images(2), torch.zeros(1, 3, 8, 8, dtype=torch.float64)])
    kept, random_guess = ensemble_filter(images, IntensityAdapter())
    assert kept == [0, 1] and not random_guess

    kept, random_guess = ensemble_filter(images, IntensityAdapter(threshold=2.0))
    assert kept == [] and random_guess

    kept, _ = ensemble_filter(images, IntensityAdapter(threshold=-1.0))
    assert kept == [0, 1, 2]


def test_user_level_identical_batch(intensity_adapter):
    image = _images(1)[0]
    user = _user(image.expand(3, -1, -1, -1).clone())
    report = score_run(_result("diffula", image.unsqueeze(0)), user, intensity_adapter)

    assert report.mse == 0.0
    assert report.psnr == math.inf
    assert report.perceptual == pytest.approx(0.0, abs=1e-12)
    assert report.intra_user_reference["mse"] == report.mse
    assert report.intra_user_reference["psnr"] == report.psnr
    assert report.semantic["similarity"] == pytest.approx(1.0)
    assert report.semantic["detection_rate"] == 1.0
    assert report.semantic["shape_acc"] == 1.0
    assert report.assignment is None and report.ensemble_kept is None
    assert len(report.pairs) == 3


def test_sample_level_with_shuffle(intensity_adapter):
    originals = _images(4, seed=2)
    perm = torch.tensor([2, 3, 1, 0])
    user = _user(originals)
    report = score_run(_result("inverting", originals[perm]), user, intensity_adapter)

    assert report.assignment == torch.argsort(perm).tolist()
    assert report.mse == 0.0 and report.psnr == math.inf
    assert report.ensemble_kept == [0, 1, 2, 3] and not report.random_guess
    assert report.semantic["batch_detection"] == 1.0
    assert report.original_reference["detection_rate"] == 1.0
    assert report.original_reference["shape_acc"] == 1.0


def test_random_guess_uses_chance_scores():
    originals = _images(2)
    adapter = IntensityAdapter(threshold=2.0)
    report = score_run(_result("inverting", originals), _user(originals), adapter)
    assert report.random_guess
    assert report.semantic["similarity"] == 0.0
    assert report.semantic["shape_acc"] == pytest.approx(0.5)
    assert report.semantic["detection_rate"] == 0.0


def test_score_run_rejects_wrong_resolution(intensity_adapter):
    with pytest.raises(ValueError):
        score_run(_result("diffula", _images(1)[:, :, :4, :4]), _user(_images(2)), intensity_adapter)


def test_report_schema_round_trip(intensity_adapter):
    originals = _images(2)
    report = score_run(_result("inverting", originals), _user(originals), intensity_adapter)
    data = report.to_dict()
    assert {"mode", "user_id", "mse", "psnr", "perceptual", "semantic", "pairs"} <= set(data)
    assert MetricsReport.from_dict(data) == report


def test_aggregate_reports(intensity_adapter):
    originals = _images(3, seed=5)
    user = _user(originals)
    reports = [
        score_run(_result("diffula", originals[:1] * 0.9), user, intensity_adapter),
        score_run(_result("diffula", originals[1:2] * 0.9), user, intensity_adapter),
        score_run(_result("inverting", originals.flip(0)), user, intensity_adapter),
    ]
    rows = aggregate_reports(reports)
    assert [row["method"] for row in rows] == ["diffula", "inverting", "intra-user", "original batch"]
    diffula = rows[0]
    assert diffula["runs"] == 2
    assert diffula["mse"] == pytest.approx((reports[0].mse + reports[1].mse) / 2)
    for column in TABLE_COLUMNS:
        assert column in diffula
    assert rows[1]["psnr"] == math.inf
    with pytest.raises(ValueError):
        aggregate_reports([])


def test_snapshot_similarity(intensity_adapter):
    originals = _images(2)
    snapshots = [(0, originals[:1]), (10, originals[1:])]
    trace = snapshot_similarity(snapshots, originals, intensity_adapter)
    assert [t["step"] for t in trace] == [0, 10]
    assert all(0.0 < t["similarity"] <= 1.0 + 1e-12 for t in trace)
