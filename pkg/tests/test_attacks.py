from dataclasses import replace

import pytest
import torch
from torch import nn

from src.diffula.attacks import load_result, measure_step_cost, run_diffula, run_inverting, save_result
from src.diffula.diffusion import DiffusionModel
from src.diffula.errors import AttackDivergedError
from src.diffula.fl_sim import capture_round, private_batch
from src.diffula.labels import LabelEstimate, recover_labels


class NaNNet(nn.Module):
    def __init__(self) -> None:
        super().__init__()
        self.dummy = nn.Parameter(torch.zeros(()))

    def forward(self, x, t):
        return x * float("nan") + self.dummy


def _capture(victim, user, batch_size=2, seed=0):
    capture = capture_round(victim, user, batch_size, seed=seed, known_labels=True)
    labels = recover_labels(capture, victim, mode="provided")
    return capture, labels


def test_single_step_run(tiny_victim, toy_prior, attack_config, users, intensity_adapter):
    capture, labels = _capture(tiny_victim, users[0])
    cfg = replace(attack_config, steps=1)
    result = run_diffula(capture, tiny_victim, toy_prior, labels, cfg, adapter=intensity_adapter)

    assert result.mode == "diffula" and result.is_user_level
    assert len(result.traces) == 1
    assert result.x_hat.shape == (1, 3, 8, 8)
    assert result.x_hat_raw.shape == (1, 3, 8, 8)
    assert result.search_dim == 3 * 8 * 8
    assert [step for step, _ in result.snapshots] == [0, 1]
    assert float(result.x_hat.min()) >= 0.0 and float(result.x_hat.max()) <= 1.0
    assert set(result.h_c_hat) == {"shape"}
    assert result.metadata["batch_size"] == 2


def test_attack_is_deterministic(tiny_victim, toy_prior, attack_config, users):
    capture, labels = _capture(tiny_victim, users[1])
    a = run_diffula(capture, tiny_victim, toy_prior, labels, attack_config)
    b = run_diffula(capture, tiny_victim, toy_prior, labels, attack_config)
    assert torch.equal(a.x_hat, b.x_hat)
    assert a.trace_column("gm_loss") == b.trace_column("gm_loss")
    assert [s for s, _ in a.snapshots] == [0, 2, 3]


def test_matching_term_is_clipped_to_prior(tiny_victim, toy_prior, attack_config, users):
    capture, labels = _capture(tiny_victim, users[0])
    result = run_diffula(capture, tiny_victim, toy_prior, labels, replace(attack_config, steps=5))
    for trace in result.traces:
        assert trace.prior_norm > 0.0
        assert trace.clipped_norm <= trace.zeta * trace.prior_norm * (1 + 1e-6)
        assert trace.clipped_norm <= trace.gm_norm * (1 + 1e-6)
        assert 10 <= trace.tau <= 20


def test_updates_replay(tiny_victim, toy_prior, attack_config, users):
    # setup test problem
    # ------------------------------------------------------------------
    capture, labels = _capture(tiny_victim, users[2])
    cfg = replace(attack_config, steps=4, keep_updates=True)
    result = run_diffula(capture, tiny_victim, toy_prior, labels, cfg)

    assert len(result.updates) == 4
    for current, following in zip(result.updates, result.updates[1:]):
        expected = -cfg.lr * (current["g_p"] + current["g_gm"])
        torch.testing.assert_close(current["update"], expected)
        torch.testing.assert_close(following["x0"], current["x0"] + current["update"])


def test_search_dimension_does_not_grow_with_batch(tiny_victim, toy_prior, attack_config, users):
    costs = []
    for batch_size in (1, 2, 4):
        capture, labels = _capture(tiny_victim, users[0], batch_size=batch_size)
        costs.append(measure_step_cost(capture, tiny_victim, toy_prior, labels, attack_config, steps=2))
    assert {c["search_dim"] for c in costs} == {192}
    assert all(c["state_shape"] == [3, 8, 8] for c in costs)
    assert [c["batch_size"] for c in costs] == [1, 2, 4]
    assert all(c["seconds_per_step"] > 0 for c in costs)


def test_prior_can_be_disabled(tiny_victim, toy_prior, attack_config, users):
    capture, labels = _capture(tiny_victim, users[0])
    result = run_diffula(capture, tiny_victim, toy_prior, labels, replace(attack_config, use_prior=False))
    assert all(t.prior_norm == 0.0 and not t.clipped for t in result.traces)
    assert result.metadata["use_prior"] is False


def test_zeta_indexed_by_timestep(tiny_victim, toy_prior, attack_config, users):
    capture, labels = _capture(tiny_victim, users[0])
    cfg = replace(attack_config, steps=4, zeta_indexing="timestep")
    result = run_diffula(capture, tiny_victim, toy_prior, labels, cfg)
    assert all(1.0 - 1e-9 <= t.zeta <= 1.5 + 1e-9 for t in result.traces)


def test_layer_weights_are_recorded(tiny_victim, toy_prior, attack_config, users):
    capture, labels = _capture(tiny_victim, users[0])
    result = run_diffula(capture, tiny_victim, toy_prior, labels, attack_config, record_weights=True)
    for trace in result.traces:
        assert len(trace.layer_weights) == len(tiny_victim.layers)
    assert result.traces[-1].layer_weights == pytest.approx([1.0] * len(tiny_victim.layers))


def test_bad_inputs_are_rejected(tiny_victim, toy_prior, attack_config, users):
    capture, labels = _capture(tiny_victim, users[0], batch_size=1)
    wrong = LabelEstimate(multiset={0: 1, 1: 1}, confidence={0: 1.0, 1: 1.0}, method="provided")
    with pytest.raises(ValueError):
        run_diffula(capture, tiny_victim, toy_prior, wrong, attack_config)
    with pytest.raises(ValueError):
        run_diffula(capture, tiny_victim, toy_prior, labels, replace(attack_config, t_star=50))
    with pytest.raises(ValueError):
        run_diffula(capture, tiny_victim, toy_prior, labels, replace(attack_config, time_start=40))


def test_non_finite_prior_stops_the_attack(tiny_victim, toy_prior, attack_config, users):
    capture, labels = _capture(tiny_victim, users[0])
    broken = DiffusionModel(toy_prior.schedule, NaNNet(), toy_prior.image_shape)
    with pytest.raises(AttackDivergedError) as excinfo:
        run_diffula(capture, tiny_victim, broken, labels, attack_config)
    assert excinfo.value.module == "attack"
    assert excinfo.value.step == 0
    assert excinfo.value.last_snapshot.shape == (1, 3, 8, 8)


def test_inverting_true_batch_is_a_fixed_point(tiny_victim, attack_config, users):
    user = users[0]
    capture, labels = _capture(tiny_victim, user, batch_size=1)
    truth = private_batch(user, capture)
    cfg = replace(attack_config, mode="inverting", distance="euclidean", tv_weight=0.0, optimizer="sgd", steps=3)
    result = run_inverting(capture, tiny_victim, labels, cfg, init=truth)

    assert all(t.gm_loss <= 1e-10 for t in result.traces)
    torch.testing.assert_close(result.x_hat, truth.to(result.x_hat.dtype), atol=1e-6, rtol=0.0)


def test_inverting_output(tiny_victim, attack_config, users, intensity_adapter):
    capture, labels = _capture(tiny_victim, users[0], batch_size=3)
    cfg = replace(attack_config, mode="inverting", steps=4)
    result = run_inverting(capture, tiny_victim, labels, cfg, adapter=intensity_adapter)

    assert result.mode == "inverting" and not result.is_user_level
    assert result.x_hat.shape == (3, 3, 8, 8)
    assert result.search_dim == 3 * 3 * 8 * 8
    assert all(t.tau is None for t in result.traces)
    assert float(result.x_hat.min()) >= 0.0 and float(result.x_hat.max()) <= 1.0
    with pytest.raises(ValueError):
        run_inverting(capture, tiny_victim, labels, cfg, init=torch.zeros(1, 3, 8, 8))


def test_result_save_and_load(tiny_victim, toy_prior, attack_config, users, tmp_path):
    capture, labels = _capture(tiny_victim, users[0])
    result = run_diffula(capture, tiny_victim, toy_prior, labels, replace(attack_config, keep_updates=True))
    path = save_result(result, tmp_path / "result.pt")
    loaded = load_result(path)

    assert loaded.mode == result.mode
    assert torch.equal(loaded.x_hat, result.x_hat)
    assert loaded.traces == result.traces
    assert [s for s, _ in loaded.snapshots] == [s for s, _ in result.snapshots]
    assert loaded.labels == result.labels
    assert loaded.updates is None
    with pytest.raises(FileNotFoundError):
        load_result(tmp_path / "missing.pt")
