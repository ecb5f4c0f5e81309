import numpy as np
import pytest

from src.diffula.config import ScheduleSpec
from src.diffula.schedules import progress, time_at, time_envelope, time_sequence, zeta_at, zeta_at_timestep


def _time_spec(steps=100, noise=0.0, seed=0):
    return ScheduleSpec(
        kind="time_cosine_linear",
        start_value=1000.0,
        end_value=500.0,
        total_steps=steps,
        noise_halfwidth=noise,
        seed=seed,
    )


def _zeta_spec(steps=5):
    return ScheduleSpec(kind="zeta_cosine_ramp", start_value=1.5, end_value=1.0, total_steps=steps)


def test_time_endpoints():
    spec = _time_spec()
    assert time_at(spec, 0) == 1000
    assert time_at(spec, 99) == 500


def test_time_envelope_stays_between_endpoints():
    spec = _time_spec()
    values = [time_envelope(spec, s) for s in np.linspace(0.0, 1.0, 201)]
    assert min(values) >= 500.0 - 1e-9
    assert max(values) <= 1000.0 + 1e-9


@pytest.mark.parametrize("s", [0.0, 0.1, 1.0 / 6.0, 0.25, 1.0 / 3.0, 0.5, 0.8, 1.0])
def test_time_envelope_closed_form(s):
    expected = 500.0 + 500.0 * (1.0 - s) * (0.5 + 0.5 * np.cos(2.0 * np.pi * 3 * s))
    assert time_envelope(_time_spec(), s) == pytest.approx(expected)


def test_time_envelope_troughs_and_shallow_depth():
    full = _time_spec()
    # no vale da primeira ondulacao o envelope toca o valor final
    assert time_envelope(full, 1.0 / 6.0) == pytest.approx(500.0)

    shallow = ScheduleSpec(
        kind="time_cosine_linear",
        start_value=1000.0,
        end_value=500.0,
        total_steps=100,
        modulation_depth=0.5,
    )
    linear = 500.0 * (1.0 - 1.0 / 6.0)
    assert time_envelope(shallow, 1.0 / 6.0) == pytest.approx(500.0 + 0.5 * linear)
    assert time_envelope(shallow, 1.0 / 3.0) == pytest.approx(500.0 + 500.0 * (2.0 / 3.0))


def test_noisy_schedule_is_clamped_and_seeded():
    spec = _time_spec(noise=25.0, seed=4)
    taus = time_sequence(spec)
    assert taus.dtype == np.int64
    assert taus.min() >= 500 and taus.max() <= 1000
    np.testing.assert_array_equal(taus, time_sequence(spec))
    assert not np.array_equal(taus, time_sequence(_time_spec(noise=25.0, seed=5)))
    # ordem de avaliacao nao muda tau_i
    assert time_at(spec, 37) == taus[37]


def test_time_noise_band():
    spec = _time_spec(noise=25.0, seed=1)
    clean = _time_spec()
    for step in range(1, 99):
        assert abs(time_at(spec, step) - time_envelope(clean, progress(step, 100))) <= 25.5


def test_zeta_endpoints_and_midpoint():
    spec = _zeta_spec(steps=5)
    assert zeta_at(spec, 0) == pytest.approx(1.5)
    assert zeta_at(spec, 4) == pytest.approx(1.0)
    assert zeta_at(spec, 2) == pytest.approx(1.25)
    values = [zeta_at(spec, i) for i in range(5)]
    assert all(a >= b for a, b in zip(values, values[1:]))


def test_zeta_indexed_by_timestep():
    time_spec = _time_spec()
    zeta_spec = _zeta_spec(steps=100)
    assert zeta_at_timestep(zeta_spec, time_spec, 1000) == pytest.approx(1.5)
    assert zeta_at_timestep(zeta_spec, time_spec, 500) == pytest.approx(1.0)
    assert zeta_at_timestep(zeta_spec, time_spec, 750) == pytest.approx(1.25)


def test_single_step_schedules():
    assert progress(0, 1) == 0.0
    assert time_at(_time_spec(steps=1), 0) == 1000
    assert zeta_at(_zeta_spec(steps=1), 0) == pytest.approx(1.5)


def test_wrong_kind_and_range():
    with pytest.raises(ValueError):
        time_at(_zeta_spec(), 0)
    with pytest.raises(ValueError):
        zeta_at(_time_spec(), 0)
    with pytest.raises(ValueError):
        progress(5, 5)
