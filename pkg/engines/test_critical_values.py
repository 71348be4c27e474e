import numpy as np
import pytest

from engines import critical_values
from engines.critical_values import (
    CriticalValueTable,
    StatisticForm,
    default_table,
    simulate_critical_values,
    write_table,
)
from engines.errors import ConfigError

SMALL = {"grid": 1000, "reps": 10_000}


# --------------------------
# CriticalValueTable
# --------------------------
def test_shipped_table_values():
    table = CriticalValueTable()
    assert table.lookup(1, StatisticForm.T_TYPE) == pytest.approx(6.747)
    assert table.lookup(1, StatisticForm.F_TYPE) == pytest.approx(6.747**2, rel=1e-4)


def test_missing_value_is_simulated_once(mocker):
    simulate = mocker.patch.object(critical_values, "simulate_critical_values", return_value=9.5)
    table = CriticalValueTable(path=None, fallback_grid=1000, fallback_reps=10_000, fallback_seed=3)
    assert table.lookup(3, StatisticForm.F_TYPE) == 9.5
    assert table.lookup(3, StatisticForm.F_TYPE) == 9.5
    simulate.assert_called_once_with(3, StatisticForm.F_TYPE, grid=1000, reps=10_000, seed=3, level=0.95)


def test_write_table_round_trips(tmp_path, mocker):
    mocker.patch.object(critical_values, "simulate_critical_values", side_effect=lambda q, form, *a: q + 0.25)
    path = tmp_path / "cv.tsv"
    frame = write_table(path, qs=range(1, 3), grid=1000, reps=10_000, seed=1)
    assert len(frame) == 4
    assert path.read_text(encoding="utf-8").startswith("# random-scaling critical values; seed=1")
    table = CriticalValueTable(path)
    assert table.lookup(2, StatisticForm.T_TYPE) == 2.25
    assert table.lookup(1, StatisticForm.F_TYPE) == 1.25


def test_injected_values_skip_simulation(mocker):
    simulate = mocker.patch.object(critical_values, "simulate_critical_values")
    table = CriticalValueTable(path=None, values={(4, "F_type", 0.95): 70.0})
    assert table.lookup(4, StatisticForm.F_TYPE) == 70.0
    simulate.assert_not_called()


def test_resolve_returns_keyed_values(mocker):
    mocker.patch.object(critical_values, "simulate_critical_values", return_value=12.0)
    table = CriticalValueTable()
    resolved = table.resolve([(1, StatisticForm.T_TYPE), (3, StatisticForm.F_TYPE)])
    assert resolved == {(1, "t_type", 0.95): pytest.approx(6.747), (3, "F_type", 0.95): 12.0}
    assert CriticalValueTable(path=None, values=resolved).lookup(3, StatisticForm.F_TYPE) == 12.0


def test_default_table_is_cached():
    assert default_table() is default_table()


# --------------------------
# simulate_critical_values
# --------------------------
@pytest.mark.parametrize(
    "kwargs",
    [{"q": 0}, {"grid": 999}, {"reps": 9_999}],
)
def test_simulation_parameter_validation(kwargs):
    params = {"q": 1, "statistic_form": StatisticForm.F_TYPE, **SMALL, **kwargs}
    with pytest.raises(ConfigError):
        simulate_critical_values(**params)


def test_simulation_is_deterministic():
    first = simulate_critical_values(1, StatisticForm.T_TYPE, seed=11, **SMALL)
    second = simulate_critical_values(1, StatisticForm.T_TYPE, seed=11, **SMALL)
    assert first == second


@pytest.mark.parametrize("form", list(StatisticForm))
def test_simulation_is_scale_free(form):
    plain = simulate_critical_values(2, form, seed=5, **SMALL)
    scaled = simulate_critical_values(2, form, seed=5, scale=3.0, **SMALL)
    assert scaled == pytest.approx(plain, rel=1e-10)


def test_small_simulation_is_in_the_right_range():
    value = simulate_critical_values(1, StatisticForm.T_TYPE, seed=2, **SMALL)
    assert 6.0 < value < 7.6
    assert np.isfinite(value)


@pytest.mark.slow
def test_t_value_reproduces_fixed_b_constant():
    value = simulate_critical_values(1, StatisticForm.T_TYPE, grid=10_000, reps=50_000, seed=7)
    assert 6.60 <= value <= 6.90


@pytest.mark.slow
@pytest.mark.parametrize("q", range(1, 6))
@pytest.mark.parametrize("form", list(StatisticForm))
def test_disjoint_seeds_agree(q, form):
    a = simulate_critical_values(q, form, grid=10_000, reps=50_000, seed=100)
    b = simulate_critical_values(q, form, grid=10_000, reps=50_000, seed=200)
    assert abs(a - b) < 0.1 * max(1.0, a / 10)
