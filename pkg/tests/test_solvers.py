import numpy as np
import pytest

from src.diffula.solvers import is_gurobi_available, is_scip_available, solve_assignment


@pytest.fixture
def cost():
    # otimo: 0->1, 1->2, 2->0 com custo 1 + 2 + 1 = 4
    return np.array([
        [5.0, 1.0, 9.0],
        [7.0, 6.0, 2.0],
        [1.0, 8.0, 4.0],
    ])


def _check_solution(solution, cost):
    assert solution["assignment"] == [1, 2, 0]
    assert solution["objective_value"] == pytest.approx(4.0)
    assert solution["processing_time"] >= 0.0
    assert sorted(solution["assignment"]) == list(range(len(cost)))


def test_scipy_backend(cost):
    solution = solve_assignment(cost)
    _check_solution(solution, cost)
    assert solution["solver_name"] == "SciPy"


def test_unknown_backend(cost):
    with pytest.raises(ValueError):
        solve_assignment(cost, backend="cplex")


@pytest.mark.skipif(not is_scip_available(), reason="pyscipopt not installed")
def test_scip_backend_agrees_with_scipy(cost):
    _check_solution(solve_assignment(cost, backend="scip"), cost)
    rng = np.random.default_rng(1)
    for _ in range(5):
        random_cost = rng.random((6, 6))
        expected = solve_assignment(random_cost)["objective_value"]
        assert solve_assignment(random_cost, backend="scip")["objective_value"] == pytest.approx(expected, abs=1e-6)


@pytest.mark.skipif(not is_gurobi_available(), reason="gurobipy not installed or unlicensed")
def test_gurobi_backend(cost):
    _check_solution(solve_assignment(cost, backend="gurobi"), cost)


@pytest.mark.skipif(is_scip_available(), reason="pyscipopt installed")
def test_missing_backend_is_reported(cost):
    with pytest.raises(RuntimeError):
        solve_assignment(cost, backend="scip")
