"""Solvers module for the assignment problem.

This module contains the linear assignment back ends used to pair original
and reconstructed images (SciPy by default, Gurobi and SCIP as exact MIPs).
"""

from typing import Any, Dict

import numpy as np

from src.diffula.solvers.gurobi_solver import GurobiAssignmentSolver, is_gurobi_available
from src.diffula.solvers.scip_solver import SCIPAssignmentSolver, is_scip_available
from src.diffula.solvers.scipy_solver import ScipyAssignmentSolver, is_scipy_available

_SOLVERS = {
    "scipy": (ScipyAssignmentSolver, is_scipy_available),
    "scip": (SCIPAssignmentSolver, is_scip_available),
    "gurobi": (GurobiAssignmentSolver, is_gurobi_available),
}


def solve_assignment(cost_matrix: np.ndarray, backend: str = "scipy") -> Dict[str, Any]:
    """Resolve a atribuicao com o back end pedido; falha se ele nao estiver instalado."""
    if backend not in _SOLVERS:
        raise ValueError(f"unknown assignment backend {backend!r}, expected one of {sorted(_SOLVERS)}")
    solver_cls, available = _SOLVERS[backend]
    if not available():
        raise RuntimeError(f"assignment backend {backend!r} is not installed")

    solution = solver_cls(cost_matrix).solve()
    if solution is None or "assignment" not in solution:
        status = solution["status"] if solution else "error"
        raise RuntimeError(f"assignment backend {backend!r} failed ({status})")
    return solution


__all__ = [
    "GurobiAssignmentSolver",
    "SCIPAssignmentSolver",
    "ScipyAssignmentSolver",
    "is_gurobi_available",
    "is_scip_available",
    "is_scipy_available",
    "solve_assignment",
]
