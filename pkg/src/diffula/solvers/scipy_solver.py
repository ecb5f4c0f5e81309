"""
Atribuicao linear via SciPy (Jonker-Volgenant modificado).
"""

import logging
import time
from typing import Any, Dict, Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

logger = logging.getLogger(__name__)


def is_scipy_available() -> bool:
    return True


class ScipyAssignmentSolver:
    """Resolve min sum_i cost[i, pi(i)] sobre permutacoes pi."""

    def __init__(self, cost_matrix: np.ndarray) -> None:
        self.cost_matrix = np.asarray(cost_matrix, dtype=np.float64)

    def solve(self) -> Optional[Dict[str, Any]]:
        start_time = time.time()
        rows, cols = linear_sum_assignment(self.cost_matrix)
        elapsed_time = time.time() - start_time

        assignment = [0] * len(rows)
        for r, c in zip(rows, cols):
            assignment[int(r)] = int(c)
        objective = float(self.cost_matrix[rows, cols].sum())

        logger.debug(f"SciPy assignment: n = {len(rows)}, objective = {objective:.6f}, time = {elapsed_time:.4f}s")
        return {
            "assignment": assignment,
            "objective_value": objective,
            "status": "otima",
            "processing_time": elapsed_time,
            "solver_name": "SciPy",
        }
