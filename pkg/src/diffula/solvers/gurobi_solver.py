"""
Solver usando Gurobi para o problema de atribuição (pareamento original/reconstrução).
"""

import logging
import time
from typing import Any, Dict, Optional

import numpy as np

# Tenta importar Gurobi - se não estiver instalado, o solver não funciona
try:
    import gurobipy as gp
    from gurobipy import GRB
    GUROBI_AVAILABLE = True
except ImportError:
    GUROBI_AVAILABLE = False
    logging.getLogger(__name__).debug("Gurobi not available. Install with: pip install gurobipy")

logger = logging.getLogger(__name__)


def is_gurobi_available() -> bool:
    """Check if Gurobi is available.

    Returns:
        True if Gurobi is available, False otherwise.
    """
    return GUROBI_AVAILABLE


class GurobiAssignmentSolver:
    """Gurobi-based solver for the min-cost perfect matching."""

    def __init__(self, cost_matrix: np.ndarray) -> None:
        """Initialize the Gurobi solver.

        Args:
            cost_matrix: Square matrix, cost[i, j] = MSE(original i, reconstruction j).
        """
        self.cost_matrix = np.asarray(cost_matrix, dtype=np.float64)

    def solve(self) -> Optional[Dict[str, Any]]:

        if not GUROBI_AVAILABLE:
            logger.error("Gurobi is not available")
            return None

        try:
            model = gp.Model("Assignment")
            # Desliga output do Gurobi para não poluir o console
            model.setParam("OutputFlag", 0)

            n = self.cost_matrix.shape[0]
            I = range(n)  # originais
            J = range(n)  # reconstruções

            x = model.addVars(I, J, vtype=GRB.BINARY, name="x")

            model.setObjective(
                gp.quicksum(float(self.cost_matrix[i, j]) * x[i, j] for i in I for j in J),
                GRB.MINIMIZE,
            )

            # 1. Cada original recebe exatamente uma reconstrução
            for i in I:
                model.addConstr(gp.quicksum(x[i, j] for j in J) == 1, name=f"row_{i}")

            # 2. Cada reconstrução é usada exatamente uma vez
            for j in J:
                model.addConstr(gp.quicksum(x[i, j] for i in I) == 1, name=f"col_{j}")

            start_time = time.time()
            model.optimize()
            elapsed_time = time.time() - start_time

            status_map = {
                GRB.OPTIMAL: "otima",
                GRB.TIME_LIMIT: "factivel (limite de tempo)",
                GRB.INFEASIBLE: "infactivel",
            }
            status_str = status_map.get(model.status, f"desconhecido ({model.status})")

            if model.status != GRB.OPTIMAL:
                logger.error(f"Gurobi optimization failed with status: {model.status}")
                return {
                    "status": status_str,
                    "processing_time": elapsed_time,
                    "solver_name": "Gurobi",
                }

            assignment = [next(j for j in J if x[i, j].x > 0.5) for i in I]
            logger.debug(f"Gurobi assignment: n = {n}, objective = {model.ObjVal:.6f}, time = {elapsed_time:.4f}s")
            return {
                "assignment": assignment,
                "objective_value": float(model.ObjVal),
                "status": status_str,
                "processing_time": elapsed_time,
                "solver_name": "Gurobi",
            }

        except Exception as e:
            logger.error(f"Error solving with Gurobi: {e}")
            return None
