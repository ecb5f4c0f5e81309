"""
Solver usando SCIP para o problema de atribuição (pareamento original/reconstrução).
"""

import logging
import time
from typing import Any, Dict, Optional

import numpy as np

# Tenta importar SCIP - se não estiver instalado, o solver não funciona
try:
    from pyscipopt import Model, quicksum
    SCIP_AVAILABLE = True
except ImportError:
    SCIP_AVAILABLE = False
    logging.getLogger(__name__).debug("SCIP not available. Install with: pip install pyscipopt")

logger = logging.getLogger(__name__)


def is_scip_available() -> bool:
    return SCIP_AVAILABLE


class SCIPAssignmentSolver:

    def __init__(self, cost_matrix: np.ndarray) -> None:
        self.cost_matrix = np.asarray(cost_matrix, dtype=np.float64)

    def solve(self) -> Optional[Dict[str, Any]]:

        if not SCIP_AVAILABLE:
            logger.error("SCIP is not available")
            return None

        try:
            model = Model("Assignment")
            model.hideOutput()

            # I = originais, J = reconstruções
            n = self.cost_matrix.shape[0]
            I = range(n)
            J = range(n)
            c = {(i, j): float(self.cost_matrix[i, j]) for i in I for j in J}

            # x[i,j] = 1 se o original i for pareado com a reconstrução j
            x = {}
            for i in I:
                for j in J:
                    x[i, j] = model.addVar(vtype="B", name=f"x_{i}_{j}")

            model.setObjective(
                quicksum(c[i, j] * x[i, j] for i in I for j in J),
                "minimize",
            )

            # 1. Cada original recebe exatamente uma reconstrução
            for i in I:
                model.addCons(quicksum(x[i, j] for j in J) == 1, name=f"row_{i}")

            # 2. Cada reconstrução é usada exatamente uma vez
            for j in J:
                model.addCons(quicksum(x[i, j] for i in I) == 1, name=f"col_{j}")

            start_time = time.time()
            model.optimize()
            elapsed_time = time.time() - start_time

            scip_status = model.getStatus()
            status_map = {
                "optimal": "otima",
                "timelimit": "factivel (limite de tempo)",
                "infeasible": "infactivel",
            }
            status_str = status_map.get(scip_status, f"desconhecido ({scip_status})")

            if scip_status != "optimal":
                logger.error(f"SCIP optimization failed with status: {scip_status}")
                return {
                    "status": status_str,
                    "processing_time": elapsed_time,
                    "solver_name": "SCIP",
                }

            assignment = [
                next(j for j in J if model.getVal(x[i, j]) > 0.5)
                for i in I
            ]
            logger.debug(f"SCIP assignment: n = {n}, objective = {model.getObjVal():.6f}, time = {elapsed_time:.4f}s")
            return {
                "assignment": assignment,
                "objective_value": float(model.getObjVal()),
                "status": status_str,
                "processing_time": elapsed_time,
                "solver_name": "SCIP",
            }

        except Exception as e:
            logger.error(f"Error solving with SCIP: {e}")
            return None
