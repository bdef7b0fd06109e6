"""Integrality-gap labels, primal gap and the line-oriented solution file."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from ..mipmodel import MipInstance
from .bnb import EXHAUSTIVE_MAX_VARS, MipSolution, solve_exhaustive, solve_mip
from .simplex import solve_lp

log = logging.getLogger(__name__)

PRIMAL_GAP_EPS = 1e-10


@dataclass(frozen=True)
class GapLabel:
    name: str
    z_lp: float
    z_incumbent: float
    label: float
    status: str


def integrality_gap_label(instance: MipInstance, time_limit: float | None = None,
                          node_limit: int | None = None, exhaustive: bool = False) -> GapLabel | None:
    """``z_incumbent / z_LP`` at the limit; ``None`` (with a warning) when unavailable."""
    lp = solve_lp(instance)
    if not lp.is_optimal:
        log.warning("%s: LP relaxation %s; no gap label", instance.name, lp.status)
        return None
    if abs(lp.objective) < 1e-12:
        log.warning("%s: z_LP = 0; gap ratio undefined", instance.name)
        return None
    if exhaustive and np.all(instance.binary_mask) and instance.n <= EXHAUSTIVE_MAX_VARS:
        sol = solve_exhaustive(instance)
    else:
        sol = solve_mip(instance, node_limit=node_limit, time_limit=time_limit, pool_size=1)
    if not sol.has_incumbent:
        log.warning("%s: no feasible solution within the limit; no gap label", instance.name)
        return None
    return GapLabel(instance.name, lp.objective, sol.objective, sol.objective / lp.objective, sol.status)


def primal_gap(objective: float, best_known: float) -> float:
    """``|obj - best| / max(|obj|, |best|, eps)``; 1 when the signs disagree."""
    if not (math.isfinite(objective) and math.isfinite(best_known)):
        raise ValueError("primal gap needs finite values")
    if objective == best_known:
        return 0.0
    if objective * best_known < 0:
        return 1.0
    return abs(objective - best_known) / max(abs(objective), abs(best_known), PRIMAL_GAP_EPS)


# ---------------------------------------------------------------------------
# solution file
#
#   status <status>
#   objective <value>
#   <variable name> <value>     (one line per variable)
# ---------------------------------------------------------------------------

def write_solution(solution: MipSolution, instance: MipInstance, path) -> None:
    lines = [f"status {solution.status}", f"objective {float(solution.objective)!r}"]
    if solution.values is not None:
        for var, v in zip(instance.variables, solution.values):
            lines.append(f"{var.name} {float(v)!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_solution(path, instance: MipInstance) -> MipSolution:
    status, objective = "feasible", float("nan")
    values = np.zeros(instance.n)
    seen = set()
    index = instance.variable_index()
    with open(path) as fh:
        for no, raw in enumerate(fh, 1):
            parts = raw.split()
            if not parts or parts[0].startswith("#"):
                continue
            if len(parts) != 2:
                raise ValueError(f"{path}:{no}: expected 'name value'")
            key, val = parts
            if key == "status":
                status = val
            elif key == "objective":
                objective = float(val)
            else:
                if key not in index:
                    raise ValueError(f"{path}:{no}: unknown variable {key!r}")
                values[index[key]] = float(val)
                seen.add(key)
    if not seen:
        return MipSolution(status, objective)
    if math.isnan(objective):
        objective = float(instance.c @ values)
    return MipSolution(status, objective, values)
