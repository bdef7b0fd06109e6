"""Depth-first branch and bound over LP relaxations, plus exhaustive enumeration."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from ..mipmodel import MipInstance
from .simplex import INFEASIBLE, OPTIMAL, UNBOUNDED, solve_lp

log = logging.getLogger(__name__)

STATUS_OPTIMAL, STATUS_FEASIBLE, STATUS_INFEASIBLE, STATUS_LIMIT = "optimal", "feasible", "infeasible", "limit"
INT_TOL = 1e-6
EXHAUSTIVE_MAX_VARS = 30


@dataclass
class MipSolution:
    status: str
    objective: float = float("nan")
    values: np.ndarray | None = None
    pool: list[tuple[float, np.ndarray]] = field(default_factory=list)
    nodes: int = 0
    lp_objective: float = float("nan")

    @property
    def has_incumbent(self) -> bool:
        return self.values is not None


class SolutionPool:
    """Best ``size`` feasible solutions, distinct on their integer variables."""

    def __init__(self, size: int, minimize: bool, int_mask: np.ndarray):
        self.size = size
        self.sign = 1.0 if minimize else -1.0
        self.int_mask = int_mask
        self.items: list[tuple[float, np.ndarray]] = []
        self._keys: set[bytes] = set()

    def key(self, x: np.ndarray) -> bytes:
        return np.round(x[self.int_mask]).astype(np.int64).tobytes()

    def offer(self, obj: float, x: np.ndarray) -> bool:
        if self.size <= 0:
            return False
        k = self.key(x)
        if k in self._keys:
            return False
        if len(self.items) >= self.size and self.sign * obj >= self.sign * self.items[-1][0]:
            return False
        self.items.append((obj, x.copy()))
        self._keys.add(k)
        # stable sort keeps earlier finds first among ties
        self.items.sort(key=lambda t: self.sign * t[0])
        while len(self.items) > self.size:
            _, dropped = self.items.pop()
            self._keys.discard(self.key(dropped))
        return True


def _objective_is_integral(inst: MipInstance) -> bool:
    c = inst.c
    on = c != 0
    return bool(np.all(inst.integer_mask[on]) and np.all(np.abs(c[on] - np.round(c[on])) < 1e-12))


def _round_candidates(x: np.ndarray, int_mask: np.ndarray, lo, up):
    base = x.copy()
    out = []
    for mode in ("nearest", "up", "down"):
        y = base.copy()
        xi = base[int_mask]
        if mode == "nearest":
            y[int_mask] = np.round(xi)
        elif mode == "up":
            y[int_mask] = np.ceil(xi - INT_TOL)
        else:
            y[int_mask] = np.floor(xi + INT_TOL)
        out.append(np.clip(y, lo, up))
    return out


def solve_mip(instance: MipInstance, node_limit: int | None = None, time_limit: float | None = None,
              pool_size: int = 5, exhaustive: bool = False) -> MipSolution:
    """Exact MIP solve; ``exhaustive`` enumerates all assignments of a small pure-binary model."""
    if exhaustive:
        return solve_exhaustive(instance)
    minimize = instance.is_minimize
    sign = 1.0 if minimize else -1.0
    int_mask = instance.integer_mask
    pure_int = bool(np.all(int_mask))
    integral_obj = _objective_is_integral(instance)
    pool = SolutionPool(pool_size, minimize, int_mask)
    start = time.monotonic()
    best_obj = np.inf            # in minimisation form
    best_x = None
    root_lp = float("nan")
    stack = [(instance.lower.copy(), instance.upper.copy(), None)]
    nodes = 0
    limited = False

    def consider(x):
        nonlocal best_obj, best_x
        if not instance.is_feasible(x):
            return
        obj = float(instance.c @ x)
        pool.offer(obj, x)
        if sign * obj < best_obj - 1e-12:
            best_obj = sign * obj
            best_x = x.copy()

    while stack:
        if (node_limit is not None and nodes >= node_limit) or \
                (time_limit is not None and time.monotonic() - start > time_limit):
            limited = True
            break
        lo, up, warm = stack.pop()
        nodes += 1
        lp = solve_lp(instance, lo, up, warm=warm)
        if lp.status == INFEASIBLE:
            continue
        if lp.status == UNBOUNDED:
            if nodes == 1:
                log.warning("%s: LP relaxation unbounded; branch and bound cannot bound the search",
                            instance.name)
            limited = True
            continue
        if lp.status != OPTIMAL:
            limited = True
            continue
        if nodes == 1:
            root_lp = lp.objective
        bound = sign * lp.objective
        if integral_obj:
            bound = np.ceil(bound - 1e-6)
        # with a pool, a node is only useless once it cannot beat the pool's worst entry
        if pool_size <= 1:
            threshold = best_obj
        elif len(pool.items) >= pool_size:
            threshold = sign * pool.items[-1][0]
        else:
            threshold = np.inf
        if bound >= threshold - 1e-9:
            continue
        x = lp.values
        frac = np.abs(x - np.round(x))
        frac[~int_mask] = 0.0
        if frac.max() <= INT_TOL:
            y = x.copy()
            y[int_mask] = np.round(y[int_mask])
            consider(y)
            if pool_size > 1:
                # keep splitting so the subtree can still supply distinct pool entries
                free = np.flatnonzero(int_mask & (up > lo))
                if free.size:
                    j = int(free[0])
                    for a, b in ((y[j] + 1, up[j]), (lo[j], y[j] - 1), (y[j], y[j])):
                        if a <= b:
                            clo, cup = lo.copy(), up.copy()
                            clo[j], cup[j] = a, b
                            stack.append((clo, cup, lp.state))
            continue
        if pure_int:
            for cand in _round_candidates(x, int_mask, lo, up):
                consider(cand)
        j = int(np.argmax(frac))      # most fractional; first index on ties
        down_up = up.copy()
        down_up[j] = np.floor(x[j])
        up_lo = lo.copy()
        up_lo[j] = np.ceil(x[j])
        down, upc = (lo, down_up, lp.state), (up_lo, up, lp.state)
        # explore the child on the side the LP value leans to first
        if x[j] - np.floor(x[j]) >= 0.5:
            stack += [down, upc]
        else:
            stack += [upc, down]

    if best_x is None:
        status = STATUS_LIMIT if limited else STATUS_INFEASIBLE
        return MipSolution(status, nodes=nodes, lp_objective=root_lp)
    status = STATUS_LIMIT if limited else STATUS_OPTIMAL
    return MipSolution(status, float(instance.c @ best_x), best_x, list(pool.items), nodes, root_lp)


# ---------------------------------------------------------------------------
# exhaustive enumeration
# ---------------------------------------------------------------------------

def _gray_enumerate(n, c, col_ptr, row_idx, vals, lo, hi, tol):
    """Walk all 2^n binary vectors in Gray-code order; returns (best objective, best code)."""
    m = len(lo)
    act = np.zeros(m)
    viol = 0
    for i in range(m):
        if act[i] < lo[i] - tol or act[i] > hi[i] + tol:
            viol += 1
    x = np.zeros(n, dtype=np.int8)
    obj = 0.0
    best = np.inf
    best_code = -1
    if viol == 0:
        best = 0.0
        best_code = 0
    for t in range(1, 1 << n):
        j = 0
        while not (t >> j) & 1:
            j += 1
        delta = 1.0 if x[j] == 0 else -1.0
        x[j] = 1 - x[j]
        obj += delta * c[j]
        for p in range(col_ptr[j], col_ptr[j + 1]):
            i = row_idx[p]
            was = act[i] < lo[i] - tol or act[i] > hi[i] + tol
            act[i] += delta * vals[p]
            now = act[i] < lo[i] - tol or act[i] > hi[i] + tol
            if was and not now:
                viol -= 1
            elif now and not was:
                viol += 1
        if viol == 0 and obj < best - 1e-9:
            best = obj
            best_code = t ^ (t >> 1)
    return best, best_code


try:
    from numba import njit
    _gray_kernel = njit(cache=True)(_gray_enumerate)
except ImportError:  # pragma: no cover - numba is a declared dependency
    _gray_kernel = _gray_enumerate


def solve_exhaustive(instance: MipInstance) -> MipSolution:
    n = instance.n
    if not np.all(instance.binary_mask):
        raise ValueError("exhaustive mode needs a pure-binary instance")
    if n > EXHAUSTIVE_MAX_VARS:
        raise ValueError(f"exhaustive mode is limited to {EXHAUSTIVE_MAX_VARS} variables (got {n})")
    sign = 1.0 if instance.is_minimize else -1.0
    A = instance.A.tocsc()
    senses = instance.senses
    b = instance.b
    lo = np.where(senses == "<=", -np.inf, b).astype(np.float64)
    hi = np.where(senses == ">=", np.inf, b).astype(np.float64)
    tol = 1e-9 * max(1.0, float(np.abs(A.data).max()) if A.nnz else 1.0)
    best, code = _gray_kernel(n, sign * instance.c.astype(np.float64), A.indptr.astype(np.int64),
                              A.indices.astype(np.int64), A.data.astype(np.float64), lo, hi, tol)
    if code < 0:
        return MipSolution(STATUS_INFEASIBLE, nodes=1 << n)
    x = np.array([(code >> j) & 1 for j in range(n)], dtype=np.float64)
    return MipSolution(STATUS_OPTIMAL, float(instance.c @ x), x, [(float(instance.c @ x), x)], 1 << n)
