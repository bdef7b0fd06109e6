"""Dense bounded-variable primal simplex (two phases).

Every row gets a slack ``A_i x + s_i = b_i`` whose bounds encode the sense
(<=: s >= 0, >=: s <= 0, =: s = 0). Rows whose slack cannot absorb the
initial residual get an artificial; phase 1 drives artificials to zero,
phase 2 optimises the real objective with artificials fixed at zero.

Pricing is Dantzig's rule; after a run of degenerate pivots the solver falls
back to Bland's rule until it makes progress again.

Re-solves after a bound change (branch and bound children) start from the
parent's optimal basis, which stays dual feasible, and repair primal
feasibility with a bounded dual simplex before a primal clean-up pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..mipmodel import EQ, GE, LE, MipInstance

OPTIMAL, INFEASIBLE, UNBOUNDED, ITERATION_LIMIT = "optimal", "infeasible", "unbounded", "iteration_limit"

_PIVOT_TOL = 1e-9
_COST_TOL = 1e-9
_FEAS_TOL = 1e-7
_DEGENERATE_RUN = 30
_REFACTOR_EVERY = 100
_FINISH_REFACTOR = 40


@dataclass
class LpSolution:
    status: str
    objective: float = float("nan")
    values: np.ndarray | None = None
    iterations: int = 0
    state: "WarmStart | None" = None

    @property
    def is_optimal(self) -> bool:
        return self.status == OPTIMAL


class _Tableau:
    def __init__(self, M, b, lo, up, cost, basis, x, T=None, n_struct=None, pivots: int = 0):
        self.M = M                  # original constraint matrix (m x ntot)
        self.b = b
        self.lo = lo
        self.up = up
        self.cost = cost
        self.basis = basis          # column basic in each row
        self.x = x                  # current value of every column
        self.is_basic = np.zeros(M.shape[1], dtype=bool)
        self.is_basic[basis] = True
        if T is None:
            self.refactor()
        else:
            # slack columns of M are the identity, so T holds B^-1 in that block
            self.T = T.copy()
            m = M.shape[0]
            binv = self.T[:, n_struct:n_struct + m]
            nonbasic = ~self.is_basic
            self.x[basis] = binv @ (b - M[:, nonbasic] @ x[nonbasic])
            self.since_refactor = pivots
        self.iterations = 0

    def refactor(self):
        B = self.M[:, self.basis]
        self.T = np.linalg.solve(B, self.M)
        nonbasic = ~self.is_basic
        rhs = self.b - self.M[:, nonbasic] @ self.x[nonbasic]
        self.x[self.basis] = np.linalg.solve(B, rhs)
        self.since_refactor = 0

    def run(self, max_iter: int) -> str:
        degenerate = 0
        bland = False
        while True:
            if self.iterations >= max_iter:
                return ITERATION_LIMIT
            d = self.cost - self.cost[self.basis] @ self.T
            d[self.is_basic] = 0.0
            inc = (d < -_COST_TOL) & (self.x < self.up - _PIVOT_TOL)
            dec = (d > _COST_TOL) & (self.x > self.lo + _PIVOT_TOL)
            cand = np.flatnonzero((inc | dec) & ~self.is_basic)
            if cand.size == 0:
                return OPTIMAL
            j = int(cand[0]) if bland else int(cand[np.argmax(np.abs(d[cand]))])
            direction = 1.0 if inc[j] else -1.0
            theta, row = self._ratio(j, direction, bland)
            if not np.isfinite(theta):
                return UNBOUNDED
            self.iterations += 1
            if theta <= 1e-12:
                degenerate += 1
                if degenerate >= _DEGENERATE_RUN:
                    bland = True
            else:
                degenerate = 0
                bland = False
            self._move(j, direction, theta, row)

    def dual_run(self, max_iter: int) -> str:
        """Dual simplex on a dual-feasible basis until every basic value is within bounds."""
        while True:
            if self.iterations >= max_iter:
                return ITERATION_LIMIT
            xb = self.x[self.basis]
            lb = self.lo[self.basis]
            ub = self.up[self.basis]
            below = lb - xb
            above = xb - ub
            viol = np.maximum(below, above)
            r = int(np.argmax(viol))
            if viol[r] <= _FEAS_TOL:
                return OPTIMAL
            target = lb[r] if below[r] > above[r] else ub[r]
            raise_it = below[r] > above[r]
            row = self.T[r]
            d = self.cost - self.cost[self.basis] @ self.T
            nb = ~self.is_basic & (self.up > self.lo)
            at_lo = self.x <= self.lo + _PIVOT_TOL
            at_up = self.x >= self.up - _PIVOT_TOL
            free = ~at_lo & ~at_up
            # x_b = const - sum_j T[r, j] x_j
            if raise_it:
                elig = nb & (((row < -_PIVOT_TOL) & (at_lo | free)) | ((row > _PIVOT_TOL) & (at_up | free)))
            else:
                elig = nb & (((row > _PIVOT_TOL) & (at_lo | free)) | ((row < -_PIVOT_TOL) & (at_up | free)))
            cand = np.flatnonzero(elig)
            if cand.size == 0:
                return INFEASIBLE
            ratios = np.abs(d[cand]) / np.abs(row[cand])
            best = ratios.min()
            ties = cand[ratios <= best + 1e-12]
            q = int(ties[np.argmax(np.abs(row[ties]))])
            delta = (self.x[self.basis[r]] - target) / row[q]
            self.iterations += 1
            col = self.T[:, q].copy()
            self.x[q] += delta
            self.x[self.basis] -= delta * col
            leaving = self.basis[r]
            self.x[leaving] = target
            piv = self.T[r] / col[r]
            self.T -= np.outer(col, piv)
            self.T[r] = piv
            self.basis[r] = q
            self.is_basic[leaving] = False
            self.is_basic[q] = True
            self.since_refactor += 1
            if self.since_refactor >= _REFACTOR_EVERY:
                self.refactor()

    def _ratio(self, j: int, direction: float, bland: bool):
        alpha = self.T[:, j] * direction
        xb = self.x[self.basis]
        lb = self.lo[self.basis]
        ub = self.up[self.basis]
        limits = np.full(len(alpha), np.inf)
        down = alpha > _PIVOT_TOL
        up = alpha < -_PIVOT_TOL
        with np.errstate(invalid="ignore"):
            limits[down] = (xb[down] - lb[down]) / alpha[down]
            limits[up] = (ub[up] - xb[up]) / -alpha[up]
        limits = np.maximum(limits, 0.0)
        limits[np.isnan(limits)] = np.inf
        own = self.up[j] - self.lo[j]
        best = limits.min() if limits.size else np.inf
        if own <= best:
            return own, -1
        ties = np.flatnonzero(limits <= best + 1e-12)
        if bland:
            row = int(ties[np.argmin(self.basis[ties])])
        else:
            row = int(ties[np.argmax(np.abs(alpha[ties]))])
        return best, row

    def _move(self, j: int, direction: float, theta: float, row: int):
        col = self.T[:, j].copy()
        self.x[j] += direction * theta
        self.x[self.basis] -= direction * theta * col
        if row < 0:
            # bound flip, no basis change
            self.x[j] = self.up[j] if direction > 0 else self.lo[j]
            return
        leaving = self.basis[row]
        # snap the leaving variable onto the bound it reached
        if direction * col[row] > 0:
            self.x[leaving] = self.lo[leaving]
        else:
            self.x[leaving] = self.up[leaving]
        piv = self.T[row] / col[row]
        self.T -= np.outer(col, piv)
        self.T[row] = piv
        self.basis[row] = j
        self.is_basic[leaving] = False
        self.is_basic[j] = True
        self.since_refactor += 1
        if self.since_refactor >= _REFACTOR_EVERY:
            self.refactor()


def _initial_value(lo: float, up: float) -> float:
    if np.isfinite(lo):
        return lo
    if np.isfinite(up):
        return up
    return 0.0


@dataclass
class WarmStart:
    """Optimal basis of a solved relaxation, reusable after bound changes."""

    M: np.ndarray
    b: np.ndarray
    lo_aux: np.ndarray          # bounds of slack and artificial columns (phase 2)
    up_aux: np.ndarray
    basis: np.ndarray
    at_upper: np.ndarray        # nonbasic structural columns resting on their upper bound
    T: np.ndarray | None = None  # tableau for ``basis``; shared, never mutated
    pivots: int = 0              # pivots applied to T since its last factorisation


def solve_lp(instance: MipInstance, lower=None, upper=None, max_iter: int | None = None,
             warm: WarmStart | None = None) -> LpSolution:
    """Optimise the LP relaxation; the objective is reported in the instance's sense.

    ``lower``/``upper`` override the variable bounds (used by branch and bound);
    ``warm`` restarts from a previous optimal basis of the same instance.
    """
    m = instance.m
    lo_x = instance.lower.copy() if lower is None else np.asarray(lower, dtype=float).copy()
    up_x = instance.upper.copy() if upper is None else np.asarray(upper, dtype=float).copy()
    if np.any(lo_x > up_x + 1e-12):
        return LpSolution(INFEASIBLE)
    sign = 1.0 if instance.is_minimize else -1.0
    c = sign * instance.c
    if m == 0:
        x = np.where(c > 0, lo_x, np.where(c < 0, up_x, np.vectorize(_initial_value)(lo_x, up_x)))
        if not np.all(np.isfinite(x)):
            return LpSolution(UNBOUNDED)
        return LpSolution(OPTIMAL, float(instance.c @ x), x)
    if warm is not None:
        sol = _solve_warm(instance, c, lo_x, up_x, warm, max_iter)
        if sol is not None:
            return sol
    return _solve_cold(instance, c, lo_x, up_x, max_iter)


def _finish(instance, tab: _Tableau, n: int, lo_x, up_x, lo_aux, up_aux) -> LpSolution:
    if tab.since_refactor >= _FINISH_REFACTOR:
        tab.refactor()
    values = np.minimum(np.maximum(tab.x[:n], lo_x), up_x)
    at_upper = ~tab.is_basic[:n] & (tab.x[:n] >= up_x - _PIVOT_TOL) & np.isfinite(up_x)
    state = WarmStart(tab.M, tab.b, lo_aux, up_aux, tab.basis.copy(), at_upper, tab.T, tab.since_refactor)
    return LpSolution(OPTIMAL, float(instance.c @ values), values, tab.iterations, state)


def _solve_warm(instance, c, lo_x, up_x, warm: WarmStart, max_iter) -> LpSolution | None:
    n = instance.n
    ntot = warm.M.shape[1]
    lo = np.concatenate([lo_x, warm.lo_aux])
    up = np.concatenate([up_x, warm.up_aux])
    x = np.zeros(ntot)
    x[n:] = np.where(np.isfinite(warm.lo_aux), warm.lo_aux, np.where(np.isfinite(warm.up_aux), warm.up_aux, 0.0))
    for j in range(n):
        if warm.at_upper[j] and np.isfinite(up_x[j]):
            x[j] = up_x[j]
        else:
            x[j] = _initial_value(lo_x[j], up_x[j])
    cost = np.zeros(ntot)
    cost[:n] = c
    try:
        tab = _Tableau(warm.M, warm.b, lo, up, cost, warm.basis.copy(), x, warm.T, n, warm.pivots)
    except np.linalg.LinAlgError:
        return None
    max_iter = max_iter or 50 * ntot + 1000
    status = tab.dual_run(max_iter)
    if status == INFEASIBLE:
        return LpSolution(INFEASIBLE, iterations=tab.iterations)
    if status != OPTIMAL:
        return None
    status = tab.run(max_iter)
    if status == UNBOUNDED:
        return LpSolution(UNBOUNDED, iterations=tab.iterations)
    if status != OPTIMAL:
        return None
    sol = _finish(instance, tab, n, lo_x, up_x, warm.lo_aux, warm.up_aux)
    if instance.violation(sol.values) > 1e-6:
        return None     # numerical trouble: let the cold path decide
    return sol


def _solve_cold(instance, c, lo_x, up_x, max_iter) -> LpSolution:
    n, m = instance.n, instance.m
    A = instance.A.toarray()
    b = instance.b.astype(float)
    senses = instance.senses
    lo_s = np.where(senses == GE, -np.inf, 0.0)
    up_s = np.where(senses == LE, np.inf, 0.0)

    x0 = np.array([_initial_value(l, u) for l, u in zip(lo_x, up_x)])
    resid = b - A @ x0
    slack_ok = ((senses == LE) & (resid >= 0)) | ((senses == GE) & (resid <= 0)) | \
               ((senses == EQ) & (resid == 0))
    art_rows = np.flatnonzero(~slack_ok)
    n_art = len(art_rows)
    art = np.zeros((m, n_art))
    art_sign = np.where(resid[art_rows] >= 0, 1.0, -1.0)
    art[art_rows, np.arange(n_art)] = art_sign

    M = np.hstack([A, np.eye(m), art])
    ntot = n + m + n_art
    lo = np.concatenate([lo_x, lo_s, np.zeros(n_art)])
    up = np.concatenate([up_x, up_s, np.full(n_art, np.inf)])
    x = np.concatenate([x0, np.zeros(m), np.zeros(n_art)])
    basis = np.arange(n, n + m)
    basis[art_rows] = n + m + np.arange(n_art)
    x[n + np.flatnonzero(slack_ok)] = resid[slack_ok]
    x[n + m:] = np.abs(resid[art_rows])

    max_iter = max_iter or 50 * (m + ntot) + 1000
    art_cols = np.arange(n + m, ntot)
    cost1 = np.zeros(ntot)
    cost1[art_cols] = 1.0
    tab = _Tableau(M, b, lo, up, cost1, basis, x)
    if n_art:
        status = tab.run(max_iter)
        if status == ITERATION_LIMIT:
            return LpSolution(ITERATION_LIMIT, iterations=tab.iterations)
        tab.refactor()
        infeas = tab.x[art_cols].sum()
        if infeas > _FEAS_TOL * max(1.0, np.abs(b).max()):
            return LpSolution(INFEASIBLE, iterations=tab.iterations)
    # artificials are pinned to zero for phase 2
    tab.up[art_cols] = 0.0
    tab.x[art_cols] = np.clip(tab.x[art_cols], 0.0, 0.0)
    cost2 = np.zeros(ntot)
    cost2[:n] = c
    tab.cost = cost2
    status = tab.run(max_iter)
    if status != OPTIMAL:
        return LpSolution(status, iterations=tab.iterations)
    tab.refactor()
    return _finish(instance, tab, n, lo_x, up_x, tab.lo[n:].copy(), tab.up[n:].copy())
