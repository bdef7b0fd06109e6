import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import linprog

from forge import geninst
from forge.geninst import FAMILIES, tiny_instance
from forge.mipmodel import (BINARY, CONTINUOUS, EQ, GE, INTEGER, LE, MAXIMIZE, MINIMIZE, ConstraintDef,
                            MipInstance, VariableDef)
from forge.minisolve import (EXHAUSTIVE_MAX_VARS, INFEASIBLE, OPTIMAL, STATUS_INFEASIBLE, STATUS_LIMIT,
                             STATUS_OPTIMAL, UNBOUNDED, MipSolution, SolutionPool, integrality_gap_label,
                             primal_gap, read_solution, solve_exhaustive, solve_lp, solve_mip,
                             write_solution)


def scipy_lp(inst, lower=None, upper=None):
    sign = 1.0 if inst.is_minimize else -1.0
    A = inst.A.toarray()
    le, ge, eq = (inst.senses == LE), (inst.senses == GE), (inst.senses == EQ)
    A_ub = np.vstack([A[le], -A[ge]])
    b_ub = np.concatenate([inst.b[le], -inst.b[ge]])
    lo = inst.lower if lower is None else lower
    up = inst.upper if upper is None else upper
    bounds = [(None if math.isinf(l) else l, None if math.isinf(u) else u) for l, u in zip(lo, up)]
    res = linprog(sign * inst.c, A_ub=A_ub if len(A_ub) else None, b_ub=b_ub if len(b_ub) else None,
                  A_eq=A[eq] if eq.any() else None, b_eq=inst.b[eq] if eq.any() else None,
                  bounds=bounds, method="highs")
    return res


def brute_force_all(inst):
    out = []
    for bits in itertools.product((0.0, 1.0), repeat=inst.n):
        x = np.array(bits)
        if inst.is_feasible(x):
            out.append(inst.objective_value(x))
    return out


def box(sense, c, rows, lo=0.0, up=1.0, vtype=CONTINUOUS):
    variables = [VariableDef(f"x{j}", vtype, lo, up, cj) for j, cj in enumerate(c)]
    cons = [ConstraintDef(f"r{i}", s, rhs) for i, (s, _, rhs) in enumerate(rows)]
    coeffs = [(i, j, v) for i, (_, a, _) in enumerate(rows) for j, v in enumerate(a) if v]
    return MipInstance("t", sense, variables, cons, coeffs)


def test_lp_small_max():
    inst = box(MAXIMIZE, [1, 1], [(LE, [1, 1], 1)])
    assert solve_lp(inst).objective == pytest.approx(1.0)


def test_lp_triangle_vertex_cover(triangle_vc):
    lp = solve_lp(triangle_vc)
    assert lp.status == OPTIMAL
    assert lp.objective == pytest.approx(1.5)
    assert np.allclose(lp.values, 0.5)


def test_lp_infeasible_box():
    inst = box(MINIMIZE, [1], [(GE, [1], 2), (LE, [1], 1)], up=math.inf)
    assert solve_lp(inst).status == INFEASIBLE


def test_lp_unbounded():
    inst = box(MAXIMIZE, [1, 0], [(GE, [1, -1], 0)], up=math.inf)
    assert solve_lp(inst).status == UNBOUNDED


def test_lp_inverted_bounds_infeasible(triangle_vc):
    assert solve_lp(triangle_vc, lower=np.array([1.0, 0, 0]), upper=np.array([0.0, 1, 1])).status == INFEASIBLE


@pytest.mark.parametrize("family", FAMILIES)
@pytest.mark.parametrize("size", ["easy", "medium"])
def test_lp_matches_highs_on_generated(family, size):
    inst = geninst.gen_instance(family, size, 17)
    ours = solve_lp(inst)
    ref = scipy_lp(inst)
    assert ours.status == OPTIMAL and ref.status == 0
    sign = 1.0 if inst.is_minimize else -1.0
    assert ours.objective == pytest.approx(sign * ref.fun, rel=1e-8, abs=1e-8)
    assert inst.violation(ours.values) < 1e-7


@given(st.integers(0, 100_000))
def test_lp_matches_highs_random(seed):
    rng = np.random.default_rng(seed)
    n, m = int(rng.integers(1, 6)), int(rng.integers(1, 6))
    A = np.round(rng.normal(size=(m, n)) * (rng.random((m, n)) < 0.7), 2)
    senses = rng.choice([LE, GE, EQ], size=m, p=[0.5, 0.35, 0.15])
    x0 = rng.uniform(-1, 2, size=n)
    lo = np.where(rng.random(n) < 0.2, -np.inf, np.floor(x0) - rng.integers(0, 2, n))
    up = np.where(rng.random(n) < 0.3, np.inf, np.ceil(x0) + rng.integers(0, 2, n))
    # right-hand sides around a known point keep most instances feasible
    b = A @ x0 + np.where(senses == LE, 1.0, np.where(senses == GE, -1.0, 0.0)) * rng.random(m)
    c = np.round(rng.normal(size=n), 2)
    sense = MINIMIZE if rng.random() < 0.5 else MAXIMIZE
    inst = MipInstance("r", sense, [VariableDef(f"x{j}", CONTINUOUS, lo[j], up[j], c[j]) for j in range(n)],
                       [ConstraintDef(f"r{i}", senses[i], b[i]) for i in range(m)],
                       [(i, j, A[i, j]) for i in range(m) for j in range(n) if A[i, j]])
    ours = solve_lp(inst)
    ref = scipy_lp(inst)
    expected = {0: OPTIMAL, 2: INFEASIBLE, 3: UNBOUNDED}[ref.status]
    assert ours.status == expected
    if expected == OPTIMAL:
        sign = 1.0 if inst.is_minimize else -1.0
        assert ours.objective == pytest.approx(sign * ref.fun, rel=1e-7, abs=1e-7)
        assert inst.violation(ours.values) < 1e-6


@given(st.integers(0, 5000))
def test_lp_with_tightened_bounds_matches_highs(seed):
    inst = tiny_instance(FAMILIES[seed % 5], seed, 16)
    rng = np.random.default_rng(seed)
    lo, up = inst.lower.copy(), inst.upper.copy()
    fix = rng.random(inst.n) < 0.3
    val = rng.integers(0, 2, inst.n).astype(float)
    lo[fix] = up[fix] = val[fix]
    ours = solve_lp(inst, lo, up)
    ref = scipy_lp(inst, lo, up)
    if ref.status == 2:
        assert ours.status == INFEASIBLE
    else:
        sign = 1.0 if inst.is_minimize else -1.0
        assert ours.objective == pytest.approx(sign * ref.fun, rel=1e-8, abs=1e-8)


def test_mip_triangles(triangle_vc, triangle_is):
    assert solve_mip(triangle_vc).objective == 2
    assert solve_mip(triangle_is).objective == 1


@given(st.integers(0, 10_000))
def test_bnb_matches_exhaustive(seed):
    inst = tiny_instance(FAMILIES[seed % 5], seed, 14)
    a, b = solve_mip(inst), solve_exhaustive(inst)
    assert a.status == b.status
    if b.status == STATUS_OPTIMAL:
        assert a.objective == pytest.approx(b.objective, abs=1e-9)
        assert inst.is_feasible(a.values)


@given(st.integers(0, 10_000))
def test_pool_is_the_best_distinct_solutions(seed):
    inst = tiny_instance(FAMILIES[seed % 5], seed, 10)
    sol = solve_mip(inst, pool_size=5)
    values = brute_force_all(inst)
    sign = 1.0 if inst.is_minimize else -1.0
    best5 = sorted(values, key=lambda v: sign * v)[:5]
    pool_objs = [o for o, _ in sol.pool]
    assert pool_objs == pytest.approx(best5)
    keys = {tuple(np.round(x).astype(int)) for _, x in sol.pool}
    assert len(keys) == len(sol.pool)
    assert all(inst.is_feasible(x) for _, x in sol.pool)


def test_pool_offer_rules():
    pool = SolutionPool(2, minimize=True, int_mask=np.array([True, True]))
    assert pool.offer(3.0, np.array([1.0, 0.0]))
    assert not pool.offer(3.0, np.array([1.0, 0.0]))          # duplicate
    assert pool.offer(1.0, np.array([0.0, 1.0]))
    assert not pool.offer(5.0, np.array([1.0, 1.0]))          # worse than a full pool
    assert pool.offer(2.0, np.array([1.0, 1.0]))
    assert [o for o, _ in pool.items] == [1.0, 2.0]


def test_node_limit_reports_limit():
    inst = geninst.gen_instance("vc", "medium", 3)
    sol = solve_mip(inst, node_limit=5, pool_size=1)
    assert sol.status == STATUS_LIMIT and sol.nodes == 5


def test_infeasible_mip():
    inst = box(MINIMIZE, [1, 1], [(EQ, [2, 2], 1)], vtype=INTEGER, up=3)
    assert solve_mip(inst).status == STATUS_INFEASIBLE


def test_general_integer_mip():
    # max 5x + 4y s.t. 6x + 4y <= 24, x + 2y <= 6, integer x, y >= 0
    inst = box(MAXIMIZE, [5, 4], [(LE, [6, 4], 24), (LE, [1, 2], 6)], vtype=INTEGER, up=math.inf)
    sol = solve_mip(inst)
    assert sol.objective == pytest.approx(20.0)
    best = max(5 * x + 4 * y for x in range(5) for y in range(4) if 6 * x + 4 * y <= 24 and x + 2 * y <= 6)
    assert sol.objective == best


def test_mixed_integer_mip():
    # min -x - y, x integer in [0, 3], y continuous, 2x + 2y <= 5, -x + y <= 0.5
    variables = [VariableDef("x", INTEGER, 0, 3, -1.0), VariableDef("y", CONTINUOUS, 0, math.inf, -1.0)]
    cons = [ConstraintDef("a", LE, 5.0), ConstraintDef("b", LE, 0.5)]
    inst = MipInstance("mix", MINIMIZE, variables, cons, [(0, 0, 2), (0, 1, 2), (1, 0, -1), (1, 1, 1)])
    sol = solve_mip(inst)
    assert sol.objective == pytest.approx(-2.5)


def test_exhaustive_guards():
    with pytest.raises(ValueError):
        solve_exhaustive(box(MINIMIZE, [1], [(GE, [1], 1)], up=2, vtype=INTEGER))
    big = geninst.vertex_cover(EXHAUSTIVE_MAX_VARS + 1, [(0, 1)])
    with pytest.raises(ValueError):
        solve_exhaustive(big)


def test_gap_label_examples(triangle_vc):
    lab = integrality_gap_label(triangle_vc)
    assert lab.label == pytest.approx(2 / 1.5)
    integral = box(MINIMIZE, [1, 1], [(GE, [1, 1], 1)], vtype=BINARY)
    assert integrality_gap_label(integral).label == pytest.approx(1.0)


def test_gap_label_limit_dominates_exact():
    inst = geninst.gen_instance("sc", "easy", 4)
    tight = integrality_gap_label(inst, node_limit=2)
    exact = integrality_gap_label(inst, exhaustive=True)
    assert tight.label >= exact.label - 1e-12


def test_gap_label_unavailable(caplog):
    zero = box(MINIMIZE, [1, 1], [(GE, [1, 1], 0)], vtype=BINARY)
    assert integrality_gap_label(zero) is None
    infeasible = box(MINIMIZE, [1], [(GE, [1], 2)], vtype=BINARY)
    assert integrality_gap_label(infeasible) is None


def test_primal_gap():
    assert primal_gap(5.0, 5.0) == 0.0
    assert primal_gap(150.0, 100.0) == pytest.approx(1 / 3)
    assert primal_gap(-3.0, 4.0) == 1.0
    with pytest.raises(ValueError):
        primal_gap(float("nan"), 1.0)


@given(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6))
def test_primal_gap_range(a, b):
    assert 0.0 <= primal_gap(a, b) <= 1.0


def test_solution_file_roundtrip(tmp_path, triangle_vc):
    sol = solve_mip(triangle_vc)
    write_solution(sol, triangle_vc, tmp_path / "s.sol")
    back = read_solution(tmp_path / "s.sol", triangle_vc)
    assert back.status == sol.status and back.objective == sol.objective
    assert np.array_equal(back.values, sol.values)
    (tmp_path / "bad.sol").write_text("status optimal\nzz 1\n")
    with pytest.raises(ValueError):
        read_solution(tmp_path / "bad.sol", triangle_vc)
    write_solution(MipSolution("infeasible"), triangle_vc, tmp_path / "none.sol")
    assert not read_solution(tmp_path / "none.sol", triangle_vc).has_incumbent
