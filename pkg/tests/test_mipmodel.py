import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from forge import geninst
from forge.mipmodel import (BINARY, CONTINUOUS, GE, INTEGER, LE, MAXIMIZE, MINIMIZE, PSEUDO_CUT_NAME,
                            ConstraintDef, DuplicateEntryError, InvalidInstanceError, MipInstance,
                            MpsParseError, SectionOrderError, UnknownReferenceError,
                            UnsupportedFeatureError, VariableDef, add_pseudo_cut, drop_constraints,
                            parse_mps, read_mps, save_mps, structurally_equal, validate, write_mps)
from forge.minisolve import solve_exhaustive, solve_lp

MINIMAL = """NAME tiny
ROWS
 N obj
 L c1
COLUMNS
    x obj 1 c1 1
RHS
    RHS c1 5
ENDATA
"""

TRIANGLE_MPS = """NAME triangle
ROWS
 N cost
 G e01
 G e12
 G e02
COLUMNS
    MARKER 'MARKER' 'INTORG'
    x0 cost 1 e01 1
    x0 e02 1
    x1 cost 1 e01 1
    x1 e12 1
    x2 cost 1 e12 1
    x2 e02 1
    MARKER 'MARKER' 'INTEND'
RHS
    RHS e01 1 e12 1
    RHS e02 1
BOUNDS
 BV BND x0
 BV BND x1
 BV BND x2
ENDATA
"""


def test_minimal_file():
    inst = parse_mps(MINIMAL)
    assert (inst.m, inst.n) == (1, 1)
    assert inst.objective_sense == MINIMIZE
    assert inst.constraints[0].sense == LE and inst.constraints[0].rhs == 5
    assert inst.variables[0].var_type == CONTINUOUS and inst.variables[0].upper_bound == math.inf


def test_triangle_vertex_cover_file():
    inst = parse_mps(TRIANGLE_MPS)
    assert inst.n == 3 and inst.m == 3
    assert all(v.var_type == BINARY for v in inst.variables)
    assert all(c.sense == GE and c.rhs == 1 for c in inst.constraints)
    A = inst.A.toarray()
    assert np.array_equal(A.sum(axis=1), [2, 2, 2])


def test_unknown_row_is_named():
    bad = MINIMAL.replace("x obj 1 c1 1", "x obj 1 nosuch 1")
    with pytest.raises(UnknownReferenceError, match="nosuch"):
        parse_mps(bad)


@pytest.mark.parametrize("text, exc", [
    (MINIMAL.replace("ENDATA\n", ""), SectionOrderError),
    (MINIMAL.replace("RHS\n", "RANGES\n"), UnsupportedFeatureError),
    (MINIMAL.replace("x obj 1 c1 1", "x obj 1 c1 1\n    x c1 2"), DuplicateEntryError),
    (MINIMAL.replace("RHS c1 5", "RHS c1 five"), MpsParseError),
    (MINIMAL.replace("ROWS\n N obj\n L c1\n", "ROWS\n L c1\n"), MpsParseError),
    (MINIMAL.replace(" L c1", " Q c1"), MpsParseError),
])
def test_parse_errors(text, exc):
    with pytest.raises(exc):
        parse_mps(text)


def test_sections_out_of_order():
    text = "NAME t\nCOLUMNS\n    x obj 1\nROWS\n N obj\nENDATA\n"
    with pytest.raises(SectionOrderError):
        parse_mps(text)


def test_newline_agnostic():
    a = parse_mps(TRIANGLE_MPS)
    b = parse_mps(TRIANGLE_MPS.replace("\n", "\r\n"))
    assert structurally_equal(a, b)


def test_objsense_and_bounds():
    text = """NAME b
OBJSENSE
    MAX
ROWS
 N obj
 L c
COLUMNS
    MARKER 'MARKER' 'INTORG'
    y obj 2 c 1
    MARKER 'MARKER' 'INTEND'
    z obj 1 c 1
    w obj 1 c 1
RHS
    RHS c 10
BOUNDS
 UP BND y 4
 LO BND z -3
 UP BND z 7.5
 FR BND w
ENDATA
"""
    inst = parse_mps(text)
    assert inst.objective_sense == MAXIMIZE
    y, z, w = inst.variables
    assert (y.var_type, y.lower_bound, y.upper_bound) == (INTEGER, 0.0, 4.0)
    assert (z.lower_bound, z.upper_bound) == (-3.0, 7.5)
    assert (w.lower_bound, w.upper_bound) == (-math.inf, math.inf)
    assert structurally_equal(parse_mps(write_mps(inst)), inst)


def test_roundtrip_triangle(triangle_vc):
    assert structurally_equal(parse_mps(write_mps(triangle_vc)), triangle_vc)


def test_infinite_upper_bound_omitted():
    inst = MipInstance("inf", MINIMIZE, [VariableDef("x", CONTINUOUS, 0.0, math.inf, 1.0)],
                       [ConstraintDef("c", GE, 1.0)], [(0, 0, 1.0)])
    text = write_mps(inst)
    assert "UP BND x" not in text
    assert parse_mps(text).variables[0].upper_bound == math.inf


def test_generated_set_cover_roundtrip(tmp_path):
    inst = geninst.random_set_cover(50, 40, 0.1, np.random.default_rng(3))
    assert inst.n == 50
    save_mps(inst, tmp_path / "sc.mps")
    back = read_mps(tmp_path / "sc.mps")
    assert structurally_equal(back, inst)
    assert write_mps(back) == write_mps(inst)


@given(st.integers(1, 6), st.integers(1, 6), st.data())
def test_roundtrip_property(n, m, data):
    types = data.draw(st.lists(st.sampled_from([BINARY, INTEGER, CONTINUOUS]), min_size=n, max_size=n))
    finite = st.floats(-1e6, 1e6, allow_nan=False, allow_subnormal=False)
    variables = []
    for j, t in enumerate(types):
        if t == BINARY:
            lo, up = 0.0, 1.0
        else:
            lo = data.draw(st.sampled_from([0.0, -math.inf]) | finite)
            up = data.draw(st.sampled_from([math.inf]) | st.floats(0, 1e6, allow_nan=False, allow_subnormal=False))
            if lo > up:
                lo, up = up, lo
        variables.append(VariableDef(f"v{j}", t, lo, up, data.draw(finite)))
    constraints = [ConstraintDef(f"r{i}", data.draw(st.sampled_from([LE, GE, "="])), data.draw(finite))
                   for i in range(m)]
    cells = data.draw(st.sets(st.tuples(st.integers(0, m - 1), st.integers(0, n - 1))))
    coeffs = [(i, j, data.draw(finite.filter(lambda v: v != 0))) for i, j in sorted(cells)]
    inst = validate(MipInstance("prop", data.draw(st.sampled_from([MINIMIZE, MAXIMIZE])),
                                variables, constraints, coeffs))
    once = write_mps(inst)
    back = parse_mps(once)
    assert structurally_equal(back, inst)
    assert write_mps(back) == once


def test_validate_rejects_bad_binary_bounds():
    inst = MipInstance("b", MINIMIZE, [VariableDef("x", BINARY, 0.0, 2.0)], [], [])
    with pytest.raises(InvalidInstanceError):
        validate(inst)


def test_pseudo_cut_minimize():
    inst = MipInstance("m", MINIMIZE, [VariableDef("x", CONTINUOUS, 0, 10, 1.0)],
                       [ConstraintDef("c", LE, 10)], [(0, 0, 1.0)])
    cut = add_pseudo_cut(inst, 3.0)
    assert cut.m == 2
    con = cut.constraints[-1]
    assert (con.name, con.sense, con.rhs) == (PSEUDO_CUT_NAME, GE, 3.0)
    assert cut.A.toarray()[-1].tolist() == [1.0]
    assert inst.m == 1  # original untouched


def test_pseudo_cut_maximize():
    inst = MipInstance("m", MAXIMIZE, [VariableDef("x", CONTINUOUS, 0, 10, 2.0),
                                       VariableDef("y", CONTINUOUS, 0, 10, 1.0)], [], [])
    cut = add_pseudo_cut(inst, 7.0)
    assert cut.constraints[-1].sense == LE and cut.constraints[-1].rhs == 7.0
    assert cut.A.toarray()[-1].tolist() == [2.0, 1.0]


def test_pseudo_cut_keeps_optimum_with_underestimated_gap():
    inst = geninst.set_cover([[0, 1], [1, 2], [2, 3], [0, 3], [0, 2]], 4, costs=[3, 2, 4, 2, 5])
    opt = solve_exhaustive(inst)
    lp = solve_lp(inst)
    true_gap = opt.objective / lp.objective
    g_hat = 1.0 + 0.5 * (true_gap - 1.0)
    cut = add_pseudo_cut(inst, lp.objective * g_hat)
    assert cut.is_feasible(opt.values)
    assert solve_exhaustive(cut).objective == pytest.approx(opt.objective)


def test_pseudo_cut_rejects_nonfinite():
    inst = parse_mps(MINIMAL)
    with pytest.raises(ValueError):
        add_pseudo_cut(inst, math.inf)


def _m100():
    cons = [ConstraintDef(f"c{i}", LE, 1.0) for i in range(100)]
    return MipInstance("big", MINIMIZE, [VariableDef("x", BINARY, 0, 1, 1.0)], cons,
                       [(i, 0, 1.0) for i in range(100)])


def test_drop_constraints():
    inst = _m100()
    assert drop_constraints(inst, 0.0, 1) is inst
    a = drop_constraints(inst, 0.05, 9)
    assert a.m == 95
    b = drop_constraints(inst, 0.05, 9)
    assert [c.name for c in a.constraints] == [c.name for c in b.constraints]
    assert len(a.coefficients) == 95
    assert drop_constraints(inst, 0.10, 9).m == 90
    with pytest.raises(ValueError):
        drop_constraints(inst, 1.5, 0)
