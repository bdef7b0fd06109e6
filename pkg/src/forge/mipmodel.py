"""In-memory MIP instances, free-format MPS I/O and instance transforms."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable, TextIO

import numpy as np
import scipy.sparse as sp

MINIMIZE = "minimize"
MAXIMIZE = "maximize"

LE, GE, EQ = "<=", ">=", "="
SENSES = (LE, GE, EQ)

BINARY, INTEGER, CONTINUOUS = "binary", "integer", "continuous"
VAR_TYPES = (BINARY, INTEGER, CONTINUOUS)

PSEUDO_CUT_NAME = "__forge_pseudo_cut"


class InvalidInstanceError(ValueError):
    pass


class MpsParseError(ValueError):
    """Base class for MPS read failures; carries the 1-based line number."""

    def __init__(self, message: str, line_no: int | None = None):
        self.line_no = line_no
        where = f"line {line_no}: " if line_no is not None else ""
        super().__init__(where + message)


class SectionOrderError(MpsParseError):
    pass


class UnknownReferenceError(MpsParseError):
    pass


class DuplicateEntryError(MpsParseError):
    pass


class UnsupportedFeatureError(MpsParseError):
    pass


@dataclass(frozen=True)
class VariableDef:
    name: str
    var_type: str = CONTINUOUS
    lower_bound: float = 0.0
    upper_bound: float = math.inf
    objective_coeff: float = 0.0

    @property
    def is_integral(self) -> bool:
        return self.var_type != CONTINUOUS


@dataclass(frozen=True)
class ConstraintDef:
    name: str
    sense: str
    rhs: float


@dataclass(frozen=True)
class MipInstance:
    """A MIP ``opt c^T x  s.t.  A x (<=,>=,=) b,  l <= x <= u``.

    Coefficients are stored sparsely as ``(constraint_index, variable_index,
    value)`` triples. Instances are immutable; every transform returns a copy.
    """

    name: str
    objective_sense: str
    variables: tuple[VariableDef, ...]
    constraints: tuple[ConstraintDef, ...]
    coefficients: tuple[tuple[int, int, float], ...] = field(default=())

    def __post_init__(self):
        # accept lists from callers but keep the stored form hashable/immutable
        object.__setattr__(self, "variables", tuple(self.variables))
        object.__setattr__(self, "constraints", tuple(self.constraints))
        object.__setattr__(
            self,
            "coefficients",
            tuple((int(i), int(j), float(v)) for i, j, v in self.coefficients),
        )

    @property
    def n(self) -> int:
        return len(self.variables)

    @property
    def m(self) -> int:
        return len(self.constraints)

    @property
    def is_minimize(self) -> bool:
        return self.objective_sense == MINIMIZE

    @cached_property
    def A(self) -> sp.csr_matrix:
        if not self.coefficients:
            return sp.csr_matrix((self.m, self.n))
        rows, cols, vals = zip(*self.coefficients)
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.m, self.n))

    @cached_property
    def c(self) -> np.ndarray:
        return np.array([v.objective_coeff for v in self.variables], dtype=float)

    @cached_property
    def lower(self) -> np.ndarray:
        return np.array([v.lower_bound for v in self.variables], dtype=float)

    @cached_property
    def upper(self) -> np.ndarray:
        return np.array([v.upper_bound for v in self.variables], dtype=float)

    @cached_property
    def b(self) -> np.ndarray:
        return np.array([c.rhs for c in self.constraints], dtype=float)

    @cached_property
    def senses(self) -> np.ndarray:
        return np.array([c.sense for c in self.constraints], dtype=object)

    @cached_property
    def integer_mask(self) -> np.ndarray:
        return np.array([v.is_integral for v in self.variables], dtype=bool)

    @cached_property
    def binary_mask(self) -> np.ndarray:
        return np.array([v.var_type == BINARY for v in self.variables], dtype=bool)

    @property
    def is_pure_binary(self) -> bool:
        return bool(self.n) and bool(self.binary_mask.all())

    def objective_value(self, x) -> float:
        return float(self.c @ np.asarray(x, dtype=float))

    def violation(self, x) -> float:
        """Largest absolute violation of any row or bound at ``x``."""
        x = np.asarray(x, dtype=float)
        worst = 0.0
        if self.m:
            act = self.A @ x
            diff = act - self.b
            le = self.senses == LE
            ge = self.senses == GE
            eq = self.senses == EQ
            viol = np.zeros(self.m)
            viol[le] = np.maximum(diff[le], 0.0)
            viol[ge] = np.maximum(-diff[ge], 0.0)
            viol[eq] = np.abs(diff[eq])
            worst = float(viol.max())
        bound_viol = np.maximum(self.lower - x, 0.0).max(initial=0.0)
        bound_viol = max(bound_viol, np.maximum(x - self.upper, 0.0).max(initial=0.0))
        return max(worst, float(bound_viol))

    def is_feasible(self, x, tol: float = 1e-7, int_tol: float = 1e-6) -> bool:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            return False
        if self.violation(x) > tol:
            return False
        xi = x[self.integer_mask]
        return bool(np.all(np.abs(xi - np.round(xi)) <= int_tol))

    def variable_index(self) -> dict[str, int]:
        return {v.name: j for j, v in enumerate(self.variables)}


def validate(instance: MipInstance) -> MipInstance:
    """Check structural invariants; returns the instance for chaining."""
    if instance.objective_sense not in (MINIMIZE, MAXIMIZE):
        raise InvalidInstanceError(f"bad objective sense {instance.objective_sense!r}")
    names = set()
    for v in instance.variables:
        if v.name in names:
            raise InvalidInstanceError(f"duplicate variable name {v.name!r}")
        names.add(v.name)
        if v.var_type not in VAR_TYPES:
            raise InvalidInstanceError(f"variable {v.name}: unknown type {v.var_type!r}")
        if not math.isfinite(v.objective_coeff):
            raise InvalidInstanceError(f"variable {v.name}: non-finite objective coefficient")
        if math.isnan(v.lower_bound) or math.isnan(v.upper_bound):
            raise InvalidInstanceError(f"variable {v.name}: NaN bound")
        if v.lower_bound > v.upper_bound:
            raise InvalidInstanceError(f"variable {v.name}: lower bound exceeds upper bound")
        if v.var_type == BINARY and (v.lower_bound, v.upper_bound) != (0.0, 1.0):
            raise InvalidInstanceError(f"variable {v.name}: binary bounds must be [0, 1]")
        if v.var_type != CONTINUOUS and (v.lower_bound == math.inf or v.upper_bound == -math.inf):
            raise InvalidInstanceError(f"variable {v.name}: empty integer domain")
    names = set()
    for c in instance.constraints:
        if c.name in names:
            raise InvalidInstanceError(f"duplicate constraint name {c.name!r}")
        names.add(c.name)
        if c.sense not in SENSES:
            raise InvalidInstanceError(f"constraint {c.name}: unknown sense {c.sense!r}")
        if not math.isfinite(c.rhs):
            raise InvalidInstanceError(f"constraint {c.name}: non-finite rhs")
    seen = set()
    for i, j, val in instance.coefficients:
        if not (0 <= i < instance.m and 0 <= j < instance.n):
            raise InvalidInstanceError(f"coefficient ({i}, {j}) out of range")
        if (i, j) in seen:
            raise InvalidInstanceError(f"duplicate coefficient ({i}, {j})")
        if not math.isfinite(val):
            raise InvalidInstanceError(f"coefficient ({i}, {j}) is not finite")
        seen.add((i, j))
    return instance


# ---------------------------------------------------------------------------
# MPS reading
# ---------------------------------------------------------------------------

_SECTION_ORDER = ["NAME", "OBJSENSE", "ROWS", "COLUMNS", "RHS", "BOUNDS", "ENDATA"]
_UNSUPPORTED = {"RANGES", "SOS", "QUADOBJ", "QMATRIX", "QSECTION", "QCMATRIX", "INDICATORS"}
_ROW_SENSE = {"L": LE, "G": GE, "E": EQ}


def _number(tok: str, line_no: int) -> float:
    try:
        return float(tok)
    except ValueError:
        raise MpsParseError(f"expected a number, got {tok!r}", line_no) from None


def parse_mps(source: str | TextIO) -> MipInstance:
    """Read a free-format MPS model from a string or text stream.

    Integer columns declared between ``INTORG``/``INTEND`` markers that never
    receive a BOUNDS entry become binaries. RANGES, SOS and quadratic sections
    are rejected.
    """
    text = source if isinstance(source, str) else source.read()
    name = ""
    obj_sense = MINIMIZE
    obj_row = None
    row_index: dict[str, int] = {}
    row_defs: list[list] = []  # [name, sense, rhs]
    col_index: dict[str, int] = {}
    col_defs: list[dict] = []
    coeffs: dict[tuple[int, int], float] = {}
    seen_entries: set[tuple[str, str]] = set()
    rhs_seen: set[str] = set()
    section = None
    section_pos = -1
    in_int_block = False

    def enter(sec: str, line_no: int):
        nonlocal section, section_pos
        pos = _SECTION_ORDER.index(sec)
        if pos <= section_pos:
            raise SectionOrderError(f"section {sec} out of order", line_no)
        if sec in ("COLUMNS", "RHS", "BOUNDS", "ENDATA") and section_pos < _SECTION_ORDER.index("ROWS"):
            raise SectionOrderError(f"section {sec} before ROWS", line_no)
        if sec in ("RHS", "BOUNDS") and section_pos < _SECTION_ORDER.index("COLUMNS"):
            raise SectionOrderError(f"section {sec} before COLUMNS", line_no)
        section, section_pos = sec, pos

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip()
        if not line.strip() or line.lstrip().startswith("*"):
            continue
        tokens = line.split()
        if not raw[0].isspace():
            head = tokens[0].upper()
            if head in _UNSUPPORTED:
                raise UnsupportedFeatureError(f"{head} section is not supported", line_no)
            if head not in _SECTION_ORDER:
                raise SectionOrderError(f"unknown section {tokens[0]!r}", line_no)
            enter(head, line_no)
            if head == "NAME":
                name = tokens[1] if len(tokens) > 1 else ""
            elif head == "OBJSENSE" and len(tokens) > 1:
                obj_sense = _objsense(tokens[1], line_no)
            elif head == "ENDATA":
                break
            continue

        if section is None:
            raise SectionOrderError("data line before any section header", line_no)
        if section == "NAME":
            raise SectionOrderError("unexpected data in NAME section", line_no)
        if section == "OBJSENSE":
            obj_sense = _objsense(tokens[0], line_no)
        elif section == "ROWS":
            if len(tokens) != 2:
                raise MpsParseError("ROWS entry needs a type and a name", line_no)
            kind, rname = tokens[0].upper(), tokens[1]
            if rname in row_index or rname == obj_row:
                raise DuplicateEntryError(f"row {rname!r} declared twice", line_no)
            if kind == "N":
                if obj_row is not None:
                    raise UnsupportedFeatureError("more than one N row", line_no)
                obj_row = rname
            elif kind in _ROW_SENSE:
                row_index[rname] = len(row_defs)
                row_defs.append([rname, _ROW_SENSE[kind], 0.0])
            else:
                raise MpsParseError(f"unknown row type {kind!r}", line_no)
        elif section == "COLUMNS":
            if len(tokens) >= 3 and tokens[1].strip("'\"").upper() == "MARKER":
                marker = tokens[2].strip("'\"").upper()
                if marker == "INTORG":
                    in_int_block = True
                elif marker == "INTEND":
                    in_int_block = False
                else:
                    raise MpsParseError(f"unknown marker {tokens[2]!r}", line_no)
                continue
            if len(tokens) not in (3, 5):
                raise MpsParseError("COLUMNS entry needs 1 or 2 (row, value) pairs", line_no)
            cname = tokens[0]
            if cname not in col_index:
                col_index[cname] = len(col_defs)
                col_defs.append({"name": cname, "int": in_int_block, "obj": 0.0,
                                 "lo": None, "up": None, "bv": False})
            j = col_index[cname]
            for rname, tok in zip(tokens[1::2], tokens[2::2]):
                val = _number(tok, line_no)
                if (rname, cname) in seen_entries:
                    raise DuplicateEntryError(f"duplicate entry for row {rname!r}, column {cname!r}", line_no)
                seen_entries.add((rname, cname))
                if rname == obj_row:
                    col_defs[j]["obj"] = val
                elif rname in row_index:
                    if val != 0.0:
                        coeffs[(row_index[rname], j)] = val
                else:
                    raise UnknownReferenceError(f"unknown row {rname!r}", line_no)
        elif section == "RHS":
            if len(tokens) not in (3, 5, 2, 4):
                raise MpsParseError("malformed RHS entry", line_no)
            pairs = tokens[1:] if len(tokens) % 2 == 1 else tokens
            for rname, tok in zip(pairs[0::2], pairs[1::2]):
                val = _number(tok, line_no)
                if rname == obj_row:
                    raise UnsupportedFeatureError("objective constant (RHS on N row) is not supported", line_no)
                if rname not in row_index:
                    raise UnknownReferenceError(f"unknown row {rname!r}", line_no)
                if rname in rhs_seen:
                    raise DuplicateEntryError(f"duplicate RHS for row {rname!r}", line_no)
                rhs_seen.add(rname)
                row_defs[row_index[rname]][2] = val
        elif section == "BOUNDS":
            _parse_bound(tokens, line_no, col_index, col_defs)

    if section != "ENDATA":
        raise SectionOrderError("missing ENDATA", None)
    if obj_row is None:
        raise MpsParseError("no objective (N) row declared", None)

    variables = []
    for cd in col_defs:
        lo, up = cd["lo"], cd["up"]
        if cd["bv"]:
            vt, lo, up = BINARY, 0.0, 1.0
        elif cd["int"]:
            if lo is None and up is None:
                vt, lo, up = BINARY, 0.0, 1.0
            else:
                vt = INTEGER
                lo = 0.0 if lo is None else lo
                up = math.inf if up is None else up
        else:
            vt = CONTINUOUS
            lo = 0.0 if lo is None else lo
            up = math.inf if up is None else up
        variables.append(VariableDef(cd["name"], vt, lo, up, cd["obj"]))
    constraints = [ConstraintDef(n_, s, r) for n_, s, r in row_defs]
    coefficients = [(i, j, v) for (i, j), v in sorted(coeffs.items())]
    inst = MipInstance(name, obj_sense, variables, constraints, coefficients)
    try:
        return validate(inst)
    except InvalidInstanceError as exc:
        raise MpsParseError(str(exc)) from exc


def _objsense(tok: str, line_no: int) -> str:
    tok = tok.upper()
    if tok in ("MAX", "MAXIMIZE"):
        return MAXIMIZE
    if tok in ("MIN", "MINIMIZE"):
        return MINIMIZE
    raise MpsParseError(f"unknown objective sense {tok!r}", line_no)


def _parse_bound(tokens, line_no, col_index, col_defs):
    kind = tokens[0].upper()
    if kind in ("FR", "MI", "PL", "BV"):
        if len(tokens) not in (2, 3, 4):
            raise MpsParseError("malformed BOUNDS entry", line_no)
        # optional bound-set name; a trailing value is tolerated and ignored
        cname = tokens[2] if len(tokens) >= 3 else tokens[1]
        val = None
    else:
        if len(tokens) not in (3, 4):
            raise MpsParseError("malformed BOUNDS entry", line_no)
        cname, val = (tokens[2], tokens[3]) if len(tokens) == 4 else (tokens[1], tokens[2])
        val = _number(val, line_no)
    if cname not in col_index:
        raise UnknownReferenceError(f"unknown column {cname!r}", line_no)
    cd = col_defs[col_index[cname]]
    if kind == "UP":
        cd["up"] = val
    elif kind == "LO":
        cd["lo"] = val
    elif kind == "FX":
        cd["lo"] = cd["up"] = val
    elif kind == "FR":
        cd["lo"], cd["up"] = -math.inf, math.inf
    elif kind == "MI":
        cd["lo"] = -math.inf
    elif kind == "PL":
        cd["up"] = math.inf
    elif kind == "BV":
        cd["bv"] = True
    elif kind in ("LI", "UI"):
        cd["int"] = True
        cd["lo" if kind == "LI" else "up"] = val
    else:
        raise MpsParseError(f"unknown bound type {kind!r}", line_no)


def read_mps(path) -> MipInstance:
    with open(path, encoding="utf-8", newline=None) as fh:
        return parse_mps(fh)


# ---------------------------------------------------------------------------
# MPS writing
# ---------------------------------------------------------------------------

def _fmt(v: float) -> str:
    if float(v).is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def write_mps(instance: MipInstance, out: TextIO | None = None) -> str:
    """Serialise ``instance`` as free-format MPS.

    Values are written with ``repr`` so a re-parse restores them exactly.
    Returns the text (and also writes it to ``out`` when given).
    """
    buf = io.StringIO()
    w = buf.write
    w(f"NAME {instance.name or 'unnamed'}\n")
    if instance.objective_sense == MAXIMIZE:
        w("OBJSENSE\n    MAX\n")
    w("ROWS\n N obj\n")
    code = {LE: "L", GE: "G", EQ: "E"}
    for c in instance.constraints:
        w(f" {code[c.sense]} {c.name}\n")
    w("COLUMNS\n")
    by_col: list[list[tuple[int, float]]] = [[] for _ in range(instance.n)]
    for i, j, v in instance.coefficients:
        by_col[j].append((i, v))
    in_int = False
    for j, var in enumerate(instance.variables):
        if var.is_integral and not in_int:
            w("    MARKER 'MARKER' 'INTORG'\n")
            in_int = True
        elif not var.is_integral and in_int:
            w("    MARKER 'MARKER' 'INTEND'\n")
            in_int = False
        entries = sorted(by_col[j])
        if var.objective_coeff != 0.0 or not entries:
            w(f"    {var.name} obj {_fmt(var.objective_coeff)}\n")
        for i, v in entries:
            w(f"    {var.name} {instance.constraints[i].name} {_fmt(v)}\n")
    if in_int:
        w("    MARKER 'MARKER' 'INTEND'\n")
    w("RHS\n")
    for c in instance.constraints:
        if c.rhs != 0.0:
            w(f"    RHS {c.name} {_fmt(c.rhs)}\n")
    w("BOUNDS\n")
    for var in instance.variables:
        for line in _bound_lines(var):
            w(f" {line}\n")
    w("ENDATA\n")
    text = buf.getvalue()
    if out is not None:
        out.write(text)
    return text


def _bound_lines(var: VariableDef) -> list[str]:
    lo, up, nm = var.lower_bound, var.upper_bound, var.name
    if var.var_type == BINARY:
        return [f"BV BND {nm}"]
    if lo == up:
        return [f"FX BND {nm} {_fmt(lo)}"]
    if lo == -math.inf and up == math.inf:
        return [f"FR BND {nm}"]
    lines = []
    if lo == -math.inf:
        lines.append(f"MI BND {nm}")
    elif lo != 0.0 or var.var_type == INTEGER:
        lines.append(f"LO BND {nm} {_fmt(lo)}")
    if up == math.inf:
        if var.var_type == INTEGER:
            # integer columns without bounds would default to binary on re-read
            lines.append(f"PL BND {nm}")
    else:
        lines.append(f"UP BND {nm} {_fmt(up)}")
    return lines


def save_mps(instance: MipInstance, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        write_mps(instance, fh)


# ---------------------------------------------------------------------------
# Transforms
# ---------------------------------------------------------------------------

def add_pseudo_cut(instance: MipInstance, bound: float) -> MipInstance:
    """Append ``c^T x >= bound`` (minimize) or ``c^T x <= bound`` (maximize)."""
    if not math.isfinite(bound):
        raise ValueError("pseudo-cut bound must be finite")
    obj = [(j, v.objective_coeff) for j, v in enumerate(instance.variables) if v.objective_coeff != 0.0]
    if not obj:
        raise ValueError("instance has an all-zero objective; a pseudo-cut would be vacuous")
    i = instance.m
    cut = ConstraintDef(PSEUDO_CUT_NAME, GE if instance.is_minimize else LE, float(bound))
    coeffs = instance.coefficients + tuple((i, j, v) for j, v in obj)
    return replace(instance, constraints=instance.constraints + (cut,), coefficients=coeffs)


def drop_constraints(instance: MipInstance, fraction: float, seed: int) -> MipInstance:
    """Remove ``floor(fraction * m)`` uniformly chosen constraints."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    n_drop = int(math.floor(fraction * instance.m + 1e-9))
    if n_drop == 0:
        return instance
    rng = np.random.default_rng(seed)
    dropped = set(rng.choice(instance.m, size=n_drop, replace=False).tolist())
    keep = [i for i in range(instance.m) if i not in dropped]
    remap = {old: new for new, old in enumerate(keep)}
    constraints = tuple(instance.constraints[i] for i in keep)
    coeffs = tuple((remap[i], j, v) for i, j, v in instance.coefficients if i in remap)
    return replace(instance, constraints=constraints, coefficients=coeffs)


def with_name(instance: MipInstance, name: str) -> MipInstance:
    return replace(instance, name=name)


def structurally_equal(a: MipInstance, b: MipInstance, sig: int = 12) -> bool:
    """Names, senses, types, bounds and coefficients agree to ``sig`` digits."""
    def close(x, y):
        if x == y:
            return True
        if not (math.isfinite(x) and math.isfinite(y)):
            return False
        return abs(x - y) <= 10 ** (-sig) * max(abs(x), abs(y))

    if (a.name, a.objective_sense, a.n, a.m) != (b.name, b.objective_sense, b.n, b.m):
        return False
    for va, vb in zip(a.variables, b.variables):
        if va.name != vb.name or va.var_type != vb.var_type:
            return False
        if not all(close(x, y) for x, y in ((va.lower_bound, vb.lower_bound),
                                            (va.upper_bound, vb.upper_bound),
                                            (va.objective_coeff, vb.objective_coeff))):
            return False
    for ca, cb in zip(a.constraints, b.constraints):
        if ca.name != cb.name or ca.sense != cb.sense or not close(ca.rhs, cb.rhs):
            return False
    ka = sorted(a.coefficients)
    kb = sorted(b.coefficients)
    if len(ka) != len(kb):
        return False
    return all(i1 == i2 and j1 == j2 and close(v1, v2) for (i1, j1, v1), (i2, j2, v2) in zip(ka, kb))


def iter_rows(instance: MipInstance) -> Iterable[tuple[ConstraintDef, list[tuple[int, float]]]]:
    rows: list[list[tuple[int, float]]] = [[] for _ in range(instance.m)]
    for i, j, v in instance.coefficients:
        rows[i].append((j, v))
    return zip(instance.constraints, rows)
