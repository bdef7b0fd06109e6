"""Bipartite variable/constraint graphs with 10 static node features.

Column layout (constraints first in node order)::

    0..2  constraint sense one-hot (<=, >=, =)
    3     constraint rhs
    4..6  variable type one-hot (binary, integer, continuous)
    7     lower bound
    8     upper bound
    9     objective coefficient

Maximisation objectives are negated so the encoder always sees a
minimisation; ``BipartiteGraph.negated_objective`` records the flip.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .mipmodel import SENSES, VAR_TYPES, MipInstance

N_FEATURES = 10
CONSTRAINT_COLS = slice(0, 4)
VARIABLE_COLS = slice(4, 10)
SCALED_COLS = (3, 7, 8, 9)
BOUND_CLIP = 1e6


@dataclass(frozen=True)
class FeatureScale:
    """Per-column affine map ``(x - mean) / std`` over the value columns.

    Statistics for column 3 come from constraint nodes only and for 7..9 from
    variable nodes only, so zero padding never enters the estimate.
    """

    mean: tuple[float, ...] = (0.0,) * N_FEATURES
    std: tuple[float, ...] = (1.0,) * N_FEATURES

    def to_dict(self) -> dict:
        return {"mean": list(self.mean), "std": list(self.std)}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureScale":
        return cls(tuple(float(v) for v in d["mean"]), tuple(float(v) for v in d["std"]))


@dataclass(frozen=True)
class BipartiteGraph:
    n_constraints: int
    n_variables: int
    node_features: np.ndarray          # (N, 10)
    edge_con: np.ndarray               # constraint node index per edge
    edge_var: np.ndarray               # variable node index per edge (offset by n_constraints)
    edge_weight: np.ndarray
    edge_norm_weight: np.ndarray       # weight / max |weight| in the constraint row
    negated_objective: bool = False
    name: str = ""
    scale: FeatureScale | None = None
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def n_nodes(self) -> int:
        return self.n_constraints + self.n_variables

    @property
    def n_edges(self) -> int:
        return len(self.edge_con)

    @property
    def variable_nodes(self) -> np.ndarray:
        return np.arange(self.n_constraints, self.n_nodes)

    def neighbor_index(self):
        """Directed message list ``(target, source, weight)`` over both edge directions."""
        if "nbr" not in self._cache:
            tgt = np.concatenate([self.edge_con, self.edge_var])
            src = np.concatenate([self.edge_var, self.edge_con])
            w = np.concatenate([self.edge_norm_weight, self.edge_norm_weight])
            self._cache["nbr"] = (tgt, src, w)
        return self._cache["nbr"]

    def degrees(self) -> np.ndarray:
        if "deg" not in self._cache:
            tgt, _, _ = self.neighbor_index()
            self._cache["deg"] = np.bincount(tgt, minlength=self.n_nodes)
        return self._cache["deg"]

    def edge_set(self) -> set[tuple[int, int]]:
        return set(zip(self.edge_con.tolist(), self.edge_var.tolist()))

    def dump_csv(self, out_dir) -> None:
        """Debug dump: ``nodes.csv`` (kind + features) and ``edges.csv``."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "nodes.csv", "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["node", "kind"] + [f"f{k}" for k in range(N_FEATURES)])
            for i, row in enumerate(self.node_features):
                kind = "constraint" if i < self.n_constraints else "variable"
                wr.writerow([i, kind] + [repr(float(v)) for v in row])
        with open(out / "edges.csv", "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["constraint_node", "variable_node", "weight"])
            for c, v, w in zip(self.edge_con, self.edge_var, self.edge_weight):
                wr.writerow([int(c), int(v), repr(float(w))])


def to_bipartite(instance: MipInstance) -> BipartiteGraph:
    m, n = instance.m, instance.n
    x = np.zeros((m + n, N_FEATURES))
    for i, con in enumerate(instance.constraints):
        x[i, SENSES.index(con.sense)] = 1.0
        x[i, 3] = con.rhs
    flip = not instance.is_minimize
    for j, var in enumerate(instance.variables):
        r = m + j
        x[r, 4 + VAR_TYPES.index(var.var_type)] = 1.0
        x[r, 7] = np.clip(var.lower_bound, -BOUND_CLIP, BOUND_CLIP)
        x[r, 8] = np.clip(var.upper_bound, -BOUND_CLIP, BOUND_CLIP)
        x[r, 9] = -var.objective_coeff if flip else var.objective_coeff
    if instance.coefficients:
        coef = np.array(instance.coefficients, dtype=float)
        ec = coef[:, 0].astype(np.int64)
        ev = coef[:, 1].astype(np.int64) + m
        ew = coef[:, 2].copy()
    else:
        ec = ev = np.zeros(0, dtype=np.int64)
        ew = np.zeros(0)
    row_max = np.zeros(m)
    np.maximum.at(row_max, ec, np.abs(ew))
    enw = ew / np.where(row_max[ec] > 0, row_max[ec], 1.0) if len(ew) else ew.copy()
    return BipartiteGraph(m, n, x, ec, ev, ew, enw, negated_objective=flip, name=instance.name)


def fit_feature_scale(corpus: list[BipartiteGraph]) -> FeatureScale:
    if not corpus:
        raise ValueError("cannot fit feature scaling on an empty corpus")
    mean = np.zeros(N_FEATURES)
    std = np.ones(N_FEATURES)
    cons = np.concatenate([g.node_features[: g.n_constraints] for g in corpus])
    vars_ = np.concatenate([g.node_features[g.n_constraints:] for g in corpus])
    for col in SCALED_COLS:
        vals = cons[:, col] if col == 3 else vars_[:, col]
        if vals.size == 0:
            continue
        mu = vals.mean()
        sd = vals.std()
        mean[col] = mu
        std[col] = sd if sd > 1e-12 else 1.0
    return FeatureScale(tuple(mean.tolist()), tuple(std.tolist()))


def apply_feature_scale(graph: BipartiteGraph, scale: FeatureScale) -> BipartiteGraph:
    x = graph.node_features.copy()
    mean = np.asarray(scale.mean)
    std = np.asarray(scale.std)
    c = graph.n_constraints
    x[:c, 3] = (x[:c, 3] - mean[3]) / std[3]
    for col in (7, 8, 9):
        x[c:, col] = (x[c:, col] - mean[col]) / std[col]
    return replace(graph, node_features=x, scale=scale, _cache={})
