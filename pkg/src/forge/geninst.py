"""Synthetic MIP families: set cover, vertex cover, independent set, bin packing
and combinatorial auctions.

Each family has a parameterised builder (``set_cover(...)``, ``vertex_cover(...)``
and so on) plus :func:`gen_instance`, which maps a size tag to parameters and
draws them from a seeded generator.

Vertex cover and independent set built from the same ``(size, seed)`` use the
same Erdos-Renyi graph: the graph is drawn from ``default_rng([seed, 0])``
before anything family-specific happens.
"""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mipmodel import (
    BINARY, EQ, GE, LE, MAXIMIZE, MINIMIZE,
    ConstraintDef, MipInstance, VariableDef, read_mps, save_mps,
)

log = logging.getLogger(__name__)

FAMILIES = ("set_cover", "vertex_cover", "independent_set", "bin_packing", "comb_auction")
SIZES = ("easy", "medium", "hard")
FAMILY_ALIASES = {
    "sc": "set_cover", "vc": "vertex_cover", "mvc": "vertex_cover",
    "is": "independent_set", "mis": "independent_set",
    "bp": "bin_packing", "ca": "comb_auction",
}

# size tag -> family parameters; variable counts land in roughly
# easy 20-40, medium 60-120, hard 200-400
SIZE_PARAMS = {
    "set_cover": {
        "easy": dict(n_sets=(20, 30), elements_per_set=0.7, density=0.15),
        "medium": dict(n_sets=(70, 90), elements_per_set=1.0, density=0.06),
        "hard": dict(n_sets=(250, 320), elements_per_set=1.2, density=0.02),
    },
    # avg_degree controls Erdos-Renyi density
    "vertex_cover": {
        "easy": dict(n_nodes=(20, 30), avg_degree=3.0),
        "medium": dict(n_nodes=(70, 90), avg_degree=5.0),
        "hard": dict(n_nodes=(250, 320), avg_degree=6.0),
    },
    "bin_packing": {
        "easy": dict(n_items=(4, 5)),    # 20 or 30 variables
        "medium": dict(n_items=(8, 9)),  # 72 or 90
        "hard": dict(n_items=(15, 18)),  # 240 .. 342
    },
    "comb_auction": {
        "easy": dict(n_bids=(25, 35), n_items=(10, 15)),
        "medium": dict(n_bids=(70, 100), n_items=(30, 40)),
        "hard": dict(n_bids=(250, 320), n_items=(80, 100)),
    },
}
SIZE_PARAMS["independent_set"] = SIZE_PARAMS["vertex_cover"]


def canonical_family(family: str) -> str:
    fam = FAMILY_ALIASES.get(family.lower(), family.lower())
    if fam not in FAMILIES:
        raise ValueError(f"unknown family {family!r}; expected one of {FAMILIES}")
    return fam


def _check_size(size: str) -> str:
    if size not in SIZES:
        raise ValueError(f"unknown size {size!r}; expected one of {SIZES}")
    return size


def _binaries(prefix: str, count: int, cost=None) -> list[VariableDef]:
    cost = np.ones(count) if cost is None else cost
    return [VariableDef(f"{prefix}{j}", BINARY, 0.0, 1.0, float(cost[j])) for j in range(count)]


# ---------------------------------------------------------------------------
# formulations
# ---------------------------------------------------------------------------

def set_cover(subsets, n_elements: int, costs=None, name: str = "set_cover") -> MipInstance:
    """``min sum c_S x_S  s.t.  sum_{S ∋ e} x_S >= 1`` for every element."""
    variables = _binaries("x", len(subsets), costs)
    constraints, coeffs = [], []
    for e in range(n_elements):
        covering = [s for s, members in enumerate(subsets) if e in members]
        if not covering:
            raise ValueError(f"element {e} is not covered by any subset")
        constraints.append(ConstraintDef(f"cover{e}", GE, 1.0))
        coeffs.extend((e, s, 1.0) for s in covering)
    return MipInstance(name, MINIMIZE, variables, constraints, coeffs)


def vertex_cover(n_nodes: int, edges, name: str = "vertex_cover") -> MipInstance:
    """``min sum x_v  s.t.  x_u + x_v >= 1`` for every edge."""
    constraints = [ConstraintDef(f"edge{k}", GE, 1.0) for k in range(len(edges))]
    coeffs = [(k, u, 1.0) for k, (u, v) in enumerate(edges)] + \
             [(k, v, 1.0) for k, (u, v) in enumerate(edges)]
    return MipInstance(name, MINIMIZE, _binaries("x", n_nodes), constraints, coeffs)


def independent_set(n_nodes: int, edges, name: str = "independent_set") -> MipInstance:
    """``max sum x_v  s.t.  x_u + x_v <= 1`` for every edge."""
    constraints = [ConstraintDef(f"edge{k}", LE, 1.0) for k in range(len(edges))]
    coeffs = [(k, u, 1.0) for k, (u, v) in enumerate(edges)] + \
             [(k, v, 1.0) for k, (u, v) in enumerate(edges)]
    return MipInstance(name, MAXIMIZE, _binaries("x", n_nodes), constraints, coeffs)


def bin_packing(weights, capacity: float, n_bins: int | None = None,
                name: str = "bin_packing") -> MipInstance:
    """Two-index model: ``min sum y_j`` with assignment rows ``sum_j x_ij = 1``
    and capacity rows ``sum_i w_i x_ij - C y_j <= 0``."""
    weights = np.asarray(weights, dtype=float)
    m = len(weights)
    n_bins = m if n_bins is None else n_bins
    if weights.max(initial=0.0) > capacity:
        raise ValueError("an item is heavier than the bin capacity")
    if weights.sum() > capacity * n_bins:
        raise ValueError("total weight exceeds total capacity")
    variables = [VariableDef(f"x{i}_{j}", BINARY, 0.0, 1.0, 0.0)
                 for i in range(m) for j in range(n_bins)]
    variables += [VariableDef(f"y{j}", BINARY, 0.0, 1.0, 1.0) for j in range(n_bins)]
    constraints, coeffs = [], []
    for i in range(m):
        constraints.append(ConstraintDef(f"assign{i}", EQ, 1.0))
        coeffs.extend((i, i * n_bins + j, 1.0) for j in range(n_bins))
    for j in range(n_bins):
        r = m + j
        constraints.append(ConstraintDef(f"cap{j}", LE, 0.0))
        coeffs.extend((r, i * n_bins + j, float(weights[i])) for i in range(m))
        coeffs.append((r, m * n_bins + j, -float(capacity)))
    return MipInstance(name, MINIMIZE, variables, constraints, coeffs)


def comb_auction(bids, prices, n_items: int, name: str = "comb_auction") -> MipInstance:
    """``max sum p_b x_b  s.t.  sum_{b ∋ i} x_b <= 1`` for every item."""
    variables = _binaries("b", len(bids), prices)
    constraints, coeffs = [], []
    for item in range(n_items):
        holders = [b for b, bundle in enumerate(bids) if item in bundle]
        if not holders:
            continue
        r = len(constraints)
        constraints.append(ConstraintDef(f"item{item}", LE, 1.0))
        coeffs.extend((r, b, 1.0) for b in holders)
    return MipInstance(name, MAXIMIZE, variables, constraints, coeffs)


# ---------------------------------------------------------------------------
# random parameter draws
# ---------------------------------------------------------------------------

def erdos_renyi(n_nodes: int, edge_probability: float, rng: np.random.Generator):
    iu, ju = np.triu_indices(n_nodes, k=1)
    keep = rng.random(len(iu)) < edge_probability
    return [(int(u), int(v)) for u, v in zip(iu[keep], ju[keep])]


def _randint(rng, lo_hi):
    lo, hi = lo_hi
    return int(rng.integers(lo, hi + 1))


def random_graph(size: str, seed: int):
    """Graph shared by the vertex-cover / independent-set pair for ``seed``."""
    p = SIZE_PARAMS["vertex_cover"][_check_size(size)]
    rng = np.random.default_rng([seed, 0])
    n = _randint(rng, p["n_nodes"])
    edges = erdos_renyi(n, min(1.0, p["avg_degree"] / (n - 1)), rng)
    return n, edges


def random_set_cover(n_sets: int, n_elements: int, density: float, rng, name="set_cover"):
    """Column-density model with costs in 1..100; every element is covered."""
    subsets = [set() for _ in range(n_sets)]
    for e in range(n_elements):
        members = np.flatnonzero(rng.random(n_sets) < density)
        if members.size == 0:
            members = [int(rng.integers(n_sets))]
        for s in members:
            subsets[int(s)].add(e)
    costs = rng.integers(1, 101, size=n_sets).astype(float)
    return set_cover(subsets, n_elements, costs, name=name)


def random_bin_packing(n_items: int, rng, name="bin_packing"):
    capacity = 100.0
    weights = rng.integers(10, 61, size=n_items).astype(float)
    return bin_packing(weights, capacity, n_items, name=name)


def random_comb_auction(n_bids: int, n_items: int, rng, name="comb_auction"):
    """Bundles of 2-5 distinct items, price = bundle size plus uniform noise."""
    bids, prices = [], []
    for _ in range(n_bids):
        k = int(rng.integers(2, min(5, n_items) + 1))
        bids.append(set(rng.choice(n_items, size=k, replace=False).tolist()))
        prices.append(round(k + rng.uniform(-0.5, 0.5), 4))
    return comb_auction(bids, prices, n_items, name=name)


def gen_instance(family: str, size: str, seed: int) -> MipInstance:
    """Draw one instance of ``family`` at ``size``; deterministic per ``seed``."""
    fam = canonical_family(family)
    _check_size(size)
    name = f"{fam}_{size}_{seed}"
    p = SIZE_PARAMS[fam][size]
    if fam in ("vertex_cover", "independent_set"):
        n, edges = random_graph(size, seed)
        build = vertex_cover if fam == "vertex_cover" else independent_set
        return build(n, edges, name=name)
    rng = np.random.default_rng([seed, FAMILIES.index(fam) + 1])
    if fam == "set_cover":
        n_sets = _randint(rng, p["n_sets"])
        n_elements = max(2, int(round(p["elements_per_set"] * n_sets)))
        return random_set_cover(n_sets, n_elements, p["density"], rng, name=name)
    if fam == "bin_packing":
        return random_bin_packing(_randint(rng, p["n_items"]), rng, name=name)
    return random_comb_auction(_randint(rng, p["n_bids"]), _randint(rng, p["n_items"]), rng, name=name)


def tiny_instance(family: str, seed: int, max_vars: int = 20) -> MipInstance:
    """Pure-binary instance with at most ``max_vars`` variables (enumeration-sized)."""
    fam = canonical_family(family)
    if max_vars < 6:
        raise ValueError("max_vars must be at least 6")
    rng = np.random.default_rng([seed, 100 + FAMILIES.index(fam)])
    name = f"{fam}_tiny_{seed}"
    if fam in ("vertex_cover", "independent_set"):
        n = int(rng.integers(6, max_vars + 1))
        edges = erdos_renyi(n, min(1.0, 3.0 / (n - 1)), rng)
        return (vertex_cover if fam == "vertex_cover" else independent_set)(n, edges, name=name)
    if fam == "set_cover":
        n_sets = int(rng.integers(6, max_vars + 1))
        return random_set_cover(n_sets, max(2, int(0.8 * n_sets)), 0.25, rng, name=name)
    if fam == "bin_packing":
        # n items -> n*n + n variables
        n_items = max(2, int((np.sqrt(1 + 4 * max_vars) - 1) // 2))
        return random_bin_packing(int(rng.integers(2, n_items + 1)), rng, name=name)
    n_bids = int(rng.integers(6, max_vars + 1))
    return random_comb_auction(n_bids, int(rng.integers(4, 9)), rng, name=name)


# ---------------------------------------------------------------------------
# corpora on disk
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ManifestEntry:
    path: str
    family: str
    size: str
    seed: int

    @property
    def label(self) -> str:
        return f"{self.family}/{self.size}"


@dataclass
class CorpusManifest:
    entries: list[ManifestEntry]
    root: Path | None = None

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def resolve(self, entry: ManifestEntry) -> Path:
        p = Path(entry.path)
        if not p.is_absolute() and self.root is not None:
            p = self.root / p
        return p

    def load(self, entry: ManifestEntry) -> MipInstance:
        return read_mps(self.resolve(entry))

    def instances(self) -> list[MipInstance]:
        return [self.load(e) for e in self.entries]

    def labels(self) -> list[str]:
        return [e.label for e in self.entries]

    def write(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["path", "family", "size", "seed"])
            for e in self.entries:
                wr.writerow([e.path, e.family, e.size, e.seed])

    @classmethod
    def read(cls, path) -> "CorpusManifest":
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        entries = []
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                fam = canonical_family(row["family"])
                size = _check_size(row["size"])
                entries.append(ManifestEntry(row["path"], fam, size, int(row["seed"])))
        manifest = cls(entries, root=path.parent)
        missing = [e.path for e in entries if not manifest.resolve(e).exists()]
        if missing:
            raise FileNotFoundError(f"manifest references missing files: {missing[:3]}")
        return manifest


MANIFEST_NAME = "manifest.csv"


def instance_seed(master_seed: int, family: str, size: str, index: int) -> int:
    """Per-instance seed: a stable function of the master seed and the slot."""
    ss = np.random.SeedSequence([master_seed, FAMILIES.index(family), SIZES.index(size), index])
    return int(ss.generate_state(1)[0])


def gen_corpus(spec, seed: int, out_dir) -> CorpusManifest:
    """Write ``count`` MPS files per ``(family, size, count)`` and a manifest.

    Vertex-cover and independent-set slots with the same size and index get
    the same instance seed, so they share a graph.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for family, size, count in spec:
        fam = canonical_family(family)
        _check_size(size)
        seed_family = "vertex_cover" if fam == "independent_set" else fam
        for idx in range(int(count)):
            s = instance_seed(seed, seed_family, size, idx)
            inst = gen_instance(fam, size, s)
            fname = f"{fam}_{size}_{idx:04d}.mps"
            save_mps(inst, out_dir / fname)
            entries.append(ManifestEntry(fname, fam, size, s))
    manifest = CorpusManifest(entries, root=out_dir)
    manifest.write(out_dir / MANIFEST_NAME)
    log.info("wrote %d instances to %s", len(entries), os.fspath(out_dir))
    return manifest
