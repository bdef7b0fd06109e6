"""Clustering evaluation, PCA projection and embedding vector arithmetic."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.cluster import KMeans


@dataclass
class ClusterResult:
    assignments: np.ndarray          # best-inertia run
    inertia: float
    nmi_vs_truth: float | None       # mean over runs
    runs: int
    seed: int
    run_nmis: list[float] = field(default_factory=list)
    run_inertias: list[float] = field(default_factory=list)

    @property
    def best_run_nmi(self) -> float | None:
        if not self.run_nmis:
            return None
        return self.run_nmis[int(np.argmin(self.run_inertias))]


def _entropy(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    # fsum is exactly rounded, so the result does not depend on label order
    return -math.fsum((p * np.log(p)).tolist())


def nmi(truth, predicted) -> float:
    """Mutual information over the arithmetic mean of the two entropies (natural log).

    Exactly symmetric and invariant to relabelling. Two single-cluster
    labelings are the same partition and score 1; a single cluster against
    anything finer scores 0.
    """
    truth = np.asarray(truth)
    predicted = np.asarray(predicted)
    if truth.shape != predicted.shape or truth.ndim != 1:
        raise ValueError("label arrays must be 1-D and of equal length")
    if truth.size == 0:
        raise ValueError("empty labelings")
    _, t = np.unique(truth, return_inverse=True)
    _, p = np.unique(predicted, return_inverse=True)
    joint = np.zeros((t.max() + 1, p.max() + 1))
    np.add.at(joint, (t, p), 1.0)
    if joint.shape == (1, 1):
        return 1.0
    h_t = _entropy(joint.sum(1))
    h_p = _entropy(joint.sum(0))
    denom = 0.5 * (h_t + h_p)
    if denom <= 0.0:
        return 0.0
    n = truth.size
    rows, cols = np.nonzero(joint)
    p = joint[rows, cols] / n
    p_t = joint.sum(1) / n
    p_p = joint.sum(0) / n
    # one exactly rounded sum of p log p - p log p_t - p log p_p; identical
    # partitions cancel to the entropy itself and the score is exactly 1
    terms = np.concatenate([p * np.log(p), -p * np.log(p_t[rows]), -p * np.log(p_p[cols])])
    mi = math.fsum(terms.tolist())
    return float(min(max(mi / denom, 0.0), 1.0))


def kmeans(X, k_clusters: int, runs: int = 10, seed: int = 0, truth=None) -> ClusterResult:
    """k-means++ seeded Lloyd runs; keeps the lowest-inertia run."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or len(X) < k_clusters:
        raise ValueError("need at least k_clusters rows")
    if k_clusters < 1 or runs < 1:
        raise ValueError("k_clusters and runs must be positive")
    if len(np.unique(X, axis=0)) < k_clusters:
        raise ValueError(f"only {len(np.unique(X, axis=0))} distinct points for {k_clusters} clusters")
    seeds = np.random.SeedSequence(seed).generate_state(runs)
    best = None
    nmis, inertias = [], []
    for s in seeds:
        km = KMeans(n_clusters=k_clusters, init="k-means++", n_init=1, max_iter=300, tol=0.0,
                    random_state=int(s), algorithm="lloyd").fit(X)
        inertias.append(float(km.inertia_))
        if truth is not None:
            nmis.append(nmi(truth, km.labels_))
        if best is None or km.inertia_ < best.inertia_:
            best = km
    mean_nmi = float(np.mean(nmis)) if nmis else None
    return ClusterResult(best.labels_.astype(np.int64), float(best.inertia_), mean_nmi, runs, seed,
                         nmis, inertias)


@dataclass
class Projection:
    points: np.ndarray
    explained_variance_ratio: np.ndarray
    components: np.ndarray


def pca_project(X, dims: int = 2) -> Projection:
    X = np.asarray(X, dtype=np.float64)
    if len(X) < 2:
        raise ValueError("need at least two rows")
    Xc = X - X.mean(axis=0)
    _, s, vt = np.linalg.svd(Xc, full_matrices=False)
    dims = min(dims, vt.shape[0])
    comps = vt[:dims].copy()
    # sign convention: largest-magnitude loading of each component is positive
    for i, c in enumerate(comps):
        if c[np.argmax(np.abs(c))] < 0:
            comps[i] = -c
    var = s ** 2
    total = var.sum()
    ratio = var[:dims] / total if total > 0 else np.zeros(dims)
    return Projection(Xc @ comps.T, ratio, comps)


def vector_arith(minuend, subtrahend_source, addend_source) -> np.ndarray:
    """``minuend - (mean(subtrahend_source) - mean(addend_source))`` row by row."""
    E = np.atleast_2d(np.asarray(minuend, dtype=np.float64))
    A = np.atleast_2d(np.asarray(subtrahend_source, dtype=np.float64))
    B = np.atleast_2d(np.asarray(addend_source, dtype=np.float64))
    if min(E.size, A.size, B.size) == 0:
        raise ValueError("embedding sets must be nonempty")
    if not E.shape[1] == A.shape[1] == B.shape[1]:
        raise ValueError("embedding lengths differ")
    direction = A.mean(axis=0) - B.mean(axis=0)
    return E - direction


def cosine_distance(X, y) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    denom = np.linalg.norm(X, axis=1) * np.linalg.norm(y)
    sim = np.where(denom > 0, X @ y / np.where(denom > 0, denom, 1.0), 0.0)
    return 1.0 - sim


def write_cluster_csv(path, names, families, sizes, assignments) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["instance", "family", "size", "cluster"])
        for row in zip(names, families, sizes, assignments):
            wr.writerow([row[0], row[1], row[2], int(row[3])])


def write_projection_csv(path, names, points) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["instance", "x", "y"])
        for name, p in zip(names, points):
            y = p[1] if len(p) > 1 else 0.0
            wr.writerow([name, repr(float(p[0])), repr(float(y))])
