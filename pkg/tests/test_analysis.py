import numpy as np
import pytest
from hypothesis import given, strategies as st
from sklearn.metrics import normalized_mutual_info_score

from forge.analysis import (cosine_distance, kmeans, nmi, pca_project, vector_arith, write_cluster_csv,
                            write_projection_csv)

labels = st.lists(st.integers(0, 4), min_size=1, max_size=40)


def test_nmi_examples():
    assert nmi([0, 1, 2, 0], [0, 1, 2, 0]) == 1.0
    assert nmi([0, 1, 2, 0], [7, 7, 7, 7]) == 0.0
    assert nmi([0, 0, 1, 1], [1, 1, 0, 0]) == 1.0


@given(st.data())
def test_nmi_matches_reference(data):
    t = data.draw(labels)
    p = data.draw(st.lists(st.integers(0, 4), min_size=len(t), max_size=len(t)))
    ref = normalized_mutual_info_score(t, p, average_method="arithmetic")
    assert nmi(t, p) == pytest.approx(ref, abs=1e-12)


@given(labels, st.permutations(range(5)))
def test_nmi_relabel_invariance_and_symmetry(t, perm):
    p = [perm[v] for v in t]
    assert nmi(t, p) == 1.0
    q = [(v * 3 + 1) % 5 for v in t[::-1]]
    assert nmi(t, q) == nmi(q, t)


def test_nmi_input_checks():
    with pytest.raises(ValueError):
        nmi([0, 1], [0])
    with pytest.raises(ValueError):
        nmi([], [])


def blobs(centers, per, seed=0, spread=0.1):
    rng = np.random.default_rng(seed)
    X = np.concatenate([c + spread * rng.normal(size=(per, len(c))) for c in centers])
    y = np.repeat(np.arange(len(centers)), per)
    return X, y


def test_kmeans_separable_blobs():
    X, y = blobs([np.zeros(2), np.full(2, 10.0)], 20)
    res = kmeans(X, 2, runs=5, seed=1, truth=y)
    assert res.nmi_vs_truth == 1.0 and res.best_run_nmi == 1.0
    assert len(res.run_nmis) == 5


def test_kmeans_single_cluster():
    X, y = blobs([np.zeros(2), np.full(2, 5.0)], 10)
    res = kmeans(X, 1, runs=3, truth=y)
    assert set(res.assignments.tolist()) == {0}
    assert res.nmi_vs_truth == 0.0


def test_kmeans_best_of_runs_inertia():
    X, y = blobs([np.zeros(2), np.array([3.0, 0]), np.array([0, 3.0])], 15, spread=1.0)
    many = kmeans(X, 3, runs=10, seed=2)
    one = kmeans(X, 3, runs=1, seed=2)
    assert many.inertia <= one.inertia + 1e-12
    assert many.inertia == min(many.run_inertias)
    # the reported inertia is the within-cluster sum of squares of the assignments
    wss = sum(((X[many.assignments == c] - X[many.assignments == c].mean(0)) ** 2).sum() for c in range(3))
    assert many.inertia == pytest.approx(wss, rel=1e-9)


def test_kmeans_deterministic_per_seed():
    X, _ = blobs([np.zeros(3), np.ones(3)], 10, spread=1.0)
    a, b = kmeans(X, 2, seed=4), kmeans(X, 2, seed=4)
    assert np.array_equal(a.assignments, b.assignments) and a.run_inertias == b.run_inertias


def test_kmeans_too_few_points():
    with pytest.raises(ValueError):
        kmeans(np.zeros((5, 2)), 2)
    with pytest.raises(ValueError):
        kmeans(np.zeros((1, 2)), 2)


def test_pca_plane_in_5d():
    rng = np.random.default_rng(0)
    basis = np.linalg.qr(rng.normal(size=(5, 2)))[0].T
    X = rng.normal(size=(30, 2)) @ basis + 3.0
    p = pca_project(X)
    assert p.explained_variance_ratio.sum() == pytest.approx(1.0, abs=1e-12)


def test_pca_duplicate_rows():
    p = pca_project(np.ones((4, 3)))
    assert np.all(p.points == 0) and np.all(p.explained_variance_ratio == 0)


def test_pca_three_points_closed_form():
    X = np.array([[0.0, 0.0], [2.0, 0.0], [4.0, 0.0]])
    p = pca_project(X)
    assert np.allclose(p.points[:, 0], [-2.0, 0.0, 2.0])
    assert np.allclose(p.points[:, 1], 0.0)
    assert np.allclose(p.explained_variance_ratio, [1.0, 0.0])


def test_vector_arith():
    E = np.array([[1.0, 2.0], [3.0, 4.0]])
    same = np.array([[1.0, 1.0], [3.0, 3.0]])
    assert np.array_equal(vector_arith(E, same, same[::-1]), E)
    A = np.array([[4.0, 0.0], [6.0, 0.0]])
    B = np.array([[0.0, 1.0]])
    # direction = mean(A) - mean(B) = (5, -1)
    assert np.array_equal(vector_arith(E, A, B), E - np.array([5.0, -1.0]))
    with pytest.raises(ValueError):
        vector_arith(E, np.zeros((1, 3)), B)


def test_cosine_distance():
    d = cosine_distance(np.array([[1.0, 0.0], [0.0, 2.0], [-1.0, 0.0], [0.0, 0.0]]), np.array([3.0, 0.0]))
    assert np.allclose(d, [0.0, 1.0, 2.0, 1.0])


def test_csv_writers(tmp_path):
    write_cluster_csv(tmp_path / "c.csv", ["a", "b"], ["sc", "vc"], ["easy", "easy"], [1, 0])
    assert (tmp_path / "c.csv").read_text().splitlines() == ["instance,family,size,cluster",
                                                             "a,sc,easy,1", "b,vc,easy,0"]
    write_projection_csv(tmp_path / "p.csv", ["a"], np.array([[0.5, -1.0]]))
    assert (tmp_path / "p.csv").read_text().splitlines()[1].startswith("a,0.5,")
