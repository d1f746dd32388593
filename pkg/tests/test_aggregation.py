from itertools import product

import numpy as np
import pytest

from crosskt.aggregation import (ClusteringError, build_prototypes,
                                 init_target_table, kmeans)


def exhaustive_min_sse(points, k):
    """Minimum within-cluster SSE over every partition into k non-empty sets."""
    n = len(points)
    best = np.inf
    for labels in product(range(k), repeat=n):
        if len(set(labels)) != k:
            continue
        labels = np.array(labels)
        sse = 0.0
        for c in range(k):
            members = points[labels == c]
            sse += ((members - members.mean(axis=0)) ** 2).sum()
        best = min(best, sse)
    return best


def assignment_sse(points, assignment):
    labels = assignment.argmax(axis=0)
    sse = 0.0
    for c in range(assignment.shape[0]):
        members = points[labels == c]
        if len(members):
            sse += ((members - members.mean(axis=0)) ** 2).sum()
    return sse


def test_single_cluster_is_global_mean():
    points = np.random.default_rng(0).normal(size=(6, 3))
    assignment, centroids = kmeans(points, k=1, seed=0)
    assert assignment.sum() == 6
    assert np.allclose(centroids[0], points.mean(axis=0))


def test_two_separated_blobs_recovered():
    points = np.array([[0.0, 0.0], [0.1, 0.0], [5.0, 5.0], [5.1, 5.0]])
    assignment, centroids = kmeans(points, k=2, seed=0)
    labels = assignment.argmax(axis=0)
    assert labels[0] == labels[1] and labels[2] == labels[3]
    assert labels[0] != labels[2]
    assert assignment_sse(points, assignment) == pytest.approx(
        exhaustive_min_sse(points, 2), abs=1e-12)


def test_matches_exhaustive_minimum_on_20_instances():
    rng = np.random.default_rng(12345)
    for trial in range(20):
        n = int(rng.integers(4, 9))
        d = int(rng.integers(1, 4))
        k = int(rng.integers(2, min(n, 4) + 1))
        points = rng.normal(size=(n, d))
        assignment, _ = kmeans(points, k=k, seed=trial, restarts=16)
        got = assignment_sse(points, assignment)
        want = exhaustive_min_sse(points, k)
        assert got == pytest.approx(want, abs=1e-9), (trial, n, d, k)


def test_assignment_is_one_hot_and_no_empty_rows():
    rng = np.random.default_rng(5)
    points = rng.normal(size=(30, 4))
    assignment, _ = kmeans(points, k=5, seed=0)
    assert assignment.shape == (5, 30)
    assert np.all(assignment.sum(axis=0) == 1)
    assert np.all(assignment.sum(axis=1) >= 1)


def test_duplicate_points_trigger_empty_cluster_repair():
    points = np.zeros((4, 2))  # all identical: k-means++ collapses
    assignment, centroids = kmeans(points, k=2, seed=0)
    assert np.all(assignment.sum(axis=1) >= 1)
    assert np.all(assignment.sum(axis=0) == 1)


def test_determinism_and_too_few_points():
    points = np.random.default_rng(1).normal(size=(8, 2))
    a1, c1 = kmeans(points, k=3, seed=9)
    a2, c2 = kmeans(points, k=3, seed=9)
    assert np.array_equal(a1, a2) and np.array_equal(c1, c2)
    with pytest.raises(ClusteringError):
        kmeans(points[:2], k=3)


def test_build_prototypes_identical_tables():
    table = np.array([[2.0, -1.0]])
    protos, assignment = build_prototypes([table, table], k=1, seed=0)
    assert np.allclose(protos[0], [2.0, -1.0])
    assert assignment.shape == (1, 2)


def test_prototype_rows_are_exact_weighted_means():
    rng = np.random.default_rng(2)
    tables = [rng.normal(size=(10, 4)) for _ in range(4)]
    protos, assignment = build_prototypes(tables, k=5, seed=0)
    concat = np.concatenate(tables, axis=0)
    counts = assignment.sum(axis=1)
    assert np.all(counts >= 1)
    assert np.all(assignment.sum(axis=0) == 1)
    # prototype * count equals the assignment-weighted sum (identity holds
    # to machine rounding of the divide-multiply roundtrip)
    weighted = assignment.astype(float) @ concat
    assert np.allclose(protos * counts[:, None], weighted, rtol=0, atol=1e-12)


def test_build_prototypes_validates():
    with pytest.raises(ClusteringError):
        build_prototypes([np.zeros((2, 3)), np.zeros((2, 4))], k=2)
    with pytest.raises(ClusteringError):
        build_prototypes([np.zeros((1, 3))], k=5)


def test_init_target_table_copies_prototype_rows():
    protos = np.arange(15, dtype=float).reshape(5, 3)
    emb, choices = init_target_table(protos, n_c_target=40, seed=3)
    assert emb.shape == (40, 3)
    assert np.array_equal(emb, protos[choices])
    emb2, choices2 = init_target_table(protos, n_c_target=40, seed=3)
    assert np.array_equal(choices, choices2)


def test_single_prototype_fills_all_rows():
    protos = np.array([[1.0, 2.0]])
    emb, choices = init_target_table(protos, n_c_target=7, seed=0)
    assert np.all(choices == 0)
    assert np.allclose(emb, protos[0])


def test_init_choice_distribution_uniform():
    protos = np.zeros((5, 2))
    counts = np.zeros(5)
    for seed in range(1000):
        _, choices = init_target_table(protos, n_c_target=40, seed=seed)
        counts += np.bincount(choices, minlength=5)
    expected = counts.sum() / 5.0
    chi2 = ((counts - expected) ** 2 / expected).sum()
    # 4 dof; a fair sampler exceeds 50 with probability < 4e-10
    assert chi2 < 50.0
