"""Concept clustering into cross-domain prototypes and target-table seeding."""

from __future__ import annotations

import numpy as np


class ClusteringError(ValueError):
    pass


def _sse(points, centroids, labels):
    return float(((points - centroids[labels]) ** 2).sum())


def _plus_plus_init(points, k, rng):
    n = len(points)
    centroids = np.empty((k, points.shape[1]), dtype=float)
    centroids[0] = points[rng.integers(n)]
    d2 = ((points - centroids[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            centroids[i] = points[rng.integers(n)]
        else:
            centroids[i] = points[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, ((points - centroids[i]) ** 2).sum(axis=1))
    return centroids


def kmeans(points, k=5, seed=0, max_iters=300, tol=1e-6, restarts=16):
    """Lloyd k-means with k-means++ seeding and deterministic restarts.

    Returns (assignment, centroids) with assignment a one-hot (k, n) matrix.
    Best restart is the lowest SSE, ties broken by restart order.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim != 2:
        raise ClusteringError("points must be a 2-D array")
    n = len(points)
    if n < k:
        raise ClusteringError(f"need at least k={k} points, got {n}")
    rng = np.random.default_rng(seed)
    best = None
    for restart in range(restarts):
        labels, centroids, sse = _lloyd_run(points, k, rng, max_iters, tol)
        if best is None or sse < best[0]:
            best = (sse, labels, centroids)
    _, labels, centroids = best
    assignment = np.zeros((k, n), dtype=np.int8)
    assignment[labels, np.arange(n)] = 1
    return assignment, centroids


def _lloyd_run(points, k, rng, max_iters, tol):
    n = len(points)
    centroids = _plus_plus_init(points, k, rng)
    prev_sse = np.inf
    labels = np.zeros(n, dtype=int)
    for _ in range(max_iters):
        dists = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        labels = dists.argmin(axis=1)  # ties -> lowest cluster index
        # Repair empty clusters: steal the point farthest from its centroid
        # (among clusters that can spare one) so k stays fixed.
        sizes = np.bincount(labels, minlength=k)
        for empty in np.flatnonzero(sizes == 0):
            own_d = dists[np.arange(n), labels].copy()
            own_d[sizes[labels] <= 1] = -np.inf
            moved = int(own_d.argmax())
            sizes[labels[moved]] -= 1
            labels[moved] = empty
            sizes[empty] = 1
        new_centroids = np.stack([points[labels == i].mean(axis=0)
                                  for i in range(k)])
        sse = _sse(points, new_centroids, labels)
        if not sse <= prev_sse + 1e-9:
            raise AssertionError(f"k-means SSE increased: {prev_sse} -> {sse}")
        shift = np.sqrt(((new_centroids - centroids) ** 2).sum(axis=1)).max()
        centroids = new_centroids
        prev_sse = sse
        if shift < tol:
            break
    return labels, centroids, prev_sse


def build_prototypes(concept_tables, k=5, seed=0, max_iters=300, tol=1e-6,
                     restarts=16):
    """Cluster the row-concatenation of all source concept tables.

    Returns (prototypes, assignment): prototypes are the exact
    assignment-weighted means, so prototypes[i] * count_i == (A @ E)[i].
    """
    tables = [np.asarray(t, dtype=float) for t in concept_tables]
    widths = {t.shape[1] for t in tables}
    if len(widths) != 1:
        raise ClusteringError("all concept tables must share one width")
    concat = np.concatenate(tables, axis=0)
    if len(concat) < k:
        raise ClusteringError(f"total concepts {len(concat)} < k={k}")
    assignment, _ = kmeans(concat, k=k, seed=seed, max_iters=max_iters,
                           tol=tol, restarts=restarts)
    counts = assignment.sum(axis=1).astype(float)
    prototypes = (assignment.astype(float) @ concat) / counts[:, None]
    return prototypes, assignment


def init_target_table(prototypes, n_c_target, seed=0):
    """Seed each target concept row with a uniformly chosen prototype row.

    Sampling is with replacement (required whenever n_c_target > k).
    Returns (embeddings, choices).
    """
    prototypes = np.asarray(prototypes, dtype=float)
    k = len(prototypes)
    if k < 1:
        raise ClusteringError("need at least one prototype")
    rng = np.random.default_rng(seed)
    choices = rng.integers(0, k, size=n_c_target)
    return prototypes[choices].copy(), choices
