"""Ranking metrics and the proxy A-distance domain-discrepancy probe."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata
from sklearn.linear_model import LogisticRegression
from sklearn.preprocessing import StandardScaler


def auc(scores, labels):
    """Probability a random positive outranks a random negative, ties half.

    Computed from rank statistics (Mann-Whitney U with average ranks).
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be 1-D and aligned")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC undefined: both classes must be present")
    ranks = rankdata(scores)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def accuracy(scores, labels, threshold=0.5):
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("accuracy undefined on empty input")
    return float(((scores >= threshold).astype(int) == labels).mean())


def proxy_a_distance(features_a, features_b, seed=0):
    """Domain discrepancy 2*(1-2*err) of a held-out linear domain classifier.

    Each feature set is split 50/50 (seeded); a logistic classifier is fit on
    the pooled train halves and its held-out error gives the distance,
    clamped to [0, 2].
    """
    a = np.asarray(features_a, dtype=float)
    b = np.asarray(features_b, dtype=float)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError("feature sets must be 2-D with equal width")
    if len(a) < 20 or len(b) < 20:
        raise ValueError("need at least 20 samples per domain")
    parts = {"train": [], "test": []}
    for label, feats in enumerate((a, b)):
        # permutation depends only on (seed, size): argument order is neutral
        order = np.random.default_rng([seed, len(feats)]).permutation(len(feats))
        half = len(feats) // 2
        for role, idx in (("train", order[:half]), ("test", order[half:])):
            parts[role].append((feats[idx], np.full(len(idx), label)))
    x_train = np.vstack([x for x, _ in parts["train"]])
    y_train = np.concatenate([y for _, y in parts["train"]])
    x_test = np.vstack([x for x, _ in parts["test"]])
    y_test = np.concatenate([y for _, y in parts["test"]])

    scaler = StandardScaler().fit(x_train)
    clf = LogisticRegression(max_iter=1000)
    clf.fit(scaler.transform(x_train), y_train)
    err = 1.0 - clf.score(scaler.transform(x_test), y_test)
    return float(min(max(2.0 * (1.0 - 2.0 * err), 0.0), 2.0))
