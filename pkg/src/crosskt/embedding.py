"""Concept embedding tables and question representations for every phase.

A question is represented as the mean of its concepts' embeddings. After
clustering, source questions are re-represented over prototype rows; target
questions blend their own concept mean with the nearest prototype.
"""

from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn


class EmbeddingError(ValueError):
    pass


def uniform_embeddings(n, d, dtype=torch.float64):
    """Zero-mean uniform init with scale 1/sqrt(d) (uses the torch seed)."""
    bound = 1.0 / math.sqrt(d)
    e = torch.empty(n, d, dtype=dtype)
    nn.init.uniform_(e, -bound, bound)
    return e


class ConceptTable(nn.Module):
    """One domain's learnable concept embedding matrix."""

    def __init__(self, n_concepts, d, domain_id, dtype=torch.float64):
        super().__init__()
        self.domain_id = domain_id
        self.embeddings = nn.Parameter(uniform_embeddings(n_concepts, d, dtype))

    @property
    def trainable(self):
        return self.embeddings.requires_grad


class PrototypeTable(nn.Module):
    """Cross-domain concept prototypes plus the cluster assignment matrix."""

    def __init__(self, embeddings, assignment, dtype=torch.float64):
        super().__init__()
        assignment = np.asarray(assignment, dtype=np.int8)
        embeddings = torch.as_tensor(np.asarray(embeddings), dtype=dtype)
        if assignment.shape[0] != embeddings.shape[0]:
            raise EmbeddingError("assignment rows must match prototype count")
        if (assignment.sum(axis=0) != 1).any():
            raise EmbeddingError("every concept must sit in exactly one cluster")
        if (assignment.sum(axis=1) == 0).any():
            raise EmbeddingError("empty prototype cluster")
        self.embeddings = nn.Parameter(embeddings)
        self.assignment = assignment

    @property
    def k(self):
        return self.embeddings.shape[0]


class TargetConceptTable(nn.Module):
    """Target-domain concept embeddings seeded from prototype rows."""

    def __init__(self, embeddings, init_choices, lam, dtype=torch.float64):
        super().__init__()
        if not 0.0 <= lam <= 1.0:
            raise EmbeddingError("lambda must lie in [0, 1]")
        self.embeddings = nn.Parameter(
            torch.as_tensor(np.asarray(embeddings), dtype=dtype))
        self.init_choices = np.asarray(init_choices, dtype=np.int64)
        self.lam = float(lam)


def question_mean_operator(q_matrix, dtype=torch.float64):
    """(n_q, n_c) operator averaging concept rows per question column."""
    q = np.asarray(q_matrix, dtype=float)
    degree = q.sum(axis=0)
    if (degree == 0).any():
        raise EmbeddingError("question with no concepts (q_matrix zero column)")
    return torch.as_tensor((q / degree).T, dtype=dtype)


def question_embedding(question, q_matrix, concept_embeddings):
    """Mean of the embeddings of the concepts attached to the question."""
    concepts = np.flatnonzero(np.asarray(q_matrix)[:, question])
    if concepts.size == 0:
        raise EmbeddingError(f"question {question} maps to no concept")
    return concept_embeddings[torch.as_tensor(concepts)].mean(dim=0)


def question_response_embedding(e_q, r):
    """Concatenate the question embedding into the response-indexed half."""
    if r not in (0, 1):
        raise EmbeddingError(f"response must be 0 or 1, got {r!r}")
    zeros = torch.zeros_like(e_q)
    return torch.cat([e_q, zeros]) if r == 1 else torch.cat([zeros, e_q])


def proto_q_matrix(assignment_slice, q_matrix):
    """Binarized prototype-question incidence: 1 iff any of the question's
    concepts belongs to the prototype (the raw product counts multiplicity)."""
    a = np.asarray(assignment_slice)
    q = np.asarray(q_matrix)
    if a.ndim != 2 or q.ndim != 2 or a.shape[1] != q.shape[0]:
        raise EmbeddingError(f"shape mismatch: assignment {a.shape} vs "
                             f"q_matrix {q.shape}")
    return ((a.astype(np.int64) @ q.astype(np.int64)) > 0).astype(np.int8)


def prototype_question_embedding(question, proto_q, prototypes):
    """Mean of the prototype embeddings linked to the question."""
    rows = np.flatnonzero(np.asarray(proto_q)[:, question])
    if rows.size == 0:
        raise EmbeddingError(f"question {question} maps to no prototype")
    return prototypes[torch.as_tensor(rows)].mean(dim=0)


def target_question_embedding(question, q_matrix, target_embeddings,
                              prototypes, lam):
    """Blend the target concept mean with its nearest prototype.

    The argmin is over squared Euclidean distance on the detached concept
    mean (ties -> lowest prototype index); gradients flow through both blend
    terms but never through the selection.
    """
    e_q = question_embedding(question, q_matrix, target_embeddings)
    d2 = ((e_q.detach() - prototypes) ** 2).sum(dim=-1)
    j = int(torch.argmin(d2))
    return (1.0 - lam) * prototypes[j] + lam * e_q, j
