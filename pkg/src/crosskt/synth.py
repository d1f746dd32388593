"""Multi-domain student simulator with latent per-concept mastery dynamics.

Each concept starts unlearned and flips to learned with a fixed probability
on every exposure (no forgetting). A question is answered correctly with
probability 1-slip when all its concepts are mastered, else guess; a
domain-level logit offset shifts both. Per-step true probabilities are
returned for oracle tests.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .data import (DomainDataset, DomainSpec, Interaction, split_by_student,
                   window_and_filter)


@dataclass(frozen=True)
class SyntheticDomainConfig:
    domain_id: int
    n_students: int
    n_questions: int
    n_concepts: int
    concepts_per_question: tuple = (1, 3)
    learn_rate: float = 0.1
    guess: float = 0.2
    slip: float = 0.1
    difficulty_shift: float = 0.0
    seed: int = 0
    steps_per_student: tuple = (40, 60)

    def __post_init__(self):
        for name in ("learn_rate", "guess", "slip"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
        if 1.0 - self.slip < self.guess:
            raise ValueError("mastery must not hurt: need 1-slip >= guess")
        if self.n_questions < 1 or self.n_concepts < 1 or self.n_students < 1:
            raise ValueError("degenerate config: counts must be positive")
        lo, hi = self.concepts_per_question
        if not (1 <= lo <= hi <= self.n_concepts):
            raise ValueError("concepts_per_question range invalid")
        lo, hi = self.steps_per_student
        if not (1 <= lo <= hi):
            raise ValueError("steps_per_student range invalid")


def _shift_probability(p, shift):
    # Logit-space domain offset; exact 0/1 stay put (infinite logits).
    if shift == 0.0 or p <= 0.0 or p >= 1.0:
        return min(max(p, 0.0), 1.0)
    return 1.0 / (1.0 + math.exp(-(math.log(p / (1.0 - p)) + shift)))


def generate_domain(config):
    """Simulate one domain.

    Returns (DomainSpec, interactions, ground_truth) where ground_truth maps
    (student_id, position) to the true correctness probability at that step.
    """
    rng = np.random.default_rng(config.seed)
    lo, hi = config.concepts_per_question
    question_concepts = []
    q_matrix = np.zeros((config.n_concepts, config.n_questions), dtype=np.int8)
    for q in range(config.n_questions):
        k = int(rng.integers(lo, hi + 1))
        concepts = rng.choice(config.n_concepts, size=k, replace=False)
        question_concepts.append(np.sort(concepts))
        q_matrix[concepts, q] = 1
    spec = DomainSpec(domain_id=config.domain_id,
                      n_questions=config.n_questions,
                      n_concepts=config.n_concepts, q_matrix=q_matrix)

    p_mastered = 1.0 - config.slip
    s_lo, s_hi = config.steps_per_student
    interactions = []
    ground_truth = {}
    for s in range(config.n_students):
        student = f"d{config.domain_id}s{s}"
        mastered = np.zeros(config.n_concepts, dtype=bool)
        n_steps = int(rng.integers(s_lo, s_hi + 1))
        for pos in range(n_steps):
            q = int(rng.integers(config.n_questions))
            concepts = question_concepts[q]
            base = p_mastered if mastered[concepts].all() else config.guess
            p = _shift_probability(base, config.difficulty_shift)
            correct = int(rng.random() < p)
            interactions.append(Interaction(
                student_id=student, question_id=q,
                concept_ids=frozenset(concepts.tolist()), correct=correct,
                position=pos))
            ground_truth[(student, pos)] = p
            # Answer first, then learning transitions on the exposed concepts.
            for c in concepts:
                if not mastered[c] and rng.random() < config.learn_rate:
                    mastered[c] = True
    return spec, interactions, ground_truth


def build_dataset(config, window_length=200, min_total=20, ratio=0.8,
                  split_seed=None):
    """Simulate, window, and split one domain into a DomainDataset."""
    spec, interactions, ground_truth = generate_domain(config)
    sequences = window_and_filter(interactions, config.domain_id,
                                  window_length=window_length,
                                  min_total=min_total)
    seed = config.seed if split_seed is None else split_seed
    split = split_by_student(sequences, ratio=ratio, seed=seed)
    return DomainDataset(spec=spec, split=split, ground_truth=ground_truth)


def generate_multisource(configs, target_config, window_length=200,
                         min_total=20, ratio=0.8):
    """Simulate several source domains plus one data-scarce target domain."""
    if len(configs) < 2:
        raise ValueError("need at least 2 source domains")
    ids = [c.domain_id for c in configs] + [target_config.domain_id]
    if len(set(ids)) != len(ids):
        raise ValueError("domain ids must be unique")
    sources = [build_dataset(c, window_length, min_total, ratio)
               for c in configs]
    target = build_dataset(target_config, window_length, min_total, ratio)
    return sources, target


def write_csv(interactions, path):
    """Write interactions in the canonical CSV schema (file order per student
    is chronological because generation emits each student contiguously)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("student_id,question_id,concept_ids,correct\n")
        for it in interactions:
            concepts = ";".join(str(c) for c in sorted(it.concept_ids))
            fh.write(f"{it.student_id},{it.question_id},{concepts},{it.correct}\n")


def write_ground_truth(ground_truth, path):
    """Ground-truth sidecar: JSON lines {student, position, p}."""
    with open(path, "w", encoding="utf-8") as fh:
        for (student, position), p in ground_truth.items():
            fh.write(json.dumps({"student": student, "position": position,
                                 "p": p}) + "\n")


def load_ground_truth(path):
    ground_truth = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            ground_truth[(rec["student"], rec["position"])] = rec["p"]
    return ground_truth


def truth_scores(ground_truth, sequences, skip_first=True):
    """Align true probabilities with realized responses over sequences.

    Returns (scores, labels) over mask-valid steps, skipping each window's
    first step when skip_first (matching model evaluation, which has no
    history there).
    """
    scores, labels = [], []
    for seq in sequences:
        start = 1 if skip_first else 0
        for t in range(start, seq.n_valid):
            scores.append(ground_truth[(seq.student_id, seq.start_position + t)])
            labels.append(int(seq.responses[t]))
    return np.asarray(scores, dtype=float), np.asarray(labels, dtype=int)
