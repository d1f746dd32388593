"""Simulate a domain of students and inspect the generator's ground truth.

Each student carries a latent per-concept mastery state: concepts flip to
"learned" with a fixed probability on every exposure, answers are correct
with probability 1-slip once every concept of the question is mastered and
with probability guess before that. The simulator returns the true
per-step correctness probability, which upper-bounds any model's AUC.
"""

import numpy as np

from crosskt.metrics import auc
from crosskt.synth import SyntheticDomainConfig, build_dataset, truth_scores

config = SyntheticDomainConfig(
    domain_id=0, n_students=150, n_questions=40, n_concepts=8,
    concepts_per_question=(1, 2), learn_rate=0.25, guess=0.15, slip=0.08,
    difficulty_shift=0.0, seed=7, steps_per_student=(40, 60))

dataset = build_dataset(config, window_length=50, min_total=20)
print(f"{len(dataset.split.train)} train / {len(dataset.split.test)} test "
      f"windows, {dataset.spec.n_questions} questions, "
      f"{dataset.spec.n_concepts} concepts")

# correctness climbs within a sequence as concepts get mastered
rates = np.zeros(50)
counts = np.zeros(50)
for seq in dataset.split.train:
    n = seq.n_valid
    rates[:n] += seq.responses[:n]
    counts[:n] += 1
curve = rates / np.maximum(counts, 1)
print("mean correctness by position (every 10th step):",
      np.round(curve[::10], 3))

# the generator's own probabilities are the best possible ranking
scores, labels = truth_scores(dataset.ground_truth, dataset.split.test)
print(f"oracle AUC on the test split: {auc(scores, labels):.4f} "
      f"over {len(labels)} predictions")
