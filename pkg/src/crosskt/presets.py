"""Bundled desk-scale synthetic preset.

Four heterogeneous source domains (~300 windows each) plus one cold-start
target whose train split covers 8 batches of 32. Epoch counts are scaled
down from the full protocol (600/300/50); semantics are unchanged.
"""

from __future__ import annotations

from .pipeline import TrainConfig, subseed
from .synth import SyntheticDomainConfig, generate_multisource

DESK_WINDOW = 40
DESK_MIN_TOTAL = 20

_SOURCE_ROWS = (
    # n_questions, n_concepts, learn_rate, guess, slip, difficulty_shift
    (60, 10, 0.22, 0.10, 0.06, -0.8),
    (80, 12, 0.28, 0.15, 0.04, -0.3),
    (50, 8, 0.18, 0.18, 0.10, 0.3),
    (70, 11, 0.25, 0.08, 0.08, 0.8),
)


def desk_source_configs(data_seed=0):
    configs = []
    for i, (n_q, n_c, learn, guess, slip, shift) in enumerate(_SOURCE_ROWS):
        configs.append(SyntheticDomainConfig(
            domain_id=i, n_students=220, n_questions=n_q, n_concepts=n_c,
            concepts_per_question=(1, 2), learn_rate=learn, guess=guess,
            slip=slip, difficulty_shift=shift,
            seed=subseed(data_seed, "source", i),
            steps_per_student=(32, 48)))
    return configs


def desk_target_config(data_seed=0):
    # 350 students x exactly one full window -> 280 train sequences,
    # enough for the 8-batch cold-start regime.
    return SyntheticDomainConfig(
        domain_id=4, n_students=350, n_questions=55, n_concepts=10,
        concepts_per_question=(1, 2), learn_rate=0.22, guess=0.12, slip=0.06,
        difficulty_shift=0.0, seed=subseed(data_seed, "target"),
        steps_per_student=(DESK_WINDOW, DESK_WINDOW))


def desk_train_config(**overrides):
    base = dict(d=32, k=5, lr=3e-4, batch_size=32, phase1_epochs=600,
                phase2_epochs=300, adapt_epochs=50, scratch_epochs=300,
                lambda_mix=0.7, encoder="ra", n_heads=4, n_layers=1,
                window_length=DESK_WINDOW, log_every=50)
    base.update(overrides)
    return TrainConfig(**base)


def make_desk_data(data_seed=0):
    """Deterministic desk-scale (sources, target) DomainDatasets."""
    return generate_multisource(desk_source_configs(data_seed),
                                desk_target_config(data_seed),
                                window_length=DESK_WINDOW,
                                min_total=DESK_MIN_TOTAL)
