import numpy as np
import pytest

from crosskt.metrics import auc
from crosskt.synth import (SyntheticDomainConfig, build_dataset,
                           generate_domain, generate_multisource,
                           load_ground_truth, truth_scores, write_csv,
                           write_ground_truth)
from crosskt.data import ingest_csv


def config(**kw):
    base = dict(domain_id=0, n_students=20, n_questions=15, n_concepts=6,
                concepts_per_question=(1, 2), learn_rate=0.2, guess=0.2,
                slip=0.1, seed=0, steps_per_student=(25, 35))
    base.update(kw)
    return SyntheticDomainConfig(**base)


def test_same_seed_same_logs():
    _, a, ta = generate_domain(config())
    _, b, tb = generate_domain(config())
    assert a == b and ta == tb


def test_different_seed_different_logs():
    _, a, _ = generate_domain(config(seed=1))
    _, b, _ = generate_domain(config(seed=2))
    assert a != b


def test_degenerate_config_rejected():
    with pytest.raises(ValueError):
        config(n_questions=0)
    with pytest.raises(ValueError):
        config(guess=1.2)
    with pytest.raises(ValueError):
        config(guess=0.6, slip=0.6)  # mastery would hurt


def test_forced_dynamics_without_noise():
    # guess=0, slip=0, learn_rate=1: correct exactly when every concept of
    # the question has been exposed before.
    spec, interactions, _ = generate_domain(
        config(guess=0.0, slip=0.0, learn_rate=1.0, n_students=10))
    by_student = {}
    for it in interactions:
        seen = by_student.setdefault(it.student_id, set())
        expected = 1 if it.concept_ids <= seen else 0
        assert it.correct == expected
        seen.update(it.concept_ids)


def test_coin_flip_regime_is_information_free():
    cfg = config(guess=0.5, slip=0.5, n_students=250, seed=3)
    _, interactions, truth = generate_domain(cfg)
    assert len(interactions) >= 5000
    labels = np.array([it.correct for it in interactions])
    # the generator's own probabilities are constant 0.5 -> all ties
    scores = np.array([truth[(it.student_id, it.position)]
                       for it in interactions])
    assert auc(scores, labels) == pytest.approx(0.5, abs=1e-12)
    rng = np.random.default_rng(0)
    assert auc(rng.random(labels.size), labels) == pytest.approx(0.5, abs=0.03)


def test_learn_rate_monotonicity():
    def last_quartile_mean(learn_rate):
        cfg = config(learn_rate=learn_rate, n_students=150, seed=9,
                     steps_per_student=(40, 40))
        _, interactions, _ = generate_domain(cfg)
        by_student = {}
        for it in interactions:
            by_student.setdefault(it.student_id, []).append(it.correct)
        tails = [np.mean(h[-(len(h) // 4):]) for h in by_student.values()]
        return float(np.mean(tails))

    assert last_quartile_mean(0.5) >= last_quartile_mean(0.1)


def test_difficulty_shift_moves_rates():
    easy = generate_domain(config(difficulty_shift=1.5, n_students=100, seed=4))
    hard = generate_domain(config(difficulty_shift=-1.5, n_students=100, seed=4))
    rate = lambda inters: np.mean([it.correct for it in inters])
    assert rate(easy[1]) > rate(hard[1]) + 0.1


def test_multisource_mirrors_protocol():
    sources = [config(domain_id=i, seed=i, n_students=30) for i in range(4)]
    target = config(domain_id=4, seed=9, n_students=40,
                    steps_per_student=(30, 30))
    src, tgt = generate_multisource(sources, target, window_length=30,
                                    min_total=20)
    assert len(src) == 4
    assert {d.spec.domain_id for d in src} == {0, 1, 2, 3}
    assert tgt.spec.domain_id == 4
    # 40 students x exactly one window -> 32 train sequences (one batch)
    assert len(tgt.split.train) == 32


def test_multisource_same_config_different_seed():
    a = config(domain_id=0, seed=1)
    b = config(domain_id=1, seed=2)
    src, _ = generate_multisource([a, b], config(domain_id=2, seed=3),
                                  window_length=30)
    assert src[0].spec.n_questions == src[1].spec.n_questions
    q0 = [q for s in src[0].split.train for q in s.questions[:s.n_valid]]
    q1 = [q for s in src[1].split.train for q in s.questions[:s.n_valid]]
    assert q0 != q1


def test_multisource_needs_two_sources():
    with pytest.raises(ValueError):
        generate_multisource([config()], config(domain_id=1))
    with pytest.raises(ValueError, match="unique"):
        generate_multisource([config(), config()], config(domain_id=1))


def test_oracle_outranks_simple_predictors():
    ds = build_dataset(config(n_students=200, seed=5), window_length=30,
                       min_total=20)
    oracle_scores, labels = truth_scores(ds.ground_truth, ds.split.test)
    oracle = auc(oracle_scores, labels)
    # question-marginal predictor fitted on the train split
    rates = np.full(ds.spec.n_questions, 0.5)
    counts = np.zeros(ds.spec.n_questions)
    hits = np.zeros(ds.spec.n_questions)
    for s in ds.split.train:
        for q, r in zip(s.questions[:s.n_valid], s.responses[:s.n_valid]):
            counts[q] += 1
            hits[q] += r
    rates = (hits + 1) / (counts + 2)
    marginal = []
    for s in ds.split.test:
        marginal.extend(rates[s.questions[1:s.n_valid]])
    assert oracle >= auc(np.array(marginal), labels) - 1e-9


def test_csv_sidecar_roundtrip(tmp_path):
    spec, interactions, truth = generate_domain(config(n_students=15, seed=2))
    csv_path = tmp_path / "d.csv"
    truth_path = tmp_path / "d.truth.jsonl"
    write_csv(interactions, str(csv_path))
    write_ground_truth(truth, str(truth_path))
    spec2, parsed = ingest_csv(str(csv_path), domain_id=0)
    assert len(parsed) == len(interactions)
    assert spec2.n_questions == spec.n_questions
    assert spec2.n_concepts == spec.n_concepts
    truth2 = load_ground_truth(str(truth_path))
    assert truth2 == truth
