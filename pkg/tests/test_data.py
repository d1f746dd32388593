import numpy as np
import pytest

from crosskt.data import (BatchStream, DataError, DomainDataset, DomainSpec,
                          Interaction, InteractionSequence, PAD_QUESTION,
                          ingest_csv, load_domain, load_split, make_batches,
                          save_domain, save_split, split_by_student,
                          stack_batch, window_and_filter)


def write_csv(tmp_path, text, name="d.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


def make_history(student, n, n_questions=10):
    rng = np.random.default_rng(hash(student) % 2**32)
    return [Interaction(student_id=student, question_id=int(rng.integers(n_questions)),
                        concept_ids=frozenset([0]), correct=int(rng.integers(2)),
                        position=i)
            for i in range(n)]


# -- ingest_csv ---------------------------------------------------------------

def test_ingest_compacts_vocabularies(tmp_path):
    path = write_csv(tmp_path, "student_id,question_id,concept_ids,correct\n"
                               "s1,10,5,1\n"
                               "s1,10,5;7,0\n"
                               "s1,11,7,1\n")
    spec, interactions = ingest_csv(path, domain_id=3)
    assert (spec.n_questions, spec.n_concepts) == (2, 2)
    assert len(interactions) == 3
    assert [it.question_id for it in interactions] == [0, 0, 1]
    assert interactions[1].concept_ids == frozenset({0, 1})
    assert [it.position for it in interactions] == [0, 1, 2]
    # q_matrix reflects observed pairs
    assert spec.q_matrix.tolist() == [[1, 0], [1, 1]]


def test_ingest_rejects_bad_response(tmp_path):
    path = write_csv(tmp_path, "student_id,question_id,concept_ids,correct\n"
                               "s1,10,5,2\n")
    with pytest.raises(DataError, match="invalid response value"):
        ingest_csv(path, domain_id=0)


def test_ingest_error_names_line_number(tmp_path):
    path = write_csv(tmp_path, "student_id,question_id,concept_ids,correct\n"
                               "s1,10,5,1\n"
                               "s1,10,5\n")
    with pytest.raises(DataError, match="line 3"):
        ingest_csv(path, domain_id=0)


def test_ingest_unknown_column(tmp_path):
    path = write_csv(tmp_path, "student_id,question_id,concepts,correct\n")
    with pytest.raises(DataError, match="unknown column"):
        ingest_csv(path, domain_id=0)


def test_ingest_empty_file(tmp_path):
    path = write_csv(tmp_path, "")
    with pytest.raises(DataError, match="empty file"):
        ingest_csv(path, domain_id=0)


def test_ingest_at_assist15_scale(tmp_path):
    # 100 distinct questions, 100 concepts, one concept per question
    rows = ["student_id,question_id,concept_ids,correct"]
    for i in range(100):
        rows.append(f"s{i % 7},q{i},c{i},{i % 2}")
    path = write_csv(tmp_path, "\n".join(rows) + "\n")
    spec, interactions = ingest_csv(path, domain_id=0)
    assert (spec.n_questions, spec.n_concepts) == (100, 100)
    assert len(interactions) == 100


def test_ingest_orphan_concept_repair(tmp_path):
    path = write_csv(tmp_path, "student_id,question_id,concept_ids,correct\n"
                               "s1,10,5,1\n"
                               "s1,11,,0\n")
    spec, interactions = ingest_csv(path, domain_id=0)
    # question 11 got the synthetic orphan concept appended to the vocabulary
    assert spec.n_concepts == 2
    assert spec.q_matrix[:, 1].sum() == 1
    assert interactions[1].concept_ids == frozenset({1})


# -- window_and_filter --------------------------------------------------------

def test_short_students_are_dropped():
    assert window_and_filter(make_history("a", 19), domain_id=0) == []


def test_exact_window_fit():
    seqs = window_and_filter(make_history("a", 200), domain_id=0)
    assert len(seqs) == 1
    assert seqs[0].mask.sum() == 200


def test_partial_window_is_kept_and_padded():
    seqs = window_and_filter(make_history("a", 230), domain_id=0)
    assert len(seqs) == 2
    assert seqs[0].n_valid == 200
    assert seqs[1].n_valid == 30
    assert np.all(seqs[1].questions[30:] == PAD_QUESTION)
    assert np.all(seqs[1].mask[30:] == 0)
    assert seqs[1].start_position == 200


def test_window_length_must_be_at_least_two():
    with pytest.raises(DataError):
        window_and_filter(make_history("a", 30), domain_id=0, window_length=1)


def test_windowing_preserves_content():
    rng = np.random.default_rng(0)
    for trial in range(5):
        n = int(rng.integers(20, 500))
        history = make_history(f"s{trial}", n)
        seqs = window_and_filter(history, domain_id=0, window_length=64)
        qs = np.concatenate([s.questions[:s.n_valid] for s in seqs])
        rs = np.concatenate([s.responses[:s.n_valid] for s in seqs])
        assert qs.tolist() == [it.question_id for it in history]
        assert rs.tolist() == [it.correct for it in history]


# -- split_by_student ---------------------------------------------------------

def ten_student_sequences():
    seqs = []
    for i in range(10):
        seqs.extend(window_and_filter(make_history(f"s{i}", 40), domain_id=0,
                                      window_length=40))
    return seqs


def test_split_ratio_by_student_count():
    split = split_by_student(ten_student_sequences(), ratio=0.8, seed=1)
    train_students = {s.student_id for s in split.train}
    test_students = {s.student_id for s in split.test}
    assert len(train_students) == 8 and len(test_students) == 2
    assert not train_students & test_students


def test_split_is_deterministic_and_seed_sensitive():
    seqs = ten_student_sequences()
    a = split_by_student(seqs, seed=5)
    b = split_by_student(seqs, seed=5)
    c = split_by_student(seqs, seed=6)
    assert [s.student_id for s in a.train] == [s.student_id for s in b.train]
    assert len(c.train) == len(a.train)
    assert [s.student_id for s in c.test] != [s.student_id for s in a.test]


def test_split_single_student_fails():
    seqs = window_and_filter(make_history("only", 50), domain_id=0,
                             window_length=25)
    with pytest.raises(DataError, match="cannot split"):
        split_by_student(seqs)


# -- make_batches -------------------------------------------------------------

def many_sequences(n, domain_id=0):
    seqs = []
    i = 0
    while len(seqs) < n:
        seqs.extend(window_and_filter(make_history(f"u{i}", 30), domain_id,
                                      window_length=30))
        i += 1
    return seqs[:n]


def test_limit_batches_replays_identical_sequences():
    seqs = many_sequences(64)
    split = split_by_student(seqs + many_sequences(16, 1), seed=0)
    stream = BatchStream(seqs, batch_size=32, seed=3, limit_batches=1)
    first = stream.epoch(0)
    later = stream.epoch(7)
    assert len(first) == 1 and len(first[0]) == 32
    assert [s.student_id for s in first[0]] == [s.student_id for s in later[0]]


def test_remainder_batch_kept_without_limit():
    stream = BatchStream(many_sequences(65), batch_size=32, seed=0)
    sizes = [len(b) for b in stream.epoch(0)]
    assert sizes == [32, 32, 1]


def test_same_seed_same_order():
    seqs = many_sequences(50)
    a = BatchStream(seqs, batch_size=8, seed=11)
    b = BatchStream(seqs, batch_size=8, seed=11)
    for e in range(3):
        ids_a = [s.student_id for batch in a.epoch(e) for s in batch]
        ids_b = [s.student_id for batch in b.epoch(e) for s in batch]
        assert ids_a == ids_b


def test_epochs_reshuffle():
    seqs = many_sequences(50)
    stream = BatchStream(seqs, batch_size=8, seed=11)
    ids0 = [s.student_id for batch in stream.epoch(0) for s in batch]
    ids1 = [s.student_id for batch in stream.epoch(1) for s in batch]
    assert ids0 != ids1 and sorted(ids0) == sorted(ids1)


def test_empty_stream_rejected():
    with pytest.raises(DataError):
        BatchStream([], batch_size=4, seed=0)


def test_limit_needs_enough_sequences():
    with pytest.raises(DataError, match="limit_batches"):
        BatchStream(many_sequences(20), batch_size=32, seed=0, limit_batches=1)


def test_make_batches_uses_train_split():
    split = split_by_student(ten_student_sequences(), seed=0)
    stream = make_batches(split, batch_size=4, seed=0)
    ids = {s.student_id for batch in stream.epoch(0) for s in batch}
    assert ids == {s.student_id for s in split.train}


# -- sequence/type invariants -------------------------------------------------

def test_sequence_rejects_non_prefix_mask():
    with pytest.raises(DataError, match="prefix"):
        InteractionSequence([1, PAD_QUESTION, 1], [1, 0, 1], [1, 0, 1],
                            domain_id=0)


def test_sequence_rejects_bad_padding():
    with pytest.raises(DataError, match="padding"):
        InteractionSequence([1, 7], [1, 0], [1, 0], domain_id=0)


def test_sequence_arrays_immutable():
    seq = window_and_filter(make_history("a", 25), domain_id=0)[0]
    with pytest.raises(ValueError):
        seq.questions[0] = 5


def test_domain_spec_rejects_zero_column():
    with pytest.raises(DataError, match="at least one concept"):
        DomainSpec(domain_id=0, n_questions=2, n_concepts=1,
                   q_matrix=np.array([[1, 0]]))


def test_stack_batch_rejects_mixed_domains():
    a = window_and_filter(make_history("a", 25), domain_id=0)
    b = window_and_filter(make_history("b", 25), domain_id=1)
    with pytest.raises(DataError, match="mixes domains"):
        stack_batch(a + b)


def test_ingest_window_split_is_pure(tmp_path):
    rows = ["student_id,question_id,concept_ids,correct"]
    rng = np.random.default_rng(4)
    for s in range(6):
        for i in range(30):
            rows.append(f"s{s},q{rng.integers(8)},c{rng.integers(4)},"
                        f"{rng.integers(2)}")
    path = write_csv(tmp_path, "\n".join(rows) + "\n")

    def run():
        spec, inter = ingest_csv(path, domain_id=0)
        seqs = window_and_filter(inter, 0, window_length=30, min_total=20)
        return spec, split_by_student(seqs, ratio=0.8, seed=9)

    spec_a, split_a = run()
    spec_b, split_b = run()
    assert np.array_equal(spec_a.q_matrix, spec_b.q_matrix)
    assert list(split_a.train) == list(split_b.train)
    assert list(split_a.test) == list(split_b.test)


# -- persistence --------------------------------------------------------------

def test_split_roundtrip(tmp_path):
    split = split_by_student(ten_student_sequences(), seed=2)
    save_split(split, str(tmp_path / "store"))
    loaded = load_split(str(tmp_path / "store"))
    assert loaded.split_seed == 2
    assert list(loaded.train) == list(split.train)
    assert list(loaded.test) == list(split.test)


def test_split_version_rejected(tmp_path):
    split = split_by_student(ten_student_sequences(), seed=2)
    save_split(split, str(tmp_path / "store"))
    path = tmp_path / "store" / "train.jsonl"
    lines = path.read_text().splitlines()
    lines[0] = lines[0].replace('"version": 1', '"version": 99')
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(DataError, match="version"):
        load_split(str(tmp_path / "store"))


def test_domain_roundtrip(tmp_path):
    q = np.array([[1, 0, 1], [0, 1, 1]], dtype=np.int8)
    spec = DomainSpec(domain_id=7, n_questions=3, n_concepts=2, q_matrix=q)
    seqs = []
    for i in range(4):
        seqs.extend(window_and_filter(make_history(f"s{i}", 30, n_questions=3),
                                      domain_id=7, window_length=30))
    ds = DomainDataset(spec=spec, split=split_by_student(seqs, seed=0))
    save_domain(ds, str(tmp_path / "dom"))
    loaded = load_domain(str(tmp_path / "dom"))
    assert loaded.spec.domain_id == 7
    assert np.array_equal(loaded.spec.q_matrix, q)
    assert list(loaded.split.train) == list(ds.split.train)
