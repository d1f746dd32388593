"""Interaction-log data model: ingestion, windowing, filtering, splitting, batching.

Canonical CSV schema: ``student_id,question_id,concept_ids,correct`` with
concept_ids semicolon-joined; chronological order is file order per student.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

WINDOW_LENGTH = 200
MIN_TOTAL = 20
PAD_QUESTION = -1  # reserved question id at masked (padded) steps

CSV_COLUMNS = ("student_id", "question_id", "concept_ids", "correct")

SPLIT_FORMAT = "crosskt-split"
SPLIT_FORMAT_VERSION = 1
DOMAIN_FORMAT = "crosskt-domain"
DOMAIN_FORMAT_VERSION = 1


class DataError(ValueError):
    """Malformed input file or invalid data operation."""


@dataclass(frozen=True)
class Interaction:
    """One (question, response) event of a student."""

    student_id: str
    question_id: int
    concept_ids: frozenset
    correct: int
    position: int

    def __post_init__(self):
        if self.correct not in (0, 1):
            raise DataError(f"invalid response value: {self.correct!r}")
        if not self.concept_ids:
            raise DataError("interaction has empty concept set")


class InteractionSequence:
    """Fixed-length window of one student's interactions with padding mask.

    mask is a prefix-of-ones pattern; padded steps hold question PAD_QUESTION
    and response 0. Immutable after construction.
    """

    __slots__ = ("questions", "responses", "mask", "domain_id", "student_id",
                 "start_position")

    def __init__(self, questions, responses, mask, domain_id, student_id="",
                 start_position=0):
        questions = np.asarray(questions, dtype=np.int64)
        responses = np.asarray(responses, dtype=np.int64)
        mask = np.asarray(mask, dtype=np.int64)
        if not (questions.shape == responses.shape == mask.shape) or questions.ndim != 1:
            raise DataError("questions/responses/mask must share one length")
        valid = mask.astype(bool)
        if not np.all(np.diff(mask) <= 0):
            raise DataError("mask must be a prefix of ones")
        if not np.isin(mask, (0, 1)).all() or not np.isin(responses, (0, 1)).all():
            raise DataError("mask and responses must be binary")
        if np.any(questions[~valid] != PAD_QUESTION) or np.any(responses[~valid] != 0):
            raise DataError("padded steps must hold the reserved padding values")
        if np.any(questions[valid] < 0):
            raise DataError("valid question ids must be non-negative")
        for arr in (questions, responses, mask):
            arr.flags.writeable = False
        self.questions = questions
        self.responses = responses
        self.mask = mask
        self.domain_id = int(domain_id)
        self.student_id = student_id
        self.start_position = int(start_position)

    def __len__(self):
        return self.questions.shape[0]

    @property
    def n_valid(self):
        return int(self.mask.sum())

    def __eq__(self, other):
        if not isinstance(other, InteractionSequence):
            return NotImplemented
        return (self.domain_id == other.domain_id
                and self.student_id == other.student_id
                and self.start_position == other.start_position
                and np.array_equal(self.questions, other.questions)
                and np.array_equal(self.responses, other.responses)
                and np.array_equal(self.mask, other.mask))

    def __repr__(self):
        return (f"InteractionSequence(student={self.student_id!r}, "
                f"domain={self.domain_id}, T={len(self)}, valid={self.n_valid})")


@dataclass(frozen=True)
class DomainSpec:
    """A domain's question/concept vocabulary and concept-question incidence."""

    domain_id: int
    n_questions: int
    n_concepts: int
    q_matrix: np.ndarray  # (n_concepts, n_questions), binary

    def __post_init__(self):
        q = np.asarray(self.q_matrix, dtype=np.int8)
        if q.shape != (self.n_concepts, self.n_questions):
            raise DataError(f"q_matrix shape {q.shape} does not match "
                            f"({self.n_concepts}, {self.n_questions})")
        if not np.isin(q, (0, 1)).all():
            raise DataError("q_matrix entries must be 0/1")
        if self.n_questions and (q.sum(axis=0) == 0).any():
            raise DataError("every question must map to at least one concept")
        q.flags.writeable = False
        object.__setattr__(self, "q_matrix", q)

    def concept_set(self, question_id):
        return frozenset(np.flatnonzero(self.q_matrix[:, question_id]).tolist())


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple
    test: tuple
    split_seed: int


@dataclass(frozen=True)
class DomainDataset:
    """A domain's spec together with its train/test split."""

    spec: DomainSpec
    split: DatasetSplit
    ground_truth: dict = field(default=None, compare=False)


def ingest_csv(path, domain_id):
    """Parse a canonical CSV into (DomainSpec, list of Interaction).

    Builds dense 0-based vocabularies in order of first appearance and the
    q_matrix from observed (question, concept) pairs. Questions observed with
    no concepts are attached to a synthetic per-domain orphan concept.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [c.strip() for c in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        for col in header:
            if col not in CSV_COLUMNS:
                raise DataError(f"{path}: unknown column {col!r}")
        if sorted(header) != sorted(CSV_COLUMNS):
            raise DataError(f"{path}: header must contain exactly "
                            f"{list(CSV_COLUMNS)}")
        col_idx = {c: header.index(c) for c in CSV_COLUMNS}
        raw_rows = [(reader.line_num, cells) for cells in reader if cells]

    q_vocab = {}
    c_vocab = {}
    pairs = set()
    rows = []
    positions = {}
    for lineno, cells in raw_rows:
        if len(cells) != len(header):
            raise DataError(f"{path}: line {lineno}: expected {len(header)} "
                            f"fields, got {len(cells)}")
        student = cells[col_idx["student_id"]].strip()
        q_tok = cells[col_idx["question_id"]].strip()
        c_tok = cells[col_idx["concept_ids"]].strip()
        r_tok = cells[col_idx["correct"]].strip()
        if not student or not q_tok:
            raise DataError(f"{path}: line {lineno}: empty student or question id")
        if r_tok not in ("0", "1"):
            raise DataError(f"{path}: line {lineno}: invalid response value {r_tok!r}")
        if q_tok not in q_vocab:
            q_vocab[q_tok] = len(q_vocab)
        qid = q_vocab[q_tok]
        concepts = []
        for tok in c_tok.split(";"):
            tok = tok.strip()
            if not tok:
                continue
            if tok not in c_vocab:
                c_vocab[tok] = len(c_vocab)
            concepts.append(c_vocab[tok])
        for cid in concepts:
            pairs.add((cid, qid))
        pos = positions.get(student, 0)
        positions[student] = pos + 1
        rows.append((student, qid, concepts, int(r_tok), pos))
    if not rows:
        raise DataError(f"{path}: no interaction rows")

    n_q = len(q_vocab)
    n_c = len(c_vocab)
    orphan_questions = set(range(n_q)) - {q for _, q in pairs}
    orphan_id = None
    if orphan_questions:
        orphan_id = n_c
        n_c += 1
        for qid in orphan_questions:
            pairs.add((orphan_id, qid))

    q_matrix = np.zeros((n_c, n_q), dtype=np.int8)
    for cid, qid in pairs:
        q_matrix[cid, qid] = 1
    spec = DomainSpec(domain_id=domain_id, n_questions=n_q, n_concepts=n_c,
                      q_matrix=q_matrix)
    interactions = []
    for student, qid, concepts, correct, pos in rows:
        cset = frozenset(concepts) if concepts else frozenset([orphan_id])
        interactions.append(Interaction(student_id=student, question_id=qid,
                                        concept_ids=cset, correct=correct,
                                        position=pos))
    return spec, interactions


def window_and_filter(interactions, domain_id, window_length=WINDOW_LENGTH,
                      min_total=MIN_TOTAL):
    """Cut per-student histories into fixed windows, dropping short students.

    Students with fewer than min_total interactions are excluded entirely.
    The final partial window is kept and right-padded (mask=0).
    """
    if window_length < 2:
        raise DataError("window_length must be at least 2")
    by_student = {}
    for it in interactions:
        by_student.setdefault(it.student_id, []).append(it)
    sequences = []
    for student, history in by_student.items():
        if len(history) < min_total:
            continue
        for start in range(0, len(history), window_length):
            chunk = history[start:start + window_length]
            n = len(chunk)
            questions = np.full(window_length, PAD_QUESTION, dtype=np.int64)
            responses = np.zeros(window_length, dtype=np.int64)
            mask = np.zeros(window_length, dtype=np.int64)
            questions[:n] = [it.question_id for it in chunk]
            responses[:n] = [it.correct for it in chunk]
            mask[:n] = 1
            sequences.append(InteractionSequence(
                questions, responses, mask, domain_id=domain_id,
                student_id=student, start_position=chunk[0].position))
    return sequences


def split_by_student(sequences, ratio=0.8, seed=0):
    """Student-disjoint train/test split, deterministic given seed."""
    students = []
    for seq in sequences:
        if seq.student_id not in students:
            students.append(seq.student_id)
    if len(students) < 2:
        raise DataError("cannot split: need at least 2 distinct students")
    rng = np.random.default_rng(seed)
    order = [students[i] for i in rng.permutation(len(students))]
    n_train = int(round(ratio * len(students)))
    n_train = min(max(n_train, 1), len(students) - 1)
    train_students = set(order[:n_train])
    train = tuple(s for s in sequences if s.student_id in train_students)
    test = tuple(s for s in sequences if s.student_id not in train_students)
    return DatasetSplit(train=train, test=test, split_seed=seed)


class BatchStream:
    """Deterministic, reshuffled-per-epoch batch supply over a sequence list.

    With limit_batches=k the same k*batch_size sequences (chosen once by seed)
    are replayed every epoch in fixed order; the remainder batch is dropped.
    Without a limit, every epoch is a fresh seeded shuffle and the final
    short batch is kept.
    """

    def __init__(self, sequences, batch_size=32, seed=0, limit_batches=None):
        if batch_size < 1:
            raise DataError("batch_size must be >= 1")
        if not sequences:
            raise DataError("cannot batch an empty sequence list")
        self.sequences = list(sequences)
        self.batch_size = batch_size
        self.seed = seed
        self.limit_batches = limit_batches
        if limit_batches is not None:
            needed = limit_batches * batch_size
            if needed > len(self.sequences):
                raise DataError(f"limit_batches={limit_batches} needs {needed} "
                                f"sequences, have {len(self.sequences)}")
            rng = np.random.default_rng([seed, 0])
            order = rng.permutation(len(self.sequences))[:needed]
            self._fixed = [self.sequences[i] for i in order]

    @property
    def batches_per_epoch(self):
        if self.limit_batches is not None:
            return self.limit_batches
        n, b = len(self.sequences), self.batch_size
        return (n + b - 1) // b

    def epoch(self, epoch_index):
        """Batches for one epoch as lists of InteractionSequence."""
        b = self.batch_size
        if self.limit_batches is not None:
            return [self._fixed[i * b:(i + 1) * b]
                    for i in range(self.limit_batches)]
        rng = np.random.default_rng([self.seed, epoch_index])
        order = rng.permutation(len(self.sequences))
        shuffled = [self.sequences[i] for i in order]
        return [shuffled[i:i + b] for i in range(0, len(shuffled), b)]

    def batch(self, step):
        """step-th batch of the infinite epoch-concatenated stream."""
        per = self.batches_per_epoch
        return self.epoch(step // per)[step % per]

    def __iter__(self):
        return iter(self.epoch(0))


def make_batches(split, batch_size=32, seed=0, limit_batches=None):
    """Batch stream over the train part of a split."""
    return BatchStream(split.train, batch_size=batch_size, seed=seed,
                       limit_batches=limit_batches)


def stack_batch(sequences):
    """Stack sequences into dense arrays: questions/responses/mask [B, T]."""
    if not sequences:
        raise DataError("empty batch")
    domain = sequences[0].domain_id
    if any(s.domain_id != domain for s in sequences):
        raise DataError("batch mixes domains")
    return {
        "questions": np.stack([s.questions for s in sequences]),
        "responses": np.stack([s.responses for s in sequences]),
        "mask": np.stack([s.mask for s in sequences]),
        "domain_id": domain,
    }


def _sequence_record(seq):
    n = seq.n_valid
    return {
        "student_id": seq.student_id,
        "domain_id": seq.domain_id,
        "start_position": seq.start_position,
        "window_length": len(seq),
        "questions": seq.questions[:n].tolist(),
        "responses": seq.responses[:n].tolist(),
    }


def _sequence_from_record(rec):
    T = rec["window_length"]
    n = len(rec["questions"])
    questions = np.full(T, PAD_QUESTION, dtype=np.int64)
    responses = np.zeros(T, dtype=np.int64)
    mask = np.zeros(T, dtype=np.int64)
    questions[:n] = rec["questions"]
    responses[:n] = rec["responses"]
    mask[:n] = 1
    return InteractionSequence(questions, responses, mask,
                               domain_id=rec["domain_id"],
                               student_id=rec["student_id"],
                               start_position=rec["start_position"])


def save_split(split, directory):
    """Persist a split: one self-describing JSONL file per role."""
    os.makedirs(directory, exist_ok=True)
    for role in ("train", "test"):
        sequences = getattr(split, role)
        path = os.path.join(directory, f"{role}.jsonl")
        with open(path, "w", encoding="utf-8") as fh:
            header = {"format": SPLIT_FORMAT, "version": SPLIT_FORMAT_VERSION,
                      "role": role, "split_seed": split.split_seed,
                      "n_sequences": len(sequences)}
            fh.write(json.dumps(header) + "\n")
            for seq in sequences:
                fh.write(json.dumps(_sequence_record(seq)) + "\n")


def load_split(directory):
    parts = {}
    seed = 0
    for role in ("train", "test"):
        path = os.path.join(directory, f"{role}.jsonl")
        with open(path, "r", encoding="utf-8") as fh:
            header = json.loads(fh.readline())
            if header.get("format") != SPLIT_FORMAT:
                raise DataError(f"{path}: not a {SPLIT_FORMAT} file")
            if header.get("version") != SPLIT_FORMAT_VERSION:
                raise DataError(f"{path}: unsupported format version "
                                f"{header.get('version')}")
            seed = header["split_seed"]
            parts[role] = tuple(_sequence_from_record(json.loads(line))
                                for line in fh if line.strip())
    return DatasetSplit(train=parts["train"], test=parts["test"], split_seed=seed)


def save_domain(dataset, directory):
    """Persist a DomainDataset (spec + split) to a directory."""
    os.makedirs(directory, exist_ok=True)
    spec = dataset.spec
    meta = {
        "format": DOMAIN_FORMAT, "version": DOMAIN_FORMAT_VERSION,
        "domain_id": spec.domain_id, "n_questions": spec.n_questions,
        "n_concepts": spec.n_concepts,
        "q_matrix": spec.q_matrix.tolist(),
    }
    with open(os.path.join(directory, "domain.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh)
    save_split(dataset.split, directory)


def load_domain(directory):
    path = os.path.join(directory, "domain.json")
    with open(path, "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    if meta.get("format") != DOMAIN_FORMAT:
        raise DataError(f"{path}: not a {DOMAIN_FORMAT} file")
    if meta.get("version") != DOMAIN_FORMAT_VERSION:
        raise DataError(f"{path}: unsupported format version {meta.get('version')}")
    spec = DomainSpec(domain_id=meta["domain_id"],
                      n_questions=meta["n_questions"],
                      n_concepts=meta["n_concepts"],
                      q_matrix=np.asarray(meta["q_matrix"], dtype=np.int8))
    return DomainDataset(spec=spec, split=load_split(directory))
