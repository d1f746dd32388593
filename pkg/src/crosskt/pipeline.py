"""Three-phase training pipeline and checkpointing.

Phase 1 (cfl): per-domain concept tables + encoder/decoder on all sources,
one batch per source per epoch, one optimizer step on the summed loss.
Phase 2 (refine): concept tables are clustered into prototypes, questions are
re-represented over them, and prototypes + encoder/decoder train on; the
per-domain tables are frozen. Phase 3 (adapt): only the target concept table
trains on the limited target batches.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from . import aggregation
from . import metrics as metrics_mod
from .data import BatchStream, DomainSpec, stack_batch
from .decoder import sequence_bce
from .model import batch_tensors, named_tensor_map, KTModel

CHECKPOINT_FORMAT = "crosskt-checkpoint"
CHECKPOINT_VERSION = 1
PHASE_ORDER = {"cfl": 0, "refine": 1, "adapt": 2}


class PipelineError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    d: int = 256
    k: int = 5
    lr: float = 1e-4
    batch_size: int = 32
    phase1_epochs: int = 12000
    phase2_epochs: int = 6000
    adapt_epochs: int = 50
    scratch_epochs: int = 300
    lambda_mix: float = 0.7
    encoder: str = "ra"
    n_heads: int = 4
    n_layers: int = 2
    window_length: int = 200
    target_batches: int = 1
    model_seed: int = 0
    data_seed: int = 0
    cluster_seed: int = 0
    use_seqin: bool = True
    use_positions: bool = True
    grad_clip: float = 5.0
    log_every: int = 100

    def __post_init__(self):
        positive = ("d", "k", "batch_size", "phase1_epochs",
                    "phase2_epochs", "adapt_epochs", "scratch_epochs",
                    "n_heads", "n_layers", "window_length")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if not 0.0 <= self.lambda_mix <= 1.0:
            raise ValueError("lambda_mix must lie in [0, 1]")
        if self.target_batches not in (1, 2, 4, 8):
            raise ValueError("target_batches must be one of 1, 2, 4, 8")
        if self.encoder not in ("dkt", "saint", "ra"):
            raise ValueError(f"unknown encoder {self.encoder!r}")


def subseed(*parts):
    """Derive an independent 32-bit seed from heterogeneous parts."""
    ints = []
    for p in parts:
        if isinstance(p, (int, np.integer)):
            ints.append(int(p) & 0xFFFFFFFF)
        else:
            digest = hashlib.sha256(str(p).encode()).digest()
            ints.append(int.from_bytes(digest[:4], "little"))
    return int(np.random.SeedSequence(ints).generate_state(1)[0])


class MetricsLog:
    """Ordered metric stream; optionally mirrored to a JSONL file."""

    def __init__(self, path=None):
        self.records = []
        self.path = path
        if path:
            os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
            # truncate: a run owns its stream
            open(path, "w").close()

    def emit(self, phase, epoch, domain, auc=None, acc=None, loss=None,
             n_predictions=None):
        record = {"phase": phase, "epoch": epoch, "domain": domain,
                  "auc": auc, "acc": acc, "loss": loss,
                  "n_predictions": n_predictions}
        self.records.append(record)
        if self.path:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record) + "\n")
        return record


@dataclass
class TrainRun:
    """State of one pipeline execution: forward-only phase transitions."""

    config: TrainConfig
    phase: str = None
    checkpoints: list = field(default_factory=list)
    wall_clock: dict = field(default_factory=dict)

    def advance(self, phase, seconds):
        if phase not in PHASE_ORDER:
            raise PipelineError(f"unknown phase {phase!r}")
        if self.phase is not None and PHASE_ORDER[phase] <= PHASE_ORDER[self.phase]:
            raise PipelineError(f"phase {phase} after {self.phase} moves backward")
        self.phase = phase
        self.wall_clock[phase] = seconds


def _prepare(config):
    torch.set_num_threads(1)  # bitwise-reproducible runs


def _max_window(datasets):
    lengths = set()
    for ds in datasets:
        for seq in list(ds.split.train) + list(ds.split.test):
            lengths.add(len(seq))
    if not lengths:
        raise PipelineError("dataset has no sequences")
    return max(lengths)


def build_fresh_model(source_specs, config, max_len):
    torch.manual_seed(config.model_seed)
    return KTModel(source_specs, d=config.d, encoder=config.encoder,
                   n_heads=config.n_heads, n_layers=config.n_layers,
                   max_len=max_len, lambda_mix=config.lambda_mix,
                   use_seqin=config.use_seqin,
                   use_positions=config.use_positions)


def _train_epochs(model, mode, epoch_batches, trainable, config, epochs,
                  phase, log):
    """Shared loop: per epoch, sum the loss over the epoch's batches and take
    one optimizer step. Aborts on a non-finite loss."""
    optimizer = torch.optim.Adam(trainable, lr=config.lr)
    for epoch in range(epochs):
        optimizer.zero_grad(set_to_none=True)
        total = None
        per_domain = []
        for domain_id, batch in epoch_batches(epoch):
            bt = batch_tensors(stack_batch(batch))
            if bt["mask"][:, 1:].sum().item() == 0:
                # every sequence in the batch is a 1-step partial window:
                # nothing predictable, the batch contributes no loss
                continue
            probs, _ = model(bt["questions"], bt["responses"], bt["mask"],
                             domain_id, mode)
            loss = sequence_bce(probs, bt["responses"], bt["mask"])
            per_domain.append((domain_id, loss.detach().item()))
            total = loss if total is None else total + loss
        if total is None:
            raise PipelineError(f"phase {phase}: epoch {epoch} had no "
                                "predictable steps in any batch")
        if not torch.isfinite(total):
            raise PipelineError(
                f"non-finite loss in phase {phase} at epoch {epoch}; "
                f"per-domain losses: {per_domain}")
        total.backward()
        torch.nn.utils.clip_grad_norm_(trainable, config.grad_clip)
        optimizer.step()
        model.assert_finite()
        if log and (epoch % config.log_every == 0 or epoch == epochs - 1):
            log.emit(phase=phase, epoch=epoch, domain="all",
                     loss=total.detach().item())
    return model


def source_streams(sources, config):
    return [BatchStream(ds.split.train, batch_size=config.batch_size,
                        seed=subseed(config.data_seed, ds.spec.domain_id))
            for ds in sources]


def train_phase1_cfl(sources, config, log=None):
    """Concept feature learning across all source domains."""
    if len(sources) < 2:
        raise PipelineError("need at least 2 source domains")
    _prepare(config)
    max_len = _max_window(sources)
    model = build_fresh_model([ds.spec for ds in sources], config, max_len)
    streams = source_streams(sources, config)

    def epoch_batches(epoch):
        return [(ds.spec.domain_id, stream.batch(epoch))
                for ds, stream in zip(sources, streams)]

    for p in model.parameters():
        p.requires_grad_(True)
    trainable = model.table_parameters() + model.encoder_decoder_parameters()
    _train_epochs(model, "source", epoch_batches, trainable, config,
                  config.phase1_epochs, "cfl", log)
    return model


def train_phase2_refine(model, sources, config, log=None):
    """Cluster concepts into prototypes and refine them on the sources."""
    _prepare(config)
    tables = [model.tables[str(ds.spec.domain_id)].embeddings.detach().numpy()
              for ds in sources]
    protos, assignment = aggregation.build_prototypes(
        tables, k=config.k, seed=config.cluster_seed)
    model.set_prototypes(protos, assignment)
    for p in model.table_parameters():
        p.requires_grad_(False)
    streams = source_streams(sources, config)

    def epoch_batches(epoch):
        return [(ds.spec.domain_id, stream.batch(epoch))
                for ds, stream in zip(sources, streams)]

    trainable = ([model.prototypes.embeddings]
                 + model.encoder_decoder_parameters())
    _train_epochs(model, "proto", epoch_batches, trainable, config,
                  config.phase2_epochs, "refine", log)
    return model


def target_stream(target, config):
    return BatchStream(target.split.train, batch_size=config.batch_size,
                       seed=subseed(config.data_seed, target.spec.domain_id),
                       limit_batches=config.target_batches)


def adapt_target(model, target, config, log=None):
    """Cold-start adaptation: only the target concept table trains."""
    _prepare(config)
    model.lambda_mix = config.lambda_mix
    model.init_target(target.spec, seed=subseed(config.model_seed, "target-init"))
    for p in model.parameters():
        p.requires_grad_(False)
    model.target_table.embeddings.requires_grad_(True)
    stream = target_stream(target, config)
    fixed = stream.epoch(0)  # identical batches every adaptation epoch

    def epoch_batches(epoch):
        return [(target.spec.domain_id, batch) for batch in fixed]

    _train_epochs(model, "target", epoch_batches,
                  [model.target_table.embeddings], config,
                  config.adapt_epochs, "adapt", log)
    return model


def train_target_scratch(target, config, log=None):
    """Baseline: identically-sized model trained from scratch on exactly the
    limited target batches (same subset the adaptation phase sees)."""
    _prepare(config)
    max_len = _max_window([target])
    model = build_fresh_model([target.spec], config, max_len)
    stream = target_stream(target, config)
    fixed = stream.epoch(0)

    def epoch_batches(epoch):
        return [(target.spec.domain_id, batch) for batch in fixed]

    trainable = model.table_parameters() + model.encoder_decoder_parameters()
    _train_epochs(model, "source", epoch_batches, trainable, config,
                  config.scratch_epochs, "scratch", log)
    return model


def collect_predictions(model, sequences, domain_id, mode, batch_size=64):
    """Streaming model predictions over valid steps >= 2 of each sequence."""
    scores, labels = [], []
    with torch.no_grad():
        for i in range(0, len(sequences), batch_size):
            chunk = list(sequences[i:i + batch_size])
            bt = batch_tensors(stack_batch(chunk))
            probs, _ = model(bt["questions"], bt["responses"], bt["mask"],
                             domain_id, mode)
            valid = bt["mask"].bool()
            valid[:, 0] = False
            scores.append(probs[valid].numpy())
            labels.append(bt["responses"][valid].numpy())
    return np.concatenate(scores), np.concatenate(labels).astype(int)


def evaluate(model, dataset, mode, split="test"):
    """AUC/accuracy/loss record over a dataset split."""
    sequences = getattr(dataset.split, split)
    if not sequences:
        raise PipelineError(f"empty {split} split")
    scores, labels = collect_predictions(model, sequences,
                                         dataset.spec.domain_id, mode)
    p = np.clip(scores, 1e-7, 1 - 1e-7)
    loss = float(-(labels * np.log(p) + (1 - labels) * np.log(1 - p)).mean())
    return {
        "auc": metrics_mod.auc(scores, labels),
        "acc": metrics_mod.accuracy(scores, labels),
        "loss": loss,
        "n_predictions": int(len(scores)),
    }


def knowledge_state_features(model, sequences, domain_id, mode,
                             units="interaction", batch_size=64, cap=2000,
                             seed=0):
    """Knowledge-state feature units for the domain-discrepancy probe.

    units="interaction": one feature per mask-valid step >= 2 (seeded
    subsample of at most cap rows). units="sequence": mask-valid states
    mean-pooled per sequence. Interaction units are the default: pooling
    per sequence concentrates each domain's mean signature and saturates
    the linear probe, hiding the alignment the normalization produces.
    """
    feats = []
    with torch.no_grad():
        for i in range(0, len(sequences), batch_size):
            chunk = list(sequences[i:i + batch_size])
            bt = batch_tensors(stack_batch(chunk))
            _, states = model(bt["questions"], bt["responses"], bt["mask"],
                              domain_id, mode)
            if units == "sequence":
                m = bt["mask"].unsqueeze(-1)
                feats.append(((states * m).sum(dim=1) / m.sum(dim=1)).numpy())
            elif units == "interaction":
                valid = bt["mask"].bool()
                valid[:, 0] = False
                feats.append(states[valid].numpy())
            else:
                raise PipelineError(f"unknown feature units {units!r}")
    out = np.concatenate(feats)
    if units == "interaction" and cap is not None and len(out) > cap:
        keep = np.random.default_rng(seed).choice(len(out), size=cap,
                                                  replace=False)
        out = out[keep]
    return out


def eval_mode(phase, role):
    """Representation a checkpoint of a given phase uses for a domain role."""
    if phase == "cfl" or phase == "scratch":
        return "source"
    if phase == "refine":
        return "proto"
    if phase == "adapt":
        return "target" if role == "target" else "proto"
    raise PipelineError(f"unknown phase {phase!r}")


# -- checkpoints --------------------------------------------------------------


@dataclass
class Checkpoint:
    phase: str
    config: dict
    meta: dict
    tensors: dict


def _spec_meta(spec):
    return {"domain_id": spec.domain_id, "n_questions": spec.n_questions,
            "n_concepts": spec.n_concepts}


def checkpoint_from_model(model, config, phase, source_specs,
                          target_spec=None):
    tensors = {key: t.detach().numpy().copy()
               for key, t in named_tensor_map(model).items()}
    for spec in source_specs:
        tensors[f"domains/{spec.domain_id}/q_matrix"] = np.asarray(spec.q_matrix)
    if model.prototypes is not None:
        tensors["prototypes/assignment"] = model.prototypes.assignment
    if model.target_table is not None:
        if target_spec is None:
            raise PipelineError("adapted model needs its target_spec to "
                                "checkpoint")
        tensors["target_concepts/init_choices"] = model.target_table.init_choices
        tensors[f"domains/{target_spec.domain_id}/q_matrix"] = \
            np.asarray(target_spec.q_matrix)
    meta = {
        "sources": [_spec_meta(s) for s in source_specs],
        "target": _spec_meta(target_spec) if target_spec is not None else None,
        "max_len": int(model.max_len),
    }
    return Checkpoint(phase=phase, config=asdict(config), meta=meta,
                      tensors=tensors)


def save_checkpoint(ckpt, directory):
    os.makedirs(directory, exist_ok=True)
    head = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION,
            "phase": ckpt.phase, "config": ckpt.config, "meta": ckpt.meta}
    with open(os.path.join(directory, "meta.json"), "w", encoding="utf-8") as fh:
        json.dump(head, fh, indent=2)
    np.savez(os.path.join(directory, "tensors.npz"), **ckpt.tensors)


def load_checkpoint(directory):
    path = os.path.join(directory, "meta.json")
    with open(path, "r", encoding="utf-8") as fh:
        head = json.load(fh)
    if head.get("format") != CHECKPOINT_FORMAT:
        raise PipelineError(f"{path}: not a {CHECKPOINT_FORMAT}")
    if head.get("version") != CHECKPOINT_VERSION:
        raise PipelineError(f"{path}: unsupported checkpoint version "
                            f"{head.get('version')}")
    with np.load(os.path.join(directory, "tensors.npz")) as npz:
        tensors = {key: npz[key] for key in npz.files}
    return Checkpoint(phase=head["phase"], config=head["config"],
                      meta=head["meta"], tensors=tensors)


def build_model_from_checkpoint(ckpt):
    config = TrainConfig(**ckpt.config)
    source_specs = [
        DomainSpec(domain_id=s["domain_id"], n_questions=s["n_questions"],
                   n_concepts=s["n_concepts"],
                   q_matrix=ckpt.tensors[f"domains/{s['domain_id']}/q_matrix"])
        for s in ckpt.meta["sources"]]
    model = build_fresh_model(source_specs, config, ckpt.meta["max_len"])
    if "prototypes" in ckpt.tensors:
        model.set_prototypes(ckpt.tensors["prototypes"],
                             ckpt.tensors["prototypes/assignment"])
    if "target_concepts" in ckpt.tensors:
        t = ckpt.meta["target"]
        target_spec = DomainSpec(
            domain_id=t["domain_id"], n_questions=t["n_questions"],
            n_concepts=t["n_concepts"],
            q_matrix=ckpt.tensors[f"domains/{t['domain_id']}/q_matrix"])
        model.attach_target(target_spec, ckpt.tensors["target_concepts"],
                            ckpt.tensors["target_concepts/init_choices"])
    mapping = named_tensor_map(model)
    for key, tensor in mapping.items():
        stored = ckpt.tensors.get(key)
        if stored is None:
            raise PipelineError(f"checkpoint missing tensor {key}")
        if tuple(stored.shape) != tuple(tensor.shape):
            raise PipelineError(f"checkpoint tensor {key} has shape "
                                f"{stored.shape}, expected {tuple(tensor.shape)}")
        with torch.no_grad():
            tensor.copy_(torch.as_tensor(stored, dtype=tensor.dtype))
    return model, config
