"""Command-line surface for reproducible experiment runs.

Subcommands: synth, ingest, train-source, adapt, eval, probe-adistance,
sweep-lambda, export-attention. Hyperparameters resolve in three layers:
built-in (or preset) defaults, then a config file of ``key = value`` lines
('#' comments allowed, keys are TrainConfig field names), then explicit
flags, which win. Every run directory gets run.json with the resolved
config, seeds, and git describe; a run never writes into an existing
directory.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import subprocess
import sys
import time

import torch

from . import metrics as metrics_mod
from . import presets, synth
from .data import (DataError, DomainDataset, DomainSpec, ingest_csv,
                   load_domain, save_domain, split_by_student, stack_batch,
                   window_and_filter)
from .model import ModelError, batch_tensors
from .pipeline import (MetricsLog, PipelineError, TrainConfig, TrainRun,
                       adapt_target, build_model_from_checkpoint,
                       checkpoint_from_model, eval_mode, evaluate,
                       knowledge_state_features, load_checkpoint,
                       save_checkpoint, train_phase1_cfl, train_phase2_refine)


class CliError(RuntimeError):
    pass


_CONFIG_FIELDS = {f.name: f.type for f in dataclasses.fields(TrainConfig)}


def _parse_scalar(text):
    text = text.strip()
    lowered = text.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def parse_config_file(path):
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise CliError(f"{path}: line {lineno}: expected key = value")
            key, raw = [part.strip() for part in line.split("=", 1)]
            if key not in _CONFIG_FIELDS:
                raise CliError(f"{path}: line {lineno}: unknown key {key!r}")
            values[key] = _parse_scalar(raw)
    return values


_FLAG_TO_FIELD = {
    "d": "d", "k": "k", "lr": "lr", "batch_size": "batch_size",
    "phase1_epochs": "phase1_epochs", "phase2_epochs": "phase2_epochs",
    "adapt_epochs": "adapt_epochs", "scratch_epochs": "scratch_epochs",
    "lambda_": "lambda_mix", "encoder": "encoder", "n_heads": "n_heads",
    "n_layers": "n_layers", "window_length": "window_length",
    "target_batches": "target_batches", "model_seed": "model_seed",
    "data_seed": "data_seed", "cluster_seed": "cluster_seed",
    "grad_clip": "grad_clip", "log_every": "log_every",
}


def add_config_flags(parser):
    parser.add_argument("--config", help="key = value config file")
    parser.add_argument("--preset", choices=["desk"],
                        help="bundled synthetic preset (data + defaults)")
    parser.add_argument("--d", type=int)
    parser.add_argument("--k", type=int)
    parser.add_argument("--lr", type=float)
    parser.add_argument("--batch-size", type=int, dest="batch_size")
    parser.add_argument("--phase1-epochs", type=int, dest="phase1_epochs")
    parser.add_argument("--phase2-epochs", type=int, dest="phase2_epochs")
    parser.add_argument("--adapt-epochs", type=int, dest="adapt_epochs")
    parser.add_argument("--scratch-epochs", type=int, dest="scratch_epochs")
    parser.add_argument("--lambda", type=float, dest="lambda_")
    parser.add_argument("--encoder", choices=["dkt", "saint", "ra"])
    parser.add_argument("--n-heads", type=int, dest="n_heads")
    parser.add_argument("--n-layers", type=int, dest="n_layers")
    parser.add_argument("--window-length", type=int, dest="window_length")
    parser.add_argument("--target-batches", type=int, dest="target_batches",
                        choices=[1, 2, 4, 8])
    parser.add_argument("--model-seed", type=int, dest="model_seed")
    parser.add_argument("--data-seed", type=int, dest="data_seed")
    parser.add_argument("--cluster-seed", type=int, dest="cluster_seed")
    parser.add_argument("--grad-clip", type=float, dest="grad_clip")
    parser.add_argument("--log-every", type=int, dest="log_every")
    parser.add_argument("--no-seqin", action="store_true",
                        help="disable sequence instance normalization")
    parser.add_argument("--no-positions", action="store_true",
                        help="disable learned positional embeddings")


def resolve_config(args, base=None):
    """defaults (or preset/checkpoint base) < config file < explicit flags."""
    if base is not None:
        values = dict(base)
    elif getattr(args, "preset", None) == "desk":
        values = dataclasses.asdict(presets.desk_train_config())
    else:
        values = dataclasses.asdict(TrainConfig())
    if getattr(args, "config", None):
        values.update(parse_config_file(args.config))
    for flag, field in _FLAG_TO_FIELD.items():
        given = getattr(args, flag, None)
        if given is not None:
            values[field] = given
    if getattr(args, "no_seqin", False):
        values["use_seqin"] = False
    if getattr(args, "no_positions", False):
        values["use_positions"] = False
    try:
        return TrainConfig(**values)
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid configuration: {exc}") from exc


def _git_describe():
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"],
                             capture_output=True, text=True, timeout=10)
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


def _new_run_dir(path):
    if os.path.exists(path):
        raise CliError(f"run directory {path} already exists; "
                       "runs never mutate previous runs")
    os.makedirs(path)
    return path


def _write_run_record(run_dir, command, config, extra=None):
    record = {
        "command": command,
        "argv": sys.argv[1:],
        "config": dataclasses.asdict(config) if config is not None else None,
        "seeds": ({"model": config.model_seed, "data": config.data_seed,
                   "cluster": config.cluster_seed} if config else None),
        "git_describe": _git_describe(),
        "started_unix": time.time(),
    }
    if extra:
        record.update(extra)
    with open(os.path.join(run_dir, "run.json"), "w", encoding="utf-8") as fh:
        json.dump(record, fh, indent=2)


def _load_desk_data(args, config):
    sources, target = presets.make_desk_data(config.data_seed)
    return sources, target


def _load_sources(args, config):
    if args.preset == "desk":
        return _load_desk_data(args, config)[0]
    if not args.source_store:
        raise CliError("need --source-store (repeatable) or --preset desk")
    return [load_domain(path) for path in args.source_store]


def _load_target(args, config):
    if getattr(args, "preset", None) == "desk":
        return _load_desk_data(args, config)[1]
    if not getattr(args, "target_store", None):
        raise CliError("need --target-store or --preset desk")
    return load_domain(args.target_store)


# -- subcommands ---------------------------------------------------------------


def cmd_synth(args):
    config = resolve_config(args)
    run_dir = _new_run_dir(args.out)
    _write_run_record(run_dir, "synth", config)
    source_configs = presets.desk_source_configs(config.data_seed)
    target_config = presets.desk_target_config(config.data_seed)
    manifest = {"domains": []}
    for cfg in source_configs + [target_config]:
        role = "target" if cfg is target_config else "source"
        _, interactions, truth = synth.generate_domain(cfg)
        csv_path = os.path.join(run_dir, f"domain_{cfg.domain_id}.csv")
        truth_path = os.path.join(run_dir, f"domain_{cfg.domain_id}.truth.jsonl")
        synth.write_csv(interactions, csv_path)
        synth.write_ground_truth(truth, truth_path)
        manifest["domains"].append(
            {"domain_id": cfg.domain_id, "role": role, "csv": csv_path,
             "ground_truth": truth_path,
             "n_interactions": len(interactions)})
    with open(os.path.join(run_dir, "manifest.json"), "w",
              encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
    print(json.dumps(manifest))
    return 0


def cmd_ingest(args):
    spec, interactions = ingest_csv(args.csv, domain_id=args.domain_id)
    sequences = window_and_filter(interactions, args.domain_id,
                                  window_length=args.window_length,
                                  min_total=args.min_total)
    split = split_by_student(sequences, ratio=args.ratio, seed=args.split_seed)
    save_domain(DomainDataset(spec=spec, split=split), args.out)
    summary = {"domain_id": spec.domain_id, "n_questions": spec.n_questions,
               "n_concepts": spec.n_concepts, "train": len(split.train),
               "test": len(split.test), "out": args.out}
    print(json.dumps(summary))
    return 0


def cmd_train_source(args):
    config = resolve_config(args)
    sources = _load_sources(args, config)
    run_dir = _new_run_dir(args.out)
    _write_run_record(run_dir, "train-source", config,
                      extra={"sources": [s.spec.domain_id for s in sources]})
    log = MetricsLog(os.path.join(run_dir, "metrics.jsonl"))
    run = TrainRun(config=config)

    t0 = time.time()
    model = train_phase1_cfl(sources, config, log)
    run.advance("cfl", time.time() - t0)
    for ds in sources:
        rec = evaluate(model, ds, "source")
        log.emit(phase="cfl", epoch=config.phase1_epochs,
                 domain=ds.spec.domain_id, **rec)
    ckpt = checkpoint_from_model(model, config, "cfl",
                                 [s.spec for s in sources])
    save_checkpoint(ckpt, os.path.join(run_dir, "checkpoint_cfl"))
    run.checkpoints.append("checkpoint_cfl")

    t0 = time.time()
    model = train_phase2_refine(model, sources, config, log)
    run.advance("refine", time.time() - t0)
    for ds in sources:
        rec = evaluate(model, ds, "proto")
        log.emit(phase="refine", epoch=config.phase2_epochs,
                 domain=ds.spec.domain_id, **rec)
    ckpt = checkpoint_from_model(model, config, "refine",
                                 [s.spec for s in sources])
    save_checkpoint(ckpt, os.path.join(run_dir, "checkpoint_refine"))
    run.checkpoints.append("checkpoint_refine")

    print(json.dumps({"run_dir": run_dir, "phases": run.wall_clock,
                      "checkpoints": run.checkpoints}))
    return 0


def cmd_adapt(args):
    ckpt = load_checkpoint(args.checkpoint)
    if ckpt.phase != "refine":
        raise CliError(f"adapt expects a refine checkpoint, got {ckpt.phase!r}")
    config = resolve_config(args, base=ckpt.config)
    target = _load_target(args, config)
    run_dir = _new_run_dir(args.out)
    _write_run_record(run_dir, "adapt", config,
                      extra={"checkpoint": args.checkpoint,
                             "target": target.spec.domain_id})
    log = MetricsLog(os.path.join(run_dir, "metrics.jsonl"))
    model, _ = build_model_from_checkpoint(ckpt)
    t0 = time.time()
    adapt_target(model, target, config, log)
    seconds = time.time() - t0
    rec = evaluate(model, target, "target")
    log.emit(phase="adapt", epoch=config.adapt_epochs,
             domain=target.spec.domain_id, **rec)
    out_ckpt = checkpoint_from_model(
        model, config, "adapt",
        [DomainSpec(domain_id=s["domain_id"], n_questions=s["n_questions"],
                    n_concepts=s["n_concepts"],
                    q_matrix=ckpt.tensors[f"domains/{s['domain_id']}/q_matrix"])
         for s in ckpt.meta["sources"]],
        target_spec=target.spec)
    save_checkpoint(out_ckpt, os.path.join(run_dir, "checkpoint_adapt"))
    print(json.dumps({"run_dir": run_dir, "seconds": seconds, "eval": rec}))
    return 0


def cmd_eval(args):
    ckpt = load_checkpoint(args.checkpoint)
    model, config = build_model_from_checkpoint(ckpt)
    dataset = load_domain(args.data_store)
    mode = eval_mode(ckpt.phase, args.role)
    rec = evaluate(model, dataset, mode, split=args.split)
    rec.update({"phase": ckpt.phase, "domain": dataset.spec.domain_id,
                "role": args.role, "split": args.split})
    print(json.dumps(rec))
    return 0


def cmd_probe_adistance(args):
    ckpt = load_checkpoint(args.checkpoint)
    model, config = build_model_from_checkpoint(ckpt)
    values = {}
    feats = []
    for path in args.data_store:
        ds = load_domain(path)
        mode = eval_mode(ckpt.phase, "target"
                         if ds.spec.domain_id == (ckpt.meta.get("target") or {}).get("domain_id")
                         else "source")
        # the probe measures representation geometry: pool both splits
        sequences = list(ds.split.train) + list(ds.split.test)
        feats.append((ds.spec.domain_id,
                      knowledge_state_features(model, sequences,
                                               ds.spec.domain_id, mode,
                                               units=args.units,
                                               seed=args.seed)))
    if len(feats) != 2:
        raise CliError("probe-adistance needs exactly two --data-store")
    (id_a, fa), (id_b, fb) = feats
    value = metrics_mod.proxy_a_distance(fa, fb, seed=args.seed)
    record = {"pair": [id_a, id_b], "value": value, "seed": args.seed,
              "units": args.units}
    print(json.dumps(record))
    return 0


def cmd_sweep_lambda(args):
    ckpt = load_checkpoint(args.checkpoint)
    if ckpt.phase != "refine":
        raise CliError(f"sweep-lambda expects a refine checkpoint, got "
                       f"{ckpt.phase!r}")
    base = resolve_config(args, base=ckpt.config)
    target = _load_target(args, base)
    run_dir = _new_run_dir(args.out)
    _write_run_record(run_dir, "sweep-lambda", base,
                      extra={"values": args.values})
    values = [float(v) for v in args.values.split(",") if v.strip() != ""]
    results = []
    for lam in values:
        config = dataclasses.replace(base, lambda_mix=lam)
        model, _ = build_model_from_checkpoint(ckpt)
        adapt_target(model, target, config)
        rec = evaluate(model, target, "target")
        results.append({"lambda": lam, "auc": rec["auc"],
                        "target_batches": config.target_batches})
    with open(os.path.join(run_dir, "sweep.json"), "w",
              encoding="utf-8") as fh:
        json.dump(results, fh, indent=2)
    print(json.dumps(results))
    return 0


def cmd_export_attention(args):
    ckpt = load_checkpoint(args.checkpoint)
    model, config = build_model_from_checkpoint(ckpt)
    if model.variant != "ra":
        raise CliError("attention export requires the ra encoder")
    dataset = load_domain(args.data_store)
    sequences = getattr(dataset.split, args.split)
    if not sequences:
        raise CliError(f"no sequences in split {args.split!r}")
    if not 0 <= args.index < len(sequences):
        raise CliError(f"sequence index {args.index} out of range")
    seq = sequences[args.index]
    role = "target" if (ckpt.meta.get("target") or {}).get("domain_id") == \
        dataset.spec.domain_id else "source"
    mode = eval_mode(ckpt.phase, role)
    collected = []
    bt = batch_tensors(stack_batch([seq]))
    with torch.no_grad():
        model(bt["questions"], bt["responses"], bt["mask"],
              dataset.spec.domain_id, mode, collect_attention=collected)
    layers = []
    for li, w in enumerate(collected):
        for hi in range(w.shape[1]):
            layers.append({"layer": li, "head": hi,
                           "scores": w[0, hi].numpy().tolist()})
    payload = {"domain_id": dataset.spec.domain_id, "split": args.split,
               "index": args.index, "layers": layers}
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh)
        print(json.dumps({"layers": len(layers), "out": args.out}))
    else:
        print(json.dumps(payload))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="crosskt",
        description="Cross-domain knowledge tracing experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="emit synthetic multi-domain CSVs")
    p.add_argument("--out", required=True)
    add_config_flags(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="canonical CSV -> dataset store")
    p.add_argument("--csv", required=True)
    p.add_argument("--domain-id", type=int, required=True, dest="domain_id")
    p.add_argument("--out", required=True)
    p.add_argument("--window-length", type=int, default=200,
                   dest="window_length")
    p.add_argument("--min-total", type=int, default=20, dest="min_total")
    p.add_argument("--ratio", type=float, default=0.8)
    p.add_argument("--split-seed", type=int, default=0, dest="split_seed")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train-source", help="phases 1+2 on source domains")
    p.add_argument("--out", required=True)
    p.add_argument("--source-store", action="append", dest="source_store")
    add_config_flags(p)
    p.set_defaults(func=cmd_train_source)

    p = sub.add_parser("adapt", help="cold-start adaptation to a target")
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--target-store", dest="target_store")
    add_config_flags(p)
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data-store", required=True, dest="data_store")
    p.add_argument("--role", choices=["source", "target"], default="source")
    p.add_argument("--split", choices=["train", "test"], default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("probe-adistance",
                       help="proxy A-distance between two domains' states")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data-store", action="append", required=True,
                   dest="data_store")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--units", choices=["interaction", "sequence"],
                   default="interaction")
    p.set_defaults(func=cmd_probe_adistance)

    p = sub.add_parser("sweep-lambda", help="adapt+eval over a lambda grid")
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--target-store", dest="target_store")
    p.add_argument("--values", required=True,
                   help="comma-separated lambda grid, e.g. 0,0.1,0.2")
    add_config_flags(p)
    p.set_defaults(func=cmd_sweep_lambda)

    p = sub.add_parser("export-attention",
                       help="per-head attention score arrays as JSON")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data-store", required=True, dest="data_store")
    p.add_argument("--split", choices=["train", "test"], default="test")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_export_attention)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, DataError, PipelineError, ModelError, ValueError,
            OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
