"""The operator surface end to end, driven through the CLI entry point.

Emits synthetic CSVs, ingests two sources and a target into dataset stores,
trains a small source model, adapts it with one batch of target data,
evaluates, sweeps the blend weight lambda, probes domain discrepancy, and
exports attention scores. Everything lands under ./cli_demo_run/.
"""

import json
import pathlib
import shutil

from crosskt.cli import main

root = pathlib.Path("cli_demo_run")
if root.exists():
    shutil.rmtree(root)
root.mkdir()

run = lambda *argv: main(list(argv)) == 0 or (_ for _ in ()).throw(
    SystemExit(f"command failed: {argv}"))

run("synth", "--out", str(root / "data"), "--data-seed", "0")

for did in (0, 1):
    run("ingest", "--csv", str(root / "data" / f"domain_{did}.csv"),
        "--domain-id", str(did), "--out", str(root / f"store_{did}"),
        "--window-length", "40")
run("ingest", "--csv", str(root / "data" / "domain_4.csv"),
    "--domain-id", "4", "--out", str(root / "store_target"),
    "--window-length", "40")

small = ["--d", "16", "--n-heads", "2", "--n-layers", "1",
         "--phase1-epochs", "60", "--phase2-epochs", "30",
         "--window-length", "40", "--log-every", "10"]
run("train-source", "--out", str(root / "run_train"),
    "--source-store", str(root / "store_0"),
    "--source-store", str(root / "store_1"), *small)

ckpt = str(root / "run_train" / "checkpoint_refine")
run("adapt", "--out", str(root / "run_adapt"), "--checkpoint", ckpt,
    "--target-store", str(root / "store_target"),
    "--target-batches", "1")

run("eval", "--checkpoint", str(root / "run_adapt" / "checkpoint_adapt"),
    "--data-store", str(root / "store_target"), "--role", "target")

run("sweep-lambda", "--out", str(root / "run_sweep"), "--checkpoint", ckpt,
    "--target-store", str(root / "store_target"),
    "--values", "0,0.3,0.7,1.0", "--target-batches", "1")
print("sweep results:",
      json.loads((root / "run_sweep" / "sweep.json").read_text()))

run("probe-adistance", "--checkpoint", ckpt,
    "--data-store", str(root / "store_0"),
    "--data-store", str(root / "store_1"))

run("export-attention", "--checkpoint", ckpt,
    "--data-store", str(root / "store_0"), "--index", "0",
    "--out", str(root / "attention.json"))
print(f"artifacts under {root}/")
