#!/usr/bin/env python3
"""Full desk-scale experiment: phantom cohort through preprocessing,
curation, training of selected models, inference, quality metrics, and the
comparison table.

    python3 scripts/run_desk_experiment.py --workdir runs/desk --models unet_mse unet_mid

At the defaults (20 studies, 64 px slices) this runs in a few minutes on CPU.
"""

import argparse
import sys
import time
from pathlib import Path

from hbpsynth.cli import main as cli

DEFAULT_EPOCHS = {"unet_mse": 120, "unet_low": 30, "unet_mid": 30, "unet_high": 30, "pgan": 30, "ddpm": 30}


def run(label, *argv):
    start = time.monotonic()
    code = cli([str(a) for a in argv])
    print(f"[{label}] exit {code} in {time.monotonic() - start:.1f}s", flush=True)
    if code != 0:
        sys.exit(code)


def parse_args():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", default="runs/desk")
    parser.add_argument("--n", type=int, default=20)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--models", nargs="+", default=["unet_mse", "unet_mid"])
    parser.add_argument("--baseline", default="unet_mse")
    parser.add_argument("--epochs", type=int, default=None, help="override per-model defaults")
    parser.add_argument("--noise-sigma", type=float, default=0.005)
    parser.add_argument("--bias-amplitude", type=float, default=0.10)
    return parser.parse_args()


def main():
    args = parse_args()
    work = Path(args.workdir)
    raw, prep, cur = work / "raw", work / "preprocessed", work / "curated"
    models, inf, ev, st = work / "models", work / "infer", work / "eval", work / "stats"

    run("phantom", "phantom", "--n", args.n, "--seed", args.seed,
        "--u-lo", 0.3, "--u-hi", 0.9, "--noise-sigma", args.noise_sigma,
        "--bias-amplitude", args.bias_amplitude, "--out", raw)
    run("preprocess", "preprocess", "--data", raw, "--out", prep,
        "--target-spacing-x", 1.0, "--target-spacing-y", 1.0)
    run("curate", "curate", "--data", prep, "--out", cur, "--seed", args.seed)
    splits = cur / "splits.json"
    for kind in args.models:
        epochs = args.epochs or DEFAULT_EPOCHS.get(kind, 30)
        run(f"train:{kind}", "train", "--data", prep, "--splits", splits,
            "--model", kind, "--epochs", epochs, "--seed", 1, "--out", models)
        run(f"infer:{kind}", "infer", "--data", prep, "--splits", splits,
            "--checkpoint", models / f"{kind}.pt", "--out", inf, "--seed", 4)
    run("evaluate", "evaluate", "--manifest", inf / "manifest.json", "--out", ev)
    run("stats", "stats", "--reports", ev / "reports.json",
        "--baseline", args.baseline, "--out", st)
    print("\n" + (st / "comparison.txt").read_text())
    print(f"artifacts under {work}")


if __name__ == "__main__":
    main()
