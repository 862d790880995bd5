#!/usr/bin/env python3
"""Spin up the blinded-read service on a synthetic manifest.

Builds a tiny phantom cohort, fakes 'synthetic' volumes by re-rendering at a
different uptake, writes a manifest, then serves the rating API. Point the
frontend at it (frontend/index.html?api=http://127.0.0.1:8600) or drive it
with curl.
"""

import argparse
import json
from pathlib import Path

import numpy as np

from hbpsynth.phantom import PhantomParams, generate_study
from hbpsynth.volume import save_volume


def build_manifest(workdir: Path, n: int, seed: int) -> Path:
    workdir.mkdir(parents=True, exist_ok=True)
    entries = []
    rng = np.random.default_rng(seed)
    for i in range(n):
        u = float(rng.uniform(0.2, 0.9))
        study = generate_study(PhantomParams(seed=seed * 100 + i, uptake=u))
        fake = generate_study(PhantomParams(seed=seed * 100 + i, uptake=min(1.0, u + 0.15)))
        real_path = workdir / f"p{i:02d}_real.nii.gz"
        synth_path = workdir / f"p{i:02d}_synth.nii.gz"
        save_volume(study.phases["hbp"], real_path)
        save_volume(fake.phases["hbp"], synth_path)
        entries.append(
            {
                "patient_id": f"p{i:02d}",
                "model_id": "demo_model",
                "real": str(real_path),
                "synthetic": str(synth_path),
                "cohort": "IoD" if u >= 0.5 else "OoD",
                "sampling_seed": 0,
            }
        )
    manifest = workdir / "manifest.json"
    manifest.write_text(json.dumps({"candidates": entries}, indent=1, sort_keys=True))
    return manifest


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", default="runs/read-demo")
    parser.add_argument("--n", type=int, default=15)
    parser.add_argument("--seed", type=int, default=3)
    parser.add_argument("--port", type=int, default=8600)
    args = parser.parse_args()

    workdir = Path(args.workdir)
    manifest = build_manifest(workdir, args.n, args.seed)
    print(f"manifest: {manifest}")

    from hbpsynth.cli import main as cli

    raise SystemExit(
        cli([
            "read-serve",
            "--manifest", str(manifest),
            "--state-dir", str(workdir / "state"),
            "--port", str(args.port),
        ])
    )


if __name__ == "__main__":
    main()
