"""Unified command-line entry point wiring the full workflow:

    phantom -> preprocess -> curate -> train -> infer -> evaluate -> stats

plus the blinded-read service (`read-serve`) and its exporter
(`read-export`). Every run writes a resolved-config snapshot next to its
outputs; all outputs are deterministic under --seed.

Exit codes: 0 success, 1 domain error, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import curation, phantom, stats, training
from .errors import DomainError
from .iqa import MetricReport, evaluate_cohort
from .models.checkpoint import MODEL_KINDS, load_checkpoint, save_checkpoint
from .models.extractor import FeatureExtractor, PerceptualExtractorConfig
from .models.inference import infer_volume
from .preprocess import PipelineConfig, run_pipeline
from .studyio import load_cohort, load_study, save_study
from .volume import load_volume, save_volume

log = logging.getLogger("hbpsynth")

DATA_ROOT_ENV = "HBPSYNTH_DATA_ROOT"

# allowed config keys per section: unknown keys are rejected
CONFIG_SECTIONS = {
    "phantom": {
        "n", "seed", "u_lo", "u_hi", "shape", "spacing", "noise_sigma",
        "bias_amplitude",
    },
    "preprocess": {
        "target_spacing_x", "target_spacing_y", "bias_poly_degree",
        "crop_threshold", "registration",
    },
    "curate": {"alpha", "test_fraction", "balance_key", "train_ratio", "seed"},
    "train": {
        "model", "resolution", "epochs", "lr", "lam", "diffusion_steps",
        "batch_size", "seed", "base_filters", "extractor_seed",
    },
    "infer": {"split", "seed"},
    "evaluate": {"extractor_seed"},
    "stats": {"baseline"},
    "read-serve": {"host", "port", "seed"},
    "read-export": {},
}


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    cfg = yaml.safe_load(Path(path).read_text()) or {}
    if not isinstance(cfg, dict):
        raise DomainError("config file must hold a mapping of sections")
    for section, keys in cfg.items():
        if section not in CONFIG_SECTIONS:
            raise DomainError(f"unknown config section {section!r}")
        if not isinstance(keys, dict):
            raise DomainError(f"config section {section!r} must be a mapping")
        unknown = set(keys) - CONFIG_SECTIONS[section]
        if unknown:
            raise DomainError(
                f"unknown config keys in {section!r}: {sorted(unknown)}"
            )
    return cfg


class _Resolver:
    """CLI flag > config-file key > hard default, with a resolved snapshot."""

    def __init__(self, args: argparse.Namespace, section: str):
        self.args = args
        self.section = _load_config(args.config).get(section, {})
        self.resolved: dict = {}

    def get(self, key: str, default=None):
        cli_value = getattr(self.args, key.replace("-", "_"), None)
        value = cli_value if cli_value is not None else self.section.get(key, default)
        self.resolved[key] = value
        return value

    def snapshot(self, out_dir: Path, command: str):
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / f"{command.replace('-', '_')}_config.yaml"
        path.write_text(
            yaml.safe_dump({command: self.resolved}, sort_keys=True)
        )


def _out_dir(args) -> Path:
    if not args.out:
        raise DomainError("--out is required for this command")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _data_dir(value: str | None) -> Path:
    root = value or os.environ.get(DATA_ROOT_ENV)
    if not root:
        raise DomainError(
            f"no data directory given (flag or {DATA_ROOT_ENV} environment variable)"
        )
    return Path(root)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


# --- subcommands ---------------------------------------------------------------


def cmd_phantom(args) -> int:
    r = _Resolver(args, "phantom")
    out = _out_dir(args)
    n = int(r.get("n", 20))
    seed = int(r.get("seed", 0))
    u_lo = float(r.get("u_lo", 0.1))
    u_hi = float(r.get("u_hi", 0.9))
    noise = float(r.get("noise_sigma", 0.0))
    bias = float(r.get("bias_amplitude", 0.0))
    shape = tuple(int(x) for x in (r.get("shape") or "48,48,24").split(","))
    spacing = tuple(float(x) for x in (r.get("spacing") or "1.0,1.0,2.0").split(","))
    cohort = phantom.generate_cohort(
        n, seed=seed, u_range=(u_lo, u_hi), shape=shape, spacing=spacing,
        noise_sigma=noise, bias_amplitude=bias,
    )
    for study in cohort:
        save_study(study, out)
    r.snapshot(out, "phantom")
    log.info("wrote %d phantom studies to %s", n, out)
    return 0


def cmd_preprocess(args) -> int:
    r = _Resolver(args, "preprocess")
    out = _out_dir(args)
    cohort = load_cohort(_data_dir(args.data))
    cfg = PipelineConfig(
        target_inplane_spacing=(
            float(r.get("target_spacing_x", 0.8398)),
            float(r.get("target_spacing_y", 0.8398)),
        ),
        bias_poly_degree=int(r.get("bias_poly_degree", 2)),
        crop_threshold=float(r.get("crop_threshold", 0.05)),
        registration=str(r.get("registration", "affine")),
    )
    for study in cohort:
        processed = run_pipeline(study, cfg)
        save_study(processed, out)
        log.info("preprocessed %s", study.patient_id)
    r.snapshot(out, "preprocess")
    return 0


def cmd_curate(args) -> int:
    r = _Resolver(args, "curate")
    out = _out_dir(args)
    seed = int(r.get("seed", 0))
    alpha = float(r.get("alpha", curation.DEFAULT_ALPHA))
    test_fraction = float(r.get("test_fraction", 0.1))
    balance_key = str(r.get("balance_key", "scanner"))
    train_ratio = float(r.get("train_ratio", 0.8))
    cohort = load_cohort(_data_dir(args.data))

    metric, table = curation.select_curation_metric(cohort)
    records = curation.compute_ces(cohort, metric)
    iod_all, ood_all = curation.curate(cohort, alpha)

    rng = np.random.default_rng([seed, 0x7E57])
    n_test = max(1, round(test_fraction * len(cohort)))
    test_ids = {
        cohort[i].patient_id for i in rng.permutation(len(cohort))[:n_test]
    }
    remainder = [s for s in cohort if s.patient_id not in test_ids]
    trainable = [s for s in remainder if s.cohort == "IoD"]
    excluded = [s for s in remainder if s.cohort == "OoD"]
    if not trainable:
        raise DomainError("no IoD studies left for training after curation")
    assignments = curation.split_and_balance(
        trainable, ratios=(train_ratio, 1.0 - train_ratio),
        balance_key=balance_key, seed=seed,
    )
    split_rows = [
        {
            "patient_id": a.patient_id,
            "split": a.split,
            "cohort": a.cohort,
            "bootstrap_weight": a.bootstrap_weight,
        }
        for a in assignments
    ]
    for study in cohort:
        if study.patient_id in test_ids:
            split_rows.append(
                {
                    "patient_id": study.patient_id,
                    "split": "test",
                    "cohort": study.cohort,
                    "bootstrap_weight": 1,
                }
            )
    manifest = {
        "metric": metric.name,
        "alpha": alpha,
        "assignments": sorted(split_rows, key=lambda row: row["patient_id"]),
        "excluded_ood": sorted(s.patient_id for s in excluded),
    }
    (out / "splits.json").write_text(json.dumps(manifest, sort_keys=True, indent=1))

    ces_by_id = {rec.patient_id: rec for rec in records}
    _write_csv(
        out / "ces.csv",
        ["patient_id", "metric", "value", "cohort"],
        [
            [s.patient_id, metric.name, f"{ces_by_id[s.patient_id].value:.6f}", s.cohort]
            for s in cohort
        ],
    )
    _write_csv(
        out / "consistency.csv",
        ["score name", "consistency"],
        [[name, f"{value:.4f}"] for name, value in table],
    )
    values = np.array([s.ces for s in cohort])
    edges = np.histogram_bin_edges(values, bins=12)
    hist_rows = []
    for split_name, ids in (
        ("all", {s.patient_id for s in cohort}),
        ("test", test_ids),
        ("train_val", {s.patient_id for s in trainable}),
    ):
        vals = np.array([s.ces for s in cohort if s.patient_id in ids])
        counts, _ = np.histogram(vals, bins=edges)
        for lo, hi, count in zip(edges[:-1], edges[1:], counts):
            hist_rows.append([split_name, f"{lo:.5f}", f"{hi:.5f}", int(count)])
    _write_csv(out / "alpha_histogram.csv", ["split", "bin_lo", "bin_hi", "count"], hist_rows)
    r.snapshot(out, "curate")
    log.info(
        "curated %d studies: %d IoD / %d OoD, metric %s",
        len(cohort), len(iod_all), len(ood_all), metric.name,
    )
    return 0


def _studies_by_split(data_dir: Path, splits_path: Path):
    manifest = json.loads(Path(splits_path).read_text())
    groups: dict[str, list] = {"train": [], "validation": [], "test": []}
    for row in manifest["assignments"]:
        study = load_study(data_dir / row["patient_id"])
        study.cohort = row["cohort"]
        weight = int(row["bootstrap_weight"]) if row["split"] == "train" else 1
        for _ in range(weight):
            groups[row["split"]].append(study)
    return groups


def cmd_train(args) -> int:
    r = _Resolver(args, "train")
    out = _out_dir(args)
    model_kind = str(r.get("model", "unet_mse"))
    if model_kind not in MODEL_KINDS:
        raise DomainError(f"unknown model {model_kind!r}")
    groups = _studies_by_split(_data_dir(args.data), Path(args.splits))
    cfg = training.TrainConfig(
        model_kind=model_kind,
        resolution=int(r.get("resolution", 64)),
        epochs=int(r.get("epochs", 50)),
        lr=(lambda v: float(v) if v is not None else None)(r.get("lr")),
        lam=(lambda v: float(v) if v is not None else None)(r.get("lam")),
        diffusion_steps=int(r.get("diffusion_steps", 1000)),
        batch_size=int(r.get("batch_size", 8)),
        seed=int(r.get("seed", 0)),
        base_filters=int(r.get("base_filters", 16)),
        extractor_seed=int(r.get("extractor_seed", 1234)),
    )
    trained, history = training.train(
        model_kind, groups["train"], groups["validation"], cfg
    )
    extractor_seed = cfg.extractor_seed if cfg.feature_blocks else None
    extractor_hash = None
    if extractor_seed is not None:
        extractor_hash = FeatureExtractor(
            PerceptualExtractorConfig(seed=extractor_seed)
        ).weights_hash()
    save_checkpoint(
        out / f"{model_kind}.pt",
        trained,
        extractor_seed=extractor_seed,
        extractor_hash=extractor_hash,
        extra={"train_config": cfg.__dict__},
    )
    keys = sorted({k for row in history for k in row})
    _write_csv(
        out / f"{model_kind}_history.csv",
        keys,
        [[row.get(k, "") for k in keys] for row in history],
    )
    r.snapshot(out, "train")
    log.info(
        "trained %s: best epoch %s, best val loss %.5f",
        model_kind, trained.meta["best_epoch"], trained.meta["best_val_loss"],
    )
    return 0


def cmd_infer(args) -> int:
    r = _Resolver(args, "infer")
    out = _out_dir(args)
    seed = int(r.get("seed", 0))
    split = str(r.get("split", "test"))
    data_dir = _data_dir(args.data)
    trained = load_checkpoint(args.checkpoint)
    model_dir = out / trained.kind
    model_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = out / "manifest.json"
    entries = (
        json.loads(manifest_path.read_text())["candidates"]
        if manifest_path.exists()
        else []
    )
    groups = _studies_by_split(data_dir, Path(args.splits))
    seen = set()
    for study in groups[split]:
        if study.patient_id in seen:
            continue
        seen.add(study.patient_id)
        result = infer_volume(trained, study, sampling_seed=seed)
        synth_path = model_dir / f"{study.patient_id}.nii.gz"
        save_volume(result.with_data(result.data.astype(np.float32)), synth_path)
        entries = [
            e
            for e in entries
            if not (e["patient_id"] == study.patient_id and e["model_id"] == trained.kind)
        ]
        entries.append(
            {
                "patient_id": study.patient_id,
                "model_id": trained.kind,
                "synthetic": str(synth_path),
                "real": str(data_dir / study.patient_id / "hbp.nii.gz"),
                "cohort": study.cohort,
                "sampling_seed": seed,
            }
        )
        log.info("synthesized %s/%s", trained.kind, study.patient_id)
    entries.sort(key=lambda e: (e["model_id"], e["patient_id"]))
    manifest_path.write_text(json.dumps({"candidates": entries}, sort_keys=True, indent=1))
    r.snapshot(out, "infer")
    return 0


def cmd_evaluate(args) -> int:
    r = _Resolver(args, "evaluate")
    out = _out_dir(args)
    manifest = json.loads(Path(args.manifest).read_text())
    extractor = FeatureExtractor(
        PerceptualExtractorConfig(seed=int(r.get("extractor_seed", 1234)))
    )
    by_model: dict[str, list] = {}
    for entry in manifest["candidates"]:
        by_model.setdefault(entry["model_id"], []).append(entry)
    report_blob: dict = {"models": {}}
    for model_id, entries in sorted(by_model.items()):
        pairs = [
            (e["patient_id"], load_volume(e["synthetic"]), load_volume(e["real"]))
            for e in entries
        ]
        reports = evaluate_cohort(pairs, extractor)
        report_blob["models"][model_id] = {
            rep.metric: {
                "direction": rep.direction,
                "loc_exp": rep.loc_exp,
                "spread_exp": rep.spread_exp,
                "values": rep.values,
                "mu": rep.mu,
                "sigma": rep.sigma,
                "median": rep.median,
                "iqr": rep.iqr,
            }
            for rep in reports
        }
        _write_csv(
            out / f"evaluate_{model_id}.csv",
            ["metric", "direction", "mu", "sigma", "median", "iqr", "loc_exp", "spread_exp"],
            [
                [
                    rep.metric, rep.direction, f"{rep.mu:.6g}", f"{rep.sigma:.6g}",
                    f"{rep.median:.6g}", f"{rep.iqr:.6g}", rep.loc_exp, rep.spread_exp,
                ]
                for rep in reports
            ],
        )
        log.info("evaluated %s over %d patients", model_id, len(pairs))
    (out / "reports.json").write_text(json.dumps(report_blob, sort_keys=True, indent=1))
    r.snapshot(out, "evaluate")
    return 0


def cmd_stats(args) -> int:
    r = _Resolver(args, "stats")
    out = _out_dir(args)
    baseline = str(r.get("baseline", "unet_mse"))
    blob = json.loads(Path(args.reports).read_text())
    reports: dict[str, list[MetricReport]] = {}
    for model_id, metrics in blob["models"].items():
        reports[model_id] = [
            MetricReport(
                metric=name,
                direction=spec["direction"],
                values=spec["values"],
                loc_exp=spec["loc_exp"],
                spread_exp=spec["spread_exp"],
            )
            for name, spec in sorted(metrics.items())
        ]
    rows = stats.build_comparison_table(reports, baseline)
    _write_csv(
        out / "comparison.csv",
        [
            "model", "metric", "direction", "mu", "sigma", "median", "iqr",
            "loc_exp", "spread_exp", "test", "p_value", "qq_r2", "stars", "star_column",
        ],
        [
            [
                row["model"], row["metric"], row["direction"], f"{row['mu']:.6g}",
                f"{row['sigma']:.6g}", f"{row['median']:.6g}", f"{row['iqr']:.6g}",
                row["loc_exp"], row["spread_exp"], row["test"],
                "" if row["p_value"] is None else f"{row['p_value']:.6g}",
                "" if row["qq_r2"] is None else f"{row['qq_r2']:.4f}",
                row["stars"], row["star_column"],
            ]
            for row in rows
        ],
    )
    (out / "comparison.txt").write_text(stats.format_comparison_table(rows) + "\n")
    # per-comparison Q-Q data files
    base_reports = {rep.metric: rep for rep in reports[baseline]}
    for model_id, model_reports in reports.items():
        if model_id == baseline:
            continue
        for rep in model_reports:
            base = base_reports.get(rep.metric)
            if base is None:
                continue
            patients = sorted(set(rep.values) & set(base.values))
            diffs = np.array([rep.values[p] - base.values[p] for p in patients])
            if not np.all(np.isfinite(diffs)) or np.ptp(diffs) == 0:
                continue
            theo, sample = stats.qq_points(diffs)
            _write_csv(
                out / f"qq_{model_id}_{rep.metric}.csv",
                ["theoretical_quantile", "sorted_difference"],
                [[f"{t:.6g}", f"{s:.6g}"] for t, s in zip(theo, sample)],
            )
    r.snapshot(out, "stats")
    return 0


def _candidates_from_manifest(manifest_path):
    from .readstudy import ReadCandidate

    manifest = json.loads(Path(manifest_path).read_text())
    return [
        ReadCandidate(
            patient_id=e["patient_id"],
            real=load_volume(e["real"]),
            synthetic=load_volume(e["synthetic"]),
            model_id=e["model_id"],
            cohort=e.get("cohort"),
        )
        for e in manifest["candidates"]
    ]


def cmd_read_serve(args) -> int:
    import uvicorn

    from .readstudy.service import ReadStudyStore, create_app

    r = _Resolver(args, "read-serve")
    host = str(r.get("host", "127.0.0.1"))
    port = int(r.get("port", 8600))
    store = ReadStudyStore(_candidates_from_manifest(args.manifest), args.state_dir)
    r.snapshot(Path(args.state_dir), "read-serve")
    uvicorn.run(create_app(store), host=host, port=port, log_level="info")
    return 0


def cmd_read_export(args) -> int:
    from .readstudy import summarize
    from .readstudy.service import ReadStudyStore, summaries_csv

    out = _out_dir(args)
    store = ReadStudyStore(_candidates_from_manifest(args.manifest), args.state_dir)
    complete = [s for s in store.sessions.values() if s.status == "complete"]
    (out / "read_summary.csv").write_text(summaries_csv(summarize(complete)))
    log.info("exported %d complete sessions", len(complete))
    return 0


# --- parser / dispatch ----------------------------------------------------------

_HANDLERS = {
    "phantom": cmd_phantom,
    "preprocess": cmd_preprocess,
    "curate": cmd_curate,
    "train": cmd_train,
    "infer": cmd_infer,
    "evaluate": cmd_evaluate,
    "stats": cmd_stats,
    "read-serve": cmd_read_serve,
    "read-export": cmd_read_export,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hbpsynth",
        description="Hepatobiliary-phase MRI synthesis workflow",
    )
    parser.add_argument("--log-level", default="INFO")
    sub = parser.add_subparsers(dest="command")

    def common(p, needs_out=True):
        p.add_argument("--config", help="YAML config file; flags override its keys")
        p.add_argument("--seed", type=int, default=None)
        if needs_out:
            p.add_argument("--out", required=False)

    p = sub.add_parser("phantom", help="generate a synthetic study cohort")
    common(p)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--u-lo", type=float, default=None, dest="u_lo")
    p.add_argument("--u-hi", type=float, default=None, dest="u_hi")
    p.add_argument("--noise-sigma", type=float, default=None, dest="noise_sigma")
    p.add_argument("--bias-amplitude", type=float, default=None, dest="bias_amplitude")
    p.add_argument("--shape", default=None)
    p.add_argument("--spacing", default=None)

    p = sub.add_parser("preprocess", help="run the preprocessing pipeline")
    common(p)
    p.add_argument("--data", default=None)
    p.add_argument("--bias-poly-degree", type=int, default=None, dest="bias_poly_degree")
    p.add_argument("--crop-threshold", type=float, default=None, dest="crop_threshold")
    p.add_argument("--registration", default=None)
    p.add_argument("--target-spacing-x", type=float, default=None, dest="target_spacing_x")
    p.add_argument("--target-spacing-y", type=float, default=None, dest="target_spacing_y")

    p = sub.add_parser("curate", help="score, curate, and split a cohort")
    common(p)
    p.add_argument("--data", default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--test-fraction", type=float, default=None, dest="test_fraction")
    p.add_argument("--balance-key", default=None, dest="balance_key")
    p.add_argument("--train-ratio", type=float, default=None, dest="train_ratio")

    p = sub.add_parser("train", help="train one model")
    common(p)
    p.add_argument("--data", default=None)
    p.add_argument("--splits", required=True)
    p.add_argument("--model", default=None)
    p.add_argument("--resolution", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--lam", type=float, default=None)
    p.add_argument("--diffusion-steps", type=int, default=None, dest="diffusion_steps")
    p.add_argument("--batch-size", type=int, default=None, dest="batch_size")
    p.add_argument("--base-filters", type=int, default=None, dest="base_filters")
    p.add_argument("--extractor-seed", type=int, default=None, dest="extractor_seed")

    p = sub.add_parser("infer", help="slice-wise synthesis on a split")
    common(p)
    p.add_argument("--data", default=None)
    p.add_argument("--splits", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default=None)

    p = sub.add_parser("evaluate", help="image quality metrics per model")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--extractor-seed", type=int, default=None, dest="extractor_seed")

    p = sub.add_parser("stats", help="model-vs-baseline comparison table")
    common(p)
    p.add_argument("--reports", required=True)
    p.add_argument("--baseline", default=None)

    p = sub.add_parser("read-serve", help="serve the blinded-read HTTP API")
    common(p, needs_out=False)
    p.add_argument("--manifest", required=True)
    p.add_argument("--state-dir", required=True, dest="state_dir")
    p.add_argument("--host", default=None)
    p.add_argument("--port", type=int, default=None)

    p = sub.add_parser("read-export", help="export blinded-read summaries")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--state-dir", required=True, dest="state_dir")

    return parser


def dispatch(command: str, args: argparse.Namespace) -> int:
    if command not in _HANDLERS:
        raise DomainError(f"unknown subcommand {command!r}")
    return _HANDLERS[command](args)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.INFO),
        format="%(levelname)s %(name)s: %(message)s",
    )
    if not args.command:
        parser.print_usage(sys.stderr)
        return 2
    try:
        return dispatch(args.command, args)
    except DomainError as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
