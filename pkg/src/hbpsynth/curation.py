"""Contrast-evolution curation: gradient-magnitude metric bank, per-study
enhancement scores, consistency-based metric selection, threshold
partitioning into IoD/OoD, and bootstrap-balanced train/validation splits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, MissingPhaseError
from .volume import Volume3D, StudyRecord

SUMMARIZERS = (
    "Mean",
    "Median",
    "RootMeanSquared",
    "InterquartileRange",
    "10Percentile",
    "90Percentile",
    "RobustMeanAbsoluteDeviation",
    "Energy",
    "TotalEnergy",
)

DEFAULT_ALPHA = 0.07


@dataclass(frozen=True)
class MetricDescriptor:
    feature: str = "gradient"
    summarizer: str = "Mean"

    def __post_init__(self):
        if self.feature != "gradient":
            raise DomainError(f"unsupported feature {self.feature!r}")
        if self.summarizer not in SUMMARIZERS:
            raise DomainError(f"unknown summarizer {self.summarizer!r}")

    @property
    def name(self) -> str:
        return f"{self.feature}__{self.summarizer}"


ALL_METRICS = tuple(MetricDescriptor("gradient", s) for s in SUMMARIZERS)


@dataclass(frozen=True)
class CESRecord:
    patient_id: str
    metric: MetricDescriptor
    value: float

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise DomainError(f"non-finite CES for {self.patient_id}")


@dataclass(frozen=True)
class SplitAssignment:
    patient_id: str
    split: str  # train | validation | test
    cohort: str | None
    bootstrap_weight: int = 1


def gradient_magnitude(v: Volume3D) -> Volume3D:
    """Spacing-aware gradient magnitude (central differences on the interior,
    one-sided at boundaries). Axes of length 1 contribute zero."""
    data = v.data.astype(np.float64)
    parts = []
    for axis in range(3):
        if data.shape[axis] < 2:
            parts.append(np.zeros_like(data))
        else:
            parts.append(np.gradient(data, v.spacing[axis], axis=axis))
    mag = np.sqrt(sum(p * p for p in parts))
    return v.with_data(mag)


def summarize_in_mask(v: Volume3D, mask: Volume3D, summarizer: str) -> float:
    """Aggregate masked voxel values with one of the named statistics."""
    if summarizer not in SUMMARIZERS:
        raise DomainError(f"unknown summarizer {summarizer!r}")
    m = np.asarray(mask.data) > 0
    if not m.any():
        raise DomainError("mask is empty")
    x = v.data[m].astype(np.float64)
    if summarizer == "Mean":
        return float(x.mean())
    if summarizer == "Median":
        return float(np.median(x))
    if summarizer == "RootMeanSquared":
        return float(np.sqrt(np.mean(x * x)))
    if summarizer == "InterquartileRange":
        q25, q75 = np.percentile(x, [25, 75])
        return float(q75 - q25)
    if summarizer == "10Percentile":
        return float(np.percentile(x, 10))
    if summarizer == "90Percentile":
        return float(np.percentile(x, 90))
    if summarizer == "RobustMeanAbsoluteDeviation":
        p10, p90 = np.percentile(x, [10, 90])
        inner = x[(x >= p10) & (x <= p90)]
        return float(np.abs(inner - inner.mean()).mean())
    if summarizer == "Energy":
        return float(np.sum(x * x))
    # TotalEnergy
    return float(np.sum(x * x) * v.voxel_volume)


def ces(metric: MetricDescriptor, study: StudyRecord) -> float:
    """Per-study enhancement score: metric(HBP) - metric(transitional),
    both evaluated on the gradient-magnitude image within the liver mask."""
    hbp = study.phase("hbp")
    trans = study.phase("transitional")
    if study.liver_mask is None:
        raise MissingPhaseError(f"study {study.patient_id} lacks a liver mask")
    g_h = gradient_magnitude(hbp)
    g_t = gradient_magnitude(trans)
    return summarize_in_mask(g_h, study.liver_mask, metric.summarizer) - summarize_in_mask(
        g_t, study.liver_mask, metric.summarizer
    )


def mean_liver_gradient(v: Volume3D, mask: Volume3D) -> float:
    """Mean gradient magnitude within the liver mask (the selected score)."""
    return summarize_in_mask(gradient_magnitude(v), mask, "Mean")


def consistency(values: list[float]) -> float:
    """|mean of signs| of the per-study scores; sign(0) counts as 0."""
    if len(values) == 0:
        raise DomainError("consistency of an empty list is undefined")
    return float(abs(np.mean(np.sign(values))))


def select_metric(
    cohort: list[StudyRecord],
) -> tuple[MetricDescriptor, list[tuple[str, float]]]:
    """Evaluate every metric's consistency over the cohort.

    Returns the winner plus the full table sorted by descending consistency,
    ties broken by metric name.
    """
    if not cohort:
        raise DomainError("cohort is empty")
    table = []
    for metric in ALL_METRICS:
        values = [ces(metric, study) for study in cohort]
        table.append((metric.name, consistency(values)))
    table.sort(key=lambda row: (-row[1], row[0]))
    winner_name = table[0][0]
    winner = next(m for m in ALL_METRICS if m.name == winner_name)
    return winner, table


def select_curation_metric(
    cohort: list[StudyRecord],
) -> tuple[MetricDescriptor, list[tuple[str, float]]]:
    """Metric used for threshold curation: the mean-gradient score whenever
    it is among the maximally consistent metrics (the protocol's final
    choice, and the scale the 0.07 threshold is calibrated for), otherwise
    the plain consistency winner."""
    winner, table = select_metric(cohort)
    best = table[0][1]
    mean_name = MetricDescriptor("gradient", "Mean").name
    if any(name == mean_name and value == best for name, value in table):
        return MetricDescriptor("gradient", "Mean"), table
    return winner, table


def compute_ces(
    cohort: list[StudyRecord], metric: MetricDescriptor
) -> list[CESRecord]:
    """Compute and attach the score for every study under one metric."""
    records = []
    for study in cohort:
        value = ces(metric, study)
        study.ces = value
        records.append(CESRecord(study.patient_id, metric, value))
    return records


def curate(
    cohort: list[StudyRecord], alpha: float = DEFAULT_ALPHA
) -> tuple[list[StudyRecord], list[StudyRecord]]:
    """Partition by the attached score: ces >= alpha -> IoD, else OoD."""
    iod, ood = [], []
    for study in cohort:
        if study.ces is None:
            raise DomainError(f"study {study.patient_id} has no computed score")
        if study.ces >= alpha:
            study.cohort = "IoD"
            iod.append(study)
        else:
            study.cohort = "OoD"
            ood.append(study)
    return iod, ood


def split_and_balance(
    cohort: list[StudyRecord],
    ratios: tuple[float, float] = (0.8, 0.2),
    balance_key: str = "scanner",
    seed: int = 0,
) -> list[SplitAssignment]:
    """Patient-level train/validation split with category rebalancing.

    Within each split, categories of `balance_key` are equalized by integer
    bootstrap weights: each minority category is resampled with replacement
    until its total weight matches the largest category's patient count.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise DomainError(f"ratios must sum to 1, got {ratios}")
    for study in cohort:
        if balance_key not in study.metadata:
            raise DomainError(
                f"study {study.patient_id} lacks metadata key {balance_key!r}"
            )
    rng = np.random.default_rng([seed, 0x5B11])
    order = rng.permutation(len(cohort))
    n_train = int(round(ratios[0] * len(cohort)))
    split_of = {}
    for rank, idx in enumerate(order):
        split_of[cohort[idx].patient_id] = "train" if rank < n_train else "validation"

    assignments = []
    for split_name in ("train", "validation"):
        members = [s for s in cohort if split_of[s.patient_id] == split_name]
        by_cat: dict[str, list[StudyRecord]] = {}
        for s in members:
            by_cat.setdefault(str(s.metadata[balance_key]), []).append(s)
        if not by_cat:
            continue
        target = max(len(v) for v in by_cat.values())
        for cat in sorted(by_cat):
            studies = by_cat[cat]
            weights = {s.patient_id: 1 for s in studies}
            extra = target - len(studies)
            if extra > 0:
                picks = rng.integers(0, len(studies), size=extra)
                for p in picks:
                    weights[studies[int(p)].patient_id] += 1
            for s in studies:
                assignments.append(
                    SplitAssignment(s.patient_id, split_name, s.cohort, weights[s.patient_id])
                )
    return assignments
