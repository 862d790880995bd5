"""Statistical comparison machinery: Q-Q normality gating, paired t-test,
exact/approximate Wilcoxon signed-rank, significance stars, and assembly of
the model-vs-baseline comparison table.

Tests are two-sided throughout. Degenerate inputs (all-zero differences,
zero variance) yield p = 1.0 with a flag instead of raising, so full-table
assembly never aborts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

from .errors import DomainError
from .iqa import MetricReport

QQ_GATE = 0.95
STAR_LEVELS = ((1e-4, "∗∗∗"), (1e-3, "∗∗"), (0.05, "∗"))


@dataclass(frozen=True)
class TestResult:
    test: str  # "paired-t" | "wilcoxon"
    statistic: float
    p_value: float
    qq_r2: float | None = None
    degenerate: bool = False

    def __post_init__(self):
        if not 0.0 <= self.p_value <= 1.0:
            raise DomainError(f"p-value {self.p_value} outside [0, 1]")

    @property
    def stars(self) -> str:
        return stars(self.p_value)

    @property
    def star_column(self) -> str:
        # table convention: t-test stars sit in the mean column, Wilcoxon in
        # the median column
        return "mean" if self.test == "paired-t" else "median"


def qq_r2(xs) -> float:
    """R^2 of the least-squares line through the normal Q-Q plot, using
    plotting positions (i - 0.5) / n. A constant sample is defined as 0."""
    xs = np.sort(np.asarray(xs, dtype=np.float64))
    n = xs.size
    if n < 3:
        raise DomainError("qq_r2 needs at least 3 samples")
    if xs[0] == xs[-1]:
        return 0.0
    positions = (np.arange(1, n + 1) - 0.5) / n
    theoretical = sps.norm.ppf(positions)
    r = np.corrcoef(theoretical, xs)[0, 1]
    return float(r * r)


def choose_test(diffs) -> str:
    """Gate on the Q-Q fit of the paired differences: R^2 >= 0.95 selects the
    paired t-test, anything lower the Wilcoxon signed-rank."""
    return "paired-t" if qq_r2(diffs) >= QQ_GATE else "wilcoxon"


def paired_ttest(a, b) -> TestResult:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DomainError(f"length mismatch: {a.shape} vs {b.shape}")
    if a.size < 2:
        raise DomainError("paired t-test needs n >= 2")
    d = a - b
    sd = d.std(ddof=1)
    if sd == 0.0:
        return TestResult("paired-t", 0.0, 1.0, degenerate=True)
    t = float(d.mean() / (sd / np.sqrt(d.size)))
    p = float(2.0 * sps.t.sf(abs(t), df=d.size - 1))
    return TestResult("paired-t", t, min(p, 1.0))


def _signed_rank_distribution(ranks2: np.ndarray) -> tuple[np.ndarray, int]:
    """Exact null distribution of 2*W+ over all sign assignments (DP over
    the integer doubled ranks; ties enter through their averaged ranks)."""
    total = int(ranks2.sum())
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in ranks2:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts = counts + shifted
    return counts, total


def wilcoxon_signed_rank(a, b) -> TestResult:
    """Two-sided signed-rank test; exact by enumeration (via DP, equivalent
    to the full 2^n sign enumeration) for n <= 20, normal approximation with
    continuity and tie corrections above."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DomainError(f"length mismatch: {a.shape} vs {b.shape}")
    d = a - b
    d = d[d != 0.0]
    if d.size == 0:
        return TestResult("wilcoxon", 0.0, 1.0, degenerate=True)
    ranks = sps.rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    statistic = min(w_plus, w_minus)
    n = d.size
    if n <= 20:
        ranks2 = np.round(2.0 * ranks).astype(int)
        counts, total = _signed_rank_distribution(ranks2)
        probs = counts / counts.sum()
        w2 = int(round(2.0 * w_plus))
        p_low = float(probs[: w2 + 1].sum())
        p_high = float(probs[w2:].sum())
        p = min(1.0, 2.0 * min(p_low, p_high))
    else:
        mean = n * (n + 1) / 4.0
        tie_sizes = np.unique(np.abs(d), return_counts=True)[1]
        tie_term = (tie_sizes**3 - tie_sizes).sum() / 48.0
        var = n * (n + 1) * (2 * n + 1) / 24.0 - tie_term
        z = (w_plus - mean - 0.5 * np.sign(w_plus - mean)) / np.sqrt(var)
        p = float(min(1.0, 2.0 * sps.norm.sf(abs(z))))
    return TestResult("wilcoxon", statistic, p)


def stars(p: float) -> str:
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"p-value {p} outside [0, 1]")
    for threshold, marker in STAR_LEVELS:
        if p < threshold:
            return marker
    return ""


def run_paired_comparison(candidate, baseline) -> TestResult:
    """Gate on the Q-Q R^2 of the differences, then run the selected test."""
    candidate = np.asarray(candidate, dtype=np.float64)
    baseline = np.asarray(baseline, dtype=np.float64)
    diffs = candidate - baseline
    if np.all(diffs == diffs[0]):
        # constant differences: qq gate is undefined (flagged 0), test degenerates
        result = paired_ttest(candidate, baseline)
        return TestResult(
            result.test, result.statistic, result.p_value, qq_r2=0.0, degenerate=True
        )
    r2 = qq_r2(diffs)
    kind = "paired-t" if r2 >= QQ_GATE else "wilcoxon"
    result = (
        paired_ttest(candidate, baseline)
        if kind == "paired-t"
        else wilcoxon_signed_rank(candidate, baseline)
    )
    return TestResult(
        result.test, result.statistic, result.p_value, qq_r2=r2, degenerate=result.degenerate
    )


def qq_points(xs) -> tuple[np.ndarray, np.ndarray]:
    """(theoretical normal quantiles, sorted sample) for Q-Q plot exports."""
    xs = np.sort(np.asarray(xs, dtype=np.float64))
    positions = (np.arange(1, xs.size + 1) - 0.5) / xs.size
    return sps.norm.ppf(positions), xs


def build_comparison_table(
    reports: dict[str, list[MetricReport]], baseline: str
) -> list[dict]:
    """Per model x metric rows with aggregates, significance, and placement.

    Stars from paired t-tests are attached to the mean column, Wilcoxon stars
    to the median column; the baseline row carries no stars.
    """
    if baseline not in reports:
        raise DomainError(f"baseline {baseline!r} missing from reports")
    base_by_metric = {r.metric: r for r in reports[baseline]}
    rows = []
    for model_id in sorted(reports, key=lambda m: (m != baseline, m)):
        for report in reports[model_id]:
            row = {
                "model": model_id,
                "metric": report.metric,
                "direction": report.direction,
                "mu": report.mu,
                "sigma": report.sigma,
                "median": report.median,
                "iqr": report.iqr,
                "loc_exp": report.loc_exp,
                "spread_exp": report.spread_exp,
                "is_baseline": model_id == baseline,
                "test": "",
                "p_value": None,
                "qq_r2": None,
                "stars": "",
                "star_column": "",
            }
            if model_id != baseline and report.metric in base_by_metric:
                base_report = base_by_metric[report.metric]
                patients = sorted(set(report.values) & set(base_report.values))
                if patients != sorted(report.values) or patients != sorted(base_report.values):
                    raise DomainError(
                        f"patient sets differ for metric {report.metric}"
                    )
                cand = [report.values[p] for p in patients]
                base = [base_report.values[p] for p in patients]
                if any(not np.isfinite(v) for v in (*cand, *base)):
                    row["test"] = "skipped-nonfinite"
                elif len(patients) < 3:  # below the Q-Q gate's minimum n
                    row["test"] = "skipped-small-n"
                else:
                    result = run_paired_comparison(cand, base)
                    row.update(
                        test=result.test,
                        p_value=result.p_value,
                        qq_r2=result.qq_r2,
                        stars=result.stars,
                        star_column=result.star_column,
                    )
            rows.append(row)
    return rows


def format_comparison_table(rows: list[dict]) -> str:
    """Human-readable text rendering with display scaling and triangles."""
    lines = []
    header = f"{'model':<12} {'metric':<20} {'dir':<4} {'mu':>12} {'sigma':>12} {'M':>12} {'IQR':>12}  signif"
    lines.append(header)
    lines.append("-" * len(header))
    for row in rows:
        tri = "▲" if row["direction"] == "higher-better" else "▽"
        scale_loc = 10.0 ** row["loc_exp"]
        scale_spread = 10.0 ** row["spread_exp"]
        mu = row["mu"] / scale_loc
        med = row["median"] / scale_loc
        sigma = row["sigma"] / scale_spread
        iqr = row["iqr"] / scale_spread
        mu_star = row["stars"] if row["star_column"] == "mean" else ""
        med_star = row["stars"] if row["star_column"] == "median" else ""
        signif = (
            f"p={row['p_value']:.2e} ({row['test']})" if row["p_value"] is not None else "baseline"
            if row["is_baseline"]
            else row["test"] or "-"
        )
        lines.append(
            f"{row['model']:<12} {row['metric']:<20} {tri:<4} "
            f"{mu:>10.4f}{mu_star:<2} {sigma:>12.4f} {med:>10.4f}{med_star:<2} {iqr:>12.4f}  {signif}"
        )
    return "\n".join(lines)
