"""Retrospective evaluation reports: detection delays, per-trimester trends,
fairness audit, earliest-alert buckets, and their CSV/SVG outputs.

Every emitter is a pure function of its inputs and writes byte-stable files,
so re-running a stage under the same manifest reproduces outputs exactly.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import date, timedelta
from pathlib import Path

import numpy as np

from .records import Race
from .stats import accuracy_with_ci, auc_ci, macro_ovr_auc
from .vocab import RiskLabel

TRIMESTER_1_END_WEEK = 13  # completed weeks
TRIMESTER_2_END_WEEK = 27
PERIODS = ("pre_gestation", "trimester_1", "trimester_2", "trimester_3")
ALERT_BUCKETS = PERIODS + ("never",)


@dataclass
class DelayStats:
    """Start-detection delays of the hybrid pipeline against the anchor-only
    baseline, relative to true starts."""

    n_evaluated: int
    n_missed_hybrid: int
    n_missed_anchor: int
    fraction_earlier: float
    mean_delay_hybrid_earlier: float | None
    mean_delay_anchor_earlier: float | None
    mean_delay_hybrid_overall: float | None
    mean_delay_anchor_overall: float | None
    never_pregnant_total: int
    never_pregnant_flagged: int

    @property
    def false_positive_rate(self) -> float:
        if self.never_pregnant_total == 0:
            return 0.0
        return self.never_pregnant_flagged / self.never_pregnant_total


def delay_report(
    hybrid_starts: dict[str, date | None],
    anchor_starts: dict[str, date | None],
    true_starts: dict[str, date],
    never_flagged: dict[str, bool],
) -> tuple[DelayStats, list[tuple[str, int | None, int | None]]]:
    """Compute delay statistics over pregnant patients plus the FPR over
    never-pregnant patients.

    Patients missing either prediction are excluded from delay means and
    counted as misses. The second return value holds per-patient delay rows
    (patient_id, hybrid_delay_days, anchor_delay_days) for the histogram
    export.
    """
    rows: list[tuple[str, int | None, int | None]] = []
    both: list[tuple[int, int]] = []
    miss_h = miss_a = 0
    for pid in sorted(true_starts):
        h = hybrid_starts.get(pid)
        a = anchor_starts.get(pid)
        hd = (h - true_starts[pid]).days if h is not None else None
        ad = (a - true_starts[pid]).days if a is not None else None
        rows.append((pid, hd, ad))
        if hd is None:
            miss_h += 1
        if ad is None:
            miss_a += 1
        if hd is not None and ad is not None:
            both.append((hd, ad))

    earlier = [(hd, ad) for hd, ad in both if hd < ad]
    stats = DelayStats(
        n_evaluated=len(true_starts),
        n_missed_hybrid=miss_h,
        n_missed_anchor=miss_a,
        fraction_earlier=(len(earlier) / len(both)) if both else 0.0,
        mean_delay_hybrid_earlier=float(np.mean([h for h, _ in earlier])) if earlier else None,
        mean_delay_anchor_earlier=float(np.mean([a for _, a in earlier])) if earlier else None,
        mean_delay_hybrid_overall=float(np.mean([h for h, _ in both])) if both else None,
        mean_delay_anchor_overall=float(np.mean([a for _, a in both])) if both else None,
        never_pregnant_total=len(never_flagged),
        never_pregnant_flagged=sum(1 for v in never_flagged.values() if v),
    )
    return stats, rows


def write_delay_histogram(
    rows: list[tuple[str, int | None, int | None]], path: str | Path
) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["patient_id", "hybrid_delay_days", "anchor_delay_days"])
        for pid, hd, ad in rows:
            writer.writerow([pid, "" if hd is None else hd, "" if ad is None else ad])


@dataclass
class SubgroupRow:
    group: str
    n: int
    accuracy: float | None
    accuracy_ci: tuple[float, float] | None
    auc: float | None
    auc_ci: tuple[float, float] | None
    base_rate: float | None
    true_positive_rate: float | None
    small_sample: bool = False


@dataclass
class SubgroupReport:
    rows: list[SubgroupRow]
    total: SubgroupRow


def fairness_audit(
    predictions: list[tuple[str, int, np.ndarray]],  # (patient_id, predicted, probs)
    truths: dict[str, int],
    races: dict[str, Race],
    min_group_size: int = 25,
) -> SubgroupReport:
    """Per-race accuracy/AUC with CIs, complication base rates, and TPRs.

    Unreported race is excluded from the per-group rows but counted in the
    totals row. Groups under min_group_size are emitted with a small-sample
    flag rather than dropped.
    """
    groups = {Race.WHITE: [], Race.BLACK: [], Race.OTHER: []}
    all_rows = []
    for pid, pred, probs in predictions:
        y = truths[pid]
        entry = (pid, pred, probs, y)
        all_rows.append(entry)
        race = races.get(pid, Race.UNREPORTED)
        if race in groups:
            groups[race].append(entry)

    def build_row(name: str, entries, flag_small: bool) -> SubgroupRow:
        n = len(entries)
        if n == 0:
            return SubgroupRow(name, 0, None, None, None, None, None, None, True)
        preds = np.asarray([e[1] for e in entries])
        ys = np.asarray([e[3] for e in entries])
        probs = np.vstack([e[2] for e in entries])
        correct = int((preds == ys).sum())
        acc, lo, hi = accuracy_with_ci(correct, n)
        complicated = ys != int(RiskLabel.NONE)
        base = float(complicated.mean())
        tpr = None
        if complicated.any():
            tp = int(((preds != int(RiskLabel.NONE)) & complicated).sum())
            tpr = tp / int(complicated.sum())
        auc_val = ci = None
        try:
            classes = tuple(range(probs.shape[1]))
            auc_val = macro_ovr_auc(probs, ys, classes)
            m = int(complicated.sum())
            ci_obj = auc_ci(auc_val, m, n - m) if 0 < m < n else None
            ci = (ci_obj.ci_low, ci_obj.ci_high) if ci_obj else None
        except ValueError:
            pass
        return SubgroupRow(
            name, n, acc, (lo, hi), auc_val, ci, base, tpr,
            small_sample=flag_small and n < min_group_size,
        )

    rows = [build_row(r.value, groups[r], True) for r in (Race.WHITE, Race.BLACK, Race.OTHER)]
    total = build_row("total", all_rows, False)
    return SubgroupReport(rows=rows, total=total)


def write_subgroup_report(report: SubgroupReport, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["group", "n", "accuracy", "acc_ci_low", "acc_ci_high", "auc",
             "auc_ci_low", "auc_ci_high", "base_rate", "tpr", "small_sample"]
        )
        for row in report.rows + [report.total]:
            writer.writerow(
                [
                    row.group,
                    row.n,
                    _fmt(row.accuracy),
                    _fmt(row.accuracy_ci and row.accuracy_ci[0]),
                    _fmt(row.accuracy_ci and row.accuracy_ci[1]),
                    _fmt(row.auc),
                    _fmt(row.auc_ci and row.auc_ci[0]),
                    _fmt(row.auc_ci and row.auc_ci[1]),
                    _fmt(row.base_rate),
                    _fmt(row.true_positive_rate),
                    int(row.small_sample),
                ]
            )


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


@dataclass
class TrendSeries:
    periods: tuple[str, ...]
    accuracy: tuple[float, ...]
    accuracy_ci: tuple[tuple[float, float], ...]
    auc: tuple[float, ...]
    auc_ci: tuple[tuple[float, float], ...]
    accuracy_slope: float
    auc_slope: float


def period_as_of(t_start: date, t_end: date, period: str) -> date:
    """Representative prediction date inside each pregnancy period."""
    if period == "pre_gestation":
        return t_start - timedelta(days=45)
    if period == "trimester_1":
        return t_start + timedelta(days=7 * TRIMESTER_1_END_WEEK // 2)
    if period == "trimester_2":
        mid_week = (TRIMESTER_1_END_WEEK + 1 + TRIMESTER_2_END_WEEK) // 2
        return t_start + timedelta(days=7 * mid_week)
    if period == "trimester_3":
        t3_start = t_start + timedelta(days=7 * (TRIMESTER_2_END_WEEK + 1))
        if t3_start >= t_end:
            return t_end
        return t3_start + timedelta(days=(t_end - t3_start).days // 2)
    raise ValueError(f"unknown period {period!r}")


def _lsq_slope(ys: list[float]) -> float:
    x = np.arange(len(ys), dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    x = x - x.mean()
    return float((x @ (y - y.mean())) / (x @ x))


def trend_series(
    per_period: dict[str, list[tuple[int, np.ndarray, int]]]
) -> TrendSeries:
    """Build the four-period trend from (predicted, probs, truth) triples."""
    accs, acc_cis, aucs, auc_cis = [], [], [], []
    for period in PERIODS:
        entries = per_period[period]
        preds = np.asarray([e[0] for e in entries])
        probs = np.vstack([e[1] for e in entries])
        ys = np.asarray([e[2] for e in entries])
        n = len(entries)
        acc, lo, hi = accuracy_with_ci(int((preds == ys).sum()), n)
        accs.append(acc)
        acc_cis.append((lo, hi))
        auc_val = macro_ovr_auc(probs, ys, tuple(range(probs.shape[1])))
        m = int((ys != int(RiskLabel.NONE)).sum())
        ci = auc_ci(auc_val, m, n - m)
        aucs.append(auc_val)
        auc_cis.append((ci.ci_low, ci.ci_high))
    return TrendSeries(
        periods=PERIODS,
        accuracy=tuple(accs),
        accuracy_ci=tuple(acc_cis),
        auc=tuple(aucs),
        auc_ci=tuple(auc_cis),
        accuracy_slope=_lsq_slope(accs),
        auc_slope=_lsq_slope(aucs),
    )


def write_trend(series: TrendSeries, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["period", "accuracy", "acc_ci_low", "acc_ci_high", "auc", "auc_ci_low", "auc_ci_high"]
        )
        for i, period in enumerate(series.periods):
            writer.writerow(
                [period, repr(series.accuracy[i]), repr(series.accuracy_ci[i][0]),
                 repr(series.accuracy_ci[i][1]), repr(series.auc[i]),
                 repr(series.auc_ci[i][0]), repr(series.auc_ci[i][1])]
            )
        writer.writerow(["slope", repr(series.accuracy_slope), "", "", repr(series.auc_slope), "", ""])


@dataclass
class EarliestAlertBuckets:
    counts: dict[str, int]

    def __post_init__(self):
        unknown = set(self.counts) - set(ALERT_BUCKETS)
        if unknown:
            raise ValueError(f"unknown buckets {unknown}")

    @property
    def total(self) -> int:
        return sum(self.counts.values())


def bucket_of(as_of: date | None, t_start: date, t_end: date) -> str:
    """Pregnancy period containing an alert date, or 'never'."""
    if as_of is None:
        return "never"
    if as_of < t_start:
        return "pre_gestation"
    week = (as_of - t_start).days // 7
    if week <= TRIMESTER_1_END_WEEK:
        return "trimester_1"
    if week <= TRIMESTER_2_END_WEEK:
        return "trimester_2"
    return "trimester_3"


def earliest_alerts(
    first_alert: dict[str, date | None],
    episodes: dict[str, tuple[date, date]],
) -> EarliestAlertBuckets:
    """Histogram of the first positive risk alert per truly complicated
    patient; every patient lands in exactly one bucket."""
    counts = {b: 0 for b in ALERT_BUCKETS}
    for pid, (t_start, t_end) in sorted(episodes.items()):
        counts[bucket_of(first_alert.get(pid), t_start, t_end)] += 1
    return EarliestAlertBuckets(counts=counts)


def write_buckets(buckets: EarliestAlertBuckets, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bucket", "count"])
        for b in ALERT_BUCKETS:
            writer.writerow([b, buckets.counts.get(b, 0)])


# ---------------------------------------------------------------------------
# self-contained SVG plot pages

def _svg_page(title: str, svg: str) -> str:
    return (
        "<!DOCTYPE html>\n<html><head><meta charset='utf-8'>"
        f"<title>{title}</title></head>\n"
        f"<body><h1>{title}</h1>\n{svg}\n</body></html>\n"
    )


def _bar_svg(labels: list[str], series: dict[str, list[float]], width=640, height=360) -> str:
    colors = ("#4878a8", "#d1605e", "#6aa56e")
    pad = 50
    plot_w, plot_h = width - 2 * pad, height - 2 * pad
    all_vals = [v for vs in series.values() for v in vs] or [1.0]
    vmax = max(max(all_vals), 1e-9)
    n_groups = len(labels)
    n_series = max(len(series), 1)
    group_w = plot_w / max(n_groups, 1)
    bar_w = group_w / (n_series + 1)
    parts = [f"<svg xmlns='http://www.w3.org/2000/svg' width='{width}' height='{height}'>"]
    parts.append(f"<line x1='{pad}' y1='{height-pad}' x2='{width-pad}' y2='{height-pad}' stroke='black'/>")
    parts.append(f"<line x1='{pad}' y1='{pad}' x2='{pad}' y2='{height-pad}' stroke='black'/>")
    for si, (name, vals) in enumerate(series.items()):
        for gi, v in enumerate(vals):
            h = plot_h * (v / vmax)
            x = pad + gi * group_w + (si + 0.5) * bar_w
            y = height - pad - h
            parts.append(
                f"<rect x='{x:.1f}' y='{y:.1f}' width='{bar_w:.1f}' height='{h:.1f}' "
                f"fill='{colors[si % len(colors)]}'><title>{name}: {v}</title></rect>"
            )
    for gi, lab in enumerate(labels):
        x = pad + (gi + 0.5) * group_w
        parts.append(
            f"<text x='{x:.1f}' y='{height-pad+16}' font-size='11' text-anchor='middle'>{lab}</text>"
        )
    for si, name in enumerate(series):
        parts.append(
            f"<rect x='{width-pad-150}' y='{pad+18*si}' width='12' height='12' fill='{colors[si % len(colors)]}'/>"
            f"<text x='{width-pad-132}' y='{pad+10+18*si}' font-size='11'>{name}</text>"
        )
    parts.append("</svg>")
    return "".join(parts)


def write_delay_page(
    rows: list[tuple[str, int | None, int | None]], stats: DelayStats, path: str | Path
) -> None:
    """Histogram page of start-detection delays, hybrid vs anchor-only."""
    bins = list(range(-140, 148, 14))
    def hist(idx):
        vals = [r[idx] for r in rows if r[idx] is not None]
        counts = [0] * (len(bins) - 1)
        for v in vals:
            v = min(max(v, bins[0]), bins[-1] - 1)
            counts[min((v - bins[0]) // 14, len(counts) - 1)] += 1
        return [float(c) for c in counts]
    labels = [f"{bins[i]}" for i in range(len(bins) - 1)]
    svg = _bar_svg(labels, {"hybrid": hist(1), "anchor": hist(2)})
    summary = (
        f"<p>fraction earlier: {stats.fraction_earlier:.4f}; "
        f"never-pregnant FPR: {stats.false_positive_rate:.4f}</p>"
    )
    Path(path).write_text(_svg_page("Start-detection delay (days)", summary + svg))


def write_trend_page(series: TrendSeries, path: str | Path) -> None:
    svg = _bar_svg(
        list(series.periods),
        {"accuracy": list(series.accuracy), "auc": list(series.auc)},
    )
    note = f"<p>accuracy slope {series.accuracy_slope:.5f}; auc slope {series.auc_slope:.5f}</p>"
    Path(path).write_text(_svg_page("Metrics across pregnancy periods", note + svg))


def write_buckets_page(buckets: EarliestAlertBuckets, path: str | Path) -> None:
    svg = _bar_svg(
        list(ALERT_BUCKETS),
        {"patients": [float(buckets.counts.get(b, 0)) for b in ALERT_BUCKETS]},
    )
    Path(path).write_text(_svg_page("Earliest risk alert per complicated patient", svg))
