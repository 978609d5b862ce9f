"""Run metrics (goodput, per-path RTT, drops, queue state) and their aggregation over repetitions."""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from .engine import NS_PER_S, SimTime

RUN_COLUMNS: Tuple[str, ...] = (
    "scenario",
    "qdisc",
    "cc",
    "delay_a_ms",
    "rep",
    "seed",
    "goodput_bps_total",
    "goodput_bps_a",
    "goodput_bps_b",
    "rtt_ms_a",
    "rtt_ms_b",
    "drops",
    "avg_qlen_pkts",
    "avg_sojourn_ms",
    "duration_s",
    "avg_cwnd_mss_a",
    "avg_cwnd_mss_b",
    "delivered_bytes",
)

CELL_COLUMNS: Tuple[str, ...] = ("scenario", "qdisc", "cc", "delay_a_ms")

METRIC_COLUMNS: Tuple[str, ...] = (
    "goodput_bps_total",
    "goodput_bps_a",
    "goodput_bps_b",
    "rtt_ms_a",
    "rtt_ms_b",
    "drops",
    "avg_qlen_pkts",
    "avg_sojourn_ms",
    "duration_s",
    "avg_cwnd_mss_a",
    "avg_cwnd_mss_b",
)

CONFIDENCE = 0.95


def goodput(bytes_received: int, t_first: SimTime, t_last: SimTime) -> float:
    """Application bytes times eight over the delivery span, in bits per second."""
    if bytes_received < 0:
        raise ValueError(f"bytes_received must be non-negative, got {bytes_received}")
    if bytes_received == 0:
        return 0.0
    if t_last <= t_first:
        raise ValueError(
            f"goodput of {bytes_received} bytes needs t_last > t_first, got {t_first}..{t_last}"
        )
    return bytes_received * 8 * NS_PER_S / (t_last - t_first)


def mean_rtt(samples: Sequence[SimTime]) -> Optional[float]:
    """Within-run arithmetic mean of RTT samples in ns; None when there are none."""
    if not samples:
        return None
    return float(np.mean(np.asarray(samples, dtype=np.float64)))


def time_average(series: Sequence[Tuple[SimTime, float]], end: Optional[SimTime] = None) -> float:
    """Time-weighted mean of a step function given as (timestamp, value) change points."""
    if not series:
        raise ValueError("time_average needs at least one sample")
    timestamps = [t for t, _ in series]
    if any(b < a for a, b in zip(timestamps, timestamps[1:])):
        raise ValueError("time_average needs non-decreasing timestamps")
    end = timestamps[-1] if end is None else end
    if end < timestamps[-1]:
        raise ValueError(f"end {end} precedes the last sample at {timestamps[-1]}")
    span = end - timestamps[0]
    if span == 0:
        return float(series[-1][1])
    area = 0.0
    for (t, value), t_next in zip(series, timestamps[1:] + [end]):
        area += value * (t_next - t)
    return area / span


class TimeWeightedAverage:
    """Online counterpart of :func:`time_average`, fed at every change point."""

    __slots__ = ("start", "last_time", "current", "area")

    def __init__(self) -> None:
        self.start: Optional[SimTime] = None
        self.last_time: SimTime = 0
        self.current: float = 0.0
        self.area: float = 0.0

    def update(self, now: SimTime, value: float) -> None:
        if self.start is None:
            self.start = now
        else:
            self.area += self.current * (now - self.last_time)
        self.last_time = now
        self.current = value

    def value(self, end: SimTime) -> float:
        if self.start is None:
            return 0.0
        span = end - self.start
        if span <= 0:
            return float(self.current)
        return (self.area + self.current * (end - self.last_time)) / span


@dataclass
class RunMetrics:
    """Metrics of one repetition of one cell, in the units of the CSV columns."""

    scenario: str
    qdisc: str
    cc: str
    delay_a_ms: float
    rep: int
    seed: int
    goodput_bps_total: float
    goodput_bps_a: float
    goodput_bps_b: float
    rtt_ms_a: Optional[float]
    rtt_ms_b: Optional[float]
    drops: int
    avg_qlen_pkts: float
    avg_sojourn_ms: Optional[float]
    duration_s: float
    avg_cwnd_mss_a: float = 0.0
    avg_cwnd_mss_b: float = 0.0
    delivered_bytes: int = 0

    @property
    def cell(self) -> Tuple[str, str, str, float]:
        return (self.scenario, self.qdisc, self.cc, self.delay_a_ms)

    def sort_key(self) -> Tuple[str, str, str, float, int]:
        return (self.scenario, self.qdisc, self.cc, self.delay_a_ms, self.rep)


@dataclass
class MetricSummary:
    mean: Optional[float]
    ci95: Optional[float]
    n: int


@dataclass
class AggregateMetrics:
    """Per-metric mean and 95 % Student-t half-width over the repetitions of one cell."""

    scenario: str
    qdisc: str
    cc: str
    delay_a_ms: float
    n: int
    summaries: Dict[str, MetricSummary] = field(default_factory=dict)

    def mean(self, metric: str) -> Optional[float]:
        return self.summaries[metric].mean

    def ci95(self, metric: str) -> Optional[float]:
        return self.summaries[metric].ci95


def summarize(values: Iterable[float]) -> MetricSummary:
    """Mean and CI half-width; values are sorted first so the result ignores run order."""
    data = np.sort(np.asarray([v for v in values if v is not None], dtype=np.float64))
    n = int(data.size)
    if n == 0:
        return MetricSummary(mean=None, ci95=None, n=0)
    mean = float(np.mean(data))
    if n < 2:
        return MetricSummary(mean=mean, ci95=None, n=n)
    spread = float(np.std(data, ddof=1))
    quantile = float(stats.t.ppf(0.5 + CONFIDENCE / 2, n - 1))
    return MetricSummary(mean=mean, ci95=quantile * spread / math.sqrt(n), n=n)


def aggregate(runs: Sequence[RunMetrics]) -> AggregateMetrics:
    """Aggregate the repetitions of a single cell."""
    if not runs:
        raise ValueError("aggregate needs at least one run")
    cell = runs[0].cell
    for run in runs:
        if run.cell != cell:
            raise ValueError(f"aggregate mixes cells {cell} and {run.cell}")
    summaries = {metric: summarize(getattr(run, metric) for run in runs) for metric in METRIC_COLUMNS}
    scenario, qdisc, cc, delay_a_ms = cell
    return AggregateMetrics(
        scenario=scenario, qdisc=qdisc, cc=cc, delay_a_ms=delay_a_ms, n=len(runs), summaries=summaries
    )


def aggregate_cells(runs: Sequence[RunMetrics]) -> List[AggregateMetrics]:
    """Group runs by cell and aggregate each group, in sorted cell order."""
    print(
        "[bloatsim/metrics.py][aggregate_cells][Start] "
        f"runs_count={len(runs)}"
    )
    groups: Dict[Tuple[str, str, str, float], List[RunMetrics]] = {}
    for run in sorted(runs, key=RunMetrics.sort_key):
        groups.setdefault(run.cell, []).append(run)
    aggregates = [aggregate(group) for group in groups.values()]
    print(
        "[bloatsim/metrics.py][aggregate_cells][End] "
        f"cells_count={len(aggregates)}"
    )
    return aggregates


def format_value(value: object) -> str:
    """Decimal text with '.' separator and no grouping; absent values are empty."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        text = f"{value:.6f}"
        return "0.000000" if text == "-0.000000" else text
    return str(value)


def write_runs_csv(path: Path, runs: Sequence[RunMetrics]) -> None:
    print(
        "[bloatsim/metrics.py][write_runs_csv][Start] "
        f"path={path} runs_count={len(runs)}"
    )
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(RUN_COLUMNS)
        for run in sorted(runs, key=RunMetrics.sort_key):
            row = asdict(run)
            writer.writerow([format_value(row[column]) for column in RUN_COLUMNS])
    print(
        "[bloatsim/metrics.py][write_runs_csv][End] "
        f"path={path}"
    )


def aggregate_columns() -> List[str]:
    columns = list(CELL_COLUMNS) + ["n"]
    for metric in METRIC_COLUMNS:
        columns.extend([f"{metric}_mean", f"{metric}_ci95"])
    return columns


def write_aggregate_csv(path: Path, aggregates: Sequence[AggregateMetrics]) -> None:
    print(
        "[bloatsim/metrics.py][write_aggregate_csv][Start] "
        f"path={path} cells_count={len(aggregates)}"
    )
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(aggregate_columns())
        for entry in aggregates:
            row = [
                format_value(entry.scenario),
                format_value(entry.qdisc),
                format_value(entry.cc),
                format_value(entry.delay_a_ms),
                format_value(entry.n),
            ]
            for metric in METRIC_COLUMNS:
                summary = entry.summaries[metric]
                row.extend([format_value(summary.mean), format_value(summary.ci95)])
            writer.writerow(row)
    print(
        "[bloatsim/metrics.py][write_aggregate_csv][End] "
        f"path={path}"
    )
