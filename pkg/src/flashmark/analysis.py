"""Trace analysis: phase detection, period estimation, and summary metrics.

Flash devices answer a freshly enforced state with two phases: a start-up
phase of artificially cheap IOs (buffered or pre-erased writes) followed
by a running phase where response time oscillates between cheap and
expensive operations.  The detectors below recover the start-up length
and the oscillation period from per-IO response-time series; the
aggregators turn swept experiment results into a compact device
characterization (per-baseline costs, pause effect, locality area,
partition threshold, order ratios, alignment/mix/parallel factors).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


@dataclass(frozen=True)
class StartupEstimate:
    count: int
    conclusive: bool = True


@dataclass(frozen=True)
class PeriodEstimate:
    period: int
    confident: bool = True


def detect_startup(
    rts: Sequence[float],
    min_series: int = 64,
    cheap_ratio: float = 0.5,
    period_guard: float = 1.5,
) -> StartupEstimate:
    """Length of the cheap start-up prefix of a response-time series.

    The running-phase level is taken from the second half of the series
    (callers provide series at least twice the longest expected
    start-up).  The start-up candidate is the initial maximal run of
    samples below cheap_ratio times that level.  A cheap stretch no
    longer than about one oscillation of the remaining series is phase,
    not start-up, and reports 0, as do series whose prefix is not
    clearly cheaper (constant or purely oscillating traces).
    """
    x = np.asarray(rts, dtype=float)
    n = x.size
    if n < min_series:
        return StartupEstimate(0, conclusive=False)
    running_level = float(x[n // 2 :].mean())
    threshold = cheap_ratio * running_level
    exceed = np.flatnonzero(x > threshold)
    if exceed.size == 0 or exceed[0] == 0:
        return StartupEstimate(0)
    s = int(exceed[0])
    if not float(x[:s].mean()) < threshold:
        return StartupEstimate(0)
    per = estimate_period(x[s:])
    guard = per.period if per.confident else 1
    if s <= period_guard * guard:
        return StartupEstimate(0)
    return StartupEstimate(s)


def estimate_period(rts: Sequence[float], max_lag: int | None = None) -> PeriodEstimate:
    """Dominant oscillation period of a (start-up-free) series, in IOs.

    Uses the unnormalized autocorrelation of the mean-subtracted series
    and picks the local peak with the greatest mass; among equal peaks
    the largest lag wins, so superposed periods resolve to the slowest
    component.  Constant or aperiodic series report period 1 with the
    confidence flag cleared.
    """
    x = np.asarray(rts, dtype=float)
    n = x.size
    if n < 8 or float(x.std()) == 0.0:
        return PeriodEstimate(1, confident=False)
    d = x - x.mean()
    size = 1 << int(np.ceil(np.log2(2 * n)))
    spectrum = np.fft.rfft(d, size)
    r = np.fft.irfft(spectrum * np.conj(spectrum), size)[:n]
    limit = min(max_lag or n // 2, n - 2)
    if limit < 2:
        return PeriodEstimate(1, confident=False)
    interior = r[1 : limit + 1]
    peaks = np.flatnonzero(
        (interior >= np.concatenate(([r[0]], interior[:-1])))
        & (interior >= np.concatenate((interior[1:], [-np.inf])))
    )
    # a peak at lag 1 that just continues r[0] is the zero-lag skirt
    peaks = peaks[interior[peaks] > 0]
    if peaks.size == 0:
        return PeriodEstimate(1, confident=False)
    best_mass = interior[peaks].max()
    candidates = peaks[interior[peaks] >= best_mass * (1.0 - 1e-12)]
    lag = int(candidates.max()) + 1
    confident = bool(best_mass >= 0.1 * r[0])
    return PeriodEstimate(lag, confident=confident)


def running_average(rts: Sequence[float]) -> np.ndarray:
    x = np.asarray(rts, dtype=float)
    return np.cumsum(x) / np.arange(1, x.size + 1)


@dataclass(frozen=True)
class ExperimentOutcome:
    """Mean response time of one experiment, keyed by what was swept."""

    micro: str
    baseline: str
    varying_name: str
    varying_value: int
    mean_us: float
    dispersion_flagged: bool = False


class MissingDataError(ValueError):
    """The sweep needed for a metric was not measured."""


def _sweep(
    outcomes: Iterable[ExperimentOutcome], micro: str, baseline: str
) -> list[tuple[int, float]]:
    pts = [
        (o.varying_value, o.mean_us)
        for o in outcomes
        if o.micro == micro and o.baseline == baseline
    ]
    return sorted(pts)


def locality_area(
    locality_rw: Sequence[tuple[int, float]],
    sw_mean_us: float,
    io_size: int,
    threshold: float = 2.0,
) -> tuple[int, float] | None:
    """Largest random-write area still behaving like sequential writes.

    Takes (target_size, mean_rt) sweep points; target_size equal to the
    IO size degenerates to in-place writes and is excluded.  Returns
    (area_bytes, achieved cost factor relative to sequential writes), or
    None when even the smallest non-degenerate area exceeds
    threshold * sw_mean.
    """
    qualifying = [
        (size, mean / sw_mean_us)
        for size, mean in locality_rw
        if size > io_size and mean <= threshold * sw_mean_us
    ]
    if not qualifying:
        return None
    area, factor = max(qualifying)
    return area, factor


def partition_threshold(
    partitioning_sw: Sequence[tuple[int, float]],
    sw_mean_us: float,
    threshold: float = 2.0,
) -> tuple[int, float] | None:
    """Largest partition count writable without significant degradation."""
    qualifying = [
        (parts, mean / sw_mean_us)
        for parts, mean in partitioning_sw
        if mean <= threshold * sw_mean_us
    ]
    if not qualifying:
        return None
    parts, factor = max(qualifying)
    return parts, factor


def order_ratios(
    order_sw: Sequence[tuple[int, float]],
    sw_mean_us: float,
    rw_mean_us: float,
    io_size: int,
    large_stride_bytes: int = 1024 * 1024,
) -> dict:
    """Reverse / in-place / large-increment cost ratios.

    Reverse (incr=-1) and in-place (incr=0) are relative to sequential
    writes; strides of at least large_stride_bytes are relative to the
    random-write baseline.
    """
    by_incr = dict(order_sw)
    out = {"reverse": None, "in_place": None, "large_incr": None}
    if -1 in by_incr:
        out["reverse"] = by_incr[-1] / sw_mean_us
    if 0 in by_incr:
        out["in_place"] = by_incr[0] / sw_mean_us
    large = [m for incr, m in by_incr.items() if incr >= 1 and incr * io_size >= large_stride_bytes]
    if large and rw_mean_us:
        out["large_incr"] = float(np.mean(large)) / rw_mean_us
    return out


@dataclass
class SummaryThresholds:
    locality_factor: float = 2.0
    partition_factor: float = 2.0
    pause_factor: float = 1.2
    large_stride_bytes: int = 1024 * 1024


@dataclass
class SummaryReport:
    """Table-style device characterization derived from a full suite."""

    device: str
    io_size: int
    baseline_cost_us: dict = field(default_factory=dict)  # SR/RR/SW/RW -> mean us
    pause_effect_us: int | None = None
    locality_area: tuple[int, float] | None = None
    partition_threshold: tuple[int, float] | None = None
    order: dict = field(default_factory=lambda: {"reverse": None, "in_place": None, "large_incr": None})
    alignment_penalty: float | None = None
    mix_deviation: dict = field(default_factory=dict)  # "SR+RW" -> worst factor vs blend
    parallel_degradation: dict = field(default_factory=dict)  # baseline -> {degree: factor}
    dispersion_flags: list = field(default_factory=list)
    notes: list = field(default_factory=list)  # partial sweeps, capacity clamps
    thresholds: SummaryThresholds = field(default_factory=SummaryThresholds)

    def to_json(self) -> str:
        d = asdict(self)
        return json.dumps(d, indent=2, sort_keys=True)

    def to_text(self) -> str:
        ms = {
            b: (f"{v / 1000:.2f}" if v is not None else "-")
            for b, v in (
                (b, self.baseline_cost_us.get(b)) for b in ("SR", "RR", "SW", "RW")
            )
        }
        loc = "No" if self.locality_area is None else (
            f"{self.locality_area[0] // (1024 * 1024)}MB (x{self.locality_area[1]:.1f})"
        )
        parts = "No" if self.partition_threshold is None else (
            f"{self.partition_threshold[0]} (x{self.partition_threshold[1]:.1f})"
        )
        pause = "-" if self.pause_effect_us is None else f"{self.pause_effect_us / 1000:.1f}"

        def ratio(key):
            v = self.order.get(key)
            return "-" if v is None else f"x{v:.1f}"

        header = (
            f"{'Device':<14} {'SR(ms)':>7} {'RR(ms)':>7} {'SW(ms)':>7} {'RW(ms)':>8} "
            f"{'Pause(ms)':>9} {'Locality':>12} {'Partitions':>12} "
            f"{'Reverse':>8} {'InPlace':>8} {'LargeIncr':>9}"
        )
        row = (
            f"{self.device:<14} {ms['SR']:>7} {ms['RR']:>7} {ms['SW']:>7} {ms['RW']:>8} "
            f"{pause:>9} {loc:>12} {parts:>12} "
            f"{ratio('reverse'):>8} {ratio('in_place'):>8} {ratio('large_incr'):>9}"
        )
        return header + "\n" + row


def build_summary(
    outcomes: Sequence[ExperimentOutcome],
    device: str,
    io_size: int = 32 * 1024,
    thresholds: SummaryThresholds | None = None,
) -> SummaryReport:
    """Assemble the characterization report from measured experiment means.

    Metrics whose micro-benchmark is missing stay None; nothing is ever
    extrapolated.
    """
    th = thresholds or SummaryThresholds()
    report = SummaryReport(device=device, io_size=io_size, thresholds=th)
    outcomes = list(outcomes)

    for b in ("SR", "RR", "SW", "RW"):
        pts = dict(_sweep(outcomes, "granularity", b))
        if io_size in pts:
            report.baseline_cost_us[b] = pts[io_size]
    sw = report.baseline_cost_us.get("SW")
    rw = report.baseline_cost_us.get("RW")

    pause_rw = _sweep(outcomes, "pause", "RW")
    if pause_rw and sw:
        hits = [p for p, mean in pause_rw if mean <= th.pause_factor * sw]
        report.pause_effect_us = min(hits) if hits else None

    loc = _sweep(outcomes, "locality", "RW")
    if loc and sw:
        report.locality_area = locality_area(loc, sw, io_size, th.locality_factor)
        if len(loc) < 17:  # full declared sweep is 2^0..2^16 x io_size
            report.notes.append(
                f"locality/RW sweep partial: {len(loc)} of 17 points "
                f"(largest {max(s for s, _ in loc)} bytes)"
            )

    parts = _sweep(outcomes, "partitioning", "SW")
    if parts and sw:
        report.partition_threshold = partition_threshold(parts, sw, th.partition_factor)
        if len(parts) < 9:  # full declared sweep is 2^0..2^8
            report.notes.append(f"partitioning/SW sweep partial: {len(parts)} of 9 points")

    order = _sweep(outcomes, "order", "SW")
    if order and sw and rw:
        report.order = order_ratios(order, sw, rw, io_size, th.large_stride_bytes)

    penalties = []
    for b in ("SR", "RR", "SW", "RW"):
        align = dict(_sweep(outcomes, "alignment", b))
        if 0 in align and len(align) > 1:
            aligned = align[0]
            penalties.extend(m / aligned for shift, m in align.items() if shift)
    if penalties:
        report.alignment_penalty = max(penalties)

    for pair in sorted({o.baseline for o in outcomes if o.micro == "mix"}):
        b1, _, b2 = pair.partition("+")
        m1 = report.baseline_cost_us.get(b1)
        m2 = report.baseline_cost_us.get(b2)
        if m1 is None or m2 is None:
            continue
        worst = None
        for ratio, mean in _sweep(outcomes, "mix", pair):
            blend = (ratio * m1 + m2) / (ratio + 1)
            factor = mean / blend
            if worst is None or abs(np.log(factor)) > abs(np.log(worst)):
                worst = factor
        if worst is not None:
            report.mix_deviation[pair] = worst

    for b in ("SR", "RR", "SW", "RW"):
        sweep = dict(_sweep(outcomes, "parallelism", b))
        if 1 in sweep and len(sweep) > 1:
            report.parallel_degradation[b] = {
                deg: mean / sweep[1] for deg, mean in sweep.items() if deg != 1
            }

    report.dispersion_flags = sorted(
        f"{o.micro}/{o.baseline}/{o.varying_name}={o.varying_value}"
        for o in outcomes
        if o.dispersion_flagged
    )
    return report


# ------------------------------------------------------------- plot data


def emit_xy_series(
    path: str | Path,
    series: dict[str, Sequence[tuple[float, float]]],
    x_axis: str,
    y_axis: str,
) -> None:
    """Write labeled (x, y) series as tab-separated values plus a sidecar
    metadata file naming axes and units."""
    path = Path(path)
    lines = [f"# axis: x={x_axis} y={y_axis}", "series\tx\ty"]
    for label in sorted(series):
        for x, y in series[label]:
            lines.append(f"{label}\t{x}\t{y}")
    path.write_text("\n".join(lines) + "\n")
    meta = {"x_axis": x_axis, "y_axis": y_axis, "series": sorted(series)}
    path.with_suffix(path.suffix + ".meta.json").write_text(json.dumps(meta, indent=2))


def emit_phase_trace(path: str | Path, rts: Sequence[float], io_ignore: int) -> None:
    """Per-IO scatter plus the two running averages (with and without the
    start-up prefix), the trace view used to pick warm-up lengths."""
    path = Path(path)
    x = np.asarray(rts, dtype=float)
    with_startup = running_average(x)
    without = np.full(x.size, np.nan)
    if io_ignore < x.size:
        without[io_ignore:] = running_average(x[io_ignore:])
    lines = ["# axis: x=io_index y=response_time_us", "index\trt\tavg_all\tavg_after_ignore"]
    for i in range(x.size):
        tail = "" if np.isnan(without[i]) else f"{without[i]:.3f}"
        lines.append(f"{i}\t{x[i]:.3f}\t{with_startup[i]:.3f}\t{tail}")
    path.write_text("\n".join(lines) + "\n")
    meta = {
        "x_axis": "io_index",
        "y_axis": "response_time_us",
        "io_ignore": io_ignore,
        "columns": ["index", "rt", "avg_all", "avg_after_ignore"],
    }
    path.with_suffix(path.suffix + ".meta.json").write_text(json.dumps(meta, indent=2))


def emit_plot_data(
    outcomes: Sequence[ExperimentOutcome], kind: str, out_dir: str | Path
) -> Path:
    """Emit plot-ready sweep data for one micro-benchmark."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{kind}.tsv"
    series: dict[str, list[tuple[float, float]]] = {}
    for o in outcomes:
        if o.micro != kind:
            continue
        series.setdefault(o.baseline, []).append((o.varying_value, o.mean_us))
    x_name = {
        "granularity": "io_size_bytes",
        "alignment": "io_shift_bytes",
        "locality": "target_size_bytes",
        "partitioning": "partitions",
        "order": "incr",
        "parallelism": "parallel_degree",
        "mix": "ratio",
        "pause": "pause_us",
        "bursts": "burst_count",
    }.get(kind, "value")
    emit_xy_series(path, {k: sorted(v) for k, v in series.items()}, x_name, "mean_rt_us")
    return path
