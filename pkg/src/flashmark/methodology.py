"""Benchmarking methodology: device state, calibration, and plan building.

Flash device performance depends on the entire IO history, so runs are
only comparable from a well-defined initial state.  Writing the whole
device with random IOs of random size yields such a state, and it is
stable: among the pattern families only sequential writes disturb it
appreciably, so those are directed at disjoint target ranges and grouped
so that a full-device rewrite (state reset) is only needed when their
accumulated space would exceed the capacity.

Calibration measures, per baseline pattern, the start-up length (IOs to
ignore when summarizing), the oscillation period (how long runs must be
to average fairly), and the inter-run pause needed so that one run's
deferred reclamation cannot bleed into the next.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .analysis import detect_startup, estimate_period
from .device import BlockDevice, DeviceError
from .microbench import ExperimentSpec, assign_target_offsets
from .patterns import (
    Consecutive,
    MixSpec,
    Mode,
    ParallelSpec,
    PatternSpec,
    Random,
    Sequential,
    derive_seed,
    uniform_index,
)
from .runner import execute_run

KB = 1024
MB = 1024 * 1024

BASELINE_FLOOR_IO_COUNT = {"SR": 1024, "RR": 1024, "SW": 1024, "RW": 5120}
DEFAULT_LONG_IO_COUNT = 10 * max(BASELINE_FLOOR_IO_COUNT.values())
DEFAULT_SETTLE_PAUSE_US = 60_000_000  # generous: lets any deferred backlog drain
MIN_INTER_RUN_PAUSE_US = 1_000_000


class EnforcementError(DeviceError):
    """State enforcement failed; carries the coverage fraction reached."""

    def __init__(self, message: str, coverage: float):
        super().__init__(message)
        self.coverage = coverage


@dataclass(frozen=True)
class DeviceProfile:
    """Calibrated per-baseline run parameters for one device."""

    startup: dict = field(default_factory=dict)          # baseline -> IOs
    period: dict = field(default_factory=dict)           # baseline -> IOs
    inter_run_pause_us: int = MIN_INTER_RUN_PAUSE_US
    io_count_recommendation: dict = field(default_factory=dict)
    flags: tuple = ()

    def startup_for(self, baseline: str) -> int:
        return int(self.startup.get(baseline, 0))

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "DeviceProfile":
        d = json.loads(text)
        d["flags"] = tuple(d.get("flags", ()))
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> "DeviceProfile":
        return cls.from_json(Path(path).read_text())

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())


@dataclass
class EnforceResult:
    elapsed_us: int
    ios_issued: int
    bytes_written: int
    coverage: float


MAX_FORMAT_IO = 128 * KB  # writes range from one sector to the flash block size


class _FormatInterrupted(Exception):
    pass


def enforce_random_state(
    device: BlockDevice,
    seed: int,
    overwrite_factor: float = 1.1,
    progress: Callable[[float, int], None] | None = None,
    start_io: int = 0,
    max_ios: int | None = None,
) -> EnforceResult:
    """Drive the device into the well-defined random-write state.

    Random writes of random size (one sector up to the flash block size)
    land at random sector offsets until overwrite_factor times the
    capacity has been written; a coverage bitmap then directs targeted
    writes at any still-unwritten sectors, so every logical sector is
    written at least once and termination is guaranteed.

    The write sequence is a pure function of the seed, which makes the
    process resumable: the first start_io writes are replayed into the
    bitmap without touching the device.  max_ios stops after that many
    issued writes (a controlled interruption, used by tests and by
    operators pacing multi-day formats); the partial result carries the
    coverage reached.
    """
    cap = device.capacity
    sectors = cap // 512
    covered = np.zeros(sectors, dtype=bool)
    t0 = device.now_us()
    target_bytes = int(cap * overwrite_factor)

    written = 0
    ios = 0
    issued = 0

    def one_write(lba: int, size: int) -> None:
        nonlocal written, ios, issued
        live = ios >= start_io
        if live and max_ios is not None and issued >= max_ios:
            raise _FormatInterrupted()
        if live:
            try:
                device.write(lba, size)
            except DeviceError as exc:
                raise EnforcementError(
                    f"format write {ios} failed: {exc}", coverage=float(covered.mean())
                ) from exc
            issued += 1
        covered[lba // 512 : (lba + size) // 512] = True
        written += size
        ios += 1
        if live and progress and ios % 512 == 0:
            progress(float(covered.mean()), ios)

    try:
        while written < target_bytes:
            size = (uniform_index(seed, 2 * ios, MAX_FORMAT_IO // 512) + 1) * 512
            lba = uniform_index(seed, 2 * ios + 1, (cap - size) // 512 + 1) * 512
            one_write(lba, size)

        # fill remaining holes with targeted writes, largest-chunk first
        hole = np.flatnonzero(~covered)
        i = 0
        while i < hole.size:
            start = int(hole[i])
            end = start
            while (
                i + 1 < hole.size
                and hole[i + 1] == end + 1
                and (end + 1 - start) < MAX_FORMAT_IO // 512 - 1
            ):
                i += 1
                end = int(hole[i])
            one_write(start * 512, (end - start + 1) * 512)
            i += 1
    except _FormatInterrupted:
        return EnforceResult(
            elapsed_us=device.now_us() - t0,
            ios_issued=ios,
            bytes_written=written,
            coverage=float(covered.mean()),
        )

    if progress:
        progress(1.0, ios)
    if not covered.all():
        raise EnforcementError("coverage incomplete after targeted pass", float(covered.mean()))
    return EnforceResult(
        elapsed_us=device.now_us() - t0,
        ios_issued=ios,
        bytes_written=written,
        coverage=1.0,
    )


_BASELINE_TAG = {"SR": 1, "RR": 2, "SW": 3, "RW": 4}


def enforce_sequential_state(
    device: BlockDevice,
    io_size: int = 128 * KB,
    progress: Callable[[float, int], None] | None = None,
) -> EnforceResult:
    """Rewrite the whole device sequentially.

    Faster than random enforcement but less stable: random writes,
    misaligned IOs, or different sizes disturb a sequential state far
    more than a random one, so no calibration guarantees attach to it.
    Provided as an explicit opt-in only.
    """
    cap = device.capacity
    t0 = device.now_us()
    written = 0
    ios = 0
    lba = 0
    while lba < cap:
        size = min(io_size, cap - lba)
        size -= size % 512
        if size == 0:
            break
        try:
            device.write(lba, size)
        except DeviceError as exc:
            raise EnforcementError(
                f"sequential format write {ios} failed: {exc}", coverage=lba / cap
            ) from exc
        lba += size
        written += size
        ios += 1
        if progress and ios % 512 == 0:
            progress(lba / cap, ios)
    if progress:
        progress(1.0, ios)
    return EnforceResult(
        elapsed_us=device.now_us() - t0,
        ios_issued=ios,
        bytes_written=written,
        coverage=1.0,
    )


def _calibration_pattern(baseline: str, device: BlockDevice, io_count: int, seed: int) -> PatternSpec:
    sequential = baseline[0] == "S"
    io_size = 32 * KB
    if sequential:
        target = min(io_count * io_size, device.capacity)
        target -= target % io_size
    else:
        target = device.capacity - device.capacity % io_size
    return PatternSpec(
        timing=Consecutive(),
        location=Sequential() if sequential else Random(),
        mode=Mode.READ if baseline[1] == "R" else Mode.WRITE,
        io_size=io_size,
        io_shift=0,
        target_offset=0,
        target_size=target,
        io_count=io_count,
        io_ignore=0,
        seed=derive_seed(seed, _BASELINE_TAG[baseline]),
    )


def calibrate_phases(
    device: BlockDevice,
    long_io_count: int = DEFAULT_LONG_IO_COUNT,
    seed: int = 0,
    settle_pause_us: int = DEFAULT_SETTLE_PAUSE_US,
) -> DeviceProfile:
    """Measure start-up and period for each baseline pattern.

    Runs SR, RR, SW and RW with a long IO count against the enforced
    device, detects the two phases on each trace, and derives per-run
    IOIgnore/IOCount recommendations (start-up plus enough periods to
    converge, floored at the per-baseline defaults).
    """
    startup: dict[str, int] = {}
    period: dict[str, int] = {}
    flags: list[str] = []
    recommendation: dict[str, int] = {}
    for baseline in ("SR", "RR", "SW", "RW"):
        device.idle(settle_pause_us)
        spec = _calibration_pattern(baseline, device, long_io_count, seed)
        trace = execute_run(device, spec, experiment_id=f"calibrate/{baseline}")
        if trace.error:
            raise DeviceError(f"calibration run {baseline} aborted: {trace.error}")
        rts = trace.rts
        est = detect_startup(rts)
        if not est.conclusive:
            flags.append(f"startup:{baseline}:inconclusive")
        startup[baseline] = est.count
        per = estimate_period(rts[est.count :])
        if not per.confident:
            flags.append(f"period:{baseline}:low-confidence")
        period[baseline] = per.period
        recommendation[baseline] = startup[baseline] + max(
            20 * period[baseline], BASELINE_FLOOR_IO_COUNT[baseline]
        )
    return DeviceProfile(
        startup=startup,
        period=period,
        inter_run_pause_us=MIN_INTER_RUN_PAUSE_US,
        io_count_recommendation=recommendation,
        flags=tuple(flags),
    )


@dataclass
class PauseCalibration:
    pause_us: int
    affected_reads: int
    lingering_us: int
    pre_mean_us: float
    pre_stddev_us: float


def calibrate_pause(
    device: BlockDevice,
    seed: int = 0,
    probe_reads: int = 512,
    disturb_writes: int = 1024,
    observe_reads: int = 8192,
    k_sigma: float = 3.0,
    settle_pause_us: int = DEFAULT_SETTLE_PAUSE_US,
) -> PauseCalibration:
    """Measure how long one run's side effects linger into the next.

    Sequential reads, then a batch of random writes, then sequential
    reads again; reads in the second batch whose response time exceeds
    the pre-batch mean by k_sigma standard deviations are counted as
    affected.  The returned pause doubles the observed lingering time
    and never goes below one second, deliberately overestimating.
    """
    io_size = 32 * KB
    cap = device.capacity - device.capacity % io_size
    device.idle(settle_pause_us)

    def seq_reads(n: int, tag: int) -> list[int]:
        spec = PatternSpec(
            timing=Consecutive(),
            location=Sequential(),
            mode=Mode.READ,
            io_size=io_size,
            io_shift=0,
            target_offset=0,
            target_size=cap,
            io_count=n,
            io_ignore=0,
            seed=derive_seed(seed, tag),
        )
        trace = execute_run(device, spec, experiment_id=f"pause-probe/{tag}")
        if trace.error:
            raise DeviceError(f"pause probe aborted: {trace.error}")
        return trace.rts

    pre = np.asarray(seq_reads(probe_reads, 1), dtype=float)

    rw = PatternSpec(
        timing=Consecutive(),
        location=Random(),
        mode=Mode.WRITE,
        io_size=io_size,
        io_shift=0,
        target_offset=0,
        target_size=cap,
        io_count=disturb_writes,
        io_ignore=0,
        seed=derive_seed(seed, 2),
    )
    trace = execute_run(device, rw, experiment_id="pause-probe/disturb")
    if trace.error:
        raise DeviceError(f"pause probe aborted: {trace.error}")

    post = np.asarray(seq_reads(observe_reads, 3), dtype=float)
    threshold = pre.mean() + k_sigma * pre.std() + 1e-9
    affected = post > threshold
    count = int(affected.sum())
    lingering = int(post[affected].sum())
    pause = max(2 * lingering, MIN_INTER_RUN_PAUSE_US)
    return PauseCalibration(
        pause_us=pause,
        affected_reads=count,
        lingering_us=lingering,
        pre_mean_us=float(pre.mean()),
        pre_stddev_us=float(pre.std()),
    )


# ------------------------------------------------------------------ plans


@dataclass(frozen=True)
class StateReset:
    kind: str = "state_reset"


@dataclass(frozen=True)
class PauseStep:
    duration_us: int
    kind: str = "pause"


@dataclass(frozen=True)
class RunStep:
    experiment: ExperimentSpec
    run_index: int
    kind: str = "run"

    @property
    def step_id(self) -> str:
        return f"{self.experiment.experiment_id}/run{self.run_index}"


PlanStep = StateReset | PauseStep | RunStep


class PlanError(ValueError):
    """The plan violates capacity or overlap constraints."""


@dataclass
class BenchmarkPlan:
    steps: list
    capacity: int
    base_offset: int = 0
    inter_run_pause_us: int = MIN_INTER_RUN_PAUSE_US

    def run_steps(self) -> list[RunStep]:
        return [s for s in self.steps if isinstance(s, RunStep)]

    def to_json(self) -> str:
        from .serialization import plan_to_dict

        return json.dumps(plan_to_dict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "BenchmarkPlan":
        from .serialization import plan_from_dict

        return plan_from_dict(json.loads(text))

    @classmethod
    def load(cls, path: str | Path) -> "BenchmarkPlan":
        return cls.from_json(Path(path).read_text())

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())


def scaled_io_ignore(exp: ExperimentSpec, profile: DeviceProfile) -> int:
    """Warm-up length for one run, scaled for composite patterns.

    For mixes the start-up of each component must be covered within the
    merged stream, so a component receiving a 1/(ratio+1) share of the
    IOs scales its start-up by (ratio+1).  Parallel runs share the
    device-level start-up across the merged timeline.
    """
    p = exp.pattern
    if isinstance(p, PatternSpec):
        return profile.startup_for(exp.baseline)
    if isinstance(p, MixSpec):
        b1, _, b2 = exp.baseline.partition("+")
        r = p.ratio
        need1 = math.ceil(profile.startup_for(b1) * (r + 1) / r)
        need2 = profile.startup_for(b2) * (r + 1)
        return max(need1, need2)
    if isinstance(p, ParallelSpec):
        return profile.startup_for(exp.baseline)
    raise TypeError(f"unknown pattern type: {type(p)!r}")


def build_plan(
    experiments: Sequence[ExperimentSpec],
    profile: DeviceProfile,
    capacity: int,
    base_offset: int = 0,
) -> BenchmarkPlan:
    """Compile experiments into an executable step sequence.

    Sequential-write-bearing experiments are grouped last within each
    state epoch with pairwise disjoint target ranges; a state reset is
    inserted only when their accumulated space would exceed the device.
    Every run is preceded by the calibrated inter-run pause, and every
    run's warm-up count is set from the per-baseline start-up.
    """
    ordered, resets = assign_target_offsets(list(experiments), capacity, base_offset)
    pause = max(profile.inter_run_pause_us, MIN_INTER_RUN_PAUSE_US)
    steps: list[PlanStep] = []
    for pos, exp in enumerate(ordered):
        if pos in resets:
            steps.append(StateReset())
        exp = exp.with_io_ignore(scaled_io_ignore(exp, profile))
        for k in range(exp.repetitions):
            steps.append(PauseStep(pause))
            steps.append(RunStep(exp, k))
    plan = BenchmarkPlan(
        steps=steps, capacity=capacity, base_offset=base_offset, inter_run_pause_us=pause
    )
    verify_plan(plan)
    return plan


def verify_plan(plan: BenchmarkPlan) -> None:
    """Replay the plan against a capacity ledger.

    Checks, per state epoch, that sequential-write ranges never overlap
    and never accumulate beyond the capacity, and that a sufficient
    pause precedes every run.
    """
    epoch_ranges: list[tuple[int, int]] = []
    epoch_total = 0
    pause_ready = False
    seen_first_rep: set[str] = set()
    for step in plan.steps:
        if isinstance(step, StateReset):
            epoch_ranges = []
            epoch_total = 0
        elif isinstance(step, PauseStep):
            if step.duration_us >= plan.inter_run_pause_us:
                pause_ready = True
        elif isinstance(step, RunStep):
            if not pause_ready:
                raise PlanError(f"run {step.step_id} not preceded by an inter-run pause")
            pause_ready = False
            exp = step.experiment
            if exp.sequential_write_bearing and exp.experiment_id not in seen_first_rep:
                seen_first_rep.add(exp.experiment_id)
                for spec in exp.component_specs():
                    if spec.mode is not Mode.WRITE or isinstance(spec.location, Random):
                        continue
                    rng = (spec.target_offset, spec.target_offset + spec.target_size)
                    for lo, hi in epoch_ranges:
                        if rng[0] < hi and lo < rng[1]:
                            raise PlanError(
                                f"{exp.experiment_id}: sequential-write range overlaps an "
                                f"earlier one in the same epoch"
                            )
                    epoch_ranges.append(rng)
                    epoch_total += spec.target_size
                    if epoch_total > plan.capacity:
                        raise PlanError(
                            f"{exp.experiment_id}: accumulated sequential-write space "
                            f"exceeds capacity within one epoch"
                        )
    return None
