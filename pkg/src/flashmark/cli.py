"""Command-line pipeline: format, calibrate, plan, run, report.

The stages are separate commands with file handoffs so multi-day
campaigns survive interruption: each writes its artifacts and a manifest
into the campaign output directory, and `run` journals every completed
step so a restarted invocation resumes where it stopped.

Exit codes: 0 success, 2 validation error, 3 device IO error.
"""

from __future__ import annotations

import hashlib
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import click

from . import __version__
from .analysis import (
    ExperimentOutcome,
    SummaryThresholds,
    build_summary,
    emit_phase_trace,
    emit_plot_data,
)
from .device import (
    BlockDevice,
    DeviceError,
    RawDevice,
    SimProfile,
    SimulatedDevice,
    builtin_profile,
    probe_raw_capabilities,
)
from .journal import Journal
from .methodology import (
    BenchmarkPlan,
    DeviceProfile,
    PauseStep,
    StateReset,
    build_plan,
    calibrate_pause,
    calibrate_phases,
    enforce_random_state,
    verify_plan,
)
from .microbench import Micro, SuiteConfig, expand_suite
from .patterns import PatternError, derive_seed
from .runner import (
    read_trace_csv,
    save_trace,
    summarize,
    execute_run,
    trace_relpath,
)
from .serialization import SchemaError

EXIT_VALIDATION = 2
EXIT_DEVICE = 3

_VALIDATION_ERRORS = (ValueError, KeyError, PatternError, SchemaError, FileNotFoundError)


@dataclass
class CampaignConfig:
    device: dict
    output_dir: Path
    seed: int = 0
    suite: dict = field(default_factory=dict)
    thresholds: dict = field(default_factory=dict)
    calibration: dict = field(default_factory=dict)
    force: bool = False
    resume: bool = True  # False ignores the journal and redoes every step

    @classmethod
    def load(cls, path: str | Path) -> "CampaignConfig":
        raw = json.loads(Path(path).read_text())
        device = raw.get("device") or {}
        selectors = [k for k in ("simulator_profile", "raw_path") if device.get(k)]
        if len(selectors) != 1:
            raise ValueError(
                "config.device must contain exactly one of simulator_profile / raw_path"
            )
        out = raw.get("output_dir")
        if not out:
            raise ValueError("config.output_dir is required")
        cfg = cls(
            device=device,
            output_dir=Path(out),
            seed=int(raw.get("seed", 0)),
            suite=raw.get("suite", {}),
            thresholds=raw.get("thresholds", {}),
            calibration=raw.get("calibration", {}),
            force=bool(raw.get("force", False)),
            resume=bool(raw.get("resume", True)),
        )
        cfg.output_dir.mkdir(parents=True, exist_ok=True)
        cfg._config_hash = hashlib.sha256(
            json.dumps(raw, sort_keys=True).encode()
        ).hexdigest()
        return cfg

    @property
    def is_simulator(self) -> bool:
        return bool(self.device.get("simulator_profile"))

    @property
    def sim_state_path(self) -> Path:
        return self.output_dir / "device_state.bin"

    def open_device(self, restore_state: bool = True) -> BlockDevice:
        if self.is_simulator:
            name = self.device["simulator_profile"]
            if Path(name).suffix == ".json" and Path(name).exists():
                profile = SimProfile.load(name)
            else:
                profile = builtin_profile(name)
            dev = SimulatedDevice(profile)
            if restore_state and self.sim_state_path.exists():
                dev.load_state(self.sim_state_path)
            return dev
        return RawDevice(self.device["raw_path"], write_seed=derive_seed(self.seed, 0xB0F))

    def persist_device(self, dev: BlockDevice) -> None:
        if self.is_simulator:
            dev.save_state(self.sim_state_path)

    def journal(self) -> Journal:
        return Journal(self.output_dir / "journal.jsonl")

    def write_manifest(self, command: str, **extra) -> None:
        manifest = {
            "tool_version": __version__,
            "command": command,
            "config_hash": getattr(self, "_config_hash", ""),
            "seed": self.seed,
            "written_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
            **extra,
        }
        path = self.output_dir / f"manifest-{command}.json"
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True))

    def suite_config(self, capacity: int, profile: DeviceProfile | None) -> SuiteConfig:
        overrides = dict(self.suite)
        overrides.pop("micros", None)
        counts = overrides.pop("io_count_by_pattern", None)
        if counts is None and profile is not None and profile.io_count_recommendation:
            counts = profile.io_count_recommendation
        kwargs = {}
        if counts:
            kwargs["io_count_by_pattern"] = {k: int(v) for k, v in counts.items()}
        for key in (
            "base_io_size",
            "base_target_size",
            "base_target_offset",
            "max_target_size",
            "repetitions",
            "burst_fixed_pause_us",
        ):
            if key in overrides:
                kwargs[key] = overrides.pop(key)
        if "extra_io_sizes" in overrides:
            kwargs["extra_io_sizes"] = tuple(overrides.pop("extra_io_sizes"))
        if "io_ignore_by_pattern" in overrides:
            kwargs["io_ignore_by_pattern"] = overrides.pop("io_ignore_by_pattern")
        if overrides:
            raise ValueError(f"unknown suite options: {sorted(overrides)}")
        return SuiteConfig.for_device(capacity, seed=self.seed, **kwargs)

    def micros(self) -> list[Micro]:
        names = self.suite.get("micros")
        if not names:
            return list(Micro)
        return [Micro(n) for n in names]


def _fail(code: int, message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _guarded(fn):
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except DeviceError as exc:
            _fail(EXIT_DEVICE, str(exc))
        except _VALIDATION_ERRORS as exc:
            _fail(EXIT_VALIDATION, str(exc))

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


@click.group()
@click.version_option(__version__)
def main() -> None:
    """Flash-device IO pattern micro-benchmark harness."""


config_option = click.option(
    "--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False),
    help="Campaign configuration (JSON).",
)


@main.command("format")
@config_option
@click.option("--force", is_flag=True, help="Allow destructive formatting of a raw device.")
@_guarded
def cmd_format(config_path: str, force: bool) -> None:
    """Enforce the random device state (writes the whole device)."""
    cfg = CampaignConfig.load(config_path)
    if not cfg.is_simulator:
        caps = probe_raw_capabilities(cfg.device["raw_path"])
        click.echo(f"capabilities: {json.dumps(caps, sort_keys=True)}")
        if not (force or cfg.force):
            _fail(
                EXIT_VALIDATION,
                "formatting a raw device destroys its contents; pass --force to proceed",
            )
    journal = cfg.journal()
    start_io = 0
    checkpoint = journal.last("format") if cfg.resume else None
    if checkpoint and checkpoint.get("status") == "done":
        click.echo("format already complete (journal); nothing to do")
        return
    if checkpoint:
        start_io = int(checkpoint.get("ios", 0))
        click.echo(f"resuming format at IO {start_io}")

    dev = cfg.open_device()
    t_wall = time.time()

    def progress(fraction: float, ios: int) -> None:
        if ios % 2048 == 0:
            journal.record("format", status="progress", ios=ios, coverage=fraction)
        elapsed = time.time() - t_wall
        eta = elapsed * (1 - fraction) / fraction if fraction > 0 else 0.0
        click.echo(
            f"\rcoverage {fraction:6.1%}  ios {ios}  eta {eta:8.0f}s", nl=False, err=True
        )

    result = enforce_random_state(
        dev, seed=derive_seed(cfg.seed, 0xF0), progress=progress, start_io=start_io
    )
    click.echo("", err=True)
    cfg.persist_device(dev)
    journal.record("format", status="done", ios=result.ios_issued, coverage=result.coverage)
    cfg.write_manifest(
        "format",
        ios=result.ios_issued,
        bytes_written=result.bytes_written,
        device_elapsed_us=result.elapsed_us,
    )
    click.echo(
        f"state enforced: {result.ios_issued} IOs, "
        f"{result.bytes_written // (1024 * 1024)} MiB written, coverage 100%"
    )


@main.command("calibrate")
@config_option
@_guarded
def cmd_calibrate(config_path: str) -> None:
    """Measure start-up, period and the inter-run pause; write the device profile."""
    cfg = CampaignConfig.load(config_path)
    dev = cfg.open_device()
    cal = cfg.calibration
    profile = calibrate_phases(
        dev,
        long_io_count=int(cal.get("long_io_count", 51200)),
        seed=cfg.seed,
        settle_pause_us=int(cal.get("settle_pause_us", 60_000_000)),
    )
    pause = calibrate_pause(
        dev,
        seed=cfg.seed,
        probe_reads=int(cal.get("probe_reads", 512)),
        disturb_writes=int(cal.get("disturb_writes", 1024)),
        observe_reads=int(cal.get("observe_reads", 8192)),
        settle_pause_us=int(cal.get("settle_pause_us", 60_000_000)),
    )
    profile = DeviceProfile(
        startup=profile.startup,
        period=profile.period,
        inter_run_pause_us=pause.pause_us,
        io_count_recommendation=profile.io_count_recommendation,
        flags=profile.flags,
    )
    out = cfg.output_dir / "device_profile.json"
    profile.save(out)
    cfg.persist_device(dev)
    cfg.write_manifest(
        "calibrate", affected_reads=pause.affected_reads, lingering_us=pause.lingering_us
    )
    click.echo(f"device profile written to {out}")
    for b in ("SR", "RR", "SW", "RW"):
        click.echo(
            f"  {b}: startup={profile.startup[b]} period={profile.period[b]} "
            f"recommended io_count={profile.io_count_recommendation[b]}"
        )
    click.echo(
        f"  inter-run pause: {profile.inter_run_pause_us / 1e6:.1f}s "
        f"({pause.affected_reads} affected reads)"
    )


@main.command("plan")
@config_option
@click.option("--dry-run", is_flag=True, help="List the experiments without writing the plan.")
@_guarded
def cmd_plan(config_path: str, dry_run: bool) -> None:
    """Expand the suite and compile the benchmark plan."""
    cfg = CampaignConfig.load(config_path)
    dev = cfg.open_device(restore_state=False)
    capacity = dev.capacity
    dev.close()
    profile_path = cfg.output_dir / "device_profile.json"
    profile = DeviceProfile.load(profile_path) if profile_path.exists() else DeviceProfile()
    suite = cfg.suite_config(capacity, profile)
    experiments = expand_suite(suite, cfg.micros())
    plan = build_plan(experiments, profile, capacity, base_offset=suite.base_target_offset)
    if dry_run:
        for step in plan.run_steps():
            if step.run_index == 0:
                click.echo(step.experiment.describe())
        click.echo(f"{len({s.experiment.experiment_id for s in plan.run_steps()})} experiments")
        return
    out = cfg.output_dir / "plan.json"
    plan.save(out)
    cfg.write_manifest("plan", experiments=len(experiments), steps=len(plan.steps))
    click.echo(
        f"plan written to {out}: {len(experiments)} experiments, "
        f"{len(plan.run_steps())} runs, "
        f"{sum(isinstance(s, StateReset) for s in plan.steps)} state resets"
    )


@main.command("run")
@config_option
@_guarded
def cmd_run(config_path: str) -> None:
    """Execute the plan, journaling each completed step."""
    cfg = CampaignConfig.load(config_path)
    plan = BenchmarkPlan.load(cfg.output_dir / "plan.json")
    verify_plan(plan)
    journal = cfg.journal()
    done = journal.done_steps() if cfg.resume else set()
    dev = cfg.open_device()
    traces_root = cfg.output_dir / "traces"
    executed = 0
    skipped = 0
    pending_pause = 0
    for i, step in enumerate(plan.steps):
        if isinstance(step, PauseStep):
            pending_pause = step.duration_us
            continue
        if isinstance(step, StateReset):
            step_id = f"reset/{i}"
            if step_id in done:
                continue
            click.echo("state reset: re-enforcing random state")
            enforce_random_state(dev, seed=derive_seed(cfg.seed, 0xF0, i))
            cfg.persist_device(dev)
            journal.record(step_id, status="done")
            continue
        step_id = step.step_id
        if step_id in done:
            skipped += 1
            pending_pause = 0
            continue
        if pending_pause:
            dev.idle(pending_pause)
            pending_pause = 0
        trace = execute_run(
            dev, step.experiment.pattern, step.experiment.experiment_id, step.run_index
        )
        path = save_trace(trace, traces_root, step.experiment)
        if trace.error:
            cfg.persist_device(dev)
            journal.record(step_id, status="failed", error=trace.error)
            _fail(EXIT_DEVICE, f"{step_id}: {trace.error} (partial trace at {path})")
        stats = summarize(trace, min(step.experiment.io_ignore, len(trace.records) - 1))
        path.with_suffix(".stats.json").write_text(
            json.dumps(stats.to_dict(), indent=2, sort_keys=True)
        )
        cfg.persist_device(dev)
        journal.record(step_id, status="done")
        executed += 1
    cfg.write_manifest("run", executed=executed, skipped=skipped)
    click.echo(f"runs executed: {executed}, resumed past: {skipped}")


@main.command("report")
@config_option
@_guarded
def cmd_report(config_path: str) -> None:
    """Summarize traces into the characterization report and plot data."""
    cfg = CampaignConfig.load(config_path)
    plan = BenchmarkPlan.load(cfg.output_dir / "plan.json")
    traces_root = cfg.output_dir / "traces"
    th = SummaryThresholds(
        locality_factor=float(cfg.thresholds.get("locality_factor", 2.0)),
        partition_factor=float(cfg.thresholds.get("partition_factor", 2.0)),
        pause_factor=float(cfg.thresholds.get("pause_factor", 1.2)),
        large_stride_bytes=int(cfg.thresholds.get("large_stride_bytes", 1024 * 1024)),
    )
    dispersion_threshold = float(cfg.thresholds.get("dispersion", 0.05))

    by_experiment: dict[str, list] = {}
    io_size = int(cfg.suite.get("base_io_size", 32 * 1024))
    device_id = None
    for step in plan.run_steps():
        exp = step.experiment
        path = traces_root / trace_relpath(exp, step.run_index, _device_label(cfg))
        if not path.exists():
            continue
        device_id = device_id or _device_label(cfg)
        with path.open() as fp:
            trace = read_trace_csv(fp, exp.experiment_id, step.run_index)
        stats = summarize(trace, min(exp.io_ignore, len(trace.records) - 1))
        by_experiment.setdefault(exp.experiment_id, []).append((exp, stats, trace))

    outcomes = []
    for exp_id, entries in by_experiment.items():
        exp = entries[0][0]
        means = [stats.mean_us for _, stats, _ in entries]
        mean = sum(means) / len(means)
        dispersion = (max(means) - min(means)) / min(means) if min(means) > 0 else 0.0
        outcomes.append(
            ExperimentOutcome(
                micro=exp.micro.value,
                baseline=exp.baseline,
                varying_name=exp.varying_name,
                varying_value=exp.varying_value,
                mean_us=mean,
                dispersion_flagged=dispersion > dispersion_threshold,
            )
        )

    report_dir = cfg.output_dir / "report"
    report_dir.mkdir(parents=True, exist_ok=True)
    report = build_summary(outcomes, device=device_id or _device_label(cfg), io_size=io_size, thresholds=th)
    (report_dir / "summary.json").write_text(report.to_json())
    (report_dir / "summary.txt").write_text(report.to_text() + "\n")
    plots = report_dir / "plots"
    for micro in sorted({o.micro for o in outcomes}):
        emit_plot_data(outcomes, micro, plots)
    phases = _phase_trace_example(by_experiment)
    if phases is not None:
        emit_phase_trace(plots / "phase_trace.tsv", phases[0], phases[1])
    cfg.write_manifest("report", experiments=len(by_experiment))
    click.echo(report.to_text())
    click.echo(f"report written to {report_dir}")


def _phase_trace_example(by_experiment: dict) -> tuple[list[int], int] | None:
    """Pick the most start-up-prone trace (an RW baseline run) for the
    per-IO phase plot."""
    best = None
    for entries in by_experiment.values():
        for exp, _, trace in entries:
            if exp.baseline == "RW" and trace.records:
                if best is None or len(trace.records) > len(best[0].records):
                    best = (trace, exp.io_ignore)
    if best is None:
        return None
    return best[0].rts, best[1]


def _device_label(cfg: CampaignConfig) -> str:
    if cfg.is_simulator:
        name = cfg.device["simulator_profile"]
        if Path(name).suffix == ".json" and Path(name).exists():
            return SimProfile.load(name).name
        return name
    return Path(cfg.device["raw_path"]).name or "raw"


if __name__ == "__main__":
    main()
