"""JSON encoding for experiments and benchmark plans.

Plans are file artifacts handed between pipeline commands, so the
encoding is versioned and strict: unknown kinds or version mismatches
fail loudly rather than guessing.
"""

from __future__ import annotations

from .microbench import ExperimentSpec, Micro
from .patterns import MixSpec, ParallelSpec, PatternSpec

PLAN_FORMAT_VERSION = 1


class SchemaError(ValueError):
    """Artifact written by an incompatible tool version or corrupted."""


def pattern_to_dict(pattern) -> dict:
    if isinstance(pattern, PatternSpec):
        return {"type": "pattern", **pattern.to_dict()}
    if isinstance(pattern, MixSpec):
        return {"type": "mix", **pattern.to_dict()}
    if isinstance(pattern, ParallelSpec):
        return {"type": "parallel", **pattern.to_dict()}
    raise SchemaError(f"unknown pattern object: {type(pattern)!r}")


def pattern_from_dict(d: dict):
    kind = d.get("type")
    body = {k: v for k, v in d.items() if k != "type"}
    if kind == "pattern":
        return PatternSpec.from_dict(body)
    if kind == "mix":
        return MixSpec.from_dict(body)
    if kind == "parallel":
        return ParallelSpec.from_dict(body)
    raise SchemaError(f"unknown pattern type: {kind!r}")


def experiment_to_dict(exp: ExperimentSpec) -> dict:
    return {
        "micro": exp.micro.value,
        "baseline": exp.baseline,
        "varying_name": exp.varying_name,
        "varying_value": exp.varying_value,
        "pattern": pattern_to_dict(exp.pattern),
        "repetitions": exp.repetitions,
        "io_ignore": exp.io_ignore,
    }


def experiment_from_dict(d: dict) -> ExperimentSpec:
    return ExperimentSpec(
        micro=Micro(d["micro"]),
        baseline=d["baseline"],
        varying_name=d["varying_name"],
        varying_value=d["varying_value"],
        pattern=pattern_from_dict(d["pattern"]),
        repetitions=d["repetitions"],
        io_ignore=d["io_ignore"],
    )


def plan_to_dict(plan) -> dict:
    from .methodology import PauseStep, RunStep, StateReset

    steps = []
    for step in plan.steps:
        if isinstance(step, StateReset):
            steps.append({"kind": "state_reset"})
        elif isinstance(step, PauseStep):
            steps.append({"kind": "pause", "duration_us": step.duration_us})
        elif isinstance(step, RunStep):
            steps.append(
                {
                    "kind": "run",
                    "run_index": step.run_index,
                    "experiment": experiment_to_dict(step.experiment),
                }
            )
        else:
            raise SchemaError(f"unknown plan step: {step!r}")
    return {
        "format_version": PLAN_FORMAT_VERSION,
        "capacity": plan.capacity,
        "base_offset": plan.base_offset,
        "inter_run_pause_us": plan.inter_run_pause_us,
        "steps": steps,
    }


def plan_from_dict(d: dict):
    from .methodology import BenchmarkPlan, PauseStep, RunStep, StateReset

    if d.get("format_version") != PLAN_FORMAT_VERSION:
        raise SchemaError(
            f"plan format {d.get('format_version')!r} not supported "
            f"(expected {PLAN_FORMAT_VERSION})"
        )
    steps = []
    for s in d["steps"]:
        kind = s.get("kind")
        if kind == "state_reset":
            steps.append(StateReset())
        elif kind == "pause":
            steps.append(PauseStep(s["duration_us"]))
        elif kind == "run":
            steps.append(RunStep(experiment_from_dict(s["experiment"]), s["run_index"]))
        else:
            raise SchemaError(f"unknown step kind: {kind!r}")
    return BenchmarkPlan(
        steps=steps,
        capacity=d["capacity"],
        base_offset=d["base_offset"],
        inter_run_pause_us=d["inter_run_pause_us"],
    )
