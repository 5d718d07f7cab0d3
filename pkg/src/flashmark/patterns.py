"""IO pattern generation for flash-device micro-benchmarking.

An IO pattern is a sequence of IOs, each described by four attributes:
submission time, size, logical byte address (LBA), and mode (read or
write).  Patterns are built from a timing function (consecutive, pause,
burst), a location function (sequential, random, ordered, partitioned),
a constant size, and a constant mode.  The four baseline patterns
(sequential reads SR, random reads RR, sequential writes SW, random
writes RW) use consecutive timing and a sequential or random location
function.

Generation is pure: a fully parameterized spec plus its seed determines
the schedule byte for byte.  Submission times in generated schedules are
lower bounds; for completion-driven (consecutive) timing the actual gap
depends on measured response times, which only the runner knows.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from enum import Enum
from typing import IO, Iterable, Union

SECTOR = 512

_M64 = (1 << 64) - 1


def mix64(x: int) -> int:
    """Finalizing 64-bit mixer (splitmix64). Bijective on 64-bit ints."""
    x = (x + 0x9E3779B97F4A7C15) & _M64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _M64
    return x ^ (x >> 31)


def derive_seed(seed: int, *tags: int) -> int:
    """Derive an independent 64-bit stream seed from a parent seed."""
    z = mix64(seed)
    for t in tags:
        z = mix64(z ^ (t & _M64))
    return z


def uniform_index(seed: int, i: int, n: int) -> int:
    """Deterministic uniform draw in [0, n): a pure function of (seed, i).

    Modulo bias is below n / 2**64, negligible for slot counts here.
    """
    return mix64(mix64(seed) ^ i) % n


class PatternError(ValueError):
    """A pattern spec violates its invariants."""


class ScheduleError(ValueError):
    """Schedule generation produced an out-of-range address."""

    def __init__(self, message: str, index: int):
        super().__init__(message)
        self.index = index


class Mode(str, Enum):
    READ = "read"
    WRITE = "write"


@dataclass(frozen=True)
class Consecutive:
    """Each IO is submitted as soon as the previous one completes."""

    kind = "consecutive"


@dataclass(frozen=True)
class Pause:
    """A fixed pause is inserted between every pair of IOs."""

    pause_us: int
    kind = "pause"


@dataclass(frozen=True)
class Burst:
    """A fixed pause is inserted between groups of burst_count IOs."""

    pause_us: int
    burst_count: int
    kind = "burst"


Timing = Union[Consecutive, Pause, Burst]


@dataclass(frozen=True)
class Sequential:
    """Consecutive addresses, wrapping modulo the target size."""

    kind = "sequential"


@dataclass(frozen=True)
class Random:
    """Uniform random slot within the target space, with replacement."""

    kind = "random"


@dataclass(frozen=True)
class Ordered:
    """Linear address walk with signed increment.

    incr = 1 is sequential, incr = 0 stays in place, incr < 0 walks
    downward from the top of the target space.  Positive increments do
    not wrap: exceeding the target space is a schedule error.
    """

    incr: int
    kind = "ordered"


@dataclass(frozen=True)
class Partitioned:
    """Round-robin over equal partitions; sequential inside each."""

    partitions: int
    kind = "partitioned"


Location = Union[Sequential, Random, Ordered, Partitioned]

_TIMING_KINDS = {"consecutive": Consecutive, "pause": Pause, "burst": Burst}
_LOCATION_KINDS = {
    "sequential": Sequential,
    "random": Random,
    "ordered": Ordered,
    "partitioned": Partitioned,
}


@dataclass(frozen=True)
class IORequest:
    """One scheduled IO.

    earliest_submit_us is an offset from run start and a lower bound:
    completion-driven timing adds measured response times at execution.
    """

    index: int
    earliest_submit_us: int
    lba: int
    size: int
    mode: Mode


@dataclass(frozen=True)
class PatternSpec:
    """A fully parameterized IO pattern."""

    timing: Timing
    location: Location
    mode: Mode
    io_size: int
    io_shift: int
    target_offset: int
    target_size: int
    io_count: int
    io_ignore: int
    seed: int

    def __post_init__(self):
        if self.io_size < SECTOR or self.io_size % SECTOR:
            raise PatternError(f"io_size must be a positive multiple of {SECTOR}: {self.io_size}")
        if self.io_shift % SECTOR or not 0 <= self.io_shift < self.io_size:
            raise PatternError(f"io_shift must be a {SECTOR}-multiple in [0, io_size): {self.io_shift}")
        if self.target_size < self.io_size:
            raise PatternError("target_size smaller than io_size")
        if self.target_offset < 0 or self.target_offset % SECTOR:
            raise PatternError(f"target_offset must be a non-negative {SECTOR}-multiple")
        if self.io_count < 1:
            raise PatternError("io_count must be >= 1")
        if not 0 <= self.io_ignore < self.io_count:
            raise PatternError("io_ignore must be < io_count")
        if isinstance(self.timing, Pause) and self.timing.pause_us < 0:
            raise PatternError("pause_us must be >= 0")
        if isinstance(self.timing, Burst):
            if self.timing.pause_us < 0 or self.timing.burst_count < 1:
                raise PatternError("burst requires pause_us >= 0 and burst_count >= 1")
        if isinstance(self.location, Partitioned):
            p = self.location.partitions
            if p < 1:
                raise PatternError("partitions must be >= 1")
            if self.target_size % p:
                raise PatternError("target_size must be divisible by partitions")
            if self.target_size // p < self.io_size:
                raise PatternError("partition size smaller than io_size")

    @property
    def slots(self) -> int:
        """Number of whole-io_size slots in the target space."""
        return self.target_size // self.io_size

    def to_dict(self) -> dict:
        d = {
            "timing": _variant_to_dict(self.timing),
            "location": _variant_to_dict(self.location),
            "mode": self.mode.value,
            "io_size": self.io_size,
            "io_shift": self.io_shift,
            "target_offset": self.target_offset,
            "target_size": self.target_size,
            "io_count": self.io_count,
            "io_ignore": self.io_ignore,
            "seed": self.seed,
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PatternSpec":
        return cls(
            timing=_variant_from_dict(d["timing"], _TIMING_KINDS),
            location=_variant_from_dict(d["location"], _LOCATION_KINDS),
            mode=Mode(d["mode"]),
            io_size=d["io_size"],
            io_shift=d["io_shift"],
            target_offset=d["target_offset"],
            target_size=d["target_size"],
            io_count=d["io_count"],
            io_ignore=d["io_ignore"],
            seed=d["seed"],
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PatternSpec":
        return cls.from_dict(json.loads(text))


def _variant_to_dict(v) -> dict:
    d = {"kind": v.kind}
    for name in getattr(v, "__dataclass_fields__", {}):
        d[name] = getattr(v, name)
    return d


def _variant_from_dict(d: dict, table: dict):
    cls = table.get(d.get("kind"))
    if cls is None:
        raise PatternError(f"unknown kind: {d.get('kind')!r}")
    args = {k: v for k, v in d.items() if k != "kind"}
    return cls(**args)


@dataclass(frozen=True)
class MixSpec:
    """Two baseline patterns interleaved at a fixed ratio.

    ratio IOs of `first` are issued for every one IO of `second`.
    Target spaces of the two components must not overlap.
    """

    first: PatternSpec
    second: PatternSpec
    ratio: int

    def __post_init__(self):
        if self.ratio < 1:
            raise PatternError("mix ratio must be >= 1")
        for sub in (self.first, self.second):
            if not isinstance(sub.timing, Consecutive):
                raise PatternError("mix components must use consecutive timing")
            if not isinstance(sub.location, (Sequential, Random)):
                raise PatternError("mix components must be baseline patterns")
        if _ranges_overlap(
            (self.first.target_offset, self.first.target_size),
            (self.second.target_offset, self.second.target_size),
        ):
            raise PatternError("mix component target spaces overlap")

    def to_dict(self) -> dict:
        return {
            "first": self.first.to_dict(),
            "second": self.second.to_dict(),
            "ratio": self.ratio,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MixSpec":
        return cls(
            first=PatternSpec.from_dict(d["first"]),
            second=PatternSpec.from_dict(d["second"]),
            ratio=d["ratio"],
        )


@dataclass(frozen=True)
class ParallelSpec:
    """A baseline pattern replicated over disjoint slices of its target."""

    base: PatternSpec
    parallel_degree: int

    def __post_init__(self):
        if self.parallel_degree < 1:
            raise PatternError("parallel_degree must be >= 1")
        if self.base.target_size % self.parallel_degree:
            raise PatternError("target_size must be divisible by parallel_degree")
        if self.base.target_size // self.parallel_degree < self.base.io_size:
            raise PatternError("per-worker slice smaller than io_size")

    def to_dict(self) -> dict:
        return {"base": self.base.to_dict(), "parallel_degree": self.parallel_degree}

    @classmethod
    def from_dict(cls, d: dict) -> "ParallelSpec":
        return cls(base=PatternSpec.from_dict(d["base"]), parallel_degree=d["parallel_degree"])


def _ranges_overlap(a: tuple[int, int], b: tuple[int, int]) -> bool:
    (ao, asz), (bo, bsz) = a, b
    return ao < bo + bsz and bo < ao + asz


def lba_at(spec: PatternSpec, i: int) -> int:
    """Address of the i-th IO of a pattern.

    Slot offsets are computed relative to target_offset and quantized to
    io_size; io_shift is added last.  Sequential wraps modulo the target
    space.  Ordered with a positive increment does not wrap (walking out
    of the target space is an error naming the offending index); with a
    negative increment it counts downward from the top of the space.
    """
    loc = spec.location
    if isinstance(loc, Sequential):
        off = (i % spec.slots) * spec.io_size
    elif isinstance(loc, Random):
        off = uniform_index(spec.seed, i, spec.slots) * spec.io_size
    elif isinstance(loc, Ordered):
        if loc.incr >= 0:
            off = loc.incr * i * spec.io_size
            if off + spec.io_size > spec.target_size:
                raise ScheduleError(
                    f"ordered pattern leaves target space at IO {i} "
                    f"(incr={loc.incr}, offset {off})",
                    index=i,
                )
        else:
            off = (spec.target_size - spec.io_size) + loc.incr * i * spec.io_size
            if off < 0:
                raise ScheduleError(
                    f"ordered pattern leaves target space at IO {i} "
                    f"(incr={loc.incr}, offset {off})",
                    index=i,
                )
    elif isinstance(loc, Partitioned):
        ps = spec.target_size // loc.partitions
        slots_per_partition = ps // spec.io_size
        p = i % loc.partitions
        o = ((i // loc.partitions) % slots_per_partition) * spec.io_size
        off = p * ps + o
    else:  # pragma: no cover - exhaustive over Location
        raise PatternError(f"unknown location function: {loc!r}")
    return spec.target_offset + off + spec.io_shift


def next_submit_time(spec: PatternSpec, i: int, prev_submit_us: int, prev_rt_us: int) -> int:
    """Submission time of IO i given the previous IO's submit time and rt.

    Consecutive chains completions; pause adds a fixed gap after every
    IO; burst adds the gap only at group boundaries (every burst_count
    IOs), so burst(p, 1) degenerates to pause(p) and a zero-pause burst
    to consecutive.
    """
    if i < 1:
        raise ValueError("next_submit_time is defined for i >= 1")
    base = prev_submit_us + prev_rt_us
    t = spec.timing
    if isinstance(t, Consecutive):
        return base
    if isinstance(t, Pause):
        return base + t.pause_us
    if isinstance(t, Burst):
        return base + (t.pause_us if i % t.burst_count == 0 else 0)
    raise PatternError(f"unknown timing function: {t!r}")  # pragma: no cover


def scheduled_gap_before(spec: PatternSpec, i: int) -> int:
    """Pause the runner must insert between completion of IO i-1 and submission of IO i."""
    t = spec.timing
    if isinstance(t, Pause):
        return t.pause_us
    if isinstance(t, Burst) and i >= 1 and i % t.burst_count == 0:
        return t.pause_us
    return 0


def generate_schedule(spec: PatternSpec) -> list[IORequest]:
    """Expand a pattern spec into its full, deterministic IO schedule."""
    out = []
    submit = 0
    for i in range(spec.io_count):
        if i >= 1:
            submit += scheduled_gap_before(spec, i)
        out.append(
            IORequest(
                index=i,
                earliest_submit_us=submit,
                lba=lba_at(spec, i),
                size=spec.io_size,
                mode=spec.mode,
            )
        )
    return out


def interleave_mix(mix: MixSpec) -> list[IORequest]:
    """Deterministic round-robin interleaving of two baseline patterns.

    ratio IOs from `first`, then one from `second`, repeating; each
    component advances its own index.  The merged sequence stops as soon
    as the component whose turn it is has been exhausted.
    """
    out = []
    i_first = 0
    i_second = 0
    index = 0

    def emit(sub: PatternSpec, sub_i: int) -> IORequest:
        return IORequest(
            index=index,
            earliest_submit_us=0,
            lba=lba_at(sub, sub_i),
            size=sub.io_size,
            mode=sub.mode,
        )

    while True:
        for _ in range(mix.ratio):
            if i_first >= mix.first.io_count:
                return out
            out.append(emit(mix.first, i_first))
            i_first += 1
            index += 1
        if i_second >= mix.second.io_count:
            return out
        out.append(emit(mix.second, i_second))
        i_second += 1
        index += 1


def split_parallel(par: ParallelSpec) -> list[PatternSpec]:
    """Derive one per-worker spec per degree over disjoint target slices.

    Worker p gets the p-th slice of the base target, io_count split
    evenly (floor), and an independent derived seed.
    """
    base = par.base
    degree = par.parallel_degree
    slice_size = base.target_size // degree
    io_count = max(1, base.io_count // degree)
    io_ignore = min(base.io_ignore // degree, io_count - 1)
    out = []
    for p in range(degree):
        out.append(
            replace(
                base,
                target_offset=base.target_offset + p * slice_size,
                target_size=slice_size,
                io_count=io_count,
                io_ignore=io_ignore,
                seed=derive_seed(base.seed, p + 1),
            )
        )
    return out


SCHEDULE_CSV_HEADER = ["index", "earliest_submit_us", "lba", "size", "mode"]


def write_schedule_csv(schedule: Iterable[IORequest], fp: IO[str]) -> None:
    w = csv.writer(fp, lineterminator="\n")
    w.writerow(SCHEDULE_CSV_HEADER)
    for r in schedule:
        w.writerow([r.index, r.earliest_submit_us, r.lba, r.size, r.mode.value])


def read_schedule_csv(fp: IO[str]) -> list[IORequest]:
    rd = csv.reader(fp)
    header = next(rd)
    if header != SCHEDULE_CSV_HEADER:
        raise ValueError(f"unexpected schedule header: {header}")
    return [
        IORequest(
            index=int(row[0]),
            earliest_submit_us=int(row[1]),
            lba=int(row[2]),
            size=int(row[3]),
            mode=Mode(row[4]),
        )
        for row in rd
    ]
