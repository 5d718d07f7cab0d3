"""Independent oracles shared by the unit and acceptance suites.

These deliberately re-derive expected values by different routes than
the implementation: the partitioned walk is materialized round-robin,
sequential/ordered addresses come from plain slot arithmetic.  They must
never import address logic from flashmark.patterns beyond the uniform
draw primitive (which defines the random location function itself).
"""

from flashmark.patterns import (
    Ordered,
    Partitioned,
    PatternSpec,
    Random,
    Sequential,
    uniform_index,
)


def oracle_lba(spec: PatternSpec, i: int) -> int:
    base = spec.target_offset + spec.io_shift
    n_slots = spec.target_size // spec.io_size
    loc = spec.location
    if isinstance(loc, Sequential):
        return base + (i * spec.io_size) % (n_slots * spec.io_size)
    if isinstance(loc, Random):
        return base + uniform_index(spec.seed, i, n_slots) * spec.io_size
    if isinstance(loc, Ordered):
        if loc.incr >= 0:
            return base + loc.incr * i * spec.io_size
        top = spec.target_size - spec.io_size
        return base + top + loc.incr * i * spec.io_size
    if isinstance(loc, Partitioned):
        ps = spec.target_size // loc.partitions
        walk = []
        round_no = 0
        while len(walk) <= i:
            for p in range(loc.partitions):
                inner = (round_no * spec.io_size) % ps
                walk.append(p * ps + inner)
            round_no += 1
        return base + walk[i]
    raise AssertionError(loc)
