"""Stabilization of finite configurations under toppling policies.

Two engines are available.  The reference engine applies :func:`topple` one
instruction at a time and accepts any tape and any policy.  The compiled
engine (:mod:`arwlab._kernels`) handles counter-based tapes and, thanks to the
Abelian property, ignores the policy; ``engine="auto"`` picks it whenever the
outcome cannot depend on the choice.
"""

from __future__ import annotations

import random
from collections import Counter
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from . import _kernels
from .lattice import (
    ACCEPTABLE, LEGAL, Configuration, FuelExhausted, SegmentSpec, topple,
)
from .tape import kernel_args

DEFAULT_FUEL = 10**9


# -- policies -----------------------------------------------------------------

@dataclass(frozen=True)
class Leftmost:
    """Always topple the leftmost unstable site."""

    def choose(self, unstable: set) -> int:
        return min(unstable)


@dataclass(frozen=True)
class Rightmost:
    """Always topple the rightmost unstable site."""

    def choose(self, unstable: set) -> int:
        return max(unstable)


@dataclass(frozen=True)
class RandomUnstable:
    """Uniformly random unstable site, driven by its own seed (never by the
    tape), so that different seeds genuinely reorder the topplings."""

    policy_seed: int = 0

    def start(self) -> "_RandomChooser":
        return _RandomChooser(random.Random(self.policy_seed))


class _RandomChooser:
    def __init__(self, rng: random.Random):
        self.rng = rng

    def choose(self, unstable: set) -> int:
        sites = sorted(unstable)
        return sites[self.rng.randrange(len(sites))]


@dataclass(frozen=True)
class StagedLeftRight:
    """Leftmost until ``target_left`` left exits, then rightmost until
    ``target_right`` right exits, then anything (see :func:`staged_stabilize`)."""

    target_left: int = 0
    target_right: int = 0

    def __post_init__(self):
        if self.target_left < 0 or self.target_right < 0:
            raise ValueError("stage targets must be non-negative")


def _chooser(policy):
    start = getattr(policy, "start", None)
    return start() if start is not None else policy


# -- reports ------------------------------------------------------------------

@dataclass
class StabilizationReport:
    final: Configuration
    odometer: Counter
    exits_left: int = 0
    exits_right: int = 0
    exits_ejected: int = 0
    visited: frozenset = frozenset()
    sleepers_remaining: int = 0
    topplings: int = 0
    exhausted: bool = False
    initial_count: int = 0

    @property
    def exits(self) -> int:
        """Particles that jumped out of the region (ejections excluded)."""
        return self.exits_left + self.exits_right

    def conserved(self) -> bool:
        return (self.exits_left + self.exits_right + self.exits_ejected
                + self.final.total() == self.initial_count)

    def same_outcome(self, other: "StabilizationReport") -> bool:
        """Equality of everything the Abelian property fixes."""
        return (self.final == other.final
                and +self.odometer == +other.odometer
                and self.exits_left == other.exits_left
                and self.exits_right == other.exits_right
                and self.exits_ejected == other.exits_ejected
                and self.visited == other.visited)


class _Run:
    """Mutable state of one stabilization by the reference engine."""

    def __init__(self, config: Configuration, region, tape, odometer=None):
        self.config = config
        self.region = region
        self.tape = tape
        self.odometer = Counter() if odometer is None else odometer
        self.left = self.right = self.ejected = 0
        self.topplings = 0
        self.initial_count = config.total()
        self.visited = set(config.occupied())
        self.visited.update(x for x, h in self.odometer.items() if h > 0)
        self.unstable = {x for x in config.active_sites()
                         if region is None or x in region}

    def step(self, x: int, mode: str = LEGAL):
        ev = topple(self.config, self.odometer, self.tape, x, mode, self.region)
        self.topplings += 1
        self.visited.add(x)
        if not self.config.is_active(x):
            self.unstable.discard(x)
        else:
            self.unstable.add(x)
        if ev.exit == "left":
            self.left += 1
        elif ev.exit == "right":
            self.right += 1
        elif ev.exit == "ejected":
            self.ejected += 1
        elif ev.target is not None:
            self.unstable.add(ev.target)
            self.visited.add(ev.target)
        return ev

    def report(self, exhausted: bool = False, copy: bool = False) -> StabilizationReport:
        final = self.config.copy() if copy else self.config
        odo = Counter(self.odometer) if copy else self.odometer
        region = self.region
        sleepers = sum(1 for x in final.sleeping_sites() if region is None or x in region)
        return StabilizationReport(
            final=final, odometer=odo, exits_left=self.left, exits_right=self.right,
            exits_ejected=self.ejected, visited=frozenset(self.visited),
            sleepers_remaining=sleepers, topplings=self.topplings,
            exhausted=exhausted, initial_count=self.initial_count)


def _check_inside(config: Configuration, region) -> None:
    if region is None:
        return
    outside = [x for x in config.occupied() if x not in region]
    if outside:
        raise ValueError(f"initial particles outside the region at sites {outside}")


# -- reference engine ------------------------------------------------------------

def _relax_reference(run: _Run, chooser, fuel: int, stop=None) -> bool:
    """Legal topplings chosen by ``chooser`` until stable, fuel is spent
    (returns False) or ``stop(run)`` holds (checked after every toppling)."""
    while run.unstable:
        if run.topplings >= fuel:
            return False
        run.step(chooser.choose(run.unstable))
        if stop is not None and stop(run):
            break
    return True


# -- compiled engine ---------------------------------------------------------------

def _kernel_bounded(config, region, odometer, args, fuel):
    seed, ts, tl, site0, k = args
    lo, n = region.lo, len(region)
    st = np.zeros(n + 3, np.int64)
    odo = np.zeros(n + 3, np.int64)
    for x in config.occupied():
        st[x - lo + 1] = -1 if config.is_asleep(x) else config.count(x)
    for x, h in odometer.items():
        if x in region:
            odo[x - lo + 1] = h
    keys = _kernels.make_keys(np.uint64(seed), lo - 1, n + 3)
    if k > 0 and site0 in region:
        ej_cell, ej_k = site0 - lo + 1, k
    else:
        ej_cell, ej_k = -1, _kernels.NO_EJECT
    used, exhausted = _kernels.stabilize_bounded(st, odo, keys, ts, tl, ej_cell, ej_k, fuel)
    cells = range(1, n + 1)
    return (st, odo, lo - 1, cells, int(st[0]), int(st[n + 1]), int(st[n + 2]),
            int(used), bool(exhausted))


def _kernel_free(config, odometer, args, fuel):
    seed, ts, tl, _, _ = args
    sites = config.occupied() + [x for x, h in odometer.items() if h > 0]
    a, b = min(sites), max(sites)
    pad = max(8, (b - a) // 2 + config.total())
    lo = a - pad
    m = (b - a) + 2 * pad + 2
    st = np.zeros(m, np.int64)
    odo = np.zeros(m, np.int64)
    for x in config.occupied():
        st[x - lo] = -1 if config.is_asleep(x) else config.count(x)
    for x, h in odometer.items():
        odo[x - lo] = h
    st, odo, lo, used, exhausted = _kernels.stabilize_free(st, odo, lo, np.uint64(seed),
                                                        ts, tl, fuel)
    cells = range(0, st.size - 1)
    return st, odo, lo, cells, 0, 0, 0, int(used), bool(exhausted)


def _run_kernel(config, region, tape, odometer, fuel) -> StabilizationReport:
    args = kernel_args(tape)
    initial_count = config.total()
    odometer = Counter() if odometer is None else odometer
    visited = set(config.occupied())
    visited.update(x for x, h in odometer.items() if h > 0)
    if region is None:
        res = _kernel_free(config, odometer, args, fuel)
    else:
        res = _kernel_bounded(config, region, odometer, args, fuel)
    st, odo, lo, cells, left, right, ejected, used, exhausted = res
    final = Configuration.empty()
    sleeping = []
    for i in cells:
        x = lo + i
        v = int(st[i])
        if v:
            final.add_active(x, abs(v))
            if v < 0:
                sleeping.append(x)
        if odo[i] > 0:
            odometer[x] = int(odo[i])
            visited.add(x)
    for x in sleeping:
        final.fall_asleep(x)
    return StabilizationReport(
        final=final, odometer=odometer, exits_left=left, exits_right=right,
        exits_ejected=ejected, visited=frozenset(visited),
        sleepers_remaining=len(sleeping), topplings=used, exhausted=exhausted,
        initial_count=initial_count)


def _use_kernel(engine: str, tape, policy) -> bool:
    if engine == "reference":
        return False
    ok = kernel_args(tape) is not None and not isinstance(policy, StagedLeftRight)
    if engine == "kernel" and not ok:
        raise ValueError("the compiled engine needs a counter-based tape and a "
                         "non-staged policy")
    return ok


# -- public operations ----------------------------------------------------------------

def stabilize(initial: Configuration, region: Optional[SegmentSpec], tape,
              policy=Leftmost(), fuel: int = DEFAULT_FUEL,
              odometer: Optional[Counter] = None, engine: str = "auto",
              copy: bool = True) -> StabilizationReport:
    """Stabilize ``initial`` in ``region`` (``None``: the whole line).

    Particles jumping out of the region are killed.  ``odometer`` lets a run
    continue a previous one on the same tape (it is updated in place);
    ``copy=False`` also lets the run mutate ``initial``.  Raises
    :class:`FuelExhausted` carrying the partial report if more than ``fuel``
    topplings would be needed.  The compiled engine checks fuel between walk
    segments, so its partial report may contain slightly more topplings.
    """
    if isinstance(policy, StagedLeftRight):
        return staged_stabilize(initial, region, tape, policy.target_left,
                                policy.target_right, fuel, engine=engine).final
    _check_inside(initial, region)
    config = initial.copy() if copy else initial
    if config.total() == 0:
        return StabilizationReport(final=config, odometer=odometer if odometer is not None else Counter())
    if _use_kernel(engine, tape, policy):
        rep = _run_kernel(config, region, tape, odometer, fuel)
        if rep.exhausted:
            raise FuelExhausted(f"stabilization exceeded {fuel} topplings", rep)
        return rep
    run = _Run(config, region, tape, odometer)
    if not _relax_reference(run, _chooser(policy), fuel):
        raise FuelExhausted(f"stabilization exceeded {fuel} topplings", run.report(True))
    return run.report()


class StagedReports(NamedTuple):
    after_stage1: StabilizationReport
    after_stage2: StabilizationReport
    final: StabilizationReport


def staged_stabilize(initial: Configuration, region: SegmentSpec, tape, target_left: int,
                     target_right: int, fuel: int = DEFAULT_FUEL,
                     engine: str = "auto") -> StagedReports:
    """Three-stage stabilization of ``initial`` in ``region``.

    Stage 1 topples the leftmost active site until ``target_left`` particles
    have exited on the left or the region is stable.  Stage 2 topples the
    rightmost active site until ``target_right`` right exits in total or
    stability.  Stage 3 finishes in any order.  Snapshots after each stage
    are returned; the final one equals :func:`stabilize` by the Abelian
    property.
    """
    if target_left < 0 or target_right < 0:
        raise ValueError("stage targets must be non-negative")
    _check_inside(initial, region)
    run = _Run(initial.copy(), region, tape)

    def spent(stage):
        raise FuelExhausted(f"stage {stage} exceeded {fuel} topplings", run.report(True, copy=True))

    if run.left < target_left:
        if not _relax_reference(run, Leftmost(), fuel, lambda r: r.left >= target_left):
            spent(1)
    s1 = run.report(copy=True)
    if run.right < target_right:
        if not _relax_reference(run, Rightmost(), fuel, lambda r: r.right >= target_right):
            spent(2)
    s2 = run.report(copy=True)
    if _use_kernel(engine, tape, Leftmost()) and run.unstable:
        rest = _run_kernel(run.config, region, tape, run.odometer, fuel - run.topplings)
        final = StabilizationReport(
            final=rest.final, odometer=rest.odometer,
            exits_left=run.left + rest.exits_left, exits_right=run.right + rest.exits_right,
            exits_ejected=run.ejected + rest.exits_ejected,
            visited=frozenset(run.visited | rest.visited),
            sleepers_remaining=rest.sleepers_remaining,
            topplings=run.topplings + rest.topplings, exhausted=rest.exhausted,
            initial_count=run.initial_count)
        if rest.exhausted:
            raise FuelExhausted(f"stage 3 exceeded {fuel} topplings", final)
    else:
        if not _relax_reference(run, Leftmost(), fuel):
            spent(3)
        final = run.report()
    return StagedReports(s1, s2, final)


@dataclass
class WalkResult:
    config: Configuration
    exit_side: str
    odometer_delta: Counter = field(default_factory=Counter)
    topplings: int = 0


def force_walk_out(config: Configuration, site: int, region: SegmentSpec, tape,
                   odometer: Optional[Counter] = None,
                   fuel: int = DEFAULT_FUEL) -> WalkResult:
    """Move one particle from ``site`` out of ``region`` with acceptable
    topplings of the site it currently occupies.

    ``config`` and ``odometer`` are updated in place.  A sleep instruction
    consumed while the walker is alone puts it to sleep; the next acceptable
    toppling wakes it.  Particles met on the way stay where they are (a
    sleeper the walker lands on is woken).
    """
    if site not in region:
        raise ValueError(f"site {site} lies outside the region {region}")
    if config.count(site) == 0:
        raise ValueError(f"no particle at site {site}")
    odometer = Counter() if odometer is None else odometer
    delta = Counter()
    x = site
    used = 0
    while True:
        if used >= fuel:
            raise FuelExhausted(f"walk exceeded {fuel} topplings",
                                WalkResult(config, "", delta, used))
        ev = topple(config, odometer, tape, x, ACCEPTABLE, region)
        delta[x] += 1
        used += 1
        if ev.exit is not None:
            return WalkResult(config, ev.exit, delta, used)
        if ev.target is not None:
            x = ev.target


def stabilize_point_source(k: int, tape, fuel: int = DEFAULT_FUEL, site: int = 0,
                           engine: str = "auto") -> StabilizationReport:
    """``k`` active particles at ``site`` stabilized on the whole line;
    ``visited`` is the set ``A_k`` (the starting site included)."""
    if k < 1:
        raise ValueError("k must be a positive integer")
    return stabilize(Configuration.point(site, k), None, tape, Leftmost(), fuel,
                     engine=engine, copy=False)
