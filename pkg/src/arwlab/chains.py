"""Driven-dissipative chain, exact sampling, hockey trajectories and the
couplings built on a shared instruction tape."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .lattice import LEGAL, Configuration, FuelExhausted, SegmentSpec, topple
from .stabilizer import (
    DEFAULT_FUEL, Leftmost, Rightmost, StabilizationReport, _relax_reference, _Run,
    force_walk_out, stabilize, stabilize_point_source,
)
from .tape import (
    STREAM_DRIVE, EjectorOverlay, Instruction, derive_stream_seed, kernel_args, seed_uniform,
)


def drive_seed_of(tape) -> int:
    """Seed of the driving stream (uniform sites of added particles)."""
    seed = getattr(tape, "master_seed", None)
    if seed is None:
        seed = tape.base.master_seed
    return derive_stream_seed(seed, STREAM_DRIVE)


def drive_site(drive_seed: int, n: int, t: int) -> int:
    """Site in ``{1..n}`` receiving the particle added at step ``t >= 1``."""
    return 1 + int(seed_uniform(drive_seed, t, 1) * n)


# -- driven-dissipative chain -------------------------------------------------------

@dataclass
class ChainState:
    n: int
    config: Configuration = field(default_factory=Configuration.empty)
    odometer: Counter = field(default_factory=Counter)
    t: int = 0

    @property
    def region(self) -> SegmentSpec:
        return SegmentSpec.of_length(self.n)

    def particles(self) -> int:
        return self.config.total()

    def code(self) -> int:
        """Bitmask of sleeping sites (bit ``x - 1`` for site ``x``)."""
        return sum(1 << (x - 1) for x in self.config.sleeping_sites())


def dd_step(state: ChainState, tape, fuel: int = DEFAULT_FUEL,
            drive_seed: Optional[int] = None) -> ChainState:
    """One step of the chain: add an active particle at a uniform site of
    ``V_n`` and stabilize with killing, continuing the tape from the current
    odometer.  Returns a new state; ``state`` is left untouched."""
    if drive_seed is None:
        drive_seed = drive_seed_of(tape)
    t = state.t + 1
    config = state.config.copy()
    config.add_active(drive_site(drive_seed, state.n, t))
    odo = Counter(state.odometer)
    rep = stabilize(config, state.region, tape, Leftmost(), fuel, odometer=odo, copy=False)
    return ChainState(state.n, rep.final, rep.odometer, t)


def _state_arrays(state: ChainState):
    n = state.n
    st = np.zeros(n + 3, np.int64)
    odo = np.zeros(n + 3, np.int64)
    for x in state.config.occupied():
        st[x] = -1 if state.config.is_asleep(x) else state.config.count(x)
    for x, h in state.odometer.items():
        if 1 <= x <= n:
            odo[x] = h
    return st, odo


def run_chain(state: ChainState, steps: int, tape, fuel: int = DEFAULT_FUEL,
              record_codes: bool = False):
    """Advance the chain ``steps`` steps.

    Returns ``(new_state, counts, codes)`` where ``counts[i]`` is the number of
    particles after step ``state.t + i + 1`` and ``codes`` the sleeping-site
    bitmasks (empty unless ``record_codes``; requires ``n <= 62``).
    """
    if record_codes and state.n > 62:
        raise ValueError("state codes need n <= 62")
    args = kernel_args(tape)
    if args is None or args[4] != 0:
        counts, codes = [], []
        cur = state
        for _ in range(steps):
            cur = dd_step(cur, tape, fuel)
            counts.append(cur.particles())
            if record_codes:
                codes.append(cur.code())
        return cur, np.array(counts, np.int64), np.array(codes, np.int64)
    seed, ts, tl, _, _ = args
    st, odo = _state_arrays(state)
    ys, codes, used, exhausted = _kernels.dd_run(
        st, odo, np.uint64(seed), np.uint64(drive_seed_of(tape)), ts, tl,
        state.t, steps, fuel, record_codes)
    config = Configuration.empty()
    sleeping = []
    odometer = Counter()
    for x in range(1, state.n + 1):
        v = int(st[x])
        if v:
            config.add_active(x, abs(v))
            if v < 0:
                sleeping.append(x)
        if odo[x]:
            odometer[x] = int(odo[x])
    for x in sleeping:
        config.fall_asleep(x)
    new = ChainState(state.n, config, odometer, state.t + len(ys))
    if exhausted:
        raise FuelExhausted(f"chain step exceeded {fuel} topplings", new)
    return new, ys, codes


def sample_stationary(n: int, tape, fuel: int = DEFAULT_FUEL) -> int:
    """One sample of ``S_n``: sleepers left by stabilizing one active
    particle per site of ``V_n`` with killing at both ends."""
    if n < 1:
        raise ValueError("n must be a positive integer")
    region = SegmentSpec.of_length(n)
    return stabilize(Configuration.ones(region), region, tape, fuel=fuel,
                     copy=False).sleepers_remaining


@dataclass
class HockeyTrajectory:
    n: int
    values: np.ndarray  # Y_0, Y_1, ..., Y_T

    def at_density(self, rho: float) -> int:
        """``Y_t`` at ``t = ceil(rho * n)``."""
        return int(self.values[int(np.ceil(rho * self.n - 1e-9))])


def hockey_run(n: int, T: int, tape, fuel: int = DEFAULT_FUEL) -> HockeyTrajectory:
    """Particle counts of the chain started empty, for ``t = 0 .. T``."""
    if T < 0:
        raise ValueError("T must be non-negative")
    _, ys, _ = run_chain(ChainState(n), T, tape, fuel)
    return HockeyTrajectory(n, np.concatenate([[0], ys]).astype(np.int64))


def dropped_configuration(n: int, t: int, drive_seed: int) -> Configuration:
    """The first ``t`` driven particles, all placed at once."""
    cfg = Configuration(1, max(n, 1))
    for s in range(1, t + 1):
        cfg.add_active(drive_site(drive_seed, n, s))
    return cfg


# -- ejector seat ------------------------------------------------------------

class OverlayTooShallow(RuntimeError):
    """The overlay depth did not exceed the base odometer at the pivot."""


@dataclass
class EjectorCouplingResult:
    n: int
    m: int
    S_V: int
    S_L: int
    S_R: int
    N: dict          # k -> N_k for the computed depths
    K: int
    base_odometer0: int
    shallow: bool = False

    def identity_one(self) -> bool:
        return self.N[1] == self.S_L + self.S_R

    def identity_deep(self) -> Optional[bool]:
        """``N_K == S_V`` when ``K`` exceeds the base odometer, else None."""
        if self.K <= self.base_odometer0:
            return None
        return self.N[self.K] == self.S_V


def ejector_coupling(n: int, m: int, tape, K: Optional[int] = None,
                     fuel: int = DEFAULT_FUEL, ks: Optional[Sequence[int]] = None,
                     strict: bool = False, engine: str = "auto") -> EjectorCouplingResult:
    """``S_V``, ``S_L``, ``S_R`` and ``N_k`` on one shared tape.

    ``V = {-n..m}`` with pivot 0, ``L = {-n..-1}`` and ``R = {1..m}``.
    ``K`` defaults to the base odometer at 0 plus one.  ``N_k`` is computed
    for ``k`` in ``ks`` (default: 1 and ``K``).  With ``strict`` an overlay
    that is too shallow raises :class:`OverlayTooShallow`; otherwise the
    result is flagged.
    """
    if n < 1 or m < 1:
        raise ValueError("n and m must be positive")
    V, L, R = SegmentSpec(-n, m), SegmentSpec(-n, -1), SegmentSpec(1, m)

    def run(region, t):
        return stabilize(Configuration.ones(region), region, t, fuel=fuel,
                         engine=engine, copy=False)

    base = run(V, tape)
    h0 = base.odometer[0]
    if K is None:
        K = h0 + 1
    if K < 1:
        raise ValueError("K must be a positive integer")
    shallow = K <= h0
    if shallow and strict:
        raise OverlayTooShallow(f"K = {K} does not exceed the odometer {h0} at 0")
    wanted = sorted(set(ks) | {1, K}) if ks is not None else sorted({1, K})
    N = {k: run(V, EjectorOverlay(tape, 0, k)).sleepers_remaining for k in wanted}
    return EjectorCouplingResult(n, m, base.sleepers_remaining, run(L, tape).sleepers_remaining,
                                 run(R, tape).sleepers_remaining, N, K, h0, shallow)


@dataclass
class StepOneResult:
    config: Configuration
    odometer: Counter
    reached_k: bool
    topplings: int


def ejector_step_one(n: int, m: int, k: int, tape, priority: str = "left",
                     fuel: int = DEFAULT_FUEL) -> StepOneResult:
    """First step of the staged stabilization of ``1_V`` with the overlay
    ``tau_k``: topple the leftmost (or rightmost) unstable site until ``k``
    instructions have been used at 0 or ``V`` is stable.  Reaching ``k``
    instructions is reported even if ``V`` became stable on the same
    toppling."""
    V = SegmentSpec(-n, m)
    chooser = Leftmost() if priority == "left" else Rightmost()
    run = _Run(Configuration.ones(V), V, EjectorOverlay(tape, 0, k))
    if not _relax_reference(run, chooser, fuel, lambda r: r.odometer[0] >= k):
        raise FuelExhausted(f"step one exceeded {fuel} topplings", run.report(True))
    return StepOneResult(run.config, run.odometer, run.odometer[0] >= k, run.topplings)


# -- domination of Y_t by S_n ------------------------------------------------------

@dataclass
class DominationPair:
    Y: int     # Y_t on this tape
    S: int     # stabilization of 1_V on the tape left after phase A (an S_n sample)
    C: int     # same as S but forcing the surplus of 1_V over xi out first


def hockey_domination_pair(n: int, t: int, tape, fuel: int = DEFAULT_FUEL,
                           drive_seed: Optional[int] = None) -> DominationPair:
    """Couple ``Y_t`` with ``S_n`` on one tape.

    Phase A topples sites with two or more particles of the dropped
    configuration until every site holds at most one (active) particle,
    leaving ``xi``.  Then ``Y`` stabilizes ``xi``, ``S`` stabilizes ``1_V``
    and ``C`` first walks the particles of ``1_V`` standing where ``xi`` is
    empty out of ``V`` with acceptable topplings and then stabilizes the rest,
    all three continuing the odometer of phase A.  ``C`` has the law of
    ``Y_t`` and ``C <= S`` on every tape.
    """
    if drive_seed is None:
        drive_seed = drive_seed_of(tape)
    V = SegmentSpec.of_length(n)
    cfg = dropped_configuration(n, t, drive_seed)
    odo = Counter()
    multi = {x for x in V if cfg.count(x) >= 2}
    used = 0
    while multi:
        if used >= fuel:
            raise FuelExhausted(f"phase A exceeded {fuel} topplings")
        x = min(multi)
        ev = topple(cfg, odo, tape, x, LEGAL, V)
        used += 1
        if cfg.count(x) < 2:
            multi.discard(x)
        if ev.exit is None and ev.target is not None and cfg.count(ev.target) >= 2:
            multi.add(ev.target)
    xi = cfg
    Y = stabilize(xi, V, tape, odometer=Counter(odo), fuel=fuel).sleepers_remaining
    S = stabilize(Configuration.ones(V), V, tape, odometer=Counter(odo), fuel=fuel).sleepers_remaining
    ones = Configuration.ones(V)
    odo_c = Counter(odo)
    for x in V:
        if xi.count(x) == 0:
            force_walk_out(ones, x, V, tape, odo_c, fuel)
    C = stabilize(ones, V, tape, odometer=odo_c, fuel=fuel, copy=False).sleepers_remaining
    return DominationPair(Y, S, C)


# -- outer bound: spreading to holes -------------------------------------------------

def is_hole(hole_seed: int, x: int, density: float) -> bool:
    return seed_uniform(hole_seed, x) < density


@dataclass
class SpreadResult:
    interval: SegmentSpec
    config: Configuration
    odometer: Counter
    topplings: int


def spread_to_holes(k: int, hole_density: float, hole_seed: int, tape,
                    fuel: int = DEFAULT_FUEL) -> SpreadResult:
    """Walk ``k`` particles from 0, one after the other, each until it stands
    on a hole not yet taken, using acceptable topplings (a sleep instruction
    is consumed as a toppling that leaves the walker in place).  Holes are
    i.i.d. Bernoulli(``hole_density``) from ``hole_seed``.

    Returns the visited interval ``I``, the parked configuration (one active
    particle per hole of ``I``) and the odometer of the walks.
    """
    if k < 1:
        raise ValueError("k must be a positive integer")
    if not 0 < hole_density < 1:
        raise ValueError("hole_density must lie in (0, 1)")
    parked = Configuration.empty()
    odo = Counter()
    taken = set()
    lo = hi = 0
    used = 0
    for _ in range(k):
        x = 0
        while not (x not in taken and is_hole(hole_seed, x, hole_density)):
            if used >= fuel:
                raise FuelExhausted(f"spreading exceeded {fuel} topplings")
            j = odo[x] + 1
            odo[x] = j
            used += 1
            ins = tape.instruction_at(x, j)
            if ins == Instruction.LEFT:
                x -= 1
            elif ins == Instruction.RIGHT:
                x += 1
            lo, hi = min(lo, x), max(hi, x)
        taken.add(x)
        parked.add_active(x)
    return SpreadResult(SegmentSpec(lo, hi), parked, odo, used)


def outer_bound_sets(k: int, hole_density: float, hole_seed: int, tape,
                     fuel: int = DEFAULT_FUEL):
    """``(A_k, B_k)`` on one tape, where ``B_k`` is the visited interval of
    the spreading united with the sites visited when the parked particles
    are then stabilized (continuing the same odometer)."""
    a = stabilize_point_source(k, tape, fuel).visited
    sp = spread_to_holes(k, hole_density, hole_seed, tape, fuel)
    rep = stabilize(sp.config, None, tape, odometer=Counter(sp.odometer), fuel=fuel)
    b = frozenset(sp.interval) | rep.visited
    return a, b
