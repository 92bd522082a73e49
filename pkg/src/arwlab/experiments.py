"""Replicated Monte Carlo experiments.

Replica ``i`` of a sample set uses the seed ``derive_replica_seed(s, i)``
where ``s`` is the set's own master (the run's master seed mixed with a
kind tag, a role and a size), so each set is reproducible on its own and
independent of the others.  Replicas are processed in fixed chunks, possibly
in a process pool, and merged by replica index: the worker count never
changes a result.
"""

from __future__ import annotations

import enum
import math
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .chains import ejector_coupling  # noqa: F401  (re-exported for convenience)
from .lattice import Configuration, SegmentSpec
from .stabilizer import DEFAULT_FUEL, Leftmost, RandomUnstable, Rightmost, stabilize
from .stats import (
    TRIALS, DominanceResult, EmpiricalDist, convolve_independent, ecdf_dominates,
    geometric_sum_cdf, mean_ci,
)
from .tape import (
    STREAM_DRIVE, STREAM_INITIAL, STREAM_PAIRING, STREAM_POLICY, InstructionTape,
    ModelParams, derive_replica_seed, derive_stream_seed,
)

ALPHA = 0.01
CHUNK = 500


class Kind(enum.Enum):
    SAMPLE_SN = 1
    HOCKEY_CURVE = 2
    BALL = 3
    SUPERADD_DOMINANCE = 4
    EJECTOR_CHECK = 5
    EXIT_FRACTION = 6
    NML_ENLARGEMENT = 7
    MONOTONICITY_CHECK = 8
    ABELIAN_CHECK = 9
    INNER_BOUND_CHECK = 10


class ConservationError(RuntimeError):
    """A replica's particle balance does not add up."""


@dataclass
class ExperimentPlan:
    kind: Kind
    params: ModelParams = field(default_factory=ModelParams)
    sizes: Sequence[int] = (100,)
    replicas: int = 1000
    master_seed: int = 0
    fuel: int = DEFAULT_FUEL
    workers: int = 1

    def __post_init__(self):
        if self.replicas < 1:
            raise ValueError("replicas must be at least 1")
        if len(self.sizes) == 0:
            raise ValueError("sizes must not be empty")
        if self.fuel < 1:
            raise ValueError("fuel must be positive")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")


# -- seeds and fan-out -----------------------------------------------------------

def set_master(master_seed: int, kind: Kind, role: int, size: int) -> int:
    """Master seed of one sample set."""
    s = derive_stream_seed(master_seed, 1000 + kind.value)
    s = derive_stream_seed(s, 2000 + role)
    return derive_stream_seed(s, 1_000_000 + size)


def replica_seeds(master: int, start: int, stop: int) -> np.ndarray:
    return np.array([derive_replica_seed(master, i) for i in range(start, stop)], np.uint64)


def stream_seeds(seeds: np.ndarray, stream: int) -> np.ndarray:
    return np.array([derive_stream_seed(int(s), stream) for s in seeds], np.uint64)


def fan_out(task, replicas: int, workers: int = 1, chunk: int = CHUNK):
    """``task(start, stop)`` over fixed chunks; row blocks joined in order."""
    bounds = [(a, min(a + chunk, replicas)) for a in range(0, replicas, chunk)]
    if workers <= 1 or len(bounds) == 1:
        parts = [task(a, b) for a, b in bounds]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(task, *zip(*bounds)))
    if isinstance(parts[0], tuple):
        return tuple(np.concatenate(p) for p in zip(*parts))
    return np.concatenate(parts)


def _thresholds(params: ModelParams):
    return params.sleep_threshold, params.left_threshold


# -- chunk tasks (top level so that they pickle) ---------------------------------

def _ones_task(n, master, ts, tl, fuel, start, stop):
    return _kernels.ones_batch(n, replica_seeds(master, start, stop), ts, tl, fuel)


def _bernoulli_task(n, rho, master, ts, tl, fuel, start, stop):
    seeds = replica_seeds(master, start, stop)
    return _kernels.bernoulli_batch(n, rho, seeds, stream_seeds(seeds, STREAM_INITIAL),
                                    ts, tl, fuel)


def _point_task(k, master, ts, tl, fuel, start, stop):
    return _kernels.point_source_batch(k, replica_seeds(master, start, stop), ts, tl, fuel)


def _hockey_task(n, steps, master, ts, tl, fuel, start, stop):
    seeds = replica_seeds(master, start, stop)
    return _kernels.hockey_batch(n, steps, seeds, stream_seeds(seeds, STREAM_DRIVE),
                                 ts, tl, fuel)


def _drop_task(n, steps, master, ts, tl, fuel, start, stop):
    seeds = replica_seeds(master, start, stop)
    return _kernels.drop_batch(n, steps, seeds, stream_seeds(seeds, STREAM_DRIVE),
                               ts, tl, fuel)


def _ejector_task(n, m, master, ts, tl, fuel, start, stop):
    return _kernels.ejector_batch(n, m, replica_seeds(master, start, stop), ts, tl, fuel)


def _config_task(init, master, ts, tl, fuel, start, stop):
    return _kernels.config_batch(init, replica_seeds(master, start, stop), ts, tl, fuel)


def _span_task(init, master, ts, tl, fuel, start, stop):
    return _kernels.free_span_batch(init, replica_seeds(master, start, stop), ts, tl, fuel)


# -- S_n --------------------------------------------------------------------------

@dataclass
class SampleSet:
    size: int
    values: np.ndarray          # by replica index; exhausted replicas removed
    index: np.ndarray           # replica index of each value
    exhausted: int = 0

    @property
    def dist(self) -> EmpiricalDist:
        return EmpiricalDist(self.values)


def sample_sn_set(n: int, params: ModelParams, replicas: int, master: int,
                  fuel: int = DEFAULT_FUEL, workers: int = 1) -> SampleSet:
    ts, tl = _thresholds(params)
    out = fan_out(partial(_ones_task, n, master, ts, tl, fuel), replicas, workers)
    ok = out[:, 5] == 0
    bad = np.nonzero(ok & (out[:, 0] + out[:, 1] + out[:, 2] != n))[0]
    if bad.size:
        raise ConservationError(f"S_{n}: particle balance broken in replica {int(bad[0])}")
    return SampleSet(n, out[ok, 0], np.nonzero(ok)[0], int((~ok).sum()))


def run_sample_sn(plan: ExperimentPlan, role: int = 0) -> dict:
    """``{n: SampleSet}`` of ``S_n`` samples for every size of the plan."""
    return {n: sample_sn_set(n, plan.params, plan.replicas,
                             set_master(plan.master_seed, Kind.SAMPLE_SN, role, n),
                             plan.fuel, plan.workers)
            for n in plan.sizes}


# -- superadditivity ------------------------------------------------------------------

@dataclass
class DominanceRow:
    n: int
    m: int
    result: DominanceResult
    mean_big: float
    mean_sum: float


def run_superadd_dominance(plan: ExperimentPlan, pairs: Sequence[tuple]) -> list:
    """Test that ``S_{n+m+1}`` dominates ``S_n + S_m'`` (independent copies)."""
    rows = []
    k = Kind.SUPERADD_DOMINANCE
    for n, m in pairs:
        a = sample_sn_set(n, plan.params, plan.replicas, set_master(plan.master_seed, k, 1, n),
                          plan.fuel, plan.workers).dist
        b = sample_sn_set(m, plan.params, plan.replicas, set_master(plan.master_seed, k, 2, m),
                          plan.fuel, plan.workers).dist
        big = sample_sn_set(n + m + 1, plan.params, plan.replicas,
                            set_master(plan.master_seed, k, 3, n + m + 1),
                            plan.fuel, plan.workers).dist
        pair_seed = derive_stream_seed(set_master(plan.master_seed, k, 4, n * 100003 + m),
                                       STREAM_PAIRING)
        conv = convolve_independent(a, b, pair_seed)
        rows.append(DominanceRow(n, m, ecdf_dominates(big, conv, ALPHA), big.mean(), conv.mean()))
    return rows


# -- hockey stick ------------------------------------------------------------------------

@dataclass
class CurveRow:
    x: float
    mean: float
    ci_lo: float
    ci_hi: float
    n_samples: int


def default_rho_grid(top: float = 2.0, step: float = 0.1) -> list:
    return [round(i * step, 10) for i in range(int(round(top / step)) + 1)]


def run_hockey(plan: ExperimentPlan, rho_grid: Optional[Sequence[float]] = None) -> dict:
    """``{n: [CurveRow]}`` with the mean of ``Y_t / n`` at ``t = ceil(rho n)``.

    A single-point grid is served by stabilizing all dropped particles at
    once, which gives the same ``Y_t`` on every tape."""
    grid = default_rho_grid() if rho_grid is None else list(rho_grid)
    ts, tl = _thresholds(plan.params)
    res = {}
    for n in plan.sizes:
        master = set_master(plan.master_seed, Kind.HOCKEY_CURVE, 0, n)
        ts_ = [int(math.ceil(r * n - 1e-9)) for r in grid]
        if len(grid) == 1:
            out = fan_out(partial(_drop_task, n, ts_[0], master, ts, tl, plan.fuel),
                          plan.replicas, plan.workers)
            ok = out[:, 3] == 0
            traj = {ts_[0]: out[ok, 0]}
        else:
            ys, flags = fan_out(partial(_hockey_task, n, max(ts_), master, ts, tl, plan.fuel),
                                plan.replicas, plan.workers)
            ys = ys[~flags]
            traj = {t: ys[:, t] for t in ts_}
        rows = []
        for r, t in zip(grid, ts_):
            v = traj[t] / n
            if np.any(traj[t] > t):
                raise ConservationError(f"Y_t exceeds t at n = {n}, t = {t}")
            m, lo, hi = mean_ci(v)
            rows.append(CurveRow(r, m, lo, hi, int(v.size)))
        res[n] = rows
    return res


def run_dd(plan: ExperimentPlan, n: int, steps: int) -> SampleSet:
    """Particle count ``Y_steps`` of the driven chain started empty, per replica."""
    ts, tl = _thresholds(plan.params)
    master = set_master(plan.master_seed, Kind.HOCKEY_CURVE, 1, n)
    out = fan_out(partial(_drop_task, n, steps, master, ts, tl, plan.fuel),
                  plan.replicas, plan.workers)
    ok = out[:, 3] == 0
    if np.any(out[ok, 0] + out[ok, 1] != steps):
        raise ConservationError("retained + exits != dropped particles")
    return SampleSet(n, out[ok, 0], np.nonzero(ok)[0], int((~ok).sum()))


# -- ball -----------------------------------------------------------------------------

@dataclass
class BallResult:
    k: int
    sizes: np.ndarray          # |A_k| per replica
    amin: np.ndarray
    amax: np.ndarray
    center: np.ndarray         # mean sleeper position per replica
    exhausted: int = 0

    @property
    def density(self) -> np.ndarray:
        return self.k / self.sizes


def ball_set(k: int, params: ModelParams, replicas: int, master: int,
             fuel: int = DEFAULT_FUEL, workers: int = 1) -> BallResult:
    ts, tl = _thresholds(params)
    out = fan_out(partial(_point_task, k, master, ts, tl, fuel), replicas, workers)
    ok = out[:, 5] == 0
    out_ok = out[ok]
    if np.any(out_ok[:, 0] < k):
        raise ConservationError(f"|A_{k}| smaller than k")
    return BallResult(k, out_ok[:, 0], out_ok[:, 1], out_ok[:, 2], out_ok[:, 3] / k,
                      int((~ok).sum()))


def run_ball(plan: ExperimentPlan) -> dict:
    """``{k: BallResult}`` for every ``k`` in ``plan.sizes``."""
    return {k: ball_set(k, plan.params, plan.replicas,
                        set_master(plan.master_seed, Kind.BALL, 0, k), plan.fuel, plan.workers)
            for k in plan.sizes}


# -- exits --------------------------------------------------------------------------------

EPS_GRID = (0.01, 0.02, 0.05, 0.1)


@dataclass
class ExitFractionResult:
    n: int
    initial_density: float
    fractions: np.ndarray       # M_n / n per replica
    mean: float
    tail: dict                  # eps -> P(M_n > eps n)


def run_exit_fraction(plan: ExperimentPlan, densities: Sequence[float] = (0.05,),
                      initial: str = "bernoulli", eps_grid: Sequence[float] = EPS_GRID) -> list:
    """Fraction of particles jumping out while stabilizing on ``V_n``.

    ``initial="bernoulli"`` draws i.i.d. Bernoulli(rho) active particles
    (one result per density); ``"ones"`` uses one active particle per site.
    """
    if initial not in ("bernoulli", "ones"):
        raise ValueError(f"unknown initial configuration {initial!r}")
    ts, tl = _thresholds(plan.params)
    results = []
    rhos = [1.0] if initial == "ones" else list(densities)
    for rho in rhos:
        if not 0.0 <= rho <= 1.0:
            raise ValueError("densities must lie in [0, 1]")
        for n in plan.sizes:
            master = set_master(plan.master_seed, Kind.EXIT_FRACTION,
                                int(round(rho * 1e6)), n)
            if initial == "ones":
                out = fan_out(partial(_ones_task, n, master, ts, tl, plan.fuel),
                              plan.replicas, plan.workers)
                ok = out[:, 5] == 0
                exits = out[ok, 1] + out[ok, 2]
                if np.any(exits != n - out[ok, 0]):
                    raise ConservationError("M_n != n - S_n")
            else:
                out = fan_out(partial(_bernoulli_task, n, rho, master, ts, tl, plan.fuel),
                              plan.replicas, plan.workers)
                ok = out[:, 4] == 0
                exits = out[ok, 1]
                if np.any(exits + out[ok, 2] != out[ok, 0]):
                    raise ConservationError("exits + sleepers != initial particles")
            frac = exits / n
            tail = {e: float(np.mean(exits > e * n)) for e in eps_grid}
            results.append(ExitFractionResult(n, rho, frac, float(frac.mean()), tail))
    return results


# -- enlargement bound ---------------------------------------------------------------------

@dataclass
class NmlRow:
    i: int
    j: int
    containment: float
    se_containment: float
    p_exits_le_i: float
    geometric_cdf: float
    bound: float
    se_bound: float

    @property
    def ok(self) -> bool:
        return self.containment >= self.bound - 3 * math.hypot(self.se_containment, self.se_bound)


def _initial_array(n: int, initial) -> np.ndarray:
    if initial is None or (isinstance(initial, str) and initial == "ones"):
        return np.ones(n, np.int64)
    arr = np.asarray(initial, np.int64)
    if arr.shape != (n,) or np.any(arr < 0):
        raise ValueError("initial must be a non-negative count per site of V_n")
    return arr


def run_nml_enlargement(plan: ExperimentPlan, i_grid: Sequence[int], j_grid: Sequence[int],
                        initial=None, convention: str = TRIALS) -> list:
    """Containment of the visited set ``A(eta)`` (stabilization on the line)
    in ``{1-2j .. n+2j}`` against ``P(M_n <= i) P(G_1 + ... + G_i <= j)``.
    Uses the first size of the plan as ``n``; ``initial`` defaults to one
    active particle per site.

    The geometric variables default to the trials convention (support
    ``{1, 2, ...}``).  With support ``{0, 1, ...}`` the bound fails already
    at ``j = 0``: containment in ``V_n`` then means no exit at all, while
    the bound ``P(M_n <= i) q^i`` exceeds ``P(M_n = 0)`` in general."""
    n = plan.sizes[0]
    init = _initial_array(n, initial)
    ts, tl = _thresholds(plan.params)
    k = Kind.NML_ENLARGEMENT
    span = fan_out(partial(_span_task, init, set_master(plan.master_seed, k, 1, n),
                           ts, tl, plan.fuel), plan.replicas, plan.workers)
    span = span[span[:, 3] == 0]
    kill = fan_out(partial(_config_task, init, set_master(plan.master_seed, k, 2, n),
                           ts, tl, plan.fuel), plan.replicas, plan.workers)
    kill = kill[kill[:, 4] == 0]
    exits = kill[:, 1] + kill[:, 2]
    rows = []
    for i in i_grid:
        pm = float(np.mean(exits <= i))
        se_m = math.sqrt(pm * (1 - pm) / exits.size)
        for j in j_grid:
            inside = (span[:, 0] >= 1 - 2 * j) & (span[:, 1] <= n + 2 * j)
            pc = float(inside.mean())
            g = geometric_sum_cdf(i, j, plan.params.lam, convention)
            rows.append(NmlRow(i, j, pc, math.sqrt(pc * (1 - pc) / inside.size), pm, g,
                               pm * g, se_m * g))
    return rows


# -- inner bound ----------------------------------------------------------------------------

@dataclass
class InnerRow:
    n: int
    k: int
    x: int
    containment: float     # P(x + A_k inside V_n)
    p_sn_ge_k: float       # P(S_n >= k)
    se: float

    @property
    def ok(self) -> bool:
        return self.containment <= self.p_sn_ge_k + 3 * self.se


def run_inner_bound(plan: ExperimentPlan, grid: Sequence[tuple]) -> list:
    """``P(x + A_k in V_n)`` against ``P(S_n >= k)`` for ``(n, k, x)`` in grid."""
    balls, sn, rows = {}, {}, []
    k_ = Kind.INNER_BOUND_CHECK
    for n, k, x in grid:
        if k not in balls:
            balls[k] = ball_set(k, plan.params, plan.replicas,
                                set_master(plan.master_seed, k_, 1, k), plan.fuel, plan.workers)
        if n not in sn:
            sn[n] = sample_sn_set(n, plan.params, plan.replicas,
                                  set_master(plan.master_seed, k_, 2, n), plan.fuel, plan.workers)
        b, s = balls[k], sn[n].values
        inside = (x + b.amin >= 1) & (x + b.amax <= n)
        pc = float(inside.mean())
        ps = float(np.mean(s >= k))
        se = math.hypot(math.sqrt(pc * (1 - pc) / inside.size), math.sqrt(ps * (1 - ps) / s.size))
        rows.append(InnerRow(n, k, x, pc, ps, se))
    return rows


# -- ejector identities ---------------------------------------------------------------------

@dataclass
class EjectorCheckRow:
    n: int
    m: int
    replicas: int
    identity_one: int        # replicas with N_1 = S_L + S_R
    deep_checked: int        # replicas where K exceeded the base odometer at 0
    identity_deep: int       # of those, replicas with N_K = S_V
    exhausted: int
    mean_sv: float
    mean_n1: float

    @property
    def ok(self) -> bool:
        live = self.replicas - self.exhausted
        return self.identity_one == live and self.identity_deep == self.deep_checked


def run_ejector_check(plan: ExperimentPlan, pairs: Sequence[tuple]) -> list:
    ts, tl = _thresholds(plan.params)
    rows = []
    for n, m in pairs:
        master = set_master(plan.master_seed, Kind.EJECTOR_CHECK, n, m)
        out = fan_out(partial(_ejector_task, n, m, master, ts, tl, plan.fuel),
                      plan.replicas, plan.workers)
        live = out[out[:, 6] == 0]
        sv, sl, sr, h0, n1, nk = (live[:, c] for c in range(6))
        # the batch uses K = h0 + 1, so every replica is a deep check
        rows.append(EjectorCheckRow(
            n, m, plan.replicas, int(np.sum(n1 == sl + sr)), int(live.shape[0]),
            int(np.sum(nk == sv)), int(plan.replicas - live.shape[0]),
            float(sv.mean()), float(n1.mean())))
    return rows


# -- exact checks on small instances ------------------------------------------------------------

LAMBDAS = (0.5, 1.0, 2.0)
PS = (0.3, 0.5, 0.7)


@dataclass
class AbelianResult:
    instances: int
    agree: int               # all three policies identical
    kernel_agree: int        # compiled engine identical to the reference
    failures: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.agree == self.instances and self.kernel_agree == self.instances


def random_instance(seed: int, max_n: int = 12, max_particles: int = 12):
    """Random ``(region, configuration, params)`` with at most ``max_n``
    sites and ``max_particles`` particles, some of them asleep."""
    rng = random.Random(seed)
    n = rng.randint(1, max_n)
    region = SegmentSpec.of_length(n)
    cfg = Configuration.empty()
    for _ in range(rng.randint(0, max_particles)):
        cfg.add_active(rng.randint(1, n))
    for x in cfg.occupied():
        if cfg.count(x) == 1 and rng.random() < 0.25:
            cfg.fall_asleep(x)
    params = ModelParams(rng.choice(LAMBDAS), rng.choice(PS))
    return region, cfg, params


def abelian_instance(master: int, i: int, fuel: int = DEFAULT_FUEL):
    """Stabilize instance ``i`` under three policies and the compiled engine.
    Returns ``(policies_agree, kernel_agrees)``."""
    seed = derive_replica_seed(master, i)
    region, cfg, params = random_instance(seed)
    tape = InstructionTape(derive_stream_seed(seed, 11), params)
    pol = RandomUnstable(derive_stream_seed(seed, STREAM_POLICY))
    reps = [stabilize(cfg, region, tape, p, fuel, engine="reference")
            for p in (Leftmost(), Rightmost(), pol)]
    for r in reps:
        if not r.conserved():
            raise ConservationError(f"abelian instance {i}: particle balance broken")
    agree = reps[0].same_outcome(reps[1]) and reps[0].same_outcome(reps[2])
    kern = stabilize(cfg, region, tape, fuel=fuel, engine="kernel")
    return agree, reps[0].same_outcome(kern)


def _abelian_task(master, fuel, start, stop):
    return np.array([abelian_instance(master, i, fuel) for i in range(start, stop)],
                    np.int64).reshape(-1, 2)


def run_abelian_check(plan: ExperimentPlan) -> AbelianResult:
    master = set_master(plan.master_seed, Kind.ABELIAN_CHECK, 0, 0)
    out = fan_out(partial(_abelian_task, master, plan.fuel), plan.replicas, plan.workers)
    fails = [int(i) for i in np.nonzero((out[:, 0] == 0) | (out[:, 1] == 0))[0]]
    return AbelianResult(plan.replicas, int(out[:, 0].sum()), int(out[:, 1].sum()), fails)


@dataclass
class MonotonicityResult:
    n: int
    x: int
    result: DominanceResult
    mean_more: float
    mean_less: float


def run_monotonicity_check(plan: ExperimentPlan, x: Optional[int] = None,
                           more=None, less=None) -> MonotonicityResult:
    """Dominance of the sleepers left by ``more`` over those left by ``less``
    on matched tapes.  Defaults: ``less = 1_{V_n}``, ``more = less + delta_x``
    with ``x`` the middle site."""
    n = plan.sizes[0]
    x = (n + 1) // 2 if x is None else x
    less = _initial_array(n, less)
    if more is None:
        more = less.copy()
        more[x - 1] += 1
    more = _initial_array(n, more)
    if np.any(more < less):
        raise ValueError("the larger configuration must dominate the smaller one sitewise")
    ts, tl = _thresholds(plan.params)
    master = set_master(plan.master_seed, Kind.MONOTONICITY_CHECK, x, n)
    a = fan_out(partial(_config_task, more, master, ts, tl, plan.fuel), plan.replicas, plan.workers)
    b = fan_out(partial(_config_task, less, master, ts, tl, plan.fuel), plan.replicas, plan.workers)
    da, db = EmpiricalDist(a[a[:, 4] == 0, 0]), EmpiricalDist(b[b[:, 4] == 0, 0])
    return MonotonicityResult(n, x, ecdf_dominates(da, db, ALPHA), da.mean(), db.mean())
