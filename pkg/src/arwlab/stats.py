"""Empirical distributions, one-sided dominance tests and tail-rate fits."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.special import gammaln, logsumexp
from scipy.stats import norm

NOT_REJECTED = "dominates-not-rejected"
REJECTED = "rejected"
INCONCLUSIVE = "inconclusive"

FAILURES = "failures"   # geometric support {0, 1, ...}
TRIALS = "trials"       # geometric support {1, 2, ...}


class EmptySample(ValueError):
    pass


class EmpiricalDist:
    """Sorted integer sample with its right-continuous ECDF."""

    __slots__ = ("values",)

    def __init__(self, samples):
        v = np.sort(np.asarray(samples, dtype=np.int64).ravel())
        v.setflags(write=False)
        self.values = v

    @property
    def n_samples(self) -> int:
        return int(self.values.size)

    def __len__(self) -> int:
        return self.n_samples

    def _need(self):
        if self.values.size == 0:
            raise EmptySample("empirical distribution has no samples")

    def cdf(self, t):
        """Fraction of samples ``<= t`` (vectorized over ``t``)."""
        self._need()
        return np.searchsorted(self.values, t, side="right") / self.values.size

    def mean(self) -> float:
        self._need()
        return float(self.values.mean())

    def std(self) -> float:
        self._need()
        return float(self.values.std(ddof=1)) if self.values.size > 1 else 0.0

    def prob_le(self, t) -> float:
        return float(self.cdf(t))

    def pmf(self) -> dict:
        vals, counts = np.unique(self.values, return_counts=True)
        return {int(v): c / self.values.size for v, c in zip(vals, counts)}

    def __repr__(self) -> str:
        return f"EmpiricalDist(n_samples={self.n_samples})"


def dkw_epsilon(n: int, alpha: float) -> float:
    """Half-width of a one-sided DKW band holding with probability
    ``1 - alpha / 2`` for an ECDF of ``n`` samples."""
    return math.sqrt(math.log(2.0 / alpha) / (2.0 * n))


@dataclass(frozen=True)
class DominanceResult:
    verdict: str
    max_gap: float
    band: float
    alpha: float

    @property
    def rejected(self) -> bool:
        return self.verdict == REJECTED


def ecdf_dominates(a: EmpiricalDist, b: EmpiricalDist, alpha: float = 0.01) -> DominanceResult:
    """Test ``H0: F_a <= F_b`` everywhere (``a`` stochastically dominates ``b``).

    The statistic is ``max_t F_a(t) - F_b(t)`` over all sample points (which
    is exhaustive for step functions).  Each ECDF gets a one-sided DKW band at
    level ``alpha / 2``; H0 is rejected when the gap exceeds their sum.  A
    positive gap that no band below 1 can judge is reported as inconclusive.
    """
    a._need()
    b._need()
    grid = np.union1d(a.values, b.values)
    gap = float(max(0.0, np.max(a.cdf(grid) - b.cdf(grid))))
    band = dkw_epsilon(a.n_samples, alpha) + dkw_epsilon(b.n_samples, alpha)
    if gap <= 0.0:
        verdict = NOT_REJECTED
    elif band >= 1.0:
        verdict = INCONCLUSIVE
    elif gap > band:
        verdict = REJECTED
    else:
        verdict = NOT_REJECTED
    return DominanceResult(verdict, gap, band, alpha)


def convolve_independent(a: EmpiricalDist, b: EmpiricalDist, pair_seed: int = 0,
                         size: int | None = None) -> EmpiricalDist:
    """Sums of randomly paired samples of ``a`` and ``b``.

    Both samples are shuffled with a generator seeded by ``pair_seed`` and
    the first ``size`` (default ``min(|a|, |b|)``) entries are added.
    """
    a._need()
    b._need()
    size = min(a.n_samples, b.n_samples) if size is None else size
    if size > min(a.n_samples, b.n_samples):
        raise ValueError("size exceeds the smaller sample")
    rng = np.random.default_rng(pair_seed)
    pa = rng.permutation(a.values)[:size]
    pb = rng.permutation(b.values)[:size]
    return EmpiricalDist(pa + pb)


@dataclass
class RhoStarEstimate:
    estimate: float
    ci_lo: float
    ci_hi: float
    argmax_n: int
    curve: dict = field(default_factory=dict)  # n -> mean / n


def estimate_rho_star(dists: Mapping[int, EmpiricalDist], level: float = 0.99,
                      n_boot: int = 1000, seed: int = 0) -> RhoStarEstimate:
    """``sup_n mean(X_n) / n`` with a percentile bootstrap interval."""
    if not dists:
        raise EmptySample("no distributions given")
    ns = sorted(dists)
    curve = {n: dists[n].mean() / n for n in ns}
    best = max(ns, key=lambda n: curve[n])
    rng = np.random.default_rng(seed)
    boot = np.full(n_boot, -np.inf)
    for n in ns:
        v = dists[n].values
        idx = rng.integers(0, v.size, size=(n_boot, v.size))
        boot = np.maximum(boot, v[idx].mean(axis=1) / n)
    lo, hi = np.quantile(boot, [(1 - level) / 2, (1 + level) / 2])
    return RhoStarEstimate(curve[best], float(lo), float(hi), best, curve)


@dataclass
class TailRateReport:
    n: int
    theta: np.ndarray
    lambda_hat: np.ndarray        # raw plug-in estimate
    lambda_iso: np.ndarray        # after the isotonic (running maximum) step
    rho: np.ndarray
    tail_rate: np.ndarray         # -(1/n) ln P(X <= rho n), inf when empty
    chernoff: np.ndarray          # [i_theta, i_rho]: tail_rate >= Lambda - theta rho

    def chernoff_holds(self) -> bool:
        return bool(self.chernoff.all())


def tail_rate(dist: EmpiricalDist, n: int, theta_grid: Sequence[float],
              rho_grid: Sequence[float], tol: float = 1e-9) -> TailRateReport:
    """Normalized log moment-generating function of ``-X`` and lower-tail
    rates of the sample, with the pointwise Chernoff comparison."""
    dist._need()
    x = dist.values.astype(float)
    theta = np.asarray(theta_grid, dtype=float)
    rho = np.asarray(rho_grid, dtype=float)
    if np.any(theta < 0):
        raise ValueError("theta must be non-negative")
    log_mean = logsumexp(-np.outer(theta, x), axis=1) - math.log(x.size)
    lam = -log_mean / n
    lam_iso = np.maximum.accumulate(lam)
    p = dist.cdf(np.floor(rho * n + 1e-9))
    with np.errstate(divide="ignore"):
        rate = np.where(p > 0, -np.log(np.where(p > 0, p, 1.0)) / n, np.inf)
    bound = lam[:, None] - theta[:, None] * rho[None, :]
    chern = rate[None, :] >= bound - tol
    return TailRateReport(n, theta, lam, lam_iso, rho, rate, chern)


def geometric_sum_cdf(i: int, j: int, lam: float, convention: str = FAILURES) -> float:
    """``P(G_1 + ... + G_i <= j)`` for i.i.d. geometric variables with
    success probability ``q = lam / (1 + lam)``.

    With the default failures convention ``P(G = g) = q (1 - q)^g`` for
    ``g >= 0`` and the sum is negative binomial; the trials convention shifts
    every variable by one.  Terms are summed in log space.
    """
    if i < 0 or j < 0:
        raise ValueError("i and j must be non-negative")
    if not lam > 0:
        raise ValueError("lambda must be positive")
    if convention not in (FAILURES, TRIALS):
        raise ValueError(f"unknown geometric convention {convention!r}")
    if i == 0:
        return 1.0
    if convention == TRIALS:
        j -= i
        if j < 0:
            return 0.0
    q = lam / (1.0 + lam)
    k = np.arange(j + 1, dtype=float)
    logpmf = (gammaln(k + i) - gammaln(i) - gammaln(k + 1)
              + i * math.log(q) + k * math.log1p(-q))
    return float(min(1.0, math.exp(logsumexp(logpmf))))


def total_variation(p: Mapping, q: Mapping) -> float:
    """Total variation distance between two finite distributions (dicts)."""
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)


def mean_ci(values, level: float = 0.99) -> tuple[float, float, float]:
    """Mean with a normal-approximation confidence interval."""
    v = np.asarray(values, dtype=float)
    m = float(v.mean())
    if v.size < 2:
        return m, m, m
    z = float(norm.ppf((1 + level) / 2))
    half = z * float(v.std(ddof=1)) / math.sqrt(v.size)
    return m, m - half, m + half
