"""Exact laws for tiny segments, computed with rational arithmetic.

A configuration on ``{1..n}`` is a tuple with one entry per site: ``-1`` for
a sleeping particle, ``0`` for empty and ``c >= 1`` for ``c`` active ones.
Stabilization with killing is an absorbing Markov chain on these tuples
(topple the leftmost active site; the law of the outcome does not depend on
the choice).  Everything here is written independently of the package.
"""

from __future__ import annotations

from collections import defaultdict
from fractions import Fraction
from functools import lru_cache


def probs(lam: Fraction, p: Fraction):
    lam, p = Fraction(lam), Fraction(p)
    return lam / (1 + lam), p / (1 + lam), (1 - p) / (1 + lam)


def is_stable(s) -> bool:
    return all(v <= 0 for v in s)


def moves(s, lam, p):
    """Transitions ``(probability, next_state)`` of the leftmost active site."""
    ps, pl, pr = probs(lam, p)
    x = next(i for i, v in enumerate(s) if v > 0)
    c = s[x]
    out = []
    t = list(s)
    t[x] = -1 if c == 1 else c
    out.append((ps, tuple(t)))
    for prob, y in ((pl, x - 1), (pr, x + 1)):
        t = list(s)
        t[x] = c - 1
        if 0 <= y < len(s):
            t[y] = 2 if t[y] == -1 else t[y] + 1
        out.append((prob, tuple(t)))
    return out


def solve(a, b):
    """Gaussian elimination over Fractions: returns ``x`` with ``a x = b``
    (``b`` is a list of rows of right-hand sides)."""
    n = len(a)
    a = [row[:] + rhs[:] for row, rhs in zip(a, b)]
    w = len(a[0])
    for col in range(n):
        piv = next(r for r in range(col, n) if a[r][col] != 0)
        a[col], a[piv] = a[piv], a[col]
        inv = 1 / a[col][col]
        a[col] = [v * inv for v in a[col]]
        for r in range(n):
            if r != col and a[r][col] != 0:
                f = a[r][col]
                a[r] = [vr - f * vc for vr, vc in zip(a[r], a[col])]
    return [row[n:w] for row in a]


@lru_cache(maxsize=None)
def stabilization_law(start: tuple, lam=Fraction(1), p=Fraction(1, 2)) -> dict:
    """Law of the stable configuration reached from ``start``."""
    if is_stable(start):
        return {start: Fraction(1)}
    transient, absorbing, edges = [], [], {}
    seen, todo = {start}, [start]
    while todo:
        s = todo.pop()
        if is_stable(s):
            absorbing.append(s)
            continue
        transient.append(s)
        agg = defaultdict(Fraction)
        for pr, t in moves(s, lam, p):
            agg[t] += pr
        edges[s] = agg
        for t in agg:
            if t not in seen:
                seen.add(t)
                todo.append(t)
    ti = {s: i for i, s in enumerate(transient)}
    ai = {s: i for i, s in enumerate(absorbing)}
    m = len(transient)
    a = [[Fraction(int(i == j)) for j in range(m)] for i in range(m)]
    b = [[Fraction(0)] * len(absorbing) for _ in range(m)]
    for s, agg in edges.items():
        for t, pr in agg.items():
            if t in ti:
                a[ti[s]][ti[t]] -= pr
            else:
                b[ti[s]][ai[t]] += pr
    x = solve(a, b)
    row = x[ti[start]]
    return {s: row[ai[s]] for s in absorbing if row[ai[s]] != 0}


def sleepers(s) -> int:
    return sum(1 for v in s if v == -1)


def sn_law(n: int, lam=Fraction(1), p=Fraction(1, 2)) -> dict:
    """Law of the number of sleepers left by one active particle per site."""
    out = defaultdict(Fraction)
    for s, pr in stabilization_law((1,) * n, Fraction(lam), Fraction(p)).items():
        out[sleepers(s)] += pr
    return dict(out)


def stable_states(n: int) -> list:
    states = [()]
    for _ in range(n):
        states = [s + (v,) for s in states for v in (0, -1)]
    return states


def dd_stationary(n: int, lam=Fraction(1), p=Fraction(1, 2)) -> dict:
    """Stationary law of the driven chain (add a particle at a uniform site,
    stabilize with killing) on the stable configurations of ``{1..n}``."""
    lam, p = Fraction(lam), Fraction(p)
    states = stable_states(n)
    idx = {s: i for i, s in enumerate(states)}
    k = len(states)
    T = [[Fraction(0)] * k for _ in range(k)]
    for s in states:
        for x in range(n):
            t = list(s)
            t[x] = 2 if t[x] == -1 else t[x] + 1
            for f, pr in stabilization_law(tuple(t), lam, p).items():
                T[idx[s]][idx[f]] += pr / n
    # pi (T - I) = 0 with sum(pi) = 1: transpose, replace one equation
    a = [[T[j][i] - (1 if i == j else 0) for j in range(k)] for i in range(k)]
    a[-1] = [Fraction(1)] * k
    b = [[Fraction(0)] for _ in range(k)]
    b[-1] = [Fraction(1)]
    pi = solve(a, b)
    return {s: pi[idx[s]][0] for s in states}


def code(s) -> int:
    """Bitmask of sleeping sites, bit ``x - 1`` for site ``x``."""
    return sum(1 << i for i, v in enumerate(s) if v == -1)


def convolve(a: dict, b: dict) -> dict:
    out = defaultdict(Fraction)
    for x, pa in a.items():
        for y, pb in b.items():
            out[x + y] += pa * pb
    return dict(out)


def cdf(law: dict, t) -> Fraction:
    return sum((pr for v, pr in law.items() if v <= t), Fraction(0))


def point_source_law(k: int, max_width: int, lam=Fraction(1), p=Fraction(1, 2)) -> dict:
    """Law of ``|A_k|`` for ``k`` particles started at one site of the line.

    States are the configuration on the visited interval (stored from its
    left end), so the chain is finite once widths above ``max_width`` are
    lumped into the absorbing state ``None``.  Exact for every size
    ``<= max_width``; the remaining mass sits on ``None``.
    """
    lam, p = Fraction(lam), Fraction(p)
    ps, pl, pr = probs(lam, p)
    start = (k,)

    def step(s):
        x = next(i for i, v in enumerate(s) if v > 0)
        c = s[x]
        t = list(s)
        t[x] = -1 if c == 1 else c
        out = [(ps, tuple(t))]
        for prob, y in ((pl, x - 1), (pr, x + 1)):
            t = list(s)
            t[x] = c - 1
            if y < 0:
                t.insert(0, 0)
                y = 0
            elif y == len(t):
                t.append(0)
            t[y] = 2 if t[y] == -1 else t[y] + 1
            out.append((prob, tuple(t) if len(t) <= max_width else None))
        return out

    transient, absorbing, edges = [], [], {}
    seen, todo = {start}, [start]
    while todo:
        s = todo.pop()
        if s is None or is_stable(s):
            absorbing.append(s)
            continue
        transient.append(s)
        agg = defaultdict(Fraction)
        for prob, t in step(s):
            agg[t] += prob
        edges[s] = agg
        for t in agg:
            if t not in seen:
                seen.add(t)
                todo.append(t)
    ti = {s: i for i, s in enumerate(transient)}
    ai = {s: i for i, s in enumerate(absorbing)}
    m = len(transient)
    a = [[Fraction(int(i == j)) for j in range(m)] for i in range(m)]
    b = [[Fraction(0)] * len(absorbing) for _ in range(m)]
    for s, agg in edges.items():
        for t, prob in agg.items():
            if t in ti:
                a[ti[s]][ti[t]] -= prob
            else:
                b[ti[s]][ai[t]] += prob
    row = solve(a, b)[ti[start]]
    out = defaultdict(Fraction)
    for s in absorbing:
        out[None if s is None else len(s)] += row[ai[s]]
    return dict(out)
