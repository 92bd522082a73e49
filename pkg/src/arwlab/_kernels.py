"""Compiled stabilization engine.

Window layout for ``m`` cells: cell ``0`` and cell ``m - 2`` are sinks at the
two ends of the line segment ``1 .. m - 3``, cell ``m - 1`` collects ejected
particles.  Sinks are never toppled, so exits are simply their counts.

``st[i]`` encodes the content of cell ``i``: ``-1`` a lone sleeping particle,
``0`` empty, ``c >= 1`` that many active particles.  ``odo[i]`` is the
odometer, ``keys[i]`` the instruction-stream state of the site (see
:mod:`arwlab.tape`) and ``nu[i]`` the uniform behind the next instruction,
``u(keys[i], odo[i] + 1)``, computed one step ahead.

One instruction is executed per iteration.  The walker is followed after a
jump, stays put after a sleep instruction on a multiply occupied site, and the
next site is popped from a work stack otherwise.  The state update is written
as integer arithmetic so that the compiled loop has almost no data dependent
branches; this roughly halves the cost of a toppling.  Every toppling is
legal, so by the Abelian property the outcome does not depend on the order;
the reference engine in :mod:`arwlab.stabilizer` is checked against this one
on shared tapes.

Free (unbounded) stabilization uses the sinks as parking cells: particles
reaching an end wait there, the window is enlarged and they are released as
active particles.  Postponing topplings is again a legal order.
"""

import numpy as np
from numba import njit

_U = np.uint64
GOLDEN = _U(0x9E3779B97F4A7C15)
MIX1 = _U(0xBF58476D1CE4E5B9)
MIX2 = _U(0x94D049BB133111EB)
SITE_SALT = _U(0x5851F42D4C957F2D)
INV_2_53 = 1.0 / 9007199254740992.0
S30 = _U(30)
S27 = _U(27)
S31 = _U(31)
S11 = _U(11)

NO_EJECT = np.int64(1) << np.int64(62)


@njit(cache=True, inline="always")
def fmix(z):
    z = (z ^ (z >> S30)) * MIX1
    z = (z ^ (z >> S27)) * MIX2
    return z ^ (z >> S31)


@njit(cache=True)
def site_key(seed, site):
    return fmix(seed ^ fmix(_U(site) + SITE_SALT))


@njit(cache=True, inline="always")
def stream_uniform(key, j):
    return float(fmix(key + _U(j) * GOLDEN) >> S11) * INV_2_53


@njit(cache=True)
def seed_uniform(seed, index, j):
    return stream_uniform(site_key(seed, index), j)


@njit(cache=True)
def make_keys(seed, lo, size):
    """Stream states of the cells of a window whose cell 0 is site ``lo``."""
    keys = np.empty(size, np.uint64)
    for i in range(size):
        keys[i] = site_key(seed, lo + i)
    return keys


@njit(cache=True)
def next_uniforms(keys, odo):
    nu = np.empty(keys.size)
    for i in range(keys.size):
        nu[i] = stream_uniform(keys[i], odo[i] + 1)
    return nu


@njit(cache=True)
def work_stack(st):
    """Stack of the unstable interior cells and its membership mask."""
    m = st.size
    stack = np.empty(m, np.int64)
    inq = np.zeros(m, np.bool_)
    top = 0
    for i in range(1, m - 2):
        if st[i] > 0:
            stack[top] = i
            inq[i] = True
            top += 1
    return stack, inq, top


def _make_relax(with_eject):
    def relax(st, odo, keys, nu, ts, tl, ej_cell, ej_k, stack, top, inq, fuel):
        """Legal topplings until every interior cell is stable.

        ``ej_cell`` is the cell whose instructions of index ``>= ej_k`` are
        ejections (ignored by the variant compiled without ejector).  Fuel is
        checked between walk segments, so ``topplings`` may exceed ``fuel`` by
        the length of one segment.  Returns ``(topplings, top)``; the work
        stack is non-empty on return only if fuel ran out.
        """
        m = st.size
        right = m - 2
        ebin = m - 1
        used = 0
        while used < fuel:
            x = -1
            while top > 0:
                top -= 1
                x = stack[top]
                inq[x] = False
                if st[x] > 0:
                    break
                x = -1
            if x < 0:
                break
            while True:
                c = st[x]
                u = nu[x]
                j = odo[x] + 1
                odo[x] = j
                nu[x] = stream_uniform(keys[x], j + 1)
                used += 1
                mr = np.int64(u >= tl)
                if with_eject:
                    ej = np.int64(x == ej_cell) & np.int64(j >= ej_k)
                    sl = np.int64(u < ts) & (1 - ej)
                    y = x + (1 - sl) * (2 * mr - 1)
                    y += ej * (ebin - y)
                else:
                    sl = np.int64(u < ts)
                    y = x + (1 - sl) * (2 * mr - 1)
                one = np.int64(c == 1)
                nc = c - 1 + sl * (1 - 2 * one)
                st[x] = nc
                s = st[y]
                st[y] = s + (1 - sl) * (1 + 2 * np.int64(s < 0))
                q = np.int64(inq[x])
                push = (1 - sl) * np.int64(nc >= 1) * (1 - q)
                inq[x] = (q | push) != 0
                stack[top] = x
                top += push
                sink = np.int64(y == 0) | np.int64(y >= right)
                if (sl & one) | ((1 - sl) & sink):
                    break
                x = y
        # leftover work (fuel ran out) stays on the stack
        if top > 0:
            k = 0
            for i in range(top):
                if st[stack[i]] > 0:
                    k += 1
            if k == 0:
                for i in range(top):
                    inq[stack[i]] = False
                top = 0
        return used, top

    return njit(cache=True)(relax)


_relax_plain = _make_relax(False)
_relax_eject = _make_relax(True)


@njit(cache=True)
def relax(st, odo, keys, nu, ts, tl, ej_cell, ej_k, stack, top, inq, fuel):
    if ej_cell >= 0:
        return _relax_eject(st, odo, keys, nu, ts, tl, ej_cell, ej_k, stack, top, inq, fuel)
    return _relax_plain(st, odo, keys, nu, ts, tl, ej_cell, ej_k, stack, top, inq, fuel)


@njit(cache=True)
def stabilize_bounded(st, odo, keys, ts, tl, ej_cell, ej_k, fuel):
    """Stabilize the interior with killing at both ends (arrays modified in
    place).  Returns ``(topplings, exhausted)``."""
    nu = next_uniforms(keys, odo)
    stack, inq, top = work_stack(st)
    used, top = relax(st, odo, keys, nu, ts, tl, ej_cell, ej_k, stack, top, inq, fuel)
    return used, top > 0


@njit(cache=True)
def _grow(st, odo, keys, nu, stack, inq, top, lo, seed, ts, tl):
    """Enlarge the window on both sides and release parked particles."""
    m = st.size
    size = m - 1  # cells 0 .. m-2 are sites of the line
    shift = size // 2 + 4
    new = size + 2 * shift + 1
    st2 = np.zeros(new, np.int64)
    odo2 = np.zeros(new, np.int64)
    keys2 = np.empty(new, np.uint64)
    nu2 = np.empty(new)
    inq2 = np.zeros(new, np.bool_)
    stack2 = np.empty(new, np.int64)
    st2[shift:shift + size] = st[:size]
    odo2[shift:shift + size] = odo[:size]
    keys2[shift:shift + size] = keys[:size]
    nu2[shift:shift + size] = nu[:size]
    inq2[shift:shift + size] = inq[:size]
    nlo = lo - shift
    for i in range(shift):
        keys2[i] = site_key(seed, nlo + i)
        nu2[i] = stream_uniform(keys2[i], 1)
    for i in range(shift + size, new):
        keys2[i] = site_key(seed, nlo + i)
        nu2[i] = stream_uniform(keys2[i], 1)
    for i in range(top):
        stack2[i] = stack[i] + shift
    for i in (shift, shift + size - 1):
        if st2[i] > 0 and not inq2[i]:
            stack2[top] = i
            inq2[i] = True
            top += 1
    return st2, odo2, keys2, nu2, stack2, inq2, top, nlo


@njit(cache=True)
def stabilize_free(st, odo, lo, seed, ts, tl, fuel):
    """Stabilize on the whole line; the arrays describe sites ``lo ..`` and
    must have empty end cells.  Returns ``(st, odo, lo, topplings,
    exhausted)`` with the window possibly enlarged (new arrays)."""
    keys = make_keys(seed, lo, st.size)
    nu = next_uniforms(keys, odo)
    stack, inq, top = work_stack(st)
    used = 0
    while True:
        k, top = relax(st, odo, keys, nu, ts, tl, -1, NO_EJECT, stack, top, inq,
                       fuel - used)
        used += k
        if top > 0:
            return st, odo, lo, used, True
        m = st.size
        if st[0] == 0 and st[m - 2] == 0:
            return st, odo, lo, used, False
        st, odo, keys, nu, stack, inq, top, lo = _grow(
            st, odo, keys, nu, stack, inq, top, lo, seed, ts, tl)


@njit(cache=True)
def ones_batch(n, seeds, ts, tl, fuel):
    """Stabilize one active particle per site of ``{1..n}`` for every seed.

    Columns of the result: sleepers, left exits, right exits, topplings,
    odometer at the leftmost site, exhausted flag.
    """
    r = seeds.size
    out = np.zeros((r, 6), np.int64)
    st = np.empty(n + 3, np.int64)
    odo = np.empty(n + 3, np.int64)
    for k in range(r):
        st[:] = 1
        st[0] = 0
        st[n + 1] = 0
        st[n + 2] = 0
        odo[:] = 0
        keys = make_keys(seeds[k], 0, n + 3)
        used, ex = stabilize_bounded(st, odo, keys, ts, tl, -1, NO_EJECT, fuel)
        out[k, 0] = -st[1:n + 1].sum()
        out[k, 1] = st[0]
        out[k, 2] = st[n + 1]
        out[k, 3] = used
        out[k, 4] = odo[1]
        out[k, 5] = ex
    return out


@njit(cache=True)
def bernoulli_batch(n, rho, seeds, init_seeds, ts, tl, fuel):
    """I.i.d. Bernoulli(rho) active particles on ``{1..n}``, stabilized with
    killing.  Columns: initial count, exits, sleepers, topplings, exhausted."""
    r = seeds.size
    out = np.zeros((r, 5), np.int64)
    st = np.empty(n + 3, np.int64)
    odo = np.empty(n + 3, np.int64)
    for k in range(r):
        st[:] = 0
        odo[:] = 0
        init = 0
        for i in range(1, n + 1):
            if seed_uniform(init_seeds[k], i, 1) < rho:
                st[i] = 1
                init += 1
        keys = make_keys(seeds[k], 0, n + 3)
        used, ex = stabilize_bounded(st, odo, keys, ts, tl, -1, NO_EJECT, fuel)
        out[k, 0] = init
        out[k, 1] = st[0] + st[n + 1]
        out[k, 2] = -st[1:n + 1].sum()
        out[k, 3] = used
        out[k, 4] = ex
    return out


@njit(cache=True)
def point_source_batch(k, seeds, ts, tl, fuel):
    """``k`` active particles at the origin of the line, for every seed.

    Columns: |A_k|, min A_k, max A_k, sum of sleeper positions, topplings,
    exhausted flag.
    """
    r = seeds.size
    out = np.zeros((r, 6), np.int64)
    half = (2 * k) // 3 + 16
    for q in range(r):
        m = 2 * half + 2
        st = np.zeros(m, np.int64)
        odo = np.zeros(m, np.int64)
        lo = -half
        st[half] = k
        st, odo, lo, used, ex = stabilize_free(st, odo, lo, seeds[q], ts, tl, fuel)
        amin = 0
        amax = 0
        size = 0
        pos = 0
        for i in range(st.size - 1):
            x = lo + i
            if odo[i] > 0 or x == 0:
                size += 1
                if x < amin:
                    amin = x
                if x > amax:
                    amax = x
            if st[i] < 0:
                pos += x
        out[q, 0] = size
        out[q, 1] = amin
        out[q, 2] = amax
        out[q, 3] = pos
        out[q, 4] = used
        out[q, 5] = ex
    return out


@njit(cache=True)
def dd_run(st, odo, seed, drive_seed, ts, tl, t0, steps, fuel, record_codes):
    """Run the driven-dissipative chain on ``{1..n}`` for ``steps`` steps.

    ``st``/``odo`` use the bounded layout (``n + 3`` cells) and are modified
    in place; the sink cells accumulate exits.  Step ``t`` (1-based,
    continuing from ``t0``) adds an active particle at site
    ``1 + floor(n * U_t)`` where ``U_t`` is the first uniform of the stream
    indexed ``t`` in the driving family.  Returns ``(Y, codes, topplings,
    exhausted)``; ``Y[i]`` is the number of particles after step
    ``t0 + i + 1`` and ``codes[i]`` the bitmask of sleeping sites (bit
    ``x - 1`` for site ``x``, only when ``record_codes``).
    """
    n = st.size - 3
    keys = make_keys(seed, 0, n + 3)
    nu = next_uniforms(keys, odo)
    ys = np.empty(steps, np.int64)
    codes = np.zeros(steps if record_codes else 0, np.int64)
    stack = np.empty(n + 3, np.int64)
    inq = np.zeros(n + 3, np.bool_)
    total = 0
    for i in range(1, n + 1):
        total += abs(st[i])
    used = 0
    for s in range(steps):
        t = t0 + s + 1
        x = 1 + int(seed_uniform(drive_seed, t, 1) * n)
        c = st[x]
        st[x] = c + 1 if c >= 0 else 2
        total += 1
        exits = st[0] + st[n + 1]
        stack[0] = x
        inq[x] = True
        k, top = relax(st, odo, keys, nu, ts, tl, -1, NO_EJECT, stack, 1, inq,
                       fuel - used)
        used += k
        total -= st[0] + st[n + 1] - exits
        ys[s] = total
        if record_codes:
            code = 0
            for i in range(1, n + 1):
                if st[i] < 0:
                    code |= 1 << (i - 1)
            codes[s] = code
        if top > 0:
            return ys[:s + 1], codes[:s + 1] if record_codes else codes, used, True
    return ys, codes, used, False


@njit(cache=True)
def drop_batch(n, steps, seeds, drive_seeds, ts, tl, fuel):
    """Add the first ``steps`` driven particles at once and stabilize.

    By the Abelian property the result equals the state of the
    driven-dissipative chain after ``steps`` steps (same tape and driving
    sites), so this is a cheaper way to sample ``Y_steps``.  Columns:
    particles, exits, topplings, exhausted flag.
    """
    r = seeds.size
    out = np.zeros((r, 4), np.int64)
    st = np.empty(n + 3, np.int64)
    odo = np.empty(n + 3, np.int64)
    for k in range(r):
        st[:] = 0
        odo[:] = 0
        for t in range(1, steps + 1):
            st[1 + int(seed_uniform(drive_seeds[k], t, 1) * n)] += 1
        keys = make_keys(seeds[k], 0, n + 3)
        used, ex = stabilize_bounded(st, odo, keys, ts, tl, -1, NO_EJECT, fuel)
        out[k, 0] = -st[1:n + 1].sum()
        out[k, 1] = st[0] + st[n + 1]
        out[k, 2] = used
        out[k, 3] = ex
    return out


@njit(cache=True)
def _ones_sleepers(lo, size, seed, ts, tl, ej_cell, ej_k, fuel):
    """Stabilize one active particle per site of ``{lo .. lo + size - 1}``.
    Returns ``(sleepers, odometer array, topplings, exhausted)``."""
    st = np.ones(size + 3, np.int64)
    st[0] = 0
    st[size + 1] = 0
    st[size + 2] = 0
    odo = np.zeros(size + 3, np.int64)
    keys = make_keys(seed, lo - 1, size + 3)
    used, ex = stabilize_bounded(st, odo, keys, ts, tl, ej_cell, ej_k, fuel)
    return -st[1:size + 1].sum(), odo, used, ex


@njit(cache=True)
def ejector_batch(n, m, seeds, ts, tl, fuel):
    """Ejector-seat coupling on ``V = {-n .. m}`` for every seed.

    Columns: S_V, S_L, S_R, base odometer at 0, N_1, N_K with
    ``K = base odometer + 1``, exhausted flag.
    """
    r = seeds.size
    out = np.zeros((r, 7), np.int64)
    size = n + m + 1
    c0 = n + 1
    for q in range(r):
        s = seeds[q]
        sv, odo, _, e1 = _ones_sleepers(-n, size, s, ts, tl, -1, NO_EJECT, fuel)
        h0 = odo[c0]
        sl, _, _, e2 = _ones_sleepers(-n, n, s, ts, tl, -1, NO_EJECT, fuel)
        sr, _, _, e3 = _ones_sleepers(1, m, s, ts, tl, -1, NO_EJECT, fuel)
        n1, _, _, e4 = _ones_sleepers(-n, size, s, ts, tl, c0, 1, fuel)
        nk, _, _, e5 = _ones_sleepers(-n, size, s, ts, tl, c0, h0 + 1, fuel)
        out[q, 0] = sv
        out[q, 1] = sl
        out[q, 2] = sr
        out[q, 3] = h0
        out[q, 4] = n1
        out[q, 5] = nk
        out[q, 6] = e1 | e2 | e3 | e4 | e5
    return out


@njit(cache=True)
def hockey_batch(n, steps, seeds, drive_seeds, ts, tl, fuel):
    """Trajectories ``Y_0 .. Y_steps`` of the chain on ``{1..n}`` started
    empty, one row per seed.  Also returns the per-replica exhausted flags."""
    r = seeds.size
    out = np.zeros((r, steps + 1), np.int64)
    flags = np.zeros(r, np.bool_)
    st = np.zeros(n + 3, np.int64)
    odo = np.zeros(n + 3, np.int64)
    for q in range(r):
        st[:] = 0
        odo[:] = 0
        ys, _, _, ex = dd_run(st, odo, seeds[q], drive_seeds[q], ts, tl, 0, steps, fuel, False)
        out[q, 1:ys.size + 1] = ys
        flags[q] = ex
    return out, flags


@njit(cache=True)
def config_batch(init, seeds, ts, tl, fuel):
    """Stabilize the configuration ``init`` on ``{1..n}`` (cell ``i - 1`` is
    site ``i``; ``-1`` sleeping, ``c >= 0`` active count) with killing.
    Columns: sleepers, left exits, right exits, topplings, exhausted."""
    n = init.size
    r = seeds.size
    out = np.zeros((r, 5), np.int64)
    st = np.zeros(n + 3, np.int64)
    odo = np.zeros(n + 3, np.int64)
    for k in range(r):
        st[:] = 0
        st[1:n + 1] = init
        odo[:] = 0
        keys = make_keys(seeds[k], 0, n + 3)
        used, ex = stabilize_bounded(st, odo, keys, ts, tl, -1, NO_EJECT, fuel)
        out[k, 0] = -st[1:n + 1].sum()
        out[k, 1] = st[0]
        out[k, 2] = st[n + 1]
        out[k, 3] = used
        out[k, 4] = ex
    return out


@njit(cache=True)
def free_span_batch(init, seeds, ts, tl, fuel):
    """Stabilize ``init`` (placed on ``{1..n}`` as in :func:`config_batch`)
    on the whole line.  Columns: leftmost and rightmost visited site,
    topplings, exhausted flag."""
    n = init.size
    r = seeds.size
    out = np.zeros((r, 4), np.int64)
    pad = n + 16
    for q in range(r):
        m = n + 2 * pad + 1
        st = np.zeros(m, np.int64)
        odo = np.zeros(m, np.int64)
        lo = 1 - pad
        st[pad:pad + n] = init
        st, odo, lo, used, ex = stabilize_free(st, odo, lo, seeds[q], ts, tl, fuel)
        amin = 1 << 62
        amax = -(1 << 62)
        for i in range(st.size - 1):
            x = lo + i
            visited = odo[i] > 0 or (1 <= x <= n and init[x - 1] != 0)
            if visited:
                if x < amin:
                    amin = x
                if x > amax:
                    amax = x
        out[q, 0] = amin
        out[q, 1] = amax
        out[q, 2] = used
        out[q, 3] = ex
    return out
