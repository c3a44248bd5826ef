"""Compiled Monte Carlo kernels.

Everything here is numba-jitted and allocation-light: the simulators in
`csbp` and `supersim` push per-replicate loops down into these kernels and
keep statistics assembly in numpy.  Randomness is a per-replicate splitmix64
counter stream seeded from `rng.replicate_seeds`, so results do not depend
on batching or scheduling.

Position updates between branch events are exact: Gaussian endpoints away
from barriers, and against a barrier the crossing indicator, crossing time
and the no-crossing endpoint are all drawn from their closed-form laws
(normal tails plus the reflection identity).  No grid detection anywhere.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

# ---------------------------------------------------------------------------
# splitmix64 stream

_GOLD = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_INV53 = 1.0 / 9007199254740992.0  # 2^-53


@njit(cache=True)
def _nxt(state):
    state = state + _GOLD
    z = state
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    z = z ^ (z >> np.uint64(31))
    return state, z


@njit(cache=True)
def _u01(state):
    # strictly inside (0, 1) so logs are always safe
    state, z = _nxt(state)
    return state, ((z >> np.uint64(11)) + np.float64(0.5)) * _INV53


@njit(cache=True)
def _norm(state):
    # Marsaglia polar, second coordinate discarded
    while True:
        state, a = _u01(state)
        state, b = _u01(state)
        u = 2.0 * a - 1.0
        v = 2.0 * b - 1.0
        s = u * u + v * v
        if 0.0 < s < 1.0:
            return state, u * math.sqrt(-2.0 * math.log(s) / s)


@njit(cache=True)
def _poisson(state, mean):
    if mean <= 0.0:
        return state, 0
    if mean < 12.0:
        # Knuth product of uniforms
        limit = math.exp(-mean)
        k = 0
        p = 1.0
        while True:
            state, u = _u01(state)
            p *= u
            if p <= limit:
                return state, k
            k += 1
    # Hormann's PTRS transformed rejection, exact for large means
    b = 0.931 + 2.53 * math.sqrt(mean)
    a = -0.059 + 0.02483 * b
    inv_alpha = 1.1239 + 1.1328 / (b - 3.4)
    vr = 0.9277 - 3.6224 / (b - 2.0)
    lm = math.log(mean)
    while True:
        state, u = _u01(state)
        u -= 0.5
        state, v = _u01(state)
        us = 0.5 - abs(u)
        k = int(math.floor((2.0 * a / us + b) * u + mean + 0.43))
        if us >= 0.07 and v <= vr:
            return state, k
        if k < 0 or (us < 0.013 and v > us):
            continue
        if (math.log(v) + math.log(inv_alpha) - math.log(a / (us * us) + b)
                <= k * lm - mean - math.lgamma(k + 1.0)):
            return state, k


def seed_states(pairs: np.ndarray) -> np.ndarray:
    """Collapse (n, 2) uint64 key pairs to one well-mixed uint64 per stream."""
    lo = pairs[:, 0].astype(np.uint64)
    hi = pairs[:, 1].astype(np.uint64)
    return lo ^ ((hi << np.uint64(32)) | (hi >> np.uint64(32)))


# ---------------------------------------------------------------------------
# normal tails and Brownian first passage against a single level

_SQRT2 = math.sqrt(2.0)
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@njit(cache=True)
def _ntail(z):
    return 0.5 * math.erfc(z / _SQRT2)


@njit(cache=True)
def _log_ntail(z):
    if z < 30.0:
        t = 0.5 * math.erfc(z / _SQRT2)
        if t > 0.0:
            return math.log(t)
    # asymptotic tail, relative error < 1e-3 where erfc underflows
    return -0.5 * z * z - math.log(z) - _LOG_SQRT_2PI + math.log1p(-1.0 / (z * z))


@njit(cache=True)
def _fp_prob(g, c, dt):
    """P(sup_{s<=dt} (c s + B_s) >= g) for a gap g > 0, any drift sign."""
    sq = math.sqrt(dt)
    p = _ntail((g - c * dt) / sq)
    l2 = 2.0 * c * g + _log_ntail((g + c * dt) / sq)
    if l2 > -745.0:
        p += math.exp(l2)
    if p > 1.0:
        p = 1.0
    return p


@njit(cache=True)
def _fp_time(g, c, dt, u):
    """Quantile of the first-passage time at level u in (0, P(hit by dt))."""
    lo = 0.0
    hi = dt
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if mid <= 0.0:
            break
        if _fp_prob(g, c, mid) < u:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@njit(cache=True)
def _no_cross_cdf(z, w, wb, c, dt):
    # unnormalised P(endpoint <= z, no crossing), reflection identity
    sq = math.sqrt(dt)
    a = 1.0 - _ntail((z - w - c * dt) / sq)
    lb = 2.0 * c * (wb - w)
    refl = (z - w - 2.0 * (wb - w) - c * dt) / sq
    b = 1.0 - _ntail(refl)
    if lb > -745.0 and b > 0.0:
        a -= math.exp(lb) * b
    return a


@njit(cache=True)
def _advance(state, x, t0, t1, c, barrier, direc):
    """Move one particle from (x, t0) to t1 with drift c against one level.

    direc: 0 no barrier, +1 barrier above, -1 barrier below.
    Returns (state, x_end, hit, t_hit): on a hit the particle sits exactly on
    the barrier at t_hit <= t1 and the caller owns what happens next.
    """
    dt = t1 - t0
    if dt <= 0.0:
        return state, x, False, t1
    if direc == 0:
        state, z = _norm(state)
        return state, x + c * dt + math.sqrt(dt) * z, False, t1
    w = direc * x
    wb = direc * barrier
    ce = direc * c
    g = wb - w
    if g <= 0.0:
        return state, barrier, True, t0
    p = _fp_prob(g, ce, dt)
    state, u = _u01(state)
    if u < p:
        tau = _fp_time(g, ce, dt, u)
        return state, barrier, True, t0 + tau
    if p < 0.7:
        # rejection from the free endpoint; acceptance rate is 1 - p
        sq = math.sqrt(dt)
        while True:
            state, z = _norm(state)
            we = w + ce * dt + sq * z
            if we >= wb:
                continue
            state, v = _u01(state)
            if v <= -math.expm1(-2.0 * g * (wb - we) / dt):
                return state, direc * we, False, t1
    # crossing was likely: invert the conditional endpoint law instead
    total = 1.0 - p
    target = (u - p) / total if total > 0.0 else 0.5
    mass = _no_cross_cdf(wb, w, wb, ce, dt)
    lo = w + ce * dt - 12.0 * math.sqrt(dt) - 2.0 * g
    hi = wb
    for _ in range(70):
        mid = 0.5 * (lo + hi)
        if _no_cross_cdf(mid, w, wb, ce, dt) < target * mass:
            lo = mid
        else:
            hi = mid
    return state, direc * 0.5 * (lo + hi), False, t1


# ---------------------------------------------------------------------------
# CSBP Euler kernel

@njit(cache=True)
def csbp_batch(states, z0, dt, n_steps, obs_steps,
               lin_drift, gauss_coef, jump_rate, jump_u, jump_r,
               out_z, out_absorbed):
    """Euler paths of a mass process: linear drift, sqrt diffusion,
    compound-Poisson jumps from a quantile table, absorption at 0."""
    n_paths = states.shape[0]
    n_obs = obs_steps.shape[0]
    has_jumps = jump_rate > 0.0 and jump_u.shape[0] > 1
    for ip in range(n_paths):
        state = states[ip]
        z = z0
        oi = 0
        for step in range(1, n_steps + 1):
            if z > 0.0:
                dz = lin_drift * z * dt
                state, gz = _norm(state)
                dz += math.sqrt(gauss_coef * z * dt) * gz
                if has_jumps:
                    state, k = _poisson(state, jump_rate * z * dt)
                    for _ in range(k):
                        state, u = _u01(state)
                        dz += np.interp(u, jump_u, jump_r)
                z += dz
                if z <= 0.0:
                    z = 0.0
            while oi < n_obs and obs_steps[oi] == step:
                out_z[ip, oi] = z
                oi += 1
        out_absorbed[ip] = z == 0.0
        states[ip] = state


# ---------------------------------------------------------------------------
# event-driven branching particle kernel

MODE_FREE = 0       # no stopping lines
MODE_LINES_UP = 1   # ascending lines above, first passage per lineage
MODE_LINE_DOWN = 2  # single line below (truncation level)

ST_OK = 0
ST_CENSORED = 1
ST_ESCAPED = 3

N_SUMS = 8  # count, sum e^{-lam x}, sum x e^{-lam x}, sum exp(-x_phys^2),
            # max x, uncrossed sum e^{-lam x}, uncrossed sum x e^{-lam x}, sum x


@njit(cache=True)
def _record(sums, oi, n, pos, kn, lam, c, t, need_g, n_lines):
    cnt = 0.0
    s1 = 0.0
    s2 = 0.0
    s3 = 0.0
    mx = -np.inf
    s5 = 0.0
    s6 = 0.0
    s7 = 0.0
    shift = c * t
    for i in range(n):
        x = pos[i]
        cnt += 1.0
        e = math.exp(-lam * x)
        s1 += e
        s2 += x * e
        if need_g:
            xp = x - shift
            s3 += math.exp(-xp * xp)
        if x > mx:
            mx = x
        if kn[i] < n_lines:
            s5 += e
            s6 += x * e
        s7 += x
    sums[oi, 0] = cnt
    sums[oi, 1] = s1
    sums[oi, 2] = s2
    sums[oi, 3] = s3
    sums[oi, 4] = mx
    sums[oi, 5] = s5
    sums[oi, 6] = s6
    sums[oi, 7] = s7


@njit(cache=True)
def _advance_lineage(state, i, tt, pos, tb, kn, c, lines, mode, kill_after,
                     keep_crossed, counts, ev_time, ev_line, ev_fill, ev_cap):
    """Realize particle i at time tt, resolving every line passage on the way.

    Returns (state, removed, n_events_written)."""
    n_lines = lines.shape[0]
    x = pos[i]
    t0 = tb[i]
    wrote = 0
    while True:
        k = kn[i]
        if mode == MODE_FREE or k >= n_lines:
            direc = 0
            barrier = 0.0
        elif mode == MODE_LINES_UP:
            direc = 1
            barrier = lines[k]
        else:
            direc = -1
            barrier = lines[0]
        state, x, hit, th = _advance(state, x, t0, tt, c, barrier, direc)
        if not hit:
            pos[i] = x
            tb[i] = tt
            return state, False, wrote
        counts[k] += 1
        if ev_cap > 0 and ev_fill + wrote < ev_cap:
            ev_time[ev_fill + wrote] = th
            ev_line[ev_fill + wrote] = k
            wrote += 1
        kn[i] = k + 1
        t0 = th
        if mode == MODE_LINE_DOWN:
            if keep_crossed:
                continue  # marked, keeps evolving barrier-free
            return state, True, wrote
        if kn[i] >= n_lines and kill_after:
            return state, True, wrote


@njit(cache=True)
def _remove(i, n, pos, tb, kn):
    n -= 1
    pos[i] = pos[n]
    tb[i] = tb[n]
    kn[i] = kn[n]
    return n


@njit(cache=True)
def run_replicate(state, x0, obs_t, c, lam,
                  gamma_total, p_death, p_two,
                  jump_u, jump_r, inv_eps,
                  lines, mode, kill_after, keep_crossed,
                  window, cap, escape_n, need_g,
                  pos, tb, kn,
                  sums, counts, kn_hist,
                  ev_time, ev_line):
    """One replicate; returns (status, final_state).

    Offspring outcome per branch event: u < p_death kills the particle,
    u < p_death + p_two adds one sibling, otherwise a table-sampled mass r
    arrives as round(r * inv_eps) siblings at the same site.
    """
    n_obs = obs_t.shape[0]
    n_lines = lines.shape[0]
    ev_cap = ev_time.shape[0]
    ev_fill = 0
    n = x0.shape[0]
    for i in range(n):
        pos[i] = x0[i]
        tb[i] = 0.0
        kn[i] = 0
    t = 0.0
    oi = 0
    status = ST_OK
    has_jumps = jump_u.shape[0] > 1
    while oi < n_obs:
        if n == 0:
            for j in range(oi, n_obs):
                _record(sums, j, 0, pos, kn, lam, c, obs_t[j], need_g, n_lines)
            oi = n_obs
            break
        state, u = _u01(state)
        t_ev = t - math.log(u) / (gamma_total * n)
        if t_ev >= obs_t[oi]:
            tt = obs_t[oi]
            i = 0
            while i < n:
                state, removed, wrote = _advance_lineage(
                    state, i, tt, pos, tb, kn, c, lines, mode, kill_after,
                    keep_crossed, counts, ev_time, ev_line, ev_fill, ev_cap)
                ev_fill += wrote
                if removed:
                    n = _remove(i, n, pos, tb, kn)
                else:
                    i += 1
            _record(sums, oi, n, pos, kn, lam, c, tt, need_g, n_lines)
            if window > 0.0 and n > 0:
                cut = sums[oi, 4] - window
                i = 0
                while i < n:
                    if pos[i] < cut:
                        n = _remove(i, n, pos, tb, kn)
                    else:
                        i += 1
            t = tt
            oi += 1
            if escape_n > 0 and n >= escape_n:
                status = ST_ESCAPED
                for j in range(oi, n_obs):
                    sums[j, 0] = -1.0
                break
            continue
        t = t_ev
        state, z = _nxt(state)
        i = int(z % np.uint64(n))
        state, removed, wrote = _advance_lineage(
            state, i, t, pos, tb, kn, c, lines, mode, kill_after,
            keep_crossed, counts, ev_time, ev_line, ev_fill, ev_cap)
        ev_fill += wrote
        if removed:
            n = _remove(i, n, pos, tb, kn)
            continue
        state, u = _u01(state)
        if u < p_death:
            n = _remove(i, n, pos, tb, kn)
            continue
        if u < p_death + p_two:
            k_new = 1
        elif has_jumps:
            state, v = _u01(state)
            r = np.interp(v, jump_u, jump_r)
            k_new = int(r * inv_eps + 0.5)
        else:
            k_new = 0
        if k_new > 0:
            if n + k_new > cap:
                status = ST_CENSORED
                for j in range(oi, n_obs):
                    sums[j, 0] = -1.0
                break
            xi = pos[i]
            ki = kn[i]
            for _ in range(k_new):
                pos[n] = xi
                tb[n] = t
                kn[n] = ki
                n += 1
        if escape_n > 0 and n >= escape_n:
            status = ST_ESCAPED
            for j in range(oi, n_obs):
                sums[j, 0] = -1.0
            break
    for i in range(n):
        k = kn[i]
        if k > n_lines:
            k = n_lines
        kn_hist[k] += 1
    return status, state, n, ev_fill


@njit(cache=True)
def run_single(state, x0, obs_t, c, lam,
               gamma_total, p_death, p_two,
               jump_u, jump_r, inv_eps,
               lines, mode, kill_after, keep_crossed,
               window, cap, escape_n, need_g, ev_cap):
    """One replicate with full outputs: terminal positions, line-crossing
    ledger with event times (first ev_cap kept), observation sums."""
    n_obs = obs_t.shape[0]
    n_lines = lines.shape[0]
    pos = np.empty(cap, dtype=np.float64)
    tb = np.empty(cap, dtype=np.float64)
    kn = np.empty(cap, dtype=np.int16)
    sums = np.zeros((n_obs, N_SUMS), dtype=np.float64)
    counts = np.zeros(n_lines, dtype=np.int64)
    kn_hist = np.zeros(n_lines + 1, dtype=np.int64)
    ev_time = np.empty(ev_cap, dtype=np.float64)
    ev_line = np.empty(ev_cap, dtype=np.int16)
    st, state, n, ev_n = run_replicate(
        state, x0, obs_t, c, lam,
        gamma_total, p_death, p_two,
        jump_u, jump_r, inv_eps,
        lines, mode, kill_after, keep_crossed,
        window, cap, escape_n, need_g,
        pos, tb, kn,
        sums, counts, kn_hist,
        ev_time, ev_line)
    pos_out = pos[:n].copy()
    kn_out = kn[:n].copy()
    return st, sums, counts, kn_hist, pos_out, kn_out, ev_time[:ev_n], ev_line[:ev_n]


@njit(cache=True)
def run_batch(seed_states_arr, x0, obs_t, c, lam,
              gamma_total, p_death, p_two,
              jump_u, jump_r, inv_eps,
              lines, mode, kill_after, keep_crossed,
              window, cap, escape_n, need_g,
              sums, counts, kn_hist, status):
    """Independent replicates sharing preallocated particle workspace."""
    n_rep = seed_states_arr.shape[0]
    pos = np.empty(cap, dtype=np.float64)
    tb = np.empty(cap, dtype=np.float64)
    kn = np.empty(cap, dtype=np.int16)
    ev_time = np.empty(0, dtype=np.float64)
    ev_line = np.empty(0, dtype=np.int16)
    for r in range(n_rep):
        counts_r = counts[r]
        st, _, _, _ = run_replicate(
            seed_states_arr[r], x0, obs_t, c, lam,
            gamma_total, p_death, p_two,
            jump_u, jump_r, inv_eps,
            lines, mode, kill_after, keep_crossed,
            window, cap, escape_n, need_g,
            pos, tb, kn,
            sums[r], counts_r, kn_hist[r],
            ev_time, ev_line)
        status[r] = st
