"""Continuous-state branching mass processes.

Two complementary views of the same object: the Laplace functional, obtained
by integrating the deterministic flow du/ds = -f(u) to high accuracy, and
pathwise Euler simulation with drift, sqrt-diffusion and compound-Poisson
jumps above a cutoff.  The flow side works for any evaluable branching rate
function, including tabulated ones; the pathwise side needs an explicit
(alpha, beta, jump measure) triple.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np
from scipy.integrate import solve_ivp

from . import engine, rng as rngmod
from .levy import NoJumps

__all__ = [
    "CSBPPath", "CSBPEnsemble", "LaplaceExponentTable", "FlowBlowUp",
    "laplace_exponent", "laplace_table", "simulate_csbp", "simulate_ensemble",
    "seneta_heyde_estimate", "SenetaHeydeSummary",
    "write_path_csv", "read_path_csv",
]


class FlowBlowUp(RuntimeError):
    """The Laplace flow left every bounded window in finite time."""

    def __init__(self, theta, t_blow):
        self.theta = theta
        self.t_blow = t_blow
        super().__init__(
            f"flow from theta={theta} blew up near t={t_blow:.6g}; "
            "the rate function is not conservative on this window")


# ---------------------------------------------------------------------------
# containers

@dataclass
class CSBPPath:
    """One trajectory on a fixed grid; absorption at zero is permanent."""

    times: np.ndarray
    z: np.ndarray
    absorbed: bool
    mechanism: object = None
    seed: Optional[int] = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.z = np.asarray(self.z, dtype=float)
        if self.times.shape != self.z.shape:
            raise ValueError("times and z must have matching shapes")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if np.any(self.z < 0):
            raise ValueError("mass must stay nonnegative")
        hit = np.flatnonzero(self.z == 0.0)
        if hit.size and np.any(self.z[hit[0]:] > 0):
            raise ValueError("mass restarted after absorption")

    @property
    def terminal(self) -> float:
        return float(self.z[-1])


@dataclass
class CSBPEnsemble:
    """Independent trajectories on a shared grid, one row per path."""

    times: np.ndarray
    z: np.ndarray           # (n_paths, n_times)
    absorbed: np.ndarray    # (n_paths,) bool
    mechanism: object = None
    master_seed: Optional[int] = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.z = np.asarray(self.z, dtype=float)
        self.absorbed = np.asarray(self.absorbed, dtype=bool)
        if self.z.ndim != 2 or self.z.shape[1] != self.times.size:
            raise ValueError("z must be (n_paths, n_times)")
        if self.absorbed.shape != (self.z.shape[0],):
            raise ValueError("absorbed must have one flag per path")

    @property
    def n_paths(self) -> int:
        return self.z.shape[0]

    @property
    def terminal(self) -> np.ndarray:
        return self.z[:, -1]

    def paths(self) -> Iterable[CSBPPath]:
        for i in range(self.n_paths):
            yield CSBPPath(self.times, self.z[i], bool(self.absorbed[i]),
                           mechanism=self.mechanism)


@dataclass
class LaplaceExponentTable:
    """Flow values u_t(theta) on a (time, theta) grid.

    Row 0 is the identity (t = 0).  Each theta column moves monotonically,
    toward the attractor when one is supplied.
    """

    thetas: np.ndarray
    times: np.ndarray
    values: np.ndarray      # (n_times, n_thetas)
    attractor: Optional[float] = None

    def __post_init__(self):
        self.thetas = np.asarray(self.thetas, dtype=float)
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.times.size, self.thetas.size):
            raise ValueError("values must be (n_times, n_thetas)")
        if self.times[0] != 0.0:
            raise ValueError("time grid must start at 0")
        if np.any(self.values < -1e-12):
            raise ValueError("flow values must stay nonnegative")
        if not np.allclose(self.values[0], self.thetas, rtol=0, atol=1e-12):
            raise ValueError("row at t=0 must equal the initial values")
        tol = 1e-9 * max(1.0, float(np.max(np.abs(self.values))))
        for j, th in enumerate(self.thetas):
            col = self.values[:, j]
            d = np.diff(col)
            if self.attractor is not None:
                # columns run toward the attractor from either side
                if th < self.attractor and np.any(d < -tol):
                    raise ValueError(f"column theta={th} not nondecreasing")
                if th > self.attractor and np.any(d > tol):
                    raise ValueError(f"column theta={th} not nonincreasing")
            elif np.any(d > tol) and np.any(d < -tol):
                raise ValueError(f"column theta={th} is not monotone")

    def evaluate(self, theta: float, t: float) -> float:
        """Bilinear lookup inside the tabulated rectangle."""
        j = np.searchsorted(self.thetas, theta)
        if not (self.thetas[0] <= theta <= self.thetas[-1]):
            raise ValueError("theta outside table")
        if not (0.0 <= t <= self.times[-1]):
            raise ValueError("t outside table")
        ti = np.clip(np.searchsorted(self.times, t), 1, self.times.size - 1)
        j = int(np.clip(j, 1, self.thetas.size - 1))
        t0, t1 = self.times[ti - 1], self.times[ti]
        h0, h1 = self.thetas[j - 1], self.thetas[j]
        wt = (t - t0) / (t1 - t0)
        wh = (theta - h0) / (h1 - h0) if h1 > h0 else 0.0
        v = self.values
        return float((1 - wt) * ((1 - wh) * v[ti - 1, j - 1] + wh * v[ti - 1, j])
                     + wt * ((1 - wh) * v[ti, j - 1] + wh * v[ti, j]))


# ---------------------------------------------------------------------------
# Laplace flow

def _rate_callable(f) -> Callable[[float], float]:
    if hasattr(f, "eval_psi"):
        return f.eval_psi
    if callable(f):
        return f
    raise TypeError("need a mechanism with eval_psi or a plain callable")


def _flow_cap(f, theta: float) -> float:
    cap = max(1e9, theta * 1e6)
    if hasattr(f, "u"):
        # tabulated rate function: stay inside its argument grid
        cap = float(np.max(np.asarray(f.u, dtype=float)))
        if theta > cap * (1 + 1e-12):
            raise ValueError(
                f"theta={theta} outside the tabulated domain (max {cap:.6g})")
    return cap


def laplace_exponent(f, theta: float, t: float, *, rtol: float = 1e-10) -> float:
    """u_t(theta): solve du/ds = -f(u), u(0) = theta, adaptively.

    E[exp(-theta Z_t) | Z_0 = z] = exp(-z u_t(theta)).  Raises FlowBlowUp
    when the flow escapes every bounded window before time t.
    """
    if theta < 0:
        raise ValueError("theta must be nonnegative")
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0.0 or theta == 0.0:
        return float(theta)
    psi = _rate_callable(f)
    cap = _flow_cap(f, theta)

    def rhs(s, u):
        return -psi(min(max(u[0], 0.0), cap))

    def escape(s, u):
        return u[0] - cap
    escape.terminal = True

    sol = solve_ivp(rhs, (0.0, t), [float(theta)], method="DOP853",
                    rtol=rtol, atol=1e-12, events=escape, dense_output=False)
    if sol.status == 1:
        raise FlowBlowUp(theta, float(sol.t_events[0][0]))
    if not sol.success:
        # step-size underflow while racing upward is also a blow-up
        if sol.y.size and sol.y[0, -1] > 1e6 * max(theta, 1.0):
            raise FlowBlowUp(theta, float(sol.t[-1]))
        raise RuntimeError(f"flow integration failed: {sol.message}")
    return float(max(sol.y[0, -1], 0.0))


def laplace_table(f, thetas: Sequence[float], times: Sequence[float],
                  *, rtol: float = 1e-10,
                  attractor: Optional[float] = None) -> LaplaceExponentTable:
    """Tabulate the flow over a theta x time grid with one solve per theta."""
    thetas = np.asarray(sorted(thetas), dtype=float)
    times = np.asarray(sorted(times), dtype=float)
    if times[0] != 0.0:
        times = np.concatenate([[0.0], times])
    psi = _rate_callable(f)
    values = np.empty((times.size, thetas.size))
    values[0] = thetas
    for j, th in enumerate(thetas):
        if th == 0.0:
            values[:, j] = 0.0
            continue
        cap = _flow_cap(f, th)

        def rhs(s, u):
            return -psi(min(max(u[0], 0.0), cap))

        def escape(s, u):
            return u[0] - cap
        escape.terminal = True
        sol = solve_ivp(rhs, (0.0, float(times[-1])), [float(th)],
                        method="DOP853", rtol=rtol, atol=1e-12,
                        t_eval=times, events=escape)
        if sol.status == 1:
            raise FlowBlowUp(th, float(sol.t_events[0][0]))
        if not sol.success:
            raise RuntimeError(f"flow integration failed: {sol.message}")
        values[:, j] = np.maximum(sol.y[0], 0.0)
    if attractor is None and hasattr(f, "eval_psi"):
        try:
            from .mechanism import critical_constants
            attractor = critical_constants(f).largest_root
        except Exception:
            attractor = None
    return LaplaceExponentTable(thetas, times, values, attractor)


# ---------------------------------------------------------------------------
# pathwise simulation

def _euler_params(mech, jump_cutoff):
    if getattr(mech, "kind", None) != "triple":
        raise TypeError(
            "pathwise simulation needs an explicit drift/diffusion/jump "
            "triple; tabulated or formula rate functions are covered by "
            "laplace_exponent instead")
    alpha = mech.alpha
    beta = mech.beta
    nu = mech.levy
    if isinstance(nu, NoJumps):
        delta = 0.0
        table_u = np.zeros(1)
        table_r = np.zeros(1)
        return alpha, 2.0 * beta, 0.0, table_u, table_r, delta
    if jump_cutoff is None:
        delta = _default_cutoff(beta, nu)
    else:
        delta = float(jump_cutoff)
        folded = nu.var_below(delta)
        if folded > 0.0 and folded > 0.06 * (2.0 * beta + folded):
            raise ValueError(
                f"cutoff {delta} folds {folded:.3g} of squared jump mass "
                "into the Gaussian term, more than the 5% budget; "
                "use a smaller cutoff")
    drift = alpha - nu.mean_above(delta)
    gauss = 2.0 * beta + nu.var_below(delta)
    rate = nu.mass_above(delta)
    table_u, table_r = nu.inverse_cdf_table(delta)
    return drift, gauss, rate, table_u, table_r, delta


def _default_cutoff(beta, nu) -> float:
    lo = max(nu.support_min, 1e-8)
    for delta in np.geomspace(2.0, lo, 40):
        if delta < nu.support_min:
            continue
        folded = nu.var_below(delta)
        if folded <= 0.05 * (2.0 * beta + folded) + 1e-300:
            return float(delta)
    raise ValueError(
        "no cutoff keeps the folded squared jump mass under 5% of the "
        "Gaussian coefficient; pass jump_cutoff explicitly")


def _resolve_dt(mech, dt):
    scale = abs(mech.alpha)
    if dt is None:
        return 1e-3 / scale
    dt = float(dt)
    if dt <= 0:
        raise ValueError("dt must be positive")
    if dt * scale > 0.05:
        raise ValueError(
            f"dt={dt} too coarse for drift scale {1.0 / scale:.3g}; "
            "need dt * |alpha| <= 0.05")
    return dt


def _states_for(rng, n, fallback_scope):
    """uint64 engine states from an int seed, a Generator, or None."""
    if rng is None:
        rng = 0
    if isinstance(rng, (int, np.integer)):
        pairs = rngmod.replicate_seeds(int(rng), n, *fallback_scope)
        return engine.seed_states(pairs), int(rng)
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    return gen.integers(0, 2 ** 64, size=n, dtype=np.uint64), None


def simulate_csbp(f, z0: float, T: float, dt: Optional[float] = None,
                  rng=None, *, jump_cutoff: Optional[float] = None) -> CSBPPath:
    """Euler path on [0, T]; negative excursions truncate to absorption."""
    if z0 <= 0:
        raise ValueError("initial mass must be positive")
    dt = _resolve_dt(f, dt)
    drift, gauss, rate, tu, tr, _ = _euler_params(f, jump_cutoff)
    n_steps = int(math.ceil(T / dt - 1e-9))
    states, seed = _states_for(rng, 1, ("csbp", "path"))
    obs = np.arange(1, n_steps + 1, dtype=np.int64)
    out_z = np.empty((1, n_steps), dtype=np.float64)
    out_abs = np.empty(1, dtype=np.bool_)
    engine.csbp_batch(states, float(z0), dt, n_steps, obs,
                      drift, gauss, rate, tu, tr, out_z, out_abs)
    times = np.concatenate([[0.0], obs * dt])
    z = np.concatenate([[z0], out_z[0]])
    return CSBPPath(times, z, bool(out_abs[0]), mechanism=f, seed=seed)


def simulate_ensemble(f, z0: float, T: float, n_paths: int, *,
                      dt: Optional[float] = None, master_seed: int = 0,
                      obs_times: Optional[Sequence[float]] = None,
                      jump_cutoff: Optional[float] = None) -> CSBPEnsemble:
    """Independent paths recorded on a coarse observation grid."""
    if z0 <= 0:
        raise ValueError("initial mass must be positive")
    dt = _resolve_dt(f, dt)
    drift, gauss, rate, tu, tr, _ = _euler_params(f, jump_cutoff)
    n_steps = int(math.ceil(T / dt - 1e-9))
    if obs_times is None:
        obs_times = [T]
    obs_steps = np.unique(np.clip(
        np.round(np.asarray(obs_times, dtype=float) / dt).astype(np.int64),
        1, n_steps))
    pairs = rngmod.replicate_seeds(master_seed, n_paths, "csbp", "ensemble")
    states = engine.seed_states(pairs)
    out_z = np.empty((n_paths, obs_steps.size), dtype=np.float64)
    out_abs = np.empty(n_paths, dtype=np.bool_)
    engine.csbp_batch(states, float(z0), dt, n_steps, obs_steps,
                      drift, gauss, rate, tu, tr, out_z, out_abs)
    times = np.concatenate([[0.0], obs_steps * dt])
    z = np.concatenate([np.full((n_paths, 1), float(z0)), out_z], axis=1)
    return CSBPEnsemble(times, z, out_abs, mechanism=f, master_seed=master_seed)


# ---------------------------------------------------------------------------
# scaled long-run diagnostics

@dataclass
class SenetaHeydeSummary:
    """Empirical law of exp(-rate*y) Z_y over an increasing slice ladder."""

    slice_times: np.ndarray
    rate: float
    values: np.ndarray          # (n_paths, n_slices) normalized masses
    zero_fraction: np.ndarray   # per slice
    ks_consecutive: np.ndarray  # KS distance between neighbouring slices

    def stabilized(self) -> bool:
        """Heuristic: distances shrink along the ladder.  Diagnostic only."""
        k = self.ks_consecutive
        return bool(k.size >= 2 and k[-1] <= k[0])


def _ks_distance(a: np.ndarray, b: np.ndarray) -> float:
    grid = np.unique(np.concatenate([a, b]))
    fa = np.searchsorted(np.sort(a), grid, side="right") / a.size
    fb = np.searchsorted(np.sort(b), grid, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def _growth_rate(f) -> float:
    if hasattr(f, "lam"):
        return float(f.lam)
    if hasattr(f, "alpha"):
        return float(f.alpha)
    raise TypeError("cannot infer the mean growth rate of this rate function")


def seneta_heyde_estimate(f, paths, *,
                          slice_times: Optional[Sequence[float]] = None
                          ) -> SenetaHeydeSummary:
    """Track exp(-rate*y) Z_y across slices of an ensemble.

    Stabilization of the slice laws is reported as a diagnostic; it is
    evidence, not proof, of a nondegenerate normalized limit.
    """
    if isinstance(paths, CSBPEnsemble):
        times, zmat = paths.times, paths.z
    else:
        plist = list(paths)
        times = plist[0].times
        for p in plist[1:]:
            if not np.array_equal(p.times, times):
                raise ValueError("paths must share one observation grid")
        zmat = np.stack([p.z for p in plist])
    rate = _growth_rate(f)
    if slice_times is None:
        tmax = times[-1]
        lo = np.searchsorted(times, tmax / 3.0)
        idx = np.unique(np.linspace(lo, times.size - 1, 6).astype(int))
    else:
        idx = np.searchsorted(times, np.asarray(slice_times, dtype=float))
        idx = np.clip(idx, 0, times.size - 1)
    ys = times[idx]
    vals = zmat[:, idx] * np.exp(-rate * ys)[None, :]
    zero_frac = np.mean(vals == 0.0, axis=0)
    ks = np.array([_ks_distance(vals[:, j], vals[:, j + 1])
                   for j in range(len(idx) - 1)])
    return SenetaHeydeSummary(ys, rate, vals, zero_frac, ks)


# ---------------------------------------------------------------------------
# delimited I/O

def write_path_csv(path: CSBPPath, file) -> None:
    close = False
    if isinstance(file, (str, bytes)) or hasattr(file, "__fspath__"):
        file = open(file, "w", newline="")
        close = True
    try:
        w = csv.writer(file)
        w.writerow(["t", "z", "absorbed"])
        for t, z in zip(path.times, path.z):
            w.writerow([repr(float(t)), repr(float(z)), int(z == 0.0)])
    finally:
        if close:
            file.close()


def read_path_csv(file, mechanism=None) -> CSBPPath:
    close = False
    if isinstance(file, (str, bytes)) or hasattr(file, "__fspath__"):
        file = open(file, "r", newline="")
        close = True
    try:
        rd = csv.reader(file)
        header = next(rd)
        if [h.strip() for h in header[:3]] != ["t", "z", "absorbed"]:
            raise ValueError("expected header t,z,absorbed")
        ts, zs = [], []
        for row in rd:
            if not row:
                continue
            ts.append(float(row[0]))
            zs.append(float(row[1]))
    finally:
        if close:
            file.close()
    z = np.asarray(zs)
    return CSBPPath(np.asarray(ts), z, bool(z.size and z[-1] == 0.0),
                    mechanism=mechanism)
