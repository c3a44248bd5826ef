"""Deterministic solvers for the nonlinear reaction–diffusion evolution.

Three entry points: `solve_fkpp` marches the semilinear equation

    du/dt = 1/2 u_xx + c u_x - psi(u)

forward in time, `linear_moment` applies the drifted heat semigroup with
exponential mass growth to a payoff, and `solve_exit_bvp` solves the
stationary two-point problem 0 = 1/2 u_xx - c u_x - psi(u) on a window.
These are the analytic halves of the Monte Carlo cross-checks elsewhere.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline
from scipy.linalg import solve_banded


@dataclass
class GridFunction:
    """Values on a uniform spatial grid, optionally with a time axis.

    `values` has shape (nx,) for a static profile or (nt, nx) for a
    space-time block. `meta` records the boundary treatment, the trusted
    margin, and solver diagnostics.
    """

    x: np.ndarray
    values: np.ndarray
    t: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.x.ndim != 1 or self.x.size < 3:
            raise ValueError("grid needs at least 3 strictly increasing points")
        if np.any(np.diff(self.x) <= 0):
            raise ValueError("grid must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("values must be finite")
        if self.t is not None:
            self.t = np.asarray(self.t, dtype=float)
            if self.values.shape != (self.t.size, self.x.size):
                raise ValueError("values shape must be (nt, nx)")
        elif self.values.shape != self.x.shape:
            raise ValueError("values shape must match the grid")

    @property
    def nx(self) -> int:
        return self.x.size

    @property
    def is_spacetime(self) -> bool:
        return self.t is not None

    def final(self) -> "GridFunction":
        if self.t is None:
            return self
        return GridFunction(self.x, self.values[-1].copy(), meta=dict(self.meta))

    def at_time(self, i: int) -> np.ndarray:
        if self.t is None:
            raise ValueError("static profile has no time axis")
        return self.values[i]

    def trusted_mask(self) -> np.ndarray:
        """Points far enough from the boundary to be unaffected by it."""
        m = float(self.meta.get("margin", 0.0))
        return (self.x >= self.x[0] + m) & (self.x <= self.x[-1] - m)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "t", "value"])
            tgrid = self.t if self.t is not None else np.array([0.0])
            vals = self.values if self.t is not None else self.values[None, :]
            for j, tj in enumerate(tgrid):
                for i, xi in enumerate(self.x):
                    w.writerow([repr(float(xi)), repr(float(tj)),
                                repr(float(vals[j, i]))])


def read_grid_csv(path) -> GridFunction:
    xs, ts, vs = [], [], []
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if [h.strip() for h in header] != ["x", "t", "value"]:
            raise ValueError("expected header x,t,value")
        for row in r:
            xs.append(float(row[0])); ts.append(float(row[1])); vs.append(float(row[2]))
    x = np.unique(xs)
    t = np.unique(ts)
    vals = np.full((t.size, x.size), np.nan)
    xi = np.searchsorted(x, xs)
    ti = np.searchsorted(t, ts)
    vals[ti, xi] = vs
    if np.any(~np.isfinite(vals)):
        raise ValueError("grid file does not cover the full x/t rectangle")
    if t.size == 1:
        return GridFunction(x, vals[0])
    return GridFunction(x, vals, t=t)


# ---------------------------------------------------------------------------


def _psi_table(mech, top: float):
    """Cubic spline of psi on [0, top], with the zeros of psi pinned as nodes.

    Quadrature-backed mechanisms are too slow to evaluate on every grid
    point of every time step, so psi is sampled once. Pinning 0 (and the
    largest root when it exists) keeps the stationary states exact.
    """
    nodes = np.linspace(0.0, top, 4097)
    root = None
    try:
        from .mechanism import critical_constants
        root = critical_constants(mech).largest_root
    except ValueError:
        pass
    if root is not None and 0.0 < root < top:
        nodes = np.unique(np.concatenate([nodes, [root]]))
    vals = np.array([mech.eval_psi(float(u)) for u in nodes])
    if root is not None and 0.0 < root < top:
        vals[np.searchsorted(nodes, root)] = 0.0
    sp = CubicSpline(nodes, vals)
    slope0 = mech.eval_psi_prime(0.0)

    def f(u):
        u = np.asarray(u, dtype=float)
        out = np.where(u >= 0.0, sp(np.clip(u, 0.0, top)), slope0 * u)
        return out

    return f


def _margin(T: float, c: float) -> float:
    return 4.0 * math.sqrt(T) + abs(c) * T


def solve_fkpp(mech, initial: GridFunction, c: float, T: float, *,
               dt: Optional[float] = None, dt_safety: float = 1.0,
               store: int = 201) -> GridFunction:
    """March the semilinear equation from `initial` for time T.

    Second-order central differences in space; the linear part (diffusion
    plus drift) is advanced by Crank-Nicolson, the reaction by explicit
    midpoint halves around it. Zero-flux boundaries: constants then evolve
    exactly by the space-free reaction flow, and boundary artifacts for
    non-flat data stay inside the recorded margin.
    """
    if initial.is_spacetime:
        raise ValueError("initial data must be a static profile")
    if T <= 0:
        raise ValueError("T must be positive")
    u0 = initial.values
    if np.any(u0 < 0):
        raise ValueError("initial data must be nonnegative")
    x = initial.x
    h = float(x[1] - x[0])
    if not np.allclose(np.diff(x), h, rtol=1e-9):
        raise ValueError("grid must be uniform")

    margin = _margin(T, c)
    if (x[-1] - x[0]) <= 2.0 * margin:
        raise ValueError("grid too narrow: boundary influence covers the window")

    top = float(u0.max())
    try:
        from .mechanism import critical_constants
        top = max(top, critical_constants(mech).largest_root)
    except ValueError:
        pass
    top = max(top * 1.05 + 1e-9, 1e-9)
    psi = _psi_table(mech, top)

    probe = np.linspace(0.0, top, 257)
    slope = max(abs(mech.eval_psi_prime(float(v))) for v in probe[:: 16])
    dt_stab = 0.1 / slope if slope > 0 else T
    step = dt if dt is not None else dt_safety * min(dt_stab, T / 16.0, 0.02)
    n_steps = max(1, math.ceil(T / step - 1e-12))
    step = T / n_steps
    stride = max(1, math.ceil((n_steps + 1) / store))

    # Crank-Nicolson factors for A = 1/2 D2 + c D1 with mirror ghosts
    n = x.size
    lower = np.full(n, 0.5 / h**2 - c / (2 * h))
    diag = np.full(n, -1.0 / h**2)
    upper = np.full(n, 0.5 / h**2 + c / (2 * h))
    upper[0] = 1.0 / h**2   # mirror ghost at the left end kills the drift term
    lower[-1] = 1.0 / h**2  # and at the right end
    ab_L = np.zeros((3, n))
    ab_R = np.zeros((3, n))
    k = step / 2.0
    ab_L[0, 1:] = -k * upper[:-1]
    ab_L[1, :] = 1.0 - k * diag
    ab_L[2, :-1] = -k * lower[1:]
    ab_R[0, 1:] = k * upper[:-1]
    ab_R[1, :] = 1.0 + k * diag
    ab_R[2, :-1] = k * lower[1:]

    def apply_R(v):
        out = ab_R[1] * v
        out[:-1] += ab_R[0, 1:] * v[1:]
        out[1:] += ab_R[2, :-1] * v[:-1]
        return out

    clipped = 0

    def react(v, tau):
        # two classic fourth-order substeps: the reaction flow carries the
        # whole burden for constant data, so it must stay near 1e-10
        nonlocal clipped
        out = v
        hh = tau / 2.0
        for _ in range(2):
            k1 = -psi(out)
            k2 = -psi(out + 0.5 * hh * k1)
            k3 = -psi(out + 0.5 * hh * k2)
            k4 = -psi(out + hh * k3)
            out = out + (hh / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        bad = out < 0
        if np.any(bad):
            worst = out[bad].min()
            if worst < -1e-12:
                raise RuntimeError(f"negative undershoot {worst:.3e}")
            clipped += int(bad.sum())
            out = np.where(bad, 0.0, out)
        return out

    u = u0.copy()
    times = [0.0]
    frames = [u.copy()]
    for m in range(1, n_steps + 1):
        u = react(u, step / 2.0)
        u = solve_banded((1, 1), ab_L, apply_R(u))
        u = react(u, step / 2.0)
        if m % stride == 0 or m == n_steps:
            times.append(m * step)
            frames.append(u.copy())
    if clipped > 0.2 * n_steps * n:
        raise RuntimeError("persistent clipping: solution pressed below zero")

    meta = {"boundary": "neumann", "margin": margin, "dt": step,
            "clipped": clipped, "drift": c}
    return GridFunction(x, np.array(frames), t=np.array(times), meta=meta)


# ---------------------------------------------------------------------------


def linear_moment(mech, g: Union[GridFunction, Callable], c: float, T: float, *,
                  x: Optional[np.ndarray] = None, nt: int = 51,
                  n_nodes: int = 80) -> GridFunction:
    """Expected payoff against the first-moment flow.

    v(x, t) = e^{alpha t} * E[g(x + c t + B_t)] for a Brownian B, computed
    by Gauss-Hermite quadrature. Accepts a callable payoff or a gridded one
    (interpolated by a cubic spline, valid only inside its own window).
    """
    if T <= 0:
        raise ValueError("T must be positive")
    nodes, weights = np.polynomial.hermite.hermgauss(n_nodes)
    weights = weights / math.sqrt(math.pi)

    if callable(g):
        payoff = g
        if x is None:
            raise ValueError("x grid required with a callable payoff")
        xv = np.asarray(x, dtype=float)
        meta = {"margin": 0.0}
    else:
        if g.is_spacetime:
            raise ValueError("payoff must be static")
        spline = CubicSpline(g.x, g.values)
        lo, hi = g.x[0], g.x[-1]

        def payoff(z):
            if np.any(z < lo - 1e-9) or np.any(z > hi + 1e-9):
                raise ValueError("grid too narrow for the requested horizon")
            return spline(np.clip(z, lo, hi))

        span = nodes[-1] * math.sqrt(2.0 * T) + abs(c) * T
        keep = (g.x >= lo + span) & (g.x <= hi - span)
        if x is not None:
            xv = np.asarray(x, dtype=float)
        else:
            if not np.any(keep):
                raise ValueError("grid too narrow for the requested horizon")
            xv = g.x[keep]
        meta = {"margin": 0.0, "source_window": (float(lo), float(hi))}

    alpha = mech.alpha
    tgrid = np.linspace(0.0, T, nt)
    out = np.empty((nt, xv.size))
    for j, t in enumerate(tgrid):
        if t == 0.0:
            out[j] = np.asarray(payoff(xv), dtype=float)
            continue
        shift = xv + c * t
        sig = math.sqrt(2.0 * t)
        acc = np.zeros_like(xv)
        for z, w in zip(nodes, weights):
            acc += w * np.asarray(payoff(shift + sig * z), dtype=float)
        out[j] = math.exp(alpha * t) * acc
    return GridFunction(xv, out, t=tgrid, meta=meta)


# ---------------------------------------------------------------------------


def _solve_exit_rising(mech, c: float, theta: float, L: float, psi,
                       psi_prime, *, h, tol, L_cap, flat_tol, top,
                       max_doublings: int) -> GridFunction:
    """Decaying-to-zero exit profile, built in two stages.

    Stage 1 pins the orbit: Newton on [0, R] with u(0) = theta and a
    root-approach Robin closure at R, where the root is a saddle and the
    closure is therefore selective. Stage 2 marches the plane ODE from
    the barrier slope leftward, which is stable because both modes decay
    in that direction, and verifies the assembled central-difference
    residual on the returned window.
    """
    from .mechanism import critical_constants

    disc = c * c - 2.0 * mech.alpha
    if disc <= 0:
        raise RuntimeError("drift below the critical speed: no decaying profile")
    slow = c - math.sqrt(disc)

    n0 = int(round(L / (h if h is not None else min(1e-3, L / 1000.0)))) + 1
    if theta == 0.0:
        grid = np.linspace(-L, 0.0, min(max(n0, 201), 40001))
        meta = {"orientation": "subcritical", "drift": c, "theta": 0.0,
                "window": L, "newton_residual": 0.0,
                "barrier_slope": 0.0, "extension": 0.0}
        return GridFunction(grid, np.zeros_like(grid), meta=meta)

    try:
        root = critical_constants(mech).largest_root
    except ValueError:
        raise RuntimeError("the rising exit profile climbs toward the largest "
                           "root of the branching nonlinearity, which this "
                           "mechanism does not have")
    if theta >= root * (1.0 - 1e-9):
        raise RuntimeError("barrier value at or above the largest root: the "
                           "profile cannot decay away from it")

    # the far tail leaves the window at the slow rate, so the final width
    # is predictable; refuse upfront if the doubling cap cannot reach it
    if theta > flat_tol:
        predicted = math.log(theta / flat_tol) / max(slow, 1e-12)
        if predicted > 1.02 * L_cap:
            raise RuntimeError("window cap exceeded before the far end went flat")

    # --- stage 1: companion solve on [0, R] ---------------------------
    dpr = float(mech.eval_psi_prime(root))
    mt = -c + math.sqrt(c * c + 2.0 * dpr)
    R = math.log((root - theta) / (1e-5 * root)) / mt + 2.0
    step = h if h is not None else 1e-3
    nr = min(max(int(round(R / step)) + 1, 201), 100001)
    xg = np.linspace(0.0, R, nr)
    hr = xg[1] - xg[0]
    u = root - (root - theta) * np.exp(-mt * xg)
    u[0] = theta

    def rising_residual(w):
        mid = (0.5 * (w[:-2] - 2 * w[1:-1] + w[2:]) / hr**2
               - c * (w[2:] - w[:-2]) / (2 * hr) - psi(w[1:-1]))
        # ghost row at R: centred u' matches the saddle approach rate
        last = ((w[-2] - w[-1]) / hr**2 + (mt / hr - c * mt) * (root - w[-1])
                - psi(w[-1:])[0])
        return np.concatenate([mid, [last]])

    trace = []
    converged = False
    for it in range(100):
        F = rising_residual(u)
        res = float(np.max(np.abs(F)))
        scaled = res * hr * hr
        trace.append(scaled)
        # the barrier slope feeds the whole window, so iterate down to the
        # roundoff floor rather than stopping at the verification tolerance
        if scaled < 1e-14:
            converged = True
            break
        m = F.size
        band = np.zeros((3, m))
        band[0, 1:] = 0.5 / hr**2 - c / (2 * hr)
        band[1, :-1] = -1.0 / hr**2 - psi_prime(u[1:-1])
        band[2, :-1] = 0.5 / hr**2 + c / (2 * hr)
        band[1, -1] = -1.0 / hr**2 - mt / hr + c * mt - psi_prime(u[-1:])[0]
        band[2, -2] = 1.0 / hr**2
        delta = solve_banded((1, 1), band, -F)

        s = 1.0
        improved = False
        while s > 2**-30:
            w = u.copy()
            w[1:] = u[1:] + s * delta
            if w.max() < top and float(np.max(np.abs(rising_residual(w)))) \
                    < (1 - 0.25 * s) * res:
                improved = True
                break
            s *= 0.5
        if not improved:
            converged = scaled < tol
            break
        u[1:] += s * delta
    if not converged:
        raise RuntimeError(f"Newton stalled; residual trace {trace[-6:]}")

    # one-sided 4th order barrier slope off the companion grid
    s0 = (-25.0 * u[0] + 48.0 * u[1] - 36.0 * u[2] + 16.0 * u[3]
          - 3.0 * u[4]) / (12.0 * hr)

    # --- stage 2: stable leftward march -------------------------------
    def plane(x, y):
        return (y[1], 2.0 * (c * y[1] + float(psi(y[0:1])[0])))

    for attempt in range(max_doublings + 1):
        step = h if h is not None else min(1e-3, L / 1000.0)
        n = min(max(int(round(L / step)) + 1, 201), 40001)
        grid = np.linspace(-L, 0.0, n)
        hh = grid[1] - grid[0]
        sol = solve_ivp(plane, (0.0, -L), [theta, s0], method="DOP853",
                        rtol=1e-12, atol=1e-16, dense_output=True)
        if sol.status != 0:
            raise RuntimeError("leftward march failed before reaching the window edge")
        u = sol.sol(grid)[0]
        u[-1] = theta

        def window_residual(w):
            return (0.5 * (w[:-2] - 2 * w[1:-1] + w[2:]) / hh**2
                    - c * (w[2:] - w[:-2]) / (2 * hh) - psi(w[1:-1]))

        scaled = float(np.max(np.abs(window_residual(u)))) * hh * hh
        if scaled >= tol:
            # polish: both ends already carry the orbit, so damped Newton
            # from the marched guess only smooths discretization error
            for it in range(80):
                F = window_residual(u)
                res = float(np.max(np.abs(F)))
                scaled = res * hh * hh
                if scaled < tol:
                    break
                m = F.size
                band = np.zeros((3, m))
                band[0, 1:] = 0.5 / hh**2 - c / (2 * hh)
                band[1, :] = -1.0 / hh**2 - psi_prime(u[1:-1])
                band[2, :-1] = 0.5 / hh**2 + c / (2 * hh)
                delta = solve_banded((1, 1), band, -F)
                s = 1.0
                while s > 2**-30:
                    w = u.copy()
                    w[1:-1] = u[1:-1] + s * delta
                    if w.max() < top and \
                            float(np.max(np.abs(window_residual(w)))) \
                            < (1 - 0.25 * s) * res:
                        break
                    s *= 0.5
                u[1:-1] += s * delta
            if scaled >= tol:
                raise RuntimeError(f"verification residual stalled at {scaled:g}")

        probe = max(1, int(0.05 * n))
        gap = abs(u[probe])
        if gap < flat_tol:
            meta = {"orientation": "subcritical", "drift": c, "theta": theta,
                    "window": L, "newton_residual": scaled,
                    "barrier_slope": s0, "extension": R}
            return GridFunction(grid, u, meta=meta)
        need = L + math.log(gap / flat_tol) / max(slow, 1e-3) + 1.0
        L = min(2.0 * L, max(1.5 * L, need))
        if L > L_cap:
            raise RuntimeError("window cap exceeded before the far end went flat")
    raise RuntimeError("window cap exceeded before the far end went flat")


def solve_exit_bvp(mech, c: float, theta: float, L: float, *,
                   orientation: str = "subcritical", h: Optional[float] = None,
                   tol: float = 1e-10, max_doublings: int = 6) -> GridFunction:
    """Stationary profile on [-L, 0] with u(0) = theta.

    0 = 1/2 u_xx - c u_x - psi(u). The far end decays to the constant
    state the orientation selects (0, or the largest root of psi) and the
    window doubles until the profile is flat there.

    Near zero the equation has two decaying modes, at rates
    c -/+ sqrt(c^2 - 2 alpha), so a window ending at height zero cannot
    tell the physical profile from its neighbours by any local boundary
    row: the selecting condition sits at the root, beyond the barrier.
    The subcritical orientation therefore first solves a well-posed
    companion problem on [0, R] (barrier value pinned, root-approach
    closure at R), reads the barrier slope off it, and fills [-L, 0] by
    marching the plane ODE downhill, where both modes contract. The
    central-difference Newton rows then act as a verification pass. At
    the root the state is a saddle, so the supercritical orientation
    keeps a plain Dirichlet far pin.
    """
    if theta < 0:
        raise ValueError("theta must be nonnegative")
    if orientation == "subcritical":
        u_far = 0.0
    elif orientation == "supercritical":
        from .mechanism import critical_constants
        u_far = critical_constants(mech).largest_root
    else:
        raise ValueError("orientation must be subcritical or supercritical")

    top = max(theta, u_far)
    try:
        from .mechanism import critical_constants
        top = max(top, critical_constants(mech).largest_root)
    except ValueError:
        pass
    top = top * 1.5 + 1.0
    psi = _psi_table(mech, top)

    def psi_prime(u):
        eps = 1e-6
        return (psi(u + eps) - psi(u - eps)) / (2 * eps)

    flat_tol = 1e-8
    L_cap = L * 2.0**max_doublings

    if orientation == "subcritical":
        return _solve_exit_rising(mech, c, theta, L, psi, psi_prime,
                                  h=h, tol=tol, L_cap=L_cap,
                                  flat_tol=flat_tol, top=top,
                                  max_doublings=max_doublings)

    for attempt in range(max_doublings + 1):
        step = h if h is not None else min(1e-3, L / 1000.0)
        n = int(round(L / step)) + 1
        n = min(max(n, 201), 40001)
        grid = np.linspace(-L, 0.0, n)
        hh = grid[1] - grid[0]

        rate = max(c, 1.0)
        u = u_far + (theta - u_far) * np.exp(rate * grid)
        u[-1] = theta
        u[0] = u_far

        def full_residual(w):
            return (0.5 * (w[:-2] - 2 * w[1:-1] + w[2:]) / hh**2
                    - c * (w[2:] - w[:-2]) / (2 * hh) - psi(w[1:-1]))

        converged = False
        trace = []
        for it in range(80):
            F = full_residual(u)
            res = float(np.max(np.abs(F)))
            # measure convergence in h^2-scaled units: the raw residual
            # carries a 1/h^2 factor, whose roundoff floor alone would
            # exceed any honest tolerance on fine grids
            trace.append(res * hh * hh)
            if res * hh * hh < tol:
                converged = True
                break
            m = F.size
            band = np.zeros((3, m))
            band[0, 1:] = 0.5 / hh**2 - c / (2 * hh)
            band[1, :] = -1.0 / hh**2 - psi_prime(u[1:-1])
            band[2, :-1] = 0.5 / hh**2 + c / (2 * hh)
            delta = solve_banded((1, 1), band, -F)

            s = 1.0
            while s > 2**-30:
                w = u.copy()
                w[1:-1] = u[1:-1] + s * delta
                if w.max() < top and float(np.max(np.abs(full_residual(w)))) \
                        < (1 - 0.25 * s) * res:
                    break
                s *= 0.5
            u[1:-1] += s * delta
        if not converged:
            raise RuntimeError(f"Newton stalled; residual trace {trace[-6:]}")

        probe = max(1, int(0.05 * n))
        gap = abs(u[probe] - u_far)
        if gap < flat_tol:
            meta = {"orientation": orientation, "drift": c, "theta": theta,
                    "window": L, "newton_residual": trace[-1]}
            return GridFunction(grid, u, meta=meta)
        # widen by the amount the observed gap predicts, never more than a
        # doubling per attempt; overshooting would leave the far closure
        # numerically idle, so the estimate matters as much as the cap
        need = L + math.log(gap / flat_tol) / max(rate, 1e-3) + 1.0
        L = min(2.0 * L, max(1.5 * L, need))
        if L > L_cap:
            raise RuntimeError("window cap exceeded before the far end went flat")
    raise RuntimeError("window cap exceeded before the far end went flat")
