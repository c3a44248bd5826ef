"""Embedded exit mechanisms and travelling-wave profiles.

Writing the slope of a monotone front as a function of its height turns the
second-order wave equation into a first-order balance between the squared
slope and the branching nonlinearity. Both exit directions live on that one
phase plane: the supercritical curve is the connecting orbit between the
origin and the largest root of the mechanism, and the subcritical curve
continues past the root along the outgoing branch. The rest of the module
is bookkeeping around that curve: tabulation, the height-to-position
quadrature, tail regressions, and the integral test for finite-time
absorption.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline, PchipInterpolator
from scipy.optimize import brentq

from .mechanism import critical_constants

__all__ = [
    "EmbeddedMechanism",
    "WaveProfile",
    "AsymptoticsReport",
    "GreyReport",
    "solve_embedded_mechanism",
    "wave_profile",
    "profile_residual",
    "fit_asymptotics",
    "grey_classifier",
    "read_embedded_csv",
    "read_profile_csv",
]

_DIRECTIONS = ("supercritical", "subcritical")


@dataclass
class EmbeddedMechanism:
    """Tabulated branching mechanism of a level-crossing mass process.

    ``f`` is nonpositive with zeros at 0 and at the largest root for the
    supercritical direction, and nonnegative on an unbounded height range
    for the subcritical one. ``lam`` is the exponential rate of the mean
    along the level index.
    """

    u: np.ndarray
    f: np.ndarray
    lam: float
    speed: float
    direction: str
    largest_root: Optional[float] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        self.f = np.asarray(self.f, dtype=float)
        if self.u.ndim != 1 or self.u.shape != self.f.shape or self.u.size < 8:
            raise ValueError("tabulation needs matching 1-d arrays, 8+ nodes")
        if not (np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.f))):
            raise ValueError("tabulation contains non-finite entries")
        if np.any(np.diff(self.u) <= 0):
            raise ValueError("height grid must be strictly increasing")
        if self.direction not in _DIRECTIONS:
            raise ValueError(f"direction must be one of {_DIRECTIONS}")
        if self.u[0] != 0.0 or self.f[0] != 0.0:
            raise ValueError("tabulation must start at the origin with f=0")
        if self.direction == "supercritical":
            if self.largest_root is None:
                raise ValueError("supercritical direction needs the largest root")
            if abs(self.u[-1] - self.largest_root) > 1e-9 * self.largest_root:
                raise ValueError("supercritical tabulation must end at the root")
            if abs(self.f[-1]) > 1e-8 * self.largest_root:
                raise ValueError("mechanism does not vanish at the root")
            if np.any(self.f[1:-1] >= 0.0):
                raise ValueError("supercritical values must be negative inside")
        else:
            if np.any(self.f[1:] < 0.0):
                raise ValueError("subcritical values must be nonnegative")
        self._interp = None

    def __call__(self, u):
        if self._interp is None:
            self._interp = PchipInterpolator(self.u, self.f, extrapolate=False)
        return self._interp(u)

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("u,f\n")
            for ui, fi in zip(self.u, self.f):
                fh.write(f"{float(ui)!r},{float(fi)!r}\n")


@dataclass
class WaveProfile:
    """Monotone front tabulated on a uniform grid, anchored at half height."""

    x: np.ndarray
    phi: np.ndarray
    lam: float
    lambar: float
    speed: float
    largest_root: float
    anchor_value: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.phi = np.asarray(self.phi, dtype=float)
        if self.x.ndim != 1 or self.x.shape != self.phi.shape or self.x.size < 16:
            raise ValueError("profile needs matching 1-d arrays, 16+ nodes")
        if np.any(np.diff(self.phi) >= 0.0):
            raise ValueError("profile must be strictly decreasing")
        if self.phi[0] >= self.largest_root or self.phi[-1] <= 0.0:
            raise ValueError("profile values must stay inside (0, root)")
        # window must be wide enough to be useful downstream
        if self.phi[0] <= 0.99 * self.largest_root \
                or self.phi[-1] >= 0.01 * self.largest_root:
            raise ValueError("profile window too narrow: the ends must clear "
                             "99% and 1% of the root")

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("x,phi\n")
            for xi, pi in zip(self.x, self.phi):
                fh.write(f"{float(xi)!r},{float(pi)!r}\n")


@dataclass
class AsymptoticsReport:
    regime: str
    k: float
    fitted_rate: float
    residual: float
    window: tuple
    n_points: int
    details: dict = field(default_factory=dict)


@dataclass
class GreyReport:
    verdict: str
    tail_exponent: float
    log_slope: float
    window: tuple


def read_embedded_csv(path, *, lam: float, speed: float, direction: str,
                      largest_root: Optional[float] = None) -> EmbeddedMechanism:
    """Rebuild a tabulated mechanism from its two-column serialisation."""
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    return EmbeddedMechanism(u=data[:, 0], f=data[:, 1], lam=lam, speed=speed,
                             direction=direction, largest_root=largest_root)


def read_profile_csv(path, *, lam: float, lambar: float, speed: float,
                     largest_root: float, anchor_value: float) -> WaveProfile:
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    return WaveProfile(x=data[:, 0], phi=data[:, 1], lam=lam, lambar=lambar,
                       speed=speed, largest_root=largest_root,
                       anchor_value=anchor_value)


# ---------------------------------------------------------------------------
# geometry helpers


def _geometry(mech):
    """Largest root and minimal-rate constants, tolerating formula inputs."""
    try:
        cc = critical_constants(mech)
        return cc.largest_root, cc.critical_rate
    except ValueError:
        alpha = getattr(mech, "alpha", None)
        if alpha is None or alpha <= 0.0:
            return None, None
        lo = 1e-8
        hi = 1.0
        while mech.eval_psi(hi) <= 0.0:
            hi *= 2.0
            if hi > 1e9:
                raise RuntimeError("no sign change found for the largest root")
        return brentq(mech.eval_psi, lo, hi, xtol=1e-14, rtol=1e-15), \
            math.sqrt(2.0 * alpha)


def _psi_log_table(mech, top: float) -> Callable:
    """Jump part sampled as a slowly varying factor on a log height grid.

    Quadrature-backed jump families can vary on logarithmic scales near
    zero (their second moment may diverge), so sampling on a linear grid
    would freeze exactly the structure the arrival slope depends on.
    Writing psi = -alpha u + beta u^2 + u w(ln u) and splining w in the log
    coordinate keeps that structure at every reachable height.
    """
    alpha, beta, levy = mech.alpha, mech.beta, mech.levy
    v = np.linspace(math.log(1e-10 * top), math.log(top), 1200)
    w = np.array([levy.psi_integral(math.exp(vi)) / math.exp(vi) for vi in v])
    sp = CubicSpline(v, w)
    v_lo, v_hi = float(v[0]), float(v[-1])

    def f(u):
        u = np.asarray(u, dtype=float)
        scalar = u.ndim == 0
        u = np.atleast_1d(u)
        out = np.where(u < 0.0, -alpha * u, 0.0)
        pos = u > 0.0
        up = u[pos]
        vv = np.clip(np.log(up), v_lo, v_hi)
        out[pos] = -alpha * up + beta * up * up + up * sp(vv)
        return float(out[0]) if scalar else out

    return f


def _psi_callable(mech, top: float) -> Callable:
    """Direct evaluation for cheap mechanisms, a sampled table otherwise."""
    levy = getattr(mech, "levy", None)
    if levy is not None and levy.family in ("log_heavy", "table"):
        return _psi_log_table(mech, top)

    def f(u):
        return mech.eval_psi(float(u))

    return f


def _integrate_branch(psi, c: float, span: tuple, y0: float, rtol: float,
                      scale: float, floor: float):
    """March the squared-slope balance F' = 2(cF + psi)/F along the span."""

    def rhs(u, y):
        return 2.0 * (c * y[0] + psi(u)) / y[0]

    def hit_floor(u, y):
        return y[0] - floor

    hit_floor.terminal = True
    # the orbit is followed down to heights of order 1e-9 of the scale, so
    # the absolute floor must sit well below that for rtol to stay in charge
    sol = solve_ivp(rhs, span, [y0], method="DOP853", rtol=rtol,
                    atol=1e-24 * scale, dense_output=True, events=hit_floor)
    if sol.status == -1:
        raise RuntimeError(f"slope integration failed: {sol.message}")
    return sol


# ---------------------------------------------------------------------------
# the connecting orbit (origin to largest root)


def _connect(mech, psi, root: float, c: float, lam: float, lambar: float,
             rtol: float):
    """Backward march from the root; returns the dense orbit and diagnostics.

    Seeding at the root is the stable way round: running toward the origin
    contracts onto the connecting orbit, so the series seed only has to be
    locally accurate. The arrival slope at the origin is then a genuine
    check rather than an input.
    """
    dpsi_root = mech.eval_psi_prime(root)
    if dpsi_root <= 0.0:
        raise RuntimeError("mechanism is degenerate at its largest root")
    mt = -c + math.sqrt(c * c + 2.0 * dpsi_root)
    b2 = -0.5 * mech.psi_second(root) / (1.5 * mt + c)
    v0 = 1e-6 * root
    u0 = root - v0
    g0 = mt * v0 + b2 * v0 * v0
    if g0 <= 0.0:
        raise RuntimeError("series seed at the root is not positive")

    u_lo = 5e-10 * root
    sol = _integrate_branch(psi, c, (u0, u_lo), g0, rtol, root,
                            floor=1e-13 * root)
    if sol.t_events[0].size:
        u_hit = sol.t_events[0][0]
        raise RuntimeError(
            "boundary mismatch: the connecting solution at speed "
            f"{c:.6g} returns to zero at height {u_hit:.6g} instead of the origin")

    # arrival slope, extrapolated several ways: linearly in the height for
    # mechanisms that are twice differentiable at 0, and in powers of
    # 1/log(height) when the approach is only logarithmic (minimal-speed
    # node, jump tails with infinite second moment)
    ua, ub, uc = 4e-9 * root, 2e-9 * root, 1e-9 * root
    sa = float(sol.sol(ua)[0]) / ua
    sb = float(sol.sol(ub)[0]) / ub
    sc = float(sol.sol(uc)[0]) / uc
    slope_lin = 2.0 * sc - sb
    xa, xb, xc = (1.0 / math.log(root / u) for u in (ua, ub, uc))
    slope_log = sc + (sc - sb) * xc / (xb - xc)
    x2b, x2c = xb * xb, xc * xc
    slope_log2 = sc + (sc - sb) * x2c / (x2b - x2c)
    # Lagrange value at x = 0 of the quadratic through the three probes
    slope_quad = (sa * xb * xc / ((xa - xb) * (xa - xc))
                  + sb * xa * xc / ((xb - xa) * (xb - xc))
                  + sc * xa * xb / ((xc - xa) * (xc - xb)))

    # a sharp check is only meaningful when the correction to the slope is
    # itself of order height: that needs psi'' finite at 0 and the rate
    # safely below critical, or the family term u^(2 alpha/lam^2 - 1)
    # decays too slowly at reachable probe heights
    sharp = lam < 0.8 * lambar and np.isfinite(mech.psi_second(0.0))
    if sharp:
        if abs(slope_lin - lam) > 1e-6 * max(1.0, lam):
            raise RuntimeError(
                "boundary mismatch: arrival slope "
                f"{slope_lin:.8g} does not match the decay rate {lam:.8g}")
    else:
        estimates = (slope_lin, slope_log, slope_log2, slope_quad)
        best = min(abs(s - lam) for s in estimates)
        if np.isfinite(mech.psi_second(0.0)):
            ok = best <= 5e-2 * max(1.0, lam)
        else:
            # jump tails with infinite second moment approach the rate
            # strictly from below (the jump part only adds to psi), and the
            # logarithmic correction is still sizable at probe heights, so
            # the raw-slope band is one sided and wide; wrong branches
            # either dive (caught above) or sit far from the rate. The cap
            # must admit the degenerate node at the critical rate, where
            # tails past x log^2 x push the correction above 1/log
            raw_gap = lam - sc
            ok = (-1e-3 * max(1.0, lam) <= raw_gap <= 0.4 * max(1.0, lam)
                  and best <= 0.2 * max(1.0, lam))
        if not ok:
            raise RuntimeError(
                "boundary mismatch: extrapolated arrival slope "
                f"{slope_quad:.6g} is incompatible with the decay rate {lam:.6g}")

    def orbit(u):
        u = np.asarray(u, dtype=float)
        out = np.empty_like(u)
        low = u <= u_lo
        high = u >= u0
        mid = ~(low | high)
        out[low] = lam * u[low]
        v = root - u[high]
        out[high] = mt * v + b2 * v * v
        if np.any(mid):
            out[mid] = sol.sol(u[mid])[0]
        return out

    diag = {"saddle_slope": mt, "slope_at_zero": slope_lin,
            "slope_log_extrapolated": slope_log,
            "slope_log2_extrapolated": slope_log2,
            "slope_quad_extrapolated": slope_quad, "sharp_arrival": sharp,
            "origin_gap": abs(float(sol.sol(u_lo)[0]) - lam * u_lo)}
    return orbit, diag


def _grid_inside(root: float, n_edge: int = 220, n_mid: int = 900) -> np.ndarray:
    lo = np.geomspace(1e-9, 0.08, n_edge) * root
    mid = np.linspace(0.08, 0.92, n_mid)[1:-1] * root
    hi = root - np.geomspace(1e-9, 0.08, n_edge)[::-1] * root
    return np.concatenate([[0.0], lo, mid, hi, [root]])


def solve_embedded_mechanism(mech, lam: Optional[float] = None,
                             direction: str = "supercritical", *,
                             speed: Optional[float] = None,
                             theta_max: Optional[float] = None,
                             rtol: float = 1e-12) -> EmbeddedMechanism:
    """Mechanism of the mass crossing a moving level, as a height tabulation.

    The supercritical direction tabulates the connecting orbit on [0, root];
    the subcritical one continues along the outgoing branch up to
    ``theta_max`` (default 100x the root). ``speed`` overrides the natural
    frame speed for the given rate; slower-than-critical frames have no
    monotone connection, which surfaces as a boundary mismatch error.
    """
    if direction not in _DIRECTIONS:
        raise ValueError(f"direction must be one of {_DIRECTIONS}")
    root, lambar = _geometry(mech)

    if root is None:
        # no positive root: only the subcritical branch exists, and the
        # origin is a saddle so the positive orbit is unique
        if direction != "subcritical":
            raise ValueError("mechanism has no positive root: "
                             "no supercritical exit direction")
        if lam is not None:
            raise ValueError("decay geometry is undefined without a root; "
                             "omit the rate")
        alpha = float(mech.alpha)
        c = speed if speed is not None else 1.0
        lam_out = c + math.sqrt(c * c - 2.0 * alpha)
        a2 = mech.psi_second(0.0) / (3.0 * lam_out - 2.0 * c)
        theta = theta_max if theta_max is not None else 1e4
        u0 = 1e-8
        y0 = lam_out * u0 + a2 * u0 * u0
        psi = _psi_callable(mech, 1.001 * theta)
        sol = _integrate_branch(psi, c, (u0, theta), y0, rtol, 1.0,
                                floor=1e-30)
        if sol.t_events[0].size:
            raise RuntimeError("outgoing branch collapsed to zero")
        u = np.concatenate([[0.0], np.geomspace(u0, theta, 400)])
        f = np.concatenate([[0.0], sol.sol(u[1:])[0]])
        meta = {"theta": theta, "slope_at_zero": lam_out, "lambar": None,
                "_flow": None}
        return EmbeddedMechanism(u=u, f=f, lam=lam_out, speed=c,
                                 direction=direction, largest_root=None,
                                 meta=meta)

    if lam is None:
        if direction == "supercritical":
            raise ValueError("the supercritical direction needs a decay rate")
        lam = lambar
    if not (0.0 < lam <= lambar * (1.0 + 1e-12)):
        raise ValueError("decay rate must lie in (0, critical rate]")
    lam = min(float(lam), lambar)
    c = speed if speed is not None else float(mech.alpha) / lam + lam / 2.0

    psi_fine = _psi_callable(mech, 1.02 * root)
    orbit, diag = _connect(mech, psi_fine, root, c, lam, lambar, rtol)
    u_in = _grid_inside(root)
    f_in = np.concatenate([[0.0], -orbit(u_in[1:-1]), [0.0]])

    if direction == "supercritical":
        meta = {"lambar": lambar, "_flow": orbit, **diag}
        return EmbeddedMechanism(u=u_in, f=f_in, lam=lam, speed=c,
                                 direction=direction, largest_root=root,
                                 meta=meta)

    theta = theta_max if theta_max is not None else 100.0 * root
    if theta <= 1.5 * root:
        raise ValueError("theta_max must exceed the root comfortably")
    dpsi_root = mech.eval_psi_prime(root)
    s_plus = c + math.sqrt(c * c + 2.0 * dpsi_root)
    b2p = 0.5 * mech.psi_second(root) / (1.5 * s_plus - c)
    w0 = 1e-6 * root
    y0 = s_plus * w0 + b2p * w0 * w0
    psi_tail = _psi_callable(mech, 1.001 * theta)
    sol_out = _integrate_branch(psi_tail, c, (root + w0, theta), y0, rtol,
                                root, floor=1e-30)
    if sol_out.t_events[0].size:
        raise RuntimeError("outgoing branch collapsed to zero")
    u_out = root + np.geomspace(w0, theta - root, 240)
    f_out = sol_out.sol(u_out)[0]
    u = np.concatenate([u_in, u_out])
    f = np.concatenate([-f_in, f_out])
    meta = {"lambar": lambar, "theta": theta, "outgoing_slope": s_plus,
            "_flow": None, **diag}
    return EmbeddedMechanism(u=u, f=f, lam=lam, speed=c, direction=direction,
                             largest_root=root, meta=meta)


# ---------------------------------------------------------------------------
# profiles


def wave_profile(embedded: EmbeddedMechanism, *, dx: float = 0.01,
                 hi_frac: float = 0.9925, lo_frac: float = 1e-7,
                 anchor: Optional[float] = None) -> WaveProfile:
    """Integrate height against position from the half-root anchor.

    The front is the solution of dPhi/dx = f(Phi) started at the anchor
    height (half the root unless overridden), run both ways until it clears
    ``hi_frac`` on the left and ``lo_frac`` on the right (as fractions of
    the root). The tail must go deep enough for the asymptotic regressions
    to see past the crossover region.
    """
    if embedded.direction != "supercritical":
        raise ValueError("profiles exist for the supercritical direction only")
    root = embedded.largest_root
    flow = embedded.meta.get("_flow")
    if flow is None:
        interp = PchipInterpolator(embedded.u, embedded.f, extrapolate=False)

        def flow(u):
            return -interp(u)

    lam = embedded.lam
    mt = embedded.meta.get("saddle_slope", lam)
    y0 = 0.5 * root if anchor is None else float(anchor)
    if not lo_frac * root < y0 < hi_frac * root:
        raise ValueError("anchor height must sit strictly between the "
                         "window thresholds")

    def rhs(z, y):
        return -flow(np.asarray([y[0]]))[0]

    def hit_lo(z, y):
        return y[0] - lo_frac * root

    hit_lo.terminal = True

    def hit_hi(z, y):
        return y[0] - hi_frac * root

    hit_hi.terminal = True

    z_fwd = 1.5 * (-math.log(lo_frac)) / lam + 16.0
    z_bck = 1.5 * (-math.log(1.0 - hi_frac)) / mt + 16.0
    fwd = solve_ivp(rhs, (0.0, z_fwd), [y0], method="DOP853", rtol=1e-12,
                    atol=1e-14 * root, dense_output=True, events=hit_lo)
    bck = solve_ivp(rhs, (0.0, -z_bck), [y0], method="DOP853", rtol=1e-12,
                    atol=1e-14 * root, dense_output=True, events=hit_hi)
    if not fwd.t_events[0].size or not bck.t_events[0].size:
        raise RuntimeError("window cap exceeded before the profile cleared "
                           "its thresholds")
    x_max = fwd.t_events[0][0]
    x_min = bck.t_events[0][0]

    def evaluate(xq):
        arr = np.atleast_1d(np.asarray(xq, dtype=float))
        out = np.empty_like(arr)
        neg = arr < 0.0
        if np.any(neg):
            out[neg] = bck.sol(arr[neg])[0]
        if np.any(~neg):
            out[~neg] = fwd.sol(arr[~neg])[0]
        return out if np.ndim(xq) else float(out[0])

    x = np.arange(math.ceil(x_min / dx), math.floor(x_max / dx) + 1) * dx
    phi = np.empty_like(x)
    neg = x < 0.0
    phi[neg] = bck.sol(x[neg])[0]
    phi[~neg] = fwd.sol(x[~neg])[0]
    i0 = np.searchsorted(x, 0.0)
    if i0 < x.size and x[i0] == 0.0:
        phi[i0] = y0
    return WaveProfile(x=x, phi=phi, lam=lam,
                       lambar=embedded.meta.get("lambar", lam),
                       speed=embedded.speed, largest_root=root,
                       anchor_value=y0,
                       meta={"dx": dx, "window": (float(x[0]), float(x[-1])),
                             "_eval": evaluate})


def profile_residual(profile: WaveProfile, mech) -> float:
    """Largest pointwise defect of the wave equation on the profile grid.

    Fourth-order central stencils; the two edge points on each side are
    excluded.
    """
    h = profile.meta.get("dx")
    if h is None:
        h = float(profile.x[1] - profile.x[0])
    p = profile.phi
    d1 = (p[:-4] - 8.0 * p[1:-3] + 8.0 * p[3:-1] - p[4:]) / (12.0 * h)
    d2 = (-p[:-4] + 16.0 * p[1:-3] - 30.0 * p[2:-2] + 16.0 * p[3:-1]
          - p[4:]) / (12.0 * h * h)
    psi = _psi_callable(mech, float(np.max(p)) * 1.02)
    vals = np.array([psi(v) for v in p[2:-2]], dtype=float)
    res = 0.5 * d2 + profile.speed * d1 - vals
    return float(np.max(np.abs(res)))


# ---------------------------------------------------------------------------
# tail asymptotics


def _line_fit(x: np.ndarray, y: np.ndarray):
    coef = np.polyfit(x, y, 1)
    resid = y - np.polyval(coef, x)
    return coef[0], coef[1], float(np.max(np.abs(resid)))


def fit_asymptotics(profile: WaveProfile, *, hi_frac: float = 3e-5,
                    resid_tol: float = 0.15,
                    margin: float = 0.45) -> AsymptoticsReport:
    """Classify the far tail as plain exponential or log-corrected decay.

    Both candidate models have their decay rate pinned: the plain model
    decays at the profile's own rate, the corrected one at the minimal rate
    with an extra factor of position. Only the prefactor is free, so the
    worst centered residual measures how well each shape explains the tail.
    The regime tag is emitted when the winner is both small and clearly
    ahead of the loser; otherwise the report is inconclusive.
    """
    scale = profile.largest_root
    mask = (profile.phi < hi_frac * scale) & (profile.phi > 0.0) \
        & (profile.x > 0.0)
    if int(mask.sum()) < 30:
        raise ValueError("profile tail too short for an asymptotic fit; "
                         "extend it below 1e-4 of the root and beyond "
                         f"{hi_frac:g} of it")
    x = profile.x[mask]
    y = np.log(profile.phi[mask])
    y_e = y + profile.lam * x
    y_l = y + profile.lambar * x - np.log(x)
    k_e, k_l = math.exp(float(np.mean(y_e))), math.exp(float(np.mean(y_l)))
    resid_e = float(np.max(np.abs(y_e - np.mean(y_e))))
    resid_l = float(np.max(np.abs(y_l - np.mean(y_l))))
    free_rate = -_line_fit(x, y)[0]
    details = {"exp_k": k_e, "exp_residual": resid_e, "log_k": k_l,
               "log_residual": resid_l, "free_rate": free_rate}
    if resid_e <= resid_l:
        regime, k, resid, other = "pure-exponential", k_e, resid_e, resid_l
    else:
        regime, k, resid, other = "log-corrected", k_l, resid_l, resid_e
    if resid > resid_tol or resid > margin * other:
        regime = "inconclusive"
    return AsymptoticsReport(regime=regime, k=k, fitted_rate=free_rate,
                             residual=resid,
                             window=(float(x[0]), float(x[-1])),
                             n_points=int(x.size), details=details)


# ---------------------------------------------------------------------------
# finite-time absorption test


def grey_classifier(embedded: EmbeddedMechanism,
                    direction: Optional[str] = None) -> GreyReport:
    """Convergence of the reciprocal tail integral, read off a log-log fit.

    The integral of 1/f over the far tail converges exactly when f outgrows
    the height times a log power above one. Regressing log f minus log u
    against log log u turns that boundary into a slope threshold: safely
    above one converges ('holds'), safely below diverges ('fails').
    """
    if direction is not None and direction != embedded.direction:
        raise ValueError("direction tag disagrees with the tabulation")
    if embedded.direction != "subcritical":
        raise ValueError("the absorption test reads the unbounded branch; "
                         "build the subcritical direction")
    theta = float(embedded.u[-1])
    scale = embedded.largest_root if embedded.largest_root else 1.0
    v_top = theta / scale
    lo = scale * v_top ** 0.7
    uu = np.geomspace(lo, theta * (1.0 - 1e-12), 80)
    ff = embedded(uu)
    if np.any(~np.isfinite(ff)) or np.any(ff <= 0.0):
        raise RuntimeError("tail tabulation is not positive on the window")
    p, _, _ = _line_fit(np.log(uu), np.log(ff))
    q, _, _ = _line_fit(np.log(np.log(uu)), np.log(ff) - np.log(uu))
    if q >= 1.3:
        verdict = "holds"
    elif q <= 0.85:
        verdict = "fails"
    else:
        verdict = "indeterminate"
    return GreyReport(verdict=verdict, tail_exponent=float(p),
                      log_slope=float(q), window=(float(lo), theta))
