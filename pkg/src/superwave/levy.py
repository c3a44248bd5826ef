"""Jump-size measures for branching mechanisms.

A measure nu on (0, infinity) enters the mechanism through the integral
``int (exp(-lam*x) - 1 + lam*x) nu(dx)`` and must satisfy
``int (x ^ x^2) nu(dx) < infinity``.  Families:

* ``none``            -- no jumps
* ``exp``             -- density c * exp(-b*r)
* ``stable_tempered`` -- density c * r**(-2-gamma) * exp(-b*r), gamma in (0,1)
* ``log_heavy``       -- density c * r**-2 * (1+ln r)**-q on [1, inf), int q >= 2
* ``table``           -- tabulated density with a power(-log) tail

``log_heavy`` exists to realise measures whose r*(ln r)^k moment diverges at
a chosen order k = q-1 while the mean stays finite; no power or exponential
tail can separate those orders.
"""
from __future__ import annotations

import math

import numpy as np
from scipy import integrate, optimize, special

__all__ = [
    "LevyMeasure",
    "NoJumps",
    "ExpJumps",
    "StableTempered",
    "LogHeavy",
    "TableDensity",
    "psi_kernel",
]


def psi_kernel(z):
    """exp(-z) - 1 + z without cancellation for small z."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < 1e-4
    zs = np.where(small, z, 0.0)
    series = zs * zs * (0.5 + zs * (-1.0 / 6.0 + zs / 24.0))
    zb = np.where(small, 1.0, z)
    direct = np.expm1(-zb) + zb
    out = np.where(small, series, direct)
    return out if out.ndim else float(out)


class LevyMeasure:
    """Base class; subclasses override closed forms where available."""

    family = "abstract"
    support_min = 0.0

    def density(self, r):
        raise NotImplementedError

    # -- mechanism integrals ----------------------------------------------
    def psi_integral(self, lam: float) -> float:
        """int (exp(-lam x) - 1 + lam x) nu(dx)."""
        if lam == 0.0:
            return 0.0
        lo = max(self.support_min, 1e-300)
        R = max(60.0 / lam, lo * 2.0, 20.0)
        body, _ = integrate.quad(
            lambda r: psi_kernel(lam * r) * self.density(r), lo, R,
            epsabs=1e-12, epsrel=1e-11, limit=400)
        # beyond R the kernel is lam*r - 1 up to exp(-60)
        return body + lam * self.mean_above(R) - self.mass_above(R)

    def phi_integral(self, lam: float) -> float:
        """int (1 - exp(-lam x)) x nu(dx)."""
        if lam == 0.0:
            return 0.0
        lo = max(self.support_min, 1e-300)
        R = max(60.0 / lam, lo * 2.0, 20.0)
        body, _ = integrate.quad(
            lambda r: -np.expm1(-lam * r) * r * self.density(r), lo, R,
            epsabs=1e-13, epsrel=1e-11, limit=400)
        return body + self.mean_above(R)

    def second_integral(self, lam: float) -> float:
        """int x^2 exp(-lam x) nu(dx); may be infinite at lam = 0."""
        lo = max(self.support_min, 1e-300)
        hi = np.inf if lam > 0 else max(1.0, lo) * 1e8
        val, _ = integrate.quad(
            lambda r: r * r * math.exp(-lam * r) * self.density(r), lo, hi,
            epsabs=1e-12, epsrel=1e-10, limit=400)
        return val

    # -- truncation moments -------------------------------------------------
    def mass_above(self, delta: float) -> float:
        val, _ = integrate.quad(self.density, max(delta, self.support_min), np.inf,
                                epsabs=1e-13, epsrel=1e-11, limit=400)
        return val

    def mean_above(self, delta: float) -> float:
        val, _ = integrate.quad(lambda r: r * self.density(r),
                                max(delta, self.support_min), np.inf,
                                epsabs=1e-13, epsrel=1e-11, limit=400)
        return val

    def var_below(self, delta: float) -> float:
        """int_0^delta x^2 nu(dx)."""
        if delta <= self.support_min:
            return 0.0
        val, _ = integrate.quad(lambda r: r * r * self.density(r),
                                self.support_min, delta,
                                epsabs=1e-14, epsrel=1e-11, limit=400)
        return val

    def x_wedge_x2(self) -> float:
        """int (x ^ x^2) nu(dx); finite for every admissible measure."""
        return self.var_below(1.0) + self.mean_above(1.0)

    def xlogk_integral(self, a: float, b: float, k: int) -> float:
        """int_a^b r (ln r)^k nu(dr) for a >= 1, in the log domain."""
        a = max(a, self.support_min, 1.0)
        if b <= a:
            return 0.0
        def f(u):
            r = math.exp(u)
            return r * r * (u ** k) * self.density(r)
        val, _ = integrate.quad(f, math.log(a), math.log(b),
                                epsabs=1e-14, epsrel=1e-10, limit=400)
        return val

    # -- sampling -------------------------------------------------------------
    def sample_above(self, delta: float, rng: np.random.Generator, size: int) -> np.ndarray:
        """Draws from nu restricted to (delta, inf), normalised."""
        u, r = self.inverse_cdf_table(max(delta, self.support_min))
        return np.interp(rng.random(size), u, r)

    def sample_size_biased_above(self, delta: float, rng: np.random.Generator,
                                 size: int) -> np.ndarray:
        """Draws from r*nu(dr) restricted to (delta, inf), normalised."""
        delta = max(delta, self.support_min)
        total = self.mean_above(delta)
        draws = rng.random(size)
        out = np.empty(size)
        for i, ui in enumerate(draws):
            target = (1.0 - ui) * total
            lo, hi = delta, max(delta, 1.0) * 2.0
            while self.mean_above(hi) > target and hi < 1e300:
                hi *= 4.0
            out[i] = optimize.brentq(lambda x: self.mean_above(x) - target,
                                     lo, hi, xtol=1e-12, rtol=1e-12)
        return out

    def inverse_cdf_table(self, delta: float, n: int = 2048):
        """(u, r) quantile table of nu restricted to (delta, inf).

        Nodes crowd toward u = 1 so heavy tails stay resolved; consumed by
        compiled simulation kernels through plain interpolation.
        """
        delta = max(delta, self.support_min)
        total = self.mass_above(delta)
        if not (total > 0.0) or not np.isfinite(total):
            raise ValueError("measure has no finite mass above the cutoff")
        ks = np.linspace(0.0, 30.0, n)
        u = 1.0 - np.exp(-ks)
        u[0] = 0.0
        r = np.empty_like(u)
        r[0] = delta
        lo = delta
        for i in range(1, n):
            target = (1.0 - u[i]) * total
            hi = max(lo, delta, 1e-12) * 2.0
            while self.mass_above(hi) > target and hi < 1e300:
                hi *= 4.0
            r[i] = optimize.brentq(lambda x: self.mass_above(x) - target,
                                   lo, hi, xtol=1e-14, rtol=1e-14)
            lo = r[i]
        return u, r


class NoJumps(LevyMeasure):
    family = "none"

    def density(self, r):
        return np.zeros_like(np.asarray(r, dtype=float))

    def psi_integral(self, lam):
        return 0.0

    def phi_integral(self, lam):
        return 0.0

    def second_integral(self, lam):
        return 0.0

    def mass_above(self, delta):
        return 0.0

    def mean_above(self, delta):
        return 0.0

    def var_below(self, delta):
        return 0.0

    def xlogk_integral(self, a, b, k):
        return 0.0


class ExpJumps(LevyMeasure):
    """nu(dr) = c * exp(-b r) dr on (0, inf)."""

    family = "exp"

    def __init__(self, c: float, b: float):
        if c <= 0 or b <= 0:
            raise ValueError("exp family needs c > 0, b > 0")
        self.c = float(c)
        self.b = float(b)

    def density(self, r):
        r = np.asarray(r, dtype=float)
        return self.c * np.exp(-self.b * r) * (r > 0)

    def psi_integral(self, lam):
        b = self.b
        return self.c * lam * lam / (b * b * (lam + b))

    def phi_integral(self, lam):
        # 1/b^2 - 1/(lam+b)^2 rewritten without cancellation
        b = self.b
        return self.c * lam * (2.0 * b + lam) / (b * b * (lam + b) ** 2)

    def second_integral(self, lam):
        return 2.0 * self.c / (lam + self.b) ** 3

    def mass_above(self, delta):
        return (self.c / self.b) * math.exp(-self.b * max(delta, 0.0))

    def mean_above(self, delta):
        b, d = self.b, max(delta, 0.0)
        return self.c * math.exp(-b * d) * (d / b + 1.0 / (b * b))

    def var_below(self, delta):
        if delta <= 0:
            return 0.0
        z = self.b * delta
        if z < 1e-2:
            # int_0^z e^{-s} s^2 ds by series, the closed form cancels
            val = z ** 3 * (1.0 / 3.0 + z * (-0.25 + z * (0.1 - z / 36.0)))
        else:
            val = 2.0 - math.exp(-z) * (z * z + 2 * z + 2)
        return self.c * val / self.b ** 3

    def sample_above(self, delta, rng, size):
        # memorylessness of the exponential tail
        return max(delta, 0.0) + rng.exponential(1.0 / self.b, size=size)

    def sample_size_biased_above(self, delta, rng, size):
        # density ~ r e^{-b r} on (delta, inf): rejection from Gamma(2, 1/b)
        out = np.empty(size)
        filled = 0
        while filled < size:
            block = rng.gamma(2.0, 1.0 / self.b, size=max(size - filled, 64))
            block = block[block > delta]
            take = min(block.size, size - filled)
            out[filled:filled + take] = block[:take]
            filled += take
        return out


def _upper_gamma(a: float, z: float) -> float:
    """Gamma(a, z) for a in (-2, 1), via Gamma(a,z) = (Gamma(a+1,z) - z^a e^-z)/a."""
    if a > 0:
        return special.gammaincc(a, z) * special.gamma(a)
    return (_upper_gamma(a + 1.0, z) - z ** a * math.exp(-z)) / a


class StableTempered(LevyMeasure):
    """nu(dr) = c * r**(-2-gamma) * exp(-b r) dr, gamma in (0,1), b >= 0."""

    family = "stable_tempered"

    def __init__(self, c: float, gamma: float, b: float):
        if not (0.0 < gamma < 1.0):
            raise ValueError("gamma must lie in (0, 1)")
        if c <= 0 or b < 0:
            raise ValueError("stable_tempered needs c > 0, b >= 0")
        self.c = float(c)
        self.gamma = float(gamma)
        self.b = float(b)

    def density(self, r):
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            d = self.c * r ** (-2.0 - self.gamma) * np.exp(-self.b * r)
        return np.where(r > 0, d, 0.0)

    def psi_integral(self, lam):
        g, b = self.gamma, self.b
        K = self.c * special.gamma(1.0 - g)
        a = 1.0 + g
        if b > 0 and lam < 1e-3 * b:
            # (1+x)^a - 1 - a*x cancels for small x = lam/b: expand
            x = lam / b
            core = (b ** a) * (a * (a - 1.0) / 2.0) * x * x * (
                1.0 + (a - 2.0) * x / 3.0 + (a - 2.0) * (a - 3.0) * x * x / 12.0)
            return (K / (g * a)) * core
        return (K / (g * a)) * ((lam + b) ** a - b ** a - a * b ** g * lam)

    def phi_integral(self, lam):
        g, b = self.gamma, self.b
        K = self.c * special.gamma(1.0 - g)
        if b > 0 and lam < 1e-3 * b:
            x = lam / b
            core = (b ** g) * g * x * (
                1.0 + (g - 1.0) * x / 2.0 + (g - 1.0) * (g - 2.0) * x * x / 6.0)
            return (K / g) * core
        return (K / g) * ((lam + b) ** g - b ** g)

    def second_integral(self, lam):
        g = self.gamma
        if lam + self.b == 0.0:
            return math.inf
        return self.c * special.gamma(1.0 - g) * (lam + self.b) ** (g - 1.0)

    def mass_above(self, delta):
        g, b, c = self.gamma, self.b, self.c
        if delta <= 0:
            return math.inf
        if b == 0:
            return c * delta ** (-1.0 - g) / (1.0 + g)
        return c * b ** (1.0 + g) * _upper_gamma(-1.0 - g, b * delta)

    def mean_above(self, delta):
        g, b, c = self.gamma, self.b, self.c
        if delta <= 0:
            return math.inf
        if b == 0:
            return c * delta ** (-g) / g
        return c * b ** g * _upper_gamma(-g, b * delta)

    def var_below(self, delta):
        g, b, c = self.gamma, self.b, self.c
        if delta <= 0:
            return 0.0
        if b == 0:
            return c * delta ** (1.0 - g) / (1.0 - g)
        return c * b ** (g - 1.0) * special.gamma(1.0 - g) * special.gammainc(1.0 - g, b * delta)

    def sample_above(self, delta, rng, size):
        # Pareto proposal r = delta * U^(-1/(1+gamma)), accept with e^{-b(r-delta)};
        # the target/proposal density ratio is exactly that weight
        if delta <= 0:
            raise ValueError("stable_tempered sampling needs a positive cutoff")
        out = np.empty(size)
        filled = 0
        while filled < size:
            m = max(size - filled, 64)
            r = delta * rng.random(m) ** (-1.0 / (1.0 + self.gamma))
            keep = rng.random(m) < np.exp(-self.b * (r - delta))
            r = r[keep]
            take = min(r.size, size - filled)
            out[filled:filled + take] = r[:take]
            filled += take
        return out

    def sample_size_biased_above(self, delta, rng, size):
        if delta <= 0:
            raise ValueError("stable_tempered sampling needs a positive cutoff")
        out = np.empty(size)
        filled = 0
        while filled < size:
            m = max(size - filled, 64)
            r = delta * rng.random(m) ** (-1.0 / self.gamma)
            keep = rng.random(m) < np.exp(-self.b * (r - delta))
            r = r[keep]
            take = min(r.size, size - filled)
            out[filled:filled + take] = r[:take]
            filled += take
        return out


class LogHeavy(LevyMeasure):
    """nu(dr) = c * r**-2 * (1 + ln r)**-q dr on [1, inf), integer q >= 2.

    r*(ln r)^k moments are finite exactly for k < q - 1, so q = 2 and q = 3
    bracket the first- and second-order log moments.
    """

    family = "log_heavy"
    support_min = 1.0

    def __init__(self, c: float, q: int):
        if c <= 0:
            raise ValueError("log_heavy needs c > 0")
        if int(q) != q or q < 2:
            raise ValueError("log_heavy needs integer q >= 2")
        self.c = float(c)
        self.q = int(q)

    def density(self, r):
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            d = self.c * r ** -2.0 * (1.0 + np.log(r)) ** (-float(self.q))
        return np.where(r >= 1.0, d, 0.0)

    # integrals run in the log domain u = ln r, where the measure becomes
    # c * e^{-u} (1+u)^{-q} du on [0, inf)

    def psi_integral(self, lam):
        if lam == 0.0:
            return 0.0
        ustar = max(0.0, math.log(1.0 / lam))
        def f(u):
            return psi_kernel(lam * math.exp(u)) * math.exp(-u) * (1.0 + u) ** (-self.q)
        body, _ = integrate.quad(f, 0.0, ustar + 40.0, epsabs=1e-14,
                                 epsrel=1e-11, limit=600,
                                 points=[ustar] if 0.0 < ustar < ustar + 40.0 else None)
        R = math.exp(ustar + 40.0)
        return self.c * body + lam * self.mean_above(R) - self.mass_above(R)

    def phi_integral(self, lam):
        if lam == 0.0:
            return 0.0
        ustar = max(0.0, math.log(1.0 / lam))
        def f(u):
            return -np.expm1(-lam * math.exp(u)) * (1.0 + u) ** (-self.q)
        body, _ = integrate.quad(f, 0.0, ustar + 40.0, epsabs=1e-14,
                                 epsrel=1e-11, limit=600,
                                 points=[ustar] if 0.0 < ustar else None)
        return self.c * body + self.mean_above(math.exp(ustar + 40.0))

    def second_integral(self, lam):
        if lam <= 0.0:
            return math.inf
        ustar = max(0.0, math.log(1.0 / lam))
        def f(u):
            return math.exp(u - lam * math.exp(u)) * (1.0 + u) ** (-self.q)
        val, _ = integrate.quad(f, 0.0, ustar + 40.0, epsabs=1e-14,
                                epsrel=1e-11, limit=600,
                                points=[ustar] if 0.0 < ustar else None)
        return self.c * val

    def _mass_above_arr(self, r):
        a = 1.0 + np.log(np.maximum(np.asarray(r, dtype=float), 1.0))
        return self.c * math.e * a ** (1.0 - self.q) * special.expn(self.q, a)

    def mass_above(self, delta):
        a = 1.0 + math.log(max(delta, 1.0))
        # int_a^inf e^{-v} v^-q dv = a^{1-q} E_q(a)
        return self.c * math.e * a ** (1.0 - self.q) * float(special.expn(self.q, a))

    def mean_above(self, delta):
        a = 1.0 + math.log(max(delta, 1.0))
        return self.c * a ** (1.0 - self.q) / (self.q - 1.0)

    def var_below(self, delta):
        if delta <= 1.0:
            return 0.0
        val, _ = integrate.quad(lambda u: math.exp(u) * (1.0 + u) ** (-self.q),
                                0.0, math.log(delta), epsabs=1e-14, limit=200)
        return self.c * val

    def xlogk_integral(self, a, b, k):
        a = max(a, 1.0)
        if b <= a:
            return 0.0
        def f(u):
            return (u ** k) * (1.0 + u) ** (-self.q)
        val, _ = integrate.quad(f, math.log(a), math.log(b), epsabs=1e-14, limit=400)
        return self.c * val

    def sample_above(self, delta, rng, size):
        # vectorised bisection on the closed-form survival
        delta = max(delta, 1.0)
        total = self.mass_above(delta)
        target = (1.0 - rng.random(size)) * total
        lo = np.full(size, delta)
        hi = np.full(size, delta * 4.0)
        for _ in range(400):
            over = self._mass_above_arr(hi) > target
            if not over.any():
                break
            lo[over] = hi[over]
            hi[over] *= 4.0
        for _ in range(100):
            mid = np.sqrt(lo * hi)
            high = self._mass_above_arr(mid) > target
            lo = np.where(high, mid, lo)
            hi = np.where(high, hi, mid)
        return np.sqrt(lo * hi)

    def sample_size_biased_above(self, delta, rng, size):
        # r*nu survival is proportional to (1+ln r)^{1-q}: exact inversion.
        # The tail is slowly varying, so draws can overflow to inf; callers
        # must treat those as blow-up events rather than clipping them.
        delta = max(delta, 1.0)
        a = 1.0 + math.log(delta)
        u = rng.random(size)
        with np.errstate(over="ignore"):
            return np.exp(a * (1.0 - u) ** (-1.0 / (self.q - 1.0)) - 1.0)


class TableDensity(LevyMeasure):
    """Density sampled on a grid, linearly interpolated, with a declared tail.

    Below the first grid point the density vanishes.  For r > r_max it
    continues as d_last * (r/r_max)**-p * (1 + ln(r/r_max))**-q_tail.
    Admissible tails: p >= 2.05, or p == 2 with q_tail > 1 (exponents in
    (2, 2.05) are rejected as numerically undecidable).
    """

    family = "table"

    def __init__(self, r: np.ndarray, d: np.ndarray, tail_exp: float,
                 tail_log_exp: float = 0.0):
        r = np.asarray(r, dtype=float)
        d = np.asarray(d, dtype=float)
        if r.ndim != 1 or r.size < 2 or np.any(np.diff(r) <= 0) or r[0] <= 0:
            raise ValueError("table grid must be increasing and positive")
        if d.shape != r.shape or np.any(d < 0):
            raise ValueError("table density must be nonnegative, one value per node")
        ok = tail_exp >= 2.05 or (tail_exp == 2.0 and tail_log_exp > 1.0)
        if not ok:
            raise ValueError("tail must have p >= 2.05, or p == 2 with log exponent > 1")
        self.r = r
        self.d = d
        self.p = float(tail_exp)
        self.qt = float(tail_log_exp)
        self.support_min = float(r[0])

    def density(self, x):
        x = np.asarray(x, dtype=float)
        body = np.interp(x, self.r, self.d, left=0.0, right=0.0)
        rm = self.r[-1]
        with np.errstate(divide="ignore", invalid="ignore"):
            rel = np.where(x > rm, x / rm, 1.0)
            tail = self.d[-1] * rel ** (-self.p) * (1.0 + np.log(rel)) ** (-self.qt)
        out = np.where(x > rm, tail, body)
        return out if out.ndim else float(out)

    def _tail_piece(self, x: float, weight_power: int) -> float:
        """int_x^inf r^w * density dr for x >= r_max, in the log domain."""
        rm = self.r[-1]
        ux = math.log(max(x, rm) / rm)
        s = self.p - 1.0 - weight_power
        amp = self.d[-1] * rm ** (1 + weight_power)
        if s > 0.04:
            hi = ux + 200.0 / s
            val, _ = integrate.quad(lambda u: math.exp(-s * u) * (1.0 + u) ** (-self.qt),
                                    ux, hi, epsabs=1e-14, epsrel=1e-11, limit=800)
            return amp * val
        if s == 0.0 and self.qt > 1.0:
            return amp * (1.0 + ux) ** (1.0 - self.qt) / (self.qt - 1.0)
        raise ValueError("table tail cannot support this moment")

    def _body_integral(self, f, lo: float, hi: float) -> float:
        if hi <= lo:
            return 0.0
        pts = [p for p in self.r if lo < p < hi][:50]
        val, _ = integrate.quad(lambda x: f(x) * float(self.density(x)), lo, hi,
                                points=pts, epsabs=1e-13, epsrel=1e-11, limit=600)
        return val

    def mass_above(self, delta):
        rm = self.r[-1]
        lo = max(delta, self.support_min)
        if lo >= rm:
            return self._tail_piece(lo, 0)
        return self._body_integral(lambda x: 1.0, lo, rm) + self._tail_piece(rm, 0)

    def mean_above(self, delta):
        rm = self.r[-1]
        lo = max(delta, self.support_min)
        if lo >= rm:
            return self._tail_piece(lo, 1)
        return self._body_integral(lambda x: x, lo, rm) + self._tail_piece(rm, 1)

    def var_below(self, delta):
        if delta <= self.support_min:
            return 0.0
        rm = self.r[-1]
        val = self._body_integral(lambda x: x * x, self.support_min, min(delta, rm))
        if delta > rm:
            val += self._tail_piece(rm, 2) - self._tail_piece(delta, 2)
        return val

    def psi_integral(self, lam):
        if lam == 0.0:
            return 0.0
        rm = self.r[-1]
        body = self._body_integral(lambda x: float(psi_kernel(lam * x)),
                                   self.support_min, rm)
        # tail: exact kernel until exp(-lam r) is dead, then linearise
        ustar = max(0.0, math.log(1.0 / (lam * rm)))
        def f(u):
            x = rm * math.exp(u)
            return float(psi_kernel(lam * x)) * float(self.density(x)) * x
        tail, _ = integrate.quad(f, 0.0, ustar + 40.0, epsabs=1e-14,
                                 epsrel=1e-11, limit=800,
                                 points=[ustar] if 0.0 < ustar else None)
        R = rm * math.exp(ustar + 40.0)
        return body + tail + lam * self._tail_piece(R, 1) - self._tail_piece(R, 0)

    def phi_integral(self, lam):
        if lam == 0.0:
            return 0.0
        rm = self.r[-1]
        body = self._body_integral(lambda x: -float(np.expm1(-lam * x)) * x,
                                   self.support_min, rm)
        ustar = max(0.0, math.log(1.0 / (lam * rm)))
        def f(u):
            x = rm * math.exp(u)
            return -float(np.expm1(-lam * x)) * x * float(self.density(x)) * x
        tail, _ = integrate.quad(f, 0.0, ustar + 40.0, epsabs=1e-14,
                                 epsrel=1e-11, limit=800,
                                 points=[ustar] if 0.0 < ustar else None)
        return body + tail + self._tail_piece(rm * math.exp(ustar + 40.0), 1)

    def second_integral(self, lam):
        rm = self.r[-1]
        body = self._body_integral(lambda x: x * x * math.exp(-lam * x),
                                   self.support_min, rm)
        if lam <= 0.0:
            if self.p > 3.0:
                return body + self._tail_piece(rm, 2)
            return math.inf
        ustar = max(0.0, math.log(1.0 / (lam * rm)))
        def f(u):
            x = rm * math.exp(u)
            return x * x * math.exp(-lam * x) * float(self.density(x)) * x
        tail, _ = integrate.quad(f, 0.0, ustar + 40.0, epsabs=1e-14,
                                 epsrel=1e-11, limit=800,
                                 points=[ustar] if 0.0 < ustar else None)
        return body + tail
