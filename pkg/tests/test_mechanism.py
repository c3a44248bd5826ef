"""Mechanism evaluation, critical constants, classifiers, jump sampling."""
import math

import numpy as np
import pytest
from scipy import integrate
from hypothesis import given, settings, strategies as st

from superwave import mechanism as M
from superwave.levy import (ExpJumps, LogHeavy, NoJumps, StableTempered,
                            TableDensity, psi_kernel)


def oracle_kernel(z):
    # independent of the package's series: one more term, different switch
    if z < 1e-3:
        return z * z * (0.5 - z / 6 + z * z / 24 - z**3 / 120)
    return math.exp(-z) - 1 + z


def quadrature_psi_integral(density, lam, lo=0.0, hi=np.inf):
    """Brute-force oracle for int (exp(-lam r)-1+lam r) nu(dr)."""
    f = lambda r: oracle_kernel(lam * r) * density(r)
    cut = min(max(1.0, lo * 2), hi)
    head, _ = integrate.quad(f, lo, cut, epsabs=1e-14, limit=400)
    tail, _ = integrate.quad(f, cut, hi, epsabs=1e-13, limit=400)
    return head + tail


# ---------------------------------------------------------------------------
# evaluation


def test_quadratic_point_values():
    q = M.builtin("quadratic")
    assert q.eval_psi(1.0) == pytest.approx(0.0, abs=1e-14)
    assert q.eval_psi(2.0) == pytest.approx(2.0, abs=1e-14)
    assert q.eval_psi_prime(0.0) == pytest.approx(-1.0, abs=1e-14)
    assert q.eval_psi_prime(1.0) == pytest.approx(1.0, abs=1e-14)
    assert q.eval_phi(3.0) == pytest.approx(6.0, abs=1e-13)
    assert q.eval_phi(0.0) == 0.0


def test_exponential_jump_integral_closed_form_vs_quadrature():
    # alpha=1, beta=0, nu = e^{-r} dr: the jump integral is lam^2/(1+lam),
    # so psi(1) = -1 + 1/2
    m = M.BranchingMechanism(1.0, 0.0, ExpJumps(1.0, 1.0))
    assert m.eval_psi(1.0) == pytest.approx(-0.5, abs=1e-12)
    for lam in (0.3, 1.0, 2.7, 10.0):
        oracle = quadrature_psi_integral(lambda r: math.exp(-r), lam)
        assert m.levy.psi_integral(lam) == pytest.approx(oracle, abs=1e-10)
        assert m.levy.psi_integral(lam) == pytest.approx(lam * lam / (1 + lam),
                                                         rel=1e-12)


def test_negative_argument_rejected():
    q = M.builtin("quadratic")
    with pytest.raises(ValueError):
        q.eval_psi(-0.1)
    with pytest.raises(ValueError):
        q.eval_psi_prime(-1.0)


def test_degenerate_mechanism_rejected():
    with pytest.raises(ValueError):
        M.BranchingMechanism(1.0, 0.0, None)
    with pytest.raises(ValueError):
        M.BranchingMechanism(-1.0, 1.0, None)


def test_derivative_matches_finite_differences():
    m = M.builtin("exp-jumps")
    h = 1e-6
    for lam in (0.25, 0.9, 2.0, 5.0):
        fd = (m.eval_psi(lam + h) - m.eval_psi(lam - h)) / (2 * h)
        assert m.eval_psi_prime(lam) == pytest.approx(fd, abs=1e-6)
        # away from 0 the relative contract is tighter
        assert m.eval_psi_prime(lam) == pytest.approx(fd, rel=1e-5)


def test_phi_is_recentred_derivative():
    for name in M.BUILTIN_NAMES:
        m = M.builtin(name)
        for lam in (0.1, 1.0, 3.0):
            assert m.eval_phi(lam) == pytest.approx(
                m.eval_psi_prime(lam) + m.alpha, rel=1e-12)


def test_phi_nonnegative_and_nondecreasing():
    grid = np.linspace(0.0, 6.0, 40)
    for name in M.BUILTIN_NAMES:
        m = M.builtin(name)
        vals = [m.eval_phi(x) for x in grid]
        assert all(v >= -1e-12 for v in vals)
        assert all(b - a >= -1e-10 for a, b in zip(vals, vals[1:]))


def test_second_derivative_matches_finite_differences():
    for name in ("exp-jumps", "stable", "heavy-log3"):
        m = M.builtin(name)
        h = 1e-5
        for lam in (0.5, 1.5):
            fd = (m.eval_psi(lam + h) - 2 * m.eval_psi(lam) + m.eval_psi(lam - h)) / h**2
            assert m.psi_second(lam) == pytest.approx(fd, rel=1e-4)


@settings(max_examples=60, deadline=None)
@given(a=st.floats(0.01, 5.0), b=st.floats(0.01, 5.0), t=st.floats(0.01, 0.99))
def test_convexity_on_random_chords(a, b, t):
    m = M.builtin("exp-jumps")
    lo, hi = min(a, b), max(a, b)
    mid = t * lo + (1 - t) * hi
    chord = t * m.eval_psi(lo) + (1 - t) * m.eval_psi(hi)
    assert m.eval_psi(mid) <= chord + 1e-9


# ---------------------------------------------------------------------------
# critical constants


def test_quadratic_critical_constants():
    cc = M.critical_constants(M.builtin("quadratic"))
    assert cc.largest_root == pytest.approx(1.0, abs=1e-11)
    assert cc.critical_rate == pytest.approx(math.sqrt(2.0), rel=1e-15)
    # the speed curve touches its minimum value exactly at the critical rate
    assert cc.speed(cc.critical_rate) == pytest.approx(cc.critical_rate, rel=1e-14)


def test_deep_quadratic_critical_constants():
    cc = M.critical_constants(M.builtin("quadratic-deep"))
    assert cc.largest_root == pytest.approx(2.0, abs=1e-11)
    assert cc.critical_rate == pytest.approx(2.0, rel=1e-15)
    assert cc.speed(1.0) == pytest.approx(2.5, rel=1e-14)


def test_root_residual_small_for_jump_mechanisms():
    for name in ("exp-jumps", "stable", "heavy-log3"):
        m = M.builtin(name)
        cc = M.critical_constants(m)
        assert abs(m.eval_psi(cc.largest_root)) < 1e-10


def test_exp_jumps_root_is_one():
    # -1 + 0.5 + 1/(1*2) = 0 at lam = 1
    cc = M.critical_constants(M.builtin("exp-jumps"))
    assert cc.largest_root == pytest.approx(1.0, abs=1e-10)


def test_mechanism_negative_below_root():
    rng = np.random.default_rng(7)
    for name in M.BUILTIN_NAMES:
        m = M.builtin(name)
        cc = M.critical_constants(m)
        for u in rng.uniform(1e-6, cc.largest_root * (1 - 1e-9), size=50):
            assert m.eval_psi(float(u)) < 0
        # a single sign change: positive beyond the root
        for u in rng.uniform(cc.largest_root * (1 + 1e-9),
                             cc.largest_root * 8, size=50):
            assert m.eval_psi(float(u)) > 0


def test_speed_bound():
    cc = M.critical_constants(M.builtin("exp-jumps"))
    lams = np.linspace(cc.critical_rate / 200, cc.critical_rate, 200)
    gaps = np.array([cc.speed(l) - cc.critical_rate for l in lams])
    assert np.all(gaps >= -1e-12)
    assert gaps[-1] == pytest.approx(0.0, abs=1e-12)
    assert np.all(gaps[:-1] > 0)


def test_formula_mechanisms_not_supercritical():
    with pytest.raises(ValueError):
        M.critical_constants(M.builtin("formula-one"))
    with pytest.raises(ValueError):
        M.critical_constants(M.builtin("formula-two"))


# ---------------------------------------------------------------------------
# integrability classifiers


def test_a3_quadratic_holds_with_cubic_growth():
    rep = M.check_condition_A3(M.builtin("quadratic"))
    assert rep.verdict == "holds"
    assert rep.model == "power"
    assert rep.exponent == pytest.approx(3.0, abs=0.05)


def test_a3_formula_mechanisms_hold():
    for name in ("formula-one", "formula-two"):
        rep = M.check_condition_A3(M.builtin(name))
        assert rep.verdict == "holds", (name, rep)


def test_a3_subquadratic_growth_fails():
    # integral grows like xi^2 log xi, whose inverse square root is not
    # integrable; the classifier must pick the log-corrected model
    rep = M.check_condition_A3(M.builtin("formula-subquad"))
    assert rep.verdict == "fails"
    assert rep.model == "log-corrected"
    assert rep.exponent == pytest.approx(1.0, abs=0.2)


def test_a3_holds_on_remaining_builtins():
    for name in M.BUILTIN_NAMES:
        assert M.check_condition_A3(M.builtin(name)).verdict == "holds"


def test_moment_classification_table():
    expected = {
        "quadratic": ("finite", "finite"),
        "exp-jumps": ("finite", "finite"),
        "stable": ("finite", "finite"),
        "heavy-log2": ("infinite", "infinite"),
        "heavy-log3": ("finite", "infinite"),
        "formula-one": ("infinite", "infinite"),
        "formula-two": ("finite", "infinite"),
    }
    for name, (e1, e2) in expected.items():
        rep = M.classify_moments(M.builtin(name))
        assert rep.llogl == e1, (name, rep)
        assert rep.llogl2 == e2, (name, rep)


def test_formula_one_report_flags_drift_domination():
    rep = M.classify_moments(M.builtin("formula-one"))
    assert any("drift" in n for n in rep.notes)


# ---------------------------------------------------------------------------
# jump sampling


def test_jump_rate_exponential_total_mass():
    m = M.BranchingMechanism(1.0, 0.0, ExpJumps(1.0, 1.0))
    assert M.jump_rate(m, 0.0) == pytest.approx(1.0, rel=1e-14)


def test_jump_rate_rejects_infinite_mass():
    m = M.builtin("stable")
    with pytest.raises(ValueError):
        M.jump_rate(m, 0.0)
    assert np.isfinite(M.jump_rate(m, 0.01))


def test_exponential_sample_mean():
    m = M.BranchingMechanism(1.0, 0.0, ExpJumps(1.0, 1.0))
    rng = np.random.default_rng(2024)
    x = M.sample_jump(m, rng, 0.0, size=1_000_000)
    assert x.mean() == pytest.approx(1.0, abs=0.01)


def test_stable_tempered_sample_against_quadrature_cdf():
    nu = StableTempered(1.0, 0.5, 1.0)
    delta = 0.01
    rng = np.random.default_rng(5)
    x = np.sort(nu.sample_above(delta, rng, 1_000_000))
    # oracle CDF from direct numeric integration of the density
    grid = np.geomspace(delta, 60.0, 400)
    dens = nu.density(grid)
    cdf = np.concatenate([[0.0], np.cumsum(np.diff(grid) * 0.5 * (dens[1:] + dens[:-1]))])
    cdf /= nu.mass_above(delta)
    f_at_sample = np.interp(x, grid, cdf)
    emp = np.arange(1, x.size + 1) / x.size
    ks = np.max(np.abs(f_at_sample - emp))
    assert ks < 0.005


def test_log_heavy_sampler_matches_survival():
    nu = LogHeavy(2.0, 3)
    rng = np.random.default_rng(11)
    x = np.sort(nu.sample_above(1.0, rng, 50_000))
    total = nu.mass_above(1.0)
    qs = [2.0, 5.0, 20.0, 100.0]
    for q in qs:
        emp = np.mean(x > q)
        assert emp == pytest.approx(nu.mass_above(q) / total, abs=0.01)


def test_log_heavy_size_biased_inversion():
    nu = LogHeavy(1.0, 3)
    rng = np.random.default_rng(13)
    x = nu.sample_size_biased_above(1.0, rng, 200_000)
    # closed-form survival of the size-biased law: ((1+ln r)/(1+ln d))^(1-q)
    for q in (2.0, 10.0, 100.0):
        target = (1 + math.log(q)) ** (1 - 3)
        assert np.mean(x > q) == pytest.approx(target, abs=0.01)


def test_exp_size_biased_matches_gamma_tail():
    nu = ExpJumps(1.0, 2.0)
    rng = np.random.default_rng(17)
    x = nu.sample_size_biased_above(0.5, rng, 200_000)
    # r e^{-2r} above 0.5: survival (1+2r)e^{-2r} / ((1+1)e^{-1})
    ref = lambda r: (1 + 2 * r) * math.exp(-2 * r) / (2 * math.exp(-1))
    for q in (0.8, 1.5, 3.0):
        assert np.mean(x > q) == pytest.approx(ref(q), abs=0.01)


def test_inverse_cdf_table_reproduces_exponential():
    nu = ExpJumps(1.0, 1.0)
    u, r = nu.inverse_cdf_table(0.0, n=512)
    rng = np.random.default_rng(23)
    x = np.interp(rng.random(200_000), u, r)
    assert x.mean() == pytest.approx(1.0, abs=0.02)
    assert np.mean(x > 2.0) == pytest.approx(math.exp(-2.0), abs=0.01)


# ---------------------------------------------------------------------------
# measure families: closed forms vs quadrature


def test_stable_tempered_closed_forms_vs_quadrature():
    nu = StableTempered(0.7, 0.4, 1.3)
    for lam in (0.5, 2.0):
        oracle = quadrature_psi_integral(lambda r: float(nu.density(r)), lam, lo=1e-12)
        assert nu.psi_integral(lam) == pytest.approx(oracle, rel=1e-6)
        phi_oracle, _ = integrate.quad(lambda r: (1 - math.exp(-lam * r)) * r * float(nu.density(r)),
                                       0, np.inf, epsabs=1e-13, limit=300)
        assert nu.phi_integral(lam) == pytest.approx(phi_oracle, rel=1e-7)
    mass_oracle, _ = integrate.quad(lambda r: float(nu.density(r)), 0.3, np.inf)
    assert nu.mass_above(0.3) == pytest.approx(mass_oracle, rel=1e-9)
    mean_oracle, _ = integrate.quad(lambda r: r * float(nu.density(r)), 0.3, np.inf)
    assert nu.mean_above(0.3) == pytest.approx(mean_oracle, rel=1e-9)
    var_oracle, _ = integrate.quad(lambda r: r * r * float(nu.density(r)), 0, 0.3)
    assert nu.var_below(0.3) == pytest.approx(var_oracle, rel=1e-8)


def test_stable_small_argument_series_branch():
    nu = StableTempered(0.5, 0.5, 1.0)
    # the series and closed form must agree where they hand over
    for lam in (9e-4, 1.1e-3):
        oracle = quadrature_psi_integral(lambda r: float(nu.density(r)), lam, lo=1e-14)
        assert nu.psi_integral(lam) == pytest.approx(oracle, rel=1e-6)
    # far below the handover the quadratic behaviour is exact
    second0 = nu.second_integral(0.0)
    assert nu.psi_integral(1e-8) == pytest.approx(0.5 * second0 * 1e-16, rel=1e-4)


def test_log_heavy_integrals_vs_quadrature():
    c, q = 2.0, 3
    nu = LogHeavy(c, q)
    for lam in (0.3, 1.7):
        # substitute r = e^u; the linear part of the kernel decays only
        # logarithmically, so finish it analytically beyond u = U
        U = 50.0
        f = lambda u: oracle_kernel(lam * math.exp(u)) * c * math.exp(-u) * (1 + u) ** -q
        panels = [0.0, 2.0, 5.0, 10.0, 20.0, 35.0, U]
        body = sum(integrate.quad(f, a, b, epsabs=1e-14, limit=200)[0]
                   for a, b in zip(panels, panels[1:]))
        remainder = lam * c * (1 + U) ** (1 - q) / (q - 1)
        assert nu.psi_integral(lam) == pytest.approx(body + remainder, rel=1e-7)
    mass_oracle, _ = integrate.quad(lambda r: float(nu.density(r)), 2.5, np.inf)
    assert nu.mass_above(2.5) == pytest.approx(mass_oracle, rel=1e-9)
    # r * density = c / r (1+ln r)^-q, so in u = ln r the mean above 2.5
    # is c int (1+u)^-q du, finished analytically past u = 300
    lo_u = math.log(2.5)
    mean_body, _ = integrate.quad(lambda u: c * (1 + u) ** -q, lo_u, 300.0)
    mean_oracle = mean_body + c * 301.0 ** (1 - q) / (q - 1)
    assert nu.mean_above(2.5) == pytest.approx(mean_oracle, rel=1e-9)


@pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")
def test_table_family_against_its_own_density():
    # the reference quadrature sees every interpolation kink, so it warns
    # about roundoff; its result is still far inside the 1e-6 band used here
    grid = np.linspace(0.5, 8.0, 60)
    nu = TableDensity(grid, np.exp(-grid), tail_exp=3.0)
    rm, dm, R = 8.0, math.exp(-8.0), 2000.0
    for lam in (0.5, 2.0):
        oracle = quadrature_psi_integral(lambda r: float(nu.density(r)), lam,
                                         lo=0.5, hi=R)
        # past R the kernel is linear to 1e-8 relative; finish by calculus:
        # int_R r * dm (r/rm)^-3 dr = dm rm^3 / R
        oracle += lam * dm * rm**3 / R
        assert nu.psi_integral(lam) == pytest.approx(oracle, rel=1e-6)
    # the body is piecewise linear, so trapezoid over the kinks is exact;
    # the power tail integrates to dm * rm / 2 by hand
    inner = grid[(grid > 1.0) & (grid < rm)]
    xs = np.concatenate([[1.0], inner, [rm]])
    mass_oracle = np.trapezoid(nu.density(xs), xs) + dm * rm / 2.0
    assert nu.mass_above(1.0) == pytest.approx(mass_oracle, rel=1e-9)


def test_table_tail_validation():
    grid = np.array([0.5, 1.0, 2.0])
    dens = np.array([1.0, 0.5, 0.1])
    with pytest.raises(ValueError):
        TableDensity(grid, dens, tail_exp=1.5)
    with pytest.raises(ValueError):
        TableDensity(grid, dens, tail_exp=2.01)
    TableDensity(grid, dens, tail_exp=2.0, tail_log_exp=1.5)  # admissible


def test_log_heavy_parameter_validation():
    with pytest.raises(ValueError):
        LogHeavy(1.0, 1)
    with pytest.raises(ValueError):
        LogHeavy(1.0, 2.5)


def test_psi_kernel_series_branch():
    # reference via higher-precision arithmetic on the series region
    for z in (1e-8, 1e-5, 9e-5, 2e-4, 0.1):
        ref = np.expm1(-z) + z if z >= 1e-4 else None
        if ref is None:
            # alternating series bound: error below z^5/120
            ref = z * z / 2 - z**3 / 6 + z**4 / 24
        assert psi_kernel(z) == pytest.approx(ref, rel=1e-10)
    assert psi_kernel(0.0) == 0.0
