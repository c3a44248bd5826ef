"""Time stepping, linear moments, and the stationary exit window."""
import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from superwave import mechanism as M
from superwave.fkpp import (GridFunction, linear_moment, read_grid_csv,
                            solve_exit_bvp, solve_fkpp)


def grid(lo, hi, n):
    return np.linspace(lo, hi, n)


def test_grid_function_validation():
    with pytest.raises(ValueError):
        GridFunction(np.array([0.0, 1.0]), np.array([1.0, 2.0]))
    with pytest.raises(ValueError):
        GridFunction(np.array([0.0, 1.0, 0.5]), np.zeros(3))
    with pytest.raises(ValueError):
        GridFunction(grid(0, 1, 5), np.array([1.0, np.nan, 0, 0, 0]))


def test_csv_round_trip(tmp_path):
    x = grid(-1, 1, 7)
    t = np.array([0.0, 0.25, 0.5])
    vals = np.outer(1 + t, np.sin(x))
    gf = GridFunction(x, vals, t=t)
    p = tmp_path / "g.csv"
    gf.to_csv(p)
    back = read_grid_csv(p)
    assert np.array_equal(back.x, x)
    assert np.array_equal(back.t, t)
    assert np.array_equal(back.values, vals)


def test_stationary_states_are_fixed():
    q = M.builtin("quadratic")
    x = grid(-30, 30, 401)
    for level in (0.0, 1.0):  # 1.0 is the largest root
        init = GridFunction(x, np.full_like(x, level))
        out = solve_fkpp(q, init, c=0.7, T=1.0)
        assert np.max(np.abs(out.values - level)) < 1e-11


def test_constant_data_reduces_to_mass_flow():
    x = grid(-40, 40, 301)
    for name, theta in (("quadratic", 0.4), ("exp-jumps", 0.8)):
        m = M.builtin(name)
        init = GridFunction(x, np.full_like(x, theta))
        out = solve_fkpp(m, init, c=1.3, T=2.0)
        sol = solve_ivp(lambda t, u: [-m.eval_psi(max(u[0], 0.0))], (0, 2.0),
                        [theta], t_eval=out.t, rtol=1e-12, atol=1e-14)
        ref = sol.y[0]
        err = np.max(np.abs(out.values - ref[:, None]))
        assert err < 1e-9, (name, err)


def test_comparison_principle():
    m = M.builtin("quadratic")
    rng = np.random.default_rng(31)
    x = grid(-25, 25, 501)
    for _ in range(3):
        a = 0.6 * np.exp(-((x - rng.uniform(-3, 3)) ** 2))
        b = a + 0.3 * np.exp(-((x - rng.uniform(-3, 3)) ** 2) / 2)
        ua = solve_fkpp(m, GridFunction(x, a), c=0.2, T=1.0)
        ub = solve_fkpp(m, GridFunction(x, b), c=0.2, T=1.0)
        assert np.all(ub.values - ua.values >= -1e-12)


def test_grid_refinement_gains_order():
    m = M.builtin("quadratic")
    T, c = 0.5, 0.3

    def run(n, dt):
        x = grid(-20, 20, n)
        init = GridFunction(x, 0.8 * np.exp(-x * x))
        return solve_fkpp(m, init, c=c, T=T, dt=dt)

    fine = run(2561, 1.25e-4)
    mid = run(641, 2e-3)
    coarse = run(321, 4e-3)
    f_mid = np.interp(np.linspace(-20, 20, 321), np.linspace(-20, 20, 641),
                      mid.values[-1])
    f_fine = np.interp(np.linspace(-20, 20, 321), np.linspace(-20, 20, 2561),
                       fine.values[-1])
    e_coarse = np.max(np.abs(coarse.values[-1] - f_fine))
    e_mid = np.max(np.abs(f_mid - f_fine))
    assert e_coarse / e_mid >= 3.0


def test_narrow_grid_rejected():
    m = M.builtin("quadratic")
    x = grid(-3, 3, 61)
    init = GridFunction(x, np.exp(-x * x))
    with pytest.raises(ValueError):
        solve_fkpp(m, init, c=0.0, T=4.0)


def test_no_clipping_on_smooth_runs():
    m = M.builtin("exp-jumps")
    x = grid(-30, 30, 401)
    out = solve_fkpp(m, GridFunction(x, 0.9 * np.exp(-x * x / 4)), c=0.5, T=1.5)
    assert out.meta["clipped"] == 0


# ---------------------------------------------------------------------------
# linear moments


def test_exponential_payoff_growth_rate():
    # undrifted frame: the discounted mean of e^{-lam x} grows at lam * c_lam
    m = M.builtin("quadratic")
    cc = M.critical_constants(m)
    lam = 0.9
    xs = grid(-2, 2, 9)
    v = linear_moment(m, lambda z: np.exp(-lam * z), c=0.0, T=1.5, x=xs, nt=7)
    for j, t in enumerate(v.t):
        ref = np.exp(lam * cc.speed(lam) * t) * np.exp(-lam * xs)
        assert np.max(np.abs(v.values[j] / ref - 1)) < 1e-8


def test_exponential_payoff_in_comoving_frame_is_invariant():
    m = M.builtin("quadratic")
    cc = M.critical_constants(m)
    lam = 0.9
    xs = grid(-2, 2, 9)
    v = linear_moment(m, lambda z: np.exp(-lam * z), c=cc.speed(lam), T=1.5,
                      x=xs, nt=7)
    ref = np.exp(-lam * xs)
    for j in range(v.t.size):
        assert np.max(np.abs(v.values[j] / ref - 1)) < 1e-8


def test_flat_payoff_grows_at_alpha():
    m = M.builtin("quadratic-deep")
    xs = grid(-1, 1, 5)
    v = linear_moment(m, lambda z: np.ones_like(z), c=0.0, T=2.0, x=xs, nt=5)
    for j, t in enumerate(v.t):
        assert v.values[j] == pytest.approx(math.exp(2.0 * t), rel=1e-12)


def test_gridded_payoff_against_monte_carlo():
    m = M.builtin("quadratic")
    xg = grid(-25, 25, 2001)
    bump = 1.0 / (1.0 + np.exp(-8 * xg)) - 1.0 / (1.0 + np.exp(-8 * (xg - 1)))
    payoff = GridFunction(xg, bump)
    t = 0.5
    v = linear_moment(m, payoff, c=0.0, T=t, x=np.array([0.0, 0.3, 1.0]), nt=2)
    rng = np.random.default_rng(97)
    z = rng.standard_normal(400_000)
    for i, x0 in enumerate((0.0, 0.3, 1.0)):
        samples = np.interp(x0 + math.sqrt(t) * z, xg, bump)
        mc = math.exp(m.alpha * t) * samples.mean()
        se = math.exp(m.alpha * t) * samples.std() / math.sqrt(z.size)
        assert abs(v.values[-1][i] - mc) < 3 * se


def test_payoff_window_too_small():
    m = M.builtin("quadratic")
    xg = grid(-2, 2, 41)
    payoff = GridFunction(xg, np.exp(-xg * xg))
    with pytest.raises(ValueError):
        linear_moment(m, payoff, c=0.0, T=4.0)


# ---------------------------------------------------------------------------
# stationary exit window


def test_exit_zero_boundary_gives_zero():
    m = M.builtin("quadratic")
    out = solve_exit_bvp(m, c=1.6, theta=0.0, L=8.0)
    assert np.max(np.abs(out.values)) < 1e-12


def test_exit_root_boundary_supercritical():
    m = M.builtin("quadratic")
    out = solve_exit_bvp(m, c=1.6, theta=1.0, L=8.0, orientation="supercritical")
    assert np.max(np.abs(out.values - 1.0)) < 1e-11


def test_exit_profile_shape_and_doubling():
    m = M.builtin("quadratic")
    cc = M.critical_constants(m)
    lam = 0.8
    c = cc.speed(lam)
    out = solve_exit_bvp(m, c=c, theta=0.5, L=2.0)
    assert out.meta["window"] > 2.0  # had to widen
    assert abs(out.values[0]) < 1e-7 and out.values[-1] == pytest.approx(0.5)
    assert np.all(np.diff(out.values) >= -1e-12)
    # deep in the tail the profile rides the slow mode e^{lam x}, not the
    # fast one at rate c + sqrt(c^2 - 2 alpha)
    xs = out.x
    sel = (xs > -14) & (xs < -10)
    slope = np.polyfit(xs[sel], np.log(out.values[sel]), 1)[0]
    assert slope == pytest.approx(lam, rel=2e-3)


def test_exit_profile_matches_first_order_flow():
    # the rising window profile and the level-crossing slope field are two
    # constructions of the same orbit; integrate the latter and compare
    from superwave.wave import solve_embedded_mechanism
    m = M.builtin("quadratic")
    cc = M.critical_constants(m)
    lam = 0.5 * cc.critical_rate
    theta = 0.5 * cc.largest_root
    emb = solve_embedded_mechanism(m, lam=lam)
    out = solve_exit_bvp(m, c=cc.speed(lam), theta=theta, L=6.0)
    ref = solve_ivp(lambda x, y: [-float(emb(y[0]))], (0.0, out.x[0]),
                    [theta], method="DOP853", rtol=1e-12, atol=1e-18,
                    dense_output=True)
    assert np.max(np.abs(out.values - ref.sol(out.x)[0])) < 1e-6


def test_exit_negative_theta_rejected():
    with pytest.raises(ValueError):
        solve_exit_bvp(M.builtin("quadratic"), c=1.6, theta=-0.1, L=4.0)


def test_exit_window_cap():
    m = M.builtin("quadratic")
    cc = M.critical_constants(m)
    lam = 0.05  # decay length ~ 360, far beyond the doubling cap
    with pytest.raises(RuntimeError):
        solve_exit_bvp(m, c=cc.speed(lam), theta=0.5, L=2.0, max_doublings=4)
