"""Mass-process flow and pathwise simulation against closed-form oracles."""
import io
import math
import types

import numpy as np
import pytest

from superwave import csbp
from superwave.levy import ExpJumps, NoJumps
from superwave.mechanism import BranchingMechanism, FormulaMechanism, builtin, critical_constants


def logistic_flow(alpha, beta, theta, t):
    # closed-form flow for the quadratic rate, used as an independent oracle
    e = math.exp(alpha * t)
    return alpha * theta * e / (alpha + beta * theta * (e - 1.0))


def test_logistic_oracle_frozen_values():
    assert logistic_flow(1, 1, 0.5, 1.0) == pytest.approx(0.7310585786300049, abs=1e-14)
    assert logistic_flow(1, 1, 0.5, 0.0) == 0.5


QUAD = builtin("quadratic")


class TestLaplaceFlow:
    def test_matches_logistic_closed_form(self):
        for theta in (0.2, 0.5, 1.0, 3.0):
            for t in (0.3, 1.0, 2.5):
                want = logistic_flow(1.0, 1.0, theta, t)
                got = csbp.laplace_exponent(QUAD, theta, t)
                assert got == pytest.approx(want, rel=1e-8)

    def test_identity_at_time_zero_and_zero_theta(self):
        assert csbp.laplace_exponent(QUAD, 0.7, 0.0) == 0.7
        assert csbp.laplace_exponent(QUAD, 0.0, 5.0) == 0.0

    @pytest.mark.parametrize("name", ["quadratic", "quadratic-deep", "exp-jumps",
                                      "stable", "heavy-log3"])
    def test_largest_root_is_a_fixed_point(self, name):
        mech = builtin(name)
        root = critical_constants(mech).largest_root
        out = csbp.laplace_exponent(mech, root, 1.0)
        assert out == pytest.approx(root, rel=1e-6)

    def test_flow_attracts_to_largest_root_from_both_sides(self):
        for name in ("quadratic", "exp-jumps"):
            mech = builtin(name)
            root = critical_constants(mech).largest_root
            lo = csbp.laplace_exponent(mech, 0.3 * root, 30.0)
            hi = csbp.laplace_exponent(mech, 3.0 * root, 30.0)
            assert lo == pytest.approx(root, rel=1e-6)
            assert hi == pytest.approx(root, rel=1e-6)

    @pytest.mark.parametrize("name", ["quadratic", "exp-jumps", "stable"])
    def test_semigroup_composition(self, name):
        mech = builtin(name)
        s, t, theta = 0.4, 0.9, 0.7
        direct = csbp.laplace_exponent(mech, theta, s + t)
        inner = csbp.laplace_exponent(mech, theta, t)
        outer = csbp.laplace_exponent(mech, inner, s)
        assert abs(direct - outer) < 1e-8

    def test_blowup_is_reported(self):
        with pytest.raises(csbp.FlowBlowUp) as exc:
            csbp.laplace_exponent(lambda u: -u * u, 2.0, 1.0)
        assert 0.4 < exc.value.t_blow < 0.6

    def test_negative_arguments_rejected(self):
        with pytest.raises(ValueError):
            csbp.laplace_exponent(QUAD, -0.1, 1.0)
        with pytest.raises(ValueError):
            csbp.laplace_exponent(QUAD, 0.1, -1.0)


class TestLaplaceTable:
    def test_columns_move_toward_attractor(self):
        tab = csbp.laplace_table(QUAD, [0.3, 1.0, 3.0], np.linspace(0.0, 3.0, 13))
        assert tab.attractor == pytest.approx(1.0, rel=1e-9)
        assert np.all(np.diff(tab.values[:, 0]) >= -1e-10)   # from below
        assert np.all(np.diff(tab.values[:, 2]) <= 1e-10)    # from above
        assert np.allclose(tab.values[0], tab.thetas)

    def test_bilinear_evaluate_close_to_direct_solve(self):
        tab = csbp.laplace_table(QUAD, np.linspace(0.5, 1.5, 11),
                                 np.linspace(0.0, 2.0, 21))
        got = tab.evaluate(0.93, 1.13)
        want = csbp.laplace_exponent(QUAD, 0.93, 1.13)
        assert got == pytest.approx(want, abs=5e-3)

    def test_validation_rejects_bad_grids(self):
        ths = np.array([0.5, 1.0])
        ts = np.array([0.0, 1.0])
        good = np.array([[0.5, 1.0], [0.6, 1.0]])
        csbp.LaplaceExponentTable(ths, ts, good)
        with pytest.raises(ValueError):
            csbp.LaplaceExponentTable(ths, np.array([0.5, 1.0]), good)
        with pytest.raises(ValueError):
            csbp.LaplaceExponentTable(ths, ts, np.array([[0.5, 1.0], [-0.2, 1.0]]))
        with pytest.raises(ValueError):
            csbp.LaplaceExponentTable(ths, ts, np.array([[0.4, 1.0], [0.5, 1.0]]))


class TestPathwise:
    def test_path_container_enforces_permanent_absorption(self):
        with pytest.raises(ValueError):
            csbp.CSBPPath(np.array([0.0, 1.0, 2.0]), np.array([1.0, 0.0, 0.5]), True)

    def test_single_path_shape_and_seed(self):
        p = csbp.simulate_csbp(QUAD, 1.0, 2.0, rng=7)
        assert p.times[0] == 0.0 and p.z[0] == 1.0
        assert p.times[-1] >= 2.0 - 1e-9
        assert p.seed == 7
        q = csbp.simulate_csbp(QUAD, 1.0, 2.0, rng=7)
        assert np.array_equal(p.z, q.z)

    def test_coarse_dt_rejected(self):
        with pytest.raises(ValueError):
            csbp.simulate_csbp(QUAD, 1.0, 1.0, dt=0.2)

    def test_tabulated_rates_not_pathwise(self):
        mech = FormulaMechanism("f", lambda u: -u + u * u,
                                lambda u: -1.0 + 2.0 * u, -1.0)
        with pytest.raises(TypeError):
            csbp.simulate_csbp(mech, 1.0, 1.0)

    def test_cutoff_folding_budget_enforced(self):
        mech = builtin("exp-jumps")
        with pytest.raises(ValueError):
            csbp.simulate_csbp(mech, 1.0, 0.5, jump_cutoff=2.5)
        # a generous cutoff from the default search is accepted
        csbp.simulate_csbp(mech, 1.0, 0.5)

    def test_laplace_transform_monte_carlo(self):
        # terminal transform against the integrated flow, 1e5 paths
        z0, T = 1.0, 1.0
        ens = csbp.simulate_ensemble(QUAD, z0, T, 100_000, dt=5e-4,
                                     master_seed=11)
        root = 1.0
        for theta in (0.3 * root, 1.0 * root, 3.0 * root):
            vals = np.exp(-theta * ens.terminal)
            se = vals.std(ddof=1) / math.sqrt(vals.size)
            want = math.exp(-z0 * logistic_flow(1.0, 1.0, theta, T))
            assert abs(vals.mean() - want) < 3 * se, (theta, vals.mean(), want, se)

    def test_extinction_frequency_matches_decay_exponent(self):
        z0, T = 1.0, 10.0
        ens = csbp.simulate_ensemble(QUAD, z0, T, 40_000, dt=1e-3,
                                     master_seed=13)
        frac = ens.absorbed.mean()
        want = math.exp(-1.0 * z0)
        se = math.sqrt(want * (1 - want) / ens.n_paths)
        assert abs(frac - want) < 3 * se, (frac, want, se)

    def test_independent_pieces_add(self):
        # mass started at 2 agrees in law with the sum of two unit starts
        T, n = 1.0, 20_000
        a = csbp.simulate_ensemble(QUAD, 2.0, T, n, dt=1e-3, master_seed=101).terminal
        b1 = csbp.simulate_ensemble(QUAD, 1.0, T, n, dt=1e-3, master_seed=202).terminal
        b2 = csbp.simulate_ensemble(QUAD, 1.0, T, n, dt=1e-3, master_seed=303).terminal
        b = b1 + b2
        for theta in (0.3, 1.0, 3.0):
            va, vb = np.exp(-theta * a), np.exp(-theta * b)
            spread = math.hypot(va.std(ddof=1), vb.std(ddof=1)) / math.sqrt(n)
            assert abs(va.mean() - vb.mean()) < 3 * spread

    def test_mean_growth_with_jumps_compensated(self):
        # drift handling must keep E[Z_t] = z0 e^{alpha t} with jumps active
        mech = builtin("exp-jumps")
        obs = [0.5, 1.0, 1.5, 2.0]
        ens = csbp.simulate_ensemble(mech, 1.0, 2.0, 10_000, dt=1e-3,
                                     master_seed=17, obs_times=obs)
        for j, t in enumerate(ens.times[1:], start=1):
            scaled = ens.z[:, j] * math.exp(-mech.alpha * t)
            se = scaled.std(ddof=1) / math.sqrt(ens.n_paths)
            assert abs(scaled.mean() - 1.0) < 3 * se, (t, scaled.mean(), se)

    def test_absorption_is_permanent_along_paths(self):
        ens = csbp.simulate_ensemble(QUAD, 0.25, 4.0, 400, dt=1e-3,
                                     master_seed=23,
                                     obs_times=np.linspace(0.25, 4.0, 16))
        assert ens.absorbed.any()
        for p in ens.paths():  # CSBPPath validation re-checks permanence
            if p.absorbed:
                assert p.z[-1] == 0.0


class TestSenetaHeyde:
    def test_supercritical_zero_share_and_slice_stabilization(self):
        T = 8.0
        obs = np.arange(1.0, T + 0.5, 1.0)
        ens = csbp.simulate_ensemble(QUAD, 1.0, T, 20_000, dt=1e-3,
                                     master_seed=31, obs_times=obs)
        summ = csbp.seneta_heyde_estimate(QUAD, ens, slice_times=obs[2:])
        want = math.exp(-1.0)
        se = math.sqrt(want * (1 - want) / ens.n_paths)
        assert abs(summ.zero_fraction[-1] - want) < 3 * se
        assert summ.ks_consecutive[-1] < summ.ks_consecutive[0]
        assert summ.stabilized()

    def test_subcritical_mass_collapses(self):
        sub = types.SimpleNamespace(kind="triple", alpha=-0.6, beta=0.5,
                                    levy=NoJumps())
        ens = csbp.simulate_ensemble(sub, 1.0, 10.0, 3000, dt=1e-3,
                                     master_seed=37,
                                     obs_times=[2.0, 6.0, 10.0])
        summ = csbp.seneta_heyde_estimate(sub, ens)
        assert summ.rate == pytest.approx(-0.6)
        assert summ.zero_fraction[-1] > 0.98


def test_path_csv_roundtrip():
    p = csbp.simulate_csbp(QUAD, 0.5, 1.0, dt=5e-3, rng=41)
    buf = io.StringIO()
    csbp.write_path_csv(p, buf)
    buf.seek(0)
    q = csbp.read_path_csv(buf)
    assert np.array_equal(p.times, q.times)
    assert np.array_equal(p.z, q.z)
    assert p.absorbed == q.absorbed
