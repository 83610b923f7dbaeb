import math

import numpy as np
import pytest

from spmelab.config import RunConfig
from spmelab.entropy import linear_eta, make_standard_eta
from spmelab.solver import solve
from spmelab.verification import (
    EnsembleResult,
    SpaceTest,
    TestVerdict,
    TimeBump,
    contraction_statistic,
    contraction_test,
    entropy_residual,
    entropy_residual_terms,
    frac_regularity_probe,
    initial_attainment_probe,
    moment_report,
    stability_probe,
)


def _cfg(**over):
    base = dict(
        nonlinearity={"kind": "power_law", "m": 2.0, "K": 2.0, "n": 5},
        diffusion={"modes": ["0.5*u"], "M": 1, "K": 1.0, "variant": "b", "kappa_bar": 0.75},
        initial={"expr": "sin(2*pi*x1)"},
        grid={"d": 1, "N": 32},
        time={"T": 0.02, "dt": 5e-4, "save_every": 4},
        ensemble={"seed_base": 77, "count": 8},
    )
    base.update(over)
    return RunConfig(**base)


SEEDS8 = tuple(range(100, 108))


class TestVerdictType:
    def test_margin_sign_convention(self):
        v = TestVerdict(name="x", statistic=1.0, tolerance=2.0, seeds=(1,), config_hash="h")
        assert v.margin == 1.0 and v.passed
        w = TestVerdict(name="x", statistic=3.0, tolerance=2.0, seeds=(1,), config_hash="h")
        assert w.margin == -1.0 and not w.passed


class TestEnsembleResult:
    def test_requires_eight_seeds_for_se(self):
        with pytest.raises(ValueError):
            EnsembleResult(name="e", seeds=(1, 2, 3), per_seed={"x": np.zeros((3, 2))})
        ens = EnsembleResult(name="e", seeds=SEEDS8, per_seed={"x": np.arange(16.0).reshape(8, 2)})
        assert ens.mean("x").shape == (2,)

    def test_expectation_linearity(self):
        vals = np.random.default_rng(3).normal(size=(8, 5))
        ens = EnsembleResult(name="e", seeds=SEEDS8, per_seed={"x": vals})
        manual = vals.sum(axis=0) / 8.0
        assert np.max(np.abs(ens.mean("x") - manual)) <= 1e-15
        assert np.array_equal(ens.mean("x"), ens.mean("x"))


class TestContraction:
    def test_coupling_zero_law_exact(self):
        cfg = _cfg()
        D, _ = contraction_statistic(cfg, cfg, seeds=SEEDS8, threads=1)
        assert np.all(D == 0.0)

    def test_mismatched_configs_rejected(self):
        cfg = _cfg()
        other = _cfg(grid={"d": 1, "N": 64})
        with pytest.raises(ValueError):
            contraction_statistic(cfg, other, seeds=SEEDS8)

    def test_constant_shift_deterministic(self):
        # sigma = 0: the deterministic porous-medium semigroup is an L1
        # contraction; a constant shift keeps D(t) <= D(0)
        cfg = _cfg(diffusion={"modes": [], "M": 0},
                   time={"T": 0.05, "dt": 5e-4, "save_every": 10})
        verdict, ens, series = contraction_test(cfg, "sin(2*pi*x1)", "sin(2*pi*x1)+0.25",
                                                seeds=(1,) , threads=1, c_disc=0.0)
        D = series["D_mean"]
        assert abs(D[0] - 0.25) <= 1e-12      # D(0) = c * |T^d|
        assert verdict.passed
        assert np.all(D <= D[0] + 1e-10)

    def test_stochastic_baseline_passes(self):
        cfg = _cfg()
        verdict, _, series = contraction_test(cfg, "sin(2*pi*x1)", "0.5*sin(2*pi*x1)",
                                              seeds=SEEDS8, threads=1)
        assert verdict.passed, verdict.to_dict()
        assert series["D_mean"][0] > 0.0


class TestEntropyResidual:
    def test_linear_pair_is_antisymmetric(self):
        cfg = _cfg()
        traj = solve(cfg, seed=5, save_every=1)
        phi_t = TimeBump(0.8 * cfg.T)
        phi_x = SpaceTest(amp=0.5, k=1)
        plus = entropy_residual_terms(traj, cfg, linear_eta(+1), phi_t, phi_x)
        minus = entropy_residual_terms(traj, cfg, linear_eta(-1), phi_t, phi_x)
        assert plus["residual"] == pytest.approx(-minus["residual"], rel=1e-12, abs=1e-14)

    def test_constant_solution_residual_is_quadrature_error(self):
        # sigma = 0 and constant initial data: u stays constant; the residual
        # reduces to the trapezoid error of the time test function, which is
        # second order in dt
        eta = make_standard_eta(0.1)

        def residual(dt):
            cfg = _cfg(diffusion={"modes": [], "M": 0}, initial={"expr": "0.4+0*x1"},
                       time={"T": 0.02, "dt": dt, "save_every": 1})
            traj = solve(cfg, seed=1, save_every=1)
            return entropy_residual_terms(traj, cfg, eta, TimeBump(0.8 * 0.02), SpaceTest(amp=0.5))["residual"]

        coarse, fine = residual(5e-4), residual(1.25e-4)
        assert abs(coarse) <= 1e-3
        assert abs(fine) <= abs(coarse) / 8.0   # ~16x for a 2nd-order rule

    def test_flux_constant_invariance(self):
        # adding a constant to q_eta leaves the Delta-phi term untouched
        # because the discrete integral of Delta rho vanishes on the torus
        cfg = _cfg()
        grid = cfg.build_grid()
        phi_x = SpaceTest(amp=0.5, k=1)
        lap = phi_x.laplacian(grid.coords())
        assert abs(float(lap.sum()) * grid.cell_volume) <= 1e-12

    def test_requires_compact_support_in_time(self):
        cfg = _cfg()
        with pytest.raises(ValueError):
            entropy_residual(cfg, make_standard_eta(0.1), TimeBump(2.0 * cfg.T),
                             SpaceTest(), seeds=SEEDS8)

    def test_baseline_residual_passes(self):
        cfg = _cfg()
        verdict, _ = entropy_residual(cfg, make_standard_eta(0.1), TimeBump(0.8 * cfg.T),
                                      SpaceTest(amp=0.5), seeds=SEEDS8, threads=1, c_disc=None)
        assert verdict.passed, verdict.to_dict()


class TestStability:
    def test_needs_three_levels(self):
        with pytest.raises(ValueError):
            stability_probe(_cfg(), levels=(5, 10), ref_n=40, seeds=SEEDS8)

    def test_trend_and_bound_on_small_case(self):
        cfg = _cfg(time={"T": 0.02, "dt": 5e-4, "save_every": 1},
                   grid={"d": 1, "N": 32})
        trend, bound, ens, rows = stability_probe(cfg, levels=(5, 10, 20), ref_n=40,
                                                  seeds=SEEDS8, threads=1)
        assert trend.passed, trend.to_dict()
        assert bound.passed, bound.to_dict()
        dists = [r["dist_mean"] for r in rows]
        assert dists[0] >= dists[-1] > 0.0
        assert all(np.isfinite(r["n_terms"]) for r in rows)

    def test_zero_perturbation_distance_exact(self):
        # identical level and reference: coupled runs coincide bitwise
        cfg = _cfg(time={"T": 0.01, "dt": 5e-4, "save_every": 1})
        _, _, ens, rows = stability_probe(cfg, levels=(40, 40, 40), ref_n=40,
                                          seeds=SEEDS8, threads=1)
        assert all(r["dist_mean"] == 0.0 for r in rows)


class TestFracReg:
    def _traj(self, expr, N=64, steps=4):
        cfg = _cfg(initial={"expr": expr}, grid={"d": 1, "N": N},
                   diffusion={"modes": [], "M": 0},
                   time={"T": steps * 5e-4, "dt": 5e-4, "save_every": 1})
        return cfg, solve(cfg, seed=1)

    def test_constant_field_zero_increments(self):
        cfg, traj = self._traj("0.7+0*x1")
        slope_v, bound_v, series = frac_regularity_probe([traj], np.geomspace(0.07, 0.75, 5))
        assert np.all(series["S_mean"] == 0.0)
        assert slope_v.passed and bound_v.passed

    def test_kernel_resolution_guard(self):
        cfg, traj = self._traj("sin(2*pi*x1)")
        with pytest.raises(ValueError):
            frac_regularity_probe([traj], [1.0 / 64, 0.5])

    def test_decade_guard(self):
        cfg, traj = self._traj("sin(2*pi*x1)")
        with pytest.raises(ValueError):
            frac_regularity_probe([traj], [0.1, 0.2])

    def test_smooth_field_passes(self):
        cfg, traj = self._traj("sin(2*pi*x1)", N=128, steps=8)
        eps = np.geomspace(4.5 / 128, 0.45, 7)
        slope_v, bound_v, series = frac_regularity_probe([traj], eps, m=2.0,
                                                         nl=cfg.build_base_nonlinearity())
        assert slope_v.passed, slope_v.to_dict()
        assert bound_v.passed

    def test_gridscale_sawtooth_fails_slope(self):
        # unit jumps at the grid scale: increments stay O(1) for every
        # kernel width, so S(eps) ~ eps^0 and the slope test must reject
        grid_N = 128
        cfg = _cfg(grid={"d": 1, "N": grid_N}, diffusion={"modes": [], "M": 0},
                   time={"T": 0.0, "dt": 5e-4, "save_every": 1},
                   initial={"expr": "cos(128*pi*x1)"}, regularize=False)
        traj = solve(cfg, seed=1)     # zero steps: a single snapshot
        eps = np.geomspace(5.0 / grid_N, 0.5, 6)
        slope_v, _, series = frac_regularity_probe([traj], eps, m=2.0)
        assert not slope_v.passed
        assert abs(slope_v.witness["slope"]) < 0.3
        assert series["S_mean"][0] > 0.1


class TestAttainment:
    def test_constant_stationary_zero(self):
        cfg = _cfg(diffusion={"modes": [], "M": 0}, initial={"expr": "0.3+0*x1"},
                   time={"T": 0.02, "dt": 5e-4, "save_every": 1})
        traj = solve(cfg, seed=1, keep_fields=False)
        mono, halving, series = initial_attainment_probe([traj], [0.02, 0.01, 0.005])
        assert np.all(series["G_mean"] == 0.0)
        assert mono.passed and halving.passed

    def test_window_must_align_with_saves(self):
        cfg = _cfg(time={"T": 0.02, "dt": 5e-4, "save_every": 4})
        traj = solve(cfg, seed=1, keep_fields=False)
        with pytest.raises(ValueError):
            initial_attainment_probe([traj], [0.003, 0.0015])

    def test_linear_mode_analytic_oracle(self):
        # A(u) = u, sigma = 0, xi = cos: u(t_k) scales by the implicit-Euler
        # factor of the discrete eigenvalue, so G(h) has a closed form
        N, dt = 64, 5e-4
        cfg = RunConfig(
            nonlinearity={"kind": "linear"},
            diffusion={"modes": [], "M": 0},
            initial={"expr": "cos(2*pi*x1)"},
            grid={"d": 1, "N": N},
            time={"T": 0.04, "dt": dt, "save_every": 1},
            ensemble={"seed_base": 1, "count": 1},
            regularize=False,
        )
        traj = solve(cfg, seed=1, keep_fields=False)
        h_list = [0.04, 0.02, 0.01]
        mono, halving, series = initial_attainment_probe([traj], h_list)
        lam_h = 4.0 / (1.0 / N) ** 2 * math.sin(math.pi / N) ** 2
        g = 1.0 / (1.0 + lam_h * dt)
        ks = np.arange(traj.save_count)
        dist2 = (g ** ks - 1.0) ** 2 * 0.5
        for j, h in enumerate(sorted(h_list, reverse=True)):
            k = int(round(h / dt))
            w = np.zeros(k + 1)
            w[:-1] += 0.5 * dt
            w[1:] += 0.5 * dt
            oracle = float((dist2[: k + 1] * w).sum() / h)
            assert series["G_mean"][j] == pytest.approx(oracle, rel=1e-6)
        assert mono.passed and halving.passed


class TestMoments:
    def test_zero_solution(self):
        cfg = _cfg(diffusion={"modes": [], "M": 0}, initial={"expr": "0*x1"},
                   time={"T": 0.01, "dt": 5e-4, "save_every": 1})
        verdict, table = moment_report(cfg, n_values=(5, 10), seeds=SEEDS8, threads=1)
        assert verdict.passed
        assert all(v == 0.0 for stats in table.values() for v in stats.values())

    def test_small_sweep_passes(self):
        cfg = _cfg(time={"T": 0.02, "dt": 5e-4, "save_every": 1})
        verdict, table = moment_report(cfg, n_values=(20, 40, 80), seeds=SEEDS8, threads=1)
        assert verdict.passed, verdict.to_dict()
        for stats in table.values():
            assert all(math.isfinite(v) for v in stats.values())

    def test_spread_grows_for_coarse_levels(self):
        # the floor 2/n dominates the gradient statistics at very coarse
        # levels, so the spread must increase as the schedule coarsens
        cfg = _cfg(time={"T": 0.02, "dt": 5e-4, "save_every": 1})
        coarse, _ = moment_report(cfg, n_values=(5, 10, 20), seeds=SEEDS8, threads=1)
        fine, _ = moment_report(cfg, n_values=(40, 80, 160), seeds=SEEDS8, threads=1)
        assert fine.statistic < coarse.statistic


def test_frac_probe_shift_invariance():
    # periodic quadrature: spatially rolling every field leaves S(eps) intact
    from dataclasses import replace as dc_replace

    cfg = _cfg(grid={"d": 1, "N": 64}, diffusion={"modes": [], "M": 0},
               time={"T": 0.005, "dt": 5e-4, "save_every": 1})
    traj = solve(cfg, seed=3)
    eps = np.geomspace(5.0 / 64, 0.8, 5)
    _, _, base = frac_regularity_probe([traj], eps, m=2.0)
    shifted = dc_replace(traj, fields=[np.roll(f, 17) for f in traj.fields])
    _, _, rolled = frac_regularity_probe([shifted], eps, m=2.0)
    # same multiset of summands, reduction order shifts by the roll: ULP-level
    assert np.allclose(base["S_mean"], rolled["S_mean"], rtol=1e-13, atol=1e-18)
