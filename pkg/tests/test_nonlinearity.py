import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.optimize import brentq

from spmelab.entropy import make_standard_eta
from spmelab.nonlinearity import (
    RegularizationError,
    compute_R_lambda,
    compute_eps_n,
    eval_Psi,
    eval_Psi_f,
    linear_nonlinearity,
    make_power_law,
    make_q_eta,
    nonlinearity_from_config,
    regularize_A,
    tabulated_from_csv,
    validate_assumption_A,
)

# Frozen from the quadrature oracle below: integral of sqrt(2 z) over [0,1].
PSI_M2_AT_1 = 0.9428090415820635


def quad_psi(nl, r):
    val, _ = quad(lambda z: float(nl.eval_a(z)), 0.0, r, epsabs=1e-12)
    return val


def test_power_law_values():
    nl = make_power_law(2.0, K=2.0)
    assert nl.eval_A(2.0) == pytest.approx(4.0, abs=1e-14)
    assert nl.eval_a(2.0) == pytest.approx(2.0, rel=1e-14)
    assert make_power_law(3.0).eval_A(-1.0) == -1.0  # oddness


def test_power_law_rejects_small_m():
    with pytest.raises(ValueError):
        make_power_law(1.0)
    with pytest.raises(ValueError):
        make_power_law(0.5)


def test_psi_closed_form_matches_quadrature_oracle():
    nl = make_power_law(2.0)
    assert quad_psi(nl, 1.0) == pytest.approx(PSI_M2_AT_1, abs=1e-11)
    assert eval_Psi(nl, 1.0) == pytest.approx(PSI_M2_AT_1, rel=1e-12)
    for r in (0.25, 0.5, 1.7, 3.0):
        assert eval_Psi(nl, r) == pytest.approx(quad_psi(nl, r), rel=1e-9)


def test_psi_trivial_and_odd():
    for m in (1.5, 2.0, 3.0):
        nl = make_power_law(m)
        assert eval_Psi(nl, 0.0) == 0.0
        r = np.linspace(-3, 3, 301)
        assert np.max(np.abs(nl.eval_psi(-r) + nl.eval_psi(r))) == 0.0
    assert eval_Psi(make_power_law(2.0), -1.0) == pytest.approx(-PSI_M2_AT_1, rel=1e-12)


def test_psi_f():
    nl = make_power_law(2.0)
    for r in (0.3, 1.0, 2.0):
        assert eval_Psi_f(nl, lambda z: 1.0, r) == pytest.approx(eval_Psi(nl, r), rel=1e-8)
    assert eval_Psi_f(nl, lambda z: 0.0, 1.7) == 0.0
    # f(z) = z: integral of z sqrt(2 z) over [0, 1] = 2 sqrt(2) / 5
    oracle, _ = quad(lambda z: z * math.sqrt(2.0 * z), 0.0, 1.0, epsabs=1e-12)
    assert eval_Psi_f(nl, lambda z: z, 1.0) == pytest.approx(oracle, rel=1e-9)
    assert oracle == pytest.approx(2.0 * math.sqrt(2.0) / 5.0, abs=1e-10)


def test_chain_consistency_fd():
    # finite-difference derivative of Psi matches a, away from the origin
    for m in (1.5, 2.0, 3.0):
        nl = make_power_law(m)
        r = np.linspace(0.05, 3.0, 50)
        h = 1e-6 * np.maximum(1.0, r)
        fd = (nl.eval_psi(r + h) - nl.eval_psi(r - h)) / (2.0 * h)
        assert np.max(np.abs(fd - nl.eval_a(r))) <= 1e-6


class TestQEta:
    def test_linear_eta_gives_A(self):
        nl = make_power_law(2.0)
        spec = make_q_eta(nl, lambda z: np.ones_like(np.asarray(z, dtype=float)))
        r = np.linspace(-3, 3, 61)
        assert np.max(np.abs(spec(r) - nl.eval_A(r))) <= 1e-6
        assert spec(0.0) == 0.0

    def test_linearity_in_eta(self):
        nl = make_power_law(2.0)
        neg = make_q_eta(nl, lambda z: -np.ones_like(np.asarray(z, dtype=float)))
        r = np.linspace(-2, 2, 41)
        assert np.max(np.abs(neg(r) + nl.eval_A(r))) <= 1e-6

    def test_eta_delta_against_quadrature_oracle(self):
        nl = make_power_law(2.0)
        eta = make_standard_eta(0.1)
        spec = make_q_eta(nl, eta)
        oracle, _ = quad(lambda z: float(eta.eval_d1(z)) * 2.0 * abs(z), 0.0, 1.0,
                         epsabs=1e-12, limit=200)
        assert spec(1.0) == pytest.approx(oracle, abs=5e-7)

    @pytest.mark.parametrize("m,delta", [(1.5, 0.1), (2.0, 0.1), (2.0, 0.05), (3.0, 0.5)])
    def test_derivative_identity(self, m, delta):
        nl = make_power_law(m)
        eta = make_standard_eta(delta)
        spec = make_q_eta(nl, eta)
        z = np.linspace(-2.0, 2.0, 401)
        h = 1e-4
        fd = (spec(z + h) - spec(z - h)) / (2.0 * h)
        target = eta.eval_d1(z) * nl.eval_a(z) ** 2
        assert np.max(np.abs(fd - target)) <= 5e-4


class TestValidators:
    def test_power_law_m2_K2_all_pass(self):
        rep = validate_assumption_A(make_power_law(2.0, K=2.0))
        assert rep.passed, str(rep)

    def test_linear_disguised_as_m2_passes(self):
        # necessary-condition checks only: A(r) = r with m = 2 declared passes
        rep = validate_assumption_A(linear_nonlinearity(K=2.0, m=2.0))
        assert rep.passed, str(rep)

    def test_small_K_fails_lower_bound(self):
        rep = validate_assumption_A(make_power_law(2.0, K=0.5))
        names = {c.name for c in rep.failures()}
        assert "a_lower_bound" in names  # 0.5 * sqrt(2) < 1 at r = 1
        assert "K_at_least_1" in names

    def test_failures_are_entries_not_exceptions(self):
        rep = validate_assumption_A(make_power_law(2.0, K=0.5))
        assert not rep.passed
        assert rep.to_dict()["passed"] is False


class TestEpsN:
    def test_constant_a_gives_one(self):
        assert compute_eps_n(linear_nonlinearity(), 5) == 1.0

    def test_lipschitz_oracle_m3(self):
        # a(r) = sqrt(3) |r|: modulus over a 3-eps window is 3 sqrt(3) eps
        nl = make_power_law(3.0)
        for n in (1, 4):
            cap = min(1.0, 1.0 / (3.0 * math.sqrt(3.0) * n))
            got = compute_eps_n(nl, n)
            assert got <= cap * (1.0 + 1e-12)
            assert got >= cap / 2.0  # dyadic scan resolution

    def test_monotone_in_n(self):
        nl = make_power_law(2.0)
        assert compute_eps_n(nl, 1) >= compute_eps_n(nl, 10)


class TestRegularize:
    @pytest.mark.parametrize("m,n", [(2.0, 5), (2.0, 10), (1.5, 5), (3.0, 10)])
    def test_bounds(self, m, n):
        base = make_power_law(m)
        reg = regularize_A(base, n)
        r = np.linspace(-n, n, 10001)
        assert np.max(np.abs(base.eval_a(r) - reg.eval_a(r))) <= 4.0 / n
        wide = np.linspace(-(3 * n + 5), 3 * n + 5, 20001)
        assert reg.eval_a(wide).min() >= 2.0 / n

    def test_floor_at_origin(self):
        base = make_power_law(2.0)
        reg = regularize_A(base, 10)
        assert base.eval_a(0.0) == 0.0
        assert reg.eval_a(0.0) >= 0.2

    def test_regularized_keeps_assumptions_with_3K(self):
        reg = regularize_A(make_power_law(2.0, K=2.0), 10)
        assert reg.K == 6.0
        assert validate_assumption_A(reg).passed

    def test_rejects_double_regularization(self):
        reg = regularize_A(make_power_law(2.0), 10)
        with pytest.raises(ValueError):
            regularize_A(reg, 5)

    def test_rejects_invalid_base(self):
        bad = make_power_law(2.0, K=0.5)
        with pytest.raises(RegularizationError):
            regularize_A(bad, 10)

    def test_odd_and_monotone(self):
        reg = regularize_A(make_power_law(2.0), 10)
        r = np.linspace(-8, 8, 1001)
        assert np.max(np.abs(reg.eval_A(-r) + reg.eval_A(r))) <= 1e-12
        assert np.all(np.diff(reg.eval_A(r)) > 0.0)
        # psi consistent with a by finite differences
        h = 1e-6
        fd = (reg.eval_psi(r + h) - reg.eval_psi(r - h)) / (2.0 * h)
        assert np.max(np.abs(fd - reg.eval_a(r))) <= 1e-4


class TestRLambda:
    def test_identical_maps(self):
        a = make_power_law(2.0).eval_a
        assert compute_R_lambda(a, a, 0.5) == math.inf

    def test_root_finding_oracle(self):
        a2 = make_power_law(2.0).eval_a
        a3 = make_power_law(3.0).eval_a
        lam = 0.1
        got = compute_R_lambda(a2, a3, lam, R_max=10.0)
        # oracle: first positive root of |sqrt(2) r^(1/2) - sqrt(3) r| = 0.1
        g = lambda r: abs(math.sqrt(2.0) * math.sqrt(r) - math.sqrt(3.0) * r) - lam
        r0 = brentq(g, 1e-12, 0.5)
        assert got == pytest.approx(r0, abs=2e-4)

    def test_lambda_zero_distinct_maps(self):
        a2 = make_power_law(2.0).eval_a
        a3 = make_power_law(3.0).eval_a
        assert compute_R_lambda(a2, a3, 0.0, R_max=10.0) <= 1e-3

    def test_monotone_in_lambda(self):
        a2 = make_power_law(2.0).eval_a
        a3 = make_power_law(3.0).eval_a
        vals = [compute_R_lambda(a2, a3, lam, R_max=10.0) for lam in (0.0, 0.05, 0.1, 0.5)]
        assert all(vals[i] <= vals[i + 1] for i in range(len(vals) - 1))

    def test_rejects_bad_lambda(self):
        a = make_power_law(2.0).eval_a
        with pytest.raises(ValueError):
            compute_R_lambda(a, a, 1.5)


class TestSerialization:
    def test_power_law_roundtrip(self):
        nl = make_power_law(2.5, K=3.0)
        clone = nonlinearity_from_config(nl.to_config())
        r = np.linspace(-2, 2, 101)
        assert np.array_equal(clone.eval_A(r), nl.eval_A(r))
        assert clone.m == nl.m and clone.K == nl.K

    def test_regularized_roundtrip(self):
        reg = regularize_A(make_power_law(2.0), 10)
        clone = nonlinearity_from_config(reg.to_config())
        r = np.linspace(-5, 5, 101)
        assert np.max(np.abs(clone.eval_a(r) - reg.eval_a(r))) == 0.0

    def test_tabulated_csv(self, tmp_path):
        r = np.linspace(-2.0, 2.0, 41)
        A = np.sign(r) * np.abs(r) ** 2
        path = tmp_path / "table.csv"
        np.savetxt(path, np.column_stack([r, A]), delimiter=",")
        nl = tabulated_from_csv(path, m=2.0, K=2.0)
        probe = np.linspace(-1.8, 1.8, 37)
        assert np.max(np.abs(nl.eval_A(probe) - np.sign(probe) * probe ** 2)) <= 1e-3
        rep = validate_assumption_A(nl, samples=np.linspace(-1.9, 1.9, 301))
        assert rep.checks[1].name == "A_odd"

    def test_tabulated_rejects_nonmonotone(self, tmp_path):
        path = tmp_path / "bad.csv"
        np.savetxt(path, np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 0.5], [3.0, 2.0]]), delimiter=",")
        with pytest.raises(ValueError):
            tabulated_from_csv(path, m=2.0)
