import dataclasses
import warnings

import numpy as np
import pytest

from hogl.exceptions import ConvergenceWarning, SingularSError
from hogl.prox import ProxProblem, prox_solve
from hogl.solver import (
    PenaltySpec,
    adaptive_weights,
    build_problem,
    effective_weights,
    fit_bcd,
    fit_mm,
    gradient_rss,
    lambda_max,
    ols,
    prss_value,
    rss,
    rss_surrogate,
    unbiased_sigma,
    xi_to_theta,
)
from hogl.simulation import (
    SimConfig,
    build_truth,
    generate_dataset,
    replication_rng,
    scaled_autocorrelation,
)

from conftest import simulated_problem


def dense_design(prob):
    return np.kron(prob.A, prob.V), prob.U.ravel()


def leading_zeros(row):
    nz = np.flatnonzero(row)
    return row.size if nz.size == 0 else int(nz[0])


def full_kkt_residual(prob, theta, levels):
    """Distance of ``theta`` from the fixed point of one proximal-gradient step."""
    G = gradient_rss(theta.ravel(), prob).reshape(theta.shape)
    step = theta - G / prob.L
    worst = 0.0
    for i in range(prob.k):
        new = prox_solve(ProxProblem(step[i], levels[i] / prob.L, prob.block_sizes))
        worst = max(worst, float(np.max(np.abs(new - theta[i]))))
    return worst


class TestSigma:
    def test_symmetric(self, sim_problem):
        assert np.array_equal(sim_problem.S, sim_problem.S.T)

    def test_no_residual_space(self):
        rng = np.random.default_rng(0)
        A = rng.standard_normal((20, 3))
        Y = np.column_stack([np.ones(20), A]) @ rng.standard_normal((4, 5))
        with pytest.raises(SingularSError):
            unbiased_sigma(Y, A - A.mean(axis=0))

    def test_unbiased(self):
        rng = np.random.default_rng(1)
        n, p, k = 2000, 4, 3
        Sigma = scaled_autocorrelation(p, 0.5)
        root = np.linalg.cholesky(Sigma)
        total = np.zeros((p, p))
        for _ in range(200):
            A = rng.uniform(-1, 1, (n, k))
            Y = A @ rng.standard_normal((k, p)) + rng.standard_normal((n, p)) @ root.T + 3.0
            total += unbiased_sigma(Y, A)
        np.testing.assert_allclose(total / 200, Sigma, rtol=0.05, atol=0.05 * Sigma.max())


class TestBuildProblem:
    def test_single_column(self):
        n = 12
        rng = np.random.default_rng(2)
        A_raw = np.arange(1.0, n + 1)[:, None]
        X = np.vander(np.linspace(-1, 1, 5), 2)
        prob = build_problem(rng.standard_normal((n, 5)), A_raw, X)
        assert prob.G[0, 0] == pytest.approx(1.0)
        assert abs(prob.A.sum()) < 1e-12

    def test_factorization(self, sim_problem):
        assert np.linalg.norm(sim_problem.V - sim_problem.H @ sim_problem.Q) <= 1e-10
        np.testing.assert_allclose(np.diag(sim_problem.G), 1.0, atol=1e-12)

    def test_lipschitz_bound(self, sim_problem):
        Z, _ = dense_design(sim_problem)
        ZZ = Z.T @ Z
        rng = np.random.default_rng(3)
        assert sim_problem.L > 0
        for _ in range(20):
            x = rng.standard_normal(ZZ.shape[0])
            assert np.linalg.norm(ZZ @ x) <= sim_problem.L * np.linalg.norm(x) * (1 + 1e-12)
        assert sim_problem.L == pytest.approx(np.linalg.eigvalsh(ZZ)[-1], rel=1e-10)


class TestGradient:
    def test_stationary_at_ols(self, sim_problem):
        assert np.linalg.norm(gradient_rss(ols(sim_problem).ravel(), sim_problem)) <= 1e-8

    def test_zero(self, small_problem):
        Z, u = dense_design(small_problem)
        np.testing.assert_allclose(gradient_rss(np.zeros(Z.shape[1]), small_problem),
                                   -Z.T @ u, atol=1e-10)

    def test_dense_formula(self, small_problem):
        Z, u = dense_design(small_problem)
        th = np.random.default_rng(4).standard_normal(Z.shape[1])
        np.testing.assert_allclose(gradient_rss(th, small_problem), Z.T @ (Z @ th - u),
                                   atol=1e-10)

    @pytest.mark.parametrize("seed", range(5))
    def test_finite_differences(self, seed):
        prob = simulated_problem(seed=seed)
        rng = np.random.default_rng(seed)
        size = prob.k * prob.m
        for _ in range(3):
            th = rng.standard_normal(size)
            h = 1e-5
            fd = np.empty(size)
            for i in range(size):
                e = np.zeros(size)
                e[i] = h
                fd[i] = (rss(th + e, prob) - rss(th - e, prob)) / (2 * h)
            g = gradient_rss(th, prob)
            assert np.linalg.norm(g - fd) <= 1e-5 * np.linalg.norm(g)


class TestSurrogate:
    def test_sandwich(self, sim_problem):
        rng = np.random.default_rng(5)
        size = sim_problem.k * sim_problem.m
        for _ in range(50):
            a, b = rng.standard_normal(size), rng.standard_normal(size)
            assert rss_surrogate(a, a, sim_problem) == pytest.approx(rss(a, sim_problem),
                                                                    rel=1e-12)
            assert rss_surrogate(b, a, sim_problem) >= rss(b, sim_problem) - 1e-10


class TestWeights:
    def test_ols_identity(self, sim_problem):
        np.testing.assert_allclose(ols(sim_problem, "mm") @ sim_problem.Q.T,
                                   ols(sim_problem, "bcd"), atol=1e-10)

    @pytest.mark.parametrize("route", ["mm", "bcd"])
    def test_nonincreasing(self, sim_problem, route):
        w = adaptive_weights(sim_problem, route)
        assert np.all(w > 0)
        assert np.all(np.diff(w, axis=1) <= 1e-12 * w[:, :-1])

    def test_reciprocal(self, sim_problem):
        xi = ols(sim_problem, "bcd")
        w = adaptive_weights(sim_problem, "bcd")
        assert w[0, 0] == pytest.approx(1 / abs(xi[0, 0]))
        assert w[2, -1] == pytest.approx(1 / np.linalg.norm(xi[2]))

    def test_effective(self):
        w = effective_weights(np.full((2, 3), 2.0), 0.25)
        np.testing.assert_allclose(w, [[0.5, 0.5, 2.0]] * 2)


class TestLambdaMax:
    def test_zero_data(self, sim_problem):
        flat = dataclasses.replace(sim_problem, C_V=0 * sim_problem.C_V,
                                   C_H=0 * sim_problem.C_H)
        w = adaptive_weights(sim_problem, "mm")
        assert lambda_max(flat, 0.5, w, "mm") == 0.0

    @pytest.mark.parametrize("route, fitter", [("mm", fit_mm), ("bcd", fit_bcd)])
    @pytest.mark.parametrize("delta", [0.0, 0.4, 1.0])
    def test_screening(self, route, fitter, delta):
        for seed in range(20):
            prob = simulated_problem(seed=seed, rep=1)
            w = adaptive_weights(prob, route)
            coefs = fitter(prob, PenaltySpec(delta, lambda_max(prob, delta, w, route), w))
            assert np.all(coefs.native == 0.0)

    @pytest.mark.parametrize("route, fitter", [("mm", fit_mm), ("bcd", fit_bcd)])
    def test_sharp_for_row_groups(self, route, fitter):
        # at delta = 0 only the whole-row group is penalized and the bound is tight
        hits = 0
        for seed in range(20):
            prob = simulated_problem(seed=seed, rep=1)
            w = adaptive_weights(prob, route)
            top = lambda_max(prob, 0.0, w, route)
            hits += bool(np.any(fitter(prob, PenaltySpec(0.0, 0.95 * top, w)).native))
        assert hits > 0

    @pytest.mark.parametrize("route", ["mm", "bcd"])
    def test_upper_bounds_exact_threshold(self, sim_problem, route):
        # exact zero threshold per row from the nested-ball distance recursion
        w = adaptive_weights(sim_problem, route)
        C = sim_problem.cross(route)
        for delta in (0.2, 0.6, 1.0):
            we = effective_weights(w, delta)
            top = lambda_max(sim_problem, delta, w, route)

            def residual(lam):
                worst = 0.0
                for c, wr in zip(C, we):
                    e = 0.0
                    for j, blk in enumerate(np.split(c, sim_problem.offsets[1:-1])):
                        e = max(np.hypot(e, np.linalg.norm(blk)) - lam * wr[j], 0.0)
                    worst = max(worst, e)
                return worst

            lo, hi = 0.0, top
            assert residual(hi) == 0.0
            for _ in range(100):
                mid = 0.5 * (lo + hi)
                lo, hi = (lo, mid) if residual(mid) == 0.0 else (mid, hi)
            assert hi <= top


def _fit_quiet(fitter, *args, **kwargs):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        return fitter(*args, **kwargs)


class TestMM:
    def test_ols_limit(self, sim_problem):
        w = adaptive_weights(sim_problem, "mm")
        # plain MM contracts by about 1 - 1/cond(Z'Z) per step, hence the budget
        coefs = _fit_quiet(fit_mm, sim_problem, PenaltySpec(1.0, 0.0, w), tol=1e-16,
                           max_iter=2_000_000)
        assert np.max(np.abs(coefs.theta - ols(sim_problem))) <= 1e-6

    def test_descent_and_stationarity(self):
        prob = simulated_problem(n=300)
        w = adaptive_weights(prob, "mm")
        spec = PenaltySpec(0.5, 0.05 * lambda_max(prob, 0.5, w, "mm"), w)
        coefs = fit_mm(prob, spec, tol=1e-10, max_iter=50000, record=True)
        assert coefs.converged
        steps = np.diff(coefs.trace)
        assert np.all(steps <= 1e-10 * (1 + np.abs(coefs.trace[1:])))
        assert coefs.trace[-1] == pytest.approx(prss_value(coefs, prob, spec), rel=1e-10)
        assert full_kkt_residual(prob, coefs.theta, spec.levels()) <= 1e-6

    def test_nonconvergence_flagged(self, sim_problem):
        w = adaptive_weights(sim_problem, "mm")
        with pytest.warns(ConvergenceWarning):
            coefs = fit_mm(sim_problem, PenaltySpec(1.0, 1e-3, w), max_iter=3)
        assert not coefs.converged and coefs.n_iter == 3


class TestBCD:
    def test_ols_limit(self, sim_problem):
        w = adaptive_weights(sim_problem, "bcd")
        coefs = _fit_quiet(fit_bcd, sim_problem, PenaltySpec(1.0, 0.0, w), tol=1e-13,
                           max_iter=200000)
        assert np.max(np.abs(coefs.xi - ols(sim_problem, "bcd"))) <= 1e-6
        assert np.max(np.abs(coefs.theta - ols(sim_problem, "mm"))) <= 1e-6

    def test_descent(self, sim_problem):
        w = adaptive_weights(sim_problem, "bcd")
        spec = PenaltySpec(0.3, 0.02 * lambda_max(sim_problem, 0.3, w, "bcd"), w)
        coefs = fit_bcd(sim_problem, spec, record=True)
        steps = np.diff(coefs.trace)
        assert np.all(steps <= 1e-10 * (1 + np.abs(coefs.trace[1:])))
        assert coefs.trace[-1] == pytest.approx(prss_value(coefs, sim_problem, spec),
                                                rel=1e-10)

    def test_theta_mapping(self, sim_problem):
        w = adaptive_weights(sim_problem, "bcd")
        spec = PenaltySpec(1.0, 0.05 * lambda_max(sim_problem, 1.0, w, "bcd"), w)
        coefs = fit_bcd(sim_problem, spec)
        np.testing.assert_allclose(coefs.theta @ sim_problem.Q.T, coefs.xi, atol=1e-12)
        np.testing.assert_array_equal(coefs.theta, xi_to_theta(coefs.xi, sim_problem))

    def test_hierarchy_inherited(self):
        for seed in range(10):
            prob = simulated_problem(seed=seed, rep=2)
            w = adaptive_weights(prob, "bcd")
            for frac in (0.3, 0.1, 0.02):
                spec = PenaltySpec(0.7, frac * lambda_max(prob, 0.7, w, "bcd"), w)
                coefs = fit_bcd(prob, spec)
                for th, xi in zip(coefs.theta, coefs.xi):
                    assert leading_zeros(th) >= leading_zeros(xi)


class TestObjectiveValue:
    def test_zero(self, sim_problem):
        spec = PenaltySpec(1.0, 1.0, np.ones((sim_problem.k, sim_problem.q)))
        zero = np.zeros((sim_problem.k, sim_problem.m))
        assert prss_value(zero, sim_problem, spec) == pytest.approx(
            0.5 * np.sum(sim_problem.U ** 2))

    def test_basis_invariance(self, sim_problem):
        spec = PenaltySpec(1.0, 0.0, np.ones((sim_problem.k, sim_problem.q)))
        a = prss_value(ols(sim_problem, "mm"), sim_problem, spec, route="mm")
        b = prss_value(ols(sim_problem, "bcd"), sim_problem, spec, route="bcd")
        assert a == pytest.approx(b, abs=1e-8)

    def test_routes_agree_unpenalized(self, sim_problem):
        w = np.ones((sim_problem.k, sim_problem.q))
        mm = _fit_quiet(fit_mm, sim_problem, PenaltySpec(1.0, 0.0, w), tol=1e-16,
                        max_iter=2_000_000)
        bcd = _fit_quiet(fit_bcd, sim_problem, PenaltySpec(1.0, 0.0, w), tol=1e-13,
                         max_iter=200000)
        assert np.max(np.abs(mm.theta - bcd.theta)) <= 1e-5


def test_penalty_spec_validation():
    with pytest.raises(ValueError):
        PenaltySpec(1.5, 1.0, np.ones((2, 2)))
    with pytest.raises(ValueError):
        PenaltySpec(0.5, -1.0, np.ones((2, 2)))
    with pytest.raises(ValueError):
        PenaltySpec(0.5, 1.0, np.zeros((2, 2)))
