import math

import numpy as np
import pytest

from hogl.exceptions import DfTooLargeError
from hogl.solver import Coefficients, adaptive_weights, fit_bcd, PenaltySpec, lambda_max
from hogl.tuning import (
    TuningGrid,
    count_df,
    egcv,
    grid_search,
    make_grid,
    render_degrees,
    resolve_exponent,
    residual_trace,
    selected_model,
)

from conftest import simulated_problem


@pytest.fixture(scope="module")
def bcd_path(sim_problem):
    w = adaptive_weights(sim_problem, "bcd")
    grid = make_grid(sim_problem, w, "bcd")
    return grid, grid_search(sim_problem, "bcd", grid, w, keep_path=True)


class TestGrid:
    def test_shape(self, bcd_path):
        grid, _ = bcd_path
        assert grid.deltas.size == 10 and grid.lambdas.shape == (10, 100)
        np.testing.assert_allclose(grid.deltas, np.arange(10) / 9, atol=1e-15)

    def test_log_spacing(self, bcd_path):
        grid, _ = bcd_path
        ratios = grid.lambdas[:, 1:] / grid.lambdas[:, :-1]
        np.testing.assert_allclose(ratios, ratios[:, :1] * np.ones_like(ratios), rtol=1e-12)
        np.testing.assert_allclose(grid.lambdas[:, -1], 1e-4 * grid.lambdas[:, 0], rtol=1e-12)

    def test_top_is_lambda_max(self, sim_problem, bcd_path):
        grid, res = bcd_path
        w = adaptive_weights(sim_problem, "bcd")
        for delta, row in zip(grid.deltas, grid.lambdas):
            assert row[0] == lambda_max(sim_problem, delta, w, "bcd")
        tops = [r for r in res.path if r["lambda"] in set(grid.lambdas[:, 0])]
        assert all(r["df"] == 0 for r in tops)


class TestEGCV:
    def setup_method(self):
        rng = np.random.default_rng(0)
        self.Y = rng.standard_normal((20, 4))
        self.Yh = self.Y + 0.1 * rng.standard_normal((20, 4))
        self.S = np.eye(4) + 0.1

    def test_zero_df(self):
        R = self.Y - self.Yh
        num = np.trace(R.T @ R @ np.linalg.inv(self.S))
        assert egcv(self.Y, self.Yh, self.S, 0, 20, 4, 6.0) == pytest.approx(num, rel=1e-12)

    def test_perfect_fit(self):
        assert egcv(self.Y, self.Y, self.S, 5, 20, 4, 6.0) == 0.0

    def test_monotone_in_df(self):
        a = egcv(self.Y, self.Yh, self.S, 3, 20, 4, 6.0)
        b = egcv(self.Y, self.Yh, self.S, 4, 20, 4, 6.0)
        assert a < b

    def test_df_too_large(self):
        with pytest.raises(DfTooLargeError):
            egcv(self.Y, self.Yh, self.S, 80, 20, 4, 6.0)

    def test_exponents(self):
        assert resolve_exponent("log-np", 100, 10) == pytest.approx(math.log(1000))
        assert resolve_exponent("sqrt-np", 100, 10) == pytest.approx(math.sqrt(1000))
        assert resolve_exponent(2.5, 100, 10) == 2.5

    def test_gram_trace_matches_direct(self, sim_problem):
        w = adaptive_weights(sim_problem, "bcd")
        coefs = fit_bcd(sim_problem, PenaltySpec(0.5, 0.05 * lambda_max(
            sim_problem, 0.5, w, "bcd"), w))
        Yh = sim_problem.mu_hat + sim_problem.A @ coefs.theta @ sim_problem.X.T
        direct = egcv(sim_problem.Y, Yh, sim_problem.S, 0, sim_problem.n, sim_problem.p, 1.0)
        for route, M in (("bcd", coefs.xi), ("mm", coefs.theta)):
            assert residual_trace(sim_problem, M, route) == pytest.approx(direct, rel=1e-9)

    def test_null_cell_value(self, sim_problem, bcd_path):
        _, res = bcd_path
        R = sim_problem.Y - sim_problem.mu_hat
        null = np.trace(R.T @ R @ np.linalg.inv(sim_problem.S))
        zero_rows = [r for r in res.path if r["df"] == 0]
        assert zero_rows
        for r in zero_rows:
            assert r["egcv"] == pytest.approx(null, rel=1e-10)


class TestDf:
    def test_zero(self):
        assert count_df(np.zeros((3, 4))) == 0

    def test_degree_two_row(self):
        M = np.zeros((2, 6))
        M[0, 3:] = [1.0, -2.0, 0.5]
        assert count_df(M) == 3

    def test_native_matrix(self):
        xi = np.array([[0.0, 1.0]])
        theta = np.array([[0.0, 2.0]])
        assert count_df(Coefficients(theta=theta, xi=xi, route="bcd")) == 1

    def test_dense_at_zero_penalty(self, sim_problem):
        w = adaptive_weights(sim_problem, "bcd")
        coefs = fit_bcd(sim_problem, PenaltySpec(1.0, 0.0, w), tol=1e-12)
        assert count_df(coefs) == sim_problem.k * sim_problem.m


class TestSelectedModel:
    def test_degree_one(self):
        row = 0.85 * np.array([[0, 0, 0, 0, -3, 0.5]])
        variables, degrees = selected_model(row, 6)
        assert list(variables) == [0] and degrees == [1]

    def test_zero_row_and_constant(self):
        M = np.zeros((2, 6))
        M[1, -1] = 2.0
        variables, degrees = selected_model(M, 6)
        assert list(variables) == [1]
        assert degrees == [None, 0]
        assert render_degrees(degrees) == [0, 0]

    def test_blocks(self):
        M = np.array([[0.0, 0.0, 1.0, 0.0, 0.0]])
        assert selected_model(M, (2, 2, 1))[1] == [1]

    def test_degrees_agree_across_bases(self, bcd_path, sim_problem):
        _, res = bcd_path
        assert selected_model(res.coefs.xi, 6)[1] == selected_model(res.coefs.theta, 6)[1]


class TestGridSearch:
    def test_single_cell(self, sim_problem):
        w = adaptive_weights(sim_problem, "bcd")
        res = grid_search(sim_problem, "bcd", TuningGrid.single(0.5, 3.0), w)
        assert (res.delta, res.lam) == (0.5, 3.0)
        direct = fit_bcd(sim_problem, PenaltySpec(0.5, 3.0, w))
        np.testing.assert_allclose(res.coefs.xi, direct.xi, atol=1e-8)

    def test_argmin(self, bcd_path):
        _, res = bcd_path
        assert len(res.path) == 1000
        assert res.egcv <= min(r["egcv"] for r in res.path)
        assert res.egcv == pytest.approx(min(r["egcv"] for r in res.path), rel=1e-12)

    def test_df_mostly_monotone(self, bcd_path):
        _, res = bcd_path
        df = np.array([r["df"] for r in res.path]).reshape(10, 100)
        steps = np.diff(df, axis=1)
        assert np.mean(steps >= 0) >= 0.95

    def test_tie_break_prefers_sparser(self, sim_problem):
        w = adaptive_weights(sim_problem, "bcd")
        top = lambda_max(sim_problem, 1.0, w, "bcd")
        grid = TuningGrid(np.array([1.0]), np.array([[4 * top, 2 * top, top]]))
        res = grid_search(sim_problem, "bcd", grid, w)
        assert res.lam == 4 * top and res.df == 0

    def test_easy_problem_selects_truth(self):
        hits = 0
        for rep in range(100):
            prob = simulated_problem(rep=rep, n=500, snr=3.0)
            w = adaptive_weights(prob, "bcd")
            res = grid_search(prob, "bcd", make_grid(prob, w, "bcd"), w)
            hits += set(res.selected_variables.tolist()) >= set(range(5))
        assert hits >= 90
