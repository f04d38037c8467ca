import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from launch_ara.optimize import (
    DecisionBox,
    GpConfig,
    MaternGP,
    SaSchedule,
    bayes_opt,
    gp_fit,
    grid_search,
    price_contingency,
    simulated_annealing,
)

PAPER_BOX = DecisionBox((0.0, 2000.0), (3000.0, 15000.0))
UNIT_BOX = DecisionBox((0.0, 1.0), (0.0, 1.0))


def concave(t, p):
    return 3e6 - 1e6 * (((t - 300.0) / 2000.0) ** 2 + ((p - 8300.0) / 12000.0) ** 2)


class TestGridSearch:
    def test_analytic_maximum(self):
        box = DecisionBox((0, 2), (0, 4))
        res = grid_search(lambda t, p: -((t - 1) ** 2) - (p - 2) ** 2, box, (101, 101))
        assert abs(res.best_point[0] - 1) <= 0.02 and abs(res.best_point[1] - 2) <= 0.04

    def test_constant_tie_break(self):
        res = grid_search(lambda t, p: 1.0, PAPER_BOX, (5, 7))
        assert res.best_point == (0.0, 3000.0)

    def test_endpoints_included(self):
        res = grid_search(lambda t, p: t + p, PAPER_BOX, (3, 3))
        assert res.best_point == (2000.0, 15000.0)
        assert res.evaluations_used == 9

    def test_best_is_trace_max(self):
        res = grid_search(concave, PAPER_BOX, (11, 11))
        assert res.best_value == max(v for _, v in res.trace)

    def test_dims_validated(self):
        with pytest.raises(ValueError):
            grid_search(concave, PAPER_BOX, (1, 5))


class TestSimulatedAnnealing:
    def test_agrees_with_grid(self):
        grid = grid_search(concave, PAPER_BOX, (101, 101))
        sa = simulated_annealing(concave, PAPER_BOX, SaSchedule(), seed=0)
        assert sa.best_value == pytest.approx(grid.best_value, rel=0.01)

    def test_cold_limit_is_greedy(self):
        res = simulated_annealing(concave, PAPER_BOX, SaSchedule(t0=1e-12, max_iters=200), seed=1)
        assert res.best_value >= res.trace[0][1]
        # No worsening move is accepted, so the incumbent is the last accepted value.
        assert res.best_value == max(v for _, v in res.trace)

    def test_starts_at_center(self):
        res = simulated_annealing(concave, PAPER_BOX, SaSchedule(max_iters=5), seed=2)
        assert res.trace[0][0] == PAPER_BOX.center

    def test_deterministic(self):
        a = simulated_annealing(concave, PAPER_BOX, SaSchedule(max_iters=100), seed=3)
        b = simulated_annealing(concave, PAPER_BOX, SaSchedule(max_iters=100), seed=3)
        assert a.trace == b.trace

    def test_schedule_validation(self):
        with pytest.raises(ValueError):
            SaSchedule(cooling=1.0)
        with pytest.raises(ValueError):
            SaSchedule(t0=0.0)


class TestGaussianProcess:
    def test_constant_data(self):
        rng = np.random.default_rng(0)
        obs = [(tuple(x), 5.0) for x in rng.random((8, 2))]
        gp = gp_fit(obs)
        q = rng.random((50, 2))
        mean, std = gp.predict(q, return_std=True)
        np.testing.assert_allclose(mean, 5.0)
        assert np.all(std <= gp.prior_std + 1e-12)

    def test_interpolation(self):
        rng = np.random.default_rng(1)
        X = rng.random((10, 2))
        y = np.sin(3 * X[:, 0]) + X[:, 1] ** 2
        gp = MaternGP(optimize=False, noise_variance=1e-10, length_scales=(0.5, 0.5)).fit(X, y)
        mean, std = gp.predict(X, return_std=True)
        np.testing.assert_allclose(mean, y, atol=1e-6)
        jitter_level = (gp.noise_variance_ + gp.jitter_) * gp.y_std_**2
        assert np.all(std**2 <= jitter_level + 1e-12)

    def test_beats_linear_fit_on_quadratic(self):
        X = np.array([[0.1, 0.1], [0.9, 0.2], [0.5, 0.5], [0.2, 0.8], [0.8, 0.9]])
        f = lambda Z: (Z[:, 0] - 0.5) ** 2 + (Z[:, 1] - 0.5) ** 2
        gp = gp_fit(list(zip(map(tuple, X), f(X))))
        g = np.linspace(0, 1, 21)
        Q = np.array([(a, b) for a in g for b in g])
        rmse_gp = np.sqrt(np.mean((gp.predict(Q) - f(Q)) ** 2))
        A = np.column_stack([np.ones(5), X])
        coef, *_ = np.linalg.lstsq(A, f(X), rcond=None)
        rmse_lin = np.sqrt(np.mean((np.column_stack([np.ones(len(Q)), Q]) @ coef - f(Q)) ** 2))
        assert rmse_gp < gp.prior_std
        assert rmse_gp < rmse_lin

    def test_variance_at_observed_points(self):
        rng = np.random.default_rng(2)
        X = rng.random((12, 2))
        y = X[:, 0] * 3 + rng.normal(0, 0.1, 12)
        gp = MaternGP(noise_floor=0.01).fit(X, y)
        _, std = gp.predict(X, return_std=True)
        assert np.all(std**2 <= (gp.noise_variance_ + gp.jitter_) * gp.y_std_**2 + 1e-12)

    def test_needs_two_points(self):
        with pytest.raises(ValueError):
            gp_fit([((0.5, 0.5), 1.0)])

    def test_sklearn_params(self):
        assert MaternGP(nu=1.5).get_params()["nu"] == 1.5


class TestBayesOpt:
    def test_unit_box_optimum(self):
        f = lambda t, p: -((t - 0.3) ** 2) - (p - 0.7) ** 2
        res = bayes_opt(f, UNIT_BOX, GpConfig(n_calls=60), seed=0)
        assert res.best_value >= -1e-2
        assert res.evaluations_used == 60

    def test_agrees_with_grid(self):
        grid = grid_search(concave, PAPER_BOX, (101, 101))
        res = bayes_opt(concave, PAPER_BOX, GpConfig(n_calls=60), seed=1)
        assert res.best_value == pytest.approx(grid.best_value, rel=0.01)

    def test_degenerate_budget(self):
        config = GpConfig(n_calls=21, n_init=20)
        res = bayes_opt(concave, PAPER_BOX, config, seed=2)
        init_best = max(v for _, v in res.trace[:20])
        assert res.evaluations_used == 21
        assert res.best_value >= init_best

    def test_incumbent_monotone_and_deterministic(self):
        a = bayes_opt(concave, PAPER_BOX, GpConfig(n_calls=30), seed=3)
        b = bayes_opt(concave, PAPER_BOX, GpConfig(n_calls=30), seed=3)
        assert a.trace == b.trace
        assert np.all(np.diff(a.incumbent_curve()) >= 0)

    def test_gp_failure_falls_back(self, monkeypatch):
        import launch_ara.optimize as opt

        def broken(*args, **kwargs):
            raise np.linalg.LinAlgError("boom")

        monkeypatch.setattr(opt, "gp_fit", broken)
        res = bayes_opt(concave, PAPER_BOX, GpConfig(n_calls=25), seed=4)
        assert res.evaluations_used == 25

    def test_config_validation(self):
        with pytest.raises(ValueError):
            GpConfig(n_calls=10, n_init=10)
        with pytest.raises(ValueError):
            GpConfig(nu=0.5)


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=5, deadline=None)
def test_points_stay_in_box(seed):
    sa = simulated_annealing(concave, PAPER_BOX, SaSchedule(max_iters=50, neighbor_ranges=(500, 5000)), seed=seed)
    assert all(PAPER_BOX.contains(pt) for pt, _ in sa.trace)
    bo = bayes_opt(concave, PAPER_BOX, GpConfig(n_calls=22), seed=seed)
    assert all(PAPER_BOX.contains(pt) for pt, _ in bo.trace)


class TestPriceContingency:
    def test_separable(self):
        box = DecisionBox((0, 10), (0, 20))
        ps = np.linspace(0, 20, 21)
        p_hat = ps[7]
        curve, coeffs = price_contingency(lambda t, p: -((p - p_hat) ** 2) - t, box, 11, 21)
        assert all(p == p_hat for _, p in curve)
        np.testing.assert_allclose(coeffs, (p_hat, 0, 0), atol=1e-9)

    def test_linear_ridge(self):
        box = DecisionBox((0, 10), (0, 20))
        curve, coeffs = price_contingency(lambda t, p: -((p - (5 + t)) ** 2), box, 11, 201)
        for t, p in curve:
            assert p == pytest.approx(5 + t, abs=0.05)
        assert coeffs[1] == pytest.approx(1.0, abs=0.01)
        assert coeffs[2] == pytest.approx(0.0, abs=1e-3)


@pytest.fixture(scope="module")
def desk_objective():
    from launch_ara.market import MarketSimulator
    from launch_ara.scenario import paper_default

    return MarketSimulator(paper_default(), 100_000, 20240611).objective()


@pytest.fixture(scope="module")
def grid(desk_objective):
    return grid_search(desk_objective, PAPER_BOX, (100, 100))


@pytest.mark.slow
class TestDeskObjective:
    # M is 1e5 rather than 1e6 to keep the run short; common random numbers keep the surface smooth.

    def test_grid_location(self, grid):
        t1, p1 = grid.best_point
        assert 7500 <= p1 <= 9500 and 100 <= t1 <= 900

    def test_sa_close_to_grid(self, desk_objective, grid):
        sa = simulated_annealing(desk_objective, PAPER_BOX, SaSchedule(), seed=0)
        assert sa.best_value == pytest.approx(grid.best_value, rel=0.05)

    def test_bo_close_to_grid(self, desk_objective, grid):
        bo = bayes_opt(desk_objective, PAPER_BOX, GpConfig(n_calls=200), seed=0)
        assert bo.best_value == pytest.approx(grid.best_value, rel=0.05)

    def test_contingency_band(self, desk_objective):
        _, coeffs = price_contingency(desk_objective, PAPER_BOX, 50, 50)
        ts = np.linspace(0, 2000, 201)
        fitted = np.polynomial.polynomial.polyval(ts, coeffs)
        assert fitted.min() >= 7200 and fitted.max() <= 9000
