import numpy as np
import pytest
from scipy import stats

from launch_ara.competitors import (
    COMPETITOR_A_PRIOR,
    AttrDist,
    BugPrior,
    IngredientBeliefs,
    Level0Model,
    StrategicModel,
    archetype_model,
    competitor_scenario,
    lattice_edges,
    load_or_build_strategic,
    sample_archetype,
    sample_level0,
    sample_level1,
    sample_level1_argmax,
)
from launch_ara.market import MarketSimulator
from launch_ara.optimize import DecisionBox, grid_search
from launch_ara.scenario import paper_default

T = 2000.0
BOUNDS = (3000.0, 15000.0)


def toy_strategic(surface):
    surface = np.asarray(surface, dtype=float)
    nt, np_ = surface.shape
    return StrategicModel(T, lattice_edges(0, T, nt), lattice_edges(*BOUNDS, np_), surface, BugPrior(q_fixed=0.0))


class TestLevel0:
    def test_uniform_means(self):
        s = Level0Model.uniform(T, BOUNDS).sample(100_000, np.random.default_rng(0))
        assert s.t.mean() == pytest.approx(1000, rel=0.02)
        assert s.p.mean() == pytest.approx(9000, rel=0.02)
        assert s.t.min() >= 0 and s.t.max() <= T

    def test_bug_prior_moments(self):
        a, c = BugPrior().sample_params(np.random.default_rng(1), 100_000)
        assert a.mean() == pytest.approx(0.256, rel=0.03)
        assert c.mean() == pytest.approx(0.837, rel=0.03)
        assert COMPETITOR_A_PRIOR.sd == pytest.approx(0.2)

    def test_point_distribution(self):
        model = Level0Model(T, AttrDist.point(500.0), AttrDist.point(8000.0), BugPrior(q_fixed=3.0))
        s = model.sample(10, np.random.default_rng(0))
        assert np.all(s.t == 500.0) and np.all(s.p == 8000.0) and np.all(s.q == 3.0)

    def test_residual_zero_at_T(self):
        q = BugPrior().sample_residual(np.full(100, T), T, np.random.default_rng(0))
        assert np.all(q == 0)

    def test_single_draw_helpers(self):
        d = sample_level0(Level0Model.uniform(T, BOUNDS), seed=0)
        assert 0 <= d.t <= T and BOUNDS[0] <= d.p <= BOUNDS[1] and d.q >= 0
        d = sample_archetype("careful", T, BOUNDS, seed=0)
        assert 0 <= d.t <= T

    def test_bad_support(self):
        with pytest.raises(ValueError):
            Level0Model(T, AttrDist("uniform", 0.0, 3000.0), AttrDist("uniform", *BOUNDS))


class TestArchetypes:
    def test_aggressive_time(self):
        s = archetype_model("aggressive", T, BOUNDS).sample(100_000, np.random.default_rng(2))
        assert s.t.mean() == pytest.approx(2000 * 2 / 7, rel=0.02)

    def test_careful_price(self):
        s = archetype_model("careful", T, BOUNDS).sample(100_000, np.random.default_rng(3))
        assert s.p.mean() == pytest.approx(3000 + 12000 * 5 / 7, rel=0.02)

    def test_ordering(self):
        rng = np.random.default_rng(4)
        agg = archetype_model("aggressive", T, BOUNDS).sample(10_000, rng)
        car = archetype_model("careful", T, BOUNDS).sample(10_000, rng)
        assert agg.t.mean() < car.t.mean()

    def test_unknown(self):
        with pytest.raises(ValueError):
            archetype_model("sleepy", T, BOUNDS)


class TestStrategicSampling:
    def test_constant_surface_uniform(self):
        model = toy_strategic(np.ones((4, 5)))
        cells = model.sample_cells(100_000, np.random.default_rng(0))
        counts = np.bincount(cells, minlength=20)
        assert stats.chisquare(counts).pvalue > 1e-3

    def test_single_positive_cell(self):
        surf = -np.ones((3, 3))
        surf[1, 2] = 5.0
        model = toy_strategic(surf)
        cells = model.sample_cells(1000, np.random.default_rng(0))
        assert np.all(cells == 1 * 3 + 2)
        s = model.sample(1000, np.random.default_rng(1))
        assert np.all((s.t >= model.t_edges[1]) & (s.t <= model.t_edges[2]))
        assert np.all((s.p >= model.p_edges[2]) & (s.p <= model.p_edges[3]))

    def test_two_cells_one_to_three(self):
        model = toy_strategic([[1.0, 3.0]] + [[0.0, 0.0]])
        cells = model.sample_cells(100_000, np.random.default_rng(5))
        frac = np.mean(cells == 1)
        se = np.sqrt(0.75 * 0.25 / 100_000)
        assert abs(frac - 0.75) < 3 * se

    def test_nonpositive_surface_falls_back(self):
        with pytest.warns(RuntimeWarning):
            model = toy_strategic(-np.ones((2, 2)))
        np.testing.assert_allclose(model.mass, 0.25)

    def test_total_variation(self):
        rng = np.random.default_rng(6)
        model = toy_strategic(rng.normal(1.0, 1.0, (10, 10)))
        cells = model.sample_cells(1_000_000, rng)
        emp = np.bincount(cells, minlength=100) / 1e6
        assert 0.5 * np.abs(emp - model.mass.ravel()).sum() < 0.02

    def test_single_draw(self):
        d = sample_level1(toy_strategic(np.ones((2, 2))), seed=0)
        assert 0 <= d.t <= T

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            StrategicModel(T, lattice_edges(0, T, 2), lattice_edges(*BOUNDS, 2), np.ones((3, 3)))


@pytest.fixture(scope="module")
def view():
    return competitor_scenario(paper_default(), IngredientBeliefs(cost_cv=0.0))


class TestStrategicBuild:
    def test_view_is_level0_world(self, view):
        assert all(c.kind == "level0" for c in view.competitors)
        assert view.own_bugs.kind == "competitor_prior"

    def test_cache_roundtrip(self, view, tmp_path):
        a = load_or_build_strategic(view, (4, 3), 300, 1, tmp_path)
        files = sorted(p.name for p in tmp_path.iterdir())
        assert len(files) == 2
        b = load_or_build_strategic(view, (4, 3), 300, 1, tmp_path)
        np.testing.assert_array_equal(a.eu_surface, b.eu_surface)
        np.testing.assert_array_equal(a.mass, b.mass)

    def test_argmax_matches_direct_optimum(self, view):
        # With degenerate beliefs the forecast is the competitor's own optimum.
        ts = np.linspace(0, T, 6)
        ps = np.linspace(*BOUNDS, 6)
        draw = sample_level1_argmax(view, IngredientBeliefs(cost_cv=0.0), seed=3, mc_size=500, grid=(ts, ps))
        direct = grid_search(MarketSimulator(view, 500, 3).objective(), DecisionBox((0, T), BOUNDS), (6, 6))
        assert (draw.t, draw.p) == direct.best_point

    def test_profit_shift_keeps_argmax(self, view):
        ts = np.linspace(0, T, 5)
        ps = np.linspace(*BOUNDS, 5)
        base = sample_level1_argmax(view, IngredientBeliefs(cost_cv=0.0), seed=4, mc_size=400, grid=(ts, ps))
        shifted = sample_level1_argmax(view, IngredientBeliefs(cost_cv=0.0, profit_shift_mean=5e5), seed=4, mc_size=400, grid=(ts, ps))
        assert (base.t, base.p) == (shifted.t, shifted.p)

    def test_two_point_grid(self, view):
        ts = np.array([1000.0])
        ps = np.array([3000.0, 9000.0])
        sim = MarketSimulator(view, 400, 8)
        eu = [sim.outcome(1000.0, p).expected_utility for p in ps]
        draw = sample_level1_argmax(view, IngredientBeliefs(cost_cv=0.0), seed=8, mc_size=400, grid=(ts, ps))
        assert draw.p == ps[int(np.argmax(eu))]
