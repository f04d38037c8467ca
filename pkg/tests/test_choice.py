import math

import numpy as np
import pytest

from launch_ara.choice import (
    ChoiceEstimate,
    SegmentSpec,
    eumax_choice_prob,
    eumax_first_prob,
    mnl_choice_prob,
    mnl_conditional,
    mnl_first_prob,
    segment_mixture_prob,
    softmax,
)
from launch_ara.competitors import AttrDist, BugPrior, Level0Model
from launch_ara.preferences import BuyerPrefPrior, BuyerWeights, Normalizer, ProductSignal

NORM = Normalizer()
T = 2000.0
PRIOR = BuyerPrefPrior()


def exchangeable_setup():
    """Own product and two competitors share one law: t, p uniform, q fixed."""
    t_dist = AttrDist("uniform", 0.0, T)
    p_dist = AttrDist("uniform", 3000.0, 15000.0)
    comp = Level0Model(T, t_dist, p_dist, BugPrior(q_fixed=10.0))

    class OwnRandomised:
        # Decision is ignored: the own product is drawn from the competitor law.
        def __init__(self):
            self.model = comp

        def quality(self, t1, size, rng):
            return np.full(size, 10.0)

    return comp


class TestMnlConditional:
    def test_identical_signals(self):
        s = ProductSignal(100, 8000, 10)
        np.testing.assert_allclose(mnl_conditional([s, s, s], BuyerWeights(0.25, 0.5, 0.25), 5.0, NORM), 1 / 3)

    def test_logit_identity(self):
        np.testing.assert_allclose(softmax([0.2, 0.2 + math.log(3)]), [0.25, 0.75])

    def test_dominance(self):
        good = ProductSignal(0, 3000, 0)
        bad = ProductSignal(2000, 15000, 150)
        probs = mnl_conditional([good, bad], BuyerWeights(0.25, 0.5, 0.25), 50.0, NORM)
        assert np.argmax(probs) == 0

    def test_needs_two(self):
        with pytest.raises(ValueError):
            mnl_conditional([ProductSignal(1, 1, 1)], BuyerWeights(1, 0, 0), 1.0, NORM)

    def test_extreme_utilities_finite(self):
        p = mnl_first_prob(np.array([-1e300]), np.array([[0.0]]))
        assert np.isfinite(p).all()


class TestEumax:
    def test_ties_split(self):
        u = np.array([1.0, 1.0])
        comp = np.array([[1.0, 0.0], [1.0, 2.0]])
        np.testing.assert_allclose(eumax_first_prob(u, comp), [1 / 3, 0.0])

    def test_dominance_is_one(self):
        comp = Level0Model(T, AttrDist.point(2000.0), AttrDist.point(15000.0), BugPrior(q_fixed=150.0))
        est = eumax_choice_prob((0.0, 3000.0), lambda t, m, rng: np.zeros(m), [comp], PRIOR, NORM, 1000, seed=0)
        assert est.pi == 1.0

    def test_degenerate_two_products(self):
        comp = Level0Model(T, AttrDist.point(500.0), AttrDist.point(9000.0), BugPrior(q_fixed=20.0))
        prior = BuyerPrefPrior((1e9, 1e9, 1e9), rho_fixed=2.0)
        est = eumax_choice_prob((400.0, 8000.0), lambda t, m, rng: np.full(m, 20.0), [comp], prior, NORM, 200, seed=0)
        assert est.pi == 1.0


def _exchangeable_prob(fn, M=100_000):
    law = Level0Model(T, AttrDist("uniform", 0.0, T), AttrDist("uniform", 3000.0, 15000.0), BugPrior(q_fixed=10.0))
    # Randomising the own decision over the same law makes all three products exchangeable;
    # we average conditional probabilities over decisions drawn from that law.
    rng = np.random.default_rng(42)
    own = law.sample(1, rng)
    return fn((float(own.t[0]), float(own.p[0])), lambda t, m, r: np.full(m, 10.0), [law, law], PRIOR, NORM, M, 7)


class TestExchangeability:
    @pytest.mark.parametrize("fn", [mnl_choice_prob, eumax_choice_prob])
    def test_one_third_when_own_matches_law(self, fn):
        # Fix every product to the same point so the three are identical.
        point = Level0Model(T, AttrDist.point(800.0), AttrDist.point(9000.0), BugPrior(q_fixed=10.0))
        est = fn((800.0, 9000.0), lambda t, m, r: np.full(m, 10.0), [point, point], PRIOR, NORM, 100_000, seed=1)
        assert abs(est.pi - 1 / 3) <= max(3 * est.std_error, 1e-12)

    def test_reproducible(self):
        a = _exchangeable_prob(mnl_choice_prob, 2000)
        b = _exchangeable_prob(mnl_choice_prob, 2000)
        assert a == b


class TestChoiceEstimate:
    def test_from_draws(self):
        est = ChoiceEstimate.from_draws([0.0, 1.0, 0.5, 0.5])
        assert est.pi == 0.5 and est.mc_size == 4 and est.std_error > 0

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            ChoiceEstimate(1.5, 10, 0.0)


class TestSegmentMixture:
    def test_single(self):
        assert segment_mixture_prob([(SegmentSpec(1.0, PRIOR), ChoiceEstimate(0.4, 10, 0.0))]).pi == pytest.approx(0.4)

    def test_weighted(self):
        out = segment_mixture_prob(
            [(SegmentSpec(0.5, PRIOR), ChoiceEstimate(0.2, 10, 0.01)), (SegmentSpec(0.5, PRIOR), ChoiceEstimate(0.6, 10, 0.01))]
        )
        assert out.pi == pytest.approx(0.4)
        assert out.std_error == pytest.approx(math.sqrt(0.5) * 0.01)

    def test_zero_weight(self):
        out = segment_mixture_prob([(SegmentSpec(1.0, PRIOR), ChoiceEstimate(0.3, 10, 0.0)), (SegmentSpec(0.0, PRIOR), ChoiceEstimate(0.9, 10, 0.0))])
        assert out.pi == pytest.approx(0.3)

    def test_weights_must_sum(self):
        with pytest.raises(ValueError):
            segment_mixture_prob([(SegmentSpec(0.5, PRIOR), ChoiceEstimate(0.3, 10, 0.0))])
