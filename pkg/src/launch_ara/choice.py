"""Purchase-probability estimators for the advised company's product (index 0)."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from ._rng import substream, float_key
from .preferences import BuyerPrefPrior, BuyerWeights, Normalizer, ProductSignal, cara_utility, normalize, sample_pref


@dataclass(frozen=True)
class ChoiceEstimate:
    pi: float
    mc_size: int
    std_error: float

    def __post_init__(self):
        if not -1e-12 <= self.pi <= 1 + 1e-12:
            raise ValueError(f"probability out of range: {self.pi}")
        if self.std_error < 0:
            raise ValueError("std_error must be nonnegative")

    @classmethod
    def from_draws(cls, per_draw) -> "ChoiceEstimate":
        per_draw = np.asarray(per_draw, dtype=float)
        m = per_draw.size
        se = float(np.std(per_draw, ddof=1) / math.sqrt(m)) if m > 1 else 0.0
        return cls(float(np.clip(per_draw.mean(), 0.0, 1.0)), m, se)


@dataclass(frozen=True)
class SegmentSpec:
    weight: float
    prior: Optional[BuyerPrefPrior]
    normalizer: Normalizer = Normalizer()

    def __post_init__(self):
        if not 0 <= self.weight <= 1:
            raise ValueError("segment weight must be in [0, 1]")


def mnl_first_prob(u_own: np.ndarray, u_comp: np.ndarray) -> np.ndarray:
    """Per-draw logit share of product 0; ``u_comp`` has shape ``(k, M)``."""
    top = np.maximum(u_own, u_comp.max(axis=0)) if u_comp.size else u_own
    num = np.exp(u_own - top)
    return num / (num + np.exp(u_comp - top).sum(axis=0))


def mnl_conditional(signals: Sequence[ProductSignal], w: BuyerWeights, rho: float, norm: Normalizer) -> np.ndarray:
    if len(signals) < 2:
        raise ValueError("need at least two products")
    u = np.array([cara_utility(normalize(s, norm), w, rho) for s in signals])
    return softmax(u)


def softmax(u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    z = np.exp(u - u.max())
    return z / z.sum()


QualitySampler = Callable[[float, int, np.random.Generator], np.ndarray]


def posterior_quality_sampler(param_sampler, T: float) -> QualitySampler:
    """Residual faults after releasing at ``t1``, integrating over NHPP parameters."""

    def sample(t1, size, rng):
        a, c = param_sampler(size, rng)
        return rng.poisson(a * (np.power(T, c) - np.power(t1, c))).astype(float)

    return sample


def _draw_utilities(decision, own_quality_sampler, competitor_models, pref_prior, norm, M, seed):
    t1, p1 = decision
    w, rho = sample_pref(pref_prior, substream(seed, 1), size=M)
    q1 = np.asarray(own_quality_sampler(t1, M, substream(seed, 2, float_key(t1))), dtype=float)

    def util(t, p, q):
        expo = rho * (w[:, 0] * t / norm.t_scale + w[:, 1] * p / norm.p_scale + w[:, 2] * q / norm.q_scale)
        return 1.0 - np.exp(np.clip(expo, -700.0, 700.0))

    u_own = util(t1, p1, q1)
    comp = []
    for k, model in enumerate(competitor_models):
        s = model.sample(M, substream(seed, 3, k))
        comp.append(util(s.t, s.p, s.q))
    return u_own, np.array(comp).reshape(len(comp), M)


def mnl_choice_prob(decision, own_quality_sampler, competitor_models, pref_prior, norm, M: int, seed=None) -> ChoiceEstimate:
    """Logit purchase probability with preferences and competitors integrated out by MC."""
    if M < 1:
        raise ValueError("M must be >= 1")
    u_own, u_comp = _draw_utilities(decision, own_quality_sampler, competitor_models, pref_prior, norm, M, seed)
    return ChoiceEstimate.from_draws(mnl_first_prob(u_own, u_comp))


def eumax_first_prob(u_own: np.ndarray, u_comp: np.ndarray) -> np.ndarray:
    """Per-draw probability that a utility maximiser picks product 0.

    Ties are split evenly, which is the expectation of uniform tie-breaking.
    """
    best = np.maximum(u_own, u_comp.max(axis=0)) if u_comp.size else u_own
    n_max = 1 + np.sum(u_comp == best, axis=0)
    return np.where(u_own == best, 1.0 / n_max, 0.0)


def eumax_choice_prob(decision, own_quality_sampler, competitor_models, pref_prior, norm, M: int, seed=None) -> ChoiceEstimate:
    if M < 1:
        raise ValueError("M must be >= 1")
    u_own, u_comp = _draw_utilities(decision, own_quality_sampler, competitor_models, pref_prior, norm, M, seed)
    return ChoiceEstimate.from_draws(eumax_first_prob(u_own, u_comp))


def segment_mixture_prob(per_segment) -> ChoiceEstimate:
    """Mixed binomial propensity ``sum_j p_j * pi_j`` over market segments."""
    weights = np.array([spec.weight for spec, _ in per_segment], dtype=float)
    if abs(weights.sum() - 1.0) > 1e-9:
        raise ValueError(f"segment weights must sum to 1, got {weights.sum()}")
    pis = np.array([est.pi for _, est in per_segment])
    ses = np.array([est.std_error for _, est in per_segment])
    sizes = [est.mc_size for _, est in per_segment]
    pi = float(np.dot(weights, pis))
    se = float(math.sqrt(np.dot(weights**2, ses**2)))
    return ChoiceEstimate(min(max(pi, 0.0), 1.0), int(sum(sizes)), se)
