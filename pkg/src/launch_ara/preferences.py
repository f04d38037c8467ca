"""Buyer CARA utilities over (time, price, quality), their priors, and the company's utility."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from ._rng import as_generator
from .reliability import GammaSpec

logger = logging.getLogger(__name__)

EXP_CLAMP = 700.0


@dataclass(frozen=True)
class ProductSignal:
    t: float
    p: float
    q: float

    def __post_init__(self):
        if self.t < 0 or self.p <= 0 or self.q < 0:
            raise ValueError(f"invalid product signal {self}")


@dataclass(frozen=True)
class BuyerWeights:
    w1: float
    w2: float
    w3: float

    def __post_init__(self):
        w = (self.w1, self.w2, self.w3)
        if min(w) < 0 or abs(sum(w) - 1.0) > 1e-12:
            raise ValueError(f"weights must be nonnegative and sum to 1, got {w}")

    def as_array(self) -> np.ndarray:
        return np.array([self.w1, self.w2, self.w3])


@dataclass(frozen=True)
class BuyerPrefPrior:
    """Dirichlet prior on the weights and Gamma prior on risk aversion.

    ``rho_fixed`` replaces the Gamma prior with a point mass (used by the
    risk-aversion sensitivity sweep).
    """

    dirichlet_alpha: Tuple[float, float, float] = (1.0, 2.0, 1.0)
    rho_spec: GammaSpec = GammaSpec(5.0, 1.0)
    rho_fixed: Optional[float] = None

    def __post_init__(self):
        alpha = tuple(float(a) for a in self.dirichlet_alpha)
        object.__setattr__(self, "dirichlet_alpha", alpha)
        if len(alpha) != 3 or min(alpha) <= 0:
            raise ValueError("dirichlet_alpha must be three positive numbers")
        if self.rho_fixed is not None and not self.rho_fixed > 0:
            raise ValueError("rho_fixed must be positive")


@dataclass(frozen=True)
class Normalizer:
    t_scale: float = 2000.0
    p_scale: float = 15000.0
    q_scale: float = 150.0

    def __post_init__(self):
        if min(self.t_scale, self.p_scale, self.q_scale) <= 0:
            raise ValueError("normalizer scales must be positive")


@dataclass(frozen=True)
class CompanyUtility:
    """Identity (risk neutral) or CARA ``1 - exp(-rho * money / money_scale)``."""

    kind: str = "identity"
    rho: float = 1.0
    money_scale: float = 1e6

    def __post_init__(self):
        if self.kind not in ("identity", "cara"):
            raise ValueError(f"unknown company utility kind {self.kind!r}")
        if self.kind == "cara" and not (self.rho > 0 and self.money_scale > 0):
            raise ValueError("CARA company utility needs rho > 0 and money_scale > 0")

    @property
    def is_identity(self) -> bool:
        return self.kind == "identity"

    def __call__(self, money):
        return company_utility(self, money)


def normalize(raw: ProductSignal, norm: Normalizer) -> Tuple[float, float, float]:
    return (raw.t / norm.t_scale, raw.p / norm.p_scale, raw.q / norm.q_scale)


def cara_exponent(t, p, q, w1, w2, w3, rho):
    """``rho * (w1 t + w2 p + w3 q)`` on normalised attributes, clamped to +-700.

    Returns ``(exponent, saturated)``.
    """
    raw = rho * (w1 * t + w2 * p + w3 * q)
    clipped = np.clip(raw, -EXP_CLAMP, EXP_CLAMP)
    saturated = bool(np.any(clipped != raw))
    if saturated:
        logger.debug("CARA exponent saturated at +-%g", EXP_CLAMP)
    return clipped, saturated


def cara_utility(norm_signal, w: BuyerWeights, rho: float, return_flag: bool = False):
    """Buyer utility ``1 - exp(-rho * (-w1 t - w2 p - w3 q))``."""
    if not rho > 0:
        raise ValueError("rho must be positive")
    t, p, q = norm_signal
    expo, saturated = cara_exponent(t, p, q, w.w1, w.w2, w.w3, rho)
    value = 1.0 - np.exp(expo)
    value = float(value) if np.ndim(value) == 0 else value
    return (value, saturated) if return_flag else value


def sample_pref(prior: BuyerPrefPrior, seed=None, size: Optional[int] = None):
    """Draw weights and risk aversion.

    With ``size=None`` returns ``(BuyerWeights, rho)``; otherwise arrays of
    shape ``(size, 3)`` and ``(size,)``.
    """
    rng = as_generator(seed)
    n = 1 if size is None else size
    w = rng.dirichlet(prior.dirichlet_alpha, n)
    # Dirichlet draws can miss the unit sum by a few ulps.
    w /= w.sum(axis=1, keepdims=True)
    if prior.rho_fixed is not None:
        rho = np.full(n, float(prior.rho_fixed))
    else:
        rho = prior.rho_spec.sample(rng, n)
    if size is None:
        return BuyerWeights(*map(float, w[0])), float(rho[0])
    return w, rho


def company_utility(u: CompanyUtility, money):
    if u.kind == "identity":
        return money
    expo = np.clip(-u.rho * np.asarray(money, dtype=float) / u.money_scale, -EXP_CLAMP, EXP_CLAMP)
    value = 1.0 - np.exp(expo)
    return float(value) if np.ndim(value) == 0 else value


def prior_weight_mean(prior: BuyerPrefPrior) -> np.ndarray:
    alpha = np.asarray(prior.dirichlet_alpha)
    return alpha / alpha.sum()


def rho_mean(prior: BuyerPrefPrior) -> float:
    return prior.rho_fixed if prior.rho_fixed is not None else prior.rho_spec.mean


__all__ = [
    "ProductSignal",
    "BuyerWeights",
    "BuyerPrefPrior",
    "Normalizer",
    "CompanyUtility",
    "normalize",
    "cara_utility",
    "sample_pref",
    "company_utility",
    "EXP_CLAMP",
]
