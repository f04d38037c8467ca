"""Power-law NHPP model of software fault discovery.

The expected number of faults found by time ``t`` is ``m(t) = a * t**c``.
Parameters get Gamma priors and a posterior sampled by adaptive random-walk
Metropolis on ``(log a, log c)``.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._rng import as_generator

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class NhppParams:
    a: float
    c: float

    def __post_init__(self):
        if not (self.a > 0 and self.c > 0):
            raise ValueError(f"NHPP parameters must be positive, got a={self.a}, c={self.c}")


@dataclass(frozen=True)
class GammaSpec:
    """Gamma distribution in shape/rate form."""

    shape: float
    rate: float

    def __post_init__(self):
        if not (self.shape > 0 and self.rate > 0):
            raise ValueError(f"Gamma shape and rate must be positive, got {self.shape}, {self.rate}")

    @classmethod
    def from_moments(cls, mean: float, sd: float) -> "GammaSpec":
        if mean <= 0 or sd <= 0:
            raise ValueError("mean and sd must be positive")
        return cls(shape=(mean / sd) ** 2, rate=mean / sd**2)

    @property
    def mean(self) -> float:
        return self.shape / self.rate

    @property
    def sd(self) -> float:
        return math.sqrt(self.shape) / self.rate

    def logpdf(self, x: float) -> float:
        if x <= 0:
            return -math.inf
        return (
            self.shape * math.log(self.rate)
            - math.lgamma(self.shape)
            + (self.shape - 1.0) * math.log(x)
            - self.rate * x
        )

    def sample(self, rng, size=None):
        return rng.gamma(self.shape, 1.0 / self.rate, size)


@dataclass(frozen=True)
class FailureData:
    times: tuple
    t_obs: float

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        object.__setattr__(self, "times", times)
        if not self.t_obs > 0:
            raise ValueError("t_obs must be positive")
        if any(t < 0 or t > self.t_obs for t in times):
            raise ValueError("failure times must lie in [0, t_obs]")
        if any(b < a for a, b in zip(times, times[1:])):
            raise ValueError("failure times must be nondecreasing")

    def __len__(self):
        return len(self.times)

    def to_csv(self, path: Union[str, Path]) -> None:
        lines = [f"# t_obs={self.t_obs!r}", "time_days"]
        lines += [repr(t) for t in self.times]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path: Union[str, Path]) -> "FailureData":
        t_obs = None
        times = []
        header_seen = False
        for raw in Path(path).read_text().splitlines():
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].partition("=")
                if key.strip() == "t_obs":
                    t_obs = float(value)
                continue
            if not header_seen:
                if line != "time_days":
                    raise ValueError(f"{path}: expected header 'time_days', got {line!r}")
                header_seen = True
                continue
            times.append(float(line))
        if t_obs is None:
            raise ValueError(f"{path}: missing '# t_obs=' header comment")
        return cls(times=tuple(times), t_obs=t_obs)


@dataclass(frozen=True)
class PosteriorSamples:
    a: np.ndarray
    c: np.ndarray
    seed_tag: object = None
    acceptance_rate: float = field(default=float("nan"), compare=False)

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        c = np.asarray(self.c, dtype=float)
        if a.ndim != 1 or a.shape != c.shape or a.size == 0:
            raise ValueError("posterior draws must be non-empty 1-d arrays of equal length")
        if np.any(a <= 0) or np.any(c <= 0):
            raise ValueError("posterior draws must be positive")
        a.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "c", c)

    def __len__(self):
        return self.a.size

    @property
    def draws(self) -> list:
        return [NhppParams(float(a), float(c)) for a, c in zip(self.a, self.c)]


def mean_function(params: NhppParams, t):
    """Expected cumulative fault count ``a * t**c``; vectorised over ``t``."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("time must be nonnegative")
    out = params.a * np.power(t, params.c)
    return float(out) if out.ndim == 0 else out


def log_likelihood(params: NhppParams, data: FailureData) -> float:
    times = np.asarray(data.times, dtype=float)
    value = -params.a * data.t_obs**params.c
    if times.size == 0:
        return float(value)
    if params.c < 1 and np.any(times == 0):
        raise ValueError("intensity is singular at t=0 for c < 1")
    intensity = params.a * params.c * np.power(times, params.c - 1.0)
    return float(value + np.sum(np.log(intensity)))


def _log_posterior_fn(data, prior_a, prior_c):
    if data is None or len(data) == 0:
        n = 0
        sum_log_t = 0.0
    else:
        times = np.asarray(data.times, dtype=float)
        if np.any(times == 0):
            raise ValueError("failure data with an event at t=0 is rejected (singular intensity)")
        n = times.size
        sum_log_t = float(np.sum(np.log(times)))
    t_obs = data.t_obs if data is not None else 1.0
    log_t_obs = math.log(t_obs)

    # Density of (log a, log c): prior * likelihood * Jacobian a*c.
    def log_post(log_a, log_c):
        a = math.exp(log_a)
        c = math.exp(log_c)
        value = prior_a.logpdf(a) + prior_c.logpdf(c) + log_a + log_c
        if data is not None:
            value -= a * math.exp(c * log_t_obs)
            if n:
                value += n * (log_a + log_c) + (c - 1.0) * sum_log_t
        return value

    return log_post


def sample_posterior(
    data: Optional[FailureData],
    prior_a: GammaSpec,
    prior_c: GammaSpec,
    n_draws: int = 20_000,
    burn_in: int = 5_000,
    seed=None,
    target_accept: float = 0.3,
) -> PosteriorSamples:
    """Adaptive random-walk Metropolis over ``(log a, log c)``.

    During burn-in the proposal covariance is learnt from the chain and its
    scale is tuned towards ``target_accept``; both are frozen afterwards so
    the retained draws come from a fixed Markov kernel.
    """
    if n_draws < 1:
        raise ValueError("n_draws must be >= 1")
    rng = as_generator(seed)
    log_post = _log_posterior_fn(data, prior_a, prior_c)

    x = np.array([math.log(prior_a.mean), math.log(prior_c.mean)])
    lp = log_post(*x)
    chol = np.diag([prior_a.sd / prior_a.mean, prior_c.sd / prior_c.mean])
    log_scale = math.log(2.38 / math.sqrt(2.0))
    history = []

    def step(x, lp, chol, scale):
        proposal = x + scale * (chol @ rng.standard_normal(2))
        lp_new = log_post(*proposal)
        if math.log(rng.random()) < lp_new - lp:
            return proposal, lp_new, True
        return x, lp, False

    for i in range(burn_in):
        x, lp, accepted = step(x, lp, chol, math.exp(log_scale))
        log_scale += (float(accepted) - target_accept) / math.sqrt(i + 1.0)
        history.append(x)
        if i >= 200 and i % 200 == 0:
            cov = np.cov(np.asarray(history[i // 2 :]).T) + 1e-10 * np.eye(2)
            chol = np.linalg.cholesky(cov)

    scale = math.exp(log_scale)
    out = np.empty((n_draws, 2))
    n_accept = 0
    for i in range(n_draws):
        x, lp, accepted = step(x, lp, chol, scale)
        n_accept += accepted
        out[i] = x
    rate = n_accept / n_draws
    if not 0.1 <= rate <= 0.6:
        warnings.warn(f"posterior sampler acceptance rate {rate:.3f} outside [0.1, 0.6]", RuntimeWarning)
    logger.debug("posterior sampler acceptance rate %.3f", rate)
    draws = np.exp(out)
    return PosteriorSamples(a=draws[:, 0], c=draws[:, 1], seed_tag=seed, acceptance_rate=rate)


def predict_bug_count(params: NhppParams, t: float, seed=None, size=None):
    """Poisson draw(s) of the number of faults discovered by ``t``."""
    rng = as_generator(seed)
    return rng.poisson(mean_function(params, t), size)


def residual_quality(e_at_T, e_at_t):
    """Faults left after release, ``e(T) - e(t)``."""
    diff = np.asarray(e_at_T) - np.asarray(e_at_t)
    if np.any(diff < 0):
        raise ValueError("negative residual quality: e(T) must not be below e(t)")
    return diff.item() if diff.ndim == 0 else diff


def generate_failure_times(params: NhppParams, t_obs: float, seed=None) -> FailureData:
    """Simulate an NHPP path on ``[0, t_obs]`` by inverting the time change."""
    if not t_obs > 0:
        raise ValueError("t_obs must be positive")
    rng = as_generator(seed)
    total = mean_function(params, t_obs)
    n = rng.poisson(total)
    arrivals = np.sort(rng.uniform(0.0, total, n))
    times = np.power(arrivals / params.a, 1.0 / params.c)
    times = np.clip(times, 0.0, t_obs)
    return FailureData(times=tuple(times.tolist()), t_obs=t_obs)


def bundled_failure_data() -> FailureData:
    """Synthetic dataset shipped with the package, drawn from a=0.256, c=0.837 on [0, 1000]."""
    return FailureData.from_csv(Path(__file__).parent / "data" / "synthetic_failures.csv")


class NhppReliabilityModel(BaseEstimator):
    """Bayesian power-law NHPP fitted to failure times.

    ``fit`` runs the posterior sampler; ``predict`` returns the posterior mean
    of ``m(t)``; ``sample_bug_counts`` draws from the posterior predictive.
    """

    def __init__(self, prior_a=None, prior_c=None, n_draws=20_000, burn_in=5_000, random_state=None):
        self.prior_a = prior_a
        self.prior_c = prior_c
        self.n_draws = n_draws
        self.burn_in = burn_in
        self.random_state = random_state

    def _priors(self):
        prior_a = self.prior_a or GammaSpec.from_moments(0.256, 0.1)
        prior_c = self.prior_c or GammaSpec.from_moments(0.837, 0.1)
        return prior_a, prior_c

    def fit(self, X=None, y=None, t_obs=None):
        """Fit on failure times ``X`` observed up to ``t_obs``; ``X=None`` keeps the prior."""
        if X is None:
            data = None
        elif isinstance(X, FailureData):
            data = X
        else:
            times = np.sort(np.ravel(np.asarray(X, dtype=float)))
            if t_obs is None:
                raise ValueError("t_obs is required when fitting on raw failure times")
            data = FailureData(times=tuple(times.tolist()), t_obs=float(t_obs))
        prior_a, prior_c = self._priors()
        self.posterior_ = sample_posterior(
            data, prior_a, prior_c, self.n_draws, self.burn_in, seed=self.random_state
        )
        self.n_failures_ = 0 if data is None else len(data)
        return self

    def predict(self, X):
        check_is_fitted(self, "posterior_")
        t = np.ravel(np.asarray(X, dtype=float))
        post = self.posterior_
        return np.mean(post.a[None, :] * np.power(t[:, None], post.c[None, :]), axis=1)

    def sample_bug_counts(self, t: float, size: int, seed=None) -> np.ndarray:
        check_is_fitted(self, "posterior_")
        rng = as_generator(seed)
        post = self.posterior_
        idx = rng.integers(0, len(post), size)
        return rng.poisson(post.a[idx] * t ** post.c[idx])


def prior_sample(prior_a: GammaSpec, prior_c: GammaSpec, size: int, seed=None) -> PosteriorSamples:
    """Independent draws from the prior; exact alternative to MCMC when there is no data."""
    rng = as_generator(seed)
    return PosteriorSamples(a=prior_a.sample(rng, size), c=prior_c.sample(rng, size), seed_tag=seed)


def as_failure_data(times: Sequence[float], t_obs: float) -> FailureData:
    return FailureData(times=tuple(sorted(float(t) for t in times)), t_obs=float(t_obs))
