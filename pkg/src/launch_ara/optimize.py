"""Maximisers for noisy two-dimensional objectives over a release-time/price box."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Tuple

import numpy as np
from scipy import optimize as sopt
from scipy.linalg import cho_factor, cho_solve, LinAlgError
from scipy.stats import norm as _norm, qmc
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from ._rng import as_generator

logger = logging.getLogger(__name__)

Objective = Callable[[float, float], float]

# Bayesian optimisation reruns the full hyperparameter multistart this often
# and warm-starts from the previous fit in between.
FULL_REFIT_EVERY = 10


@dataclass(frozen=True)
class DecisionBox:
    t_range: Tuple[float, float]
    p_range: Tuple[float, float]

    def __post_init__(self):
        object.__setattr__(self, "t_range", tuple(float(v) for v in self.t_range))
        object.__setattr__(self, "p_range", tuple(float(v) for v in self.p_range))
        if not (self.t_range[1] > self.t_range[0] and self.p_range[1] > self.p_range[0]):
            raise ValueError("decision box intervals must be nondegenerate")

    @property
    def lower(self) -> np.ndarray:
        return np.array([self.t_range[0], self.p_range[0]])

    @property
    def upper(self) -> np.ndarray:
        return np.array([self.t_range[1], self.p_range[1]])

    @property
    def center(self) -> Tuple[float, float]:
        mid = 0.5 * (self.lower + self.upper)
        return float(mid[0]), float(mid[1])

    def to_unit(self, x):
        return (np.asarray(x, dtype=float) - self.lower) / (self.upper - self.lower)

    def from_unit(self, z):
        return self.lower + np.asarray(z, dtype=float) * (self.upper - self.lower)

    def clip(self, x):
        return np.clip(x, self.lower, self.upper)

    def contains(self, point) -> bool:
        x = np.asarray(point, dtype=float)
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))

    @classmethod
    def for_scenario(cls, scenario) -> "DecisionBox":
        return cls((0.0, scenario.market.T), scenario.market.price_bounds)


@dataclass(frozen=True)
class SaSchedule:
    t0: float = 1000.0
    cooling: float = 0.99
    max_iters: int = 1000
    neighbor_ranges: Tuple[float, float] = (50.0, 200.0)

    def __post_init__(self):
        if not self.t0 > 0:
            raise ValueError("initial temperature must be positive")
        if not 0 < self.cooling < 1:
            raise ValueError("cooling rate must lie in (0, 1)")
        if self.max_iters < 1 or min(self.neighbor_ranges) <= 0:
            raise ValueError("max_iters and neighbour half-widths must be positive")


@dataclass(frozen=True)
class GpConfig:
    nu: float = 2.5
    length_scales: Tuple[float, float] = (0.3, 0.3)
    signal_variance: float = 1.0
    noise_variance: float = 1e-6
    noise_floor: float = 1e-10
    optimize_hyperparameters: bool = True
    n_calls: int = 200
    n_init: int = 20
    xi: float = 0.01
    n_candidates: int = 1024
    n_polish: int = 5

    def __post_init__(self):
        if self.nu not in (1.5, 2.5):
            raise ValueError("Matern smoothness must be 3/2 or 5/2")
        if min(self.length_scales) <= 0 or self.signal_variance <= 0 or self.noise_variance < 0:
            raise ValueError("GP hyperparameters must be positive")
        if not 1 <= self.n_init < self.n_calls:
            raise ValueError("need 1 <= n_init < n_calls")


@dataclass
class OptResult:
    best_point: Tuple[float, float]
    best_value: float
    trace: List[Tuple[Tuple[float, float], float]] = field(default_factory=list)
    evaluations_used: int = 0
    method: str = ""

    def trace_rows(self):
        return [(k, pt[0], pt[1], v) for k, (pt, v) in enumerate(self.trace)]

    def incumbent_curve(self) -> np.ndarray:
        return np.maximum.accumulate(np.array([v for _, v in self.trace]))


def lattice(box: DecisionBox, dims) -> Tuple[np.ndarray, np.ndarray]:
    nt, np_ = dims
    if nt < 2 or np_ < 2:
        raise ValueError("grid needs at least 2 points per axis")
    return np.linspace(*box.t_range, nt), np.linspace(*box.p_range, np_)


def evaluate_lattice(objective, ts, ps) -> np.ndarray:
    if hasattr(objective, "evaluate_grid"):
        return np.asarray(objective.evaluate_grid(ts, ps), dtype=float)
    return np.array([[objective(t, p) for p in ps] for t in ts], dtype=float)


def grid_search(objective: Objective, box: DecisionBox, dims=(100, 100)) -> OptResult:
    """Brute force over the full lattice, endpoints included.

    Ties resolve to the lexicographically smallest ``(t, p)`` lattice point.
    """
    ts, ps = lattice(box, dims)
    values = evaluate_lattice(objective, ts, ps)
    flat = int(np.argmax(values))  # first maximiser in row-major order
    i, j = np.unravel_index(flat, values.shape)
    trace = [((float(t), float(p)), float(values[a, b])) for a, t in enumerate(ts) for b, p in enumerate(ps)]
    return OptResult((float(ts[i]), float(ps[j])), float(values[i, j]), trace, values.size, "grid")


def simulated_annealing(objective: Objective, box: DecisionBox, schedule: SaSchedule = SaSchedule(), seed=None, start=None) -> OptResult:
    """Metropolis simulated annealing with clipped uniform neighbours.

    Starts at the box centre unless ``start`` is given and returns the best
    point ever visited.
    """
    rng = as_generator(seed)
    x = np.array(start if start is not None else box.center, dtype=float)
    fx = float(objective(*x))
    best_x, best_f = x.copy(), fx
    trace = [((float(x[0]), float(x[1])), fx)]
    temp = schedule.t0
    half = np.asarray(schedule.neighbor_ranges, dtype=float)
    for _ in range(schedule.max_iters):
        cand = box.clip(x + rng.uniform(-half, half))
        fc = float(objective(*cand))
        trace.append(((float(cand[0]), float(cand[1])), fc))
        delta = fc - fx
        if delta >= 0 or rng.random() < math.exp(delta / temp):
            x, fx = cand, fc
            if fx > best_f:
                best_x, best_f = x.copy(), fx
        temp *= schedule.cooling
    return OptResult((float(best_x[0]), float(best_x[1])), best_f, trace, len(trace), "sa")


# -- Gaussian process ----------------------------------------------------------


def matern_kernel(X1, X2, length_scales, signal_variance, nu=2.5):
    X1 = np.atleast_2d(X1)
    X2 = np.atleast_2d(X2)
    diff = (X1[:, None, :] - X2[None, :, :]) / np.asarray(length_scales)
    r = np.sqrt(np.sum(diff**2, axis=-1))
    if nu == 1.5:
        s = math.sqrt(3.0) * r
        k = (1.0 + s) * np.exp(-s)
    else:
        s = math.sqrt(5.0) * r
        k = (1.0 + s + s**2 / 3.0) * np.exp(-s)
    return signal_variance * k


class MaternGP(RegressorMixin, BaseEstimator):
    """Exact GP regression with a Matern kernel on inputs already scaled to the unit box.

    Targets are standardised internally. With ``optimize=True`` the length
    scales, signal variance and noise variance are fitted by maximising the
    log marginal likelihood from a small multistart grid; ``noise_floor``
    lower-bounds the noise variance (in original target units).
    """

    def __init__(self, nu=2.5, length_scales=(0.3, 0.3), signal_variance=1.0, noise_variance=1e-6,
                 noise_floor=1e-10, optimize=True, max_jitter=1e-4, multistart=True):
        self.nu = nu
        self.length_scales = length_scales
        self.signal_variance = signal_variance
        self.noise_variance = noise_variance
        self.noise_floor = noise_floor
        self.optimize = optimize
        self.max_jitter = max_jitter
        self.multistart = multistart

    def _factor(self, K):
        jitter = 0.0
        n = K.shape[0]
        while True:
            try:
                return cho_factor(K + jitter * np.eye(n), lower=True), jitter
            except LinAlgError:
                jitter = 1e-10 if jitter == 0 else jitter * 10
                if jitter > self.max_jitter:
                    raise LinAlgError("GP covariance is ill-conditioned even with jitter 1e-4")

    def _nll(self, log_params, X, y, noise_lo):
        ls = np.exp(log_params[: X.shape[1]])
        sv = math.exp(log_params[-2])
        nv = max(math.exp(log_params[-1]), noise_lo)
        K = matern_kernel(X, X, ls, sv, self.nu) + nv * np.eye(len(y))
        try:
            L, _ = self._factor(K)
        except LinAlgError:
            return 1e25
        alpha = cho_solve(L, y)
        return float(0.5 * y @ alpha + np.sum(np.log(np.diag(L[0]))) + 0.5 * len(y) * math.log(2 * math.pi))

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float, y_numeric=True)
        if X.shape[0] < 2:
            raise ValueError("GP needs at least two observations")
        self.y_mean_ = float(np.mean(y))
        std = float(np.std(y))
        self.y_std_ = std if std > 0 else 1.0
        ys = (y - self.y_mean_) / self.y_std_
        noise_lo = max(self.noise_floor / self.y_std_**2, 1e-12)
        d = X.shape[1]
        ls = np.broadcast_to(np.asarray(self.length_scales, dtype=float), (d,))
        params = np.concatenate([np.log(ls), [math.log(self.signal_variance), math.log(max(self.noise_variance, noise_lo))]])
        if self.optimize and std > 0:
            bounds = [(math.log(0.02), math.log(5.0))] * d + [(math.log(1e-2), math.log(1e2)), (math.log(noise_lo), math.log(1.0))]
            starts = [params]
            for l0 in (0.1, 0.3, 1.0) if self.multistart else ():
                for n0 in (1e-4, 1e-2):
                    starts.append(np.concatenate([np.full(d, math.log(l0)), [0.0, math.log(max(n0, noise_lo))]]))
            best = None
            for s0 in starts:
                s0 = np.clip(s0, [b[0] for b in bounds], [b[1] for b in bounds])
                res = sopt.minimize(self._nll, s0, args=(X, ys, noise_lo), method="L-BFGS-B", bounds=bounds)
                if best is None or res.fun < best.fun:
                    best = res
            params = best.x
        self.length_scales_ = np.exp(params[:d])
        self.signal_variance_ = float(math.exp(params[-2]))
        self.noise_variance_ = float(max(math.exp(params[-1]), noise_lo))
        K = matern_kernel(X, X, self.length_scales_, self.signal_variance_, self.nu)
        K += self.noise_variance_ * np.eye(len(ys))
        self.L_, self.jitter_ = self._factor(K)
        self.alpha_ = cho_solve(self.L_, ys)
        self.X_train_ = X
        return self

    def predict(self, X, return_std=False):
        check_is_fitted(self, "alpha_")
        X = check_array(X, dtype=float)
        Ks = matern_kernel(X, self.X_train_, self.length_scales_, self.signal_variance_, self.nu)
        mean = Ks @ self.alpha_ * self.y_std_ + self.y_mean_
        if not return_std:
            return mean
        v = cho_solve(self.L_, Ks.T)
        var = self.signal_variance_ - np.sum(Ks * v.T, axis=1)
        var = np.maximum(var, 0.0)
        return mean, np.sqrt(var) * self.y_std_

    @property
    def prior_std(self) -> float:
        check_is_fitted(self, "alpha_")
        return math.sqrt(self.signal_variance_) * self.y_std_


def gp_fit(observations, config: GpConfig = GpConfig(), noise_floor: Optional[float] = None, warm_start: Optional[MaternGP] = None) -> MaternGP:
    """Fit a surrogate to ``[((x1, x2), value), ...]`` with points already in the unit square.

    ``warm_start`` reuses a previous fit's hyperparameters as the only
    optimiser start instead of the multistart grid.
    """
    X = np.array([pt for pt, _ in observations], dtype=float)
    y = np.array([v for _, v in observations], dtype=float)
    init = config
    if warm_start is not None:
        init = replace(config, length_scales=tuple(warm_start.length_scales_), signal_variance=warm_start.signal_variance_,
                       noise_variance=warm_start.noise_variance_ * warm_start.y_std_**2 / max(float(np.var(y)), 1e-300))
    gp = MaternGP(
        nu=config.nu,
        length_scales=init.length_scales,
        signal_variance=init.signal_variance,
        noise_variance=init.noise_variance,
        noise_floor=config.noise_floor if noise_floor is None else max(noise_floor, config.noise_floor),
        optimize=config.optimize_hyperparameters,
        multistart=warm_start is None,
    )
    return gp.fit(X, y)


def expected_improvement(mean, std, best, xi=0.01):
    """EI for maximisation; ``xi`` is in the same units as ``mean``."""
    std = np.maximum(std, 1e-12)
    z = (mean - best - xi) / std
    return (mean - best - xi) * _norm.cdf(z) + std * _norm.pdf(z)


def bayes_opt(objective: Objective, box: DecisionBox, config: GpConfig = GpConfig(), seed=None, noise_sd: Optional[float] = None) -> OptResult:
    """GP-EI Bayesian optimisation with a scrambled Sobol initial design.

    ``noise_sd`` (objective units) lower-bounds the surrogate noise. A failed
    GP fit degrades that iteration to a uniform random proposal.
    """
    rng = as_generator(seed)
    sobol = qmc.Sobol(d=2, scramble=True, seed=rng)
    with warnings.catch_warnings():
        # n_init need not be a power of two; the balance warning is expected.
        warnings.simplefilter("ignore", UserWarning)
        init = sobol.random(config.n_init)
    Z, y = [], []
    trace = []

    def evaluate(z):
        x = box.from_unit(z)
        v = float(objective(float(x[0]), float(x[1])))
        Z.append(np.asarray(z, dtype=float))
        y.append(v)
        trace.append(((float(x[0]), float(x[1])), v))

    for z in init:
        evaluate(z)
    gp = None
    for it in range(config.n_calls - config.n_init):
        try:
            floor = None if noise_sd is None else noise_sd**2
            warm = gp if it % FULL_REFIT_EVERY and gp is not None else None
            gp = gp_fit(list(zip(Z, y)), config, noise_floor=floor, warm_start=warm)
            xi = config.xi * gp.y_std_
            best = max(y)
            cand = rng.random((config.n_candidates, 2))
            mean, std = gp.predict(cand, return_std=True)
            ei = expected_improvement(mean, std, best, xi)
            top = np.argsort(ei)[::-1][: config.n_polish]
            best_z, best_ei = cand[top[0]], ei[top[0]]

            def neg_ei(z):
                m, s = gp.predict(z[None, :], return_std=True)
                return -float(expected_improvement(m, s, best, xi)[0])

            for k in top:
                res = sopt.minimize(neg_ei, cand[k], method="L-BFGS-B", bounds=[(0.0, 1.0)] * 2)
                if -res.fun > best_ei:
                    best_z, best_ei = np.clip(res.x, 0.0, 1.0), -res.fun
        except (LinAlgError, ValueError) as exc:
            logger.warning("GP fit failed (%s); using a random proposal", exc)
            gp = None
            best_z = rng.random(2)
        evaluate(best_z)
    k = int(np.argmax(y))
    return OptResult(trace[k][0], y[k], trace, len(trace), "bo")


def price_contingency(objective: Objective, box: DecisionBox, nt: int = 50, np_: int = 50):
    """Best price for each release time on a lattice, plus a quadratic fit.

    Returns ``(curve, coeffs)``: ``curve`` is a list of ``(t, p*)`` and
    ``coeffs`` the ascending coefficients ``(c0, c1, c2)`` of ``p*(t)``.
    """
    ts, ps = lattice(box, (nt, np_))
    values = evaluate_lattice(objective, ts, ps)
    best_p = ps[np.argmax(values, axis=1)]
    coeffs = np.polynomial.polynomial.polyfit(ts, best_p, 2)
    return [(float(t), float(p)) for t, p in zip(ts, best_p)], tuple(float(c) for c in coeffs)
