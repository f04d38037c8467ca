"""The advised company's objective.

``MarketSimulator`` holds every decision-independent Monte Carlo ingredient
(competitor signals, buyer preferences, own NHPP parameters, budgets) so that
all candidate decisions are scored on common random numbers. Own fault counts
depend on the release time and are drawn from a substream keyed by ``t1``.
"""

from __future__ import annotations

import itertools
import logging
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import special, stats

from ._rng import float_key, substream
from .io import fmt
from .choice import ChoiceEstimate, mnl_first_prob, segment_mixture_prob, SegmentSpec
from .preferences import CompanyUtility, EXP_CLAMP, sample_pref

logger = logging.getLogger(__name__)

EXACT_BINOMIAL_MAX_N = 10_000
QUADRATURE_NODES = 512
CHUNK_SIZE = 65_536
BUDGET_ROWS_PER_CHUNK = 4_096
BUDGET_CACHE_LIMIT = 12_000_000

# Substream identifiers.
_S_COMPETITOR = 10
_S_PREFS = 20
_S_OWN_PARAMS = 30
_S_OWN_COUNTS = 31
_S_COST = 35
_S_BUDGET = 40


@dataclass(frozen=True)
class CostParams:
    c11: float = 200.0
    c21: float = 1000.0
    c31: float = 5000.0

    def __post_init__(self):
        if min(self.c11, self.c21, self.c31) < 0:
            raise ValueError("cost parameters must be nonnegative")


@dataclass(frozen=True)
class BudgetDist:
    lo: float
    hi: float

    def __post_init__(self):
        if not 0 <= self.lo < self.hi:
            raise ValueError("budget distribution needs 0 <= lo < hi")


KNAPSACK_REFERENCES = ("median", "none")


@dataclass(frozen=True)
class MarketConfig:
    """Market size, life cycle, price range and (for multi-item markets) budgets.

    ``knapsack_reference`` sets what a buyer's item values are measured
    against when solving the purchase knapsack: ``"median"`` subtracts the
    utility of the median offer on the shelf, ``"none"`` uses raw utilities.
    """

    n: int = 1000
    T: float = 2000.0
    price_bounds: Tuple[float, float] = (3000.0, 15000.0)
    budget_dist: Optional[BudgetDist] = None
    knapsack_reference: str = "median"

    def __post_init__(self):
        object.__setattr__(self, "price_bounds", tuple(float(b) for b in self.price_bounds))
        lo, hi = self.price_bounds
        if self.n < 1 or int(self.n) != self.n:
            raise ValueError("n must be a positive integer")
        if not 0 < lo < hi:
            raise ValueError("price bounds must satisfy 0 < a < b")
        if not self.T > 0:
            raise ValueError("T must be positive")
        if self.knapsack_reference not in KNAPSACK_REFERENCES:
            raise ValueError(f"knapsack_reference must be one of {KNAPSACK_REFERENCES}")


@dataclass(frozen=True)
class DecisionOutcome:
    t1: float
    p1: float
    expected_utility: float
    expected_profit: float
    purchase_prob: float
    expected_cost: float
    mc_size: int
    purchase_prob_se: float = 0.0

    CSV_FIELDS = ("t1", "p1", "expected_utility", "expected_profit", "purchase_prob", "expected_cost", "mc_size")

    def csv_row(self) -> str:
        return ",".join(fmt(getattr(self, f)) for f in self.CSV_FIELDS)


def release_cost(t1, e1, q1, cp: CostParams):
    if np.any(np.asarray(t1) < 0) or np.any(np.asarray(e1) < 0) or np.any(np.asarray(q1) < 0):
        raise ValueError("release_cost inputs must be nonnegative")
    return cp.c11 * t1 + cp.c21 * e1 + cp.c31 * q1


def binomial_expected_value(n: int, pi: float, p1: float, cost: float, u: CompanyUtility = CompanyUtility()) -> float:
    """``E[u(J p1 - cost)]`` for ``J ~ Bin(n, pi)``.

    Exact pmf-weighted sum up to ``n = 10_000``. Beyond that the identity
    case uses linearity and other utilities a 512-node Gauss-Hermite rule on
    the normal approximation of the binomial.
    """
    if not 0.0 <= pi <= 1.0:
        raise ValueError(f"probability must be in [0, 1], got {pi}")
    if n < 1:
        raise ValueError("n must be >= 1")
    if n <= EXACT_BINOMIAL_MAX_N:
        j = np.arange(n + 1)
        weights = stats.binom.pmf(j, n, pi)
        return float(np.dot(weights, u(j * p1 - cost)))
    if u.is_identity:
        return float(n * pi * p1 - cost)
    nodes, w = _hermite_rule()
    sd = math.sqrt(n * pi * (1.0 - pi))
    sales = n * pi + sd * nodes
    return float(np.dot(w, u(sales * p1 - cost)))


_HERMITE = None


def _hermite_rule():
    global _HERMITE
    if _HERMITE is None:
        # numpy's hermegauss overflows at this many nodes; scipy's rule is stable.
        x, w = special.roots_hermitenorm(QUADRATURE_NODES)
        _HERMITE = (x, w / w.sum())
    return _HERMITE


def knapsack_select(budget: float, items: Sequence[Tuple[float, float]]) -> Tuple[int, ...]:
    """Exact 0/1 knapsack by enumeration: items are ``(utility, price)`` pairs.

    Among optimal selections the lexicographically smallest bit-vector wins,
    which also keeps non-positive items out.
    """
    if budget < 0:
        raise ValueError("budget must be nonnegative")
    l = len(items)
    if l == 0:
        return ()
    if l > 20:
        raise ValueError("enumeration supports at most 20 items")
    utils = np.array([float(u) for u, _ in items])
    prices = np.array([float(p) for _, p in items])
    if np.any(prices <= 0):
        raise ValueError("item prices must be positive")
    subsets = _subsets(l)
    values = subsets @ utils
    feasible = subsets @ prices <= budget
    values = np.where(feasible, values, -np.inf)
    # argmax returns the first maximiser, i.e. the lexicographically smallest.
    return tuple(int(z) for z in subsets[int(np.argmax(values))])


_SUBSETS = {}


def _subsets(l: int) -> np.ndarray:
    if l not in _SUBSETS:
        _SUBSETS[l] = np.array(list(itertools.product((0, 1), repeat=l)), dtype=float)
    return _SUBSETS[l]


def knapsack_first_item_sales(values, prices, count_below):
    """Number of buyers whose optimal knapsack contains item 0, per MC draw.

    ``values`` and ``prices`` have shape ``(R, l)``; ``count_below(x)`` maps an
    ``(R, K)`` array of thresholds to the number of that row's budgets strictly
    below each threshold. The optimal selection is piecewise constant in the
    budget, changing only at subset prices, so each row needs ``2**l``
    knapsack solutions instead of one per buyer.
    """
    rows, l = values.shape
    subsets = _subsets(l)
    lex = np.arange(subsets.shape[0])
    V = values @ subsets.T
    P = prices @ subsets.T
    order = np.argsort(P, axis=1, kind="stable")
    Ps = np.take_along_axis(P, order, axis=1)
    Vs = np.take_along_axis(V, order, axis=1)
    best_val = np.full(rows, -np.inf)
    best_idx = np.full(rows, lex[-1] + 1)
    takes_first = np.empty(Ps.shape, dtype=bool)
    first_bit = subsets[:, 0].astype(bool)
    for k in range(Ps.shape[1]):
        idx = order[:, k]
        v = Vs[:, k]
        better = (v > best_val) | ((v == best_val) & (idx < best_idx))
        best_val = np.where(better, v, best_val)
        best_idx = np.where(better, idx, best_idx)
        takes_first[:, k] = first_bit[best_idx]
    upper = np.concatenate([Ps[:, 1:], np.full((rows, 1), np.inf)], axis=1)
    counts = count_below(upper) - count_below(Ps)
    return np.sum(counts * takes_first, axis=1)


def knapsack_values(u: np.ndarray, reference: str) -> np.ndarray:
    """Item values seen by knapsack buyers; ``u`` has shape ``(R, l)``."""
    if reference == "none":
        return u
    return u - np.median(u, axis=1, keepdims=True)


def _chunks(total: int, size: int):
    start = 0
    idx = 0
    while start < total:
        stop = min(start + size, total)
        yield idx, start, stop
        idx += 1
        start = stop


@dataclass
class _SegmentDraws:
    weight: float
    w: np.ndarray
    rho: np.ndarray
    norm: object
    comp_u: np.ndarray  # (k, M) competitor buyer utilities


class MarketSimulator:
    """Common-random-number Monte Carlo engine for one scenario.

    Parameters
    ----------
    scenario : Scenario
    mc_size : int
        Number of Monte Carlo draws ``M``.
    seed : int
        All draws derive from ``(seed, stream, chunk)`` substreams, so results
        are reproducible for a given ``(seed, mc_size)``.
    cache_dir : path, optional
        Where level-1 competitor surfaces are cached.
    """

    def __init__(self, scenario, mc_size: int, seed: int, cache_dir=None):
        if mc_size < 1:
            raise ValueError("mc_size must be >= 1")
        if seed is None:
            seed = int(np.random.SeedSequence().entropy % (2**63))
        self.scenario = scenario
        self.mc_size = int(mc_size)
        self.seed = int(seed)
        self.cache_dir = cache_dir
        market = scenario.market
        self.T = float(market.T)
        self.n = int(market.n)
        M = self.mc_size

        models = scenario.competitor_models(cache_dir=cache_dir)
        comp_t, comp_p, comp_q = [], [], []
        for k, model in enumerate(models):
            parts = [model.sample(b - a, substream(self.seed, _S_COMPETITOR, k, ci)) for ci, a, b in _chunks(M, CHUNK_SIZE)]
            comp_t.append(np.concatenate([s.t for s in parts]))
            comp_p.append(np.concatenate([s.p for s in parts]))
            comp_q.append(np.concatenate([s.q for s in parts]))
        self.comp_t = np.array(comp_t)
        self.comp_p = np.array(comp_p)
        self.comp_q = np.array(comp_q)

        self.segments = []
        for s, seg in enumerate(scenario.segment_specs()):
            ws, rhos = [], []
            for ci, a, b in _chunks(M, CHUNK_SIZE):
                w, rho = sample_pref(seg.prior, substream(self.seed, _S_PREFS, s, ci), size=b - a)
                ws.append(w)
                rhos.append(rho)
            w = np.concatenate(ws)
            rho = np.concatenate(rhos)
            comp_u = self._buyer_utility(w, rho, seg.normalizer, self.comp_t, self.comp_p, self.comp_q)
            self.segments.append(_SegmentDraws(seg.weight, w, rho, seg.normalizer, comp_u))

        a_parts, c_parts = [], []
        for ci, a, b in _chunks(M, CHUNK_SIZE):
            pa, pc = scenario.own_param_sampler()(b - a, substream(self.seed, _S_OWN_PARAMS, ci))
            a_parts.append(pa)
            c_parts.append(pc)
        self.own_a = np.concatenate(a_parts)
        self.own_c = np.concatenate(c_parts)
        self.own_mT = self.own_a * np.power(self.T, self.own_c)

        cv = getattr(scenario, "cost_cv", 0.0)
        if cv > 0:
            from .competitors import _positive_normal_factors

            parts = [
                _positive_normal_factors(substream(self.seed, _S_COST, ci), cv, (b - a, 3)) for ci, a, b in _chunks(M, CHUNK_SIZE)
            ]
            self.cost_factors = np.concatenate(parts)
        else:
            self.cost_factors = None
        self.profit_shift = float(getattr(scenario, "profit_shift", 0.0))
        self._budget_cache = None
        self._own_cache = OrderedDict()

    @staticmethod
    def _buyer_utility(w, rho, norm, t, p, q):
        expo = rho * (w[:, 0] * t / norm.t_scale + w[:, 1] * p / norm.p_scale + w[:, 2] * q / norm.q_scale)
        return 1.0 - np.exp(np.clip(expo, -EXP_CLAMP, EXP_CLAMP))

    # -- own product ---------------------------------------------------------

    def own_counts(self, t1: float):
        """Fault counts ``(e1, q1)`` per draw for release time ``t1``.

        Found-before-release and residual counts are independent Poisson
        increments of the same NHPP given the draw's ``(a, c)``.
        """
        key = float(t1)
        if key in self._own_cache:
            return self._own_cache[key]
        if not 0 <= t1 <= self.T:
            raise ValueError(f"release time {t1} outside [0, {self.T}]")
        m_t = self.own_a * np.power(t1, self.own_c)
        residual_mean = np.maximum(self.own_mT - m_t, 0.0)
        e1 = np.empty(self.mc_size)
        q1 = np.empty(self.mc_size)
        for ci, a, b in _chunks(self.mc_size, CHUNK_SIZE):
            rng = substream(self.seed, _S_OWN_COUNTS, float_key(t1), ci)
            e1[a:b] = rng.poisson(m_t[a:b])
            q1[a:b] = rng.poisson(residual_mean[a:b])
        self._own_cache[key] = (e1, q1)
        if len(self._own_cache) > 4:
            self._own_cache.popitem(last=False)
        return e1, q1

    def _cost(self, t1, e1, q1):
        cp = self.scenario.cost
        if self.cost_factors is None:
            per_draw = cp.c11 * t1 + cp.c21 * e1 + cp.c31 * q1
        else:
            f = self.cost_factors
            per_draw = cp.c11 * f[:, 0] * t1 + cp.c21 * f[:, 1] * e1 + cp.c31 * f[:, 2] * q1
        return float(np.mean(per_draw))

    # -- single purchase (MNL) -----------------------------------------------

    def _own_exponent_parts(self, seg, t1, q1):
        base = seg.rho * (seg.w[:, 0] * t1 / seg.norm.t_scale + seg.w[:, 2] * q1 / seg.norm.q_scale)
        slope = seg.rho * seg.w[:, 1] / seg.norm.p_scale
        return base, slope

    def choice(self, t1: float, p1: float) -> ChoiceEstimate:
        _, q1 = self.own_counts(t1)
        return self._choice_given_q(t1, p1, q1)

    def _choice_given_q(self, t1, p1, q1):
        estimates = []
        for seg in self.segments:
            base, slope = self._own_exponent_parts(seg, t1, q1)
            u_own = 1.0 - np.exp(np.clip(base + slope * p1, -EXP_CLAMP, EXP_CLAMP))
            pi = mnl_first_prob(u_own, seg.comp_u)
            estimates.append((SegmentSpec(seg.weight, None, seg.norm), ChoiceEstimate.from_draws(pi)))
        if len(estimates) == 1:
            return estimates[0][1]
        return segment_mixture_prob(estimates)

    def outcome(self, t1: float, p1: float) -> DecisionOutcome:
        """Expected utility and profit of ``(t1, p1)`` (single-purchase market)."""
        self._check_decision(t1, p1)
        e1, q1 = self.own_counts(t1)
        cost = self._cost(t1, e1, q1)
        est = self._choice_given_q(t1, p1, q1)
        return self._outcome_from(t1, p1, est, cost)

    def _outcome_from(self, t1, p1, est, cost):
        u = self.scenario.company_utility
        net_cost = cost - self.profit_shift
        eu = binomial_expected_value(self.n, est.pi, p1, net_cost, u)
        profit = self.n * est.pi * p1 - net_cost
        return DecisionOutcome(float(t1), float(p1), eu, profit, est.pi, cost, self.mc_size, est.std_error)

    def _check_decision(self, t1, p1):
        lo, hi = self.scenario.market.price_bounds
        if not 0 <= t1 <= self.T:
            raise ValueError(f"release time {t1} outside [0, {self.T}]")
        if not lo <= p1 <= hi:
            raise ValueError(f"price {p1} outside [{lo}, {hi}]")

    def surface(self, ts, ps, multi: bool = False) -> dict:
        """Evaluate every ``(t, p)`` lattice point; returns 2-d arrays keyed by outcome field."""
        ts = np.asarray(ts, dtype=float)
        ps = np.asarray(ps, dtype=float)
        keys = ("expected_utility", "expected_profit", "purchase_prob", "expected_cost", "purchase_prob_se")
        out = {k: np.empty((ts.size, ps.size)) for k in keys}
        for i, t1 in enumerate(ts):
            for j, p1 in enumerate(ps):
                res = self.outcome_multi(t1, p1) if multi else self.outcome(t1, p1)
                for k in keys:
                    out[k][i, j] = getattr(res, k)
        return out

    # -- multi-item (knapsack) -----------------------------------------------

    def _budget_chunks(self):
        budget = self.scenario.market.budget_dist
        if budget is None:
            raise ValueError("multi-item evaluation needs market.budget_dist")
        total = self.mc_size * self.n
        if self._budget_cache is not None:
            yield from self._budget_cache
            return
        chunks = []
        for bi, a, b in _chunks(self.mc_size, BUDGET_ROWS_PER_CHUNK):
            rng = substream(self.seed, _S_BUDGET, bi)
            raw = np.sort(rng.uniform(budget.lo, budget.hi, (b - a, self.n)), axis=1)
            scaled = (raw - budget.lo) / (budget.hi - budget.lo)
            keys = (scaled + np.arange(b - a)[:, None]).ravel()
            item = (a, b, keys)
            if total <= BUDGET_CACHE_LIMIT:
                chunks.append(item)
            yield item
        if total <= BUDGET_CACHE_LIMIT:
            self._budget_cache = chunks

    def sales_per_draw(self, t1: float, p1: float) -> np.ndarray:
        """Units of product 1 sold in each MC iteration (one knapsack per buyer)."""
        self._check_decision(t1, p1)
        if len(self.segments) != 1:
            raise ValueError("multi-item markets support a single buyer segment")
        seg = self.segments[0]
        budget = self.scenario.market.budget_dist
        _, q1 = self.own_counts(t1)
        base, slope = self._own_exponent_parts(seg, t1, q1)
        u_own = 1.0 - np.exp(np.clip(base + slope * p1, -EXP_CLAMP, EXP_CLAMP))
        u_all = np.column_stack([u_own, seg.comp_u.T])
        prices = np.column_stack([np.full(self.mc_size, float(p1)), self.comp_p.T])
        values = knapsack_values(u_all, self.scenario.market.knapsack_reference)
        sales = np.empty(self.mc_size)
        span = budget.hi - budget.lo
        for a, b, keys in self._budget_chunks():
            rows = np.arange(b - a)[:, None]

            def count_below(x, rows=rows, keys=keys):
                frac = np.clip((x - budget.lo) / span, 0.0, 1.0)
                return np.searchsorted(keys, rows + frac, side="left") - rows * self.n

            sales[a:b] = knapsack_first_item_sales(values[a:b], prices[a:b], count_below)
        return sales

    def outcome_multi(self, t1: float, p1: float) -> DecisionOutcome:
        """Multi-item market: utility of average sales times price minus average cost."""
        sales = self.sales_per_draw(t1, p1)
        e1, q1 = self.own_counts(t1)
        cost = self._cost(t1, e1, q1)
        mean_sales = float(np.mean(sales))
        money = mean_sales * p1 - cost + self.profit_shift
        u = self.scenario.company_utility
        frac = sales / self.n
        se = float(np.std(frac, ddof=1) / math.sqrt(self.mc_size)) if self.mc_size > 1 else 0.0
        return DecisionOutcome(float(t1), float(p1), float(u(money)), money, mean_sales / self.n, cost, self.mc_size, se)

    def objective(self, value: str = "expected_utility", multi: bool = False) -> "DecisionObjective":
        return DecisionObjective(self, value, multi)


@dataclass
class DecisionObjective:
    """Callable ``(t1, p1) -> value`` over a simulator, with a vectorised grid hook."""

    simulator: MarketSimulator
    value: str = "expected_utility"
    multi: bool = False
    calls: int = field(default=0, init=False)

    def __call__(self, t1, p1) -> float:
        self.calls += 1
        return float(getattr(self.outcome(t1, p1), self.value))

    def outcome(self, t1, p1) -> DecisionOutcome:
        sim = self.simulator
        return sim.outcome_multi(t1, p1) if self.multi else sim.outcome(t1, p1)

    def evaluate_grid(self, ts, ps) -> np.ndarray:
        self.calls += len(ts) * len(ps)
        return self.simulator.surface(ts, ps, multi=self.multi)[self.value]

    def noise_sd(self, t1, p1) -> float:
        """Rough MC standard error of the objective at ``(t1, p1)``."""
        res = self.outcome(t1, p1)
        if self.value == "purchase_prob":
            return res.purchase_prob_se
        return self.simulator.n * p1 * res.purchase_prob_se


_SIM_CACHE: "OrderedDict[tuple, MarketSimulator]" = OrderedDict()


def get_simulator(scenario, mc_size: int, seed: int, cache_dir=None) -> MarketSimulator:
    """Memoised ``MarketSimulator`` so repeated decision evaluations share draws."""
    key = (scenario.hash(), int(mc_size), seed, str(cache_dir))
    sim = _SIM_CACHE.get(key)
    if sim is None:
        sim = MarketSimulator(scenario, mc_size, seed, cache_dir)
        _SIM_CACHE[key] = sim
        while len(_SIM_CACHE) > 2:
            _SIM_CACHE.popitem(last=False)
    else:
        _SIM_CACHE.move_to_end(key)
    return sim


def evaluate_decision(t1: float, p1: float, scenario, M: Optional[int] = None, seed: Optional[int] = None) -> DecisionOutcome:
    M = scenario.mc_size if M is None else M
    seed = scenario.seed if seed is None else seed
    return get_simulator(scenario, M, seed).outcome(t1, p1)


def evaluate_decision_multi(t1: float, p1: float, scenario, M: Optional[int] = None, seed: Optional[int] = None) -> DecisionOutcome:
    M = scenario.mc_size if M is None else M
    seed = scenario.seed if seed is None else seed
    if scenario.market.budget_dist is None:
        raise ValueError("evaluate_decision_multi needs market.budget_dist")
    return get_simulator(scenario, M, seed).outcome_multi(t1, p1)
