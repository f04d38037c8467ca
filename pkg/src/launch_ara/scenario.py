"""Scenario documents: every constant of one experiment in a single JSON tree."""

from __future__ import annotations

import copy
import hashlib
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Tuple


from .choice import SegmentSpec
from .competitors import (
    COMPETITOR_A_PRIOR,
    COMPETITOR_C_BETA,
    ARCHETYPES,
    AttrDist,
    BugPrior,
    IngredientBeliefs,
    Level0Model,
    archetype_model,
    competitor_scenario,
    load_or_build_strategic,
)
from .market import BudgetDist, CostParams, MarketConfig
from .preferences import BuyerPrefPrior, CompanyUtility, Normalizer
from .reliability import FailureData, GammaSpec, bundled_failure_data, prior_sample, sample_posterior

logger = logging.getLogger(__name__)

PAPER_DEFAULT = "paper-default"


class ScenarioError(ValueError):
    """Invalid scenario document; the message starts with the offending key path."""


@dataclass(frozen=True)
class OwnBugSpec:
    """Where the advised company's NHPP parameters come from.

    ``posterior``: MCMC on ``failure_data`` (``"bundled"``, a CSV path, or
    ``None`` for prior-only); ``prior``: direct prior draws;
    ``competitor_prior``: the Gamma/Beta competitor bug prior. The default
    is ``prior``: the reference failure data are not available, and the
    bundled synthetic set is kept for the ``posterior`` route.
    """

    kind: str = "prior"
    prior_a: GammaSpec = GammaSpec.from_moments(0.256, 0.1)
    prior_c: GammaSpec = GammaSpec.from_moments(0.837, 0.1)
    failure_data: Optional[str] = "bundled"
    n_draws: int = 20_000
    burn_in: int = 5_000
    mcmc_seed: int = 0
    competitor_bugs: BugPrior = BugPrior()

    def __post_init__(self):
        if self.kind not in ("posterior", "prior", "competitor_prior"):
            raise ScenarioError(f"own_bugs.kind: unknown kind {self.kind!r}")

    def load_data(self) -> Optional[FailureData]:
        if self.failure_data is None:
            return None
        if self.failure_data == "bundled":
            return bundled_failure_data()
        return FailureData.from_csv(self.failure_data)

    def param_sampler(self):
        if self.kind == "competitor_prior":
            bugs = self.competitor_bugs
            return lambda size, rng: bugs.sample_params(rng, size)
        if self.kind == "prior":
            def draw(size, rng):
                return self.prior_a.sample(rng, size), self.prior_c.sample(rng, size)
            return draw
        post = _posterior_for(self)

        def resample(size, rng):
            idx = rng.integers(0, len(post), size)
            return post.a[idx], post.c[idx]

        return resample


_POSTERIOR_CACHE = {}


def _posterior_for(spec: OwnBugSpec):
    key = (spec.prior_a, spec.prior_c, spec.failure_data, spec.n_draws, spec.burn_in, spec.mcmc_seed)
    if key not in _POSTERIOR_CACHE:
        data = spec.load_data()
        if data is None:
            post = prior_sample(spec.prior_a, spec.prior_c, spec.n_draws, seed=spec.mcmc_seed)
        else:
            post = sample_posterior(data, spec.prior_a, spec.prior_c, spec.n_draws, spec.burn_in, seed=spec.mcmc_seed)
        _POSTERIOR_CACHE[key] = post
    return _POSTERIOR_CACHE[key]


COMPETITOR_KINDS = ("level0", "aggressive", "careful", "level1")


@dataclass(frozen=True)
class CompetitorSpec:
    kind: str = "level0"
    t_dist: Optional[AttrDist] = None
    p_dist: Optional[AttrDist] = None
    bugs: BugPrior = BugPrior()
    grid: Tuple[int, int] = (20, 20)
    mc_size: int = 10_000
    cost_cv: float = 0.1
    seed: Optional[int] = None

    def __post_init__(self):
        if self.kind not in COMPETITOR_KINDS:
            raise ScenarioError(f"competitors.kind: unknown kind {self.kind!r}")


@dataclass(frozen=True)
class Scenario:
    market: MarketConfig = MarketConfig()
    cost: CostParams = CostParams()
    own_bugs: OwnBugSpec = OwnBugSpec()
    normalizer: Normalizer = Normalizer()
    buyers: BuyerPrefPrior = BuyerPrefPrior()
    segments: Tuple[SegmentSpec, ...] = ()
    competitors: Tuple[CompetitorSpec, ...] = (CompetitorSpec(), CompetitorSpec())
    company_utility: CompanyUtility = CompanyUtility()
    mc_size: int = 100_000
    seed: int = 20240611
    cost_cv: float = 0.0
    profit_shift: float = 0.0

    def __post_init__(self):
        if not self.competitors:
            raise ScenarioError("competitors: at least one competitor is required")
        if self.mc_size < 1:
            raise ScenarioError("mc_size: must be >= 1")
        if self.segments:
            total = sum(s.weight for s in self.segments)
            if abs(total - 1.0) > 1e-9:
                raise ScenarioError(f"buyers.segments: weights sum to {total}, expected 1")

    def segment_specs(self):
        if self.segments:
            return self.segments
        return (SegmentSpec(1.0, self.buyers, self.normalizer),)

    def own_param_sampler(self):
        return self.own_bugs.param_sampler()

    @property
    def box(self):
        return (0.0, self.market.T), self.market.price_bounds

    def competitor_models(self, cache_dir=None):
        T = self.market.T
        bounds = self.market.price_bounds
        models = []
        for spec in self.competitors:
            if spec.kind == "level0":
                t_dist = spec.t_dist or AttrDist("uniform", 0.0, T)
                p_dist = spec.p_dist or AttrDist("uniform", *bounds)
                models.append(Level0Model(T, t_dist, p_dist, spec.bugs))
            elif spec.kind in ARCHETYPES:
                models.append(archetype_model(spec.kind, T, bounds, spec.bugs))
            else:
                models.append(self.strategic_model(spec, cache_dir))
        return models

    def strategic_model(self, spec: CompetitorSpec, cache_dir=None):
        view = competitor_scenario(self, IngredientBeliefs(cost_cv=spec.cost_cv), spec.bugs)
        seed = spec.seed if spec.seed is not None else self.seed + 1
        key = (view.hash(), tuple(spec.grid), spec.mc_size, seed, str(cache_dir))
        if key not in _STRATEGIC_MEMO:
            _STRATEGIC_MEMO[key] = load_or_build_strategic(view, spec.grid, spec.mc_size, seed, cache_dir, spec.bugs)
        return _STRATEGIC_MEMO[key]

    def to_dict(self) -> dict:
        return scenario_to_dict(self)

    def hash(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    def with_rho(self, rho: float) -> "Scenario":
        return replace(self, buyers=replace(self.buyers, rho_fixed=float(rho)))

    def with_c31(self, c31: float) -> "Scenario":
        return replace(self, cost=replace(self.cost, c31=float(c31)))


_STRATEGIC_MEMO = {}


def paper_default() -> Scenario:
    return Scenario()


# -- serialisation -----------------------------------------------------------


def _gamma_to_dict(g: GammaSpec) -> dict:
    return {"shape": g.shape, "rate": g.rate}


def _dist_to_dict(d: Optional[AttrDist]):
    if d is None:
        return None
    out = {"kind": d.kind, "lo": d.lo, "hi": d.hi}
    if d.kind == "beta":
        out.update(alpha=d.alpha, beta=d.beta)
    return out


def _bugs_to_dict(b: BugPrior) -> dict:
    return {"a_prior": _gamma_to_dict(b.a_prior), "c_beta": list(b.c_beta), "q_fixed": b.q_fixed}


def _prefs_to_dict(p: BuyerPrefPrior) -> dict:
    return {"dirichlet_alpha": list(p.dirichlet_alpha), "rho": _gamma_to_dict(p.rho_spec), "rho_fixed": p.rho_fixed}


def _norm_to_dict(n: Normalizer) -> dict:
    return {"t_scale": n.t_scale, "p_scale": n.p_scale, "q_scale": n.q_scale}


def scenario_to_dict(s: Scenario) -> dict:
    m = s.market
    ob = s.own_bugs
    return {
        "market": {
            "n": m.n,
            "T": m.T,
            "price_bounds": list(m.price_bounds),
            "budget": None if m.budget_dist is None else {"lo": m.budget_dist.lo, "hi": m.budget_dist.hi},
            "knapsack_reference": m.knapsack_reference,
        },
        "cost": {"c11": s.cost.c11, "c21": s.cost.c21, "c31": s.cost.c31},
        "own_bugs": {
            "kind": ob.kind,
            "prior_a": _gamma_to_dict(ob.prior_a),
            "prior_c": _gamma_to_dict(ob.prior_c),
            "failure_data": ob.failure_data,
            "n_draws": ob.n_draws,
            "burn_in": ob.burn_in,
            "mcmc_seed": ob.mcmc_seed,
            "competitor_bugs": _bugs_to_dict(ob.competitor_bugs),
        },
        "normalizer": _norm_to_dict(s.normalizer),
        "buyers": {
            **_prefs_to_dict(s.buyers),
            "segments": [
                {"weight": seg.weight, **_prefs_to_dict(seg.prior), "normalizer": _norm_to_dict(seg.normalizer)}
                for seg in s.segments
            ],
        },
        "competitors": [
            {
                "kind": c.kind,
                "t_dist": _dist_to_dict(c.t_dist),
                "p_dist": _dist_to_dict(c.p_dist),
                "bugs": _bugs_to_dict(c.bugs),
                "grid": list(c.grid),
                "mc_size": c.mc_size,
                "cost_cv": c.cost_cv,
                "seed": c.seed,
            }
            for c in s.competitors
        ],
        "company_utility": {"kind": s.company_utility.kind, "rho": s.company_utility.rho, "money_scale": s.company_utility.money_scale},
        "mc_size": s.mc_size,
        "seed": s.seed,
        "cost_cv": s.cost_cv,
        "profit_shift": s.profit_shift,
    }


class _Reader:
    """Walks a JSON object, tracking the key path and rejecting unknown keys."""

    def __init__(self, data, path=""):
        if not isinstance(data, dict):
            raise ScenarioError(f"{path or '<root>'}: expected an object")
        self.data = data
        self.path = path
        self.seen = set()

    def _p(self, key):
        return f"{self.path}.{key}" if self.path else key

    def has(self, key):
        return key in self.data

    def get(self, key, default=..., kind=None):
        self.seen.add(key)
        if key not in self.data:
            if default is ...:
                raise ScenarioError(f"{self._p(key)}: required field is missing")
            return default
        value = self.data[key]
        if kind is not None and value is not None:
            try:
                value = kind(value)
            except (TypeError, ValueError) as exc:
                raise ScenarioError(f"{self._p(key)}: {exc}") from None
        return value

    def child(self, key, default=...):
        self.seen.add(key)
        if key not in self.data:
            if default is ...:
                raise ScenarioError(f"{self._p(key)}: required field is missing")
            return None
        if self.data[key] is None:
            return None
        return _Reader(self.data[key], self._p(key))

    def finish(self):
        unknown = sorted(set(self.data) - self.seen)
        if unknown:
            raise ScenarioError(f"{self._p(unknown[0])}: unknown key")


def _num(x):
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise ValueError(f"expected a number, got {x!r}")
    return float(x)


def _int(x):
    if isinstance(x, bool) or not isinstance(x, int):
        raise ValueError(f"expected an integer, got {x!r}")
    return x


def _pair(x):
    if not isinstance(x, (list, tuple)) or len(x) != 2:
        raise ValueError(f"expected a 2-element list, got {x!r}")
    return tuple(_num(v) for v in x)


def _guard(path, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except ScenarioError:
        raise
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{path}: {exc}") from None


def _read_gamma(r: Optional[_Reader], default: GammaSpec) -> GammaSpec:
    if r is None:
        return default
    if r.has("mean") or r.has("sd"):
        out = _guard(r.path, GammaSpec.from_moments, r.get("mean", kind=_num), r.get("sd", kind=_num))
    else:
        out = _guard(r.path, GammaSpec, r.get("shape", kind=_num), r.get("rate", kind=_num))
    r.finish()
    return out


def _read_dist(r: Optional[_Reader]) -> Optional[AttrDist]:
    if r is None:
        return None
    kind = r.get("kind", kind=str)
    lo = r.get("lo", kind=_num)
    hi = r.get("hi", lo, kind=_num)
    alpha = r.get("alpha", 1.0, kind=_num)
    beta = r.get("beta", 1.0, kind=_num)
    r.finish()
    return _guard(r.path, AttrDist, kind, lo, hi, alpha, beta)


def _read_bugs(r: Optional[_Reader]) -> BugPrior:
    if r is None:
        return BugPrior()
    a_prior = _read_gamma(r.child("a_prior", None), COMPETITOR_A_PRIOR)
    c_beta = r.get("c_beta", COMPETITOR_C_BETA, kind=_pair)
    q_fixed = r.get("q_fixed", None, kind=_num)
    r.finish()
    return BugPrior(a_prior, tuple(c_beta), q_fixed)


def _read_norm(r: Optional[_Reader]) -> Normalizer:
    if r is None:
        return Normalizer()
    d = Normalizer()
    out = _guard(
        r.path,
        Normalizer,
        r.get("t_scale", d.t_scale, kind=_num),
        r.get("p_scale", d.p_scale, kind=_num),
        r.get("q_scale", d.q_scale, kind=_num),
    )
    r.finish()
    return out


def _read_prefs(r: _Reader) -> BuyerPrefPrior:
    d = BuyerPrefPrior()
    alpha = r.get("dirichlet_alpha", d.dirichlet_alpha)
    if not isinstance(alpha, (list, tuple)) or len(alpha) != 3:
        raise ScenarioError(f"{r._p('dirichlet_alpha')}: expected three numbers")
    alpha = tuple(_guard(r._p("dirichlet_alpha"), _num, a) for a in alpha)
    rho = _read_gamma(r.child("rho", None), d.rho_spec)
    rho_fixed = r.get("rho_fixed", None, kind=_num)
    return _guard(r.path or "buyers", BuyerPrefPrior, alpha, rho, rho_fixed)


def scenario_from_dict(data: dict, base_dir: Optional[Path] = None) -> Scenario:
    root = _Reader(data)
    d = Scenario()

    m = root.child("market")
    budget_r = m.child("budget", None)
    budget = None
    if budget_r is not None:
        budget = _guard(budget_r.path, BudgetDist, budget_r.get("lo", kind=_num), budget_r.get("hi", kind=_num))
        budget_r.finish()
    market = _guard(
        "market",
        MarketConfig,
        m.get("n", kind=_int),
        m.get("T", kind=_num),
        m.get("price_bounds", kind=_pair),
        budget,
        m.get("knapsack_reference", d.market.knapsack_reference, kind=str),
    )
    m.finish()

    c = root.child("cost")
    cost = _guard("cost", CostParams, c.get("c11", kind=_num), c.get("c21", kind=_num), c.get("c31", kind=_num))
    c.finish()

    ob_r = root.child("own_bugs", None)
    if ob_r is None:
        own_bugs = d.own_bugs
    else:
        dd = d.own_bugs
        failure = ob_r.get("failure_data", dd.failure_data)
        if failure not in (None, "bundled"):
            path = Path(failure)
            if not path.is_absolute() and base_dir is not None:
                path = base_dir / path
            failure = str(path)
        own_bugs = _guard(
            "own_bugs",
            OwnBugSpec,
            ob_r.get("kind", dd.kind, kind=str),
            _read_gamma(ob_r.child("prior_a", None), dd.prior_a),
            _read_gamma(ob_r.child("prior_c", None), dd.prior_c),
            failure,
            ob_r.get("n_draws", dd.n_draws, kind=_int),
            ob_r.get("burn_in", dd.burn_in, kind=_int),
            ob_r.get("mcmc_seed", dd.mcmc_seed, kind=_int),
            _read_bugs(ob_r.child("competitor_bugs", None)),
        )
        ob_r.finish()

    normalizer = _read_norm(root.child("normalizer", None))

    b = root.child("buyers", None)
    segments = ()
    if b is None:
        buyers = d.buyers
    else:
        buyers = _read_prefs(b)
        seg_list = b.get("segments", [])
        if not isinstance(seg_list, list):
            raise ScenarioError("buyers.segments: expected a list")
        segs = []
        for i, raw in enumerate(seg_list):
            sr = _Reader(raw, f"buyers.segments[{i}]")
            weight = sr.get("weight", kind=_num)
            prior = _read_prefs(sr)
            norm = _read_norm(sr.child("normalizer", None))
            sr.finish()
            segs.append(_guard(sr.path, SegmentSpec, weight, prior, norm))
        segments = tuple(segs)
        b.finish()

    comp_list = root.get("competitors")
    if not isinstance(comp_list, list) or not comp_list:
        raise ScenarioError("competitors: expected a non-empty list")
    competitors = []
    for i, raw in enumerate(comp_list):
        cr = _Reader(raw, f"competitors[{i}]")
        dc = CompetitorSpec()
        grid = cr.get("grid", dc.grid)
        if not isinstance(grid, (list, tuple)) or len(grid) != 2:
            raise ScenarioError(f"competitors[{i}].grid: expected [nt, np]")
        competitors.append(
            _guard(
                cr.path,
                CompetitorSpec,
                cr.get("kind", kind=str),
                _read_dist(cr.child("t_dist", None)),
                _read_dist(cr.child("p_dist", None)),
                _read_bugs(cr.child("bugs", None)),
                tuple(_guard(cr._p("grid"), _int, g) for g in grid),
                cr.get("mc_size", dc.mc_size, kind=_int),
                cr.get("cost_cv", dc.cost_cv, kind=_num),
                cr.get("seed", None, kind=_int),
            )
        )
        cr.finish()

    u_r = root.child("company_utility", None)
    if u_r is None:
        utility = d.company_utility
    else:
        du = d.company_utility
        utility = _guard(
            "company_utility",
            CompanyUtility,
            u_r.get("kind", du.kind, kind=str),
            u_r.get("rho", du.rho, kind=_num),
            u_r.get("money_scale", du.money_scale, kind=_num),
        )
        u_r.finish()

    scenario = _guard(
        "<root>",
        Scenario,
        market=market,
        cost=cost,
        own_bugs=own_bugs,
        normalizer=normalizer,
        buyers=buyers,
        segments=segments,
        competitors=tuple(competitors),
        company_utility=utility,
        mc_size=root.get("mc_size", d.mc_size, kind=_int),
        seed=root.get("seed", d.seed, kind=_int),
        cost_cv=root.get("cost_cv", 0.0, kind=_num),
        profit_shift=root.get("profit_shift", 0.0, kind=_num),
    )
    root.finish()
    return scenario


def load_scenario(path) -> Scenario:
    """Load a scenario file, or the built-in ``paper-default``."""
    if str(path) == PAPER_DEFAULT:
        return paper_default()
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: parse error: {exc}") from None
    return scenario_from_dict(data, base_dir=path.parent)


def save_scenario(scenario: Scenario, path) -> None:
    from .io import atomic_write_text

    atomic_write_text(path, json.dumps(scenario.to_dict(), indent=2, sort_keys=True) + "\n")


def paper_default_dict() -> dict:
    return copy.deepcopy(scenario_to_dict(paper_default()))
