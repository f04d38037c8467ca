"""Forecast models for competitors' launch decisions.

Level-0 competitors draw release time and price from fixed distributions.
Archetypes (aggressive / careful) are Beta-shaped level-0 models. Level-1
competitors choose decisions with probability proportional to their own
expected-utility surface, or by maximising a randomly perturbed version of it.
"""

from __future__ import annotations

import hashlib
import json
import logging
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from ._rng import as_generator, substream
from .reliability import GammaSpec

logger = logging.getLogger(__name__)

# Competitor bug prior: Gamma matched to mean 0.256 / variance 0.04, Beta for the exponent.
COMPETITOR_A_PRIOR = GammaSpec(shape=0.256**2 / 0.04, rate=0.256 / 0.04)
COMPETITOR_C_BETA = (2.019, 0.394)


@dataclass(frozen=True)
class AttrDist:
    """Distribution of a scalar decision on ``[lo, hi]``.

    ``uniform``: U[lo, hi]; ``beta``: lo + (hi - lo) * Beta(alpha, beta);
    ``point``: always ``lo``.
    """

    kind: str
    lo: float
    hi: float
    alpha: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        if self.kind not in ("uniform", "beta", "point"):
            raise ValueError(f"unknown distribution kind {self.kind!r}")
        if self.kind != "point" and not self.hi > self.lo:
            raise ValueError("distribution support must be a nondegenerate interval")
        if self.kind == "beta" and not (self.alpha > 0 and self.beta > 0):
            raise ValueError("Beta parameters must be positive")

    @classmethod
    def point(cls, value: float) -> "AttrDist":
        return cls("point", value, value)

    @property
    def mean(self) -> float:
        if self.kind == "point":
            return self.lo
        frac = 0.5 if self.kind == "uniform" else self.alpha / (self.alpha + self.beta)
        return self.lo + (self.hi - self.lo) * frac

    def sample(self, rng, size):
        if self.kind == "point":
            return np.full(size, float(self.lo))
        if self.kind == "uniform":
            return rng.uniform(self.lo, self.hi, size)
        return self.lo + (self.hi - self.lo) * rng.beta(self.alpha, self.beta, size)


@dataclass(frozen=True)
class BugPrior:
    """Random NHPP mean ``a t^c`` for a competitor: ``a ~ Gamma``, ``c ~ Beta``."""

    a_prior: GammaSpec = COMPETITOR_A_PRIOR
    c_beta: Tuple[float, float] = COMPETITOR_C_BETA
    q_fixed: Optional[float] = None

    def sample_params(self, rng, size):
        a = self.a_prior.sample(rng, size)
        c = rng.beta(self.c_beta[0], self.c_beta[1], size)
        return a, c

    def sample_residual(self, t, T, rng):
        """Faults left after releasing at ``t``: Poisson(a (T^c - t^c))."""
        t = np.asarray(t, dtype=float)
        if self.q_fixed is not None:
            return np.full(t.shape, float(self.q_fixed))
        a, c = self.sample_params(rng, t.shape)
        return rng.poisson(a * (np.power(T, c) - np.power(t, c))).astype(float)


@dataclass(frozen=True)
class CompetitorDraw:
    t: float
    p: float
    q: float


@dataclass
class CompetitorSample:
    """Vectorised draws of one competitor: arrays of release time, price and residual bugs."""

    t: np.ndarray
    p: np.ndarray
    q: np.ndarray

    def __len__(self):
        return self.t.size

    def draw(self, i: int = 0) -> CompetitorDraw:
        return CompetitorDraw(float(self.t[i]), float(self.p[i]), float(self.q[i]))


@dataclass(frozen=True)
class Level0Model:
    T: float
    t_dist: AttrDist
    p_dist: AttrDist
    bugs: BugPrior = BugPrior()
    kind: str = "level0"

    def __post_init__(self):
        lo_t = self.t_dist.lo
        hi_t = self.t_dist.hi
        if lo_t < 0 or hi_t > self.T:
            raise ValueError("release-time distribution must lie inside [0, T]")
        if self.p_dist.lo <= 0:
            raise ValueError("price distribution must be positive")

    @classmethod
    def uniform(cls, T: float, price_bounds, bugs: BugPrior = BugPrior()) -> "Level0Model":
        return cls(T, AttrDist("uniform", 0.0, T), AttrDist("uniform", *price_bounds), bugs)

    def sample(self, size: int, rng) -> CompetitorSample:
        rng = as_generator(rng)
        t = self.t_dist.sample(rng, size)
        p = self.p_dist.sample(rng, size)
        q = self.bugs.sample_residual(t, self.T, rng)
        return CompetitorSample(t, p, q)


ARCHETYPES = {"aggressive": (2.0, 5.0), "careful": (5.0, 2.0)}


def archetype_model(kind: str, T: float, price_bounds, bugs: BugPrior = BugPrior()) -> Level0Model:
    if kind not in ARCHETYPES:
        raise ValueError(f"unknown archetype {kind!r}; expected one of {sorted(ARCHETYPES)}")
    a, b = ARCHETYPES[kind]
    lo, hi = price_bounds
    return Level0Model(T, AttrDist("beta", 0.0, T, a, b), AttrDist("beta", lo, hi, a, b), bugs, kind=kind)


def sample_level0(model: Level0Model, life_cycle_T: Optional[float] = None, seed=None) -> CompetitorDraw:
    if life_cycle_T is not None and life_cycle_T != model.T:
        model = replace(model, T=life_cycle_T)
    return model.sample(1, as_generator(seed)).draw(0)


def sample_archetype(kind: str, life_cycle_T: float, price_bounds, seed=None) -> CompetitorDraw:
    return archetype_model(kind, life_cycle_T, price_bounds).sample(1, as_generator(seed)).draw(0)


@dataclass(frozen=True)
class IngredientBeliefs:
    """Uncertainty about a competitor's own decision problem.

    Cost rates are Normal around the advised company's values with
    coefficient of variation ``cost_cv`` (truncated to stay positive);
    ``profit_shift`` is a decision-independent amount added to profit.
    """

    cost_cv: float = 0.1
    profit_shift_mean: float = 0.0
    profit_shift_sd: float = 0.0

    def __post_init__(self):
        if self.cost_cv < 0 or self.profit_shift_sd < 0:
            raise ValueError("belief spreads must be nonnegative")

    @property
    def degenerate(self) -> bool:
        return self.cost_cv == 0 and self.profit_shift_sd == 0


def _positive_normal_factors(rng, cv, size):
    if cv == 0:
        return np.ones(size)
    out = rng.normal(1.0, cv, size)
    bad = out <= 0
    while np.any(bad):
        out[bad] = rng.normal(1.0, cv, int(bad.sum()))
        bad = out <= 0
    return out


@dataclass
class StrategicModel:
    """Level-1 competitor: a lattice of cells over the decision box.

    ``eu_surface[i, j]`` is the competitor's expected utility at the centre of
    cell ``(i, j)``; ``mass`` is the surface floored at zero and normalised.
    """

    T: float
    t_edges: np.ndarray
    p_edges: np.ndarray
    eu_surface: np.ndarray
    bugs: BugPrior = BugPrior()
    cached_seed: object = None
    mass: np.ndarray = field(init=False)
    kind: str = "level1"

    def __post_init__(self):
        self.t_edges = np.asarray(self.t_edges, dtype=float)
        self.p_edges = np.asarray(self.p_edges, dtype=float)
        self.eu_surface = np.asarray(self.eu_surface, dtype=float)
        shape = (self.t_edges.size - 1, self.p_edges.size - 1)
        if self.eu_surface.shape != shape:
            raise ValueError(f"surface shape {self.eu_surface.shape} does not match lattice {shape}")
        floored = np.maximum(self.eu_surface, 0.0)
        total = floored.sum()
        if not total > 0:
            warnings.warn("strategic surface has no positive mass; falling back to uniform", RuntimeWarning)
            floored = np.ones(shape)
            total = floored.sum()
        self.mass = floored / total

    @property
    def t_centers(self):
        return 0.5 * (self.t_edges[:-1] + self.t_edges[1:])

    @property
    def p_centers(self):
        return 0.5 * (self.p_edges[:-1] + self.p_edges[1:])

    def sample_cells(self, size: int, rng) -> np.ndarray:
        rng = as_generator(rng)
        return rng.choice(self.mass.size, size=size, p=self.mass.ravel())

    def sample(self, size: int, rng) -> CompetitorSample:
        rng = as_generator(rng)
        cells = self.sample_cells(size, rng)
        i, j = np.unravel_index(cells, self.mass.shape)
        t = rng.uniform(self.t_edges[i], self.t_edges[i + 1])
        p = rng.uniform(self.p_edges[j], self.p_edges[j + 1])
        q = self.bugs.sample_residual(t, self.T, rng)
        return CompetitorSample(t, p, q)

    def save(self, csv_path, meta: dict) -> None:
        from .io import atomic_write_text, write_csv

        tc, pc = self.t_centers, self.p_centers
        rows = [(t, p, self.eu_surface[a, b]) for a, t in enumerate(tc) for b, p in enumerate(pc)]
        write_csv(csv_path, ("t", "p", "expected_utility"), rows)
        meta = dict(meta)
        meta.update(
            t_edges=self.t_edges.tolist(),
            p_edges=self.p_edges.tolist(),
            T=self.T,
            seed=self.cached_seed,
        )
        atomic_write_text(Path(str(csv_path) + ".json"), json.dumps(meta, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, csv_path, bugs: BugPrior = BugPrior()) -> "StrategicModel":
        meta = json.loads(Path(str(csv_path) + ".json").read_text())
        t_edges = np.asarray(meta["t_edges"])
        p_edges = np.asarray(meta["p_edges"])
        values = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)[:, 2]
        surface = values.reshape(t_edges.size - 1, p_edges.size - 1)
        return cls(meta["T"], t_edges, p_edges, surface, bugs, cached_seed=meta.get("seed"))


def competitor_scenario(scenario, beliefs: IngredientBeliefs = IngredientBeliefs(), bugs: BugPrior = BugPrior()):
    """The advised company's model of one competitor's own launch problem.

    The competitor faces the same buyers and decision box; its own faults
    follow the competitor bug prior; every rival, the advised company
    included, is treated as a level-0 uniform competitor.
    """
    from .scenario import CompetitorSpec, OwnBugSpec

    rivals = tuple(CompetitorSpec(kind="level0") for _ in scenario.competitors)
    return replace(
        scenario,
        competitors=rivals,
        own_bugs=OwnBugSpec(kind="competitor_prior", competitor_bugs=bugs),
        cost_cv=beliefs.cost_cv,
        profit_shift=beliefs.profit_shift_mean,
    )


def lattice_edges(lo, hi, n):
    return np.linspace(lo, hi, n + 1)


def build_strategic_model(
    comp_scenario,
    dims=(20, 20),
    mc_size: int = 10_000,
    seed=None,
    bugs: BugPrior = BugPrior(),
) -> StrategicModel:
    """Evaluate the competitor's expected utility at every cell centre."""
    from .market import MarketSimulator

    nt, np_ = dims
    if nt < 2 or np_ < 2:
        raise ValueError("strategic lattice needs at least 2 cells per axis")
    t_edges = lattice_edges(0.0, comp_scenario.market.T, nt)
    p_edges = lattice_edges(*comp_scenario.market.price_bounds, np_)
    sim = MarketSimulator(comp_scenario, mc_size, seed)
    tc = 0.5 * (t_edges[:-1] + t_edges[1:])
    pc = 0.5 * (p_edges[:-1] + p_edges[1:])
    surface = sim.surface(tc, pc)["expected_utility"]
    return StrategicModel(comp_scenario.market.T, t_edges, p_edges, surface, bugs, cached_seed=seed)


def sample_level1(model: StrategicModel, seed=None) -> CompetitorDraw:
    return model.sample(1, as_generator(seed)).draw(0)


def sample_level1_argmax(
    comp_scenario,
    beliefs: IngredientBeliefs = IngredientBeliefs(),
    seed=None,
    dims=(20, 20),
    mc_size: int = 2_000,
    bugs: BugPrior = BugPrior(),
    grid=None,
) -> CompetitorDraw:
    """One forecast of a competitor's decision by solving its perturbed problem.

    Draws one realisation of the competitor's cost rates and profit shift,
    grid-searches its expected utility, and returns the argmax with sampled
    residual bugs. ``grid`` may pass explicit ``(t_values, p_values)``.
    """
    from .market import MarketSimulator
    from .optimize import DecisionBox, grid_search

    rng = as_generator(seed)
    factors = _positive_normal_factors(rng, beliefs.cost_cv, 3)
    shift = beliefs.profit_shift_mean + beliefs.profit_shift_sd * rng.standard_normal()
    cost = comp_scenario.cost
    realised = replace(
        comp_scenario,
        cost=replace(cost, c11=cost.c11 * factors[0], c21=cost.c21 * factors[1], c31=cost.c31 * factors[2]),
        cost_cv=0.0,
        profit_shift=shift,
    )
    sim_seed = int(rng.integers(0, 2**63)) if seed is None or isinstance(seed, np.random.Generator) else seed
    sim = MarketSimulator(realised, mc_size, sim_seed)
    if grid is None:
        box = DecisionBox((0.0, realised.market.T), realised.market.price_bounds)
        result = grid_search(sim.objective(), box, dims)
        t, p = result.best_point
    else:
        ts, ps = (np.asarray(g, dtype=float) for g in grid)
        values = sim.surface(ts, ps)["expected_utility"]
        i, j = np.unravel_index(int(np.argmax(values)), values.shape)
        t, p = float(ts[i]), float(ps[j])
    q = float(bugs.sample_residual(np.array([t]), realised.market.T, substream(sim_seed, 7))[0])
    return CompetitorDraw(float(t), float(p), q)


def strategic_cache_key(comp_scenario, dims, mc_size, seed) -> str:
    payload = json.dumps(
        {"scenario": comp_scenario.hash(), "dims": list(dims), "mc_size": mc_size, "seed": seed},
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def load_or_build_strategic(comp_scenario, dims, mc_size, seed, cache_dir=None, bugs: BugPrior = BugPrior()):
    """Build a strategic model, reusing a disk cache keyed by scenario hash."""
    if cache_dir is None:
        return build_strategic_model(comp_scenario, dims, mc_size, seed, bugs)
    key = strategic_cache_key(comp_scenario, dims, mc_size, seed)
    path = Path(cache_dir) / f"strategic_{key}.csv"
    if path.exists() and Path(str(path) + ".json").exists():
        logger.info("strategic surface cache hit: %s", path)
        return StrategicModel.load(path, bugs)
    logger.info("strategic surface cache miss, building %s", path)
    model = build_strategic_model(comp_scenario, dims, mc_size, seed, bugs)
    Path(cache_dir).mkdir(parents=True, exist_ok=True)
    model.save(
        path,
        {"scenario_hash": comp_scenario.hash(), "dims": list(dims), "mc_size": mc_size},
    )
    return model
