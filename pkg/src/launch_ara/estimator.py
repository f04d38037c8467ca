"""Estimator-style facade over the decision objective."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .market import DecisionOutcome, get_simulator
from .optimize import DecisionBox, GpConfig, SaSchedule, bayes_opt, grid_search, simulated_annealing
from .scenario import Scenario, load_scenario


class LaunchAdvisor(BaseEstimator):
    """Recommend a release time and price for a scenario.

    ``fit(scenario)`` runs the chosen optimizer; ``predict(X)`` returns the
    expected utility of each ``(t1, p1)`` row of ``X`` and ``transform(X)``
    the full outcome table (columns as ``DecisionOutcome.CSV_FIELDS``).

    Examples
    --------
    >>> adv = LaunchAdvisor(mc_size=2000, grid=(11, 11)).fit("paper-default")  # doctest: +SKIP
    >>> adv.best_decision_  # doctest: +SKIP
    """

    def __init__(self, method="grid", mc_size=None, seed=None, grid=(50, 50), multi=None, calls=200, sa_iters=1000, cache_dir=None):
        self.method = method
        self.mc_size = mc_size
        self.seed = seed
        self.grid = grid
        self.multi = multi
        self.calls = calls
        self.sa_iters = sa_iters
        self.cache_dir = cache_dir

    def fit(self, scenario, y=None):
        if not isinstance(scenario, Scenario):
            scenario = load_scenario(scenario)
        if self.method not in ("grid", "sa", "bo"):
            raise ValueError(f"unknown method {self.method!r}")
        self.scenario_ = scenario
        M = scenario.mc_size if self.mc_size is None else self.mc_size
        seed = scenario.seed if self.seed is None else self.seed
        multi = scenario.market.budget_dist is not None if self.multi is None else self.multi
        self.objective_ = get_simulator(scenario, M, seed, self.cache_dir).objective(multi=multi)
        box = DecisionBox.for_scenario(scenario)
        if self.method == "grid":
            res = grid_search(self.objective_, box, self.grid)
        elif self.method == "sa":
            res = simulated_annealing(self.objective_, box, SaSchedule(max_iters=self.sa_iters), seed=seed)
        else:
            config = GpConfig(n_calls=self.calls, n_init=min(20, self.calls - 1))
            res = bayes_opt(self.objective_, box, config, seed=seed, noise_sd=self.objective_.noise_sd(*box.center))
        self.result_ = res
        self.best_decision_ = res.best_point
        self.best_outcome_ = self.objective_.outcome(*res.best_point)
        return self

    def _rows(self, X):
        check_is_fitted(self, "result_")
        X = check_array(X, dtype=float)
        if X.shape[1] != 2:
            raise ValueError("X must have two columns (t1, p1)")
        return [self.objective_.outcome(t, p) for t, p in X]

    def predict(self, X) -> np.ndarray:
        return np.array([o.expected_utility for o in self._rows(X)])

    def transform(self, X) -> np.ndarray:
        return np.array([[getattr(o, f) for f in DecisionOutcome.CSV_FIELDS] for o in self._rows(X)], dtype=float)
