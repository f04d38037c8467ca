"""Command-line experiment runner: ``launch-ara <command> [options]``.

Every command writes CSV tables, SVG heatmaps where relevant, a copy of the
effective scenario (``scenario.json``) and a ``manifest.json`` into ``--out``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .io import atomic_write_text, heatmap_svg, write_csv
from .market import BudgetDist, DecisionOutcome, get_simulator
from .optimize import (
    DecisionBox,
    GpConfig,
    OptResult,
    SaSchedule,
    bayes_opt,
    grid_search,
    lattice,
    price_contingency,
    simulated_annealing,
)
from .scenario import Scenario, ScenarioError, load_scenario, save_scenario

logger = logging.getLogger(__name__)

COMMANDS = ("optimize", "surface", "sensitivity-rho", "sensitivity-c31", "strategic", "multi", "contingency")
DEFAULT_GRID = (50, 50)


@dataclass
class RunManifest:
    command: str
    scenario_hash: str
    seed: int
    mc_size: int
    argv: List[str]
    timestamp: str = field(default_factory=lambda: time.strftime("%Y-%m-%dT%H:%M:%S%z"))
    outputs: List[str] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def write(self, out_dir: Path) -> Path:
        path = out_dir / "manifest.json"
        doc = {
            "command": self.command,
            "scenario_hash": self.scenario_hash,
            "scenario_file": "scenario.json",
            "seed": self.seed,
            "mc_size": self.mc_size,
            "argv": self.argv,
            "timestamp": self.timestamp,
            "outputs": sorted(self.outputs),
            **self.extra,
        }
        atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")
        return path


def parse_grid(text: str):
    try:
        nt, np_ = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must look like 50x50, got {text!r}") from None
    if nt < 2 or np_ < 2:
        raise argparse.ArgumentTypeError("grid needs at least 2 points per axis")
    return nt, np_


def parse_floats(text: str):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


# -- shared plumbing -----------------------------------------------------------


@dataclass
class RunContext:
    scenario: Scenario
    seed: int
    mc_size: int
    grid: tuple
    out: Path
    cache_dir: Path
    manifest: RunManifest

    @property
    def box(self) -> DecisionBox:
        return DecisionBox.for_scenario(self.scenario)

    def objective(self, scenario: Optional[Scenario] = None, multi: bool = False, value: str = "expected_utility"):
        sim = get_simulator(scenario or self.scenario, self.mc_size, self.seed, self.cache_dir)
        return sim.objective(value, multi=multi)

    def csv(self, name, header, rows):
        write_csv(self.out / name, header, rows)
        self.manifest.outputs.append(name)

    def svg(self, name, text):
        atomic_write_text(self.out / name, text)
        self.manifest.outputs.append(name)


def _outcome_rows(outcomes: Sequence[DecisionOutcome]):
    return [[getattr(o, f) for f in DecisionOutcome.CSV_FIELDS] for o in outcomes]


def write_surface(ctx: RunContext, objective, prefix: str = "surface"):
    """Evaluate the full lattice and write the table plus two heatmaps."""
    ts, ps = lattice(ctx.box, ctx.grid)
    surf = objective.simulator.surface(ts, ps, multi=objective.multi)
    eu = surf["expected_utility"]
    i, j = np.unravel_index(int(np.argmax(eu)), eu.shape)
    rows = []
    for a, t in enumerate(ts):
        for b, p in enumerate(ps):
            rows.append([t, p, eu[a, b], surf["expected_profit"][a, b], surf["purchase_prob"][a, b], surf["expected_cost"][a, b], ctx.mc_size])
    ctx.csv(f"{prefix}.csv", DecisionOutcome.CSV_FIELDS, rows)
    ctx.svg(f"{prefix}_utility.svg", heatmap_svg(ts, ps, eu, "Expected utility", marker=(i, j)))
    ctx.svg(f"{prefix}_probability.svg", heatmap_svg(ts, ps, surf["purchase_prob"], "Purchase probability", marker=(i, j)))
    best = {k: float(v[i, j]) for k, v in surf.items()}
    best.update(t1=float(ts[i]), p1=float(ps[j]))
    logger.info("surface argmax t1=%.1f p1=%.1f EU=%.6g prob=%.4f", best["t1"], best["p1"], best["expected_utility"], best["purchase_prob"])
    ctx.manifest.extra["argmax"] = best
    return ts, ps, surf, best


def run_optimizer(ctx: RunContext, objective, method: str, args) -> OptResult:
    box = ctx.box
    if method == "grid":
        return grid_search(objective, box, ctx.grid)
    if method == "sa":
        return simulated_annealing(objective, box, SaSchedule(max_iters=args.iters), seed=ctx.seed)
    noise = objective.noise_sd(*box.center)
    config = GpConfig(n_calls=args.calls, n_init=min(20, args.calls - 1))
    return bayes_opt(objective, box, config, seed=ctx.seed, noise_sd=noise)


def _grid_best(ctx: RunContext, scenario: Scenario):
    objective = ctx.objective(scenario)
    res = grid_search(objective, ctx.box, ctx.grid)
    return objective.outcome(*res.best_point)


# -- commands ------------------------------------------------------------------


def cmd_optimize(ctx: RunContext, args) -> OptResult:
    multi = ctx.scenario.market.budget_dist is not None
    objective = ctx.objective(multi=multi)
    res = run_optimizer(ctx, objective, args.method, args)
    best = objective.outcome(*res.best_point)
    ctx.csv("optimize.csv", DecisionOutcome.CSV_FIELDS, _outcome_rows([best]))
    ctx.csv("trace.csv", ("iteration", "t1", "p1", "value"), res.trace_rows())
    ctx.manifest.extra.update(method=args.method, multi=multi, evaluations=res.evaluations_used)
    logger.info("%s optimum t1=%.1f p1=%.1f profit=%.6g", args.method, best.t1, best.p1, best.expected_profit)
    return res


def cmd_surface(ctx: RunContext, args):
    return write_surface(ctx, ctx.objective())


def cmd_sensitivity_rho(ctx: RunContext, args):
    values = args.values if args.values is not None else [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]
    if min(values) <= 0:
        raise ScenarioError("rho values must be positive")
    rows = []
    for rho in values:
        best = _grid_best(ctx, ctx.scenario.with_rho(rho))
        logger.info("rho=%g t1*=%.1f p1*=%.1f", rho, best.t1, best.p1)
        rows.append([rho, best.p1, best.t1, best.expected_utility, best.purchase_prob])
    ctx.csv("sensitivity_rho.csv", ("rho", "p1", "t1", "expected_utility", "purchase_prob"), rows)
    return rows


def cmd_sensitivity_c31(ctx: RunContext, args):
    values = args.values if args.values is not None else [1000.0, 2500.0, 5000.0, 7500.0, 10000.0]
    if min(values) < 0:
        raise ScenarioError("c31 values must be nonnegative")
    rows = []
    for c31 in values:
        best = _grid_best(ctx, ctx.scenario.with_c31(c31))
        logger.info("c31=%g t1*=%.1f profit=%.6g", c31, best.t1, best.expected_profit)
        rows.append([c31, best.t1, best.expected_profit])
    ctx.csv("sensitivity_c31.csv", ("c31", "t1", "expected_profit"), rows)
    return rows


def cmd_strategic(ctx: RunContext, args):
    if all(c.kind == "level0" for c in ctx.scenario.competitors):
        raise ScenarioError("competitors: strategic needs at least one non-level0 competitor")
    return write_surface(ctx, ctx.objective(), prefix="strategic")


def cmd_multi(ctx: RunContext, args):
    if ctx.scenario.market.budget_dist is None:
        raise ScenarioError("market.budget: multi needs a budget distribution (or --budget LO,HI)")
    return write_surface(ctx, ctx.objective(multi=True), prefix="multi")


def cmd_contingency(ctx: RunContext, args):
    multi = ctx.scenario.market.budget_dist is not None
    curve, coeffs = price_contingency(ctx.objective(multi=multi), ctx.box, *ctx.grid)
    ctx.csv("contingency.csv", ("t1", "p1"), curve)
    ctx.csv("contingency_fit.csv", ("c0", "c1", "c2"), [coeffs])
    return curve, coeffs


HANDLERS = {
    "optimize": cmd_optimize,
    "surface": cmd_surface,
    "sensitivity-rho": cmd_sensitivity_rho,
    "sensitivity-c31": cmd_sensitivity_c31,
    "strategic": cmd_strategic,
    "multi": cmd_multi,
    "contingency": cmd_contingency,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", default="paper-default", help="scenario JSON path or 'paper-default'")
    common.add_argument("--seed", type=int, default=None, help="overrides the scenario seed")
    common.add_argument("--mc-size", type=int, default=None, help="Monte Carlo draws M (default: scenario mc_size)")
    common.add_argument("--grid", type=parse_grid, default=DEFAULT_GRID, metavar="NTxNP")
    common.add_argument("--out", type=Path, default=Path("runs"), help="output directory")
    common.add_argument("--method", choices=("grid", "sa", "bo"), default="grid")
    common.add_argument("--cache-dir", type=Path, default=None, help="strategic surface cache (default: OUT/cache)")
    common.add_argument("--budget", type=parse_floats, default=None, metavar="LO,HI", help="buyer budget range for multi-item runs")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="launch-ara", description="Release time and price decision support.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "optimize":
            p.add_argument("--calls", type=int, default=200, help="BO objective calls")
            p.add_argument("--iters", type=int, default=1000, help="SA iterations")
        if name.startswith("sensitivity"):
            p.add_argument("--values", type=parse_floats, default=None, help="comma-separated sweep values")
    return parser


def _effective_scenario(args) -> Scenario:
    scenario = load_scenario(args.scenario)
    if args.budget is not None:
        if len(args.budget) != 2:
            raise ScenarioError("--budget: expected LO,HI")
        scenario = replace(scenario, market=replace(scenario.market, budget_dist=BudgetDist(*args.budget)))
    if args.seed is not None:
        scenario = replace(scenario, seed=args.seed)
    if args.mc_size is not None:
        if args.mc_size < 1:
            raise ScenarioError("--mc-size: must be >= 1")
        scenario = replace(scenario, mc_size=args.mc_size)
    return scenario


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        scenario = _effective_scenario(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        manifest = RunManifest(args.command, scenario.hash(), scenario.seed, scenario.mc_size, argv)
        ctx = RunContext(scenario, scenario.seed, scenario.mc_size, args.grid, out, args.cache_dir or out / "cache", manifest)
        save_scenario(scenario, out / "scenario.json")
        manifest.outputs.append("scenario.json")
        start = time.perf_counter()
        HANDLERS[args.command](ctx, args)
        manifest.extra["grid"] = list(args.grid)
        manifest.extra["runtime_s"] = round(time.perf_counter() - start, 3)
        manifest.write(out)
    except (ScenarioError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
