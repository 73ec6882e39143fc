"""Experiment scenarios, champion re-testing and baseline comparison."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Optional

from . import scheduler as sch
from .fitness import EarlyStop, PolicyFitness, TrainingConfig, evaluate_policy
from .grammar import Grammar, default_autolr_grammar
from .sge import EvolutionConfig, MappingLimits, evolve

BASELINE_LR = 0.01


@dataclass(frozen=True)
class Scenario:
    id: str
    epochs: int
    early_stop: bool

    def training_config(self, base: Optional[TrainingConfig] = None, train_seed: Optional[int] = None,
                        patience: int = 3) -> TrainingConfig:
        base = base or TrainingConfig()
        es = (base.early_stop or EarlyStop(patience)) if self.early_stop else None
        return replace(base, epochs=self.epochs, early_stop=es,
                       train_seed=base.train_seed if train_seed is None else train_seed)


SCENARIOS = {
    "S1": Scenario("S1", 100, True),
    "S2": Scenario("S2", 20, False),
    "S3": Scenario("S3", 100, False),
}


def get_scenario(spec) -> Scenario:
    """Look up ``S1``/``S2``/``S3`` or build a custom one from a dict."""
    if isinstance(spec, Scenario):
        return spec
    if isinstance(spec, dict):
        return Scenario(spec.get("id", "custom"), int(spec["epochs"]), bool(spec["early_stop"]))
    try:
        return SCENARIOS[spec]
    except KeyError:
        raise ValueError(f"unknown scenario {spec!r}; expected one of {sorted(SCENARIOS)}") from None


def run_experiment(scenario, evolution_config: EvolutionConfig, trainer, split,
                   grammar: Optional[Grammar] = None, limits: Optional[MappingLimits] = None,
                   base_training: Optional[TrainingConfig] = None, jobs: int = 1, on_record=None):
    """Evolve under the scenario's training regime.

    Returns ``(history, champion)``; the champion is the best individual
    over all runs, and its ``eval_meta`` records the scenario.
    """
    scenario = get_scenario(scenario)
    grammar = grammar or default_autolr_grammar()
    fitness = PolicyFitness(trainer, split, scenario.training_config(base_training))
    history = evolve(evolution_config, grammar, limits, fitness, jobs=jobs, on_record=on_record)
    for ind in history.run_champions:
        ind.eval_meta["scenario"] = scenario.id
    for rec in history.archive:
        rec.eval_meta["scenario"] = scenario.id
    return history, history.champion


def baseline_policy(grammar: Optional[Grammar] = None) -> sch.Const:
    """Constant policy at the grid value nearest 0.01."""
    return sch.Const(sch.nearest_grid_value(grammar or default_autolr_grammar(), BASELINE_LR))


def mean_std(values):
    """Population mean and standard deviation, exact-summed so the result
    does not depend on the order of ``values``."""
    n = len(values)
    mean = math.fsum(values) / n
    var = math.fsum((v - mean) ** 2 for v in values) / n
    return mean, math.sqrt(var)


@dataclass
class ComparisonRow:
    policy: str
    scenario: str
    split: str
    mean: float
    stddev: float
    runs: int


@dataclass
class ComparisonReport:
    rows: list = field(default_factory=list)
    shapes: dict = field(default_factory=dict)
    phenotypes: dict = field(default_factory=dict)
    reports: dict = field(default_factory=dict)

    def get(self, policy, scenario, split):
        for r in self.rows:
            if (r.policy, r.scenario, r.split) == (policy, scenario, split):
                return r
        return None

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["policy", "scenario", "split", "mean", "stddev", "runs"])
            for r in self.rows:
                w.writerow([r.policy, r.scenario, r.split, repr(r.mean), repr(r.stddev), r.runs])

    def text_table(self) -> str:
        """Scenario x split rows, one column per policy, ``mean ± std`` cells."""
        policies = list(dict.fromkeys(r.policy for r in self.rows))
        scenarios = list(dict.fromkeys(r.scenario for r in self.rows))
        header = ["Scenario", "Split"] + policies
        body = []
        for s in scenarios:
            for split in ("validation", "test"):
                cells = []
                for p in policies:
                    r = self.get(p, s, split)
                    cells.append("n/a" if r is None else f"{r.mean:.3f} ± {r.stddev:.3f}")
                body.append([s, split.capitalize()] + cells)
        body.append(["Shape", ""] + [self.shapes.get(p, "") for p in policies])
        widths = [max(len(row[i]) for row in [header] + body) for i in range(len(header))]

        def fmt(row):
            return " | ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip()

        rule = "-+-".join("-" * w for w in widths)
        return "\n".join([fmt(header), rule] + [fmt(r) for r in body]) + "\n"


def compare_policies(policies, scenarios, runs: int, trainer, split,
                     base_training: Optional[TrainingConfig] = None, seeds=None,
                     shape_epochs: int = 100) -> ComparisonReport:
    """Evaluate each (policy, scenario) ``runs`` times with seeds ``0..runs-1``.

    ``policies`` is a list of ``(name, ast)`` pairs; ``scenarios`` may pair
    each policy with its own scenario list via a dict ``{name: [...]}``.
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    seeds = list(range(runs)) if seeds is None else list(seeds)[:runs]
    base_training = base_training or TrainingConfig()
    report = ComparisonReport()
    for name, ast in policies:
        plan = scenarios[name] if isinstance(scenarios, dict) else scenarios
        report.phenotypes[name] = sch.render(ast)
        curve = sch.simulate_schedule(ast, shape_epochs, base_training.initial_prev_lr)
        report.shapes[name] = sch.classify_shape(curve)
        for sc in plan:
            sc = get_scenario(sc)
            reps = [evaluate_policy(ast, trainer, split, sc.training_config(base_training, seed))
                    for seed in seeds]
            report.reports[(name, sc.id)] = reps
            for split_name, values in (
                ("validation", [r.best_validation_accuracy for r in reps]),
                ("test", [r.fitness for r in reps]),
            ):
                m, s = mean_std(values)
                report.rows.append(ComparisonRow(name, sc.id, split_name, m, s, len(reps)))
    return report
