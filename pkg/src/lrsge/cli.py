"""Command line: ``lrsge {evolve,eval,curve,oracle,compare}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import re
import shutil
import sys
from dataclasses import replace

from . import scheduler as sch
from .config import ConfigError, RunConfig, load_config
from .fitness import brute_force_constants, evaluate_policy, write_oracle_csv, write_trace_csv
from .grammar import GrammarError, format_real, load_grammar
from .harness import baseline_policy, compare_policies, get_scenario, run_experiment

log = logging.getLogger("lrsge")

EVOLUTION_FIELDS = ["run", "generation", "best_fitness", "mean_fitness", "best_phenotype", "evals", "seconds"]


class CliError(Exception):
    pass


def _common(p):
    p.add_argument("--config", metavar="PATH", help="JSON run configuration")
    p.add_argument("--seed", type=int, help="master seed (overrides config)")
    p.add_argument("--jobs", type=int, help="parallel fitness evaluations (default: CPU count)")
    p.add_argument("--out", metavar="DIR", help="output directory (overrides config)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lrsge", description="Evolve learning-rate schedules with SGE.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("evolve", help="run the evolutionary search")
    _common(p)
    p.add_argument("--scenario", help="S1, S2 or S3")
    p.add_argument("--generations", type=int)
    p.add_argument("--runs", type=int)
    p.add_argument("--population", type=int)
    p.add_argument("--mutation-rate", type=float)
    p.add_argument("--max-depth", type=int, help="recursion bound for <expr>")
    p.add_argument("--record-time", action="store_true",
                   help="fill the seconds column of evolution.csv with wall-clock time")

    p = sub.add_parser("eval", help="train once under a policy and report fitness")
    _common(p)
    p.add_argument("policy", help="phenotype text, 'baseline', or a champions.jsonl archive")
    p.add_argument("--scenario", help="S1, S2 or S3 (default: archive's scenario or config)")
    p.add_argument("--train-seed", type=int, help="training seed (default: archive's or --seed)")
    p.add_argument("--trace", action="store_true", help="write trace.csv to the output directory")

    p = sub.add_parser("curve", help="export the learning-rate curve of a policy")
    _common(p)
    p.add_argument("policy", help="phenotype text, 'baseline', or a champions.jsonl archive")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--initial-lr", type=float, help="previous learning rate seen at epoch 1")

    p = sub.add_parser("oracle", help="evaluate every constant policy on the grid")
    _common(p)
    p.add_argument("--scenario", help="S1, S2 or S3")

    p = sub.add_parser("compare", help="compare policies across scenarios")
    _common(p)
    p.add_argument("--policy", action="append", default=[], metavar="[NAME=]POLICY",
                   help="policy to compare (repeatable); baseline is always included")
    p.add_argument("--scenarios", help="comma-separated scenario ids (default from config)")
    p.add_argument("--runs", type=int, help="runs per cell (default from config)")
    return parser


def _setup(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.evolution.rng_seed = args.seed
    if args.jobs is not None:
        if args.jobs < 1:
            raise CliError("--jobs must be >= 1")
        cfg.jobs = args.jobs
    if args.out is not None:
        cfg.out = args.out
    os.makedirs(cfg.out, exist_ok=True)
    return cfg


def _jobs(cfg):
    return cfg.jobs if cfg.jobs is not None else (os.cpu_count() or 1)


def _copy_config(cfg):
    if cfg.source_path:
        dst = os.path.join(cfg.out, "config.json")
        if os.path.abspath(dst) != os.path.abspath(cfg.source_path):
            shutil.copyfile(cfg.source_path, dst)
    with open(os.path.join(cfg.out, "resolved_config.json"), "w", encoding="utf-8") as fh:
        json.dump({**cfg.to_dict(), "jobs": None}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_archive(path):
    """Best record of a champions.jsonl archive (earliest on ties)."""
    best = None
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                if best is None or rec["fitness"] > best["fitness"]:
                    best = rec
    if best is None:
        raise CliError(f"archive {path} is empty")
    return best


def resolve_policy(text, grammar):
    """Return ``(ast, archive_record_or_None)``."""
    if text == "baseline":
        return baseline_policy(grammar), None
    if os.path.isfile(text):
        rec = read_archive(text)
        return sch.parse_phenotype(rec["phenotype"], grammar), rec
    return sch.parse_phenotype(text, grammar), None


def cmd_evolve(args) -> int:
    cfg = _setup(args)
    evo = cfg.evolution
    overrides = {
        "generations": args.generations, "runs": args.runs,
        "population_size": args.population, "mutation_rate": args.mutation_rate,
    }
    evo = replace(evo, **{k: v for k, v in overrides.items() if v is not None})
    if args.max_depth is not None:
        evo = replace(evo, limits=replace(evo.limits, max_recursion_depth=args.max_depth))
    cfg.evolution = evo
    if args.scenario:
        cfg.scenario = args.scenario
    scenario = get_scenario(cfg.scenario)
    grammar = load_grammar(cfg.grammar)
    split = cfg.trainer.make_split()
    _copy_config(cfg)

    log_path = os.path.join(cfg.out, "evolution.csv")
    with open(log_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(EVOLUTION_FIELDS)

        def on_record(r):
            writer.writerow([r.run, r.generation, repr(r.best_fitness), repr(r.mean_fitness),
                             r.best_phenotype, r.evals, f"{r.seconds:.6f}" if args.record_time else ""])
            fh.flush()
            log.info("run %d gen %d best %.6f", r.run, r.generation, r.best_fitness)

        history, champion = run_experiment(scenario, evo, cfg.trainer, split, grammar=grammar,
                                           base_training=cfg.base_training(), jobs=_jobs(cfg),
                                           on_record=on_record)

    with open(os.path.join(cfg.out, "champions.jsonl"), "w", encoding="utf-8") as fh:
        for rec in history.archive:
            fh.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")
    summary = {
        "scenario": scenario.id,
        "champion": {"phenotype": champion.phenotype, "fitness": champion.fitness,
                     "genotype": champion.genotype, "eval_meta": champion.eval_meta},
        "run_champions": [{"phenotype": c.phenotype, "fitness": c.fitness, "eval_meta": c.eval_meta}
                          for c in history.run_champions],
        "total_evals": sum(r.evals for r in history.records),
    }
    with open(os.path.join(cfg.out, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"champion fitness {champion.fitness!r}: {champion.phenotype}")
    print(f"wrote {log_path}")
    return 0


def cmd_eval(args) -> int:
    cfg = _setup(args)
    grammar = load_grammar(cfg.grammar)
    ast, rec = resolve_policy(args.policy, grammar)
    meta = rec["eval_meta"] if rec else {}
    scenario = get_scenario(args.scenario or meta.get("scenario") or cfg.scenario)
    if args.train_seed is not None:
        seed = args.train_seed
    elif "train_seed" in meta:
        seed = meta["train_seed"]
    else:
        seed = cfg.seed
    report = evaluate_policy(ast, cfg.trainer, cfg.trainer.make_split(),
                             scenario.training_config(cfg.base_training(), seed))
    print(f"policy: {sch.render(ast)}")
    print(f"scenario: {scenario.id}")
    print(f"train_seed: {seed}")
    print(f"fitness: {report.fitness!r}")
    print(f"best_validation_accuracy: {report.best_validation_accuracy!r}")
    print(f"epochs_trained: {report.epochs_trained}")
    print(f"early_stopped: {report.early_stopped}")
    if report.note:
        print(f"note: {report.note}")
    if rec is not None:
        print(f"archived_fitness: {rec['fitness']!r}")
    if args.trace:
        path = os.path.join(cfg.out, "trace.csv")
        write_trace_csv(report, path)
        print(f"wrote {path}")
    return 0


def cmd_curve(args) -> int:
    cfg = _setup(args)
    grammar = load_grammar(cfg.grammar)
    ast, _ = resolve_policy(args.policy, grammar)
    if args.epochs < 1:
        raise CliError("--epochs must be >= 1")
    initial = cfg.training.initial_prev_lr if args.initial_lr is None else args.initial_lr
    curve = sch.simulate_schedule(ast, args.epochs, initial)
    path = os.path.join(cfg.out, "curve.csv")
    sch.write_curve_csv(curve, path)
    print(f"shape: {sch.classify_shape(curve)}")
    print(f"wrote {path}")
    return 0


def cmd_oracle(args) -> int:
    cfg = _setup(args)
    grammar = load_grammar(cfg.grammar)
    scenario = get_scenario(args.scenario or cfg.scenario)
    table = brute_force_constants(cfg.trainer, cfg.trainer.make_split(),
                                  scenario.training_config(cfg.base_training(), cfg.seed), grammar)
    path = os.path.join(cfg.out, "oracle.csv")
    write_oracle_csv(table, path)
    print(f"argmax lr: {format_real(table.argmax)} (fitness {table.best_fitness!r})")
    print(f"wrote {path}")
    return 0


def cmd_compare(args) -> int:
    cfg = _setup(args)
    grammar = load_grammar(cfg.grammar)
    policies = [("baseline", baseline_policy(grammar))]
    for i, item in enumerate(args.policy):
        m = re.match(r"([A-Za-z_][A-Za-z0-9_-]*)=(.+)\Z", item)
        name, text = (m.group(1), m.group(2)) if m else ("", item)
        ast, _ = resolve_policy(text, grammar)
        policies.append((name or f"policy{i + 1}", ast))
    scenarios = args.scenarios.split(",") if args.scenarios else cfg.compare.scenarios
    runs = args.runs if args.runs is not None else cfg.compare.runs
    report = compare_policies(policies, [get_scenario(s.strip()) for s in scenarios], runs,
                              cfg.trainer, cfg.trainer.make_split(), base_training=cfg.base_training())
    report.write_csv(os.path.join(cfg.out, "comparison.csv"))
    table = report.text_table()
    with open(os.path.join(cfg.out, "comparison.txt"), "w", encoding="utf-8") as fh:
        fh.write(table)
        for name, text in report.phenotypes.items():
            fh.write(f"{name}: {text}\n")
    print(table, end="")
    return 0


COMMANDS = {
    "evolve": cmd_evolve,
    "eval": cmd_eval,
    "curve": cmd_curve,
    "oracle": cmd_oracle,
    "compare": cmd_compare,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, GrammarError, CliError, sch.PhenotypeError, ValueError, OSError) as exc:
        print(f"lrsge {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
