"""Structured Grammatical Evolution.

A genotype keeps one integer list per nonterminal. Mapping walks the
derivation in pre-order and consumes the next unread gene of whichever
nonterminal is being expanded. Recursive nonterminals carry a depth
counter; once it reaches ``max_recursion_depth`` the choice is restricted
to non-recursive options and the gene is read modulo the restricted set.
"""

from __future__ import annotations

import copy
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from . import scheduler as sch
from .grammar import Grammar

log = logging.getLogger(__name__)

Genotype = dict  # nonterminal -> list[int]


class MappingError(ValueError):
    """Genotype cannot be mapped (gene out of range or list too short)."""


@dataclass(frozen=True)
class MappingLimits:
    max_recursion_depth: int = 4

    def __post_init__(self):
        if self.max_recursion_depth < 0:
            raise ValueError("max_recursion_depth must be >= 0")

    def max_gene_counts(self, grammar: Grammar) -> dict:
        """Upper bound on how many genes each nonterminal can consume."""
        memo = {}

        def count(nt, d):
            # genes consumed by the subtree rooted at one occurrence of nt at depth d
            key = (nt, d)
            if key in memo:
                return memo[key]
            memo[key] = None  # cycle guard; validated grammars with a bound never hit it
            choices = _choices(grammar, nt, d, self.max_recursion_depth)
            best = {}
            for idx in choices:
                nd = d + 1 if grammar.is_recursive_option(nt, idx) else d
                tot = {nt: 1}
                for s in grammar.options(nt)[idx]:
                    if s.is_nonterminal:
                        sub = count(s.text, nd if grammar.is_recursive(s.text) else d)
                        for k, v in sub.items():
                            tot[k] = tot.get(k, 0) + v
                for k, v in tot.items():
                    best[k] = max(best.get(k, 0), v)
            memo[key] = best
            return best

        return count(grammar.axiom, 0)


def _choices(grammar, nt, d, max_depth):
    if grammar.is_recursive(nt) and d >= max_depth:
        return grammar.restricted_options(nt)
    return tuple(range(grammar.option_count(nt)))


class _Walker:
    """One pre-order derivation pass.

    Without an rng this is the pure mapping. With an rng, missing genes are
    drawn uniformly (initialisation and mutation repair), and each consumed
    gene is resampled with probability ``rate``.
    """

    def __init__(self, grammar, limits, genotype, rng=None, rate=0.0, changes=None):
        self.g = grammar
        self.max_depth = limits.max_recursion_depth
        self.src = genotype
        self.rng = rng
        self.rate = rate
        self.changes = changes
        self.pos = {nt: 0 for nt in grammar.productions}
        self.used = {nt: [] for nt in grammar.productions}
        self.tokens = []

    def next_gene(self, nt, choices):
        restricted = len(choices) != self.g.option_count(nt)
        genes = self.src.get(nt, [])
        i = self.pos[nt]
        self.pos[nt] = i + 1
        if i < len(genes):
            gene = int(genes[i])
            if not 0 <= gene < self.g.option_count(nt):
                raise MappingError(f"gene {gene} out of range for <{nt}> at position {i}")
            if restricted:
                gene %= len(choices)
            if self.rng is not None and self.rate > 0 and len(choices) > 1:
                mutated = self.rng.random() < self.rate
                if self.changes is not None:
                    self.changes.append((nt, i, mutated))
                if mutated:
                    new = int(self.rng.integers(len(choices) - 1))
                    gene = new + (new >= gene)
        elif self.rng is not None:
            gene = int(self.rng.integers(len(choices)))
        else:
            raise MappingError(f"genotype too short for <{nt}> (needs gene {i})")
        self.used[nt].append(gene)
        return choices[gene] if restricted else gene

    def expand(self, nt, d):
        choices = _choices(self.g, nt, d, self.max_depth)
        idx = self.next_gene(nt, choices)
        nd = d + 1 if self.g.is_recursive_option(nt, idx) else d
        for s in self.g.options(nt)[idx]:
            if s.is_nonterminal:
                self.expand(s.text, nd if self.g.is_recursive(s.text) else d)
            else:
                self.tokens.append(s.text)

    def run(self):
        self.expand(self.g.axiom, 0)
        return {nt: genes for nt, genes in self.used.items() if genes}


def join_tokens(tokens) -> str:
    """Join terminals: no space after ``(`` or before ``,`` / ``)``."""
    out = []
    for tok in tokens:
        if out and not out[-1].endswith("(") and tok not in (",", ")"):
            out.append(" ")
        out.append(tok)
    return "".join(out)


def derive(grammar: Grammar, limits: MappingLimits, genotype: Genotype):
    """Map to ``(phenotype_text, active_genotype)`` for any grammar."""
    w = _Walker(grammar, limits, genotype)
    active = w.run()
    return join_tokens(w.tokens), active


def map_genotype(grammar: Grammar, limits: MappingLimits, genotype: Genotype):
    """Map a genotype to ``(phenotype, ast)`` over the scheduler grammar."""
    text, _ = derive(grammar, limits, genotype)
    return text, sch.parse_phenotype(text, grammar)


def random_genotype(grammar: Grammar, limits: MappingLimits, rng) -> Genotype:
    w = _Walker(grammar, limits, {}, rng=rng)
    return w.run()


def mutate(genotype: Genotype, grammar: Grammar, limits: MappingLimits, rate: float, rng,
           changes: Optional[list] = None) -> Genotype:
    """Per-gene mutation of the active genes.

    Each consumed gene with more than one option in its context is, with
    probability ``rate``, replaced by a different option drawn uniformly.
    Newly required genes are drawn at random; unread genes are dropped.
    ``changes`` (if given) receives ``(nonterminal, position, mutated)`` for
    every mutation decision.
    """
    if not 0.0 <= rate <= 1.0:
        raise ValueError("rate must be in [0, 1]")
    w = _Walker(grammar, limits, genotype, rng=rng, rate=rate, changes=changes)
    return w.run()


def encode_ast(ast, grammar: Grammar, limits: MappingLimits) -> Genotype:
    """Inverse of the mapping for scheduler trees of admissible depth."""
    genes = {nt: [] for nt in grammar.productions}

    def option_index(nt, pred):
        for i, opt in enumerate(grammar.options(nt)):
            if pred(opt):
                return i
        raise MappingError(f"no option of <{nt}> matches")

    if_opt = option_index("expr", lambda o: o[0].text == "if_func(")
    const_opt = option_index("expr", lambda o: len(o) == 1 and o[0].is_nonterminal)
    lr_index = {float(t): i for i, t in enumerate(grammar.terminal_values("lr_const"))}
    ep_index = {int(t): i for i, t in enumerate(grammar.terminal_values("ep_const"))}
    op_index = {t: i for i, t in enumerate(grammar.terminal_values("logic_op"))}

    def put_expr(choice, d):
        choices = _choices(grammar, "expr", d, limits.max_recursion_depth)
        if choice not in choices:
            raise MappingError("tree exceeds the recursion bound")
        genes["expr"].append(choices.index(choice) if len(choices) != grammar.option_count("expr") else choice)

    def walk(node, d):
        if isinstance(node, sch.Const):
            put_expr(const_opt, d)
            genes["lr_const"].append(lr_index[node.lr])
            return
        put_expr(if_opt, d)
        c = node.cond
        var_opt = option_index("logic_expr", lambda o: o[0].text == c.variable)
        genes["logic_expr"].append(var_opt)
        genes["logic_op"].append(op_index[c.op])
        if c.variable == sch.LEARNING_RATE:
            genes["lr_const"].append(lr_index[c.constant])
        else:
            genes["ep_const"].append(ep_index[c.constant])
        walk(node.then, d + 1)
        walk(node.orelse, d + 1)

    walk(ast, 0)
    return {nt: v for nt, v in genes.items() if v}


# --- evolution -----------------------------------------------------------------

@dataclass
class EvolutionConfig:
    population_size: int = 5
    generations: int = 50
    mutation_rate: float = 0.15
    runs: int = 10
    elitism: int = 1
    tournament_size: int = 3
    rng_seed: int = 0
    limits: MappingLimits = field(default_factory=MappingLimits)

    def __post_init__(self):
        if isinstance(self.limits, dict):
            self.limits = MappingLimits(**self.limits)
        if self.population_size < 1:
            raise ValueError("population_size must be >= 1")
        if self.generations < 0 or self.runs < 1:
            raise ValueError("generations must be >= 0 and runs >= 1")
        if not 0.0 <= self.mutation_rate <= 1.0:
            raise ValueError("mutation_rate must be in [0, 1]")
        if not 1 <= self.elitism <= self.population_size:
            raise ValueError("elitism must be in [1, population_size]")
        if self.tournament_size < 1:
            raise ValueError("tournament_size must be >= 1")


@dataclass
class Individual:
    genotype: Genotype
    phenotype: str
    ast: object
    fitness: Optional[float] = None
    eval_meta: dict = field(default_factory=dict)

    @classmethod
    def from_genotype(cls, genotype, grammar, limits):
        phenotype, ast = map_genotype(grammar, limits, genotype)
        return cls(genotype, phenotype, ast)


@dataclass
class GenerationRecord:
    run: int
    generation: int
    best_fitness: float
    mean_fitness: float
    best_phenotype: str
    evals: int
    seconds: float


@dataclass
class ArchiveRecord:
    run: int
    generation: int
    genotype: dict
    phenotype: str
    fitness: float
    eval_meta: dict

    def to_dict(self):
        return asdict(self)


@dataclass
class EvolutionHistory:
    records: list = field(default_factory=list)
    archive: list = field(default_factory=list)
    run_champions: list = field(default_factory=list)

    @property
    def champion(self) -> Individual:
        # earliest run wins ties
        best = None
        for ind in self.run_champions:
            if best is None or ind.fitness > best.fitness:
                best = ind
        return best


def run_train_seed(rng_seed: int, run: int) -> int:
    """Training seed shared by every evaluation in one run."""
    return int(np.random.SeedSequence([rng_seed, run, 1]).generate_state(1)[0])


def _evaluate_report(fitness_fn, ind, train_seed):
    """Call the fitness function, normalising its result to (fitness, meta)."""
    try:
        result = fitness_fn(ind, train_seed)
    except Exception as exc:  # evolution must tolerate failing evaluations
        log.warning("fitness evaluation failed for %s: %s", ind.phenotype, exc)
        return 0.0, {"train_seed": train_seed, "error": f"{type(exc).__name__}: {exc}"}
    if isinstance(result, (int, float)):
        fit, meta = float(result), {}
    else:
        fit = float(result.fitness)
        meta = {
            "epochs_trained": result.epochs_trained,
            "early_stopped": result.early_stopped,
        }
        if getattr(result, "note", None):
            meta["note"] = result.note
    if not np.isfinite(fit):
        fit, meta["note"] = 0.0, "non-finite fitness"
    meta["train_seed"] = train_seed
    return fit, meta


_worker_fitness = None


def _worker_init(fitness_fn):
    global _worker_fitness
    _worker_fitness = fitness_fn


def _worker_eval(args):
    ind, train_seed = args
    return _evaluate_report(_worker_fitness, ind, train_seed)


class _Evaluator:
    def __init__(self, fitness_fn, jobs):
        self.fitness_fn = fitness_fn
        self.pool = None
        if jobs and jobs > 1:
            self.pool = ProcessPoolExecutor(max_workers=jobs, initializer=_worker_init,
                                            initargs=(fitness_fn,))

    def __call__(self, items):
        if self.pool is not None and len(items) > 1:
            return list(self.pool.map(_worker_eval, items))
        return [_evaluate_report(self.fitness_fn, ind, seed) for ind, seed in items]

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()


def _tournament(pop, size, rng):
    picks = rng.integers(len(pop), size=size)
    best = picks[0]
    for p in picks[1:]:
        if pop[p].fitness > pop[best].fitness:
            best = p
    return pop[best]


def evolve(config: EvolutionConfig, grammar: Grammar, limits: Optional[MappingLimits],
           fitness_fn: Callable, jobs: int = 1, on_record: Optional[Callable] = None) -> EvolutionHistory:
    """Generational loop: elitism plus tournament-selected mutants.

    ``fitness_fn(individual, train_seed)`` returns a float or an object with
    ``fitness``, ``epochs_trained`` and ``early_stopped`` attributes.
    Identical phenotypes within a run share one evaluation.
    """
    limits = limits or config.limits
    history = EvolutionHistory()
    evaluator = _Evaluator(fitness_fn, jobs)
    try:
        for run in range(config.runs):
            _evolve_run(run, config, grammar, limits, evaluator, history, on_record)
    finally:
        evaluator.close()
    return history


def _evolve_run(run, config, grammar, limits, evaluator, history, on_record):
    rng = np.random.default_rng(np.random.SeedSequence([config.rng_seed, run]))
    train_seed = run_train_seed(config.rng_seed, run)
    cache = {}
    best_so_far = None

    def evaluate(pop):
        pending = {}
        for ind in pop:
            if ind.fitness is not None:
                continue
            key = (ind.phenotype, train_seed)
            if key in cache:
                ind.fitness, ind.eval_meta = cache[key][0], dict(cache[key][1])
            else:
                pending.setdefault(key, []).append(ind)
        keys = list(pending)
        results = evaluator([(pending[k][0], train_seed) for k in keys])
        for k, (fit, meta) in zip(keys, results):
            cache[k] = (fit, meta)
            for ind in pending[k]:
                ind.fitness, ind.eval_meta = fit, dict(meta)
        return len(keys)

    def record(gen, pop, evals, seconds):
        nonlocal best_so_far
        order = sorted(range(len(pop)), key=lambda i: -pop[i].fitness)
        best = pop[order[0]]
        rec = GenerationRecord(run, gen, best.fitness, float(np.mean([p.fitness for p in pop])),
                               best.phenotype, evals, seconds)
        history.records.append(rec)
        if best_so_far is None or best.fitness > best_so_far.fitness:
            best_so_far = copy.deepcopy(best)
            history.archive.append(ArchiveRecord(run, gen, copy.deepcopy(best.genotype),
                                                 best.phenotype, best.fitness, dict(best.eval_meta)))
        if on_record is not None:
            on_record(rec)

    t0 = time.perf_counter()
    pop = [Individual.from_genotype(random_genotype(grammar, limits, rng), grammar, limits)
           for _ in range(config.population_size)]
    evals = evaluate(pop)
    record(0, pop, evals, time.perf_counter() - t0)

    for gen in range(1, config.generations + 1):
        t0 = time.perf_counter()
        ranked = sorted(pop, key=lambda ind: -ind.fitness)
        nxt = ranked[:config.elitism]
        while len(nxt) < config.population_size:
            parent = _tournament(pop, config.tournament_size, rng)
            child = mutate(parent.genotype, grammar, limits, config.mutation_rate, rng)
            nxt.append(Individual.from_genotype(child, grammar, limits))
        pop = nxt
        evals = evaluate(pop)
        record(gen, pop, evals, time.perf_counter() - t0)

    history.run_champions.append(best_so_far)
