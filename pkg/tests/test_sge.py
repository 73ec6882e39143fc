import copy

import numpy as np
import pytest
from hypothesis import given, settings

from lrsge import scheduler as sch
from lrsge.grammar import parse_grammar
from lrsge.sge import (EvolutionConfig, Individual, MappingError, MappingLimits, derive, encode_ast, evolve,
                       map_genotype, mutate, random_genotype)

from test_scheduler import GRID, asts


def test_constant_genotype(grammar, limits):
    assert map_genotype(grammar, limits, {"expr": [1], "lr_const": [0]}) == ("0.0001", sch.Const(0.0001))


def test_step_genotype(grammar, limits):
    genes = {"expr": [0, 1, 1], "logic_expr": [1], "logic_op": [0], "ep_const": [9], "lr_const": [99, 49]}
    text, ast = map_genotype(grammar, limits, genes)
    assert text == "if_func(epoch < 10, 0.1, 0.04954545454545455)"
    assert ast == sch.If(sch.Condition("epoch", "<", 10), sch.Const(0.1), sch.Const(GRID[49]))


def test_depth_bound_restricts_with_modulo(grammar):
    # at depth 0 with bound 0, gene 0 (if_func) is read modulo the single constant option
    assert map_genotype(grammar, MappingLimits(0), {"expr": [0], "lr_const": [3]})[0] == sch.render(sch.Const(GRID[3]))
    # bound 1: children of the root are forced to constants
    genes = {"expr": [0, 0, 0], "logic_expr": [1], "logic_op": [0], "ep_const": [0], "lr_const": [1, 2]}
    text, ast = map_genotype(grammar, MappingLimits(1), genes)
    assert sch.depth(ast) == 2


@pytest.mark.parametrize("genes", [
    {"expr": [2], "lr_const": [0]},
    {"expr": [-1], "lr_const": [0]},
    {"expr": [1], "lr_const": [100]},
    {"expr": [1]},
    {"expr": [0, 1], "logic_expr": [1], "logic_op": [0], "ep_const": [9], "lr_const": [99]},
])
def test_malformed_genotypes(grammar, limits, genes):
    with pytest.raises(MappingError):
        map_genotype(grammar, limits, genes)


def test_depth_zero_gives_constants(grammar):
    rng = np.random.default_rng(0)
    for _ in range(200):
        text, ast = map_genotype(grammar, MappingLimits(0), random_genotype(grammar, MappingLimits(0), rng))
        assert isinstance(ast, sch.Const) and text in grammar.terminal_values("lr_const")


def test_random_genotypes_map_deterministically(grammar, limits):
    rng = np.random.default_rng(1)
    for _ in range(500):
        g = random_genotype(grammar, limits, rng)
        first = map_genotype(grammar, limits, g)
        assert map_genotype(grammar, limits, copy.deepcopy(g)) == first
        assert sch.depth(first[1]) <= limits.max_recursion_depth + 1
        _, active = derive(grammar, limits, g)
        assert active == g  # random genotypes hold exactly the active genes


def test_gene_counts_within_bound(grammar, limits):
    bound = limits.max_gene_counts(grammar)
    assert bound == {"expr": 31, "logic_expr": 15, "logic_op": 15, "lr_const": 31, "ep_const": 15}
    rng = np.random.default_rng(2)
    for _ in range(500):
        g = random_genotype(grammar, limits, rng)
        assert all(len(v) <= bound[k] for k, v in g.items())


def test_root_choice_uniform(grammar, limits):
    rng = np.random.default_rng(3)
    n = 10_000
    ifs = sum(random_genotype(grammar, limits, rng)["expr"][0] == 0 for _ in range(n))
    sigma = (n * 0.25) ** 0.5
    assert abs(ifs - n / 2) <= 3 * sigma
    chi2 = ((ifs - n / 2) ** 2 + (n - ifs - n / 2) ** 2) / (n / 2)
    assert chi2 < 9.0  # 3 sigma for one degree of freedom


@settings(max_examples=300)
@given(asts())
def test_surjective_onto_bounded_trees(ast):
    limits = MappingLimits(4)
    from lrsge.grammar import default_autolr_grammar
    g = default_autolr_grammar()
    if sch.depth(ast) > limits.max_recursion_depth + 1:
        with pytest.raises(MappingError):
            encode_ast(ast, g, limits)
        return
    genes = encode_ast(ast, g, limits)
    assert map_genotype(g, limits, genes) == (sch.render(ast), ast)


def test_mutation_rate_zero_is_identity(grammar, limits):
    rng = np.random.default_rng(4)
    for _ in range(200):
        g = random_genotype(grammar, limits, rng)
        assert mutate(g, grammar, limits, 0.0, rng) == g


def test_mutation_rate_one_flips_constant(grammar, limits):
    rng = np.random.default_rng(5)
    child = mutate({"expr": [1], "lr_const": [7]}, grammar, limits, 1.0, rng)
    assert child["expr"][0] == 0
    _, ast = map_genotype(grammar, limits, child)
    assert isinstance(ast, sch.If)


def test_mutation_changes_differ_from_current(grammar, limits):
    rng = np.random.default_rng(6)
    for _ in range(200):
        g = {"expr": [1], "lr_const": [int(rng.integers(100))]}
        child = mutate(g, grammar, MappingLimits(0), 1.0, rng)
        assert child["lr_const"][0] != g["lr_const"][0]


def test_mutants_are_well_formed(grammar, limits):
    rng = np.random.default_rng(8)
    g = random_genotype(grammar, limits, rng)
    for _ in range(2000):
        g = mutate(g, grammar, limits, 0.3, rng)
        map_genotype(grammar, limits, g)
        assert derive(grammar, limits, g)[1] == g  # inactive genes dropped


def test_mutation_decision_frequency(grammar, limits):
    rng = np.random.default_rng(9)
    changes = []
    for _ in range(2000):
        mutate(random_genotype(grammar, limits, rng), grammar, limits, 0.15, rng, changes=changes)
    freq = sum(m for *_, m in changes) / len(changes)
    assert abs(freq - 0.15) < 0.01


def test_mutate_rejects_bad_rate(grammar, limits):
    with pytest.raises(ValueError):
        mutate({"expr": [1], "lr_const": [0]}, grammar, limits, 1.5, np.random.default_rng())


def test_generic_grammar_mapping():
    g = parse_grammar("<e> ::= ( <e> + <e> ) | x | y")
    limits = MappingLimits(2)
    rng = np.random.default_rng(0)
    for _ in range(200):
        text, _ = derive(g, limits, random_genotype(g, limits, rng))
        assert text.count("(") <= 3


# --- evolution ----------------------------------------------------------------

def lr_fitness(ind, seed):
    # deterministic toy objective: prefer learning rates near 0.05 at epoch 1..20
    lrs = [lr for _, lr in sch.simulate_schedule(ind.ast, 20)]
    return 1.0 / (1.0 + sum((lr - 0.05) ** 2 for lr in lrs))


def test_generations_zero(grammar):
    h = evolve(EvolutionConfig(generations=0, runs=2, rng_seed=1), grammar, None, lr_fitness)
    assert [(r.run, r.generation) for r in h.records] == [(0, 0), (1, 0)]
    assert h.records[0].evals <= 5


def test_elitism_monotone_and_deterministic(grammar):
    cfg = EvolutionConfig(generations=30, runs=3, rng_seed=11)
    a = evolve(cfg, grammar, None, lr_fitness)
    b = evolve(cfg, grammar, None, lr_fitness)
    strip = lambda h: [(r.run, r.generation, r.best_fitness, r.mean_fitness, r.best_phenotype, r.evals)
                       for r in h.records]
    assert strip(a) == strip(b)
    for run in range(3):
        best = [r.best_fitness for r in a.records if r.run == run]
        assert all(x <= y for x, y in zip(best, best[1:]))
    assert [x.to_dict() for x in a.archive] == [x.to_dict() for x in b.archive]


def test_full_elitism_keeps_population(grammar):
    cfg = EvolutionConfig(generations=5, runs=1, elitism=5, rng_seed=2)
    h = evolve(cfg, grammar, None, lr_fitness)
    assert len({(r.best_fitness, r.mean_fitness, r.best_phenotype) for r in h.records}) == 1
    assert all(r.evals == 0 for r in h.records[1:])


def test_failures_become_zero_fitness(grammar):
    def flaky(ind, seed):
        if isinstance(ind.ast, sch.If):
            raise RuntimeError("boom")
        return 0.5

    h = evolve(EvolutionConfig(generations=3, runs=1, rng_seed=0), grammar, None, flaky)
    assert h.champion.fitness == 0.5


def test_fitness_cache_and_train_seed(grammar):
    seen = []

    def record(ind, seed):
        seen.append((ind.phenotype, seed))
        return lr_fitness(ind, seed)

    h = evolve(EvolutionConfig(generations=20, runs=2, rng_seed=3), grammar, None, record)
    assert len(seen) == len(set(seen)) == sum(r.evals for r in h.records)
    assert len({s for _, s in seen}) == 2  # one training seed per run


def test_parallel_matches_sequential(grammar):
    cfg = EvolutionConfig(generations=5, runs=2, rng_seed=4)
    a = evolve(cfg, grammar, None, lr_fitness, jobs=1)
    b = evolve(cfg, grammar, None, lr_fitness, jobs=3)
    assert [x.to_dict() for x in a.archive] == [x.to_dict() for x in b.archive]
    assert [(r.best_fitness, r.mean_fitness, r.evals) for r in a.records] == \
        [(r.best_fitness, r.mean_fitness, r.evals) for r in b.records]


@pytest.mark.parametrize("kwargs", [
    {"mutation_rate": 1.5}, {"elitism": 0}, {"elitism": 6}, {"population_size": 0}, {"runs": 0},
    {"generations": -1},
])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        EvolutionConfig(**kwargs)


def test_individual_from_genotype(grammar, limits):
    ind = Individual.from_genotype({"expr": [1], "lr_const": [99]}, grammar, limits)
    assert ind.phenotype == "0.1" and ind.fitness is None
