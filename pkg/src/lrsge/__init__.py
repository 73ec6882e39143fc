"""Grammar-guided evolution of learning-rate schedules."""

from .grammar import Grammar, default_autolr_grammar, evenly_spaced_grid, parse_grammar, render_grammar
from .scheduler import (Condition, Const, If, classify_shape, eval_scheduler, parse_phenotype,
                        render, simulate_schedule)
from .sge import EvolutionConfig, Individual, MappingLimits, evolve, map_genotype, mutate, random_genotype
from .fitness import (EarlyStop, FitnessReport, TrainerSpec, TrainingConfig, brute_force_constants,
                      early_stop_check, evaluate_policy)
from .data import SyntheticSpec, make_synthetic_dataset
from .harness import SCENARIOS, Scenario, baseline_policy, compare_policies, run_experiment

__version__ = "0.1.0"
