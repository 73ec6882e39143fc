import pytest
from hypothesis import given
from hypothesis import strategies as st

from lrsge import scheduler as sch
from lrsge.fitness import TrainerSpec, TrainingConfig, brute_force_constants, evaluate_policy
from lrsge.harness import (SCENARIOS, ComparisonReport, Scenario, baseline_policy, compare_policies,
                           get_scenario, mean_std, run_experiment)
from lrsge.sge import EvolutionConfig

from test_scheduler import G, GRID

QUAD30 = TrainerSpec(spectrum=[30.0])


def test_scenarios():
    assert SCENARIOS["S1"] == Scenario("S1", 100, True)
    assert SCENARIOS["S2"] == Scenario("S2", 20, False)
    assert SCENARIOS["S3"] == Scenario("S3", 100, False)
    s1 = SCENARIOS["S1"].training_config(TrainingConfig(batch_size=7), train_seed=4)
    assert (s1.epochs, s1.early_stop.patience, s1.batch_size, s1.train_seed) == (100, 3, 7, 4)
    assert SCENARIOS["S3"].training_config().early_stop is None
    assert get_scenario({"id": "X", "epochs": 7, "early_stop": False}) == Scenario("X", 7, False)
    with pytest.raises(ValueError):
        get_scenario("S4")


def test_scenario_regimes_enforced():
    diverging = TrainerSpec(spectrum=[30.0])
    for sid in ("S2", "S3"):
        sc = SCENARIOS[sid]
        rep = evaluate_policy(sch.Const(0.1), diverging, None, sc.training_config())
        assert rep.epochs_trained == sc.epochs
    rep = evaluate_policy(sch.Const(0.1), diverging, None, SCENARIOS["S1"].training_config())
    assert rep.early_stopped and rep.epochs_trained < 100


def test_baseline_policy():
    step = 0.0999 / 99
    expected = 0.0001 + round((0.01 - 0.0001) / step) * step
    b = baseline_policy()
    assert b.lr == pytest.approx(expected, rel=1e-12) and b.lr == GRID[10]
    curve = sch.simulate_schedule(b, 100)
    assert sch.classify_shape(curve) == sch.CONSTANT


def test_s2_quadratic_champion_matches_oracle():
    oracle = brute_force_constants(QUAD30, None, SCENARIOS["S2"].training_config())
    hits = 0
    for seed in range(5):
        cfg = EvolutionConfig(runs=1, rng_seed=seed)
        _, champ = run_experiment("S2", cfg, QUAD30, None)
        hits += champ.fitness >= 0.99 * oracle.best_fitness
    assert hits >= 4


def test_generations_zero_champion_is_best_random():
    history, champ = run_experiment("S2", EvolutionConfig(runs=2, generations=0, rng_seed=5), QUAD30, None)
    assert champ.fitness == max(r.best_fitness for r in history.records)
    assert len(history.records) == 2


def test_champion_reevaluates_to_recorded_fitness():
    _, champ = run_experiment("S1", EvolutionConfig(runs=2, generations=5, rng_seed=1),
                              TrainerSpec(spectrum=[1.0, 30.0]), None)
    ast = sch.parse_phenotype(champ.phenotype, G)
    cfg = SCENARIOS["S1"].training_config(train_seed=champ.eval_meta["train_seed"])
    assert evaluate_policy(ast, TrainerSpec(spectrum=[1.0, 30.0]), None, cfg).fitness == champ.fitness
    assert champ.eval_meta["scenario"] == "S1"


def test_compare_single_cell_equals_report():
    mlp = TrainerSpec(kind="mlp")
    split = mlp.make_split()
    ast = baseline_policy()
    rep = compare_policies([("b", ast)], ["S2"], 1, mlp, split)
    single = evaluate_policy(ast, mlp, split, SCENARIOS["S2"].training_config(train_seed=0))
    assert rep.get("b", "S2", "test").mean == single.fitness
    assert rep.get("b", "S2", "validation").mean == single.best_validation_accuracy
    assert rep.get("b", "S2", "test").stddev == 0.0 and rep.get("b", "S2", "test").runs == 1


def test_compare_duplicate_policy_rows_identical():
    mlp = TrainerSpec(kind="mlp")
    split = mlp.make_split()
    ast = sch.If(sch.Condition("epoch", ">", 10), sch.Const(GRID[5]), sch.Const(GRID[50]))
    rep = compare_policies([("x", ast), ("y", ast)], ["S2"], 3, mlp, split)
    for split_name in ("validation", "test"):
        a, b = rep.get("x", "S2", split_name), rep.get("y", "S2", split_name)
        assert (a.mean, a.stddev, a.runs) == (b.mean, b.stddev, b.runs)


def test_champion_not_worse_than_baseline_on_quadratic_s3():
    _, champ = run_experiment("S3", EvolutionConfig(runs=2, generations=20, rng_seed=0), QUAD30, None)
    rep = compare_policies([("champ", champ.ast), ("baseline", baseline_policy())], ["S3"], 5, QUAD30, None)
    assert rep.get("champ", "S3", "test").mean >= rep.get("baseline", "S3", "test").mean


def test_per_policy_scenarios_and_text_table(tmp_path):
    rep = compare_policies([("A", sch.Const(0.1)), ("baseline", baseline_policy())],
                           {"A": ["S1", "S3"], "baseline": ["S1", "S2", "S3"]}, 2, QUAD30, None)
    table = rep.text_table()
    lines = table.splitlines()
    assert lines[0].split("|")[2].strip() == "A"
    s2_test = [ln for ln in lines if ln.startswith("S2") and "Test" in ln][0]
    assert "n/a" in s2_test
    assert lines[-1].startswith("Shape")
    p = tmp_path / "r.csv"
    rep.write_csv(p)
    text = p.read_text().splitlines()
    assert text[0] == "policy,scenario,split,mean,stddev,runs"
    assert len(text) == 1 + 2 * 5


def test_compare_rejects_zero_runs():
    with pytest.raises(ValueError):
        compare_policies([("b", baseline_policy())], ["S3"], 0, QUAD30, None)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=20), st.randoms())
def test_mean_std_permutation_invariant(values, rnd):
    shuffled = list(values)
    rnd.shuffle(shuffled)
    assert mean_std(values) == mean_std(shuffled)
    assert mean_std(values)[1] >= 0


def test_mean_std_values():
    assert mean_std([1.0, 3.0]) == (2.0, 1.0)
    assert ComparisonReport().get("a", "S1", "test") is None
