import math

import numpy as np
import pytest

from fillgap.dataset import Dataset, SynthConfig, save_dataset, synth_lipschitz
from fillgap.errors import ConfigError, DataError
from fillgap.experiment import (
    Aggregate,
    ExperimentConfig,
    ModelConfig,
    RunRow,
    aggregate_runs,
    aggregates_csv,
    load_experiment_config,
    resolve_budget,
    rows_csv,
    run_experiment,
    summary_table,
    write_report,
)
from fillgap.selection import StrategySpec, fps


def small_config(**overrides):
    defaults = dict(
        strategies=(StrategySpec(kind="fps"), StrategySpec(kind="random")),
        budgets=(0.05, 0.1),
        metrics=("maxae", "mae", "fill_distance"),
        master_seed=7,
        repeats=2,
        synth=SynthConfig(n=120, d=3, target_lipschitz=1.5, noise_level=0.05, seed=3),
        model=ModelConfig(gamma=None, lam=1e-8),
    )
    defaults.update(overrides)
    return ExperimentConfig(**defaults)


# ---------------------------------------------------------------------------
# Budget resolution
# ---------------------------------------------------------------------------


def test_resolve_budget_half_up():
    assert resolve_budget(0.02, 1000) == 20
    assert resolve_budget(0.025, 100) == 3  # 2.5 rounds half-up
    assert resolve_budget(1.0, 7) == 7


def test_resolve_budget_too_small():
    with pytest.raises(DataError, match="fewer than 2"):
        resolve_budget(0.001, 100)


# ---------------------------------------------------------------------------
# run_experiment
# ---------------------------------------------------------------------------


def test_row_count_single_cell():
    cfg = small_config(
        strategies=(StrategySpec(kind="fps"),),
        budgets=(0.1,),
        repeats=1,
        metrics=("maxae", "mae"),
    )
    report = run_experiment(cfg)
    assert len(report.rows) == 2  # one row per metric
    assert {r.metric for r in report.rows} == {"maxae", "mae"}


def test_report_counts_and_aggregate_structure():
    cfg = small_config()
    report = run_experiment(cfg)
    cells = len(cfg.strategies) * len(cfg.budgets) * cfg.repeats
    assert len(report.rows) == cells * len(cfg.metrics)
    assert len(report.aggregates) == len(cfg.strategies) * len(cfg.budgets) * len(cfg.metrics)
    for agg in report.aggregates:
        assert agg.count + agg.failures == cfg.repeats


def test_reports_are_bit_identical_across_runs():
    cfg = small_config()
    a = run_experiment(cfg)
    b = run_experiment(cfg)
    assert a == b
    assert rows_csv(a) == rows_csv(b)
    assert aggregates_csv(a) == aggregates_csv(b)


def test_fill_distance_non_increasing_across_budgets_for_fps():
    # budgets share their repeat's seed, so each fps run is a prefix of the
    # next and the fill column is monotone within every seed
    cfg = small_config(
        strategies=(StrategySpec(kind="fps"),),
        budgets=(0.05, 0.1, 0.2),
        metrics=("fill_distance",),
        repeats=3,
    )
    report = run_experiment(cfg)
    by_seed = {}
    for row in report.rows:
        by_seed.setdefault(row.seed, []).append((row.budget, row.value))
    assert len(by_seed) == 3
    for cells in by_seed.values():
        values = [v for _, v in sorted(cells)]
        assert values[0] >= values[1] >= values[2]


def test_training_and_evaluation_sets_disjoint():
    # reproduce a cell's selection and check the complement evaluation
    cfg = small_config(repeats=1)
    pool = synth_lipschitz(cfg.synth)
    from fillgap.rng import child_seed
    from fillgap.selection import select

    for spec in cfg.strategies:
        for budget in cfg.budgets:
            size = resolve_budget(budget, pool.n)
            seed = child_seed(cfg.master_seed, spec.label, 0)
            result = select(pool.features, spec, size, seed=seed)
            mask = np.ones(pool.n, dtype=bool)
            mask[result.indices] = False
            assert mask.sum() == pool.n - size


def test_failed_cells_recorded_not_fatal():
    # duplicated rows force a singular kernel at lambda zero whenever both
    # duplicates are selected; budget 1.0 selects everything, guaranteeing it
    feats = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 1.0], [2.0, 0.5]])
    pool = Dataset(feats, labels=np.array([1.0, 1.0, 2.0, 3.0]))
    cfg = ExperimentConfig(
        strategies=(StrategySpec(kind="random"),),
        budgets=(1.0,),
        metrics=("maxae", "mae", "sep_distance"),
        master_seed=1,
        repeats=2,
        dataset_path=None,
        synth=SynthConfig(n=4, d=2, seed=0),  # replaced by explicit pool below
        model=ModelConfig(gamma=1.0, lam=0.0),
    )
    report = run_experiment(cfg, pool=pool)
    for agg in report.aggregates:
        if agg.metric in ("maxae", "mae"):
            assert agg.failures == 2 and math.isnan(agg.mean)
        else:
            assert agg.failures == 0
            assert agg.mean == 0.0  # duplicates give zero separation


def test_metrics_without_labels_do_not_require_them():
    feats = np.random.default_rng(0).normal(size=(50, 2))
    pool = Dataset(feats)  # no labels
    cfg = ExperimentConfig(
        strategies=(StrategySpec(kind="fps"),),
        budgets=(0.2,),
        metrics=("fill_distance", "sep_distance", "cond_unregularized"),
        master_seed=3,
        repeats=2,
        synth=SynthConfig(n=4, d=2, seed=0),
        model=ModelConfig(gamma=0.5, lam=0.0),
    )
    report = run_experiment(cfg, pool=pool)
    assert all(not math.isnan(r.value) for r in report.rows)


def test_conditioning_metrics_behave():
    cfg = small_config(
        metrics=("cond_regularized", "cond_unregularized"),
        model=ModelConfig(gamma=None, lam=1e-4),
        repeats=2,
    )
    report = run_experiment(cfg)
    rows = {}
    for r in report.rows:
        rows.setdefault((r.strategy, r.budget, r.seed), {})[r.metric] = r.value
    for cell in rows.values():
        if not math.isnan(cell["cond_unregularized"]):
            assert cell["cond_regularized"] <= cell["cond_unregularized"] * (1 + 1e-9)


# ---------------------------------------------------------------------------
# aggregate_runs
# ---------------------------------------------------------------------------


def test_aggregate_singleton():
    aggs = aggregate_runs([RunRow("fps", 0.1, 1, "maxae", 3.0)])
    assert aggs[0].mean == 3.0 and aggs[0].std == 0.0 and aggs[0].count == 1


def test_aggregate_mean_and_population_std():
    rows = [RunRow("fps", 0.1, s, "maxae", v) for s, v in ((1, 1.0), (2, 3.0))]
    agg = aggregate_runs(rows)[0]
    assert agg.mean == 2.0 and agg.std == 1.0  # population std, not sample


def test_aggregate_with_failures():
    rows = [
        RunRow("fps", 0.1, 1, "maxae", 4.0),
        RunRow("fps", 0.1, 2, "maxae", math.nan),
        RunRow("fps", 0.1, 3, "maxae", 6.0),
    ]
    agg = aggregate_runs(rows)[0]
    assert agg.mean == 5.0 and agg.count == 2 and agg.failures == 1


def test_aggregate_empty_rejected():
    with pytest.raises(DataError):
        aggregate_runs([])


# ---------------------------------------------------------------------------
# Config file parsing
# ---------------------------------------------------------------------------


GOOD_CONFIG = """
[synth]
n = 120
d = 3
target_lipschitz = 1.5
noise_level = 0.05
tail_fraction = 0.0
seed = 3

[sweep]
strategies = fps, random, fps_then_random:0.02
budgets = 0.05, 0.1
repeats = 2
metrics = maxae, mae
master_seed = 7

[model]
gamma = auto
lambda = 1e-8
"""


def test_load_config_roundtrip(tmp_path):
    path = tmp_path / "exp.ini"
    path.write_text(GOOD_CONFIG)
    cfg = load_experiment_config(path)
    assert [s.label for s in cfg.strategies] == ["fps", "random", "fps_then_random:0.02"]
    assert cfg.budgets == (0.05, 0.1)
    assert cfg.repeats == 2
    assert cfg.model.lam == 1e-8 and cfg.model.gamma is None
    assert cfg.synth.n == 120
    report = run_experiment(cfg)
    assert len(report.aggregates) == 3 * 2 * 2


def test_load_config_with_dataset_path(tmp_path):
    ds = synth_lipschitz(SynthConfig(n=40, d=2, target_lipschitz=1.0, seed=1))
    csv_path = tmp_path / "pool.csv"
    save_dataset(ds, csv_path)
    path = tmp_path / "exp.ini"
    path.write_text(
        f"""
[dataset]
path = {csv_path}
label_column = y

[sweep]
strategies = fps
budgets = 0.2
master_seed = 1
metrics = maxae
repeats = 1

[model]
gamma = 1.0
lambda = 1e-9
"""
    )
    cfg = load_experiment_config(path)
    assert cfg.dataset_path == str(csv_path)
    report = run_experiment(cfg)
    assert len(report.rows) == 1


@pytest.mark.parametrize(
    "mutation,field",
    [
        ("strategies = warp", "strategies"),
        ("budgets = 0.5, 0.2", "budgets"),
        ("budgets = 0.0, 0.5", "budgets"),
        ("repeats = zero", "repeats"),
        ("metrics = maxae, bogus", "metrics"),
        ("master_seed = x", "master_seed"),
    ],
)
def test_bad_config_names_field(tmp_path, mutation, field):
    lines = []
    replaced = False
    for line in GOOD_CONFIG.splitlines():
        key = mutation.split("=")[0].strip()
        if line.strip().startswith(key + " ") or line.strip().startswith(key + "="):
            lines.append(mutation)
            replaced = True
        else:
            lines.append(line)
    assert replaced
    path = tmp_path / "exp.ini"
    path.write_text("\n".join(lines))
    with pytest.raises(ConfigError, match=field):
        load_experiment_config(path)


def test_config_requires_sweep_section(tmp_path):
    path = tmp_path / "exp.ini"
    path.write_text("[synth]\nn = 10\nd = 2\n")
    with pytest.raises(ConfigError, match="sweep"):
        load_experiment_config(path)


def test_config_requires_exactly_one_source(tmp_path):
    path = tmp_path / "exp.ini"
    path.write_text(
        """
[sweep]
strategies = fps
budgets = 0.2
master_seed = 1
"""
    )
    with pytest.raises(ConfigError, match="dataset"):
        load_experiment_config(path)


# ---------------------------------------------------------------------------
# CSV output
# ---------------------------------------------------------------------------


def test_csv_headers_and_shape(tmp_path):
    cfg = small_config(repeats=1)
    report = run_experiment(cfg)
    rows_path = tmp_path / "rows.csv"
    agg_path = tmp_path / "aggregates.csv"
    write_report(report, rows_path, agg_path)
    rows_lines = rows_path.read_text().strip().splitlines()
    agg_lines = agg_path.read_text().strip().splitlines()
    assert rows_lines[0] == "strategy,budget,seed,metric,value"
    assert agg_lines[0] == "strategy,budget,metric,mean,std"
    assert len(rows_lines) == 1 + len(report.rows)
    assert len(agg_lines) == 1 + len(report.aggregates)
    # values re-parse to the exact floats
    first = rows_lines[1].split(",")
    assert float(first[1]) == report.rows[0].budget
    assert float(first[4]) == report.rows[0].value


def test_summary_table_mentions_all_aggregates():
    cfg = small_config(repeats=1)
    report = run_experiment(cfg)
    table = summary_table(report)
    for agg in report.aggregates:
        assert agg.metric in table
    assert report.config_hash in table


def test_config_validation_direct():
    with pytest.raises(ConfigError, match="budgets"):
        small_config(budgets=(0.5, 0.2))
    with pytest.raises(ConfigError, match="repeats"):
        small_config(repeats=0)
    with pytest.raises(ConfigError, match="metrics"):
        small_config(metrics=("nope",))
    with pytest.raises(ConfigError, match="dataset"):
        small_config(synth=None)
