"""Seeded sweep orchestration: strategies x budgets x repeats, metric rows,
cross-seed aggregates, and CSV/INI plumbing.

Every cell derives its seed by hashing (master seed, strategy label,
repeat), so reports are a pure function of the configuration and the
dataset bytes and extending the sweep grid never reshuffles existing
cells. Budgets within a repeat share the seed, which makes greedy
samplers exact prefixes of their larger-budget runs.
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import io
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .analysis import mae, maxae
from .dataset import Dataset, SynthConfig, load_dataset, minmax_normalize, remove_zero_variance, synth_lipschitz
from .errors import ConfigError, DataError, IllConditionedError
from .regression import (
    condition_number,
    gaussian_kernel_matrix,
    gamma_for_half_kernel,
    grid_search_cv,
    krr_fit,
    krr_predict,
)
from .rng import child_seed
from .selection import StrategySpec, select

METRICS = (
    "maxae",
    "mae",
    "cond_regularized",
    "cond_unregularized",
    "fill_distance",
    "sep_distance",
)

_PREDICTION_METRICS = ("maxae", "mae")
_CONDITIONING_METRICS = ("cond_regularized", "cond_unregularized")


@dataclass(frozen=True)
class ModelConfig:
    """KRR hyperparameters, either pinned or found by one up-front grid search.

    ``gamma=None`` means: use the width at which the median nearest-neighbour
    kernel entry is one half.
    """

    gamma: float | None = None
    lam: float = 0.0
    grid_search: bool = False
    folds: int = 5
    grid_repeats: int = 1

    def __post_init__(self):
        if self.gamma is not None and not (math.isfinite(self.gamma) and self.gamma > 0):
            raise ConfigError("[model] gamma must be positive or 'auto'")
        if not (math.isfinite(self.lam) and self.lam >= 0):
            raise ConfigError("[model] lambda must be non-negative")


@dataclass(frozen=True)
class ExperimentConfig:
    """Full sweep description; exactly one of dataset_path / synth is set."""

    strategies: tuple[StrategySpec, ...]
    budgets: tuple[float, ...]
    metrics: tuple[str, ...]
    master_seed: int
    repeats: int = 5
    dataset_path: str | None = None
    label_column: str | int | None = None
    normalize: bool = False
    synth: SynthConfig | None = None
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if (self.dataset_path is None) == (self.synth is None):
            raise ConfigError("[dataset] exactly one of path / synth must be given")
        if not self.strategies:
            raise ConfigError("[sweep] strategies must be non-empty")
        if not self.budgets:
            raise ConfigError("[sweep] budgets must be non-empty")
        for lo, hi in zip(self.budgets, self.budgets[1:]):
            if not lo < hi:
                raise ConfigError("[sweep] budgets must be strictly increasing")
        if not all(0.0 < b <= 1.0 for b in self.budgets):
            raise ConfigError("[sweep] budgets must be fractions in (0, 1]")
        if self.repeats < 1:
            raise ConfigError("[sweep] repeats must be >= 1")
        if not self.metrics:
            raise ConfigError("[sweep] metrics must be non-empty")
        unknown = [m for m in self.metrics if m not in METRICS]
        if unknown:
            raise ConfigError(f"[sweep] unknown metrics {unknown}; valid: {METRICS}")

    def canonical(self) -> str:
        payload = {
            "strategies": [s.label for s in self.strategies],
            "budgets": [repr(b) for b in self.budgets],
            "metrics": list(self.metrics),
            "master_seed": self.master_seed,
            "repeats": self.repeats,
            "dataset_path": self.dataset_path,
            "label_column": self.label_column,
            "normalize": self.normalize,
            "synth": None
            if self.synth is None
            else {
                "n": self.synth.n,
                "d": self.synth.d,
                "target_lipschitz": repr(self.synth.target_lipschitz),
                "noise_level": repr(self.synth.noise_level),
                "tail_fraction": repr(self.synth.tail_fraction),
                "seed": self.synth.seed,
            },
            "model": {
                "gamma": None if self.model.gamma is None else repr(self.model.gamma),
                "lambda": repr(self.model.lam),
                "grid_search": self.model.grid_search,
                "folds": self.model.folds,
                "grid_repeats": self.model.grid_repeats,
            },
        }
        return json.dumps(payload, sort_keys=True)

    def config_hash(self) -> str:
        return hashlib.blake2b(self.canonical().encode(), digest_size=8).hexdigest()


@dataclass(frozen=True)
class RunRow:
    """One (strategy, budget, repeat, metric) measurement; value is NaN for a
    failed cell."""

    strategy: str
    budget: float
    seed: int
    metric: str
    value: float


@dataclass(frozen=True)
class Aggregate:
    """Mean and population standard deviation across repeats, with the number
    of failed cells excluded from both."""

    strategy: str
    budget: float
    metric: str
    mean: float
    std: float
    count: int
    failures: int


@dataclass(frozen=True)
class ExperimentReport:
    rows: tuple[RunRow, ...]
    aggregates: tuple[Aggregate, ...]
    config_hash: str
    code_version: str


def resolve_budget(budget: float, n: int) -> int:
    """Turn a fraction of the pool into a subset size (half-up rounding)."""
    if budget * n < 2.0:
        raise DataError(f"budget {budget} on {n} rows yields fewer than 2 points")
    return max(2, int(math.floor(budget * n + 0.5)))


def pool_from_config(cfg: ExperimentConfig) -> Dataset:
    if cfg.synth is not None:
        return synth_lipschitz(cfg.synth)
    ds = load_dataset(cfg.dataset_path, has_labels=True, label_column=cfg.label_column)
    if cfg.normalize:
        ds, _ = remove_zero_variance(ds)
        ds, _ = minmax_normalize(ds)
    return ds


def _resolve_model(cfg: ExperimentConfig, pool: Dataset) -> tuple[float, float]:
    if cfg.model.grid_search:
        return grid_search_cv(
            pool,
            train_sizes=[resolve_budget(b, pool.n) for b in cfg.budgets],
            folds=cfg.model.folds,
            repeats=cfg.model.grid_repeats,
            seed=child_seed(cfg.master_seed, "grid_search"),
        )
    gamma = cfg.model.gamma if cfg.model.gamma is not None else gamma_for_half_kernel(pool.features)
    return float(gamma), float(cfg.model.lam)


def run_experiment(cfg: ExperimentConfig, pool: Dataset | None = None) -> ExperimentReport:
    """Execute the sweep: select, train, evaluate on all unselected rows.

    Kernel fits that fail (for example a singular kernel at lambda zero) are
    recorded as NaN cells for the prediction metrics and the sweep continues.
    """
    if pool is None:
        pool = pool_from_config(cfg)
    needs_labels = any(m in _PREDICTION_METRICS for m in cfg.metrics)
    if needs_labels:
        pool.require_labels()
    gamma, lam = _resolve_model(cfg, pool)

    rows: list[RunRow] = []
    for spec in cfg.strategies:
        label = spec.label
        for budget in cfg.budgets:
            size = resolve_budget(budget, pool.n)
            for rep in range(cfg.repeats):
                seed = child_seed(cfg.master_seed, label, rep)
                result = select(pool.features, spec, size, seed=seed)
                idx = result.indices
                mask = np.ones(pool.n, dtype=bool)
                mask[idx] = False
                if mask.sum() + idx.size != pool.n:
                    raise DataError("selection and evaluation sets overlap")

                values: dict[str, float] = {}
                if "fill_distance" in cfg.metrics:
                    values["fill_distance"] = float(result.fill_trace[-1])
                if "sep_distance" in cfg.metrics:
                    values["sep_distance"] = float(result.sep_trace[-1])
                if any(m in _CONDITIONING_METRICS for m in cfg.metrics):
                    K = gaussian_kernel_matrix(pool.features[idx], gamma)
                    if "cond_unregularized" in cfg.metrics:
                        cond_u, _, _ = condition_number(K)
                        values["cond_unregularized"] = math.nan if cond_u is None else cond_u
                    if "cond_regularized" in cfg.metrics:
                        cond_r, _, _ = condition_number(K + lam * np.eye(K.shape[0]))
                        values["cond_regularized"] = math.nan if cond_r is None else cond_r
                if needs_labels:
                    if mask.any():
                        try:
                            train = Dataset(pool.features[idx], labels=pool.labels[idx])
                            model = krr_fit(train, gamma, lam)
                            pred = krr_predict(model, pool.features[mask])
                            truth = pool.labels[mask]
                            values["maxae"] = maxae(truth, pred)
                            values["mae"] = mae(truth, pred)
                        except IllConditionedError:
                            values["maxae"] = math.nan
                            values["mae"] = math.nan
                    else:
                        values["maxae"] = math.nan
                        values["mae"] = math.nan
                for metric in cfg.metrics:
                    rows.append(RunRow(label, budget, seed, metric, values[metric]))

    return ExperimentReport(
        rows=tuple(rows),
        aggregates=aggregate_runs(rows),
        config_hash=cfg.config_hash(),
        code_version=__version__,
    )


def aggregate_runs(rows) -> tuple[Aggregate, ...]:
    """Group rows by (strategy, budget, metric) and compute the mean and
    population standard deviation over the non-failed values."""
    rows = list(rows)
    if not rows:
        raise DataError("no rows to aggregate")
    groups: dict[tuple[str, float, str], list[float]] = {}
    for row in rows:
        groups.setdefault((row.strategy, row.budget, row.metric), []).append(row.value)
    aggregates = []
    for (strategy, budget, metric), values in groups.items():
        arr = np.asarray(values)
        ok = arr[~np.isnan(arr)]
        failures = int(np.isnan(arr).sum())
        if ok.size:
            mean, std = float(ok.mean()), float(ok.std())
        else:
            mean, std = math.nan, math.nan
        aggregates.append(
            Aggregate(strategy, budget, metric, mean, std, int(ok.size), failures)
        )
    return tuple(aggregates)


# ---------------------------------------------------------------------------
# Config file: INI sections [dataset]/[synth], [sweep], [model]
# ---------------------------------------------------------------------------


def _parse_float(section: str, key: str, raw: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key} must be a number, got {raw!r}") from None


def _parse_int(section: str, key: str, raw: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key} must be an integer, got {raw!r}") from None


def _parse_bool(section: str, key: str, raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"[{section}] {key} must be a boolean, got {raw!r}")


def _parse_strategy(token: str) -> StrategySpec:
    token = token.strip()
    if ":" in token:
        kind, _, arg = token.partition(":")
        if kind != "fps_then_random":
            raise ConfigError(f"[sweep] strategy {token!r}: only fps_then_random takes an argument")
        return StrategySpec(kind=kind, switch_fraction=_parse_float("sweep", "strategies", arg))
    try:
        return StrategySpec(kind=token)
    except DataError as exc:
        raise ConfigError(f"[sweep] strategies: {exc}") from None


def load_experiment_config(path: str | os.PathLike) -> ExperimentConfig:
    """Parse an INI experiment configuration; errors name the bad field."""
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from None

    if not parser.has_section("sweep"):
        raise ConfigError("[sweep] section is required")
    sweep = parser["sweep"]
    for key in ("strategies", "budgets", "master_seed"):
        if key not in sweep:
            raise ConfigError(f"[sweep] {key} is required")

    strategies = tuple(_parse_strategy(t) for t in sweep["strategies"].split(",") if t.strip())
    budgets = tuple(
        _parse_float("sweep", "budgets", t) for t in sweep["budgets"].split(",") if t.strip()
    )
    metrics_raw = sweep.get("metrics", "maxae, mae")
    metrics = tuple(t.strip() for t in metrics_raw.split(",") if t.strip())
    repeats = _parse_int("sweep", "repeats", sweep.get("repeats", "5"))
    master_seed = _parse_int("sweep", "master_seed", sweep["master_seed"])

    dataset_path = None
    label_column: str | int | None = None
    normalize = False
    synth = None
    if parser.has_section("dataset") and parser["dataset"].get("path"):
        section = parser["dataset"]
        dataset_path = section["path"]
        raw_label = section.get("label_column")
        if raw_label is not None:
            label_column = int(raw_label) if raw_label.lstrip("+-").isdigit() else raw_label
        normalize = _parse_bool("dataset", "normalize", section.get("normalize", "false"))
    if parser.has_section("synth"):
        section = parser["synth"]
        try:
            synth = SynthConfig(
                n=_parse_int("synth", "n", section.get("n", "")),
                d=_parse_int("synth", "d", section.get("d", "")),
                target_lipschitz=_parse_float(
                    "synth", "target_lipschitz", section.get("target_lipschitz", "1.0")
                ),
                noise_level=_parse_float("synth", "noise_level", section.get("noise_level", "0.0")),
                tail_fraction=_parse_float(
                    "synth", "tail_fraction", section.get("tail_fraction", "0.0")
                ),
                seed=_parse_int("synth", "seed", section.get("seed", "0")),
            )
        except DataError as exc:
            raise ConfigError(f"[synth] {exc}") from None

    model = ModelConfig()
    if parser.has_section("model"):
        section = parser["model"]
        raw_gamma = section.get("gamma", "auto").strip()
        gamma = None if raw_gamma.lower() == "auto" else _parse_float("model", "gamma", raw_gamma)
        model = ModelConfig(
            gamma=gamma,
            lam=_parse_float("model", "lambda", section.get("lambda", "0.0")),
            grid_search=_parse_bool("model", "grid_search", section.get("grid_search", "false")),
            folds=_parse_int("model", "folds", section.get("folds", "5")),
            grid_repeats=_parse_int("model", "grid_repeats", section.get("grid_repeats", "1")),
        )

    return ExperimentConfig(
        strategies=strategies,
        budgets=budgets,
        metrics=metrics,
        master_seed=master_seed,
        repeats=repeats,
        dataset_path=dataset_path,
        label_column=label_column,
        normalize=normalize,
        synth=synth,
        model=model,
    )


# ---------------------------------------------------------------------------
# Report output
# ---------------------------------------------------------------------------


def _atomic_write(path: str | os.PathLike, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def rows_csv(report: ExperimentReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["strategy", "budget", "seed", "metric", "value"])
    for row in report.rows:
        writer.writerow([row.strategy, repr(row.budget), row.seed, row.metric, repr(row.value)])
    return buf.getvalue()


def aggregates_csv(report: ExperimentReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["strategy", "budget", "metric", "mean", "std"])
    for agg in report.aggregates:
        writer.writerow([agg.strategy, repr(agg.budget), agg.metric, repr(agg.mean), repr(agg.std)])
    return buf.getvalue()


def write_report(report: ExperimentReport, rows_path, aggregates_path) -> None:
    _atomic_write(rows_path, rows_csv(report))
    _atomic_write(aggregates_path, aggregates_csv(report))


def summary_table(report: ExperimentReport) -> str:
    """Human-readable aggregate table, one line per (strategy, budget, metric)."""
    lines = [
        f"{'strategy':<24} {'budget':>8} {'metric':>20} {'mean':>14} {'std':>12} {'fail':>5}"
    ]
    for agg in report.aggregates:
        lines.append(
            f"{agg.strategy:<24} {agg.budget:>8g} {agg.metric:>20} "
            f"{agg.mean:>14.6g} {agg.std:>12.6g} {agg.failures:>5d}"
        )
    lines.append(f"config {report.config_hash} / code {report.code_version}")
    return "\n".join(lines)
