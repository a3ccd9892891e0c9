"""Early-forecasting benchmark protocol.

A dataset under test is truncated to a short observed prefix; everything
after it stays hidden.  Supervised windows come only from the prefix, a
held-out share of series drives early stopping, and the hidden horizon
right after the prefix is scored with the scaled error metric (model error
over seasonal-naive error, averaged per series).  ``leave_one_out`` rotates
every dataset through the target role with the rest as auxiliaries.

Also provides deterministic synthetic dataset families used as fixtures
and in the acceptance suite.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .augment import AdversarialConfig
from .baselines import mean_forecast, naive_forecast
from .model import ModelConfig
from .seeding import derive_seed, rng_for
from .training import (
    STRATEGIES,
    Sample,
    TaskData,
    TrainConfig,
    forecast_target,
    model_config_for_strategy,
    train,
)
from .tsf import Dataset, DatasetMeta, Frequency, SeriesRecord, impute_missing, load_tsf

BASELINE_METHODS = ("mean", "naive")


def make_windows(
    values: np.ndarray,
    delta: int,
    horizon: int,
    stride: int = 1,
    dataset_id: str = "",
    start: int = 0,
) -> list:
    """Slice a series into supervised windows at the given stride.  The
    final admissible window is always emitted even when it falls off the
    stride grid; series shorter than one window yield an empty list."""
    values = np.asarray(values, dtype=np.float64)
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    last = len(values) - delta - horizon
    if last < 0:
        return []
    offsets = list(range(start, last + 1, stride))
    if offsets[-1] != last:
        offsets.append(last)
    return [
        Sample(
            x=values[o : o + delta],
            y=values[o + delta : o + delta + horizon],
            dataset_id=dataset_id,
            end=o + delta + horizon,
        )
        for o in offsets
    ]


def imputed_values(dataset: Dataset) -> dict:
    """Gap-filled value arrays keyed by series name, in file order."""
    out = {}
    for record in dataset.series:
        filled = impute_missing(record)
        out[record.name] = np.asarray(filled.values, dtype=np.float64)
    return out


@dataclass
class EtsfTask:
    """A dataset truncated for early forecasting: per-series observed
    prefixes plus the hidden horizon immediately after each one."""

    meta: DatasetMeta
    prefix_length: int
    observed: dict
    test_targets: dict
    dropped: int = 0

    @property
    def series_names(self) -> list:
        return list(self.observed)


def truncate_for_etsf(dataset: Dataset, prefix_length: int) -> EtsfTask:
    """Split every series into (observed prefix, hidden test horizon);
    series too short for both are dropped and counted."""
    meta = dataset.meta
    if prefix_length < meta.delta + meta.horizon:
        raise ValueError(
            f"prefix_length {prefix_length} leaves no training window "
            f"(need >= {meta.delta + meta.horizon})"
        )
    observed = {}
    test_targets = {}
    dropped = 0
    for name, values in imputed_values(dataset).items():
        if len(values) < prefix_length + meta.horizon:
            dropped += 1
            continue
        observed[name] = values[:prefix_length]
        test_targets[name] = values[prefix_length : prefix_length + meta.horizon]
    if not observed:
        raise ValueError(f"dataset {meta.id!r}: every series too short for prefix {prefix_length}")
    return EtsfTask(
        meta=meta,
        prefix_length=prefix_length,
        observed=observed,
        test_targets=test_targets,
        dropped=dropped,
    )


def split_series_ids(names: list, seed: int) -> tuple[list, list]:
    """Hold out max(1, round(10%)) of the names uniformly at random."""
    names = list(names)
    count = max(1, round(0.1 * len(names)))
    if count >= len(names):
        raise ValueError(f"cannot hold out {count} of {len(names)} series")
    rng = np.random.default_rng(seed)
    val_idx = set(rng.choice(len(names), size=count, replace=False).tolist())
    train_ids = [n for i, n in enumerate(names) if i not in val_idx]
    val_ids = [n for i, n in enumerate(names) if i in val_idx]
    return train_ids, val_ids


def split_validation(task: EtsfTask, seed: int) -> tuple[list, list]:
    return split_series_ids(task.series_names, seed)


def compute_mase(
    forecasts: dict, targets: dict, observed: dict, seasonality: int
) -> tuple[float, int]:
    """Mean over series of (forecast MAE / seasonal-naive MAE) on the test
    horizon.  Series whose naive error is exactly zero are excluded and
    counted; an all-zero denominator set is an error."""
    if set(forecasts) != set(targets):
        raise ValueError("forecast and target series sets differ")
    ratios = []
    excluded = 0
    for name, y in targets.items():
        y = np.asarray(y, dtype=np.float64)
        y_hat = np.asarray(forecasts[name], dtype=np.float64)
        if y_hat.shape != y.shape:
            raise ValueError(f"series {name!r}: forecast shape {y_hat.shape} vs target {y.shape}")
        naive = naive_forecast(observed[name], len(y), seasonality)
        denom = float(np.mean(np.abs(y - naive)))
        if denom == 0.0:
            excluded += 1
            continue
        ratios.append(float(np.mean(np.abs(y - y_hat))) / denom)
    if not ratios:
        raise ValueError("every series had a zero naive denominator")
    return float(np.mean(ratios)), excluded


# --- synthetic dataset families -------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a generated dataset.  ``sin`` shares one period across
    series with random phase/amplitude, ``trend`` draws per-series slopes,
    ``ar1`` is a first-order autoregression."""

    id: str
    family: str = "sin"
    series_count: int = 20
    length: int = 72
    delta: int = 12
    horizon: int = 6
    frequency: Frequency = Frequency.MONTHLY
    noise: float = 0.1
    period: float = 12.0
    amplitude_low: float = 0.5
    amplitude_high: float = 2.0
    level_low: float = -1.0
    level_high: float = 1.0
    trend_low: float = -0.1
    trend_high: float = 0.1
    ar_coeff: float = 0.8

    def __post_init__(self):
        if self.family not in ("sin", "trend", "ar1"):
            raise ValueError(f"unknown synthetic family {self.family!r}")
        if self.length < self.delta + self.horizon:
            raise ValueError("series length too short for one window")


def gen_synthetic(spec: SyntheticSpec, seed: int) -> Dataset:
    """Generate a dataset deterministically from (spec, seed)."""
    rng = rng_for(seed, "synthetic", spec.id)
    t = np.arange(spec.length, dtype=np.float64)
    records = []
    for idx in range(spec.series_count):
        level = rng.uniform(spec.level_low, spec.level_high)
        if spec.family == "sin":
            amplitude = rng.uniform(spec.amplitude_low, spec.amplitude_high)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            base = level + amplitude * np.sin(2.0 * np.pi * t / spec.period + phase)
        elif spec.family == "trend":
            slope = rng.uniform(spec.trend_low, spec.trend_high)
            base = level + slope * t
        else:  # ar1
            shocks = rng.normal(0.0, 1.0, size=spec.length)
            base = np.empty(spec.length)
            acc = 0.0
            for i in range(spec.length):
                acc = spec.ar_coeff * acc + shocks[i]
                base[i] = acc
            base = level + base
            records.append(SeriesRecord(name=f"T{idx + 1}", values=tuple(float(v) for v in base)))
            continue
        noisy = base + spec.noise * rng.normal(0.0, 1.0, size=spec.length)
        records.append(SeriesRecord(name=f"T{idx + 1}", values=tuple(float(v) for v in noisy)))
    meta = DatasetMeta(
        id=spec.id,
        name=spec.id,
        frequency=spec.frequency,
        series_count=spec.series_count,
        delta=spec.delta,
        horizon=spec.horizon,
    )
    return Dataset(meta=meta, series=tuple(records))


# --- benchmark manifest -----------------------------------------------------


class ManifestError(ValueError):
    pass


@dataclass
class BenchmarkManifest:
    """Frozen description of a benchmark run: datasets, methods, per-dataset
    protocol knobs and training hyperparameters.  Hash of the canonical
    JSON identifies the configuration in every report."""

    raw: dict
    base_dir: Path = field(default_factory=Path)

    def __post_init__(self):
        if "datasets" not in self.raw or not self.raw["datasets"]:
            raise ManifestError("manifest declares no datasets")
        if "methods" not in self.raw or not self.raw["methods"]:
            raise ManifestError("manifest declares no methods")
        known = set(BASELINE_METHODS) | set(STRATEGIES)
        for method in self.raw["methods"]:
            if method not in known:
                raise ManifestError(f"unknown method {method!r}")
        ids = [entry["id"] for entry in self.raw["datasets"]]
        if len(set(ids)) != len(ids):
            raise ManifestError("duplicate dataset ids in manifest")

    @property
    def seed(self) -> int:
        return int(self.raw.get("seed", 0))

    @property
    def methods(self) -> list:
        return list(self.raw["methods"])

    @property
    def dataset_ids(self) -> list:
        return [entry["id"] for entry in self.raw["datasets"]]

    def hash(self) -> str:
        canon = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    def load_datasets(self) -> list:
        datasets = []
        for entry in self.raw["datasets"]:
            if "synthetic" in entry:
                spec = SyntheticSpec(id=entry["id"], **{
                    k: (Frequency(v) if k == "frequency" else v)
                    for k, v in entry["synthetic"].items()
                })
                datasets.append(gen_synthetic(spec, self.seed))
            elif "path" in entry:
                datasets.append(
                    load_tsf(
                        self.base_dir / entry["path"],
                        dataset_id=entry["id"],
                        delta=entry.get("delta"),
                        horizon=entry.get("horizon"),
                    )
                )
            else:
                raise ManifestError(f"dataset {entry['id']!r} has neither path nor synthetic spec")
        return datasets

    def prefix_for(self, meta: DatasetMeta) -> int:
        default = meta.delta + 2 * meta.horizon
        return int(self.raw.get("prefix", {}).get(meta.id, default))

    def stride_for(self, dataset_id: str) -> int:
        strides = self.raw.get("stride", {})
        return int(strides.get(dataset_id, strides.get("default", 1)))

    def validation_ids(self, dataset_id: str) -> list | None:
        pinned = self.raw.get("validation", {}).get(dataset_id)
        return list(pinned) if pinned is not None else None

    def model_config(self) -> ModelConfig:
        return ModelConfig(**self.raw.get("model", {}))

    def train_config(self, method: str, seed: int) -> TrainConfig:
        merged = dict(self.raw.get("train", {}))
        merged.update(self.raw.get("train_overrides", {}).get(method, {}))
        if "adversarial" in merged:
            merged["adversarial"] = AdversarialConfig(**merged["adversarial"])
        return TrainConfig(**merged, strategy=method, seed=seed)

    def to_json(self) -> str:
        return json.dumps(self.raw, indent=2, sort_keys=True) + "\n"


def load_manifest(path: str | Path) -> BenchmarkManifest:
    path = Path(path)
    try:
        raw = json.loads(path.read_text("utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest {path} is not valid JSON: {exc}") from None
    return BenchmarkManifest(raw=raw, base_dir=path.parent)


# --- leave-one-out harness --------------------------------------------------


class LeakageMonitor:
    """Training-batch hook asserting that no sample of a limited dataset
    reaches past its observed prefix."""

    def __init__(self, limits: dict):
        self.limits = limits
        self.batches = 0
        self.violations = 0

    def __call__(self, batch):
        self.batches += 1
        for sample in batch:
            limit = self.limits.get(sample.dataset_id)
            if limit is not None and sample.end > limit:
                self.violations += 1


@dataclass(frozen=True)
class CellResult:
    dataset_id: str
    method: str
    mase: float | None
    excluded: int
    error: str | None = None
    batches: int = 0
    violations: int = 0


@dataclass
class EvalReport:
    dataset_ids: list
    methods: list
    dataset_info: dict
    cells: dict
    winners: dict
    wins: dict
    tie_datasets: list
    seed: int
    manifest_hash: str
    leakage_batches: int
    leakage_violations: int

    def cell(self, dataset_id: str, method: str) -> CellResult:
        return self.cells[(dataset_id, method)]

    def mase(self, dataset_id: str, method: str) -> float | None:
        return self.cells[(dataset_id, method)].mase


def build_target_task(
    datasets_by_id: dict, target_id: str, manifest: BenchmarkManifest
) -> tuple[EtsfTask, TaskData]:
    """Truncate the target, split off validation series, and window the
    remaining prefixes into the support set."""
    dataset = datasets_by_id[target_id]
    meta = dataset.meta
    task = truncate_for_etsf(dataset, manifest.prefix_for(meta))
    pinned = manifest.validation_ids(target_id)
    if pinned is not None:
        unknown = set(pinned) - set(task.series_names)
        if unknown:
            raise ManifestError(f"pinned validation ids not in dataset {target_id!r}: {sorted(unknown)}")
        val_ids = list(pinned)
        train_ids = [n for n in task.series_names if n not in set(pinned)]
    else:
        train_ids, val_ids = split_validation(task, derive_seed(manifest.seed, target_id, "validation"))
    samples = []
    for name in train_ids:
        samples.extend(
            make_windows(task.observed[name], meta.delta, meta.horizon, stride=1, dataset_id=target_id)
        )
    val_series = {name: task.observed[name] for name in val_ids}
    return task, TaskData(meta=meta, samples=samples, val_series=val_series)


def build_aux_task(dataset: Dataset, manifest: BenchmarkManifest) -> TaskData:
    """Window an auxiliary dataset's full series, excluding its validation share."""
    meta = dataset.meta
    values = imputed_values(dataset)
    pinned = manifest.validation_ids(meta.id)
    if pinned is not None:
        train_ids = [n for n in values if n not in set(pinned)]
    else:
        train_ids, _ = split_series_ids(list(values), derive_seed(manifest.seed, meta.id, "validation"))
    stride = manifest.stride_for(meta.id)
    samples = []
    for name in train_ids:
        samples.extend(make_windows(values[name], meta.delta, meta.horizon, stride, meta.id))
    return TaskData(meta=meta, samples=samples)


def run_cell(
    datasets_by_id: dict, target_id: str, method: str, manifest: BenchmarkManifest
) -> CellResult:
    """Evaluate one (target dataset, method) pair; errors are captured, not raised."""
    try:
        task, target_task = build_target_task(datasets_by_id, target_id, manifest)
        meta = task.meta
        monitor = LeakageMonitor({target_id: task.prefix_length})
        if method in BASELINE_METHODS:
            forecasts = {}
            for name, observed in task.observed.items():
                if method == "mean":
                    forecasts[name] = mean_forecast(observed, meta.horizon)
                else:
                    forecasts[name] = naive_forecast(observed, meta.horizon, meta.seasonality)
        else:
            aux_tasks = [
                build_aux_task(ds, manifest)
                for ds_id, ds in datasets_by_id.items()
                if ds_id != target_id
            ]
            aux_tasks = [t for t in aux_tasks if t.samples]
            metas = [t.meta for t in aux_tasks] + [meta]
            model_config = model_config_for_strategy(manifest.model_config(), method, metas)
            train_config = manifest.train_config(method, derive_seed(manifest.seed, target_id, method))
            state = train(aux_tasks, target_task, model_config, train_config, batch_hook=monitor)
            forecasts = {
                name: forecast_target(state, observed[-meta.delta :])
                for name, observed in task.observed.items()
            }
        mase, excluded = compute_mase(forecasts, task.test_targets, task.observed, meta.seasonality)
        if not np.isfinite(mase):
            raise ValueError(f"non-finite score for {method!r} on {target_id!r} (diverged training?)")
        return CellResult(
            dataset_id=target_id,
            method=method,
            mase=mase,
            excluded=excluded,
            batches=monitor.batches,
            violations=monitor.violations,
        )
    except Exception as exc:  # recorded per cell, never fatal to the run
        return CellResult(dataset_id=target_id, method=method, mase=None, excluded=0, error=str(exc))


def _run_cell_star(args):
    return run_cell(*args)


def leave_one_out(datasets: list, manifest: BenchmarkManifest, jobs: int = 1) -> EvalReport:
    """Rotate every dataset through the target role and score each method.
    Cells are independent; ``jobs > 1`` runs them in worker processes."""
    datasets_by_id = {ds.meta.id: ds for ds in datasets}
    order = [ds.meta.id for ds in datasets]
    work = [(datasets_by_id, target_id, method, manifest) for target_id in order for method in manifest.methods]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell_star, work))
    else:
        results = [run_cell(*item) for item in work]

    cells = {(r.dataset_id, r.method): r for r in results}
    winners = {}
    tie_datasets = []
    wins = {method: 0 for method in manifest.methods}
    for dataset_id in order:
        valid = [
            (method, cells[(dataset_id, method)].mase)
            for method in manifest.methods
            if cells[(dataset_id, method)].mase is not None
            and np.isfinite(cells[(dataset_id, method)].mase)
        ]
        if not valid:
            winners[dataset_id] = None
            continue
        best = min(m for _, m in valid)
        leaders = [method for method, m in valid if m == best]
        winners[dataset_id] = leaders[0]
        wins[leaders[0]] += 1
        if len(leaders) > 1:
            tie_datasets.append(dataset_id)

    dataset_info = {
        ds.meta.id: {
            "name": ds.meta.name,
            "series_count": ds.meta.series_count,
            "delta": ds.meta.delta,
            "horizon": ds.meta.horizon,
            "prefix_length": manifest.prefix_for(ds.meta),
        }
        for ds in datasets
    }
    return EvalReport(
        dataset_ids=order,
        methods=manifest.methods,
        dataset_info=dataset_info,
        cells=cells,
        winners=winners,
        wins=wins,
        tie_datasets=tie_datasets,
        seed=manifest.seed,
        manifest_hash=manifest.hash(),
        leakage_batches=sum(r.batches for r in results),
        leakage_violations=sum(r.violations for r in results),
    )
