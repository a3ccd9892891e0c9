"""Training strategies for data-scarce target forecasting.

The flagship strategy interleaves, per outer iteration, one inner epoch of
SGD on a uniformly drawn auxiliary dataset, a first-order meta step that
moves the shared parameters toward the inner result, and one adaptation
epoch on the target support with adversarially augmented samples.  The
ablations reduce or rearrange those pieces:

* ``m_reptile``  same loop without adversarial augmentation
* ``s_reptile``  ``m_reptile`` with a single shared head across datasets
* ``joint``      plain SGD over all datasets pooled, shared head
* ``mtl``        pooled SGD on a weighted per-task objective, multi head
* ``single_task`` / ``single_task_ad``  anchored linear model trained on
  the target support only, without / with augmentation

Every strategy is a deterministic function of (data, config, seed).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .augment import AdversarialConfig, adversarial_loss, fgsm_perturb
from .baselines import naive_forecast
from .model import (
    MULTI_HEAD,
    SHARED_HEAD,
    SHARED_KEY,
    ConvLayerParams,
    LinearParams,
    ModelConfig,
    ModelParams,
    backward,
    forward,
    init_head,
    init_params,
)
from .ops import mae_grad, mae_loss
from .seeding import rng_for
from .tsf import DatasetMeta

FEML = "feml"
M_REPTILE = "m_reptile"
S_REPTILE = "s_reptile"
JOINT = "joint"
MTL = "mtl"
SINGLE_TASK = "single_task"
SINGLE_TASK_AD = "single_task_ad"

STRATEGIES = (FEML, M_REPTILE, S_REPTILE, JOINT, MTL, SINGLE_TASK, SINGLE_TASK_AD)
REPTILE_STRATEGIES = (FEML, M_REPTILE, S_REPTILE)
SHARED_HEAD_STRATEGIES = (S_REPTILE, JOINT)

_NO_ADVERSARIAL = AdversarialConfig(epsilon=0.0, weight=0.0)


@dataclass(frozen=True)
class Sample:
    """One supervised window: ``end`` is the index one past the last target
    element in source-series coordinates, kept for leakage auditing."""

    x: np.ndarray
    y: np.ndarray
    dataset_id: str
    end: int


@dataclass
class TaskData:
    """Training-ready view of one dataset: supervised windows plus, for the
    target, the held-out series used to score validation forecasts."""

    meta: DatasetMeta
    samples: list
    val_series: dict = field(default_factory=dict)


@dataclass(frozen=True)
class TrainConfig:
    mu_in: float = 0.05
    mu_out: float = 0.5
    mu_ad: float = 0.05
    adversarial: AdversarialConfig = AdversarialConfig()
    strategy: str = FEML
    max_outer_iters: int = 500
    patience: int = 25
    batch_size: int = 1
    seed: int = 0
    mtl_target_weight: float = 0.5
    persist_target_head: bool = False

    def __post_init__(self):
        for name in ("mu_in", "mu_out", "mu_ad"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.max_outer_iters < 0:
            raise ValueError("max_outer_iters must be >= 0")
        if self.patience < 0:
            raise ValueError("patience must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not (0.0 < self.mtl_target_weight <= 1.0):
            raise ValueError("mtl_target_weight must be in (0, 1]")


@dataclass(frozen=True)
class TrainRecord:
    iteration: int
    task_id: str
    inner_loss: float
    val_score: float


@dataclass
class TrainState:
    strategy: str
    model_config: ModelConfig
    train_config: TrainConfig
    target_meta: DatasetMeta
    params: ModelParams
    adapted_encoder: list | None
    adapted_head: LinearParams | None
    outer_iters: int
    best_val: float
    history: list
    sampled_task_ids: list
    rng_state: dict


def _clone_encoder(encoder: list) -> list:
    return [layer.copy() for layer in encoder]


def _check_same_shape(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def _interpolate(p: np.ndarray, p_in: np.ndarray, mu: float) -> np.ndarray:
    return p - mu * (p - p_in)


def meta_update(
    encoder: list,
    encoder_in: list,
    head: LinearParams,
    head_in: LinearParams,
    mu_out: float,
) -> tuple[list, LinearParams]:
    """Move the meta parameters toward the inner-loop result by ``mu_out``
    times their difference; only the sampled task's head participates."""
    if len(encoder) != len(encoder_in):
        raise ValueError(f"encoder depth mismatch: {len(encoder)} vs {len(encoder_in)}")
    new_encoder = []
    for layer, layer_in in zip(encoder, encoder_in):
        _check_same_shape(layer.weights, layer_in.weights, "encoder weights")
        new_encoder.append(
            ConvLayerParams(
                _interpolate(layer.weights, layer_in.weights, mu_out),
                _interpolate(layer.bias, layer_in.bias, mu_out),
            )
        )
    _check_same_shape(head.weights, head_in.weights, "head weights")
    new_head = LinearParams(
        _interpolate(head.weights, head_in.weights, mu_out),
        _interpolate(head.bias, head_in.bias, mu_out),
    )
    return new_encoder, new_head


def _train_batch(
    params: ModelParams,
    metas: dict,
    batch: list,
    lr: float,
    adversarial: AdversarialConfig,
    target_id: str | None,
    sample_scale: dict | None = None,
    batch_hook=None,
) -> float:
    """One SGD step on the mean loss of ``batch``; mutates ``params``.

    Adversarial augmentation applies only to samples of ``target_id``: the
    clean input gradient drives the perturbation and the perturbed sample
    contributes a weighted second loss term (the perturbed input itself is
    treated as a constant).  Returns the batch's summed loss.
    """
    if batch_hook is not None:
        batch_hook(batch)
    enc_acc = [
        ConvLayerParams(np.zeros_like(l.weights), np.zeros_like(l.bias)) for l in params.encoder
    ]
    head_acc: dict = {}
    total_loss = 0.0
    for sample in batch:
        meta = metas[sample.dataset_id]
        scale = 1.0 if sample_scale is None else sample_scale[sample.dataset_id]
        y_hat, cache = forward(params, sample.x, meta)
        grad_enc, grad_head, grad_x = backward(params, cache, mae_grad(y_hat, sample.y))
        loss = mae_loss(y_hat, sample.y)

        if adversarial.active and sample.dataset_id == target_id:
            x_adv = fgsm_perturb(sample.x, grad_x, adversarial.epsilon)
            y_adv_hat, adv_cache = forward(params, x_adv, meta)
            adv_grad_y = adversarial.weight * mae_grad(y_adv_hat, sample.y)
            adv_grad_enc, adv_grad_head, _ = backward(params, adv_cache, adv_grad_y)
            for g, ga in zip(grad_enc, adv_grad_enc):
                g.weights += ga.weights
                g.bias += ga.bias
            grad_head.weights += adv_grad_head.weights
            grad_head.bias += adv_grad_head.bias
            loss = adversarial_loss(sample.y, y_hat, y_adv_hat, adversarial.weight)

        for acc, g in zip(enc_acc, grad_enc):
            acc.weights += scale * g.weights
            acc.bias += scale * g.bias
        key = params.head_key(sample.dataset_id)
        if key not in head_acc:
            head = params.heads[key]
            head_acc[key] = LinearParams(np.zeros_like(head.weights), np.zeros_like(head.bias))
        head_acc[key].weights += scale * grad_head.weights
        head_acc[key].bias += scale * grad_head.bias
        total_loss += loss

    step = lr / len(batch)
    for layer, acc in zip(params.encoder, enc_acc):
        layer.weights -= step * acc.weights
        layer.bias -= step * acc.bias
    for key, acc in head_acc.items():
        params.heads[key].weights -= step * acc.weights
        params.heads[key].bias -= step * acc.bias
    return total_loss


def _epoch(
    params: ModelParams,
    metas: dict,
    samples: list,
    lr: float,
    batch_size: int,
    rng: np.random.Generator,
    adversarial: AdversarialConfig = _NO_ADVERSARIAL,
    target_id: str | None = None,
    sample_scale: dict | None = None,
    batch_hook=None,
) -> float:
    """One shuffled pass over ``samples`` in batches; returns the mean loss."""
    order = rng.permutation(len(samples))
    total = 0.0
    for lo in range(0, len(order), batch_size):
        batch = [samples[i] for i in order[lo : lo + batch_size]]
        total += _train_batch(
            params, metas, batch, lr, adversarial, target_id, sample_scale, batch_hook
        )
    return total / len(samples)


def inner_epoch(
    encoder_in: list,
    head_in: LinearParams,
    task: TaskData,
    mu_in: float,
    batch_size: int,
    rng: np.random.Generator,
    model_config: ModelConfig,
    batch_hook=None,
) -> float:
    """One shuffled epoch of SGD on ``task``; updates ``encoder_in`` and
    ``head_in`` in place and returns the mean loss."""
    if not task.samples:
        raise ValueError(f"dataset {task.meta.id!r} has no training samples")
    params = ModelParams(config=model_config, encoder=encoder_in, heads={})
    params.heads[params.head_key(task.meta.id)] = head_in
    return _epoch(
        params,
        {task.meta.id: task.meta},
        task.samples,
        mu_in,
        batch_size,
        rng,
        batch_hook=batch_hook,
    )


def adapt_target(
    encoder: list,
    target: TaskData,
    model_config: ModelConfig,
    config: TrainConfig,
    rng: np.random.Generator,
    head_init: LinearParams | None = None,
    batch_hook=None,
) -> tuple[list, LinearParams, float]:
    """Adapt a copy of the shared encoder to the target for one epoch.

    The meta encoder is never mutated.  Unless ``head_init`` is given a
    fresh target head is drawn (seed derived from ``rng``).  Samples are
    visited one at a time; with augmentation active each sample also
    contributes its perturbed twin to the update.
    """
    if not target.samples:
        raise ValueError(f"target {target.meta.id!r} has no support samples")
    for sample in target.samples:
        if sample.dataset_id != target.meta.id:
            raise ValueError(
                f"foreign sample from {sample.dataset_id!r} in target support; "
                "only target samples may be perturbed"
            )
    encoder_ad = _clone_encoder(encoder)
    if head_init is not None:
        head = head_init.copy()
    else:
        head = init_head(model_config, target.meta, int(rng.integers(2**63)))
    params = ModelParams(config=model_config, encoder=encoder_ad, heads={})
    params.heads[params.head_key(target.meta.id)] = head
    loss = _epoch(
        params,
        {target.meta.id: target.meta},
        target.samples,
        config.mu_ad,
        1,
        rng,
        adversarial=config.adversarial,
        target_id=target.meta.id,
        batch_hook=batch_hook,
    )
    return encoder_ad, head, loss


def validation_score(
    model_config: ModelConfig,
    encoder: list,
    head: LinearParams,
    target: TaskData,
) -> float:
    """Scaled error on the target's held-out series: for each one, forecast
    the final horizon of its observed prefix and normalize by the seasonal
    naive error.  Falls back to plain absolute error when every naive
    denominator vanishes, and to +inf with no usable series at all."""
    meta = target.meta
    delta, horizon = meta.delta, meta.horizon
    params = ModelParams(config=model_config, encoder=encoder, heads={})
    params.heads[params.head_key(meta.id)] = head
    ratios = []
    maes = []
    for observed in target.val_series.values():
        if len(observed) < delta + horizon:
            continue
        x = observed[-(delta + horizon) : -horizon]
        y = observed[-horizon:]
        y_hat, _ = forward(params, x, meta)
        mae = float(np.mean(np.abs(y_hat - y)))
        naive = naive_forecast(observed[:-horizon], horizon, meta.seasonality)
        naive_mae = float(np.mean(np.abs(naive - y)))
        maes.append(mae)
        if naive_mae > 0:
            ratios.append(mae / naive_mae)
    if ratios:
        return float(np.mean(ratios))
    if maes:
        return float(np.mean(maes))
    return float("inf")


class _BestTracker:
    """Keeps the best validation snapshot and counts stale iterations."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best_val = float("inf")
        self.snapshot = None
        self.stale = 0

    def update(self, val: float, encoder: list, head: LinearParams) -> bool:
        """Record; returns True when patience is exhausted."""
        if self.snapshot is None or val < self.best_val:
            self.best_val = val
            self.snapshot = (_clone_encoder(encoder), head.copy())
            self.stale = 0
            return False
        self.stale += 1
        return self.stale > self.patience


def _validate_setup(aux: list, target: TaskData, model_config: ModelConfig, config: TrainConfig):
    strategy = config.strategy
    if strategy in REPTILE_STRATEGIES and not aux:
        raise ValueError(f"strategy {strategy!r} needs at least one auxiliary dataset")
    if not target.samples:
        raise ValueError("target support is empty")
    needs_shared = strategy in SHARED_HEAD_STRATEGIES
    if needs_shared and model_config.head_mode != SHARED_HEAD:
        raise ValueError(f"strategy {strategy!r} requires a shared_head model")
    if not needs_shared and model_config.head_mode != MULTI_HEAD:
        raise ValueError(f"strategy {strategy!r} requires a multi_head model")
    if strategy in (SINGLE_TASK, SINGLE_TASK_AD) and model_config.layers != 0:
        raise ValueError(f"strategy {strategy!r} requires layers == 0 (encoder bypass)")
    ids = [t.meta.id for t in aux] + [target.meta.id]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate dataset ids across tasks")


def model_config_for_strategy(
    base: ModelConfig, strategy: str, metas: list
) -> ModelConfig:
    """Derive the per-strategy architecture from a base multi-head config:
    shared-head strategies get a head sized for the largest window/horizon,
    single-task strategies drop the encoder."""
    if strategy in SHARED_HEAD_STRATEGIES:
        return replace(
            base,
            head_mode=SHARED_HEAD,
            max_delta=max(m.delta for m in metas),
            max_horizon=max(m.horizon for m in metas),
        )
    if strategy in (SINGLE_TASK, SINGLE_TASK_AD):
        return replace(base, layers=0, head_mode=MULTI_HEAD, max_delta=None, max_horizon=None)
    return replace(base, head_mode=MULTI_HEAD, max_delta=None, max_horizon=None)


def train(
    aux: list,
    target: TaskData,
    model_config: ModelConfig,
    config: TrainConfig,
    batch_hook=None,
) -> TrainState:
    """Run the configured strategy to completion and return the final state
    (meta parameters, best adapted target model, and per-iteration log)."""
    _validate_setup(aux, target, model_config, config)
    if config.strategy in REPTILE_STRATEGIES:
        return _train_reptile(aux, target, model_config, config, batch_hook)
    if config.strategy in (JOINT, MTL):
        return _train_pooled(aux, target, model_config, config, batch_hook)
    return _train_single(target, model_config, config, batch_hook)


def _finish(
    strategy, model_config, config, target, params, tracker, iters, history, sampled, rng
) -> TrainState:
    adapted_encoder, adapted_head = (None, None) if tracker.snapshot is None else tracker.snapshot
    return TrainState(
        strategy=strategy,
        model_config=model_config,
        train_config=config,
        target_meta=target.meta,
        params=params,
        adapted_encoder=adapted_encoder,
        adapted_head=adapted_head,
        outer_iters=iters,
        best_val=tracker.best_val,
        history=history,
        sampled_task_ids=sampled,
        rng_state=rng.bit_generator.state,
    )


def _train_reptile(aux, target, model_config, config, batch_hook) -> TrainState:
    shared = model_config.head_mode == SHARED_HEAD
    metas = [t.meta for t in aux] + ([target.meta] if shared else [])
    params = init_params(model_config, metas, config.seed)
    rng = rng_for(config.seed, "train", config.strategy)
    adapt_config = config if config.strategy == FEML else replace(config, adversarial=_NO_ADVERSARIAL)

    tracker = _BestTracker(config.patience)
    history: list = []
    sampled: list = []
    prev_head: LinearParams | None = None
    iters = 0
    for iteration in range(config.max_outer_iters):
        task = aux[int(rng.integers(len(aux)))]
        sampled.append(task.meta.id)
        head_key = params.head_key(task.meta.id)
        encoder_in = _clone_encoder(params.encoder)
        head_in = params.heads[head_key].copy()
        inner_loss = inner_epoch(
            encoder_in, head_in, task, config.mu_in, config.batch_size, rng,
            model_config, batch_hook,
        )
        params.encoder, params.heads[head_key] = meta_update(
            params.encoder, encoder_in, params.heads[head_key], head_in, config.mu_out
        )

        if shared:
            head_init = params.heads[SHARED_KEY]
        else:
            head_init = prev_head if config.persist_target_head else None
        enc_ad, head_ad, _ = adapt_target(
            params.encoder, target, model_config, adapt_config, rng, head_init, batch_hook
        )
        if config.persist_target_head:
            prev_head = head_ad

        val = validation_score(model_config, enc_ad, head_ad, target)
        history.append(TrainRecord(iteration, task.meta.id, inner_loss, val))
        iters = iteration + 1
        if tracker.update(val, enc_ad, head_ad):
            break
    return _finish(
        config.strategy, model_config, config, target, params, tracker, iters, history, sampled, rng
    )


def _train_pooled(aux, target, model_config, config, batch_hook) -> TrainState:
    tasks = list(aux) + [target]
    metas = {t.meta.id: t.meta for t in tasks}
    params = init_params(model_config, [t.meta for t in tasks], config.seed)
    rng = rng_for(config.seed, "train", config.strategy)

    pool = [s for t in tasks for s in t.samples]
    sample_scale = None
    if config.strategy == MTL:
        # Per-sample factors realizing the weighted sum of per-task mean
        # losses, normalized so uniform task weights recover plain SGD.
        weights = {t.meta.id: (1.0 - config.mtl_target_weight) / len(aux) for t in aux}
        weights[target.meta.id] = config.mtl_target_weight
        total = len(pool)
        sample_scale = {
            t.meta.id: weights[t.meta.id] * total / len(t.samples) for t in tasks
        }

    head_key = SHARED_KEY if model_config.head_mode == SHARED_HEAD else target.meta.id
    tracker = _BestTracker(config.patience)
    history: list = []
    iters = 0
    for iteration in range(config.max_outer_iters):
        mean_loss = _epoch(
            params, metas, pool, config.mu_in, config.batch_size, rng,
            sample_scale=sample_scale, batch_hook=batch_hook,
        )
        val = validation_score(model_config, params.encoder, params.heads[head_key], target)
        history.append(TrainRecord(iteration, "pool", mean_loss, val))
        iters = iteration + 1
        if tracker.update(val, params.encoder, params.heads[head_key]):
            break
    return _finish(
        config.strategy, model_config, config, target, params, tracker, iters, history, [], rng
    )


def _train_single(target, model_config, config, batch_hook) -> TrainState:
    params = init_params(model_config, [target.meta], config.seed)
    rng = rng_for(config.seed, "train", config.strategy)
    adversarial = config.adversarial if config.strategy == SINGLE_TASK_AD else _NO_ADVERSARIAL

    tracker = _BestTracker(config.patience)
    history: list = []
    iters = 0
    for iteration in range(config.max_outer_iters):
        mean_loss = _epoch(
            params, {target.meta.id: target.meta}, target.samples, config.mu_ad,
            config.batch_size, rng, adversarial=adversarial, target_id=target.meta.id,
            batch_hook=batch_hook,
        )
        val = validation_score(
            model_config, params.encoder, params.heads[target.meta.id], target
        )
        history.append(TrainRecord(iteration, target.meta.id, mean_loss, val))
        iters = iteration + 1
        if tracker.update(val, params.encoder, params.heads[target.meta.id]):
            break
    return _finish(
        config.strategy, model_config, config, target, params, tracker, iters, history, [], rng
    )


def forecast_target(state: TrainState, x: np.ndarray) -> np.ndarray:
    """Forecast with the best adapted target model from a training run."""
    if state.adapted_encoder is None or state.adapted_head is None:
        raise RuntimeError("training produced no adapted state (zero iterations?)")
    params = ModelParams(config=state.model_config, encoder=state.adapted_encoder, heads={})
    params.heads[params.head_key(state.target_meta.id)] = state.adapted_head
    y_hat, _ = forward(params, x, state.target_meta)
    return y_hat


def write_train_log(state: TrainState, path: str | Path) -> None:
    """Line-oriented CSV log: iteration, sampled task, inner loss, validation score."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "task_id", "inner_loss", "val_mase"])
        for record in state.history:
            writer.writerow(
                [record.iteration, record.task_id, repr(record.inner_loss), repr(record.val_score)]
            )
