"""Randomized gradient verification of the full model.

Each instance draws an architecture and input, builds the scalar probe
``J = g . prediction`` for a fixed random ``g`` (linear in the outputs, so
the only nondifferentiable points are the encoder rectifier kinks), and
compares the analytic gradients of every parameter block plus the input
against central finite differences.  Instances are rejection-sampled so no
pre-activation sits within the difference step of a kink.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import (
    MULTI_HEAD,
    SHARED_HEAD,
    ModelConfig,
    ModelParams,
    backward,
    forward,
    init_params,
)
from .ops import FiniteDiffReport, finite_diff_check
from .seeding import rng_for
from .tsf import DatasetMeta, Frequency

LAYER_CHOICES = (1, 2, 3)
FILTER_CHOICES = (1, 4, 32)
KERNEL_CHOICES = (1, 3, 5)
DELTA_RANGE = (2, 30)
HORIZON_RANGE = (1, 8)

_KINK_MARGIN = 1e-3


@dataclass
class GradCheckInstance:
    config: ModelConfig
    meta: DatasetMeta
    params: ModelParams
    x: np.ndarray
    probe: np.ndarray


def _meta(delta: int, horizon: int) -> DatasetMeta:
    return DatasetMeta(
        id="probe",
        name="probe",
        frequency=Frequency.MONTHLY,
        series_count=2,
        delta=delta,
        horizon=horizon,
    )


def _min_preact_margin(params: ModelParams, x: np.ndarray, meta: DatasetMeta) -> float:
    _, cache = forward(params, x, meta)
    # Only rectified layers (all but the last) contribute kinks.
    rectified = cache.preacts[:-1]
    if not rectified:
        return np.inf
    return min(float(np.min(np.abs(pre))) for pre in rectified)


def draw_instance(rng: np.random.Generator, shared_head: bool = False) -> GradCheckInstance:
    """Sample one checkable instance; resamples until every rectifier
    pre-activation clears the kink margin."""
    for _ in range(500):
        layers = int(rng.choice(LAYER_CHOICES))
        filters = int(rng.choice(FILTER_CHOICES))
        kernel = int(rng.choice(KERNEL_CHOICES))
        delta = int(rng.integers(DELTA_RANGE[0], DELTA_RANGE[1] + 1))
        horizon = int(rng.integers(HORIZON_RANGE[0], HORIZON_RANGE[1] + 1))
        if shared_head:
            config = ModelConfig(
                layers=layers, filters=filters, kernel=kernel,
                head_mode=SHARED_HEAD, max_delta=delta + 4, max_horizon=horizon + 3,
            )
        else:
            config = ModelConfig(layers=layers, filters=filters, kernel=kernel, head_mode=MULTI_HEAD)
        meta = _meta(delta, horizon)
        params = init_params(config, [meta], int(rng.integers(2**63)))
        for layer in params.encoder:
            layer.bias[:] = rng.uniform(-0.3, 0.3, size=layer.bias.shape)
        x = rng.normal(0.0, 1.0, size=delta)
        if _min_preact_margin(params, x, meta) > _KINK_MARGIN:
            probe = rng.normal(0.0, 1.0, size=horizon)
            return GradCheckInstance(config=config, meta=meta, params=params, x=x, probe=probe)
    raise RuntimeError("could not sample a kink-free instance")


def check_instance(
    instance: GradCheckInstance,
    step: float = 1e-5,
    tolerance: float = 1e-6,
    max_coords_per_block: int | None = 128,
    rng: np.random.Generator | None = None,
) -> FiniteDiffReport:
    """Finite-difference check of every parameter block and the input."""
    params = instance.params
    x = instance.x.copy()
    meta = instance.meta
    probe = instance.probe
    head_key = params.head_key(meta.id)
    head = params.heads[head_key]

    blocks = {}
    for idx, layer in enumerate(params.encoder):
        blocks[f"enc{idx}_weights"] = layer.weights
        blocks[f"enc{idx}_bias"] = layer.bias
    blocks["head_weights"] = head.weights
    blocks["head_bias"] = head.bias
    blocks["input"] = x

    def value(_blocks):
        y, _ = forward(params, x, meta)
        return float(probe @ y)

    def value_and_grads(_blocks):
        y, cache = forward(params, x, meta)
        grad_encoder, grad_head, grad_x = backward(params, cache, probe)
        grads = {"head_weights": grad_head.weights, "head_bias": grad_head.bias, "input": grad_x}
        for idx, g in enumerate(grad_encoder):
            grads[f"enc{idx}_weights"] = g.weights
            grads[f"enc{idx}_bias"] = g.bias
        return float(probe @ y), grads

    return finite_diff_check(
        value_and_grads,
        blocks,
        step=step,
        tolerance=tolerance,
        max_coords_per_block=max_coords_per_block,
        rng=rng,
        value_fn=value,
    )


@dataclass
class SuiteResult:
    reports: list
    tolerance: float

    @property
    def ok(self) -> bool:
        return all(r.ok for r in self.reports)

    @property
    def max_rel_error(self) -> float:
        return max(r.max_rel_error for r in self.reports)


def run_suite(
    seed: int = 0,
    instances: int = 50,
    step: float = 1e-5,
    tolerance: float = 1e-6,
    max_coords_per_block: int | None = 128,
    shared_every: int = 5,
) -> SuiteResult:
    """Check ``instances`` random instances; every ``shared_every``-th one
    uses the shared-head variant."""
    rng = rng_for(seed, "gradcheck")
    reports = []
    for idx in range(instances):
        instance = draw_instance(rng, shared_head=(shared_every > 0 and idx % shared_every == shared_every - 1))
        reports.append(
            check_instance(
                instance, step=step, tolerance=tolerance,
                max_coords_per_block=max_coords_per_block, rng=rng,
            )
        )
    return SuiteResult(reports=reports, tolerance=tolerance)
