"""Forecasting network: a shared convolutional encoder over variable-length
inputs plus one linear forecasting head per dataset.

The forward pass anchors the input on its last observed value (subtract
before the encoder, add back to the forecast) so the heads extrapolate
deviations rather than absolute levels.  In shared-head mode a single head
sized for the largest input/horizon serves every dataset: encoder features
are zero-padded in time before flattening and surplus output coordinates
are dropped.

``backward`` returns exact analytic gradients for the encoder, the active
head, and the raw input, the latter being what adversarial augmentation
perturbs.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ops import (
    ConvLayerParams,
    LinearParams,
    conv1d_backward,
    conv1d_forward,
    linear_backward,
    linear_forward,
    relu_backward,
    relu_forward,
)
from .seeding import rng_for
from .tsf import DatasetMeta

MULTI_HEAD = "multi_head"
SHARED_HEAD = "shared_head"
SHARED_KEY = "shared"

FORMAT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    """Architecture knobs: ``layers`` encoder convolutions of ``filters``
    channels each (``layers == 0`` bypasses the encoder entirely, leaving a
    plain anchored linear forecaster)."""

    layers: int = 3
    filters: int = 32
    kernel: int = 3
    head_mode: str = MULTI_HEAD
    max_delta: int | None = None
    max_horizon: int | None = None

    def __post_init__(self):
        if self.layers < 0:
            raise ValueError(f"layers must be >= 0, got {self.layers}")
        if self.filters < 1:
            raise ValueError(f"filters must be >= 1, got {self.filters}")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError(f"kernel must be odd and positive, got {self.kernel}")
        if self.head_mode not in (MULTI_HEAD, SHARED_HEAD):
            raise ValueError(f"unknown head_mode {self.head_mode!r}")
        if self.head_mode == SHARED_HEAD and (self.max_delta is None or self.max_horizon is None):
            raise ValueError("shared_head mode requires max_delta and max_horizon")

    @property
    def feature_channels(self) -> int:
        return self.filters if self.layers > 0 else 1

    def head_in_dim(self, delta: int) -> int:
        width = self.max_delta if self.head_mode == SHARED_HEAD else delta
        return self.feature_channels * width

    def to_dict(self) -> dict:
        return {
            "layers": self.layers,
            "filters": self.filters,
            "kernel": self.kernel,
            "head_mode": self.head_mode,
            "max_delta": self.max_delta,
            "max_horizon": self.max_horizon,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)

    def hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]


@dataclass
class ModelParams:
    """Shared encoder stack plus the per-dataset head map (a single entry
    under :data:`SHARED_KEY` in shared-head mode)."""

    config: ModelConfig
    encoder: list
    heads: dict

    def head_key(self, dataset_id: str) -> str:
        return SHARED_KEY if self.config.head_mode == SHARED_HEAD else dataset_id

    def copy(self) -> "ModelParams":
        return ModelParams(
            config=self.config,
            encoder=[layer.copy() for layer in self.encoder],
            heads={key: head.copy() for key, head in self.heads.items()},
        )


@dataclass
class ForwardCache:
    """Intermediate values :func:`backward` needs to replay the forward pass."""

    dataset_id: str
    delta: int
    horizon: int
    head_key: str
    anchor: float
    layer_inputs: list = field(default_factory=list)
    preacts: list = field(default_factory=list)
    features: np.ndarray | None = None


def _init_conv(rng: np.random.Generator, out_ch: int, in_ch: int, kernel: int) -> ConvLayerParams:
    bound = 1.0 / np.sqrt(in_ch * kernel)
    weights = rng.uniform(-bound, bound, size=(out_ch, in_ch, kernel))
    return ConvLayerParams(weights, np.zeros(out_ch))


def _init_linear(rng: np.random.Generator, out_dim: int, in_dim: int) -> LinearParams:
    bound = 1.0 / np.sqrt(in_dim)
    weights = rng.uniform(-bound, bound, size=(out_dim, in_dim))
    return LinearParams(weights, np.zeros(out_dim))


def init_head(config: ModelConfig, meta: DatasetMeta, seed: int) -> LinearParams:
    """Freshly initialized head for one dataset, deterministic in the seed."""
    rng = rng_for(seed, "head", meta.id)
    out_dim = config.max_horizon if config.head_mode == SHARED_HEAD else meta.horizon
    return _init_linear(rng, out_dim, config.head_in_dim(meta.delta))


def init_params(config: ModelConfig, metas: list, seed: int) -> ModelParams:
    """Initialize encoder and heads; weights are uniform in
    ``[-1/sqrt(fan_in), +1/sqrt(fan_in)]`` and biases zero.  Head streams
    derive from the dataset id, so the result does not depend on the order
    of ``metas``."""
    if not metas:
        raise ValueError("need at least one dataset meta")
    encoder = []
    for layer_idx in range(config.layers):
        in_ch = 1 if layer_idx == 0 else config.filters
        rng = rng_for(seed, "encoder", layer_idx)
        encoder.append(_init_conv(rng, config.filters, in_ch, config.kernel))

    heads: dict = {}
    if config.head_mode == SHARED_HEAD:
        deltas = [m.delta for m in metas]
        horizons = [m.horizon for m in metas]
        if config.max_delta < max(deltas) or config.max_horizon < max(horizons):
            raise ValueError(
                f"shared head sized ({config.max_delta}, {config.max_horizon}) cannot "
                f"cover delta {max(deltas)} / horizon {max(horizons)}"
            )
        rng = rng_for(seed, "head", SHARED_KEY)
        heads[SHARED_KEY] = _init_linear(
            rng, config.max_horizon, config.feature_channels * config.max_delta
        )
    else:
        for meta in metas:
            heads[meta.id] = init_head(config, meta, seed)
    return ModelParams(config=config, encoder=encoder, heads=heads)


def forward(params: ModelParams, x: np.ndarray, meta: DatasetMeta) -> tuple[np.ndarray, ForwardCache]:
    """Forecast ``meta.horizon`` values from the window ``x`` of length
    ``meta.delta``; returns the prediction and the cache for ``backward``."""
    config = params.config
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (meta.delta,):
        raise ValueError(f"input has shape {x.shape}, dataset {meta.id!r} expects ({meta.delta},)")
    head_key = params.head_key(meta.id)
    if head_key not in params.heads:
        raise KeyError(f"no head for dataset {meta.id!r}")
    if config.head_mode == SHARED_HEAD:
        if meta.delta > config.max_delta or meta.horizon > config.max_horizon:
            raise ValueError(
                f"dataset {meta.id!r} ({meta.delta}, {meta.horizon}) exceeds shared head "
                f"capacity ({config.max_delta}, {config.max_horizon})"
            )

    anchor = float(x[-1])
    cache = ForwardCache(
        dataset_id=meta.id,
        delta=meta.delta,
        horizon=meta.horizon,
        head_key=head_key,
        anchor=anchor,
    )
    hidden = (x - anchor)[None, :]
    for layer_idx, layer in enumerate(params.encoder):
        cache.layer_inputs.append(hidden)
        pre = conv1d_forward(hidden, layer)
        cache.preacts.append(pre)
        hidden = relu_forward(pre) if layer_idx < config.layers - 1 else pre

    if config.head_mode == SHARED_HEAD and meta.delta < config.max_delta:
        padded = np.zeros((hidden.shape[0], config.max_delta))
        padded[:, : meta.delta] = hidden
        features = padded.ravel()
    else:
        features = hidden.ravel()
    cache.features = features

    head = params.heads[head_key]
    out = linear_forward(features, head)
    if config.head_mode == SHARED_HEAD:
        out = out[: meta.horizon]
    return out + anchor, cache


def backward(
    params: ModelParams, cache: ForwardCache, grad_y: np.ndarray
) -> tuple[list, LinearParams, np.ndarray]:
    """Exact gradients of the forward map for the cached sample: per-layer
    encoder gradients, head gradients, and the input gradient."""
    config = params.config
    grad_y = np.asarray(grad_y, dtype=np.float64)
    if grad_y.shape != (cache.horizon,):
        raise ValueError(f"grad_y has shape {grad_y.shape}, expected ({cache.horizon},)")
    head = params.heads.get(cache.head_key)
    if head is None:
        raise KeyError(f"stale cache: no head for dataset {cache.dataset_id!r}")

    grad_anchor = float(grad_y.sum())  # anchor added back onto every output
    if config.head_mode == SHARED_HEAD and cache.horizon < config.max_horizon:
        grad_out = np.zeros(config.max_horizon)
        grad_out[: cache.horizon] = grad_y
    else:
        grad_out = grad_y
    grad_features, grad_head = linear_backward(cache.features, head, grad_out)

    channels = config.feature_channels
    if config.head_mode == SHARED_HEAD:
        grad_hidden = grad_features.reshape(channels, config.max_delta)[:, : cache.delta]
    else:
        grad_hidden = grad_features.reshape(channels, cache.delta)

    grad_encoder: list = [None] * config.layers
    g = grad_hidden
    for layer_idx in reversed(range(config.layers)):
        g, grad_layer = conv1d_backward(cache.layer_inputs[layer_idx], params.encoder[layer_idx], g)
        grad_encoder[layer_idx] = grad_layer
        if layer_idx > 0:
            g = relu_backward(cache.preacts[layer_idx - 1], g)

    grad_u = np.ascontiguousarray(g[0])  # gradient w.r.t. the anchored input
    grad_x = grad_u.copy()
    grad_x[-1] += grad_anchor - grad_u.sum()  # chain through the anchor coordinate
    return grad_encoder, grad_head, grad_x


def save_params(path: str | Path, params: ModelParams, seed: int) -> None:
    """Dump config and all arrays to an ``.npz`` checkpoint; bit-exact on reload."""
    head_ids = sorted(params.heads)
    header = {
        "format_version": FORMAT_VERSION,
        "seed": int(seed),
        "config": params.config.to_dict(),
        "config_hash": params.config.hash(),
        "heads": head_ids,
    }
    arrays = {"__header__": np.array(json.dumps(header))}
    for idx, layer in enumerate(params.encoder):
        arrays[f"enc{idx}_weights"] = layer.weights
        arrays[f"enc{idx}_bias"] = layer.bias
    for idx, head_id in enumerate(head_ids):
        arrays[f"head{idx}_weights"] = params.heads[head_id].weights
        arrays[f"head{idx}_bias"] = params.heads[head_id].bias
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_params(path: str | Path) -> tuple[ModelParams, int]:
    with np.load(path) as data:
        header = json.loads(str(data["__header__"]))
        if header["format_version"] != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header['format_version']}")
        config = ModelConfig.from_dict(header["config"])
        if config.hash() != header["config_hash"]:
            raise ValueError("checkpoint config hash mismatch")
        encoder = [
            ConvLayerParams(data[f"enc{idx}_weights"], data[f"enc{idx}_bias"])
            for idx in range(config.layers)
        ]
        heads = {
            head_id: LinearParams(data[f"head{idx}_weights"], data[f"head{idx}_bias"])
            for idx, head_id in enumerate(header["heads"])
        }
    return ModelParams(config=config, encoder=encoder, heads=heads), header["seed"]
