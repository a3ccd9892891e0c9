"""Differentiable kernels for the fixed forecasting architecture.

Everything operates on float64 numpy arrays.  A 2-D feature map is laid out
``(channels, length)`` in row-major order.  Each forward kernel has a
hand-derived backward companion returning exact analytic gradients for both
parameters and inputs, verified against central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class ConvLayerParams:
    """1-D convolution parameters: weights ``(out_channels, in_channels,
    kernel)`` and bias ``(out_channels,)``.  Kernel width must be odd so the
    zero same-padding preserves length."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 3:
            raise ValueError(f"conv weights must be 3-D, got shape {self.weights.shape}")
        if self.weights.shape[2] % 2 == 0:
            raise ValueError(f"kernel width must be odd, got {self.weights.shape[2]}")
        if self.bias.shape != (self.weights.shape[0],):
            raise ValueError("bias shape must match out_channels")

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def kernel(self) -> int:
        return self.weights.shape[2]

    def copy(self) -> "ConvLayerParams":
        return ConvLayerParams(self.weights.copy(), self.bias.copy())


@dataclass
class LinearParams:
    """Affine map parameters: weights ``(out_dim, in_dim)``, bias ``(out_dim,)``."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ValueError(f"linear weights must be 2-D, got shape {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[0],):
            raise ValueError("bias shape must match out_dim")

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    def copy(self) -> "LinearParams":
        return LinearParams(self.weights.copy(), self.bias.copy())


def _stacked_windows(x: np.ndarray, kernel: int) -> np.ndarray:
    """Gather the zero-padded sliding windows of ``x`` (channels, length)
    into a contiguous ``(channels * kernel, length)`` matrix whose row
    ``i * kernel + k`` holds tap ``k`` of channel ``i``.  The convolution
    then collapses to a single matrix product with the flattened weights."""
    channels, length = x.shape
    pad = (kernel - 1) // 2
    xp = np.zeros((channels, length + 2 * pad))
    xp[:, pad : pad + length] = x
    stacked = np.empty((channels, kernel, length))
    for k in range(kernel):
        stacked[:, k, :] = xp[:, k : k + length]
    return stacked.reshape(channels * kernel, length)


def conv1d_forward(x: np.ndarray, layer: ConvLayerParams) -> np.ndarray:
    """Same-padded 1-D convolution of ``x`` (in_channels, length)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != layer.in_channels:
        raise ValueError(
            f"input has shape {x.shape}, layer expects {layer.in_channels} channels"
        )
    length = x.shape[1]
    kernel = layer.kernel
    flat_w = layer.weights.reshape(layer.out_channels, -1)
    if kernel == 1:
        out = flat_w @ x
    else:
        out = flat_w @ _stacked_windows(x, kernel)
    out += layer.bias[:, None]
    return out


def conv1d_backward(
    x: np.ndarray, layer: ConvLayerParams, grad_output: np.ndarray
) -> tuple[np.ndarray, ConvLayerParams]:
    """Gradients of :func:`conv1d_forward` with respect to input and parameters."""
    x = np.asarray(x, dtype=np.float64)
    grad_output = np.asarray(grad_output, dtype=np.float64)
    length = x.shape[1]
    if grad_output.shape != (layer.out_channels, length):
        raise ValueError(
            f"grad_output has shape {grad_output.shape}, expected "
            f"{(layer.out_channels, length)}"
        )
    kernel = layer.kernel
    flat_w = layer.weights.reshape(layer.out_channels, -1)
    grad_b = grad_output.sum(axis=1)
    if kernel == 1:
        grad_w = (grad_output @ x.T).reshape(layer.weights.shape)
        grad_x = flat_w.T @ grad_output
        return grad_x, ConvLayerParams(grad_w, grad_b)

    stacked = _stacked_windows(x, kernel)
    grad_w = (grad_output @ stacked.T).reshape(layer.weights.shape)
    # Scatter the stacked-window gradient back onto the padded time axis.
    grad_stacked = (flat_w.T @ grad_output).reshape(layer.in_channels, kernel, length)
    pad = (kernel - 1) // 2
    grad_xp = np.zeros((layer.in_channels, length + 2 * pad))
    for k in range(kernel):
        grad_xp[:, k : k + length] += grad_stacked[:, k, :]
    grad_x = np.ascontiguousarray(grad_xp[:, pad : pad + length])
    return grad_x, ConvLayerParams(grad_w, grad_b)


def linear_forward(x: np.ndarray, layer: LinearParams) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (layer.in_dim,):
        raise ValueError(f"input has shape {x.shape}, layer expects ({layer.in_dim},)")
    return layer.weights @ x + layer.bias


def linear_backward(
    x: np.ndarray, layer: LinearParams, grad_output: np.ndarray
) -> tuple[np.ndarray, LinearParams]:
    x = np.asarray(x, dtype=np.float64)
    grad_output = np.asarray(grad_output, dtype=np.float64)
    if grad_output.shape != (layer.out_dim,):
        raise ValueError(f"grad_output has shape {grad_output.shape}, expected ({layer.out_dim},)")
    grad_x = layer.weights.T @ grad_output
    grad_w = np.outer(grad_output, x)
    return grad_x, LinearParams(grad_w, grad_output.copy())


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def relu_backward(x: np.ndarray, grad_y: np.ndarray) -> np.ndarray:
    # Subgradient 0 at the origin.
    return np.where(np.asarray(x) > 0, grad_y, 0.0)


def mae_loss(prediction: np.ndarray, target: np.ndarray) -> float:
    prediction = np.asarray(prediction, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if prediction.shape != target.shape:
        raise ValueError(f"shape mismatch: {prediction.shape} vs {target.shape}")
    return float(np.mean(np.abs(prediction - target)))


def mae_grad(prediction: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Gradient of :func:`mae_loss` with respect to the prediction
    (sign convention: 0 where prediction equals target)."""
    prediction = np.asarray(prediction, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if prediction.shape != target.shape:
        raise ValueError(f"shape mismatch: {prediction.shape} vs {target.shape}")
    return np.sign(prediction - target) / prediction.size


@dataclass(frozen=True)
class BlockCheck:
    name: str
    max_rel_error: float
    ok: bool


@dataclass(frozen=True)
class FiniteDiffReport:
    blocks: tuple
    step: float
    tolerance: float

    @property
    def ok(self) -> bool:
        return all(b.ok for b in self.blocks)

    @property
    def max_rel_error(self) -> float:
        return max(b.max_rel_error for b in self.blocks)

    def __str__(self) -> str:
        lines = [
            f"  {b.name:<20s} max_rel_err={b.max_rel_error:.3e} "
            f"{'ok' if b.ok else 'FAIL'}"
            for b in self.blocks
        ]
        return "\n".join(lines)


def finite_diff_check(
    fn,
    params: dict,
    step: float = 1e-5,
    tolerance: float = 1e-6,
    max_coords_per_block: int | None = None,
    rng: np.random.Generator | None = None,
    value_fn=None,
) -> FiniteDiffReport:
    """Compare analytic gradients with central finite differences.

    ``fn(params) -> (value, grads)`` must return a scalar and a dict of
    gradient arrays keyed like ``params``.  Relative error uses a unit
    floor, so near-zero gradients are compared absolutely.  When
    ``max_coords_per_block`` is set, a random subset of coordinates per
    block is probed (full sweep otherwise).  ``value_fn`` may supply a
    cheaper gradient-free evaluation for the difference quotients.
    """
    if value_fn is None:
        value_fn = lambda p: fn(p)[0]  # noqa: E731
    _, grads = fn(params)
    blocks = []
    for name, array in params.items():
        analytic = np.asarray(grads[name], dtype=np.float64)
        if analytic.shape != array.shape:
            raise ValueError(f"gradient block {name!r} has shape {analytic.shape}, expected {array.shape}")
        coords = np.arange(array.size)
        if max_coords_per_block is not None and array.size > max_coords_per_block:
            gen = rng if rng is not None else np.random.default_rng(0)
            coords = gen.choice(array.size, size=max_coords_per_block, replace=False)
        worst = 0.0
        flat = array.reshape(-1)
        for idx in coords:
            orig = flat[idx]
            flat[idx] = orig + step
            up = value_fn(params)
            flat[idx] = orig - step
            down = value_fn(params)
            flat[idx] = orig
            numeric = (up - down) / (2.0 * step)
            a = analytic.reshape(-1)[idx]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1.0)
            worst = max(worst, rel)
        blocks.append(BlockCheck(name=name, max_rel_error=worst, ok=worst < tolerance))
    return FiniteDiffReport(blocks=tuple(blocks), step=step, tolerance=tolerance)
