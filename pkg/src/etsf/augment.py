"""Adversarial input augmentation: single-step sign-gradient perturbation of
target-dataset windows plus the weighted clean/adversarial loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ops import mae_loss


@dataclass(frozen=True)
class AdversarialConfig:
    """``epsilon`` is the absolute perturbation magnitude per coordinate,
    ``weight`` scales the adversarial loss term (0 disables augmentation)."""

    epsilon: float = 0.05
    weight: float = 1.0

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.weight < 0:
            raise ValueError(f"weight must be >= 0, got {self.weight}")

    @property
    def active(self) -> bool:
        return self.weight > 0


def fgsm_perturb(x: np.ndarray, grad_x: np.ndarray, epsilon: float) -> np.ndarray:
    """Step ``epsilon`` in the sign of the loss gradient per coordinate;
    coordinates with zero gradient stay untouched."""
    x = np.asarray(x, dtype=np.float64)
    grad_x = np.asarray(grad_x, dtype=np.float64)
    if x.shape != grad_x.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {grad_x.shape}")
    return x + epsilon * np.sign(grad_x)


def adversarial_loss(y: np.ndarray, y_hat: np.ndarray, y_adv_hat: np.ndarray, weight: float) -> float:
    """Clean loss plus ``weight`` times the loss on the perturbed forecast."""
    return mae_loss(y_hat, y) + weight * mae_loss(y_adv_hat, y)
