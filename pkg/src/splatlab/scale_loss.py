"""Scale-constrained regularizer: penalize Gaussians with large geometric-mean scale.

The penalty is the mean squared hinge over the cloud,
mean_i max(0, S_i - threshold)^2 with S_i = (sx * sy * sz)^(1/3), so a
fine-tuning loop can add weight * loss to its reconstruction objective. Only
the loss value and its analytic gradient with respect to the scales live
here; sorting and cache lookup stay outside any gradient path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scene import Gaussian, GaussianCloud


@dataclass
class ScaleLossConfig:
    weight: float = 1.0       # multiplier applied by the caller's total loss
    threshold: float = 0.1    # world units

    def __post_init__(self):
        if self.threshold <= 0:
            raise ValueError(f"threshold must be positive, got {self.threshold}")
        if self.weight < 0:
            raise ValueError(f"weight must be non-negative, got {self.weight}")


def geometric_mean_scale(g: Gaussian) -> float:
    s = g.scale
    return float((s[0] * s[1] * s[2]) ** (1.0 / 3.0))


def geometric_mean_scales(cloud: GaussianCloud) -> np.ndarray:
    return np.prod(cloud.scales, axis=1) ** (1.0 / 3.0)


def l_scale(cloud: GaussianCloud, cfg: ScaleLossConfig) -> float:
    """Mean squared hinge of geometric-mean scale above the threshold."""
    if len(cloud) == 0:
        return 0.0
    excess = np.maximum(geometric_mean_scales(cloud) - cfg.threshold, 0.0)
    return float(np.mean(excess**2))


def l_scale_grad(cloud: GaussianCloud, cfg: ScaleLossConfig) -> np.ndarray:
    """d l_scale / d scale, shape (n, 3); zero at and below the threshold.

    dS/ds_x = S / (3 s_x), so each above-threshold Gaussian contributes
    (2/n) * (S - threshold) * S / (3 s).
    """
    n = len(cloud)
    if n == 0:
        return np.zeros((0, 3))
    s_mean = geometric_mean_scales(cloud)
    excess = np.maximum(s_mean - cfg.threshold, 0.0)
    coeff = 2.0 * excess * s_mean / (3.0 * n)
    return coeff[:, None] / cloud.scales
