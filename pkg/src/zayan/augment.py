"""Stochastic column views: Gaussian noise, quantile warping, random masking."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata


@dataclass(frozen=True)
class AugmentConfig:
    sigma: float = 0.1
    mask_prob: float = 0.2
    warp_jitter: float = 0.1
    use_noise: bool = True
    use_warp: bool = True
    use_mask: bool = True

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if not 0.0 <= self.mask_prob < 1.0:
            raise ValueError(f"mask_prob must be in [0, 1), got {self.mask_prob}")
        if self.warp_jitter < 0:
            raise ValueError(f"warp_jitter must be >= 0, got {self.warp_jitter}")

    @classmethod
    def disabled(cls) -> "AugmentConfig":
        return cls(use_noise=False, use_warp=False, use_mask=False)


@dataclass(frozen=True)
class FeatureColumnView:
    values: np.ndarray
    mask_indicator: np.ndarray

    def __post_init__(self):
        if self.values.shape != self.mask_indicator.shape:
            raise ValueError("values and mask_indicator lengths differ")


def gaussian_noise(col: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    col = np.asarray(col, dtype=np.float64)
    if sigma == 0:
        return col.copy()
    return col + rng.normal(0.0, sigma, size=col.shape)


def quantile_warp(col: np.ndarray, jitter: float, rng: np.random.Generator) -> np.ndarray:
    """Move each value along the column's empirical CDF by up to ``jitter``.

    Ranks use the average-tie convention scaled to ``[0, 1]``; the inverse CDF
    interpolates linearly between order statistics, so ``jitter=0`` returns
    the input (ties included).
    """
    col = np.asarray(col, dtype=np.float64)
    n = col.size
    if n < 2:
        raise ValueError("quantile_warp needs at least two values")
    r = (rankdata(col, method="average") - 1.0) / (n - 1)
    if jitter > 0:
        r = np.clip(r + rng.uniform(-jitter, jitter, size=n), 0.0, 1.0)
    return np.interp(r * (n - 1), np.arange(n), np.sort(col))


def random_mask(col: np.ndarray, p: float, rng: np.random.Generator) -> FeatureColumnView:
    if not 0.0 <= p < 1.0:
        raise ValueError(f"mask probability must be in [0, 1), got {p}")
    col = np.asarray(col, dtype=np.float64)
    mask = rng.random(col.shape) < p if p > 0 else np.zeros(col.shape, dtype=bool)
    return FeatureColumnView(np.where(mask, 0.0, col), mask)


def augment_column(col: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> FeatureColumnView:
    """One view: noise, then quantile warp, then mask (masked entries are exactly 0)."""
    x = np.asarray(col, dtype=np.float64)
    if cfg.use_noise:
        x = gaussian_noise(x, cfg.sigma, rng)
    if cfg.use_warp and x.size >= 2:
        x = quantile_warp(x, cfg.warp_jitter, rng)
    if cfg.use_mask:
        return random_mask(x, cfg.mask_prob, rng)
    return FeatureColumnView(x.copy(), np.zeros(x.shape, dtype=bool))


def augment_views(
    col: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator
) -> tuple[FeatureColumnView, FeatureColumnView]:
    """Two views with identical recipes and independent draws."""
    return augment_column(col, cfg, rng), augment_column(col, cfg, rng)


def augment_matrix(X: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Apply ``augment_column`` to every column of ``X`` (used for TTA)."""
    X = np.asarray(X, dtype=np.float64)
    return np.column_stack([augment_column(X[:, j], cfg, rng).values for j in range(X.shape[1])])
