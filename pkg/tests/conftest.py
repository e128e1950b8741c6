"""Shared test helpers: finite differences and small config factories."""

from __future__ import annotations

import dataclasses

import numpy as np

from fovalign.config import (
    DataConfig,
    EvalConfig,
    FusionConfig,
    ProviderConfig,
    RunConfig,
    TrainingConfig,
    TransformConfig,
)


def central_difference(fn, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of a scalar function of `x`."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        bumped = x.copy()
        bumped[idx] = x[idx] + step
        hi = fn(bumped)
        bumped[idx] = x[idx] - step
        lo = fn(bumped)
        grad[idx] = (hi - lo) / (2.0 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-3) -> float:
    """Max elementwise |ga - gn| / max(|ga|, |gn|, floor)."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def tiny_config(**overrides) -> RunConfig:
    """A fast end-to-end config: 8 classes, 32x32 images, 16-dim features."""
    base = RunConfig(
        transforms=TransformConfig(kernel_size=15),
        provider=ProviderConfig(dim_feature=16),
        fusion=FusionConfig(dim_latent=16, dim_hidden=16, dim_bottleneck=8),
        training=TrainingConfig(epochs=2, batch_size=8, seed=11),
        data=DataConfig(
            classes=8, test_classes=4, train_samples_per_class=10,
            image_size=32, dim_neural=16, seed=5, bank_levels=(1, 15, 29),
        ),
        evaluation=EvalConfig(gallery_sizes=(4, 2), trials=5),
    )
    return dataclasses.replace(base, **overrides).validate()


def random_image(rng: np.random.Generator, channels: int = 3, height: int = 8, width: int = 8):
    return rng.random((channels, height, width))
