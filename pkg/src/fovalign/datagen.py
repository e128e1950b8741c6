"""Procedural paired dataset: rendered blob images and matched vectors.

Each class owns a seeded style (background colour plus a handful of soft
geometric blobs); each sample is a jittered rendering of its class style,
quantized to the 8-bit pixmap grid so the in-memory image equals its
on-disk round trip bit for bit.

The "neural" vector paired with a sample is a fixed linear map of the
clean image's (frozen-encoder) embedding plus seeded Gaussian noise. The
map is shared across all classes, so alignment learned on the training
classes transfers to the held-out test classes: train and test class sets
are disjoint by construction and validated on every bank load.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .pixmap import read_pixmap, to_bytes_quantized
from .providers import (
    EmbeddingBank,
    SyntheticEncoder,
    SyntheticProvider,
    derive_noise_seed,
    load_embedding_bank,
)

__all__ = ["PairedDataset", "render_sample", "generate_dataset", "load_dataset"]

# sub-seed tags keep the independent generator streams apart
_STYLE_TAG, _SAMPLE_TAG, _MAP_TAG, _NEURAL_NOISE_TAG, _VIEW_NOISE_TAG = 0, 1, 2, 3, 4


@dataclass
class PairedDataset:
    """In-memory paired dataset; images may be absent for bank-only runs."""

    images: list[np.ndarray] | None
    neural: np.ndarray  # (N, dim_neural) float64
    labels: np.ndarray  # (N,) int64
    splits: list[str]
    tag: str

    @property
    def sample_count(self) -> int:
        return int(self.neural.shape[0])

    @property
    def dim_neural(self) -> int:
        return int(self.neural.shape[1])

    def train_indices(self) -> np.ndarray:
        return np.array([i for i, s in enumerate(self.splits) if s == "train"], dtype=np.int64)

    def test_indices(self) -> np.ndarray:
        return np.array([i for i, s in enumerate(self.splits) if s == "test"], dtype=np.int64)


def _class_style(data_seed: int, class_id: int) -> dict:
    rng = np.random.default_rng(np.random.SeedSequence((data_seed, _STYLE_TAG, class_id)))
    blobs = []
    for _ in range(int(rng.integers(2, 5))):
        blobs.append({
            "kind": "circle" if rng.random() < 0.5 else "square",
            "center": rng.uniform(0.2, 0.8, size=2),
            "radius": float(rng.uniform(0.08, 0.28)),
            "color": rng.uniform(0.15, 0.95, size=3),
        })
    return {"background": rng.uniform(0.05, 0.35, size=3), "blobs": blobs}


def render_sample(style: dict, rng: np.random.Generator, size: int) -> np.ndarray:
    """One jittered rendering of a class style, quantized to 8-bit levels."""
    canvas = np.ones((3, size, size)) * style["background"][:, None, None]
    rows = np.arange(size, dtype=np.float64)[:, None]
    cols = np.arange(size, dtype=np.float64)[None, :]
    for blob in style["blobs"]:
        cy, cx = (blob["center"] + rng.normal(0.0, 0.02, size=2)) * size
        radius = blob["radius"] * size * (1.0 + rng.normal(0.0, 0.05))
        radius = max(radius, 1.5)
        color = np.clip(blob["color"] + rng.normal(0.0, 0.02, size=3), 0.0, 1.0)
        dy, dx = rows - cy, cols - cx
        if blob["kind"] == "circle":
            dist = np.hypot(dy, dx)
        else:
            dist = np.maximum(np.abs(dy), np.abs(dx))
        coverage = np.clip(radius - dist + 0.5, 0.0, 1.0)  # 1-pixel soft edge
        canvas = canvas * (1.0 - coverage) + color[:, None, None] * coverage
    return to_bytes_quantized(canvas).astype(np.float64) / 255.0


@dataclass
class GeneratedDataset:
    dataset: PairedDataset
    bank: EmbeddingBank


def generate_dataset(config: RunConfig) -> GeneratedDataset:
    """Render every sample and build the paired vectors plus the
    precomputed embedding bank at the configured kernel levels.

    Classes [0, classes - test_classes) are training classes with
    `train_samples_per_class` renderings each; the remaining classes are
    test classes with a single rendering each (one image per concept).
    """
    d = config.data
    train_classes = d.classes - d.test_classes
    encoder = SyntheticEncoder(config.provider.dim_feature, config.provider.seed)
    images: list[np.ndarray] = []
    labels: list[int] = []
    splits: list[str] = []
    for class_id in range(d.classes):
        style = _class_style(d.seed, class_id)
        split = "train" if class_id < train_classes else "test"
        copies = d.train_samples_per_class if split == "train" else 1
        for copy in range(copies):
            rng = np.random.default_rng(
                np.random.SeedSequence((d.seed, _SAMPLE_TAG, class_id, copy))
            )
            images.append(render_sample(style, rng, d.image_size))
            labels.append(class_id)
            splits.append(split)

    clean = np.stack([encoder.encode(img) for img in images])
    map_rng = np.random.default_rng(np.random.SeedSequence((d.seed, _MAP_TAG)))
    neural_map = map_rng.standard_normal(
        (config.provider.dim_feature, d.dim_neural)
    ) / np.sqrt(config.provider.dim_feature)
    neural = clean @ neural_map
    for i in range(len(images)):
        noise_rng = np.random.default_rng(
            np.random.SeedSequence((d.seed, _NEURAL_NOISE_TAG, i))
        )
        neural[i] += d.neural_noise * noise_rng.standard_normal(d.dim_neural)

    dataset = PairedDataset(
        images=images,
        neural=neural,
        labels=np.asarray(labels, dtype=np.int64),
        splits=splits,
        tag=d.tag,
    )

    provider = SyntheticProvider(
        config.transforms, config.views,
        config.provider.dim_feature, config.provider.seed,
    )
    levels = sorted(d.bank_levels)
    blocks = {
        level: np.empty(
            (len(images), provider.views, config.provider.dim_feature), dtype=np.float32
        )
        for level in levels
    }
    for i, image in enumerate(images):
        noise_seed = derive_noise_seed(d.seed + _VIEW_NOISE_TAG, i, 0)
        # the noise view ignores the kernel; encode it (and the other
        # kernel-independent views) once and reuse across levels
        static_rows = {
            name: provider.view_feature(name, image, levels[0], noise_seed)
            for name in provider.view_names
            if name != "foveated"
        }
        for level in levels:
            rows = [
                static_rows[name]
                if name != "foveated"
                else provider.view_feature(name, image, level, noise_seed)
                for name in provider.view_names
            ]
            blocks[level][i] = np.stack(rows).astype(np.float32)
    bank = EmbeddingBank(
        tag=d.tag,
        views=provider.views,
        dim_feature=config.provider.dim_feature,
        dim_neural=d.dim_neural,
        kernel_levels=levels,
        features=blocks,
        neural=neural.astype(np.float32),
        labels=dataset.labels.copy(),
        splits=list(splits),
    ).validate()
    return GeneratedDataset(dataset=dataset, bank=bank)


def load_dataset(directory, with_images: bool = True) -> PairedDataset:
    """Rebuild a PairedDataset from a generated directory (bank + pixmaps)."""
    from pathlib import Path

    root = Path(directory)
    bank = load_embedding_bank(root / "bank.bicp")
    images = None
    if with_images:
        images = [
            read_pixmap(root / "images" / f"sample_{i:05d}.ppm")
            for i in range(bank.sample_count)
        ]
    return PairedDataset(
        images=images,
        neural=bank.neural.astype(np.float64),
        labels=bank.labels.astype(np.int64),
        splits=list(bank.splits),
        tag=bank.tag,
    )
