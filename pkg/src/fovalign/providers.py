"""Feature providers: the frozen image encoder and the embedding bank.

Two interchangeable sources of per-view feature rows feed the fusion
stage. The synthetic provider stands in for a pretrained image encoder:
it average-pools each view onto a fixed 16x16 patch grid, flattens, maps
through a seed-derived random projection and L2-normalizes. The bank
provider replays rows precomputed at a ladder of blur-kernel levels from
a binary embedding-bank file, ignoring pixels entirely.

Embedding-bank wire format (little-endian throughout):

    magic  b"BICP"
    u32    format version (currently 1)
    u32    header length, then that many bytes of UTF-8 JSON describing
           {tag, sample_count, views, dim_feature, dim_neural,
            kernel_levels, labels, splits}
    f32[]  per sample: for each kernel level (ascending) a views x
           dim_feature row-major block, then the dim_neural neural vector
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .config import TransformConfig, ViewsConfig
from .errors import FormatError, ProtocolError
from .transforms import FoveationParams, add_noise, foveate, resample

__all__ = [
    "POOL_GRID",
    "BANK_MAGIC",
    "derive_noise_seed",
    "SampleRef",
    "SyntheticEncoder",
    "synthetic_encode",
    "EmbeddingBank",
    "save_embedding_bank",
    "load_embedding_bank",
    "select_kernel_level",
    "SyntheticProvider",
    "BankProvider",
    "encode_views",
]

POOL_GRID = 16
BANK_MAGIC = b"BICP"
BANK_VERSION = 1


def derive_noise_seed(base_seed: int, sample_index: int, epoch: int) -> int:
    """Per-sample, per-epoch noise seed: the first word of the PCG64 seed
    sequence spawned from the (base_seed, sample_index, epoch) triple."""
    ss = np.random.SeedSequence((int(base_seed), int(sample_index), int(epoch)))
    return int(ss.generate_state(1)[0])


@dataclass(frozen=True)
class SampleRef:
    """What a provider needs to produce one sample's view features."""

    index: int
    kernel: int
    noise_seed: int = 0
    image: np.ndarray | None = None


def _pool_matrix(n_src: int, n_dst: int) -> np.ndarray:
    """Row-stochastic averaging matrix for adaptive pooling along one axis."""
    mat = np.zeros((n_dst, n_src))
    for i in range(n_dst):
        start = (i * n_src) // n_dst
        stop = -(-(i + 1) * n_src // n_dst)  # ceil division
        mat[i, start:stop] = 1.0 / (stop - start)
    return mat


class SyntheticEncoder:
    """Deterministic stand-in for a frozen pretrained image encoder.

    encode() = L2-normalize(P @ flatten(avg_pool_16x16(image))) with P a
    fixed Gaussian projection drawn from PCG64 seeded by (seed, channels).
    The map before normalization is linear, so it is Lipschitz in pixel
    space with constant bounded by the projection operator norm (pooling
    is an averaging, hence non-expansive per pixel).
    """

    def __init__(self, dim: int, seed: int):
        if dim < 2:
            raise ValueError(f"feature dimension must be >= 2, got {dim}")
        self.dim = int(dim)
        self.seed = int(seed)
        self._projections: dict[int, np.ndarray] = {}
        self._pool_cache: dict[tuple[int, int], np.ndarray] = {}

    def projection_matrix(self, channels: int) -> np.ndarray:
        if channels not in self._projections:
            rows = POOL_GRID * POOL_GRID * channels
            rng = np.random.default_rng(np.random.SeedSequence((self.seed, channels)))
            self._projections[channels] = rng.standard_normal((rows, self.dim)) / np.sqrt(rows)
        return self._projections[channels]

    def _pool(self, image: np.ndarray) -> np.ndarray:
        _, height, width = image.shape
        for n in (height, width):
            if (n, POOL_GRID) not in self._pool_cache:
                self._pool_cache[(n, POOL_GRID)] = _pool_matrix(n, POOL_GRID).T
        ph = self._pool_cache[(height, POOL_GRID)]
        pw = self._pool_cache[(width, POOL_GRID)]
        # (C, H, W) -> (C, G, G) via the two averaging matrices
        return np.einsum("chw,hg->cgw", image, ph) @ pw

    def project(self, image: np.ndarray) -> np.ndarray:
        """Pre-normalization feature vector (the linear part of encode)."""
        arr = np.asarray(image, dtype=np.float64)
        if arr.ndim != 3:
            raise ValueError(f"expected a (C, H, W) image, got shape {arr.shape}")
        pooled = self._pool(arr).reshape(-1)
        return pooled @ self.projection_matrix(arr.shape[0])

    def encode(self, image: np.ndarray) -> np.ndarray:
        z = self.project(image)
        return z / max(float(np.linalg.norm(z)), 1e-12)

    def encode_views(self, views) -> np.ndarray:
        if len(views) < 1:
            raise ValueError("need at least one view to encode")
        return np.stack([self.encode(v) for v in views])


def synthetic_encode(views, dim: int, seed: int) -> np.ndarray:
    """Encode a list of views into unit-norm feature rows (one per view)."""
    return SyntheticEncoder(dim, seed).encode_views(views)


@dataclass
class EmbeddingBank:
    """Precomputed per-view features at discrete kernel levels, plus the
    paired neural vectors, class labels and split tags."""

    tag: str
    views: int
    dim_feature: int
    dim_neural: int
    kernel_levels: list[int]
    features: dict[int, np.ndarray]  # level -> (N, views, dim_feature) float32
    neural: np.ndarray  # (N, dim_neural) float32
    labels: np.ndarray  # (N,) int64
    splits: list[str]  # "train" / "test" per sample

    @property
    def sample_count(self) -> int:
        return int(self.neural.shape[0])

    def indices(self, split: str) -> np.ndarray:
        return np.array([i for i, s in enumerate(self.splits) if s == split], dtype=np.int64)

    def validate(self) -> "EmbeddingBank":
        n = self.sample_count
        if n < 1:
            raise FormatError("embedding bank holds no samples")
        if self.views < 1 or self.dim_feature < 1 or self.dim_neural < 1:
            raise FormatError("embedding bank dimensions must be >= 1")
        levels = list(self.kernel_levels)
        if not levels or levels != sorted(levels) or len(set(levels)) != len(levels):
            raise FormatError(f"kernel levels must be sorted and unique, got {levels}")
        if any(l < 1 or l % 2 == 0 for l in levels):
            raise FormatError(f"kernel levels must be odd integers >= 1, got {levels}")
        if sorted(self.features) != levels:
            raise FormatError("feature blocks do not cover the declared kernel levels")
        for level, block in self.features.items():
            if block.shape != (n, self.views, self.dim_feature):
                raise FormatError(
                    f"level {level} block has shape {block.shape}, expected "
                    f"{(n, self.views, self.dim_feature)}"
                )
            if not np.all(np.isfinite(block)):
                raise FormatError(f"level {level} block contains non-finite values")
        if self.neural.shape != (n, self.dim_neural):
            raise FormatError(
                f"neural block has shape {self.neural.shape}, expected {(n, self.dim_neural)}"
            )
        if not np.all(np.isfinite(self.neural)):
            raise FormatError("neural block contains non-finite values")
        if len(self.labels) != n or len(self.splits) != n:
            raise FormatError("labels/splits length does not match the sample count")
        bad = sorted(set(self.splits) - {"train", "test"})
        if bad:
            raise FormatError(f"unknown split tag {bad[0]!r}")
        train_classes = {int(l) for l, s in zip(self.labels, self.splits) if s == "train"}
        test_classes = {int(l) for l, s in zip(self.labels, self.splits) if s == "test"}
        overlap = train_classes & test_classes
        if overlap:
            raise ProtocolError(
                f"train/test class sets overlap (zero-shot protocol): {sorted(overlap)[:5]}"
            )
        return self


def save_embedding_bank(path, bank: EmbeddingBank) -> None:
    bank.validate()
    header = {
        "tag": bank.tag,
        "sample_count": bank.sample_count,
        "views": bank.views,
        "dim_feature": bank.dim_feature,
        "dim_neural": bank.dim_neural,
        "kernel_levels": [int(l) for l in bank.kernel_levels],
        "labels": [int(l) for l in bank.labels],
        "splits": list(bank.splits),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(BANK_MAGIC)
        fh.write(struct.pack("<I", BANK_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for i in range(bank.sample_count):
            for level in bank.kernel_levels:
                fh.write(np.ascontiguousarray(bank.features[level][i], dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(bank.neural[i], dtype="<f4").tobytes())


def _read_exact(fh, count: int, what: str) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise FormatError(f"file ended unexpectedly while reading {what}")
    return data


def load_embedding_bank(path) -> EmbeddingBank:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != BANK_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}, expected {BANK_MAGIC!r}")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != BANK_VERSION:
            raise FormatError(f"{path}: unsupported bank version {version}")
        (header_len,) = struct.unpack("<I", _read_exact(fh, 4, "header length"))
        try:
            header = json.loads(_read_exact(fh, header_len, "header").decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"{path}: malformed bank header: {exc}") from exc
        required = {
            "tag", "sample_count", "views", "dim_feature",
            "dim_neural", "kernel_levels", "labels", "splits",
        }
        if not isinstance(header, dict) or set(header) != required:
            raise FormatError(f"{path}: bank header must hold exactly {sorted(required)}")
        n = int(header["sample_count"])
        views = int(header["views"])
        dim_f = int(header["dim_feature"])
        dim_n = int(header["dim_neural"])
        levels = [int(l) for l in header["kernel_levels"]]
        per_sample = len(levels) * views * dim_f + dim_n
        payload = fh.read()
    expected_bytes = n * per_sample * 4
    if len(payload) != expected_bytes:
        raise FormatError(
            f"{path}: payload has {len(payload)} bytes, expected {expected_bytes}"
        )
    flat = np.frombuffer(payload, dtype="<f4").reshape(n, per_sample)
    feat_block = flat[:, : len(levels) * views * dim_f].reshape(n, len(levels), views, dim_f)
    features = {level: np.ascontiguousarray(feat_block[:, j]) for j, level in enumerate(levels)}
    neural = np.ascontiguousarray(flat[:, len(levels) * views * dim_f :])
    bank = EmbeddingBank(
        tag=str(header["tag"]),
        views=views,
        dim_feature=dim_f,
        dim_neural=dim_n,
        kernel_levels=levels,
        features=features,
        neural=neural,
        labels=np.asarray(header["labels"], dtype=np.int64),
        splits=[str(s) for s in header["splits"]],
    )
    return bank.validate()


def select_kernel_level(levels, kernel: int) -> int:
    """Nearest stored level to the requested kernel; ties resolve upward."""
    if len(levels) == 0:
        raise ValueError("no kernel levels to select from")
    best = None
    for level in levels:
        distance = abs(int(kernel) - int(level))
        if best is None or distance < best[0] or (distance == best[0] and level > best[1]):
            best = (distance, int(level))
    return best[1]


class SyntheticProvider:
    """Builds the enabled views of a sample's image and encodes them."""

    def __init__(self, transforms: TransformConfig, views: ViewsConfig, dim: int, seed: int):
        if views.count < 1:
            raise ValueError("at least one view must be enabled")
        self.transforms = transforms
        self.view_names = views.enabled()
        self.encoder = SyntheticEncoder(dim, seed)

    @property
    def views(self) -> int:
        return len(self.view_names)

    @property
    def dim_feature(self) -> int:
        return self.encoder.dim

    def view_image(self, name: str, image: np.ndarray, kernel: int, noise_seed: int) -> np.ndarray:
        t = self.transforms
        if name == "identity":
            return image
        if name == "foveated":
            params = FoveationParams(
                center=t.center, gamma=t.gamma,
                kernel_size=kernel, perturbation=t.perturbation,
            )
            return foveate(image, params)
        if name == "noise":
            return add_noise(image, t.noise_sigma, noise_seed)
        if name == "lowres":
            return resample(image, t.scale_low, "bilinear")
        if name == "mosaic":
            return resample(image, t.scale_mosaic, "nearest")
        raise ValueError(f"unknown view {name!r}")

    def view_feature(self, name: str, image: np.ndarray, kernel: int, noise_seed: int) -> np.ndarray:
        return self.encoder.encode(self.view_image(name, image, kernel, noise_seed))

    def features(self, sample: SampleRef) -> np.ndarray:
        if sample.image is None:
            raise ValueError(f"sample {sample.index} carries no image pixels")
        return np.stack([
            self.view_feature(name, sample.image, sample.kernel, sample.noise_seed)
            for name in self.view_names
        ])


class BankProvider:
    """Replays precomputed rows; pixels are never touched.

    Requests outside the stored level range clamp to the nearest endpoint
    and bump `level_clamps` so callers can surface the mismatch.
    """

    def __init__(self, bank: EmbeddingBank):
        self.bank = bank
        self.level_clamps = 0

    @property
    def views(self) -> int:
        return self.bank.views

    @property
    def dim_feature(self) -> int:
        return self.bank.dim_feature

    def features(self, sample: SampleRef) -> np.ndarray:
        levels = self.bank.kernel_levels
        if sample.kernel < levels[0] or sample.kernel > levels[-1]:
            self.level_clamps += 1
        level = select_kernel_level(levels, sample.kernel)
        if not 0 <= sample.index < self.bank.sample_count:
            raise ValueError(f"sample index {sample.index} outside the bank")
        return self.bank.features[level][sample.index].astype(np.float64)


def encode_views(provider, sample: SampleRef) -> np.ndarray:
    """Provider dispatch: one (views, dim_feature) row block per sample."""
    return provider.features(sample)
