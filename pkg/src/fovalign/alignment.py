"""Symmetric contrastive alignment between neural and fused visual features.

The loss is the symmetric InfoNCE over cosine similarities:

    Z = cos(F_N, F_latent) / tau
    loss = (CE(rows of Z, diagonal) + CE(rows of Z^T, diagonal)) / 2

tau is trained in log-space and clamped to [temperature_min,
temperature_max] after every optimizer step. Pairwise dots (and row
norms) are reduced with exactly rounded summation, which makes
cos(A, B) the bit-exact transpose of cos(B, A); swapping the two
modalities therefore reproduces the identical loss value, not merely an
approximately equal one.

All gradients are analytic (see `loss_and_gradients`); the optimizer is
AdamW with decoupled weight decay applied to weight matrices only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import fusion, nn
from .config import RunConfig
from .errors import ConfigError, NumericError
from .providers import SampleRef, SyntheticProvider, derive_noise_seed
from .regulator import BlurSchedule, confidence_bounds

__all__ = [
    "cosine_similarity_matrix",
    "symmetric_contrastive_loss",
    "loss_and_gradients",
    "AdamW",
    "EpochReport",
    "Trainer",
    "init_parameters",
    "encode_pairs",
]

NORM_FLOOR = 1e-12


def _exact_dots(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """All pairwise dot products, each exactly rounded (order-free)."""
    out = np.empty((a.shape[0], b.shape[0]))
    for i in range(a.shape[0]):
        prods = a[i] * b
        for j in range(b.shape[0]):
            out[i, j] = math.fsum(prods[j])
    return out


def _exact_norms(a: np.ndarray) -> np.ndarray:
    out = np.empty(a.shape[0])
    for i in range(a.shape[0]):
        out[i] = math.sqrt(math.fsum(a[i] * a[i]))
    return out


def cosine_similarity_matrix(a: np.ndarray, b: np.ndarray, floor: float = NORM_FLOOR) -> np.ndarray:
    """Pairwise cosine similarities with norms floored at `floor`."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError(f"incompatible feature shapes {a.shape} and {b.shape}")
    na = np.maximum(_exact_norms(a), floor)
    nb = np.maximum(_exact_norms(b), floor)
    return _exact_dots(a, b) / (na[:, None] * nb[None, :])


def _row_cross_entropy(z: np.ndarray) -> float:
    """Mean over rows of -log softmax(z_i)[i] (diagonal targets)."""
    z = np.ascontiguousarray(z)
    shift = z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z - shift).sum(axis=1)) + shift[:, 0]
    return float(np.mean(lse - np.diagonal(z)))


def symmetric_contrastive_loss(f_n: np.ndarray, f_latent: np.ndarray, tau: float):
    """Return (loss, logits) where logits = cos(f_n, f_latent) / tau.

    Requires a square batch of at least two pairs; the i-th row of each
    matrix is the positive partner of the i-th row of the other.
    """
    f_n = np.asarray(f_n, dtype=np.float64)
    f_latent = np.asarray(f_latent, dtype=np.float64)
    if f_n.shape != f_latent.shape:
        raise ValueError(f"feature shapes differ: {f_n.shape} vs {f_latent.shape}")
    if f_n.shape[0] < 2:
        raise ValueError(f"contrastive batch needs >= 2 pairs, got {f_n.shape[0]}")
    if not np.isfinite(tau) or tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    logits = cosine_similarity_matrix(f_n, f_latent) / tau
    loss = 0.5 * (_row_cross_entropy(logits) + _row_cross_entropy(logits.T))
    return loss, logits


def loss_and_gradients(f_n: np.ndarray, f_latent: np.ndarray, log_tau: float):
    """Loss plus analytic gradients wrt both feature matrices and log(tau).

    Returns (loss, logits, d_f_n, d_f_latent, d_log_tau).
    """
    f_n = np.asarray(f_n, dtype=np.float64)
    f_latent = np.asarray(f_latent, dtype=np.float64)
    tau = math.exp(float(log_tau))
    loss, logits = symmetric_contrastive_loss(f_n, f_latent, tau)

    batch = f_n.shape[0]
    eye = np.eye(batch)
    p_row = nn.softmax(logits, axis=1)
    p_col = nn.softmax(logits, axis=0)
    d_logits = ((p_row - eye) + (p_col - eye)) / (2.0 * batch)
    d_log_tau = -float(np.sum(d_logits * logits))

    d_cos = d_logits / tau
    na = np.maximum(_exact_norms(f_n), NORM_FLOOR)
    nb = np.maximum(_exact_norms(f_latent), NORM_FLOOR)
    u = f_n / na[:, None]
    v = f_latent / nb[:, None]
    cos = logits * tau
    # below the norm floor the normalizer is constant, so the radial
    # correction term disappears
    live_a = (na > NORM_FLOOR).astype(np.float64)[:, None]
    live_b = (nb > NORM_FLOOR).astype(np.float64)[:, None]
    row_dot = np.sum(d_cos * cos, axis=1, keepdims=True)
    col_dot = np.sum(d_cos * cos, axis=0)[:, None]
    d_f_n = (d_cos @ v - live_a * u * row_dot) / na[:, None]
    d_f_latent = (d_cos.T @ u - live_b * v * col_dot) / nb[:, None]
    return loss, logits, d_f_n, d_f_latent, d_log_tau


class AdamW:
    """Adam with decoupled weight decay. Decay touches only weight
    matrices (ndim >= 2); vectors, gains and the temperature are exempt."""

    def __init__(self, params: dict, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, weight_decay: float = 0.0):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(p) for k, p in params.items()}
        self.v = {k: np.zeros_like(p) for k, p in params.items()}

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        bias1 = 1.0 - self.beta1**self.t
        bias2 = 1.0 - self.beta2**self.t
        for name in sorted(params):
            g = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * (g * g)
            update = (self.m[name] / bias1) / (np.sqrt(self.v[name] / bias2) + self.eps)
            if self.weight_decay and params[name].ndim >= 2:
                update = update + self.weight_decay * params[name]
            params[name] = params[name] - self.lr * update


@dataclass(frozen=True)
class EpochReport:
    epoch: int
    loss: float
    mean_smoothed: float
    kernel_min: int
    kernel_mean: float
    kernel_max: int
    t_lower: float
    t_upper: float
    kernel_hist: dict[int, int]


def init_parameters(config: RunConfig, dim_neural: int) -> dict[str, np.ndarray]:
    """All trainable arrays: fusion stack, neural-side affine encoder and
    the log-temperature, drawn in a fixed order from one seeded stream."""
    rng = np.random.default_rng(np.random.SeedSequence((config.training.seed, 0)))
    params = fusion.init_fusion_params(config.fusion, config.provider.dim_feature, rng)
    params["enc_w"] = rng.standard_normal((dim_neural, config.fusion.dim_latent)) / np.sqrt(dim_neural)
    params["enc_b"] = np.zeros(config.fusion.dim_latent)
    params["log_tau"] = np.array(math.log(config.training.temperature_init))
    return params


class Trainer:
    """Owns parameters, optimizer state, the blur schedule and the
    per-view feature caches for one training run."""

    def __init__(self, config: RunConfig, dataset, provider):
        self.config = config
        self.dataset = dataset
        self.provider = provider
        self.train_ids = np.asarray(dataset.train_indices(), dtype=np.int64)
        if len(self.train_ids) < config.training.batch_size:
            raise ConfigError(
                f"training needs at least one full batch: "
                f"{len(self.train_ids)} samples < batch_size {config.training.batch_size}"
            )
        self.params = init_parameters(config, dataset.dim_neural)
        tr = config.training
        self.optimizer = AdamW(
            self.params, lr=tr.learning_rate, beta1=tr.adam_beta1,
            beta2=tr.adam_beta2, eps=tr.adam_eps, weight_decay=tr.weight_decay,
        )
        self.schedule = BlurSchedule(
            sample_ids=self.train_ids,
            kernel_init=config.transforms.kernel_size,
            momentum=config.regulator.momentum,
            step=config.transforms.perturbation,
            kernel_min=config.regulator.kernel_min,
            kernel_max=config.kernel_max,
        )
        self._shuffle_rng = np.random.default_rng(
            np.random.SeedSequence((tr.seed, 1))
        )
        self._static_rows: dict[tuple[int, str], np.ndarray] = {}
        self._fov_rows: dict[tuple[int, int], np.ndarray] = {}
        self.reports: list[EpochReport] = []

    # -- feature assembly ------------------------------------------------

    def _sample_features(self, index: int, epoch: int) -> np.ndarray:
        kernel = int(self.schedule.kernels_of([index])[0])
        if not isinstance(self.provider, SyntheticProvider):
            return self.provider.features(SampleRef(index=index, kernel=kernel))
        image = self.dataset.images[index]
        noise_seed = derive_noise_seed(self.config.training.seed, index, epoch)
        rows = []
        for name in self.provider.view_names:
            if name == "noise":
                rows.append(self.provider.view_feature(name, image, kernel, noise_seed))
            elif name == "foveated":
                key = (index, kernel)
                if key not in self._fov_rows:
                    self._fov_rows[key] = self.provider.view_feature(name, image, kernel, 0)
                rows.append(self._fov_rows[key])
            else:
                key = (index, name)
                if key not in self._static_rows:
                    self._static_rows[key] = self.provider.view_feature(name, image, kernel, 0)
                rows.append(self._static_rows[key])
        return np.stack(rows)

    def _batch_features(self, ids: np.ndarray, epoch: int) -> np.ndarray:
        return np.stack([self._sample_features(int(i), epoch) for i in ids])

    # -- training --------------------------------------------------------

    def _regulation_active(self, epoch: int) -> bool:
        return (
            self.config.regulator.enabled
            and self.config.views.foveated
            and epoch >= self.config.regulator.start_epoch
        )

    def train_epoch(self, epoch: int) -> EpochReport:
        cfg = self.config
        batch_size = cfg.training.batch_size
        order = self._shuffle_rng.permutation(self.train_ids)
        n_batches = len(order) // batch_size  # the trailing partial batch is dropped
        losses, lowers, uppers = [], [], []
        for b in range(n_batches):
            ids = order[b * batch_size : (b + 1) * batch_size]
            feats = self._batch_features(ids, epoch)
            dropout_rng = np.random.default_rng(
                np.random.SeedSequence((cfg.training.seed, 2, epoch, b))
            )
            latent, cache = fusion.fusion_forward(
                feats, self.params, cfg.fusion, train_mode=True, dropout_rng=dropout_rng
            )
            neural_in = self.dataset.neural[ids]
            f_n = nn.affine_forward(neural_in, self.params["enc_w"], self.params["enc_b"])
            loss, logits, d_f_n, d_latent, d_log_tau = loss_and_gradients(
                f_n, latent, float(self.params["log_tau"])
            )
            if not math.isfinite(loss):
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, batch {b}",
                    state=self.diagnostics(epoch, b, loss),
                )
            grads = fusion.fusion_backward(d_latent, cache, self.params, cfg.fusion)
            _, grads["enc_w"], grads["enc_b"] = nn.affine_backward(
                d_f_n, neural_in, self.params["enc_w"]
            )
            grads["log_tau"] = np.array(d_log_tau)
            self.optimizer.step(self.params, grads)
            self.params["log_tau"] = np.clip(
                self.params["log_tau"],
                math.log(cfg.training.temperature_min),
                math.log(cfg.training.temperature_max),
            )
            smoothed = self.schedule.update_smoothed(ids, np.diagonal(logits))
            lower, upper = confidence_bounds(smoothed, cfg.regulator.z_value)
            if self._regulation_active(epoch):
                self.schedule.update_kernels(ids, (lower, upper))
            losses.append(loss)
            lowers.append(lower)
            uppers.append(upper)
        kernels = self.schedule.kernels_of(self.train_ids)
        report = EpochReport(
            epoch=epoch,
            loss=float(np.mean(losses)),
            mean_smoothed=self.schedule.mean_smoothed(),
            kernel_min=int(kernels.min()),
            kernel_mean=float(kernels.mean()),
            kernel_max=int(kernels.max()),
            t_lower=float(np.mean(lowers)),
            t_upper=float(np.mean(uppers)),
            kernel_hist=self.schedule.kernel_histogram(),
        )
        self.reports.append(report)
        return report

    def train(self) -> list[EpochReport]:
        for epoch in range(self.config.training.epochs):
            self.train_epoch(epoch)
        return self.reports

    def diagnostics(self, epoch: int, batch: int, loss: float) -> dict:
        return {
            "epoch": epoch,
            "batch": batch,
            "loss": repr(loss),
            "temperature": math.exp(float(self.params["log_tau"])),
            "param_norms": {
                k: float(np.linalg.norm(p)) for k, p in sorted(self.params.items())
            },
            "kernel_hist": {str(k): v for k, v in self.schedule.kernel_histogram().items()},
        }


def encode_pairs(
    config: RunConfig,
    dataset,
    provider,
    params: dict,
    indices,
    kernel: int,
    noise_base_seed: int,
):
    """Deterministic eval-mode embeddings for the given samples.

    Returns (f_n, f_latent). Views are built at the fixed `kernel`; the
    noise view derives its seed from (noise_base_seed, sample_index, 0).
    """
    rows = []
    for index in indices:
        index = int(index)
        image = dataset.images[index] if dataset.images is not None else None
        sample = SampleRef(
            index=index,
            kernel=kernel,
            noise_seed=derive_noise_seed(noise_base_seed, index, 0),
            image=image,
        )
        rows.append(provider.features(sample))
    feats = np.stack(rows)
    latent, _ = fusion.fusion_forward(feats, params, config.fusion, train_mode=False)
    f_n = nn.affine_forward(
        np.asarray(dataset.neural)[np.asarray(indices, dtype=np.int64)],
        params["enc_w"],
        params["enc_b"],
    )
    return f_n, latent
