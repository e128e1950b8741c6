"""Biologically motivated image degradations used to build the view stack.

Images are numpy float64 arrays of shape (channels, height, width) with
values in [0, 1]. Conventions committed here, relied on by the tests:

* Gaussian blur pads with edge-repeating reflection (numpy ``symmetric``,
  scipy.ndimage ``reflect``). With a normalized symmetric kernel this
  boundary preserves constants and the total brightness exactly.
* The blur width is tied to the kernel size by
  ``sigma = 0.3 * ((k - 1) / 2 - 1) + 0.8``, the convention mainstream
  image libraries use when only a size is given.
* Resampling maps destination pixel centres through a top-left-aligned
  half-pixel-centre grid: ``src = (dst + 0.5) * (in/out) - 0.5``.
  Nearest-neighbour rounds halves up (ties go to the larger index);
  bilinear clamps source coordinates to the valid range at the borders.
* Randomness comes from numpy's PCG64 (``np.random.default_rng``) seeded
  explicitly, so every transform is a pure function of (inputs, seed).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

__all__ = [
    "FoveationParams",
    "ViewParams",
    "foveation_mask",
    "gaussian_blur",
    "gaussian_kernel",
    "foveate",
    "add_noise",
    "resample",
    "build_view_stack",
]


@dataclass(frozen=True)
class FoveationParams:
    """Parameters of the foveated degradation.

    center is a (row, col) pixel coordinate; None selects the image centre
    (height // 2, width // 2). kernel_size is the current blur kernel k and
    perturbation is the even step c the regulator applies to k.
    """

    center: tuple[int, int] | None = None
    gamma: float = 1.0
    kernel_size: int = 75
    perturbation: int = 6

    def __post_init__(self):
        if not np.isfinite(self.gamma) or self.gamma <= 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        _check_kernel_size(self.kernel_size)
        if self.perturbation < 2 or self.perturbation % 2 != 0:
            raise ValueError(
                f"perturbation must be an even positive integer, got {self.perturbation}"
            )


@dataclass(frozen=True)
class ViewParams:
    """Parameters of the non-foveated views.

    noise_sigma is the noise standard deviation on the 0..255 intensity
    scale. Scales are output/input size ratios in (0, 1].
    """

    noise_sigma: float = 10.0
    scale_low: float = 0.5
    scale_mosaic: float = 1.0 / 16.0
    noise_seed: int = 0

    def __post_init__(self):
        if not np.isfinite(self.noise_sigma) or self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        for name in ("scale_low", "scale_mosaic"):
            value = getattr(self, name)
            if not 0.0 < value <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1], got {value}")


def _check_kernel_size(k: int) -> None:
    if k < 1 or k % 2 == 0:
        raise ValueError(f"kernel size must be an odd integer >= 1, got {k}")


def _check_image(image: np.ndarray) -> np.ndarray:
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] < 1 or arr.shape[1] < 1 or arr.shape[2] < 1:
        raise ValueError(f"expected a (C, H, W) image, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("image contains non-finite values")
    return arr


def foveation_mask(
    height: int,
    width: int,
    center: tuple[int, int],
    gamma: float,
) -> np.ndarray:
    """Exponential acuity falloff exp(-gamma * d / D) on an H x W grid.

    d is the Euclidean distance from the centre pixel and D the largest
    such distance on the grid, so values lie in (0, 1] with exactly 1 at
    the centre. The mask is 90-degree rotation symmetric whenever the
    focus sits at the middle of a square grid with odd side.
    """
    if height < 1 or width < 1:
        raise ValueError(f"mask dimensions must be >= 1, got {height}x{width}")
    row, col = center
    if not (0 <= row < height and 0 <= col < width):
        raise ValueError(f"center {center} outside a {height}x{width} grid")
    if not np.isfinite(gamma) or gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    rows = np.arange(height, dtype=np.float64)[:, None] - float(row)
    cols = np.arange(width, dtype=np.float64)[None, :] - float(col)
    dist = np.hypot(rows, cols)
    # farthest pixel from the focus is always one of the four corners
    corners = [
        np.hypot(float(r - row), float(c - col))
        for r in (0, height - 1)
        for c in (0, width - 1)
    ]
    farthest = max(corners)
    if farthest == 0.0:  # 1x1 grid: the focus is the whole image
        return np.ones((height, width))
    return np.exp(-gamma * dist / farthest)


def gaussian_kernel(kernel_size: int) -> np.ndarray:
    """Normalized 1-D Gaussian taps for the committed sigma(k) rule."""
    _check_kernel_size(kernel_size)
    sigma = 0.3 * ((kernel_size - 1) / 2.0 - 1.0) + 0.8
    offsets = np.arange(kernel_size, dtype=np.float64) - (kernel_size - 1) / 2.0
    taps = np.exp(-(offsets**2) / (2.0 * sigma * sigma))
    return taps / taps.sum()


def gaussian_blur(image: np.ndarray, kernel_size: int) -> np.ndarray:
    """Separable Gaussian blur with edge-repeating reflect padding.

    kernel_size = 1 is the identity. The output is clipped to [0, 1],
    which is a no-op up to roundoff because blurring is a convex
    combination of in-range values.
    """
    arr = _check_image(image)
    _check_kernel_size(kernel_size)
    if kernel_size == 1:
        return arr.copy()
    taps = gaussian_kernel(kernel_size)
    out = ndimage.correlate1d(arr, taps, axis=1, mode="reflect")
    out = ndimage.correlate1d(out, taps, axis=2, mode="reflect")
    return np.clip(out, 0.0, 1.0)


def foveate(image: np.ndarray, params: FoveationParams) -> np.ndarray:
    """Blend the image with its blurred copy under the acuity mask.

    output = M * image + (1 - M) * blur_k(image), elementwise per channel.
    Linear in the image (blur and blend are linear maps; the final clip
    never binds for in-range inputs).
    """
    arr = _check_image(image)
    _, height, width = arr.shape
    center = params.center if params.center is not None else (height // 2, width // 2)
    mask = foveation_mask(height, width, center, params.gamma)
    blurred = gaussian_blur(arr, params.kernel_size)
    out = mask[None, :, :] * arr + (1.0 - mask[None, :, :]) * blurred
    return np.clip(out, 0.0, 1.0)


def add_noise(image: np.ndarray, sigma: float, seed: int) -> np.ndarray:
    """Additive Gaussian pixel noise, sigma given on the 0..255 scale.

    output = clip(image + n / 255) with n ~ N(0, sigma^2) drawn from
    PCG64 seeded with `seed`. sigma = 0 returns the input unchanged.
    """
    arr = _check_image(image)
    if not np.isfinite(sigma) or sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0.0:
        return arr.copy()
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(arr.shape) * (sigma / 255.0)
    return np.clip(arr + noise, 0.0, 1.0)


def _axis_sources(n_src: int, n_dst: int) -> np.ndarray:
    """Source coordinates of destination pixel centres along one axis."""
    return (np.arange(n_dst, dtype=np.float64) + 0.5) * (n_src / n_dst) - 0.5


def _gather_nearest(arr: np.ndarray, axis: int, n_dst: int) -> np.ndarray:
    n_src = arr.shape[axis]
    src = _axis_sources(n_src, n_dst)
    idx = np.clip(np.floor(src + 0.5).astype(np.int64), 0, n_src - 1)
    return np.take(arr, idx, axis=axis)


def _gather_linear(arr: np.ndarray, axis: int, n_dst: int) -> np.ndarray:
    n_src = arr.shape[axis]
    src = _axis_sources(n_src, n_dst)
    lo = np.floor(src)
    frac = src - lo
    lo_idx = np.clip(lo.astype(np.int64), 0, n_src - 1)
    hi_idx = np.clip(lo.astype(np.int64) + 1, 0, n_src - 1)
    shape = [1] * arr.ndim
    shape[axis] = n_dst
    weight = frac.reshape(shape)
    a = np.take(arr, lo_idx, axis=axis)
    b = np.take(arr, hi_idx, axis=axis)
    return (1.0 - weight) * a + weight * b


def resample(
    image: np.ndarray,
    scale: float,
    mode: str,
    restore: bool = True,
) -> np.ndarray:
    """Downsample by `scale` and (optionally) resize back to the input size.

    mode is "bilinear" (low-resolution view) or "nearest" (mosaic view).
    Both the shrink and the restore pass use the half-pixel-centre grid
    documented at module level. scale = 1 is an exact identity.
    """
    arr = _check_image(image)
    if not 0.0 < scale <= 1.0:
        raise ValueError(f"scale must lie in (0, 1], got {scale}")
    if mode not in ("bilinear", "nearest"):
        raise ValueError(f"unknown resampling mode {mode!r}")
    _, height, width = arr.shape
    h_small = int(np.floor(height * scale))
    w_small = int(np.floor(width * scale))
    if h_small < 1 or w_small < 1:
        raise ValueError(
            f"scale {scale} collapses a {height}x{width} image below one pixel"
        )
    gather = _gather_nearest if mode == "nearest" else _gather_linear
    small = gather(gather(arr, 1, h_small), 2, w_small)
    if not restore:
        return small
    return gather(gather(small, 1, height), 2, width)


def build_view_stack(
    image: np.ndarray,
    fov_params: FoveationParams,
    view_params: ViewParams,
) -> list[np.ndarray]:
    """The four degraded views in fixed order: foveated, noise, low, mosaic."""
    return [
        foveate(image, fov_params),
        add_noise(image, view_params.noise_sigma, view_params.noise_seed),
        resample(image, view_params.scale_low, "bilinear"),
        resample(image, view_params.scale_mosaic, "nearest"),
    ]
