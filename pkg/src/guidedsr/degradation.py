"""Synthetic blind-SR data: anisotropic Gaussian blur kernels, the
blur-then-subsample degradation, and a procedural toy-image generator.

Draw order inside each sampler is part of the determinism contract and
must not be reordered: kernel = (size, lambda1, lambda2, theta); toy
image = (coarse field, shape count, then per shape kind/geometry/intensity).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import archive
from .autodiff import conv2d_raw
from .errors import ContractError, DimensionError

KERNEL_SIZES = tuple(range(7, 22, 2))  # odd, 7..21
LAMBDA_RANGE = (0.2, 4.0)
KERNEL_EMBED_SIZE = 21  # fixed canvas for estimator targets


@dataclass(frozen=True)
class GaussianKernel:
    """Anisotropic Gaussian tap weights on an odd square grid, unit sum."""

    size: int
    lambda1: float
    lambda2: float
    theta: float
    weights: np.ndarray = field(repr=False)


def kernel_weights(size: int, lambda1: float, lambda2: float, theta: float) -> np.ndarray:
    """w(u) proportional to exp(-u^T Sigma^-1 u / 2) on the centered grid,
    Sigma = R(theta) diag(lambda1, lambda2) R(theta)^T, normalized to sum 1."""
    if size < 1 or size % 2 == 0:
        raise ContractError(f"kernel size must be odd and positive, got {size}")
    if lambda1 <= 0 or lambda2 <= 0:
        raise ContractError("kernel eigenvalues must be positive")
    c = (size - 1) / 2.0
    di = np.arange(size)[:, None] - c
    dj = np.arange(size)[None, :] - c
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    rot = np.array([[cos_t, -sin_t], [sin_t, cos_t]])
    sigma_inv = rot @ np.diag([1.0 / lambda1, 1.0 / lambda2]) @ rot.T
    quad = sigma_inv[0, 0] * di * di + 2.0 * sigma_inv[0, 1] * di * dj + sigma_inv[1, 1] * dj * dj
    w = np.exp(-0.5 * quad)
    total = w.sum()
    if not np.isfinite(total) or total < 1e-9:
        raise ContractError("kernel mass underflow")
    return w / total


def make_kernel(size: int, lambda1: float, lambda2: float, theta: float) -> GaussianKernel:
    return GaussianKernel(size, lambda1, lambda2, theta, kernel_weights(size, lambda1, lambda2, theta))


def sample_kernel(rng: np.random.Generator) -> GaussianKernel:
    """Random kernel: size uniform over {7,9,...,21}, eigenvalues
    U(0.2, 4), orientation U(0, pi)."""
    size = int(KERNEL_SIZES[rng.integers(0, len(KERNEL_SIZES))])
    lambda1 = float(rng.uniform(*LAMBDA_RANGE))
    lambda2 = float(rng.uniform(*LAMBDA_RANGE))
    theta = float(rng.uniform(0.0, np.pi))
    return make_kernel(size, lambda1, lambda2, theta)


def embed_kernel(kernel: GaussianKernel, canvas: int = KERNEL_EMBED_SIZE) -> np.ndarray:
    """Zero-pad kernel weights onto the fixed odd canvas, centered."""
    k = kernel.size
    if k > canvas:
        raise DimensionError(f"kernel size {k} exceeds canvas {canvas}")
    off = (canvas - k) // 2
    out = np.zeros((canvas, canvas))
    out[off : off + k, off : off + k] = kernel.weights
    return out


def degrade(hr: np.ndarray, kernel, scale: int) -> np.ndarray:
    """Blur with the kernel (zero padding (k-1)/2) then subsample by the
    scale factor; the arithmetic is the shared strided conv, so it agrees
    with the dense operator matrix."""
    weights = np.asarray(getattr(kernel, "weights", kernel), dtype=np.float64)
    if weights.ndim != 2 or weights.shape[0] != weights.shape[1] or weights.shape[0] % 2 == 0:
        raise DimensionError(f"degrade: kernel must be odd square, got {weights.shape}")
    x = np.asarray(hr)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    if x.ndim != 3:
        raise DimensionError(f"degrade: expected (C, H, W), got {x.shape}")
    h, w = x.shape[1:]
    if scale < 1 or h % scale or w % scale:
        raise DimensionError(f"degrade: dims {h}x{w} not divisible by scale {scale}")
    k = weights.shape[0]
    out = conv2d_raw(
        x.astype(np.float64)[:, None], weights[None, None], stride=scale, pad=(k - 1) // 2
    )[:, 0]
    out = out.astype(x.dtype, copy=False)
    return out[0] if squeeze else out


def bilinear_upsample(field: np.ndarray, dims) -> np.ndarray:
    """Align-corners bilinear interpolation of a small 2-d field."""
    fh, fw = field.shape
    h, w = dims
    yi = np.linspace(0.0, fh - 1.0, h) if h > 1 else np.zeros(1)
    xi = np.linspace(0.0, fw - 1.0, w) if w > 1 else np.zeros(1)
    y0 = np.clip(np.floor(yi).astype(int), 0, fh - 1)
    x0 = np.clip(np.floor(xi).astype(int), 0, fw - 1)
    y1 = np.minimum(y0 + 1, fh - 1)
    x1 = np.minimum(x0 + 1, fw - 1)
    wy = (yi - y0)[:, None]
    wx = (xi - x0)[None, :]
    top = field[np.ix_(y0, x0)] * (1 - wx) + field[np.ix_(y0, x1)] * wx
    bot = field[np.ix_(y1, x0)] * (1 - wx) + field[np.ix_(y1, x1)] * wx
    return top * (1 - wy) + bot * wy


def generate_toy_hr(rng: np.random.Generator, dims=(32, 32), max_shapes: int = 4) -> np.ndarray:
    """Procedural HR image in [0,1]: a bilinearly upsampled 4x4 random
    field with 1..max_shapes anti-aliased rectangles/discs composited on
    top. Returns (1, H, W) float32."""
    h, w = (int(v) for v in dims)
    if h < 2 or w < 2:
        raise DimensionError(f"toy image dims too small: {dims}")
    img = bilinear_upsample(rng.random((4, 4)), (h, w))
    ii = np.arange(h, dtype=np.float64)[:, None]
    jj = np.arange(w, dtype=np.float64)[None, :]
    n_shapes = 0 if max_shapes == 0 else int(rng.integers(1, max_shapes + 1))
    for _ in range(n_shapes):
        kind = int(rng.integers(0, 2))
        if kind == 0:  # axis-aligned rectangle, 1px feathered edges
            ci = rng.uniform(0, h - 1)
            cj = rng.uniform(0, w - 1)
            half_i = rng.uniform(1.0, max(1.0, h / 4))
            half_j = rng.uniform(1.0, max(1.0, w / 4))
            cov_i = np.clip(np.minimum(ii - (ci - half_i), (ci + half_i) - ii) + 0.5, 0.0, 1.0)
            cov_j = np.clip(np.minimum(jj - (cj - half_j), (cj + half_j) - jj) + 0.5, 0.0, 1.0)
            cov = cov_i * cov_j
        else:  # disc, 1px feathered rim
            ci = rng.uniform(0, h - 1)
            cj = rng.uniform(0, w - 1)
            radius = rng.uniform(1.5, max(1.5, min(h, w) / 4))
            dist = np.sqrt((ii - ci) ** 2 + (jj - cj) ** 2)
            cov = np.clip(radius - dist + 0.5, 0.0, 1.0)
        intensity = rng.random()
        img = img * (1.0 - cov) + intensity * cov
    return np.clip(img, 0.0, 1.0).astype(np.float32)[None]


@dataclass
class PairedDataset:
    """HR/LR pairs with their ground-truth kernels; lr[i] was produced as
    degrade(hr[i], kernels[i], scale) at construction time."""

    hr: np.ndarray  # (N, C, H, W) float32
    lr: np.ndarray  # (N, C, H/s, W/s) float32
    kernels: list
    scale: int

    def __len__(self) -> int:
        return self.hr.shape[0]


def synth_dataset(seed: int, n: int, scale: int, dims=(32, 32), max_shapes: int = 4) -> PairedDataset:
    """Deterministic dataset: pair i is drawn from its own stream derived
    from (seed, i), so any prefix of the dataset is stable under n."""
    h, w = (int(v) for v in dims)
    if n < 0:
        raise ContractError(f"dataset size must be >= 0, got {n}")
    hrs, lrs, kernels = [], [], []
    for i in range(n):
        rng = np.random.default_rng([int(seed), i])
        hr = generate_toy_hr(rng, (h, w), max_shapes=max_shapes)
        kernel = sample_kernel(rng)
        lr = degrade(hr, kernel, scale)
        hrs.append(hr)
        lrs.append(lr)
        kernels.append(kernel)
    if n:
        hr_arr = np.stack(hrs)
        lr_arr = np.stack(lrs)
    else:
        hr_arr = np.zeros((0, 1, h, w), dtype=np.float32)
        lr_arr = np.zeros((0, 1, h // scale, w // scale), dtype=np.float32)
    return PairedDataset(hr=hr_arr, lr=lr_arr, kernels=kernels, scale=scale)


def save_dataset(path, ds: PairedDataset) -> None:
    entries, meta = {}, {
        "kind": "paired-dataset",
        "count": len(ds),
        "scale": ds.scale,
        "hr_h": ds.hr.shape[2] if len(ds) else 0,
        "hr_w": ds.hr.shape[3] if len(ds) else 0,
    }
    if len(ds):
        entries["hr"] = ds.hr
        entries["lr"] = ds.lr
    for i, k in enumerate(ds.kernels):
        name = f"kernel/{i:04d}"
        entries[name] = k.weights
        meta[f"{name}.size"] = k.size
        meta[f"{name}.lambda1"] = repr(k.lambda1)
        meta[f"{name}.lambda2"] = repr(k.lambda2)
        meta[f"{name}.theta"] = repr(k.theta)
    archive.write_archive(path, entries, meta)


def load_dataset(path) -> PairedDataset:
    entries, meta = archive.read_archive(path)
    if meta.get("kind") != "paired-dataset":
        raise ContractError(f"{path}: archive does not hold a paired dataset")
    count = int(meta["count"])
    scale = int(meta["scale"])
    kernels = []
    for i in range(count):
        name = f"kernel/{i:04d}"
        kernels.append(
            GaussianKernel(
                size=int(meta[f"{name}.size"]),
                lambda1=float(meta[f"{name}.lambda1"]),
                lambda2=float(meta[f"{name}.lambda2"]),
                theta=float(meta[f"{name}.theta"]),
                weights=entries[name].astype(np.float64),
            )
        )
    if count:
        hr, lr = entries["hr"], entries["lr"]
    else:
        hr = np.zeros((0, 1, 0, 0), dtype=np.float32)
        lr = np.zeros((0, 1, 0, 0), dtype=np.float32)
    return PairedDataset(hr=hr, lr=lr, kernels=kernels, scale=scale)
