"""Dense linear operators for degradations, with SVD pseudo-inverses and
range/null-space rectification.

An operator stores its per-channel spatial matrix (d x D, float64); on
multi-channel images it acts blockwise with the same matrix per channel,
images vectorizing channel-major. The SVD and pseudo-inverse are computed
eagerly at construction and never mutated afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import archive
from .autodiff import avgpool_raw, conv2d_raw, upsample_nearest_raw
from .errors import ContractError, DimensionError, NumericalError

SV_CUTOFF_REL = 1e-10


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD: matrix == u @ diag(sigma) @ vt, sigma descending."""

    u: np.ndarray
    sigma: np.ndarray
    vt: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.sigma) @ self.vt


def svd(matrix: np.ndarray) -> SvdResult:
    """Thin SVD of a 2-d real matrix (float64)."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise DimensionError(f"svd: expected a 2-d matrix, got shape {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise NumericalError("svd: input matrix contains non-finite values")
    try:
        u, s, vt = np.linalg.svd(matrix, full_matrices=False)
    except np.linalg.LinAlgError as e:
        raise NumericalError(f"svd failed to converge on {matrix.shape} matrix: {e}") from e
    return SvdResult(u=u, sigma=s, vt=vt)


def pseudo_inverse(svd_result: SvdResult, rel_cutoff: float = SV_CUTOFF_REL) -> np.ndarray:
    """Moore-Penrose inverse from an SVD; singular values <= rel_cutoff
    times the largest are treated as zero."""
    s = svd_result.sigma
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((svd_result.vt.shape[1], svd_result.u.shape[0]))
    inv = np.zeros_like(s)
    keep = s > rel_cutoff * s[0]
    inv[keep] = 1.0 / s[keep]
    return (svd_result.vt.T * inv) @ svd_result.u.T


class LinearOperator:
    """Degradation operator with cached SVD/pseudo-inverse.

    structure is one of 'avgpool', 'conv-stride', 'dense'; the first two
    carry fast structured apply paths that the dense matrix must agree with.
    """

    def __init__(self, matrix, hr_dims, lr_dims, structure="dense", scale=None, kernel=None):
        self.matrix = np.asarray(matrix, dtype=np.float64)
        self.hr_dims = tuple(int(v) for v in hr_dims)
        self.lr_dims = tuple(int(v) for v in lr_dims)
        self.structure = structure
        self.scale = scale
        self.kernel = None if kernel is None else np.asarray(kernel, dtype=np.float64)
        d, cap = self.matrix.shape
        if d != self.lr_dims[0] * self.lr_dims[1] or cap != self.hr_dims[0] * self.hr_dims[1]:
            raise DimensionError(
                f"operator matrix {self.matrix.shape} does not match dims {self.lr_dims} <- {self.hr_dims}"
            )
        if structure not in ("avgpool", "conv-stride", "dense"):
            raise ContractError(f"unknown operator structure {structure!r}")
        self.svd = svd(self.matrix)
        self.pinv = pseudo_inverse(self.svd)

    @property
    def d(self) -> int:
        return self.matrix.shape[0]

    @property
    def D(self) -> int:
        return self.matrix.shape[1]

    def _check_image(self, x, dims, what):
        x = np.asarray(x)
        squeeze = x.ndim == 2
        if squeeze:
            x = x[None]
        if x.ndim != 3 or x.shape[1:] != dims:
            raise DimensionError(f"{what}: expected (C, {dims[0]}, {dims[1]}), got {x.shape}")
        return x, squeeze

    def apply(self, x: np.ndarray) -> np.ndarray:
        """A @ x on a (C, H, W) image, via the structured fast path."""
        x, squeeze = self._check_image(x, self.hr_dims, "apply")
        if self.structure == "avgpool":
            out = avgpool_raw(x[None], self.scale)[0]
        elif self.structure == "conv-stride":
            k = self.kernel.shape[0]
            w = self.kernel[None, None].astype(x.dtype, copy=False)
            out = conv2d_raw(x[:, None], w, stride=self.scale, pad=(k - 1) // 2)[:, 0]
        else:
            out = self.apply_dense(x)
        return out[0] if squeeze else out

    def apply_dense(self, x: np.ndarray) -> np.ndarray:
        """A @ x through the explicit matrix (reference route)."""
        x, squeeze = self._check_image(x, self.hr_dims, "apply_dense")
        flat = x.reshape(x.shape[0], -1)
        out = (flat @ self.matrix.T).astype(x.dtype).reshape(x.shape[0], *self.lr_dims)
        return out[0] if squeeze else out

    def pinv_apply(self, y: np.ndarray) -> np.ndarray:
        """A^+ @ y on a (C, h, w) low-resolution image."""
        y, squeeze = self._check_image(y, self.lr_dims, "pinv_apply")
        if self.structure == "avgpool":
            out = upsample_nearest_raw(y[None], self.scale)[0]
        else:
            flat = y.reshape(y.shape[0], -1)
            out = (flat @ self.pinv.T).astype(y.dtype).reshape(y.shape[0], *self.hr_dims)
        return out[0] if squeeze else out


def build_avgpool_operator(scale: int, hr_dims) -> LinearOperator:
    """Block-mean downsampling by an integer factor."""
    h, w = (int(v) for v in hr_dims)
    if scale < 1 or h % scale or w % scale:
        raise DimensionError(f"avgpool: dims {h}x{w} not divisible by scale {scale}")
    ph = np.kron(np.eye(h // scale), np.full((1, scale), 1.0 / scale))
    pw = np.kron(np.eye(w // scale), np.full((1, scale), 1.0 / scale))
    matrix = np.kron(ph, pw)
    return LinearOperator(
        matrix, (h, w), (h // scale, w // scale), structure="avgpool", scale=scale
    )


def build_conv_stride_operator(kernel, scale: int, hr_dims) -> LinearOperator:
    """Blur-then-subsample: kernel cross-correlation with zero padding
    (k-1)/2 and stride equal to the scale factor."""
    weights = np.asarray(getattr(kernel, "weights", kernel), dtype=np.float64)
    if weights.ndim != 2 or weights.shape[0] != weights.shape[1]:
        raise DimensionError(f"conv-stride: kernel must be square 2-d, got {weights.shape}")
    k = weights.shape[0]
    if k % 2 == 0:
        raise DimensionError(f"conv-stride: kernel size must be odd, got {k}")
    h, w = (int(v) for v in hr_dims)
    if scale < 1 or h % scale or w % scale:
        raise DimensionError(f"conv-stride: dims {h}x{w} not divisible by scale {scale}")
    pad = (k - 1) // 2
    ho, wo = h // scale, w // scale

    matrix = np.zeros((ho * wo, h * w))
    oi, oj = np.meshgrid(np.arange(ho), np.arange(wo), indexing="ij")
    rows = (oi * wo + oj).ravel()
    for u in range(k):
        for v in range(k):
            ii = (oi * scale + u - pad).ravel()
            jj = (oj * scale + v - pad).ravel()
            ok = (ii >= 0) & (ii < h) & (jj >= 0) & (jj < w)
            matrix[rows[ok], ii[ok] * w + jj[ok]] += weights[u, v]
    return LinearOperator(
        matrix, (h, w), (ho, wo), structure="conv-stride", scale=scale, kernel=weights
    )


def range_null_rectify(x0t: np.ndarray, y: np.ndarray, op: LinearOperator) -> np.ndarray:
    """Replace the range-space content of x0t with the observation:
    A^+ y + (I - A^+ A) x0t, evaluated per channel."""
    x = np.asarray(x0t)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
        y = np.asarray(y)[None]
    x64 = x.astype(np.float64, copy=False)
    y64 = np.asarray(y, dtype=np.float64)
    out = op.pinv_apply(y64) + (x64 - op.pinv_apply(op.apply(x64)))
    out = out.astype(x.dtype, copy=False)
    return out[0] if squeeze else out


def save_operator(path, op: LinearOperator) -> None:
    """Persist an operator; structured operators store their generators,
    dense ones store the (float32-rounded) matrix."""
    entries, meta = {}, {
        "kind": "linear-operator",
        "structure": op.structure,
        "hr_h": op.hr_dims[0],
        "hr_w": op.hr_dims[1],
        "scale": "" if op.scale is None else op.scale,
    }
    entries["lr_dims"] = np.asarray(op.lr_dims, dtype=np.float32)
    if op.structure == "conv-stride":
        entries["kernel"] = op.kernel
    elif op.structure == "dense":
        entries["matrix"] = op.matrix
    archive.write_archive(path, entries, meta)


def load_operator(path) -> LinearOperator:
    entries, meta = archive.read_archive(path)
    if meta.get("kind") != "linear-operator":
        raise ContractError(f"{path}: archive does not hold a linear operator")
    hr_dims = (int(meta["hr_h"]), int(meta["hr_w"]))
    structure = meta["structure"]
    if structure == "avgpool":
        return build_avgpool_operator(int(meta["scale"]), hr_dims)
    if structure == "conv-stride":
        return build_conv_stride_operator(entries["kernel"].astype(np.float64), int(meta["scale"]), hr_dims)
    matrix = entries["matrix"].astype(np.float64)
    lr = tuple(int(v) for v in entries["lr_dims"])
    return LinearOperator(matrix, hr_dims, lr, structure="dense")
