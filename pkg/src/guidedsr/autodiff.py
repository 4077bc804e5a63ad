"""Dense tensors with reverse-mode automatic differentiation.

Values live in numpy arrays, float32 by default; float64 tensors are
supported for high-precision checks. Reductions (sum, mean, pooling,
losses) accumulate in float64 and cast back to the storage dtype.

Each op builds a closure that routes the output gradient back to its
parents; ``Tensor.backward()`` on a scalar walks the implicit graph in
reverse topological order. The graph is acyclic by construction: every
op creates a fresh output node whose parents already exist.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager

import numpy as np

from .errors import ContractError, DimensionError, NumericalError

_ids = itertools.count()
_grad_enabled = True
_debug_finite = False


@contextmanager
def no_grad():
    """Disable graph construction inside the block (pure inference)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def set_debug_checks(enabled: bool) -> None:
    """Toggle per-op finiteness checks (off by default: hot-loop cost)."""
    global _debug_finite
    _debug_finite = bool(enabled)


def _as_array(data, dtype) -> np.ndarray:
    arr = np.asarray(data, dtype=dtype if dtype is not None else None)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float32)
    return arr


def sum_to_shape(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reverse numpy broadcasting: reduce grad down to the operand shape."""
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """A node in the autodiff graph: value + gradient slot + backward hook."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents", "op", "id")

    def __init__(self, data, requires_grad: bool = False, dtype=np.float32):
        self.data = _as_array(data, dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._backward = None
        self._parents = ()
        self.op = "leaf"
        self.id = next(_ids)

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(id={self.id}, op={self.op}, shape={self.data.shape}, dtype={self.data.dtype})"

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False, dtype=self.data.dtype)

    # -- arithmetic ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def sum(self):
        return reduce_sum(self)

    def mean(self):
        return reduce_mean(self)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) != 1 else shape[0])

    def backward(self) -> None:
        """Backpropagate from a scalar node, accumulating into .grad."""
        if self.data.ndim != 0:
            raise ContractError(
                f"backward() needs a scalar loss, node {self.id} has shape {self.data.shape}"
            )
        topo = _toposort(self)
        self.grad = np.ones((), dtype=self.data.dtype)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)
                node._backward = None  # free closures as we go


def _toposort(root: Tensor) -> list:
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _make(out_data: np.ndarray, parents: tuple, op: str, backward=None) -> Tensor:
    if _debug_finite and not np.all(np.isfinite(out_data)):
        ids = ", ".join(str(p.id) for p in parents)
        raise NumericalError(f"non-finite values out of op '{op}' (parents: {ids})")
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.grad = None
    out._parents = ()
    out._backward = None
    out.op = op
    out.id = next(_ids)
    out.requires_grad = _grad_enabled and any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward = backward
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g.astype(t.data.dtype, copy=True)
    else:
        t.grad += g.astype(t.data.dtype, copy=False)


def _coerce(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


# -- elementwise ops ----------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    b = _coerce(b, a)
    try:
        out = a.data + b.data
    except ValueError as e:
        raise DimensionError(
            f"add: cannot broadcast {a.data.shape} (node {a.id}) with {b.data.shape} (node {b.id})"
        ) from e

    def backward(g):
        _accum(a, sum_to_shape(g, a.data.shape))
        _accum(b, sum_to_shape(g, b.data.shape))

    return _make(out, (a, b), "add", backward)


def sub(a: Tensor, b) -> Tensor:
    b = _coerce(b, a)
    try:
        out = a.data - b.data
    except ValueError as e:
        raise DimensionError(
            f"sub: cannot broadcast {a.data.shape} (node {a.id}) with {b.data.shape} (node {b.id})"
        ) from e

    def backward(g):
        _accum(a, sum_to_shape(g, a.data.shape))
        _accum(b, -sum_to_shape(g, b.data.shape))

    return _make(out, (a, b), "sub", backward)


def mul(a: Tensor, b) -> Tensor:
    """Elementwise (Hadamard) product; python scalars stay in a's dtype."""
    if not isinstance(b, Tensor):
        s = float(b)
        out = a.data * s

        def backward_scalar(g):
            _accum(a, g * s)

        return _make(out, (a,), "smul", backward_scalar)

    try:
        out = a.data * b.data
    except ValueError as e:
        raise DimensionError(
            f"mul: cannot broadcast {a.data.shape} (node {a.id}) with {b.data.shape} (node {b.id})"
        ) from e

    def backward(g):
        _accum(a, sum_to_shape(g * b.data, a.data.shape))
        _accum(b, sum_to_shape(g * a.data, b.data.shape))

    return _make(out, (a, b), "mul", backward)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)

    def backward(g):
        _accum(x, g * (x.data > 0))

    return _make(out, (x,), "relu", backward)


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    out = np.where(x.data > 0, x.data, x.data * np.asarray(slope, dtype=x.data.dtype))

    def backward(g):
        _accum(x, g * np.where(x.data > 0, 1.0, slope).astype(x.data.dtype))

    return _make(out, (x,), "leaky_relu", backward)


def concat(tensors: list, axis: int = 1) -> Tensor:
    """Concatenate along an axis (axis=1 is the channel axis for NCHW)."""
    base = tensors[0].data.shape
    for t in tensors[1:]:
        s = t.data.shape
        if len(s) != len(base) or any(
            i != axis and s[i] != base[i] for i in range(len(base))
        ):
            raise DimensionError(
                f"concat: incompatible shapes {[tuple(t.data.shape) for t in tensors]} on axis {axis}"
            )
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]

    def backward(g):
        start = 0
        for t, n in zip(tensors, sizes):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(start, start + n)
            _accum(t, g[tuple(sl)])
            start += n

    return _make(out, tuple(tensors), "concat", backward)


def reshape(x: Tensor, shape) -> Tensor:
    out = x.data.reshape(shape)

    def backward(g):
        _accum(x, g.reshape(x.data.shape))

    return _make(out, (x,), "reshape", backward)


# -- reductions and losses -----------------------------------------------


def reduce_sum(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum(dtype=np.float64), dtype=x.data.dtype)

    def backward(g):
        _accum(x, np.broadcast_to(g, x.data.shape))

    return _make(out, (x,), "sum", backward)


def reduce_mean(x: Tensor) -> Tensor:
    n = x.data.size
    out = np.asarray(x.data.sum(dtype=np.float64) / n, dtype=x.data.dtype)

    def backward(g):
        _accum(x, np.broadcast_to(g / n, x.data.shape).astype(x.data.dtype))

    return _make(out, (x,), "mean", backward)


def l1_loss(a: Tensor, b: Tensor) -> Tensor:
    """Mean absolute error; subgradient at 0 is 0."""
    if a.data.shape != b.data.shape:
        raise DimensionError(f"l1_loss: shapes {a.data.shape} vs {b.data.shape}")
    diff = a.data - b.data
    n = diff.size
    out = np.asarray(np.abs(diff, dtype=np.float64).sum() / n, dtype=a.data.dtype)

    def backward(g):
        gd = (np.sign(diff) * (g / n)).astype(a.data.dtype)
        _accum(a, gd)
        _accum(b, -gd)

    return _make(out, (a, b), "l1_loss", backward)


def mse_loss(a: Tensor, b: Tensor) -> Tensor:
    """Mean squared error."""
    if a.data.shape != b.data.shape:
        raise DimensionError(f"mse_loss: shapes {a.data.shape} vs {b.data.shape}")
    diff = a.data - b.data
    n = diff.size
    out = np.asarray(np.square(diff, dtype=np.float64).sum() / n, dtype=a.data.dtype)

    def backward(g):
        gd = diff * ((2.0 / n) * g)
        _accum(a, gd)
        _accum(b, -gd)

    return _make(out, (a, b), "mse_loss", backward)


# -- spatial ops (NCHW) ---------------------------------------------------


def _conv_out_dim(size: int, k: int, stride: int, pad: int) -> int:
    n = (size + 2 * pad - k) // stride + 1
    if size + 2 * pad < k or n < 1:
        raise DimensionError(f"conv: window {k} exceeds padded extent {size + 2 * pad}")
    return n


def _im2col(x: np.ndarray, k: int, stride: int, pad: int):
    """(N,C,H,W) -> (N, Ho*Wo, C*k*k) patch matrix."""
    n, c, h, w = x.shape
    ho = _conv_out_dim(h, k, stride, pad)
    wo = _conv_out_dim(w, k, stride, pad)
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    s0, s1, s2, s3 = x.strides
    view = np.lib.stride_tricks.as_strided(
        x,
        shape=(n, c, k, k, ho, wo),
        strides=(s0, s1, s2, s3, s2 * stride, s3 * stride),
        writeable=False,
    )
    cols = view.transpose(0, 4, 5, 1, 2, 3).reshape(n, ho * wo, c * k * k)
    return np.ascontiguousarray(cols), ho, wo


def _col2im(cols: np.ndarray, x_shape, k: int, stride: int, pad: int) -> np.ndarray:
    """Adjoint of _im2col: scatter-add patches back onto the image grid."""
    n, c, h, w = x_shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    acc = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    patches = cols.reshape(n, ho, wo, c, k, k).transpose(0, 3, 4, 5, 1, 2)
    for i in range(k):
        for j in range(k):
            acc[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += patches[
                :, :, i, j
            ]
    if pad:
        acc = acc[:, :, pad : pad + h, pad : pad + w]
    return acc


def conv2d_raw(x: np.ndarray, w: np.ndarray, stride: int = 1, pad: int = 0) -> np.ndarray:
    """Plain-array 2-d cross-correlation, (N,C,H,W) x (O,C,k,k) -> (N,O,Ho,Wo).

    Shared by the Tensor op, the degradation pipeline and the linear-operator
    structured apply, so all three agree on the same arithmetic.
    """
    n = x.shape[0]
    o, ci, k, k2 = w.shape
    if k != k2:
        raise DimensionError(f"conv2d: kernel must be square, got {k}x{k2}")
    if x.shape[1] != ci:
        raise DimensionError(f"conv2d: input has {x.shape[1]} channels, kernel expects {ci}")
    cols, ho, wo = _im2col(x, k, stride, pad)
    out = cols @ w.reshape(o, -1).T.astype(x.dtype, copy=False)
    return out.transpose(0, 2, 1).reshape(n, o, ho, wo)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """2-d convolution op with stride and symmetric zero padding."""
    n = x.data.shape[0]
    o, ci, k, _ = w.data.shape
    if x.data.shape[1] != ci:
        raise DimensionError(
            f"conv2d: input node {x.id} has {x.data.shape[1]} channels, kernel node {w.id} expects {ci}"
        )
    cols, ho, wo = _im2col(x.data, k, stride, pad)
    out = cols @ w.data.reshape(o, -1).T
    out = out.transpose(0, 2, 1).reshape(n, o, ho, wo)
    if b is not None:
        out = out + b.data.reshape(1, o, 1, 1)

    def backward(g):
        gflat = g.transpose(0, 2, 3, 1).reshape(n, ho * wo, o)
        if w.requires_grad:
            # float64 accumulation via BLAS; einsum with a dtype upcast
            # falls back to its element loop and dominates training time
            gw = np.tensordot(
                gflat.astype(np.float64), cols.astype(np.float64), axes=([0, 1], [0, 1])
            )
            _accum(w, gw.reshape(w.data.shape))
        if x.requires_grad:
            gcols = gflat @ w.data.reshape(o, -1)
            _accum(x, _col2im(gcols, x.data.shape, k, stride, pad))
        if b is not None and b.requires_grad:
            _accum(b, g.sum(axis=(0, 2, 3), dtype=np.float64))

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, "conv2d", backward)


def avg_pool(x: Tensor, s: int) -> Tensor:
    """Non-overlapping s x s mean pooling; extents must divide by s."""
    out = avgpool_raw(x.data, s)

    def backward(g):
        _accum(x, upsample_nearest_raw(g, s) * np.asarray(1.0 / (s * s), dtype=g.dtype))

    return _make(out, (x,), "avg_pool", backward)


def avgpool_raw(x: np.ndarray, s: int) -> np.ndarray:
    n, c, h, w = x.shape
    if h % s or w % s:
        raise DimensionError(f"avg_pool: extents {h}x{w} not divisible by {s}")
    blocks = x.reshape(n, c, h // s, s, w // s, s)
    return blocks.mean(axis=(3, 5), dtype=np.float64).astype(x.dtype)


def upsample_nearest(x: Tensor, s: int) -> Tensor:
    """Nearest-neighbour upsampling by integer factor s."""
    out = upsample_nearest_raw(x.data, s)

    def backward(g):
        n, c, h, w = x.data.shape
        gsum = g.reshape(n, c, h, s, w, s).sum(axis=(3, 5), dtype=np.float64)
        _accum(x, gsum)

    return _make(out, (x,), "upsample_nearest", backward)


def upsample_nearest_raw(x: np.ndarray, s: int) -> np.ndarray:
    return np.repeat(np.repeat(x, s, axis=2), s, axis=3)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map on the last axis: (N, Din) x (Dout, Din) -> (N, Dout)."""
    if x.data.shape[-1] != w.data.shape[1]:
        raise DimensionError(
            f"linear: input node {x.id} has {x.data.shape[-1]} features, weight node {w.id} expects {w.data.shape[1]}"
        )
    out = x.data @ w.data.T
    if b is not None:
        out = out + b.data

    def backward(g):
        if w.requires_grad:
            _accum(w, g.astype(np.float64).T @ x.data.astype(np.float64))
        if x.requires_grad:
            _accum(x, g @ w.data)
        if b is not None and b.requires_grad:
            _accum(b, g.sum(axis=0, dtype=np.float64))

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, "linear", backward)


# -- parameter containers --------------------------------------------------

LRELU_SLOPE = 0.2


def _he_uniform(rng: np.random.Generator, shape, fan_in: int, slope: float) -> np.ndarray:
    gain = np.sqrt(2.0 / (1.0 + slope * slope))
    bound = gain * np.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


class Conv2d:
    """Conv layer: owns weight/bias tensors, He-uniform init for leaky-relu."""

    def __init__(self, in_ch, out_ch, k, stride=1, pad=0, rng=None, zero_init=False, dtype=np.float32):
        self.stride, self.pad = stride, pad
        shape = (out_ch, in_ch, k, k)
        if zero_init:
            wdata = np.zeros(shape, dtype=dtype)
        else:
            wdata = _he_uniform(rng, shape, in_ch * k * k, LRELU_SLOPE).astype(dtype)
        self.w = Tensor(wdata, requires_grad=True, dtype=dtype)
        self.b = Tensor(np.zeros(out_ch, dtype=dtype), requires_grad=True, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.w, self.b, stride=self.stride, pad=self.pad)

    def params(self):
        return [self.w, self.b]


class Linear:
    """Fully-connected layer with He-uniform init."""

    def __init__(self, in_features, out_features, rng=None, zero_init=False, dtype=np.float32):
        shape = (out_features, in_features)
        if zero_init:
            wdata = np.zeros(shape, dtype=dtype)
        else:
            wdata = _he_uniform(rng, shape, in_features, LRELU_SLOPE).astype(dtype)
        self.w = Tensor(wdata, requires_grad=True, dtype=dtype)
        self.b = Tensor(np.zeros(out_features, dtype=dtype), requires_grad=True, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.w, self.b)

    def params(self):
        return [self.w, self.b]


# -- optimizer -------------------------------------------------------------


class Adam:
    """Adam with bias correction; aborts on non-finite gradients."""

    def __init__(self, params, lr=2e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise NumericalError(
                    f"optimizer state poisoned: non-finite gradient for parameter node {p.id} at step {self.t}"
                )
            m, v = self.m[i], self.v[i]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
