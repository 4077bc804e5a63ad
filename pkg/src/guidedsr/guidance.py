"""Guided reverse sampling for blind super-resolution.

Every mode shares one mechanism: after each denoising step the clean-
image estimate is rectified toward consistency with the low-resolution
observation, then sampling continues. Modes differ in how the rectifier
is built:

  ddnm      exact range-space projection through a known linear operator
            and its pseudo-inverse
  implicit  learned restorer/degrader correction scaled by a guidance
            weight alpha
  explicit  range-space projection through an operator rebuilt from a
            per-image kernel estimate
  combine   kernel-estimate operator for the downward map, learned
            restorer for the upward map, scaled by alpha

Optionally the observation itself is replaced by its learned round trip
(degrade(restore(y))) before guidance, which pulls it onto the manifold
the learned maps agree on. With alpha = 0 the implicit and combine modes
reduce to the unconditional sampler exactly (bit for bit): no rectifier
is installed, so the noise draw sequence is untouched.

Images in and out of this module are (N, C, H, W) float32 in [0,1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import archive, autodiff as ad
from .degradation import KERNEL_EMBED_SIZE, embed_kernel
from .diffusion import reverse_loop, spaced_subsequence
from .errors import ContractError, DimensionError, NumericalError, TrainingAbort
from .linops import build_conv_stride_operator, range_null_rectify

MODES = ("ddnm", "implicit", "explicit", "combine")
DEFAULT_ALPHA = 0.3
DEFAULT_STEPS = 100


@dataclass
class GuidanceConfig:
    """Sampling-time knobs; validated on construction."""

    mode: str = "implicit"
    alpha: float = DEFAULT_ALPHA
    perturbation: bool = True
    steps: int = DEFAULT_STEPS
    seed: int = 0
    rep_from_perturbed: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ContractError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ContractError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.steps < 1:
            raise ContractError(f"steps must be >= 1, got {self.steps}")


def perturb_input(y: np.ndarray, models, rep: np.ndarray | None = None) -> np.ndarray:
    """Round-trip the observation through restore then degrade."""
    y = np.asarray(y, dtype=np.float32)
    if rep is None:
        rep = models.encode(y)
    return models.degrade(models.restore(y, rep), rep)


# ------------------------------------------------------------- rectifiers


def _to_unit(x0m):
    return ((x0m + 1.0) * 0.5).astype(np.float32, copy=False)


def _to_model(x01):
    return np.clip(x01 * 2.0 - 1.0, -1.0, 1.0).astype(np.float32, copy=False)


def make_learned_rectify(y_used, rep, models, alpha):
    """Correction through the learned maps: pull the estimate toward the
    restorer's view of the observation, push away its own round trip."""
    target = models.restore(y_used, rep)

    def rectify(x0m):
        x01 = _to_unit(x0m)
        back = models.restore(models.degrade(x01, rep), rep)
        return _to_model(x01 + float(alpha) * (target - back))

    return rectify


def make_projection_rectify(y_used, ops):
    """Exact data-consistency projection, one operator per image."""

    def rectify(x0m):
        x01 = _to_unit(x0m)
        out = np.stack(
            [range_null_rectify(x01[k], y_used[k], ops[k]) for k in range(x01.shape[0])]
        )
        return _to_model(out.astype(np.float32))

    return rectify


def make_combine_rectify(y_used, rep, models, ops, alpha):
    """Operator for the downward map, learned restorer for the upward."""
    target = models.restore(y_used, rep)

    def rectify(x0m):
        x01 = _to_unit(x0m)
        deg = np.stack([ops[k].apply(x01[k]) for k in range(x01.shape[0])]).astype(np.float32)
        back = models.restore(deg, rep)
        return _to_model(x01 + float(alpha) * (target - back))

    return rectify


# -------------------------------------------------------- kernel estimator


class KernelNet:
    """Blur-kernel regressor: the low-resolution image alone predicts the
    kernel, laid out on a fixed square canvas."""

    def __init__(self, channels=1, lr_dims=(8, 8), width=32,
                 canvas=KERNEL_EMBED_SIZE, rng=None):
        if rng is None:
            rng = np.random.default_rng(0)
        self.channels, self.width, self.canvas = channels, width, canvas
        self.lr_dims = (int(lr_dims[0]), int(lr_dims[1]))
        self.c1 = ad.Conv2d(channels, width, 3, pad=1, rng=rng)
        self.c2 = ad.Conv2d(width, width, 3, pad=1, rng=rng)
        self.head = ad.Linear(width * self.lr_dims[0] * self.lr_dims[1], canvas * canvas, rng=rng)
        self._blocks = {"c1": self.c1, "c2": self.c2, "head": self.head}

    def params(self):
        out = []
        for layer in self._blocks.values():
            out.extend(layer.params())
        return out

    def param_entries(self):
        return {
            f"{name}.{p}": getattr(layer, p).data
            for name, layer in self._blocks.items()
            for p in ("w", "b")
        }

    def load_param_entries(self, entries):
        for name, layer in self._blocks.items():
            for p in ("w", "b"):
                src = entries[f"{name}.{p}"]
                dst = getattr(layer, p)
                if src.shape != dst.data.shape:
                    raise DimensionError(
                        f"checkpoint entry {name}.{p} has shape {src.shape}, model expects {dst.data.shape}"
                    )
                dst.data = src.astype(dst.data.dtype, copy=True)

    def forward_graph(self, y: ad.Tensor) -> ad.Tensor:
        n, _, h, w = y.data.shape
        if (h, w) != self.lr_dims:
            raise DimensionError(
                f"kernel regressor was built for {self.lr_dims} inputs, got {(h, w)}"
            )
        z = ad.leaky_relu(self.c1(y))
        z = ad.leaky_relu(self.c2(z))
        return self.head(ad.reshape(z, (n, -1)))

    def predict(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=np.float32)
        with ad.no_grad():
            flat = self.forward_graph(ad.Tensor(y)).data
        return flat.reshape(y.shape[0], self.canvas, self.canvas)


def train_kernel_estimator(
    dataset,
    *,
    steps: int = 5000,
    batch_size: int = 16,
    lr: float = 1e-3,
    seed: int = 0,
    width: int = 32,
    log_every: int = 200,
    logger=None,
):
    """Supervised kernel regression on canvas-embedded targets."""
    lr_imgs = np.asarray(dataset.lr, dtype=np.float32)
    if lr_imgs.shape[0] < 1:
        raise ContractError("dataset is empty")
    targets = np.stack([embed_kernel(k) for k in dataset.kernels]).astype(np.float32)
    flat_targets = targets.reshape(targets.shape[0], -1)
    rng = np.random.default_rng(seed)
    net = KernelNet(
        channels=lr_imgs.shape[1], lr_dims=lr_imgs.shape[2:], width=width, rng=rng,
    )
    opt = ad.Adam(net.params(), lr=lr)
    n = lr_imgs.shape[0]
    losses = np.zeros(steps, dtype=np.float32)
    for step in range(steps):
        idx = rng.integers(0, n, size=batch_size)
        pred = net.forward_graph(ad.Tensor(lr_imgs[idx]))
        loss = ad.l1_loss(pred, ad.Tensor(flat_targets[idx]))
        value = float(loss.data)
        if not np.isfinite(value):
            raise TrainingAbort(f"kernel training loss became non-finite at step {step}", step=step)
        losses[step] = value
        opt.zero_grad()
        loss.backward()
        opt.step()
        if logger is not None and step % log_every == 0:
            logger.info("kernel step %d loss %.6f", step, value)
    return net, {"loss": losses}


def save_kernel_net(path, net: KernelNet) -> None:
    meta = {
        "kind": "kernel-estimator",
        "arch-version": 1,
        "channels": net.channels,
        "width": net.width,
        "canvas": net.canvas,
        "lr-dims": f"{net.lr_dims[0]}x{net.lr_dims[1]}",
    }
    archive.write_archive(path, net.param_entries(), meta)


def load_kernel_net(path) -> KernelNet:
    entries, meta = archive.read_archive(path)
    if meta.get("kind") != "kernel-estimator":
        raise ContractError(f"{path}: archive does not hold a kernel estimator")
    h, w = meta["lr-dims"].split("x")
    net = KernelNet(
        channels=int(meta["channels"]),
        lr_dims=(int(h), int(w)),
        width=int(meta["width"]),
        canvas=int(meta["canvas"]),
    )
    net.load_param_entries(entries)
    return net


def normalize_kernel(kernel: np.ndarray) -> np.ndarray:
    """Rescale an estimated kernel to unit mass."""
    kernel = np.asarray(kernel, dtype=np.float64)
    total = float(kernel.sum())
    if abs(total) < 1e-6:
        raise NumericalError(f"estimated kernel mass {total:.2e} too small to normalize")
    return kernel / total


def build_estimated_operator(kernel: np.ndarray, scale: int, hr_dims):
    """Normalized estimate -> strided-convolution operator (with SVD
    pseudo-inverse) for projection-style guidance."""
    return build_conv_stride_operator(normalize_kernel(kernel), scale, hr_dims)


# ----------------------------------------------------------------- driver


def _per_image_rngs(seed: int, n: int):
    return [np.random.default_rng([seed, k]) for k in range(n)]


def sample_restore(
    y: np.ndarray,
    eps_model,
    schedule,
    config: GuidanceConfig,
    *,
    daware_models=None,
    operator=None,
    kernel_net=None,
    scale: int | None = None,
    rngs=None,
    step_cb=None,
) -> np.ndarray:
    """Run guided sampling for a batch of observations.

    Component requirements by mode: ddnm needs operator; implicit needs
    daware_models; explicit needs kernel_net and a scale source; combine
    needs both. Perturbation and rep_from_perturbed need daware_models
    in any mode. Per-image noise streams derive from config.seed, so
    results do not depend on batch composition.
    """
    y = np.asarray(y, dtype=np.float32)
    if y.ndim != 4:
        raise DimensionError(f"observations must be (N,C,H,W), got shape {y.shape}")
    if y.shape[0] < 1:
        raise ContractError("empty observation batch")
    n, c, h, w = y.shape

    if scale is None:
        if daware_models is not None:
            scale = daware_models.scale
        elif operator is not None:
            scale = operator.scale
        else:
            raise ContractError("cannot infer the upscaling factor: pass scale=")
    hr_dims = (h * scale, w * scale)

    if (config.perturbation or config.rep_from_perturbed) and daware_models is None:
        raise ContractError("input perturbation needs the learned degradation-aware models")

    rep = None
    if daware_models is not None:
        rep = daware_models.encode(y)
    y_used = perturb_input(y, daware_models, rep) if config.perturbation else y
    if config.rep_from_perturbed:
        rep = daware_models.encode(y_used)

    mode = config.mode
    if mode == "ddnm":
        if operator is None:
            raise ContractError("ddnm mode needs the degradation operator")
        if operator.lr_dims != (h, w) or operator.hr_dims != hr_dims:
            raise DimensionError(
                f"operator maps {operator.hr_dims}->{operator.lr_dims}, observations need {hr_dims}->{(h, w)}"
            )
        rectify = make_projection_rectify(y_used, [operator] * n)
    elif mode == "implicit":
        if daware_models is None:
            raise ContractError("implicit mode needs the learned degradation-aware models")
        rectify = None if config.alpha == 0.0 else make_learned_rectify(
            y_used, rep, daware_models, config.alpha
        )
    elif mode == "explicit":
        if kernel_net is None:
            raise ContractError("explicit mode needs the kernel estimator")
        kernels = kernel_net.predict(y_used)
        ops = [build_estimated_operator(k, scale, hr_dims) for k in kernels]
        rectify = make_projection_rectify(y_used, ops)
    else:  # combine
        if kernel_net is None or daware_models is None:
            raise ContractError("combine mode needs the kernel estimator and the learned models")
        kernels = kernel_net.predict(y_used)
        ops = [build_estimated_operator(k, scale, hr_dims) for k in kernels]
        rectify = None if config.alpha == 0.0 else make_combine_rectify(
            y_used, rep, daware_models, ops, config.alpha
        )

    if rngs is None:
        rngs = _per_image_rngs(config.seed, n)
    elif len(rngs) != n:
        raise ContractError(f"need one rng per image: {len(rngs)} for {n}")
    spaced = spaced_subsequence(schedule, config.steps)
    return reverse_loop(eps_model, spaced, rngs, (c,) + hr_dims, rectify=rectify, step_cb=step_cb)
