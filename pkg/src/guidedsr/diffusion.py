"""DDPM core: variance schedules (with spaced subsequences), closed-form
forward/posterior steps, a time-conditioned noise-prediction U-net, its
training loop, and ancestral sampling.

Images enter and leave this module in [0,1]; the diffusion state itself
lives in [-1,1]. Step indices are 0-based positions in the (possibly
respaced) schedule table with alpha_bar[-1] defined as 1, so index 0 is
the final, deterministic step (mu = x0_hat, sigma = 0).
"""

from __future__ import annotations

import math

import numpy as np

from . import archive, autodiff as ad
from .errors import ContractError, DimensionError, NumericalError, TrainingAbort

DEFAULT_T = 1000
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02
DEFAULT_SAMPLE_STEPS = 100


class Schedule:
    """Beta table plus cached alpha products.

    Direct construction accepts degenerate betas in [0,1] (useful for
    closed-form checks); build_schedule enforces the production range.
    """

    def __init__(self, betas, timesteps=None, alpha_bars=None):
        betas = np.asarray(betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size < 1:
            raise ContractError("schedule needs a non-empty 1-d beta table")
        if np.any(betas < 0.0) or np.any(betas > 1.0):
            raise ContractError("betas must lie in [0, 1]")
        self.betas = betas
        self.alphas = 1.0 - betas
        if alpha_bars is None:
            self.alpha_bars = np.cumprod(self.alphas)
        else:
            self.alpha_bars = np.asarray(alpha_bars, dtype=np.float64)
            if self.alpha_bars.shape != betas.shape:
                raise ContractError("alpha_bars must match betas in length")
        if timesteps is None:
            self.timesteps = np.arange(betas.size)
        else:
            self.timesteps = np.asarray(timesteps, dtype=np.int64)
            if self.timesteps.shape != betas.shape:
                raise ContractError("timesteps must match betas in length")

    @property
    def n(self) -> int:
        return int(self.betas.size)

    def alpha_bar_prev(self, i: int) -> float:
        return 1.0 if i == 0 else float(self.alpha_bars[i - 1])


def build_schedule(
    T: int = DEFAULT_T,
    beta_start: float = DEFAULT_BETA_START,
    beta_end: float = DEFAULT_BETA_END,
) -> Schedule:
    """Linear beta schedule with endpoints included."""
    if T < 1:
        raise ContractError(f"T must be >= 1, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ContractError(
            f"invalid endpoints: need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        )
    betas = np.linspace(beta_start, beta_end, T)
    return Schedule(betas)


def spaced_subsequence(schedule: Schedule, n: int) -> Schedule:
    """Pick n timesteps (round-half-up over a linear index ramp, deduped)
    and rebuild betas so the original alpha_bar values are preserved
    exactly at the kept steps."""
    if not 1 <= n <= schedule.n:
        raise ContractError(f"spaced steps must be in [1, {schedule.n}], got {n}")
    idx = np.unique(np.floor(np.linspace(0.0, schedule.n - 1.0, n) + 0.5).astype(np.int64))
    kept = schedule.alpha_bars[idx]
    prev = np.concatenate(([1.0], kept[:-1]))
    betas = 1.0 - kept / prev
    return Schedule(betas, timesteps=schedule.timesteps[idx], alpha_bars=kept)


def forward_sample(x0, i: int, eps, schedule: Schedule):
    """Closed-form forward marginal: sqrt(ab_i) x0 + sqrt(1 - ab_i) eps."""
    ab = float(schedule.alpha_bars[i])
    # python-float coefficients so float32 inputs stay float32
    return math.sqrt(ab) * np.asarray(x0) + math.sqrt(1.0 - ab) * np.asarray(eps)


def predict_x0(xt, eps_pred, i: int, schedule: Schedule):
    """Invert the forward marginal: (x_t - sqrt(1-ab) eps) / sqrt(ab)."""
    ab = float(schedule.alpha_bars[i])
    if ab < 1e-12:
        raise NumericalError(f"predict_x0: alpha_bar[{i}] = {ab:.3e} too small to invert")
    return (np.asarray(xt) - math.sqrt(1.0 - ab) * np.asarray(eps_pred)) / math.sqrt(ab)


def posterior_coeffs(i: int, schedule: Schedule):
    """(coef on x0_hat, coef on x_t, sigma) for the reverse conditional."""
    if not 0 <= i < schedule.n:
        raise ContractError(f"step index {i} out of range [0, {schedule.n})")
    beta = float(schedule.betas[i])
    alpha = float(schedule.alphas[i])
    ab = float(schedule.alpha_bars[i])
    ab_prev = schedule.alpha_bar_prev(i)
    one_minus = 1.0 - ab
    if one_minus < 1e-12:
        raise NumericalError(f"posterior: 1 - alpha_bar[{i}] vanishes")
    c0 = math.sqrt(ab_prev) * beta / one_minus
    ct = math.sqrt(alpha) * (1.0 - ab_prev) / one_minus
    var = (1.0 - ab_prev) / one_minus * beta
    return c0, ct, math.sqrt(max(var, 0.0))


def posterior_step(xt, x0_hat, i: int, schedule: Schedule, rng=None):
    """One reverse step; at i == 0 the result is x0_hat exactly (sigma 0,
    no rng draw)."""
    c0, ct, sigma = posterior_coeffs(i, schedule)
    xt = np.asarray(xt)
    mean = c0 * np.asarray(x0_hat) + ct * xt
    if i == 0 or sigma == 0.0:
        return mean
    if rng is None:
        raise ContractError("posterior_step: rng required when sigma > 0")
    return mean + sigma * rng.standard_normal(xt.shape, dtype=np.float32).astype(xt.dtype, copy=False)


# ------------------------------------------------------------------ model


def sinusoidal_embedding(t, dim: int) -> np.ndarray:
    """Transformer-style sin/cos features of the integer timestep."""
    if dim % 2:
        raise ContractError(f"embedding dim must be even, got {dim}")
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half - 1, 1))
    args = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1).astype(np.float32)


class EpsModel:
    """Noise predictor: sinusoidal time embedding feeding per-block
    additive channel biases; two stride-2 down blocks, a bottleneck, two
    nearest-upsample up blocks with skip concatenation; 3x3 convs with
    leaky-relu; zero-initialized output conv."""

    def __init__(self, channels: int = 1, widths=(32, 64), temb_dim: int = 32, rng=None):
        if rng is None:
            rng = np.random.default_rng(0)
        w1, w2 = widths
        self.channels = channels
        self.widths = (int(w1), int(w2))
        self.temb_dim = int(temb_dim)
        self.temb = ad.Linear(temb_dim, temb_dim, rng=rng)
        self.c_in = ad.Conv2d(channels, w1, 3, pad=1, rng=rng)
        self.d1 = ad.Conv2d(w1, w1, 3, stride=2, pad=1, rng=rng)
        self.d2 = ad.Conv2d(w1, w2, 3, stride=2, pad=1, rng=rng)
        self.mid = ad.Conv2d(w2, w2, 3, pad=1, rng=rng)
        self.u1 = ad.Conv2d(w2 + w1, w1, 3, pad=1, rng=rng)
        self.u2 = ad.Conv2d(w1 + w1, w1, 3, pad=1, rng=rng)
        self.out = ad.Conv2d(w1, channels, 3, pad=1, rng=rng, zero_init=True)
        block_widths = (w1, w1, w2, w2, w1, w1)
        self.biases = [ad.Linear(temb_dim, bw, rng=rng) for bw in block_widths]
        self._blocks = {
            "temb": self.temb, "c_in": self.c_in, "d1": self.d1, "d2": self.d2,
            "mid": self.mid, "u1": self.u1, "u2": self.u2, "out": self.out,
            **{f"bias{k}": b for k, b in enumerate(self.biases)},
        }

    def params(self):
        out = []
        for layer in self._blocks.values():
            out.extend(layer.params())
        return out

    def param_entries(self) -> dict:
        return {
            f"{name}.{p}": getattr(layer, p).data
            for name, layer in self._blocks.items()
            for p in ("w", "b")
        }

    def load_param_entries(self, entries: dict) -> None:
        for name, layer in self._blocks.items():
            for p in ("w", "b"):
                src = entries[f"{name}.{p}"]
                dst = getattr(layer, p)
                if src.shape != dst.data.shape:
                    raise DimensionError(
                        f"checkpoint entry {name}.{p} has shape {src.shape}, model expects {dst.data.shape}"
                    )
                dst.data = src.astype(dst.data.dtype, copy=True)

    def forward_graph(self, x: ad.Tensor, t) -> ad.Tensor:
        """Training-mode forward on a Tensor batch; t is (N,) timesteps."""
        n, _, hh, ww = x.data.shape
        if hh % 4 or ww % 4:
            raise DimensionError(
                f"two stride-2 stages need H and W divisible by 4, got {hh}x{ww}"
            )
        emb = sinusoidal_embedding(t, self.temb_dim)
        if emb.shape[0] == 1 and n > 1:
            emb = np.repeat(emb, n, axis=0)
        e = ad.leaky_relu(self.temb(ad.Tensor(emb, dtype=x.data.dtype)))
        bias = [ad.reshape(b(e), (n, -1, 1, 1)) for b in self.biases]
        h0 = ad.leaky_relu(ad.add(self.c_in(x), bias[0]))
        h1 = ad.leaky_relu(ad.add(self.d1(h0), bias[1]))
        h2 = ad.leaky_relu(ad.add(self.d2(h1), bias[2]))
        m = ad.leaky_relu(ad.add(self.mid(h2), bias[3]))
        u = ad.upsample_nearest(m, 2)
        u = ad.leaky_relu(ad.add(self.u1(ad.concat([u, h1], axis=1)), bias[4]))
        u = ad.upsample_nearest(u, 2)
        u = ad.leaky_relu(ad.add(self.u2(ad.concat([u, h0], axis=1)), bias[5]))
        return self.out(u)

    def predict(self, x: np.ndarray, t) -> np.ndarray:
        """Inference forward on a plain array batch (N,C,H,W)."""
        with ad.no_grad():
            tt = np.full(x.shape[0], t) if np.ndim(t) == 0 else t
            return self.forward_graph(ad.Tensor(x, dtype=x.dtype), tt).data


def to_model_range(x01):
    return np.asarray(x01) * 2.0 - 1.0


def from_model_range(xm11):
    return np.clip((np.asarray(xm11) + 1.0) * 0.5, 0.0, 1.0)


def train_eps_model(
    images: np.ndarray,
    schedule: Schedule | None = None,
    *,
    steps: int = 20000,
    batch_size: int = 16,
    lr: float = 2e-4,
    seed: int = 0,
    widths=(32, 64),
    temb_dim: int = 32,
    log_every: int = 200,
    logger=None,
):
    """Standard eps-prediction training; returns (model, history).

    images: (N, C, H, W) float32 in [0,1]. Deterministic given seed.
    """
    images = np.asarray(images, dtype=np.float32)
    if images.ndim != 4 or images.shape[0] < 1:
        raise ContractError(f"expected a non-empty (N,C,H,W) image stack, got {images.shape}")
    if images.min() < -1e-6 or images.max() > 1.0 + 1e-6:
        raise ContractError("training images must lie in [0,1]")
    if schedule is None:
        schedule = build_schedule()
    rng = np.random.default_rng(seed)
    model = EpsModel(channels=images.shape[1], widths=widths, temb_dim=temb_dim, rng=rng)
    opt = ad.Adam(model.params(), lr=lr)
    data = to_model_range(images).astype(np.float32)
    n = data.shape[0]
    losses = np.zeros(steps, dtype=np.float32)
    for step in range(steps):
        idx = rng.integers(0, n, size=batch_size)
        t = rng.integers(0, schedule.n, size=batch_size)
        x0 = data[idx]
        eps = rng.standard_normal(x0.shape, dtype=np.float32)
        coef_a = np.sqrt(schedule.alpha_bars[t]).astype(np.float32)[:, None, None, None]
        coef_b = np.sqrt(1.0 - schedule.alpha_bars[t]).astype(np.float32)[:, None, None, None]
        xt = coef_a * x0 + coef_b * eps
        pred = model.forward_graph(ad.Tensor(xt), t)
        loss = ad.mse_loss(pred, ad.Tensor(eps))
        value = float(loss.data)
        if not np.isfinite(value):
            raise TrainingAbort(f"eps training loss became non-finite at step {step}", step=step)
        losses[step] = value
        opt.zero_grad()
        loss.backward()
        opt.step()
        if logger is not None and step % log_every == 0:
            logger.info("eps step %d loss %.5f", step, value)
    return model, {"loss": losses}


# --------------------------------------------------------------- sampling


def reverse_loop(model, spaced: Schedule, rngs, dims, rectify=None, step_cb=None) -> np.ndarray:
    """Shared ancestral sampling loop.

    rngs: one Generator per image; every draw for image b comes only from
    rngs[b], so results are independent of batching. rectify, if given,
    maps the x0 estimate (model range, (B,C,H,W)) to its guided version.
    Returns images in [0,1].
    """
    c, h, w = dims
    x = np.stack([r.standard_normal((c, h, w), dtype=np.float32) for r in rngs])
    for i in reversed(range(spaced.n)):
        t_orig = int(spaced.timesteps[i])
        eps = model.predict(x, t_orig)
        x0 = predict_x0(x, eps, i, spaced)
        if rectify is not None:
            x0 = rectify(x0)
        if step_cb is not None:
            step_cb(i, x0)
        c0, ct, sigma = posterior_coeffs(i, spaced)
        x = (c0 * x0 + ct * x).astype(np.float32, copy=False)
        if i > 0 and sigma > 0.0:
            z = np.stack([r.standard_normal((c, h, w), dtype=np.float32) for r in rngs])
            x = x + np.float32(sigma) * z
        if not np.all(np.isfinite(x)):
            raise NumericalError(f"sampling produced non-finite values at step index {i}")
    return from_model_range(x).astype(np.float32)


def sample_unconditional(
    model,
    schedule: Schedule,
    dims,
    rng,
    steps: int = DEFAULT_SAMPLE_STEPS,
    n_images: int = 1,
    step_cb=None,
) -> np.ndarray:
    """Draw images from the prior over the spaced subsequence; rng may be
    one Generator (split per image) or a list of per-image Generators."""
    spaced = spaced_subsequence(schedule, steps)
    if isinstance(rng, (list, tuple)):
        rngs = list(rng)
    else:
        rngs = [rng] if n_images == 1 else list(rng.spawn(n_images))
    return reverse_loop(model, spaced, rngs, dims, rectify=None, step_cb=step_cb)


# ------------------------------------------------------------ checkpoints


def save_diffusion(path, model: EpsModel, schedule: Schedule, image_dims=None) -> None:
    meta = {
        "kind": "diffusion-model",
        "arch-version": 1,
        "T": schedule.n,
        "beta-start": repr(float(schedule.betas[0])),
        "beta-end": repr(float(schedule.betas[-1])),
        "channels": model.channels,
        "width1": model.widths[0],
        "width2": model.widths[1],
        "temb-dim": model.temb_dim,
        "image-dims": "" if image_dims is None else f"{image_dims[0]}x{image_dims[1]}",
    }
    archive.write_archive(path, model.param_entries(), meta)


def load_diffusion(path):
    entries, meta = archive.read_archive(path)
    if meta.get("kind") != "diffusion-model":
        raise ContractError(f"{path}: archive does not hold a diffusion model")
    model = EpsModel(
        channels=int(meta["channels"]),
        widths=(int(meta["width1"]), int(meta["width2"])),
        temb_dim=int(meta["temb-dim"]),
    )
    model.load_param_entries(entries)
    schedule = build_schedule(int(meta["T"]), float(meta["beta-start"]), float(meta["beta-end"]))
    return model, schedule, meta
