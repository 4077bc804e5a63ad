"""Degradation-aware model triplet for blind super-resolution.

Three small convnets trained jointly on paired data: an encoder that
summarizes the low-resolution input into a spatial representation, a
degrader that maps high-resolution images down conditioned on that
representation, and a restorer that maps low-resolution images up. The
degrader and restorer carry fixed residual skips (strided box average,
nearest-neighbour replication) with zero-initialized correction heads,
so the untrained triplet reproduces those baselines exactly.

All images here live in [0,1] with layout (N, C, H, W). A wrapper with
the same encode/degrade/restore surface backed by an exact linear
operator is provided for validating downstream algebra.
"""

from __future__ import annotations

import numpy as np

from . import archive, autodiff as ad
from .errors import ContractError, DimensionError, TrainingAbort

REP_CHANNELS = 8
DEFAULT_CYCLE_WEIGHT = 0.1


def _check_batch(name, arr):
    if arr.ndim != 4:
        raise DimensionError(f"{name} must be (N,C,H,W), got shape {arr.shape}")


class EncoderNet:
    """Low-resolution input -> degradation representation, same spatial size."""

    def __init__(self, channels=1, width=16, rep_channels=REP_CHANNELS, rng=None):
        if rng is None:
            rng = np.random.default_rng(0)
        self.channels, self.width, self.rep_channels = channels, width, rep_channels
        self.c1 = ad.Conv2d(channels, width, 3, pad=1, rng=rng)
        self.c2 = ad.Conv2d(width, 2 * width, 3, pad=1, rng=rng)
        self.c3 = ad.Conv2d(2 * width, rep_channels, 3, pad=1, rng=rng)
        self._blocks = {"c1": self.c1, "c2": self.c2, "c3": self.c3}

    def forward_graph(self, y: ad.Tensor) -> ad.Tensor:
        h = ad.leaky_relu(self.c1(y))
        h = ad.leaky_relu(self.c2(h))
        return self.c3(h)


class DegraderNet:
    """High-resolution image + representation -> low-resolution image.

    Residual around a strided box average; the correction head starts at
    zero so the untrained net IS the box average.
    """

    def __init__(self, channels=1, scale=4, width=32, rep_channels=REP_CHANNELS, rng=None):
        if rng is None:
            rng = np.random.default_rng(0)
        self.channels, self.scale, self.width, self.rep_channels = channels, scale, width, rep_channels
        self.c1 = ad.Conv2d(channels, width, 3, pad=1, rng=rng)
        self.down = ad.Conv2d(width, width, scale, stride=scale, pad=0, rng=rng)
        self.c2 = ad.Conv2d(width + rep_channels, width, 3, pad=1, rng=rng)
        self.c3 = ad.Conv2d(width, channels, 3, pad=1, rng=rng, zero_init=True)
        self._blocks = {"c1": self.c1, "down": self.down, "c2": self.c2, "c3": self.c3}

    def forward_graph(self, x: ad.Tensor, rep: ad.Tensor) -> ad.Tensor:
        h = ad.leaky_relu(self.c1(x))
        h = ad.leaky_relu(self.down(h))
        h = ad.leaky_relu(self.c2(ad.concat([h, rep], axis=1)))
        return ad.add(self.c3(h), ad.avg_pool(x, self.scale))


class RestorerNet:
    """Low-resolution image + representation -> high-resolution image.

    Residual around nearest-neighbour replication, zero-initialized head.
    """

    def __init__(self, channels=1, scale=4, width=32, rep_channels=REP_CHANNELS, rng=None):
        if rng is None:
            rng = np.random.default_rng(0)
        self.channels, self.scale, self.width, self.rep_channels = channels, scale, width, rep_channels
        self.c1 = ad.Conv2d(channels + rep_channels, width, 3, pad=1, rng=rng)
        self.c2 = ad.Conv2d(width, width, 3, pad=1, rng=rng)
        self.c3 = ad.Conv2d(width, width, 3, pad=1, rng=rng)
        self.c4 = ad.Conv2d(width, channels, 3, pad=1, rng=rng, zero_init=True)
        self._blocks = {"c1": self.c1, "c2": self.c2, "c3": self.c3, "c4": self.c4}

    def forward_graph(self, y: ad.Tensor, rep: ad.Tensor) -> ad.Tensor:
        h = ad.leaky_relu(self.c1(ad.concat([y, rep], axis=1)))
        h = ad.leaky_relu(self.c2(h))
        h = ad.upsample_nearest(h, self.scale)
        h = ad.leaky_relu(self.c3(h))
        return ad.add(self.c4(h), ad.upsample_nearest(y, self.scale))


class DegradationAwareModels:
    """Jointly trained triplet with a plain-array inference surface."""

    def __init__(self, channels=1, scale=4, enc_width=16, net_width=32,
                 rep_channels=REP_CHANNELS, rng=None):
        if scale < 1:
            raise ContractError(f"scale must be >= 1, got {scale}")
        if rng is None:
            rng = np.random.default_rng(0)
        self.channels, self.scale, self.rep_channels = channels, scale, rep_channels
        self.enc_width, self.net_width = enc_width, net_width
        self.encoder = EncoderNet(channels, enc_width, rep_channels, rng)
        self.degrader = DegraderNet(channels, scale, net_width, rep_channels, rng)
        self.restorer = RestorerNet(channels, scale, net_width, rep_channels, rng)
        self._nets = {"enc": self.encoder, "deg": self.degrader, "res": self.restorer}

    # -- parameters ------------------------------------------------------

    def params(self):
        out = []
        for net in self._nets.values():
            for layer in net._blocks.values():
                out.extend(layer.params())
        return out

    def param_entries(self) -> dict:
        return {
            f"{prefix}.{name}.{p}": getattr(layer, p).data
            for prefix, net in self._nets.items()
            for name, layer in net._blocks.items()
            for p in ("w", "b")
        }

    def load_param_entries(self, entries: dict) -> None:
        for prefix, net in self._nets.items():
            for name, layer in net._blocks.items():
                for p in ("w", "b"):
                    key = f"{prefix}.{name}.{p}"
                    src = entries[key]
                    dst = getattr(layer, p)
                    if src.shape != dst.data.shape:
                        raise DimensionError(
                            f"checkpoint entry {key} has shape {src.shape}, model expects {dst.data.shape}"
                        )
                    dst.data = src.astype(dst.data.dtype, copy=True)

    # -- inference -------------------------------------------------------

    def _validate_pair(self, hr, rep):
        if rep.shape[1] != self.rep_channels:
            raise DimensionError(
                f"representation has {rep.shape[1]} channels, expected {self.rep_channels}"
            )
        if hr.shape[2] != rep.shape[2] * self.scale or hr.shape[3] != rep.shape[3] * self.scale:
            raise DimensionError(
                f"high-res {hr.shape[2:]} does not match representation {rep.shape[2:]} at scale {self.scale}"
            )
        if hr.shape[0] != rep.shape[0]:
            raise DimensionError(f"batch mismatch: {hr.shape[0]} vs {rep.shape[0]}")

    def encode(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=np.float32)
        _check_batch("low-res input", y)
        with ad.no_grad():
            return self.encoder.forward_graph(ad.Tensor(y)).data

    def degrade(self, x: np.ndarray, rep: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float32)
        rep = np.asarray(rep, dtype=np.float32)
        _check_batch("high-res input", x)
        _check_batch("representation", rep)
        self._validate_pair(x, rep)
        with ad.no_grad():
            return self.degrader.forward_graph(ad.Tensor(x), ad.Tensor(rep)).data

    def restore(self, y: np.ndarray, rep: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=np.float32)
        rep = np.asarray(rep, dtype=np.float32)
        _check_batch("low-res input", y)
        _check_batch("representation", rep)
        if y.shape[2:] != rep.shape[2:] or y.shape[0] != rep.shape[0]:
            raise DimensionError(
                f"low-res {y.shape} and representation {rep.shape} must share batch and spatial size"
            )
        with ad.no_grad():
            return self.restorer.forward_graph(ad.Tensor(y), ad.Tensor(rep)).data


class OperatorBackedModels:
    """Exact-operator stand-in with the same surface as the learned
    triplet: degrade applies the operator, restore applies its
    pseudo-inverse, encode yields an all-zero representation. Lets tests
    replace learned components with closed-form linear algebra."""

    def __init__(self, op, rep_channels=REP_CHANNELS):
        self.op = op
        self.scale = op.scale
        self.rep_channels = rep_channels

    def encode(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y)
        _check_batch("low-res input", y)
        n, _, h, w = y.shape
        return np.zeros((n, self.rep_channels, h, w), dtype=np.float32)

    def degrade(self, x: np.ndarray, rep=None) -> np.ndarray:
        x = np.asarray(x)
        _check_batch("high-res input", x)
        return np.stack([self.op.apply(img) for img in x]).astype(np.float32)

    def restore(self, y: np.ndarray, rep=None) -> np.ndarray:
        y = np.asarray(y)
        _check_batch("low-res input", y)
        return np.stack([self.op.pinv_apply(img) for img in y]).astype(np.float32)


# ---------------------------------------------------------------- training


def joint_loss_graph(models: DegradationAwareModels, x: ad.Tensor, y: ad.Tensor,
                     cycle_weight: float = DEFAULT_CYCLE_WEIGHT):
    """Build the three-term objective on one batch; returns the total and
    the per-term nodes. The cycle term reuses the restorer output node,
    so its gradients reach all three nets including the encoder."""
    rep = models.encoder.forward_graph(y)
    y_hat = models.degrader.forward_graph(x, rep)
    x_hat = models.restorer.forward_graph(y, rep)
    y_cycle = models.degrader.forward_graph(x_hat, rep)
    l_deg = ad.l1_loss(y_hat, y)
    l_res = ad.l1_loss(x_hat, x)
    l_cyc = ad.l1_loss(y_cycle, y)
    total = ad.add(ad.add(l_deg, l_res), ad.mul(l_cyc, cycle_weight))
    return total, l_deg, l_res, l_cyc


def train_daware(
    dataset,
    *,
    steps: int = 10000,
    batch_size: int = 16,
    lr: float = 5e-4,
    seed: int = 0,
    enc_width: int = 16,
    net_width: int = 32,
    cycle_weight: float = DEFAULT_CYCLE_WEIGHT,
    log_every: int = 200,
    logger=None,
):
    """Joint training on a paired dataset; returns (models, history)."""
    hr = np.asarray(dataset.hr, dtype=np.float32)
    lr_imgs = np.asarray(dataset.lr, dtype=np.float32)
    if hr.shape[0] < 1:
        raise ContractError("dataset is empty")
    rng = np.random.default_rng(seed)
    models = DegradationAwareModels(
        channels=hr.shape[1], scale=dataset.scale,
        enc_width=enc_width, net_width=net_width, rng=rng,
    )
    opt = ad.Adam(models.params(), lr=lr)
    n = hr.shape[0]
    hist = {k: np.zeros(steps, dtype=np.float32) for k in ("total", "degrade", "restore", "cycle")}
    for step in range(steps):
        idx = rng.integers(0, n, size=batch_size)
        x = ad.Tensor(hr[idx])
        y = ad.Tensor(lr_imgs[idx])
        total, l_deg, l_res, l_cyc = joint_loss_graph(models, x, y, cycle_weight)
        value = float(total.data)
        if not np.isfinite(value):
            raise TrainingAbort(f"joint loss became non-finite at step {step}", step=step)
        hist["total"][step] = value
        hist["degrade"][step] = float(l_deg.data)
        hist["restore"][step] = float(l_res.data)
        hist["cycle"][step] = float(l_cyc.data)
        opt.zero_grad()
        total.backward()
        opt.step()
        if logger is not None and step % log_every == 0:
            logger.info(
                "daware step %d total %.5f (deg %.5f res %.5f cyc %.5f)",
                step, value, hist["degrade"][step], hist["restore"][step], hist["cycle"][step],
            )
    return models, hist


# ------------------------------------------------------------ checkpoints


def save_daware(path, models: DegradationAwareModels) -> None:
    meta = {
        "kind": "daware-models",
        "arch-version": 1,
        "scale": models.scale,
        "channels": models.channels,
        "rep-channels": models.rep_channels,
        "enc-width": models.enc_width,
        "net-width": models.net_width,
    }
    archive.write_archive(path, models.param_entries(), meta)


def load_daware(path) -> DegradationAwareModels:
    entries, meta = archive.read_archive(path)
    if meta.get("kind") != "daware-models":
        raise ContractError(f"{path}: archive does not hold degradation-aware models")
    models = DegradationAwareModels(
        channels=int(meta["channels"]),
        scale=int(meta["scale"]),
        enc_width=int(meta["enc-width"]),
        net_width=int(meta["net-width"]),
        rep_channels=int(meta["rep-channels"]),
    )
    models.load_param_entries(entries)
    return models
