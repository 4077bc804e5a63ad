"""Ablation grid runner.

A cell fixes (mode, alpha, perturbation); the grid runs every cell over
the same evaluation pairs. Noise streams derive from (seed, image index)
only, NOT from the cell, so any two cells see identical noise per image:
cell-to-cell contrasts are paired comparisons and image noise cancels
from mean differences instead of inflating them.

Per-image failures (non-finite values during sampling) become NaN-metric
rows; everything else keeps running.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, NumericalError
from .guidance import MODES, GuidanceConfig, sample_restore
from .metrics import psnr, ssim
from .report import RowResult

DEFAULT_CELLS = (
    ("implicit", 0.3, 1),
    ("implicit", 0.3, 0),
    ("implicit", 1.0, 1),
    ("implicit", 1.0, 0),
)


@dataclass(frozen=True)
class Cell:
    mode: str
    alpha: float
    perturb: int

    def __post_init__(self):
        if self.mode not in MODES:
            raise ContractError(f"cell mode must be one of {MODES}, got {self.mode!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ContractError(f"cell alpha must lie in [0, 1], got {self.alpha}")
        if self.perturb not in (0, 1):
            raise ContractError(f"cell perturb must be 0 or 1, got {self.perturb}")


def parse_cells(spec: str):
    """'implicit:0.3:1,ddnm:1.0:0' -> [Cell, ...]"""
    cells = []
    for chunk in spec.split(","):
        parts = chunk.strip().split(":")
        if len(parts) != 3:
            raise ContractError(f"cell {chunk!r} is not mode:alpha:perturb")
        cells.append(Cell(parts[0], float(parts[1]), int(parts[2])))
    return cells


def _image_rngs(seed: int, n: int):
    return [np.random.default_rng([seed, k]) for k in range(n)]


def run_experiment(
    hr: np.ndarray,
    lr: np.ndarray,
    eps_model,
    schedule,
    *,
    cells=DEFAULT_CELLS,
    seed: int = 0,
    steps: int = 100,
    daware_models=None,
    kernel_net=None,
    operator=None,
    scale: int | None = None,
    logger=None,
    image_cb=None,
):
    """Run every cell over every (hr, lr) pair; returns RowResult list.

    Projection modes (ddnm, explicit) always report alpha 1.0 and no
    perturbation unless the cell asked for perturbation explicitly.
    image_cb(cell, index, image_or_None) sees every restored output.
    """
    hr = np.asarray(hr, dtype=np.float32)
    lr = np.asarray(lr, dtype=np.float32)
    if hr.ndim != 4 or lr.ndim != 4 or hr.shape[0] != lr.shape[0]:
        raise ContractError(
            f"need matching (N,C,H,W) stacks, got {hr.shape} and {lr.shape}"
        )
    n = hr.shape[0]
    if n < 1:
        raise ContractError("no evaluation pairs")
    cells = [c if isinstance(c, Cell) else Cell(*c) for c in cells]
    rows = []
    for cell in cells:
        cfg = GuidanceConfig(
            mode=cell.mode, alpha=cell.alpha if cell.mode in ("implicit", "combine") else 1.0,
            perturbation=bool(cell.perturb), steps=steps, seed=seed,
        )
        kw = dict(
            daware_models=daware_models, kernel_net=kernel_net,
            operator=operator, scale=scale,
        )
        begin = time.perf_counter()
        outputs = [None] * n
        try:
            batch = sample_restore(lr, eps_model, schedule, cfg, rngs=_image_rngs(seed, n), **kw)
            for k in range(n):
                outputs[k] = batch[k]
        except NumericalError:
            # isolate which images fail; the rest still count
            for k in range(n):
                try:
                    outputs[k] = sample_restore(
                        lr[k : k + 1], eps_model, schedule, cfg,
                        rngs=[np.random.default_rng([seed, k])], **kw,
                    )[0]
                except NumericalError:
                    outputs[k] = None
        ms_per_image = (time.perf_counter() - begin) * 1000.0 / n
        if image_cb is not None:
            for k in range(n):
                image_cb(cell, k, outputs[k])
        for k in range(n):
            if outputs[k] is None:
                p = s = float("nan")
            else:
                p = psnr(hr[k], outputs[k])
                s = ssim(hr[k], outputs[k])
            rows.append(
                RowResult(
                    id=k, mode=cell.mode, alpha=cfg.alpha, perturb=int(cfg.perturbation),
                    psnr_db=p, ssim=s, seed=seed, ms=ms_per_image,
                )
            )
        if logger is not None:
            done = [r for r in rows[-n:] if not r.failed]
            mean = np.mean([r.psnr_db for r in done]) if done else float("nan")
            logger.info(
                "cell %s alpha=%s perturb=%d: %d/%d ok, mean psnr %.4f",
                cell.mode, cell.alpha, cell.perturb, len(done), n, mean,
            )
    return rows
