"""Command-line front end.

Subcommands: synth, train-diffusion, train-daware, train-kernel,
sample, evaluate, selftest. Every option can also be set in a flat
key=value config file (--config); a flag given on the command line
overrides the config value of the same name. Seeds are always explicit:
commands that draw randomness refuse to run without --seed (or a seed
config key).
"""

from __future__ import annotations

import argparse
import logging
import sys
import time

import numpy as np

from . import selftest as _selftest
from .config import as_bool, as_dims, as_float, as_int, as_int_pair, as_str, parse_config
from .daware import load_daware, save_daware, train_daware
from .degradation import load_dataset, save_dataset, synth_dataset
from .diffusion import build_schedule, load_diffusion, save_diffusion, train_eps_model
from .errors import ContractError, DimensionError, GuidedSRError
from .experiment import DEFAULT_CELLS, parse_cells, run_experiment
from .guidance import (
    DEFAULT_ALPHA,
    DEFAULT_STEPS,
    GuidanceConfig,
    MODES,
    load_kernel_net,
    sample_restore,
    save_kernel_net,
    train_kernel_estimator,
)
from .linops import build_avgpool_operator
from .pnm import load_pnm, save_pgm, save_ppm
from .report import aggregate, write_csv, write_json

_LOG = logging.getLogger("guidedsr")


def _make_logger(quiet: bool):
    if not _LOG.handlers:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter("%(message)s"))
        _LOG.addHandler(handler)
    else:
        # rebind in case the interpreter's stderr was swapped since
        _LOG.handlers[0].stream = sys.stderr
    _LOG.setLevel(logging.WARNING if quiet else logging.INFO)
    return _LOG


def _merged(args, names) -> dict:
    """Config dict with command-line strings layered on top."""
    cfg = parse_config(args.config) if args.config else {}
    for name in names:
        value = getattr(args, name.replace("-", "_"))
        if value is not None:
            cfg[name] = value
    return cfg


def _add(parser: argparse.ArgumentParser, *names, helps=()):
    helps = dict(helps)
    for name in names:
        parser.add_argument(f"--{name}", type=str, default=None, help=helps.get(name))
    parser.add_argument("--config", type=str, default=None, help="flat key=value config file")
    parser.add_argument("--quiet", action="store_const", const="1", default=None)
    return names + ("quiet",)


# ------------------------------------------------------------ subcommands


def _cmd_synth(cfg, log) -> int:
    out = as_str(cfg, "out")
    ds = synth_dataset(
        as_int(cfg, "seed"),
        as_int(cfg, "count", 100),
        as_int(cfg, "scale", 4),
        dims=as_dims(cfg, "dims", (32, 32)),
        max_shapes=as_int(cfg, "max-shapes", 4),
    )
    save_dataset(out, ds)
    log.info("wrote %d pairs (scale %d, hr %dx%d) to %s",
             len(ds), ds.scale, ds.hr.shape[2], ds.hr.shape[3], out)
    return 0


def _cmd_train_diffusion(cfg, log) -> int:
    ds = load_dataset(as_str(cfg, "data"))
    out = as_str(cfg, "out")
    schedule = build_schedule(
        as_int(cfg, "timesteps", 1000),
        as_float(cfg, "beta-start", 1e-4),
        as_float(cfg, "beta-end", 0.02),
    )
    model, hist = train_eps_model(
        ds.hr,
        schedule,
        steps=as_int(cfg, "steps", 20000),
        batch_size=as_int(cfg, "batch-size", 16),
        lr=as_float(cfg, "lr", 2e-4),
        seed=as_int(cfg, "seed"),
        widths=as_int_pair(cfg, "widths", (32, 64)),
        temb_dim=as_int(cfg, "temb-dim", 32),
        logger=log,
    )
    save_diffusion(out, model, schedule, ds.hr.shape[2:])
    log.info("final loss %.4f; saved to %s", hist["loss"][-1], out)
    return 0


def _cmd_train_daware(cfg, log) -> int:
    ds = load_dataset(as_str(cfg, "data"))
    out = as_str(cfg, "out")
    models, hist = train_daware(
        ds,
        steps=as_int(cfg, "steps", 10000),
        batch_size=as_int(cfg, "batch-size", 16),
        lr=as_float(cfg, "lr", 5e-4),
        seed=as_int(cfg, "seed"),
        enc_width=as_int(cfg, "enc-width", 16),
        net_width=as_int(cfg, "net-width", 32),
        cycle_weight=as_float(cfg, "cycle-weight", 0.1),
        logger=log,
    )
    save_daware(out, models)
    log.info("final loss %.4f; saved to %s", hist["total"][-1], out)
    return 0


def _cmd_train_kernel(cfg, log) -> int:
    ds = load_dataset(as_str(cfg, "data"))
    out = as_str(cfg, "out")
    net, hist = train_kernel_estimator(
        ds,
        steps=as_int(cfg, "steps", 5000),
        batch_size=as_int(cfg, "batch-size", 16),
        lr=as_float(cfg, "lr", 1e-3),
        seed=as_int(cfg, "seed"),
        width=as_int(cfg, "width", 32),
        logger=log,
    )
    save_kernel_net(out, net)
    log.info("final loss %.4f; saved to %s", hist["loss"][-1], out)
    return 0


def _save_image(path: str, img: np.ndarray) -> None:
    if img.shape[0] == 3:
        save_ppm(path, img)
    else:
        save_pgm(path, img)


def _load_components(cfg):
    """Prior checkpoint plus whatever optional components are configured."""
    model, schedule, _meta = load_diffusion(as_str(cfg, "prior"))
    daware = load_daware(cfg["daware"]) if "daware" in cfg else None
    kernel = load_kernel_net(cfg["kernel"]) if "kernel" in cfg else None
    return model, schedule, daware, kernel


def _resolve_scale(cfg, daware) -> int | None:
    scale = as_int(cfg, "scale", 0)
    if scale:
        return scale
    return daware.scale if daware is not None else None


def _cmd_sample(cfg, log) -> int:
    y = load_pnm(as_str(cfg, "input"))[None]
    out_path = as_str(cfg, "output")
    model, schedule, daware, kernel = _load_components(cfg)
    mode = as_str(cfg, "mode", "implicit")
    config = GuidanceConfig(
        mode=mode,
        alpha=as_float(cfg, "alpha", DEFAULT_ALPHA) if mode in ("implicit", "combine") else 1.0,
        perturbation=as_bool(cfg, "perturb", True),
        steps=as_int(cfg, "steps", DEFAULT_STEPS),
        seed=as_int(cfg, "seed"),
    )
    scale = _resolve_scale(cfg, daware)
    operator = None
    if mode == "ddnm":
        # the known-operator baseline: exact average pooling at the given scale
        if scale is None:
            raise ContractError("ddnm mode needs --scale (or a daware checkpoint)")
        hr_dims = (y.shape[2] * scale, y.shape[3] * scale)
        operator = build_avgpool_operator(scale, hr_dims)
    begin = time.perf_counter()
    restored = sample_restore(
        y, model, schedule, config,
        daware_models=daware, operator=operator, kernel_net=kernel, scale=scale,
    )
    _save_image(out_path, restored[0])
    log.info("restored %s -> %s in %.0f ms (mode %s, alpha %s, perturb %d)",
             cfg.get("input"), out_path, (time.perf_counter() - begin) * 1000.0,
             mode, config.alpha, int(config.perturbation))
    return 0


def _cmd_evaluate(cfg, log) -> int:
    ds = load_dataset(as_str(cfg, "data"))
    count = as_int(cfg, "count", len(ds))
    if not 1 <= count <= len(ds):
        raise ContractError(f"count must lie in [1, {len(ds)}], got {count}")
    hr, lr = ds.hr[:count], ds.lr[:count]
    model, schedule, daware, kernel = _load_components(cfg)
    cells_raw = as_str(cfg, "cells", "")
    cells = parse_cells(cells_raw) if cells_raw else DEFAULT_CELLS
    modes = {c.mode if hasattr(c, "mode") else c[0] for c in cells}
    operator = None
    if "ddnm" in modes:
        operator = build_avgpool_operator(ds.scale, hr.shape[2:])
    out_dir = cfg.get("out-dir")
    image_cb = None
    if out_dir:
        import os

        os.makedirs(out_dir, exist_ok=True)

        def image_cb(cell, k, img):
            if img is not None:
                name = f"{cell.mode}_a{cell.alpha}_p{cell.perturb}_{k:03d}.pgm"
                _save_image(os.path.join(out_dir, name), img)

    rows = run_experiment(
        hr, lr, model, schedule,
        cells=cells,
        seed=as_int(cfg, "seed"),
        steps=as_int(cfg, "steps", DEFAULT_STEPS),
        daware_models=daware, kernel_net=kernel, operator=operator,
        scale=ds.scale, logger=log, image_cb=image_cb,
    )
    out_csv = as_str(cfg, "out-csv", "report.csv")
    out_json = as_str(cfg, "out-json", "report.json")
    write_csv(out_csv, rows)
    write_json(out_json, rows)
    nan = float("nan")
    for key, stats in sorted(aggregate(rows).items()):
        log.info("%-24s n=%d psnr %.4f ssim %.4f", key, stats["count"],
                 stats.get("psnr_mean", nan), stats.get("ssim_mean", nan))
    log.info("wrote %s and %s (%d rows)", out_csv, out_json, len(rows))
    return 0


def _cmd_selftest(_cfg, _log) -> int:
    return 1 if _selftest.run_selftest() else 0


# ----------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="guidedsr",
        description="Blind super-resolution by guided diffusion sampling.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    handlers = {}

    p = sub.add_parser("synth", help="generate a synthetic paired dataset")
    names = _add(p, "out", "seed", "count", "scale", "dims", "max-shapes",
                 helps={"dims": "HR dims as HxW", "out": "output dataset archive"})
    handlers["synth"] = (_cmd_synth, names)

    p = sub.add_parser("train-diffusion", help="train the image prior")
    names = _add(p, "data", "out", "seed", "steps", "batch-size", "lr",
                 "widths", "temb-dim", "timesteps", "beta-start", "beta-end")
    handlers["train-diffusion"] = (_cmd_train_diffusion, names)

    p = sub.add_parser("train-daware", help="train the degradation-aware model pair")
    names = _add(p, "data", "out", "seed", "steps", "batch-size", "lr",
                 "enc-width", "net-width", "cycle-weight")
    handlers["train-daware"] = (_cmd_train_daware, names)

    p = sub.add_parser("train-kernel", help="train the blur-kernel estimator")
    names = _add(p, "data", "out", "seed", "steps", "batch-size", "lr", "width")
    handlers["train-kernel"] = (_cmd_train_kernel, names)

    p = sub.add_parser("sample", help="restore one low-resolution image")
    names = _add(p, "input", "output", "prior", "daware", "kernel",
                 "mode", "alpha", "perturb", "seed", "steps", "scale",
                 helps={"mode": f"one of {', '.join(MODES)}",
                        "input": "low-resolution PGM/PPM",
                        "perturb": "round-trip the observation first (0/1)"})
    handlers["sample"] = (_cmd_sample, names)

    p = sub.add_parser("evaluate", help="run a (mode, alpha, perturb) grid over a dataset")
    names = _add(p, "data", "prior", "daware", "kernel", "count", "cells",
                 "seed", "steps", "out-csv", "out-json", "out-dir",
                 helps={"cells": "comma-separated mode:alpha:perturb cells"})
    handlers["evaluate"] = (_cmd_evaluate, names)

    p = sub.add_parser("selftest", help="run the built-in check suite")
    _add(p)
    handlers["selftest"] = (_cmd_selftest, ())

    parser.set_defaults(_handlers=handlers)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handler, names = args._handlers[args.command]
    try:
        cfg = _merged(args, names)
        log = _make_logger(as_bool(cfg, "quiet", False))
        return handler(cfg, log)
    except GuidedSRError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
