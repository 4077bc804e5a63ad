"""Curated fast self-checks for installed copies: each check exercises
one contract the rest of the package leans on and prints a single
PASS/FAIL line. Runs in seconds, needs nothing beyond numpy.
"""

from __future__ import annotations

import math
import os
import tempfile

import numpy as np

from . import archive
from .daware import OperatorBackedModels
from .degradation import sample_kernel
from .diffusion import (
    EpsModel,
    build_schedule,
    forward_sample,
    posterior_coeffs,
    predict_x0,
    sample_unconditional,
    spaced_subsequence,
)
from .guidance import GuidanceConfig, sample_restore
from .linops import build_avgpool_operator, build_conv_stride_operator, range_null_rectify
from .metrics import psnr, ssim
from .pnm import load_pnm, save_pgm

# chi-squared critical value, 7 degrees of freedom, upper tail 0.01;
# frozen here so the check needs no stats dependency at runtime
CHI2_7DF_CRIT_P01 = 18.475307

KERNEL_DRAWS = 10_000


def _check_spaced_indices():
    sched = build_schedule(10, 1e-4, 0.02)
    spaced = spaced_subsequence(sched, 5)
    got = [int(v) for v in spaced.timesteps]
    ok = got == [0, 2, 5, 7, 9]
    return ok, f"T=10 n=5 -> {got}"


def _check_posterior_collapse():
    sched = build_schedule(50)
    c0, ct, sigma = posterior_coeffs(0, sched)
    ok = sigma == 0.0 and ct == 0.0 and abs(c0 - 1.0) < 1e-12
    return ok, f"step 0 -> c0={c0}, ct={ct}, sigma={sigma}"


def _check_forward_round_trip():
    sched = build_schedule(200)
    rng = np.random.default_rng(7)
    x0 = rng.random((1, 8, 8))
    worst = 0.0
    for t in range(sched.n):
        eps = rng.standard_normal(x0.shape)
        xt = forward_sample(x0, t, eps, sched)
        back = predict_x0(xt, eps, t, sched)
        worst = max(worst, float(np.abs(back - x0).max()))
    return worst <= 1e-5, f"max round-trip error {worst:.2e} over all t"


def _check_penrose():
    rng = np.random.default_rng(3)
    kernel = rng.random((5, 5))
    kernel /= kernel.sum()
    worst = 0.0
    for op in (build_avgpool_operator(4, (16, 16)), build_conv_stride_operator(kernel, 4, (16, 16))):
        a, p = op.matrix, op.pinv
        for lhs, rhs in (
            (a @ p @ a, a),
            (p @ a @ p, p),
            ((a @ p).T, a @ p),
            ((p @ a).T, p @ a),
        ):
            worst = max(worst, float(np.abs(lhs - rhs).max()))
    return worst <= 1e-6, f"max identity residual {worst:.2e}"


def _check_projection_consistency():
    rng = np.random.default_rng(5)
    op = build_avgpool_operator(4, (16, 16))
    worst = 0.0
    for _ in range(20):
        x_true = rng.random((1, 16, 16))
        y = op.apply(x_true)
        x_any = rng.random((1, 16, 16))
        fixed = range_null_rectify(x_any, y, op)
        worst = max(worst, float(np.abs(op.apply(fixed) - y).max()))
    return worst <= 1e-5, f"max |A x_hat - y| {worst:.2e} over 20 trials"


def _check_alpha_zero_reduction():
    sched = build_schedule(40)
    model = EpsModel(channels=1, widths=(4, 8), temb_dim=8, rng=np.random.default_rng(1))
    op = build_avgpool_operator(2, (8, 8))
    oracle = OperatorBackedModels(op)
    y = np.random.default_rng(2).random((1, 1, 4, 4)).astype(np.float32)
    cfg = GuidanceConfig(mode="implicit", alpha=0.0, perturbation=False, steps=8, seed=11)
    guided = sample_restore(y, model, sched, cfg, daware_models=oracle)
    plain = sample_unconditional(
        model, sched, (1, 8, 8), [np.random.default_rng([11, 0])], steps=8
    )
    ok = np.array_equal(guided, plain)
    return ok, "bitwise equal" if ok else "outputs differ"


def _check_metric_closed_forms():
    a = np.zeros((1, 16, 16)) + 0.2
    err20 = abs(psnr(a, a + 0.1) - 20.0)
    err6 = abs(psnr(a, a + 0.5) - 10.0 * math.log10(4.0))
    b = np.random.default_rng(0).random((1, 16, 16))
    ssim_self = ssim(b, b)
    ok = err20 < 1e-9 and err6 < 1e-9 and ssim_self == 1.0
    return ok, f"psnr errors {err20:.1e}/{err6:.1e}, ssim(x,x)={ssim_self}"


def _check_archive_round_trip():
    rng = np.random.default_rng(9)
    entries = {"a": rng.random((3, 4)).astype(np.float32), "b/c": rng.random(7).astype(np.float32)}
    meta = {"kind": "selftest", "note": "round trip"}
    fd, path = tempfile.mkstemp(suffix=".dgta")
    os.close(fd)
    try:
        archive.write_archive(path, entries, meta)
        back, meta2 = archive.read_archive(path)
    finally:
        os.unlink(path)
    ok = (
        set(back) == set(entries)
        and all(np.array_equal(back[k], entries[k]) for k in entries)
        and meta2.get("kind") == "selftest"
    )
    return ok, "bitwise equal" if ok else "mismatch"


def _check_pgm_round_trip():
    img = np.random.default_rng(4).random((1, 6, 5)).astype(np.float32)
    fd, path = tempfile.mkstemp(suffix=".pgm")
    os.close(fd)
    try:
        save_pgm(path, img)
        back = load_pnm(path)
    finally:
        os.unlink(path)
    worst = float(np.abs(back - img).max())
    return worst <= 1.0 / 510.0 + 1e-9, f"max quantization error {worst:.2e}"


def _check_kernel_sampler():
    rng = np.random.default_rng(12)
    sizes = np.zeros(8, dtype=np.int64)  # odd 7..21
    support_ok = True
    mass_worst = 0.0
    for _ in range(KERNEL_DRAWS):
        k = sample_kernel(rng)
        if k.size % 2 == 0 or not 7 <= k.size <= 21:
            support_ok = False
        if not (0.2 <= k.lambda1 <= 4.0 and 0.2 <= k.lambda2 <= 4.0 and 0.0 <= k.theta < np.pi):
            support_ok = False
        sizes[(k.size - 7) // 2] += 1
        mass_worst = max(mass_worst, abs(float(k.weights.sum()) - 1.0))
    expected = KERNEL_DRAWS / 8.0
    chi2 = float(((sizes - expected) ** 2 / expected).sum())
    ok = support_ok and mass_worst <= 1e-9 and chi2 < CHI2_7DF_CRIT_P01
    return ok, f"chi2 {chi2:.3f} (crit {CHI2_7DF_CRIT_P01}), mass err {mass_worst:.1e}"


CHECKS = (
    ("spaced-timestep-indices", _check_spaced_indices),
    ("forward-round-trip", _check_forward_round_trip),
    ("posterior-terminal-collapse", _check_posterior_collapse),
    ("pseudo-inverse-identities", _check_penrose),
    ("projection-consistency", _check_projection_consistency),
    ("alpha-zero-reduction", _check_alpha_zero_reduction),
    ("metric-closed-forms", _check_metric_closed_forms),
    ("archive-round-trip", _check_archive_round_trip),
    ("pgm-round-trip", _check_pgm_round_trip),
    ("kernel-sampler-statistics", _check_kernel_sampler),
)


def run_selftest(out=print) -> int:
    """Run every check; returns the number of failures."""
    failures = 0
    for name, fn in CHECKS:
        try:
            ok, detail = fn()
        except Exception as exc:  # a crash is a failure, not an abort
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        if not ok:
            failures += 1
        out(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    out(f"{len(CHECKS) - failures}/{len(CHECKS)} checks passed")
    return failures


def main() -> int:
    return 1 if run_selftest() else 0
