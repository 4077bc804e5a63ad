"""Degradation-synthesis tests: kernel shape oracles, strided-blur
agreement with the dense operator route, toy-image contracts, dataset
determinism, and sampler statistics (scipy chi-square oracle)."""

import numpy as np
import pytest
import scipy.stats
from hypothesis import given, settings, strategies as st

from guidedsr.degradation import (
    KERNEL_SIZES,
    GaussianKernel,
    PairedDataset,
    bilinear_upsample,
    degrade,
    embed_kernel,
    generate_toy_hr,
    kernel_weights,
    load_dataset,
    make_kernel,
    sample_kernel,
    save_dataset,
    synth_dataset,
)
from guidedsr.errors import ContractError, DimensionError
from guidedsr.linops import build_conv_stride_operator

RNG = np.random.default_rng(31337)


def _loop_kernel_oracle(size, l1, l2, theta):
    """Independent route: per-tap quadratic form with a hand-inverted 2x2."""
    c = (size - 1) / 2
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    # Sigma = R diag(l1,l2) R^T; invert explicitly
    a = cos_t * cos_t * l1 + sin_t * sin_t * l2
    b = cos_t * sin_t * (l1 - l2)
    d = sin_t * sin_t * l1 + cos_t * cos_t * l2
    det = a * d - b * b
    ia, ib, id_ = d / det, -b / det, a / det
    w = np.zeros((size, size))
    for i in range(size):
        for j in range(size):
            u, v = i - c, j - c
            w[i, j] = np.exp(-0.5 * (ia * u * u + 2 * ib * u * v + id_ * v * v))
    return w / w.sum()


# ---------------------------------------------------------------- kernels


def test_kernel_matches_loop_oracle():
    for size, l1, l2, theta in [(7, 0.5, 2.0, 0.3), (13, 4.0, 0.2, 2.5), (21, 1.0, 1.0, 0.0)]:
        got = kernel_weights(size, l1, l2, theta)
        assert np.allclose(got, _loop_kernel_oracle(size, l1, l2, theta), atol=1e-12)


def test_kernel_unit_sum():
    for _ in range(50):
        k = sample_kernel(RNG)
        assert abs(k.weights.sum() - 1.0) < 1e-9


def test_kernel_center_is_max():
    for _ in range(50):
        k = sample_kernel(RNG)
        c = (k.size - 1) // 2
        assert k.weights[c, c] == k.weights.max()


def test_kernel_point_symmetric():
    for _ in range(20):
        k = sample_kernel(RNG)
        assert np.allclose(k.weights, np.rot90(k.weights, 2), atol=1e-12)


def test_isotropic_kernel_rotation_invariant():
    for lam in (0.2, 1.0, 4.0):
        base = kernel_weights(9, lam, lam, 0.0)
        for theta in (0.4, 1.1, 2.7):
            assert np.max(np.abs(kernel_weights(9, lam, lam, theta) - base)) < 1e-9


def test_sampled_kernel_supports():
    for _ in range(300):
        k = sample_kernel(RNG)
        assert k.size in KERNEL_SIZES
        assert 0.2 <= k.lambda1 <= 4.0 and 0.2 <= k.lambda2 <= 4.0
        assert 0.0 <= k.theta < np.pi
        assert k.weights.shape == (k.size, k.size)
        assert np.all(k.weights > 0)


def test_kernel_deterministic_from_seed():
    a = sample_kernel(np.random.default_rng(5))
    b = sample_kernel(np.random.default_rng(5))
    assert a.size == b.size and a.theta == b.theta
    assert np.array_equal(a.weights, b.weights)


def test_kernel_size_uniformity_chi_square():
    # derived statistic, scipy as the p-value oracle
    draws = 10_000
    rng = np.random.default_rng(2024)
    counts = np.zeros(len(KERNEL_SIZES))
    for _ in range(draws):
        counts[KERNEL_SIZES.index(sample_kernel(rng).size)] += 1
    stat, p = scipy.stats.chisquare(counts)
    assert p > 0.01, f"chi2={stat:.2f}, p={p:.4f}"


def test_kernel_invalid_args():
    with pytest.raises(ContractError):
        kernel_weights(8, 1.0, 1.0, 0.0)
    with pytest.raises(ContractError):
        kernel_weights(7, 0.0, 1.0, 0.0)


def test_embed_kernel_centered():
    k = make_kernel(7, 1.0, 2.0, 0.5)
    canvas = embed_kernel(k)
    assert canvas.shape == (21, 21)
    assert np.array_equal(canvas[7:14, 7:14], k.weights)
    assert canvas.sum() == pytest.approx(1.0, abs=1e-9)
    assert np.count_nonzero(canvas) == 49


# ---------------------------------------------------------------- degrade


def test_degrade_delta_kernel_subsamples():
    delta = np.zeros((5, 5))
    delta[2, 2] = 1.0
    x = RNG.random((1, 16, 16)).astype(np.float32)
    out = degrade(x, delta, 4)
    assert np.allclose(out, x[:, ::4, ::4], atol=1e-7)


def test_degrade_constant_interior():
    k = make_kernel(7, 2.0, 1.0, 0.8)
    x = np.full((1, 32, 32), 0.6, dtype=np.float32)
    out = degrade(x, k, 4)
    # interior LR pixels: blur window never touches the zero padding
    inner = out[0, 1:-1, 1:-1]
    assert np.max(np.abs(inner - 0.6)) < 1e-6


def test_degrade_matches_operator_matrix():
    k = make_kernel(7, 3.0, 0.4, 1.2)
    op = build_conv_stride_operator(k.weights, 4, (16, 16))
    x = RNG.random((1, 16, 16)).astype(np.float32)
    assert np.max(np.abs(degrade(x, k, 4) - op.apply_dense(x.astype(np.float64)))) < 1e-6


def test_degrade_equals_tensor_conv_bitwise_float64():
    from guidedsr.autodiff import conv2d_raw

    k = make_kernel(9, 1.5, 0.7, 0.2)
    x = RNG.random((1, 16, 16))
    direct = conv2d_raw(x[:, None], k.weights[None, None], stride=2, pad=4)[:, 0]
    assert np.array_equal(degrade(x, k, 2), direct)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), a=st.floats(-2, 2), b=st.floats(-2, 2))
def test_degrade_is_linear(seed, a, b):
    rng = np.random.default_rng(seed)
    k = sample_kernel(rng)
    x = rng.random((8, 8))
    z = rng.random((8, 8))
    lhs = degrade(a * x + b * z, k, 2)
    rhs = a * degrade(x, k, 2) + b * degrade(z, k, 2)
    assert np.max(np.abs(lhs - rhs)) < 1e-6


def test_degrade_multichannel():
    k = make_kernel(5, 1.0, 2.0, 0.1)
    x = RNG.random((3, 8, 8))
    out = degrade(x, k, 2)
    assert out.shape == (3, 4, 4)
    for c in range(3):
        assert np.allclose(out[c], degrade(x[c], k, 2), atol=1e-12)


def test_degrade_indivisible_dims():
    with pytest.raises(DimensionError):
        degrade(np.zeros((1, 9, 9), np.float32), make_kernel(3, 1, 1, 0), 2)


# -------------------------------------------------------------- toy images


def test_toy_image_contract():
    img = generate_toy_hr(np.random.default_rng(1), (32, 32))
    assert img.shape == (1, 32, 32)
    assert img.dtype == np.float32
    assert img.min() >= 0.0 and img.max() <= 1.0


def test_toy_image_deterministic():
    a = generate_toy_hr(np.random.default_rng(42), (16, 16))
    b = generate_toy_hr(np.random.default_rng(42), (16, 16))
    assert np.array_equal(a, b)


def test_toy_images_vary_with_seed():
    a = generate_toy_hr(np.random.default_rng(1), (16, 16))
    b = generate_toy_hr(np.random.default_rng(2), (16, 16))
    assert not np.array_equal(a, b)


def test_bilinear_constant_field_stays_constant():
    out = bilinear_upsample(np.full((4, 4), 0.37), (32, 32))
    assert np.max(np.abs(out - 0.37)) < 1e-12


def test_toy_image_no_shapes_is_smooth_field():
    rng = np.random.default_rng(9)
    img = generate_toy_hr(rng, (32, 32), max_shapes=0)
    field = bilinear_upsample(np.random.default_rng(9).random((4, 4)), (32, 32))
    assert np.allclose(img[0], np.clip(field, 0, 1), atol=1e-6)


# ---------------------------------------------------------------- dataset


def test_dataset_bitwise_deterministic():
    a = synth_dataset(7, 5, 2, (16, 16))
    b = synth_dataset(7, 5, 2, (16, 16))
    assert np.array_equal(a.hr, b.hr) and np.array_equal(a.lr, b.lr)
    for ka, kb in zip(a.kernels, b.kernels):
        assert np.array_equal(ka.weights, kb.weights)


def test_dataset_prefix_stable_under_n():
    small = synth_dataset(3, 4, 2, (16, 16))
    big = synth_dataset(3, 8, 2, (16, 16))
    assert np.array_equal(small.hr, big.hr[:4])
    assert np.array_equal(small.lr, big.lr[:4])


def test_dataset_pairs_satisfy_degradation_exactly():
    ds = synth_dataset(11, 6, 4, (32, 32))
    for i in range(len(ds)):
        assert np.array_equal(ds.lr[i], degrade(ds.hr[i], ds.kernels[i], 4))


def test_dataset_empty_is_valid(tmp_path):
    ds = synth_dataset(1, 0, 2, (16, 16))
    assert len(ds) == 0
    path = tmp_path / "empty.dgta"
    save_dataset(path, ds)
    back = load_dataset(path)
    assert len(back) == 0 and back.scale == 2


def test_dataset_round_trip(tmp_path):
    ds = synth_dataset(21, 4, 4, (32, 32))
    path = tmp_path / "ds.dgta"
    save_dataset(path, ds)
    back = load_dataset(path)
    assert np.array_equal(back.hr, ds.hr)
    assert np.array_equal(back.lr, ds.lr)
    assert back.scale == ds.scale
    for ka, kb in zip(ds.kernels, back.kernels):
        assert ka.size == kb.size
        assert ka.lambda1 == kb.lambda1 and ka.theta == kb.theta
        assert np.allclose(ka.weights, kb.weights, atol=1e-7)  # float32 payload
