"""Estimator-facade behavior: parameter plumbing, fitted-state checks,
and agreement with the module-level functions they wrap."""

import numpy as np
import pytest

from guidedsr.daware import OperatorBackedModels
from guidedsr.degradation import synth_dataset
from guidedsr.diffusion import build_schedule, train_eps_model
from guidedsr.errors import ContractError, DimensionError, NotFittedError
from guidedsr.estimators import (
    BlurKernelRegressor,
    DegradationAwareSR,
    DiffusionPrior,
    GuidedRestorer,
)
from guidedsr.guidance import GuidanceConfig, sample_restore
from guidedsr.linops import build_avgpool_operator


def _tiny_prior(data, steps=30):
    p = DiffusionPrior(
        timesteps=40, train_steps=steps, batch_size=4, widths=(4, 8), temb_dim=8, seed=3
    )
    return p.fit(data)


@pytest.fixture(scope="module")
def tiny_data():
    ds = synth_dataset(11, 8, 2, dims=(16, 16))
    return ds


# ------------------------------------------------------------- params


def test_get_params_round_trip():
    p = DiffusionPrior(train_steps=7, seed=5)
    params = p.get_params()
    assert params["train_steps"] == 7 and params["seed"] == 5
    q = DiffusionPrior(**params)
    assert q.get_params() == params


def test_set_params_updates_and_rejects():
    p = DegradationAwareSR()
    assert p.set_params(train_steps=3).train_steps == 3
    with pytest.raises(ContractError):
        p.set_params(nonsense=1)


def test_repr_shows_params():
    text = repr(BlurKernelRegressor(width=9))
    assert "BlurKernelRegressor" in text and "width=9" in text


def test_not_fitted_errors():
    with pytest.raises(NotFittedError):
        DiffusionPrior().sample(1)
    with pytest.raises(NotFittedError):
        DegradationAwareSR().transform(np.zeros((1, 1, 8, 8), dtype=np.float32))
    with pytest.raises(NotFittedError):
        BlurKernelRegressor().predict(np.zeros((1, 1, 8, 8), dtype=np.float32))
    with pytest.raises(NotFittedError):
        GuidedRestorer().predict(np.zeros((1, 1, 8, 8), dtype=np.float32))


# ------------------------------------------------------------- diffusion


def test_prior_fit_matches_module_function(tiny_data):
    prior = _tiny_prior(tiny_data.hr)
    schedule = build_schedule(40)
    model, hist = train_eps_model(
        tiny_data.hr, schedule, steps=30, batch_size=4, seed=3, widths=(4, 8), temb_dim=8
    )
    np.testing.assert_array_equal(prior.history_["loss"], hist["loss"])
    a = prior.sample(2, steps=5, seed=9)
    rngs = [np.random.default_rng([9, k]) for k in range(2)]
    from guidedsr.diffusion import sample_unconditional

    b = sample_unconditional(model, schedule, (1, 16, 16), rngs, steps=5, n_images=2)
    np.testing.assert_array_equal(a, b)
    assert a.shape == (2, 1, 16, 16)
    assert a.min() >= 0.0 and a.max() <= 1.0


def test_prior_save_load_round_trip(tiny_data, tmp_path):
    prior = _tiny_prior(tiny_data.hr)
    path = tmp_path / "prior.dgta"
    prior.save(path)
    other = DiffusionPrior().load(path)
    np.testing.assert_array_equal(
        prior.sample(1, steps=4, seed=0), other.sample(1, steps=4, seed=0)
    )


def test_prior_rejects_bad_input():
    with pytest.raises(DimensionError):
        DiffusionPrior().fit(np.zeros((4, 16, 16), dtype=np.float32))
    with pytest.raises(ContractError):
        DiffusionPrior().fit(np.full((2, 1, 16, 16), 1.5, dtype=np.float32))


# ------------------------------------------------------------- daware


def test_daware_fit_infers_scale_and_restores(tiny_data):
    est = DegradationAwareSR(train_steps=20, batch_size=4, seed=1)
    est.fit(tiny_data.lr, tiny_data.hr)
    assert est.scale_ == 2
    out = est.transform(tiny_data.lr[:3])
    assert out.shape == (3, 1, 16, 16)
    ref = est.models_.restore(tiny_data.lr[:3], est.models_.encode(tiny_data.lr[:3]))
    np.testing.assert_array_equal(out, ref)
    deg = est.degrade(tiny_data.hr[:2])
    assert deg.shape == (2, 1, 8, 8)


def test_daware_scale_mismatch_errors(tiny_data):
    with pytest.raises(ContractError):
        DegradationAwareSR(scale=4, train_steps=5).fit(tiny_data.lr, tiny_data.hr)
    with pytest.raises(DimensionError):
        DegradationAwareSR(train_steps=5).fit(tiny_data.lr[:, :, :5, :], tiny_data.hr)
    with pytest.raises(DimensionError):
        DegradationAwareSR(train_steps=5).fit(tiny_data.lr[:4], tiny_data.hr)


def test_daware_save_load(tiny_data, tmp_path):
    est = DegradationAwareSR(train_steps=10, batch_size=4).fit(tiny_data.lr, tiny_data.hr)
    path = tmp_path / "daware.dgta"
    est.save(path)
    other = DegradationAwareSR().load(path)
    np.testing.assert_array_equal(
        est.transform(tiny_data.lr[:2]), other.transform(tiny_data.lr[:2])
    )
    assert other.scale_ == 2


# ------------------------------------------------------------- kernels


def test_kernel_regressor_fit_predict(tiny_data):
    est = BlurKernelRegressor(train_steps=20, batch_size=4, width=4, seed=2)
    est.fit(tiny_data.lr, tiny_data.kernels)
    pred = est.predict(tiny_data.lr[:3])
    assert pred.shape == (3, 21, 21)
    assert np.all(np.isfinite(pred))


def test_kernel_regressor_accepts_raw_arrays(tiny_data):
    raw = [k.weights for k in tiny_data.kernels]
    est = BlurKernelRegressor(train_steps=8, batch_size=4, width=4, seed=2)
    est.fit(tiny_data.lr, raw)
    ref = BlurKernelRegressor(train_steps=8, batch_size=4, width=4, seed=2)
    ref.fit(tiny_data.lr, tiny_data.kernels)
    np.testing.assert_array_equal(est.predict(tiny_data.lr[:2]), ref.predict(tiny_data.lr[:2]))


def test_kernel_regressor_rejects_bad_targets(tiny_data):
    est = BlurKernelRegressor(train_steps=5)
    with pytest.raises(DimensionError):
        est.fit(tiny_data.lr, tiny_data.kernels[:3])
    with pytest.raises(DimensionError):
        est.fit(tiny_data.lr, [np.zeros((4, 4))] * len(tiny_data))
    with pytest.raises(DimensionError):
        est.fit(tiny_data.lr, [np.zeros((23, 23))] * len(tiny_data))


# ------------------------------------------------------------- restorer


def test_guided_restorer_matches_driver(tiny_data):
    prior = _tiny_prior(tiny_data.hr)
    op = build_avgpool_operator(2, (16, 16))
    oracle = OperatorBackedModels(op)
    est = GuidedRestorer(
        mode="implicit", alpha=0.4, steps=6, seed=5, prior=prior, degradation=oracle
    ).fit()
    out = est.predict(tiny_data.lr[:2])
    ref = sample_restore(
        tiny_data.lr[:2],
        prior.model_,
        prior.schedule_,
        GuidanceConfig(mode="implicit", alpha=0.4, steps=6, seed=5),
        daware_models=oracle,
    )
    np.testing.assert_array_equal(out, ref)
    assert out.shape == (2, 1, 16, 16)
    np.testing.assert_array_equal(est.transform(tiny_data.lr[:2]), out)


def test_guided_restorer_component_checks(tiny_data):
    prior = _tiny_prior(tiny_data.hr)
    op = build_avgpool_operator(2, (16, 16))
    oracle = OperatorBackedModels(op)
    with pytest.raises(ContractError):
        GuidedRestorer(prior=None).fit()
    with pytest.raises(ContractError):
        GuidedRestorer(mode="implicit", prior=prior).fit()
    with pytest.raises(ContractError):
        GuidedRestorer(mode="ddnm", prior=prior, degradation=oracle).fit()
    with pytest.raises(ContractError):
        GuidedRestorer(mode="explicit", prior=prior, degradation=oracle).fit()
    with pytest.raises(NotFittedError):
        GuidedRestorer(mode="implicit", prior=DiffusionPrior(), degradation=oracle).fit()
    # projection mode ignores alpha by pinning it to 1
    est = GuidedRestorer(
        mode="ddnm", alpha=0.2, perturbation=False, prior=prior, operator=op, steps=4
    ).fit()
    assert est._config().alpha == 1.0
    out = est.predict(tiny_data.lr[:1])
    assert out.shape == (1, 1, 16, 16)


def test_guided_restorer_accepts_wrapped_components(tiny_data):
    prior = _tiny_prior(tiny_data.hr)
    learned = DegradationAwareSR(train_steps=10, batch_size=4).fit(tiny_data.lr, tiny_data.hr)
    kern = BlurKernelRegressor(train_steps=8, batch_size=4, width=4).fit(
        tiny_data.lr, tiny_data.kernels
    )
    est = GuidedRestorer(
        mode="combine", alpha=0.3, steps=4, prior=prior, degradation=learned, kernel=kern
    ).fit()
    raw = GuidedRestorer(
        mode="combine",
        alpha=0.3,
        steps=4,
        prior=(prior.model_, prior.schedule_),
        degradation=learned.models_,
        kernel=kern.net_,
    ).fit()
    np.testing.assert_array_equal(
        est.predict(tiny_data.lr[:2]), raw.predict(tiny_data.lr[:2])
    )
