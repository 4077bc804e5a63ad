"""Fit/transform wrappers over the training loops and the guided
sampler.

Each class follows the convention from base.BaseEstimator: the
constructor only stores hyperparameters, fit performs the work and
leaves its results in trailing-underscore attributes, and get_params /
set_params expose the constructor arguments for cloning and grid-style
configuration. The wrappers validate inputs, then delegate to the
module-level functions.
"""

from __future__ import annotations

from types import SimpleNamespace

import numpy as np

from . import daware as _daware
from . import diffusion as _diffusion
from . import guidance as _guidance
from .base import BaseEstimator, check_image_stack, check_is_fitted
from .degradation import KERNEL_EMBED_SIZE, GaussianKernel
from .errors import ContractError, DimensionError


class DiffusionPrior(BaseEstimator):
    """Unconditional image prior trained by noise prediction.

    fit(X) expects a (N,C,H,W) float stack in [0,1]; sample() then draws
    new images of the same shape over a spaced step subsequence.
    """

    def __init__(
        self,
        timesteps: int = 1000,
        beta_start: float = 1e-4,
        beta_end: float = 0.02,
        train_steps: int = 20000,
        batch_size: int = 16,
        learning_rate: float = 2e-4,
        widths=(32, 64),
        temb_dim: int = 32,
        seed: int = 0,
    ):
        self.timesteps = timesteps
        self.beta_start = beta_start
        self.beta_end = beta_end
        self.train_steps = train_steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.widths = widths
        self.temb_dim = temb_dim
        self.seed = seed

    def fit(self, X, y=None):
        X = check_image_stack(X, "X")
        schedule = _diffusion.build_schedule(self.timesteps, self.beta_start, self.beta_end)
        model, history = _diffusion.train_eps_model(
            X,
            schedule,
            steps=self.train_steps,
            batch_size=self.batch_size,
            lr=self.learning_rate,
            seed=self.seed,
            widths=tuple(self.widths),
            temb_dim=self.temb_dim,
        )
        self.model_ = model
        self.schedule_ = schedule
        self.history_ = history
        self.dims_ = X.shape[1:]
        return self

    def sample(self, n_images: int = 1, *, steps: int = 100, seed: int = 0) -> np.ndarray:
        check_is_fitted(self, ("model_", "schedule_"))
        if n_images < 1:
            raise ContractError(f"n_images must be >= 1, got {n_images}")
        rngs = [np.random.default_rng([int(seed), k]) for k in range(n_images)]
        return _diffusion.sample_unconditional(
            self.model_, self.schedule_, self.dims_, rngs, steps=steps, n_images=n_images
        )

    def save(self, path) -> None:
        check_is_fitted(self, ("model_", "schedule_"))
        _diffusion.save_diffusion(path, self.model_, self.schedule_, self.dims_[1:])

    def load(self, path):
        """Populate fitted state from a checkpoint instead of fit()."""
        model, schedule, meta = _diffusion.load_diffusion(path)
        self.model_ = model
        self.schedule_ = schedule
        self.history_ = {}
        dims = meta.get("image-dims", "")
        if dims:
            h, w = dims.split("x")
            self.dims_ = (model.channels, int(h), int(w))
        else:
            raise ContractError(f"{path}: checkpoint does not record image dims")
        return self


def _infer_scale(hr_shape, lr_shape) -> int:
    if hr_shape[0] != lr_shape[0]:
        raise DimensionError(
            f"X and y must pair up: {lr_shape[0]} observations vs {hr_shape[0]} targets"
        )
    if hr_shape[1] != lr_shape[1]:
        raise DimensionError(
            f"channel mismatch: observations have {lr_shape[1]}, targets {hr_shape[1]}"
        )
    sh, rh = divmod(hr_shape[2], lr_shape[2])
    sw, rw = divmod(hr_shape[3], lr_shape[3])
    if rh or rw or sh != sw or sh < 1:
        raise DimensionError(
            f"target dims {hr_shape[2:]} are not an integer multiple of observation dims {lr_shape[2:]}"
        )
    return sh


class DegradationAwareSR(BaseEstimator):
    """Jointly trained degrader/restorer pair conditioned on a per-image
    degradation embedding.

    fit(X, y) takes low-resolution observations X and their
    high-resolution targets y; transform(X) then restores new
    observations. The upscaling factor is inferred from the shapes
    unless given explicitly.
    """

    def __init__(
        self,
        scale: int | None = None,
        train_steps: int = 10000,
        batch_size: int = 16,
        learning_rate: float = 5e-4,
        enc_width: int = 16,
        net_width: int = 32,
        cycle_weight: float = _daware.DEFAULT_CYCLE_WEIGHT,
        seed: int = 0,
    ):
        self.scale = scale
        self.train_steps = train_steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.enc_width = enc_width
        self.net_width = net_width
        self.cycle_weight = cycle_weight
        self.seed = seed

    def fit(self, X, y):
        X = check_image_stack(X, "X")
        y = check_image_stack(y, "y")
        scale = _infer_scale(y.shape, X.shape)
        if self.scale is not None and int(self.scale) != scale:
            raise ContractError(
                f"scale={self.scale} but the data implies {scale}"
            )
        data = SimpleNamespace(hr=y, lr=X, scale=scale)
        models, history = _daware.train_daware(
            data,
            steps=self.train_steps,
            batch_size=self.batch_size,
            lr=self.learning_rate,
            seed=self.seed,
            enc_width=self.enc_width,
            net_width=self.net_width,
            cycle_weight=self.cycle_weight,
        )
        self.models_ = models
        self.history_ = history
        self.scale_ = scale
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "models_")
        X = check_image_stack(X, "X")
        return self.models_.restore(X, self.models_.encode(X))

    def degrade(self, X) -> np.ndarray:
        """Apply the learned forward map to high-resolution images, using
        the embedding of their own degraded output as conditioning."""
        check_is_fitted(self, "models_")
        X = check_image_stack(X, "X")
        rep = self.models_.encode(
            np.stack([_avg_pool(img, self.scale_) for img in X])
        )
        return self.models_.degrade(X, rep)

    def save(self, path) -> None:
        check_is_fitted(self, "models_")
        _daware.save_daware(path, self.models_)

    def load(self, path):
        self.models_ = _daware.load_daware(path)
        self.history_ = {}
        self.scale_ = self.models_.scale
        return self


def _avg_pool(img: np.ndarray, scale: int) -> np.ndarray:
    c, h, w = img.shape
    return img.reshape(c, h // scale, scale, w // scale, scale).mean(axis=(2, 4)).astype(np.float32)


class BlurKernelRegressor(BaseEstimator):
    """Predicts the blur kernel behind an observation, on a fixed square
    canvas. fit(X, y) takes observations and their true kernels; y may
    hold kernel objects or raw odd-sized square weight arrays."""

    def __init__(
        self,
        train_steps: int = 5000,
        batch_size: int = 16,
        learning_rate: float = 1e-3,
        width: int = 32,
        seed: int = 0,
    ):
        self.train_steps = train_steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.width = width
        self.seed = seed

    @staticmethod
    def _as_kernel(k):
        if isinstance(k, GaussianKernel):
            return k
        arr = np.asarray(k, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] % 2 == 0:
            raise DimensionError(
                f"kernel targets must be odd square arrays, got shape {arr.shape}"
            )
        if arr.shape[0] > KERNEL_EMBED_SIZE:
            raise DimensionError(
                f"kernel target size {arr.shape[0]} exceeds the {KERNEL_EMBED_SIZE} canvas"
            )
        # duck-typed stand-in: embedding only reads .size and .weights
        return SimpleNamespace(size=arr.shape[0], weights=arr)

    def fit(self, X, y):
        X = check_image_stack(X, "X")
        if len(y) != X.shape[0]:
            raise DimensionError(
                f"X and y must pair up: {X.shape[0]} observations vs {len(y)} kernels"
            )
        kernels = [self._as_kernel(k) for k in y]
        data = SimpleNamespace(lr=X, kernels=kernels)
        net, history = _guidance.train_kernel_estimator(
            data,
            steps=self.train_steps,
            batch_size=self.batch_size,
            lr=self.learning_rate,
            seed=self.seed,
            width=self.width,
        )
        self.net_ = net
        self.history_ = history
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "net_")
        X = check_image_stack(X, "X")
        return self.net_.predict(X)

    def save(self, path) -> None:
        check_is_fitted(self, "net_")
        _guidance.save_kernel_net(path, self.net_)

    def load(self, path):
        self.net_ = _guidance.load_kernel_net(path)
        self.history_ = {}
        return self


def _resolve_prior(prior):
    if prior is None:
        raise ContractError("GuidedRestorer needs a fitted DiffusionPrior (prior=)")
    if isinstance(prior, DiffusionPrior):
        check_is_fitted(prior, ("model_", "schedule_"))
        return prior.model_, prior.schedule_
    if isinstance(prior, (tuple, list)) and len(prior) == 2:
        return prior[0], prior[1]
    raise ContractError(
        "prior must be a fitted DiffusionPrior or a (model, schedule) pair"
    )


def _resolve_daware(degradation):
    if degradation is None:
        return None
    if isinstance(degradation, DegradationAwareSR):
        check_is_fitted(degradation, "models_")
        return degradation.models_
    if hasattr(degradation, "restore") and hasattr(degradation, "encode"):
        return degradation
    raise ContractError(
        "degradation must be a fitted DegradationAwareSR or expose encode/degrade/restore"
    )


def _resolve_kernel(kernel):
    if kernel is None:
        return None
    if isinstance(kernel, BlurKernelRegressor):
        check_is_fitted(kernel, "net_")
        return kernel.net_
    if hasattr(kernel, "predict") and hasattr(kernel, "canvas"):
        return kernel
    raise ContractError(
        "kernel must be a fitted BlurKernelRegressor or a kernel net with predict()"
    )


class GuidedRestorer(BaseEstimator):
    """Blind super-resolution by guided sampling from a diffusion prior.

    Composes pre-fitted pieces rather than training anything itself:
    fit() resolves and checks the components the chosen mode needs,
    predict(X) runs the guided sampler on a batch of observations.
    Component estimators may be passed directly or as their underlying
    model objects.
    """

    def __init__(
        self,
        mode: str = "implicit",
        alpha: float = _guidance.DEFAULT_ALPHA,
        perturbation: bool = True,
        steps: int = _guidance.DEFAULT_STEPS,
        seed: int = 0,
        scale: int | None = None,
        prior=None,
        degradation=None,
        kernel=None,
        operator=None,
    ):
        self.mode = mode
        self.alpha = alpha
        self.perturbation = perturbation
        self.steps = steps
        self.seed = seed
        self.scale = scale
        self.prior = prior
        self.degradation = degradation
        self.kernel = kernel
        self.operator = operator

    def _config(self) -> _guidance.GuidanceConfig:
        alpha = self.alpha
        if self.mode in ("ddnm", "explicit"):
            alpha = 1.0  # projection modes have no guidance weight
        return _guidance.GuidanceConfig(
            mode=self.mode,
            alpha=alpha,
            perturbation=self.perturbation,
            steps=self.steps,
            seed=self.seed,
        )

    def fit(self, X=None, y=None):
        config = self._config()  # validates mode/alpha/steps
        model, schedule = _resolve_prior(self.prior)
        models = _resolve_daware(self.degradation)
        net = _resolve_kernel(self.kernel)
        if config.mode == "ddnm" and self.operator is None:
            raise ContractError("ddnm mode needs the degradation operator (operator=)")
        if config.mode in ("implicit", "combine") and models is None:
            raise ContractError(f"{config.mode} mode needs degradation= models")
        if config.mode in ("explicit", "combine") and net is None:
            raise ContractError(f"{config.mode} mode needs kernel= estimator")
        if config.perturbation and models is None:
            raise ContractError("perturbation=True needs degradation= models")
        self.model_ = model
        self.schedule_ = schedule
        self.daware_ = models
        self.kernel_net_ = net
        self.operator_ = self.operator
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, ("model_", "schedule_"))
        X = check_image_stack(X, "X")
        return _guidance.sample_restore(
            X,
            self.model_,
            self.schedule_,
            self._config(),
            daware_models=self.daware_,
            operator=self.operator_,
            kernel_net=self.kernel_net_,
            scale=self.scale,
        )

    def transform(self, X) -> np.ndarray:
        return self.predict(X)
