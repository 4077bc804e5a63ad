"""Estimator plumbing: constructor-introspected get_params/set_params,
fitted-state checks, and input validation helpers shared by the
high-level wrappers."""

from __future__ import annotations

import inspect

import numpy as np

from .errors import ContractError, DimensionError, NotFittedError


class BaseEstimator:
    """Parameters are exactly the constructor arguments, stored under the
    same names; subclasses must not do computation in __init__."""

    @classmethod
    def _param_names(cls):
        sig = inspect.signature(cls.__init__)
        names = []
        for p in sig.parameters.values():
            if p.name == "self":
                continue
            if p.kind in (p.VAR_POSITIONAL, p.VAR_KEYWORD):
                raise ContractError(
                    f"{cls.__name__}.__init__ may not use *args/**kwargs"
                )
            names.append(p.name)
        return sorted(names)

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params):
        valid = set(self._param_names())
        for key, value in params.items():
            if key not in valid:
                raise ContractError(
                    f"invalid parameter {key!r} for {type(self).__name__}; "
                    f"valid parameters: {sorted(valid)}"
                )
            setattr(self, key, value)
        return self

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.get_params().items())
        return f"{type(self).__name__}({args})"


def check_is_fitted(estimator, attributes) -> None:
    if isinstance(attributes, str):
        attributes = (attributes,)
    missing = [a for a in attributes if not hasattr(estimator, a)]
    if missing:
        raise NotFittedError(
            f"{type(estimator).__name__} is not fitted yet (missing {missing}); "
            "call fit before using this method"
        )


def check_image_stack(X, name: str = "X", channels: int | None = None) -> np.ndarray:
    """Validate and convert a (N,C,H,W) float image stack in [0,1]."""
    X = np.asarray(X, dtype=np.float32)
    if X.ndim != 4:
        raise DimensionError(f"{name} must be (N,C,H,W), got shape {X.shape}")
    if X.shape[0] < 1:
        raise ContractError(f"{name} is empty")
    if channels is not None and X.shape[1] != channels:
        raise DimensionError(f"{name} must have {channels} channels, got {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise ContractError(f"{name} contains non-finite values")
    if X.min() < -1e-6 or X.max() > 1.0 + 1e-6:
        raise ContractError(f"{name} values must lie in [0,1]")
    return X
