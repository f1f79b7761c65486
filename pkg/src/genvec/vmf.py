"""Per-class von Mises-Fisher models on the unit hypersphere."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bessel import log_iv
from .errors import DegenerateInputError, DimensionError, ParameterError

R_MAX = 1.0 - 1e-6
UNIT_TOL = 1e-4


def kappa_estimate(r_bar: float, dim: int) -> float:
    """Closed-form concentration estimate ``R (D - R^2) / (1 - R^2)``."""
    r = min(float(r_bar), R_MAX)
    return r * (dim - r * r) / (1.0 - r * r)


def log_normalizer(kappa: float, dim: int, scaled: bool = True) -> float:
    """``log C_D(kappa)`` for the vMF density on the (D-1)-sphere.

    ``scaled=True`` uses the log-space Bessel evaluation; ``scaled=False``
    takes ``log(scipy.special.iv)`` directly and overflows for large kappa.
    """
    if dim < 2:
        raise ParameterError("the vMF density needs dim >= 2")
    nu = dim / 2.0 - 1.0
    if kappa <= 0:
        raise ParameterError("kappa must be positive")
    if scaled:
        log_i = log_iv(nu, kappa)
    else:
        from scipy.special import iv

        log_i = math.log(iv(nu, kappa))
    return nu * math.log(kappa) - (dim / 2.0) * math.log(2.0 * math.pi) - log_i


@dataclass(frozen=True)
class VmfModel:
    classes: tuple
    mean_directions: np.ndarray  # n_classes x D, unit rows
    kappas: np.ndarray
    log_priors: np.ndarray

    @property
    def dim(self) -> int:
        return self.mean_directions.shape[1]

    def with_log_priors(self, log_priors) -> "VmfModel":
        log_priors = np.asarray(log_priors, dtype=np.float64)
        if log_priors.shape != self.kappas.shape:
            raise DimensionError("one log prior per class required")
        return VmfModel(self.classes, self.mean_directions, self.kappas, log_priors)


def vmf_fit(X_by_class: dict) -> VmfModel:
    if not X_by_class:
        raise ParameterError("vmf_fit needs at least one class")
    classes, mus, kappas = [], [], []
    dim = None
    for label, X in X_by_class.items():
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if len(X) == 0:
            raise DimensionError(f"class {label!r} has no rows")
        if dim is None:
            dim = X.shape[1]
        elif X.shape[1] != dim:
            raise DimensionError(f"class {label!r} has dim {X.shape[1]}, expected {dim}")
        mean = X.mean(axis=0)
        r_bar = float(np.linalg.norm(mean))
        if r_bar < 1e-12:
            raise DegenerateInputError(f"class {label!r} has a zero mean resultant")
        classes.append(label)
        mus.append(mean / r_bar)
        kappas.append(kappa_estimate(r_bar, dim))
    k = len(classes)
    return VmfModel(tuple(classes), np.array(mus), np.array(kappas), np.full(k, -math.log(k)))


def vmf_log_posterior(model: VmfModel, X) -> np.ndarray:
    """Unnormalized log posterior per class, shape (n, n_classes)."""
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.shape[1] != model.dim:
        raise DimensionError(f"input dim {X.shape[1]} != model dim {model.dim}")
    norms = np.linalg.norm(X, axis=1)
    if np.any(np.abs(norms - 1.0) > UNIT_TOL):
        bad = int(np.argmax(np.abs(norms - 1.0)))
        raise ParameterError(f"row {bad} has norm {norms[bad]:.6f}; inputs must be unit vectors")
    log_c = np.array([log_normalizer(k, model.dim) for k in model.kappas])
    scores = (X @ model.mean_directions.T) * model.kappas + log_c + model.log_priors
    return scores[0] if single else scores


def vmf_classify(model: VmfModel, X) -> list:
    scores = np.atleast_2d(vmf_log_posterior(model, X))
    # argmax returns the first maximum: ties go to the lowest class index
    return [model.classes[i] for i in np.argmax(scores, axis=1)]
