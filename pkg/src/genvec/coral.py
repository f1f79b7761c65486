"""CORAL: match the mean and covariance of a source set to a target set."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embeddings import as_array
from .errors import DimensionError
from .numeric import l2_normalize, sym_matrix_power

SHRINKAGE = 1e-6


@dataclass(frozen=True)
class CoralModel:
    source_mean: np.ndarray
    target_mean: np.ndarray
    source_inv_sqrt: np.ndarray  # C_s^{-1/2}
    target_sqrt: np.ndarray  # C_r^{1/2}
    normalize_inputs: bool = True

    @property
    def transform(self) -> np.ndarray:
        return self.source_inv_sqrt @ self.target_sqrt


def _prepare(X, normalize):
    X = np.asarray(as_array(X), dtype=np.float64)
    if X.ndim != 2 or len(X) < 2:
        raise DimensionError("CORAL needs 2-D inputs with at least 2 rows")
    return l2_normalize(X) if normalize else X


def _cov(X):
    # divisor N-1, plus shrinkage so rank-deficient sets stay invertible
    C = np.cov(X, rowvar=False).reshape(X.shape[1], X.shape[1])
    return C + SHRINKAGE * np.eye(X.shape[1])


def coral_fit(X_source, X_target, normalize: bool = True) -> CoralModel:
    """Fit on unit-normalized rows (normalized here unless ``normalize=False``)."""
    Xs = _prepare(X_source, normalize)
    Xr = _prepare(X_target, normalize)
    if Xs.shape[1] != Xr.shape[1]:
        raise DimensionError(f"source dim {Xs.shape[1]} != target dim {Xr.shape[1]}")
    return CoralModel(
        Xs.mean(axis=0),
        Xr.mean(axis=0),
        sym_matrix_power(_cov(Xs), -0.5),
        sym_matrix_power(_cov(Xr), 0.5),
        normalize,
    )


def coral_transform(model: CoralModel, X_source) -> np.ndarray:
    """Aligned rows before the final unit normalization."""
    Xs = _prepare(X_source, model.normalize_inputs)
    if Xs.shape[1] != model.source_mean.shape[0]:
        raise DimensionError("dimension mismatch with the fitted model")
    return (Xs - model.source_mean) @ model.transform + model.target_mean


def coral_apply(model: CoralModel, X_source) -> np.ndarray:
    """Aligned rows projected back onto the unit sphere."""
    return l2_normalize(coral_transform(model, X_source))


def coral_fit_apply_per_class(X_source, y_source, X_target, y_target=None, normalize=True):
    """Align each source class separately.

    With target labels each class is matched to its own target class;
    without them every class is matched to the whole target set.
    """
    Xs = np.asarray(as_array(X_source), dtype=np.float64)
    y_source = np.asarray(y_source)
    out = np.empty_like(Xs)
    for label in np.unique(y_source):
        rows = y_source == label
        target = X_target if y_target is None else np.asarray(as_array(X_target))[np.asarray(y_target) == label]
        out[rows] = coral_apply(coral_fit(Xs[rows], target, normalize), Xs[rows])
    return out
