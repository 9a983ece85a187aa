"""Exact PCA through a symmetric eigendecomposition of the covariance."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, InsufficientData


class RankDeficientWarning(UserWarning):
    """Fewer than ``k`` directions carry positive variance."""


@dataclass(frozen=True, eq=False)
class PcaModel:
    mean: np.ndarray  # (d,)
    components: np.ndarray  # (k, d), orthonormal rows
    eigenvalues: np.ndarray  # (k,), descending
    rank: int  # number of positive eigenvalues among the kept k

    def __post_init__(self):
        for name in ("mean", "components", "eigenvalues"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if self.components.ndim != 2 or self.components.shape[1] != self.mean.size:
            raise DimensionMismatch("components must be (k, d) with d matching the mean")

    @property
    def input_dim(self) -> int:
        return self.mean.size

    @property
    def output_dim(self) -> int:
        return self.components.shape[0]

    @property
    def rank_deficient(self) -> bool:
        return self.rank < self.output_dim


def _sign_normalise(vecs: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    # rows; first entry with magnitude above tol made positive
    out = vecs.copy()
    for row in out:
        nz = np.flatnonzero(np.abs(row) > tol)
        if nz.size and row[nz[0]] < 0:
            row *= -1.0
    return out


def _fit(x: np.ndarray, k: int) -> PcaModel:
    n, d = x.shape
    mean = x.mean(axis=0)
    centred = x - mean
    if n > 1:
        cov = centred.T @ centred / (n - 1)
    else:
        cov = np.zeros((d, d))
    cov = (cov + cov.T) / 2  # exact symmetry for the solver
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(-vals, kind="stable")[:k]
    vals = np.clip(vals[order], 0.0, None)
    comps = _sign_normalise(vecs[:, order].T)
    top = vals[0] if vals.size else 0.0
    tol = max(top, 0.0) * d * np.finfo(np.float64).eps
    rank = int(np.count_nonzero(vals > tol)) if top > 0 else 0
    return PcaModel(mean, comps, vals, rank)


def pca_fit(data, k: int) -> PcaModel:
    """Fit a ``k``-component PCA on the rows of ``data``.

    Components are the top-``k`` covariance eigenvectors, ordered by
    descending eigenvalue, each with its first non-zero entry positive.
    When fewer than ``k`` eigenvalues are positive the model is still
    returned, flagged ``rank_deficient``, and a
    :class:`RankDeficientWarning` is issued.
    """
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionMismatch(f"expected a 2-D sample matrix, got shape {x.shape}")
    n, d = x.shape
    if n < 2:
        raise InsufficientData(f"PCA needs at least 2 samples, got {n}")
    if not 1 <= k <= d:
        raise DimensionMismatch(f"output dim {k} must lie in [1, {d}]")
    model = _fit(x, k)
    if model.rank_deficient:
        warnings.warn(
            f"only {model.rank} of {k} components have positive variance",
            RankDeficientWarning,
            stacklevel=2,
        )
    return model


def pca_fit_lenient(data, k: int) -> PcaModel:
    """Like :func:`pca_fit` but accepts a single sample and stays silent.

    Used when indexing tiny galleries, where a one-group partition leaves a
    single vector to fit on; any orthonormal basis is then valid.
    """
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise InsufficientData("PCA needs at least one sample")
    if not 1 <= k <= x.shape[1]:
        raise DimensionMismatch(f"output dim {k} must lie in [1, {x.shape[1]}]")
    return _fit(x, k)


def pca_transform(model: PcaModel, v) -> np.ndarray:
    """Project one vector ``(d,)`` or a batch ``(n, d)`` onto the components."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != model.input_dim:
        raise DimensionMismatch(f"input has dim {v.shape[-1]}, model expects {model.input_dim}")
    return (v - model.mean) @ model.components.T


def reconstruction_error(model: PcaModel, data) -> float:
    """Mean squared residual after projecting and mapping back."""
    x = np.asarray(data, dtype=np.float64)
    z = pca_transform(model, x)
    recon = z @ model.components + model.mean
    return float(np.mean(np.sum((x - recon) ** 2, axis=-1)))
