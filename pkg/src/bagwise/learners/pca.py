"""PCA decorrelation with optional low-variance component dropping."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..bagcore import BagwiseError


@dataclass(frozen=True)
class PcaTransform:
    mean: np.ndarray
    components: np.ndarray      # rows are principal axes
    stddevs: np.ndarray         # per-component standard deviation
    reduce: bool

    @property
    def n_kept(self) -> int:
        return self.components.shape[0]


def pca_fit(X, reduce: bool = False) -> PcaTransform:
    """Fit a PCA rotation; with reduce=True drop components with sd < 1."""
    X = np.asarray(X, dtype=float)
    if X.shape[0] < 2:
        raise BagwiseError("pca_fit: need at least 2 samples")
    mean = X.mean(axis=0)
    centered = X - mean
    # SVD keeps orthonormality even for rank-deficient data.
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    stddevs = s / np.sqrt(X.shape[0] - 1)
    if reduce:
        keep = stddevs >= 1.0
        if not np.any(keep):
            keep = stddevs == stddevs.max()  # never drop everything
        vt, stddevs = vt[keep], stddevs[keep]
    return PcaTransform(mean, vt, stddevs, reduce)


def pca_transform(transform: PcaTransform, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return (X - transform.mean) @ transform.components.T


def pca_inverse(transform: PcaTransform, Z) -> np.ndarray:
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    return Z @ transform.components + transform.mean
