"""Frechet distance between Gaussian summaries of feature sets.

The trace term uses the symmetric product form sqrt(S1 @ Sigma2 @ S1) with
S1 = sqrt(Sigma1), which stays symmetric PSD under rounding where the naive
sqrt(Sigma1 @ Sigma2) does not.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GaussianStats:
    """Sample mean and unbiased covariance of a feature set."""

    mean: np.ndarray
    covariance: np.ndarray
    count: int

    def __post_init__(self) -> None:
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.covariance, dtype=np.float64)
        if mean.ndim != 1:
            raise ValueError("mean must be a vector")
        if cov.shape != (mean.size, mean.size):
            raise ValueError(
                f"covariance shape {cov.shape} does not match dimension {mean.size}"
            )
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @property
    def dim(self) -> int:
        return self.mean.size


def gaussian_stats(features: np.ndarray) -> GaussianStats:
    """Two-pass mean and unbiased (n-1) covariance of an (n, d) matrix."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"expected an (n, d) matrix, got shape {x.shape}")
    n = x.shape[0]
    if n < 2:
        raise ValueError(f"need at least 2 samples for a covariance, got {n}")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (n - 1)
    cov = (cov + cov.T) / 2.0  # exact symmetry despite fp accumulation order
    return GaussianStats(mean=mean, covariance=cov, count=n)


def sqrtm_psd(a: np.ndarray, sym_tol: float = 1e-8) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition.

    Negative eigenvalues (rounding artifacts) clamp to zero. Inputs that are
    asymmetric beyond tolerance are rejected.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    scale = max(1.0, float(np.abs(a).max()) if a.size else 1.0)
    if float(np.abs(a - a.T).max() if a.size else 0.0) > sym_tol * scale:
        raise ValueError("matrix is asymmetric beyond tolerance")
    sym = (a + a.T) / 2.0
    eigvals, eigvecs = np.linalg.eigh(sym)
    eigvals = np.clip(eigvals, 0.0, None)
    root = (eigvecs * np.sqrt(eigvals)) @ eigvecs.T
    return (root + root.T) / 2.0


def frechet_distance(s1: GaussianStats, s2: GaussianStats) -> float:
    """Squared Frechet distance between two Gaussian summaries (>= 0)."""
    if s1.dim != s2.dim:
        raise ValueError(f"dimension mismatch: {s1.dim} vs {s2.dim}")
    diff = s1.mean - s2.mean
    root1 = sqrtm_psd(s1.covariance)
    inner = root1 @ s2.covariance @ root1
    cross = sqrtm_psd((inner + inner.T) / 2.0)
    trace_term = (
        np.trace(s1.covariance) + np.trace(s2.covariance) - 2.0 * np.trace(cross)
    )
    return max(float(diff @ diff + trace_term), 0.0)
