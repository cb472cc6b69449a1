"""Dense float64 math substrate: activations, softmax, PCA, seeded randomness.

Everything downstream (cells, training, data generation) goes through this
module so that numeric conventions live in one place:

* all arrays are numpy float64,
* randomness flows through numpy's PCG64 generator (O'Neill's permuted
  congruential generator, the documented default of ``numpy.random``),
  seeded explicitly, so a fixed seed reproduces every draw bit-for-bit.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ShapeMismatchError(ValueError):
    """Operands have incompatible shapes."""


class DegenerateDataError(ValueError):
    """Input data carries no usable variance."""


def as_vector(x) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeMismatchError(f"expected a 1-d vector, got shape {v.shape}")
    return v


def as_matrix(x) -> np.ndarray:
    m = np.asarray(x, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeMismatchError(f"expected a 2-d matrix, got shape {m.shape}")
    return m


def matvec(m: np.ndarray, v: np.ndarray) -> np.ndarray:
    m = as_matrix(m)
    v = as_vector(v)
    if m.shape[1] != v.shape[0]:
        raise ShapeMismatchError(
            f"matrix of shape {m.shape} cannot multiply vector of length {v.shape[0]}"
        )
    return m @ v


def elementwise_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = as_vector(a)
    b = as_vector(b)
    if a.shape != b.shape:
        raise ShapeMismatchError(
            f"elementwise product needs equal lengths, got {a.shape[0]} and {b.shape[0]}"
        )
    return a * b


def sigmoid(v: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function, elementwise."""
    v = np.asarray(v, dtype=np.float64)
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def tanh(v: np.ndarray) -> np.ndarray:
    return np.tanh(np.asarray(v, dtype=np.float64))


def softmax(y: np.ndarray) -> np.ndarray:
    """Probabilities from confidence scores, with max-subtraction for stability."""
    y = as_vector(y)
    if y.shape[0] == 0:
        raise ShapeMismatchError("softmax of an empty vector")
    z = np.exp(y - np.max(y))
    return z / np.sum(z)


# ---------------------------------------------------------------------------
# PCA


@dataclass(frozen=True)
class PcaTransform:
    """Projection onto the leading principal components of the fitted data.

    ``basis`` has one orthonormal row per retained component (components x
    input dim), sorted by decreasing eigenvalue.  The sign of each row is
    fixed so its largest-magnitude entry is positive, making the fit
    deterministic for a given input order.
    """

    mean: np.ndarray
    basis: np.ndarray
    energy_retained: float

    @property
    def n_components(self) -> int:
        return self.basis.shape[0]

    @property
    def input_dim(self) -> int:
        return self.basis.shape[1]


def pca_fit(samples, energy: float = 0.9) -> PcaTransform:
    """Fit PCA retaining the smallest component count whose cumulative
    eigenvalue mass reaches ``energy``."""
    if not 0.0 < energy <= 1.0:
        raise ValueError(f"energy must lie in (0, 1], got {energy}")
    x = np.asarray([as_vector(s) for s in samples], dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise DegenerateDataError("PCA needs at least 2 samples of equal dimension")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (x.shape[0] - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = np.clip(eigvals[order], 0.0, None)
    eigvecs = eigvecs[:, order]
    total = float(np.sum(eigvals))
    if total <= 1e-12:
        raise DegenerateDataError("covariance is zero: all samples identical")
    cum = np.cumsum(eigvals) / total
    k = int(np.searchsorted(cum, energy - 1e-12) + 1)
    k = min(k, len(eigvals))
    basis = eigvecs[:, :k].T.copy()
    for row in basis:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    retained = float(np.sum(eigvals[:k]) / total)
    return PcaTransform(mean=mean, basis=basis, energy_retained=retained)


def pca_apply(t: PcaTransform, v: np.ndarray) -> np.ndarray:
    v = as_vector(v)
    if v.shape[0] != t.input_dim:
        raise ShapeMismatchError(
            f"transform expects dimension {t.input_dim}, got {v.shape[0]}"
        )
    return t.basis @ (v - t.mean)


def pca_reconstruct(t: PcaTransform, projected: np.ndarray) -> np.ndarray:
    return t.basis.T @ as_vector(projected) + t.mean


# ---------------------------------------------------------------------------
# Randomness


def seeded_rng(seed: int) -> np.random.Generator:
    """Deterministic generator; PCG64 keyed through numpy's SeedSequence."""
    return np.random.Generator(np.random.PCG64(seed))


def uniform(rng: np.random.Generator, lo: float, hi: float, size=None) -> np.ndarray:
    return rng.uniform(lo, hi, size=size)
