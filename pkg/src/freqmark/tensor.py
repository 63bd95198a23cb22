"""Dense tensor helpers shared by every module.

Features are plain ``float64`` arrays laid out as (channel, row, column);
spectra are ``complex128`` arrays with the same layout. Only filter banks get
a dedicated container because weights and biases always travel together.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    """Raised when array extents are inconsistent with the requested operation."""


class UndefinedSimilarityError(ValueError):
    """Raised when a cosine similarity involves a zero vector."""


@dataclass(frozen=True)
class FilterBank:
    """``D`` convolutional filters of shape ``C x K x K`` plus one bias per filter."""

    filters: np.ndarray
    biases: np.ndarray

    def __post_init__(self):
        filters = np.array(self.filters, dtype=np.float64)
        biases = np.array(self.biases, dtype=np.float64)
        if filters.ndim != 4 or filters.shape[2] != filters.shape[3]:
            raise ShapeError(f"filters must be D x C x K x K, got {filters.shape}")
        if min(filters.shape) < 1:
            raise ShapeError(f"filter extents must be positive, got {filters.shape}")
        if biases.shape != (filters.shape[0],):
            raise ShapeError(
                f"expected {filters.shape[0]} biases, got shape {biases.shape}")
        if not (np.all(np.isfinite(filters)) and np.all(np.isfinite(biases))):
            raise ValueError("filter bank contains non-finite entries")
        filters.flags.writeable = False
        biases.flags.writeable = False
        object.__setattr__(self, "filters", filters)
        object.__setattr__(self, "biases", biases)

    @property
    def D(self) -> int:
        return self.filters.shape[0]

    @property
    def C(self) -> int:
        return self.filters.shape[1]

    @property
    def K(self) -> int:
        return self.filters.shape[2]

    def replace(self, filters=None, biases=None) -> "FilterBank":
        return FilterBank(self.filters if filters is None else filters,
                          self.biases if biases is None else biases)

    def permuted(self, perm) -> "FilterBank":
        """Return the bank whose ``d``-th filter is this bank's ``perm[d]``-th."""
        perm = np.asarray(perm, dtype=int)
        return FilterBank(self.filters[perm], self.biases[perm])

    @classmethod
    def random(cls, D: int, C: int, K: int, seed: int, scale: float = 1.0) -> "FilterBank":
        rng = np.random.default_rng(seed)
        return cls(rng.uniform(-scale, scale, size=(D, C, K, K)),
                   rng.uniform(-scale, scale, size=D))

    @classmethod
    def zeros(cls, D: int, C: int, K: int) -> "FilterBank":
        return cls(np.zeros((D, C, K, K)), np.zeros(D))


def check_feature(x: np.ndarray) -> np.ndarray:
    """Validate a C x M x N feature tensor (leading batch axes allowed)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim < 3:
        raise ShapeError(f"feature tensor needs at least 3 axes, got {x.shape}")
    if min(x.shape) < 1:
        raise ShapeError(f"feature extents must be positive, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("feature tensor contains non-finite entries")
    return x


def seeded_random_tensor(shape, seed: int, scale: float = 1.0) -> np.ndarray:
    """Uniform draws in ``[-scale, scale]``, reproducible for a fixed seed."""
    shape = tuple(int(s) for s in shape)
    if not shape or min(shape) < 1:
        raise ShapeError(f"extents must be positive, got {shape}")
    if not scale > 0:
        raise ValueError(f"scale must be positive, got {scale}")
    rng = np.random.default_rng(seed)
    return rng.uniform(-scale, scale, size=shape)


def l2_norm(t) -> float:
    t = np.asarray(t)
    if t.size == 0:
        raise ShapeError("l2_norm of an empty tensor")
    if np.iscomplexobj(t):
        return float(np.sqrt(np.sum(t.real ** 2 + t.imag ** 2)))
    return float(np.sqrt(np.sum(t.astype(np.float64) ** 2)))


def complex_cosine(z1, z2) -> float:
    """Directional similarity ``Re(<conj(z1), z2>) / (|z1| |z2|)`` of complex vectors."""
    z1 = np.asarray(z1, dtype=np.complex128).ravel()
    z2 = np.asarray(z2, dtype=np.complex128).ravel()
    if z1.shape != z2.shape:
        raise ShapeError(f"length mismatch: {z1.shape} vs {z2.shape}")
    n1, n2 = l2_norm(z1), l2_norm(z2)
    if n1 == 0.0 or n2 == 0.0:
        raise UndefinedSimilarityError("cosine similarity with a zero vector")
    value = float(np.real(np.vdot(z1, z2))) / (n1 * n2)
    return min(1.0, max(-1.0, value))


def batched_complex_cosine(z1: np.ndarray, z2: np.ndarray, axis: int = -1) -> np.ndarray:
    """Vectorised :func:`complex_cosine` along ``axis``; zero vectors give ``nan``."""
    z1 = np.asarray(z1, dtype=np.complex128)
    z2 = np.asarray(z2, dtype=np.complex128)
    num = np.real(np.sum(np.conj(z1) * z2, axis=axis))
    den = np.sqrt(np.sum(np.abs(z1) ** 2, axis=axis) * np.sum(np.abs(z2) ** 2, axis=axis))
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(den > 0, num / np.where(den > 0, den, 1.0), np.nan)
    return np.clip(out, -1.0, 1.0)
