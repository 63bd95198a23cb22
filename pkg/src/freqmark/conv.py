"""Circular-padded, stride-1 convolution with exact analytic gradients.

The layer follows the correlation convention
``Y[d,m,n] = b[d] + sum_{c,t,s} W[d,c,t,s] X[c,(m+t)%M,(n+s)%N]``.
All functions accept leading batch axes on features and upstream gradients;
weight and bias gradients are summed over them.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import FilterBank, ShapeError, check_feature


@dataclass(frozen=True)
class SgdConfig:
    eta: float
    steps: int = 1

    def __post_init__(self):
        if not (np.isfinite(self.eta) and self.eta >= 0):
            raise ValueError(f"learning rate must be finite and non-negative, got {self.eta}")
        if self.steps < 0:
            raise ValueError(f"steps must be non-negative, got {self.steps}")


@dataclass(frozen=True)
class GradientBundle:
    d_weights: np.ndarray
    d_biases: np.ndarray
    d_input: np.ndarray
    upstream: np.ndarray


def _check_pair(bank: FilterBank, x: np.ndarray) -> np.ndarray:
    x = check_feature(x)
    if x.shape[-3] != bank.C:
        raise ShapeError(f"input has {x.shape[-3]} channels, filters expect {bank.C}")
    M, N = x.shape[-2:]
    if M < bank.K or N < bank.K:
        raise ShapeError(f"input {M}x{N} smaller than kernel {bank.K}")
    return x


def _shifted(x: np.ndarray, t: int, s: int) -> np.ndarray:
    # out[..., m, n] = x[..., (m+t)%M, (n+s)%N]
    return np.roll(x, shift=(-t, -s), axis=(-2, -1))


def _channels_first(a: np.ndarray) -> np.ndarray:
    """``(..., C, M, N)`` -> ``(C, B, M, N)`` with the batch axes flattened."""
    return np.moveaxis(a.reshape((-1,) + a.shape[-3:]), 1, 0)


def _restore(a: np.ndarray, lead: tuple) -> np.ndarray:
    return np.moveaxis(a, 0, 1).reshape(lead + (a.shape[0],) + a.shape[-2:])


def conv_forward(bank: FilterBank, x: np.ndarray) -> np.ndarray:
    """Output maps of shape ``(..., D, M, N)``."""
    x = _check_pair(bank, x)
    lead = x.shape[:-3]
    xc = _channels_first(x)
    C, B, M, N = xc.shape
    y = np.zeros((bank.D, B * M * N))
    for t in range(bank.K):
        for s in range(bank.K):
            y += bank.filters[:, :, t, s] @ _shifted(xc, t, s).reshape(C, -1)
    return _restore(y.reshape(bank.D, B, M, N), lead) + bank.biases[:, None, None]


def conv_backward(bank: FilterBank, x: np.ndarray, upstream: np.ndarray) -> GradientBundle:
    """Gradients of a scalar loss given ``upstream = dLoss/dY`` of shape ``(..., D, M, N)``."""
    x = _check_pair(bank, x)
    upstream = np.asarray(upstream, dtype=np.float64)
    expected = x.shape[:-3] + (bank.D,) + x.shape[-2:]
    if upstream.shape != expected:
        raise ShapeError(f"upstream shape {upstream.shape} does not match {expected}")
    lead = x.shape[:-3]
    xc = _channels_first(x)
    C, B, M, N = xc.shape
    up = _channels_first(upstream).reshape(bank.D, -1)
    d_weights = np.empty(bank.filters.shape)
    d_input = np.zeros((C, B, M, N))
    for t in range(bank.K):
        for s in range(bank.K):
            d_weights[:, :, t, s] = up @ _shifted(xc, t, s).reshape(C, -1).T
            contrib = (bank.filters[:, :, t, s].T @ up).reshape(C, B, M, N)
            # X[(m+t),(n+s)] received upstream[m,n]; shift back by (+t, +s)
            d_input += np.roll(contrib, shift=(t, s), axis=(-2, -1))
    d_biases = up.sum(axis=1)
    return GradientBundle(d_weights, d_biases, _restore(d_input, lead), upstream)


def sgd_step(bank: FilterBank, grads: GradientBundle, cfg: SgdConfig) -> FilterBank:
    """One plain gradient-descent update; returns a new bank."""
    return FilterBank(bank.filters - cfg.eta * grads.d_weights,
                      bank.biases - cfg.eta * grads.d_biases)
