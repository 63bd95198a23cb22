"""Executable checks of how gradient descent moves filter frequency components."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .conv import SgdConfig, conv_backward, conv_forward, sgd_step
from .spectral import FrequencySet, ConfigurationError, centered, coupling_matrix, dft2, filter_transform
from .tensor import FilterBank, ShapeError


@dataclass(frozen=True)
class DeltaSpectrum:
    """Per-filter change of the filter spectrum, ``D x C x M x N``."""

    delta: np.ndarray

    @property
    def norms(self) -> np.ndarray:
        """Mean over filters of the channel-vector norm at each frequency."""
        return np.linalg.norm(self.delta, axis=1).mean(axis=0)


def upstream_spectrum(upstream: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. the conjugate output spectrum, ``dft2(dLoss/dY) / MN``."""
    M, N = upstream.shape[-2:]
    return dft2(upstream) / (M * N)


def frequency_gradient(bank: FilterBank, x_spectrum: np.ndarray,
                       up_spectrum: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. the conjugate filter spectrum, ``D x C x M x N``.

    Leading batch axes of ``x_spectrum`` (``... x C x M x N``) and
    ``up_spectrum`` (``... x D x M x N``) are summed over.
    """
    x_spectrum = np.asarray(x_spectrum)
    up_spectrum = np.asarray(up_spectrum)
    M, N = x_spectrum.shape[-2:]
    if x_spectrum.shape[-3] != bank.C or up_spectrum.shape[-3] != bank.D:
        raise ShapeError("spectra do not match the filter bank's channel/filter counts")
    if up_spectrum.shape[-2:] != (M, N) or x_spectrum.shape[:-3] != up_spectrum.shape[:-3]:
        raise ShapeError("input and upstream spectra have inconsistent geometry")
    if M < bank.K or N < bank.K:
        raise ShapeError(f"geometry {M}x{N} smaller than kernel {bank.K}")
    up_flat = up_spectrum.reshape((-1,) + up_spectrum.shape[-3:])
    x_flat = x_spectrum.reshape((-1,) + x_spectrum.shape[-3:])
    cross = np.einsum("zdpq,zcpq->dcpq", up_flat, np.conj(x_flat))
    A = coupling_matrix(M, N, bank.K)
    return np.einsum("uvpq,dcpq->dcuv", A, cross) / (M * N)


def predict_delta(bank: FilterBank, x_spectrum: np.ndarray, up_spectrum: np.ndarray,
                  eta: float) -> DeltaSpectrum:
    """Change of every filter frequency component caused by one SGD step.

    ``delta[d,:,u,v] = -eta * sum_{u',v'} A[u,v,u',v'] P[d,u',v'] conj(G[:,u',v'])``
    with ``P`` from :func:`upstream_spectrum` and ``G`` the input spectrum.
    """
    M, N = np.shape(x_spectrum)[-2:]
    return DeltaSpectrum(-eta * M * N * frequency_gradient(bank, x_spectrum, up_spectrum))


def end_to_end_delta(bank: FilterBank, x: np.ndarray, upstream: np.ndarray,
                     eta: float) -> np.ndarray:
    """Spatial route: backward pass, SGD step, then re-transform both banks."""
    M, N = np.shape(x)[-2:]
    grads = conv_backward(bank, x, upstream)
    after = sgd_step(bank, grads, SgdConfig(eta))
    return filter_transform(after, M, N) - filter_transform(bank, M, N)


@dataclass(frozen=True)
class StepReport:
    max_deviation: float
    observed: np.ndarray
    frequency_grad: np.ndarray


def verify_step_equivalence(bank: FilterBank, x: np.ndarray, upstream: np.ndarray,
                            eta: float) -> StepReport:
    """Check that a weight step moves each ``Q[u,v]`` by ``-eta * MN * dLoss/dconj(Q[u,v])``."""
    M, N = np.shape(x)[-2:]
    observed = end_to_end_delta(bank, x, upstream, eta)
    grad = frequency_gradient(bank, dft2(x), upstream_spectrum(upstream))
    dev = float(np.max(np.abs(observed + eta * M * N * grad), initial=0.0))
    return StepReport(dev, observed, grad)


def stability_heatmap(before: FilterBank, after: FilterBank, M: int, N: int,
                      center: bool = False) -> np.ndarray:
    """Average over filters of ``|T_uv(W'_d) - T_uv(W_d)|``, an ``M x N`` grid.

    With ``center=True`` the zero frequency is moved to the middle of the grid.
    """
    if before.filters.shape != after.filters.shape:
        raise ShapeError(f"bank shapes differ: {before.filters.shape} vs {after.filters.shape}")
    diff = filter_transform(after.filters - before.filters, M, N)
    heat = DeltaSpectrum(diff).norms
    return centered(heat) if center else heat


def stability_gap(heatmap: np.ndarray, s_prime: FrequencySet) -> tuple:
    """Mean heat on the watermark frequencies and on their complement (uncentred layout)."""
    heatmap = np.asarray(heatmap, dtype=np.float64)
    if heatmap.shape != (s_prime.M, s_prime.N):
        raise ShapeError(f"heatmap {heatmap.shape} does not match {s_prime.M}x{s_prime.N}")
    mask = s_prime.mask()
    if mask.all() or not mask.any():
        raise ConfigurationError("frequency set and its complement must both be non-empty")
    return float(heatmap[mask].mean()), float(heatmap[~mask].mean())


def gap_ratio(heatmap: np.ndarray, s_prime: FrequencySet) -> float:
    on, off = stability_gap(heatmap, s_prime)
    if off == 0.0:
        return 0.0 if on == 0.0 else float("inf")
    return on / off


# ---------------------------------------------------------------------------
# verifier suite: each returns the largest deviation from the closed form


def spectral_product_deviation(instances: int = 100, seed: int = 0,
                               geometries=((9, 9), (8, 12)), channels=(1, 2, 4), K: int = 3,
                               D: int = 2) -> float:
    """Spatial convolution vs. per-frequency dot product plus the bias term."""
    from .spectral import kronecker_delta

    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(instances):
        M, N = geometries[i % len(geometries)]
        C = channels[i % len(channels)]
        bank = FilterBank(rng.uniform(-1, 1, (D, C, K, K)), rng.uniform(-1, 1, D))
        x = rng.uniform(-1, 1, (C, M, N))
        lhs = dft2(conv_forward(bank, x))
        rhs = np.einsum("dcuv,cuv->duv", filter_transform(bank, M, N), dft2(x))
        delta = np.array([[kronecker_delta(u, v) for v in range(N)] for u in range(M)])
        rhs = rhs + delta * M * N * bank.biases[:, None, None]
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    return worst


def weight_update_deviation(instances: int = 20, seed: int = 0, M: int = 9, N: int = 9,
                       K: int = 3, C: int = 2, D: int = 3, eta: float = 0.1) -> tuple:
    """``(predict_delta vs end-to-end, step-equivalence)`` worst deviations."""
    rng = np.random.default_rng(seed)
    worst_pred = worst_step = 0.0
    for _ in range(instances):
        bank = FilterBank(rng.uniform(-1, 1, (D, C, K, K)), rng.uniform(-1, 1, D))
        x = rng.uniform(-1, 1, (C, M, N))
        up = rng.uniform(-1, 1, (D, M, N))
        pred = predict_delta(bank, dft2(x), upstream_spectrum(up), eta).delta
        worst_pred = max(worst_pred, float(np.max(np.abs(pred - end_to_end_delta(bank, x, up, eta)))))
        worst_step = max(worst_step, verify_step_equivalence(bank, x, up, eta).max_deviation)
    return worst_pred, worst_step


def fundamental_only_run(steps: int = 100, seed: int = 0, M: int = 9, N: int = 9, K: int = 3,
                         C: int = 3, D: int = 8, batch: int = 4, eta: float = 0.05) -> tuple:
    """Train on inputs that are constant per channel; return ``(before, after)`` banks.

    The loss is a squared error against random (non-constant) targets, so the
    weights keep moving for the whole run.
    """
    rng = np.random.default_rng(seed)
    bank = FilterBank(rng.uniform(-1, 1, (D, C, K, K)), rng.uniform(-1, 1, D))
    x = np.broadcast_to(rng.uniform(-1, 1, (batch, C, 1, 1)), (batch, C, M, N)).copy()
    target = rng.uniform(-1, 1, (batch, D, M, N))
    before = bank
    for _ in range(steps):
        y = conv_forward(bank, x)
        grads = conv_backward(bank, x, (y - target) / (batch * M * N))
        bank = sgd_step(bank, grads, SgdConfig(eta))
    return before, bank


def geometric_sum_deviation(points: int = 1000, seed: int = 0) -> float:
    """Closed-form geometric sums against direct summation on a grid with singular points."""
    from .spectral import _reduce_angle, geometric_phase_sum

    rng = np.random.default_rng(seed)
    Ns = rng.integers(1, 33, size=points)
    thetas = rng.uniform(-4 * np.pi, 4 * np.pi, size=points)
    # a third of the grid sits on the singular limits theta = 2 pi k and N theta = 2 pi k
    k = rng.integers(-2, 3, size=points)
    thetas[: points // 6] = 2 * np.pi * k[: points // 6]
    sl = slice(points // 6, points // 3)
    thetas[sl] = 2 * np.pi * rng.integers(1, Ns[sl] + 1) / Ns[sl]
    worst = 0.0
    for n_terms, theta in zip(Ns, thetas):
        # terms are 2 pi periodic in theta; reducing first keeps n * theta small
        direct = np.sum(np.exp(1j * np.arange(n_terms) * _reduce_angle(float(theta))))
        worst = max(worst, abs(geometric_phase_sum(int(n_terms), float(theta)) - direct))
    return float(worst)


def verifier_suite(seed: int = 0) -> dict:
    """Largest deviation of every closed-form identity from its numerical counterpart."""
    from .spectral import build_set_S

    pred, step = weight_update_deviation(seed=seed)
    before, after = fundamental_only_run(seed=seed)
    heat = stability_heatmap(before, after, 9, 9)
    on_s = build_set_S(9, 9, 3).mask()
    return {
        "conv_spectrum_product": spectral_product_deviation(seed=seed),
        "predicted_weight_update": pred,
        "step_equivalence": step,
        "dc_input_change_on_S": float(heat[on_s].max()),
        "geometric_sum_closed_form": geometric_sum_deviation(seed=seed),
    }
