"""Fourier machinery for features and convolutional filters.

Feature spectra use the usual negative-exponent DFT. Filters use the revised
transform: a positive exponent with the *feature* geometry ``M, N`` in the
denominators, evaluated on the ``K x K`` support only. That pairing is what
makes circular correlation a per-frequency dot product.

Transforms are direct sums written as products with explicit phase matrices,
so index conventions are visible and the results do not depend on FFT
reordering.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .tensor import FilterBank, ShapeError, check_feature

IMAG_TOL = 1e-9


class GeometryError(ValueError):
    """Raised when a kernel does not fit the feature geometry."""


class NonRealSignalError(ValueError):
    """Raised when an inverse DFT leaves a non-negligible imaginary part."""


class ConfigurationError(ValueError):
    """Raised for frequency-set parameters outside the supported range."""


def _phase_matrix(size: int, length: int, sign: int) -> np.ndarray:
    # exponent reduced mod size before scaling keeps the phases exact for integers
    k = np.arange(size)[:, None] * np.arange(length)[None, :] % size
    return np.exp(sign * 2j * np.pi * k / size)


def dft2(x: np.ndarray) -> np.ndarray:
    """Per-channel 2-D DFT, ``G[c,u,v] = sum_mn X[c,m,n] exp(-2 pi i (um/M + vn/N))``."""
    x = check_feature(x)
    M, N = x.shape[-2:]
    return np.einsum("um,...mn,vn->...uv", _phase_matrix(M, M, -1), x,
                     _phase_matrix(N, N, -1), optimize=True)


def idft2(g: np.ndarray, check_real: bool = True) -> np.ndarray:
    """Inverse of :func:`dft2`; returns the real part after checking the residue."""
    g = np.asarray(g, dtype=np.complex128)
    if g.ndim < 2:
        raise ShapeError(f"spectrum needs at least 2 axes, got {g.shape}")
    M, N = g.shape[-2:]
    x = np.einsum("mu,...uv,nv->...mn", _phase_matrix(M, M, 1), g,
                  _phase_matrix(N, N, 1), optimize=True) / (M * N)
    if check_real:
        residue = float(np.max(np.abs(x.imag), initial=0.0))
        scale = max(1.0, float(np.max(np.abs(x.real), initial=0.0)))
        if residue > IMAG_TOL * scale:
            raise NonRealSignalError(
                f"imaginary residue {residue:.3e} exceeds tolerance; "
                "spectrum is not conjugate-symmetric")
    return x.real.copy()


def filter_transform(weights, M: int, N: int) -> np.ndarray:
    """Revised transform ``Q[...,u,v] = sum_ts W[...,t,s] exp(+2 pi i (ut/M + vs/N))``.

    ``weights`` is a :class:`FilterBank` (giving ``D x C x M x N``) or any array
    whose last two axes are ``K x K``. Not invertible when ``K < M``.
    """
    w = weights.filters if isinstance(weights, FilterBank) else np.asarray(weights, dtype=np.float64)
    if w.ndim < 2 or w.shape[-1] != w.shape[-2]:
        raise ShapeError(f"kernel must be square in its last two axes, got {w.shape}")
    K = w.shape[-1]
    if M < K or N < K:
        raise GeometryError(f"feature geometry {M}x{N} smaller than kernel {K}")
    return np.einsum("ut,...ts,vs->...uv", _phase_matrix(M, K, 1), w,
                     _phase_matrix(N, K, 1), optimize=True)


# 2 pi split so that k * _TWO_PI_HI is exact for moderate k (Cody-Waite reduction)
_TWO_PI_HI = 6.28125
_TWO_PI_MID = 1.935307179586477e-03
_TWO_PI_LO = -1.0033115225336665e-19


def _reduce_angle(theta: float) -> float:
    """``theta - 2 pi k`` in ``[-pi, pi]``, keeping the bits that cancel."""
    k = np.round(theta / (2 * np.pi))
    return ((theta - k * _TWO_PI_HI) - k * _TWO_PI_MID) - k * _TWO_PI_LO


def geometric_phase_sum(N: int, theta: float) -> complex:
    """Closed form of ``sum_{n<N} exp(i n theta)``.

    Uses ``sin(N theta/2) / sin(theta/2) * exp(i (N-1) theta / 2)``, evaluated
    on the angle reduced to ``[-pi, pi]`` (the sum is 2 pi periodic, and the
    reduction keeps the ratio well conditioned next to its poles). Where the
    denominator vanishes the ratio is replaced by its limit ``N``.
    """
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    half = 0.5 * _reduce_angle(float(theta))
    den = np.sin(half)
    if abs(den) < 1e-12:
        ratio = N * np.cos(N * half) / np.cos(half)
    else:
        ratio = np.sin(N * half) / den
    return complex(ratio * np.exp(1j * (N - 1) * half))


def _coupling_factors(size: int, K: int) -> np.ndarray:
    return np.array([geometric_phase_sum(K, 2 * np.pi * d / size) for d in range(size)])


def coupling_coefficient(u: int, v: int, up: int, vp: int, M: int, N: int, K: int) -> complex:
    """``A[u,v,u',v'] = sum_ts exp(2 pi i ((u-u')t/M + (v-v')s/N))``."""
    du, dv = (u - up) % M, (v - vp) % N
    return (geometric_phase_sum(K, 2 * np.pi * du / M)
            * geometric_phase_sum(K, 2 * np.pi * dv / N))


def coupling_matrix(M: int, N: int, K: int) -> np.ndarray:
    """All coupling coefficients as an ``M x N x M x N`` array indexed ``[u,v,u',v']``."""
    a_m = _coupling_factors(M, K)
    a_n = _coupling_factors(N, K)
    du = (np.arange(M)[:, None] - np.arange(M)[None, :]) % M
    dv = (np.arange(N)[:, None] - np.arange(N)[None, :]) % N
    return a_m[du][:, None, :, None] * a_n[dv][None, :, None, :]


def kronecker_delta(u: int, v: int) -> int:
    return int(u == 0 and v == 0)


@dataclass(frozen=True)
class FrequencySet:
    """A set of integer frequencies on the ``M x N`` DFT grid, kept in row-major order.

    ``complete`` is False for kind ``S`` when some ``iM/K`` or ``jN/K`` is not an
    integer, i.e. members of the analytic set were dropped.
    """

    kind: str
    M: int
    N: int
    members: tuple
    K: int | None = None
    r: int | None = None
    complete: bool = True
    _lookup: frozenset = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        members = tuple(sorted({(int(u), int(v)) for u, v in self.members}))
        for u, v in members:
            if not (0 <= u < self.M and 0 <= v < self.N):
                raise ConfigurationError(f"frequency {(u, v)} outside {self.M}x{self.N} grid")
        object.__setattr__(self, "members", members)
        object.__setattr__(self, "_lookup", frozenset(members))

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self) -> Iterator[tuple]:
        return iter(self.members)

    def __contains__(self, uv) -> bool:
        return tuple(uv) in self._lookup

    def mask(self) -> np.ndarray:
        m = np.zeros((self.M, self.N), dtype=bool)
        if self.members:
            idx = np.array(self.members)
            m[idx[:, 0], idx[:, 1]] = True
        return m

    def indices(self) -> tuple:
        """``(rows, cols)`` index arrays for fancy indexing of the last two axes."""
        idx = np.array(self.members, dtype=int).reshape(-1, 2)
        return idx[:, 0], idx[:, 1]


def _grid_union(M: int, N: int, rows, cols) -> list:
    rows, cols = set(rows), set(cols)
    return [(u, v) for u in range(M) for v in range(N) if u in rows or v in cols]


def build_set_S(M: int, N: int, K: int) -> FrequencySet:
    """Integer frequencies with ``u = iM/K`` or ``v = jN/K`` for ``i, j`` in ``1..K-1``."""
    if K < 2:
        raise ConfigurationError(f"K must be >= 2, got {K}")
    rows = [i * M // K for i in range(1, K) if i * M % K == 0]
    cols = [j * N // K for j in range(1, K) if j * N % K == 0]
    complete = len(rows) == K - 1 and len(cols) == K - 1
    return FrequencySet("S", M, N, tuple(_grid_union(M, N, rows, cols)), K=K, complete=complete)


def round_half_away(num: int, den: int) -> int:
    """Nearest integer to ``num/den`` (both non-negative), ties away from zero."""
    return (2 * num + den) // (2 * den)


def build_set_S_prime(M: int, N: int, K: int) -> FrequencySet:
    """Rounded version of :func:`build_set_S`; the frequencies carrying the watermark."""
    if K < 2:
        raise ConfigurationError(f"K must be >= 2, got {K}")
    rows = [round_half_away(i * M, K) % M for i in range(1, K)]
    cols = [round_half_away(j * N, K) % N for j in range(1, K)]
    return FrequencySet("S_prime", M, N, tuple(_grid_union(M, N, rows, cols)), K=K)


def low_band(size: int, r: int) -> list:
    return sorted(set(range(0, r + 1)) | set(range(size - r, size)))


def build_set_S_low(M: int, N: int, r: int) -> FrequencySet:
    if not 1 <= r <= 2:
        raise ConfigurationError(f"low-pass radius must be 1 or 2, got {r}")
    if 2 * r + 1 > min(M, N):
        raise ConfigurationError(f"radius {r} too large for a {M}x{N} grid")
    members = [(u, v) for u in low_band(M, r) for v in low_band(N, r)]
    return FrequencySet("S_low", M, N, tuple(members), r=r)


def low_pass(x: np.ndarray, r: int) -> np.ndarray:
    """Zero every DFT component outside the low band of radius ``r``."""
    x = check_feature(x)
    M, N = x.shape[-2:]
    mask = build_set_S_low(M, N, r).mask()
    return idft2(dft2(x) * mask)


def centered(grid: np.ndarray) -> np.ndarray:
    """Move the zero frequency to the middle of the last two axes for display."""
    return np.fft.fftshift(grid, axes=(-2, -1))
