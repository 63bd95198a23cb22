"""The watermark module, its frequency-domain signature, and detection."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .conv import conv_forward
from .spectral import build_set_S_low, build_set_S_prime, filter_transform, low_pass
from .tensor import FilterBank, ShapeError, batched_complex_cosine

DEFAULT_TAU = 0.995
SIGNATURE_VERSION = 1


class IncompatibleSignatureError(ValueError):
    """Raised when two signatures were extracted under different geometries."""


@dataclass(frozen=True)
class WatermarkModule:
    """``D`` circular conv filters applied to a low-passed copy of the input."""

    bank: FilterBank
    M: int
    N: int
    r: int = 1

    def __post_init__(self):
        build_set_S_low(self.M, self.N, self.r)
        if self.M < self.bank.K or self.N < self.bank.K:
            raise ShapeError(f"geometry {self.M}x{self.N} smaller than kernel {self.bank.K}")

    def with_bank(self, bank: FilterBank) -> "WatermarkModule":
        return WatermarkModule(bank, self.M, self.N, self.r)


def wm_forward(module: WatermarkModule, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-2:] != (module.M, module.N):
        raise ShapeError(f"input {x.shape[-2:]} does not match module geometry {(module.M, module.N)}")
    return conv_forward(module.bank, low_pass(x, module.r))


@dataclass(frozen=True)
class WatermarkSignature:
    """Filter frequency components at the watermark frequencies, ``D x C x |S'|``."""

    components: np.ndarray
    frequencies: tuple
    D: int
    C: int
    K: int
    M: int
    N: int
    r: int = 1

    @property
    def geometry(self) -> tuple:
        return (self.D, self.C, self.K, self.M, self.N)

    def to_dict(self) -> dict:
        comps = [[[[float(z.real), float(z.imag)] for z in chan] for chan in filt]
                 for filt in self.components]
        return {
            "version": SIGNATURE_VERSION,
            "D": self.D, "C": self.C, "K": self.K, "M": self.M, "N": self.N, "r": self.r,
            "tau_default": DEFAULT_TAU,
            "frequencies": [list(f) for f in self.frequencies],
            "components": comps,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "WatermarkSignature":
        if doc.get("version") != SIGNATURE_VERSION:
            raise ValueError(f"unsupported signature version {doc.get('version')!r}")
        raw = np.asarray(doc["components"], dtype=np.float64)
        freqs = tuple((int(u), int(v)) for u, v in doc["frequencies"])
        geom = tuple(int(doc[k]) for k in ("D", "C", "K", "M", "N"))
        if raw.shape != (geom[0], geom[1], len(freqs), 2):
            raise ValueError(f"component array shape {raw.shape} inconsistent with header")
        return cls(raw[..., 0] + 1j * raw[..., 1], freqs, *geom, r=int(doc.get("r", 1)))

    def to_json(self) -> str:
        # repr of a float round-trips exactly, which json relies on
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "WatermarkSignature":
        return cls.from_dict(json.loads(text))

    def aligned_to(self, frequencies) -> np.ndarray:
        """Components reordered to follow ``frequencies``."""
        where = {f: i for i, f in enumerate(self.frequencies)}
        try:
            order = [where[tuple(f)] for f in frequencies]
        except KeyError as exc:
            raise IncompatibleSignatureError(f"frequency {exc.args[0]} missing") from None
        return self.components[:, :, order]


def extract_signature(module: WatermarkModule) -> WatermarkSignature:
    bank = module.bank
    s_prime = build_set_S_prime(module.M, module.N, bank.K)
    rows, cols = s_prime.indices()
    spectrum = filter_transform(bank, module.M, module.N)
    return WatermarkSignature(spectrum[:, :, rows, cols], s_prime.members,
                              bank.D, bank.C, bank.K, module.M, module.N, module.r)


def _paired(src: WatermarkSignature, sus: WatermarkSignature):
    if src.geometry != sus.geometry:
        raise IncompatibleSignatureError(
            f"signature geometries differ: {src.geometry} vs {sus.geometry}")
    if set(src.frequencies) != set(sus.frequencies):
        raise IncompatibleSignatureError("signatures cover different frequencies")
    return src.components, sus.aligned_to(src.frequencies)


def cosine_table(src: WatermarkSignature, sus: WatermarkSignature) -> np.ndarray:
    """``D x D x |S'|`` cosines between every source and suspect filter."""
    a, b = _paired(src, sus)
    return batched_complex_cosine(a[:, None], b[None, :], axis=2)


def match_filters(src: WatermarkSignature, sus: WatermarkSignature) -> np.ndarray:
    """Optimal assignment: entry ``d`` is the suspect filter matched to source filter ``d``."""
    scores = np.nan_to_num(cosine_table(src, sus), nan=0.0).mean(axis=2)
    rows, cols = linear_sum_assignment(scores, maximize=True)
    perm = np.empty(src.D, dtype=int)
    perm[rows] = cols
    return perm


@dataclass(frozen=True)
class DetectionReport:
    permutation: np.ndarray
    cosines: np.ndarray
    dr: float
    tau: float

    def to_dict(self) -> dict:
        cos = self.cosines
        finite = cos[np.isfinite(cos)]
        return {
            "version": SIGNATURE_VERSION,
            "dr": self.dr,
            "tau": self.tau,
            "permutation": [int(p) for p in self.permutation],
            "cosine_min": float(finite.min()) if finite.size else None,
            "cosine_mean": float(finite.mean()) if finite.size else None,
            "components": int(cos.size),
            "matched": int(np.sum(np.nan_to_num(cos, nan=-2.0) >= self.tau)),
        }


def detect(src: WatermarkSignature, sus: WatermarkSignature, tau: float = DEFAULT_TAU) -> DetectionReport:
    """Detection rate: percentage of matched (filter, frequency) cosines reaching ``tau``.

    Components whose cosine is undefined (a zero vector on either side) count as
    misses.
    """
    if not 0 < tau <= 1:
        raise ValueError(f"tau must lie in (0, 1], got {tau}")
    perm = match_filters(src, sus)
    a, b = _paired(src, sus)
    cos = batched_complex_cosine(a, b[perm], axis=1)
    hits = np.nan_to_num(cos, nan=-2.0) >= tau
    dr = 100.0 * hits.sum() / cos.size
    return DetectionReport(perm, cos, float(dr), float(tau))
