"""Attacks on a watermark module: scaling, permutation, overwriting, fine-tuning."""
from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .tensor import FilterBank
from .watermark import WatermarkModule

ATTACK_KINDS = ("scale", "permute", "finetune", "overwrite")


class InvalidAttackError(ValueError):
    pass


def attack_scale(module: WatermarkModule, a: float) -> WatermarkModule:
    """Multiply weights and biases by ``a > 0``."""
    if not (np.isfinite(a) and a > 0):
        raise InvalidAttackError(f"scale factor must be positive, got {a}")
    bank = module.bank
    return module.with_bank(FilterBank(a * bank.filters, a * bank.biases))


def attack_permute(module: WatermarkModule, seed: int) -> tuple:
    """Reorder filters and biases by a seeded random permutation.

    Returns ``(attacked, truth)`` where ``truth[d]`` is the position of source
    filter ``d`` in the attacked module, the convention of
    :func:`freqmark.watermark.match_filters`.
    """
    order = np.random.default_rng(seed).permutation(module.bank.D)
    return module.with_bank(module.bank.permuted(order)), np.argsort(order)


def noise_pattern(K: int, M: int, N: int, u0: int, v0: int) -> np.ndarray:
    """``K x K`` restriction of ``Re exp(-2 pi i (u0 t/M + v0 s/N))``."""
    t = np.arange(K)[:, None]
    s = np.arange(K)[None, :]
    return np.cos(2 * np.pi * ((u0 * t % M) / M + (v0 * s % N) / N))


def overwrite_noise(bank: FilterBank, M: int, N: int, ratio: float,
                    rng: np.random.Generator) -> np.ndarray:
    """Frequency-targeted noise for every filter.

    Each filter gets its own random frequency; the pattern is shared across its
    channels and rescaled so that ``|eps_d| = ratio * |W_d|``.
    """
    D, C, K, _ = bank.filters.shape
    eps = np.zeros_like(bank.filters)
    freqs = rng.integers(0, [M, N], size=(D, 2))
    for d, (u0, v0) in enumerate(freqs):
        patch = np.broadcast_to(noise_pattern(K, M, N, u0, v0), (C, K, K))
        norm = np.linalg.norm(patch)
        target = ratio * np.linalg.norm(bank.filters[d])
        eps[d] = patch * (target / norm)
    return eps


def attack_overwrite(module: WatermarkModule, noise_ratio: float = 0.5,
                     seed: int = 0) -> WatermarkModule:
    """Add overwrite noise to the weights; biases are left untouched."""
    if not (np.isfinite(noise_ratio) and noise_ratio >= 0):
        raise InvalidAttackError(f"noise ratio must be non-negative, got {noise_ratio}")
    rng = np.random.default_rng(seed)
    eps = overwrite_noise(module.bank, module.M, module.N, noise_ratio, rng)
    return module.with_bank(module.bank.replace(filters=module.bank.filters + eps))


@dataclass(frozen=True)
class AttackSpec:
    """A serialisable attack description; only the fields of ``kind`` are set."""

    kind: str
    a: float | None = None
    seed: int | None = None
    ratio: float | None = None
    steps: int | None = None
    eta: float | None = None
    data_seed: int | None = None

    _FIELDS = {
        "scale": ("a",),
        "permute": ("seed",),
        "overwrite": ("ratio", "seed"),
        "finetune": ("steps", "eta", "data_seed"),
    }

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise InvalidAttackError(f"unknown attack kind {self.kind!r}")
        allowed = self._FIELDS[self.kind]
        for name in ("a", "seed", "ratio", "steps", "eta", "data_seed"):
            if name not in allowed and getattr(self, name) is not None:
                raise InvalidAttackError(f"field {name!r} not valid for {self.kind!r} attacks")
        if self.kind == "scale" and (self.a is None or not self.a > 0):
            raise InvalidAttackError("scale attack needs a > 0")

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, doc: dict) -> "AttackSpec":
        doc = dict(doc)
        doc.pop("version", None)
        if "noise_ratio" in doc:
            doc["ratio"] = doc.pop("noise_ratio")
        unknown = set(doc) - {"kind", "a", "seed", "ratio", "steps", "eta", "data_seed"}
        if unknown:
            raise InvalidAttackError(f"unknown attack fields {sorted(unknown)}")
        return cls(**doc)
