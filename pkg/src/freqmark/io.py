"""JSON persistence for host models, signatures, reports, and heatmaps.

Floats are written with ``repr`` (shortest round-tripping decimal), so
``load(save(m))`` reproduces every parameter bit for bit. Writes go to a
temporary file in the target directory and are moved into place atomically.
"""
from __future__ import annotations

import json
import os
import tempfile

import numpy as np

from .tensor import FilterBank
from .trainer import HostNetwork
from .watermark import WatermarkModule, WatermarkSignature

MODEL_VERSION = 1


class CorruptFileError(ValueError):
    """A model or signature file could not be parsed into valid objects."""


def atomic_write(path, text: str) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _bank_doc(bank: FilterBank) -> dict:
    return {"filters": bank.filters.tolist(), "biases": bank.biases.tolist()}


def model_to_dict(host: HostNetwork, metadata: dict | None = None, seed: int | None = None) -> dict:
    wm = host.wm
    return {
        "version": MODEL_VERSION,
        "geometry": {"C": wm.bank.C, "M": wm.M, "N": wm.N, "n_classes": host.n_classes},
        "backbone": _bank_doc(host.backbone),
        "wm": {"D": wm.bank.D, "C": wm.bank.C, "K": wm.bank.K, "M": wm.M, "N": wm.N,
               "r": wm.r, **_bank_doc(wm.bank)},
        "head": {"weights": host.head_w.tolist(), "biases": host.head_b.tolist()},
        "metadata": dict(metadata or {}),
        "seed": seed,
    }


def model_from_dict(doc: dict) -> tuple:
    """Returns ``(host, metadata, seed)``."""
    try:
        if doc["version"] != MODEL_VERSION:
            raise CorruptFileError(f"unsupported model version {doc['version']!r}")
        w = doc["wm"]
        wm_bank = FilterBank(np.asarray(w["filters"], dtype=np.float64), w["biases"])
        if wm_bank.filters.shape != (w["D"], w["C"], w["K"], w["K"]):
            raise CorruptFileError("watermark filter array disagrees with its header")
        wm = WatermarkModule(wm_bank, int(w["M"]), int(w["N"]), int(w["r"]))
        bb = FilterBank(np.asarray(doc["backbone"]["filters"], dtype=np.float64),
                        doc["backbone"]["biases"])
        host = HostNetwork(bb, wm, np.asarray(doc["head"]["weights"], dtype=np.float64),
                           np.asarray(doc["head"]["biases"], dtype=np.float64))
    except CorruptFileError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptFileError(f"invalid model document: {exc}") from exc
    return host, doc.get("metadata", {}), doc.get("seed")


def save_model(path, host: HostNetwork, metadata: dict | None = None, seed: int | None = None) -> None:
    atomic_write(path, json.dumps(model_to_dict(host, metadata, seed)) + "\n")


def _read_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise CorruptFileError(f"{path}: not valid JSON ({exc})") from exc


def load_model(path) -> tuple:
    return model_from_dict(_read_json(path))


def save_signature(path, sig: WatermarkSignature) -> None:
    atomic_write(path, sig.to_json() + "\n")


def load_signature(path) -> WatermarkSignature:
    try:
        return WatermarkSignature.from_dict(_read_json(path))
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptFileError(f"{path}: invalid signature ({exc})") from exc


def load_signature_or_model(path):
    """Signature from a signature file or from a model file's watermark module."""
    from .watermark import extract_signature

    doc = _read_json(path)
    if "wm" in doc:
        host, _, _ = model_from_dict(doc)
        return extract_signature(host.wm)
    try:
        return WatermarkSignature.from_dict(doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptFileError(f"{path}: neither a model nor a signature ({exc})") from exc


def heatmap_csv(grid: np.ndarray) -> str:
    """One header line of column labels, then one line per row ``u``."""
    grid = np.asarray(grid, dtype=np.float64)
    lines = [",".join(f"v{v}" for v in range(grid.shape[1]))]
    lines += [",".join(repr(float(x)) for x in row) for row in grid]
    return "\n".join(lines) + "\n"


def read_heatmap_csv(text: str) -> np.ndarray:
    rows = text.strip().splitlines()[1:]
    return np.array([[float(x) for x in row.split(",")] for row in rows])
