"""Desk-scale host network with a parallel watermark branch, and its training loops.

The host is one circular conv layer + ReLU + global average pooling for the
backbone, a watermark branch (low-pass, conv, ReLU, global average pooling)
fed from the same input, and a linear head over the concatenated pooled
features with ``n + 1`` outputs. Labels are ``0..n-1``; index ``n`` is the
pseudo category predicted when the watermark weights have been overwritten.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attacks import (AttackSpec, attack_overwrite, attack_permute, attack_scale,
                      overwrite_noise)
from .conv import GradientBundle, SgdConfig, conv_backward, conv_forward
from .spectral import low_pass
from .tensor import FilterBank
from .watermark import WatermarkModule


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class HostNetwork:
    backbone: FilterBank
    wm: WatermarkModule | None
    head_w: np.ndarray
    head_b: np.ndarray

    def __post_init__(self):
        head_w = np.array(self.head_w, dtype=np.float64)
        head_b = np.array(self.head_b, dtype=np.float64)
        feats = self.backbone.D + self.wm_filters
        if head_w.ndim != 2 or head_w.shape[1] != feats or head_b.shape != (head_w.shape[0],):
            raise ValueError(f"head shapes {head_w.shape}/{head_b.shape} do not fit {feats} features")
        if head_w.shape[0] < 3:
            raise ValueError("head needs at least two real classes plus the pseudo class")
        if self.wm is not None and self.backbone.C != self.wm.bank.C:
            raise ValueError("backbone and watermark branch see different channel counts")
        object.__setattr__(self, "head_w", head_w)
        object.__setattr__(self, "head_b", head_b)

    @property
    def n_classes(self) -> int:
        """Number of real classes (the head has one extra output)."""
        return self.head_w.shape[0] - 1

    @property
    def wm_filters(self) -> int:
        return 0 if self.wm is None else self.wm.bank.D

    def with_wm(self, wm: WatermarkModule) -> "HostNetwork":
        return HostNetwork(self.backbone, wm, self.head_w, self.head_b)

    @classmethod
    def init(cls, n_classes: int, C: int, M: int, N: int, seed: int, D: int = 16,
             backbone_filters: int = 8, K: int = 3, r: int = 1) -> "HostNetwork":
        rng = np.random.default_rng(seed)
        conv_scale = 1.0 / np.sqrt(C * K * K)

        def bank(d):
            return FilterBank(rng.uniform(-conv_scale, conv_scale, size=(d, C, K, K)),
                              np.zeros(d))

        backbone = bank(backbone_filters)
        # D = 0 builds the backbone-only baseline
        wm = WatermarkModule(bank(D), M, N, r) if D > 0 else None
        feats = backbone_filters + D
        head_w = rng.uniform(-1, 1, size=(n_classes + 1, feats)) / np.sqrt(feats)
        return cls(backbone, wm, head_w, np.zeros(n_classes + 1))


@dataclass(frozen=True)
class HostGradients:
    backbone: GradientBundle
    wm: GradientBundle | None
    head_w: np.ndarray
    head_b: np.ndarray


@dataclass(frozen=True)
class DatasetSpec:
    n_classes: int = 2
    samples_per_class: int = 64
    C: int = 3
    M: int = 9
    N: int = 9
    seed: int = 0
    r: int = 1
    noise: float = 0.3
    dc: float = 2.0

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError("need at least two classes")
        if self.samples_per_class < 1:
            raise ValueError("need at least one sample per class")


@dataclass(frozen=True)
class Dataset:
    x: np.ndarray
    y: np.ndarray
    spec: DatasetSpec

    def __len__(self) -> int:
        return len(self.y)


@dataclass(frozen=True)
class LossConfig:
    lam: float = 5e-4
    noise_ratio: float = 0.5
    noise_seed: int = 0

    def __post_init__(self):
        if not (np.isfinite(self.lam) and self.lam >= 0):
            raise ValueError(f"lambda must be finite and non-negative, got {self.lam}")


def synth_dataset(spec: DatasetSpec) -> Dataset:
    """Band-limited samples: a per-class template plus in-band noise.

    Templates carry a positive per-channel mean of size ``dc`` (natural images
    are dominated by their zero frequency) plus random low-frequency texture.
    Every sample has no spectral energy outside the low band of radius ``r``.
    """
    rng = np.random.default_rng(spec.seed)
    shape = (spec.C, spec.M, spec.N)
    templates = []
    for _ in range(spec.n_classes):
        texture = low_pass(rng.uniform(-1, 1, size=shape), spec.r)
        offset = spec.dc * rng.uniform(0.5, 1.5, size=(spec.C, 1, 1))
        templates.append(texture + offset)
    xs, ys = [], []
    for k, tmpl in enumerate(templates):
        jitter = rng.uniform(-1, 1, size=(spec.samples_per_class,) + shape)
        xs.append(tmpl + spec.noise * low_pass(jitter, spec.r))
        ys.append(np.full(spec.samples_per_class, k))
    return Dataset(np.concatenate(xs), np.concatenate(ys), spec)


def split_dataset(data: Dataset, test_fraction: float = 0.5, seed: int = 0) -> tuple:
    """Stratified ``(train, test)`` split; both halves keep ``data.spec``."""
    if not 0 < test_fraction < 1:
        raise ValueError(f"test fraction must lie in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(seed)
    test = np.zeros(len(data), dtype=bool)
    for k in np.unique(data.y):
        idx = np.flatnonzero(data.y == k)
        n_test = int(round(test_fraction * len(idx)))
        if n_test in (0, len(idx)):
            raise ValueError("split leaves a class without samples")
        test[rng.choice(idx, n_test, replace=False)] = True
    return (Dataset(data.x[~test], data.y[~test], data.spec),
            Dataset(data.x[test], data.y[test], data.spec))


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _branch(bank: FilterBank, x: np.ndarray):
    pre = conv_forward(bank, x)
    return pre, np.maximum(pre, 0.0).mean(axis=(-2, -1))


def _branch_back(bank: FilterBank, x: np.ndarray, pre: np.ndarray, d_feat: np.ndarray):
    M, N = pre.shape[-2:]
    upstream = (pre > 0) * d_feat[..., None, None] / (M * N)
    return conv_backward(bank, x, upstream)


def logits(host: HostNetwork, x: np.ndarray, wm_bank: FilterBank | None = None) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    _, feats = _branch(host.backbone, x)
    if host.wm is not None:
        wm_bank = host.wm.bank if wm_bank is None else wm_bank
        _, fw = _branch(wm_bank, low_pass(x, host.wm.r))
        feats = np.concatenate([feats, fw], axis=-1)
    return feats @ host.head_w.T + host.head_b


def predict(host: HostNetwork, x: np.ndarray) -> np.ndarray:
    return np.argmax(logits(host, x), axis=-1)


def _ce_pass(host, x, lowx, wm_bank, target, weight):
    """Weighted mean cross-entropy towards ``target`` and its gradients."""
    pre_b, feats = _branch(host.backbone, x)
    if wm_bank is not None:
        pre_w, fw = _branch(wm_bank, lowx)
        feats = np.concatenate([feats, fw], axis=-1)
    p = _softmax(feats @ host.head_w.T + host.head_b)
    B = len(target)
    picked = p[np.arange(B), target]
    value = -weight * np.mean(np.log(np.maximum(picked, 1e-300)))
    dz = p.copy()
    dz[np.arange(B), target] -= 1.0
    dz *= weight / B
    d_feats = dz @ host.head_w
    Db = host.backbone.D
    gb = _branch_back(host.backbone, x, pre_b, d_feats[:, :Db])
    gw = None if wm_bank is None else _branch_back(wm_bank, lowx, pre_w, d_feats[:, Db:])
    return value, HostGradients(gb, gw, dz.T @ feats, dz.sum(axis=0))


def _add(g1: HostGradients, g2: HostGradients) -> HostGradients:
    def bundle(a, b):
        if a is None:
            return None
        return GradientBundle(a.d_weights + b.d_weights, a.d_biases + b.d_biases,
                              a.d_input + b.d_input, a.upstream + b.upstream)
    return HostGradients(bundle(g1.backbone, g2.backbone), bundle(g1.wm, g2.wm),
                         g1.head_w + g2.head_w, g1.head_b + g2.head_b)


def combined_loss(host: HostNetwork, x: np.ndarray, label, cfg: LossConfig,
              eps: np.ndarray | None = None, lowx: np.ndarray | None = None):
    """Cross-entropy plus ``lam`` times the pseudo-class loss under perturbed watermark weights.

    ``x`` is a batch ``B x C x M x N`` (or a single sample) and ``label`` the
    matching class indices; the value is averaged over the batch. The
    perturbed branch is evaluated at ``W + eps`` and its weight gradient is
    applied to ``W``. ``eps`` defaults to a fresh draw seeded by ``cfg``;
    ``lowx`` may carry a precomputed low-passed copy of ``x``.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 3
    if single:
        x = x[None]
    label = np.atleast_1d(np.asarray(label, dtype=int))
    n = host.n_classes
    if label.shape != (len(x),) or label.min() < 0 or label.max() >= n:
        raise ValueError(f"labels must be in 0..{n - 1}, one per sample")
    if host.wm is None:
        if cfg.lam > 0:
            raise ValueError("the pseudo-class term needs a watermark branch")
        lowx = None
    elif lowx is None:
        lowx = low_pass(x, host.wm.r)
    elif single:
        lowx = lowx[None]
    wm_bank = None if host.wm is None else host.wm.bank
    value, grads = _ce_pass(host, x, lowx, wm_bank, label, 1.0)
    if cfg.lam > 0:
        if eps is None:
            rng = np.random.default_rng(cfg.noise_seed)
            eps = overwrite_noise(host.wm.bank, host.wm.M, host.wm.N, cfg.noise_ratio, rng)
        bank_eps = host.wm.bank.replace(filters=host.wm.bank.filters + eps)
        pseudo = np.full(len(x), n)
        v2, g2 = _ce_pass(host, x, lowx, bank_eps, pseudo, cfg.lam)
        value += v2
        grads = _add(grads, g2)
    if not np.isfinite(value):
        raise FloatingPointError("non-finite loss")
    return float(value), grads


def _flat(grads: HostGradients) -> list:
    out = [grads.backbone.d_weights, grads.backbone.d_biases, grads.head_w, grads.head_b]
    if grads.wm is not None:
        out += [grads.wm.d_weights, grads.wm.d_biases]
    return out


def apply_gradients(host: HostNetwork, grads: HostGradients, eta: float,
                    train_backbone: bool = True) -> HostNetwork:
    bb = host.backbone
    if train_backbone:
        bb = FilterBank(bb.filters - eta * grads.backbone.d_weights,
                        bb.biases - eta * grads.backbone.d_biases)
    wm = host.wm
    if wm is not None:
        wm = wm.with_bank(FilterBank(wm.bank.filters - eta * grads.wm.d_weights,
                                     wm.bank.biases - eta * grads.wm.d_biases))
    return HostNetwork(bb, wm, host.head_w - eta * grads.head_w, host.head_b - eta * grads.head_b)


def evaluate(host: HostNetwork, data: Dataset, wm_bank: FilterBank | None = None) -> float:
    """Accuracy in percent; predicting the pseudo class always counts as wrong."""
    if len(data) == 0:
        raise ValueError("empty dataset")
    pred = np.argmax(logits(host, data.x, wm_bank), axis=-1)
    return 100.0 * float(np.mean(pred == data.y))


def attacked_accuracy(host: HostNetwork, data: Dataset, ratio: float = 0.5,
                      seeds=range(5)) -> float:
    """Mean accuracy over several independent overwrite attacks."""
    if host.wm is None:
        raise ValueError("host has no watermark branch to attack")
    accs = [evaluate(host, data, attack_overwrite(host.wm, ratio, seed=s).bank) for s in seeds]
    return float(np.mean(accs))


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)

    def record(self, step, loss, clean_acc=None, attacked_acc=None):
        self.rows.append((step, loss, clean_acc, attacked_acc))

    def to_csv(self) -> str:
        def fmt(v):
            return "" if v is None else repr(v)
        lines = ["step,loss,clean_acc,attacked_acc"]
        lines += [",".join(fmt(v) for v in row) for row in self.rows]
        return "\n".join(lines) + "\n"


def train(host: HostNetwork, data: Dataset, cfg: LossConfig, sgd: SgdConfig,
          log_every: int = 0, log: TrainLog | None = None) -> HostNetwork:
    """Full-batch gradient descent on the combined loss.

    The overwrite noise is redrawn every step from a generator seeded by
    ``cfg.noise_seed``, so runs are bitwise reproducible.
    """
    rng = np.random.default_rng(cfg.noise_seed)
    lowx = None if host.wm is None else low_pass(data.x, host.wm.r)
    for step in range(sgd.steps):
        eps = None
        if cfg.lam > 0 and host.wm is not None:
            eps = overwrite_noise(host.wm.bank, host.wm.M, host.wm.N, cfg.noise_ratio, rng)
        try:
            value, grads = combined_loss(host, data.x, data.y, cfg, eps=eps, lowx=lowx)
        except FloatingPointError as exc:
            raise TrainingDivergedError(f"loss became non-finite at step {step}") from exc
        if log is not None and log_every and step % log_every == 0:
            attacked = None if host.wm is None else attacked_accuracy(host, data, cfg.noise_ratio)
            log.record(step, value, evaluate(host, data), attacked)
        with np.errstate(over="ignore", invalid="ignore"):
            grads_finite = all(np.all(np.isfinite(sgd.eta * g)) for g in _flat(grads))
        if not grads_finite:
            raise TrainingDivergedError(f"parameters became non-finite at step {step}")
        host = apply_gradients(host, grads, sgd.eta)
    return host


def train_schedule(host: HostNetwork, data: Dataset, cfg: LossConfig, phases,
                   log_every: int = 0, log: TrainLog | None = None) -> HostNetwork:
    """Run :func:`train` once per ``SgdConfig`` in ``phases``.

    A short phase at a small step size settles the DC-dominated features
    before a larger step size takes over. Phase ``i`` draws its noise from
    ``cfg.noise_seed + i``.
    """
    for i, sgd in enumerate(phases):
        phase_cfg = LossConfig(cfg.lam, cfg.noise_ratio, cfg.noise_seed + i)
        host = train(host, data, phase_cfg, sgd, log_every, log)
    return host


DEFENSE_PHASES = (SgdConfig(0.05, 1000), SgdConfig(1.0, 5000))
FINETUNE_SGD = SgdConfig(0.05, 500)


def attack_finetune(host: HostNetwork, task: DatasetSpec, cfg: SgdConfig) -> HostNetwork:
    """Fine-tune every parameter on a new task with plain cross-entropy."""
    return train(host, synth_dataset(task), LossConfig(lam=0.0), cfg)


def attack_host(host: HostNetwork, spec: AttackSpec) -> HostNetwork:
    """Apply ``spec`` to the watermark branch of a whole host.

    Scaling and permutation also adjust the head columns fed by the watermark
    branch, so the host computes the same function afterwards (ReLU commutes
    with positive scaling and with reordering).
    """
    if host.wm is None:
        raise ValueError("host has no watermark branch to attack")
    Db = host.backbone.D
    if spec.kind == "scale":
        wm = attack_scale(host.wm, spec.a)
        head_w = host.head_w.copy()
        head_w[:, Db:] /= spec.a
        return HostNetwork(host.backbone, wm, head_w, host.head_b)
    if spec.kind == "permute":
        wm, truth = attack_permute(host.wm, spec.seed or 0)
        head_w = host.head_w.copy()
        head_w[:, Db + truth] = host.head_w[:, Db:]
        return HostNetwork(host.backbone, wm, head_w, host.head_b)
    if spec.kind == "overwrite":
        ratio = 0.5 if spec.ratio is None else spec.ratio
        return host.with_wm(attack_overwrite(host.wm, ratio, seed=spec.seed or 0))
    task = DatasetSpec(n_classes=host.n_classes, C=host.wm.bank.C, M=host.wm.M, N=host.wm.N,
                       r=host.wm.r, seed=1 if spec.data_seed is None else spec.data_seed)
    sgd = SgdConfig(FINETUNE_SGD.eta if spec.eta is None else spec.eta,
                    FINETUNE_SGD.steps if spec.steps is None else spec.steps)
    return attack_finetune(host, task, sgd)
