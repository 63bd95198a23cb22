"""Reproducible desk-scale studies shared by ``scripts/`` and the acceptance tests.

Every study is a pure function of its config: same config, same numbers.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .analysis import gap_ratio, stability_gap, stability_heatmap
from .conv import SgdConfig
from .spectral import build_set_S_prime
from .trainer import (DEFENSE_PHASES, FINETUNE_SGD, DatasetSpec, HostNetwork, LossConfig,
                      attacked_accuracy, evaluate, split_dataset, synth_dataset, train,
                      train_schedule)
from .watermark import DEFAULT_TAU, detect, extract_signature


@dataclass(frozen=True)
class StudyConfig:
    """Shared geometry and recipe for the defense and fine-tuning studies."""

    n_classes: int = 2
    samples_per_class: int = 64
    C: int = 3
    M: int = 9
    N: int = 9
    K: int = 3
    D: int = 16
    r: int = 1
    data_seed: int = 0
    task_seed: int = 1
    host_seed: int = 1
    lam: float = 5e-4
    noise_ratio: float = 0.5
    phases: tuple = DEFENSE_PHASES
    finetune: SgdConfig = FINETUNE_SGD
    attack_seeds: tuple = tuple(range(20))

    def data_spec(self, seed: int) -> DatasetSpec:
        return DatasetSpec(n_classes=self.n_classes, samples_per_class=self.samples_per_class,
                           C=self.C, M=self.M, N=self.N, seed=seed, r=self.r)

    def splits(self, seed: int) -> tuple:
        return split_dataset(synth_dataset(self.data_spec(seed)), 0.5, seed=seed)

    def fresh_host(self, D: int | None = None) -> HostNetwork:
        return HostNetwork.init(self.n_classes, self.C, self.M, self.N, seed=self.host_seed,
                                D=self.D if D is None else D, K=self.K, r=self.r)


def train_host(cfg: StudyConfig, lam: float | None = None, D: int | None = None) -> HostNetwork:
    """Train a host on the source task with the configured schedule."""
    lam = cfg.lam if lam is None else lam
    source, _ = cfg.splits(cfg.data_seed)
    loss = LossConfig(lam=lam, noise_ratio=cfg.noise_ratio, noise_seed=cfg.data_seed)
    return train_schedule(cfg.fresh_host(D), source, loss, cfg.phases)


@dataclass(frozen=True)
class DefenseResult:
    lam: float
    clean_acc: float
    attacked_acc: float

    @property
    def drop(self) -> float:
        return self.clean_acc - self.attacked_acc


def defense_result(host: HostNetwork, cfg: StudyConfig, lam: float) -> DefenseResult:
    """Held-out accuracy before and after overwrite attacks on ``host``."""
    _, test = cfg.splits(cfg.data_seed)
    return DefenseResult(lam, evaluate(host, test),
                         attacked_accuracy(host, test, cfg.noise_ratio, seeds=cfg.attack_seeds))


@dataclass(frozen=True)
class FinetuneResult:
    heatmap: np.ndarray
    on_s_prime: float
    off_s_prime: float
    ratio: float
    dr: float
    task_acc: float
    baseline_task_acc: float | None = None
    extra: dict = field(default_factory=dict)

    def summary(self) -> dict:
        doc = asdict(self)
        doc.pop("heatmap")
        return doc


def finetune_result(host: HostNetwork, cfg: StudyConfig,
                    baseline: HostNetwork | None = None, tau: float = DEFAULT_TAU) -> FinetuneResult:
    """Fine-tune ``host`` on the transfer task and measure what moved.

    ``baseline`` (typically a host without a watermark branch) gets the same
    fine-tuning so the task accuracies can be compared.
    """
    task_spec = cfg.data_spec(cfg.task_seed)
    task_train, task_test = cfg.splits(cfg.task_seed)
    tuned = _finetune_on(host, task_train, cfg.finetune)
    heat = stability_heatmap(host.wm.bank, tuned.wm.bank, cfg.M, cfg.N)
    s_prime = build_set_S_prime(cfg.M, cfg.N, cfg.K)
    on, off = stability_gap(heat, s_prime)
    dr = detect(extract_signature(host.wm), extract_signature(tuned.wm), tau).dr
    base_acc = None
    if baseline is not None:
        base_acc = evaluate(_finetune_on(baseline, task_train, cfg.finetune), task_test)
    return FinetuneResult(heat, on, off, gap_ratio(heat, s_prime), dr,
                          evaluate(tuned, task_test), base_acc,
                          {"task_seed": task_spec.seed, "steps": cfg.finetune.steps})


def _finetune_on(host: HostNetwork, data, sgd: SgdConfig) -> HostNetwork:
    # same loop as attack_finetune, but on the training half only
    return train(host, data, LossConfig(lam=0.0), sgd)
