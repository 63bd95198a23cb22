"""Acceptance criteria, one test each; every test records a PASS/FAIL line.

The lines are printed in the terminal summary (see ``conftest.py``) and, with
``-s``, as each test runs. The training-based criteria share module-scoped
hosts so the whole file runs in a few minutes on one core.
"""
import time

import mpmath
import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from freqmark.analysis import (fundamental_only_run, spectral_product_deviation,
                               stability_heatmap, weight_update_deviation)
from freqmark.attacks import attack_permute, attack_scale, overwrite_noise
from freqmark.conv import conv_backward, conv_forward
from freqmark.experiments import StudyConfig, defense_result, finetune_result, train_host
from freqmark.spectral import build_set_S, build_set_S_prime, geometric_phase_sum
from freqmark.tensor import FilterBank
from freqmark.trainer import DatasetSpec, HostNetwork, LossConfig, combined_loss, synth_dataset
from freqmark.watermark import detect, extract_signature, match_filters


def record(number, title, passed, detail):
    line = f"[{'PASS' if passed else 'FAIL'}] {number:2d}. {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


@pytest.fixture(scope="module")
def cfg():
    return StudyConfig()


@pytest.fixture(scope="module")
def defended(cfg):
    return train_host(cfg)


@pytest.fixture(scope="module")
def undefended(cfg):
    return train_host(cfg, lam=0.0)


@pytest.fixture(scope="module")
def finetuned(cfg, defended):
    baseline = train_host(cfg, lam=0.0, D=0)
    return finetune_result(defended, cfg, baseline=baseline)


def test_01_output_spectrum_equivalence():
    start = time.perf_counter()
    dev = spectral_product_deviation(instances=100, seed=0, geometries=((9, 9), (8, 12)),
                                     channels=(1, 2, 4), K=3)
    elapsed = time.perf_counter() - start
    ok = dev <= 1e-9 and elapsed < 10
    assert record(1, "conv output spectrum = filter spectrum x input spectrum + bias", ok,
                  f"max deviation {dev:.2e} (<= 1e-9), {elapsed:.2f} s (< 10 s)")


def test_02_weight_update_prediction():
    pred, step = weight_update_deviation(instances=20, seed=0)
    ok = pred <= 1e-9 and step <= 1e-9
    assert record(2, "predicted spectral update = backward + step + transform", ok,
                  f"prediction {pred:.2e}, step identity {step:.2e} (<= 1e-9)")


def test_03_dc_only_input_freezes_S():
    before, after = fundamental_only_run(steps=100, seed=0)
    heat = stability_heatmap(before, after, 9, 9)
    on_s = build_set_S(9, 9, 3).mask()
    on, off = float(heat[on_s].max()), float(heat[~on_s].mean())
    ok = on <= 1e-10 and off >= 1e-4
    assert record(3, "DC-only training leaves S unchanged", ok,
                  f"max change on S {on:.2e} (<= 1e-10), mean off S {off:.2e} (>= 1e-4)")


def test_04_finetune_stability_ratio(finetuned):
    heat = finetuned.heatmap
    rows = heat[[3, 6], :].mean()
    cols = heat[:, [3, 6]].mean()
    rest = heat[~build_set_S_prime(9, 9, 3).mask()].mean()
    ok = finetuned.ratio <= 0.01 and rows < rest and cols < rest
    assert record(4, "band-limited fine-tuning barely moves S'", ok,
                  f"ratio {finetuned.ratio:.2e} (<= 1e-2); rows 3,6 mean {rows:.2e}, "
                  f"cols 3,6 mean {cols:.2e}, complement {rest:.2e}")


def test_05_scaling_robustness(defended):
    src = extract_signature(defended.wm)
    drs = {a: detect(src, extract_signature(attack_scale(defended.wm, a))).dr for a in (10, 100)}
    ok = all(dr == 100.0 for dr in drs.values())
    assert record(5, "DR under scaling", ok,
                  ", ".join(f"a={a}: DR {dr:.1f}%" for a, dr in drs.items()) + " (== 100)")


def test_06_permutation_robustness(defended):
    src = extract_signature(defended.wm)
    results = []
    for seed in range(10):
        attacked, truth = attack_permute(defended.wm, seed)
        sus = extract_signature(attacked)
        results.append((detect(src, sus).dr, np.array_equal(match_filters(src, sus), truth)))
    ok = all(dr == 100.0 and found for dr, found in results)
    worst = min(dr for dr, _ in results)
    recovered = sum(found for _, found in results)
    assert record(6, "DR under permutation", ok,
                  f"min DR {worst:.1f}% over 10 permutations, {recovered}/10 recovered exactly")


def test_07_finetune_detection_and_accuracy(finetuned):
    gap = abs(finetuned.task_acc - finetuned.baseline_task_acc)
    ok = finetuned.dr == 100.0 and gap <= 5.0
    assert record(7, "fine-tuning keeps the mark and the accuracy", ok,
                  f"DR {finetuned.dr:.1f}% (== 100); task accuracy {finetuned.task_acc:.1f}% vs "
                  f"no-watermark baseline {finetuned.baseline_task_acc:.1f}% (gap <= 5)")


def test_08_overwrite_defense(cfg, defended, undefended):
    on = defense_result(defended, cfg, cfg.lam)
    off = defense_result(undefended, cfg, 0.0)
    ok = on.drop >= 20 and off.drop <= 5
    assert record(8, "overwrite defense", ok,
                  f"lambda=5e-4: {on.clean_acc:.1f}% -> {on.attacked_acc:.1f}% (drop >= 20); "
                  f"lambda=0: {off.clean_acc:.1f}% -> {off.attacked_acc:.1f}% (drop <= 5)")


def _geometric_grid(points, seed):
    rng = np.random.default_rng(seed)
    Ns = rng.integers(1, 33, size=points)
    thetas = rng.uniform(-4 * np.pi, 4 * np.pi, size=points)
    k = rng.integers(-2, 3, size=points)
    sixth = points // 6
    thetas[:sixth] = 2 * np.pi * k[:sixth]
    mid = slice(sixth, 2 * sixth)
    thetas[mid] = 2 * np.pi * rng.integers(1, Ns[mid] + 1) / Ns[mid]
    # points just off the poles, where the closed form is worst conditioned
    near = slice(2 * sixth, 3 * sixth)
    thetas[near] = 2 * np.pi * k[near] + rng.choice([-1, 1], sixth) * 10.0 ** rng.uniform(-15, -2, sixth)
    return Ns, thetas


def test_09_geometric_sum_closed_form():
    mpmath.mp.dps = 40
    worst = 0.0
    for n_terms, theta in zip(*_geometric_grid(1000, seed=0)):
        t = mpmath.mpf(float(theta))
        brute = complex(mpmath.fsum(mpmath.expj(n * t) for n in range(int(n_terms))))
        worst = max(worst, abs(geometric_phase_sum(int(n_terms), float(theta)) - brute))
    assert record(9, "geometric phase sum closed form", worst <= 1e-13,
                  f"max deviation {worst:.2e} over 1000 points (<= 1e-13)")


def _central(f, base, h):
    out = np.zeros_like(base)
    for idx in np.ndindex(base.shape):
        plus, minus = base.copy(), base.copy()
        plus[idx] += h
        minus[idx] -= h
        out[idx] = (f(plus) - f(minus)) / (2 * h)
    return out


def _rel_error(analytic, numeric):
    scale = np.maximum(np.abs(numeric), 1e-3)
    return float(np.max(np.abs(analytic - numeric) / scale))


def test_10_gradient_audit():
    rng = np.random.default_rng(0)
    worst_conv = 0.0
    for seed in range(3):
        bank = FilterBank.random(3, 2, 3, seed=seed)
        x = rng.normal(size=(2, 2, 6, 7))
        target = rng.normal(size=(2, 3, 6, 7))

        def loss(b, xx):
            return 0.5 * np.sum((conv_forward(b, xx) - target) ** 2)

        g = conv_backward(bank, x, conv_forward(bank, x) - target)
        pairs = [
            (g.d_weights, _central(lambda w: loss(bank.replace(filters=w), x), bank.filters.copy(), 1e-5)),
            (g.d_biases, _central(lambda b: loss(bank.replace(biases=b), x), bank.biases.copy(), 1e-5)),
            (g.d_input, _central(lambda xx: loss(bank, xx), x, 1e-5)),
        ]
        worst_conv = max(worst_conv, *(_rel_error(a, n) for a, n in pairs))

    data = synth_dataset(DatasetSpec(samples_per_class=3, seed=5))
    host = HostNetwork.init(2, 3, 9, 9, seed=7, D=3, backbone_filters=2)
    eps = overwrite_noise(host.wm.bank, 9, 9, 0.5, np.random.default_rng(0))
    cfg = LossConfig(lam=0.3)
    _, g = combined_loss(host, data.x, data.y, cfg, eps=eps)

    def value(h):
        return combined_loss(h, data.x, data.y, cfg, eps=eps)[0]

    bb, wm = host.backbone, host.wm.bank
    checks = [
        (g.backbone.d_weights, bb.filters,
         lambda w: HostNetwork(bb.replace(filters=w), host.wm, host.head_w, host.head_b)),
        (g.backbone.d_biases, bb.biases,
         lambda b: HostNetwork(bb.replace(biases=b), host.wm, host.head_w, host.head_b)),
        (g.wm.d_weights, wm.filters, lambda w: host.with_wm(host.wm.with_bank(wm.replace(filters=w)))),
        (g.wm.d_biases, wm.biases, lambda b: host.with_wm(host.wm.with_bank(wm.replace(biases=b)))),
        (g.head_w, host.head_w, lambda hw: HostNetwork(bb, host.wm, hw, host.head_b)),
        (g.head_b, host.head_b, lambda hb: HostNetwork(bb, host.wm, host.head_w, hb)),
    ]
    worst_host = max(_rel_error(a, _central(lambda p: value(make(p)), base.copy(), 1e-6))
                     for a, base, make in checks)
    ok = worst_conv <= 1e-6 and worst_host <= 1e-5
    assert record(10, "gradient audit (central differences)", ok,
                  f"conv max rel error {worst_conv:.1e} (<= 1e-6), "
                  f"host loss max rel error {worst_host:.1e} (<= 1e-5)")
