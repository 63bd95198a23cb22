"""Command-line front end: ``freqmark {embed,extract,attack,detect,heatmap,verify-theorems}``.

Exit codes: 0 match / success, 1 no match (or a failed verification),
2 usage error, 3 bad or incompatible data.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

from . import io
from .analysis import stability_heatmap, verifier_suite
from .attacks import AttackSpec, InvalidAttackError
from .conv import SgdConfig
from .spectral import GeometryError, centered
from .trainer import (DEFENSE_PHASES, DatasetSpec, HostNetwork, LossConfig, attack_host,
                      attacked_accuracy, evaluate, synth_dataset, train_schedule)
from .watermark import DEFAULT_TAU, IncompatibleSignatureError, detect, extract_signature

EXIT_MATCH, EXIT_NO_MATCH, EXIT_USAGE, EXIT_DATA = 0, 1, 2, 3

# tolerances for verify-theorems; the fine-tuning stability check is a separate experiment
VERIFY_LIMITS = {
    "conv_spectrum_product": 1e-9,
    "predicted_weight_update": 1e-9,
    "step_equivalence": 1e-9,
    "dc_input_change_on_S": 1e-10,
    "geometric_sum_closed_form": 1e-13,
}


class UsageError(Exception):
    pass


def _check_writable(path: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(directory) or not os.access(directory, os.W_OK):
        raise UsageError(f"cannot write to {path}")


def _dump(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True)


def cmd_embed(args) -> int:
    _check_writable(args.out)
    if min(args.steps, args.eta, args.lam, args.warmup_steps, args.warmup_eta) < 0:
        raise UsageError("step counts, step sizes and --lambda must be non-negative")
    data_spec = DatasetSpec(n_classes=args.classes, samples_per_class=args.samples, seed=args.seed)
    data = synth_dataset(data_spec)
    host = HostNetwork.init(args.classes, data_spec.C, data_spec.M, data_spec.N,
                            seed=args.seed + 1, D=args.filters)
    cfg = LossConfig(lam=args.lam, noise_ratio=args.noise_ratio, noise_seed=args.seed)
    phases = (SgdConfig(args.warmup_eta, args.warmup_steps), SgdConfig(args.eta, args.steps))
    host = train_schedule(host, data, cfg, phases)
    clean = evaluate(host, data)
    attacked = attacked_accuracy(host, data, args.noise_ratio)
    meta = {"lambda": args.lam, "steps": args.steps, "eta": args.eta,
            "warmup_steps": args.warmup_steps, "warmup_eta": args.warmup_eta,
            "noise_ratio": args.noise_ratio, "classes": args.classes, "samples": args.samples,
            "clean_acc": clean, "attacked_acc": attacked}
    io.save_model(args.out, host, meta, seed=args.seed)
    print(f"clean accuracy {clean:.2f}%  attacked accuracy {attacked:.2f}%")
    return EXIT_MATCH


def cmd_extract(args) -> int:
    _check_writable(args.out)
    host, _, _ = io.load_model(args.model)
    io.save_signature(args.out, extract_signature(host.wm))
    return EXIT_MATCH


def _read_spec(text: str) -> AttackSpec:
    """Attack spec from a JSON file path or an inline JSON object."""
    if os.path.exists(text):
        with open(text, encoding="utf-8") as fh:
            text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"attack spec is not JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise UsageError("attack spec must be a JSON object")
    return AttackSpec.from_dict(doc)


def cmd_attack(args) -> int:
    _check_writable(args.out)
    spec = _read_spec(args.spec)
    host, meta, seed = io.load_model(args.model)
    attacked = attack_host(host, spec)
    meta = dict(meta)
    meta["attacks"] = list(meta.get("attacks", [])) + [spec.to_dict()]
    io.save_model(args.out, attacked, meta, seed=seed)
    return EXIT_MATCH


def cmd_detect(args) -> int:
    if not 0 < args.tau <= 1:
        raise UsageError("--tau must lie in (0, 1]")
    src = io.load_signature_or_model(args.source)
    sus = io.load_signature_or_model(args.suspect)
    report = detect(src, sus, args.tau)
    doc = report.to_dict()
    doc["verdict_threshold"] = args.threshold
    doc["match"] = report.dr >= args.threshold
    text = _dump(doc)
    if args.out:
        _check_writable(args.out)
        io.atomic_write(args.out, text + "\n")
    print(text)
    return EXIT_MATCH if doc["match"] else EXIT_NO_MATCH


def cmd_heatmap(args) -> int:
    _check_writable(args.out)
    before, _, _ = io.load_model(args.before)
    after, _, _ = io.load_model(args.after)
    if (before.wm.M, before.wm.N) != (after.wm.M, after.wm.N) or \
            before.wm.bank.filters.shape != after.wm.bank.filters.shape:
        raise GeometryError("models use different watermark geometries")
    grid = stability_heatmap(before.wm.bank, after.wm.bank, before.wm.M, before.wm.N)
    if args.centered:
        grid = centered(grid)
    io.atomic_write(args.out, io.heatmap_csv(grid))
    return EXIT_MATCH


def cmd_verify(args) -> int:
    results = {k: float(v) for k, v in verifier_suite(seed=args.seed).items()}
    ok = True
    for name, value in results.items():
        limit = VERIFY_LIMITS[name]
        passed = value <= limit
        ok &= passed
        print(f"{name:32s} {value:.3e}  (limit {limit:.0e})  {'ok' if passed else 'FAIL'}")
    return EXIT_MATCH if ok else EXIT_NO_MATCH


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="freqmark", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("embed", help="train a host with a watermark branch")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lambda", dest="lam", type=float, default=5e-4)
    warm, main_phase = DEFENSE_PHASES
    p.add_argument("--steps", type=int, default=main_phase.steps)
    p.add_argument("--eta", type=float, default=main_phase.eta)
    p.add_argument("--warmup-steps", type=int, default=warm.steps)
    p.add_argument("--warmup-eta", type=float, default=warm.eta)
    p.add_argument("--noise-ratio", type=float, default=0.5)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--samples", type=int, default=32, help="samples per class")
    p.add_argument("--filters", type=int, default=16, help="watermark filters D")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("extract", help="write the signature of a model's watermark branch")
    p.add_argument("model")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("attack", help="apply an attack spec (JSON file or inline JSON)")
    p.add_argument("model")
    p.add_argument("spec")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("detect", help="detection rate of a suspect against a source")
    p.add_argument("source", help="signature or model file")
    p.add_argument("suspect", help="signature or model file")
    p.add_argument("--tau", type=float, default=DEFAULT_TAU)
    p.add_argument("--threshold", type=float, default=50.0, help="DR (%%) needed for a match")
    p.add_argument("--out", default=None, help="also write the report here")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("heatmap", help="stability heatmap CSV between two models")
    p.add_argument("before")
    p.add_argument("after")
    p.add_argument("--out", required=True)
    p.add_argument("--centered", action="store_true", help="move the zero frequency to the middle")
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("verify-theorems", help="run the closed-form verifier suite")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, InvalidAttackError) as exc:
        print(f"freqmark: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (io.CorruptFileError, IncompatibleSignatureError, GeometryError,
            FileNotFoundError, IsADirectoryError) as exc:
        print(f"freqmark: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
