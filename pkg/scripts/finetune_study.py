"""Fine-tune a watermarked host on a second task and report what moved.

Prints a JSON summary (stability ratio, detection rate, task accuracies) and
optionally writes the per-frequency heatmap as CSV.
"""
import argparse
import dataclasses
import json
from pathlib import Path

from freqmark.conv import SgdConfig
from freqmark.experiments import StudyConfig, finetune_result, train_host
from freqmark.io import atomic_write, heatmap_csv
from freqmark.spectral import centered


def main(argv=None):
    base = StudyConfig()
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--steps", type=int, default=base.finetune.steps, help="fine-tuning steps")
    p.add_argument("--eta", type=float, default=base.finetune.eta, help="fine-tuning step size")
    p.add_argument("--task-seed", type=int, default=base.task_seed)
    p.add_argument("--no-baseline", action="store_true", help="skip the host without a watermark")
    p.add_argument("--heatmap", type=Path, help="write the heatmap CSV here")
    p.add_argument("--centered", action="store_true", help="centre the zero frequency in the CSV")
    args = p.parse_args(argv)

    cfg = dataclasses.replace(base, task_seed=args.task_seed,
                              finetune=SgdConfig(args.eta, args.steps))
    baseline = None if args.no_baseline else train_host(cfg, lam=0.0, D=0)
    result = finetune_result(train_host(cfg), cfg, baseline=baseline)
    if args.heatmap:
        atomic_write(args.heatmap, heatmap_csv(centered(result.heatmap) if args.centered else result.heatmap))
    print(json.dumps(result.summary(), indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
