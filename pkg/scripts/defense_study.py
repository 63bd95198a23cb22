"""Sweep the pseudo-class weight and report accuracy before and after overwrite attacks.

Prints CSV with one row per lambda, accuracies measured on the held-out split.
"""
import argparse
import csv
import sys

from freqmark.experiments import StudyConfig, defense_result, train_host


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--lambdas", type=float, nargs="+", default=[0.0, 5e-4])
    p.add_argument("--attack-seeds", type=int, default=20, help="overwrite draws per host")
    args = p.parse_args(argv)

    cfg = StudyConfig(attack_seeds=tuple(range(args.attack_seeds)))
    out = csv.writer(sys.stdout, lineterminator="\n")
    out.writerow(["lambda", "clean_acc", "attacked_acc", "drop"])
    for lam in args.lambdas:
        r = defense_result(train_host(cfg, lam=lam), cfg, lam)
        out.writerow([lam, f"{r.clean_acc:.2f}", f"{r.attacked_acc:.2f}", f"{r.drop:.2f}"])
        sys.stdout.flush()


if __name__ == "__main__":
    main()
