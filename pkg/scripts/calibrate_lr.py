#!/usr/bin/env python3
"""Learning-rate sweep for the desk-scale LCR setup.

For every rate and seed, trains the baseline and MV-DeepID (from that
baseline) and reports final train/test error of both.  A rate "converges"
when the MV train error reaches the tolerance.

    python scripts/calibrate_lr.py --lrs 1e-4 1e-3 1e-2 5e-2 --seeds 0 1
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from mvdeepid.experiment import TrainConfig, train
from mvdeepid.synth import LCR, assemble_samples, augment, build_dataset, select_subviews

FIELDS = ["lr", "seed", "baseline_train_err", "baseline_test_err", "mv_train_err", "mv_test_err", "mv_first_loss"]


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--lrs", type=float, nargs="+", default=[1e-4, 1e-3, 1e-2, 2e-2, 5e-2])
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1])
    p.add_argument("--ids", type=int, default=20)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--tol", type=float, default=0.05)
    p.add_argument("--out", type=Path, default=None, help="optional CSV path")
    args = p.parse_args()
    logging.basicConfig(level=logging.WARNING)

    order = tuple(v.value for v in LCR)
    samples = assemble_samples(select_subviews(augment(build_dataset(args.ids, 0)), LCR), LCR)
    rows = []
    for lr in args.lrs:
        for seed in args.seeds:
            base_rep, base = train(samples, TrainConfig("baseline", order, args.ids, args.epochs, lr, 16, seed))
            mv_rep, _ = train(samples, TrainConfig("mv", order, args.ids, args.epochs, lr, 16, seed), baseline=base)
            row = {"lr": lr, "seed": seed,
                   "baseline_train_err": base_rep.curve[-1].train_error,
                   "baseline_test_err": base_rep.curve[-1].test_error,
                   "mv_train_err": mv_rep.curve[-1].train_error,
                   "mv_test_err": mv_rep.curve[-1].test_error,
                   "mv_first_loss": mv_rep.curve[0].train_loss}
            rows.append(row)
            flag = "converged" if row["mv_train_err"] <= args.tol else "not converged"
            print(f"lr {lr:g} seed {seed}: MV train err {row['mv_train_err']:.3f}, "
                  f"test err {row['mv_test_err']:.3f} ({flag}); baseline test err {row['baseline_test_err']:.3f}",
                  flush=True)
    if args.out:
        with open(args.out, "w", newline="") as f:
            w = csv.DictWriter(f, FIELDS, lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())
