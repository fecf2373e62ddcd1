#!/usr/bin/env python3
"""Validation curves of MV-DeepID on all five views versus the LCR and UCD
sub-datasets, to see whether joint five-view training lags behind.

    python scripts/five_view_diagnostic.py --seed 0 --out runs/five_view
"""

from __future__ import annotations

import argparse
import csv
from pathlib import Path

from mvdeepid import io
from mvdeepid.experiment import DESK_SCALE_LR, TrainConfig, five_view_run, train
from mvdeepid.synth import LCR, UCD, VIEWS, assemble_samples, augment, build_dataset, select_subviews


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--ids", type=int, default=20)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--lr", type=float, default=DESK_SCALE_LR)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--at-epoch", type=int, default=20)
    p.add_argument("--out", type=Path, default=Path("runs/five_view"))
    args = p.parse_args()

    data = augment(build_dataset(args.ids, 0))
    args.out.mkdir(parents=True, exist_ok=True)
    curves = {}
    for name, views in (("five", VIEWS), ("lcr", LCR), ("ucd", UCD)):
        order = tuple(v.value for v in views)
        samples = assemble_samples(select_subviews(data, views), views)
        cfg = TrainConfig("mv", order, args.ids, args.epochs, args.lr, 16, args.seed)
        report, _ = (five_view_run if name == "five" else train)(samples, cfg)
        io.save_report(report, args.out / f"{name}.json")
        curves[name] = report.errors("valid")
        print(f"{name:>4}: d={report.aggregation_dim}, valid err at epoch {args.at_epoch} "
              f"{curves[name][args.at_epoch - 1]:.3f}, final {curves[name][-1]:.3f}", flush=True)

    with open(args.out / "valid_curves.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["epoch", *curves])
        for i in range(args.epochs):
            w.writerow([i + 1, *(repr(c[i]) for c in curves.values())])


if __name__ == "__main__":
    main()
