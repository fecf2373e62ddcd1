#!/usr/bin/env python3
"""Desk-scale comparison of baseline, MV-DeepID and M2 DeepID.

Trains the three models on one synthetic dataset for several seeds (each
multi-view model starts from that seed's baseline), then writes per-run
reports and curves, a comparison table per seed and a summary of medians.

    python scripts/run_desk_experiment.py --views lcr --seeds 0 1 2 3 4 --out runs/lcr
"""

from __future__ import annotations

import argparse
import json
import logging
import statistics
import time
from pathlib import Path

from mvdeepid import io
from mvdeepid.experiment import DESK_SCALE_LR, TrainConfig, compare, train
from mvdeepid.synth import LCR, UCD, assemble_samples, augment, build_dataset, select_subviews

VIEW_SETS = {"lcr": LCR, "ucd": UCD}
KINDS = ("baseline", "mv", "m2")

log = logging.getLogger("desk")


def run(views, ids: int, epochs: int, lr: float, seeds, data_seed: int, out: Path) -> dict:
    samples = assemble_samples(select_subviews(augment(build_dataset(ids, data_seed)), views), views)
    order = tuple(v.value for v in views)
    finals = {k: [] for k in KINDS}
    for seed in seeds:
        t0 = time.perf_counter()
        reports = {}
        base_report, base = train(samples, TrainConfig("baseline", order, ids, epochs, lr, 16, seed))
        reports["baseline"] = base_report
        for kind in ("mv", "m2"):
            reports[kind], _ = train(samples, TrainConfig(kind, order, ids, epochs, lr, 16, seed), baseline=base)
        seed_dir = out / f"seed{seed}"
        seed_dir.mkdir(parents=True, exist_ok=True)
        for kind, rep in reports.items():
            io.save_report(rep, seed_dir / f"{kind}.json")
            io.save_curve_csv(rep, seed_dir / f"{kind}_curve.csv")
            finals[kind].append({s: getattr(rep.curve[-1], f"{s}_error") for s in ("train", "valid", "test")})
        io.save_comparison_csv(compare(reports), seed_dir / "comparison.csv")
        log.info("seed %d done in %.0f s: %s", seed, time.perf_counter() - t0,
                 {k: round(1 - v[-1]["test"], 3) for k, v in finals.items()})

    summary = {
        "views": list(order), "identities": ids, "epochs": epochs, "learning_rate": lr, "seeds": list(seeds),
        "final_errors": finals,
        "median_test_accuracy": {k: statistics.median(1 - f["test"] for f in v) for k, v in finals.items()},
        "median_train_error": {k: statistics.median(f["train"] for f in v) for k, v in finals.items()},
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--views", choices=tuple(VIEW_SETS), default="lcr")
    p.add_argument("--ids", type=int, default=20)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--lr", type=float, default=DESK_SCALE_LR)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    p.add_argument("--data-seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("runs/desk"))
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    summary = run(VIEW_SETS[args.views], args.ids, args.epochs, args.lr, args.seeds, args.data_seed, args.out)
    for kind in KINDS:
        print(f"{kind:>8}: median test accuracy {summary['median_test_accuracy'][kind]:.3f}, "
              f"median train error {summary['median_train_error'][kind]:.3f}")


if __name__ == "__main__":
    main()
