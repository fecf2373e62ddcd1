"""Command-line entry point.

Exit codes: 0 success, 1 verification or numerical failure, 2 usage/IO error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .experiment import TrainConfig, compare, evaluate, five_view_run, train
from .models import DEFAULT_LR, check_model_gradients
from .synth import LCR, UCD, VIEWS, assemble_samples, augment, build_dataset, select_subviews, split_samples

VIEW_SETS = {"lcr": LCR, "ucd": UCD, "all5": VIEWS}
GRAD_TOL = 1e-4

log = logging.getLogger("mvdeepid")


class UsageError(Exception):
    pass


def cmd_gen_data(args) -> int:
    ds = build_dataset(args.ids, args.seed)
    if args.augment:
        ds = augment(ds)
    manifest = io.save_dataset(ds, args.out)
    print(f"wrote {len(ds)} images for {ds.num_identities} identities to {manifest}")
    return 0


def _samples_for(data_dir, views):
    ds = io.load_dataset(data_dir)
    missing = set(views) - ds.views()
    if missing:
        raise UsageError(f"dataset {data_dir} has no images for views {sorted(v.value for v in missing)}")
    return ds, assemble_samples(select_subviews(ds, views), views)


def cmd_train(args) -> int:
    views = VIEW_SETS[args.views]
    ds, samples = _samples_for(args.data, views)
    config = TrainConfig(
        model_kind=args.model,
        view_order=tuple(v.value for v in views),
        num_classes=ds.num_identities,
        epochs=args.epochs,
        learning_rate=args.lr,
        minibatch_size=args.minibatch,
        rng_seed=args.seed,
        freeze_conv=args.freeze_conv,
    )
    run = five_view_run if (args.views == "all5" and args.model != "baseline") else train
    report, model = run(samples, config)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.checkpoint = "checkpoint.bin"
    io.save_checkpoint(model, out / report.checkpoint, seed_chain=[args.seed])
    io.save_report(report, out / "report.json")
    io.save_curve_csv(report, out / "curve.csv")
    (out / "timing.json").write_text(json.dumps({"wall_seconds": report.wall_seconds}) + "\n")
    acc = report.final_accuracy
    print(f"{config.model_kind} views={','.join(config.view_order)} d={report.aggregation_dim} "
          f"train={acc['train']:.4f} valid={acc['valid']:.4f} test={acc['test']:.4f}"
          + (" [diagnostic]" if report.diagnostic else ""))
    return 0


def cmd_eval(args) -> int:
    try:
        model = io.load_checkpoint(args.checkpoint)
    except OSError as exc:
        raise UsageError(str(exc)) from exc
    views = [v for v in VIEWS if v.value in model.view_order]
    _, samples = _samples_for(args.data, views)
    subset = split_samples(samples, args.split)
    if not subset:
        raise UsageError(f"no samples in split {args.split!r}")
    acc = evaluate(model, subset)
    result = {"accuracy": acc, "split": args.split, "n": len(subset), "kind": model.kind}
    print(f"accuracy {acc:.4f}")
    print(json.dumps(result, sort_keys=True))
    if args.json:
        Path(args.json).write_text(json.dumps(result, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return 0


def cmd_compare(args) -> int:
    reports = {}
    for i, path in enumerate(args.reports):
        rep = io.load_report(path)
        name = rep.config.model_kind
        if name in reports:
            name = f"{name}#{i + 1}"
        reports[name] = rep
    try:
        table = compare(reports)
    except ValueError as exc:
        raise UsageError(f"reports are not aligned: {exc}") from exc
    io.save_comparison_csv(table, args.out)
    for row in table.rows():
        print(",".join(str(c) for c in row))
    return 0


def cmd_gradcheck(args) -> int:
    try:
        res = check_model_gradients(args.model, args.seed, args.eps, corrupt=args.corrupt_grad)
    except Exception as exc:  # report, never crash
        print(f"gradient check failed: {exc}", file=sys.stderr)
        return 1
    print(f"max relative error {res.error:.3e} (worst: {res.worst}; {res.checked} coordinates, "
          f"{res.skipped} straddling a kink; unfiltered {res.unfiltered:.3e})")
    if not np.isfinite(res.error) or res.error >= GRAD_TOL:
        print(f"gradient check FAILED at {res.worst}", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mvdeepid", description="Multi-view DeepID face identification")
    p.add_argument("--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="render a synthetic multi-view dataset")
    g.add_argument("--ids", type=int, default=20)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--augment", action="store_true")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a baseline, MV or M2 model")
    t.add_argument("--data", required=True)
    t.add_argument("--model", choices=("baseline", "mv", "m2"), default="mv")
    t.add_argument("--views", choices=tuple(VIEW_SETS), default="lcr")
    t.add_argument("--epochs", type=int, default=50)
    t.add_argument("--lr", type=float, default=DEFAULT_LR)
    t.add_argument("--minibatch", type=int, default=16)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--freeze-conv", action="store_true")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="accuracy of a checkpoint on one split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", choices=("train", "valid", "test"), default="test")
    e.add_argument("--json")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("compare", help="accuracy and t-value table for three runs")
    c.add_argument("--reports", nargs=3, required=True)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_compare)

    k = sub.add_parser("gradcheck", help="finite-difference check of a reduced model")
    k.add_argument("--model", choices=("baseline", "mv", "m2"), default="mv")
    k.add_argument("--seed", type=int, default=0)
    k.add_argument("--eps", type=float, default=1e-5)
    k.add_argument("--corrupt-grad", default=None, help=argparse.SUPPRESS)
    k.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, io.FormatError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
