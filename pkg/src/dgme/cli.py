"""Command-line entry point (``dgme``)."""

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import checkpoint, harness
from .data import TOY_CASES, ToySpec, generate_toy, load_csv, save_csv, split_folds
from .predictive import evaluate


def _common(p, model=True):
    p.add_argument("--config", help="INI config file ([experiment], [data], [train], [mcd])")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--out", help="output directory")
    if model:
        p.add_argument("--model", choices=harness.MODEL_KINDS)
    p.add_argument("--toy", choices=TOY_CASES, help="use a toy dataset instead of a CSV")
    p.add_argument("--data", help="CSV file with a header row")
    p.add_argument("--target", help="target column of --data")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override a config value")


def _experiment_config(args):
    overrides = []
    for flag, key in (("seed", "experiment.seed"), ("out", "experiment.out"), ("model", "experiment.model"),
                      ("toy", "data.toy"), ("data", "data.csv"), ("target", "data.target")):
        v = getattr(args, flag, None)
        if v is not None:
            overrides.append(f"{key}={v}")
    return harness.load_config(args.config, overrides + list(args.set))


def _print_summary(records):
    for row in harness.summarize(records):
        print(f"{row['experiment']}\t{row['model']}\t{row['metric']}\t{row['mean']:.4f} +/- {row['se']:.4f} (n={row['n']})")


def cmd_generate_toy(args):
    kw = {"case": args.case, "n": args.n, "seed": args.seed}
    for k in ("p_u", "noise_variance", "dof"):
        if getattr(args, k) is not None:
            kw[k] = getattr(args, k)
    data = generate_toy(ToySpec(**kw))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_csv(data, out)
    print(f"wrote {len(data)} rows to {out}")


def cmd_train(args):
    cfg = _experiment_config(args)
    if args.sweep:
        param, _, values = args.sweep.partition("=")
        cast = float if param in ("lr", "p_d", "pi_floor") else (str if param == "init" else int)
        records = harness.run_sweep(cfg, param, [cast(v) for v in values.split(",")])
    else:
        records = harness.run_experiment(cfg)
    _print_summary(records)


def cmd_evaluate(args):
    model, scaler, _ = checkpoint.load_checkpoint(args.checkpoint)
    data = load_csv(args.data, args.target)
    if scaler is None:
        raise ValueError("checkpoint has no scaler; cannot evaluate in original units")
    n_masks = args.masks if model.p_d > 0 and getattr(model, "kind", "dgme") != "mcd" else 0
    metrics = evaluate(model, scaler.apply(data), scaler, n_masks=n_masks, seed=args.seed)
    text = json.dumps(metrics, indent=2)
    if args.out:
        Path(args.out).write_text(text)
    print(text)


def cmd_sample(args):
    model, scaler, _ = checkpoint.load_checkpoint(args.checkpoint)
    xs = [[float(v) for v in point.split(",")] for point in args.x]
    p_d = model.p_d if args.p_d is None else args.p_d
    rows = harness.emit_histogram_data(model, np.array(xs), args.draws, p_d, args.seed, args.out, scaler)
    for r in rows:
        print(f"x={r['x']}\tmean={r['mean']:.4f}\tvar={r['var']:.4f}\tkurtosis={r['excess_kurtosis']:.4f}")


def cmd_ablate_em_budget(args):
    cfg = _experiment_config(args)
    cells = None
    if args.cells:
        cells = [tuple(int(v) for v in c.split("x")) for c in args.cells.split(",")]
    _print_summary(harness.run_em_budget_ablation(cfg, args.budget, cells))


def cmd_ablate_dropout(args):
    cfg = _experiment_config(args)
    grid = [float(v) for v in args.grid.split(",")] if args.grid else harness.DROPOUT_GRID
    _print_summary(harness.run_dropout_ablation(cfg, grid))


def cmd_folds(args):
    n = len(load_csv(args.data, args.target)) if args.data else args.n
    if n is None:
        raise ValueError("give --data/--target or --n")
    folds = split_folds(n, args.n_folds, args.train_fraction, args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["fold", "split", "index"])
        for f, (tr, te) in enumerate(folds):
            w.writerows([f, "train", int(i)] for i in tr)
            w.writerows([f, "test", int(i)] for i in te)
    print(f"wrote {len(folds)} folds of N={n} to {out}")


def build_parser():
    parser = argparse.ArgumentParser(prog="dgme", description="Deep Gaussian mixture ensembles and baselines")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-toy", help="write a toy regression dataset to CSV")
    p.add_argument("--case", choices=TOY_CASES, default="gaussian")
    p.add_argument("--n", type=int, default=800)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--p-u", dest="p_u", type=float)
    p.add_argument("--noise-variance", type=float)
    p.add_argument("--dof", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate_toy)

    p = sub.add_parser("train", help="fit and evaluate a model on every fold")
    _common(p)
    p.add_argument("--sweep", metavar="FIELD=V1,V2,...", help="repeat over values of one training field")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="metrics of a saved model on a CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--target", default="y")
    p.add_argument("--masks", type=int, default=100, help="dropout masks for the predictive density")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write metrics JSON here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sample", help="predictive samples and kurtosis at query points")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--x", action="append", required=True, help="query point, comma separated features; repeatable")
    p.add_argument("--draws", type=int, default=10000)
    p.add_argument("--p-d", dest="p_d", type=float, help="dropout rate (default: the model's)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("ablate-em-budget", help="train NLL over (epochs, rounds) with a fixed product")
    _common(p, model=False)
    p.add_argument("--budget", type=int, default=50)
    p.add_argument("--cells", help="comma separated ExJ cells, e.g. 1x50,5x10")
    p.set_defaults(func=cmd_ablate_em_budget)

    p = sub.add_parser("ablate-dropout", help="train and test NLL over dropout rates")
    _common(p)
    p.add_argument("--grid", help="comma separated dropout rates")
    p.set_defaults(func=cmd_ablate_dropout)

    p = sub.add_parser("folds", help="write seeded train/test fold indices")
    p.add_argument("--data")
    p.add_argument("--target", default="y")
    p.add_argument("--n", type=int)
    p.add_argument("--n-folds", type=int, default=20)
    p.add_argument("--train-fraction", type=float, default=0.9)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_folds)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except Exception as exc:
        print(f"dgme {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
