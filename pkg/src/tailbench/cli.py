"""``tailbench`` command line.

Exit codes: 0 success, 1 runtime failure, 2 usage error. Commands that
write files default to ``$TAILBENCH_OUTPUT_DIR`` (or ``./runs``) when no
explicit destination is given.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

ENV_OUTPUT = "TAILBENCH_OUTPUT_DIR"


def _default_out() -> Path:
    return Path(os.environ.get(ENV_OUTPUT, "runs"))


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _positive_float(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tailbench", description="Heavy-tailed generative model benchmark.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate or ingest a dataset and cache its splits")
    g.add_argument("--kind", choices=("iso", "mix", "tabular"), required=True)
    g.add_argument("--n", type=_positive_int, default=4096)
    g.add_argument("--dim", type=_positive_int, default=30)
    g.add_argument("--alpha", type=float, default=1.7)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--path", help="CSV file for --kind tabular")
    g.add_argument("--standardize", action="store_true")
    g.add_argument("--name")
    g.add_argument("--out", type=Path, help="cache directory (default: <output dir>/data/<name>)")

    t = sub.add_parser("train", help="train one model on a cached dataset")
    t.add_argument("--data", type=Path, required=True, help="dataset cache directory")
    t.add_argument("--model", choices=("ddpm", "dlpm", "gf_linear", "gf-linear"), required=True)
    t.add_argument("--alpha", type=float, default=1.7)
    t.add_argument("--steps", type=_positive_int, default=512)
    t.add_argument("--sigma-max", type=_positive_float, default=2.0)
    t.add_argument("--epochs", type=_positive_int, default=16)
    t.add_argument("--batch", type=_positive_int, default=1024)
    t.add_argument("--lr", type=_positive_float, default=5e-4)
    t.add_argument("--depth", type=_positive_int, default=5)
    t.add_argument("--width", type=_positive_int, default=256)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", type=Path, help="model directory (default: <output dir>/models/<model>)")

    s = sub.add_parser("sample", help="draw samples from a trained model")
    s.add_argument("--model-dir", type=Path, required=True)
    s.add_argument("--n", type=_positive_int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", type=Path, help="CSV path (default: <model dir>/samples.csv)")

    e = sub.add_parser("evaluate", help="MMD-RBF and TCE of generated samples against a reference")
    e.add_argument("--generated", type=Path, required=True, help="CSV of generated samples")
    e.add_argument("--reference", type=Path, required=True, help="CSV file or dataset cache (uses test split)")
    e.add_argument("--levels", type=float, nargs="+", default=[0.90, 0.95, 0.99])
    e.add_argument("--bandwidth", type=_positive_float)
    e.add_argument("--out", type=Path, help="optional JSON output path")

    for name, helptext in (("pilot", "run the pilot grid only"), ("bench", "run pilot (if configured) and main")):
        b = sub.add_parser(name, help=helptext)
        b.add_argument("--config", type=Path, required=True, help="JSON benchmark config")
        b.add_argument("--out", type=Path, help="override the config's output_dir")

    bd = sub.add_parser("bounds", help="evaluate the DDPM/DLPM sampling-error bounds")
    bd.add_argument("--beta", type=_positive_float, default=1.0, help="Sobolev smoothness for DDPM")
    bd.add_argument("--gamma", type=float, default=2.0, help="data tail index (> 1)")
    bd.add_argument("--d", type=_positive_float, default=1.0)
    bd.add_argument("--n", type=float, default=1e4)
    bd.add_argument("--beta-alpha", type=_positive_float, default=1.0, help="Hoelder regularity for DLPM")
    bd.add_argument("--c", type=_positive_float, default=1.0, help="DLPM mixing rate")
    bd.add_argument("--table", action="store_true", help="emit the (n, T) trade-off table as CSV")
    bd.add_argument("--out", type=Path, help="CSV path for --table (default: stdout)")

    r = sub.add_parser("report", help="render Markdown tables and curve CSVs from bench results")
    r.add_argument("--results", type=Path, required=True)
    r.add_argument("--out", type=Path)

    sub.add_parser("selfcheck", help="run the invariant battery")
    return p


def _read_matrix(path: Path) -> np.ndarray:
    if path.is_dir():
        path = path / "test.csv"
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


def _fraction(x: float) -> str:
    f = Fraction(x).limit_denominator(1000)
    return f" (= {f})" if abs(float(f) - x) < 1e-12 and f.denominator != 1 else ""


def cmd_gen_data(args):
    from .data import MixtureConfig, gen_alpha_stable_iso, gen_alpha_stable_mix, load_tabular, save_dataset

    if args.kind == "tabular" and not args.path:
        raise _Usage("gen-data --kind tabular requires --path")
    if args.kind == "iso":
        ds = gen_alpha_stable_iso(args.n, args.dim, args.alpha, args.seed)
    elif args.kind == "mix":
        ds = gen_alpha_stable_mix(args.n, args.dim, MixtureConfig(alpha=args.alpha), args.seed)
    else:
        ds = load_tabular(args.path, args.standardize, args.n, args.seed, args.name)
    out = args.out or _default_out() / "data" / (args.name or ds.name)
    save_dataset(ds, out)
    print(f"wrote {ds.name}: dim={ds.dim} train/val/test={len(ds.train)}/{len(ds.val)}/{len(ds.test)} -> {out}")
    if "warning" in ds.meta:
        print(f"warning: {ds.meta['warning']}", file=sys.stderr)


def cmd_train(args):
    from .data import config_hash, load_dataset
    from .models import ModelSpec, TrainConfig, save_model, steps_per_epoch, train_model

    ds = load_dataset(args.data)
    spec = ModelSpec(args.model, steps=args.steps, sigma_max=args.sigma_max, alpha=args.alpha)
    cfg = TrainConfig(epochs=args.epochs, batch=args.batch, lr=args.lr, width=args.width, depth=args.depth)
    params, curve = train_model(spec, ds.train, cfg, args.seed)
    out = args.out or _default_out() / "models" / spec.key
    chash = config_hash({"dataset": ds.meta, "model": spec.card(), "train": cfg.__dict__, "seed": args.seed})
    save_model(out, spec, params, cfg, args.seed, chash,
               step=cfg.epochs * steps_per_epoch(len(ds.train), cfg.batch))
    with open(out / "loss_curve.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        w.writerows([e + 1, repr(v)] for e, v in enumerate(curve))
    print(f"trained {spec.label} for {cfg.epochs} epochs; final loss {curve[-1]:.4g} -> {out}")


def cmd_sample(args):
    from .models import load_model, sample

    spec, params, _ = load_model(args.model_dir)
    x = sample(spec, params, args.n, args.seed)
    out = args.out or args.model_dir / "samples.csv"
    header = ",".join(f"x{i}" for i in range(x.shape[1]))
    np.savetxt(out, x, delimiter=",", header=header, comments="", fmt="%.17g")
    print(f"wrote {args.n} samples -> {out}")


def cmd_evaluate(args):
    from .metrics import evaluate_samples

    gen, ref = _read_matrix(args.generated), _read_matrix(args.reference)
    scores = evaluate_samples(gen, ref, args.levels, args.bandwidth)
    doc = {"mmd_rbf": scores["mmd_rbf"], "tce": {f"{q:g}": v for q, v in scores["tce"].items()}}
    text = json.dumps(doc, indent=2)
    if args.out:
        args.out.write_text(text)
    print(text)


def _bench_config(args):
    from .bench import load_config

    cfg = load_config(args.config)
    if args.out:
        cfg["output_dir"] = str(args.out)
    elif ENV_OUTPUT in os.environ:
        cfg["output_dir"] = os.environ[ENV_OUTPUT]
    return cfg


def cmd_pilot(args):
    from .bench import PilotGrid, build_datasets, run_pilot

    cfg = _bench_config(args)
    grid = cfg["pilot"] or PilotGrid()
    datasets = build_datasets(cfg["datasets"], grid.n, int(cfg["base_seed"]))
    selection = run_pilot(datasets, grid, int(cfg["base_seed"]), cfg["models"])
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "pilot.json").write_text(json.dumps(selection, indent=2, sort_keys=True))
    for key, choice in selection.items():
        print(f"{key}: lr={choice['lr']} sigma_max={choice['sigma_max']} score={choice['score']}")


def cmd_bench(args):
    from .bench import run_bench

    cfg = _bench_config(args)
    res = run_bench(cfg)
    print(f"{len(res['results'])} result rows -> {res['out_dir'] / 'results.csv'}")


def cmd_bounds(args):
    from .bounds import (TABLE_COLUMNS, DdpmBoundParams, ddpm_exponents, ddpm_optimal_t0,
                         ddpm_optimized_rate, default_tradeoff_grids, dlpm_optimal_m, tradeoff_table)

    a, b, c = ddpm_exponents(args.beta, args.gamma, args.d)
    if args.table:
        ddpm, dlpm = default_tradeoff_grids(args.beta, args.gamma, args.beta_alpha, args.d, args.c)
        rows = tradeoff_table(ddpm, dlpm)
        fh = open(args.out, "w", newline="") if args.out else sys.stdout
        try:
            fh.write("# bound values with all hidden constants set to 1 (orders of magnitude only)\n")
            w = csv.DictWriter(fh, fieldnames=TABLE_COLUMNS, lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
        finally:
            if args.out:
                fh.close()
        return
    DdpmBoundParams(args.beta, args.gamma, args.d, max(args.n, 2), 1.0, 0.5)  # domain check
    print(f"a = {a:.10g}{_fraction(a)}")
    print(f"b = {b:.10g}{_fraction(b)}")
    print(f"c = {c:.10g}{_fraction(c)}")
    print(f"optimal t0 ~ n^(-c/(a+b)) = {ddpm_optimal_t0(args.n, a, b, c):.6g} at n = {args.n:g}")
    rate = ddpm_optimized_rate(args.beta, args.gamma, args.d)
    print(f"DDPM optimized rate exponent = {rate:.10g}{_fraction(rate)}")
    print(f"DLPM optimal m ~ n^(d/(2 beta + d)) = {dlpm_optimal_m(max(args.n, 2), args.beta_alpha, args.d)}")


def cmd_report(args):
    from .report import render_report

    out = render_report(args.results, args.out)
    print(f"report -> {out / 'report.md'}")


def cmd_selfcheck(args):
    from .checks import run_battery

    if not run_battery():
        raise RuntimeError("selfcheck failed")


class _Usage(Exception):
    pass


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "sample": cmd_sample,
    "evaluate": cmd_evaluate,
    "pilot": cmd_pilot,
    "bench": cmd_bench,
    "bounds": cmd_bounds,
    "report": cmd_report,
    "selfcheck": cmd_selfcheck,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        COMMANDS[args.command](args)
    except _Usage as exc:
        parser.print_usage(sys.stderr)
        print(f"tailbench: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # one-line diagnostic for any runtime failure
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"tailbench {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
