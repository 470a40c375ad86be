"""Markdown result tables and plot-ready CSV from a bench output directory."""

from __future__ import annotations

import csv
import math
import shutil
from pathlib import Path

from .bench import BenchResult, RESULT_COLUMNS, aggregate, loss_curves

__all__ = ["format_sci", "format_cell", "render_report", "read_results_lenient"]

_SUPERSCRIPT = str.maketrans("-0123456789", "⁻⁰¹²³⁴⁵⁶⁷⁸⁹")

CAVEATS = (
    "Values are mean ± sample std across trials; bold marks the smallest mean per column.",
    "Pilot selection used each family's own training objective on the validation split; "
    "those objectives differ across families.",
    "Loss curves under curves/ are model-specific and must not be compared across methods in absolute value.",
)


def format_sci(value: float, digits: int = 3) -> str:
    """``1.11e-3 -> '1.11·10⁻³'``; exponent 0 prints the bare mantissa."""
    if value == 0:
        return "0"
    if not math.isfinite(value):
        return str(value)
    exp = math.floor(math.log10(abs(value)))
    mant = round(value / 10**exp, digits - 1)
    if abs(mant) >= 10:
        mant /= 10
        exp += 1
    text = f"{mant:.{digits - 1}f}"
    if exp == 0:
        return text
    return f"{text}·10{str(exp).translate(_SUPERSCRIPT)}"


def format_cell(mean: float, std: float, bold: bool = False) -> str:
    core = format_sci(mean)
    if bold:
        core = f"**{core}**"
    return f"{core} ± {format_sci(std)}"


def read_results_lenient(path):
    """Return ``(rows, problems)``; malformed lines are reported, not fatal."""
    rows, problems = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != RESULT_COLUMNS:
            raise ValueError(f"{path}: unexpected header {header}")
        for lineno, rec in enumerate(reader, start=2):
            try:
                if len(rec) != len(RESULT_COLUMNS):
                    raise ValueError(f"expected {len(RESULT_COLUMNS)} fields, got {len(rec)}")
                ds, model, chash, seed, metric, level, value = rec
                rows.append(BenchResult(ds, model, chash, int(seed), metric,
                                        float(level) if level else None, float(value)))
            except ValueError as exc:
                problems.append(f"line {lineno}: {exc}")
    return rows, problems


def _column_name(metric, level):
    if metric == "mmd_rbf":
        return "MMD-RBF"
    if metric == "tce":
        return f"TCE({round(level * 100):d}%)"
    return metric if level is None else f"{metric}({level:g})"


def _tables(agg):
    by_ds = {}
    for row in agg:
        by_ds.setdefault(row["dataset"], []).append(row)
    out = []
    for ds, rows in by_ds.items():
        cols, models = [], []
        for r in rows:
            col = (r["metric"], r["level"])
            if col not in cols:
                cols.append(col)
            if r["model"] not in models:
                models.append(r["model"])
        cols.sort(key=lambda c: (c[0] != "mmd_rbf", c[0], c[1] or 0.0))
        cell = {(r["model"], (r["metric"], r["level"])): r for r in rows}
        lines = [f"### {ds}", "",
                 "| Model | " + " | ".join(_column_name(*c) for c in cols) + " |",
                 "|---|" + "---|" * len(cols)]
        for m in models:
            vals = []
            for c in cols:
                r = cell.get((m, c))
                vals.append("n/a" if r is None else format_cell(r["mean"], r["std"], r["bold"]))
            lines.append(f"| {m} | " + " | ".join(vals) + " |")
        out.append("\n".join(lines))
    return out


def _read_curves(curve_dir):
    curves = {}
    for path in sorted(Path(curve_dir).glob("*.csv")):
        per_seed = {}
        with open(path, newline="") as fh:
            for rec in csv.DictReader(fh):
                per_seed.setdefault(int(rec["seed"]), []).append(float(rec["loss"]))
        if per_seed:
            curves[path.stem] = per_seed
    return curves


def render_report(results_dir, out_dir=None) -> Path:
    """Write ``report.md``, ``summary.csv`` and curve CSVs into ``<results>/report``.

    Only reads the bench outputs; rerunning produces the same files.
    """
    results_dir = Path(results_dir)
    src = results_dir / "results.csv"
    if not src.is_file():
        raise FileNotFoundError(f"no results.csv in {results_dir}")
    out = Path(out_dir) if out_dir else results_dir / "report"
    out.mkdir(parents=True, exist_ok=True)
    rows, problems = read_results_lenient(src)
    agg = aggregate(rows) if rows else []

    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["dataset", "model", "metric", "level", "mean", "std", "trials", "bold"])
        for r in agg:
            w.writerow([r["dataset"], r["model"], r["metric"], "" if r["level"] is None else r["level"],
                        repr(r["mean"]), repr(r["std"]), r["trials"], int(r["bold"])])

    curve_src = results_dir / "curves"
    curve_out = out / "curves"
    curve_out.mkdir(exist_ok=True)
    if curve_src.is_dir():
        for name, per_seed in _read_curves(curve_src).items():
            shutil.copyfile(curve_src / f"{name}.csv", curve_out / f"{name}.csv")
            try:
                summary = loss_curves({name: per_seed})[name]
            except ValueError as exc:
                problems.append(f"curves/{name}.csv: {exc}")
                continue
            with open(curve_out / f"{name}_summary.csv", "w", newline="") as fh:
                fh.write("# model-specific training loss; not comparable across model families\n")
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["epoch", "mean", "std"])
                for e, m, s in zip(summary["epoch"], summary["mean"], summary["std"]):
                    w.writerow([e, repr(m), repr(s)])

    parts = ["# Benchmark report", ""]
    parts += [f"- {c}" for c in CAVEATS]
    parts.append("")
    parts += [t + "\n" for t in _tables(agg)]
    if problems:
        parts += ["## Skipped rows", ""] + [f"- {p}" for p in problems] + [""]
    (out / "report.md").write_text("\n".join(parts))
    return out
