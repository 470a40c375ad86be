"""Two-stage benchmark: pilot grid selection, then multi-trial main runs.

Config file (JSON)::

    {
      "base_seed": 0,
      "output_dir": "runs/demo",
      "workers": 1,
      "datasets": [{"kind": "iso", "dim": 30, "alpha": 1.7},
                   {"kind": "mix"},
                   {"kind": "tabular", "name": "kddcup", "path": "kdd.csv", "standardize": true}],
      "models": ["gf_linear", "ddpm", "dlpm"],
      "pilot": {"preset": "pilot-mini"},          # optional; omit to skip
      "main": {"preset": "main-mini", "epochs": 8},
      "selected": {"alpha_stable_iso/ddpm": {"lr": 5e-4, "sigma_max": 2}}   # optional
    }

Outputs in ``output_dir``: ``results.csv`` (one row per trial and metric),
``curves/<dataset>_<model>.csv`` (per-epoch training loss per trial),
``pilot.json``, ``timings.csv``, ``failures.csv`` and ``manifest.json``.
``results.csv`` carries no wall-clock data so identical configs give
identical bytes.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import platform
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .data import MixtureConfig, config_hash, gen_alpha_stable_iso, gen_alpha_stable_mix, load_tabular
from .metrics import DEFAULT_LEVELS, evaluate_samples
from .models import ModelSpec, TrainConfig, sample, steps_per_epoch, train_model, validation_objective
from .nn import NonFiniteError
from .stable import make_rng

log = logging.getLogger(__name__)

__all__ = [
    "PilotGrid",
    "MainConfig",
    "BenchResult",
    "BenchAbort",
    "PRESETS",
    "load_config",
    "build_datasets",
    "expand_models",
    "run_pilot",
    "run_main",
    "run_trial",
    "aggregate",
    "loss_curves",
    "run_bench",
    "RESULT_COLUMNS",
]

RESULT_COLUMNS = ("dataset", "model", "config_hash", "seed", "metric", "level", "value")


class BenchAbort(RuntimeError):
    pass


@dataclass(frozen=True)
class PilotGrid:
    learning_rates: tuple = (2e-4, 5e-4)
    sigma_max_values: tuple = (2.0, 5.0)
    steps: int = 256
    trials: int = 3
    epochs: int = 16
    depth: int = 4
    width: int = 256
    t_embed_dim: int = 128
    batch: int = 1024
    n: int = 4096
    dlpm_alphas: tuple = (1.7, 1.9)

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("pilot trials must be at least 1")
        if not self.learning_rates:
            raise ValueError("pilot grid needs at least one learning rate")

    def points(self, family: str) -> list:
        """(lr, sigma_max) grid; DLPM does not tune sigma_max."""
        sigmas = (None,) if family == "dlpm" else tuple(self.sigma_max_values)
        return [(lr, s) for lr in self.learning_rates for s in sigmas]


@dataclass(frozen=True)
class MainConfig:
    epochs: int = 512
    trials: int = 20
    batch: int = 1024
    steps: int = 512
    depth: int = 5
    width: int = 256
    t_embed_dim: int = 128
    samples: int = 50_000
    dlpm_alphas: tuple = (1.7, 1.9)
    lr: float = 5e-4
    sigma_max: float = 2.0
    levels: tuple = DEFAULT_LEVELS

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("main trials must be at least 1")


PRESETS = {
    "pilot": PilotGrid(),
    "pilot-mini": PilotGrid(n=1024, epochs=4, trials=2, batch=128),
    "main": MainConfig(),
    "main-mini": MainConfig(samples=4096, epochs=32, trials=3, steps=128, batch=64),
}


@dataclass(frozen=True)
class BenchResult:
    dataset: str
    model: str
    config_hash: str
    seed: int
    metric: str
    level: float | None
    value: float
    wall_seconds: float = 0.0
    loss_curve: str = ""

    def row(self) -> list:
        level = "" if self.level is None else repr(float(self.level))
        return [self.dataset, self.model, self.config_hash, str(self.seed), self.metric, level, repr(float(self.value))]


def _coerce(cls, preset, overrides):
    base = PRESETS[preset] if preset else cls()
    if not isinstance(base, cls):
        raise ValueError(f"preset {preset!r} is not a {cls.__name__} preset")
    names = {f.name for f in fields(cls)}
    unknown = set(overrides) - names
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    fixed = {k: tuple(v) if isinstance(v, list) else v for k, v in overrides.items()}
    return replace(base, **fixed)


def load_config(path_or_dict) -> dict:
    """Read and validate a bench config; returns a normalized dict."""
    if isinstance(path_or_dict, dict):
        raw = dict(path_or_dict)
    else:
        raw = json.loads(Path(path_or_dict).read_text())
    for key in ("datasets", "models", "main"):
        if key not in raw:
            raise ValueError(f"config is missing the {key!r} section")
    cfg = dict(raw)
    main = dict(raw["main"])
    cfg["main"] = _coerce(MainConfig, main.pop("preset", None), main)
    if raw.get("pilot"):
        pilot = dict(raw["pilot"])
        cfg["pilot"] = _coerce(PilotGrid, pilot.pop("preset", None), pilot)
    else:
        cfg["pilot"] = None
    cfg.setdefault("base_seed", 0)
    cfg.setdefault("output_dir", "runs")
    cfg.setdefault("workers", 1)
    cfg.setdefault("selected", {})
    cfg["hash"] = config_hash(raw)
    return cfg


DATASET_NAMES = {"iso": "alpha_stable_iso", "mix": "alpha_stable_mix"}


def build_datasets(specs, n: int, base_seed: int = 0) -> list:
    """Materialize dataset specs at sample budget ``n``."""
    out = []
    for spec in specs:
        spec = dict(spec)
        kind = spec.get("kind")
        seed = int(spec.get("seed", base_seed))
        if kind == "iso":
            ds = gen_alpha_stable_iso(n, spec.get("dim", 30), spec.get("alpha", 1.7), seed)
        elif kind == "mix":
            mix = MixtureConfig(**spec.get("mixture", {}))
            ds = gen_alpha_stable_mix(n, spec.get("dim", 30), mix, seed)
        elif kind == "tabular":
            ds = load_tabular(spec["path"], spec.get("standardize", False), n, seed, spec.get("name"))
        else:
            raise ValueError(f"unknown dataset kind {kind!r}")
        if spec.get("name") and ds.name != spec["name"]:
            ds = replace(ds, name=spec["name"])
        out.append(ds)
    names = [d.name for d in out]
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate dataset names: {names}")
    return out


def expand_models(families, steps: int, alphas) -> list:
    """One ModelSpec per family, one per alpha for DLPM."""
    specs = []
    for fam in families:
        fam = fam.lower().replace("-", "_")
        if fam == "dlpm":
            specs += [ModelSpec("dlpm", steps=steps, alpha=float(a)) for a in alphas]
        else:
            specs.append(ModelSpec(fam, steps=steps))
    return specs


def _train_cfg(lr, epochs, batch, depth, width, t_embed_dim):
    return TrainConfig(epochs=epochs, batch=batch, lr=lr, width=width, depth=depth, t_embed_dim=t_embed_dim)


def _pilot_trial(spec: ModelSpec, dataset, cfg: TrainConfig, seed: int) -> float:
    params, _ = train_model(spec, dataset.train, cfg, seed)
    return validation_objective(spec, params, dataset.val, seed)


def run_pilot(datasets, grid: PilotGrid, seed: int, families=("gf_linear", "ddpm", "dlpm"), train_fn=None) -> dict:
    """Select one (lr, sigma_max) per (dataset, model) by mean validation objective.

    Any trial with a non-finite objective (or a NonFiniteError) disqualifies
    its grid point. Ties go to the smaller learning rate, then smaller
    sigma_max. ``train_fn(spec, dataset, train_cfg, seed) -> float`` can
    replace the real train-and-validate step.
    """
    train_fn = train_fn or _pilot_trial
    selection = {}
    for ds in datasets:
        for base in expand_models(families, grid.steps, grid.dlpm_alphas):
            table = []
            for lr, sigma in grid.points(base.family):
                spec = base if sigma is None else replace(base, sigma_max=float(sigma))
                cfg = _train_cfg(lr, grid.epochs, grid.batch, grid.depth, grid.width, grid.t_embed_dim)
                scores, error = [], None
                for i in range(grid.trials):
                    try:
                        v = float(train_fn(spec, ds, cfg, seed + i))
                    except (NonFiniteError, FloatingPointError) as exc:
                        v, error = math.nan, str(exc)
                    scores.append(v)
                ok = all(math.isfinite(v) for v in scores)
                table.append({
                    "lr": lr, "sigma_max": sigma, "scores": scores,
                    "mean": float(np.mean(scores)) if ok else None,
                    "disqualified": not ok, "error": error,
                })
            valid = [r for r in table if not r["disqualified"]]
            key = f"{ds.name}/{base.key}"
            if not valid:
                selection[key] = {"lr": None, "sigma_max": None, "score": None, "table": table,
                                  "failed": "every grid point disqualified"}
                continue
            best = min(valid, key=lambda r: (r["mean"], r["lr"], r["sigma_max"] or 0.0))
            selection[key] = {"lr": best["lr"], "sigma_max": best["sigma_max"], "score": best["mean"],
                              "table": table}
    return selection


def run_trial(dataset, spec: ModelSpec, cfg: TrainConfig, seed: int, levels=DEFAULT_LEVELS) -> dict:
    """Train, sample ``|test|`` points, score against the test split."""
    start = time.perf_counter()
    try:
        params, curve = train_model(spec, dataset.train, cfg, seed)
        gen = sample(spec, params, len(dataset.test), make_rng(seed, 102))
        scores = evaluate_samples(gen, dataset.test, levels)
    except (NonFiniteError, FloatingPointError, ValueError) as exc:
        return {"ok": False, "error": f"{type(exc).__name__}: {exc}", "seed": seed,
                "wall_seconds": time.perf_counter() - start}
    return {"ok": True, "seed": seed, "curve": curve, "scores": scores,
            "wall_seconds": time.perf_counter() - start}


def _job(args):
    return run_trial(*args)


def _main_plan(datasets, specs, selected, cfg: MainConfig, seed: int):
    plan = []
    for ds in datasets:
        for spec in specs:
            chosen = selected.get(f"{ds.name}/{spec.key}", {})
            if chosen.get("failed"):
                plan.append((ds, spec, None, chosen["failed"]))
                continue
            lr = chosen.get("lr") or cfg.lr
            if spec.family != "dlpm":
                spec = replace(spec, sigma_max=float(chosen.get("sigma_max") or cfg.sigma_max))
            tc = _train_cfg(lr, cfg.epochs, cfg.batch, cfg.depth, cfg.width, cfg.t_embed_dim)
            chash = config_hash({"dataset": ds.meta, "name": ds.name, "model": spec.card(), "train": asdict(tc)})
            plan.append((ds, spec, tc, chash))
    return plan


def run_main(datasets, selected, cfg: MainConfig, seed: int, families=("gf_linear", "ddpm", "dlpm"),
             out_dir=None, workers: int = 1):
    """Run every (dataset, model, trial); return ``(results, curves, failures, timings)``.

    Trial ``i`` uses seed ``seed + i``. A cell where more than half the
    trials fail raises :class:`BenchAbort` after the outputs are written.
    """
    specs = expand_models(families, cfg.steps, cfg.dlpm_alphas)
    plan = _main_plan(datasets, specs, selected, cfg, seed)
    jobs, owners = [], []
    failures, results, timings = [], [], []
    curves = {}
    for ds, spec, tc, chash in plan:
        if tc is None:
            for i in range(cfg.trials):
                failures.append({"dataset": ds.name, "model": spec.label, "seed": seed + i, "error": chash})
            continue
        for i in range(cfg.trials):
            jobs.append((ds, spec, tc, seed + i, tuple(cfg.levels)))
            owners.append((ds.name, spec, chash))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_job, jobs))
    else:
        outcomes = [_job(j) for j in jobs]

    for (ds_name, spec, chash), out in zip(owners, outcomes):
        key = (ds_name, spec.label)
        timings.append({"dataset": ds_name, "model": spec.label, "seed": out["seed"],
                        "wall_seconds": out["wall_seconds"]})
        if not out["ok"]:
            failures.append({"dataset": ds_name, "model": spec.label, "seed": out["seed"], "error": out["error"]})
            continue
        curve_ref = f"curves/{ds_name}_{spec.key}.csv"
        curves.setdefault(key, {})[out["seed"]] = out["curve"]
        common = dict(dataset=ds_name, model=spec.label, config_hash=chash, seed=out["seed"],
                      wall_seconds=out["wall_seconds"], loss_curve=curve_ref)
        results.append(BenchResult(metric="mmd_rbf", level=None, value=out["scores"]["mmd_rbf"], **common))
        for q, v in out["scores"]["tce"].items():
            results.append(BenchResult(metric="tce", level=q, value=v, **common))

    if out_dir is not None:
        write_outputs(out_dir, results, curves, failures, timings, specs)

    counts = {}
    for f in failures:
        counts[(f["dataset"], f["model"])] = counts.get((f["dataset"], f["model"]), 0) + 1
    bad = {k: v for k, v in counts.items() if v > cfg.trials / 2}
    if bad:
        raise BenchAbort(f"more than half of the trials failed for {sorted(bad)}")
    return results, curves, failures, timings


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def write_outputs(out_dir, results, curves, failures, timings, specs=()):
    out = Path(out_dir)
    (out / "curves").mkdir(parents=True, exist_ok=True)
    (out / "results.csv").write_text(_csv_text(RESULT_COLUMNS, [r.row() for r in results]))
    keys = {s.label: s.key for s in specs}
    for (ds_name, label), per_seed in curves.items():
        rows = []
        for s, curve in sorted(per_seed.items()):
            rows += [[s, e + 1, repr(v)] for e, v in enumerate(curve)]
        name = f"{ds_name}_{keys.get(label, label)}.csv"
        (out / "curves" / name).write_text(_csv_text(("seed", "epoch", "loss"), rows))
    (out / "failures.csv").write_text(_csv_text(("dataset", "model", "seed", "error"),
                                                [[f["dataset"], f["model"], f["seed"], f["error"]] for f in failures]))
    (out / "timings.csv").write_text(_csv_text(("dataset", "model", "seed", "wall_seconds"),
                                               [[t["dataset"], t["model"], t["seed"], f"{t['wall_seconds']:.3f}"]
                                                for t in timings]))


def read_results(path) -> list:
    """Parse ``results.csv`` into BenchResult rows (no timing information)."""
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append(BenchResult(rec["dataset"], rec["model"], rec["config_hash"], int(rec["seed"]),
                                    rec["metric"], float(rec["level"]) if rec["level"] else None,
                                    float(rec["value"])))
    return rows


def _std(values) -> float:
    return statistics.stdev(values) if len(values) > 1 else 0.0


def aggregate(results) -> list:
    """Mean and sample std (n - 1) per (dataset, model, metric, level).

    ``bold`` flags the smallest mean among models for each
    (dataset, metric, level) column.
    """
    cells = {}
    order = []
    for r in results:
        key = (r.dataset, r.model, r.metric, r.level)
        if key not in cells:
            cells[key] = []
            order.append(key)
        cells[key].append(r.value)
    rows = []
    for key in order:
        values = cells[key]
        if not values:
            raise ValueError(f"empty cell {key}")
        rows.append({"dataset": key[0], "model": key[1], "metric": key[2], "level": key[3],
                     "mean": statistics.fmean(values), "std": _std(values), "trials": len(values),
                     "bold": False})
    best = {}
    for row in rows:
        col = (row["dataset"], row["metric"], row["level"])
        if col not in best or row["mean"] < best[col]:
            best[col] = row["mean"]
    for row in rows:
        row["bold"] = row["mean"] == best[(row["dataset"], row["metric"], row["level"])]
    return rows


def loss_curves(curves) -> dict:
    """Per-epoch mean and std across trials for each (dataset, model).

    ``curves`` maps ``(dataset, model) -> {seed: [loss per epoch]}``.
    Losses are model-specific and not comparable across families.
    """
    out = {}
    for key, per_seed in curves.items():
        series = list(per_seed.values())
        if not series:
            raise ValueError(f"no curves recorded for {key}")
        lengths = {len(s) for s in series}
        if len(lengths) != 1:
            raise ValueError(f"epochs misaligned across trials for {key}: {sorted(lengths)}")
        arr = np.asarray(series, dtype=float)
        mean = arr.mean(axis=0)
        std = arr.std(axis=0, ddof=1) if len(arr) > 1 else np.zeros(arr.shape[1])
        out[key] = {"epoch": list(range(1, arr.shape[1] + 1)), "mean": mean.tolist(), "std": std.tolist()}
    return out


def run_bench(config, out_dir=None) -> dict:
    """Full pipeline: optional pilot, then main; writes everything under ``output_dir``."""
    cfg = config if isinstance(config, dict) and "hash" in config else load_config(config)
    out = Path(out_dir or cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    families = cfg["models"]
    seed = int(cfg["base_seed"])
    selected = dict(cfg["selected"])
    pilot_doc = None
    if cfg["pilot"] is not None:
        grid = cfg["pilot"]
        log.info("pilot: %d dataset(s), %d samples each", len(cfg["datasets"]), grid.n)
        pilot_sets = build_datasets(cfg["datasets"], grid.n, seed)
        pilot_doc = run_pilot(pilot_sets, grid, seed, families)
        for key, choice in pilot_doc.items():
            selected.setdefault(key, choice)
        (out / "pilot.json").write_text(json.dumps(pilot_doc, indent=2, sort_keys=True))
    main = cfg["main"]
    datasets = build_datasets(cfg["datasets"], main.samples, seed)
    log.info("main: %d trial(s) per cell", main.trials)
    error = None
    try:
        results, curves, failures, _ = run_main(datasets, selected, main, seed, families, out, int(cfg["workers"]))
    except BenchAbort as exc:
        error = str(exc)
        results, failures = [], []
    manifest = {
        "config_hash": cfg["hash"],
        "base_seed": seed,
        "trial_seeds": [seed + i for i in range(main.trials)],
        "main": asdict(main),
        "pilot": asdict(cfg["pilot"]) if cfg["pilot"] else None,
        "selected": {k: {"lr": v.get("lr"), "sigma_max": v.get("sigma_max")} for k, v in selected.items()},
        "datasets": [{"name": d.name, "dim": d.dim, "sizes": [len(d.train), len(d.val), len(d.test)],
                      "meta": d.meta} for d in datasets],
        "steps_per_trial": {d.name: main.epochs * steps_per_epoch(len(d.train), main.batch) for d in datasets},
        "versions": {"tailbench": __version__, "numpy": np.__version__, "python": platform.python_version()},
        "failures": len(failures),
        "aborted": error,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str))
    if error:
        raise BenchAbort(error)
    return {"results": results, "selected": selected, "pilot": pilot_doc, "out_dir": out}
