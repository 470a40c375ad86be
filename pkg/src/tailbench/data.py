"""Benchmark datasets: synthetic heavy-tailed targets and tabular CSV ingestion."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .stable import IsotropicStableLaw, make_rng, sample_isotropic_stable

__all__ = [
    "Dataset",
    "Standardizer",
    "MixtureConfig",
    "split_sizes",
    "gen_alpha_stable_iso",
    "gen_alpha_stable_mix",
    "load_tabular",
    "apply_standardizer",
    "invert_standardizer",
    "save_dataset",
    "load_dataset",
    "config_hash",
]

MIN_SAMPLES = 10


def config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).copy()
        std = np.asarray(self.std, dtype=float).copy()
        if mean.shape != std.shape or mean.ndim != 1:
            raise ValueError("mean and std must be 1-D arrays of equal length")
        if np.any(std <= 0):
            raise ValueError("standardizer std components must be strictly positive")
        mean.setflags(write=False)
        std.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @classmethod
    def fit(cls, x):
        x = np.asarray(x, dtype=float)
        std = x.std(axis=0)
        bad = np.flatnonzero(std == 0)
        if bad.size:
            raise ValueError(f"zero standard deviation in column(s) {bad.tolist()}")
        return cls(x.mean(axis=0), std)


def _frozen(x):
    x = np.array(x, dtype=float)
    x.setflags(write=False)
    return x


@dataclass(frozen=True)
class Dataset:
    name: str
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    source: str = "synthetic"
    standardizer: Standardizer | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for split in ("train", "val", "test"):
            object.__setattr__(self, split, _frozen(getattr(self, split)))
        dims = {self.train.shape[1], self.val.shape[1], self.test.shape[1]}
        if len(dims) != 1:
            raise ValueError(f"splits disagree on column count: {sorted(dims)}")
        if self.source not in ("synthetic", "tabular"):
            raise ValueError(f"unknown source {self.source!r}")

    @property
    def dim(self) -> int:
        return self.train.shape[1]

    @property
    def n(self) -> int:
        return len(self.train) + len(self.val) + len(self.test)


@dataclass(frozen=True)
class MixtureConfig:
    modes: int = 16
    latent_rank: int = 6
    imbalance_tau: float = 1.2
    mean_scale: float = 7.5
    base_scale: float = 0.55
    anisotropy: float = 1.0
    alpha: float = 1.7

    def __post_init__(self):
        if self.modes < 1 or self.latent_rank < 1:
            raise ValueError("modes and latent_rank must be at least 1")
        for name in ("imbalance_tau", "mean_scale", "base_scale"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.anisotropy >= 1.0:
            raise ValueError("anisotropy must be >= 1")

    def mode_probs(self) -> np.ndarray:
        w = np.arange(1, self.modes + 1, dtype=float) ** (-self.imbalance_tau)
        return w / w.sum()


def split_sizes(n: int) -> tuple[int, int, int]:
    """80/10/10 split with rounding toward train, then val."""
    n_train = math.ceil(0.8 * n)
    n_val = min(math.ceil(0.1 * n), n - n_train)
    return n_train, n_val, n - n_train - n_val


def _split(x, rng):
    idx = rng.permutation(len(x))
    n_train, n_val, _ = split_sizes(len(x))
    return x[idx[:n_train]], x[idx[n_train:n_train + n_val]], x[idx[n_train + n_val:]]


def gen_alpha_stable_iso(n: int, dim: int = 30, alpha: float = 1.7, seed: int = 0) -> Dataset:
    """Centered isotropic alpha-stable samples (unit scale), split 80/10/10."""
    if n < MIN_SAMPLES:
        raise ValueError(f"n must be at least {MIN_SAMPLES}, got {n}")
    law = IsotropicStableLaw(alpha, dim)
    x = sample_isotropic_stable(law, n, make_rng(seed, 0))
    train, val, test = _split(x, make_rng(seed, 1))
    meta = {"kind": "iso", "n": n, "dim": dim, "alpha": alpha, "seed": seed}
    return Dataset("alpha_stable_iso", train, val, test, "synthetic", None, meta)


def mixture_geometry(dim: int, cfg: MixtureConfig, seed: int):
    """Latent basis, mode centers and per-axis noise multipliers for a seed."""
    if cfg.latent_rank > dim:
        raise ValueError(f"latent_rank={cfg.latent_rank} exceeds dim={dim}")
    rng = make_rng(seed, 10)
    basis, _ = np.linalg.qr(rng.standard_normal((dim, cfg.latent_rank)))
    centers = rng.standard_normal((cfg.modes, cfg.latent_rank))
    log_a = math.log(cfg.anisotropy)
    multipliers = np.exp(rng.uniform(-log_a, log_a, size=dim)) if log_a > 0 else np.ones(dim)
    means = cfg.mean_scale * centers @ basis.T
    return basis, means, multipliers


def gen_alpha_stable_mix(n: int, dim: int = 30, cfg: MixtureConfig | None = None, seed: int = 0) -> Dataset:
    """Imbalanced mixture of shifted isotropic alpha-stable clouds.

    Mode ``k`` (1-based) is drawn with probability proportional to
    ``k^-tau``; its mean lives in a random rank-``latent_rank`` subspace.
    """
    cfg = cfg or MixtureConfig()
    if n < MIN_SAMPLES:
        raise ValueError(f"n must be at least {MIN_SAMPLES}, got {n}")
    _, means, multipliers = mixture_geometry(dim, cfg, seed)
    rng = make_rng(seed, 0)
    labels = rng.choice(cfg.modes, size=n, p=cfg.mode_probs())
    noise = sample_isotropic_stable(IsotropicStableLaw(cfg.alpha, dim), n, rng)
    x = means[labels] + cfg.base_scale * multipliers * noise
    train, val, test = _split(x, make_rng(seed, 1))
    meta = {"kind": "mix", "n": n, "dim": dim, "seed": seed, "mixture": cfg.__dict__.copy()}
    return Dataset("alpha_stable_mix", train, val, test, "synthetic", None, meta)


def _numeric_columns(frame: pd.DataFrame) -> list[str]:
    keep = []
    for col in frame.columns:
        values = pd.to_numeric(frame[col], errors="coerce")
        if values.notna().all():
            keep.append(col)
    return keep


def load_tabular(path, standardize: bool = False, n: int | None = None, seed: int = 0, name: str | None = None) -> Dataset:
    """Load a headered CSV, keep all-numeric columns, shuffle, subsample and split.

    When ``standardize`` is set, mean and std are fitted on the train split
    and applied to all three splits.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such CSV file: {path}")
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    cols = _numeric_columns(frame)
    if not cols:
        raise ValueError(f"{path} has no numeric columns")
    x = frame[cols].apply(pd.to_numeric).to_numpy(dtype=float)
    meta = {"kind": "tabular", "path": str(path), "columns": cols, "seed": seed, "rows_available": len(x)}
    if n is None:
        n = len(x)
    if n > len(x):
        meta["warning"] = f"requested n={n} exceeds {len(x)} rows; clamped"
        n = len(x)
    rng = make_rng(seed, 2)
    x = x[rng.permutation(len(x))[:n]]
    meta["n"] = n
    train, val, test = _split(x, make_rng(seed, 1))
    std = None
    if standardize:
        std = Standardizer.fit(train)
        train, val, test = (apply_standardizer(s, std) for s in (train, val, test))
    return Dataset(name or path.stem, train, val, test, "tabular", std, meta)


def apply_standardizer(x, std: Standardizer) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != std.mean.shape[0]:
        raise ValueError(f"dimension mismatch: data {x.shape[-1]} vs standardizer {std.mean.shape[0]}")
    return (x - std.mean) / std.std


def invert_standardizer(x, std: Standardizer) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != std.mean.shape[0]:
        raise ValueError(f"dimension mismatch: data {x.shape[-1]} vs standardizer {std.mean.shape[0]}")
    return x * std.std + std.mean


def _sidecar(ds: Dataset) -> dict:
    doc = {
        "name": ds.name,
        "dim": ds.dim,
        "source": ds.source,
        "seed": ds.meta.get("seed"),
        "sizes": [len(ds.train), len(ds.val), len(ds.test)],
        "standardizer": None,
        "meta": ds.meta,
    }
    if ds.standardizer is not None:
        doc["standardizer"] = {"mean": ds.standardizer.mean.tolist(), "std": ds.standardizer.std.tolist()}
    doc["config_hash"] = config_hash({k: v for k, v in doc.items() if k != "sizes"})
    return doc


def save_dataset(ds: Dataset, out_dir) -> Path:
    """Write ``train.csv``, ``val.csv``, ``test.csv`` and ``dataset.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    header = ",".join(f"x{i}" for i in range(ds.dim))
    for split in ("train", "val", "test"):
        np.savetxt(out / f"{split}.csv", getattr(ds, split), delimiter=",", header=header, comments="", fmt="%.17g")
    (out / "dataset.json").write_text(json.dumps(_sidecar(ds), indent=2, sort_keys=True))
    return out


def load_dataset(cache_dir) -> Dataset:
    cache = Path(cache_dir)
    doc = json.loads((cache / "dataset.json").read_text())
    splits = {}
    for split in ("train", "val", "test"):
        arr = np.loadtxt(cache / f"{split}.csv", delimiter=",", skiprows=1, ndmin=2)
        splits[split] = arr.reshape(-1, doc["dim"])
    std = None
    if doc.get("standardizer"):
        std = Standardizer(doc["standardizer"]["mean"], doc["standardizer"]["std"])
    return Dataset(doc["name"], splits["train"], splits["val"], splits["test"], doc["source"], std, doc.get("meta", {}))
