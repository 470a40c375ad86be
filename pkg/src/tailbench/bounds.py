"""Sampling-error bounds for DDPM and DLPM, their optimal tuning and trade-off.

All bounds are order statements; hidden constants are exposed as
multipliers defaulting to 1, so absolute values are illustrative only.

DDPM (Gaussian noise, polynomial tails of index ``gamma``, Sobolev ``beta``)::

    TV <~ t0^a + polylog(n) n^-c t0^-b + T^-1/2
    a = beta (gamma + 1) / (d + 2 (gamma + 1) + 2 beta)
    b = d (gamma + 1) / (4 (d + gamma + 1))
    c = (gamma + 1) / (2 (d + gamma + 1))

DLPM (alpha-stable noise, Hoelder ``beta``, ``m``-parameter networks)::

    TV <~ T m^(-beta/d) + T sqrt((Comp + log(1/delta)) / n) + exp(-c T)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "DdpmBoundParams",
    "DlpmBoundParams",
    "BoundTerms",
    "ddpm_exponents",
    "ddpm_optimal_t0",
    "ddpm_optimal_t0_exact",
    "ddpm_optimized_rate",
    "ddpm_bound",
    "dlpm_bound",
    "dlpm_optimal_m",
    "dlpm_optimal_m_real",
    "dlpm_optimal_m_exact",
    "tradeoff_table",
    "TABLE_COLUMNS",
    "geometric_grid",
    "default_tradeoff_grids",
]


def _positive(**kw):
    for name, v in kw.items():
        if not (math.isfinite(v) and v > 0):
            raise ValueError(f"{name} must be positive and finite, got {v}")


def _check_ddpm_domain(beta, gamma, d):
    _positive(d=d)
    if not 0 < beta <= 2:
        raise ValueError(f"beta must lie in (0, 2], got {beta}")
    if not gamma > 1:
        raise ValueError(f"gamma must exceed 1, got {gamma}")


@dataclass(frozen=True)
class DdpmBoundParams:
    beta: float
    gamma: float
    d: float
    n: float
    T: float
    t0: float
    const_app: float = 1.0
    const_est: float = 1.0
    const_init: float = 1.0
    polylog_power: float = 1.0

    def __post_init__(self):
        _check_ddpm_domain(self.beta, self.gamma, self.d)
        if not self.n >= 2:
            raise ValueError(f"n must be at least 2, got {self.n}")
        _positive(T=self.T, const_app=self.const_app, const_est=self.const_est, const_init=self.const_init)
        if not 0 < self.t0 < self.T:
            raise ValueError(f"t0 must lie in (0, T={self.T}), got {self.t0}")
        if self.polylog_power < 0:
            raise ValueError("polylog_power must be nonnegative")


@dataclass(frozen=True)
class DlpmBoundParams:
    beta_alpha: float
    d: float
    n: float
    T: float
    m: float
    comp: float | None = None  # defaults to m
    delta: float = 0.05
    c: float = 1.0
    const_app: float = 1.0
    const_est: float = 1.0
    const_init: float = 1.0

    def __post_init__(self):
        _positive(beta_alpha=self.beta_alpha, d=self.d, T=self.T, m=self.m, c=self.c,
                  const_app=self.const_app, const_est=self.const_est, const_init=self.const_init)
        if not self.n >= 2:
            raise ValueError(f"n must be at least 2, got {self.n}")
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if self.comp is not None and self.comp < 0:
            raise ValueError("comp must be nonnegative")

    @property
    def complexity(self) -> float:
        return self.m if self.comp is None else self.comp


@dataclass(frozen=True)
class BoundTerms:
    total: float
    approx_term: float
    est_term: float
    init_term: float

    def __iter__(self):
        return iter((self.total, self.approx_term, self.est_term, self.init_term))


def ddpm_exponents(beta, gamma, d):
    _check_ddpm_domain(beta, gamma, d)
    g1 = gamma + 1
    a = beta * g1 / (d + 2 * g1 + 2 * beta)
    b = d * g1 / (4 * (d + g1))
    c = g1 / (2 * (d + g1))
    return a, b, c


def ddpm_optimal_t0(n, a, b, c) -> float:
    """Rate-optimal early stopping ``n^(-c / (a + b))`` (constants dropped)."""
    if a + b == 0:
        raise ValueError("a + b must be nonzero")
    if n < 1:
        raise ValueError("n must be positive")
    return float(n) ** (-c / (a + b))


def _polylog(n, power):
    return math.log(n) ** power


def ddpm_optimal_t0_exact(p: DdpmBoundParams) -> float:
    """Stationary point of the training terms including constants and polylog."""
    a, b, c = ddpm_exponents(p.beta, p.gamma, p.d)
    k = p.const_est * _polylog(p.n, p.polylog_power) * p.n ** (-c)
    return (b * k / (a * p.const_app)) ** (1 / (a + b))


def ddpm_optimized_rate(beta, gamma, d) -> float:
    """Exponent ``r`` of the optimized training rate ``polylog(n) n^-r``."""
    _check_ddpm_domain(beta, gamma, d)
    g1 = gamma + 1
    return 2 * beta * g1 / (4 * beta * g1 + 6 * beta * d + 2 * d * g1 + d * d)


def ddpm_bound(p: DdpmBoundParams) -> BoundTerms:
    a, b, c = ddpm_exponents(p.beta, p.gamma, p.d)
    approx = p.const_app * p.t0**a
    est = p.const_est * _polylog(p.n, p.polylog_power) * p.n ** (-c) * p.t0 ** (-b)
    init = p.const_init * p.T ** -0.5
    return BoundTerms(approx + est + init, approx, est, init)


def dlpm_bound(p: DlpmBoundParams) -> BoundTerms:
    approx = p.const_app * p.T * p.m ** (-p.beta_alpha / p.d)
    est = p.const_est * p.T * math.sqrt((p.complexity + math.log(1 / p.delta)) / p.n)
    init = p.const_init * math.exp(-p.c * p.T)
    return BoundTerms(approx + est + init, approx, est, init)


def dlpm_optimal_m_real(n, beta_alpha, d) -> float:
    _positive(beta_alpha=beta_alpha, d=d)
    if n < 2:
        raise ValueError(f"n must be at least 2, got {n}")
    return float(n) ** (d / (2 * beta_alpha + d))


def dlpm_optimal_m(n, beta_alpha, d) -> int:
    """``ceil(n^(d / (2 beta + d)))``, ignoring float noise just above an integer."""
    m = dlpm_optimal_m_real(n, beta_alpha, d)
    nearest = round(m)
    if abs(m - nearest) <= 1e-9 * max(1.0, m):
        return max(1, int(nearest))
    return max(1, math.ceil(m))


def dlpm_optimal_m_exact(p: DlpmBoundParams) -> float:
    """Minimizer over real ``m`` of the training terms with ``Comp = m``."""
    from scipy.optimize import minimize_scalar

    def f(log_m):
        q = replace(p, m=math.exp(log_m), comp=None)
        t = dlpm_bound(q)
        return t.approx_term + t.est_term

    res = minimize_scalar(f, bounds=(0.0, math.log(p.n) * 4 + 10), method="bounded",
                          options={"xatol": 1e-10})
    return math.exp(res.x)


def geometric_grid(lo, hi, num) -> np.ndarray:
    return np.geomspace(lo, hi, int(num))


TABLE_COLUMNS = (
    "n", "T",
    "ddpm_total", "ddpm_approx", "ddpm_est", "ddpm_init", "ddpm_t0",
    "dlpm_total", "dlpm_approx", "dlpm_est", "dlpm_init", "dlpm_m",
    "smaller",
)


def tradeoff_table(ddpm_grid, dlpm_grid) -> list:
    """Pair DDPM and DLPM parameter sets on shared ``(n, T)`` cells.

    ``ddpm_grid`` and ``dlpm_grid`` are iterables of parameter objects;
    cells are matched on ``(n, T)``. Each row carries both decompositions
    and ``smaller``, the family with the smaller total (``"tie"`` if equal).
    """
    ddpm_grid, dlpm_grid = list(ddpm_grid), list(dlpm_grid)
    if not ddpm_grid or not dlpm_grid:
        raise ValueError("both grids must be nonempty")
    dlpm_by_cell = {(q.n, q.T): q for q in dlpm_grid}
    rows = []
    for p in ddpm_grid:
        q = dlpm_by_cell.get((p.n, p.T))
        if q is None:
            continue
        dd, dl = ddpm_bound(p), dlpm_bound(q)
        smaller = "tie" if dd.total == dl.total else ("ddpm" if dd.total < dl.total else "dlpm")
        rows.append({
            "n": p.n, "T": p.T,
            "ddpm_total": dd.total, "ddpm_approx": dd.approx_term, "ddpm_est": dd.est_term,
            "ddpm_init": dd.init_term, "ddpm_t0": p.t0,
            "dlpm_total": dl.total, "dlpm_approx": dl.approx_term, "dlpm_est": dl.est_term,
            "dlpm_init": dl.init_term, "dlpm_m": q.m,
            "smaller": smaller,
        })
    if not rows:
        raise ValueError("no (n, T) cell is shared by the two grids")
    return rows


def default_tradeoff_grids(beta=1.0, gamma=2.0, beta_alpha=1.0, d=1.0, c=1.0,
                           ns=(1e2, 1e3, 1e4, 1e5, 1e6), Ts=(1, 2, 4, 8, 16, 32, 64)):
    """Geometric ``(n, T)`` grid; DDPM at its exact optimal t0, DLPM at its optimal m."""
    ddpm, dlpm = [], []
    for n in ns:
        for T in Ts:
            probe = DdpmBoundParams(beta, gamma, d, n, T, t0=min(1e-3, T / 2))
            t0 = min(ddpm_optimal_t0_exact(probe), T / 2)
            ddpm.append(replace(probe, t0=t0))
            dlpm.append(DlpmBoundParams(beta_alpha, d, n, T, m=dlpm_optimal_m(n, beta_alpha, d), c=c))
    return ddpm, dlpm
