"""Invariant battery behind ``tailbench selfcheck``."""

from __future__ import annotations

import itertools
import math

import numpy as np

from .metrics import mmd_rbf
from .models import DdpmSchedule, DlpmSchedule
from .nn import init_mlp, mlp_backward, mlp_forward
from .stable import IsotropicStableLaw, empirical_char_fn, sample_isotropic_stable, stable_char_fn


def check_char_fn(alphas=(1.3, 1.7, 1.9, 2.0), dims=(1, 30), n=100_000, tol=0.01, seed=0):
    worst = 0.0
    for alpha, dim in itertools.product(alphas, dims):
        law = IsotropicStableLaw(alpha, dim)
        x = sample_isotropic_stable(law, n, seed)
        for u in frequency_probes(dim, seed):
            worst = max(worst, abs(empirical_char_fn(x, u) - stable_char_fn(law, u)))
    return worst < tol, f"max |ECF - CF| = {worst:.4g} (tol {tol})"


def frequency_probes(dim, seed=0, count=10):
    """Ten fixed frequencies: norms spread over [0.1, 2], random directions."""
    rng = np.random.default_rng([seed, 7, dim])
    norms = np.linspace(0.1, 2.0, count)
    dirs = rng.standard_normal((count, dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return dirs * norms[:, None]


def fd_gradient_error(params, x, t, grad_out, direction, h=1e-5):
    """Relative error between the backprop directional derivative and a central difference."""
    _, cache = mlp_forward(params, x, t)
    analytic = float(mlp_backward(params, cache, grad_out).flat() @ direction)
    base = params.flat()

    def f(vec):
        return float(np.sum(mlp_forward(params.with_flat(vec), x, t)[0] * grad_out))

    numeric = (f(base + h * direction) - f(base - h * direction)) / (2 * h)
    return abs(numeric - analytic) / max(abs(analytic), 1e-12)


def check_gradients(count=20, in_dim=30, width=256, depth=5, batch=4, tol=1e-4, seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(count):
        p = init_mlp(in_dim, width=width, depth=depth, seed=rng)
        x = rng.standard_normal((batch, in_dim))
        t = rng.uniform(size=batch)
        g = rng.standard_normal((batch, in_dim))
        v = rng.standard_normal(p.n_params())
        v /= np.linalg.norm(v)
        worst = max(worst, fd_gradient_error(p, x, t, g, v))
    return worst < tol, f"max relative FD error = {worst:.3g} (tol {tol})"


def check_alpha2_reduction(T=512, tol=1e-12):
    ddpm = DdpmSchedule.linear(T)
    dlpm = DlpmSchedule.from_betas(ddpm.betas[1:], 2.0)
    err = max(np.max(np.abs(dlpm.a - np.sqrt(ddpm.alpha_bars))),
              np.max(np.abs(dlpm.b - np.sqrt(1 - ddpm.alpha_bars))))
    return err <= tol, f"max |(a,b) - (sqrt abar, sqrt(1-abar))| = {err:.3g} (tol {tol})"


def mmd_brute_force(x, y, h):
    """Explicit loops over the three kernel sums of the unbiased estimator."""
    def k(a, b):
        return math.exp(-float(np.sum((a - b) ** 2)) / (2 * h * h))

    m, n = len(x), len(y)
    sxx = sum(k(x[i], x[j]) for i in range(m) for j in range(m) if i != j)
    syy = sum(k(y[i], y[j]) for i in range(n) for j in range(n) if i != j)
    sxy = sum(k(x[i], y[j]) for i in range(m) for j in range(n))
    return sxx / (m * (m - 1)) + syy / (n * (n - 1)) - 2 * sxy / (m * n)


def check_mmd_brute_force(trials=50, tol=1e-12, seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        m, n, d = rng.integers(2, 7), rng.integers(2, 7), rng.integers(1, 4)
        x, y = rng.standard_normal((m, d)), rng.standard_normal((n, d)) + rng.uniform(-1, 1)
        h = float(rng.uniform(0.3, 3.0))
        worst = max(worst, abs(mmd_rbf(x, y, h) - mmd_brute_force(x, y, h)))
    return worst <= tol, f"max |U-stat - brute force| = {worst:.3g} (tol {tol})"


BATTERY = (
    ("characteristic-function match", check_char_fn),
    ("finite-difference gradients", check_gradients),
    ("alpha=2 schedule reduction", check_alpha2_reduction),
    ("MMD brute-force equivalence", check_mmd_brute_force),
)


def run_battery(echo=print) -> bool:
    ok_all = True
    for name, fn in BATTERY:
        ok, detail = fn()
        ok_all &= ok
        echo(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    return ok_all
