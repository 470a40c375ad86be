"""Univariate and isotropic alpha-stable laws: sampling, characteristic
functions and Hill tail-index estimation.

Parametrization follows Samorodnitsky & Taqqu (S1): a univariate law
``S_alpha(scale, skew, loc)`` has characteristic function

    exp(-scale^alpha |u|^alpha (1 - i skew sign(u) tan(pi alpha / 2)) + i loc u)

for alpha != 1. The isotropic law in ``dim`` dimensions has characteristic
function ``exp(i loc.u - scale^alpha ||u||^alpha)``. At alpha = 2 both are
Gaussian with variance ``2 scale^2`` per coordinate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "StableLaw",
    "IsotropicStableLaw",
    "make_rng",
    "sample_univariate_stable",
    "sample_isotropic_stable",
    "stable_char_fn",
    "empirical_char_fn",
    "hill_tail_index",
    "default_hill_k",
]


def make_rng(seed, *stream) -> np.random.Generator:
    """Deterministic generator for ``seed`` and an optional stream path.

    Workers that share a base seed pass their index as ``stream`` so each
    owns an independent sequence.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, stream)]))


def _check_alpha(alpha):
    if not (0.0 < alpha <= 2.0) or not math.isfinite(alpha):
        raise ValueError(f"alpha must lie in (0, 2], got {alpha}")


@dataclass(frozen=True)
class StableLaw:
    alpha: float
    skew: float = 0.0
    scale: float = 1.0
    loc: float = 0.0

    def __post_init__(self):
        _check_alpha(self.alpha)
        if abs(self.skew) > 1.0:
            raise ValueError(f"skew must lie in [-1, 1], got {self.skew}")
        if not self.scale > 0.0:
            raise ValueError(f"scale must be positive, got {self.scale}")


@dataclass(frozen=True)
class IsotropicStableLaw:
    alpha: float
    dim: int
    scale: float = 1.0
    loc: np.ndarray = field(default=None)

    def __post_init__(self):
        _check_alpha(self.alpha)
        if int(self.dim) < 1:
            raise ValueError(f"dim must be a positive integer, got {self.dim}")
        if not self.scale > 0.0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        loc = np.zeros(self.dim) if self.loc is None else np.asarray(self.loc, dtype=float)
        if loc.shape != (self.dim,):
            raise ValueError(f"loc must have shape ({self.dim},), got {loc.shape}")
        loc.setflags(write=False)
        object.__setattr__(self, "loc", loc)


def _cms_standard(alpha, skew, n, rng):
    # Chambers-Mallows-Stuck, unit scale, zero location (S1 parametrization).
    v = rng.uniform(-math.pi / 2, math.pi / 2, size=n)
    w = rng.standard_exponential(size=n)
    if alpha == 1.0:
        half_pi = math.pi / 2
        core = half_pi + skew * v
        return (2 / math.pi) * (core * np.tan(v) - skew * np.log(half_pi * w * np.cos(v) / core))
    zeta = skew * math.tan(math.pi * alpha / 2)
    shift = math.atan(zeta) / alpha
    factor = (1 + zeta * zeta) ** (1 / (2 * alpha))
    arg = alpha * (v + shift)
    return (
        factor
        * np.sin(arg)
        / np.cos(v) ** (1 / alpha)
        * (np.cos(v - arg) / w) ** ((1 - alpha) / alpha)
    )


def sample_univariate_stable(law: StableLaw, n: int, seed) -> np.ndarray:
    """Draw ``n`` i.i.d. variates from ``law``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = make_rng(seed)
    if law.alpha == 2.0:
        return law.loc + math.sqrt(2.0) * law.scale * rng.standard_normal(n)
    x = _cms_standard(law.alpha, law.skew, n, rng)
    if law.alpha == 1.0:
        return law.scale * x + (2 / math.pi) * law.skew * law.scale * math.log(law.scale) + law.loc
    return law.scale * x + law.loc


def sample_isotropic_stable(law: IsotropicStableLaw, n: int, seed) -> np.ndarray:
    """Draw an ``n x dim`` matrix of isotropic alpha-stable rows.

    Uses the sub-Gaussian representation ``X = sqrt(A) G`` where
    ``A ~ S_{alpha/2}(cos(pi alpha / 4)^{2/alpha}, 1, 0)`` is positive and
    ``G ~ N(0, 2 scale^2 I)``, so that ``E exp(i u.X) = exp(-scale^alpha ||u||^alpha)``.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = make_rng(seed)
    g = math.sqrt(2.0) * law.scale * rng.standard_normal((n, law.dim))
    if law.alpha == 2.0:
        return g + law.loc
    half = law.alpha / 2
    mix = StableLaw(half, skew=1.0, scale=math.cos(math.pi * law.alpha / 4) ** (2 / law.alpha))
    a = sample_univariate_stable(mix, n, rng)
    return np.sqrt(a)[:, None] * g + law.loc


def stable_char_fn(law: IsotropicStableLaw, u) -> complex:
    u = np.asarray(u, dtype=float).reshape(-1)
    if u.shape != (law.dim,):
        raise ValueError(f"u must have length {law.dim}")
    if not np.all(np.isfinite(u)):
        raise ValueError("u must be finite")
    norm = float(np.linalg.norm(u))
    return complex(np.exp(1j * float(law.loc @ u) - law.scale**law.alpha * norm**law.alpha))


def empirical_char_fn(samples, u) -> complex:
    """Mean of ``exp(i u.x)`` over the rows of ``samples``."""
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] == 0:
        raise ValueError("empirical_char_fn needs at least one sample")
    u = np.asarray(u, dtype=float).reshape(-1)
    proj = x @ u
    return complex(np.mean(np.cos(proj)), np.mean(np.sin(proj)))


def default_hill_k(n: int) -> int:
    return int(math.floor(n**0.6))


def hill_tail_index(samples, k: int | None = None) -> float:
    """Hill estimate of the tail index from the ``k`` largest ``|x|``.

    ``k / sum_{i=1..k} log(X_(n-i+1) / X_(n-k))`` with order statistics of
    the absolute values.
    """
    x = np.sort(np.abs(np.asarray(samples, dtype=float).reshape(-1)))
    n = x.size
    if k is None:
        k = default_hill_k(n)
    if not 2 <= k < n:
        raise ValueError(f"k must satisfy 2 <= k < n={n}, got {k}")
    pivot = x[n - k - 1]
    if pivot <= 0:
        raise ValueError("order statistic X_(n-k) must be positive")
    total = float(np.sum(np.log(x[n - k:] / pivot)))
    if total <= 0:
        raise ValueError("degenerate upper tail: all top order statistics equal X_(n-k)")
    return k / total
