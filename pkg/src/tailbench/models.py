"""DDPM, DLPM and GF-Linear: forward corruption, training losses, samplers.

Every chain is indexed ``t = 1..T``; schedule arrays have length ``T + 1``
with index 0 holding the clean-data values (``alpha_bar_0 = a_0 = 1``,
``b_0 = 0``). The network sees time as ``t / T`` (chains) or ``t`` in
``[0, 1]`` (flow).

Anywhere ``params`` is accepted, a callable ``model(x, t) -> prediction``
may be passed instead; losses then return ``None`` for the gradients. Tests
use this to plug in closed-form oracles.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .nn import (
    MlpParams,
    NonFiniteError,
    adamw_init,
    adamw_step,
    cosine_lr,
    init_mlp,
    load_checkpoint,
    mlp_backward,
    mlp_forward,
    save_checkpoint,
)
from .stable import IsotropicStableLaw, make_rng, sample_isotropic_stable

__all__ = [
    "DdpmSchedule",
    "DlpmSchedule",
    "FlowPath",
    "ModelSpec",
    "TrainConfig",
    "ddpm_forward",
    "ddpm_pairs",
    "ddpm_loss",
    "ddpm_sample",
    "dlpm_forward",
    "dlpm_pairs",
    "dlpm_loss",
    "dlpm_sample",
    "flow_pairs",
    "flow_loss",
    "flow_sample",
    "squared_error",
    "huber_error",
    "training_loss",
    "sample",
    "train_model",
    "validation_objective",
    "steps_per_epoch",
    "save_model",
    "load_model",
]

DDPM_BETA_MIN = 1e-4
DDPM_BETA_TOTAL = 10.0  # sum of betas, i.e. alpha_bar_T ~ exp(-10)
DLPM_BETA_MIN = 1e-4
DLPM_BETA_MAX = 0.1
DLPM_RAMP = 32


def _check_betas(betas):
    betas = np.asarray(betas, dtype=float).reshape(-1)
    if betas.size < 1 or np.any(betas <= 0) or np.any(betas >= 1):
        raise ValueError("betas must lie strictly inside (0, 1)")
    return betas


def _padded(values, first):
    out = np.empty(len(values) + 1)
    out[0] = first
    out[1:] = values
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class DdpmSchedule:
    betas: np.ndarray
    alpha_bars: np.ndarray
    sigma_max: float = 1.0

    @property
    def T(self) -> int:
        return len(self.betas) - 1

    @classmethod
    def from_betas(cls, betas, sigma_max: float = 1.0) -> "DdpmSchedule":
        betas = _check_betas(betas)
        if not sigma_max > 0:
            raise ValueError("sigma_max must be positive")
        return cls(_padded(betas, 0.0), _padded(np.cumprod(1 - betas), 1.0), float(sigma_max))

    @classmethod
    def linear(cls, T: int, sigma_max: float = 1.0) -> "DdpmSchedule":
        """Linear betas from 1e-4 with the end point set so that sum(beta) = 10.

        The terminal signal ``sqrt(alpha_bar_T)`` is then ~7e-3 for any T, and
        the terminal marginal scale is ``sigma_max``.
        """
        if T < 1:
            raise ValueError("T must be at least 1")
        if T == 1:
            return cls.from_betas([min(0.999, DDPM_BETA_TOTAL)], sigma_max)
        beta_end = min(0.999, 2 * DDPM_BETA_TOTAL / T - DDPM_BETA_MIN)
        return cls.from_betas(np.linspace(DDPM_BETA_MIN, beta_end, T), sigma_max)


@dataclass(frozen=True)
class DlpmSchedule:
    alpha: float
    betas: np.ndarray
    gammas: np.ndarray
    deltas: np.ndarray
    a: np.ndarray
    b: np.ndarray

    @property
    def T(self) -> int:
        return len(self.betas) - 1

    @property
    def rho(self) -> np.ndarray:
        """Signal-to-noise ratio ``a_t / b_t`` for t = 1..T (index 0 is inf)."""
        with np.errstate(divide="ignore"):
            return self.a / self.b

    @classmethod
    def from_betas(cls, betas, alpha: float) -> "DlpmSchedule":
        """``x_t = gamma_t x_{t-1} + delta_t S`` with ``gamma = sqrt(1 - beta)``,
        ``delta = beta^(1/alpha)``; cumulative coefficients in closed form.

        ``a_t = prod gamma_s`` and, by alpha-stability of sums,
        ``b_t^alpha = sum_s (delta_s prod_{u>s} gamma_u)^alpha``.
        """
        if not 0 < alpha <= 2:
            raise ValueError(f"alpha must lie in (0, 2], got {alpha}")
        betas = _check_betas(betas)
        gammas = np.sqrt(1 - betas)
        deltas = betas ** (1 / alpha)
        log_g = np.log(gammas)
        # prod_{u>s} gamma_u, for s = 1..t, evaluated at each t
        cum = np.concatenate([[0.0], np.cumsum(log_g)])
        a = np.exp(cum[1:])
        b = np.empty_like(betas)
        for t in range(len(betas)):
            tail = cum[t + 1] - cum[1:t + 2]
            b[t] = np.sum((deltas[: t + 1] * np.exp(tail)) ** alpha) ** (1 / alpha)
        return cls(float(alpha), _padded(betas, 0.0), _padded(gammas, 1.0), _padded(deltas, 0.0),
                   _padded(a, 1.0), _padded(b, 0.0))

    @classmethod
    def default(cls, T: int, alpha: float = 1.7) -> "DlpmSchedule":
        """Per-step betas independent of T: ramp 1e-4 -> 0.1 over 32 steps, then flat.

        Beyond the ramp ``a_t`` decays geometrically, so the terminal
        signal-to-noise ratio falls exponentially in T.
        """
        if T < 1:
            raise ValueError("T must be at least 1")
        return cls.from_betas(dlpm_default_betas(T), alpha)


def dlpm_default_betas(T: int) -> np.ndarray:
    t = np.arange(1, T + 1)
    frac = np.minimum(1.0, (t - 1) / (DLPM_RAMP - 1))
    return DLPM_BETA_MIN + (DLPM_BETA_MAX - DLPM_BETA_MIN) * frac


@dataclass(frozen=True)
class FlowPath:
    steps: int = 512
    sigma_max: float = 1.0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be at least 1")
        if not self.sigma_max > 0:
            raise ValueError("sigma_max must be positive")


def _check_step(t, T):
    t = np.asarray(t)
    if np.any(t < 1) or np.any(t > T):
        raise ValueError(f"step index must lie in [1, {T}]")
    return t


def _col(v):
    v = np.asarray(v, dtype=float)
    return v[:, None] if v.ndim == 1 else v


# ---------------------------------------------------------------- objectives

def squared_error(pred, target):
    """Mean over rows of ``||pred - target||^2``; returns ``(loss, dloss/dpred)``."""
    r = pred - target
    n = r.shape[0]
    return float(np.sum(r * r) / n), 2.0 * r / n


def huber_error(pred, target, delta: float = 1.0):
    """Mean over rows of the coordinate-summed Huber penalty.

    Quadratic ``r^2`` for ``|r| <= delta``, linear ``2 delta |r| - delta^2``
    beyond, so it matches :func:`squared_error` when no coordinate exceeds
    ``delta``.
    """
    r = pred - target
    n = r.shape[0]
    a = np.abs(r)
    inside = a <= delta
    vals = np.where(inside, r * r, 2 * delta * a - delta * delta)
    grad = np.where(inside, 2 * r, 2 * delta * np.sign(r)) / n
    return float(np.sum(vals) / n), grad


def _fit_step(model, inputs, times, targets, objective):
    if callable(model):
        pred = model(inputs, times)
        loss, _ = objective(pred, targets)
        grads = None
    else:
        pred, cache = mlp_forward(model, inputs, times)
        loss, dpred = objective(pred, targets)
        grads = mlp_backward(model, cache, dpred) if math.isfinite(loss) else None
    if not math.isfinite(loss):
        raise NonFiniteError(f"non-finite loss {loss}")
    return loss, grads


def _predict(model, x, t):
    if callable(model):
        return model(x, t)
    return mlp_forward(model, x, t)[0]


# ---------------------------------------------------------------------- DDPM

def ddpm_forward(x0, t, eps, sched: DdpmSchedule):
    """``sqrt(abar_t) x0 + sigma_max sqrt(1 - abar_t) eps``."""
    t = _check_step(t, sched.T)
    ab = sched.alpha_bars[t]
    if np.ndim(t):
        ab = ab[:, None]
    return np.sqrt(ab) * x0 + sched.sigma_max * np.sqrt(1 - ab) * eps


def ddpm_pairs(batch, sched: DdpmSchedule, rng):
    x0 = _col(batch)
    t = rng.integers(1, sched.T + 1, size=len(x0))
    eps = rng.standard_normal(x0.shape)
    return ddpm_forward(x0, t, eps, sched), t / sched.T, eps


def ddpm_loss(params, batch, sched: DdpmSchedule, rng):
    """Epsilon-prediction loss ``mean ||eps_hat(x_t, t) - eps||^2``."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    x, tt, target = ddpm_pairs(batch, sched, rng)
    return _fit_step(params, x, tt, target, squared_error)


def ddpm_sample(params, n: int, sched: DdpmSchedule, seed, t0: float = 0.0, dim: int | None = None):
    """Ancestral sampling from ``N(0, sigma_max^2 I)`` at step T.

    With ``t0 > 0`` the chain stops at step ``ceil(t0 T)`` and returns the
    state there (early stopping).
    """
    dim = _out_dim(params, dim)
    rng = make_rng(seed)
    s = sched.sigma_max
    stop = math.ceil(t0 * sched.T) if t0 > 0 else 0
    x = s * rng.standard_normal((n, dim))
    for t in range(sched.T, stop, -1):
        beta, ab, ab_prev = sched.betas[t], sched.alpha_bars[t], sched.alpha_bars[t - 1]
        eps_hat = _predict(params, x, np.full(n, t / sched.T))
        x = (x - beta / math.sqrt(1 - ab) * s * eps_hat) / math.sqrt(1 - beta)
        if t > 1:
            var = beta * (1 - ab_prev) / (1 - ab)
            x = x + s * math.sqrt(var) * rng.standard_normal((n, dim))
        if not np.all(np.isfinite(x)):
            raise NonFiniteError(f"non-finite DDPM state at step {t}", step=t)
    return x


def _out_dim(params, dim):
    if isinstance(params, MlpParams):
        return params.out_dim
    if dim is None:
        raise ValueError("dim is required when sampling from a callable model")
    return dim


# ---------------------------------------------------------------------- DLPM

def dlpm_forward(x0, t, s_alpha, sched: DlpmSchedule):
    """``a_t x0 + b_t S``."""
    t = _check_step(t, sched.T)
    a, b = sched.a[t], sched.b[t]
    if np.ndim(t):
        a, b = a[:, None], b[:, None]
    return a * x0 + b * s_alpha


def _stable_noise(alpha, shape, rng):
    n, dim = shape
    return sample_isotropic_stable(IsotropicStableLaw(alpha, dim), n, rng)


def dlpm_pairs(batch, sched: DlpmSchedule, rng):
    x0 = _col(batch)
    t = rng.integers(1, sched.T + 1, size=len(x0))
    s = _stable_noise(sched.alpha, x0.shape, rng)
    return dlpm_forward(x0, t, s, sched), t / sched.T, s


def dlpm_loss(params, batch, sched: DlpmSchedule, rng, huber: float = 1.0):
    """Predict the injected cumulative stable noise ``S``; Huber penalty."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    x, tt, target = dlpm_pairs(batch, sched, rng)
    return _fit_step(params, x, tt, target, lambda p, y: huber_error(p, y, huber))


def dlpm_sample(params, n: int, sched: DlpmSchedule, seed, dim: int | None = None):
    """Reverse chain from ``x_T = b_T S``.

    Each step forms ``x0_hat = (x_t - b_t S_hat) / a_t`` and moves to
    ``a_{t-1} x0_hat + c_t S_hat + sigma_t xi`` with a fresh stable ``xi``,
    ``sigma_t^alpha = b_{t-1}^alpha (1 - (gamma_t b_{t-1} / b_t)^alpha)`` and
    ``c_t^alpha = b_{t-1}^alpha - sigma_t^alpha``, which keeps the noise
    scale at ``b_{t-1}``. With ``sigma_t = 0`` this is the deterministic
    update ``(x_t - (b_t - gamma_t b_{t-1}) S_hat) / gamma_t``; at
    alpha = 2 it is DDPM ancestral sampling.
    """
    dim = _out_dim(params, dim)
    rng = make_rng(seed)
    al = sched.alpha
    x = sched.b[sched.T] * _stable_noise(al, (n, dim), rng)
    for t in range(sched.T, 0, -1):
        a_t, b_t, b_prev, g_t = sched.a[t], sched.b[t], sched.b[t - 1], sched.gammas[t]
        s_hat = _predict(params, x, np.full(n, t / sched.T))
        x0_hat = (x - b_t * s_hat) / a_t
        ratio = g_t * b_prev / b_t
        sigma = b_prev * max(0.0, 1 - ratio**al) ** (1 / al)
        c = b_prev * ratio
        x = sched.a[t - 1] * x0_hat + c * s_hat
        if sigma > 0:
            x = x + sigma * _stable_noise(al, (n, dim), rng)
        if not np.all(np.isfinite(x)):
            raise NonFiniteError(f"non-finite DLPM state at step {t}", step=t)
    return x


# ----------------------------------------------------------------- GF-Linear

def flow_pairs(batch, path: FlowPath, rng):
    x0 = _col(batch)
    t = rng.uniform(0.0, 1.0, size=len(x0))
    x1 = path.sigma_max * rng.standard_normal(x0.shape)
    xt = (1 - t)[:, None] * x0 + t[:, None] * x1
    return xt, t, x1 - x0


def flow_loss(params, batch, path: FlowPath, rng):
    """Velocity regression ``mean ||v(x_t, t) - (x1 - x0)||^2``."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    x, tt, target = flow_pairs(batch, path, rng)
    return _fit_step(params, x, tt, target, squared_error)


def flow_sample(params, n: int, path: FlowPath, seed, dim: int | None = None):
    """Explicit Euler from ``t = 1`` (Gaussian source) down to ``t = 0``."""
    dim = _out_dim(params, dim)
    rng = make_rng(seed)
    x = path.sigma_max * rng.standard_normal((n, dim))
    h = 1.0 / path.steps
    for k in range(path.steps, 0, -1):
        x = x - h * _predict(params, x, np.full(n, k * h))
        if not np.all(np.isfinite(x)):
            raise NonFiniteError(f"non-finite flow state at step {k}", step=k)
    return x


# ------------------------------------------------------------ model dispatch

FAMILIES = ("ddpm", "dlpm", "gf_linear")


@dataclass(frozen=True)
class ModelSpec:
    family: str
    steps: int = 512
    sigma_max: float = 1.0
    alpha: float = 1.7
    huber: float = 1.0
    t0: float = 0.0

    def __post_init__(self):
        fam = self.family.lower().replace("-", "_")
        if fam not in FAMILIES:
            raise ValueError(f"unknown model family {self.family!r}; expected one of {FAMILIES}")
        object.__setattr__(self, "family", fam)
        if self.steps < 1:
            raise ValueError("steps must be at least 1")

    @property
    def label(self) -> str:
        if self.family == "ddpm":
            return "DDPM"
        if self.family == "gf_linear":
            return "GF-Linear"
        return f"DLPM (alpha={self.alpha:g})"

    @property
    def key(self) -> str:
        return f"dlpm_a{self.alpha:g}" if self.family == "dlpm" else self.family

    def schedule(self):
        if self.family == "ddpm":
            return DdpmSchedule.linear(self.steps, self.sigma_max)
        if self.family == "dlpm":
            return DlpmSchedule.default(self.steps, self.alpha)
        return FlowPath(self.steps, self.sigma_max)

    def card(self) -> dict:
        doc = asdict(self)
        if self.family != "dlpm":
            doc.pop("alpha")
            doc.pop("huber")
        else:
            doc.pop("sigma_max")
        return doc


def training_loss(spec: ModelSpec, params, batch, rng, sched=None):
    sched = sched or spec.schedule()
    if spec.family == "ddpm":
        return ddpm_loss(params, batch, sched, rng)
    if spec.family == "dlpm":
        return dlpm_loss(params, batch, sched, rng, spec.huber)
    return flow_loss(params, batch, sched, rng)


def sample(spec: ModelSpec, params, n: int, seed, sched=None, dim=None):
    sched = sched or spec.schedule()
    if spec.family == "ddpm":
        return ddpm_sample(params, n, sched, seed, t0=spec.t0, dim=dim)
    if spec.family == "dlpm":
        return dlpm_sample(params, n, sched, seed, dim=dim)
    return flow_sample(params, n, sched, seed, dim=dim)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 16
    batch: int = 1024
    lr: float = 5e-4
    width: int = 256
    depth: int = 5
    t_embed_dim: int = 128
    weight_decay: float = 0.01
    extra: dict = field(default_factory=dict)


def steps_per_epoch(n_train: int, batch: int) -> int:
    return math.ceil(n_train / batch)


def train_model(spec: ModelSpec, train, cfg: TrainConfig, seed: int):
    """AdamW + cosine schedule over ``cfg.epochs`` shuffled passes.

    Returns ``(params, curve)`` where ``curve[e]`` is the mean minibatch loss
    of epoch ``e``.
    """
    train = _col(train)
    params = init_mlp(train.shape[1], width=cfg.width, depth=cfg.depth,
                      t_embed_dim=cfg.t_embed_dim, seed=make_rng(seed, 100))
    state = adamw_init(params, weight_decay=cfg.weight_decay)
    rng = make_rng(seed, 101)
    sched = spec.schedule()
    per_epoch = steps_per_epoch(len(train), cfg.batch)
    total = cfg.epochs * per_epoch
    curve = []
    for _ in range(cfg.epochs):
        order = rng.permutation(len(train))
        losses = []
        for j in range(per_epoch):
            batch = train[order[j * cfg.batch:(j + 1) * cfg.batch]]
            loss, grads = training_loss(spec, params, batch, rng, sched)
            params, state = adamw_step(state, params, grads, cosine_lr(state.step, total, cfg.lr))
            losses.append(loss)
        curve.append(float(np.mean(losses)))
    return params, curve


def validation_objective(spec: ModelSpec, params, val, seed: int, batch: int = 1024) -> float:
    """The family's own training loss on ``val`` with a fixed noise stream."""
    val = _col(val)
    rng = make_rng(seed, 103)
    sched = spec.schedule()
    total = 0.0
    for j in range(0, len(val), batch):
        chunk = val[j:j + batch]
        loss, _ = training_loss(spec, lambda x, t: mlp_forward(params, x, t)[0], chunk, rng, sched)
        total += loss * len(chunk)
    return total / len(val)


def save_model(out_dir, spec: ModelSpec, params: MlpParams, train_cfg: TrainConfig, seed: int,
               config_hash: str = "", step: int = 0) -> Path:
    """Checkpoint plus a JSON model card."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "model.ckpt", params, step=step, config_hash=config_hash)
    card = {"model": spec.card(), "train": asdict(train_cfg), "seed": seed, "config_hash": config_hash,
            "dim": params.in_dim}
    (out / "model.json").write_text(json.dumps(card, indent=2, sort_keys=True))
    return out


def load_model(model_dir):
    model_dir = Path(model_dir)
    card = json.loads((model_dir / "model.json").read_text())
    params, _ = load_checkpoint(model_dir / "model.ckpt")
    return ModelSpec(**card["model"]), params, card
