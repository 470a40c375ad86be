"""Time-conditioned MLP with hand-written backprop, AdamW and cosine LR.

Arrays are batched: inputs are ``(batch, in_dim)`` and times ``(batch,)``
in ``[0, 1]``. A 1-D input is treated as a batch of one.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "MlpParams",
    "AdamWState",
    "NonFiniteError",
    "time_embedding",
    "init_mlp",
    "mlp_forward",
    "mlp_backward",
    "adamw_init",
    "adamw_step",
    "cosine_lr",
    "save_checkpoint",
    "load_checkpoint",
]

FREQ_MIN = 1.0
FREQ_MAX = 1000.0


class NonFiniteError(FloatingPointError):
    """Raised when a gradient, loss or state goes NaN/inf."""

    def __init__(self, message, layer=None, step=None):
        super().__init__(message)
        self.layer = layer
        self.step = step


@dataclass
class MlpParams:
    weights: list  # each (out, in)
    biases: list  # each (out,)
    t_embed_dim: int = 128

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1] - self.t_embed_dim

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def depth(self) -> int:
        return len(self.weights)

    @property
    def width(self) -> int:
        return self.weights[0].shape[0] if self.depth > 1 else 0

    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def arrays(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, vec) -> "MlpParams":
        vec = np.asarray(vec, dtype=float)
        ws, bs, pos = [], [], 0
        for w, b in zip(self.weights, self.biases):
            ws.append(vec[pos:pos + w.size].reshape(w.shape))
            pos += w.size
            bs.append(vec[pos:pos + b.size].copy())
            pos += b.size
        if pos != vec.size:
            raise ValueError(f"flat vector has {vec.size} entries, expected {pos}")
        return MlpParams(ws, bs, self.t_embed_dim)

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.t_embed_dim)


MlpGrads = MlpParams


def time_embedding(t, dim: int = 128) -> np.ndarray:
    """Sinusoidal embedding ``[sin(f_j t), cos(f_j t)]``.

    Frequencies are geometric between ``FREQ_MIN`` and ``FREQ_MAX``, lowest
    first, so entries ``0`` and ``dim // 2`` carry the slowest pair.
    Returns ``(len(t), dim)`` for array ``t`` and ``(dim,)`` for a scalar.
    """
    if dim % 2 or dim < 2:
        raise ValueError(f"time embedding dimension must be even and positive, got {dim}")
    scalar = np.ndim(t) == 0
    t = np.atleast_1d(np.asarray(t, dtype=float))
    half = dim // 2
    freqs = np.geomspace(FREQ_MIN, FREQ_MAX, half) if half > 1 else np.array([FREQ_MIN])
    args = t[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(args), np.cos(args)], axis=1)
    return emb[0] if scalar else emb


def init_mlp(in_dim: int, out_dim: int | None = None, width: int = 256, depth: int = 5,
             t_embed_dim: int = 128, seed=0) -> MlpParams:
    """Kaiming-uniform (fan-in) weights, zero biases; ``depth`` linear layers."""
    if depth < 1:
        raise ValueError("depth must be at least 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    out_dim = in_dim if out_dim is None else out_dim
    sizes = [in_dim + t_embed_dim] + [width] * (depth - 1) + [out_dim]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = math.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases, t_embed_dim)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _silu(z):
    return z * _sigmoid(z)


def _silu_grad(z):
    s = _sigmoid(z)
    return s * (1.0 + z * (1.0 - s))


def mlp_forward(params: MlpParams, x, t):
    """Return ``(output, cache)``; SiLU on hidden layers, identity on the last."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != params.in_dim:
        raise ValueError(f"input has {x.shape[1]} features, network expects {params.in_dim}")
    t = np.broadcast_to(np.asarray(t, dtype=float), (x.shape[0],))
    h = np.concatenate([x, time_embedding(t, params.t_embed_dim)], axis=1)
    inputs, pre = [h], []
    last = params.depth - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w.T + b
        pre.append(z)
        h = z if i == last else _silu(z)
        if i != last:
            inputs.append(h)
    cache = {"inputs": inputs, "pre": pre, "single": single, "shapes": [w.shape for w in params.weights]}
    return (h[0] if single else h), cache


def mlp_backward(params: MlpParams, cache, grad_out) -> MlpGrads:
    """Gradient of ``sum(output * grad_out)`` with respect to every parameter."""
    if cache["shapes"] != [w.shape for w in params.weights]:
        raise ValueError("cache does not match the network (stale forward pass?)")
    g = np.atleast_2d(np.asarray(grad_out, dtype=float))
    if g.shape != cache["pre"][-1].shape:
        raise ValueError(f"grad_out shape {g.shape} does not match output {cache['pre'][-1].shape}")
    n = params.depth
    dws, dbs = [None] * n, [None] * n
    for i in range(n - 1, -1, -1):
        if i != n - 1:
            g = g * _silu_grad(cache["pre"][i])
        dws[i] = g.T @ cache["inputs"][i]
        dbs[i] = g.sum(axis=0)
        if i:
            g = g @ params.weights[i]
    return MlpParams(dws, dbs, params.t_embed_dim)


@dataclass
class AdamWState:
    m: list
    v: list
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    extra: dict = field(default_factory=dict)


def adamw_init(params: MlpParams, **hyper) -> AdamWState:
    zeros = [np.zeros_like(a) for a in params.arrays()]
    return AdamWState(zeros, [z.copy() for z in zeros], **hyper)


def adamw_step(state: AdamWState, params: MlpParams, grads: MlpGrads, lr: float):
    """One decoupled-weight-decay Adam update; returns ``(params, state)``."""
    p_arrays, g_arrays = params.arrays(), grads.arrays()
    if len(p_arrays) != len(g_arrays) or any(p.shape != g.shape for p, g in zip(p_arrays, g_arrays)):
        raise ValueError("gradient shapes do not match parameter shapes")
    for i, g in enumerate(g_arrays):
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient in layer {i // 2}", layer=i // 2)
    step = state.step + 1
    b1, b2 = state.beta1, state.beta2
    corr1, corr2 = 1 - b1**step, 1 - b2**step
    decay = 1.0 - lr * state.weight_decay
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(p_arrays, g_arrays, state.m, state.v):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        new_p.append(p * decay - lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps))
        new_m.append(m)
        new_v.append(v)
    out = MlpParams(new_p[0::2], new_p[1::2], params.t_embed_dim)
    new_state = AdamWState(new_m, new_v, step, b1, b2, state.eps, state.weight_decay, dict(state.extra))
    return out, new_state


def cosine_lr(step: int, total_steps: int, lr0: float) -> float:
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


_MAGIC = b"TBCK"


def save_checkpoint(path, params: MlpParams, step: int = 0, config_hash: str = "") -> Path:
    """JSON header followed by the parameters as little-endian float64.

    Layout: ``b"TBCK"``, uint64 header length, UTF-8 JSON header, blob.
    """
    header = {
        "shapes": [list(a.shape) for a in params.arrays()],
        "t_embed_dim": params.t_embed_dim,
        "config_hash": config_hash,
        "step": int(step),
        "dtype": "<f8",
    }
    raw = json.dumps(header, sort_keys=True).encode()
    blob = params.flat().astype("<f8").tobytes()
    path = Path(path)
    path.write_bytes(_MAGIC + struct.pack("<Q", len(raw)) + raw + blob)
    return path


def load_checkpoint(path):
    """Return ``(params, header)``."""
    data = Path(path).read_bytes()
    if data[:4] != _MAGIC:
        raise ValueError(f"{path} is not a checkpoint file")
    (size,) = struct.unpack("<Q", data[4:12])
    header = json.loads(data[12:12 + size])
    flat = np.frombuffer(data[12 + size:], dtype="<f8").astype(float)
    arrays, pos = [], 0
    for shape in header["shapes"]:
        count = int(np.prod(shape))
        arrays.append(flat[pos:pos + count].reshape(shape).copy())
        pos += count
    if pos != flat.size:
        raise ValueError("checkpoint blob length does not match header shapes")
    return MlpParams(arrays[0::2], arrays[1::2], header["t_embed_dim"]), header
