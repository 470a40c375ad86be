import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tailbench.models import (
    DdpmSchedule,
    DlpmSchedule,
    FlowPath,
    ModelSpec,
    TrainConfig,
    ddpm_forward,
    ddpm_loss,
    ddpm_sample,
    dlpm_forward,
    dlpm_loss,
    dlpm_sample,
    flow_loss,
    flow_sample,
    huber_error,
    load_model,
    sample,
    save_model,
    squared_error,
    steps_per_epoch,
    train_model,
    training_loss,
    validation_objective,
)
from tailbench.nn import NonFiniteError, init_mlp


def _step_table(sched):
    # model time t/T back to the integer step
    return lambda tt: np.rint(np.asarray(tt) * sched.T).astype(int)


def _loss_fd_error(loss_fn, params, h=1e-6, seed=0):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(params.n_params())
    v /= np.linalg.norm(v)
    _, grads = loss_fn(params, np.random.default_rng(1))
    analytic = float(grads.flat() @ v)
    base = params.flat()
    plus, _ = loss_fn(params.with_flat(base + h * v), np.random.default_rng(1))
    minus, _ = loss_fn(params.with_flat(base - h * v), np.random.default_rng(1))
    return abs((plus - minus) / (2 * h) - analytic) / max(abs(analytic), 1e-12)


# ---------------------------------------------------------------- schedules

def test_ddpm_schedule_invariants():
    s = DdpmSchedule.linear(512)
    assert s.alpha_bars[0] == 1 and s.T == 512
    assert np.all(np.diff(s.alpha_bars) < 0)
    assert np.all((s.betas[1:] > 0) & (s.betas[1:] < 1))
    assert s.betas[1:].sum() == pytest.approx(10.0)


def test_alpha2_reduction():
    d = DdpmSchedule.linear(512)
    l = DlpmSchedule.from_betas(d.betas[1:], 2.0)
    assert np.max(np.abs(l.a - np.sqrt(d.alpha_bars))) <= 1e-12
    assert np.max(np.abs(l.b - np.sqrt(1 - d.alpha_bars))) <= 1e-12


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), alpha=st.floats(0.5, 2.0), T=st.integers(1, 60))
def test_b_closed_form_matches_recursion(seed, alpha, T):
    betas = np.random.default_rng(seed).uniform(1e-4, 0.5, size=T)
    s = DlpmSchedule.from_betas(betas, alpha)
    b = 0.0
    for t in range(1, T + 1):
        b = ((s.gammas[t] * b) ** alpha + s.deltas[t] ** alpha) ** (1 / alpha)
        assert abs(s.b[t] - b) <= 1e-10 * max(1.0, b)
    assert np.allclose(s.a[1:], np.cumprod(s.gammas[1:]), rtol=1e-12)


def test_default_rho_decreasing_and_small():
    rho = [DlpmSchedule.default(T).rho[T] for T in range(1, 513)]
    assert np.all(np.diff(rho) < 0)
    assert rho[-1] < 1e-3


def test_log_rho_linear_in_T():
    Ts = np.arange(64, 513)
    y = np.log([DlpmSchedule.default(T, 1.7).rho[T] for T in Ts])
    slope, icpt = np.polyfit(Ts, y, 1)
    r2 = 1 - np.sum((y - (slope * Ts + icpt)) ** 2) / np.sum((y - y.mean()) ** 2)
    assert slope < 0 and r2 > 0.99


def test_flow_path_validation():
    with pytest.raises(ValueError):
        FlowPath(steps=0)
    with pytest.raises(ValueError):
        FlowPath(sigma_max=0)


# -------------------------------------------------------------------- DDPM

def test_ddpm_forward_examples():
    s = DdpmSchedule.from_betas([0.75])
    out = ddpm_forward(np.array([1.0, 0.0]), 1, np.array([0.0, 1.0]), s)
    assert np.allclose(out, [0.5, math.sqrt(0.75)], atol=1e-15)
    clean = DdpmSchedule.from_betas([1e-15])
    x0 = np.array([0.3, -2.0])
    assert np.allclose(ddpm_forward(x0, 1, np.array([5.0, 5.0]), clean), x0, atol=1e-6)
    noisy = DdpmSchedule.from_betas([1 - 1e-15])
    assert np.allclose(ddpm_forward(x0, 1, np.array([5.0, -1.0]), noisy), [5.0, -1.0], atol=1e-6)
    with pytest.raises(ValueError):
        ddpm_forward(x0, 2, x0, s)
    with pytest.raises(ValueError):
        ddpm_forward(x0, 0, x0, s)


def test_ddpm_loss_oracle_and_zero_net():
    s = DdpmSchedule.linear(64, sigma_max=2.0)
    step = _step_table(s)

    def oracle(x, tt):  # exact eps for data at the origin
        ab = s.alpha_bars[step(tt)][:, None]
        return x / (s.sigma_max * np.sqrt(1 - ab))

    batch = np.zeros((256, 3))
    loss, grads = ddpm_loss(oracle, batch, s, np.random.default_rng(0))
    assert loss == pytest.approx(0.0, abs=1e-20) and grads is None
    loss, _ = ddpm_loss(lambda x, tt: np.zeros_like(x), np.zeros((20_000, 4)), s, np.random.default_rng(1))
    assert abs(loss / 4 - 1) < 0.03


def test_ddpm_loss_gradient_fd():
    s = DdpmSchedule.linear(32)
    p = init_mlp(2, width=16, depth=3, t_embed_dim=4, seed=0)
    batch = np.random.default_rng(2).standard_normal((3, 2))
    assert _loss_fd_error(lambda q, rng: ddpm_loss(q, batch, s, rng), p) < 1e-4


def test_ddpm_one_step_inversion():
    s = DdpmSchedule.from_betas([0.999])
    oracle = lambda x, tt: x / math.sqrt(1 - s.alpha_bars[1])
    out = ddpm_sample(oracle, 100, s, seed=0, dim=2)
    assert np.max(np.abs(out)) < 1e-12


def test_ddpm_untrained_is_finite():
    p = init_mlp(3, width=32, depth=3, t_embed_dim=8, seed=0)
    out = ddpm_sample(p, 50, DdpmSchedule.linear(512), seed=1)
    assert np.all(np.isfinite(out))


def _gaussian_eps_oracle(s, m, v):
    step = _step_table(s)

    def eps(x, tt):
        ab = s.alpha_bars[step(tt)][:, None]
        noise = s.sigma_max**2 * (1 - ab)
        return (x - np.sqrt(ab) * m) * s.sigma_max * np.sqrt(1 - ab) / (ab * v + noise)

    return eps


@pytest.mark.parametrize("sigma_max", [1.0, 2.0])
def test_ddpm_gaussian_oracle(sigma_max):
    m, v = 1.5, 0.5
    s = DdpmSchedule.linear(512, sigma_max)
    out = ddpm_sample(_gaussian_eps_oracle(s, m, v), 10_000, s, seed=3, dim=1)
    assert abs(out.mean() / m - 1) < 0.10
    assert abs(out.var() / v - 1) < 0.10


def test_ddpm_early_stop_returns_intermediate_state():
    s = DdpmSchedule.linear(100)
    oracle = _gaussian_eps_oracle(s, 0.0, 1.0)
    full = ddpm_sample(oracle, 5, s, seed=0, dim=1)
    early = ddpm_sample(oracle, 5, s, seed=0, t0=0.5, dim=1)
    assert not np.array_equal(full, early)
    with pytest.raises(ValueError):
        ddpm_sample(oracle, 5, s, seed=0)


# -------------------------------------------------------------------- DLPM

def test_dlpm_forward_examples():
    d = DdpmSchedule.linear(16)
    l = DlpmSchedule.from_betas(d.betas[1:], 2.0)
    rng = np.random.default_rng(0)
    x0, g = rng.standard_normal((16, 3)), rng.standard_normal((16, 3))
    t = np.arange(1, 17)
    assert np.max(np.abs(dlpm_forward(x0, t, g, l) - ddpm_forward(x0, t, g, d))) <= 1e-12

    def manual(a, b):
        arr = lambda v0, v1: np.array([v0, v1])
        return DlpmSchedule(1.7, arr(0, 0.5), arr(1, 0.5), arr(0, 0.5), arr(1.0, a), arr(0.0, b))

    assert dlpm_forward(np.array([2.0]), 1, np.array([3.0]), manual(0.5, 0.1)) == pytest.approx([1.3])
    assert dlpm_forward(np.array([2.0]), 1, np.array([3.0]), manual(1.0, 0.0)) == pytest.approx([2.0])
    with pytest.raises(ValueError):
        dlpm_forward(x0[0], 17, g[0], l)


def test_dlpm_loss_oracle():
    s = DlpmSchedule.default(64, 1.7)
    step = _step_table(s)
    oracle = lambda x, tt: x / s.b[step(tt)][:, None]
    loss, _ = dlpm_loss(oracle, np.zeros((256, 3)), s, np.random.default_rng(0))
    assert loss == pytest.approx(0.0, abs=1e-20)


def test_huber_matches_squared_inside_threshold():
    rng = np.random.default_rng(0)
    target = rng.standard_normal((50, 4))
    pred = target + rng.uniform(-0.9, 0.9, size=target.shape)
    hl, hg = huber_error(pred, target)
    sl, sg = squared_error(pred, target)
    assert hl == pytest.approx(sl, rel=1e-14) and np.allclose(hg, sg, atol=1e-15)
    # linear branch: residual 3 costs 2*3 - 1
    assert huber_error(np.array([[3.0]]), np.array([[0.0]]))[0] == 5.0


def test_dlpm_alpha2_loss_is_quadratic_for_small_residuals():
    s = DlpmSchedule.from_betas(DdpmSchedule.linear(32).betas[1:], 2.0)
    step = _step_table(s)
    oracle = lambda x, tt: x / s.b[step(tt)][:, None] + 0.1
    loss, _ = dlpm_loss(oracle, np.zeros((100, 3)), s, np.random.default_rng(0))
    assert loss == pytest.approx(3 * 0.01, rel=1e-9)


def test_dlpm_loss_gradient_fd():
    s = DlpmSchedule.default(32, 1.7)
    p = init_mlp(2, width=16, depth=3, t_embed_dim=4, seed=1)
    batch = np.random.default_rng(3).standard_normal((3, 2))
    assert _loss_fd_error(lambda q, rng: dlpm_loss(q, batch, s, rng), p) < 1e-4


def test_dlpm_alpha2_point_mass_collapses():
    s = DlpmSchedule.from_betas(DdpmSchedule.linear(50).betas[1:], 2.0)
    step = _step_table(s)
    out = dlpm_sample(lambda x, tt: x / s.b[step(tt)][:, None], 200, s, seed=0, dim=2)
    assert np.max(np.abs(out)) < 1e-9


def test_dlpm_alpha2_sampler_equals_ddpm_scaled():
    # at alpha = 2 the stable law has variance 2, i.e. DDPM with sigma_max = sqrt 2
    d = DdpmSchedule.linear(40, math.sqrt(2))
    l = DlpmSchedule.from_betas(d.betas[1:], 2.0)
    eps = _gaussian_eps_oracle(d, 0.7, 0.3)
    s_hat = lambda x, tt: math.sqrt(2) * eps(x, tt)
    a = dlpm_sample(s_hat, 4000, l, seed=5, dim=1)
    b = ddpm_sample(eps, 4000, d, seed=6, dim=1)
    assert abs(a.mean() - b.mean()) < 0.05 and abs(a.var() / b.var() - 1) < 0.1


def test_dlpm_untrained_is_finite():
    p = init_mlp(3, width=32, depth=3, t_embed_dim=8, seed=0)
    out = dlpm_sample(p, 50, DlpmSchedule.default(512, 1.7), seed=1)
    assert np.all(np.isfinite(out))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_dlpm_nonfinite_state_aborts_with_step():
    s = DlpmSchedule.default(10, 1.7)
    bad = lambda x, tt: np.full_like(x, np.inf)
    with pytest.raises(NonFiniteError) as info:
        dlpm_sample(bad, 3, s, seed=0, dim=1)
    assert info.value.step == 10


# -------------------------------------------------------------------- flow

def test_flow_loss_oracle_and_zero_net():
    path = FlowPath(64, 1.0)
    loss, _ = flow_loss(lambda x, t: x / t[:, None], np.zeros((100, 3)), path, np.random.default_rng(0))
    assert loss == pytest.approx(0.0, abs=1e-18)
    loss, _ = flow_loss(lambda x, t: np.zeros_like(x), np.zeros((20_000, 4)), path, np.random.default_rng(1))
    assert abs(loss / 4 - 1) < 0.03


def test_flow_loss_gradient_fd():
    path = FlowPath(16, 2.0)
    p = init_mlp(2, width=16, depth=3, t_embed_dim=4, seed=2)
    batch = np.random.default_rng(4).standard_normal((3, 2))
    assert _loss_fd_error(lambda q, rng: flow_loss(q, batch, path, rng), p) < 1e-4


def test_flow_point_mass_exact():
    c = np.array([1.5, -0.5])
    out = flow_sample(lambda x, t: (x - c) / t[:, None], 20, FlowPath(37, 2.0), seed=0, dim=2)
    assert np.max(np.abs(out - c)) < 1e-12


def test_flow_single_step_is_one_euler_jump():
    field = lambda x, t: 0.3 * x + t[:, None]
    path = FlowPath(1, 1.5)
    out = flow_sample(field, 4, path, seed=9, dim=2)
    x1 = 1.5 * np.random.default_rng(np.random.SeedSequence([9])).standard_normal((4, 2))
    assert np.allclose(out, x1 - field(x1, np.ones(4)), atol=1e-15)


def test_flow_gaussian_oracle():
    m, v = -1.0, 0.6

    def field(x, t):
        t = t[:, None]
        var_t = (1 - t) ** 2 * v + t**2
        dev = x - (1 - t) * m
        return t * dev / var_t - (m + (1 - t) * v * dev / var_t)

    out = flow_sample(field, 10_000, FlowPath(512, 1.0), seed=2, dim=1)
    assert abs(out.var() / v - 1) < 0.10 and abs(out.mean() - m) < 0.05


# ----------------------------------------------------------- shared behavior

@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10_000), family=st.sampled_from(["ddpm", "dlpm", "gf_linear"]))
def test_losses_nonnegative_and_samplers_deterministic(seed, family):
    spec = ModelSpec(family, steps=8, sigma_max=2.0)
    p = init_mlp(2, width=8, depth=2, t_embed_dim=4, seed=seed)
    batch = np.random.default_rng(seed).standard_normal((6, 2))
    loss, _ = training_loss(spec, p, batch, np.random.default_rng(seed))
    assert loss >= 0
    a = sample(spec, p, 5, seed)
    assert a.tobytes() == sample(spec, p, 5, seed).tobytes()


def test_empty_batches_rejected():
    for spec in (ModelSpec("ddpm", 4), ModelSpec("dlpm", 4), ModelSpec("gf-linear", 4)):
        with pytest.raises(ValueError):
            training_loss(spec, lambda x, t: x, np.zeros((0, 2)), np.random.default_rng(0))


def test_nonfinite_loss_raises():
    with pytest.raises(NonFiniteError):
        ddpm_loss(lambda x, t: np.full_like(x, np.nan), np.zeros((3, 1)), DdpmSchedule.linear(4),
                  np.random.default_rng(0))


def test_model_spec_labels():
    assert ModelSpec("gf-linear").family == "gf_linear"
    assert ModelSpec("gf_linear").label == "GF-Linear"
    assert ModelSpec("ddpm").label == "DDPM"
    assert ModelSpec("dlpm", alpha=1.9).label == "DLPM (alpha=1.9)"
    assert ModelSpec("dlpm", alpha=1.7).key == "dlpm_a1.7"
    with pytest.raises(ValueError):
        ModelSpec("vae")


def test_train_save_load_round_trip(tmp_path):
    spec = ModelSpec("dlpm", steps=16, alpha=1.7)
    train = np.random.default_rng(0).standard_normal((40, 2))
    cfg = TrainConfig(epochs=2, batch=16, lr=1e-3, width=16, depth=3, t_embed_dim=4)
    p, curve = train_model(spec, train, cfg, seed=3)
    assert len(curve) == 2 and all(math.isfinite(c) for c in curve)
    q, curve2 = train_model(spec, train, cfg, seed=3)
    assert p.flat().tobytes() == q.flat().tobytes() and curve == curve2
    assert steps_per_epoch(40, 16) == 3
    save_model(tmp_path, spec, p, cfg, seed=3, config_hash="h", step=6)
    spec2, p2, card = load_model(tmp_path)
    assert spec2 == spec and p2.flat().tobytes() == p.flat().tobytes() and card["seed"] == 3
    val = validation_objective(spec, p, train[:10], seed=0)
    assert val == validation_objective(spec, p, train[:10], seed=0) and val >= 0
