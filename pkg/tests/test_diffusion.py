"""Diffusion policy: schedule algebra, corruption round trips, the
reverse chain, and gradients of both losses."""

import numpy as np
import pytest

from sda_marl import diffusion, nets
from sda_marl.diffusion import (DiffusionPolicy, ScheduleError,
                                default_schedule, denoising_loss,
                                denoising_loss_terms, forward_noise,
                                make_schedule, predict_x0, rollout_backward,
                                rollout_sample, sample_action,
                                sample_action_batch)


def _zero_policy(obs_dim=4, action_dim=2, steps=1, beta=0.36, bias=None):
    """Policy whose noise net always outputs `bias` (default zeros)."""
    sched = make_schedule(steps, beta, beta)
    in_dim = obs_dim + action_dim + 1
    p = [np.zeros((in_dim, 8)), np.zeros(8), np.zeros((8, 8)), np.zeros(8),
         np.zeros((8, action_dim)),
         np.zeros(action_dim) if bias is None else np.asarray(bias, float)]
    net = nets.Mlp((in_dim, 8, 8, action_dim), nets.IDENTITY, params=p)
    return DiffusionPolicy(net=net, ema_net=net.copy(), schedule=sched,
                           action_dim=action_dim)


# ---------------------------------------------------------------------------
# schedule
# ---------------------------------------------------------------------------


def test_single_step_schedule_values():
    s = make_schedule(1, 0.36, 0.36)
    assert s.alphas[0] == pytest.approx(0.64, abs=1e-15)
    assert s.alpha_cumprod[0] == pytest.approx(0.64, abs=1e-15)
    assert np.sqrt(s.alpha_cumprod[0]) == pytest.approx(0.8, abs=1e-15)
    assert s.sigmas[0] == 0.0  # abar_prev = 1 kills the final-step noise


def test_constant_schedule_is_geometric():
    s = make_schedule(6, 0.1, 0.1)
    np.testing.assert_allclose(s.alpha_cumprod, 0.9 ** np.arange(1, 7),
                               rtol=0, atol=1e-15)


def test_cumprod_recurrence():
    s = make_schedule(25, 1e-4, 0.4)
    for t in range(1, 25):
        assert s.alpha_cumprod[t] == pytest.approx(
            s.alpha_cumprod[t - 1] * s.alphas[t], abs=1e-15)
    assert s.alpha_cumprod[-1] < s.alpha_cumprod[0]


def test_invalid_schedules_rejected():
    with pytest.raises(ScheduleError):
        make_schedule(0, 0.1, 0.2)
    with pytest.raises(ScheduleError):
        make_schedule(5, 0.0, 0.2)
    with pytest.raises(ScheduleError):
        make_schedule(5, 0.3, 0.2)
    with pytest.raises(ScheduleError):
        make_schedule(5, 0.1, 1.0)


def test_default_schedule_valid_across_sweep_range():
    for steps in (5, 10, 20, 50):
        s = default_schedule(steps)
        assert s.steps == steps
        assert np.all(s.betas > 0.0) and np.all(s.betas < 1.0)
        # signal is essentially destroyed by the last step
        assert s.alpha_cumprod[-1] < 0.05


# ---------------------------------------------------------------------------
# corruption and inversion
# ---------------------------------------------------------------------------


def test_forward_noise_single_step_example():
    s = make_schedule(1, 0.36, 0.36)
    x = forward_noise(s, np.array([1.0]), 1, np.array([1.0]))
    assert x[0] == pytest.approx(0.8 + 0.6, abs=1e-15)


def test_forward_noise_shape_and_range_checks():
    s = make_schedule(3, 0.1, 0.2)
    with pytest.raises(ScheduleError):
        forward_noise(s, np.zeros(2), 4, np.zeros(2))
    with pytest.raises(ScheduleError):
        forward_noise(s, np.zeros(2), 0, np.zeros(2))
    with pytest.raises(ValueError):
        forward_noise(s, np.zeros(2), 1, np.zeros(3))


def test_predict_x0_inverts_forward_noise():
    rng = np.random.default_rng(0)
    s = make_schedule(12, 1e-3, 0.35)
    for _ in range(200):
        x0 = rng.uniform(-1, 1, size=(5, 3))
        eps = rng.standard_normal((5, 3))
        t = rng.integers(1, 13, size=5)
        xt = forward_noise(s, x0, t, eps)
        back = predict_x0(s, xt, t, eps)
        assert np.max(np.abs(back - x0)) < 1e-12


def test_predict_x0_numeric_case():
    s = make_schedule(1, 0.36, 0.36)
    # x_t = 1.4 with true eps 1.0 came from x0 = 1.0
    assert predict_x0(s, np.array([1.4]), 1, np.array([1.0]))[0] == \
        pytest.approx(1.0, abs=1e-15)


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


def test_zero_net_single_step_sample_is_scaled_noise():
    policy = _zero_policy(steps=1, beta=0.36)
    obs = np.zeros((4, 4))
    draws = np.random.default_rng(42).standard_normal((4, 2))
    out = sample_action_batch(policy, obs, np.random.default_rng(42))
    np.testing.assert_allclose(out, np.clip(draws / 0.8, -1, 1),
                               rtol=0, atol=1e-15)


def test_samples_always_clamped():
    rng = np.random.default_rng(1)
    sched = default_schedule(5)
    policy = DiffusionPolicy.create(6, 3, sched, rng, hidden=16)
    obs = rng.standard_normal((64, 6))
    for _ in range(5):
        out = sample_action_batch(policy, obs, rng)
        assert np.all(out >= -1.0) and np.all(out <= 1.0)


def test_sampling_deterministic_under_seed():
    rng = np.random.default_rng(2)
    sched = default_schedule(4)
    policy = DiffusionPolicy.create(5, 3, sched, rng, hidden=16)
    obs = rng.standard_normal((8, 5))
    a = sample_action_batch(policy, obs, np.random.default_rng(123))
    b = sample_action_batch(policy, obs, np.random.default_rng(123))
    assert np.array_equal(a, b)


def test_single_obs_wrapper_matches_batch():
    rng = np.random.default_rng(3)
    sched = default_schedule(3)
    policy = DiffusionPolicy.create(5, 3, sched, rng, hidden=16)
    obs = rng.standard_normal(5)
    a = sample_action(policy, obs, np.random.default_rng(7))
    b = sample_action_batch(policy, obs[None, :], np.random.default_rng(7))[0]
    assert np.array_equal(a, b)


def test_ema_flag_selects_the_ema_net():
    rng = np.random.default_rng(4)
    sched = make_schedule(2, 0.1, 0.2)
    policy = DiffusionPolicy.create(5, 3, sched, rng, hidden=16)
    policy.ema_net.b3 += 5.0  # force the copies apart
    obs = rng.standard_normal((4, 5))
    a = sample_action_batch(policy, obs, np.random.default_rng(9), use_ema=True)
    b = sample_action_batch(policy, obs, np.random.default_rng(9), use_ema=False)
    assert not np.array_equal(a, b)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def test_zero_net_loss_is_expected_noise_norm():
    # with eps_hat = 0 the loss is E||eps||^2 = action_dim
    policy = _zero_policy(obs_dim=3, action_dim=2, steps=4, beta=0.2)
    rng = np.random.default_rng(5)
    obs = rng.standard_normal((10_000, 3))
    actions = rng.uniform(-1, 1, size=(10_000, 2))
    loss, _ = denoising_loss(policy, obs, actions, rng)
    assert loss == pytest.approx(2.0, rel=0.05)


def test_perfect_oracle_loss_is_zero():
    # constant-bias net predicts exactly the injected constant noise
    policy = _zero_policy(obs_dim=3, action_dim=2, steps=3, beta=0.2,
                          bias=[0.7, -0.2])
    rng = np.random.default_rng(6)
    obs = rng.standard_normal((32, 3))
    actions = rng.uniform(-1, 1, size=(32, 2))
    t = rng.integers(1, 4, size=32)
    eps = np.tile(np.array([0.7, -0.2]), (32, 1))
    loss, grads = denoising_loss_terms(policy, obs, actions, t, eps)
    assert loss == pytest.approx(0.0, abs=1e-24)
    assert all(np.all(g == 0.0) for g in grads)


def test_denoising_loss_gradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    sched = make_schedule(3, 0.05, 0.3)
    policy = DiffusionPolicy.create(4, 2, sched, rng, hidden=8)
    obs = rng.standard_normal((6, 4))
    actions = rng.uniform(-1, 1, size=(6, 2))
    t = rng.integers(1, 4, size=6)
    eps = rng.standard_normal((6, 2))
    _, grads = denoising_loss_terms(policy, obs, actions, t, eps)
    h = 1e-6
    for p, g in zip(policy.net.params(), grads):
        flat_p, flat_g = p.ravel(), g.ravel()
        for i in range(0, flat_p.size, 7):  # spot-check a stride of entries
            orig = flat_p[i]
            flat_p[i] = orig + h
            hi, _ = denoising_loss_terms(policy, obs, actions, t, eps)
            flat_p[i] = orig - h
            lo, _ = denoising_loss_terms(policy, obs, actions, t, eps)
            flat_p[i] = orig
            fd = (hi - lo) / (2 * h)
            assert flat_g[i] == pytest.approx(fd, rel=1e-4, abs=1e-7)


def test_rollout_backward_matches_finite_differences():
    rng = np.random.default_rng(8)
    sched = make_schedule(3, 0.05, 0.3)
    policy = DiffusionPolicy.create(4, 2, sched, rng, hidden=8)
    obs = rng.standard_normal((5, 4))
    coeffs = rng.standard_normal((5, 2))

    def loss_with_fresh_noise():
        a, trace = rollout_sample(policy, obs, np.random.default_rng(99))
        return float(np.sum(coeffs * a)), trace

    base, trace = loss_with_fresh_noise()
    # finite differences break only within h of the clamp kink at +-1
    assert np.min(np.abs(np.abs(trace["x0_raw"]) - 1.0)) > 1e-4
    grads = rollout_backward(policy, trace, coeffs)
    h = 1e-6
    for p, g in zip(policy.net.params(), grads):
        flat_p, flat_g = p.ravel(), g.ravel()
        for i in range(0, flat_p.size, 11):
            orig = flat_p[i]
            flat_p[i] = orig + h
            hi, _ = loss_with_fresh_noise()
            flat_p[i] = orig - h
            lo, _ = loss_with_fresh_noise()
            flat_p[i] = orig
            fd = (hi - lo) / (2 * h)
            assert flat_g[i] == pytest.approx(fd, rel=1e-4, abs=1e-7)


def test_rollout_clamp_blocks_gradient_when_saturated():
    # huge constant bias saturates the final action, so no gradient flows
    policy = _zero_policy(obs_dim=3, action_dim=2, steps=1, beta=0.36,
                          bias=[50.0, 50.0])
    obs = np.zeros((4, 3))
    a, trace = rollout_sample(policy, obs, np.random.default_rng(10))
    assert np.all(np.abs(a) == 1.0)
    grads = rollout_backward(policy, trace, np.ones((4, 2)))
    assert all(np.all(g == 0.0) for g in grads)


def test_bc_training_reduces_loss_on_fixed_mapping():
    rng = np.random.default_rng(11)
    sched = default_schedule(4)
    policy = DiffusionPolicy.create(3, 2, sched, rng, hidden=32)
    opt = nets.AdamState.for_params(policy.net.params(), lr=1e-3)
    obs = rng.standard_normal((256, 3))
    actions = np.tanh(obs[:, :2])  # deterministic demo policy
    first = None
    for step in range(400):
        loss, grads = denoising_loss(policy, obs, actions, rng)
        if first is None:
            first = loss
        nets.adam_step(policy.net.params(), grads, opt)
    assert loss < 0.5 * first
