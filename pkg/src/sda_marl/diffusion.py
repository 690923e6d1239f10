"""Conditional denoising diffusion policy over action vectors.

A policy holds a noise-prediction network (input: observation, noised
action, normalised timestep; output: predicted noise), an EMA copy of
it used for behaviour and supervision targets, and a variance schedule.

Forward corruption of a clean action x0 at step t:

    x_t = sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps,  eps ~ N(0, I)

where abar_t is the cumulative product of alpha_t = 1 - beta_t.
Sampling runs the reverse chain from pure noise:

    x_{t-1} = (x_t - beta_t / sqrt(1 - abar_t) * eps_hat) / sqrt(alpha_t)
              + sigma_t * z

with z = 0 on the final step and sigma_t^2 = beta_t * (1 - abar_{t-1})
/ (1 - abar_t) (abar_0 = 1).  Actions are clamped to [-1, 1] once, at
the end of the chain.

The reverse chain is also differentiable: rollout_sample records one
tape per step with the injected noises frozen, and rollout_backward
chains d(loss)/d(action) back through every step into noise-network
parameter gradients.  That path is what lets a critic's action-value
gradient train the diffusion policy directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nets
from .nets import Mlp

DEFAULT_BETA_MIN = 1e-4
DEFAULT_BETA_MAX = 0.02
BETA_CEILING = 0.999


class ScheduleError(ValueError):
    """Invalid variance schedule request."""


@dataclass(frozen=True)
class NoiseSchedule:
    """Precomputed per-step quantities, index 0 holding step t=1."""

    steps: int
    beta_min: float
    beta_max: float
    betas: np.ndarray
    alphas: np.ndarray
    alpha_cumprod: np.ndarray
    alpha_cumprod_prev: np.ndarray
    sigmas: np.ndarray


def make_schedule(steps, beta_min, beta_max):
    """Linear beta schedule over `steps` denoising steps."""
    if steps < 1:
        raise ScheduleError(f"steps must be >= 1, got {steps}")
    if not (0.0 < beta_min <= beta_max < 1.0):
        raise ScheduleError(
            f"need 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]"
        )
    betas = np.linspace(beta_min, beta_max, steps)
    alphas = 1.0 - betas
    abar = np.cumprod(alphas)
    abar_prev = np.concatenate([[1.0], abar[:-1]])
    sigmas = np.sqrt(betas * (1.0 - abar_prev) / (1.0 - abar))
    return NoiseSchedule(
        steps=int(steps), beta_min=float(beta_min), beta_max=float(beta_max),
        betas=betas, alphas=alphas, alpha_cumprod=abar,
        alpha_cumprod_prev=abar_prev, sigmas=sigmas,
    )


def default_schedule(steps):
    """Few-step schedule from the 1000-step linear convention.

    The canonical 1e-4..0.02 range is scaled by 1000/steps so the chain
    still destroys the signal by step T; the scaled values are clipped
    below 1 to stay a valid schedule.
    """
    scale = 1000.0 / steps
    lo = min(DEFAULT_BETA_MIN * scale, BETA_CEILING)
    hi = min(DEFAULT_BETA_MAX * scale, BETA_CEILING)
    return make_schedule(steps, lo, hi)


def _check_t(schedule, t):
    t = np.asarray(t)
    if np.any(t < 1) or np.any(t > schedule.steps):
        raise ScheduleError(
            f"timestep out of range 1..{schedule.steps}: {t}"
        )
    return t


def forward_noise(schedule, x0, t, eps):
    """Corrupt clean samples x0 to step t with the given noise.

    t may be a scalar or a per-sample integer array; eps must match x0
    in shape.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != x0.shape:
        raise ValueError(f"eps shape {eps.shape} != x0 shape {x0.shape}")
    t = _check_t(schedule, t)
    abar = schedule.alpha_cumprod[t - 1]
    if x0.ndim == 2 and np.ndim(abar) == 1:
        abar = abar[:, None]
    return np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * eps


def predict_x0(schedule, x_t, t, eps_hat):
    """Invert forward_noise given a noise estimate."""
    x_t = np.asarray(x_t, dtype=np.float64)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    if eps_hat.shape != x_t.shape:
        raise ValueError(f"eps_hat shape {eps_hat.shape} != x_t shape {x_t.shape}")
    t = _check_t(schedule, t)
    abar = schedule.alpha_cumprod[t - 1]
    if x_t.ndim == 2 and np.ndim(abar) == 1:
        abar = abar[:, None]
    return (x_t - np.sqrt(1.0 - abar) * eps_hat) / np.sqrt(abar)


@dataclass
class DiffusionPolicy:
    """Noise net, its EMA copy, the schedule, and the action size."""

    net: Mlp
    ema_net: Mlp
    schedule: NoiseSchedule
    action_dim: int

    @classmethod
    def create(cls, obs_dim, action_dim, schedule, rng, hidden=256):
        net = Mlp.create(obs_dim + action_dim + 1, action_dim, rng,
                         hidden=hidden, out_act=nets.IDENTITY)
        return cls(net=net, ema_net=net.copy(), schedule=schedule,
                   action_dim=action_dim)

    @property
    def obs_dim(self):
        return self.net.in_dim - self.action_dim - 1


def _eps_input(policy, obs, x_t, t):
    """Stack [obs, noised action, t/T] into the noise-net input batch."""
    tfeat = np.full((obs.shape[0], 1), t / policy.schedule.steps)
    return np.concatenate([obs, x_t, tfeat], axis=1)


def sample_action_batch(policy, obs, rng, use_ema=True):
    """Draw one action per observation row via the reverse chain."""
    action, _ = rollout_sample(policy, obs, rng, use_ema=use_ema)
    return action


def sample_action(policy, obs, rng, use_ema=True):
    """Single-observation convenience wrapper."""
    obs = np.asarray(obs, dtype=np.float64)
    return sample_action_batch(policy, obs[None, :], rng, use_ema=use_ema)[0]


def rollout_sample(policy, obs, rng, use_ema=False):
    """Reverse chain with every tape and noise recorded.

    Returns (action, trace).  The trace feeds rollout_backward; pass
    use_ema=False when gradients w.r.t. the online net are needed.
    """
    obs = np.ascontiguousarray(obs, dtype=np.float64)
    if obs.ndim != 2 or obs.shape[1] != policy.obs_dim:
        raise ValueError(f"expected obs (batch, {policy.obs_dim}), got {obs.shape}")
    net = policy.ema_net if use_ema else policy.net
    sched = policy.schedule
    batch = obs.shape[0]
    x = rng.standard_normal((batch, policy.action_dim))
    tapes = []
    for t in range(sched.steps, 0, -1):
        i = t - 1
        y, tape = nets.forward_batch(net, _eps_input(policy, obs, x, t))
        tapes.append((t, tape))
        coef = sched.betas[i] / np.sqrt(1.0 - sched.alpha_cumprod[i])
        x = (x - coef * y) / np.sqrt(sched.alphas[i])
        if t > 1:
            x = x + sched.sigmas[i] * rng.standard_normal((batch, policy.action_dim))
    action = np.clip(x, -1.0, 1.0)
    trace = {"tapes": tapes, "x0_raw": x, "net": net}
    return action, trace


def rollout_backward(policy, trace, d_action):
    """Backpropagate d(loss)/d(action) through a recorded reverse chain.

    Returns gradients aligned with the noise net's params().  The final
    clamp passes gradient only where it did not saturate.
    """
    net = trace["net"]
    sched = policy.schedule
    obs_dim = policy.obs_dim
    adim = policy.action_dim
    mask = (np.abs(trace["x0_raw"]) <= 1.0).astype(np.float64)
    g = np.asarray(d_action, dtype=np.float64) * mask
    grads = [np.zeros_like(p) for p in net.params()]
    # tapes were recorded t = T..1; walk back up the chain
    for t, tape in reversed(trace["tapes"]):
        i = t - 1
        inv_sqrt_alpha = 1.0 / np.sqrt(sched.alphas[i])
        coef = sched.betas[i] / np.sqrt(1.0 - sched.alpha_cumprod[i])
        d_eps = -(coef * inv_sqrt_alpha) * g
        step_grads, d_input = nets.backward(net, tape, d_eps)
        for acc, sg in zip(grads, step_grads):
            acc += sg
        g = inv_sqrt_alpha * g + d_input[:, obs_dim:obs_dim + adim]
    return grads


def denoising_loss_terms(policy, obs, actions, t, eps, use_online=True):
    """Denoising objective with explicit timesteps and noises.

    Mean over the batch of the squared noise-prediction error summed
    over action components.  Returns (loss, grads) for the online net.
    Keeping t and eps as arguments makes the loss a deterministic
    function of the parameters, which finite-difference checks rely on.
    """
    obs = np.ascontiguousarray(obs, dtype=np.float64)
    actions = np.ascontiguousarray(actions, dtype=np.float64)
    t = np.asarray(t)
    eps = np.ascontiguousarray(eps, dtype=np.float64)
    batch = obs.shape[0]
    x_t = forward_noise(policy.schedule, actions, t, eps)
    net = policy.net if use_online else policy.ema_net
    tfeat = (t / policy.schedule.steps).reshape(batch, 1)
    inp = np.concatenate([obs, x_t, tfeat], axis=1)
    eps_hat, tape = nets.forward_batch(net, inp)
    resid = eps_hat - eps
    loss = float(np.mean(np.sum(resid * resid, axis=1)))
    grads, _ = nets.backward(net, tape, (2.0 / batch) * resid)
    return loss, grads


def denoising_loss(policy, obs, actions, rng):
    """Denoising objective with t ~ U{1..T} and eps ~ N(0, I) drawn here."""
    obs = np.asarray(obs, dtype=np.float64)
    batch = obs.shape[0]
    t = rng.integers(1, policy.schedule.steps + 1, size=batch)
    eps = rng.standard_normal((batch, policy.action_dim))
    return denoising_loss_terms(policy, obs, actions, t, eps)
