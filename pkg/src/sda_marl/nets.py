"""Small fixed-topology network engine.

Everything in this project runs on one architecture: three affine
layers (two hidden layers of equal conceptual role, one output layer),
rectifier activations on the hidden layers, and either a tanh or an
identity output head.  That is narrow enough that forward and reverse
passes are hand-written against the kernels module instead of going
through a general autodiff graph; callers that need gradients through a
chain of networks compose the input gradients returned by backward().

All parameters and activations are float64.  Given identical seeds and
inputs the engine is bitwise deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels

IDENTITY = "identity"
TANH = "tanh"


class DimensionMismatch(ValueError):
    """Input or gradient shape does not match the network."""


class StaleTape(ValueError):
    """Tape was not produced by a forward pass of this network."""


class NonFiniteGradient(FloatingPointError):
    """A gradient contained NaN or infinity."""


def _uniform_layer(rng, fan_in, fan_out):
    bound = 1.0 / np.sqrt(fan_in)
    w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
    b = rng.uniform(-bound, bound, size=fan_out)
    return w, b


class Mlp:
    """Three affine layers, relu hidden activations, tanh or identity head."""

    __slots__ = ("widths", "out_act", "w1", "b1", "w2", "b2", "w3", "b3")

    def __init__(self, widths, out_act, params=None, rng=None):
        widths = tuple(int(w) for w in widths)
        if len(widths) != 4 or any(w <= 0 for w in widths):
            raise ValueError(f"widths must be four positive ints, got {widths}")
        if out_act not in (IDENTITY, TANH):
            raise ValueError(f"out_act must be {IDENTITY!r} or {TANH!r}")
        self.widths = widths
        self.out_act = out_act
        if params is not None:
            self.w1, self.b1, self.w2, self.b2, self.w3, self.b3 = [
                np.ascontiguousarray(p, dtype=np.float64) for p in params
            ]
        else:
            if rng is None:
                rng = np.random.default_rng()
            self.w1, self.b1 = _uniform_layer(rng, widths[0], widths[1])
            self.w2, self.b2 = _uniform_layer(rng, widths[1], widths[2])
            self.w3, self.b3 = _uniform_layer(rng, widths[2], widths[3])

    @classmethod
    def create(cls, in_dim, out_dim, rng, hidden=256, out_act=TANH):
        """Freshly initialised net, weights uniform in +-1/sqrt(fan_in)."""
        return cls((in_dim, hidden, hidden, out_dim), out_act, rng=rng)

    def params(self):
        """Mutable parameter list in layer order (w1, b1, ..., b3)."""
        return [self.w1, self.b1, self.w2, self.b2, self.w3, self.b3]

    def copy(self):
        return Mlp(self.widths, self.out_act, params=[p.copy() for p in self.params()])

    @property
    def in_dim(self):
        return self.widths[0]

    @property
    def out_dim(self):
        return self.widths[3]


@dataclass
class Tape:
    """Activations cached by forward_batch, consumed by backward."""

    net: Mlp
    x: np.ndarray
    h1: np.ndarray
    h2: np.ndarray
    y: np.ndarray


def forward_batch(net, x):
    """Run a (batch, in_dim) array through the net.

    Returns (y, tape) where tape holds everything backward() needs.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.in_dim:
        raise DimensionMismatch(
            f"expected input (batch, {net.in_dim}), got {x.shape}"
        )
    h1, h2, y = kernels.mlp3_forward(
        x, net.w1, net.b1, net.w2, net.b2, net.w3, net.b3, net.out_act == TANH
    )
    return y, Tape(net, x, h1, h2, y)


def forward(net, x):
    """Single-vector convenience wrapper around forward_batch."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != net.in_dim:
        raise DimensionMismatch(f"expected input ({net.in_dim},), got {x.shape}")
    y, _ = forward_batch(net, x[None, :])
    return y[0]


def backward(net, tape, output_grad):
    """Accumulate gradients for one forward pass.

    output_grad is d(loss)/d(output), shaped like the tape's output.
    Returns (param_grads, input_grad): param_grads aligns with
    net.params(), input_grad is d(loss)/d(input batch) so losses can be
    chained through upstream networks.
    """
    if tape.net is not net:
        raise StaleTape("tape was recorded on a different network")
    dy = np.ascontiguousarray(output_grad, dtype=np.float64)
    if dy.shape != tape.y.shape:
        raise DimensionMismatch(
            f"output_grad shape {dy.shape} does not match output {tape.y.shape}"
        )
    out = kernels.mlp3_backward(
        tape.x, tape.h1, tape.h2, tape.y,
        net.w1, net.w2, net.w3, dy, net.out_act == TANH,
    )
    dw1, db1, dw2, db2, dw3, db3, dx = out
    return [dw1, db1, dw2, db2, dw3, db3], dx


@dataclass
class AdamState:
    """First/second moment buffers plus hyperparameters for one net."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls(
            lr=lr, beta1=beta1, beta2=beta2, eps=eps, step=0,
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
        )


def adam_step(params, grads, state):
    """Apply one Adam update in place.

    Rejects non-finite gradients outright: a NaN here would silently
    poison every later step.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise DimensionMismatch("params, grads and optimizer state must align")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient("non-finite gradient passed to adam_step")
    state.step += 1
    for p, g, m, v in zip(params, grads, state.m, state.v):
        kernels.adam_update(
            p.ravel(), np.ascontiguousarray(g, dtype=np.float64).ravel(),
            m.ravel(), v.ravel(),
            state.step, state.lr, state.beta1, state.beta2, state.eps,
        )


def soft_update(target, online, tau):
    """Polyak blend: target <- (1 - tau) * target + tau * online."""
    if target.widths != online.widths:
        raise DimensionMismatch("target and online network widths differ")
    for pt, po in zip(target.params(), online.params()):
        pt *= 1.0 - tau
        pt += tau * po


def ema_update(ema, online, decay):
    """Exponential moving average: ema <- decay * ema + (1 - decay) * online."""
    soft_update(ema, online, 1.0 - decay)
