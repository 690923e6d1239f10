"""Binary checkpoint format for network parameters.

Layout (little-endian throughout):

    magic   4 bytes  b"SDAM"
    version u32      1 = plain network, 2 = diffusion policy
    widths  u32 count, then one u32 per width

Version 2 inserts a schedule section after the widths:

    steps      u32   number of denoising steps T
    beta_min   f64
    beta_max   f64
    action_dim u32

Then the payload: for each affine layer in order, the weight matrix in
row-major float64 followed by the bias vector.  A version-2 file holds
two parameter sets back to back (online noise net, then its EMA copy).
Round-trips are bitwise exact.
"""

from __future__ import annotations

import struct

import numpy as np

from .nets import Mlp

MAGIC = b"SDAM"
VERSION_MLP = 1
VERSION_DIFFUSION = 2


class CheckpointError(ValueError):
    """Malformed or truncated checkpoint file."""


def _write_params(fh, net):
    for p in net.params():
        fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def _read_exact(fh, n, path):
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointError(f"{path}: truncated (wanted {n} bytes, got {len(buf)})")
    return buf


def _read_params(fh, widths, path):
    params = []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        w = np.frombuffer(
            _read_exact(fh, 8 * fan_in * fan_out, path), dtype="<f8"
        ).reshape(fan_in, fan_out).copy()
        b = np.frombuffer(_read_exact(fh, 8 * fan_out, path), dtype="<f8").copy()
        params.extend([w, b])
    return params


def _write_header(fh, version, widths):
    fh.write(MAGIC)
    fh.write(struct.pack("<I", version))
    fh.write(struct.pack("<I", len(widths)))
    fh.write(struct.pack(f"<{len(widths)}I", *widths))


def _read_header(fh, path):
    magic = _read_exact(fh, 4, path)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    version = struct.unpack("<I", _read_exact(fh, 4, path))[0]
    if version not in (VERSION_MLP, VERSION_DIFFUSION):
        raise CheckpointError(f"{path}: unsupported version {version}")
    n = struct.unpack("<I", _read_exact(fh, 4, path))[0]
    widths = struct.unpack(f"<{n}I", _read_exact(fh, 4 * n, path))
    return version, widths


def save_mlp(net, path):
    with open(path, "wb") as fh:
        _write_header(fh, VERSION_MLP, net.widths)
        _write_params(fh, net)


def load_mlp(path, out_act):
    """Load a plain network; the output head is not stored in the file."""
    with open(path, "rb") as fh:
        version, widths = _read_header(fh, path)
        if version != VERSION_MLP:
            raise CheckpointError(f"{path}: expected a plain network checkpoint")
        params = _read_params(fh, widths, path)
        trailing = fh.read(1)
    if trailing:
        raise CheckpointError(f"{path}: trailing bytes after parameters")
    return Mlp(widths, out_act, params=params)


def save_diffusion(policy, path):
    """Persist a diffusion policy: schedule header plus both nets."""
    sched = policy.schedule
    with open(path, "wb") as fh:
        _write_header(fh, VERSION_DIFFUSION, policy.net.widths)
        fh.write(struct.pack("<I", sched.steps))
        fh.write(struct.pack("<d", sched.beta_min))
        fh.write(struct.pack("<d", sched.beta_max))
        fh.write(struct.pack("<I", policy.action_dim))
        _write_params(fh, policy.net)
        _write_params(fh, policy.ema_net)


def load_diffusion(path):
    from .diffusion import DiffusionPolicy, make_schedule

    with open(path, "rb") as fh:
        version, widths = _read_header(fh, path)
        if version != VERSION_DIFFUSION:
            raise CheckpointError(f"{path}: expected a diffusion checkpoint")
        steps = struct.unpack("<I", _read_exact(fh, 4, path))[0]
        beta_min = struct.unpack("<d", _read_exact(fh, 8, path))[0]
        beta_max = struct.unpack("<d", _read_exact(fh, 8, path))[0]
        action_dim = struct.unpack("<I", _read_exact(fh, 4, path))[0]
        net = Mlp(widths, "identity", params=_read_params(fh, widths, path))
        ema = Mlp(widths, "identity", params=_read_params(fh, widths, path))
        trailing = fh.read(1)
    if trailing:
        raise CheckpointError(f"{path}: trailing bytes after parameters")
    schedule = make_schedule(steps, beta_min, beta_max)
    return DiffusionPolicy(net=net, ema_net=ema, schedule=schedule,
                           action_dim=action_dim)
