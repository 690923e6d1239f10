"""Underwater multi-AUV tracking world.

Geometry lives in a normalised cube [-1, 1]^3; one unit is
meters_per_unit (default 2500 m), so the default 80 m interaction
thresholds become 0.032 in normalised units.  Sonar works in metres;
everything else in cube units.

Per-AUV forces: commanded thrust, hydrodynamic terms (quadratic drag,
lift perpendicular to the flow, virtual-mass reaction to flow
acceleration), and smoothed contact forces against other AUVs and
obstacles.  Integration is semi-implicit Euler with multiplicative
damping:

    v <- (v + dt * F / m) * (1 - D)
    p <- clip(p + dt * v, -1, 1)

Hydrodynamic quantities are expressed in the flow frame: u = current -
body velocity is the water's velocity as felt by the hull, and the
virtual-mass force responds to the backward difference of u across
steps.  Targets fly straight at constant speed and reflect off the
cube walls.  Episodes end only by step-count exhaustion.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

UP = np.array([0.0, 0.0, 1.0])


class EnvAbort(RuntimeError):
    """Simulation produced a non-finite state."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass
class FluidParams:
    """Water properties and hull coefficients (SI where noted)."""

    density: float = 1000.0          # kg / m^3
    viscosity: float = 1e-3          # Pa s, recorded but not used dynamically
    drag_coef: float = 0.8
    lift_coef: float = 0.2
    virtual_mass_coef: float = 0.5
    frontal_area: float = 0.01       # normalised units^2
    volume: float = 0.001            # normalised units^3
    damping: float = 0.25            # dimensionless velocity damping D
    dt: float = 0.1                  # s


@dataclass
class SonarParams:
    """Active-sonar budget terms, all in dB."""

    source_level: float = 200.0
    target_strength: float = 15.0
    noise_level: float = 70.0
    directivity_index: float = 10.0
    detection_threshold: float = 10.0
    absorption_db_per_km: float = 0.05


@dataclass
class CollisionParams:
    smoothing: float = 0.02          # softplus width k, normalised units
    contact_force: float = 10.0      # force scale at touching distance
    auv_radius: float = 0.01


@dataclass
class RewardParams:
    alpha: float = 1.0               # tracking weight
    beta: float = 1.0                # separation weight
    gamma_land: float = 1.0          # obstacle weight
    w: float = 2.0                   # close-tracking bonus slope
    min_track: float = 0.032         # 80 m
    min_separation: float = 0.032    # 80 m
    min_obstacle: float = 0.08
    landing_penalty: float = 5.0


@dataclass
class WorldParams:
    meters_per_unit: float = 2500.0
    max_thrust: float = 0.5
    mass: float = 1.0
    target_speed: float = 0.03
    ring_radius: float = 0.8
    target_spread: float = 0.15
    current_uniform: tuple = (0.005, 0.005, 0.0)
    vortex_strength: float = 0.01


@dataclass
class WorldState:
    auv_pos: np.ndarray
    auv_vel: np.ndarray
    prev_flow_vel: np.ndarray        # u_c - v from the previous step
    target_pos: np.ndarray
    target_vel: np.ndarray
    obstacle_pos: np.ndarray
    obstacle_radius: np.ndarray
    assigned: np.ndarray             # target index per AUV
    step_count: int = 0


# ---------------------------------------------------------------------------
# sonar
# ---------------------------------------------------------------------------


def transmission_loss(sonar, range_m):
    """Spherical spreading plus absorption, range in metres."""
    r = np.asarray(range_m, dtype=np.float64)
    if np.any(r <= 0.0):
        raise ValueError(f"sonar range must be positive, got {range_m}")
    return 20.0 * np.log10(r) + sonar.absorption_db_per_km * r / 1000.0


def excess_margin(sonar, range_m):
    """Active-sonar excess over the detection threshold in dB.

    EM = SL - 2 TL + TS - (NL - DI) - DT; the echo is detected when the
    margin is non-negative.
    """
    tl = transmission_loss(sonar, range_m)
    return (sonar.source_level - 2.0 * tl + sonar.target_strength
            - (sonar.noise_level - sonar.directivity_index)
            - sonar.detection_threshold)


# ---------------------------------------------------------------------------
# forces
# ---------------------------------------------------------------------------


def hydro_force(fluid, flow_vel, flow_acc):
    """Drag + lift + virtual mass for one hull.

    flow_vel is the water velocity relative to the hull (current minus
    body velocity); drag therefore points along flow_vel, opposing the
    hull's motion through the water.  Lift is perpendicular to the flow
    in the plane spanned by the flow and world-up, and vanishes when
    the flow is (anti)parallel to up.  The virtual-mass force follows
    the flow's acceleration.
    """
    u = np.asarray(flow_vel, dtype=np.float64)
    speed = np.linalg.norm(u)
    q = 0.5 * fluid.density * speed * speed * fluid.frontal_area
    force = fluid.density * fluid.virtual_mass_coef * fluid.volume \
        * np.asarray(flow_acc, dtype=np.float64)
    if speed > 0.0:
        uhat = u / speed
        force = force + q * fluid.drag_coef * uhat
        lift_dir = UP - np.dot(UP, uhat) * uhat
        norm = np.linalg.norm(lift_dir)
        if norm > 1e-12:
            force = force + q * fluid.lift_coef * (lift_dir / norm)
    return force


def collision_sigma(distance, radius_sum, smoothing):
    """Smoothed overlap k * ln(1 + exp(-(d - r_sum) / k)).

    Computed via logaddexp so deep overlaps cannot overflow.
    """
    z = -(np.asarray(distance, dtype=np.float64) - radius_sum) / smoothing
    return smoothing * np.logaddexp(0.0, z)


def collision_force(p_a, p_b, r_a, r_b, params):
    """Repulsive force exerted on body a by body b."""
    p_a = np.asarray(p_a, dtype=np.float64)
    p_b = np.asarray(p_b, dtype=np.float64)
    delta = p_a - p_b
    d = np.linalg.norm(delta)
    if d == 0.0:
        raise ValueError("collision force undefined at coincident positions; "
                         "spawn jitter should keep bodies distinct")
    sigma = collision_sigma(d, r_a + r_b, params.smoothing)
    return params.contact_force * sigma * (delta / d)


def _pairwise_collisions(pos, radii_a, other_pos, radii_b, params):
    """Summed contact forces of every `other` body on every `pos` body."""
    if other_pos.shape[0] == 0:
        return np.zeros_like(pos)
    delta = pos[:, None, :] - other_pos[None, :, :]
    d = np.linalg.norm(delta, axis=2)
    if np.any(d == 0.0):
        raise ValueError("coincident bodies in collision computation")
    sigma = collision_sigma(d, radii_a[:, None] + radii_b[None, :],
                            params.smoothing)
    scale = params.contact_force * sigma / d
    return np.einsum("ij,ijk->ik", scale, delta)


# ---------------------------------------------------------------------------
# current field
# ---------------------------------------------------------------------------


def current_at(world, pos):
    """Steady current: uniform drift plus a solid-body vortex about z."""
    p = np.atleast_2d(np.asarray(pos, dtype=np.float64))
    u = np.tile(np.asarray(world.current_uniform, dtype=np.float64),
                (p.shape[0], 1))
    u[:, 0] -= world.vortex_strength * p[:, 1]
    u[:, 1] += world.vortex_strength * p[:, 0]
    return u if np.ndim(pos) == 2 else u[0]


# ---------------------------------------------------------------------------
# tasking
# ---------------------------------------------------------------------------


def assign_targets(auv_pos, target_pos):
    """Distance-greedy assignment with balanced group sizes.

    Every target ends up with floor(N/M) or ceil(N/M) AUVs.  Phase one
    fills each target up to the floor, nearest pairs first; phase two
    hands out the remainder, again nearest first.  Deterministic for
    fixed inputs (ties broken by index order).
    """
    auv_pos = np.asarray(auv_pos, dtype=np.float64)
    target_pos = np.asarray(target_pos, dtype=np.float64)
    n, m = auv_pos.shape[0], target_pos.shape[0]
    if m == 0:
        raise ValueError("need at least one target")
    dists = np.linalg.norm(auv_pos[:, None, :] - target_pos[None, :, :], axis=2)
    order = sorted(((dists[i, j], i, j) for i in range(n) for j in range(m)))
    assigned = np.full(n, -1, dtype=np.int64)
    counts = np.zeros(m, dtype=np.int64)
    for cap in (n // m, n // m + 1):
        for _, i, j in order:
            if assigned[i] < 0 and counts[j] < cap:
                assigned[i] = j
                counts[j] += 1
    return assigned


# ---------------------------------------------------------------------------
# observation and reward
# ---------------------------------------------------------------------------


def obs_dim(n_auvs, n_targets, n_obstacles):
    return 6 + 3 * (n_targets + (n_auvs - 1) + n_obstacles)


def _detect_mask(sonar, world, rel):
    """Sonar gate for a (n, m, 3) block of relative positions."""
    d = np.linalg.norm(rel, axis=2)
    range_m = np.maximum(d * world.meters_per_unit, 1.0)
    return excess_margin(sonar, range_m) >= 0.0


def observe_all(state, sonar, world):
    """Observation matrix, one row per AUV.

    Layout per row: own position (3), own velocity (3), then relative
    positions of every target, every other AUV (ascending index, self
    skipped), and every obstacle.  Entities whose sonar echo falls
    below the detection threshold contribute zeros.
    """
    n = state.auv_pos.shape[0]
    blocks = [state.auv_pos, state.auv_vel]

    rel_t = state.target_pos[None, :, :] - state.auv_pos[:, None, :]
    rel_t = np.where(_detect_mask(sonar, world, rel_t)[:, :, None], rel_t, 0.0)
    blocks.append(rel_t.reshape(n, -1))

    if n > 1:
        rel_a = state.auv_pos[None, :, :] - state.auv_pos[:, None, :]
        gated = np.where(_detect_mask(sonar, world, rel_a)[:, :, None], rel_a, 0.0)
        keep = ~np.eye(n, dtype=bool)
        blocks.append(gated[keep].reshape(n, -1))

    if state.obstacle_pos.shape[0] > 0:
        rel_o = state.obstacle_pos[None, :, :] - state.auv_pos[:, None, :]
        rel_o = np.where(_detect_mask(sonar, world, rel_o)[:, :, None], rel_o, 0.0)
        blocks.append(rel_o.reshape(n, -1))

    return np.concatenate(blocks, axis=1)


def observe(state, sonar, world, agent):
    return observe_all(state, sonar, world)[agent]


def reward_components(state, params):
    """Per-AUV tracking, separation, and obstacle terms.

    Tracking rewards closing on the assigned target, with a bonus slope
    inside the minimum tracking distance; separation penalises the
    nearest-AUV distance once it drops under the safety minimum (and is
    zero for a lone AUV); the obstacle term fires a flat penalty inside
    the landing threshold.
    """
    n = state.auv_pos.shape[0]
    d_t = np.linalg.norm(
        state.auv_pos - state.target_pos[state.assigned], axis=1)
    r_pos = np.where(
        d_t <= params.min_track,
        params.w * d_t - (params.w + 1.0) * params.min_track,
        -d_t,
    )

    if n > 1:
        sep = np.linalg.norm(
            state.auv_pos[:, None, :] - state.auv_pos[None, :, :], axis=2)
        np.fill_diagonal(sep, np.inf)
        d_a = sep.min(axis=1)
        r_col = np.where(d_a < params.min_separation,
                         d_a - params.min_separation, -d_a)
    else:
        # a lone AUV has no separation term
        r_col = np.zeros(n)

    if state.obstacle_pos.shape[0] > 0:
        d_l = np.linalg.norm(
            state.auv_pos[:, None, :] - state.obstacle_pos[None, :, :],
            axis=2).min(axis=1)
        r_land = np.where(d_l < params.min_obstacle,
                          -params.landing_penalty, 0.0)
    else:
        r_land = np.zeros(n)

    return r_pos, r_col, r_land


def reward_all(state, params):
    r_pos, r_col, r_land = reward_components(state, params)
    return params.alpha * r_pos + params.beta * r_col + params.gamma_land * r_land


# ---------------------------------------------------------------------------
# the world
# ---------------------------------------------------------------------------


class UnderwaterWorld:
    """Stateful simulation wrapper over the pure helpers above."""

    def __init__(self, n_auvs, n_targets, obstacle_pos=None,
                 obstacle_radius=None, horizon=400, world=None, fluid=None,
                 sonar=None, collision=None, reward=None):
        if n_auvs < 1 or n_targets < 1:
            raise ValueError("need at least one AUV and one target")
        self.n_auvs = int(n_auvs)
        self.n_targets = int(n_targets)
        self.horizon = int(horizon)
        self.world = world or WorldParams()
        self.fluid = fluid or FluidParams()
        self.sonar = sonar or SonarParams()
        self.collision = collision or CollisionParams()
        self.reward = reward or RewardParams()
        if obstacle_pos is None:
            self.obstacle_pos = np.zeros((0, 3))
            self.obstacle_radius = np.zeros(0)
        else:
            self.obstacle_pos = np.asarray(obstacle_pos, dtype=np.float64)
            self.obstacle_radius = np.asarray(obstacle_radius, dtype=np.float64)
            if self.obstacle_pos.shape[0] != self.obstacle_radius.shape[0]:
                raise ValueError("obstacle positions and radii must align")
        self.state = None

    @property
    def obs_dim(self):
        return obs_dim(self.n_auvs, self.n_targets, self.obstacle_pos.shape[0])

    @property
    def action_dim(self):
        return 3

    def reset(self, rng):
        """Spawn targets near the centre and AUVs on a surrounding ring.

        The ring is exact: every AUV sits at ring_radius from the
        target centroid, evenly spaced in angle with one random phase.
        """
        w = self.world
        m = self.n_targets
        if m == 1:
            tpos = rng.uniform(-0.5, 0.5, size=(1, 3)) * np.array(
                [w.target_spread, w.target_spread, 0.1])
        else:
            phase = rng.uniform(0.0, 2.0 * np.pi)
            ang = phase + 2.0 * np.pi * np.arange(m) / m
            tpos = np.stack([
                w.target_spread * np.cos(ang),
                w.target_spread * np.sin(ang),
                rng.uniform(-0.05, 0.05, size=m),
            ], axis=1)
        tdir = rng.standard_normal((m, 3))
        tdir /= np.linalg.norm(tdir, axis=1, keepdims=True)
        tvel = w.target_speed * tdir

        centroid = tpos.mean(axis=0)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        ang = phase + 2.0 * np.pi * np.arange(self.n_auvs) / self.n_auvs
        apos = centroid[None, :] + w.ring_radius * np.stack(
            [np.cos(ang), np.sin(ang), np.zeros(self.n_auvs)], axis=1)

        avel = np.zeros((self.n_auvs, 3))
        self.state = WorldState(
            auv_pos=apos, auv_vel=avel,
            prev_flow_vel=current_at(w, apos) - avel,
            target_pos=tpos, target_vel=tvel,
            obstacle_pos=self.obstacle_pos.copy(),
            obstacle_radius=self.obstacle_radius.copy(),
            assigned=assign_targets(apos, tpos),
        )
        return observe_all(self.state, self.sonar, self.world)

    def step(self, actions):
        """Advance one tick; returns (obs, rewards, done, info)."""
        s = self.state
        if s is None:
            raise RuntimeError("step before reset")
        fl, w = self.fluid, self.world
        acts = np.clip(np.asarray(actions, dtype=np.float64), -1.0, 1.0)
        if acts.shape != (self.n_auvs, 3):
            raise ValueError(f"actions must be ({self.n_auvs}, 3), got {acts.shape}")

        flow = current_at(w, s.auv_pos) - s.auv_vel
        flow_acc = (flow - s.prev_flow_vel) / fl.dt
        force = acts * w.max_thrust
        for i in range(self.n_auvs):
            force[i] += hydro_force(fl, flow[i], flow_acc[i])
        radii = np.full(self.n_auvs, self.collision.auv_radius)
        if self.n_auvs > 1:
            delta = s.auv_pos[:, None, :] - s.auv_pos[None, :, :]
            d = np.linalg.norm(delta, axis=2)
            np.fill_diagonal(d, np.inf)
            if np.any(d == 0.0):
                raise EnvAbort("coincident AUVs", {"step": s.step_count})
            sigma = collision_sigma(d, radii[:, None] + radii[None, :],
                                    self.collision.smoothing)
            # diagonal contributes nothing: sigma finite, d infinite
            scale = self.collision.contact_force * sigma / d
            force += np.einsum("ij,ijk->ik", scale, delta)
        force += _pairwise_collisions(s.auv_pos, radii, s.obstacle_pos,
                                      s.obstacle_radius, self.collision)

        s.auv_vel = (s.auv_vel + fl.dt * force / w.mass) * (1.0 - fl.damping)
        s.auv_pos = np.clip(s.auv_pos + fl.dt * s.auv_vel, -1.0, 1.0)
        s.prev_flow_vel = flow

        s.target_pos = s.target_pos + fl.dt * s.target_vel
        for axis in range(3):
            over = s.target_pos[:, axis] > 1.0
            under = s.target_pos[:, axis] < -1.0
            s.target_pos[over, axis] = 2.0 - s.target_pos[over, axis]
            s.target_pos[under, axis] = -2.0 - s.target_pos[under, axis]
            s.target_vel[over | under, axis] *= -1.0

        s.step_count += 1
        if not (np.all(np.isfinite(s.auv_pos)) and np.all(np.isfinite(s.auv_vel))):
            raise EnvAbort(
                f"non-finite state at step {s.step_count}",
                diagnostics={"step": s.step_count,
                             "auv_pos": s.auv_pos.copy(),
                             "auv_vel": s.auv_vel.copy()},
            )

        obs = observe_all(s, self.sonar, self.world)
        r_pos, r_col, r_land = reward_components(s, self.reward)
        rewards = (self.reward.alpha * r_pos + self.reward.beta * r_col
                   + self.reward.gamma_land * r_land)
        done = s.step_count >= self.horizon
        info = {"r_pos": r_pos, "r_col": r_col, "r_land": r_land}
        return obs, rewards, done, info
