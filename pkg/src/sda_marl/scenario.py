"""Scenario presets and strict JSON configuration.

A scenario pins the team layout (AUV and target counts, obstacles) and
every physical parameter group.  Four built-in presets cover the team
sizes studied: 2 AUVs / 1 target up to 8 AUVs / 3 targets.  JSON
configs may override any field; unknown keys anywhere in the document
are hard errors so typos cannot silently fall back to defaults.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .env import (CollisionParams, FluidParams, RewardParams, SonarParams,
                  UnderwaterWorld, WorldParams)
from .quality import QualityParams


class ConfigError(ValueError):
    """Malformed scenario or training configuration."""


@dataclass
class Obstacle:
    pos: tuple
    radius: float


@dataclass
class ScenarioConfig:
    name: str
    n_auvs: int
    n_targets: int
    obstacles: list = field(default_factory=list)
    world: WorldParams = field(default_factory=WorldParams)
    fluid: FluidParams = field(default_factory=FluidParams)
    sonar: SonarParams = field(default_factory=SonarParams)
    collision: CollisionParams = field(default_factory=CollisionParams)
    reward: RewardParams = field(default_factory=RewardParams)
    quality: QualityParams = field(default_factory=QualityParams)
    train: dict = field(default_factory=dict)


def _default_obstacles(count):
    spots = [((0.45, 0.45, -0.2), 0.05),
             ((-0.5, 0.35, 0.15), 0.05),
             ((0.1, -0.55, 0.25), 0.05)]
    return [Obstacle(pos=p, radius=r) for p, r in spots[:count]]


def preset(name):
    table = {
        "auv2_t1": (2, 1, 1),
        "auv4_t2": (4, 2, 2),
        "auv6_t2": (6, 2, 2),
        "auv8_t3": (8, 3, 3),
    }
    if name not in table:
        raise ConfigError(
            f"unknown preset {name!r}; available: {', '.join(sorted(table))}")
    n_auvs, n_targets, n_obs = table[name]
    return ScenarioConfig(name=name, n_auvs=n_auvs, n_targets=n_targets,
                          obstacles=_default_obstacles(n_obs))


PRESET_NAMES = ("auv2_t1", "auv4_t2", "auv6_t2", "auv8_t3")


def _apply_section(obj, section, data, path):
    valid = {f.name for f in dataclasses.fields(obj)}
    unknown = set(data) - valid
    if unknown:
        raise ConfigError(
            f"unknown keys in {path}: {', '.join(sorted(unknown))}")
    return dataclasses.replace(obj, **data)


def from_dict(data):
    """Build a scenario from a plain dict, rejecting unknown keys."""
    top_sections = {"world": WorldParams, "fluid": FluidParams,
                    "sonar": SonarParams, "collision": CollisionParams,
                    "reward": RewardParams, "quality": QualityParams}
    known = {"name", "preset", "n_auvs", "n_targets", "obstacles",
             "train"} | set(top_sections)
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")

    if "preset" in data:
        cfg = preset(data["preset"])
    else:
        for req in ("n_auvs", "n_targets"):
            if req not in data:
                raise ConfigError(f"config without preset must set {req!r}")
        cfg = ScenarioConfig(name=data.get("name", "custom"),
                             n_auvs=int(data["n_auvs"]),
                             n_targets=int(data["n_targets"]))
    if "name" in data:
        cfg = dataclasses.replace(cfg, name=data["name"])
    if "n_auvs" in data:
        cfg = dataclasses.replace(cfg, n_auvs=int(data["n_auvs"]))
    if "n_targets" in data:
        cfg = dataclasses.replace(cfg, n_targets=int(data["n_targets"]))

    if "obstacles" in data:
        obstacles = []
        for i, ob in enumerate(data["obstacles"]):
            extra = set(ob) - {"pos", "radius"}
            if extra:
                raise ConfigError(
                    f"unknown keys in obstacles[{i}]: {', '.join(sorted(extra))}")
            pos = tuple(float(x) for x in ob["pos"])
            if len(pos) != 3:
                raise ConfigError(f"obstacles[{i}].pos must have 3 components")
            obstacles.append(Obstacle(pos=pos, radius=float(ob["radius"])))
        cfg = dataclasses.replace(cfg, obstacles=obstacles)

    for key, _cls in top_sections.items():
        if key in data:
            cfg = dataclasses.replace(
                cfg, **{key: _apply_section(getattr(cfg, key), key,
                                            data[key], key)})
    if "train" in data:
        # validated against TrainConfig fields when the trainer resolves it
        cfg = dataclasses.replace(cfg, train=dict(data["train"]))
    return cfg


def load_scenario(path):
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from e
    return from_dict(data)


def to_dict(cfg):
    """Full resolved scenario as JSON-serialisable primitives."""
    out = dataclasses.asdict(cfg)
    out["obstacles"] = [{"pos": list(o["pos"]), "radius": o["radius"]}
                        for o in out["obstacles"]]
    return out


def build_world(cfg, horizon):
    return UnderwaterWorld(
        cfg.n_auvs, cfg.n_targets,
        obstacle_pos=[o.pos for o in cfg.obstacles] if cfg.obstacles else None,
        obstacle_radius=[o.radius for o in cfg.obstacles] if cfg.obstacles else None,
        horizon=horizon, world=cfg.world, fluid=cfg.fluid, sonar=cfg.sonar,
        collision=cfg.collision, reward=cfg.reward,
    )
