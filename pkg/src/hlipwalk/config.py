"""Scenario configuration: JSON schema, validation and object builders."""
from __future__ import annotations

import json
from pathlib import Path as FsPath
from typing import Any, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .hlip import HlipParams, InvalidParameterError, LqrWeights
from .paths import InvalidPathError, Path, SpeedProfile, make_path
from .planner import MpcConfig, StepConstraints
from .sim import PushEvent, SurrogateModelConfig


class ConfigError(ValueError):
    """Invalid scenario configuration; ``field`` names the offending entry."""

    def __init__(self, message: str, field: str = ""):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class HlipSection(_Section):
    z0: float = 1.0
    g: float = 9.81
    T_ssp: float = 0.35
    T_dsp: float = 0.05


class LqrSection(_Section):
    Q: list[list[float]] = Field(default_factory=lambda: np.eye(3).tolist())
    R: float = 1.0


class MpcSection(_Section):
    N: int = 8
    alpha: float = 0.1
    s_l_min: float = -0.5
    s_l_max: float = 0.5
    s_w_min: float = 0.10
    s_w_max: float = 0.35
    w_pos: float = 1.0
    w_vel: float = 1.0
    tol: float = 1e-8
    max_iter: int = 2000
    max_outer: int = 10
    obstacle_margin: float = 0.15
    reanchor: bool = False


class ProfileSection(_Section):
    kind: Literal["trapezoid", "triangle"] = "trapezoid"
    v_max: float = 0.5
    accel: float = 0.25


class PathSection(_Section):
    shape: Literal["circle", "cardioid", "sinusoid", "square", "line", "point"] = "circle"
    geometry: dict[str, Any] = Field(default_factory=dict)
    profile: ProfileSection = Field(default_factory=ProfileSection)


class SurrogateSection(_Section):
    height_oscillation_amplitude: float = 0.02
    impact_velocity_loss: float = 0.03
    swing_tracking_error_std: float = 0.005
    mass: float = 33.0


class ObstacleSection(_Section):
    position: tuple[float, float]
    d: float

    @field_validator("d")
    @classmethod
    def _positive(cls, v):
        if not v > 0:
            raise ValueError("clearance d must be positive")
        return v


class PushSection(_Section):
    t_start: float
    duration: float
    force: tuple[float, float]


class DisturbanceSection(_Section):
    """Where the disturbance set W used for the invariant set comes from.

    ``w_file`` points at a W JSON written by ``estimate-w``; relative paths
    resolve against the config file. Without it W is estimated from the run's
    own samples, inflated by ``margin``.
    """

    w_file: str | None = None
    margin: float = 0.25

    @field_validator("margin")
    @classmethod
    def _nonneg(cls, v):
        if v < 0:
            raise ValueError("margin must be non-negative")
        return v


class ScenarioConfig(_Section):
    name: str = "scenario"
    hlip: HlipSection = Field(default_factory=HlipSection)
    lqr: LqrSection = Field(default_factory=LqrSection)
    mpc: MpcSection = Field(default_factory=MpcSection)
    path: PathSection = Field(default_factory=PathSection)
    surrogate: SurrogateSection = Field(default_factory=SurrogateSection)
    obstacles: list[ObstacleSection] = Field(default_factory=list)
    pushes: list[PushSection] = Field(default_factory=list)
    disturbance: DisturbanceSection = Field(default_factory=DisturbanceSection)
    duration: float | None = None
    settle_steps: int = 10
    seed: int = 0
    output_dir: str | None = None
    base_dir: str | None = Field(default=None, exclude=True)

    def hlip_params(self) -> HlipParams:
        return HlipParams(**self.hlip.model_dump())

    def lqr_weights(self) -> LqrWeights:
        return LqrWeights(np.array(self.lqr.Q, dtype=float), self.lqr.R)

    def mpc_config(self) -> MpcConfig:
        m = self.mpc.model_dump()
        cons = StepConstraints(*(m.pop(k) for k in ("s_l_min", "s_l_max", "s_w_min", "s_w_max")))
        return MpcConfig(constraints=cons, **m)

    def build_path(self) -> Path:
        prof = SpeedProfile(**self.path.profile.model_dump())
        return make_path(self.path.shape, dict(self.path.geometry), prof)

    def surrogate_model(self) -> SurrogateModelConfig:
        return SurrogateModelConfig(rng_seed=self.seed, **self.surrogate.model_dump())

    def push_events(self) -> list[PushEvent]:
        return [PushEvent(p.t_start, p.duration, p.force) for p in self.pushes]

    def obstacle_list(self) -> list[tuple[np.ndarray, float]]:
        return [(np.array(o.position, dtype=float), o.d) for o in self.obstacles]

    def w_path(self) -> FsPath | None:
        if self.disturbance.w_file is None:
            return None
        p = FsPath(self.disturbance.w_file)
        if not p.is_absolute() and self.base_dir:
            p = FsPath(self.base_dir) / p
        return p

    def validate_objects(self) -> None:
        """Build every derived object once so domain errors surface as ConfigError."""
        checks = [("hlip", self.hlip_params), ("lqr", self.lqr_weights), ("mpc", self.mpc_config),
                  ("path", self.build_path), ("surrogate", self.surrogate_model),
                  ("pushes", self.push_events)]
        for name, fn in checks:
            try:
                fn()
            except (InvalidParameterError, InvalidPathError, ValueError, TypeError) as exc:
                raise ConfigError(str(exc), _field_from(name, exc)) from exc
        if self.duration is not None and not self.duration > 0:
            raise ConfigError("duration must be positive", "duration")
        if self.settle_steps < 0:
            raise ConfigError("settle_steps must be non-negative", "settle_steps")

    def to_json(self) -> str:
        return self.model_dump_json(indent=2)


def _field_from(section: str, exc: Exception) -> str:
    words = str(exc).split()
    first = words[0].strip(":'\"") if words else ""
    fields = {
        "hlip": HlipSection.model_fields, "mpc": MpcSection.model_fields,
        "surrogate": SurrogateSection.model_fields, "lqr": LqrSection.model_fields,
        "pushes": PushSection.model_fields,
    }.get(section, {})
    return f"{section}.{first}" if first in fields else section


def parse_config(text: str, base_dir: str | None = None) -> ScenarioConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") \
            from exc
    if not isinstance(data, dict):
        raise ConfigError("top-level JSON value must be an object")
    try:
        cfg = ScenarioConfig.model_validate({**data, "base_dir": base_dir})
    except ValidationError as exc:
        err = exc.errors()[0]
        loc = ".".join(str(p) for p in err["loc"])
        raise ConfigError(err["msg"], loc) from exc
    cfg.validate_objects()
    return cfg


def load_config(path) -> ScenarioConfig:
    path = FsPath(path)
    return parse_config(path.read_text(), base_dir=str(path.parent))
