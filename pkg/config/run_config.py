"""
Run configuration: one YAML (or JSON) file per experiment, validated with pydantic.
"""
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from config.settings import (
    ACTUATOR_LAG_S,
    AGENT_MIN_LEVEL,
    BEARING_PROCESS_SIGMA_DEG,
    CAMERA_CX,
    CAMERA_CY,
    CAMERA_FX,
    CAMERA_FY,
    CAMERA_HEIGHT,
    CAMERA_HEIGHT_M,
    CAMERA_PITCH_DEG,
    CAMERA_WIDTH,
    CRUISE_SPEED_MPS,
    DEFAULT_ALPHAS,
    DESIRED_SPEED_GAIN,
    EPISODE_TICK_LIMIT,
    FOOTPRINT_LENGTH_M,
    FOOTPRINT_WIDTH_M,
    INTERVENTION_HORIZON_S,
    LATERAL_GAINS,
    LONGITUDINAL_GAINS,
    OFF_ROUTE_LIMIT_M,
    ORACLE_THROTTLE_GAIN,
    OUTPUT_DIRECTORY,
    PID_INTEGRAL_LIMIT,
    POSITION_PROCESS_SIGMA_M,
    REJOIN_DISTANCE_M,
    SHIFT_LIMIT_M,
    SHIFT_STEP_M,
    STEP_DT_S,
    SUPERVISOR_LOOKAHEAD_M,
    SUPERVISOR_SPEED_MPS,
    TRACK_WIDTH_M,
    V_MAX_MPS,
    WHEEL_RADIUS_M,
    YAW_RATE_MAX_RPS,
)
from src.bev import CameraIntrinsics
from src.controller import DualAgentController, PidGains, weights_from_alphas
from src.errors import ConfigError
from src.localization import PoseFilter
from src.predictor import OracleParams
from src.vehicle_sim import SensorNoise, VehicleParams
from utils.helpers import log_message

PathLike = Union[str, Path]
PredictorChoice = Literal["oracle", "playback", "external-stream"]
PATH_FIELDS = ("world", "route", "playback_record")


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class NoiseConfig(_Section):
    gnss_sigma_m: float = Field(0.0, ge=0)
    bearing_sigma_deg: float = Field(0.0, ge=0)
    depth_relative_sigma: float = Field(0.0, ge=0)

    def to_noise(self, seed: int) -> SensorNoise:
        return SensorNoise(self.gnss_sigma_m, self.bearing_sigma_deg, self.depth_relative_sigma, seed)


class PidGainsConfig(_Section):
    kp: float
    ki: float
    kd: float
    integral_limit: float = Field(PID_INTEGRAL_LIMIT, gt=0)

    def to_gains(self) -> PidGains:
        return PidGains(self.kp, self.ki, self.kd, self.integral_limit)


def _gains(values: Tuple[float, float, float]) -> PidGainsConfig:
    kp, ki, kd = values
    return PidGainsConfig(kp=kp, ki=ki, kd=kd)


class ControllerConfig(_Section):
    lateral: PidGainsConfig = Field(default_factory=lambda: _gains(LATERAL_GAINS))
    longitudinal: PidGainsConfig = Field(default_factory=lambda: _gains(LONGITUDINAL_GAINS))
    alphas: Tuple[float, float, float] = DEFAULT_ALPHAS
    speed_gain: float = Field(DESIRED_SPEED_GAIN, gt=0)
    min_level: float = Field(AGENT_MIN_LEVEL, gt=0, lt=1)

    @field_validator("alphas")
    @classmethod
    def alphas_positive(cls, value):
        if min(value) <= 0:
            raise ValueError("loss weights (alphas) must be positive")
        return value

    def build(self) -> DualAgentController:
        return DualAgentController(
            lateral=self.lateral.to_gains(),
            longitudinal=self.longitudinal.to_gains(),
            weights=weights_from_alphas(*self.alphas),
            speed_gain=self.speed_gain,
            min_level=self.min_level,
        )


class VehicleConfig(_Section):
    wheel_radius_m: float = Field(WHEEL_RADIUS_M, gt=0)
    track_width_m: float = Field(TRACK_WIDTH_M, gt=0)
    v_max: float = Field(V_MAX_MPS, gt=0)
    yaw_rate_max: float = Field(YAW_RATE_MAX_RPS, gt=0)
    dt: float = Field(STEP_DT_S, gt=0)
    lag_s: float = Field(ACTUATOR_LAG_S, gt=0)
    footprint_length_m: float = Field(FOOTPRINT_LENGTH_M, gt=0)
    footprint_width_m: float = Field(FOOTPRINT_WIDTH_M, gt=0)

    def to_params(self) -> VehicleParams:
        return VehicleParams(**self.model_dump())


class CameraConfig(_Section):
    width: int = Field(CAMERA_WIDTH, gt=0)
    height: int = Field(CAMERA_HEIGHT, gt=0)
    fx: float = Field(CAMERA_FX, gt=0)
    fy: float = Field(CAMERA_FY, gt=0)
    cx: float = CAMERA_CX
    cy: float = CAMERA_CY
    cam_height_m: float = Field(CAMERA_HEIGHT_M, gt=0)
    cam_pitch_deg: float = Field(CAMERA_PITCH_DEG, ge=-45, le=45)

    def to_intrinsics(self) -> CameraIntrinsics:
        try:
            return CameraIntrinsics(**self.model_dump())
        except ValueError as e:
            raise ConfigError(str(e)) from e


class OracleConfig(_Section):
    speed_target: float = Field(CRUISE_SPEED_MPS, gt=0)
    shift_step_m: float = Field(SHIFT_STEP_M, gt=0)
    shift_limit_m: float = Field(SHIFT_LIMIT_M, ge=0)
    clearance_cells: int = Field(4, ge=0)
    throttle_gain: float = Field(ORACLE_THROTTLE_GAIN, ge=0)

    def to_params(self, vehicle: VehicleConfig) -> OracleParams:
        return OracleParams(
            shift_step_m=self.shift_step_m,
            shift_limit_m=self.shift_limit_m,
            clearance_cells=self.clearance_cells,
            throttle_gain=self.throttle_gain,
            v_max=vehicle.v_max,
            yaw_rate_max=vehicle.yaw_rate_max,
        )


class LocalizationConfig(_Section):
    """GNSS/bearing fusion with wheel odometry; measurement noise comes from the `noise` section."""
    enabled: bool = True
    position_process_sigma_m: float = Field(POSITION_PROCESS_SIGMA_M, ge=0)
    bearing_process_sigma_deg: float = Field(BEARING_PROCESS_SIGMA_DEG, ge=0)

    def build(self, noise: NoiseConfig, vehicle: VehicleConfig) -> PoseFilter:
        if not self.enabled:
            return PoseFilter(track_width_m=vehicle.track_width_m, dt=vehicle.dt)
        return PoseFilter(
            gnss_sigma_m=noise.gnss_sigma_m,
            bearing_sigma_deg=noise.bearing_sigma_deg,
            track_width_m=vehicle.track_width_m,
            dt=vehicle.dt,
            position_process_sigma_m=self.position_process_sigma_m,
            bearing_process_sigma_deg=self.bearing_process_sigma_deg,
        )


class InterventionConfig(_Section):
    horizon_s: float = Field(INTERVENTION_HORIZON_S, gt=0)
    off_route_m: float = Field(OFF_ROUTE_LIMIT_M, gt=0)
    rejoin_m: float = Field(REJOIN_DISTANCE_M, gt=0)
    speed_mps: float = Field(SUPERVISOR_SPEED_MPS, gt=0)
    lookahead_m: float = Field(SUPERVISOR_LOOKAHEAD_M, gt=0)


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    seed: int
    world: Path
    route: Optional[Path] = None
    predictor: PredictorChoice = "oracle"
    playback_record: Optional[Path] = None
    external_command: Optional[List[str]] = None
    noise: NoiseConfig = Field(default_factory=NoiseConfig)
    controller: ControllerConfig = Field(default_factory=ControllerConfig)
    vehicle: VehicleConfig = Field(default_factory=VehicleConfig)
    camera: CameraConfig = Field(default_factory=CameraConfig)
    oracle: OracleConfig = Field(default_factory=OracleConfig)
    intervention: InterventionConfig = Field(default_factory=InterventionConfig)
    localization: LocalizationConfig = Field(default_factory=LocalizationConfig)
    tick_limit: int = Field(EPISODE_TICK_LIMIT, gt=0)
    output_dir: Path = Path(OUTPUT_DIRECTORY)
    save_rasters: bool = True

    @field_validator(*PATH_FIELDS)
    @classmethod
    def file_exists(cls, value: Optional[Path]):
        if value is not None and not value.is_file():
            raise ValueError(f"file not found: {value}")
        return value

    @model_validator(mode="after")
    def predictor_inputs(self):
        if self.predictor == "playback" and self.playback_record is None:
            raise ValueError("predictor 'playback' requires playback_record")
        if self.predictor == "external-stream" and not self.external_command:
            raise ValueError("predictor 'external-stream' requires external_command")
        return self

    def with_overrides(self, **overrides: Any) -> "RunConfig":
        """Copy with dotted-key overrides (e.g. noise.gnss_sigma_m=1.0), validated again."""
        data = self.model_dump()
        _apply_overrides(data, overrides)
        return _validate(data)

    def to_json_dict(self) -> Dict[str, Any]:
        return self.model_dump(mode="json")


def _apply_overrides(data: Dict[str, Any], overrides: Dict[str, Any]):
    for key, value in overrides.items():
        if value is None:
            continue
        target = data
        *parents, leaf = key.split(".")
        for part in parents:
            target = target.setdefault(part, {})
        target[leaf] = value


def _validate(data: Dict[str, Any]) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        problems = [f"{'.'.join(str(p) for p in err['loc']) or 'config'}: {err['msg']}" for err in e.errors()]
        raise ConfigError("Configuration errors:\n" + "\n".join(f"- {p}" for p in problems)) from e


def load_run_config(path: PathLike, **overrides: Any) -> RunConfig:
    """Load a run configuration; relative file paths resolve against the config file's directory."""
    config_path = Path(path)
    try:
        data = yaml.safe_load(config_path.read_text(encoding="utf-8")) or {}
    except OSError as e:
        raise ConfigError(f"Cannot read run configuration {config_path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"Run configuration {config_path} is not valid YAML: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"Run configuration {config_path} must be a mapping")

    for name in PATH_FIELDS:
        value = data.get(name)
        if value and not Path(value).is_absolute():
            data[name] = str(config_path.parent / value)
    _apply_overrides(data, overrides)
    config = _validate(data)
    log_message(f"Loaded run configuration {config_path} (seed {config.seed}, predictor {config.predictor})")
    return config
