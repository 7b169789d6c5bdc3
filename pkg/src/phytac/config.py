"""Run configuration: one YAML (or JSON) file, namespaced sections.

Every tunable lives in a dataclass below; unknown keys and ill-typed values
are rejected at load time with :class:`~phytac.errors.ConfigError`.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError

TEXTURE_CLASSES = ("smooth", "fine_grain", "coarse_grain", "ridged")


def _per_class(*values):
    return field(default_factory=lambda: dict(zip(TEXTURE_CLASSES, values)))


def _need(section, obj, **ok):
    for name, good in ok.items():
        if not good:
            raise ConfigError(f"{section}.{name} out of range: {getattr(obj, name)!r}")


@dataclass
class PlantConfig:
    stiffness_k: dict = _per_class(0.030, 0.035, 0.040, 0.045)  # N/mm^3
    imprint_gain: float = 0.6  # intensity per mm penetration
    baseline_intensity: float = 0.1
    texture_amplitude: dict = _per_class(0.0, 0.03, 0.05, 0.06)
    gravity_g: float = 9.81
    safety_s: float = 1.05
    aperture_max: float = 100.0  # mm
    force_max: float = 25.0  # N
    sensor_noise_sigma: float = 0.0

    def validate(self):
        if set(self.stiffness_k) != set(TEXTURE_CLASSES) or min(self.stiffness_k.values()) <= 0:
            raise ConfigError("plant.stiffness_k must be > 0 for every texture class")
        if set(self.texture_amplitude) != set(TEXTURE_CLASSES):
            raise ConfigError("plant.texture_amplitude must name every texture class")
        if not 0 <= self.baseline_intensity < 1:
            raise ConfigError("plant.baseline_intensity must be in [0, 1)")
        if self.safety_s < 1:
            raise ConfigError("plant.safety_s must be >= 1")
        if self.aperture_max <= 0 or self.force_max <= 0 or self.gravity_g <= 0:
            raise ConfigError("plant.aperture_max, force_max, gravity_g must be > 0")
        if self.sensor_noise_sigma < 0:
            raise ConfigError("plant.sensor_noise_sigma must be >= 0")


@dataclass
class GeometryConfig:
    window_w: float = 20.0  # mm
    window_h: float = 20.0
    grid_rows: int = 32
    grid_cols: int = 32
    contact_depth: float = 8.0  # mm slab behind the contact plane kept as P_c
    k_neighbors: int = 12
    alpha: float = 0.2
    beta: float = 0.6
    gamma: float = 0.2
    delta: float = 0.5
    top_n: int = 4

    def validate(self):
        if self.window_w <= 0 or self.window_h <= 0 or self.contact_depth <= 0:
            raise ConfigError("geometry window and contact_depth must be > 0")
        if self.grid_rows < 8 or self.grid_cols < 8:
            raise ConfigError("geometry grid must be at least 8x8")
        if self.k_neighbors < 4:
            raise ConfigError("geometry.k_neighbors must be >= 4")
        weights = (self.alpha, self.beta, self.gamma, self.delta)
        if min(weights) < 0 or self.delta > 1 or abs(self.alpha + self.beta + self.gamma - 1) > 1e-9:
            raise ConfigError("geometry weights: all >= 0, alpha+beta+gamma = 1, delta <= 1")
        if self.top_n < 1:
            raise ConfigError("geometry.top_n must be >= 1")


@dataclass
class DataConfig:
    n_objects: int = 100
    grasps_per_object: int = 1
    frames_per_grasp: int = 5
    seed: int = 0
    size_range: list = field(default_factory=lambda: [15.0, 28.0])  # half-axis, mm
    exponent_range: list = field(default_factory=lambda: [0.3, 1.0])  # superquadric shape
    mass_range: list = field(default_factory=lambda: [0.05, 0.35])  # kg
    friction_mu: dict = _per_class(0.3, 0.5, 0.8, 1.0)
    surface_points: int = 40000
    overshoot: float = 0.5  # sweep continues this fraction of (u0 - u*) past u*

    def validate(self):
        if min(self.n_objects, self.grasps_per_object, self.frames_per_grasp) < 0:
            raise ConfigError("data counts must be >= 0")
        for name in ("size_range", "exponent_range", "mass_range"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise ConfigError(f"data.{name} must satisfy 0 < lo <= hi")
        if set(self.friction_mu) != set(TEXTURE_CLASSES):
            raise ConfigError("data.friction_mu must name every texture class")
        if not all(0.1 < mu <= 1.5 for mu in self.friction_mu.values()):
            raise ConfigError("data.friction_mu values must lie in (0.1, 1.5]")


@dataclass
class CodecConfig:
    latent_dim: int = 16
    hidden: list = field(default_factory=lambda: [256, 64])
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 1e-3
    e_warm: int = 10
    lambda_kl: float = 1e-3

    def validate(self):
        if self.latent_dim < 2:
            raise ConfigError("codec.latent_dim must be >= 2")
        if len(self.hidden) != 2 or min(self.hidden) < 1:
            raise ConfigError("codec.hidden must list two positive widths")
        _need("codec", self, e_warm=self.e_warm >= 1, epochs=self.epochs >= 0,
              batch_size=self.batch_size >= 1, learning_rate=self.learning_rate > 0)
        if self.lambda_kl < 0:
            raise ConfigError("codec.lambda_kl must be >= 0")


@dataclass
class DiffusionConfig:
    T: int = 200
    beta_min: float = 5e-4
    beta_max: float = 0.1
    ddim_steps: int = 20
    hidden: int = 128
    time_embed: int = 16
    steps: int = 2000
    batch_size: int = 64
    learning_rate: float = 2e-3

    def validate(self):
        if self.T < 2 or not 0 < self.beta_min <= self.beta_max < 1:
            raise ConfigError("diffusion schedule: T >= 2, 0 < beta_min <= beta_max < 1")
        if not 1 <= self.ddim_steps <= self.T:
            raise ConfigError("diffusion.ddim_steps must be in [1, T]")
        if self.hidden < 1 or self.time_embed < 2 or self.time_embed % 2:
            raise ConfigError("diffusion.hidden >= 1, diffusion.time_embed even and >= 2")
        _need("diffusion", self, steps=self.steps >= 0, batch_size=self.batch_size >= 1,
              learning_rate=self.learning_rate > 0)


@dataclass
class ControlConfig:
    delta_in: float = 0.15
    window_frames: int = 10
    q_weight: float = 1.0
    r_weight: float = 1.0
    forgetting: float = 0.98
    rls_init_cov: float = 1.0
    resynth_every: int = 5
    max_step_mm: float = 0.3
    frame_budget: int = 150
    start_offset_mm: float = 1.0
    post_hold_frames: int = 5
    tol_f: float = 0.15
    fixed_force_factor: float = 2.0
    open_loop_squeeze_mm: float = 1.0
    goal: str = "oracle"

    def validate(self):
        if self.delta_in <= 0 or self.window_frames < 1:
            raise ConfigError("control.delta_in > 0 and control.window_frames >= 1 required")
        if self.q_weight < 0 or self.r_weight <= 0:
            raise ConfigError("control: Q >= 0 and R > 0 required")
        if not 0 < self.forgetting <= 1:
            raise ConfigError("control.forgetting must be in (0, 1]")
        _need("control", self, rls_init_cov=self.rls_init_cov > 0, resynth_every=self.resynth_every >= 1,
              max_step_mm=self.max_step_mm > 0, frame_budget=self.frame_budget >= 0,
              post_hold_frames=self.post_hold_frames >= 0, tol_f=self.tol_f >= 0,
              open_loop_squeeze_mm=self.open_loop_squeeze_mm >= 0)
        if self.goal not in ("oracle", "ldm"):
            raise ConfigError("control.goal must be 'oracle' or 'ldm'")


@dataclass
class ExperimentConfig:
    episodes: int = 10
    policies: list = field(default_factory=lambda: ["phytac", "fixed-force", "open-loop"])
    metric_records: int = 50

    def validate(self):
        bad = set(self.policies) - {"phytac", "fixed-force", "open-loop"}
        if bad:
            raise ConfigError(f"experiment.policies: unknown {sorted(bad)}")
        _need("experiment", self, episodes=self.episodes >= 0, metric_records=self.metric_records >= 0)


@dataclass
class RunConfig:
    seed: int = 0
    out: str = "runs/default"
    plant: PlantConfig = field(default_factory=PlantConfig)
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    data: DataConfig = field(default_factory=DataConfig)
    codec: CodecConfig = field(default_factory=CodecConfig)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    control: ControlConfig = field(default_factory=ControlConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)

    def validate(self):
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if dataclasses.is_dataclass(value):
                value.validate()
        return self

    def to_dict(self):
        return dataclasses.asdict(self)


def _coerce(path, default, value):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected bool, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected int, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected list, got {value!r}")
        return list(value)
    if isinstance(default, dict):
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected mapping, got {value!r}")
        unknown = set(value) - set(default)
        if unknown:
            raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
        merged = dict(default)
        for k, v in value.items():
            merged[k] = _coerce(f"{path}.{k}", default[k], v)
        return merged
    return value


def _apply(obj, data, prefix=""):
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix or 'config'}: expected a mapping")
    names = {f.name for f in dataclasses.fields(obj)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(prefix + k for k in unknown)}")
    for key, value in data.items():
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current):
            _apply(current, value, prefix=f"{prefix}{key}.")
        else:
            setattr(obj, key, _coerce(prefix + key, current, value))
    return obj


def config_from_dict(data: dict | None) -> RunConfig:
    return _apply(RunConfig(), data or {}).validate()


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig().validate()
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text()
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (yaml.YAMLError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return config_from_dict(data)


def dump_config(cfg: RunConfig, path: str | Path):
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))
