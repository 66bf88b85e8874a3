"""Run configuration: a flat JSON object with a schema version.

Every key is optional; missing keys take the defaults below and unknown keys
are rejected. Defaults::

    schema_version      1
    model               "traffic_lwr"   one of traffic_lwr, traffic_nn, crowd_sf, crowd_nn
    lwr_variant         "log"           "log" or "linear"
    hidden              [4]             hidden layer sizes of the network models
    L_min               2.0             lower bound on the vehicle length (m)
    mass, radius        1.0, 0.25       pedestrian mass and radius
    tau, B              0.5, 0.1        relaxation time, exponential range
    walls_file          null            CSV x,y,tangent_x,tangent_y; null = straight corridor
    corridor_length     10.0            corridor used when walls_file is null
    corridor_width      4.0
    wall_spacing        0.1
    data                []              track CSV files, one dataset each
    lane                null            keep only rows with this lane value
    traffic_dt_data     0.2             traffic reference grid spacing (s)
    crowd_dt_data       0.04            crowd reference grid spacing (s)
    crowd_steps         25              crowd window length in grid steps
    min_agents          2               minimum vehicles per traffic sequence
    dt                  0.04            explicit Euler step (s); must divide the grid spacing
    rho, eps            0.95, 1e-6      ADADELTA decay and offset
    eta1, eta2          1.0, 0.55       gradient noise variance eta1 / (1 + k)^eta2
    batch               16
    iterations          2000
    eval_every          10              full-cost evaluation interval
    checkpoint_every    100
    seed                0
    threads             1
    init                null            initial parameters; null = family default
    params              null            parameters for simulate, cost, force-grid, pair-study;
                                        crowd_sf falls back to (0.0044, 34.9539, 9.8894)
    params_file         null            checkpoint JSON to read parameters from
    synth_sequences     50
    synth_agents        [2, 4]          inclusive range of agents per sequence
    synth_noise         0.05            position noise std (m)
    synth_params        null            truth; null = (22, 5) for LWR, family default otherwise
    synth_nodes         26              grid nodes per synthetic sequence
    gradcheck_instances 20
    gradcheck_agents    [2, 4]
    gradcheck_nodes     [3, 25]
    gradcheck_step      1e-6
    gradcheck_tol       1e-5
    grid_extent         0.5             crowd force grids cover [-extent, extent]^2
    traffic_gap_max     50.0            traffic force curves cover gaps in [0, traffic_gap_max]
    grid_resolution     101
    grid_dv             [[0.0, -2.0], [0.0, 0.0]]   relative velocities for crowd force grids
    scenario_file       null            pair-study scenarios
    out_dir             "out"
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

from .dynamics import MODEL_KINDS

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    schema_version: int = SCHEMA_VERSION
    model: str = "traffic_lwr"
    lwr_variant: str = "log"
    hidden: list = field(default_factory=lambda: [4])
    L_min: float = 2.0
    mass: float = 1.0
    radius: float = 0.25
    tau: float = 0.5
    B: float = 0.1
    walls_file: str | None = None
    corridor_length: float = 10.0
    corridor_width: float = 4.0
    wall_spacing: float = 0.1
    data: list = field(default_factory=list)
    lane: str | None = None
    traffic_dt_data: float = 0.2
    crowd_dt_data: float = 0.04
    crowd_steps: int = 25
    min_agents: int = 2
    dt: float = 0.04
    rho: float = 0.95
    eps: float = 1e-6
    eta1: float = 1.0
    eta2: float = 0.55
    batch: int = 16
    iterations: int = 2000
    eval_every: int = 10
    checkpoint_every: int = 100
    seed: int = 0
    threads: int = 1
    init: list | None = None
    params: list | None = None
    params_file: str | None = None
    synth_sequences: int = 50
    synth_agents: list = field(default_factory=lambda: [2, 4])
    synth_noise: float = 0.05
    synth_params: list | None = None
    synth_nodes: int = 26
    gradcheck_instances: int = 20
    gradcheck_agents: list = field(default_factory=lambda: [2, 4])
    gradcheck_nodes: list = field(default_factory=lambda: [3, 25])
    gradcheck_step: float = 1e-6
    gradcheck_tol: float = 1e-5
    grid_extent: float = 0.5
    traffic_gap_max: float = 50.0
    grid_resolution: int = 101
    grid_dv: list = field(default_factory=lambda: [[0.0, -2.0], [0.0, 0.0]])
    scenario_file: str | None = None
    out_dir: str = "out"

    def __post_init__(self):
        self.validate()

    @property
    def is_crowd(self) -> bool:
        return self.model.startswith("crowd")

    @property
    def dt_data(self) -> float:
        return self.crowd_dt_data if self.is_crowd else self.traffic_dt_data

    def validate(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {self.schema_version}")
        if self.model not in MODEL_KINDS:
            raise ConfigError(f"model must be one of {', '.join(MODEL_KINDS)}")
        if self.lwr_variant not in ("log", "linear"):
            raise ConfigError("lwr_variant must be 'log' or 'linear'")
        if not self.hidden or any(int(h) < 1 for h in self.hidden):
            raise ConfigError("hidden must list positive layer sizes")
        positive = ("dt", "traffic_dt_data", "crowd_dt_data", "eps", "eta2", "gradcheck_step", "gradcheck_tol",
                    "grid_extent", "traffic_gap_max", "mass", "radius", "tau", "B", "corridor_length",
                    "corridor_width", "wall_spacing")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("batch", "iterations", "crowd_steps", "synth_sequences", "gradcheck_instances", "threads"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if not 0 < self.rho < 1:
            raise ConfigError("rho must lie in (0, 1)")
        if self.eta1 < 0 or self.synth_noise < 0:
            raise ConfigError("eta1 and synth_noise must be non-negative")
        if self.min_agents < 1 or self.synth_nodes < 2 or self.grid_resolution < 2:
            raise ConfigError("min_agents >= 1, synth_nodes >= 2 and grid_resolution >= 2 are required")
        stride = self.dt_data / self.dt
        if abs(stride - round(stride)) > 1e-9 * stride:
            raise ConfigError(f"dt={self.dt} does not divide the data spacing {self.dt_data}")
        for name in ("synth_agents", "gradcheck_agents", "gradcheck_nodes"):
            lo, hi = getattr(self, name)
            if not 1 <= lo <= hi:
                raise ConfigError(f"{name} must be an increasing pair of positive integers")
        if isinstance(self.data, str):
            self.data = [self.data]
        if self.lane is not None:
            self.lane = str(self.lane)

    def to_dict(self) -> dict:
        return asdict(self)

    def write(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("configuration must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
        try:
            return cls(**raw)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        except OSError as exc:
            raise ConfigError(str(exc)) from exc
        return cls.from_dict(raw)
