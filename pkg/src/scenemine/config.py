"""Pipeline configuration: every tunable threshold in one place.

Layering: built-in defaults < config file (flat JSON object) < CLI flags.
Keys in the file use the dataclass field names.
"""

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

INDIVIDUAL_FEATURES = (
    "max_speed",
    "max_accel",
    "max_jerk",
    "waiting_period",
    "speed_limit_excess",
    "lane_following_fraction",
    "anomaly",
)

INTERACTION_FEATURES = (
    "min_thw",
    "min_ttc",
    "max_drac",
    "min_delta_mttcp_traj",
    "min_delta_mttcp_map",
    "collision_count",
)


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    # pairing / leader-follower surrogates
    interaction_gate: float = 50.0          # m, pair inclusion on min co-valid distance
    cone_half_angle: float = math.radians(15.0)
    follower_speed_floor: float = 0.1       # m/s, below this THW is undefined
    gap_floor: float = 0.01                 # m, bumper gap clamp

    # conflict points
    reach_radius: float = 2.0               # m, first-reach radius at a conflict point
    map_conflict_margin: float = 2.0        # m, feature-to-path gate

    # individual features
    waiting_speed: float = 0.5              # m/s
    waiting_radius: float = 5.0             # m, distance to a conflict region
    lane_follow_lateral: float = 2.0        # m
    lane_follow_heading: float = math.pi / 4.0
    shared_point_eps: float = 1e-6          # lane points coincident across >= 2 lanes

    # lane assignment
    sigma_d: float = 1.0
    sigma_theta: float = 0.35
    max_lateral: float = 5.0
    max_deflection: float = 0.6
    beam_width: int = 8
    sequential_join_gap: float = 5.0        # m, end-to-start distance treated as sequential

    # future extrapolation
    fe_window: int = 5                      # steps of history differencing for s-dot

    # anomaly primitives
    anomaly_clusters: int = 32
    anomaly_points: int = 16
    anomaly_seed: int = 0

    # normalization
    lower_quantile: float = 0.05
    upper_quantile: float = 0.95
    inverse_eps: float = 0.1

    # scoring
    weights_individual: dict = field(default_factory=lambda: {k: 1.0 for k in INDIVIDUAL_FEATURES})
    weights_interaction: dict = field(default_factory=lambda: {k: 1.0 for k in INTERACTION_FEATURES})

    # orchestration
    workers: int = 1

    def __post_init__(self):
        for name in ("interaction_gate", "reach_radius", "waiting_radius", "sigma_d",
                     "sigma_theta", "max_lateral", "gap_floor", "inverse_eps"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.beam_width < 1:
            raise ConfigError("beam_width must be >= 1")
        if not 0.0 <= self.lower_quantile < self.upper_quantile <= 1.0:
            raise ConfigError("need 0 <= lower_quantile < upper_quantile <= 1")
        missing = [k for k in INDIVIDUAL_FEATURES if k not in self.weights_individual]
        missing += [k for k in INTERACTION_FEATURES if k not in self.weights_interaction]
        if missing:
            raise ConfigError(f"weights missing for features: {missing}")


def load_config(path=None, overrides=None) -> PipelineConfig:
    """Defaults, optionally overlaid with a JSON file and explicit overrides."""
    values: dict = {}
    if path is not None:
        raw = json.loads(Path(path).read_text())
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: expected a flat JSON object")
        values.update(raw)
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    known = {f.name for f in dataclasses.fields(PipelineConfig)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    base = PipelineConfig()
    for key in ("weights_individual", "weights_interaction"):
        if key in values:
            merged = dict(getattr(base, key))
            merged.update(values[key])
            values[key] = merged
    return dataclasses.replace(base, **values)
