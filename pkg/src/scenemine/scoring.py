"""Criticality normalization, counterfactual probes, and scene scores.

Every feature is first re-oriented so larger means more critical (inverse for
time-gap style minima, negation for lane adherence), then affinely mapped from
the fit corpus's [p05, p95] onto [0, 1] with clamping. Trajectory scores are
weighted sums; the counterfactual variants replace an agent's future with a
constant-progress roll-forward along its history lane to expose conflicts the
recorded (reactive) future hides. The scene value pools per-agent maxima with
proximity weights and a (P + sqrt(N - P)) size correction.
"""

import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .config import INDIVIDUAL_FEATURES, INTERACTION_FEATURES, ConfigError, PipelineConfig
from .geometry import frenet_decode, frenet_encode
from .individual import IndividualFeatures
from .interaction import InteractionFeatures
from .lanes import LaneSequence
from .scenario import AgentTrack

INVERSE = "inverse"      # 1 / (x + eps): minima where small is critical
IDENTITY = "identity"
NEGATE = "negate"        # 1 - x: fractions where small is critical

ORIENTATIONS = {
    "max_speed": IDENTITY,
    "max_accel": IDENTITY,
    "max_jerk": IDENTITY,
    "waiting_period": IDENTITY,
    "speed_limit_excess": IDENTITY,
    "lane_following_fraction": NEGATE,
    "anomaly": IDENTITY,
    "min_thw": INVERSE,
    "min_ttc": INVERSE,
    "max_drac": IDENTITY,
    "min_delta_mttcp_traj": INVERSE,
    "min_delta_mttcp_map": INVERSE,
    "collision_count": IDENTITY,
}


class FeatureNormalizer(BaseEstimator, TransformerMixin):
    """Orientation + robust affine rescaling fit on a reference corpus.

    fit() takes a mapping feature_name -> 1-D array (or a pandas DataFrame).
    Features whose p05 equals p95 fall back to [min, max] anchors (heavy-zero
    counters stay monotone); truly constant features map to 0.5 and are
    flagged in ``constant_features_``.
    """

    def __init__(self, lower_quantile: float = 0.05, upper_quantile: float = 0.95,
                 inverse_eps: float = 0.1, fit_partition_id: str = "all"):
        self.lower_quantile = lower_quantile
        self.upper_quantile = upper_quantile
        self.inverse_eps = inverse_eps
        self.fit_partition_id = fit_partition_id

    def orient(self, name: str, values):
        kind = ORIENTATIONS.get(name)
        if kind is None:
            raise ConfigError(f"no orientation defined for feature '{name}'")
        values = np.asarray(values, float)
        if kind == INVERSE:
            return 1.0 / (values + self.inverse_eps)
        if kind == NEGATE:
            return 1.0 - values
        return values

    def fit(self, X, y=None, scenario_ids=None):
        columns = _as_columns(X)
        if not columns:
            raise ValueError("empty fit corpus")
        self.bounds_ = {}
        self.constant_features_ = []
        for name, values in columns.items():
            oriented = self.orient(name, values)
            oriented = oriented[np.isfinite(oriented)]
            if len(oriented) == 0:
                raise ValueError(f"feature '{name}' has no finite values to fit on")
            lo = float(np.quantile(oriented, self.lower_quantile))
            hi = float(np.quantile(oriented, self.upper_quantile))
            if lo == hi:
                lo = float(oriented.min())
                hi = float(oriented.max())
            if lo == hi:
                self.constant_features_.append(name)
                warnings.warn(f"feature '{name}' is constant over the fit corpus; "
                              "normalizing to 0.5", stacklevel=2)
            self.bounds_[name] = (lo, hi)
        self.fit_scenario_ids_ = tuple(sorted(set(scenario_ids))) if scenario_ids is not None else ()
        return self

    def normalize(self, name: str, values):
        """Oriented, rescaled, clamped values in [0, 1]."""
        if not hasattr(self, "bounds_"):
            raise RuntimeError("normalizer is not fitted")
        if name not in self.bounds_:
            raise ConfigError(f"feature '{name}' was not present at fit time")
        if np.ndim(values) == 0:
            return self.normalize_scalar(name, float(values))
        lo, hi = self.bounds_[name]
        oriented = self.orient(name, values)
        if lo == hi:
            return np.full(np.shape(oriented), 0.5)
        return np.clip((oriented - lo) / (hi - lo), 0.0, 1.0)

    def normalize_scalar(self, name: str, value: float) -> float:
        """Scalar normalize without array round-trips; the scoring hot path."""
        try:
            lo, hi = self.bounds_[name]
        except AttributeError:
            raise RuntimeError("normalizer is not fitted") from None
        except KeyError:
            raise ConfigError(f"feature '{name}' was not present at fit time") from None
        kind = ORIENTATIONS.get(name)
        if kind is None:
            raise ConfigError(f"no orientation defined for feature '{name}'")
        if kind == INVERSE:
            value = 1.0 / (value + self.inverse_eps)
        elif kind == NEGATE:
            value = 1.0 - value
        if lo == hi:
            return 0.5
        x = (value - lo) / (hi - lo)
        return 0.0 if x < 0.0 else (1.0 if x > 1.0 else x)

    def transform(self, X):
        columns = _as_columns(X)
        return {name: self.normalize(name, values) for name, values in columns.items()}

    def to_dict(self) -> dict:
        if not hasattr(self, "bounds_"):
            raise RuntimeError("normalizer is not fitted")
        return {
            "lower_quantile": self.lower_quantile,
            "upper_quantile": self.upper_quantile,
            "inverse_eps": self.inverse_eps,
            "fit_partition_id": self.fit_partition_id,
            "bounds": {k: list(v) for k, v in self.bounds_.items()},
            "constant_features": list(self.constant_features_),
            "fit_scenario_ids": list(self.fit_scenario_ids_),
        }

    @classmethod
    def from_dict(cls, blob: dict) -> "FeatureNormalizer":
        norm = cls(lower_quantile=blob["lower_quantile"], upper_quantile=blob["upper_quantile"],
                   inverse_eps=blob["inverse_eps"], fit_partition_id=blob["fit_partition_id"])
        norm.bounds_ = {k: tuple(v) for k, v in blob["bounds"].items()}
        norm.constant_features_ = list(blob["constant_features"])
        norm.fit_scenario_ids_ = tuple(blob["fit_scenario_ids"])
        return norm

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "FeatureNormalizer":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _as_columns(X) -> dict:
    if hasattr(X, "columns"):  # pandas frame without a hard dependency
        return {name: np.asarray(X[name], float) for name in X.columns}
    return {name: np.asarray(values, float) for name, values in X.items()}


def trajectory_score(individual: IndividualFeatures, interactions,
                     normalizer: FeatureNormalizer, cfg: PipelineConfig) -> float:
    """Weighted normalized individual features plus the agent's pair scores
    (each pair contributes its full score to both members)."""
    total = 0.0
    ind = individual.as_dict()
    for name in INDIVIDUAL_FEATURES:
        total += cfg.weights_individual[name] * normalizer.normalize_scalar(name, ind[name])
    for pair in interactions:
        total += interaction_score(pair, normalizer, cfg)
    return total


def interaction_score(pair: InteractionFeatures, normalizer: FeatureNormalizer,
                      cfg: PipelineConfig) -> float:
    vals = pair.as_dict()
    return sum(cfg.weights_interaction[name] * normalizer.normalize_scalar(name, vals[name])
               for name in INTERACTION_FEATURES)


# ---------------------------------------------------------------------------
# counterfactual roll-forward

def future_extrapolate(track: AgentTrack, assignment: LaneSequence | None,
                       t_obs_idx: int, t_tot: int, dt: float,
                       cfg: PipelineConfig) -> AgentTrack:
    """Constant-progress probe: history kept verbatim, future replaced.

    With a lane assignment the probe holds the last lateral offset and rolls
    arc position forward at the mean recent progress rate along the reference;
    without one it extrapolates a constant Cartesian velocity. Fewer than two
    valid history steps hold the last pose. Only history informs the probe.
    """
    horizon = t_tot - (t_obs_idx + 1)
    hist_xy = track.xy[:t_obs_idx + 1]
    hist_valid = track.valid[:t_obs_idx + 1]
    idx = np.nonzero(hist_valid)[0]

    xy = track.xy.copy()
    heading = track.heading.copy()
    valid = track.valid.copy()
    vxy = track.vxy.copy()
    fut = slice(t_obs_idx + 1, t_tot)

    if len(idx) == 0:
        xy[fut] = 0.0
        heading[fut] = 0.0
        vxy[fut] = 0.0
        valid[fut] = False
        return _clone(track, xy, heading, vxy, valid)

    valid[fut] = True
    if len(idx) < 2:
        xy[fut] = hist_xy[idx[-1]]
        heading[fut] = track.heading[idx[-1]]
        vxy[fut] = 0.0
        return _clone(track, xy, heading, vxy, valid)

    steps_ahead = np.arange(1, horizon + 1)
    if assignment is not None and assignment.reference is not None:
        ref = assignment.reference
        fr = assignment.frenet
        if fr is None or len(fr.valid) != len(hist_xy):
            fr = frenet_encode(hist_xy, hist_valid, ref)
        s = fr.s_unclamped[idx]
        window = min(cfg.fe_window, len(idx) - 1)
        tail_s = s[-(window + 1):]
        tail_t = idx[-(window + 1):]
        rate = float(np.mean((tail_s[1:] - tail_s[:-1]) / ((tail_t[1:] - tail_t[:-1]) * dt)))
        d_last = float(fr.d[idx[-1]])
        s_future = s[-1] + rate * steps_ahead * dt
        pos, tangent = frenet_decode(s_future, np.full(horizon, d_last), ref)
        xy[fut] = pos
        heading[fut] = tangent if rate >= 0 else _wrap(tangent + math.pi)
    else:
        window = min(cfg.fe_window, len(idx) - 1)
        tail = hist_xy[idx[-(window + 1):]]
        tail_t = idx[-(window + 1):]
        vel = (tail[-1] - tail[0]) / ((tail_t[-1] - tail_t[0]) * dt)
        xy[fut] = hist_xy[idx[-1]] + steps_ahead[:, None] * vel * dt
        speed = math.hypot(vel[0], vel[1])
        heading[fut] = math.atan2(vel[1], vel[0]) if speed > 1e-9 else track.heading[idx[-1]]
    prev = np.empty((horizon, 2))
    prev[0] = hist_xy[idx[-1]]
    prev[1:] = xy[t_obs_idx + 1:t_tot - 1]
    gap_steps = np.ones((horizon, 1))
    gap_steps[0, 0] = t_obs_idx + 1 - idx[-1]
    vxy[fut] = (xy[fut] - prev) / (gap_steps * dt)
    return _clone(track, xy, heading, vxy, valid)


def _clone(track: AgentTrack, xy, heading, vxy, valid) -> AgentTrack:
    return AgentTrack(agent_id=track.agent_id, agent_type=track.agent_type,
                      length=track.length, width=track.width, to_predict=track.to_predict,
                      xy=xy, heading=heading, vxy=vxy, valid=valid)


def _wrap(a):
    return (np.asarray(a) + math.pi) % (2.0 * math.pi) - math.pi


# ---------------------------------------------------------------------------
# scene aggregation

@dataclass
class TrajectoryScoreSet:
    agent_id: str
    score_gt: float
    score_fe: float
    score_as: float

    @property
    def score_ac(self) -> float:
        return max(self.score_gt, self.score_as)

    @property
    def score_combined(self) -> float:
        return max(self.score_gt, self.score_fe)


@dataclass
class SceneScore:
    scenario_id: str
    value: float             # aggregated score_ac
    n_agents: int
    n_predict: int
    variants: dict           # variant name -> aggregated value


def proximity_weights(distances_to_predict) -> np.ndarray:
    """w_i = 1 / (1 + d_i); d_i is 0 for predict agents themselves."""
    d = np.asarray(distances_to_predict, float)
    return 1.0 / (1.0 + d)


def scene_value(agent_scores, weights, n_agents: int, n_predict: int) -> float:
    scores = np.asarray(agent_scores, float)
    w = np.asarray(weights, float)
    if n_predict < 1 or n_agents < n_predict:
        raise ValueError("need 1 <= n_predict <= n_agents")
    return float(np.dot(w, scores) / (n_predict + math.sqrt(n_agents - n_predict)))


def aggregate_scene(scenario_id: str, score_sets, distances_to_predict,
                    n_agents: int, n_predict: int) -> SceneScore:
    w = proximity_weights(distances_to_predict)
    variants = {}
    for key, getter in (("gt", lambda s: s.score_gt), ("fe", lambda s: s.score_fe),
                        ("combined", lambda s: s.score_combined),
                        ("as", lambda s: s.score_as), ("ac", lambda s: s.score_ac)):
        variants[key] = scene_value([getter(s) for s in score_sets], w, n_agents, n_predict)
    return SceneScore(scenario_id=scenario_id, value=variants["ac"],
                      n_agents=n_agents, n_predict=n_predict, variants=variants)
