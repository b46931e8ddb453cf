"""Scenario document model: canonical JSON parsing, validation, serialization.

A scenario is a fixed-rate multi-agent trajectory snippet plus the map context
(lane centerlines with connectivity, crosswalks, stop signs, speed bumps).
Documents carry ``schema_version`` 1; readers reject other major versions.
Per-agent state sequences are stored columnar (one array per field) so large
corpora parse fast; invalid steps are kept in-band with ``valid`` false and are
ignored by every consumer.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Polyline, polygon_is_simple, wrap_angle

SCHEMA_VERSION = 1

AGENT_TYPES = ("vehicle", "pedestrian", "cyclist")
LANE_TYPES = ("freeway", "surface_street", "bike_lane")
FEATURE_KINDS = ("crosswalk", "stop_sign", "speed_bump")

# Validation codes (machine readable).
NO_AGENTS = "NO_AGENTS"
NO_PREDICT_AGENT = "NO_PREDICT_AGENT"
DUPLICATE_AGENT_ID = "DUPLICATE_AGENT_ID"
NO_VALID_STATES = "NO_VALID_STATES"
STATE_COUNT_MISMATCH = "STATE_COUNT_MISMATCH"
T_OBS_IDX_OUT_OF_RANGE = "T_OBS_IDX_OUT_OF_RANGE"
NONPOSITIVE_DT = "NONPOSITIVE_DT"
NONPOSITIVE_DIMENSION = "NONPOSITIVE_DIMENSION"
HEADING_OUT_OF_RANGE = "HEADING_OUT_OF_RANGE"
NONFINITE_FIELD = "NONFINITE_FIELD"
CENTERLINE_TOO_SHORT = "CENTERLINE_TOO_SHORT"
DUPLICATE_CENTERLINE_POINT = "DUPLICATE_CENTERLINE_POINT"
NONPOSITIVE_SPEED_LIMIT = "NONPOSITIVE_SPEED_LIMIT"
DANGLING_LANE_REF = "DANGLING_LANE_REF"
POLYGON_TOO_SHORT = "POLYGON_TOO_SHORT"
POLYGON_NOT_SIMPLE = "POLYGON_NOT_SIMPLE"


class ParseError(ValueError):
    """Raised when a document violates the schema; message names the field path."""


@dataclass
class AgentState:
    x: float
    y: float
    heading: float
    vx: float
    vy: float
    valid: bool


@dataclass
class AgentTrack:
    agent_id: str
    agent_type: str
    length: float
    width: float
    to_predict: bool
    xy: np.ndarray          # (T, 2)
    heading: np.ndarray     # (T,)
    vxy: np.ndarray         # (T, 2)
    valid: np.ndarray       # (T,) bool

    @property
    def t_tot(self) -> int:
        return len(self.valid)

    @property
    def dims(self):
        return (self.length, self.width)

    def state(self, t: int) -> AgentState:
        return AgentState(float(self.xy[t, 0]), float(self.xy[t, 1]),
                          float(self.heading[t]), float(self.vxy[t, 0]),
                          float(self.vxy[t, 1]), bool(self.valid[t]))


@dataclass
class Lane:
    lane_id: str
    centerline: np.ndarray  # (N, 2)
    speed_limit: float | None
    successors: tuple
    predecessors: tuple
    lane_type: str
    _polyline: Polyline | None = field(default=None, repr=False, compare=False)
    _bbox: tuple | None = field(default=None, repr=False, compare=False)

    @property
    def polyline(self) -> Polyline:
        if self._polyline is None:
            self._polyline = Polyline(self.centerline)
        return self._polyline

    @property
    def bbox(self) -> tuple:
        """(min_xy, max_xy) of the centerline, for cheap spatial rejection."""
        if self._bbox is None:
            self._bbox = (self.centerline.min(axis=0), self.centerline.max(axis=0))
        return self._bbox


@dataclass
class MapFeature:
    feature_id: str
    kind: str
    geometry_type: str      # "polygon" | "point"
    points: np.ndarray      # (P, 2) for polygons, (1, 2) for points


@dataclass
class Scenario:
    scenario_id: str
    dt: float
    t_obs_idx: int
    t_tot: int
    agents: list
    lanes: dict
    map_features: list
    parse_warnings: tuple = ()

    @property
    def n_agents(self) -> int:
        return len(self.agents)

    @property
    def n_predict(self) -> int:
        return sum(1 for a in self.agents if a.to_predict)

    def agent(self, agent_id: str) -> AgentTrack:
        for a in self.agents:
            if a.agent_id == agent_id:
                return a
        raise KeyError(agent_id)


@dataclass
class Window:
    """Non-copying index-range projection of a scenario's timeline."""

    scenario: Scenario
    start: int
    stop: int  # exclusive

    def __len__(self) -> int:
        return self.stop - self.start

    @property
    def steps(self) -> range:
        return range(self.start, self.stop)

    def xy(self, track: AgentTrack) -> np.ndarray:
        return track.xy[self.start:self.stop]

    def heading(self, track: AgentTrack) -> np.ndarray:
        return track.heading[self.start:self.stop]

    def valid(self, track: AgentTrack) -> np.ndarray:
        return track.valid[self.start:self.stop]


def split_history_future(scenario: Scenario):
    """(history, future) windows: [0, t_obs_idx] and (t_obs_idx, T_tot)."""
    cut = scenario.t_obs_idx + 1
    return Window(scenario, 0, cut), Window(scenario, cut, scenario.t_tot)


@dataclass
class Violation:
    code: str
    path: str
    message: str


@dataclass
class ValidationReport:
    violations: list

    @property
    def ok(self) -> bool:
        return not self.violations

    def codes(self):
        return [v.code for v in self.violations]


# ---------------------------------------------------------------------------
# parsing helpers

def _expect(cond: bool, path: str, msg: str):
    if not cond:
        raise ParseError(f"{path}: {msg}")


def _get(obj: dict, key: str, path: str):
    _expect(isinstance(obj, dict), path, "expected object")
    _expect(key in obj, path, f"missing field '{key}'")
    return obj[key]


def _number(v, path: str) -> float:
    _expect(isinstance(v, (int, float)) and not isinstance(v, bool), path, "expected number")
    return float(v)


def _string(v, path: str) -> str:
    _expect(isinstance(v, str) and v != "", path, "expected nonempty string")
    return v


def _bool(v, path: str) -> bool:
    _expect(isinstance(v, bool), path, "expected boolean")
    return v


def _float_array(v, path: str, n: int | None = None) -> np.ndarray:
    _expect(isinstance(v, list), path, "expected array")
    if n is not None:
        _expect(len(v) == n, path, f"expected {n} entries, got {len(v)}")
    try:
        arr = np.asarray(v, dtype=float)
    except (TypeError, ValueError):
        raise ParseError(f"{path}: expected array of numbers") from None
    _expect(arr.ndim == 1, path, "expected flat array of numbers")
    return arr


def _point_array(v, path: str) -> np.ndarray:
    _expect(isinstance(v, list), path, "expected array of [x, y] points")
    try:
        arr = np.asarray(v, dtype=float)
    except (TypeError, ValueError):
        raise ParseError(f"{path}: expected array of [x, y] points") from None
    _expect(arr.ndim == 2 and arr.shape[1] == 2, path, "expected array of [x, y] points")
    return arr


def _parse_track(obj: dict, path: str, t_tot: int) -> AgentTrack:
    agent_id = _string(_get(obj, "agent_id", path), f"{path}.agent_id")
    agent_type = _string(_get(obj, "agent_type", path), f"{path}.agent_type")
    _expect(agent_type in AGENT_TYPES, f"{path}.agent_type",
            f"expected one of {AGENT_TYPES}, got '{agent_type}'")
    length = _number(_get(obj, "length", path), f"{path}.length")
    width = _number(_get(obj, "width", path), f"{path}.width")
    to_predict = _bool(_get(obj, "to_predict", path), f"{path}.to_predict")
    states = _get(obj, "states", path)
    spath = f"{path}.states"
    _expect(isinstance(states, dict), spath, "expected columnar state object")
    x = _float_array(_get(states, "x", spath), f"{spath}.x", t_tot)
    y = _float_array(_get(states, "y", spath), f"{spath}.y", t_tot)
    heading = _float_array(_get(states, "heading", spath), f"{spath}.heading", t_tot)
    vx = _float_array(_get(states, "vx", spath), f"{spath}.vx", t_tot)
    vy = _float_array(_get(states, "vy", spath), f"{spath}.vy", t_tot)
    valid_raw = _get(states, "valid", spath)
    _expect(isinstance(valid_raw, list) and len(valid_raw) == t_tot
            and all(isinstance(b, bool) for b in valid_raw),
            f"{spath}.valid", f"expected array of {t_tot} booleans")
    valid = np.asarray(valid_raw, dtype=bool)
    return AgentTrack(agent_id=agent_id, agent_type=agent_type, length=length,
                      width=width, to_predict=to_predict,
                      xy=np.stack([x, y], axis=1), heading=wrap_angle(heading),
                      vxy=np.stack([vx, vy], axis=1), valid=valid)


def _parse_lane(obj: dict, path: str) -> Lane:
    lane_id = _string(_get(obj, "lane_id", path), f"{path}.lane_id")
    centerline = _point_array(_get(obj, "centerline", path), f"{path}.centerline")
    limit_raw = obj.get("speed_limit")
    speed_limit = None if limit_raw is None else _number(limit_raw, f"{path}.speed_limit")
    lane_type = _string(_get(obj, "lane_type", path), f"{path}.lane_type")
    _expect(lane_type in LANE_TYPES, f"{path}.lane_type",
            f"expected one of {LANE_TYPES}, got '{lane_type}'")
    succ = _get(obj, "successors", path)
    pred = _get(obj, "predecessors", path)
    for name, refs in (("successors", succ), ("predecessors", pred)):
        _expect(isinstance(refs, list) and all(isinstance(r, str) for r in refs),
                f"{path}.{name}", "expected array of lane ids")
    return Lane(lane_id=lane_id, centerline=centerline, speed_limit=speed_limit,
                successors=tuple(succ), predecessors=tuple(pred), lane_type=lane_type)


def _parse_feature(obj: dict, path: str) -> MapFeature:
    feature_id = _string(_get(obj, "feature_id", path), f"{path}.feature_id")
    kind = _string(_get(obj, "kind", path), f"{path}.kind")
    _expect(kind in FEATURE_KINDS, f"{path}.kind",
            f"expected one of {FEATURE_KINDS}, got '{kind}'")
    geom = _get(obj, "geometry", path)
    gpath = f"{path}.geometry"
    gtype = _string(_get(geom, "type", gpath), f"{gpath}.type")
    if gtype == "polygon":
        points = _point_array(_get(geom, "points", gpath), f"{gpath}.points")
    elif gtype == "point":
        pt = _float_array(_get(geom, "point", gpath), f"{gpath}.point", 2)
        points = pt[None, :]
    else:
        raise ParseError(f"{gpath}.type: expected 'polygon' or 'point', got '{gtype}'")
    return MapFeature(feature_id=feature_id, kind=kind, geometry_type=gtype, points=points)


def parse_scenario(doc) -> Scenario:
    """Parse a canonical JSON document (text or already-decoded dict).

    Raises ParseError naming the offending field path on schema violations.
    Dangling lane successor/predecessor references are dropped with a warning
    recorded on the returned scenario's ``parse_warnings``.
    """
    if isinstance(doc, (str, bytes)):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as e:
            raise ParseError(f"$: invalid JSON ({e.msg} at char {e.pos})") from None
    _expect(isinstance(doc, dict), "$", "expected top-level object")
    version = _get(doc, "schema_version", "$")
    _expect(isinstance(version, int) and not isinstance(version, bool),
            "$.schema_version", "expected integer")
    _expect(version == SCHEMA_VERSION, "$.schema_version",
            f"unsupported major version {version} (reader supports {SCHEMA_VERSION})")
    scenario_id = _string(_get(doc, "scenario_id", "$"), "$.scenario_id")
    dt = _number(_get(doc, "dt", "$"), "$.dt")
    _expect(dt > 0 and math.isfinite(dt), "$.dt", "expected positive number")
    t_tot = _get(doc, "t_tot", "$")
    _expect(isinstance(t_tot, int) and not isinstance(t_tot, bool) and t_tot >= 3,
            "$.t_tot", "expected integer >= 3")
    t_obs_idx = _get(doc, "t_obs_idx", "$")
    _expect(isinstance(t_obs_idx, int) and not isinstance(t_obs_idx, bool),
            "$.t_obs_idx", "expected integer")
    # nonempty history and future both required
    _expect(1 <= t_obs_idx <= t_tot - 2, "$.t_obs_idx",
            f"out of range (need 1 <= t_obs_idx <= {t_tot - 2} for T_tot={t_tot})")

    agents_raw = _get(doc, "agents", "$")
    _expect(isinstance(agents_raw, list) and agents_raw, "$.agents", "expected nonempty array")
    agents = [_parse_track(a, f"$.agents[{i}]", t_tot) for i, a in enumerate(agents_raw)]
    seen = set()
    for i, a in enumerate(agents):
        _expect(a.agent_id not in seen, f"$.agents[{i}].agent_id",
                f"duplicate agent_id '{a.agent_id}'")
        seen.add(a.agent_id)

    lanes_raw = _get(doc, "lanes", "$")
    _expect(isinstance(lanes_raw, dict), "$.lanes", "expected object mapping lane_id to lane")
    lanes: dict = {}
    for key, lobj in lanes_raw.items():
        lane = _parse_lane(lobj, f"$.lanes['{key}']")
        _expect(lane.lane_id == key, f"$.lanes['{key}'].lane_id",
                f"key '{key}' does not match lane_id '{lane.lane_id}'")
        lanes[key] = lane

    warnings: list = []
    for lane in lanes.values():
        for attr in ("successors", "predecessors"):
            refs = getattr(lane, attr)
            kept = tuple(r for r in refs if r in lanes)
            if kept != refs:
                dropped = [r for r in refs if r not in lanes]
                warnings.append(f"lane '{lane.lane_id}': dropped dangling {attr} {dropped}")
                setattr(lane, attr, kept)

    features_raw = _get(doc, "map_features", "$")
    _expect(isinstance(features_raw, list), "$.map_features", "expected array")
    features = [_parse_feature(f, f"$.map_features[{i}]") for i, f in enumerate(features_raw)]

    return Scenario(scenario_id=scenario_id, dt=dt, t_obs_idx=t_obs_idx, t_tot=t_tot,
                    agents=agents, lanes=lanes, map_features=features,
                    parse_warnings=tuple(warnings))


def serialize_scenario(scenario: Scenario) -> str:
    """Canonical JSON text; parse(serialize(s)) reproduces s bit for bit."""
    doc = {
        "schema_version": SCHEMA_VERSION,
        "scenario_id": scenario.scenario_id,
        "dt": scenario.dt,
        "t_obs_idx": scenario.t_obs_idx,
        "t_tot": scenario.t_tot,
        "agents": [
            {
                "agent_id": a.agent_id,
                "agent_type": a.agent_type,
                "length": a.length,
                "width": a.width,
                "to_predict": a.to_predict,
                "states": {
                    "x": a.xy[:, 0].tolist(),
                    "y": a.xy[:, 1].tolist(),
                    "heading": a.heading.tolist(),
                    "vx": a.vxy[:, 0].tolist(),
                    "vy": a.vxy[:, 1].tolist(),
                    "valid": a.valid.tolist(),
                },
            }
            for a in scenario.agents
        ],
        "lanes": {
            lane.lane_id: {
                "lane_id": lane.lane_id,
                "centerline": lane.centerline.tolist(),
                "speed_limit": lane.speed_limit,
                "successors": list(lane.successors),
                "predecessors": list(lane.predecessors),
                "lane_type": lane.lane_type,
            }
            for lane in scenario.lanes.values()
        },
        "map_features": [
            {
                "feature_id": f.feature_id,
                "kind": f.kind,
                "geometry": ({"type": "polygon", "points": f.points.tolist()}
                             if f.geometry_type == "polygon"
                             else {"type": "point", "point": f.points[0].tolist()}),
            }
            for f in scenario.map_features
        ],
    }
    return json.dumps(doc, allow_nan=False, separators=(",", ":"))


def validate_scenario(scenario: Scenario) -> ValidationReport:
    """Structural checks beyond schema shape; returns machine-readable violations."""
    v: list = []

    def bad(code: str, path: str, message: str):
        v.append(Violation(code, path, message))

    if not scenario.agents:
        bad(NO_AGENTS, "$.agents", "scenario has no agents")
    if not any(a.to_predict for a in scenario.agents):
        bad(NO_PREDICT_AGENT, "$.agents", "no agent has to_predict set")
    if not scenario.dt > 0:
        bad(NONPOSITIVE_DT, "$.dt", f"dt={scenario.dt}")
    if not (1 <= scenario.t_obs_idx <= scenario.t_tot - 2):
        bad(T_OBS_IDX_OUT_OF_RANGE, "$.t_obs_idx",
            f"t_obs_idx={scenario.t_obs_idx} with T_tot={scenario.t_tot}")

    seen = set()
    for i, a in enumerate(scenario.agents):
        path = f"$.agents[{i}]"
        if a.agent_id in seen:
            bad(DUPLICATE_AGENT_ID, path, f"duplicate agent_id '{a.agent_id}'")
        seen.add(a.agent_id)
        if a.t_tot != scenario.t_tot:
            bad(STATE_COUNT_MISMATCH, path,
                f"{a.t_tot} states, scenario T_tot={scenario.t_tot}")
        if not a.valid.any():
            bad(NO_VALID_STATES, path, "track has no valid states")
        if not (a.length > 0 and a.width > 0):
            bad(NONPOSITIVE_DIMENSION, path, f"length={a.length} width={a.width}")
        if a.valid.any():
            vx = a.valid
            fields = np.concatenate([a.xy[vx].ravel(), a.vxy[vx].ravel(), a.heading[vx]])
            if not np.isfinite(fields).all():
                bad(NONFINITE_FIELD, path, "non-finite value on a valid step")
            else:
                h = a.heading[vx]
                if np.any((h <= -math.pi) | (h > math.pi)):
                    bad(HEADING_OUT_OF_RANGE, path, "heading outside (-pi, pi]")

    for lane in scenario.lanes.values():
        path = f"$.lanes['{lane.lane_id}']"
        pts = lane.centerline
        if len(pts) < 2:
            bad(CENTERLINE_TOO_SHORT, path, f"{len(pts)} points")
        elif not np.isfinite(pts).all():
            bad(NONFINITE_FIELD, path, "non-finite centerline point")
        else:
            seg = np.hypot(*(np.diff(pts, axis=0).T))
            if np.any(seg <= 0.0):
                bad(DUPLICATE_CENTERLINE_POINT, path, "repeated consecutive centerline point")
        if lane.speed_limit is not None and not lane.speed_limit > 0:
            bad(NONPOSITIVE_SPEED_LIMIT, path, f"speed_limit={lane.speed_limit}")
        for attr in ("successors", "predecessors"):
            for ref in getattr(lane, attr):
                if ref not in scenario.lanes:
                    bad(DANGLING_LANE_REF, f"{path}.{attr}", f"unknown lane '{ref}'")

    for i, f in enumerate(scenario.map_features):
        path = f"$.map_features[{i}]"
        if not np.isfinite(f.points).all():
            bad(NONFINITE_FIELD, path, "non-finite geometry")
        elif f.geometry_type == "polygon":
            if len(f.points) < 3:
                bad(POLYGON_TOO_SHORT, path, f"{len(f.points)} points")
            elif not polygon_is_simple(f.points):
                bad(POLYGON_NOT_SIMPLE, path, "self-intersecting polygon")

    return ValidationReport(v)
