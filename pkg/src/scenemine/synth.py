"""Deterministic synthetic scenario generator.

Each kind is built so a closed-form oracle exists for the features it targets:

- leader_follower: constant speeds on one lane, parameterized by the FINAL
  bumper gap, so min TTC = gap/dv, min THW = gap/v_f and max DRAC =
  dv^2/(2*gap) all land exactly on the last step.
- crossing: perpendicular lanes through the origin, equal speeds, arrival
  offset snapped to the step grid when possible so delta-mTTCP equals the
  offset exactly.
- cut_in: a merging aggressor forces a trailing agent to brake; the recorded
  future stays collision-free while the constant-progress probe rear-ends the
  merged vehicle.
- random_mix: seeded sampler over independent agent groups (stop-and-go,
  cruise, follower pairs, crossings, crossing walkers), spatially separated
  so interactions stay within groups.

Documents are emitted as canonical JSON and re-parsed, so every consumer of
generated scenarios exercises the real parser.
"""

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .scenario import Scenario, parse_scenario, serialize_scenario

KINDS = ("leader_follower", "crossing", "cut_in", "random_mix")

_CAR = (4.0, 1.8)
_MAX_SPEED = 40.0


@dataclass
class SynthParams:
    kind: str
    seed: int = 0
    scenario_id: str | None = None
    dt: float = 0.1
    # leader_follower
    v_follower: float = 15.0
    v_leader: float = 10.0
    gap: float = 20.0
    # crossing
    v_cross: float = 12.0
    arrival_offset: float = 0.8
    arrival_time: float = 2.0
    # random_mix
    n_agents_max: int = 10
    stop_go_fraction: float = 0.35
    collision_probability: float = 0.03
    t_tot: int | None = None
    t_obs_idx: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown kind {self.kind!r}")
        for v in (self.v_follower, self.v_leader, self.v_cross):
            if not 0 <= v <= _MAX_SPEED:
                raise ValueError(f"speed {v} outside [0, {_MAX_SPEED}]")
        if self.gap <= 0:
            raise ValueError("gap must be positive")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if not 1 <= self.n_agents_max <= 16:
            raise ValueError("n_agents_max must be in [1, 16]")

    @property
    def name(self) -> str:
        return self.scenario_id or f"{self.kind}_{self.seed:06d}"


def gen_document(params: SynthParams) -> str:
    builder = {"leader_follower": _gen_leader_follower, "crossing": _gen_crossing,
               "cut_in": _gen_cut_in, "random_mix": _gen_random_mix}[params.kind]
    return serialize_scenario(parse_scenario(builder(params)))


def gen_scenario(params: SynthParams) -> Scenario:
    return parse_scenario(gen_document(params))


def write_corpus(out_dir, kind: str, count: int, seed: int = 0, **kwargs) -> list:
    """count documents with seeds seed..seed+count-1; returns written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(count):
        params = SynthParams(kind=kind, seed=seed + i, **kwargs)
        path = out / f"{params.name}.json"
        path.write_text(gen_document(params) + "\n")
        paths.append(path)
    return paths


# ---------------------------------------------------------------------------
# document assembly helpers

def _agent(agent_id, agent_type, length, width, to_predict, xy, heading, vxy, valid):
    t = len(xy)
    return {
        "agent_id": agent_id, "agent_type": agent_type,
        "length": length, "width": width, "to_predict": bool(to_predict),
        "states": {
            "x": [float(p[0]) for p in xy], "y": [float(p[1]) for p in xy],
            "heading": [float(h) for h in heading],
            "vx": [float(v[0]) for v in vxy], "vy": [float(v[1]) for v in vxy],
            "valid": [bool(v) for v in valid],
        },
        "_t": t,
    }


def _lane(lane_id, points, successors=(), speed_limit=None, lane_type="surface_street"):
    lane = {"lane_id": lane_id, "lane_type": lane_type,
            "centerline": [[float(x), float(y)] for x, y in points],
            "successors": list(successors), "predecessors": []}
    if speed_limit is not None:
        lane["speed_limit"] = float(speed_limit)
    return lane


def _document(params, t_tot, t_obs_idx, agents, lanes, features=()):
    for a in agents:
        if a.pop("_t") != t_tot:
            raise ValueError("agent state length mismatch")
    return {
        "schema_version": 1,
        "scenario_id": params.name,
        "dt": params.dt,
        "t_obs_idx": t_obs_idx,
        "t_tot": t_tot,
        "agents": agents,
        "lanes": {lane["lane_id"]: lane for lane in lanes},
        "map_features": list(features),
    }


def _straight(x, y, heading, speed, t_tot, dt):
    """Constant-velocity states: position k = start + k*speed*dt, exactly."""
    c, s = math.cos(heading), math.sin(heading)
    step = speed * dt
    xy = [(x + k * step * c, y + k * step * s) for k in range(t_tot)]
    return xy, [heading] * t_tot, [(speed * c, speed * s)] * t_tot, [True] * t_tot


# ---------------------------------------------------------------------------
# fixed kinds

def _gen_leader_follower(params: SynthParams) -> dict:
    t_tot = params.t_tot or 30
    t_obs = params.t_obs_idx if params.t_obs_idx is not None else 10
    dt = params.dt
    v_f, v_l, gap = params.v_follower, params.v_leader, params.gap
    if v_f <= v_l:
        raise ValueError("follower must close on the leader (v_follower > v_leader)")
    half_sum = 0.5 * (_CAR[0] + _CAR[0])
    # final bumper gap equals the gap parameter
    x_l0 = gap + half_sum + (t_tot - 1) * dt * (v_f - v_l)
    f_xy, f_h, f_v, f_ok = _straight(0.0, 0.0, 0.0, v_f, t_tot, dt)
    l_xy, l_h, l_v, l_ok = _straight(x_l0, 0.0, 0.0, v_l, t_tot, dt)
    x_max = max(f_xy[-1][0], l_xy[-1][0])
    lanes = [_lane("lx", [(-25.0, 0.0), (x_max + 25.0, 0.0)])]
    agents = [
        _agent("a00", "vehicle", *_CAR, True, f_xy, f_h, f_v, f_ok),
        _agent("a01", "vehicle", *_CAR, False, l_xy, l_h, l_v, l_ok),
    ]
    return _document(params, t_tot, t_obs, agents, lanes)


def _crossing_positions(v, dt, t_cross, t_tot):
    """1-D positions hitting 0 exactly at step t_cross/dt when on the grid."""
    step = v * dt
    k_cross = t_cross / dt
    k_int = round(k_cross)
    if abs(k_int - k_cross) < 1e-9:
        return [(k - k_int) * step for k in range(t_tot)]
    return [k * step - t_cross * v for k in range(t_tot)]


def _gen_crossing(params: SynthParams) -> dict:
    t_tot = params.t_tot or 50
    t_obs = params.t_obs_idx if params.t_obs_idx is not None else 15
    dt = params.dt
    v = params.v_cross
    t_a = params.arrival_time
    t_b = t_a + params.arrival_offset
    pos_a = _crossing_positions(v, dt, t_a, t_tot)
    pos_b = _crossing_positions(v, dt, t_b, t_tot)
    a_xy = [(x, 0.0) for x in pos_a]
    b_xy = [(0.0, y) for y in pos_b]
    ones = [True] * t_tot
    agents = [
        _agent("a00", "vehicle", *_CAR, True, a_xy, [0.0] * t_tot,
               [(v, 0.0)] * t_tot, ones),
        _agent("a01", "vehicle", *_CAR, False, b_xy, [math.pi / 2] * t_tot,
               [(0.0, v)] * t_tot, ones),
    ]
    lanes = [_lane("lx", [(-60.0, 0.0), (60.0, 0.0)]),
             _lane("ly", [(0.0, -60.0), (0.0, 60.0)])]
    return _document(params, t_tot, t_obs, agents, lanes)


def _gen_cut_in(params: SynthParams) -> dict:
    t_tot = params.t_tot or 91
    t_obs = params.t_obs_idx if params.t_obs_idx is not None else 10
    dt = params.dt
    # defensive agent: constant 12 m/s history, then a jerk-limited brake to
    # 8 m/s that keeps the recorded future clear of the merger by >10 m
    v = np.full(t_tot, 12.0)
    for k in range(t_obs + 1, t_tot):
        tau = (k - t_obs) * dt
        if tau <= 0.5:
            a = 0.0
        elif tau <= 1.0:
            a = -1.6 * (tau - 0.5)
        else:
            a = -0.8
        v[k] = max(8.0, v[k - 1] + a * dt)
    x_d = np.concatenate([[0.0], np.cumsum(v[1:] * dt)])
    d_xy = [(float(x), 0.0) for x in x_d]
    d_v = [(float(s), 0.0) for s in v]
    # aggressor: constant 8 m/s ahead, merging down one lane after the cut
    x_a = [30.0 + 8.0 * k * dt for k in range(t_tot)]
    y_a = np.empty(t_tot)
    for k in range(t_tot):
        tau = (k - t_obs) * dt
        if tau <= 0.5:
            y_a[k] = 3.5
        elif tau >= 2.5:
            y_a[k] = 0.0
        else:
            u = (tau - 0.5) / 2.0
            y_a[k] = 3.5 * (1.0 - (3 * u * u - 2 * u * u * u))
    a_xy = list(zip(x_a, y_a.tolist()))
    a_h = [0.0] * t_tot
    a_v = [(8.0, 0.0)] * t_tot
    for k in range(1, t_tot):
        dy = y_a[k] - y_a[k - 1]
        if abs(dy) > 1e-9:
            a_h[k] = math.atan2(dy, 8.0 * dt)
            a_v[k] = (8.0, dy / dt)
    ones = [True] * t_tot
    agents = [
        _agent("a00", "vehicle", *_CAR, True, d_xy, [0.0] * t_tot, d_v, ones),
        _agent("a01", "vehicle", *_CAR, False, a_xy, a_h, a_v, ones),
    ]
    lanes = [_lane("l0", [(-50.0, 0.0), (400.0, 0.0)]),
             _lane("l1", [(-50.0, 3.5), (400.0, 3.5)]),
             _lane("l2", [(-50.0, 7.0), (400.0, 7.0)])]
    return _document(params, t_tot, t_obs, agents, lanes)


# ---------------------------------------------------------------------------
# random mix

def _gen_random_mix(params: SynthParams) -> dict:
    rng = np.random.default_rng(params.seed)
    t_tot = params.t_tot or 40
    t_obs = params.t_obs_idx if params.t_obs_idx is not None else 12
    dt = params.dt
    n_target = int(rng.integers(2, params.n_agents_max + 1))
    agents: list = []
    lanes: list = []
    features: list = []
    group = 0
    while len(agents) < n_target:
        budget = n_target - len(agents)
        y0 = 120.0 * group
        kind = _pick_group(rng, params, budget)
        build = {"stop_go": _grp_stop_go, "cruise": _grp_cruise,
                 "follow": _grp_follow, "cross": _grp_cross,
                 "walker": _grp_walker}[kind]
        build(rng, params, t_tot, t_obs, y0, group, agents, lanes, features)
        group += 1
    agents = agents[:n_target]
    agents[0]["to_predict"] = True
    return _document(params, t_tot, t_obs, agents, lanes, features)


def _pick_group(rng, params, budget) -> str:
    if rng.random() < params.stop_go_fraction:
        return "stop_go"
    if budget < 2:
        return "cruise"
    return ["cruise", "follow", "cross", "walker"][int(rng.integers(0, 4))]


def _next_id(agents) -> str:
    return f"a{len(agents):02d}"


def _maybe_predict(rng) -> bool:
    return bool(rng.random() < 0.3)


def _grp_stop_go(rng, params, t_tot, t_obs, y0, group, agents, lanes, features):
    """Single agent with speed/accel/jerk all scaled by one aggressiveness
    draw, so the three kinematic maxima co-vary across the corpus."""
    g = rng.uniform(0.3, 1.0)
    v_max = 6.0 + 12.0 * g
    a_max = 1.5 + 6.0 * g
    v = np.empty(t_tot)
    v[0] = v_max * rng.uniform(0.3, 1.0)

    def draw_target():
        # full stops happen: they give waiting_period mass above zero
        return 0.0 if rng.random() < 0.35 else v_max * rng.uniform(0.0, 1.0)

    target = draw_target()
    next_switch = int(rng.integers(6, 14))
    for k in range(1, t_tot):
        if k >= next_switch:
            target = draw_target()
            next_switch = k + int(rng.integers(6, 14))
        dv = np.clip(target - v[k - 1], -a_max * params.dt, a_max * params.dt)
        v[k] = v[k - 1] + dv
    x0 = rng.uniform(-20.0, 0.0)
    x = x0 + np.concatenate([[0.0], np.cumsum(v[1:] * params.dt)])
    xy = [(float(px), y0) for px in x]
    vxy = [(float(s), 0.0) for s in v]
    lane_id = f"g{group:02d}_l0"
    lanes.append(_lane(lane_id, [(x0 - 25.0, y0), (float(x[-1]) + 25.0, y0)]))
    if rng.random() < 0.3:
        slow = np.nonzero(v < 0.5)[0]
        if len(slow):
            features.append({"feature_id": f"f{len(features):02d}", "kind": "stop_sign",
                             "geometry": {"type": "point",
                                          "point": [float(x[slow[0]]), y0 + 2.0]}})
    agents.append(_agent(_next_id(agents), "vehicle", *_CAR, _maybe_predict(rng),
                         xy, [0.0] * t_tot, vxy, [True] * t_tot))


def _grp_cruise(rng, params, t_tot, t_obs, y0, group, agents, lanes, features):
    v = rng.uniform(5.0, 15.0)
    x0 = rng.uniform(-20.0, 0.0)
    xy, h, vxy, ok = _straight(x0, y0, 0.0, v, t_tot, params.dt)
    if rng.random() < 0.3:
        hole = int(rng.integers(1, t_tot - 3))
        ok = list(ok)
        ok[hole] = ok[hole + 1] = False
    limit = float(v * rng.uniform(0.7, 1.1)) if rng.random() < 0.5 else None
    lane_id = f"g{group:02d}_l0"
    lanes.append(_lane(lane_id, [(x0 - 25.0, y0), (xy[-1][0] + 25.0, y0)],
                       speed_limit=limit))
    agents.append(_agent(_next_id(agents), "vehicle", *_CAR, _maybe_predict(rng),
                         xy, h, vxy, ok))


def _grp_follow(rng, params, t_tot, t_obs, y0, group, agents, lanes, features):
    dv = rng.uniform(1.0, 6.0)
    v_l = rng.uniform(4.0, 12.0)
    v_f = v_l + dv
    final_gap = rng.uniform(2.0, 15.0)
    half_sum = _CAR[0]
    x_l0 = final_gap + half_sum + (t_tot - 1) * params.dt * dv
    f_xy, f_h, f_v, f_ok = _straight(0.0, y0, 0.0, v_f, t_tot, params.dt)
    l_xy, l_h, l_v, l_ok = _straight(x_l0, y0, 0.0, v_l, t_tot, params.dt)
    lanes.append(_lane(f"g{group:02d}_l0", [(-25.0, y0), (l_xy[-1][0] + 25.0, y0)]))
    agents.append(_agent(_next_id(agents), "vehicle", *_CAR, _maybe_predict(rng),
                         f_xy, f_h, f_v, f_ok))
    agents.append(_agent(_next_id(agents), "vehicle", *_CAR, False,
                         l_xy, l_h, l_v, l_ok))


def _grp_cross(rng, params, t_tot, t_obs, y0, group, agents, lanes, features):
    v = rng.uniform(6.0, 13.0)
    collide = rng.random() < params.collision_probability
    if collide:
        offset = rng.uniform(0.0, 0.12)
    else:
        offset = rng.uniform(max(0.55, 7.0 / v), 1.8)
    t_a = params.dt * int(rng.integers(t_obs + 2, t_obs + 12))
    pos_a = _crossing_positions(v, params.dt, t_a, t_tot)
    pos_b = _crossing_positions(v, params.dt, t_a + offset, t_tot)
    a_xy = [(x, y0) for x in pos_a]
    b_xy = [(0.0, y0 + y) for y in pos_b]
    ones = [True] * t_tot
    lanes.append(_lane(f"g{group:02d}_l0", [(-60.0, y0), (60.0, y0)]))
    lanes.append(_lane(f"g{group:02d}_l1", [(0.0, y0 - 55.0), (0.0, y0 + 55.0)]))
    if rng.random() < 0.4:
        features.append({"feature_id": f"f{len(features):02d}", "kind": "crosswalk",
                         "geometry": {"type": "polygon",
                                      "points": [[-2.5, y0 - 2.5], [2.5, y0 - 2.5],
                                                 [2.5, y0 + 2.5], [-2.5, y0 + 2.5]]}})
    agents.append(_agent(_next_id(agents), "vehicle", *_CAR,
                         True if collide else _maybe_predict(rng),
                         a_xy, [0.0] * t_tot, [(v, 0.0)] * t_tot, ones))
    agents.append(_agent(_next_id(agents), "vehicle", *_CAR, False,
                         b_xy, [math.pi / 2] * t_tot, [(0.0, v)] * t_tot, ones))


def _grp_walker(rng, params, t_tot, t_obs, y0, group, agents, lanes, features):
    """A vehicle cruising a lane and a VRU crossing it well ahead."""
    v = rng.uniform(6.0, 12.0)
    xy, h, vxy, ok = _straight(rng.uniform(-15.0, 0.0), y0, 0.0, v, t_tot, params.dt)
    lanes.append(_lane(f"g{group:02d}_l0", [(-40.0, y0), (xy[-1][0] + 25.0, y0)]))
    cyclist = rng.random() < 0.4
    w_speed = rng.uniform(4.0, 6.0) if cyclist else rng.uniform(1.2, 1.8)
    x_c = xy[0][0] + v * (t_obs + int(rng.integers(10, 20))) * params.dt
    # the walker clears the lane well before the vehicle's body arrives
    t_v = (x_c - xy[0][0]) / v
    w_y0 = y0 - w_speed * max(0.3, t_v - 2.5)
    w_xy, w_h, w_v, w_ok = _straight(x_c, w_y0, math.pi / 2, w_speed, t_tot, params.dt)
    features.append({"feature_id": f"f{len(features):02d}", "kind": "crosswalk",
                     "geometry": {"type": "polygon",
                                  "points": [[x_c - 2.0, y0 - 2.0], [x_c + 2.0, y0 - 2.0],
                                             [x_c + 2.0, y0 + 2.0], [x_c - 2.0, y0 + 2.0]]}})
    agents.append(_agent(_next_id(agents), "vehicle", *_CAR, _maybe_predict(rng),
                         xy, h, vxy, ok))
    dims = (1.8, 0.6) if cyclist else (0.6, 0.6)
    agents.append(_agent(_next_id(agents), "cyclist" if cyclist else "pedestrian",
                         *dims, False, w_xy, w_h, w_v, w_ok))
