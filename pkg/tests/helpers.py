"""Shared fixture builders: hand-assembled canonical documents and tracks.

Everything goes through the real parser so every test exercises the same
ingestion path as production corpora.
"""
import math

import numpy as np

from scenemine.scenario import parse_scenario

CAR = (4.5, 2.0)


def states_dict(xy, heading=None, vxy=None, valid=None):
    xy = np.asarray(xy, float)
    t = len(xy)
    if heading is None:
        d = np.diff(xy, axis=0)
        heading = np.concatenate([[0.0], np.arctan2(d[:, 1], d[:, 0])])
        heading[0] = heading[1] if t > 1 else 0.0
    if vxy is None:
        vxy = np.zeros_like(xy)
    if valid is None:
        valid = np.ones(t, bool)
    return {
        "x": [float(p[0]) for p in xy], "y": [float(p[1]) for p in xy],
        "heading": [float(h) for h in np.asarray(heading, float)],
        "vx": [float(v[0]) for v in np.asarray(vxy, float)],
        "vy": [float(v[1]) for v in np.asarray(vxy, float)],
        "valid": [bool(v) for v in valid],
    }


def agent_dict(agent_id, xy, *, heading=None, vxy=None, valid=None,
               agent_type="vehicle", dims=CAR, to_predict=True):
    return {"agent_id": agent_id, "agent_type": agent_type,
            "length": dims[0], "width": dims[1], "to_predict": to_predict,
            "states": states_dict(xy, heading, vxy, valid)}


def lane_dict(lane_id, points, *, successors=(), speed_limit=None,
              lane_type="surface_street"):
    out = {"lane_id": lane_id, "lane_type": lane_type,
           "centerline": [[float(x), float(y)] for x, y in points],
           "successors": list(successors), "predecessors": []}
    if speed_limit is not None:
        out["speed_limit"] = float(speed_limit)
    return out


def doc_dict(agents, lanes=(), features=(), *, scenario_id="s000", dt=0.1,
             t_obs_idx=None):
    t_tot = len(agents[0]["states"]["x"])
    if t_obs_idx is None:
        t_obs_idx = max(1, min(t_tot - 2, t_tot // 3))
    return {"schema_version": 1, "scenario_id": scenario_id, "dt": dt,
            "t_obs_idx": t_obs_idx, "t_tot": t_tot,
            "agents": list(agents), "lanes": {l["lane_id"]: l for l in lanes},
            "map_features": list(features)}


def make_scenario(agents, lanes=(), features=(), **kwargs):
    return parse_scenario(doc_dict(agents, lanes, features, **kwargs))


def straight_xy(x0, y0, heading, speed, t_tot, dt=0.1):
    c, s = math.cos(heading), math.sin(heading)
    return np.array([(x0 + k * speed * dt * c, y0 + k * speed * dt * s)
                     for k in range(t_tot)])


def circle_points(radius, a0, a1, n, center=(0.0, 0.0)):
    ang = np.linspace(a0, a1, n)
    return np.stack([center[0] + radius * np.cos(ang),
                     center[1] + radius * np.sin(ang)], axis=1)
