"""Per-agent criticality features.

Kinematics come from positional differencing of valid steps (stored velocities
are only a cross-check); a derived entry is invalid as soon as its stencil
touches an invalid state — no interpolation across gaps.
"""

import math
from dataclasses import dataclass, fields

import numpy as np

from .config import PipelineConfig
from .geometry import points_to_polygon_dist
from .scenario import Scenario


@dataclass
class KinematicProfile:
    speed: np.ndarray        # (T,) speed[t] spans states t-1, t
    accel: np.ndarray        # (T,) accel[t] spans speeds t-1, t
    jerk: np.ndarray         # (T,)
    speed_valid: np.ndarray
    accel_valid: np.ndarray
    jerk_valid: np.ndarray


def kinematic_profile(xy, valid, dt: float) -> KinematicProfile:
    xy = np.asarray(xy, float)
    valid = np.asarray(valid, bool)
    return kinematic_profiles(xy[None], valid[None], dt)[0]


def kinematic_profiles(xy, valid, dt: float) -> list:
    """Batched differencing over (N, T, 2) positions; one profile per row."""
    xy = np.asarray(xy, float)
    valid = np.asarray(valid, bool)
    n, t = valid.shape
    speed = np.zeros((n, t))
    accel = np.zeros((n, t))
    jerk = np.zeros((n, t))
    sv = np.zeros((n, t), bool)
    av = np.zeros((n, t), bool)
    jv = np.zeros((n, t), bool)
    if t >= 2:
        dxy = xy[:, 1:] - xy[:, :-1]
        step = np.hypot(dxy[..., 0], dxy[..., 1]) / dt
        pair_ok = valid[:, :-1] & valid[:, 1:]
        speed[:, 1:] = np.where(pair_ok, step, 0.0)
        sv[:, 1:] = pair_ok
    if t >= 3:
        a_ok = sv[:, 1:-1] & sv[:, 2:]
        accel[:, 2:] = np.where(a_ok, (speed[:, 2:] - speed[:, 1:-1]) / dt, 0.0)
        av[:, 2:] = a_ok
    if t >= 4:
        j_ok = av[:, 2:-1] & av[:, 3:]
        jerk[:, 3:] = np.where(j_ok, (accel[:, 3:] - accel[:, 2:-1]) / dt, 0.0)
        jv[:, 3:] = j_ok
    return [KinematicProfile(speed[i], accel[i], jerk[i], sv[i], av[i], jv[i])
            for i in range(n)]


@dataclass
class ConflictRegions:
    """Scenario-level set of places where paths can legitimately conflict:
    crosswalk polygons, stop-sign points, and lane points shared by >= 2 lanes."""

    points: np.ndarray                  # (P, 2)
    polygons: list                      # list of (K, 2)

    @property
    def empty(self) -> bool:
        return len(self.points) == 0 and not self.polygons

    def distances(self, xy) -> np.ndarray:
        pts = np.asarray(xy, float)
        dist = np.full(len(pts), np.inf)
        if len(self.points):
            diff = pts[:, None, :] - self.points[None, :, :]
            dist = np.sqrt(np.einsum("tpk,tpk->tp", diff, diff)).min(axis=1)
        for poly in self.polygons:
            dist = np.minimum(dist, points_to_polygon_dist(pts, poly))
        return dist


def conflict_regions(scenario: Scenario, cfg: PipelineConfig) -> ConflictRegions:
    points = []
    polygons = []
    for f in scenario.map_features:
        if f.kind == "crosswalk":
            polygons.append(f.points)
        elif f.kind == "stop_sign":
            points.append(f.points[0])
    # lane points coincident across two or more lanes mark merges/junctions
    scale = 1.0 / cfg.shared_point_eps
    seen: dict = {}
    for lane in scenario.lanes.values():
        keys = np.round(lane.centerline * scale).astype(np.int64)
        for key, pt in zip(map(tuple, keys), lane.centerline):
            owner = seen.get(key)
            if owner is None:
                seen[key] = (lane.lane_id, pt)
            elif owner[0] != lane.lane_id and owner[1] is not None:
                points.append(owner[1])
                seen[key] = (lane.lane_id, None)
    return ConflictRegions(points=np.asarray(points) if points else np.empty((0, 2)),
                           polygons=polygons)


def waiting_period(xy, valid, prof: KinematicProfile, regions: ConflictRegions,
                   dt: float, cfg: PipelineConfig) -> float:
    """Longest contiguous dwell (speed < threshold near a conflict region), seconds."""
    if regions.empty:
        return 0.0
    slow = prof.speed_valid & (prof.speed < cfg.waiting_speed) & np.asarray(valid, bool)
    if not slow.any():
        return 0.0
    near = np.zeros(len(slow), bool)
    near[slow] = regions.distances(np.asarray(xy, float)[slow]) <= cfg.waiting_radius
    qualifying = slow & near
    if not qualifying.any():
        return 0.0
    padded = np.zeros(len(qualifying) + 2, bool)
    padded[1:-1] = qualifying
    edges = np.flatnonzero(padded[1:] != padded[:-1])
    return int((edges[1::2] - edges[0::2]).max()) * dt


def waiting_periods(xys, valids, profs, regions: ConflictRegions, dt: float,
                    cfg: PipelineConfig) -> list:
    """waiting_period for many rows with one conflict-region distance pass."""
    n = len(profs)
    out = [0.0] * n
    if regions.empty or n == 0:
        return out
    slow_rows = []
    pts = []
    for i in range(n):
        slow = profs[i].speed_valid & (profs[i].speed < cfg.waiting_speed) \
            & np.asarray(valids[i], bool)
        if slow.any():
            slow_rows.append((i, slow))
            pts.append(np.asarray(xys[i], float)[slow])
    if not slow_rows:
        return out
    dist = regions.distances(np.concatenate(pts))
    off = 0
    for (i, slow), p in zip(slow_rows, pts):
        near = np.zeros(len(slow), bool)
        near[slow] = dist[off:off + len(p)] <= cfg.waiting_radius
        off += len(p)
        qualifying = slow & near
        if not qualifying.any():
            continue
        padded = np.zeros(len(qualifying) + 2, bool)
        padded[1:-1] = qualifying
        edges = np.flatnonzero(padded[1:] != padded[:-1])
        out[i] = int((edges[1::2] - edges[0::2]).max()) * dt
    return out


def speed_limit_excess(prof: KinematicProfile, step_lane_ids, lanes: dict):
    """(max over valid steps of speed over the local limit, had_limit flag).

    ``step_lane_ids`` maps each step to a lane id or None; steps without an
    assigned lane or with an unlimited lane contribute nothing.
    """
    idx = np.nonzero(prof.speed_valid)[0]
    present = {step_lane_ids[t] for t in idx}
    best = 0.0
    had_limit = False
    for lane_id in present:
        if lane_id is None:
            continue
        limit = lanes[lane_id].speed_limit
        if limit is None:
            continue
        had_limit = True
        # the limit is constant over the lane's steps, so the per-step max of
        # (speed - limit) is the max speed minus the limit
        if len(present) == 1:
            peak = float(prof.speed[idx].max())
        else:
            sel = [t for t in idx if step_lane_ids[t] == lane_id]
            peak = float(prof.speed[sel].max())
        best = max(best, peak - limit)
    return max(0.0, best), had_limit


def lane_following_fraction(d, tangent_heading, heading, valid, cfg: PipelineConfig) -> float:
    """Fraction of valid steps spent tracking the assigned reference:
    |d| within the lateral budget and heading within pi/4 of the tangent."""
    valid = np.asarray(valid, bool)
    n = int(valid.sum())
    if n == 0:
        return 0.0
    dv = np.abs(np.asarray(d, float)[valid]) <= cfg.lane_follow_lateral
    dh = np.abs(_wrap(np.asarray(heading, float)[valid] - np.asarray(tangent_heading, float)[valid]))
    return float((dv & (dh <= cfg.lane_follow_heading)).sum()) / n


def _wrap(a):
    return (a + math.pi) % (2.0 * math.pi) - math.pi


@dataclass
class IndividualFeatures:
    max_speed: float = 0.0
    max_accel: float = 0.0
    max_jerk: float = 0.0
    waiting_period: float = 0.0
    speed_limit_excess: float = 0.0
    lane_following_fraction: float = 0.0
    anomaly: float = 0.0

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in _INDIVIDUAL_FIELDS}


_INDIVIDUAL_FIELDS = tuple(f.name for f in fields(IndividualFeatures))


def kinematic_maxima(prof: KinematicProfile):
    """Peak speed and peak |accel| / |jerk| — hard braking is as critical as
    hard acceleration, so magnitudes are aggregated."""
    max_speed = float(prof.speed[prof.speed_valid].max()) if prof.speed_valid.any() else 0.0
    max_accel = float(np.abs(prof.accel[prof.accel_valid]).max()) if prof.accel_valid.any() else 0.0
    max_jerk = float(np.abs(prof.jerk[prof.jerk_valid]).max()) if prof.jerk_valid.any() else 0.0
    return max_speed, max_accel, max_jerk


def kinematic_maxima_all(profiles) -> list:
    """kinematic_maxima for many profiles in one masked pass."""
    if not profiles:
        return []
    speed = np.stack([p.speed for p in profiles])
    accel = np.stack([p.accel for p in profiles])
    jerk = np.stack([p.jerk for p in profiles])
    sv = np.stack([p.speed_valid for p in profiles])
    av = np.stack([p.accel_valid for p in profiles])
    jv = np.stack([p.jerk_valid for p in profiles])
    ms = np.where(sv, speed, -np.inf).max(axis=1)
    ma = np.where(av, np.abs(accel), -np.inf).max(axis=1)
    mj = np.where(jv, np.abs(jerk), -np.inf).max(axis=1)
    s_any, a_any, j_any = sv.any(axis=1), av.any(axis=1), jv.any(axis=1)
    return [(float(ms[i]) if s_any[i] else 0.0,
             float(ma[i]) if a_any[i] else 0.0,
             float(mj[i]) if j_any[i] else 0.0) for i in range(len(profiles))]


def lane_following_fractions(d, tangent_heading, heading, valid, cfg: PipelineConfig) -> np.ndarray:
    """Row-wise lane_following_fraction over stacked (R, T) inputs. NaN lateral
    offsets or tangents (unprojected steps) never count as following."""
    with np.errstate(invalid="ignore"):
        dv = np.abs(np.asarray(d, float)) <= cfg.lane_follow_lateral
        dh = np.abs(_wrap(np.asarray(heading, float) - np.asarray(tangent_heading, float)))
        hit = (dv & (dh <= cfg.lane_follow_heading) & valid).sum(axis=1)
    n = np.asarray(valid, bool).sum(axis=1)
    return hit / np.maximum(n, 1)
