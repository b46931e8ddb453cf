"""Pairwise safety surrogates between two tracks.

All metrics run on co-valid timesteps. A leader-follower relation holds at a
step when the other agent's center sits inside the follower's forward cone and
inside the pairing gate; gaps are bumper-to-bumper (center distance minus half
box lengths, floored). Aggregates take the worst value across both orderings.
"""

import math
from dataclasses import dataclass, fields
from functools import cached_property

import numpy as np

from .config import PipelineConfig
from .geometry import (rect_overlap_mask, segment_intersections,
                       segments_intersect_mask, thin_polyline)

TRAJECTORY_CROSSING = "trajectory_crossing"
MAP_FEATURE = "map_feature"


@dataclass
class PairTrack:
    """Per-variant view of one agent used by pair metrics: positions, validity,
    headings, positional speeds (speed[t] spans t-1..t), and box dims."""

    agent_id: str
    xy: np.ndarray
    heading: np.ndarray
    valid: np.ndarray
    speed: np.ndarray
    speed_valid: np.ndarray
    length: float
    width: float

    @property
    def path(self) -> np.ndarray:
        return self.xy[self.valid]

    @cached_property
    def thin_path(self) -> np.ndarray:
        """Path with duplicate and straight-run vertices dropped; the same
        point set, so segment intersections against it are unchanged."""
        return thin_polyline(self.path)

    @cached_property
    def path_box(self) -> tuple:
        """(lo_x, lo_y, hi_x, hi_y) of the path; empty paths get an inverted
        box that overlaps nothing."""
        p = self.thin_path
        if len(p) == 0:
            return math.inf, math.inf, -math.inf, -math.inf
        lo = p.min(axis=0)
        hi = p.max(axis=0)
        return float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])


def co_min_dist2(agents) -> np.ndarray:
    """(N, N) matrix of min squared center distance over co-valid steps;
    inf where two agents share no valid step."""
    n = len(agents)
    if n == 0:
        return np.empty((0, 0))
    xy = np.stack([a.xy for a in agents])                  # (N, T, 2)
    valid = np.stack([a.valid for a in agents])            # (N, T)
    diff = xy[:, None] - xy[None, :]
    d2 = np.einsum("ijtk,ijtk->ijt", diff, diff)
    co = valid[:, None] & valid[None, :]
    return np.where(co, d2, np.inf).min(axis=2)


def find_interaction_pairs(scenario, cfg: PipelineConfig, dist2=None):
    """Unordered agent index pairs whose min co-valid center distance is inside
    the gate, ordered by (agent_id_i, agent_id_j) with i < j."""
    agents = scenario.agents
    n = len(agents)
    if n < 2:
        return []
    if dist2 is None:
        dist2 = co_min_dist2(agents)
    order = sorted(range(n), key=lambda i: agents[i].agent_id)
    gate2 = cfg.interaction_gate ** 2
    return [(i, j) for a, i in enumerate(order) for j in order[a + 1:]
            if dist2[i, j] <= gate2]


@dataclass
class LeaderFollowerMetrics:
    thw: np.ndarray          # per-step, ordering-merged minima (nan where absent)
    ttc: np.ndarray
    drac: np.ndarray
    min_thw: float
    min_ttc: float
    max_drac: float


def leader_follower_metrics(a: PairTrack, b: PairTrack, cfg: PipelineConfig) -> LeaderFollowerMetrics:
    t = len(a.valid)
    thw = np.full(t, np.nan)
    ttc = np.full(t, np.nan)
    drac = np.full(t, np.nan)
    co = a.valid & b.valid
    if co.any():
        delta = b.xy - a.xy
        dist = np.hypot(delta[:, 0], delta[:, 1])
        gap = np.maximum(dist - 0.5 * (a.length + b.length), cfg.gap_floor)
        in_gate = co & (dist <= cfg.interaction_gate)
        speeds_ok = a.speed_valid & b.speed_valid
        for follower, leader, toward in ((a, b, delta), (b, a, -delta)):
            bearing = np.arctan2(toward[:, 1], toward[:, 0])
            off = np.abs(_wrap(bearing - follower.heading))
            rel = in_gate & speeds_ok & (off <= cfg.cone_half_angle)
            if not rel.any():
                continue
            v_f = follower.speed
            v_l = leader.speed
            closing = rel & (v_f > v_l)
            moving = rel & (v_f > cfg.follower_speed_floor)
            thw_vals = np.where(moving, gap / np.where(moving, v_f, 1.0), np.nan)
            ttc_vals = np.where(closing, gap / np.where(closing, v_f - v_l, 1.0), np.nan)
            drac_vals = np.where(rel, np.where(closing, (v_f - v_l) ** 2 / (2.0 * gap), 0.0), np.nan)
            thw = np.fmin(thw, thw_vals)
            ttc = np.fmin(ttc, ttc_vals)
            drac = np.fmax(drac, drac_vals)
    return LeaderFollowerMetrics(
        thw=thw, ttc=ttc, drac=drac,
        min_thw=float(np.nanmin(thw)) if not np.isnan(thw).all() else math.inf,
        min_ttc=float(np.nanmin(ttc)) if not np.isnan(ttc).all() else math.inf,
        max_drac=float(np.nanmax(drac)) if not np.isnan(drac).all() else 0.0,
    )


@dataclass
class ConflictPoint:
    position: np.ndarray
    kind: str                       # TRAJECTORY_CROSSING | MAP_FEATURE
    t_reach_i: float | None
    t_reach_j: float | None


def first_reach_time(track: PairTrack, point, dt: float, radius: float) -> float | None:
    """Earliest time the agent's center is within ``radius`` of the point."""
    diff = track.xy - np.asarray(point, float)
    near = track.valid & (np.einsum("tk,tk->t", diff, diff) <= radius * radius)
    idx = np.nonzero(near)[0]
    return float(idx[0]) * dt if len(idx) else None


def map_feature_reach(track: PairTrack, feature_dists: np.ndarray, dt: float,
                      radius: float) -> float | None:
    near = track.valid & (feature_dists <= radius)
    idx = np.nonzero(near)[0]
    return float(idx[0]) * dt if len(idx) else None


def conflict_points(a: PairTrack, b: PairTrack, dt: float, cfg: PipelineConfig,
                    map_reach_a: dict | None = None,
                    map_reach_b: dict | None = None) -> list:
    """Crossing points of the two path polylines plus shared map features.

    ``map_reach_*`` map feature_id -> (min distance from path to the feature
    geometry, first-reach time or None); they are precomputed per track so
    pairs don't redo feature distance fields.
    """
    out = []
    path_a, path_b = a.thin_path, b.thin_path
    ax0, ay0, ax1, ay1 = a.path_box
    bx0, by0, bx1, by1 = b.path_box
    boxes_meet = ax0 <= bx1 and bx0 <= ax1 and ay0 <= by1 and by0 <= ay1
    if len(path_a) >= 2 and len(path_b) >= 2 and boxes_meet:
        for pt in segment_intersections(path_a, path_b):
            out.append(ConflictPoint(
                position=pt, kind=TRAJECTORY_CROSSING,
                t_reach_i=first_reach_time(a, pt, dt, cfg.reach_radius),
                t_reach_j=first_reach_time(b, pt, dt, cfg.reach_radius)))
    if map_reach_a and map_reach_b:
        for fid, (dist_a, reach_a, pos) in map_reach_a.items():
            if dist_a > cfg.map_conflict_margin:
                continue
            hit = map_reach_b.get(fid)
            if hit is None or hit[0] > cfg.map_conflict_margin:
                continue
            out.append(ConflictPoint(position=pos, kind=MAP_FEATURE,
                                     t_reach_i=reach_a, t_reach_j=hit[1]))
    return out


def delta_mttcp(points: list) -> tuple:
    """Min |t_reach_i - t_reach_j| per kind; +inf when no point of a kind has
    both reach times."""
    best = {TRAJECTORY_CROSSING: math.inf, MAP_FEATURE: math.inf}
    for p in points:
        if p.t_reach_i is None or p.t_reach_j is None:
            continue
        best[p.kind] = min(best[p.kind], abs(p.t_reach_i - p.t_reach_j))
    return best[TRAJECTORY_CROSSING], best[MAP_FEATURE]


def detect_collisions(a: PairTrack, b: PairTrack, cfg: PipelineConfig):
    """(event count, colliding step indices).

    A step collides when the oriented boxes overlap, or when the swept center
    segments from the previous co-valid step intersect (tunneling guard).
    Contiguous colliding steps form one event.
    """
    co = a.valid & b.valid
    t = len(co)
    colliding = np.zeros(t, bool)
    if co.any():
        delta = b.xy - a.xy
        dist = np.hypot(delta[:, 0], delta[:, 1])
        reach = 0.5 * (math.hypot(a.length, a.width) + math.hypot(b.length, b.width))
        cand = co & (dist <= reach)
        if cand.any():
            idx = np.nonzero(cand)[0]
            colliding[idx] = rect_overlap_mask(
                a.xy[idx], a.heading[idx], (a.length, a.width),
                b.xy[idx], b.heading[idx], (b.length, b.width))
        both = co[:-1] & co[1:]
        if both.any():
            idx = np.nonzero(both)[0]
            moved = segments_intersect_mask(a.xy[idx], a.xy[idx + 1], b.xy[idx], b.xy[idx + 1])
            colliding[idx + 1] |= moved
    steps = np.nonzero(colliding)[0]
    events = int(len(steps) > 0) + int(np.sum(steps[1:] - steps[:-1] > 1)) if len(steps) else 0
    return events, steps


@dataclass
class InteractionFeatures:
    min_thw: float = math.inf
    min_ttc: float = math.inf
    max_drac: float = 0.0
    min_delta_mttcp_traj: float = math.inf
    min_delta_mttcp_map: float = math.inf
    collision_count: float = 0.0

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in _INTERACTION_FIELDS}


_INTERACTION_FIELDS = tuple(f.name for f in fields(InteractionFeatures))


def extract_interaction(a: PairTrack, b: PairTrack, dt: float, cfg: PipelineConfig,
                        map_reach_a: dict | None = None,
                        map_reach_b: dict | None = None) -> InteractionFeatures:
    lf = leader_follower_metrics(a, b, cfg)
    points = conflict_points(a, b, dt, cfg, map_reach_a, map_reach_b)
    d_traj, d_map = delta_mttcp(points)
    count, _ = detect_collisions(a, b, cfg)
    return InteractionFeatures(min_thw=lf.min_thw, min_ttc=lf.min_ttc, max_drac=lf.max_drac,
                               min_delta_mttcp_traj=d_traj, min_delta_mttcp_map=d_map,
                               collision_count=float(count))


PAIR_VARIANTS = ("gt", "fe", "as_i", "as_j")


def extract_interaction_variants(a_gt: PairTrack, a_fe: PairTrack,
                                 b_gt: PairTrack, b_fe: PairTrack,
                                 dt: float, cfg: PipelineConfig,
                                 reach_a_gt: dict | None = None,
                                 reach_a_fe: dict | None = None,
                                 reach_b_gt: dict | None = None,
                                 reach_b_fe: dict | None = None) -> dict:
    """All four pair variants at once: gt, fe (probe vs probe), and the
    one-sided counterfactuals as_i (probe_i vs gt_j) / as_j (gt_i vs probe_j).
    Values match per-variant extract_interaction."""
    return extract_interactions_batch(
        [(a_gt, a_fe, b_gt, b_fe, reach_a_gt, reach_a_fe, reach_b_gt, reach_b_fe)],
        dt, cfg)[0]


def extract_interactions_batch(pair_inputs, dt: float, cfg: PipelineConfig) -> list:
    """Variant features for many pairs in one pass; one dict per input row.

    ``pair_inputs`` rows are (a_gt, a_fe, b_gt, b_fe, reach_a_gt, reach_a_fe,
    reach_b_gt, reach_b_fe). Leader-follower surrogates and the collision
    prereject run on a single stacked (4 * n_pairs, T) distance field; every
    formula is row-wise, so results match per-pair extraction exactly.
    """
    if not pair_inputs:
        return []
    tracks_a: list = []
    tracks_b: list = []
    reaches: list = []
    half_sum: list = []
    box_reach: list = []
    for a_gt, a_fe, b_gt, b_fe, r_ag, r_af, r_bg, r_bf in pair_inputs:
        tracks_a += [a_gt, a_fe, a_fe, a_gt]
        tracks_b += [b_gt, b_fe, b_gt, b_fe]
        reaches += [(r_ag, r_bg), (r_af, r_bf), (r_af, r_bg), (r_ag, r_bf)]
    for ta, tb in zip(tracks_a, tracks_b):
        half_sum.append(0.5 * (ta.length + tb.length))
        box_reach.append(0.5 * (math.hypot(ta.length, ta.width)
                                + math.hypot(tb.length, tb.width)))
    ax = np.stack([t.xy for t in tracks_a])
    ah = np.stack([t.heading for t in tracks_a])
    av = np.stack([t.valid for t in tracks_a])
    asp = np.stack([t.speed for t in tracks_a])
    asv = np.stack([t.speed_valid for t in tracks_a])
    bx = np.stack([t.xy for t in tracks_b])
    bh = np.stack([t.heading for t in tracks_b])
    bv = np.stack([t.valid for t in tracks_b])
    bsp = np.stack([t.speed for t in tracks_b])
    bsv = np.stack([t.speed_valid for t in tracks_b])
    la = np.array([t.length for t in tracks_a])
    wa = np.array([t.width for t in tracks_a])
    lb = np.array([t.length for t in tracks_b])
    wb = np.array([t.width for t in tracks_b])
    half_sum = np.asarray(half_sum)[:, None]
    box_reach = np.asarray(box_reach)[:, None]

    shape = av.shape
    thw = np.full(shape, np.nan)
    ttc = np.full(shape, np.nan)
    drac = np.full(shape, np.nan)
    co = av & bv
    delta = bx - ax
    dist = np.hypot(delta[..., 0], delta[..., 1])
    any_co = co.any()
    if any_co:
        gap = np.maximum(dist - half_sum, cfg.gap_floor)
        in_gate = co & (dist <= cfg.interaction_gate)
        speeds_ok = asv & bsv
        for f_head, v_f, v_l, toward in ((ah, asp, bsp, delta), (bh, bsp, asp, -delta)):
            bearing = np.arctan2(toward[..., 1], toward[..., 0])
            off = np.abs(_wrap(bearing - f_head))
            rel = in_gate & speeds_ok & (off <= cfg.cone_half_angle)
            if not rel.any():
                continue
            closing = rel & (v_f > v_l)
            moving = rel & (v_f > cfg.follower_speed_floor)
            thw = np.fmin(thw, np.where(moving, gap / np.where(moving, v_f, 1.0), np.nan))
            ttc = np.fmin(ttc, np.where(closing, gap / np.where(closing, v_f - v_l, 1.0), np.nan))
            drac = np.fmax(drac, np.where(rel, np.where(closing, (v_f - v_l) ** 2 / (2.0 * gap), 0.0), np.nan))

    colliding = np.zeros(shape, bool)
    if any_co:
        cand = co & (dist <= box_reach)
        if cand.any():
            vi, ti = np.nonzero(cand)
            colliding[vi, ti] = rect_overlap_mask(ax[vi, ti], ah[vi, ti], (la[vi], wa[vi]),
                                                  bx[vi, ti], bh[vi, ti], (lb[vi], wb[vi]))
        both = co[:, :-1] & co[:, 1:]
        if both.any():
            vi, ti = np.nonzero(both)
            moved = segments_intersect_mask(ax[vi, ti], ax[vi, ti + 1],
                                            bx[vi, ti], bx[vi, ti + 1])
            colliding[vi, ti + 1] |= moved

    # all-nan rows mean "no relation anywhere"; inf/-inf fills reduce to the
    # same value as nanmin/nanmax on the remaining rows
    nan_thw = np.isnan(thw)
    nan_ttc = np.isnan(ttc)
    nan_drac = np.isnan(drac)
    thw_min = np.where(nan_thw, np.inf, thw).min(axis=1)
    ttc_min = np.where(nan_ttc, np.inf, ttc).min(axis=1)
    drac_max = np.where(nan_drac, -np.inf, drac).max(axis=1)
    thw_absent = nan_thw.all(axis=1)
    ttc_absent = nan_ttc.all(axis=1)
    drac_absent = nan_drac.all(axis=1)

    out = []
    for p in range(len(pair_inputs)):
        feats = {}
        for v, name in enumerate(PAIR_VARIANTS):
            r = 4 * p + v
            points = conflict_points(tracks_a[r], tracks_b[r], dt, cfg,
                                     reaches[r][0], reaches[r][1])
            d_traj, d_map = delta_mttcp(points)
            steps = np.nonzero(colliding[r])[0]
            events = int(len(steps) > 0) + int(np.sum(steps[1:] - steps[:-1] > 1)) if len(steps) else 0
            feats[name] = InteractionFeatures(
                min_thw=math.inf if thw_absent[r] else float(thw_min[r]),
                min_ttc=math.inf if ttc_absent[r] else float(ttc_min[r]),
                max_drac=0.0 if drac_absent[r] else float(drac_max[r]),
                min_delta_mttcp_traj=d_traj, min_delta_mttcp_map=d_map,
                collision_count=float(events))
        out.append(feats)
    return out


def _wrap(a):
    return (a + math.pi) % (2.0 * math.pi) - math.pi
