"""Map-based lane assignment.

A track is explained by a connected sequence of lane centerlines. Per step,
each nearby lane is scored by a Gaussian log-likelihood in lateral offset and
heading deviation; a beam over steps (collapsed to the best partial score per
current lane, which is exact Viterbi while the candidate lane count stays
within the beam width) picks the best connected sequence. Lane transitions are
allowed along successor edges or between lanes whose tangent deflection stays
below a threshold — physical plausibility rather than pure graph reachability,
which is what lets lane changes between side-by-side lanes through.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .config import PipelineConfig
from .geometry import FrenetTrajectory, Polyline, concat_polylines, wrap_angle
from .scenario import AgentState, Lane


@dataclass
class LaneSequence:
    lane_ids: tuple
    log_score: float
    per_step_lane: dict                     # absolute timestep -> lane_id
    reference: Polyline | None = field(default=None, compare=False)
    lane_boundaries: list = field(default_factory=list, compare=False)  # cumulative s per lane
    # single-lane sequences carry the window's curvilinear coordinates (the
    # assignment already projected every valid step, and the reference is the
    # lane polyline itself); None whenever the reference is a concatenation
    frenet: FrenetTrajectory | None = field(default=None, compare=False, repr=False)

    def lane_at_s(self, s: float) -> str:
        for lane_id, bound in zip(self.lane_ids, self.lane_boundaries):
            if s <= bound:
                return lane_id
        return self.lane_ids[-1]


def lane_step_likelihoods(xy, heading, lane: Lane, cfg: PipelineConfig):
    """Per-step (log_likelihood, gated) for one lane over (T, 2) positions.

    Distance is the full Euclidean distance to the centerline (perpendicular
    plus any clamped axial residual) so points beyond a lane's ends are not
    treated as laterally close.
    """
    s, d, _, over, dist, tangent = lane.polyline.project_many(xy)
    dtheta = wrap_angle(np.asarray(heading, float) - tangent)
    ll = -(dist * dist) / (2.0 * cfg.sigma_d ** 2) - (dtheta * dtheta) / (2.0 * cfg.sigma_theta ** 2)
    return ll, dist <= cfg.max_lateral


def candidate_lanes(state: AgentState, lanes: dict, cfg: PipelineConfig | None = None):
    """Gated lanes for one state, as (lane_id, log_likelihood) sorted by
    descending likelihood with ties broken by ascending lane_id."""
    cfg = cfg or PipelineConfig()
    xy = np.array([[state.x, state.y]])
    out = []
    for lane_id in sorted(lanes):
        ll, ok = lane_step_likelihoods(xy, np.array([state.heading]), lanes[lane_id], cfg)
        if ok[0]:
            out.append((lane_id, float(ll[0])))
    out.sort(key=lambda kv: (-kv[1], kv[0]))
    return out


def _deflection(a: Lane, b: Lane) -> float:
    return abs(wrap_angle(b.polyline.seg_heading[0] - a.polyline.seg_heading[-1]))


def _transition_allowed(a_id: str, b_id: str, lanes: dict, cfg: PipelineConfig) -> bool:
    if a_id == b_id:
        return True
    a = lanes[a_id]
    if b_id in a.successors:
        return True
    return _deflection(a, lanes[b_id]) <= cfg.max_deflection


class LaneIndex:
    """Sorted lane ids with stacked bounding boxes, built once per map so the
    per-track candidate prefilter is a single vector comparison."""

    __slots__ = ("ids", "lo", "hi")

    def __init__(self, lanes: dict):
        self.ids = sorted(lanes)
        boxes = [lanes[lane_id].bbox for lane_id in self.ids]
        self.lo = np.array([b[0] for b in boxes]) if boxes else np.empty((0, 2))
        self.hi = np.array([b[1] for b in boxes]) if boxes else np.empty((0, 2))

    def candidates(self, lo, hi) -> list:
        mask = (self.lo[:, 0] <= hi[0]) & (self.lo[:, 1] <= hi[1]) \
            & (self.hi[:, 0] >= lo[0]) & (self.hi[:, 1] >= lo[1])
        return [self.ids[k] for k in np.nonzero(mask)[0]]


def assign_lane_sequence(xy, heading, valid, steps, lanes: dict,
                         cfg: PipelineConfig) -> LaneSequence | None:
    """Best connected lane sequence for a state window.

    ``steps`` holds the absolute timestep index of each row (per_step_lane is
    keyed by those). Returns None when no step has any gated lane. Steps whose
    candidate set is empty are bridged by carrying the running lane.
    """
    scored = _score_candidates(xy, heading, valid, lanes, cfg)
    if scored is None:
        return None
    ll, ok, lane_ids, rows, _ = scored
    return _search(ll, ok, lane_ids, rows, steps, lanes, cfg)


def assign_lane_windows(xy, heading, valid, steps, t_obs: int, lanes: dict,
                        cfg: PipelineConfig, index: LaneIndex | None = None):
    """(full-track, history-window) sequences from one projection pass.

    The history result equals assign_lane_sequence on rows with step <= t_obs;
    per-step likelihoods are window-independent, so the full-track matrices
    are just column-sliced. When steps run 0..T-1, single-lane results carry
    their window's Frenet coordinates for downstream reuse.
    """
    scored = _score_candidates(xy, heading, valid, lanes, cfg, index)
    if scored is None:
        return None, None
    ll, ok, lane_ids, rows, proj = scored
    steps = np.asarray(steps)
    cols = np.nonzero(steps[rows] <= t_obs)[0]
    dom = _dominant(ll, ok) if ok.any() else None
    if dom is not None:
        # strict dominance on all gated steps holds on any subset of them,
        # so both windows reuse one pass
        k, col_ok, top = dom
        full = _pure_sequence(lane_ids[k], float(top.sum()), steps, rows)
        in_hist = (steps[rows] <= t_obs)[col_ok]
        hist = (_pure_sequence(lane_ids[k], float(top[in_hist].sum()), steps, rows[cols])
                if in_hist.any() else None)
    else:
        full = _search(ll, ok, lane_ids, rows, steps, lanes, cfg)
        hist = (_search(ll[:, cols], ok[:, cols], lane_ids, rows[cols], steps, lanes, cfg)
                if cols.size else None)
    if len(steps) == len(valid) and steps[0] == 0 and steps[-1] == len(valid) - 1:
        _attach_frenet(full, proj, rows, np.arange(len(rows)), valid, len(valid))
        _attach_frenet(hist, proj, rows, cols, valid, t_obs + 1)
    return full, hist


def _attach_frenet(seq, proj: dict, rows, cols, valid, length: int) -> None:
    if seq is None or len(seq.lane_ids) != 1:
        return
    hit = proj.get(seq.lane_ids[0])
    if hit is None:
        return
    s_all, d_all, over_all, th_all = hit
    s = np.full(length, np.nan)
    d = np.full(length, np.nan)
    over = np.zeros(length)
    th = np.full(length, np.nan)
    r = rows[cols]
    s[r] = s_all[cols]
    d[r] = d_all[cols]
    over[r] = over_all[cols]
    th[r] = th_all[cols]
    seq.frenet = FrenetTrajectory(s=s, d=d, overshoot=over, tangent_heading=th,
                                  valid=np.asarray(valid[:length], bool).copy())


def _score_candidates(xy, heading, valid, lanes: dict, cfg: PipelineConfig,
                      index: LaneIndex | None = None):
    xy = np.asarray(xy, float)
    heading = np.asarray(heading, float)
    valid = np.asarray(valid, bool)
    if not valid.any() or not lanes:
        return None
    rows = np.nonzero(valid)[0]
    pts = xy[rows]
    # a lane whose expanded bbox misses the track bbox can never pass the gate
    lo = pts.min(axis=0) - cfg.max_lateral
    hi = pts.max(axis=0) + cfg.max_lateral
    if index is None:
        index = LaneIndex(lanes)
    lane_ids = index.candidates(lo, hi)
    if not lane_ids:
        return None
    hd = heading[rows]
    two_var_d = 2.0 * cfg.sigma_d ** 2
    two_var_t = 2.0 * cfg.sigma_theta ** 2
    ll = np.empty((len(lane_ids), len(rows)))
    ok = np.empty((len(lane_ids), len(rows)), dtype=bool)
    proj = {}
    for k, lane_id in enumerate(lane_ids):
        s, d, _, over, dist, tangent = lanes[lane_id].polyline.project_many(pts)
        dtheta = wrap_angle(hd - tangent)
        ll[k] = -(dist * dist) / two_var_d - (dtheta * dtheta) / two_var_t
        ok[k] = dist <= cfg.max_lateral
        proj[lane_id] = (s, d, over, tangent)
    return ll, ok, lane_ids, rows, proj


def _dominant(ll, ok):
    """(lane row k, gated-column mask, per-column scores of k) when one lane
    strictly beats every rival at every gated step, else None. Any deviating
    path loses at the step it deviates, so the pure path is the unique search
    optimum; a single gated lane is the degenerate case."""
    masked = np.where(ok, ll, -np.inf)
    col_ok = ok.any(axis=0)
    sub = masked[:, col_ok]
    best = sub.argmax(axis=0)
    k = best[0]
    if not (best == k).all():
        return None
    top = sub[k].copy()
    sub[k] = -np.inf
    if not (top > sub.max(axis=0)).all():
        return None
    return k, col_ok, top


def _pure_sequence(lane_id, score: float, steps, rows) -> LaneSequence:
    per_step = dict.fromkeys(np.asarray(steps)[rows].tolist(), lane_id)
    return LaneSequence(lane_ids=(lane_id,), log_score=score, per_step_lane=per_step)


def _search(ll, ok, lane_ids, rows, steps, lanes: dict,
            cfg: PipelineConfig) -> LaneSequence | None:
    if not ok.any():
        return None

    dom = _dominant(ll, ok)
    if dom is not None:
        k, _, top = dom
        return _pure_sequence(lane_ids[k], float(top.sum()), steps, rows)

    gated_lanes = np.nonzero(ok.any(axis=1))[0]
    width = cfg.beam_width
    beams: dict = {}         # lane index -> cumulative score
    back: list = []          # per candidate step: (row_j, {lane_idx: prev_lane_idx | None})
    allowed_cache: dict = {}

    def allowed(a_idx: int, b_idx: int) -> bool:
        key = (a_idx, b_idx)
        hit = allowed_cache.get(key)
        if hit is None:
            hit = _transition_allowed(lane_ids[a_idx], lane_ids[b_idx], lanes, cfg)
            allowed_cache[key] = hit
        return hit

    for j in range(len(rows)):
        cands = [(k, ll[k, j]) for k in gated_lanes if ok[k, j]]
        if not cands:
            continue
        cands.sort(key=lambda kv: (-kv[1], lane_ids[kv[0]]))
        cands = cands[:width]
        if not beams:
            beams = {k: s for k, s in cands}
            back.append((j, {k: None for k, _ in cands}))
            continue
        new_beams: dict = {}
        pointers: dict = {}
        for k, step_score in cands:
            best_prev, best_score = None, -math.inf
            for a_idx, a_score in beams.items():
                if a_score > best_score and allowed(a_idx, k):
                    best_prev, best_score = a_idx, a_score
            if best_prev is None:
                continue
            new_beams[k] = best_score + step_score
            pointers[k] = best_prev
        if not new_beams:
            continue  # dead end: bridge the step, keep current beams
        if len(new_beams) > width:
            keep = sorted(new_beams, key=lambda k: (-new_beams[k], lane_ids[k]))[:width]
            new_beams = {k: new_beams[k] for k in keep}
            pointers = {k: pointers[k] for k in keep}
        beams = new_beams
        back.append((j, pointers))

    if not beams:
        return None
    end = min(beams, key=lambda k: (-beams[k], lane_ids[k]))
    score = float(beams[end])
    assigned: dict = {}
    cur = end
    for j, pointers in reversed(back):
        if cur not in pointers:
            continue  # step bridged relative to the surviving path
        assigned[int(steps[rows[j]])] = lane_ids[cur]
        prev = pointers[cur]
        if prev is not None:
            cur = prev
    return _finish(assigned, score, steps, rows, lanes, cfg)


def _finish(assigned: dict, score: float, steps, rows, lanes: dict,
            cfg: PipelineConfig) -> LaneSequence:
    # carry the running lane across bridged steps so every valid step is covered
    per_step: dict = {}
    last = None
    for j in rows:
        t = int(steps[j])
        if t in assigned:
            last = assigned[t]
        if last is not None:
            per_step[t] = last
    first_lane = next(iter(per_step.values()))
    for j in rows:
        t = int(steps[j])
        if t not in per_step:
            per_step[t] = first_lane
    ordered = [per_step[int(steps[j])] for j in rows]
    seq = [ordered[0]]
    for lane_id in ordered[1:]:
        if lane_id != seq[-1]:
            seq.append(lane_id)
    return LaneSequence(lane_ids=tuple(seq), log_score=score, per_step_lane=per_step)


def build_reference(seq: LaneSequence, lanes: dict, xy, valid, steps,
                    cfg: PipelineConfig) -> LaneSequence:
    """Attach the concatenated reference polyline and per-lane s boundaries.

    Successor-connected (or end-to-start adjacent) lanes concatenate whole,
    merging duplicate junction vertices. Lateral transitions cut the outgoing
    tail and incoming head at the switch midpoint; naive concatenation of
    side-by-side lanes would double back on itself.
    """
    ids = seq.lane_ids
    if len(ids) == 1:
        ref = lanes[ids[0]].polyline
        seq.reference = ref
        seq.lane_boundaries = [ref.total_length]
        return seq
    steps = [int(t) for t in steps]
    cuts = {i: [0.0, lanes[lane_id].polyline.total_length] for i, lane_id in enumerate(ids)}
    if len(ids) > 1:
        step_list = [t for t in steps if t in seq.per_step_lane]
        for i in range(len(ids) - 1):
            a, b = lanes[ids[i]], lanes[ids[i + 1]]
            sequential = ids[i + 1] in a.successors or (
                math.hypot(*(b.polyline.points[0] - a.polyline.points[-1])) <= cfg.sequential_join_gap)
            if sequential:
                continue
            t_a = t_b = None
            for t in step_list:
                if seq.per_step_lane[t] == ids[i]:
                    t_a = t
                elif t_a is not None and seq.per_step_lane[t] == ids[i + 1]:
                    t_b = t
                    break
            if t_a is None or t_b is None:
                continue
            mid = (np.asarray(xy[steps.index(t_a)], float)
                   + np.asarray(xy[steps.index(t_b)], float)) * 0.5
            cuts[i][1] = min(cuts[i][1], a.polyline.project(mid).s)
            cuts[i + 1][0] = max(cuts[i + 1][0], b.polyline.project(mid).s)
    pieces = [lanes[lane_id].polyline.sub_polyline(*cuts[i]) for i, lane_id in enumerate(ids)]
    ref = concat_polylines(pieces)
    boundaries = []
    for piece in pieces:
        boundaries.append(float(ref.project(piece[-1]).s))
    boundaries[-1] = ref.total_length
    seq.reference = ref
    seq.lane_boundaries = boundaries
    return seq
