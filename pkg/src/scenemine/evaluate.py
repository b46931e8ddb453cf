"""Prediction-file evaluation: minADE/minFDE, collision rate, bucketed mAP,
plus the training-side exports (min-collision mode labels, loss weights).

Prediction files are JSON lines, one record per (scenario_id, agent_id):
{"scenario_id": ..., "agent_id": ..., "modes": [[[x,y],...],...],
 "confidences": [...]}. Mode length must equal the scenario's future length.
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import PipelineConfig
from .geometry import wrap_angle
from .interaction import PairTrack, detect_collisions
from .scenario import AGENT_TYPES, Scenario

BUCKETS = ("stationary", "straight", "straight_left", "straight_right",
           "left", "right", "left_u_turn", "right_u_turn")

STATIONARY_DISP = 2.0
STRAIGHT_MAX = math.pi / 12
TURN_MIN = math.pi / 6
U_TURN_MIN = 3 * math.pi / 4


class EvalError(ValueError):
    pass


@dataclass
class AgentPrediction:
    scenario_id: str
    agent_id: str
    modes: np.ndarray               # (K, T_fut, 2)
    confidences: np.ndarray         # (K,)


def load_predictions(path) -> dict:
    """(scenario_id, agent_id) -> AgentPrediction, with format validation."""
    preds: dict = {}
    k_seen = None
    for n, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise EvalError(f"line {n}: not valid JSON ({exc})") from None
        try:
            sid = rec["scenario_id"]
            aid = rec["agent_id"]
            modes = np.asarray(rec["modes"], dtype=float)
            conf = np.asarray(rec["confidences"], dtype=float)
        except (KeyError, ValueError) as exc:
            raise EvalError(f"line {n}: bad record ({exc})") from None
        if modes.ndim != 3 or modes.shape[2] != 2 or modes.shape[1] < 1:
            raise EvalError(f"line {n}: modes must be (K, T, 2)")
        if conf.shape != (modes.shape[0],):
            raise EvalError(f"line {n}: {modes.shape[0]} modes but "
                            f"{conf.shape} confidences")
        if np.any(conf < 0) or conf.sum() > 1 + 1e-6 or not np.isfinite(conf).all():
            raise EvalError(f"line {n}: confidences must be >= 0 and sum to <= 1")
        if not np.isfinite(modes).all():
            raise EvalError(f"line {n}: non-finite mode coordinates")
        if k_seen is None:
            k_seen = modes.shape[0]
        elif modes.shape[0] != k_seen:
            raise EvalError(f"line {n}: K changed from {k_seen} to {modes.shape[0]}")
        key = (str(sid), str(aid))
        if key in preds:
            raise EvalError(f"line {n}: duplicate prediction for {key}")
        preds[key] = AgentPrediction(scenario_id=str(sid), agent_id=str(aid),
                                     modes=modes, confidences=conf)
    return preds


def gt_as_predictions(scenario: Scenario) -> dict:
    """GT futures repackaged as single-mode predictions (diagnostics only;
    invalid future steps are held at the last known position)."""
    out = {}
    fut = slice(scenario.t_obs_idx + 1, scenario.t_tot)
    for track in scenario.agents:
        if not track.to_predict:
            continue
        xy = track.xy.copy()
        last = xy[0].copy()
        for t in range(scenario.t_tot):
            if track.valid[t]:
                last = xy[t]
            else:
                xy[t] = last
        out[(scenario.scenario_id, track.agent_id)] = AgentPrediction(
            scenario_id=scenario.scenario_id, agent_id=track.agent_id,
            modes=xy[fut][None, :, :], confidences=np.ones(1))
    return out


# ---------------------------------------------------------------------------
# per-agent metrics

def min_ade_fde(modes: np.ndarray, gt_xy: np.ndarray, gt_valid: np.ndarray):
    """Best-of-K displacement errors; ADE and FDE minimized independently."""
    gt_valid = np.asarray(gt_valid, bool)
    if not gt_valid.any():
        raise EvalError("no valid future step")
    delta = modes[:, gt_valid, :] - gt_xy[gt_valid][None, :, :]
    dist = np.hypot(delta[..., 0], delta[..., 1])
    ade = dist.mean(axis=1)
    fde = dist[:, -1]
    return float(ade.min()), float(fde.min())


def derive_headings(xy: np.ndarray, seed_heading: float,
                    anchor_xy: np.ndarray) -> np.ndarray:
    """Headings from successive displacements, the first measured from the
    anchor position; stalls inherit the previous heading."""
    full = np.vstack([np.asarray(anchor_xy, float)[None, :], xy])
    delta = np.diff(full, axis=0)
    moved = np.hypot(delta[:, 0], delta[:, 1]) > 1e-6
    angles = np.arctan2(delta[:, 1], delta[:, 0])
    h = np.empty(len(xy))
    heading = seed_heading
    for t in range(len(xy)):
        if moved[t]:
            heading = angles[t]
        h[t] = heading
    return h


def _anchor_step(track, t_obs_idx: int):
    """Last valid step at or before the observation cut, or None."""
    for t in range(t_obs_idx, -1, -1):
        if track.valid[t]:
            return t
    return None


def _mode_track(track, mode_xy: np.ndarray, seed_heading: float,
                anchor_xy: np.ndarray) -> PairTrack:
    t_fut = len(mode_xy)
    return PairTrack(agent_id=track.agent_id, xy=mode_xy,
                     heading=derive_headings(mode_xy, seed_heading, anchor_xy),
                     valid=np.ones(t_fut, bool),
                     speed=np.zeros(t_fut), speed_valid=np.zeros(t_fut, bool),
                     length=track.length, width=track.width)


def _future_track(track, fut: slice) -> PairTrack:
    xy = track.xy[fut]
    t_fut = len(xy)
    return PairTrack(agent_id=track.agent_id, xy=xy, heading=track.heading[fut],
                     valid=track.valid[fut], speed=np.zeros(t_fut),
                     speed_valid=np.zeros(t_fut, bool),
                     length=track.length, width=track.width)


def mode_collision_count(mode_track: PairTrack, externals, cfg: PipelineConfig) -> int:
    """Distinct external agents this mode's future overlaps at least once."""
    count = 0
    for ext in externals:
        events, _ = detect_collisions(mode_track, ext, cfg)
        if events:
            count += 1
    return count


def min_collision_mode(pred: AgentPrediction, track, externals, seed_heading: float,
                       anchor_xy: np.ndarray, cfg: PipelineConfig) -> int:
    """Mode index minimizing the once-per-agent collision count; ties resolved
    by higher confidence, then lower index."""
    best = None
    for k in range(len(pred.modes)):
        count = mode_collision_count(
            _mode_track(track, pred.modes[k], seed_heading, anchor_xy),
            externals, cfg)
        key = (count, -pred.confidences[k], k)
        if best is None or key < best[0]:
            best = (key, k)
    return best[1]


def bucket_of(displacement: float, dheading: float) -> str:
    if displacement < STATIONARY_DISP:
        return "stationary"
    mag = abs(dheading)
    if mag > U_TURN_MIN:
        return "left_u_turn" if dheading > 0 else "right_u_turn"
    if mag > TURN_MIN:
        return "left" if dheading > 0 else "right"
    if mag > STRAIGHT_MAX:
        return "straight_left" if dheading > 0 else "straight_right"
    return "straight"


def _path_length(xy: np.ndarray, valid: np.ndarray) -> float:
    pts = xy[valid]
    if len(pts) < 2:
        return 0.0
    seg = np.diff(pts, axis=0)
    return float(np.hypot(seg[:, 0], seg[:, 1]).sum())


def average_precision(records, n_gt: int) -> float:
    """11-point interpolated AP. Ties rank false positives first so duplicated
    hits on one agent always cost precision."""
    if n_gt <= 0:
        raise ValueError("AP needs at least one ground-truth agent")
    order = sorted(records, key=lambda r: (-r[0], bool(r[1])))
    tp = fp = 0
    points = []
    for _, is_tp in order:
        if is_tp:
            tp += 1
        else:
            fp += 1
        points.append((tp / n_gt, tp / (tp + fp)))
    ap = 0.0
    for r in np.linspace(0.0, 1.0, 11):
        ap += max((p for rec, p in points if rec >= r - 1e-12), default=0.0)
    return ap / 11.0


# ---------------------------------------------------------------------------
# corpus evaluation

@dataclass
class ClassMetrics:
    n_agents: int = 0
    min_ade: float = math.nan
    min_fde: float = math.nan
    collision_rate: float = math.nan
    map: float = math.nan

    def as_dict(self) -> dict:
        return {"n_agents": self.n_agents, "min_ade": self.min_ade,
                "min_fde": self.min_fde, "collision_rate": self.collision_rate,
                "map": self.map}


@dataclass
class EvalReport:
    classes: dict
    overall: ClassMetrics
    skipped: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"overall": self.overall.as_dict(),
                "classes": {c: m.as_dict() for c, m in sorted(self.classes.items())},
                "skipped": sorted(self.skipped)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, allow_nan=True)

    def to_text(self) -> str:
        rows = [("class", "n", "minADE", "minFDE", "CR", "mAP")]
        for name in sorted(self.classes) + ["overall"]:
            m = self.overall if name == "overall" else self.classes[name]
            rows.append((name, str(m.n_agents), f"{m.min_ade:.4f}", f"{m.min_fde:.4f}",
                         f"{m.collision_rate:.4f}", f"{m.map:.4f}"))
        widths = [max(len(r[c]) for r in rows) for c in range(6)]
        return "\n".join("  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip()
                         for row in rows)


@dataclass
class _AgentEval:
    agent_type: str
    ade: float
    fde: float
    collisions: int
    bucket: str
    hits: list                      # (confidence, is_tp) per mode


def _evaluate_agent(pred: AgentPrediction, track, scenario: Scenario,
                    externals, cfg: PipelineConfig, mode_rule: str) -> _AgentEval:
    fut = slice(scenario.t_obs_idx + 1, scenario.t_tot)
    gt_xy = track.xy[fut]
    gt_valid = track.valid[fut]
    t_fut = scenario.t_tot - 1 - scenario.t_obs_idx
    if pred.modes.shape[1] != t_fut:
        raise EvalError(f"{pred.scenario_id}/{pred.agent_id}: mode length "
                        f"{pred.modes.shape[1]} != future length {t_fut}")
    anchor = _anchor_step(track, scenario.t_obs_idx)
    if anchor is None or not gt_valid.any():
        raise EvalError("no usable anchor / future")

    ade, fde = min_ade_fde(pred.modes, gt_xy, gt_valid)

    delta = pred.modes[:, gt_valid, :] - gt_xy[gt_valid][None, :, :]
    dist = np.hypot(delta[..., 0], delta[..., 1])
    mode_fde = dist[:, -1]
    if mode_rule == "top_confidence":
        chosen = int(np.argmax(pred.confidences))
    elif mode_rule == "best_ade":
        chosen = int(np.argmin(dist.mean(axis=1)))
    else:
        raise ValueError(f"unknown mode rule {mode_rule!r}")
    seed_heading = float(track.heading[anchor])
    collisions = mode_collision_count(
        _mode_track(track, pred.modes[chosen], seed_heading, track.xy[anchor]),
        externals, cfg)

    last_valid_fut = int(np.nonzero(gt_valid)[0][-1])
    disp = float(np.hypot(*(gt_xy[last_valid_fut] - track.xy[anchor])))
    dheading = wrap_angle(float(track.heading[fut][last_valid_fut]) -
                          float(track.heading[anchor]))
    bucket = bucket_of(disp, dheading)

    threshold = max(2.0, 0.05 * _path_length(gt_xy, gt_valid))
    hit_flags = mode_fde < threshold
    # only the highest-confidence hit counts; extra hits are duplicates
    order = np.lexsort((np.arange(len(hit_flags)), -pred.confidences))
    hits = []
    tp_taken = False
    for k in order:
        is_tp = bool(hit_flags[k]) and not tp_taken
        if bool(hit_flags[k]):
            tp_taken = True
        hits.append((float(pred.confidences[k]), is_tp))
    return _AgentEval(agent_type=track.agent_type, ade=ade, fde=fde,
                      collisions=collisions, bucket=bucket, hits=hits)


def evaluate_predictions(preds: dict, scenarios, cfg: PipelineConfig,
                         mode_rule: str = "top_confidence") -> EvalReport:
    """Corpus evaluation against GT futures, per class and overall."""
    per_agent: list = []
    skipped: list = []
    for scenario in sorted(scenarios, key=lambda s: s.scenario_id):
        fut = slice(scenario.t_obs_idx + 1, scenario.t_tot)
        futures = {t.agent_id: _future_track(t, fut) for t in scenario.agents}
        predict = [t for t in scenario.agents if t.to_predict]
        missing = [t.agent_id for t in predict
                   if (scenario.scenario_id, t.agent_id) not in preds]
        if missing:
            raise EvalError(f"{scenario.scenario_id}: missing predictions for "
                            f"agents {missing}")
        for track in predict:
            pred = preds[(scenario.scenario_id, track.agent_id)]
            externals = [futures[t.agent_id] for t in scenario.agents
                         if t.agent_id != track.agent_id]
            try:
                per_agent.append(_evaluate_agent(pred, track, scenario,
                                                 externals, cfg, mode_rule))
            except EvalError:
                skipped.append(f"{scenario.scenario_id}/{track.agent_id}")
    classes = {}
    for cls in AGENT_TYPES:
        rows = [a for a in per_agent if a.agent_type == cls]
        if rows:
            classes[cls] = _reduce(rows)
    overall = _combine(classes.values()) if classes else ClassMetrics()
    return EvalReport(classes=classes, overall=overall, skipped=skipped)


def _reduce(rows) -> ClassMetrics:
    buckets: dict = {}
    for a in rows:
        b = buckets.setdefault(a.bucket, {"n": 0, "records": []})
        b["n"] += 1
        b["records"].extend(a.hits)
    aps = [average_precision(b["records"], b["n"]) for b in buckets.values()]
    return ClassMetrics(
        n_agents=len(rows),
        min_ade=float(np.mean([a.ade for a in rows])),
        min_fde=float(np.mean([a.fde for a in rows])),
        collision_rate=float(sum(a.collisions for a in rows) / len(rows)),
        map=float(np.mean(aps)))


def _combine(class_metrics) -> ClassMetrics:
    ms = list(class_metrics)
    return ClassMetrics(
        n_agents=sum(m.n_agents for m in ms),
        min_ade=float(np.mean([m.min_ade for m in ms])),
        min_fde=float(np.mean([m.min_fde for m in ms])),
        collision_rate=float(np.mean([m.collision_rate for m in ms])),
        map=float(np.mean([m.map for m in ms])))


def gt_collision_rate(scenarios, cfg: PipelineConfig) -> float:
    """GT-future pairwise collision statistic restricted to predicted agents:
    for each predicted agent, distinct external agents its GT future overlaps,
    averaged over predicted agents."""
    total = 0
    n_predict = 0
    for scenario in scenarios:
        fut = slice(scenario.t_obs_idx + 1, scenario.t_tot)
        futures = {t.agent_id: _future_track(t, fut) for t in scenario.agents}
        for track in scenario.agents:
            if not track.to_predict:
                continue
            n_predict += 1
            externals = [futures[t.agent_id] for t in scenario.agents
                         if t.agent_id != track.agent_id]
            total += mode_collision_count(futures[track.agent_id], externals, cfg)
    if n_predict == 0:
        raise EvalError("no predicted agents in corpus")
    return total / n_predict


def loss_weight_export(results, scale: float, path=None) -> list:
    """Per-agent training weights 1 + scale * score_ac, with score_fe carried
    along (the history-only score is the model-input side of remediation)."""
    records = []
    for scene, sets in results:
        for s in sets:
            records.append({"scenario_id": scene.scenario_id, "agent_id": s.agent_id,
                            "weight": 1.0 + scale * s.score_ac,
                            "score_fe": s.score_fe})
    records.sort(key=lambda r: (r["scenario_id"], r["agent_id"]))
    if path is not None:
        lines = [json.dumps(r, allow_nan=False, separators=(",", ":")) for r in records]
        Path(path).write_text("\n".join(lines) + "\n")
    return records
