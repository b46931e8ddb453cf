"""End-to-end orchestration: scenario -> features -> scores -> artifacts.

Per-scenario work is self-contained (parse, assign lanes, build the probe,
extract features) so it can fan out over a bounded worker pool; reductions
(anomaly fitting, normalization, score files) happen serially in sorted
scenario order, which keeps every output byte-identical for a given seed.
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .anomaly import TrafficPrimitiveAnomaly, to_primitive
from .config import INDIVIDUAL_FEATURES, INTERACTION_FEATURES, PipelineConfig
from .geometry import frenet_encode, points_to_polygon_dist
from .individual import (IndividualFeatures, conflict_regions,
                         kinematic_maxima_all, kinematic_profiles,
                         lane_following_fractions, speed_limit_excess, waiting_periods)
from .interaction import (InteractionFeatures, PairTrack, co_min_dist2,
                          extract_interactions_batch, find_interaction_pairs)
from .lanes import LaneIndex, assign_lane_windows, build_reference
from .scenario import AgentTrack, Scenario, parse_scenario
from .scoring import (FeatureNormalizer, SceneScore, TrajectoryScoreSet,
                      aggregate_scene, future_extrapolate, interaction_score)

VARIANTS_INDIVIDUAL = ("gt", "fe")
VARIANTS_PAIR = ("gt", "fe", "as_i", "as_j")


@dataclass
class AgentFeatureRecord:
    agent_id: str
    agent_type: str
    to_predict: bool
    assigned: bool
    d_to_predict: float
    individual: dict                    # variant -> IndividualFeatures
    primitives: dict = field(default_factory=dict)  # variant -> shape vector


@dataclass
class PairFeatureRecord:
    agent_i: str
    agent_j: str
    features: dict                      # variant -> InteractionFeatures


@dataclass
class ScenarioFeatures:
    scenario_id: str
    n_agents: int
    n_predict: int
    agents: dict                        # agent_id -> AgentFeatureRecord
    pairs: list


# ---------------------------------------------------------------------------
# extraction

@dataclass
class _TrackBundle:
    """Heavy per-variant intermediates; never leaves the extraction stage."""

    track: AgentTrack
    prof: object
    pair_track: PairTrack
    d: np.ndarray | None
    tangent: np.ndarray | None
    step_lanes: list
    map_reach: dict


def _map_reach_all(tracks, scenario: Scenario, cfg: PipelineConfig) -> list:
    """Per track: feature_id -> (min valid-step distance, first reach time,
    position). Distances are center-to-geometry per step (the same signal
    first-reach uses), so membership and timing stay consistent. Batched over
    all tracks of the scenario per feature.
    """
    out: list = [{} for _ in tracks]
    if not scenario.map_features or not tracks:
        return out
    xy = np.stack([t.xy for t in tracks])               # (N, T, 2)
    valid = np.stack([t.valid for t in tracks])         # (N, T)
    n, t_tot, _ = xy.shape
    flat = xy.reshape(-1, 2)
    margin = cfg.map_conflict_margin

    def fill(f, dist):
        near = valid & (dist <= margin)
        min_dist = np.where(valid, dist, np.inf).min(axis=1)
        hit = near.any(axis=1)
        first = near.argmax(axis=1)
        centroid = f.points.mean(axis=0)
        for i in range(n):
            if min_dist[i] <= margin:
                reach = float(first[i]) * scenario.dt if hit[i] else None
                out[i][f.feature_id] = (float(min_dist[i]), reach, centroid)

    pt_feats = [f for f in scenario.map_features if f.geometry_type == "point"]
    if pt_feats:
        centers = np.stack([f.points[0] for f in pt_feats])           # (F, 2)
        dists = np.hypot(flat[None, :, 0] - centers[:, 0, None],
                         flat[None, :, 1] - centers[:, 1, None])
        for f, dist in zip(pt_feats, dists.reshape(len(pt_feats), n, t_tot)):
            fill(f, dist)
    for f in scenario.map_features:
        if f.geometry_type != "point":
            fill(f, points_to_polygon_dist(flat, f.points).reshape(n, t_tot))
    return out


def _variant_bundle(track: AgentTrack, scenario: Scenario, assignment,
                    cfg: PipelineConfig, prof, map_reach: dict) -> _TrackBundle:
    pt = PairTrack(agent_id=track.agent_id, xy=track.xy, heading=track.heading,
                   valid=track.valid, speed=prof.speed, speed_valid=prof.speed_valid,
                   length=track.length, width=track.width)
    d = tangent = None
    step_lanes: list = [None] * scenario.t_tot
    if assignment is not None and assignment.reference is not None:
        fr = assignment.frenet
        if fr is None or len(fr.valid) != len(track.valid):
            fr = frenet_encode(track.xy, track.valid, assignment.reference)
        d, tangent = fr.d, fr.tangent_heading
        psl = assignment.per_step_lane
        step_lanes = [psl.get(t) for t in range(scenario.t_tot)]
        # steps outside the assignment window (the probe future) fall back to
        # the lane owning their arc position
        uncovered = [t for t in np.nonzero(track.valid)[0].tolist()
                     if step_lanes[t] is None]
        for t in uncovered:
            if not math.isnan(fr.s[t]):
                step_lanes[t] = assignment.lane_at_s(fr.s[t])
    return _TrackBundle(track=track, prof=prof, pair_track=pt, d=d, tangent=tangent,
                        step_lanes=step_lanes, map_reach=map_reach)


def _individual_features(bundle: _TrackBundle, scenario: Scenario,
                         maxima: tuple, wp: float, lff: float) -> IndividualFeatures:
    excess, _ = speed_limit_excess(bundle.prof, bundle.step_lanes, scenario.lanes)
    return IndividualFeatures(max_speed=maxima[0], max_accel=maxima[1], max_jerk=maxima[2],
                              waiting_period=wp, speed_limit_excess=excess,
                              lane_following_fraction=lff)


def extract_scenario_features(scenario: Scenario, cfg: PipelineConfig) -> ScenarioFeatures:
    regions = conflict_regions(scenario, cfg)
    all_steps = np.arange(scenario.t_tot)
    hist_steps = np.arange(scenario.t_obs_idx + 1)
    bundles: dict = {}
    records: dict = {}

    tracks = scenario.agents
    lane_index = LaneIndex(scenario.lanes)
    gt_assigns: list = []
    hist_assigns: list = []
    probes: list = []
    for track in tracks:
        gt_assign, hist_assign = assign_lane_windows(
            track.xy, track.heading, track.valid, all_steps,
            scenario.t_obs_idx, scenario.lanes, cfg, lane_index)
        if gt_assign is not None:
            build_reference(gt_assign, scenario.lanes, track.xy, track.valid, all_steps, cfg)
        if hist_assign is not None:
            build_reference(hist_assign, scenario.lanes, track.xy[:scenario.t_obs_idx + 1],
                            track.valid[:scenario.t_obs_idx + 1], hist_steps, cfg)
        gt_assigns.append(gt_assign)
        hist_assigns.append(hist_assign)
        probes.append(future_extrapolate(track, hist_assign, scenario.t_obs_idx,
                                         scenario.t_tot, scenario.dt, cfg))

    gt_profs = kinematic_profiles(np.stack([t.xy for t in tracks]),
                                  np.stack([t.valid for t in tracks]), scenario.dt)
    fe_profs = kinematic_profiles(np.stack([p.xy for p in probes]),
                                  np.stack([p.valid for p in probes]), scenario.dt)
    gt_reach = _map_reach_all(tracks, scenario, cfg)
    fe_reach = _map_reach_all(probes, scenario, cfg)

    n = len(tracks)
    gt_bundles = [_variant_bundle(tracks[i], scenario, gt_assigns[i], cfg,
                                  gt_profs[i], gt_reach[i]) for i in range(n)]
    fe_bundles = [_variant_bundle(probes[i], scenario, hist_assigns[i], cfg,
                                  fe_profs[i], fe_reach[i]) for i in range(n)]
    rows = gt_bundles + fe_bundles
    maxima = kinematic_maxima_all([b.prof for b in rows])
    wp = waiting_periods([b.track.xy for b in rows], [b.track.valid for b in rows],
                         [b.prof for b in rows], regions, scenario.dt, cfg)
    lff = np.zeros(len(rows))
    with_lane = [r for r, b in enumerate(rows) if b.d is not None]
    if with_lane:
        lff[with_lane] = lane_following_fractions(
            np.stack([rows[r].d for r in with_lane]),
            np.stack([rows[r].tangent for r in with_lane]),
            np.stack([rows[r].track.heading for r in with_lane]),
            np.stack([rows[r].track.valid for r in with_lane]), cfg)

    for i, track in enumerate(tracks):
        probe = probes[i]
        gt, fe = gt_bundles[i], fe_bundles[i]
        bundles[track.agent_id] = {"gt": gt, "fe": fe}
        ind_gt = _individual_features(gt, scenario, maxima[i], wp[i], float(lff[i]))
        ind_fe = _individual_features(fe, scenario, maxima[n + i], wp[n + i], float(lff[n + i]))
        records[track.agent_id] = AgentFeatureRecord(
            agent_id=track.agent_id, agent_type=track.agent_type,
            to_predict=track.to_predict, assigned=gt_assigns[i] is not None,
            d_to_predict=0.0, individual={"gt": ind_gt, "fe": ind_fe},
            primitives={
                "gt": to_primitive(track.xy, track.valid, cfg.anomaly_points),
                "fe": to_primitive(probe.xy, probe.valid, cfg.anomaly_points),
            })

    dist2 = co_min_dist2(scenario.agents)
    _fill_distances_to_predict(scenario, records, dist2)

    gated = find_interaction_pairs(scenario, cfg, dist2)
    pair_inputs = []
    for i, j in gated:
        ba = bundles[scenario.agents[i].agent_id]
        bb = bundles[scenario.agents[j].agent_id]
        pair_inputs.append((ba["gt"].pair_track, ba["fe"].pair_track,
                            bb["gt"].pair_track, bb["fe"].pair_track,
                            ba["gt"].map_reach, ba["fe"].map_reach,
                            bb["gt"].map_reach, bb["fe"].map_reach))
    pairs = [PairFeatureRecord(agent_i=scenario.agents[i].agent_id,
                               agent_j=scenario.agents[j].agent_id, features=feats)
             for (i, j), feats in zip(gated, extract_interactions_batch(
                 pair_inputs, scenario.dt, cfg))]

    return ScenarioFeatures(scenario_id=scenario.scenario_id, n_agents=scenario.n_agents,
                            n_predict=scenario.n_predict, agents=records, pairs=pairs)


def _fill_distances_to_predict(scenario: Scenario, records: dict, dist2: np.ndarray):
    predict_idx = [i for i, a in enumerate(scenario.agents) if a.to_predict]
    for i, track in enumerate(scenario.agents):
        rec = records[track.agent_id]
        if track.to_predict:
            rec.d_to_predict = 0.0
        else:
            best = min((float(dist2[i, j]) for j in predict_idx), default=math.inf)
            rec.d_to_predict = math.sqrt(best) if math.isfinite(best) else math.inf


# ---------------------------------------------------------------------------
# anomaly model over a corpus of extractions

def fit_anomaly_model(features_list, cfg: PipelineConfig,
                      fit_ids=None) -> TrafficPrimitiveAnomaly:
    """Fit prototypes on GT primitives of the fit corpus (sorted scenario order)."""
    rows = []
    ids = []
    partition_id = "all" if fit_ids is None else "subset"
    fit_set = None if fit_ids is None else set(fit_ids)
    for sf in sorted(features_list, key=lambda s: s.scenario_id):
        if fit_set is not None and sf.scenario_id not in fit_set:
            continue
        for agent_id in sorted(sf.agents):
            rows.append(sf.agents[agent_id].primitives["gt"])
            ids.append(sf.scenario_id)
    if not rows:
        raise ValueError("no primitives to fit the anomaly model on")
    model = TrafficPrimitiveAnomaly(n_clusters=cfg.anomaly_clusters,
                                    random_state=cfg.anomaly_seed,
                                    fit_partition_id=partition_id)
    return model.fit(np.asarray(rows), scenario_ids=ids)


def fill_anomaly(features_list, model: TrafficPrimitiveAnomaly):
    recs = []
    rows = []
    for sf in features_list:
        for agent_id in sorted(sf.agents):
            rec = sf.agents[agent_id]
            recs.append(rec)
            rows.extend(rec.primitives[v] for v in VARIANTS_INDIVIDUAL)
    if not recs:
        return
    # one distance pass for the whole corpus; scores are row-independent
    scores = model.anomaly_scores(np.asarray(rows))
    k = len(VARIANTS_INDIVIDUAL)
    for i, rec in enumerate(recs):
        for j, v in enumerate(VARIANTS_INDIVIDUAL):
            rec.individual[v].anomaly = float(scores[i * k + j])


# ---------------------------------------------------------------------------
# normalization and scoring

def normalizer_corpus(features_list, fit_ids=None) -> dict:
    """GT-variant feature columns across the corpus (FE saturation must not
    stretch the anchors — the probe is supposed to exceed the observed range)."""
    fit_set = None if fit_ids is None else set(fit_ids)
    cols: dict = {name: [] for name in INDIVIDUAL_FEATURES + INTERACTION_FEATURES}
    for sf in sorted(features_list, key=lambda s: s.scenario_id):
        if fit_set is not None and sf.scenario_id not in fit_set:
            continue
        for agent_id in sorted(sf.agents):
            for name, value in sf.agents[agent_id].individual["gt"].as_dict().items():
                cols[name].append(value)
        for pair in sf.pairs:
            for name, value in pair.features["gt"].as_dict().items():
                cols[name].append(value)
    return {name: np.asarray(vals, float) for name, vals in cols.items()}


def fit_normalizer(features_list, cfg: PipelineConfig, fit_ids=None) -> FeatureNormalizer:
    norm = FeatureNormalizer(lower_quantile=cfg.lower_quantile,
                             upper_quantile=cfg.upper_quantile,
                             inverse_eps=cfg.inverse_eps,
                             fit_partition_id="all" if fit_ids is None else "subset")
    ids = sorted({sf.scenario_id for sf in features_list
                  if fit_ids is None or sf.scenario_id in set(fit_ids)})
    corpus = normalizer_corpus(features_list, fit_ids)
    empty = [name for name, vals in corpus.items() if len(vals) == 0]
    if empty:
        raise ValueError(f"no fit rows for features: {empty}")
    return norm.fit(corpus, scenario_ids=ids)


def score_scenario(sf: ScenarioFeatures, normalizer: FeatureNormalizer,
                   cfg: PipelineConfig):
    """(SceneScore, [TrajectoryScoreSet]) for one extracted scenario."""
    agent_ids = sorted(sf.agents)
    ind_scores = {v: {} for v in VARIANTS_INDIVIDUAL}
    for agent_id in agent_ids:
        rec = sf.agents[agent_id]
        for v in VARIANTS_INDIVIDUAL:
            vals = rec.individual[v].as_dict()
            ind_scores[v][agent_id] = sum(
                cfg.weights_individual[name] * normalizer.normalize_scalar(name, vals[name])
                for name in INDIVIDUAL_FEATURES)
    pair_sum = {"gt": {aid: 0.0 for aid in agent_ids},
                "fe": {aid: 0.0 for aid in agent_ids},
                "as": {aid: 0.0 for aid in agent_ids}}
    for pair in sf.pairs:
        s_gt = interaction_score(pair.features["gt"], normalizer, cfg)
        s_fe = interaction_score(pair.features["fe"], normalizer, cfg)
        pair_sum["gt"][pair.agent_i] += s_gt
        pair_sum["gt"][pair.agent_j] += s_gt
        pair_sum["fe"][pair.agent_i] += s_fe
        pair_sum["fe"][pair.agent_j] += s_fe
        pair_sum["as"][pair.agent_i] += interaction_score(pair.features["as_i"], normalizer, cfg)
        pair_sum["as"][pair.agent_j] += interaction_score(pair.features["as_j"], normalizer, cfg)
    score_sets = [TrajectoryScoreSet(
        agent_id=aid,
        score_gt=ind_scores["gt"][aid] + pair_sum["gt"][aid],
        score_fe=ind_scores["fe"][aid] + pair_sum["fe"][aid],
        score_as=ind_scores["fe"][aid] + pair_sum["as"][aid],
    ) for aid in agent_ids]
    distances = [sf.agents[aid].d_to_predict for aid in agent_ids]
    scene = aggregate_scene(sf.scenario_id, score_sets, distances,
                            sf.n_agents, sf.n_predict)
    return scene, score_sets


def score_corpus(features_list, normalizer: FeatureNormalizer, cfg: PipelineConfig):
    return [score_scenario(sf, normalizer, cfg)
            for sf in sorted(features_list, key=lambda s: s.scenario_id)]


# ---------------------------------------------------------------------------
# file formats

def write_score_file(path, results):
    """JSONL, one record per scenario in sorted id order."""
    lines = []
    for scene, sets in results:
        rec = {
            "scenario_id": scene.scenario_id,
            "value": scene.value,
            "n": scene.n_agents,
            "p": scene.n_predict,
            "scene": scene.variants,
            "agents": [
                {"agent_id": s.agent_id, "gt": s.score_gt, "fe": s.score_fe,
                 "as": s.score_as, "ac": s.score_ac}
                for s in sets
            ],
        }
        lines.append(json.dumps(rec, allow_nan=False, separators=(",", ":")))
    Path(path).write_text("\n".join(lines) + "\n")


def read_score_file(path) -> list:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


def write_feature_tables(features_list, out_dir):
    """Long-format CSV tables: individual.csv, interaction.csv, agents.csv,
    scenarios.csv. Ordered by (scenario_id, agent ids, variant, feature)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ind_rows = ["scenario_id,agent_id,variant,feature_name,value"]
    pair_rows = ["scenario_id,agent_i,agent_j,variant,feature_name,value"]
    agent_rows = ["scenario_id,agent_id,agent_type,to_predict,assigned,d_to_predict"]
    scen_rows = ["scenario_id,n_agents,n_predict"]
    for sf in sorted(features_list, key=lambda s: s.scenario_id):
        scen_rows.append(f"{sf.scenario_id},{sf.n_agents},{sf.n_predict}")
        for agent_id in sorted(sf.agents):
            rec = sf.agents[agent_id]
            agent_rows.append(f"{sf.scenario_id},{agent_id},{rec.agent_type},"
                              f"{int(rec.to_predict)},{int(rec.assigned)},{_fmt(rec.d_to_predict)}")
            for v in VARIANTS_INDIVIDUAL:
                for name in INDIVIDUAL_FEATURES:
                    ind_rows.append(f"{sf.scenario_id},{agent_id},{v},{name},"
                                    f"{_fmt(getattr(rec.individual[v], name))}")
        for pair in sf.pairs:
            for v in VARIANTS_PAIR:
                for name in INTERACTION_FEATURES:
                    pair_rows.append(f"{sf.scenario_id},{pair.agent_i},{pair.agent_j},{v},"
                                     f"{name},{_fmt(getattr(pair.features[v], name))}")
    (out / "individual.csv").write_text("\n".join(ind_rows) + "\n")
    (out / "interaction.csv").write_text("\n".join(pair_rows) + "\n")
    (out / "agents.csv").write_text("\n".join(agent_rows) + "\n")
    (out / "scenarios.csv").write_text("\n".join(scen_rows) + "\n")


def _fmt(v: float) -> str:
    if math.isinf(v):
        return "inf"
    return repr(float(v))


def read_feature_tables(table_dir) -> list:
    """Rebuild geometry-free ScenarioFeatures from the CSV tables."""
    table = Path(table_dir)
    by_id: dict = {}
    for line in _rows(table / "scenarios.csv"):
        sid, n, p = line.split(",")
        by_id[sid] = ScenarioFeatures(scenario_id=sid, n_agents=int(n),
                                      n_predict=int(p), agents={}, pairs=[])
    for line in _rows(table / "agents.csv"):
        sid, aid, atype, pred, assigned, d = line.split(",")
        by_id[sid].agents[aid] = AgentFeatureRecord(
            agent_id=aid, agent_type=atype, to_predict=bool(int(pred)),
            assigned=bool(int(assigned)), d_to_predict=float(d),
            individual={v: IndividualFeatures() for v in VARIANTS_INDIVIDUAL})
    for line in _rows(table / "individual.csv"):
        sid, aid, v, name, value = line.split(",")
        setattr(by_id[sid].agents[aid].individual[v], name, float(value))
    pair_index: dict = {}
    for line in _rows(table / "interaction.csv"):
        sid, ai, aj, v, name, value = line.split(",")
        key = (sid, ai, aj)
        rec = pair_index.get(key)
        if rec is None:
            rec = PairFeatureRecord(agent_i=ai, agent_j=aj,
                                    features={k: InteractionFeatures() for k in VARIANTS_PAIR})
            pair_index[key] = rec
            by_id[sid].pairs.append(rec)
        setattr(rec.features[v], name, float(value))
    return [by_id[sid] for sid in sorted(by_id)]


def _rows(path: Path):
    lines = path.read_text().splitlines()
    return lines[1:]


# ---------------------------------------------------------------------------
# corpus runners

def _extract_one(args):
    path, cfg = args
    scenario = parse_scenario(Path(path).read_text())
    return extract_scenario_features(scenario, cfg)


def extract_corpus(paths, cfg: PipelineConfig):
    """Feature extraction over scenario files; deterministic sorted order."""
    paths = sorted(str(p) for p in paths)
    if cfg.workers > 1:
        import multiprocessing as mp
        with mp.Pool(cfg.workers) as pool:
            out = list(pool.imap(_extract_one, [(p, cfg) for p in paths], chunksize=8))
    else:
        out = [_extract_one((p, cfg)) for p in paths]
    return out


def run_features(paths, cfg: PipelineConfig, out_dir, fit_ids=None):
    """Extract + fit anomaly prototypes + fill scores + write tables."""
    features_list = extract_corpus(paths, cfg)
    model = fit_anomaly_model(features_list, cfg, fit_ids)
    fill_anomaly(features_list, model)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_feature_tables(features_list, out)
    model.save(out / "anomaly_model.json")
    return features_list, model
