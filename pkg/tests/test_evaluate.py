import json
import math

import numpy as np
import pytest

from helpers import agent_dict, make_scenario, straight_xy
from scenemine.evaluate import (AgentPrediction, EvalError, average_precision,
                                bucket_of, derive_headings, evaluate_predictions,
                                gt_as_predictions, gt_collision_rate,
                                load_predictions, loss_weight_export,
                                min_ade_fde, min_collision_mode)
from scenemine.interaction import PairTrack
from scenemine.scoring import SceneScore, TrajectoryScoreSet

T_TOT, T_OBS = 30, 9


def future(scenario, agent_id):
    track = {t.agent_id: t for t in scenario.agents}[agent_id]
    return track.xy[scenario.t_obs_idx + 1:scenario.t_tot]


def predict_gt(*scenarios):
    preds = {}
    for s in scenarios:
        preds.update(gt_as_predictions(s))
    return preds


def straight_agent(agent_id, y, *, speed=10.0, to_predict=True,
                   agent_type="vehicle", dims=(4.5, 2.0)):
    return agent_dict(agent_id, straight_xy(0.0, y, 0.0, speed, T_TOT),
                      heading=np.zeros(T_TOT), agent_type=agent_type,
                      dims=dims, to_predict=to_predict)


def blocker_agent(agent_id, x, y=0.0):
    return agent_dict(agent_id, np.tile([x, y], (T_TOT, 1)),
                      heading=np.zeros(T_TOT), to_predict=False)


def clean_scenario(scenario_id="s000"):
    return make_scenario([straight_agent("a00", 0.0), straight_agent("a01", 20.0)],
                         scenario_id=scenario_id, t_obs_idx=T_OBS)


def overlap_scenario(scenario_id="s001", blockers=(15.0,)):
    agents = [straight_agent("a00", 0.0)]
    agents += [blocker_agent(f"b{i:02d}", x) for i, x in enumerate(blockers)]
    return make_scenario(agents, scenario_id=scenario_id, t_obs_idx=T_OBS)


# ---------------------------------------------------------------------------
# displacement errors


def test_min_ade_fde_perfect_mode_is_zero():
    gt = straight_xy(0.0, 0.0, 0.3, 8.0, 20)
    ade, fde = min_ade_fde(gt[None, :, :], gt, np.ones(20, bool))
    assert ade == 0.0 and fde == 0.0


def test_min_ade_fde_constant_offsets():
    gt = straight_xy(0.0, 0.0, 0.0, 8.0, 20)
    modes = np.stack([gt + [0.0, 1.0], gt + [0.0, 3.0]])
    assert min_ade_fde(modes, gt, np.ones(20, bool)) == (1.0, 1.0)


def test_min_ade_fde_independent_minima():
    gt = straight_xy(0.0, 0.0, 0.0, 8.0, 20)
    near_then_wild = gt + [0.0, 1.0]
    near_then_wild[-1, 1] = 5.0
    modes = np.stack([near_then_wild, gt + [0.0, 2.0]])
    ade, fde = min_ade_fde(modes, gt, np.ones(20, bool))
    assert ade == pytest.approx((19 * 1.0 + 5.0) / 20)
    assert fde == 2.0


def test_min_ade_fde_needs_valid_future():
    gt = np.zeros((5, 2))
    with pytest.raises(EvalError):
        min_ade_fde(gt[None], gt, np.zeros(5, bool))


def test_derive_headings_follows_motion_and_stalls():
    xy = np.array([[1.0, 0.0], [2.0, 0.0], [2.0, 0.0], [2.0, 1.0]])
    h = derive_headings(xy, seed_heading=0.7, anchor_xy=np.array([0.0, 0.0]))
    assert h == pytest.approx([0.0, 0.0, 0.0, math.pi / 2])
    still = derive_headings(np.zeros((3, 2)), 0.7, np.zeros(2))
    assert np.all(still == 0.7)


# ---------------------------------------------------------------------------
# trajectory buckets


def test_bucket_thresholds():
    assert bucket_of(1.9, 3.0) == "stationary"
    assert bucket_of(10.0, 0.1) == "straight"
    assert bucket_of(10.0, 0.4) == "straight_left"
    assert bucket_of(10.0, -0.4) == "straight_right"
    assert bucket_of(10.0, 0.7) == "left"
    assert bucket_of(10.0, -0.7) == "right"
    assert bucket_of(10.0, 2.5) == "left_u_turn"
    assert bucket_of(10.0, -2.5) == "right_u_turn"


# ---------------------------------------------------------------------------
# collision rate


def test_collision_free_gt_predictions(cfg):
    s = clean_scenario()
    report = evaluate_predictions(predict_gt(s), [s], cfg)
    m = report.overall
    assert m.n_agents == 2 and m.collision_rate == 0.0
    assert m.min_ade == 0.0 and m.min_fde == 0.0 and m.map == 1.0
    assert report.skipped == []


def test_overlapping_steps_count_once_per_agent(cfg):
    s = overlap_scenario()
    # the mode sweeps through the blocker for many consecutive steps
    xs = future(s, "a00")[:, 0]
    assert ((np.abs(xs - 15.0) < 4.5).sum()) >= 5
    report = evaluate_predictions(predict_gt(s), [s], cfg)
    assert report.overall.collision_rate == 1.0


def test_two_external_collisions_contribute_two(cfg):
    s = overlap_scenario(blockers=(15.0, 23.0))
    report = evaluate_predictions(predict_gt(s), [s], cfg)
    assert report.overall.collision_rate == 2.0


def test_gt_predictions_match_gt_collision_rate(cfg):
    corpus = [clean_scenario("s000"), overlap_scenario("s001"),
              overlap_scenario("s002", blockers=(15.0, 23.0))]
    report = evaluate_predictions(predict_gt(*corpus), corpus, cfg)
    baseline = gt_collision_rate(corpus, cfg)
    assert baseline == pytest.approx((0 + 0 + 1 + 2) / 4)
    assert report.overall.collision_rate == pytest.approx(baseline)


def test_overall_averages_class_metrics(cfg):
    s = make_scenario(
        [straight_agent("a00", 0.0), blocker_agent("b00", 15.0),
         straight_agent("p00", 50.0, speed=5.0, agent_type="pedestrian",
                        dims=(1.0, 1.0))],
        scenario_id="s000", t_obs_idx=T_OBS)
    report = evaluate_predictions(predict_gt(s), [s], cfg)
    assert report.classes["vehicle"].collision_rate == 1.0
    assert report.classes["pedestrian"].collision_rate == 0.0
    assert report.overall.collision_rate == 0.5
    assert report.overall.n_agents == 2


def test_mode_rule_selects_judged_mode(cfg):
    s = overlap_scenario()
    gt_fut = future(s, "a00")
    clean = gt_fut + [0.0, 10.0]
    preds = {("s001", "a00"): AgentPrediction(
        scenario_id="s001", agent_id="a00",
        modes=np.stack([gt_fut, clean]), confidences=np.array([0.1, 0.9]))}
    top_conf = evaluate_predictions(preds, [s], cfg, mode_rule="top_confidence")
    assert top_conf.overall.collision_rate == 0.0
    best_ade = evaluate_predictions(preds, [s], cfg, mode_rule="best_ade")
    assert best_ade.overall.collision_rate == 1.0


def test_missing_prediction_raises_with_ids(cfg):
    s = clean_scenario()
    preds = predict_gt(s)
    del preds[("s000", "a01")]
    with pytest.raises(EvalError, match="a01"):
        evaluate_predictions(preds, [s], cfg)


def test_agent_without_valid_future_is_skipped(cfg):
    valid = np.ones(T_TOT, bool)
    valid[T_OBS + 1:] = False
    ghost = agent_dict("a01", straight_xy(0.0, 30.0, 0.0, 10.0, T_TOT),
                       heading=np.zeros(T_TOT), valid=valid)
    s = make_scenario([straight_agent("a00", 0.0), ghost],
                      scenario_id="s000", t_obs_idx=T_OBS)
    preds = predict_gt(s)
    preds[("s000", "a01")] = AgentPrediction(
        scenario_id="s000", agent_id="a01",
        modes=np.zeros((1, T_TOT - 1 - T_OBS, 2)), confidences=np.ones(1))
    report = evaluate_predictions(preds, [s], cfg)
    assert report.skipped == ["s000/a01"]
    assert report.overall.n_agents == 1


# ---------------------------------------------------------------------------
# mAP


def test_map_duplicate_identical_modes_penalized(cfg):
    s = clean_scenario()
    preds = {}
    for aid in ("a00", "a01"):
        gt_fut = future(s, aid)
        preds[("s000", aid)] = AgentPrediction(
            scenario_id="s000", agent_id=aid,
            modes=np.stack([gt_fut, gt_fut]),
            confidences=np.array([0.5, 0.5]))
    report = evaluate_predictions(preds, [s], cfg)
    assert report.overall.map < 1.0


def test_map_all_misses_is_zero(cfg):
    s = clean_scenario()
    preds = {}
    for aid in ("a00", "a01"):
        gt_fut = future(s, aid)
        preds[("s000", aid)] = AgentPrediction(
            scenario_id="s000", agent_id=aid,
            modes=(gt_fut + [0.0, 100.0])[None], confidences=np.ones(1))
    report = evaluate_predictions(preds, [s], cfg)
    assert report.overall.map == 0.0
    assert report.overall.min_fde == 100.0


def test_average_precision_hand_curve():
    records = [(0.9, True), (0.8, False), (0.7, True)]
    # precision envelope: 1.0 up to recall 0.5, then 2/3
    assert average_precision(records, n_gt=2) == pytest.approx(
        (6 * 1.0 + 5 * (2 / 3)) / 11)
    assert average_precision([(0.5, True), (0.5, True)], n_gt=1) == 1.0
    with pytest.raises(ValueError):
        average_precision(records, n_gt=0)


# ---------------------------------------------------------------------------
# min-collision mode labels


def blocked_track_fixture(cfg):
    s = overlap_scenario()
    track = s.agents[0]
    t_fut = s.t_tot - 1 - s.t_obs_idx
    blocker = PairTrack(agent_id="b00", xy=np.tile([15.0, 0.0], (t_fut, 1)),
                        heading=np.zeros(t_fut), valid=np.ones(t_fut, bool),
                        speed=np.zeros(t_fut), speed_valid=np.zeros(t_fut, bool),
                        length=4.5, width=2.0)
    through = future(s, "a00")
    aside = through + [0.0, 10.0]
    return s, track, [blocker], through, aside


def test_min_collision_mode_prefers_clean(cfg):
    s, track, externals, through, aside = blocked_track_fixture(cfg)
    pred = AgentPrediction("s001", "a00", np.stack([through, aside]),
                           np.array([0.9, 0.1]))
    k = min_collision_mode(pred, track, externals, 0.0, track.xy[s.t_obs_idx], cfg)
    assert k == 1


def test_min_collision_mode_ties_break_by_confidence_then_index(cfg):
    s, track, externals, _, aside = blocked_track_fixture(cfg)
    pred = AgentPrediction("s001", "a00",
                           np.stack([aside, aside + [0.0, 2.0]]),
                           np.array([0.2, 0.8]))
    assert min_collision_mode(pred, track, externals, 0.0,
                              track.xy[s.t_obs_idx], cfg) == 1
    same = AgentPrediction("s001", "a00", np.stack([aside, aside]),
                           np.array([0.5, 0.5]))
    assert min_collision_mode(same, track, externals, 0.0,
                              track.xy[s.t_obs_idx], cfg) == 0


# ---------------------------------------------------------------------------
# prediction files and weight export


def test_load_predictions_round_trip(tmp_path):
    path = tmp_path / "preds.jsonl"
    lines = []
    for aid in ("a00", "a01"):
        lines.append(json.dumps({
            "scenario_id": "s000", "agent_id": aid,
            "modes": [[[float(k), 0.0] for k in range(5)],
                      [[float(k), 1.0] for k in range(5)]],
            "confidences": [0.7, 0.3]}))
    path.write_text("\n".join(lines) + "\n")
    preds = load_predictions(path)
    assert set(preds) == {("s000", "a00"), ("s000", "a01")}
    assert preds[("s000", "a00")].modes.shape == (2, 5, 2)
    assert np.array_equal(preds[("s000", "a00")].confidences, [0.7, 0.3])


def test_load_predictions_rejects_malformed(tmp_path):
    path = tmp_path / "preds.jsonl"
    good = {"scenario_id": "s0", "agent_id": "a0",
            "modes": [[[0.0, 0.0], [1.0, 0.0]]], "confidences": [1.0]}

    def check(record_lines, match):
        path.write_text("\n".join(record_lines) + "\n")
        with pytest.raises(EvalError, match=match):
            load_predictions(path)

    check(["{not json"], "JSON")
    check([json.dumps({**good, "confidences": [-0.1]})], "confidences")
    check([json.dumps({**good, "confidences": [0.7, 0.7],
                       "modes": good["modes"] * 2})], "confidences")
    check([json.dumps({**good, "modes": [[0.0, 0.0]]})], "modes")
    check([json.dumps(good), json.dumps(good)], "duplicate")
    two_modes = {**good, "agent_id": "a1", "modes": good["modes"] * 2,
                 "confidences": [0.5, 0.5]}
    check([json.dumps(good), json.dumps(two_modes)], "K changed")
    check([json.dumps({**good, "modes": [[[math.nan, 0.0], [1.0, 0.0]]]})],
          "finite")


def test_loss_weight_export_examples(tmp_path):
    scene = SceneScore(scenario_id="s000", value=0.0, n_agents=2, n_predict=1,
                       variants={})
    sets = [TrajectoryScoreSet("a01", score_gt=2.5, score_fe=1.25, score_as=1.0),
            TrajectoryScoreSet("a00", score_gt=0.0, score_fe=0.0, score_as=0.0)]
    path = tmp_path / "weights.jsonl"
    records = loss_weight_export([(scene, sets)], scale=1.0, path=path)
    assert [r["agent_id"] for r in records] == ["a00", "a01"]
    assert records[0]["weight"] == 1.0
    assert records[1]["weight"] == 3.5
    assert records[1]["score_fe"] == 1.25
    off = loss_weight_export([(scene, sets)], scale=0.0)
    assert all(r["weight"] == 1.0 for r in off)
    parsed = [json.loads(line) for line in path.read_text().splitlines()]
    assert parsed == records
