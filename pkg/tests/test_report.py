import math
from types import SimpleNamespace

import numpy as np
import pytest
from scipy import stats

from scenemine.config import INDIVIDUAL_FEATURES, INTERACTION_FEATURES
from scenemine.individual import IndividualFeatures
from scenemine.interaction import InteractionFeatures
from scenemine.report import (SCENE_VARIANTS, agent_feature_frame,
                              correlation_matrix, sample_skewness,
                              score_histogram, write_correlation_csv,
                              write_histogram_csv)
from scenemine.scoring import SceneScore

# ---------------------------------------------------------------------------
# correlation


def test_correlation_affine_relations_hit_plus_minus_one():
    x = np.linspace(0.0, 5.0, 40)
    names, mat, flags = correlation_matrix(
        {"a": x, "b": 2.0 * x + 1.0, "c": -x})
    assert names == ["a", "b", "c"]
    assert mat[0, 1] == 1.0 and mat[0, 2] == -1.0 and mat[1, 2] == -1.0
    assert flags == []


def test_correlation_symmetric_unit_diagonal_bounded():
    rng = np.random.default_rng(1)
    table = {f"f{i}": rng.normal(size=60) for i in range(5)}
    _, mat, _ = correlation_matrix(table)
    assert np.array_equal(mat, mat.T)
    assert np.array_equal(np.diag(mat), np.ones(5))
    assert np.all(np.abs(mat) <= 1.0)


def test_correlation_zero_variance_flagged():
    x = np.arange(10.0)
    names, mat, flags = correlation_matrix({"a": x, "flat": np.full(10, 3.0)})
    assert mat[0, 1] == 0.0
    assert flags == [("a", "flat")]


def test_correlation_pairwise_complete_rows():
    rng = np.random.default_rng(2)
    x = rng.normal(size=50)
    y = 0.6 * x + rng.normal(scale=0.3, size=50)
    x_holes, y_holes = x.copy(), y.copy()
    x_holes[::7] = math.nan
    y_holes[3::11] = math.nan
    _, mat, flags = correlation_matrix({"x": x_holes, "y": y_holes})
    mask = np.isfinite(x_holes) & np.isfinite(y_holes)
    expect = np.corrcoef(x_holes[mask], y_holes[mask])[0, 1]
    assert mat[0, 1] == pytest.approx(expect, rel=1e-12)
    assert flags == []


def test_correlation_matches_scipy():
    rng = np.random.default_rng(6)
    table = {f"f{i}": rng.normal(size=80) for i in range(4)}
    names, mat, _ = correlation_matrix(table)
    for i in range(4):
        for j in range(i + 1, 4):
            expect = stats.pearsonr(table[names[i]], table[names[j]]).statistic
            assert mat[i, j] == pytest.approx(expect, rel=1e-12)


def test_correlation_input_errors():
    with pytest.raises(ValueError, match="ragged"):
        correlation_matrix({"a": np.arange(3.0), "b": np.arange(4.0)})
    with pytest.raises(ValueError, match="2 rows"):
        correlation_matrix({"a": np.array([1.0])})


def test_correlation_csv_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    table = {f"f{i}": rng.normal(size=30) for i in range(4)}
    names, mat, _ = correlation_matrix(table)
    path = tmp_path / "corr.csv"
    write_correlation_csv(names, mat, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "feature," + ",".join(names)
    back = np.array([[float(v) for v in line.split(",")[1:]]
                     for line in lines[1:]])
    assert np.array_equal(back, mat)


# ---------------------------------------------------------------------------
# skewness


def test_skewness_constant_is_zero():
    assert sample_skewness(np.full(50, 4.2)) == 0.0


def test_skewness_hand_value():
    # m = 1/4, m2 = 3/16, m3 = 3/32 -> skew = 2 / sqrt(3)
    assert sample_skewness([0.0, 0.0, 0.0, 1.0]) == pytest.approx(2.0 / math.sqrt(3.0))


def test_skewness_signs():
    rng = np.random.default_rng(4)
    assert sample_skewness(rng.exponential(1.0, 20000)) > 0.5
    assert abs(sample_skewness(rng.normal(size=20000))) < 0.1
    assert sample_skewness(-rng.exponential(1.0, 20000)) < -0.5


def test_skewness_matches_scipy():
    rng = np.random.default_rng(9)
    for draw in (rng.exponential(2.0, 500), rng.normal(3.0, 0.5, 500),
                 rng.uniform(-1.0, 4.0, 500)):
        assert sample_skewness(draw) == pytest.approx(stats.skew(draw),
                                                      rel=1e-12)


# ---------------------------------------------------------------------------
# score histograms


def scene_records(n, seed=5):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        gt = float(rng.exponential(0.5))
        fe = float(rng.exponential(0.8))
        as_ = float(rng.exponential(0.8))
        variants = {"gt": gt, "fe": fe, "as": as_,
                    "combined": max(gt, fe), "ac": max(gt, as_)}
        out.append(SceneScore(scenario_id=f"s{i:04d}", value=variants["ac"],
                              n_agents=4, n_predict=2, variants=variants))
    return out


def test_histogram_density_integrates_to_one():
    hists = score_histogram(scene_records(500), bins=40)
    assert set(hists) == set(SCENE_VARIANTS)
    for h in hists.values():
        assert h.counts.sum() == h.n == 500
        assert float(np.sum(h.density * np.diff(h.edges))) == pytest.approx(1.0, abs=1e-9)
        assert h.std == pytest.approx(
            np.std([r.variants[h.variant] for r in scene_records(500)], ddof=1))


def test_histogram_accepts_dicts_and_tuples():
    records = scene_records(20)
    as_dicts = [{"scene": r.variants} for r in records]
    as_tuples = [(r, None) for r in records]
    a = score_histogram(records, bins=10)
    b = score_histogram(as_dicts, bins=10)
    c = score_histogram(as_tuples, bins=10)
    for key in SCENE_VARIANTS:
        assert np.array_equal(a[key].counts, b[key].counts)
        assert np.array_equal(a[key].counts, c[key].counts)
        assert a[key].skewness == b[key].skewness == c[key].skewness


def test_histogram_needs_two_scores():
    with pytest.raises(ValueError):
        score_histogram(scene_records(1))


def test_histogram_csv_shape(tmp_path):
    hists = score_histogram(scene_records(100), bins=25)
    path = tmp_path / "hist.csv"
    write_histogram_csv(hists, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "variant,bin_lo,bin_hi,count,density"
    assert len(lines) == 1 + 25 * len(SCENE_VARIANTS)
    total = sum(int(line.split(",")[3]) for line in lines[1:]
                if line.startswith("gt,"))
    assert total == 100


# ---------------------------------------------------------------------------
# per-agent feature table


def fake_features():
    def ind(v):
        return IndividualFeatures(max_speed=v, max_accel=v, max_jerk=v,
                                  waiting_period=v, speed_limit_excess=v,
                                  lane_following_fraction=v, anomaly=v)

    def inter(ttc, cc):
        return InteractionFeatures(min_thw=ttc + 1.0, min_ttc=ttc, max_drac=1.0 / ttc,
                                   min_delta_mttcp_traj=ttc, min_delta_mttcp_map=ttc,
                                   collision_count=cc)

    pairs = [
        SimpleNamespace(agent_i="a00", agent_j="a01",
                        features={"gt": inter(2.0, 1.0), "fe": inter(4.0, 0.0),
                                  "as_i": inter(0.5, 2.0), "as_j": inter(8.0, 0.0)}),
        SimpleNamespace(agent_i="a00", agent_j="a02",
                        features={"gt": inter(1.0, 2.0), "fe": inter(6.0, 0.0),
                                  "as_i": inter(3.0, 1.0), "as_j": inter(9.0, 0.0)}),
    ]
    agents = {aid: SimpleNamespace(individual={"gt": ind(float(i)),
                                               "fe": ind(10.0 + i)})
              for i, aid in enumerate(("a00", "a01", "a02", "a03"))}
    return [SimpleNamespace(scenario_id="s000", pairs=pairs, agents=agents)]


def test_agent_frame_folds_pairs_per_agent():
    frame = agent_feature_frame(fake_features(), variant="gt")
    assert set(frame) == set(INDIVIDUAL_FEATURES + INTERACTION_FEATURES)
    assert all(len(v) == 4 for v in frame.values())
    # rows sorted by agent id: a00 participates in both pairs
    assert frame["min_ttc"][0] == 1.0          # min over pairs
    assert frame["collision_count"][0] == 3.0  # sum over pairs
    assert frame["max_drac"][0] == 1.0         # max over pairs
    assert frame["min_ttc"][1] == 2.0 and frame["min_ttc"][2] == 1.0
    assert math.isnan(frame["min_ttc"][3])     # a03 has no pairs
    assert np.array_equal(frame["max_speed"], [0.0, 1.0, 2.0, 3.0])


def test_agent_frame_asymmetric_variant_sides():
    frame = agent_feature_frame(fake_features(), variant="as")
    # a00 is agent_i in both pairs -> as_i features, folded
    assert frame["min_ttc"][0] == 0.5
    assert frame["collision_count"][0] == 3.0
    # a01/a02 are agent_j -> as_j features
    assert frame["min_ttc"][1] == 8.0 and frame["min_ttc"][2] == 9.0
    # individual side switches to the probe features
    assert np.array_equal(frame["max_speed"], [10.0, 11.0, 12.0, 13.0])


def test_agent_frame_fe_variant():
    frame = agent_feature_frame(fake_features(), variant="fe")
    assert frame["min_ttc"][0] == 4.0
    assert frame["min_ttc"][1] == 4.0 and frame["min_ttc"][2] == 6.0
    assert np.array_equal(frame["max_speed"], [10.0, 11.0, 12.0, 13.0])
