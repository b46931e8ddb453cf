import math

import numpy as np
import pytest

from helpers import straight_xy
from scenemine.anomaly import (TrafficPrimitiveAnomaly, audit_fit_leakage,
                               canonical_frame, resample_track, to_pair_primitive,
                               to_primitive)


def test_resample_hand_table():
    # 7 steps along +x at 1 m/step; M=4 equal-time points hit steps 0, 2, 4, 6
    xy = np.stack([np.arange(7.0), np.zeros(7)], axis=1)
    out = resample_track(xy, np.ones(7, bool), 4)
    assert np.allclose(out, [(0, 0), (2, 0), (4, 0), (6, 0)])
    # non-divisible case interpolates: 6 steps, M=4 -> parameter 0, 5/3, 10/3, 5
    out = resample_track(xy[:6], np.ones(6, bool), 4)
    assert np.allclose(out[:, 0], [0.0, 5.0 / 3.0, 10.0 / 3.0, 5.0])


def test_resample_skips_invalid_steps():
    xy = np.stack([np.arange(8.0), np.zeros(8)], axis=1)
    valid = np.array([True, False, True, True, False, True, True, False])
    out = resample_track(xy, valid, 3)
    # interpolation runs over the 5 valid samples only
    assert out[0, 0] == 0.0 and out[-1, 0] == 6.0


def test_canonicalization_rotation_and_translation():
    rng = np.random.default_rng(3)
    base = np.stack([np.linspace(0, 10, 16), np.zeros(16)], axis=1)
    template = to_primitive(base, np.ones(16, bool), 16)
    for _ in range(10):
        ang = rng.uniform(-math.pi, math.pi)
        shift = rng.uniform(-50, 50, 2)
        R = np.array([[math.cos(ang), -math.sin(ang)],
                      [math.sin(ang), math.cos(ang)]])
        moved = to_primitive(base @ R.T + shift, np.ones(16, bool), 16)
        assert np.allclose(moved, template, atol=1e-9)


def test_degenerate_track_zero_vector():
    xy = np.tile([(7.0, -3.0)], (10, 1))
    assert not to_primitive(xy, np.ones(10, bool), 8).any()


def test_pair_primitive_anchored_to_first_track():
    xy_i = straight_xy(0.0, 0.0, 0.3, 10.0, 20)
    xy_j = straight_xy(5.0, 2.0, 0.3, 8.0, 20)
    ones = np.ones(20, bool)
    v = to_pair_primitive(xy_i, ones, xy_j, ones, 8)
    assert v.shape == (32,)
    # anchor track starts at the origin pointing +x in its own frame
    assert abs(v[0]) < 1e-9 and abs(v[1]) < 1e-9
    shifted = to_pair_primitive(xy_i + 30.0, ones, xy_j + 30.0, ones, 8)
    assert np.allclose(v, shifted, atol=1e-9)


def two_family_primitives(n_each=40, seed=0):
    rng = np.random.default_rng(seed)
    rows = []
    for _ in range(n_each):
        t = 16
        straight = np.stack([np.linspace(0, 12, t), rng.normal(0, 0.02, t)], axis=1)
        rows.append(to_primitive(straight, np.ones(t, bool), 8))
    for _ in range(n_each):
        t = 16
        ang = np.linspace(0, math.pi / 2, t)
        turn = np.stack([10 * np.sin(ang), 10 * (1 - np.cos(ang))], axis=1)
        turn += rng.normal(0, 0.02, (t, 2))
        rows.append(to_primitive(turn, np.ones(t, bool), 8))
    return np.array(rows), np.repeat([0, 1], n_each)


def test_two_separable_families_pure_clusters():
    X, family = two_family_primitives()
    model = TrafficPrimitiveAnomaly(n_clusters=2, random_state=0).fit(X)
    labels = model.predict(X)
    for fam in (0, 1):
        vals, counts = np.unique(labels[family == fam], return_counts=True)
        assert counts.max() == counts.sum()  # purity 1.0


def test_k_one_centroid_is_mean():
    X, _ = two_family_primitives(seed=5)
    model = TrafficPrimitiveAnomaly(n_clusters=1, random_state=0).fit(X)
    Z = (X - model.mean_) / model.scale_
    assert np.allclose(model.centroids_[0], Z.mean(axis=0), atol=1e-9)


def test_same_seed_bitwise_identical():
    X, _ = two_family_primitives(seed=9)
    a = TrafficPrimitiveAnomaly(n_clusters=4, random_state=7).fit(X)
    b = TrafficPrimitiveAnomaly(n_clusters=4, random_state=7).fit(X)
    assert np.array_equal(a.centroids_, b.centroids_)
    assert a.median_distance_ == b.median_distance_


def test_fewer_distinct_points_reduces_k():
    X = np.tile(np.arange(6.0), (20, 1))
    X[10:] += 1.0
    with pytest.warns(UserWarning, match="reducing k"):
        model = TrafficPrimitiveAnomaly(n_clusters=8).fit(X)
    assert len(model.centroids_) == 2


def test_anomaly_score_anchors():
    X, _ = two_family_primitives(n_each=51, seed=13)
    model = TrafficPrimitiveAnomaly(n_clusters=2, random_state=0).fit(X)
    # a point sitting exactly on a centroid scores 0
    on_centroid = model.centroids_[0] * model.scale_ + model.mean_
    assert model.anomaly_scores(on_centroid[None, :])[0] == pytest.approx(0.0, abs=1e-12)
    # the median fit distance is the unit: median of fit scores = 1.0
    fit_scores = model.anomaly_scores(X)
    assert np.median(fit_scores) == pytest.approx(1.0, rel=1e-9)
    assert (fit_scores >= 0).all()


def test_far_outlier_scores_ten():
    X, _ = two_family_primitives(n_each=51, seed=17)
    model = TrafficPrimitiveAnomaly(n_clusters=2, random_state=0).fit(X)
    z = model.centroids_[0].copy()
    direction = np.ones_like(z) / math.sqrt(len(z))
    outlier = (z + 10.0 * model.median_distance_ * direction) * model.scale_ + model.mean_
    got = model.anomaly_scores(outlier[None, :])[0]
    assert got == pytest.approx(10.0, rel=1e-6)


def test_score_rigid_motion_invariant():
    X, _ = two_family_primitives(seed=21)
    model = TrafficPrimitiveAnomaly(n_clusters=2, random_state=0).fit(X)
    rng = np.random.default_rng(23)
    t = 16
    xy = np.stack([np.linspace(0, 11, t), 0.3 * np.sin(np.linspace(0, 3, t))], axis=1)
    base = model.anomaly_scores(to_primitive(xy, np.ones(t, bool), 8)[None, :])[0]
    for _ in range(5):
        ang = rng.uniform(-math.pi, math.pi)
        R = np.array([[math.cos(ang), -math.sin(ang)],
                      [math.sin(ang), math.cos(ang)]])
        moved = to_primitive(xy @ R.T + rng.uniform(-40, 40, 2),
                             np.ones(t, bool), 8)
        assert model.anomaly_scores(moved[None, :])[0] == pytest.approx(base, rel=1e-9)


def test_audit_fit_leakage():
    X, _ = two_family_primitives(seed=27)
    ids = [f"s{i:03d}" for i in range(len(X))]
    split = {sid: ("test" if i % 4 == 0 else "train") for i, sid in enumerate(ids)}
    train_ids = [sid for sid in ids if split[sid] == "train"]
    train_rows = np.array([x for x, sid in zip(X, ids) if split[sid] == "train"])
    clean = TrafficPrimitiveAnomaly(n_clusters=2, fit_partition_id="train").fit(
        train_rows, scenario_ids=train_ids)
    audit_fit_leakage(clean, split, partition="test")
    leaky = TrafficPrimitiveAnomaly(n_clusters=2, fit_partition_id="all").fit(
        X, scenario_ids=ids)
    with pytest.raises(RuntimeError, match="fit on"):
        audit_fit_leakage(leaky, split, partition="test")
