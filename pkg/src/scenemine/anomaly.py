"""Trajectory shape primitives and distance-to-prototype anomaly scoring.

Tracks are resampled to a fixed number of equal-time points, canonicalized
(translate the first point to the origin, rotate the initial heading onto +x),
and flattened. A seeded k-means over the fit corpus provides prototypes; the
anomaly score is the standardized distance to the nearest prototype divided by
the median fit distance, so a typical fit-set track scores about 1.
"""

import json
import math
import warnings
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.cluster import KMeans


_UNIT_GRID: dict = {}


def resample_track(xy, valid, n_points: int) -> np.ndarray:
    """Equal-time resampling of the valid span; linear interpolation bridges
    interior gaps. Fewer than two valid steps degenerate to a constant row."""
    xy = np.asarray(xy, float)
    valid = np.asarray(valid, bool)
    idx = np.nonzero(valid)[0]
    if len(idx) == 0:
        return np.zeros((n_points, 2))
    if len(idx) == 1:
        return np.repeat(xy[idx], n_points, axis=0)
    base = _UNIT_GRID.get(n_points)
    if base is None:
        base = _UNIT_GRID.setdefault(n_points, np.linspace(0.0, 1.0, n_points))
    t = idx[0] + base * (idx[-1] - idx[0])
    out = np.empty((n_points, 2))
    out[:, 0] = np.interp(t, idx, xy[idx, 0])
    out[:, 1] = np.interp(t, idx, xy[idx, 1])
    return out


def canonical_frame(points: np.ndarray):
    """(origin, rotation) aligning the first point to 0 and the initial heading
    to +x. Degenerate tracks (no displacement anywhere) get the identity."""
    origin = points[0].copy()
    rot = np.eye(2)
    for p in points[1:]:
        dx, dy = p[0] - origin[0], p[1] - origin[1]
        if math.hypot(dx, dy) > 1e-9:
            h = math.atan2(dy, dx)
            c, s = math.cos(h), math.sin(h)
            rot = np.array([[c, s], [-s, c]])
            break
    return origin, rot


def to_primitive(xy, valid, n_points: int) -> np.ndarray:
    """Canonicalized individual shape vector of length 2 * n_points."""
    pts = resample_track(xy, valid, n_points)
    origin, rot = canonical_frame(pts)
    return ((pts - origin) @ rot.T).ravel()


def to_pair_primitive(xy_i, valid_i, xy_j, valid_j, n_points: int) -> np.ndarray:
    """Joint shape vector (4 * n_points) in the frame of the first track —
    callers anchor to the member with the lower agent id."""
    pts_i = resample_track(xy_i, valid_i, n_points)
    pts_j = resample_track(xy_j, valid_j, n_points)
    origin, rot = canonical_frame(pts_i)
    return np.concatenate([((pts_i - origin) @ rot.T).ravel(),
                           ((pts_j - origin) @ rot.T).ravel()])


class TrafficPrimitiveAnomaly(BaseEstimator):
    """Prototype-distance anomaly model over primitive vectors.

    Deterministic under a fixed random_state: k-means++ initialization, Lloyd
    iterations capped at 100, per-dimension standardization before clustering.
    """

    def __init__(self, n_clusters: int = 32, random_state: int = 0,
                 fit_partition_id: str = "all"):
        self.n_clusters = n_clusters
        self.random_state = random_state
        self.fit_partition_id = fit_partition_id

    def fit(self, X, y=None, scenario_ids=None):
        X = np.asarray(X, float)
        if X.ndim != 2 or len(X) == 0:
            raise ValueError("expected a nonempty (n_samples, n_dims) matrix")
        self.mean_ = X.mean(axis=0)
        scale = X.std(axis=0)
        # dims constant up to float noise (e.g. canonical anchors) stay unscaled,
        # otherwise 1/scale amplifies roundoff into spurious distance
        tiny = scale <= 1e-12 * max(1.0, float(np.abs(X).max()))
        self.scale_ = np.where(tiny, 1.0, scale)
        Z = (X - self.mean_) / self.scale_
        n_distinct = len(np.unique(Z, axis=0))
        k = min(self.n_clusters, n_distinct)
        if k < self.n_clusters:
            warnings.warn(f"only {n_distinct} distinct primitives; reducing k from "
                          f"{self.n_clusters} to {k}", stacklevel=2)
        km = KMeans(n_clusters=k, init="k-means++", n_init=1, max_iter=100,
                    algorithm="lloyd", random_state=self.random_state)
        self.labels_fit_ = km.fit_predict(Z)
        self.centroids_ = km.cluster_centers_
        dists = self._distances(Z)
        self.median_distance_ = float(np.median(dists))
        if self.median_distance_ <= 0.0:
            self.median_distance_ = 1.0
        self.fit_scenario_ids_ = tuple(sorted(set(scenario_ids))) if scenario_ids is not None else ()
        return self

    def _distances(self, Z: np.ndarray) -> np.ndarray:
        diff = Z[:, None, :] - self.centroids_[None, :, :]
        return np.sqrt(np.einsum("nkd,nkd->nk", diff, diff)).min(axis=1)

    def anomaly_scores(self, X) -> np.ndarray:
        self._check_fitted()
        X = np.atleast_2d(np.asarray(X, float))
        Z = (X - self.mean_) / self.scale_
        return self._distances(Z) / self.median_distance_

    def transform(self, X) -> np.ndarray:
        return self.anomaly_scores(X)[:, None]

    def predict(self, X) -> np.ndarray:
        """Index of the nearest prototype (cluster assignment)."""
        self._check_fitted()
        X = np.atleast_2d(np.asarray(X, float))
        Z = (X - self.mean_) / self.scale_
        diff = Z[:, None, :] - self.centroids_[None, :, :]
        return np.sqrt(np.einsum("nkd,nkd->nk", diff, diff)).argmin(axis=1)

    def _check_fitted(self):
        if not hasattr(self, "centroids_"):
            raise RuntimeError("model is not fitted")

    def to_dict(self) -> dict:
        self._check_fitted()
        return {
            "n_clusters": self.n_clusters,
            "random_state": self.random_state,
            "fit_partition_id": self.fit_partition_id,
            "mean": self.mean_.tolist(),
            "scale": self.scale_.tolist(),
            "centroids": self.centroids_.tolist(),
            "median_distance": self.median_distance_,
            "fit_scenario_ids": list(self.fit_scenario_ids_),
        }

    @classmethod
    def from_dict(cls, blob: dict) -> "TrafficPrimitiveAnomaly":
        model = cls(n_clusters=blob["n_clusters"], random_state=blob["random_state"],
                    fit_partition_id=blob["fit_partition_id"])
        model.mean_ = np.asarray(blob["mean"], float)
        model.scale_ = np.asarray(blob["scale"], float)
        model.centroids_ = np.asarray(blob["centroids"], float)
        model.median_distance_ = float(blob["median_distance"])
        model.fit_scenario_ids_ = tuple(blob["fit_scenario_ids"])
        return model

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "TrafficPrimitiveAnomaly":
        return cls.from_dict(json.loads(Path(path).read_text()))


def audit_fit_leakage(model, split_mapping: dict, partition: str = "test"):
    """Raise if any scenario of the given partition participated in fitting."""
    fitted = set(getattr(model, "fit_scenario_ids_", ()))
    held_out = {sid for sid, part in split_mapping.items() if part == partition}
    leaked = sorted(fitted & held_out)
    if leaked:
        raise RuntimeError(
            f"model (fit_partition_id={model.fit_partition_id!r}) was fit on "
            f"{len(leaked)} scenario(s) from partition {partition!r}: {leaked[:5]}...")
