"""Planar polyline geometry: projections, curvilinear coordinates, intersections.

Everything here is pure numpy on float64 arrays. Polylines are (N, 2) vertex
arrays with N >= 2 and no repeated consecutive vertices; arc length is measured
along segments (no smoothing).
"""

import math
from dataclasses import dataclass

import numpy as np

TAU = 2.0 * math.pi

# Consecutive vertices closer than this are considered duplicates when
# concatenating lane pieces.
JOIN_EPS = 1e-6


def wrap_angle(a):
    """Wrap angle(s) to (-pi, pi]."""
    r = np.remainder(np.asarray(a, dtype=float) + math.pi, TAU)
    # remainder yields [0, tau); 0 corresponds to -pi which we map to +pi
    r = np.where(r == 0.0, TAU, r) - math.pi
    if np.ndim(a) == 0:
        return float(r)
    return r


def heading_of(vec):
    return math.atan2(vec[1], vec[0])


@dataclass
class Projection:
    """Result of projecting a point onto a polyline.

    s is clamped to [0, total_length]; ``overshoot`` records the signed axial
    residual when the foot lies at the polyline's global start (< 0) or end
    (> 0). d is the signed perpendicular component (left of travel positive);
    distance is the full Euclidean distance to the foot point.
    """

    s: float
    d: float
    segment_index: int
    overshoot: float
    distance: float
    tangent_heading: float


class Polyline:
    __slots__ = ("points", "seg_vec", "seg_len", "seg_dir", "seg_heading", "cum_s")

    def __init__(self, points):
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
            raise ValueError("polyline needs an (N, 2) array with N >= 2")
        vec = np.diff(pts, axis=0)
        length = np.hypot(vec[:, 0], vec[:, 1])
        if np.any(length <= 0.0):
            raise ValueError("polyline has repeated consecutive vertices")
        self.points = pts
        self.seg_vec = vec
        self.seg_len = length
        self.seg_dir = vec / length[:, None]
        self.seg_heading = np.arctan2(vec[:, 1], vec[:, 0])
        self.cum_s = np.concatenate(([0.0], np.cumsum(length)))

    @property
    def total_length(self) -> float:
        return float(self.cum_s[-1])

    @property
    def n_segments(self) -> int:
        return len(self.seg_len)

    def project(self, point) -> Projection:
        s, d, idx, over, dist, th = self.project_many(np.asarray(point, dtype=float)[None, :])
        return Projection(float(s[0]), float(d[0]), int(idx[0]), float(over[0]),
                          float(dist[0]), float(th[0]))

    def project_many(self, points):
        """Vectorized projection of (T, 2) points.

        Returns (s, d, segment_index, overshoot, distance, tangent_heading)
        arrays. Nearest segment wins; exact ties go to the lower index.
        """
        pts = np.asarray(points, dtype=float)
        if self.n_segments == 1:
            # Degenerate (T, 1) broadcasting is all overhead; do it straight.
            dx, dy = self.seg_dir[0]
            relx = pts[:, 0] - self.points[0, 0]
            rely = pts[:, 1] - self.points[0, 1]
            u = relx * dx + rely * dy
            t = np.clip(u, 0.0, self.seg_len[0])
            fx = relx - t * dx
            fy = rely - t * dy
            d = dx * fy - dy * fx
            dist = np.hypot(fx, fy)
            idx = np.zeros(len(pts), dtype=int)
            heading = np.full(len(pts), self.seg_heading[0])
            return t, d, idx, u - t, dist, heading
        rel = pts[:, None, :] - self.points[None, :-1, :]          # (T, S, 2)
        u = np.einsum("tsk,sk->ts", rel, self.seg_dir)             # axial, metres
        t = np.clip(u, 0.0, self.seg_len[None, :])
        diff = rel - t[:, :, None] * self.seg_dir[None, :, :]
        dist2 = np.einsum("tsk,tsk->ts", diff, diff)
        idx = np.argmin(dist2, axis=1)
        rows = np.arange(len(pts))
        tb = t[rows, idx]
        ub = u[rows, idx]
        db = diff[rows, idx]
        dirb = self.seg_dir[idx]
        d = dirb[:, 0] * db[:, 1] - dirb[:, 1] * db[:, 0]          # left positive
        dist = np.sqrt(dist2[rows, idx])
        axial = ub - tb
        last = self.n_segments - 1
        overshoot = np.where((idx == 0) & (axial < 0.0), axial,
                             np.where((idx == last) & (axial > 0.0), axial, 0.0))
        s = self.cum_s[idx] + tb
        return s, d, idx, overshoot, dist, self.seg_heading[idx]

    def point_at(self, s, d=0.0):
        """Map curvilinear (s, d) back to the plane.

        s may lie outside [0, total_length]; the terminal segment's tangent is
        extended linearly in that case. Returns (positions (T, 2), headings (T,)).
        """
        s = np.atleast_1d(np.asarray(s, dtype=float))
        d = np.broadcast_to(np.asarray(d, dtype=float), s.shape)
        if self.n_segments == 1:
            dx, dy = self.seg_dir[0]
            pos = np.empty((len(s), 2))
            pos[:, 0] = self.points[0, 0] + s * dx - d * dy
            pos[:, 1] = self.points[0, 1] + s * dy + d * dx
            return pos, np.full(len(s), self.seg_heading[0])
        idx = np.searchsorted(self.cum_s, s, side="right") - 1
        idx = np.clip(idx, 0, self.n_segments - 1)
        local = s - self.cum_s[idx]
        dirv = self.seg_dir[idx]
        normal = np.stack([-dirv[:, 1], dirv[:, 0]], axis=1)
        pos = self.points[idx] + local[:, None] * dirv + d[:, None] * normal
        return pos, self.seg_heading[idx]

    def sub_polyline(self, s_lo: float, s_hi: float):
        """Vertex array of the piece between two arc positions (clamped)."""
        L = self.total_length
        s_lo = min(max(s_lo, 0.0), L)
        s_hi = min(max(s_hi, 0.0), L)
        if s_hi - s_lo <= JOIN_EPS:
            p, _ = self.point_at([min(s_lo, s_hi)])
            return p
        lo_pt, _ = self.point_at([s_lo])
        hi_pt, _ = self.point_at([s_hi])
        inner = self.points[(self.cum_s > s_lo + JOIN_EPS) & (self.cum_s < s_hi - JOIN_EPS)]
        return np.vstack([lo_pt, inner, hi_pt])


def concat_polylines(pieces, eps: float = JOIN_EPS) -> Polyline:
    """Join vertex arrays end to start, merging duplicate junction vertices."""
    out = []
    for piece in pieces:
        pts = np.asarray(piece, dtype=float)
        for p in pts:
            if out and math.hypot(p[0] - out[-1][0], p[1] - out[-1][1]) <= eps:
                continue
            out.append(p)
    if len(out) < 2:
        raise ValueError("concatenation produced a degenerate polyline")
    return Polyline(np.asarray(out))


@dataclass
class FrenetTrajectory:
    """Per-step curvilinear coordinates of a track against a reference.

    s is clamped to the reference's arc range with the residual in overshoot;
    s_unclamped = s + overshoot is monotone for forward motion past the ends.
    """

    s: np.ndarray
    d: np.ndarray
    overshoot: np.ndarray
    tangent_heading: np.ndarray
    valid: np.ndarray

    @property
    def s_unclamped(self) -> np.ndarray:
        return self.s + self.overshoot


def frenet_encode(xy, valid, ref: Polyline) -> FrenetTrajectory:
    xy = np.asarray(xy, dtype=float)
    valid = np.asarray(valid, dtype=bool)
    s = np.full(len(xy), np.nan)
    d = np.full(len(xy), np.nan)
    over = np.zeros(len(xy))
    th = np.full(len(xy), np.nan)
    if valid.any():
        sv, dv, _, ov, _, tv = ref.project_many(xy[valid])
        s[valid] = sv
        d[valid] = dv
        over[valid] = ov
        th[valid] = tv
    return FrenetTrajectory(s=s, d=d, overshoot=over, tangent_heading=th, valid=valid.copy())


def frenet_decode(s, d, ref: Polyline):
    """Inverse of frenet_encode for (possibly unclamped) s. Returns (xy, headings)."""
    return ref.point_at(s, d)


def thin_polyline(pts, eps: float = 1e-12):
    """Drop vertices that leave the polyline's point set unchanged: exact
    consecutive duplicates and interior vertices whose turn is straight
    (zero cross product, forward dot). Collapses straight runs to one segment.
    """
    pts = np.asarray(pts, dtype=float)
    if len(pts) < 3:
        return pts
    dup = np.all(pts[1:] == pts[:-1], axis=1)
    if dup.any():
        keep = np.ones(len(pts), dtype=bool)
        keep[1:][dup] = False
        pts = pts[keep]
        if len(pts) < 3:
            return pts
    v = pts[1:] - pts[:-1]
    cross = v[:-1, 0] * v[1:, 1] - v[:-1, 1] * v[1:, 0]
    dot = v[:-1, 0] * v[1:, 0] + v[:-1, 1] * v[1:, 1]
    scale = np.hypot(v[:-1, 0], v[:-1, 1]) * np.hypot(v[1:, 0], v[1:, 1])
    straight = (np.abs(cross) <= eps * scale) & (dot > 0.0)
    if not straight.any():
        return pts
    keep = np.ones(len(pts), dtype=bool)
    keep[1:-1] = ~straight
    return pts[keep]


def segment_intersections(pts_a, pts_b, dedupe_eps: float = 1e-6):
    """Intersection points between two polylines' segments (vectorized).

    Proper crossings and endpoint touches count; collinear overlaps do not.
    Nearby duplicates (shared vertices hit by two adjacent segments) collapse.
    """
    a = np.asarray(pts_a, dtype=float)
    b = np.asarray(pts_b, dtype=float)
    if len(a) < 2 or len(b) < 2:
        return np.empty((0, 2))
    if len(a) == 2 and len(b) == 2:
        # thinned straight paths end up here; scalar math skips the (A, B)
        # broadcasting machinery while computing the exact same quantities
        avx, avy = a[1, 0] - a[0, 0], a[1, 1] - a[0, 1]
        bvx, bvy = b[1, 0] - b[0, 0], b[1, 1] - b[0, 1]
        denom = avx * bvy - avy * bvx
        if abs(denom) <= 1e-12:
            return np.empty((0, 2))
        relx, rely = b[0, 0] - a[0, 0], b[0, 1] - a[0, 1]
        t = (relx * bvy - rely * bvx) / denom
        u = (relx * avy - rely * avx) / denom
        if 0.0 <= t <= 1.0 and 0.0 <= u <= 1.0:
            return np.array([[a[0, 0] + t * avx, a[0, 1] + t * avy]])
        return np.empty((0, 2))
    a0 = a[:-1][:, None, :]
    av = np.diff(a, axis=0)[:, None, :]
    b0 = b[None, :-1, :]
    bv = np.diff(b, axis=0)[None, :, :]
    denom = av[..., 0] * bv[..., 1] - av[..., 1] * bv[..., 0]
    rel = b0 - a0
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (rel[..., 0] * bv[..., 1] - rel[..., 1] * bv[..., 0]) / denom
        u = (rel[..., 0] * av[..., 1] - rel[..., 1] * av[..., 0]) / denom
    hit = (np.abs(denom) > 1e-12) & (t >= 0.0) & (t <= 1.0) & (u >= 0.0) & (u <= 1.0)
    if not hit.any():
        return np.empty((0, 2))
    ai, bi = np.nonzero(hit)
    pts = a0[ai, 0] + t[ai, bi][:, None] * av[ai, 0]
    kept: list[np.ndarray] = []
    for p in pts:
        if not any(math.hypot(p[0] - q[0], p[1] - q[1]) <= dedupe_eps for q in kept):
            kept.append(p)
    return np.asarray(kept)


def segments_intersect_mask(a0, a1, b0, b1):
    """Elementwise proper/touching intersection test for segment pairs (K, 2)."""
    a0 = np.asarray(a0, float); a1 = np.asarray(a1, float)
    b0 = np.asarray(b0, float); b1 = np.asarray(b1, float)

    def orient(p, q, r):
        return (q[:, 0] - p[:, 0]) * (r[:, 1] - p[:, 1]) - (q[:, 1] - p[:, 1]) * (r[:, 0] - p[:, 0])

    d1 = orient(b0, b1, a0)
    d2 = orient(b0, b1, a1)
    d3 = orient(a0, a1, b0)
    d4 = orient(a0, a1, b1)
    proper = (np.sign(d1) * np.sign(d2) < 0) & (np.sign(d3) * np.sign(d4) < 0)

    def on_seg(p, q, r, d):
        return (d == 0) & (np.minimum(p[:, 0], q[:, 0]) <= r[:, 0]) & (r[:, 0] <= np.maximum(p[:, 0], q[:, 0])) \
            & (np.minimum(p[:, 1], q[:, 1]) <= r[:, 1]) & (r[:, 1] <= np.maximum(p[:, 1], q[:, 1]))

    touch = on_seg(b0, b1, a0, d1) | on_seg(b0, b1, a1, d2) | on_seg(a0, a1, b0, d3) | on_seg(a0, a1, b1, d4)
    return proper | touch


def rect_overlap_mask(ca, ha, dims_a, cb, hb, dims_b):
    """Separating-axis overlap of oriented rectangles, vectorized over steps.

    ca/cb: (T, 2) centers, ha/hb: (T,) headings, dims: (length, width).
    Touching counts as overlap (closed intervals).
    """
    ca = np.asarray(ca, float); cb = np.asarray(cb, float)
    ha = np.asarray(ha, float); hb = np.asarray(hb, float)
    la, wa = dims_a[0] * 0.5, dims_a[1] * 0.5
    lb, wb = dims_b[0] * 0.5, dims_b[1] * 0.5
    ua = np.stack([np.cos(ha), np.sin(ha)], axis=1)
    va = np.stack([-ua[:, 1], ua[:, 0]], axis=1)
    ub = np.stack([np.cos(hb), np.sin(hb)], axis=1)
    vb = np.stack([-ub[:, 1], ub[:, 0]], axis=1)
    delta = cb - ca
    ok = np.ones(len(ca), dtype=bool)
    for axis in (ua, va, ub, vb):
        center_gap = np.abs(np.einsum("tk,tk->t", delta, axis))
        ra = la * np.abs(np.einsum("tk,tk->t", ua, axis)) + wa * np.abs(np.einsum("tk,tk->t", va, axis))
        rb = lb * np.abs(np.einsum("tk,tk->t", ub, axis)) + wb * np.abs(np.einsum("tk,tk->t", vb, axis))
        ok &= center_gap <= ra + rb
    return ok


def rect_corners(center, heading: float, dims) -> np.ndarray:
    c, s = math.cos(heading), math.sin(heading)
    hl, hw = dims[0] * 0.5, dims[1] * 0.5
    local = np.array([[hl, hw], [hl, -hw], [-hl, -hw], [-hl, hw]])
    rot = np.array([[c, -s], [s, c]])
    return np.asarray(center, float) + local @ rot.T


def point_in_polygon(points, polygon) -> np.ndarray:
    """Ray-cast containment test, vectorized over (T, 2) points."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    poly = np.asarray(polygon, dtype=float)
    x, y = pts[:, 0], pts[:, 1]
    inside = np.zeros(len(pts), dtype=bool)
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        if y2 == y1:
            continue  # horizontal edge never straddles the ray
        straddles = (y1 > y) != (y2 > y)
        inside ^= straddles & (x < (x2 - x1) * (y - y1) / (y2 - y1) + x1)
    return inside


def points_to_segments_dist(points, seg_a, seg_b) -> np.ndarray:
    """Min distance from each of (T, 2) points to a set of segments (S, 2)/(S, 2)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    a = np.asarray(seg_a, dtype=float)
    v = np.asarray(seg_b, dtype=float) - a
    vv = np.einsum("sk,sk->s", v, v)
    vv = np.where(vv == 0.0, 1.0, vv)
    rel = pts[:, None, :] - a[None, :, :]
    t = np.clip(np.einsum("tsk,sk->ts", rel, v) / vv[None, :], 0.0, 1.0)
    diff = rel - t[:, :, None] * v[None, :, :]
    return np.sqrt(np.einsum("tsk,tsk->ts", diff, diff).min(axis=1))


def points_to_polygon_dist(points, polygon) -> np.ndarray:
    """Distance from points to a polygon (0 inside)."""
    poly = np.asarray(polygon, dtype=float)
    closed_a = poly
    closed_b = np.roll(poly, -1, axis=0)
    dist = points_to_segments_dist(points, closed_a, closed_b)
    dist[point_in_polygon(points, poly)] = 0.0
    return dist


def polygon_is_simple(polygon) -> bool:
    """True when no two non-adjacent edges intersect."""
    poly = np.asarray(polygon, dtype=float)
    n = len(poly)
    if n < 3:
        return False
    edges = [(poly[i], poly[(i + 1) % n]) for i in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or (i + 1) % n == j:
                continue
            m = segments_intersect_mask(edges[i][0][None], edges[i][1][None],
                                        edges[j][0][None], edges[j][1][None])
            if m[0]:
                return False
    return True


def polygon_centroid(polygon) -> np.ndarray:
    return np.asarray(polygon, dtype=float).mean(axis=0)
