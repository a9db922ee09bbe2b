"""2D lane labels: row-anchor resampling, mask rasterization, pixel IoU,
and the geometric perturbation model used to corrupt label clues.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch


@dataclass(frozen=True)
class Lane2D:
    """Ordered image-plane polyline; v strictly increasing."""

    points: np.ndarray  # (M, 2) float, columns (u, v)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
            raise ValueError("a lane needs at least two (u, v) points")
        if not np.all(np.isfinite(pts)):
            raise ValueError("lane points must be finite")
        if not np.all(np.diff(pts[:, 1]) > 0):
            raise ValueError("lane v coordinates must be strictly increasing")
        object.__setattr__(self, "points", pts)

    @classmethod
    def from_points(cls, points):
        """Sort by v and average duplicate rows; None when < 2 rows remain."""
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        if pts.shape[0] < 2:
            return None
        order = np.argsort(pts[:, 1], kind="stable")
        pts = pts[order]
        vs, first = np.unique(pts[:, 1], return_index=True)
        if len(vs) < 2:
            return None
        us = np.array([pts[pts[:, 1] == v, 0].mean() for v in vs])
        return cls(np.stack([us, vs], axis=1))

    def u_at(self, v):
        return float(np.interp(v, self.points[:, 1], self.points[:, 0]))

    def u_at_extrapolated(self, v):
        """Like u_at but continuing the end segments beyond the tips."""
        v = np.asarray(v, dtype=float)
        pts = self.points
        u = np.interp(v, pts[:, 1], pts[:, 0])
        (u0, v0), (u1, v1) = pts[0], pts[1]
        top = v < v0
        u = np.where(top, u0 + (v - v0) * (u1 - u0) / (v1 - v0), u)
        (ua, va), (ub, vb) = pts[-2], pts[-1]
        bottom = v > vb
        u = np.where(bottom, ub + (v - vb) * (ub - ua) / (vb - va), u)
        return u

    @property
    def v_min(self):
        return float(self.points[0, 1])

    @property
    def v_max(self):
        return float(self.points[-1, 1])


MISSING = -2.0  # sentinel for rows a lane does not cover


@dataclass
class RowAnchorLabel:
    """Per-frame lane label sampled at fixed image rows."""

    h_samples: np.ndarray  # (R,) int
    xs: list  # per lane, (R,) float array with MISSING sentinels

    def __post_init__(self):
        self.h_samples = np.asarray(self.h_samples, dtype=int)
        self.xs = [np.asarray(x, dtype=float) for x in self.xs]
        for x in self.xs:
            if x.shape != self.h_samples.shape:
                raise ValueError("each lane must have one x per anchor row")

    def to_lanes(self):
        """Back to polylines, skipping lanes with < 2 present rows."""
        lanes = []
        for x in self.xs:
            keep = x != MISSING
            if keep.sum() < 2:
                continue
            lane = Lane2D.from_points(
                np.stack([x[keep], self.h_samples[keep].astype(float)], axis=1)
            )
            if lane is not None:
                lanes.append(lane)
        return lanes


def to_row_anchors(lanes, h_samples):
    """Resample lanes at the anchor rows by linear interpolation."""
    h_samples = np.asarray(h_samples, dtype=int)
    xs = []
    for lane in lanes:
        vals = np.full(len(h_samples), MISSING)
        inside = (h_samples >= lane.v_min) & (h_samples <= lane.v_max)
        if inside.any():
            vals[inside] = np.interp(
                h_samples[inside], lane.points[:, 1], lane.points[:, 0]
            )
        xs.append(vals)
    return RowAnchorLabel(h_samples, xs)


@dataclass(frozen=True)
class LabelMask:
    """Binary H x W raster."""

    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.ndim != 2:
            raise ValueError("mask must be 2-D")
        if bits.dtype != np.uint8:
            bits = bits.astype(np.uint8)
        if bits.size and bits.max() > 1:
            raise ValueError("mask values must be 0 or 1")
        object.__setattr__(self, "bits", bits)

    @property
    def shape(self):
        return self.bits.shape


def _stamp_segment(bits, p0, p1, thickness):
    h, w = bits.shape
    u0, v0 = float(p0[0]), float(p0[1])
    u1, v1 = float(p1[0]), float(p1[1])
    lo_u = max(0, math.floor(min(u0, u1) - thickness))
    hi_u = min(w - 1, math.ceil(max(u0, u1) + thickness))
    lo_v = max(0, math.floor(min(v0, v1) - thickness))
    hi_v = min(h - 1, math.ceil(max(v0, v1) + thickness))
    if lo_u > hi_u or lo_v > hi_v:
        return
    us = np.arange(lo_u, hi_u + 1, dtype=float)
    vs = np.arange(lo_v, hi_v + 1, dtype=float)
    uu, vv = np.meshgrid(us, vs)
    du, dv = u1 - u0, v1 - v0
    seg_len2 = du * du + dv * dv
    if seg_len2 == 0.0:
        d2 = (uu - u0) ** 2 + (vv - v0) ** 2
    else:
        s = np.clip(((uu - u0) * du + (vv - v0) * dv) / seg_len2, 0.0, 1.0)
        d2 = (uu - (u0 + s * du)) ** 2 + (vv - (v0 + s * dv)) ** 2
    window = bits[lo_v : hi_v + 1, lo_u : hi_u + 1]
    window[d2 <= thickness * thickness] = 1


def rasterize_mask(lanes, h, w, thickness_px):
    """Draw lane polylines with half-width thickness_px into an H x W mask."""
    if thickness_px < 1:
        raise ValueError("thickness_px must be >= 1")
    bits = np.zeros((h, w), dtype=np.uint8)
    for lane in lanes:
        pts = lane.points
        for k in range(len(pts) - 1):
            _stamp_segment(bits, pts[k], pts[k + 1], float(thickness_px))
    return LabelMask(bits)


def pixel_iou(a, b):
    """Intersection over union of two masks; 1.0 when both are empty."""
    if a.bits.shape != b.bits.shape:
        raise DimensionMismatch(
            f"mask shapes differ: {a.bits.shape} vs {b.bits.shape}"
        )
    inter = int(np.logical_and(a.bits, b.bits).sum())
    union = int(np.logical_or(a.bits, b.bits).sum())
    if union == 0:
        return 1.0
    return inter / union


@dataclass(frozen=True)
class LaneTransform:
    """Rotation about the image center followed by a pixel translation."""

    rotation_deg: float
    translate_px: tuple

    def __post_init__(self):
        if not (
            math.isfinite(self.rotation_deg)
            and math.isfinite(self.translate_px[0])
            and math.isfinite(self.translate_px[1])
        ):
            raise ValueError("transform parameters must be finite")

    @classmethod
    def identity(cls):
        return cls(0.0, (0.0, 0.0))


def inverse_transform(t):
    """Transform undoing t under the same rotate-then-translate convention."""
    rad = math.radians(-t.rotation_deg)
    c, s = math.cos(rad), math.sin(rad)
    du, dv = t.translate_px
    return LaneTransform(-t.rotation_deg, (-(c * du - s * dv), -(s * du + c * dv)))


def apply_transform(lanes, t, img_w, img_h):
    """Rotate about the image center, translate, then drop points that
    leave the image. Lanes reduced below two points are removed.
    """
    cx, cy = img_w / 2.0, img_h / 2.0
    rad = math.radians(t.rotation_deg)
    c, s = math.cos(rad), math.sin(rad)
    du, dv = t.translate_px
    out = []
    for lane in lanes:
        pts = lane.points
        if t.rotation_deg == 0.0:
            u = pts[:, 0] + du
            v = pts[:, 1] + dv
        else:
            pu = pts[:, 0] - cx
            pv = pts[:, 1] - cy
            u = c * pu - s * pv + cx + du
            v = s * pu + c * pv + cy + dv
        keep = (u >= 0) & (u < img_w) & (v >= 0) & (v < img_h)
        if keep.sum() < 2:
            continue
        lane2 = Lane2D.from_points(np.stack([u[keep], v[keep]], axis=1))
        if lane2 is not None:
            out.append(lane2)
    return out


@dataclass(frozen=True)
class AugmentConfig:
    max_rot_deg: float = 5.0
    max_trans_frac: float = 0.05
    p_drop: float = 0.1
    p_inject: float = 0.1

    def __post_init__(self):
        for p in (self.p_drop, self.p_inject):
            if not 0.0 <= p <= 1.0:
                raise ValueError("probabilities must lie in [0, 1]")


def _estimated_lane_gap_px(lanes, img_w):
    """Median horizontal gap between adjacent lanes at a shared row."""
    if len(lanes) < 2:
        return img_w / 8.0
    v_lo = max(l.v_min for l in lanes)
    v_hi = min(l.v_max for l in lanes)
    if v_hi <= v_lo:
        return img_w / 8.0
    v_mid = 0.5 * (v_lo + v_hi)
    us = sorted(l.u_at(v_mid) for l in lanes)
    gaps = np.diff(us)
    gaps = gaps[gaps > 1.0]
    if len(gaps) == 0:
        return img_w / 8.0
    return float(np.median(gaps))


def perturb_labels(lanes, cfg, rng, img_w, img_h):
    """Corrupt labels with a random rigid transform plus drop/inject noise.

    Returns (perturbed lanes, sampled transform). The rng draw order is
    fixed: rotation, du, dv, one drop draw per transformed lane, one inject
    draw, then inject placement draws.
    """
    rot = float(rng.uniform(-cfg.max_rot_deg, cfg.max_rot_deg)) if cfg.max_rot_deg > 0 else 0.0
    bound = cfg.max_trans_frac * img_w
    du = float(rng.uniform(-bound, bound)) if bound > 0 else 0.0
    dv = float(rng.uniform(-bound, bound)) if bound > 0 else 0.0
    t = LaneTransform(rot, (du, dv))
    moved = apply_transform(lanes, t, img_w, img_h) if lanes else []
    kept = [lane for lane in moved if rng.uniform() >= cfg.p_drop]
    if rng.uniform() < cfg.p_inject and kept:
        src = kept[int(rng.integers(len(kept)))]
        gap = _estimated_lane_gap_px(kept, img_w)
        sign = 1.0 if rng.uniform() < 0.5 else -1.0
        shifted = src.points.copy()
        shifted[:, 0] += sign * gap
        inside = (shifted[:, 0] >= 0) & (shifted[:, 0] < img_w)
        if inside.sum() >= 2:
            lane = Lane2D.from_points(shifted[inside])
            if lane is not None:
                kept.append(lane)
    return kept, t
