"""Deterministic synthetic road scenes.

A scene is a flat ground plane carrying quadratic lane paint strips.
LiDAR-style points are sampled uniformly over the ground patch around the
lanes; paint points draw intensities from N(paint_mu, sigma) and the rest
from N(asphalt_mu, sigma), clamped to [0, 1]. A grayscale proxy image is
rendered from the same geometry (paint bright, road dark, sky black) so
downstream models can correlate pixels with lane positions.

Everything is driven by Philox counter streams keyed on the scene seed,
so identical (spec, camera) inputs produce bit-identical frames.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidSpec
from .extraction import LaneInstance3D, PointCloud, project_lane
from .geometry import CameraModel
from .labels import to_row_anchors
from .rng import (
    DATASET_BASE,
    STREAM_SCENE,
    STREAM_SCENE_IMAGE,
    stream,
    substream,
)

PAINT_HALF_WIDTH = 0.1  # meters; lateral reach of a paint strip

DEFAULT_H_SAMPLES = tuple(range(400, 661, 10))


@dataclass(frozen=True)
class LaneSpec:
    """lateral(s) = a0 + a1*s + a2*s^2 over s in [s_min, s_max]."""

    coeffs: tuple
    s_min: float = 5.0
    s_max: float = 50.0
    dashed: bool = False
    dash_on: float = 3.0
    dash_off: float = 6.0

    def __post_init__(self):
        if not self.s_min < self.s_max:
            raise InvalidSpec("lane range must be increasing")
        if self.dashed and (self.dash_on <= 0 or self.dash_off <= 0):
            raise InvalidSpec("dash lengths must be positive")

    def lateral(self, s):
        a0, a1, a2 = self.coeffs
        return a0 + a1 * s + a2 * s * s

    def painted_at(self, s):
        """Whether arc position s lies on a painted stretch."""
        s = np.asarray(s, dtype=float)
        in_range = (s >= self.s_min) & (s <= self.s_max)
        if not self.dashed:
            return in_range
        phase = np.mod(s - self.s_min, self.dash_on + self.dash_off)
        return in_range & (phase < self.dash_on)


@dataclass(frozen=True)
class SceneSpec:
    lanes: tuple
    ground_z: float = -1.5
    paint_mu: float = 0.8
    asphalt_mu: float = 0.2
    intensity_sigma: float = 0.05
    point_density: float = 60.0  # points per square meter
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "lanes", tuple(self.lanes))
        if not 0.0 <= self.asphalt_mu < self.paint_mu <= 1.0:
            raise InvalidSpec("need 0 <= asphalt_mu < paint_mu <= 1")
        if self.point_density <= 0:
            raise InvalidSpec("point_density must be positive")


@dataclass(frozen=True)
class FrameSample:
    cloud: PointCloud
    image: np.ndarray  # (H, W, 1) float32 in [0, 1]
    gt_lanes_2d: list
    gt_lanes_3d: list
    cam: CameraModel


def default_camera():
    return CameraModel(fx=1000.0, fy=1000.0, cx=640.0, cy=360.0, width=1280, height=720)


def default_scene_spec(seed=0):
    """Three solid straight lanes, 3.5 m apart, 5..50 m ahead."""
    lanes = tuple(LaneSpec(coeffs=(a0, 0.0, 0.0)) for a0 in (-3.5, 0.0, 3.5))
    return SceneSpec(lanes=lanes, seed=seed)


def _sample_region(spec):
    """Ground patch (along_lo, along_hi, across_lo, across_hi) around the lanes."""
    s_lo = min(l.s_min for l in spec.lanes)
    s_hi = max(l.s_max for l in spec.lanes)
    grid = np.linspace(s_lo, s_hi, 64)
    lats = np.concatenate([l.lateral(grid) for l in spec.lanes])
    return (s_lo - 2.0, s_hi + 2.0, float(lats.min()) - 3.0, float(lats.max()) + 3.0)


def paint_mask(spec, along, across):
    """True where (along, across) lies within the paint of any lane.

    Paint membership: lateral distance to the lane curve at this arc
    position is at most PAINT_HALF_WIDTH and the position falls on a
    painted (dash-on) stretch.
    """
    along = np.asarray(along, dtype=float)
    across = np.asarray(across, dtype=float)
    hit = np.zeros(along.shape, dtype=bool)
    for lane in spec.lanes:
        near = np.abs(across - lane.lateral(along)) <= PAINT_HALF_WIDTH
        hit |= near & lane.painted_at(along)
    return hit


def _gt_instances(spec):
    return [
        LaneInstance3D(
            coeffs=np.asarray(l.coeffs, dtype=float),
            along_range=(l.s_min, l.s_max),
            plane_z=spec.ground_z,
        )
        for l in spec.lanes
    ]


def _render_image(spec, cam, rng):
    h, w = cam.height, cam.width
    us, vs = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
    d_cam = np.stack(
        [(us - cam.cx) / cam.fx, (vs - cam.cy) / cam.fy, np.ones_like(us)], axis=-1
    )
    rt = cam.extrinsic.rotation.T
    d_sensor = d_cam @ rt.T
    origin = -rt @ cam.extrinsic.translation
    dz = d_sensor[..., 2]
    safe_dz = np.where(np.abs(dz) > 1e-12, dz, 1.0)
    t = (spec.ground_z - origin[2]) / safe_dz
    ground = (np.abs(dz) > 1e-12) & (t > 0.1)
    along = origin[0] + t * d_sensor[..., 0]
    across = origin[1] + t * d_sensor[..., 1]
    img = np.zeros((h, w), dtype=float)
    paint = np.zeros((h, w), dtype=bool)
    paint[ground] = paint_mask(spec, along[ground], across[ground])
    img[ground] = spec.asphalt_mu
    img[paint] = spec.paint_mu
    noise = rng.normal(0.0, spec.intensity_sigma * 0.5, size=(h, w))
    img[ground] = np.clip(img[ground] + noise[ground], 0.0, 1.0)
    return img.astype(np.float32)[..., None]


def generate_scene(spec, cam):
    """Deterministic frame for a (spec, camera) pair."""
    if not isinstance(spec, SceneSpec):
        raise InvalidSpec("spec must be a SceneSpec")
    if not spec.lanes:
        raise InvalidSpec("scene needs at least one lane")
    rng = stream(spec.seed, STREAM_SCENE)
    a_lo, a_hi, x_lo, x_hi = _sample_region(spec)
    area = (a_hi - a_lo) * (x_hi - x_lo)
    n = int(round(area * spec.point_density))
    along = rng.uniform(a_lo, a_hi, size=n)
    across = rng.uniform(x_lo, x_hi, size=n)
    painted = paint_mask(spec, along, across)
    mu = np.where(painted, spec.paint_mu, spec.asphalt_mu)
    inten = np.clip(mu + rng.normal(0.0, spec.intensity_sigma, size=n), 0.0, 1.0)
    xyz = np.stack([along, across, np.full(n, spec.ground_z)], axis=1)
    cloud = PointCloud(xyz, inten)

    image = _render_image(spec, cam, stream(spec.seed, STREAM_SCENE_IMAGE))

    gt3, gt2 = [], []
    for inst in _gt_instances(spec):
        try:
            lane2d = project_lane(inst, cam)
        except Exception:
            continue  # lane fully out of view: keep 2d/3d lists aligned
        gt3.append(inst)
        gt2.append(lane2d)
    return FrameSample(cloud=cloud, image=image, gt_lanes_2d=gt2, gt_lanes_3d=gt3, cam=cam)


def ground_truth_labels(frame, h_samples=None):
    """Frame ground truth resampled at the anchor rows."""
    if h_samples is None:
        h_samples = DEFAULT_H_SAMPLES
    return to_row_anchors(frame.gt_lanes_2d, h_samples)


@dataclass(frozen=True)
class SceneJitter:
    """Per-frame lane coefficient jitter for dataset synthesis."""

    a0: float = 0.6
    a1: float = 0.015
    a2: float = 0.0001


def make_dataset(base_spec, cam, n_frames, seed, jitter=None):
    """n_frames independent scenes jittered around base_spec.

    Frame i draws its lane coefficient offsets and its scene seed from the
    (seed, DATASET_BASE + i) stream, so datasets are reproducible and
    individual frames can be regenerated in isolation.
    """
    if jitter is None:
        jitter = SceneJitter()
    frames = []
    for i in range(n_frames):
        rng = substream(seed, DATASET_BASE, i)
        lanes = []
        for lane in base_spec.lanes:
            a0, a1, a2 = lane.coeffs
            lanes.append(
                replace(
                    lane,
                    coeffs=(
                        a0 + rng.uniform(-jitter.a0, jitter.a0),
                        a1 + rng.uniform(-jitter.a1, jitter.a1),
                        a2 + rng.uniform(-jitter.a2, jitter.a2),
                    ),
                )
            )
        spec = replace(base_spec, lanes=tuple(lanes), seed=int(rng.integers(0, 2**63 - 1)))
        frames.append(generate_scene(spec, cam))
    return frames
