"""Rigid transforms and pinhole projection.

Camera convention: X right, Y down, Z forward. Sensor convention (used by
the synthetic scenes and the extraction code): x forward ("along"),
y left ("across"), z up. The extrinsic of a :class:`CameraModel` maps
sensor-frame points into the camera frame.
"""

from dataclasses import dataclass, field

import numpy as np

# Near clipping plane in meters; points at or behind it never project.
Z_MIN = 0.1

_ORTHO_TOL = 1e-9


@dataclass(frozen=True)
class RigidTransform:
    """Rotation + translation, applied as R @ p + t."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if r.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        if not np.all(np.isfinite(r)) or not np.all(np.isfinite(t)):
            raise ValueError("transform entries must be finite")
        if np.max(np.abs(r.T @ r - np.eye(3))) > _ORTHO_TOL:
            raise ValueError("rotation must be orthonormal")
        if np.linalg.det(r) < 0:
            raise ValueError("rotation must have determinant +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_flat(cls, values):
        """Build from 12 numbers, row-major R|t (3x4)."""
        m = np.asarray(values, dtype=float).reshape(3, 4)
        return cls(m[:, :3], m[:, 3])

    def to_flat(self):
        return np.hstack([self.rotation, self.translation[:, None]]).ravel()

    def apply(self, points):
        pts = np.asarray(points, dtype=float)
        single = pts.ndim == 1
        pts = np.atleast_2d(pts)
        out = pts @ self.rotation.T + self.translation
        return out[0] if single else out

    def inverse(self):
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)


def transform_points(points, t):
    """Apply a rigid transform to a sequence of 3-vectors."""
    return t.apply(points)


# Default sensor -> camera rotation: camera looks along sensor +x,
# X_cam = -y_sensor, Y_cam = -z_sensor, Z_cam = x_sensor.
SENSOR_TO_CAMERA = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    extrinsic: RigidTransform = field(
        default_factory=lambda: RigidTransform(SENSOR_TO_CAMERA, np.zeros(3))
    )

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width):
            raise ValueError("cx must lie inside the image")
        if not (0 <= self.cy < self.height):
            raise ValueError("cy must lie inside the image")

    def project_many(self, points):
        """Project sensor-frame points; returns (uv array, valid mask)."""
        cam_pts = self.extrinsic.apply(np.atleast_2d(np.asarray(points, dtype=float)))
        z = cam_pts[:, 2]
        safe_z = np.where(z > Z_MIN, z, 1.0)
        u = self.cx + self.fx * cam_pts[:, 0] / safe_z
        v = self.cy + self.fy * cam_pts[:, 1] / safe_z
        valid = (
            (z > Z_MIN)
            & (u >= 0.0)
            & (u < self.width)
            & (v >= 0.0)
            & (v < self.height)
        )
        return np.stack([u, v], axis=1), valid


def project_point(p, cam):
    """Project one sensor-frame point; None when behind or out of view."""
    uv, valid = cam.project_many(np.asarray(p, dtype=float)[None, :])
    if not valid[0]:
        return None
    return float(uv[0, 0]), float(uv[0, 1])


def backproject_to_plane(u, v, plane_z, cam):
    """Intersect the pixel ray with the sensor-frame plane z = plane_z.

    Returns the sensor-frame 3-point, or None when the ray is parallel to
    the plane or the intersection lies behind the near plane.
    """
    d_cam = np.array([(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0])
    rt = cam.extrinsic.rotation.T
    d_sensor = rt @ d_cam
    origin_sensor = -rt @ cam.extrinsic.translation
    if abs(d_sensor[2]) < 1e-12:
        return None
    t = (plane_z - origin_sensor[2]) / d_sensor[2]
    # t multiplies a camera-frame direction with unit Z, so t equals the
    # camera depth of the hit point.
    if t <= Z_MIN:
        return None
    return origin_sensor + t * d_sensor
