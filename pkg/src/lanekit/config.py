"""Plain key = value configuration.

Unknown keys fail fast; values are converted to the type of their
default. Lane geometry uses scene.num_lanes plus one scene.lane<i> entry
per lane ("a0 a1 a2 s_min s_max dashed dash_on dash_off").
"""

import re

import numpy as np

from .detector import CorrectorConfig, GridConfig
from .distill import AdaptationConfig, TrainConfig
from .errors import ConfigError
from .extraction import ClusterConfig, ExtractConfig, GroundSegConfig, RansacConfig
from .geometry import CameraModel, RigidTransform
from .labels import AugmentConfig
from .slc import SLCConfig
from .synthworld import LaneSpec, SceneJitter, SceneSpec

DEFAULTS = {
    "cam.fx": 1000.0,
    "cam.fy": 1000.0,
    "cam.cx": 640.0,
    "cam.cy": 360.0,
    "cam.width": 1280,
    "cam.height": 720,
    "cam.extrinsic": "0 -1 0 0  0 0 -1 0  1 0 0 0",
    "scene.ground_z": -1.5,
    "scene.paint_mu": 0.8,
    "scene.asphalt_mu": 0.2,
    "scene.intensity_sigma": 0.05,
    "scene.point_density": 60.0,
    "scene.seed": 0,
    "scene.num_lanes": 3,
    "scene.lane0": "-3.5 0 0 5 50 0 3 6",
    "scene.lane1": "0 0 0 5 50 0 3 6",
    "scene.lane2": "3.5 0 0 5 50 0 3 6",
    "scene.jitter_a0": 0.6,
    "scene.jitter_a1": 0.015,
    "scene.jitter_a2": 0.0001,
    "ground.cell_size": 1.0,
    "ground.plane_inlier_dist": 0.1,
    "ground.normal_max_tilt": 10.0,
    "ground.tau": 0.45,
    "ground.tau_percentile": -1.0,
    "cluster.eps1": 0.6,
    "cluster.min_pts": 4,
    "cluster.eps2": 0.5,
    "cluster.eps3": 3.0,
    "cluster.min_cluster_size": 20,
    "ransac.iters": 200,
    "ransac.inlier_dist": 0.15,
    "ransac.sample_step": 0.5,
    "label.h_start": 400,
    "label.h_stop": 660,
    "label.h_step": 10,
    "label.mask_thickness": 5,
    "augment.max_rot_deg": 5.0,
    "augment.max_trans_frac": 0.05,
    "augment.p_drop": 0.1,
    "augment.p_inject": 0.1,
    "grid.w": 16,
    "grid.h": 9,
    "grid.n": 4,
    "grid.conf_thresh": 0.5,
    "model.in_w": 64,
    "model.in_h": 36,
    "model.hidden1": 256,
    "model.hidden2": 128,
    "model.c_f": 16,
    "slc.lambda_embed": 5.0,
    "slc.epsilon_epochs": 10,
    "slc.ema_momentum": 0.99,
    "slc.lr": 0.002,
    "slc.epochs": 60,
    "slc.batch_size": 4,
    "slc.embed_dim": 16,
    "slc.neg_offset_px": 2,
    "train.lr": 0.002,
    "train.epochs": 200,
    "train.batch_size": 4,
    "student.lr": 0.002,
    "student.epochs": 200,
    "student.batch_size": 4,
    "eval.pt_thresh_px": 20.0,
    "eval.lane_acc_thresh": 0.85,
    "synth.frames": 1,
}

_LANE_KEY = re.compile(r"scene\.lane(\d+)$")


def _convert(key, raw, like):
    try:
        if isinstance(like, bool):
            return raw.strip() in ("1", "true", "yes")
        if isinstance(like, int):
            return int(raw.strip())
        if isinstance(like, float):
            return float(raw.strip())
        return raw.strip()
    except ValueError:
        raise ConfigError(f"bad value for config key '{key}': {raw!r}", key=key)


class Config:
    """Parsed configuration over the defaults table."""

    def __init__(self, values=None):
        self.values = dict(DEFAULTS)
        if values:
            self.values.update(values)

    @classmethod
    def from_text(cls, text):
        values = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
            key, raw = line.split("=", 1)
            key = key.strip()
            m = _LANE_KEY.match(key)
            if key in DEFAULTS:
                values[key] = _convert(key, raw, DEFAULTS[key])
            elif m:
                values[key] = raw.strip()
            else:
                raise ConfigError(f"unknown config key '{key}'", key=key)
        cfg = cls(values)
        cfg._validate_lanes()
        return cfg

    @classmethod
    def from_file(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_text(fh.read())

    def _validate_lanes(self):
        n = self.require("scene.num_lanes")
        for i in range(n):
            self.require(f"scene.lane{i}")
        for key in self.values:
            m = _LANE_KEY.match(key)
            if m and int(m.group(1)) >= n:
                raise ConfigError(
                    f"config key '{key}' exceeds scene.num_lanes = {n}", key=key
                )

    def require(self, key):
        if key not in self.values:
            raise ConfigError(f"missing config key '{key}'", key=key)
        return self.values[key]

    # -- typed builders ----------------------------------------------------

    def camera(self):
        raw = str(self.require("cam.extrinsic")).split()
        if len(raw) != 12:
            raise ConfigError(
                f"cam.extrinsic needs 12 numbers (row-major R|t), got {len(raw)}",
                key="cam.extrinsic",
            )
        try:
            extrinsic = RigidTransform.from_flat([float(x) for x in raw])
        except ValueError as exc:
            raise ConfigError(f"cam.extrinsic: {exc}", key="cam.extrinsic")
        return CameraModel(
            fx=self.require("cam.fx"),
            fy=self.require("cam.fy"),
            cx=self.require("cam.cx"),
            cy=self.require("cam.cy"),
            width=self.require("cam.width"),
            height=self.require("cam.height"),
            extrinsic=extrinsic,
        )

    def _lane_spec(self, key):
        raw = str(self.require(key)).split()
        if len(raw) != 8:
            raise ConfigError(
                f"{key} needs 8 numbers (a0 a1 a2 s_min s_max dashed dash_on dash_off)",
                key=key,
            )
        try:
            vals = [float(x) for x in raw]
        except ValueError:
            raise ConfigError(f"bad number in {key}", key=key)
        return LaneSpec(
            coeffs=(vals[0], vals[1], vals[2]),
            s_min=vals[3],
            s_max=vals[4],
            dashed=bool(vals[5]),
            dash_on=vals[6],
            dash_off=vals[7],
        )

    def scene_spec(self, seed=None):
        lanes = tuple(
            self._lane_spec(f"scene.lane{i}")
            for i in range(self.require("scene.num_lanes"))
        )
        return SceneSpec(
            lanes=lanes,
            ground_z=self.require("scene.ground_z"),
            paint_mu=self.require("scene.paint_mu"),
            asphalt_mu=self.require("scene.asphalt_mu"),
            intensity_sigma=self.require("scene.intensity_sigma"),
            point_density=self.require("scene.point_density"),
            seed=self.require("scene.seed") if seed is None else seed,
        )

    def scene_jitter(self):
        return SceneJitter(
            a0=self.require("scene.jitter_a0"),
            a1=self.require("scene.jitter_a1"),
            a2=self.require("scene.jitter_a2"),
        )

    def extract_config(self):
        return ExtractConfig(
            ground=GroundSegConfig(
                cell_size=self.require("ground.cell_size"),
                plane_inlier_dist=self.require("ground.plane_inlier_dist"),
                normal_max_tilt=self.require("ground.normal_max_tilt"),
                tau=self.require("ground.tau"),
                tau_percentile=self.require("ground.tau_percentile"),
            ),
            cluster=ClusterConfig(
                eps1=self.require("cluster.eps1"),
                min_pts=self.require("cluster.min_pts"),
                eps2=self.require("cluster.eps2"),
                eps3=self.require("cluster.eps3"),
                min_cluster_size=self.require("cluster.min_cluster_size"),
            ),
            ransac=RansacConfig(
                iters=self.require("ransac.iters"),
                inlier_dist=self.require("ransac.inlier_dist"),
                sample_step=self.require("ransac.sample_step"),
            ),
        )

    def h_samples(self):
        return np.arange(
            self.require("label.h_start"),
            self.require("label.h_stop") + 1,
            self.require("label.h_step"),
        )

    def grid_config(self):
        return GridConfig(
            w=self.require("grid.w"),
            h=self.require("grid.h"),
            n=self.require("grid.n"),
            img_w=self.require("cam.width"),
            img_h=self.require("cam.height"),
            conf_thresh=self.require("grid.conf_thresh"),
        )

    def model_config(self):
        return CorrectorConfig(
            in_w=self.require("model.in_w"),
            in_h=self.require("model.in_h"),
            hidden1=self.require("model.hidden1"),
            hidden2=self.require("model.hidden2"),
            c_f=self.require("model.c_f"),
            grid=self.grid_config(),
        )

    def augment_config(self):
        return AugmentConfig(
            max_rot_deg=self.require("augment.max_rot_deg"),
            max_trans_frac=self.require("augment.max_trans_frac"),
            p_drop=self.require("augment.p_drop"),
            p_inject=self.require("augment.p_inject"),
        )

    def slc_config(self):
        return SLCConfig(
            lambda_embed=self.require("slc.lambda_embed"),
            epsilon_epochs=self.require("slc.epsilon_epochs"),
            ema_momentum=self.require("slc.ema_momentum"),
            lr=self.require("slc.lr"),
            epochs=self.require("slc.epochs"),
            batch_size=self.require("slc.batch_size"),
            embed_dim=self.require("slc.embed_dim"),
            neg_offset_px=self.require("slc.neg_offset_px"),
            img_w=self.require("cam.width"),
            img_h=self.require("cam.height"),
            mask_thickness_px=self.require("label.mask_thickness"),
            conf_thresh=self.require("grid.conf_thresh"),
            augment=self.augment_config(),
        )

    def naive_train_config(self):
        return TrainConfig(
            lr=self.require("train.lr"),
            epochs=self.require("train.epochs"),
            batch_size=self.require("train.batch_size"),
        )

    def student_train_config(self):
        return TrainConfig(
            lr=self.require("student.lr"),
            epochs=self.require("student.epochs"),
            batch_size=self.require("student.batch_size"),
        )

    def adaptation_config(self):
        return AdaptationConfig(
            extract=self.extract_config(),
            model=self.model_config(),
            naive_train=self.naive_train_config(),
            student_train=self.student_train_config(),
            slc=self.slc_config(),
            h_samples=tuple(int(v) for v in self.h_samples()),
        )
