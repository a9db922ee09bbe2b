"""Grid-anchor lane representation and the corrector network.

The image is divided into a w x h cell grid. Each cell carries a
lane-presence probability, n horizontal offsets from the cell center to
the lane at fixed row partitions, and the lane's starting row. The
corrector is a small fully connected network over downsampled rasters
(grayscale image plus a binary clue mask) with four linear heads: cls,
offsets, start, and a feature map used for instance embeddings.

All gradients are computed analytically in closed form; the test suite
checks every path against central finite differences.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigMismatch, DimensionMismatch, ShapeMismatch
from .labels import Lane2D
from .rng import STREAM_INIT_CORRECTOR, stream

PROB_CLAMP = 1e-7


@dataclass(frozen=True)
class GridConfig:
    w: int = 16
    h: int = 9
    n: int = 4
    img_w: int = 1280
    img_h: int = 720
    conf_thresh: float = 0.5

    def __post_init__(self):
        if self.w < 1 or self.h < 1 or self.n < 1:
            raise ValueError("grid dimensions must be positive")

    @property
    def cell_w(self):
        return self.img_w / self.w

    @property
    def cell_h(self):
        return self.img_h / self.h

    def col_center(self, i):
        return (np.asarray(i, dtype=float) + 0.5) * self.cell_w

    def row_center(self, j):
        return (np.asarray(j, dtype=float) + 0.5) * self.cell_h

    def partition_rows(self, j):
        """The n fixed v positions inside grid row j."""
        k = np.arange(self.n, dtype=float)
        return (np.asarray(j, dtype=float) + (k + 0.5) / self.n) * self.cell_h


@dataclass
class GridLaneTensor:
    cls: np.ndarray  # (h, w) probabilities, or {0,1} in ground-truth form
    offsets: np.ndarray  # (h, w, n) pixels
    start: np.ndarray  # (h, w) pixels
    obj: np.ndarray  # (h, w) {0,1}; meaningful on ground-truth form

    def __post_init__(self):
        h, w = self.cls.shape
        if self.offsets.shape[:2] != (h, w) or self.start.shape != (h, w):
            raise ValueError("grid tensor field shapes disagree")
        if self.obj.shape != (h, w):
            raise ValueError("grid tensor field shapes disagree")

    @property
    def grid_shape(self):
        return self.cls.shape

    def copy(self):
        return GridLaneTensor(
            self.cls.copy(), self.offsets.copy(), self.start.copy(), self.obj.copy()
        )


def empty_grid(cfg):
    return GridLaneTensor(
        cls=np.zeros((cfg.h, cfg.w)),
        offsets=np.zeros((cfg.h, cfg.w, cfg.n)),
        start=np.zeros((cfg.h, cfg.w)),
        obj=np.zeros((cfg.h, cfg.w)),
    )


def encode_labels_to_grid(lanes, cfg):
    """Ground-truth grid for a list of lanes.

    A lane claims one cell per grid row whose v-span it overlaps: the
    column holding the lane's u at the middle of the overlap. Offsets
    sample the lane at the n row partitions, extrapolating the end
    segments beyond the tips so partially covered rows stay directional;
    start stores the lane's first covered row. The first lane to claim a
    cell wins.
    """
    g = empty_grid(cfg)
    for lane in lanes:
        v_start = lane.v_min
        for j in range(cfg.h):
            span_lo, span_hi = j * cfg.cell_h, (j + 1) * cfg.cell_h
            lo = max(span_lo, lane.v_min)
            hi = min(span_hi, lane.v_max)
            if lo >= hi:
                continue
            u_mid = lane.u_at(0.5 * (lo + hi))
            i = int(u_mid // cfg.cell_w)
            if not 0 <= i < cfg.w:
                continue
            if g.obj[j, i]:
                continue
            g.obj[j, i] = 1.0
            g.cls[j, i] = 1.0
            # Clip: degenerate two-point lanes can extrapolate wildly and
            # unbounded targets destabilize the squared regression loss.
            g.offsets[j, i] = np.clip(
                lane.u_at_extrapolated(cfg.partition_rows(j)) - cfg.col_center(i),
                -2.0 * cfg.cell_w,
                2.0 * cfg.cell_w,
            )
            g.start[j, i] = v_start
    return g


def binarize_grid(pred, thresh=0.5):
    """Ground-truth form of a prediction: cls and obj thresholded."""
    cls_bin = (pred.cls >= thresh).astype(float)
    return GridLaneTensor(cls_bin, pred.offsets.copy(), pred.start.copy(), cls_bin.copy())


def lane_loss(pred, target):
    """Classification + masked regression loss and its gradient.

    loss = mean over cells of cross-entropy(cls, cls_gt)
         + (1 / N_reg) * sum over obj cells of
           (squared offset errors + squared start error),
    with the regression term omitted when no cell is marked obj. The
    target must be in ground-truth form (cls, obj binary).

    Returns (loss, grad) where grad is a GridLaneTensor holding the
    partial derivatives with respect to pred's cls, offsets, and start.
    """
    if pred.grid_shape != target.grid_shape or pred.offsets.shape != target.offsets.shape:
        raise ConfigMismatch("prediction and target use different grid configs")
    n_cls = pred.cls.size
    p = np.clip(pred.cls, PROB_CLAMP, 1.0 - PROB_CLAMP)
    t = target.cls
    ce = -(t * np.log(p) + (1.0 - t) * np.log(1.0 - p))
    loss = float(ce.sum() / n_cls)
    inside = (pred.cls > PROB_CLAMP) & (pred.cls < 1.0 - PROB_CLAMP)
    d_cls = np.where(inside, (p - t) / (p * (1.0 - p)), 0.0) / n_cls

    d_off = np.zeros_like(pred.offsets)
    d_start = np.zeros_like(pred.start)
    n_reg = float(target.obj.sum())
    if n_reg > 0:
        obj = target.obj
        off_err = pred.offsets - target.offsets
        start_err = pred.start - target.start
        loss += float(
            ((off_err**2).sum(axis=2) * obj).sum() / n_reg
            + ((start_err**2) * obj).sum() / n_reg
        )
        d_off = 2.0 * off_err * obj[..., None] / n_reg
        d_start = 2.0 * start_err * obj / n_reg
    grad = GridLaneTensor(d_cls, d_off, d_start, np.zeros_like(pred.start))
    return loss, grad


@dataclass(frozen=True)
class CorrectorConfig:
    in_w: int = 64
    in_h: int = 36
    hidden1: int = 256
    hidden2: int = 128
    c_f: int = 16
    logit_scale: float = 30.0  # cls head emits logits in units of this scale
    grid: GridConfig = field(default_factory=GridConfig)

    @property
    def input_dim(self):
        return 2 * self.in_h * self.in_w  # image raster + clue raster

    @property
    def feat_shape(self):
        return (self.c_f, self.grid.h, self.grid.w)

    @property
    def start_scale(self):
        # Start rows live in [0, img_h]; a fraction of it keeps the raw
        # head output O(1) so one learning rate serves every head.
        return self.grid.img_h / 8.0


_LAYER_FIELDS = ("w1", "b1", "w2", "b2", "wc", "bc", "wo", "bo", "ws", "bs", "wf", "bf")


@dataclass
class CorrectorModel:
    """Two tanh hidden layers, linear heads; parameters in float64.

    Offsets and start heads emit normalized units that are scaled by the
    cell width and image height, keeping parameter magnitudes comparable
    across heads.
    """

    cfg: CorrectorConfig
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    wc: np.ndarray
    bc: np.ndarray
    wo: np.ndarray
    bo: np.ndarray
    ws: np.ndarray
    bs: np.ndarray
    wf: np.ndarray
    bf: np.ndarray

    @classmethod
    def initialize(cls, cfg, seed=0, scale=1.0, head_scale=0.02):
        rng = stream(seed, STREAM_INIT_CORRECTOR)
        g = cfg.grid
        cells = g.h * g.w

        def mat(rows, cols, s):
            return rng.normal(0.0, s / math.sqrt(cols), size=(rows, cols))

        # Start bias sits at a plausible lane-start row so the squared
        # start error is moderate from the first step; the cls bias starts
        # at a low lane-presence prior so the cross-entropy gradient
        # concentrates on the sparse positive cells.
        bs = np.full(cells, 0.55 * g.img_h / cfg.start_scale)
        bc = np.full(cells, math.log(0.12 / 0.88) / cfg.logit_scale)
        return cls(
            cfg=cfg,
            w1=mat(cfg.hidden1, cfg.input_dim, scale),
            b1=np.zeros(cfg.hidden1),
            w2=mat(cfg.hidden2, cfg.hidden1, scale),
            b2=np.zeros(cfg.hidden2),
            wc=mat(cells, cfg.hidden2, head_scale),
            bc=bc,
            wo=mat(cells * g.n, cfg.hidden2, head_scale),
            bo=np.zeros(cells * g.n),
            ws=mat(cells, cfg.hidden2, head_scale),
            bs=bs,
            wf=mat(cfg.c_f * cells, cfg.hidden2, head_scale),
            bf=np.zeros(cfg.c_f * cells),
        )

    @classmethod
    def zeros(cls, cfg):
        model = cls.initialize(cfg, seed=0)
        for name in _LAYER_FIELDS:
            getattr(model, name)[:] = 0.0
        return model

    def copy(self):
        return replace(self, **{n: getattr(self, n).copy() for n in _LAYER_FIELDS})

    # -- flat parameter vector -------------------------------------------

    def get_params(self):
        return np.concatenate([getattr(self, n).ravel() for n in _LAYER_FIELDS])

    def set_params(self, flat):
        flat = np.asarray(flat, dtype=float)
        if flat.size != self.num_params:
            raise DimensionMismatch(
                f"expected {self.num_params} parameters, got {flat.size}"
            )
        pos = 0
        for name in _LAYER_FIELDS:
            arr = getattr(self, name)
            arr[:] = flat[pos : pos + arr.size].reshape(arr.shape)
            pos += arr.size

    @property
    def num_params(self):
        return sum(getattr(self, n).size for n in _LAYER_FIELDS)

    # -- forward / backward ----------------------------------------------

    def pool_raster(self, raster):
        """Block-mean a full-resolution raster down to the model input."""
        cfg = self.cfg
        a = np.asarray(raster, dtype=float)
        if a.ndim == 3:
            a = a[..., 0]
        h, w = a.shape
        if h % cfg.in_h or w % cfg.in_w:
            raise ShapeMismatch(
                f"raster {h}x{w} not divisible by model input {cfg.in_h}x{cfg.in_w}"
            )
        fh, fw = h // cfg.in_h, w // cfg.in_w
        return a.reshape(cfg.in_h, fh, cfg.in_w, fw).mean(axis=(1, 3)).ravel()

    def _input_vector(self, image, clue):
        img = np.asarray(image)
        clue = np.asarray(clue)
        if img.shape[:2] != clue.shape[:2]:
            raise ShapeMismatch("image and clue mask shapes differ")
        return np.concatenate([self.pool_raster(img), self.pool_raster(clue)])

    def forward_with_cache(self, image, clue, x=None):
        cfg = self.cfg
        g = cfg.grid
        if x is None:
            x = self._input_vector(image, clue)
        h1 = np.tanh(self.w1 @ x + self.b1)
        h2 = np.tanh(self.w2 @ h1 + self.b2)
        cls_logit = (self.wc @ h2 + self.bc) * cfg.logit_scale
        cls = 1.0 / (1.0 + np.exp(-cls_logit))
        offsets = (self.wo @ h2 + self.bo) * g.cell_w
        start = (self.ws @ h2 + self.bs) * cfg.start_scale
        feat = (self.wf @ h2 + self.bf).reshape(cfg.feat_shape)
        grid = GridLaneTensor(
            cls=cls.reshape(g.h, g.w),
            offsets=offsets.reshape(g.h, g.w, g.n),
            start=start.reshape(g.h, g.w),
            obj=np.zeros((g.h, g.w)),
        )
        cache = {"x": x, "h1": h1, "h2": h2, "cls": cls}
        return grid, feat, cache

    def forward(self, image, clue):
        grid, feat, _ = self.forward_with_cache(image, clue)
        return grid, feat

    def backward(self, cache, d_grid, d_feat=None):
        """Flat parameter gradient given loss gradients at the outputs.

        d_grid holds derivatives with respect to cls (probability),
        offsets (pixels), and start (pixels); d_feat with respect to the
        feature map.
        """
        g = self.cfg.grid
        x, h1, h2, cls = cache["x"], cache["h1"], cache["h2"], cache["cls"]
        d_logit = d_grid.cls.ravel() * cls * (1.0 - cls) * self.cfg.logit_scale
        d_off = d_grid.offsets.ravel() * g.cell_w
        d_start = d_grid.start.ravel() * self.cfg.start_scale
        if d_feat is None:
            d_feat = np.zeros(self.bf.shape)
        else:
            d_feat = np.asarray(d_feat, dtype=float).ravel()

        d_h2 = (
            self.wc.T @ d_logit
            + self.wo.T @ d_off
            + self.ws.T @ d_start
            + self.wf.T @ d_feat
        )
        d_a2 = d_h2 * (1.0 - h2 * h2)
        d_h1 = self.w2.T @ d_a2
        d_a1 = d_h1 * (1.0 - h1 * h1)

        grads = {
            "w1": np.outer(d_a1, x),
            "b1": d_a1,
            "w2": np.outer(d_a2, h1),
            "b2": d_a2,
            "wc": np.outer(d_logit, h2),
            "bc": d_logit,
            "wo": np.outer(d_off, h2),
            "bo": d_off,
            "ws": np.outer(d_start, h2),
            "bs": d_start,
            "wf": np.outer(d_feat, h2),
            "bf": d_feat,
        }
        return np.concatenate([grads[n].ravel() for n in _LAYER_FIELDS])


def forward(model, image, clue):
    """Deterministic corrector forward pass: (grid prediction, feature map)."""
    return model.forward(image, clue)


def sgd_step(model, gradient, lr):
    """One gradient-descent update; returns a new model."""
    gradient = np.asarray(gradient, dtype=float)
    if gradient.size != model.num_params:
        raise DimensionMismatch(
            f"gradient has {gradient.size} entries, model has {model.num_params}"
        )
    out = model.copy()
    out.set_params(model.get_params() - lr * gradient)
    return out


def decode_grid(pred, conf_thresh, cfg):
    """Grid prediction back to lane polylines.

    Active cells (cls >= conf_thresh) emit their n candidate points,
    except points more than one cell height above the cell's predicted
    start row. Within each grid row, horizontally contiguous active cells
    (mean u gap < one cell width) form groups; groups chain onto the lane
    whose previous-row group is nearest in u (again within one cell
    width), otherwise they start a new lane.
    """
    active = pred.cls >= conf_thresh
    lanes_pts = []  # list of point arrays
    open_lanes = []  # (last_mean_u, lane_index), survives empty rows
    for j in range(cfg.h):
        cols = np.flatnonzero(active[j])
        if cols.size == 0:
            continue
        rows_v = cfg.partition_rows(j)
        cell_pts = {}
        for i in cols:
            keep = rows_v >= pred.start[j, i] - cfg.cell_h
            if not keep.any():
                continue
            cell_pts[i] = np.stack(
                [
                    np.clip(
                        cfg.col_center(i) + pred.offsets[j, i][keep],
                        0.0,
                        cfg.img_w - 1.0,
                    ),
                    rows_v[keep],
                ],
                axis=1,
            )
        cols = [i for i in cols if i in cell_pts]
        if not cols:
            continue
        groups = []
        for i in cols:
            mean_u = float(cell_pts[i][:, 0].mean())
            if groups and abs(mean_u - groups[-1]["mean_u"][-1]) < cfg.cell_w:
                groups[-1]["cells"].append(i)
                groups[-1]["mean_u"].append(mean_u)
            else:
                groups.append({"cells": [i], "mean_u": [mean_u]})
        next_open = []
        for grp in groups:
            pts = np.concatenate([cell_pts[i] for i in grp["cells"]])
            # average duplicate partition rows across merged cells
            order = np.argsort(pts[:, 1], kind="stable")
            pts = pts[order]
            vs = np.unique(pts[:, 1])
            us = np.array([pts[pts[:, 1] == v, 0].mean() for v in vs])
            top_u = us[0]
            best = None
            for last_u, lane_idx in open_lanes:
                gap = abs(top_u - last_u)
                if gap < cfg.cell_w and (best is None or gap < best[0]):
                    best = (gap, lane_idx)
            if best is None:
                lanes_pts.append([])
                lane_idx = len(lanes_pts) - 1
            else:
                lane_idx = best[1]
            lanes_pts[lane_idx].extend(np.stack([us, vs], axis=1).tolist())
            next_open.append((us[-1], lane_idx))
        open_lanes = next_open
    lanes = []
    for pts in lanes_pts:
        if len(pts) < 2:
            continue
        lane = Lane2D.from_points(np.asarray(pts))
        if lane is not None:
            lanes.append(lane)
    return lanes
