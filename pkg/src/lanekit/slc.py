"""Self-supervised lane-correction training.

Two copies of the corrector run side by side: the online network trains
by gradient descent, the target network tracks it by exponential moving
average. Each step perturbs the frame's noisy labels twice, feeds one
clue mask to each branch, and pulls the online prediction toward (a) the
target branch's prediction (consistency), (b) the original noisy label
while the gate allows it (reconstruction), and (c) lane-instance feature
agreement across branches against nearby no-lane features (embedding).

Only the online branch ever receives gradient; target predictions and
target-pooled embedding vectors enter the losses as constants.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .detector import (
    CorrectorConfig,
    CorrectorModel,
    binarize_grid,
    decode_grid,
    encode_labels_to_grid,
    lane_loss,
    sgd_step,
)
from .errors import EmptyDataset, EmptyMask, EmptySet
from .labels import AugmentConfig, LabelMask, perturb_labels, pixel_iou, rasterize_mask
from .rng import STREAM_INIT_HEAD, STREAM_TRAIN_SLC, stream


@dataclass(frozen=True)
class SLCConfig:
    lambda_embed: float = 5.0
    epsilon_epochs: int = 10
    ema_momentum: float = 0.99
    lr: float = 0.002
    epochs: int = 60
    batch_size: int = 4
    embed_dim: int = 16
    neg_offset_px: int = 2  # feature-map pixels; 2x the 1-px lane band
    img_w: int = 1280
    img_h: int = 720
    mask_thickness_px: int = 5
    conf_thresh: float = 0.5
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    force_lambda_r: int = None  # ablation override; None keeps the gate rule

    def __post_init__(self):
        if self.lambda_embed < 0:
            raise ValueError("lambda_embed must be non-negative")
        if not 0.0 <= self.ema_momentum <= 1.0:
            raise ValueError("ema_momentum must lie in [0, 1]")


@dataclass
class ProjectionHead:
    """Two-layer perceptron mapping pooled features to embedding space."""

    w1: np.ndarray  # (c_f, c_f)
    b1: np.ndarray
    w2: np.ndarray  # (d, c_f)
    b2: np.ndarray

    @classmethod
    def initialize(cls, c_f, d, seed=0):
        rng = stream(seed, STREAM_INIT_HEAD)
        return cls(
            w1=rng.normal(0.0, 1.0 / math.sqrt(c_f), size=(c_f, c_f)),
            b1=np.zeros(c_f),
            w2=rng.normal(0.0, 1.0 / math.sqrt(c_f), size=(d, c_f)),
            b2=np.zeros(d),
        )

    def copy(self):
        return ProjectionHead(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy())

    def get_params(self):
        return np.concatenate([self.w1.ravel(), self.b1, self.w2.ravel(), self.b2])

    def set_params(self, flat):
        flat = np.asarray(flat, dtype=float)
        pos = 0
        for arr in (self.w1, self.b1, self.w2, self.b2):
            arr[:] = flat[pos : pos + arr.size].reshape(arr.shape)
            pos += arr.size

    @property
    def num_params(self):
        return self.w1.size + self.b1.size + self.w2.size + self.b2.size

    def forward_with_cache(self, v):
        h = np.tanh(self.w1 @ v + self.b1)
        z = self.w2 @ h + self.b2
        return z, {"v": v, "h": h}

    def forward(self, v):
        z, _ = self.forward_with_cache(v)
        return z

    def backward(self, cache, d_z):
        """Returns (flat parameter gradient, gradient w.r.t. the input v)."""
        v, h = cache["v"], cache["h"]
        d_h = self.w2.T @ d_z
        d_a = d_h * (1.0 - h * h)
        grad = np.concatenate(
            [np.outer(d_a, v).ravel(), d_a, np.outer(d_z, h).ravel(), d_z]
        )
        return grad, self.w1.T @ d_a


@dataclass
class TrainState:
    online: CorrectorModel
    online_head: ProjectionHead
    target: CorrectorModel
    target_head: ProjectionHead
    epoch: int = 0


def consistency_loss(y1, y2):
    """Lane loss of the online prediction against the binarized,
    gradient-free target prediction."""
    return lane_loss(y1, binarize_grid(y2))


def reconstruction_loss(y1, pseudo):
    """Lane loss of the online prediction against the noisy label grid."""
    return lane_loss(y1, pseudo)


def _lanes_mask(lanes, cfg):
    return rasterize_mask(lanes, cfg.img_h, cfg.img_w, cfg.mask_thickness_px)


def lambda_r_gate(y1_lanes, y2_lanes, pseudo_lanes, epoch, cfg):
    """Reconstruction gate: 1 during the first epsilon_epochs, afterwards
    0 exactly when either branch's decoded lanes overlap the noisy label
    at pixel IoU <= 0.5."""
    if cfg.force_lambda_r is not None:
        return int(cfg.force_lambda_r)
    if epoch <= cfg.epsilon_epochs:
        return 1
    m_pseudo = _lanes_mask(pseudo_lanes, cfg)
    iou1 = pixel_iou(_lanes_mask(y1_lanes, cfg), m_pseudo)
    iou2 = pixel_iou(_lanes_mask(y2_lanes, cfg), m_pseudo)
    return 0 if min(iou1, iou2) <= 0.5 else 1


def mask_pool(f, mask):
    """Per-channel mean of the feature map over set mask positions."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != f.shape[1:]:
        raise EmptyMask(f"mask shape {mask.shape} does not match feature map {f.shape[1:]}")
    count = int(mask.sum())
    if count == 0:
        raise EmptyMask("pooling mask selects no positions")
    return f[:, mask].mean(axis=1)


def _mask_pool_backward(d_v, f_shape, mask):
    count = int(mask.sum())
    d_f = np.zeros(f_shape)
    d_f[:, mask] = d_v[:, None] / count
    return d_f


def embedding_loss(z_p1, z_p2_set, z_n_set):
    """log(1 + sum over (p2, n) pairs of exp(z_p1.z_n - z_p1.z_p2)).

    Returns (loss, d_z_p1, d_z_p2_set, d_z_n_set). Computed through a
    stable log-sum-exp so large dot products cannot overflow.
    """
    z_p1 = np.asarray(z_p1, dtype=float)
    z_p2 = np.atleast_2d(np.asarray(z_p2_set, dtype=float))
    z_n = np.atleast_2d(np.asarray(z_n_set, dtype=float))
    if z_p2.shape[0] == 0 or z_n.shape[0] == 0:
        raise EmptySet("embedding loss needs at least one positive and one negative")
    dots_n = z_n @ z_p1  # (N,)
    dots_p = z_p2 @ z_p1  # (P,)
    exponents = dots_n[None, :] - dots_p[:, None]  # (P, N)
    m = max(0.0, float(exponents.max()))
    total = math.exp(-m) + np.exp(exponents - m).sum()
    loss = m + math.log(total)
    weights = np.exp(exponents - m) / total  # (P, N), = exp(e)/(1+S)
    d_z_p1 = (weights.sum(axis=0) @ z_n) - (weights.sum(axis=1) @ z_p2)
    d_z_p2 = -weights.sum(axis=1)[:, None] * z_p1
    d_z_n = weights.sum(axis=0)[:, None] * z_p1
    return float(loss), d_z_p1, d_z_p2, d_z_n


def build_pos_neg_masks(decoded_lanes, grid_cfg, cfg):
    """Feature-map pooling masks for the decoded lanes.

    Positives mark the cells each lane traverses (one mask per lane);
    negatives are each positive shifted by +-neg_offset_px columns with
    every positive cell removed. Empty masks are dropped.
    """
    h_f, w_f = grid_cfg.h, grid_cfg.w
    positives = []
    for lane in decoded_lanes:
        mask = np.zeros((h_f, w_f), dtype=bool)
        cols = lane.points[:, 0] * w_f / cfg.img_w
        rows = lane.points[:, 1] * h_f / cfg.img_h
        ci = np.clip(np.floor(cols).astype(int), 0, w_f - 1)
        rj = np.clip(np.floor(rows).astype(int), 0, h_f - 1)
        mask[rj, ci] = True
        if mask.any():
            positives.append(mask)
    if not positives:
        return [], []
    union = np.zeros((h_f, w_f), dtype=bool)
    for p in positives:
        union |= p
    negatives = []
    for p in positives:
        for shift in (cfg.neg_offset_px, -cfg.neg_offset_px):
            moved = np.zeros_like(p)
            if shift > 0:
                moved[:, shift:] = p[:, :-shift]
            elif shift < 0:
                moved[:, :shift] = p[:, -shift:]
            else:
                moved = p.copy()
            moved &= ~union
            if moved.any():
                negatives.append(moved)
    return positives, negatives


def ema_update(state, momentum):
    """target' = momentum * target + (1 - momentum) * online, elementwise,
    for both the corrector and the projection head."""
    new_target = state.target.copy()
    new_target.set_params(
        momentum * state.target.get_params() + (1.0 - momentum) * state.online.get_params()
    )
    new_head = state.target_head.copy()
    new_head.set_params(
        momentum * state.target_head.get_params()
        + (1.0 - momentum) * state.online_head.get_params()
    )
    return replace(state, target=new_target, target_head=new_head)


def total_loss(l_c, l_r, lambda_r, l_embed, lambda_embed):
    """(L_c + lambda_r * L_r) + lambda_embed * L_embed."""
    return l_c + lambda_r * l_r + lambda_embed * l_embed


def slc_step_loss(
    online,
    online_head,
    image,
    clue_mask,
    target_grid,
    pseudo_grid,
    lambda_r,
    lambda_embed,
    pos_masks,
    neg_masks,
    z_p2_set,
    x=None,
):
    """Differentiable per-frame loss of the online branch.

    Everything from the target branch (target_grid, z_p2_set) and the
    discrete structures (pooling masks, the lambda_r gate value) enters as
    a constant; the returned gradients cover all online corrector and
    projection-head parameters. Used both by training and by the
    finite-difference gradient checks. x, when given, is the precomputed
    pooled input vector.

    Returns (loss, corrector gradient, head gradient).
    """
    y1, f1, cache = online.forward_with_cache(image, clue_mask, x=x)
    l_c, g_c = consistency_loss(y1, target_grid)
    l_r, g_r = reconstruction_loss(y1, pseudo_grid)
    d_grid = g_c.copy()
    d_grid.cls += lambda_r * g_r.cls
    d_grid.offsets += lambda_r * g_r.offsets
    d_grid.start += lambda_r * g_r.start

    l_embed = 0.0
    d_feat = np.zeros_like(f1)
    head_grad = np.zeros(online_head.num_params)
    use_embed = (
        lambda_embed > 0
        and pos_masks
        and neg_masks
        and z_p2_set is not None
        and len(z_p2_set) > 0
    )
    if use_embed:
        z_n, n_caches = [], []
        for mask in neg_masks:
            z, c = online_head.forward_with_cache(mask_pool(f1, mask))
            z_n.append(z)
            n_caches.append(c)
        z_n = np.asarray(z_n)
        d_z_n_total = np.zeros_like(z_n)
        per_lane_losses = []
        p_grads = []  # (cache, d_z_p1) per positive
        for mask in pos_masks:
            z_p1, c_p = online_head.forward_with_cache(mask_pool(f1, mask))
            l_e, d_z_p1, _, d_z_n = embedding_loss(z_p1, z_p2_set, z_n)
            per_lane_losses.append(l_e)
            p_grads.append((mask, c_p, d_z_p1))
            d_z_n_total += d_z_n
        k = len(pos_masks)
        l_embed = float(np.mean(per_lane_losses))
        scale = lambda_embed / k
        for mask, c_p, d_z_p1 in p_grads:
            g_h, d_v = online_head.backward(c_p, scale * d_z_p1)
            head_grad += g_h
            d_feat += _mask_pool_backward(d_v, f1.shape, mask)
        for mask, c_n, d_z in zip(neg_masks, n_caches, d_z_n_total):
            g_h, d_v = online_head.backward(c_n, scale * d_z)
            head_grad += g_h
            d_feat += _mask_pool_backward(d_v, f1.shape, mask)

    loss = total_loss(l_c, l_r, lambda_r, l_embed, lambda_embed)
    model_grad = online.backward(cache, d_grid, d_feat)
    return loss, model_grad, head_grad


def _default_corrector_config(cfg):
    from .detector import GridConfig

    return CorrectorConfig(grid=GridConfig(img_w=cfg.img_w, img_h=cfg.img_h))


def train_slc(images, pseudo_labels, cfg, seed, model_cfg=None):
    """Train the dual-branch corrector on frames with noisy labels.

    images: list of (H, W, 1) rasters; pseudo_labels: per-frame lane
    lists. Deterministic for a fixed seed. Returns the final TrainState.
    """
    if len(images) == 0:
        raise EmptyDataset("training needs at least one frame")
    if len(images) != len(pseudo_labels):
        raise EmptyDataset("images and pseudo labels must pair up")
    if model_cfg is None:
        model_cfg = _default_corrector_config(cfg)
    grid_cfg = model_cfg.grid
    online = CorrectorModel.initialize(model_cfg, seed=seed)
    online_head = ProjectionHead.initialize(model_cfg.c_f, cfg.embed_dim, seed=seed)
    state = TrainState(
        online=online,
        online_head=online_head,
        target=online.copy(),
        target_head=online_head.copy(),
        epoch=0,
    )
    rng = stream(seed, STREAM_TRAIN_SLC)
    pseudo_grids = [encode_labels_to_grid(lanes, grid_cfg) for lanes in pseudo_labels]
    image_vecs = [state.online.pool_raster(img) for img in images]
    n = len(images)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        for lo in range(0, n, cfg.batch_size):
            batch = order[lo : lo + cfg.batch_size]
            # Target pass first: the positive pool spans the whole batch.
            prepared = []
            z_p2_pool = []
            for i in batch:
                lanes1, _ = perturb_labels(
                    pseudo_labels[i], cfg.augment, rng, cfg.img_w, cfg.img_h
                )
                lanes2, _ = perturb_labels(
                    pseudo_labels[i], cfg.augment, rng, cfg.img_w, cfg.img_h
                )
                m1 = rasterize_mask(lanes1, cfg.img_h, cfg.img_w, cfg.mask_thickness_px)
                m2 = rasterize_mask(lanes2, cfg.img_h, cfg.img_w, cfg.mask_thickness_px)
                x1 = np.concatenate([image_vecs[i], state.online.pool_raster(m1.bits)])
                x2 = np.concatenate([image_vecs[i], state.target.pool_raster(m2.bits)])
                y2, f2, _ = state.target.forward_with_cache(None, None, x=x2)
                y2_lanes = decode_grid(y2, cfg.conf_thresh, grid_cfg)
                p2_masks, _ = build_pos_neg_masks(y2_lanes, grid_cfg, cfg)
                for mask in p2_masks:
                    z_p2_pool.append(state.target_head.forward(mask_pool(f2, mask)))
                prepared.append((int(i), x1, y2, y2_lanes))
            z_p2_set = np.asarray(z_p2_pool) if z_p2_pool else None

            model_grad = np.zeros(state.online.num_params)
            head_grad = np.zeros(state.online_head.num_params)
            for i, x1, y2, y2_lanes in prepared:
                y1_probe, _, _ = state.online.forward_with_cache(None, None, x=x1)
                y1_lanes = decode_grid(y1_probe, cfg.conf_thresh, grid_cfg)
                lam_r = lambda_r_gate(y1_lanes, y2_lanes, pseudo_labels[i], epoch, cfg)
                pos_masks, neg_masks = build_pos_neg_masks(y1_lanes, grid_cfg, cfg)
                _, g_m, g_h = slc_step_loss(
                    state.online,
                    state.online_head,
                    None,
                    None,
                    y2,
                    pseudo_grids[i],
                    lam_r,
                    cfg.lambda_embed,
                    pos_masks,
                    neg_masks,
                    z_p2_set,
                    x=x1,
                )
                model_grad += g_m
                head_grad += g_h
            scale = 1.0 / len(prepared)
            new_online = sgd_step(state.online, model_grad * scale, cfg.lr)
            new_head = state.online_head.copy()
            new_head.set_params(new_head.get_params() - cfg.lr * head_grad * scale)
            state = replace(state, online=new_online, online_head=new_head, epoch=epoch)
            state = ema_update(state, cfg.ema_momentum)
    return state


def correct_labels(state, image, noisy_lanes, cfg, model_cfg=None):
    """Refine noisy labels: decode the online branch fed with the image
    and the rasterized noisy-label clue."""
    if model_cfg is None:
        grid_cfg = state.online.cfg.grid
    else:
        grid_cfg = model_cfg.grid
    clue = rasterize_mask(noisy_lanes, cfg.img_h, cfg.img_w, cfg.mask_thickness_px)
    y, _ = state.online.forward(image, clue.bits)
    return decode_grid(y, cfg.conf_thresh, grid_cfg)
