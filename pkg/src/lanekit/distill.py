"""Pseudo-label refinement and distillation.

A clue-free detector trains on noisy pseudo labels, the trained corrector
refines the detector's own predictions, and a student retrains on the
refined labels. None of the steps after extraction touch point clouds, so
the student runs from images alone. The adaptation entry point chains the
whole thing from a labeled-by-extraction source domain onto an unlabeled
target domain.
"""

from dataclasses import dataclass, field

import numpy as np

from .detector import (
    CorrectorConfig,
    CorrectorModel,
    decode_grid,
    encode_labels_to_grid,
    lane_loss,
    sgd_step,
)
from .errors import EmptyDataset
from .extraction import ExtractConfig, extract_pipeline
from .labels import to_row_anchors
from .metrics import tusimple_eval
from .rng import STREAM_TRAIN_NAIVE, STREAM_TRAIN_STUDENT, stream
from .slc import SLCConfig, correct_labels, train_slc
from .synthworld import DEFAULT_H_SAMPLES


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 8e-6
    epochs: int = 1500
    batch_size: int = 2
    momentum: float = 0.9  # heavy-ball on the update direction


def _train_supervised(images, label_grids, model_cfg, cfg, seed, stream_id):
    """Shared trainer for the naive detector and the student.

    Gradient descent over a momentum-accumulated direction: the squared
    pixel regression terms and the mean cross-entropy condition very
    differently, and plain steps either diverge or leave the
    classification head unresolved at desk scale.
    """
    if len(images) == 0:
        raise EmptyDataset("training needs at least one frame")
    model = CorrectorModel.initialize(model_cfg, seed=seed)
    rng = stream(seed, stream_id)
    zero_clue = np.zeros(model_cfg.in_h * model_cfg.in_w)
    xs = [
        np.concatenate([model.pool_raster(img), zero_clue]) for img in images
    ]  # clue channel held zero; pooled image reused across epochs
    n = len(images)
    velocity = np.zeros(model.num_params)
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, cfg.batch_size):
            batch = order[lo : lo + cfg.batch_size]
            grad = np.zeros(model.num_params)
            for i in batch:
                pred, _, cache = model.forward_with_cache(None, None, x=xs[i])
                _, g = lane_loss(pred, label_grids[i])
                grad += model.backward(cache, g)
            velocity = cfg.momentum * velocity + grad / len(batch)
            model = sgd_step(model, velocity, cfg.lr)
    return model


def train_naive_detector(images, pseudo_labels, model_cfg, cfg, seed):
    """Supervised training on noisy pseudo labels; clue input held zero."""
    grids = [encode_labels_to_grid(lanes, model_cfg.grid) for lanes in pseudo_labels]
    return _train_supervised(images, grids, model_cfg, cfg, seed, STREAM_TRAIN_NAIVE)


def train_student(images, refined_labels, model_cfg, cfg, seed):
    """Same trainer as the naive detector, supervised by refined labels."""
    grids = [encode_labels_to_grid(lanes, model_cfg.grid) for lanes in refined_labels]
    return _train_supervised(images, grids, model_cfg, cfg, seed, STREAM_TRAIN_STUDENT)


def predict_lanes(model, image, conf_thresh=0.5):
    """Clue-free inference: image in, lanes out."""
    zero_clue = np.zeros(np.asarray(image).shape[:2])
    pred, _ = model.forward(image, zero_clue)
    return decode_grid(pred, conf_thresh, model.cfg.grid)


def refine_labels(naive, slc_state, images, slc_cfg):
    """Per image: predict with the naive detector, correct with the
    trained corrector. Point clouds are never consulted."""
    refined = []
    for image in images:
        noisy = predict_lanes(naive, image, slc_cfg.conf_thresh)
        refined.append(correct_labels(slc_state, image, noisy, slc_cfg))
    return refined


@dataclass(frozen=True)
class AdaptationConfig:
    extract: ExtractConfig = field(default_factory=ExtractConfig)
    model: CorrectorConfig = field(default_factory=CorrectorConfig)
    naive_train: TrainConfig = field(default_factory=TrainConfig)
    student_train: TrainConfig = field(default_factory=TrainConfig)
    slc: SLCConfig = field(default_factory=SLCConfig)
    h_samples: tuple = DEFAULT_H_SAMPLES


def _eval_lane_sets(pred_lanes_per_frame, gt_lanes_per_frame, h_samples):
    preds = [to_row_anchors(lanes, h_samples) for lanes in pred_lanes_per_frame]
    gts = [to_row_anchors(lanes, h_samples) for lanes in gt_lanes_per_frame]
    return tusimple_eval(preds, gts)


def run_adaptation(source_frames, target_frames, cfg, seed):
    """Source-to-target pipeline without any human labels.

    Extracts pseudo labels on the source clouds, trains the naive
    detector and the corrector on the source, refines the naive
    detector's target predictions, trains a student on the refined
    target labels, and evaluates on the target ground truth. Returns
    (student model, report dict); the report carries the student's
    metrics at top level plus nested naive-transfer and refined-label
    metrics.
    """
    source_pseudo = [
        extract_pipeline(f, cfg.extract, seed=seed + k)
        for k, f in enumerate(source_frames)
    ]
    source_images = [f.image for f in source_frames]
    naive = train_naive_detector(source_images, source_pseudo, cfg.model, cfg.naive_train, seed)
    slc_state = train_slc(source_images, source_pseudo, cfg.slc, seed, model_cfg=cfg.model)

    target_images = [f.image for f in target_frames]
    refined = refine_labels(naive, slc_state, target_images, cfg.slc)
    student = train_student(target_images, refined, cfg.model, cfg.student_train, seed)

    target_gt = [f.gt_lanes_2d for f in target_frames]
    student_preds = [predict_lanes(student, img, cfg.slc.conf_thresh) for img in target_images]
    naive_preds = [predict_lanes(naive, img, cfg.slc.conf_thresh) for img in target_images]
    report = _eval_lane_sets(student_preds, target_gt, cfg.h_samples).as_dict()
    report["naive_transfer"] = _eval_lane_sets(naive_preds, target_gt, cfg.h_samples).as_dict()
    report["refined"] = _eval_lane_sets(refined, target_gt, cfg.h_samples).as_dict()
    return student, report
