"""Benchmark-protocol evaluation on row-anchor labels.

A predicted point is correct when it lands within pt_thresh_px of the
ground truth at a shared anchor row. A predicted lane matches a ground
truth lane when its point accuracy exceeds lane_acc_thresh; matching is
greedy one-to-one over pairs above the threshold, best accuracy first.
Matched lanes are true positives, leftover predictions false positives,
leftover ground truth false negatives. FPR = FP / (TP + FP) and
FNR = FN / (TP + FN), following the benchmark convention.
"""

from dataclasses import dataclass

import numpy as np

from .errors import AnchorMismatch
from .labels import MISSING


@dataclass(frozen=True)
class EvalResult:
    f1: float
    accuracy: float
    fpr: float
    fnr: float
    precision: float
    recall: float
    tp: int
    fp: int
    fn: int

    def as_dict(self):
        return {
            "f1": self.f1,
            "accuracy": self.accuracy,
            "fpr": self.fpr,
            "fnr": self.fnr,
            "precision": self.precision,
            "recall": self.recall,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
        }


def _pair_score(pred_x, gt_x, pt_thresh_px):
    """(correct points, gt points) for one pred/gt lane pair."""
    gt_rows = gt_x != MISSING
    n_gt = int(gt_rows.sum())
    if n_gt == 0:
        return 0, 0
    hit = gt_rows & (pred_x != MISSING) & (np.abs(pred_x - gt_x) < pt_thresh_px)
    return int(hit.sum()), n_gt


def tusimple_eval(preds, gts, pt_thresh_px=20.0, lane_acc_thresh=0.85):
    """Evaluate per-frame predictions against ground truth labels.

    preds and gts are parallel lists of RowAnchorLabel with identical
    h_samples per frame. Accuracy is total correct points of matched
    lanes over total ground-truth points.
    """
    if len(preds) != len(gts):
        raise AnchorMismatch(f"{len(preds)} prediction frames vs {len(gts)} gt frames")
    tp = fp = fn = 0
    correct_pts = 0
    total_gt_pts = 0
    for pred, gt in zip(preds, gts):
        if not np.array_equal(pred.h_samples, gt.h_samples):
            raise AnchorMismatch("prediction and gt use different anchor rows")
        total_gt_pts += int(sum((x != MISSING).sum() for x in gt.xs))
        pairs = []
        for pi, px in enumerate(pred.xs):
            for gi, gx in enumerate(gt.xs):
                hits, n_gt = _pair_score(px, gx, pt_thresh_px)
                if n_gt == 0:
                    continue
                acc = hits / n_gt
                if acc > lane_acc_thresh:
                    pairs.append((acc, pi, gi, hits))
        pairs.sort(key=lambda p: (-p[0], p[1], p[2]))
        used_p, used_g = set(), set()
        for acc, pi, gi, hits in pairs:
            if pi in used_p or gi in used_g:
                continue
            used_p.add(pi)
            used_g.add(gi)
            correct_pts += hits
        matched = len(used_p)
        tp += matched
        fp += len(pred.xs) - matched
        fn += len(gt.xs) - matched

    precision = tp / (tp + fp) if tp + fp else 1.0
    recall = tp / (tp + fn) if tp + fn else 1.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    fpr = fp / (tp + fp) if tp + fp else 0.0
    fnr = fn / (tp + fn) if tp + fn else 0.0
    accuracy = correct_pts / total_gt_pts if total_gt_pts else 1.0
    return EvalResult(
        f1=f1,
        accuracy=accuracy,
        fpr=fpr,
        fnr=fnr,
        precision=precision,
        recall=recall,
        tp=tp,
        fp=fp,
        fn=fn,
    )
