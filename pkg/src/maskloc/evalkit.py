"""Detection metrics (IoU, AP, pooled mAP50, F1) and annotation budget sampling.

Boxes are ``(x, y, w, h)`` with ``(x, y)`` the top-left corner.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "iou",
    "MatchResult",
    "match_detections",
    "precision_recall",
    "average_precision",
    "map50",
    "f1_at_iou",
    "centers_to_boxes",
    "budget_sample",
    "metrics_report",
    "write_pr_csv",
]


def iou(a, b):
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    if aw <= 0 or ah <= 0 or bw <= 0 or bh <= 0:
        raise ValueError("boxes must have positive width and height")
    iw = min(ax + aw, bx + bw) - max(ax, bx)
    ih = min(ay + ah, by + bh) - max(ay, by)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (aw * ah + bw * bh - inter)


def centers_to_boxes(centers, radius):
    return [(cx - radius, cy - radius, 2 * radius, 2 * radius) for cx, cy in centers]


@dataclass
class MatchResult:
    tp: np.ndarray  # per detection, in the order of ``order``
    order: np.ndarray  # detection indices sorted by descending score
    n_gt: int

    @property
    def fp(self):
        return ~self.tp

    @property
    def fn(self):
        return self.n_gt - int(self.tp.sum())


def _ranked(scores):
    # stable descending sort: equal scores keep input order
    return np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")


def match_detections(boxes, scores, gts, iou_thr=0.5):
    """Greedy matching by descending score.

    Each detection takes the still-unmatched ground truth with the
    highest IoU, provided that IoU reaches ``iou_thr``.
    """
    order = _ranked(scores)
    used = np.zeros(len(gts), dtype=bool)
    tp = np.zeros(len(order), dtype=bool)
    for rank, d in enumerate(order):
        best, best_j = -1.0, -1
        for j, g in enumerate(gts):
            if used[j]:
                continue
            o = iou(boxes[d], g)
            if o > best:
                best, best_j = o, j
        if best_j >= 0 and best >= iou_thr:
            used[best_j] = True
            tp[rank] = True
    return MatchResult(tp, order, len(gts))


def precision_recall(tp_sorted, n_gt):
    tp_sorted = np.asarray(tp_sorted, dtype=bool)
    ctp = np.cumsum(tp_sorted)
    cfp = np.cumsum(~tp_sorted)
    recall = ctp / n_gt if n_gt else np.zeros(len(ctp))
    precision = ctp / np.maximum(ctp + cfp, 1)
    return precision, recall


def _ap_from_tp(tp_sorted, n_gt, eleven_point=False):
    if n_gt == 0:
        return 0.0
    precision, recall = precision_recall(tp_sorted, n_gt)
    if eleven_point:
        ap = 0.0
        for thr in np.linspace(0, 1, 11):
            p = precision[recall >= thr]
            ap += (p.max() if p.size else 0.0) / 11
        return float(ap)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    # precision envelope
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    idx = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[idx + 1] - mrec[idx]) * mpre[idx + 1]))


def average_precision(boxes, scores, gts, iou_thr=0.5, eleven_point=False):
    """Single-image, single-class AP with all-points interpolation."""
    m = match_detections(boxes, scores, gts, iou_thr)
    return _ap_from_tp(m.tp, m.n_gt, eleven_point)


def _pooled_tp(per_image_dets, per_image_gts, iou_thr):
    if len(per_image_dets) != len(per_image_gts):
        raise ValueError("detections and ground truths cover different image counts")
    scores, tps, n_gt = [], [], 0
    for dets, gts in zip(per_image_dets, per_image_gts):
        boxes = [d[0] for d in dets]
        sc = [d[1] for d in dets]
        m = match_detections(boxes, sc, gts, iou_thr)
        scores.extend(np.asarray(sc, dtype=np.float64)[m.order])
        tps.extend(m.tp)
        n_gt += len(gts)
    order = _ranked(scores)
    return np.asarray(tps, dtype=bool)[order], n_gt


def _align(per_image_dets, per_image_gts):
    if isinstance(per_image_dets, dict) or isinstance(per_image_gts, dict):
        if not (isinstance(per_image_dets, dict) and isinstance(per_image_gts, dict)):
            raise ValueError("pass both detections and ground truths keyed by image id, or both as lists")
        if set(per_image_dets) != set(per_image_gts):
            missing = sorted(set(per_image_dets) ^ set(per_image_gts))
            raise ValueError(f"image ids do not align: {missing[:5]}")
        keys = sorted(per_image_gts)
        return [per_image_dets[k] for k in keys], [per_image_gts[k] for k in keys]
    return list(per_image_dets), list(per_image_gts)


def map50(per_image_dets, per_image_gts, iou_thr=0.5, eleven_point=False):
    """Dataset-pooled AP: every detection is ranked jointly across images.

    ``per_image_dets[i]`` is a list of ``(box, score)``; ``per_image_gts[i]``
    a list of boxes. Both may instead be dicts keyed by image id.
    """
    dets, gts = _align(per_image_dets, per_image_gts)
    tp, n_gt = _pooled_tp(dets, gts, iou_thr)
    return _ap_from_tp(tp, n_gt, eleven_point)


def f1_at_iou(boxes, scores, gts, iou_thr=0.5):
    """Precision, recall and F1 from greedy matching.

    With no detections precision is taken as 1 (nothing claimed wrongly).
    """
    m = match_detections(boxes, scores, gts, iou_thr)
    n_tp = int(m.tp.sum())
    precision = n_tp / len(boxes) if len(boxes) else 1.0
    recall = n_tp / len(gts) if len(gts) else 1.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def budget_sample(items, budget, rng):
    """Shuffle ``(id, cost)`` items and keep the prefix that fits ``budget``."""
    costs = [c for _, c in items]
    if any(c <= 0 for c in costs):
        raise ValueError("costs must be positive")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    order = rng.permutation(len(items))
    out, total = [], 0.0
    for i in order:
        ident, cost = items[i]
        if total + cost > budget:
            break
        total += cost
        out.append(ident)
    return out


def metrics_report(per_image_dets, per_image_gts, iou_thr=0.5):
    """mAP50 plus pooled precision/recall/F1 over all detections."""
    dets, gts = _align(per_image_dets, per_image_gts)
    tp, n_gt = _pooled_tp(dets, gts, iou_thr)
    n_det, n_tp = len(tp), int(tp.sum())
    precision = n_tp / n_det if n_det else 1.0
    recall = n_tp / n_gt if n_gt else 1.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return {
        "mAP50": _ap_from_tp(tp, n_gt),
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "counts": {"images": len(gts), "detections": n_det, "ground_truths": n_gt, "tp": n_tp, "fp": n_det - n_tp, "fn": n_gt - n_tp},
    }


def write_pr_csv(path, per_image_dets, per_image_gts, iou_thr=0.5):
    dets, gts = _align(per_image_dets, per_image_gts)
    tp, n_gt = _pooled_tp(dets, gts, iou_thr)
    precision, recall = precision_recall(tp, n_gt)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rank", "precision", "recall"])
        for i, (p, r) in enumerate(zip(precision, recall), 1):
            w.writerow([i, f"{p:.10g}", f"{r:.10g}"])


def write_json(path, obj):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2))
    tmp.replace(path)
