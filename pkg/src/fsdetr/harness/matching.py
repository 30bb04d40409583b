"""Greedy score-ordered matching and 101-point average precision."""

from __future__ import annotations

from typing import Sequence

import numpy as np


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """IoU between every row of ``a [P,4]`` and ``b [G,4]`` (cx, cy, w, h)."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    a1, a2 = a[:, None, :2] - a[:, None, 2:] / 2, a[:, None, :2] + a[:, None, 2:] / 2
    b1, b2 = b[None, :, :2] - b[None, :, 2:] / 2, b[None, :, :2] + b[None, :, 2:] / 2
    wh = np.clip(np.minimum(a2, b2) - np.maximum(a1, b1), 0.0, None)
    inter = wh[..., 0] * wh[..., 1]
    union = (a[:, 2] * a[:, 3])[:, None] + (b[:, 2] * b[:, 3])[None, :] - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def _check_threshold(t: float) -> None:
    if not 0.0 < t <= 1.0:
        raise ValueError(f"IoU threshold must lie in (0, 1], got {t}")


def _boxes(dets) -> np.ndarray:
    return np.array([tuple(d.box) for d in dets], dtype=np.float64).reshape(-1, 4)


def greedy_match(preds, gts, iou_threshold: float) -> list[tuple[int, int]]:
    """Score-descending predictions each claim their best free gt.

    Ties in score keep the original prediction order.  Returns
    ``(pred index, gt index)`` pairs in claim order.
    """
    _check_threshold(iou_threshold)
    if not preds or not gts:
        return []
    ious = iou_matrix(_boxes(preds), _boxes(gts))
    order = np.argsort(-np.array([d.score for d in preds]), kind="stable")
    free = np.ones(len(gts), dtype=bool)
    pairs = []
    for i in order:
        cand = np.where(free, ious[i], -1.0)
        j = int(np.argmax(cand))
        if cand[j] >= iou_threshold:
            free[j] = False
            pairs.append((int(i), j))
    return pairs


def interpolated_ap(recall: np.ndarray, precision: np.ndarray, points: int = 101) -> float:
    """Mean over recall levels of the best precision at or above each level."""
    ap = 0.0
    for r in np.linspace(0.0, 1.0, points):
        ok = recall >= r - 1e-12
        ap += precision[ok].max() if ok.any() else 0.0
    return float(ap / points)


def evaluate_ap(preds_per_scene: Sequence, gts_per_scene: Sequence, iou_threshold: float = 0.5) -> float:
    """Single-class AP over a set of scenes.

    All predictions are ranked by score globally; each one is a true
    positive iff it claims a still-free gt of its own scene at or above the
    threshold.  With no gt at all the result is 1 when there are also no
    predictions and 0 otherwise.
    """
    _check_threshold(iou_threshold)
    if len(preds_per_scene) != len(gts_per_scene):
        raise ValueError("need one prediction list per gt list")
    n_gt = sum(len(g) for g in gts_per_scene)
    flat = [(d.score, s, i) for s, dets in enumerate(preds_per_scene) for i, d in enumerate(dets)]
    if n_gt == 0:
        return 0.0 if flat else 1.0
    if not flat:
        return 0.0
    flat.sort(key=lambda t: -t[0])  # stable: scene order, then index
    ious = [iou_matrix(_boxes(p), _boxes(g)) for p, g in zip(preds_per_scene, gts_per_scene)]
    free = [np.ones(len(g), dtype=bool) for g in gts_per_scene]
    tp = np.zeros(len(flat))
    for rank, (_, s, i) in enumerate(flat):
        if not free[s].any():
            continue
        cand = np.where(free[s], ious[s][i], -1.0)
        j = int(np.argmax(cand))
        if cand[j] >= iou_threshold:
            free[s][j] = False
            tp[rank] = 1.0
    ctp = np.cumsum(tp)
    recall = ctp / n_gt
    precision = ctp / np.arange(1, len(flat) + 1)
    return interpolated_ap(recall, precision)
