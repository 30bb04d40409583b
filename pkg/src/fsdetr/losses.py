"""Detection losses: varifocal classification, L1 and Focaler-EIoU regression.

Boxes are ``(cx, cy, w, h)`` in normalized image coordinates.  Each loss has
a tensor form (differentiable, vectorized over matched pairs) and a float
convenience form built on the same code.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import tensor as T
from .tensor import Tensor

LOG_CLAMP = 1e-12


class Box(NamedTuple):
    cx: float
    cy: float
    w: float
    h: float

    def corners(self) -> tuple[float, float, float, float]:
        return (self.cx - self.w / 2, self.cy - self.h / 2, self.cx + self.w / 2, self.cy + self.h / 2)

    def validate(self) -> "Box":
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box needs positive extents: {self}")
        return self


@dataclass(frozen=True)
class LossWeights:
    lambda_cls: float = 2.0
    lambda_l1: float = 5.0
    lambda_iou: float = 2.0

    def __post_init__(self):
        if min(self.lambda_cls, self.lambda_l1, self.lambda_iou) < 0:
            raise ValueError("loss weights must be non-negative")


def _cols(boxes: Tensor) -> list[Tensor]:
    return [boxes[..., i] for i in range(4)]


def _corners(boxes: Tensor):
    cx, cy, w, h = _cols(boxes)
    hw, hh = w * 0.5, h * 0.5
    return cx - hw, cy - hh, cx + hw, cy + hh


def box_iou(pred: Tensor, gt: Tensor) -> Tensor:
    """Pairwise-aligned IoU of ``[P,4]`` boxes, returns ``[P]``."""
    px1, py1, px2, py2 = _corners(pred)
    gx1, gy1, gx2, gy2 = _corners(gt)
    iw = T.clamp(T.minimum(px2, gx2) - T.maximum(px1, gx1), lo=0.0)
    ih = T.clamp(T.minimum(py2, gy2) - T.maximum(py1, gy1), lo=0.0)
    inter = iw * ih
    _, _, pw, ph = _cols(pred)
    _, _, gw, gh = _cols(gt)
    union = pw * ph + gw * gh - inter
    return T.where_zero(inter, union)


def varifocal_loss_t(
    logits: Tensor, target_q, positive, alpha: float = 0.75, gamma: float = 2.0
) -> Tensor:
    """Summed VFL over elements, divided by ``max(1, #positives)``.

    ``target_q`` and ``positive`` are constants (no gradient), same shape as
    ``logits``.
    """
    q = np.asarray(target_q, dtype=np.float64) * np.asarray(positive, dtype=bool)
    pos = np.asarray(positive, dtype=np.float64)
    if q.shape != logits.shape or pos.shape != logits.shape:
        raise T.ShapeError(f"VFL targets {q.shape}/{pos.shape} vs logits {logits.shape}")
    p = T.sigmoid(logits)
    log_p = T.log(T.clamp(p, lo=LOG_CLAMP))
    log_1mp = T.log(T.clamp(1.0 - p, lo=LOG_CLAMP))
    bce_q = -(T.mul(log_p, q) + T.mul(log_1mp, 1.0 - q))
    pos_term = T.mul(bce_q, q * pos)
    neg_term = T.mul(T.power(p, gamma) * log_1mp, -alpha * (1.0 - pos))
    return T.sum_(pos_term + neg_term) * (1.0 / max(1.0, pos.sum()))


def l1_box_loss_t(pred: Tensor, gt: Tensor) -> Tensor:
    """Per-pair sum of absolute coordinate differences, ``[P]``."""
    return T.sum_(T.abs_(pred - gt), axis=-1)


def focaler_eiou_loss_t(pred: Tensor, gt: Tensor, d: float = 0.0, u: float = 0.95) -> Tensor:
    """Per-pair Focaler-EIoU, ``[P]``.

    The IoU term is linearly remapped onto ``[d, u]`` and clamped; the
    center, width and height penalties are the plain EIoU terms, each defined
    as zero when its enclosing-box extent vanishes.
    """
    if not 0.0 <= d < u <= 1.0:
        raise ValueError(f"Focaler interval needs 0 <= d < u <= 1, got d={d}, u={u}")
    iou = box_iou(pred, gt)
    iou_f = T.clamp((iou - d) * (1.0 / (u - d)), lo=0.0, hi=1.0)
    px1, py1, px2, py2 = _corners(pred)
    gx1, gy1, gx2, gy2 = _corners(gt)
    cw = T.maximum(px2, gx2) - T.minimum(px1, gx1)
    ch = T.maximum(py2, gy2) - T.minimum(py1, gy1)
    pcx, pcy, pw, ph = _cols(pred)
    gcx, gcy, gw, gh = _cols(gt)
    cw2, ch2 = T.square(cw), T.square(ch)
    center = T.where_zero(T.square(pcx - gcx) + T.square(pcy - gcy), cw2 + ch2)
    width = T.where_zero(T.square(pw - gw), cw2)
    height = T.where_zero(T.square(ph - gh), ch2)
    return 1.0 - iou_f + center + width + height


def total_loss(cls, l1, geo, w: LossWeights = LossWeights()):
    """Weighted sum; works on floats and on Tensors alike."""
    return w.lambda_cls * cls + w.lambda_l1 * l1 + w.lambda_iou * geo


# ------------------------------------------------------------ float forms


def _box_tensor(*boxes: Box) -> Tensor:
    return Tensor(np.array([tuple(b) for b in boxes], dtype=np.float64))


def iou(a: Box, b: Box) -> float:
    return float(box_iou(_box_tensor(Box(*a)), _box_tensor(Box(*b))).data[0])


def varifocal_loss(pred_logit, target_q, is_positive, alpha: float = 0.75, gamma: float = 2.0) -> float:
    logits = np.atleast_1d(np.asarray(pred_logit, dtype=np.float64))
    q = np.broadcast_to(np.asarray(target_q, dtype=np.float64), logits.shape)
    pos = np.broadcast_to(np.asarray(is_positive, dtype=bool), logits.shape)
    return float(varifocal_loss_t(Tensor(logits), q, pos, alpha, gamma).data)


def l1_box_loss(pred: Box, gt: Box) -> float:
    return float(l1_box_loss_t(_box_tensor(Box(*pred)), _box_tensor(Box(*gt))).data[0])


def focaler_eiou_loss(pred: Box, gt: Box, d: float = 0.0, u: float = 0.95) -> float:
    return float(focaler_eiou_loss_t(_box_tensor(Box(*pred)), _box_tensor(Box(*gt)), d, u).data[0])
