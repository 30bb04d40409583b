"""Per-scene detection loss, AdamW, and the toy training loop."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .. import tensor as T
from ..losses import focaler_eiou_loss_t, l1_box_loss_t, total_loss, varifocal_loss_t
from ..tensor import Tape, Tensor, backward
from .config import RunConfig
from .matching import greedy_match, iou_matrix
from .pipeline import Model, Output, build_pipeline
from .scenes import Scene, make_dataset

CURVE_COLUMNS = ("step", "loss", "cls", "l1", "iou")


@dataclass
class LossTerms:
    total: Tensor
    cls: Tensor
    l1: Tensor
    iou: Tensor

    def values(self) -> dict[str, float]:
        return {k: float(getattr(self, k).data) for k in ("total", "cls", "l1", "iou")}


def assign_targets(out: Output, scene: Scene, iou_threshold: float) -> list[tuple[int, int]]:
    """Greedy matching, then every still-unmatched gt takes the nearest free cell.

    The fallback guarantees each object one positive query even when no
    prediction overlaps it yet (typical right after initialization).
    """
    preds = out.detections()
    pairs = greedy_match(preds, scene.gt, iou_threshold)
    taken_q = {q for q, _ in pairs}
    taken_g = {g for _, g in pairs}
    g = out.grid
    cells = (np.stack(np.divmod(np.arange(g * g), g), axis=1)[:, ::-1] + 0.5) / g  # (x, y) centers
    for j, det in enumerate(scene.gt):
        if j in taken_g:
            continue
        dist = np.sum((cells - np.array(det.box[:2])) ** 2, axis=1)
        dist[list(taken_q)] = np.inf
        q = int(np.argmin(dist))
        if np.isinf(dist[q]):
            continue
        taken_q.add(q)
        pairs.append((q, j))
    return sorted(pairs)


def scene_loss(out: Output, scene: Scene, cfg: RunConfig) -> LossTerms:
    pairs = assign_targets(out, scene, cfg.match_iou)
    n_q = out.logits.shape[0]
    positive = np.zeros((n_q, cfg.num_classes), dtype=bool)
    quality = np.zeros((n_q, cfg.num_classes))
    zero = Tensor(0.0)
    if pairs:
        qi = np.array([p for p, _ in pairs])
        gt = scene.box_array()[[g for _, g in pairs]]
        pred = out.boxes[qi]
        ious = np.diag(iou_matrix(pred.data, gt))
        for (q, g), v in zip(pairs, ious):
            c = scene.gt[g].cls
            positive[q, c] = True
            quality[q, c] = v
        l1 = T.mean(l1_box_loss_t(pred, Tensor(gt)))
        geo = T.mean(focaler_eiou_loss_t(pred, Tensor(gt), cfg.focaler_d, cfg.focaler_u))
    else:
        l1, geo = zero, zero
    cls = varifocal_loss_t(out.logits, quality, positive, cfg.vfl_alpha, cfg.vfl_gamma)
    return LossTerms(total_loss(cls, l1, geo, cfg.loss_weights), cls, l1, geo)


def batch_loss(model: Model, scenes: Sequence[Scene]) -> LossTerms:
    terms = [scene_loss(model(s.image), s, model.cfg) for s in scenes]
    k = 1.0 / len(terms)
    avg = [T.mul(T.sum_(T.stack([getattr(t, f) for t in terms])), k) for f in ("total", "cls", "l1", "iou")]
    return LossTerms(*avg)


class AdamW:
    """Adaptive moments with decoupled weight decay."""

    def __init__(self, params: list[Tensor], lr: float, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 1e-4):
        self.params = params
        self.lr, self.betas, self.eps, self.wd = lr, betas, eps, weight_decay
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.betas
        c1, c2 = 1 - b1**self.t, 1 - b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p.data = p.data - self.lr * ((m / c1) / (np.sqrt(v / c2) + self.eps) + self.wd * p.data)


@dataclass
class TrainResult:
    curve: list[dict] = field(default_factory=list)
    state: dict = field(default_factory=dict)
    param_count: int = 0

    @property
    def losses(self) -> np.ndarray:
        return np.array([r["loss"] for r in self.curve])

    def smoothed(self, window: int) -> tuple[float, float]:
        """Mean loss over the first and the last ``window`` steps."""
        w = max(1, min(window, len(self.curve)))
        ls = self.losses
        return float(ls[:w].mean()), float(ls[-w:].mean())


def _check_finite(step: int, terms: LossTerms) -> None:
    # components first so the diagnostic names the source, not just the sum
    values = terms.values()
    bad = [f"{k}={values[k]}" for k in ("cls", "l1", "iou", "total") if not np.isfinite(values[k])]
    if bad:
        raise FloatingPointError(f"non-finite loss at step {step}: {', '.join(bad)}")


def train_toy(
    cfg: RunConfig,
    scenes: Optional[Sequence[Scene]] = None,
    model: Optional[Model] = None,
    log_every: int = 0,
) -> tuple[Model, TrainResult]:
    """Full-batch AdamW on a fixed set of synthetic scenes."""
    cfg.validate()
    model = model or build_pipeline(cfg)
    if scenes is None:
        scenes = training_scenes(cfg)
    params = model.parameters()
    opt = AdamW(params, cfg.lr, weight_decay=cfg.weight_decay)
    result = TrainResult(param_count=model.count_params())
    for step in range(cfg.steps):
        batch = [scenes[(step * cfg.batch + i) % len(scenes)] for i in range(min(cfg.batch, len(scenes)))]
        model.store.zero_grad()
        with Tape() as tape:
            terms = batch_loss(model, batch)
        _check_finite(step, terms)
        backward(terms.total, tape)
        opt.step()
        v = terms.values()
        result.curve.append({"step": step, "loss": v["total"], "cls": v["cls"], "l1": v["l1"], "iou": v["iou"]})
        if log_every and step % log_every == 0:
            print(f"step {step:4d} loss {v['total']:.4f} cls {v['cls']:.4f} l1 {v['l1']:.4f} iou {v['iou']:.4f}")
    result.state = model.store.state_dict()
    return model, result


def training_scenes(cfg: RunConfig) -> list[Scene]:
    return make_dataset(cfg.seed, cfg.n_scenes, cfg.n_objects, (cfg.size_min, cfg.size_max), cfg.canvas)


def eval_scenes(cfg: RunConfig) -> list[Scene]:
    # disjoint seed stream from the training scenes
    return make_dataset(cfg.seed + 1_000_003, cfg.eval_scenes, cfg.n_objects, (cfg.size_min, cfg.size_max), cfg.canvas)


def write_curve(path: Union[str, Path], curve: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CURVE_COLUMNS)
        writer.writeheader()
        for row in curve:
            writer.writerow({k: (row[k] if k == "step" else repr(float(row[k]))) for k in CURVE_COLUMNS})


def read_curve(path: Union[str, Path]) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: (int(v) if k == "step" else float(v)) for k, v in row.items()} for row in csv.DictReader(fh)]
