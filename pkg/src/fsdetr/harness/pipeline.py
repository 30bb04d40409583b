"""Toy end-to-end detector assembled from a RunConfig.

Layout::

    image [3,S,S]
      stem 3x3/2 -> stage(P2) -> stage(P3) -> stage(P4) -> stage(P5)
      each stage: 3x3/2 conv + C2f, optionally followed by a residual SHAB
      P5 -> 1x1 projection + DA-AIFI (optional)
      {P2..P5} -> FSFPN (CFSB or plain 1x1 fuse blocks)
      fused P3 -> 1x1 head -> per-cell (logits, tx, ty, tw, th)

The decoder of a full DETR is replaced by this dense per-cell head: each
cell of the stride-8 grid is one query.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .. import tensor as T
from ..attention import C2fParams, DaAifiParams, SampleCounter, c2f_forward, da_aifi, make_c2f, make_da_aifi, make_shab, shab_forward
from ..losses import Box
from ..params import ConvParams, ParamStore
from ..pyramid import FeaturePyramid, FsfpnParams, fsfpn_forward, make_fsfpn
from ..tensor import Tensor
from .config import RunConfig
from .scenes import Detection

LEVELS = ("P2", "P3", "P4", "P5")
HEAD_LEVEL = "P3"
HEAD_STRIDE = 8
# sigmoid(-2) ~ 0.12: initial box extents close to one grid cell
SIZE_PRIOR_LOGIT = -2.0


@dataclass
class Stage:
    down: ConvParams
    c2f: C2fParams
    shab: Optional[C2fParams] = None

    def tensors(self) -> list[Tensor]:
        out = self.down.tensors() + self.c2f.tensors()
        return out + (self.shab.tensors() if self.shab is not None else [])


@dataclass
class Output:
    logits: Tensor  # [Q, num_classes]
    boxes: Tensor  # [Q, 4] (cx, cy, w, h)
    grid: int

    def detections(self, score_threshold: float = 0.0) -> list[Detection]:
        scores = 1.0 / (1.0 + np.exp(-self.logits.data))
        out = []
        for q in range(scores.shape[0]):
            c = int(np.argmax(scores[q]))
            if scores[q, c] >= score_threshold:
                out.append(Detection(c, float(scores[q, c]), Box(*self.boxes.data[q])))
        return out


@dataclass
class Model:
    cfg: RunConfig
    store: ParamStore
    stem: ConvParams
    stages: dict
    aifi_proj: Optional[ConvParams]
    aifi: list
    fpn: FsfpnParams
    head: ConvParams
    counter: SampleCounter = field(default_factory=SampleCounter)

    def count_params(self) -> int:
        return self.store.count()

    def parameters(self) -> list[Tensor]:
        return self.store.tensors()

    def features(self, image: Tensor) -> FeaturePyramid:
        act = self.cfg.block_act
        x = self.stem(image, act=act)
        levels = {}
        for name in LEVELS:
            st = self.stages[name]
            x = c2f_forward(st.down(x, act=act), st.c2f, act=act)
            if st.shab is not None:
                x = T.add(x, shab_forward(x, st.shab, act=act))
            levels[name] = x
        if self.aifi_proj is not None:
            p5 = self.aifi_proj(levels["P5"])
            for layer in self.aifi:
                p5 = da_aifi(p5, layer, self.counter)
            levels["P5"] = p5
        return fsfpn_forward(
            FeaturePyramid(levels), self.fpn, self.cfg.sni_variant, act=act, cfsb_act=self.cfg.cfsb_act
        )

    def __call__(self, image: Tensor) -> Output:
        if image.ndim != 3 or image.shape[0] != 3:
            raise T.ShapeError(f"model expects a [3,H,W] image, got {image.shape}")
        if image.shape[1] % 32 or image.shape[2] % 32:
            raise T.ShapeError(f"image extents must be multiples of 32, got {image.shape[1:]}")
        fused = self.features(image)[HEAD_LEVEL]
        raw = self.head(fused)  # [nc + 4, g, g]
        nc = self.cfg.num_classes
        g_h, g_w = raw.shape[1:]
        flat = T.transpose(T.reshape(raw, (nc + 4, g_h * g_w)))  # [Q, nc + 4]
        logits = flat[:, :nc]
        t = T.sigmoid(flat[:, nc:])
        rows, cols = np.divmod(np.arange(g_h * g_w), g_w)
        cx = T.mul(T.add(t[:, 0], cols.astype(np.float64)), 1.0 / g_w)
        cy = T.mul(T.add(t[:, 1], rows.astype(np.float64)), 1.0 / g_h)
        boxes = T.stack([cx, cy, t[:, 2], t[:, 3]], axis=1)
        return Output(logits, boxes, g_w)


def build_pipeline(cfg: RunConfig) -> Model:
    """Deterministic parameters from ``cfg.seed``; widths are validated first."""
    cfg.validate()
    stem_w, *level_w = cfg.width_list
    widths = dict(zip(LEVELS, level_w))
    store = ParamStore(cfg.seed)
    stem = store.conv("stem", 3, stem_w, 3, stride=2)

    stages = {}
    c_prev = stem_w
    for name in LEVELS:
        s = store.scope(f"backbone.{name}")
        c = widths[name]
        shab = make_shab(s.scope("shab"), c) if (cfg.shab and name in cfg.shab_levels) else None
        stages[name] = Stage(s.conv("down", c_prev, c, 3, stride=2), make_c2f(s.scope("c2f"), c, c, n=1), shab)
        c_prev = c

    fpn_in = dict(widths)
    aifi_proj, aifi = None, []
    if cfg.da_aifi:
        e = store.scope("encoder")
        aifi_proj = e.conv("proj", widths["P5"], cfg.hidden, 1)
        aifi = [make_da_aifi(e.scope(f"layer{i}"), cfg.hidden, cfg.heads, cfg.points) for i in range(cfg.aifi_layers)]
        fpn_in["P5"] = cfg.hidden

    fpn = make_fsfpn(
        store.scope("fpn"), fpn_in, cfg.hidden, use_cfsb=cfg.fsfpn_cfsb, bu_cfsb=cfg.bu_cfsb, repc3_depth=cfg.repc3_depth
    )
    head = store.conv("head", cfg.hidden, cfg.num_classes + 4, 1)
    head.bias.data[cfg.num_classes + 2 :] = SIZE_PRIOR_LOGIT
    return Model(cfg, store, stem, stages, aifi_proj, aifi, fpn, head)


def count_params(obj) -> int:
    """Parameter count of a Model, a RunConfig (built on the fly) or a parameter container."""
    if isinstance(obj, RunConfig):
        return build_pipeline(obj).count_params()
    if isinstance(obj, Model):
        return obj.count_params()
    from ..params import count_params as _count

    return _count(obj)
