"""FSFPN: space-to-depth downsampling, SNI upsampling, RepConv/RepC3, fusion graph."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .cfsb import CfsbParams, cfsb_forward, make_cfsb
from .params import ConvParams, ParamStore
from .tensor import ShapeError, Tensor, add, concat, mul, reshape, silu, transpose, upsample_nearest

LEVEL_STRIDES = {"P2": 4, "P3": 8, "P4": 16, "P5": 32}
LEVELS = tuple(LEVEL_STRIDES)


@dataclass
class FeaturePyramid:
    """Ordered map of pyramid level name to ``[C,H,W]`` tensor."""

    levels: dict = field(default_factory=dict)

    def __post_init__(self):
        names = list(self.levels)
        if any(n not in LEVEL_STRIDES for n in names):
            raise ValueError(f"unknown pyramid levels {names}")
        ordered = sorted(names, key=LEVELS.index)
        self.levels = {n: self.levels[n] for n in ordered}
        for lo, hi in zip(ordered, ordered[1:]):
            a, b = self.levels[lo].shape, self.levels[hi].shape
            ratio = LEVEL_STRIDES[hi] // LEVEL_STRIDES[lo]
            if a[1] != b[1] * ratio or a[2] != b[2] * ratio:
                raise ShapeError(f"{lo} {a[1:]} and {hi} {b[1:]} are not {ratio}x apart")

    def __getitem__(self, name: str) -> Tensor:
        return self.levels[name]

    def __contains__(self, name: str) -> bool:
        return name in self.levels

    def __iter__(self):
        return iter(self.levels)

    def names(self) -> list[str]:
        return list(self.levels)

    def stride(self, name: str) -> int:
        return LEVEL_STRIDES[name]


# ------------------------------------------------------------- resampling


def space_to_depth(x: Tensor, s: int = 2) -> Tensor:
    """Move each ``s x s`` sub-pixel phase into its own channel block.

    Phase ``(dy, dx)`` lands in block ``dy * s + dx``; output channel
    ``(dy * s + dx) * C + c``.
    """
    c, h, w = x.shape
    if h % s or w % s:
        raise ShapeError(f"space_to_depth: {h}x{w} not divisible by {s}")
    y = reshape(x, (c, h // s, s, w // s, s))
    y = transpose(y, (2, 4, 0, 1, 3))
    return reshape(y, (s * s * c, h // s, w // s))


def depth_to_space(x: Tensor, s: int = 2) -> Tensor:
    cs, h, w = x.shape
    if cs % (s * s):
        raise ShapeError(f"depth_to_space: {cs} channels not divisible by {s * s}")
    c = cs // (s * s)
    y = reshape(x, (s, s, c, h, w))
    y = transpose(y, (2, 3, 0, 4, 1))
    return reshape(y, (c, h * s, w * s))


def spdconv(x: Tensor, p: ConvParams, act: bool = False) -> Tensor:
    if p.stride != 1:
        raise ShapeError("SPDConv convolution must be stride 1")
    return p(space_to_depth(x, 2), act=act)


def sni_alpha(src_hw: tuple, dst_hw: tuple, variant: str = "linear") -> float:
    """Resolution ratio of source to target: per-axis (``linear``) or ``area``."""
    if variant == "linear":
        return src_hw[0] / dst_hw[0]
    if variant == "area":
        return (src_hw[0] * src_hw[1]) / (dst_hw[0] * dst_hw[1])
    if variant == "none":
        return 1.0
    raise ValueError(f"unknown SNI variant {variant!r}")


def sni_upsample(x: Tensor, target: tuple, variant: str = "linear") -> Tensor:
    """Nearest-neighbour upsampling scaled by the source/target resolution ratio."""
    _, h, w = x.shape
    th, tw = target
    if th % h or tw % w or th // h != tw // w:
        raise ShapeError(f"SNI needs one integer factor for both axes: {h}x{w} -> {th}x{tw}")
    k = th // h
    if k == 1:
        return x
    return mul(upsample_nearest(x, k), sni_alpha((h, w), (th, tw), variant))


# ---------------------------------------------------------------- RepConv


@dataclass
class RepConvParams:
    branch3x3: ConvParams
    branch1x1: ConvParams
    identity_branch: bool = False
    deployed: Optional[ConvParams] = None

    def __post_init__(self):
        b3, b1 = self.branch3x3, self.branch1x1
        if b3.kernel_size != 3 or b1.kernel_size != 1 or b3.padding != 1 or b1.padding != 0:
            raise ShapeError("RepConv needs a padded 3x3 branch and an unpadded 1x1 branch")
        if b3.weight.shape[:2] != b1.weight.shape[:2] or b3.stride != b1.stride:
            raise ShapeError(f"RepConv branch mismatch: {b3.weight.shape} vs {b1.weight.shape}")
        if self.identity_branch and (b3.in_channels != b3.out_channels or b3.stride != 1):
            raise ShapeError("identity branch requires C_in == C_out and stride 1")

    def tensors(self) -> list[Tensor]:
        return self.branch3x3.tensors() + self.branch1x1.tensors()


def make_repconv(store: ParamStore, c_in: int, c_out: int, identity: bool = False, stride: int = 1) -> RepConvParams:
    return RepConvParams(
        branch3x3=store.conv("conv3x3", c_in, c_out, 3, stride=stride),
        branch1x1=store.conv("conv1x1", c_in, c_out, 1, stride=stride),
        identity_branch=identity,
    )


def _bias_or_zero(p: ConvParams) -> np.ndarray:
    return p.bias.data if p.bias is not None else np.zeros(p.out_channels)


def reparameterize(p: RepConvParams) -> ConvParams:
    """Fold all branches into one 3x3 convolution (training weights untouched)."""
    kernel = p.branch3x3.weight.data.copy()
    kernel[:, :, 1, 1] += p.branch1x1.weight.data[:, :, 0, 0]
    if p.identity_branch:
        kernel[:, :, 1, 1] += np.eye(kernel.shape[0])
    bias = _bias_or_zero(p.branch3x3) + _bias_or_zero(p.branch1x1)
    return ConvParams(Tensor(kernel), Tensor(bias), p.branch3x3.stride, 1)


def deploy(p: RepConvParams) -> RepConvParams:
    p.deployed = reparameterize(p)
    return p


def repconv_forward(x: Tensor, p: RepConvParams, act: bool = False, mode: str = "auto") -> Tensor:
    """``mode``: ``train`` (branches), ``deploy`` (merged kernel) or ``auto``."""
    if mode == "deploy" or (mode == "auto" and p.deployed is not None):
        if p.deployed is None:
            raise ValueError("RepConv has not been re-parameterized")
        y = p.deployed(x)
    elif mode in ("train", "auto"):
        y = add(p.branch3x3(x), p.branch1x1(x))
        if p.identity_branch:
            y = add(y, x)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return silu(y) if act else y


@dataclass
class RepC3Params:
    entry1: ConvParams  # 1x1, C_in -> hidden, feeds the RepConv chain
    entry2: ConvParams  # 1x1, C_in -> hidden
    units: list
    exit: Optional[ConvParams] = None  # None when hidden == C_out

    def tensors(self) -> list[Tensor]:
        out = self.entry1.tensors() + self.entry2.tensors()
        for u in self.units:
            out.extend(u.tensors())
        if self.exit is not None:
            out.extend(self.exit.tensors())
        return out


def make_repc3(
    store: ParamStore, c_in: int, c_out: int, n: int = 3, hidden: Optional[int] = None, identity: bool = True
) -> RepC3Params:
    hid = c_out if hidden is None else hidden
    return RepC3Params(
        entry1=store.conv("cv1", c_in, hid, 1),
        entry2=store.conv("cv2", c_in, hid, 1),
        units=[make_repconv(store.scope(f"m{i}"), hid, hid, identity=identity) for i in range(n)],
        exit=None if hid == c_out else store.conv("cv3", hid, c_out, 1),
    )


def deploy_repc3(p: RepC3Params) -> RepC3Params:
    for u in p.units:
        deploy(u)
    return p


def repc3_forward(x: Tensor, p: RepC3Params, act: bool = False, mode: str = "auto") -> Tensor:
    y = p.entry1(x, act=act)
    for u in p.units:
        y = repconv_forward(y, u, act=act, mode=mode)
    y = add(y, p.entry2(x, act=act))
    return y if p.exit is None else p.exit(y, act=act)


# ------------------------------------------------------------------ FSFPN

FuseBlock = Union[CfsbParams, ConvParams]


@dataclass
class FsfpnParams:
    hidden: int
    levels: tuple
    lateral: dict  # level -> 1x1 conv, C_level -> hidden
    td_fuse: dict  # level -> CFSB or plain 1x1 conv (ablation)
    td_repc3: dict
    bu_down: dict  # level -> SPDConv 3x3, 4*hidden -> hidden (keyed by the source level)
    bu_fuse: dict  # level -> CFSB / 1x1 conv / None
    bu_repc3: dict

    def tensors(self) -> list[Tensor]:
        out = []
        for group in (self.lateral, self.td_fuse, self.td_repc3, self.bu_down, self.bu_fuse, self.bu_repc3):
            for v in group.values():
                if v is not None:
                    out.extend(v.tensors())
        return out


def make_fsfpn(
    store: ParamStore,
    in_channels: dict,
    hidden: int,
    use_cfsb: bool = True,
    bu_cfsb: bool = False,
    repc3_depth: int = 3,
) -> FsfpnParams:
    """Parameters for the fusion graph over the given levels (contiguous run)."""
    levels = tuple(sorted(in_channels, key=LEVELS.index))
    idx = [LEVELS.index(n) for n in levels]
    if idx != list(range(idx[0], idx[0] + len(idx))):
        raise ValueError(f"pyramid levels must be contiguous, got {levels}")
    top = levels[-1]

    def fuse_block(scope: ParamStore, width: int, on: bool):
        if on:
            return make_cfsb(scope, width)
        return scope.conv("plain", width, width, 1)

    lateral, td_fuse, td_repc3 = {}, {}, {}
    for lvl in reversed(levels):
        s = store.scope(f"td.{lvl}")
        lateral[lvl] = s.conv("lateral", in_channels[lvl], hidden, 1)
        width = hidden if lvl == top else 2 * hidden
        td_fuse[lvl] = fuse_block(s.scope("cfsb"), width, use_cfsb)
        td_repc3[lvl] = make_repc3(s.scope("repc3"), width, hidden, n=repc3_depth, hidden=hidden)

    bu_down, bu_fuse, bu_repc3 = {}, {}, {}
    for lo, hi in zip(levels, levels[1:]):
        s = store.scope(f"bu.{hi}")
        bu_down[lo] = s.conv("spd", 4 * hidden, hidden, 3)
        bu_fuse[hi] = make_cfsb(s.scope("cfsb"), 2 * hidden) if (bu_cfsb and use_cfsb) else None
        bu_repc3[hi] = make_repc3(s.scope("repc3"), 2 * hidden, hidden, n=repc3_depth, hidden=hidden)
    return FsfpnParams(hidden, levels, lateral, td_fuse, td_repc3, bu_down, bu_fuse, bu_repc3)


def _fuse(x: Tensor, block: Optional[FuseBlock], act: bool, cfsb_act: bool) -> Tensor:
    if block is None:
        return x
    if isinstance(block, CfsbParams):
        return cfsb_forward(x, block, act=cfsb_act)
    return block(x, act=act)


def fsfpn_forward(
    levels: FeaturePyramid,
    p: FsfpnParams,
    sni_variant: str = "linear",
    act: bool = False,
    cfsb_act: bool = False,
) -> FeaturePyramid:
    """Top-down CFSB+RepC3 pass, then bottom-up SPDConv+RepC3 pass.

    P2, when present, only feeds the bottom-up pass; every other level is
    returned at the configured hidden width.
    """
    names = levels.names()
    if tuple(names) != p.levels:
        raise ShapeError(f"pyramid levels {names} do not match parameters built for {p.levels}")

    top_down = {}
    upper = None
    for lvl in reversed(names):
        lat = p.lateral[lvl](levels[lvl], act=act)
        if upper is None:
            x = lat
        else:
            x = concat([lat, sni_upsample(upper, lat.shape[1:], sni_variant)], axis=0)
        x = _fuse(x, p.td_fuse[lvl], act, cfsb_act)
        upper = top_down[lvl] = repc3_forward(x, p.td_repc3[lvl], act=act)

    out = {}
    lower = top_down[names[0]]
    if names[0] != "P2":
        out[names[0]] = lower
    for lo, hi in zip(names, names[1:]):
        down = spdconv(lower, p.bu_down[lo], act=act)
        x = concat([top_down[hi], down], axis=0)
        x = _fuse(x, p.bu_fuse[hi], act, cfsb_act)
        lower = out[hi] = repc3_forward(x, p.bu_repc3[hi], act=act)
    return FeaturePyramid(out)
