"""Cross-domain frequency-spatial block: Scharr edge branch + spectral branch."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .params import ConvParams, ParamStore
from .spectral import FreqFilterParams, cfsb_freq_branch
from .tensor import Tensor, add, conv2d, silu

SCHARR_X = np.array([[-3.0, 0.0, 3.0], [-10.0, 0.0, 10.0], [-3.0, 0.0, 3.0]])
SCHARR_Y = SCHARR_X.T.copy()


@dataclass
class CfsbParams:
    spatial_conv1: ConvParams  # 3x3, C->C
    spatial_conv2: ConvParams  # 3x3, C->C
    freq_filter: FreqFilterParams
    freq_conv: ConvParams  # 1x1, C->C
    fuse_conv: ConvParams  # 1x1, C->C

    @property
    def channels(self) -> int:
        return self.fuse_conv.out_channels

    def tensors(self) -> list[Tensor]:
        out = []
        for part in (self.spatial_conv1, self.spatial_conv2, self.freq_filter, self.freq_conv, self.fuse_conv):
            out.extend(part.tensors())
        return out


def make_cfsb(store: ParamStore, channels: int) -> CfsbParams:
    c = channels
    return CfsbParams(
        spatial_conv1=store.conv("spatial1", c, c, 3),
        spatial_conv2=store.conv("spatial2", c, c, 3),
        freq_filter=FreqFilterParams(
            store.add("freq_mask.weight", (2 * c, 2 * c, 1, 1), fan_in=2 * c),
            store.add("freq_mask.bias", (2 * c,), fan_in=2 * c),
        ),
        freq_conv=store.conv("freq_out", c, c, 1),
        fuse_conv=store.conv("fuse", c, c, 1),
    )


def _depthwise(x: Tensor, kernel: np.ndarray) -> Tensor:
    c = x.shape[0]
    w = Tensor(np.broadcast_to(kernel, (c, 1, 3, 3)).copy())
    return conv2d(x, w, None, stride=1, padding=1, groups=c)


def scharr_grad(x: Tensor) -> Tensor:
    """Per-channel horizontal plus vertical Scharr response (zero padded)."""
    return add(_depthwise(x, SCHARR_X), _depthwise(x, SCHARR_Y))


def cfsb_spatial_branch(x: Tensor, p: CfsbParams, act: bool = False) -> Tensor:
    edges = p.spatial_conv1(scharr_grad(x), act=act)
    return p.spatial_conv2(add(edges, x), act=act)


def cfsb_forward(x: Tensor, p: CfsbParams, act: bool = False, method: str = "auto") -> Tensor:
    spatial = cfsb_spatial_branch(x, p, act)
    freq = cfsb_freq_branch(x, p.freq_filter, p.freq_conv, act=act, method=method)
    out = p.fuse_conv(add(spatial, freq))
    return silu(out) if act else out
