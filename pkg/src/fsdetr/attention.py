"""Split single-head attention, the SHAB block, and deformable attention.

Token layout everywhere is row-major over the spatial grid: token ``n``
sits at row ``n // W``, column ``n % W``.  Normalized coordinates put pixel
centers at ``((j + 0.5) / W, (i + 0.5) / H)``, so converting to pixel units
is ``u * W - 0.5``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .params import ConvParams, LinearParams, ParamStore
from .tensor import (
    ShapeError,
    Tensor,
    add,
    broadcast_to,
    concat,
    grouped_bilinear_sample,
    layer_norm,
    matmul,
    mul,
    reshape,
    silu,
    softmax,
    split,
    transpose,
)

SPLIT_RATIO = 0.5


# ------------------------------------------------------------------- SHSA


@dataclass
class ShsaParams:
    qkv_proj: ConvParams  # 1x1, C/2 -> 2*d_attn + C/2
    out_proj: ConvParams  # 1x1, C -> C
    d_attn: int

    def tensors(self) -> list[Tensor]:
        return self.qkv_proj.tensors() + self.out_proj.tensors()


def make_shsa(store: ParamStore, channels: int, d_attn: Optional[int] = None) -> ShsaParams:
    if channels % 2:
        raise ShapeError(f"SHSA needs an even channel count, got {channels}")
    half = channels // 2
    d = half if d_attn is None else d_attn
    return ShsaParams(
        qkv_proj=store.conv("qkv", half, 2 * d + half, 1, bias=False),
        out_proj=store.conv("proj", channels, channels, 1, bias=False),
        d_attn=d,
    )


def shsa_forward(x: Tensor, p: ShsaParams) -> Tensor:
    """Attention over the first half of the channels, identity on the rest."""
    c, h, w = x.shape
    if c % 2:
        raise ShapeError(f"SHSA needs an even channel count, got {c}")
    half = int(c * SPLIT_RATIO)
    attended, passthrough = split(x, [half, c - half], axis=0)
    qkv = reshape(p.qkv_proj(attended), (2 * p.d_attn + half, h * w))
    q, k, v = split(qkv, [p.d_attn, p.d_attn, half], axis=0)
    scores = mul(matmul(transpose(q), k), 1.0 / np.sqrt(p.d_attn))  # [N_query, N_key]
    weights = softmax(scores, axis=-1)
    mixed = matmul(v, transpose(weights))  # [half, N_query]
    y = concat([reshape(mixed, (half, h, w)), passthrough], axis=0)
    return p.out_proj(y)


# -------------------------------------------------------------------- C2f


@dataclass
class BottleneckParams:
    conv1: ConvParams
    conv2: ConvParams

    def tensors(self) -> list[Tensor]:
        return self.conv1.tensors() + self.conv2.tensors()


@dataclass
class C2fParams:
    entry_conv: ConvParams  # 1x1, C_in -> 2*hidden
    exit_conv: ConvParams  # 1x1, (2+n)*hidden -> C_out
    bottlenecks: list = field(default_factory=list)
    kind: str = "bottleneck"

    @property
    def n(self) -> int:
        return len(self.bottlenecks)

    @property
    def hidden(self) -> int:
        return self.entry_conv.out_channels // 2

    def tensors(self) -> list[Tensor]:
        out = self.entry_conv.tensors() + self.exit_conv.tensors()
        for b in self.bottlenecks:
            out.extend(b.tensors())
        return out


def bottleneck_forward(x: Tensor, p: BottleneckParams, act: bool = False) -> Tensor:
    return add(x, p.conv2(p.conv1(x, act=act), act=act))


def make_c2f(
    store: ParamStore, c_in: int, c_out: int, n: int = 1, kind: str = "bottleneck", hidden: Optional[int] = None
) -> C2fParams:
    hid = hidden if hidden is not None else c_out // 2
    blocks = []
    for i in range(n):
        sub = store.scope(f"m{i}")
        if kind == "shsa":
            blocks.append(make_shsa(sub, hid))
        elif kind == "bottleneck":
            blocks.append(BottleneckParams(sub.conv("cv1", hid, hid, 3), sub.conv("cv2", hid, hid, 3)))
        else:
            raise ValueError(f"unknown C2f block kind {kind!r}")
    return C2fParams(
        entry_conv=store.conv("cv1", c_in, 2 * hid, 1),
        exit_conv=store.conv("cv2", (2 + n) * hid, c_out, 1),
        bottlenecks=blocks,
        kind=kind,
    )


def c2f_forward(x: Tensor, p: C2fParams, block_kind: Optional[str] = None, act: bool = False) -> Tensor:
    """Entry conv, split, chained blocks on the second half, concat all, exit conv."""
    kind = block_kind or p.kind
    hid = p.hidden
    if p.exit_conv.in_channels != (2 + p.n) * hid:
        raise ShapeError(
            f"C2f exit conv takes {p.exit_conv.in_channels} channels, concat yields {(2 + p.n) * hid}"
        )
    if x.shape[0] != p.entry_conv.in_channels:
        raise ShapeError(f"C2f entry conv takes {p.entry_conv.in_channels} channels, got {x.shape[0]}")
    parts = split(p.entry_conv(x, act=act), [hid, hid], axis=0)
    y = parts[-1]
    for block in p.bottlenecks:
        y = shsa_forward(y, block) if kind == "shsa" else bottleneck_forward(y, block, act)
        parts.append(y)
    return p.exit_conv(concat(parts, axis=0), act=act)


def shab_forward(x: Tensor, p: C2fParams, act: bool = False) -> Tensor:
    if p.n != 1:
        raise ShapeError(f"SHAB uses exactly one SHSA block, got {p.n}")
    return c2f_forward(x, p, block_kind="shsa", act=act)


def make_shab(store: ParamStore, channels: int) -> C2fParams:
    return make_c2f(store, channels, channels, n=1, kind="shsa")


# --------------------------------------------------------- deformable attn


@dataclass
class DeformAttnParams:
    value_proj: ConvParams  # 1x1, C -> C
    offset_head: LinearParams  # d -> M*K*2
    weight_head: LinearParams  # d -> M*K
    output_proj: LinearParams  # C -> d
    heads: int
    points: int

    def tensors(self) -> list[Tensor]:
        out = []
        for part in (self.value_proj, self.offset_head, self.weight_head, self.output_proj):
            out.extend(part.tensors())
        return out


def make_deform_attn(store: ParamStore, d: int, heads: int = 8, points: int = 4) -> DeformAttnParams:
    # zero offset/weight heads: uniform attention on the reference point at init
    return DeformAttnParams(
        value_proj=store.conv("value_proj", d, d, 1),
        offset_head=store.linear("sampling_offsets", d, heads * points * 2, init="zeros", bias_init="zeros"),
        weight_head=store.linear("attention_weights", d, heads * points, init="zeros", bias_init="zeros"),
        output_proj=store.linear("output_proj", d, d),
        heads=heads,
        points=points,
    )


@dataclass
class SampleCounter:
    """Counts bilinear reads issued by one deformable-attention call."""

    count: int = 0


def deformable_attention(
    queries: Tensor,
    reference_points: Tensor,
    value_map: Tensor,
    p: DeformAttnParams,
    counter: Optional[SampleCounter] = None,
) -> Tensor:
    """Each query reads ``K`` bilinear samples per head around its reference point.

    ``reference_points`` are normalized ``(x, y)`` in ``[0, 1]``; offsets from
    the offset head are in the same units and are scaled by ``(W, H)``.
    """
    n, d = queries.shape
    c, h, w = value_map.shape
    m, k = p.heads, p.points
    if d % m:
        raise ShapeError(f"query width {d} not divisible by {m} heads")
    if c % m:
        raise ShapeError(f"value channels {c} not divisible by {m} heads")
    if reference_points.shape != (n, 2):
        raise ShapeError(f"reference points {reference_points.shape} vs {n} queries")

    value = reshape(p.value_proj(value_map), (m, c // m, h, w))
    offsets = reshape(p.offset_head(queries), (n, m, k, 2))
    weights = softmax(reshape(p.weight_head(queries), (n, m, k)), axis=-1)

    ref = broadcast_to(reshape(reference_points, (n, 1, 1, 2)), (n, m, k, 2))
    loc = add(ref, offsets)
    pix = add(mul(loc, np.array([w, h], dtype=np.float64)), -0.5)
    pts = reshape(transpose(pix, (1, 0, 2, 3)), (m, n * k, 2))
    if counter is not None:
        counter.count += pts.shape[0] * pts.shape[1]
    sampled = reshape(grouped_bilinear_sample(value, pts), (m * n, k, c // m))
    attn = reshape(transpose(weights, (1, 0, 2)), (m * n, 1, k))
    heads_out = reshape(matmul(attn, sampled), (m, n, c // m))
    merged = reshape(transpose(heads_out, (1, 0, 2)), (n, c))
    return p.output_proj(merged)


# ----------------------------------------------------------------- DA-AIFI


@dataclass
class DaAifiParams:
    attn: DeformAttnParams
    norm1_gamma: Tensor
    norm1_beta: Tensor
    ffn1: LinearParams  # d -> 4d
    ffn2: LinearParams  # 4d -> d
    norm2_gamma: Tensor
    norm2_beta: Tensor

    def tensors(self) -> list[Tensor]:
        return (
            self.attn.tensors()
            + [self.norm1_gamma, self.norm1_beta]
            + self.ffn1.tensors()
            + self.ffn2.tensors()
            + [self.norm2_gamma, self.norm2_beta]
        )


def make_da_aifi(store: ParamStore, d: int, heads: int = 8, points: int = 4, ffn_mult: int = 4) -> DaAifiParams:
    return DaAifiParams(
        attn=make_deform_attn(store.scope("attn"), d, heads, points),
        norm1_gamma=store.add("norm1.weight", (d,), "ones"),
        norm1_beta=store.add("norm1.bias", (d,), "zeros"),
        ffn1=store.linear("ffn1", d, ffn_mult * d),
        ffn2=store.linear("ffn2", ffn_mult * d, d),
        norm2_gamma=store.add("norm2.weight", (d,), "ones"),
        norm2_beta=store.add("norm2.bias", (d,), "zeros"),
    )


def sincos_position_encoding(h: int, w: int, dim: int, temperature: float = 10000.0) -> np.ndarray:
    """Fixed 2-D sine-cosine encoding, ``[H*W, dim]`` in token order."""
    if dim % 4:
        raise ShapeError(f"2-D sincos encoding needs dim divisible by 4, got {dim}")
    quarter = dim // 4
    omega = 1.0 / temperature ** (np.arange(quarter) / quarter)
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    ox = xs.reshape(-1, 1) * omega
    oy = ys.reshape(-1, 1) * omega
    return np.concatenate([np.sin(ox), np.cos(ox), np.sin(oy), np.cos(oy)], axis=1)


def grid_reference_points(h: int, w: int) -> np.ndarray:
    ys, xs = np.meshgrid((np.arange(h) + 0.5) / h, (np.arange(w) + 0.5) / w, indexing="ij")
    return np.stack([xs.reshape(-1), ys.reshape(-1)], axis=1)


def da_aifi(
    p5: Tensor, p: DaAifiParams, counter: Optional[SampleCounter] = None, eps: float = 1e-5
) -> Tensor:
    """One post-norm encoder layer with deformable self-attention on ``[C,H,W]``."""
    c, h, w = p5.shape
    tokens = transpose(reshape(p5, (c, h * w)))  # [N, C]
    queries = add(tokens, sincos_position_encoding(h, w, c))
    ref = Tensor(grid_reference_points(h, w))
    attn = deformable_attention(queries, ref, p5, p.attn, counter)
    x = layer_norm(add(tokens, attn), p.norm1_gamma, p.norm1_beta, eps)
    ffn = p.ffn2(silu(p.ffn1(x)))
    x = layer_norm(add(x, ffn), p.norm2_gamma, p.norm2_beta, eps)
    return reshape(transpose(x), (c, h, w))
