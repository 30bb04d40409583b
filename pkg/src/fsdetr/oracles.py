"""Slow reference implementations in plain numpy.

Nothing here touches the tape or the fast paths: convolutions are explicit
loops, transforms are explicit double sums, attention materializes every
weight.  Golden fixtures and the acceptance checks compare against these.
"""

from __future__ import annotations

import numpy as np

SCHARR_X = np.array([[-3.0, 0.0, 3.0], [-10.0, 0.0, 10.0], [-3.0, 0.0, 3.0]])


def conv2d(x, w, b=None, stride=1, padding=0):
    x = np.asarray(x, dtype=np.float64)
    c, h, wd = x.shape
    co, ci, kh, kw = w.shape
    assert ci == c
    xp = np.zeros((c, h + 2 * padding, wd + 2 * padding))
    xp[:, padding : padding + h, padding : padding + wd] = x
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((co, ho, wo))
    for o in range(co):
        for i in range(ho):
            for j in range(wo):
                acc = 0.0
                for ch in range(c):
                    for di in range(kh):
                        for dj in range(kw):
                            acc += xp[ch, i * stride + di, j * stride + dj] * w[o, ch, di, dj]
                out[o, i, j] = acc + (0.0 if b is None else b[o])
    return out


def conv1x1(x, w, b=None):
    x = np.asarray(x, dtype=np.float64)
    out = np.einsum("oc,chw->ohw", w[:, :, 0, 0], x)
    return out if b is None else out + np.asarray(b)[:, None, None]


def dft2(x):
    """Complex spectrum by the explicit double sum, one bin at a time."""
    x = np.asarray(x, dtype=np.float64)
    c, h, w = x.shape
    hh, ww = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    out = np.zeros((c, h, w), dtype=np.complex128)
    for u in range(h):
        for v in range(w):
            phase = np.exp(-2j * np.pi * (u * hh / h + v * ww / w))
            out[:, u, v] = (x * phase).sum(axis=(1, 2))
    return out


def idft2(z):
    """Real part of the normalized inverse double sum."""
    z = np.asarray(z, dtype=np.complex128)
    c, h, w = z.shape
    uu, vv = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    out = np.zeros((c, h, w))
    for y in range(h):
        for x in range(w):
            phase = np.exp(2j * np.pi * (uu * y / h + vv * x / w))
            out[:, y, x] = (z * phase).sum(axis=(1, 2)).real / (h * w)
    return out


def freq_filter(z, mask_w, mask_b):
    c = z.shape[0]
    stacked = np.concatenate([z.real, z.imag], axis=0)
    mixed = np.zeros_like(stacked)
    for u in range(z.shape[1]):
        for v in range(z.shape[2]):
            mixed[:, u, v] = mask_w[:, :, 0, 0] @ stacked[:, u, v] + mask_b
    return mixed[:c] + 1j * mixed[c:]


def scharr(x):
    x = np.asarray(x, dtype=np.float64)
    gy = SCHARR_X.T
    c, h, w = x.shape
    xp = np.zeros((c, h + 2, w + 2))
    xp[:, 1:-1, 1:-1] = x
    out = np.zeros_like(x)
    for i in range(h):
        for j in range(w):
            patch = xp[:, i : i + 3, j : j + 3]
            out[:, i, j] = (patch * SCHARR_X).sum(axis=(1, 2)) + (patch * gy).sum(axis=(1, 2))
    return out


def spatial_branch(x, conv1, conv2):
    """``conv2(conv1(scharr(x)) + x)``; convs given as ``(weight, bias)``."""
    edges = conv2d(scharr(x), *conv1, padding=1)
    return conv2d(edges + x, *conv2, padding=1)


def freq_branch(x, mask_w, mask_b, outer):
    return conv1x1(idft2(freq_filter(dft2(x), mask_w, mask_b)), *outer)


def cfsb(x, conv1, conv2, mask_w, mask_b, outer, fuse):
    return conv1x1(spatial_branch(x, conv1, conv2) + freq_branch(x, mask_w, mask_b, outer), *fuse)


def softmax(v, axis=-1):
    v = np.asarray(v, dtype=np.float64)
    e = np.exp(v - v.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def bilinear(feature, px, py):
    """Four-corner weighted sum at one point with zero padding."""
    c, h, w = feature.shape
    x0, y0 = int(np.floor(px)), int(np.floor(py))
    out = np.zeros(c)
    for yy, wy in ((y0, 1 - (py - y0)), (y0 + 1, py - y0)):
        for xx, wx in ((x0, 1 - (px - x0)), (x0 + 1, px - x0)):
            if 0 <= xx < w and 0 <= yy < h:
                out += wx * wy * feature[:, yy, xx]
    return out


def shsa(x, qkv_w, proj_w, d_attn):
    c, h, w = x.shape
    half = c // 2
    n = h * w
    tokens = x[:half].reshape(half, n)
    qkv = qkv_w[:, :, 0, 0] @ tokens
    q, k, v = qkv[:d_attn], qkv[d_attn : 2 * d_attn], qkv[2 * d_attn :]
    weights = np.zeros((n, n))
    for i in range(n):
        s = np.array([q[:, i] @ k[:, j] for j in range(n)]) / np.sqrt(d_attn)
        weights[i] = softmax(s)
    mixed = np.zeros((half, n))
    for i in range(n):
        for j in range(n):
            mixed[:, i] += weights[i, j] * v[:, j]
    y = np.concatenate([mixed.reshape(half, h, w), x[half:]], axis=0)
    return conv1x1(y, proj_w)


def deformable_attention(queries, refs, value_map, value_w, value_b, off_w, off_b, att_w, att_b, out_w, out_b, m, k):
    """Fully unrolled per-query, per-head, per-point evaluation."""
    n, d = queries.shape
    c, h, w = value_map.shape
    ch = c // m
    value = conv1x1(value_map, value_w, value_b)
    out = np.zeros((n, c))
    for q in range(n):
        offs = (off_w @ queries[q] + off_b).reshape(m, k, 2)
        logits = (att_w @ queries[q] + att_b).reshape(m, k)
        for head in range(m):
            a = softmax(logits[head])
            acc = np.zeros(ch)
            for p in range(k):
                lx = (refs[q, 0] + offs[head, p, 0]) * w - 0.5
                ly = (refs[q, 1] + offs[head, p, 1]) * h - 0.5
                acc += a[p] * bilinear(value[head * ch : (head + 1) * ch], lx, ly)
            out[q, head * ch : (head + 1) * ch] = acc
    return out @ out_w.T + out_b


def space_to_depth(x, s=2):
    c, h, w = x.shape
    blocks = [x[:, dy::s, dx::s] for dy in range(s) for dx in range(s)]
    return np.concatenate(blocks, axis=0)


def repconv_train(x, w3, b3, w1, b1, identity):
    y = conv2d(x, w3, b3, padding=1) + conv2d(x, w1, b1, padding=0)
    return y + x if identity else y


def box_iou(a, b):
    ax1, ay1, ax2, ay2 = a[0] - a[2] / 2, a[1] - a[3] / 2, a[0] + a[2] / 2, a[1] + a[3] / 2
    bx1, by1, bx2, by2 = b[0] - b[2] / 2, b[1] - b[3] / 2, b[0] + b[2] / 2, b[1] + b[3] / 2
    iw = max(0.0, min(ax2, bx2) - max(ax1, bx1))
    ih = max(0.0, min(ay2, by2) - max(ay1, by1))
    inter = iw * ih
    union = a[2] * a[3] + b[2] * b[3] - inter
    return inter / union if union > 0 else 0.0
