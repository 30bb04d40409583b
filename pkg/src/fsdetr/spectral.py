"""2-D DFT pair and the learnable frequency-domain filter path.

The forward transform is unnormalized; the inverse carries ``1/(H*W)``.
Extents that are powers of two go through an iterative radix-2 FFT, all
others through dense DFT matrices.  Both paths are exposed via ``method``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .params import ConvParams
from .tensor import ShapeError, Tensor, concat, getitem, mul, record, silu, split, stack

__all__ = [
    "Spectrum",
    "FreqFilterParams",
    "dft2",
    "idft2",
    "freq_filter",
    "mask_bins",
    "cfsb_freq_branch",
    "fft2_complex",
]


@dataclass
class Spectrum:
    real: Tensor
    imag: Tensor
    source_extents: tuple

    def __post_init__(self):
        if self.real.shape != self.imag.shape:
            raise ShapeError(f"spectrum parts differ: {self.real.shape} vs {self.imag.shape}")
        if tuple(self.real.shape[-2:]) != tuple(self.source_extents):
            raise ShapeError(f"spectrum {self.real.shape} inconsistent with extents {self.source_extents}")

    @property
    def shape(self) -> tuple:
        return self.real.shape

    def complex(self) -> np.ndarray:
        return self.real.data + 1j * self.imag.data


@dataclass
class FreqFilterParams:
    mask_weight: Tensor  # [2C, 2C, 1, 1]
    mask_bias: Tensor  # [2C]

    def __post_init__(self):
        w = self.mask_weight
        if w.ndim != 4 or w.shape[2:] != (1, 1) or w.shape[0] != w.shape[1]:
            raise ShapeError(f"filter mask must be a square 1x1 kernel, got {w.shape}")
        if self.mask_bias.shape != (w.shape[0],):
            raise ShapeError(f"filter bias {self.mask_bias.shape} vs weight {w.shape}")

    @property
    def channels(self) -> int:
        return self.mask_weight.shape[0] // 2

    def tensors(self) -> list[Tensor]:
        return [self.mask_weight, self.mask_bias]


def _is_pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


@lru_cache(maxsize=None)
def _bitrev(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def _angles(num: np.ndarray, den: int, real_dtype) -> np.ndarray:
    # exact integer phase index, reduced mod den before scaling by 2*pi
    pi = 4 * np.arctan(real_dtype(1))
    return (num % den).astype(real_dtype) * (2 * pi / den)


@lru_cache(maxsize=None)
def _twiddles(m: int, sign: int, real_dtype=np.float64) -> np.ndarray:
    return np.exp(sign * 1j * _angles(np.arange(m), 2 * m, real_dtype))


@lru_cache(maxsize=None)
def _dft_matrix(n: int, sign: int, real_dtype=np.float64) -> np.ndarray:
    k = np.arange(n)
    return np.exp(sign * 1j * _angles(np.outer(k, k), n, real_dtype))


def _fft_last(z: np.ndarray, sign: int) -> np.ndarray:
    n = z.shape[-1]
    lead = z.shape[:-1]
    a = z[..., _bitrev(n)]
    m = 1
    while m < n:
        a = a.reshape(lead + (n // (2 * m), 2, m))
        even = a[..., 0, :]
        odd = a[..., 1, :] * _twiddles(m, sign, a.real.dtype.type)
        a = np.concatenate([even + odd, even - odd], axis=-1)
        m *= 2
    return a.reshape(lead + (n,))


def _transform_axis(z: np.ndarray, axis: int, sign: int, method: str) -> np.ndarray:
    n = z.shape[axis]
    if method == "fft" and not _is_pow2(n):
        raise ValueError(f"radix-2 FFT needs power-of-two extents, got {n}")
    use_fft = method == "fft" or (method == "auto" and _is_pow2(n))
    moved = np.moveaxis(z, axis, -1)
    out = _fft_last(moved, sign) if use_fft else moved @ _dft_matrix(n, sign, moved.real.dtype.type)
    return np.moveaxis(out, -1, axis)


def fft2_complex(z: np.ndarray, inverse: bool = False, method: str = "auto") -> np.ndarray:
    """Unnormalized 2-D transform over the last two axes.

    ``inverse=True`` flips the exponent sign but does not divide by ``H*W``.
    """
    if method not in ("auto", "fft", "direct"):
        raise ValueError(f"unknown method {method!r}")
    sign = 1 if inverse else -1
    z = np.asarray(z)
    z = z.astype(np.result_type(z.dtype, np.complex128), copy=False)
    return _transform_axis(_transform_axis(z, -1, sign, method), -2, sign, method)


def dft2(x: Tensor, method: str = "auto") -> Spectrum:
    """Forward 2-D DFT of a real ``[C,H,W]`` tensor."""
    if x.ndim != 3:
        raise ShapeError(f"dft2 expects [C,H,W], got {x.shape}")
    z = fft2_complex(x.data, method=method)

    def vjp(g):
        return (fft2_complex(g[0] + 1j * g[1], inverse=True, method=method).real,)

    both = record("dft2", np.stack([z.real, z.imag]), (x,), vjp)
    return Spectrum(getitem(both, 0), getitem(both, 1), tuple(x.shape[1:]))


def idft2(s: Spectrum, method: str = "auto") -> Tensor:
    """Inverse 2-D DFT; the imaginary residue is discarded."""
    h, w = s.source_extents
    scale = 1.0 / (h * w)
    both = stack([s.real, s.imag])
    z = fft2_complex(both.data[0] + 1j * both.data[1], inverse=True, method=method) * scale

    def vjp(g):
        f = fft2_complex(g, method=method) * scale
        return (np.stack([f.real, f.imag]),)

    return record("idft2", z.real, (both,), vjp)


def freq_filter(s: Spectrum, p: FreqFilterParams) -> Spectrum:
    """Per-bin channel mixing of the stacked ``[real; imag]`` spectrum."""
    c = s.real.shape[0]
    if p.channels != c:
        raise ShapeError(f"filter built for {p.channels} channels, spectrum has {c}")
    stacked = concat([s.real, s.imag], axis=0)
    mixed = ConvParams(p.mask_weight, p.mask_bias)(stacked)
    re, im = split(mixed, [c, c], axis=0)
    return Spectrum(re, im, s.source_extents)


def mask_bins(s: Spectrum, mask) -> Spectrum:
    """Multiply every channel's spectrum by a fixed ``[H,W]`` bin mask."""
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != tuple(s.source_extents):
        raise ShapeError(f"bin mask {mask.shape} vs extents {s.source_extents}")
    return Spectrum(mul(s.real, mask), mul(s.imag, mask), s.source_extents)


def cfsb_freq_branch(
    x: Tensor, filt: FreqFilterParams, outer: ConvParams, act: bool = False, method: str = "auto"
) -> Tensor:
    """Transform, filter, invert, then a 1x1 convolution back in the spatial domain."""
    spatial = idft2(freq_filter(dft2(x, method), filt), method)
    out = outer(spatial)
    return silu(out) if act else out
