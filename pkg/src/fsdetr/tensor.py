"""Dense float64 tensors with a reverse-mode gradient tape.

Operations record onto the innermost active :class:`Tape`.  Outside a tape
every operation is a plain forward computation, which is what the
finite-difference checker relies on.

Broadcasting is deliberately narrow: tensor-with-tensor operations require
identical shapes, except that a 0-d tensor or a Python number pairs with
anything.  Constant numpy arrays may also be combined with a tensor when they
broadcast *into* the tensor's shape.  Anything else goes through
:func:`broadcast_to`.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "Tensor",
    "precision",
    "Tape",
    "backward",
    "record",
    "tensor",
    "as_tensor",
    "no_grad_value",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "exp",
    "log",
    "sqrt",
    "square",
    "power",
    "abs_",
    "sigmoid",
    "silu",
    "clamp",
    "maximum",
    "minimum",
    "where_zero",
    "sum_",
    "mean",
    "reshape",
    "transpose",
    "getitem",
    "concat",
    "stack",
    "split",
    "broadcast_to",
    "matmul",
    "linear",
    "softmax",
    "layer_norm",
    "conv2d",
    "conv_output_size",
    "upsample_nearest",
    "bilinear_sample",
    "grouped_bilinear_sample",
]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible with an operation."""


_local = threading.local()


def _tape_stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = []
        _local.stack = stack
    return stack


def compute_dtype():
    return getattr(_local, "dtype", np.float64)


@contextmanager
def precision(dtype):
    """Create tensors in ``dtype`` inside the block (thread-local).

    Only the finite-difference checker uses this, to evaluate its oracle in
    extended precision; everything else runs in float64.
    """
    prev = compute_dtype()
    _local.dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _local.dtype = prev


def active_tape() -> Optional["Tape"]:
    stack = _tape_stack()
    return stack[-1] if stack else None


@dataclass
class Node:
    op: str
    inputs: tuple
    vjp: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tape:
    """Append-only record of differentiable operations.

    Use as a context manager; operations executed inside the ``with`` block
    whose inputs require gradients append a node.  A tape belongs to the
    thread that entered it.
    """

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise RuntimeError("tape exited out of order")
        stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def append(self, node: Node) -> int:
        self.nodes.append(node)
        return len(self.nodes) - 1


class Tensor:
    """A dense row-major float64 array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "node", "tape", "name")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.asarray(data, dtype=compute_dtype())
        if arr.size == 0:
            raise ShapeError(f"zero-size tensor of shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.node: Optional[int] = None
        self.tape: Optional[Tape] = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self.node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self) -> None:
        if self.tape is None:
            raise RuntimeError("tensor is not connected to a tape")
        backward(self, self.tape)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return mul(power(self, -1.0), other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims: bool = False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def _raise_item(t: Tensor) -> float:
    raise ShapeError(f"item() needs a single element, got shape {t.shape}")


def tensor(data, requires_grad: bool = False, name: Optional[str] = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def no_grad_value(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def record(op: str, data: np.ndarray, inputs: Sequence[Tensor], vjp) -> Tensor:
    """Wrap ``data`` as the output of ``op`` and append a node if tracking.

    ``vjp`` maps the output cotangent to one array (or ``None``) per input.
    Custom differentiable operations in other modules are built on this.
    """
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.tape = tape
        out.node = tape.append(Node(op, tuple(inputs), vjp))
    return out


def backward(loss: Tensor, tape: Optional[Tape] = None) -> None:
    """Populate ``.grad`` on every ``requires_grad`` leaf used on ``tape``.

    Gradients accumulate into existing ``.grad`` slots.  Leaves that were
    recorded but do not influence ``loss`` receive zeros.
    """
    tape = tape if tape is not None else loss.tape
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if tape is None or loss.tape is not tape or loss.node is None:
        raise RuntimeError("loss is not connected to the given tape")

    for node in tape.nodes:
        for t in node.inputs:
            if t.requires_grad and (t.node is None or t.tape is not tape) and t.grad is None:
                t.grad = np.zeros_like(t.data)

    grads: dict[int, np.ndarray] = {loss.node: np.ones_like(loss.data)}
    for idx in range(loss.node, -1, -1):
        g = grads.pop(idx, None)
        if g is None:
            continue
        node = tape.nodes[idx]
        in_grads = node.vjp(g)
        for t, gi in zip(node.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            if gi.shape != t.shape:
                raise ShapeError(f"{node.op}: gradient shape {gi.shape} != input shape {t.shape}")
            if t.node is not None and t.tape is tape:
                prev = grads.get(t.node)
                grads[t.node] = gi if prev is None else prev + gi
            else:
                t.grad = t.grad + gi


# ---------------------------------------------------------------- elementwise


def _check_same(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ (no implicit broadcasting)")


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape == ():
        return np.asarray(g.sum())
    return g.reshape(shape) if g.size == int(np.prod(shape)) else g.sum().reshape(shape)


def _const(op: str, x: Tensor, c) -> np.ndarray:
    c = np.asarray(c, dtype=np.float64)
    if c.ndim and np.broadcast_shapes(c.shape, x.shape) != x.shape:
        raise ShapeError(f"{op}: constant of shape {c.shape} does not broadcast into {x.shape}")
    return c


def add(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a, b = b, a
    if not isinstance(b, Tensor):
        c = _const("add", a, b)
        return record("add_const", a.data + c, (a,), lambda g: (g,))
    _check_same("add", a, b)
    out = a.data + b.data
    return record("add", out, (a, b), lambda g: (_reduce_to(g, a.shape), _reduce_to(g, b.shape)))


def sub(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        return add(a, -np.asarray(b, dtype=np.float64))
    if not isinstance(a, Tensor):
        return add(neg(b), a)
    _check_same("sub", a, b)
    out = a.data - b.data
    return record("sub", out, (a, b), lambda g: (_reduce_to(g, a.shape), _reduce_to(-g, b.shape)))


def mul(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a, b = b, a
    if not isinstance(b, Tensor):
        c = _const("mul", a, b)
        return record("mul_const", a.data * c, (a,), lambda g: (g * c,))
    _check_same("mul", a, b)
    ad, bd = a.data, b.data
    return record(
        "mul", ad * bd, (a, b), lambda g: (_reduce_to(g * bd, a.shape), _reduce_to(g * ad, b.shape))
    )


def div(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        return mul(a, 1.0 / np.asarray(b, dtype=np.float64))
    if not isinstance(a, Tensor):
        return mul(power(b, -1.0), a)
    _check_same("div", a, b)
    ad, bd = a.data, b.data
    out = ad / bd
    return record(
        "div",
        out,
        (a, b),
        lambda g: (_reduce_to(g / bd, a.shape), _reduce_to(-g * out / bd, b.shape)),
    )


def neg(x: Tensor) -> Tensor:
    return record("neg", -x.data, (x,), lambda g: (-g,))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return record("exp", out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    xd = x.data
    return record("log", np.log(xd), (x,), lambda g: (g / xd,))


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return record("sqrt", out, (x,), lambda g: (g * 0.5 / out,))


def square(x: Tensor) -> Tensor:
    xd = x.data
    return record("square", xd * xd, (x,), lambda g: (2.0 * g * xd,))


def power(x: Tensor, p: float) -> Tensor:
    xd = x.data
    out = xd**p
    return record("power", out, (x,), lambda g: (g * p * xd ** (p - 1.0),))


def abs_(x: Tensor) -> Tensor:
    xd = x.data
    return record("abs", np.abs(xd), (x,), lambda g: (g * np.sign(xd),))


def _sigmoid_np(xd: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(xd))
    return np.where(xd >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(x: Tensor) -> Tensor:
    out = _sigmoid_np(x.data)
    return record("sigmoid", out, (x,), lambda g: (g * out * (1.0 - out),))


def silu(x: Tensor) -> Tensor:
    xd = x.data
    s = _sigmoid_np(xd)
    return record("silu", xd * s, (x,), lambda g: (g * (s + xd * s * (1.0 - s)),))


def clamp(x: Tensor, lo: Optional[float] = None, hi: Optional[float] = None) -> Tensor:
    """Clip to ``[lo, hi]``; the gradient is zero outside the open interval."""
    xd = x.data
    out = np.clip(xd, lo, hi)
    inside = np.ones(xd.shape, dtype=bool)
    if lo is not None:
        inside &= xd > lo
    if hi is not None:
        inside &= xd < hi
    return record("clamp", out, (x,), lambda g: (g * inside,))


def maximum(a: Tensor, b: Tensor) -> Tensor:
    _check_same("maximum", a, b)
    pick_a = a.data >= b.data
    out = np.where(pick_a, a.data, b.data)
    return record(
        "maximum",
        out,
        (a, b),
        lambda g: (_reduce_to(g * pick_a, a.shape), _reduce_to(g * ~pick_a, b.shape)),
    )


def minimum(a: Tensor, b: Tensor) -> Tensor:
    _check_same("minimum", a, b)
    pick_a = a.data <= b.data
    out = np.where(pick_a, a.data, b.data)
    return record(
        "minimum",
        out,
        (a, b),
        lambda g: (_reduce_to(g * pick_a, a.shape), _reduce_to(g * ~pick_a, b.shape)),
    )


def where_zero(num: Tensor, den: Tensor) -> Tensor:
    """``num / den`` with the result defined as 0 wherever ``den == 0``."""
    _check_same("where_zero", num, den)
    ok = den.data != 0
    safe = np.where(ok, den.data, 1.0)
    out = np.where(ok, num.data / safe, 0.0)
    return record(
        "safe_div",
        out,
        (num, den),
        lambda g: (
            _reduce_to(np.where(ok, g / safe, 0.0), num.shape),
            _reduce_to(np.where(ok, -g * out / safe, 0.0), den.shape),
        ),
    )


# ----------------------------------------------------------------- reductions


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = x.shape
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return record("sum", np.asarray(out), (x,), vjp)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return mul(sum_(x, axis=axis, keepdims=keepdims), 1.0 / n)


# ------------------------------------------------------------- shape handling


def reshape(x: Tensor, shape) -> Tensor:
    src = x.shape
    return record("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(src),))


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))
    return record("transpose", np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def getitem(x: Tensor, idx) -> Tensor:
    src = x.shape

    basic = all(isinstance(i, (slice, int, type(Ellipsis))) for i in (idx if isinstance(idx, tuple) else (idx,)))

    def vjp(g):
        full = np.zeros(src)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return record("getitem", np.asarray(x.data[idx]), (x,), vjp)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ShapeError(f"concat: {t.shape} incompatible with {ref} along axis {axis}")
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]
    out = np.concatenate([t.data for t in tensors], axis=ax)
    return record("concat", out, tensors, lambda g: tuple(np.split(g, bounds, axis=ax)))


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    for t in tensors[1:]:
        if t.shape != tensors[0].shape:
            raise ShapeError(f"stack: {t.shape} != {tensors[0].shape}")
    out = np.stack([t.data for t in tensors], axis=axis)
    return record(
        "stack", out, tensors, lambda g: tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))
    )


def split(x: Tensor, sizes: Sequence[int], axis: int = 0) -> list[Tensor]:
    if sum(sizes) != x.shape[axis]:
        raise ShapeError(f"split: sizes {list(sizes)} do not cover extent {x.shape[axis]}")
    out, start = [], 0
    for s in sizes:
        idx = [slice(None)] * x.ndim
        idx[axis] = slice(start, start + s)
        out.append(getitem(x, tuple(idx)))
        start += s
    return out


def broadcast_to(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    src = x.shape
    lead = len(shape) - len(src)
    axes = tuple(range(lead)) + tuple(
        i + lead for i, n in enumerate(src) if n == 1 and shape[i + lead] != 1
    )

    def vjp(g):
        return (g.sum(axis=axes, keepdims=True).reshape(src),)

    return record("broadcast_to", np.broadcast_to(x.data, shape).copy(), (x,), vjp)


# -------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading batch axes must match."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return record(
        "matmul",
        ad @ bd,
        (a, b),
        lambda g: (g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g),
    )


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ weight.T + bias`` for ``x`` of shape ``[N, in]``."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} vs weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"linear: bias {bias.shape} vs weight {weight.shape}")
    xd, wd = x.data, weight.data
    out = xd @ wd.T
    if bias is not None:
        out = out + bias.data
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def vjp(g):
        grads = [g @ wd, g.T @ xd]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return grads

    return record("linear", out, inputs, vjp)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return record("softmax", out, (x,), vjp)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift per feature."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: affine params {gamma.shape}/{beta.shape} vs features {d}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def vjp(g):
        lead = tuple(range(g.ndim - 1))
        gh = g * gamma.data
        gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return record("layer_norm", out, (x, gamma, beta), vjp)


# ---------------------------------------------------------------- convolution


def conv_output_size(n: int, k: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - k) // stride + 1


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
    groups: int = 1,
) -> Tensor:
    """2-D cross-correlation over ``[C,H,W]`` or ``[N,C,H,W]`` input.

    ``weight`` is ``[C_out, C_in/groups, kH, kW]`` with odd kernel extents.
    """
    batched = x.ndim == 4
    if x.ndim not in (3, 4):
        raise ShapeError(f"conv2d: input must be [C,H,W] or [N,C,H,W], got {x.shape}")
    if weight.ndim != 4:
        raise ShapeError(f"conv2d: weight must be [C_out,C_in,kH,kW], got {weight.shape}")
    if stride < 1 or padding < 0 or groups < 1:
        raise ValueError(f"conv2d: bad stride={stride} padding={padding} groups={groups}")
    xd = x.data if batched else x.data[None]
    n, c_in, h, w = xd.shape
    c_out, c_per, kh, kw = weight.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d: kernel extents must be odd, got {kh}x{kw}")
    if c_in % groups or c_out % groups or c_per != c_in // groups:
        raise ShapeError(
            f"conv2d: input channels {c_in} / groups {groups} do not match weight {weight.shape}"
        )
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"conv2d: bias {bias.shape} vs {c_out} output channels")
    if h + 2 * padding < kh or w + 2 * padding < kw:
        raise ShapeError(f"conv2d: padded input {h}x{w}+2*{padding} smaller than kernel {kh}x{kw}")
    ho, wo = conv_output_size(h, kh, stride, padding), conv_output_size(w, kw, stride, padding)

    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xd
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    # win: [N, C_in, Ho, Wo, kh, kw]
    wd = weight.data
    if groups == 1:
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c_in * kh * kw)
        out = (cols @ wd.reshape(c_out, -1).T).reshape(n, ho, wo, c_out).transpose(0, 3, 1, 2)
    else:
        wg = wd.reshape(groups, c_out // groups, c_per, kh, kw)
        wing = win.reshape(n, groups, c_per, ho, wo, kh, kw)
        out = np.einsum("ngchwij,gocij->ngohw", wing, wg, optimize=True).reshape(n, c_out, ho, wo)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)

    inputs = [x, weight] + ([bias] if bias is not None else [])

    def vjp(g):
        g4 = g if batched else g[None]
        if groups == 1:
            gm = g4.transpose(0, 2, 3, 1).reshape(n * ho * wo, c_out)
            gw = (gm.T @ cols).reshape(wd.shape)
            gcols = (gm @ wd.reshape(c_out, -1)).reshape(n, ho, wo, c_in, kh, kw)
            gcols = gcols.transpose(0, 3, 1, 2, 4, 5)
        else:
            gg = g4.reshape(n, groups, c_out // groups, ho, wo)
            gw = np.einsum("ngohw,ngchwij->gocij", gg, wing, optimize=True).reshape(wd.shape)
            gcols = np.einsum("ngohw,gocij->ngchwij", gg, wg, optimize=True).reshape(
                n, c_in, ho, wo, kh, kw
            )
        gxp = np.zeros(xp.shape)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += gcols[..., i, j]
        gx = gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp
        gx = gx if batched else gx[0]
        grads = [np.ascontiguousarray(gx), gw]
        if bias is not None:
            grads.append(g4.sum(axis=(0, 2, 3)))
        return grads

    return record("conv2d", out if batched else out[0], inputs, vjp)


def upsample_nearest(x: Tensor, k: int) -> Tensor:
    """Replicate each pixel of ``[C,h,w]`` into a ``k x k`` block."""
    if x.ndim != 3 or k < 1:
        raise ShapeError(f"upsample_nearest: need [C,h,w] and k >= 1, got {x.shape}, k={k}")
    c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, k, axis=1), k, axis=2)
    return record(
        "upsample_nearest", out, (x,), lambda g: (g.reshape(c, h, k, w, k).sum(axis=(2, 4)),)
    )


# ------------------------------------------------------------------- sampling


def grouped_bilinear_sample(feature: Tensor, points: Tensor) -> Tensor:
    """Bilinear reads of ``[G,C,H,W]`` maps at ``[G,Q,2]`` pixel-unit ``(x, y)``.

    Returns ``[G,Q,C]``.  Integer coordinates hit lattice points exactly;
    corners outside the map contribute zero.
    """
    if feature.ndim != 4 or points.ndim != 3 or points.shape[-1] != 2:
        raise ShapeError(f"bilinear_sample: feature {feature.shape}, points {points.shape}")
    if points.shape[0] != feature.shape[0]:
        raise ShapeError(f"bilinear_sample: {points.shape[0]} point groups for {feature.shape[0]} maps")
    f = feature.data
    g_, c, h, w = f.shape
    px, py = points.data[..., 0], points.data[..., 1]
    x0 = np.floor(px)
    y0 = np.floor(py)
    fx, fy = px - x0, py - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    gidx = np.arange(g_)[:, None]

    corners = []
    for dy in (0, 1):
        for dx in (0, 1):
            xi, yi = x0 + dx, y0 + dy
            valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            xc, yc = np.clip(xi, 0, w - 1), np.clip(yi, 0, h - 1)
            vals = f[gidx, :, yc, xc] * valid[..., None]  # [G,Q,C]
            wx = fx if dx else 1.0 - fx
            wy = fy if dy else 1.0 - fy
            corners.append((dx, dy, xc, yc, valid, vals, wx, wy))

    out = sum(v * (wx * wy)[..., None] for _, _, _, _, _, v, wx, wy in corners)

    def vjp(gout):
        gf = np.zeros_like(f)
        gp = np.zeros(points.shape)
        for dx, dy, xc, yc, valid, vals, wx, wy in corners:
            wgt = (wx * wy * valid)[..., None] * gout  # [G,Q,C]
            np.add.at(gf, (gidx, slice(None), yc, xc), wgt)
            dot = (gout * vals).sum(axis=-1)
            gp[..., 0] += dot * wy * (1.0 if dx else -1.0)
            gp[..., 1] += dot * wx * (1.0 if dy else -1.0)
        return gf, gp

    return record("bilinear_sample", out, (feature, points), vjp)


def bilinear_sample(feature: Tensor, points: Tensor) -> Tensor:
    """Bilinear reads of a ``[C,H,W]`` map at ``[Q,2]`` points; returns ``[Q,C]``."""
    if feature.ndim != 3:
        raise ShapeError(f"bilinear_sample: feature must be [C,H,W], got {feature.shape}")
    return reshape(
        grouped_bilinear_sample(reshape(feature, (1,) + feature.shape), reshape(points, (1,) + points.shape)),
        (points.shape[0], feature.shape[0]),
    )
