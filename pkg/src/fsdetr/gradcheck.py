"""Central finite-difference verification of tape gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence, Union

import numpy as np

from .tensor import Tape, Tensor, backward, mul, precision, sum_

# 80-bit x87 extended precision where the platform provides it
EXTENDED = np.longdouble if np.finfo(np.longdouble).eps < 1e-18 else np.float64

Inputs = Union[Mapping[str, np.ndarray], Sequence[np.ndarray]]


@dataclass
class GradReport:
    op: str
    max_rel_error: dict[str, float]
    max_abs_error: dict[str, float]
    n_checked: dict[str, int]
    eps: float
    tol: float
    passed: bool = field(init=False)

    def __post_init__(self):
        self.passed = all(v < self.tol for v in self.max_rel_error.values())

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    def as_record(self) -> dict:
        return {
            "op": self.op,
            "passed": self.passed,
            "max_rel_error": self.worst,
            "per_input": dict(self.max_rel_error),
            "max_abs_error": dict(self.max_abs_error),
            "n_checked": dict(self.n_checked),
            "eps": self.eps,
            "tol": self.tol,
        }


def relative_error(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)


def _named(inputs: Inputs) -> tuple[list[str], list[np.ndarray]]:
    if isinstance(inputs, Mapping):
        names = list(inputs)
        arrays = [np.array(inputs[k], dtype=np.float64) for k in names]
    else:
        arrays = [np.array(a, dtype=np.float64) for a in inputs]
        names = [f"input{i}" for i in range(len(arrays))]
    return names, arrays


def grad_check(
    fn: Callable[..., Tensor],
    inputs: Inputs,
    eps: float = 1e-5,
    tol: float = 1e-4,
    *,
    op: str = "op",
    probe: str = "weighted",
    seed: int = 0,
    max_elements: Optional[int] = None,
    extended: bool = True,
) -> GradReport:
    """Compare tape gradients of ``fn`` against central differences.

    ``fn`` takes one Tensor per input and returns a Tensor that is reduced to
    a scalar.  With ``probe="sum"`` the reduction is a plain sum; the default
    ``"weighted"`` sums against fixed Gaussian weights, which avoids the
    degenerate all-zero gradients a plain sum produces for normalizing ops
    such as softmax.  ``max_elements`` caps the elements checked per input
    (a seeded random subset); ``None`` checks every element.

    With ``extended=True`` the perturbed evaluations run in extended
    precision, which keeps difference-quotient rounding noise (about
    ``|f| * machine_eps / eps``) well below the 1e-8 relative-error floor.
    The tape gradient itself is always computed in float64.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    names, arrays = _named(inputs)
    rng = np.random.default_rng(seed)

    probe_w = None

    def scalar(out: Tensor) -> Tensor:
        return sum_(out) if probe_w is None else sum_(mul(out, probe_w))

    if probe == "weighted":
        shape = fn(*[Tensor(a) for a in arrays]).shape
        probe_w = rng.standard_normal(shape)
    elif probe != "sum":
        raise ValueError(f"unknown probe {probe!r}")

    leaves = [Tensor(a.copy(), requires_grad=True, name=n) for n, a in zip(names, arrays)]
    with Tape() as tape:
        loss = scalar(fn(*leaves))
    backward(loss, tape)

    fd_dtype = EXTENDED if extended else np.float64
    fd_arrays = [a.astype(fd_dtype) for a in arrays]
    step = fd_dtype(eps)

    def value(args: list[np.ndarray]):
        with precision(fd_dtype):
            return scalar(fn(*[Tensor(a) for a in args])).data[()]

    rel, ab, counts = {}, {}, {}
    for i, name in enumerate(names):
        # a leaf the function never reads has no tape gradient: it is zero
        analytic = leaves[i].grad if leaves[i].grad is not None else np.zeros_like(arrays[i])
        flat_idx = np.arange(arrays[i].size)
        if max_elements is not None and flat_idx.size > max_elements:
            flat_idx = np.sort(rng.choice(flat_idx, size=max_elements, replace=False))
        numeric = np.empty(flat_idx.size)
        for j, k in enumerate(flat_idx):
            args = list(fd_arrays)
            plus = fd_arrays[i].copy()
            plus.flat[k] += step
            minus = fd_arrays[i].copy()
            minus.flat[k] -= step
            args[i] = plus
            f_plus = value(args)
            args[i] = minus
            f_minus = value(args)
            numeric[j] = float((f_plus - f_minus) / (2 * step))
        a = analytic.reshape(-1)[flat_idx]
        rel[name] = float(relative_error(a, numeric).max())
        ab[name] = float(np.abs(a - numeric).max())
        counts[name] = int(flat_idx.size)
    return GradReport(op=op, max_rel_error=rel, max_abs_error=ab, n_checked=counts, eps=eps, tol=tol)
