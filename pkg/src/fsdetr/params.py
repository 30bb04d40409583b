"""Learnable parameter containers and the hierarchical parameter store."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from .tensor import Tensor, conv2d, linear, silu


@dataclass
class ConvParams:
    weight: Tensor
    bias: Optional[Tensor] = None
    stride: int = 1
    padding: int = 0
    groups: int = 1

    @classmethod
    def from_arrays(cls, weight, bias=None, stride: int = 1, padding: Optional[int] = None, groups: int = 1):
        w = np.asarray(weight, dtype=np.float64)
        pad = w.shape[-1] // 2 if padding is None else padding
        return cls(Tensor(w), None if bias is None else Tensor(bias), stride, pad, groups)

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1] * self.groups

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def kernel_size(self) -> int:
        return self.weight.shape[-1]

    def tensors(self) -> list[Tensor]:
        return [self.weight] + ([self.bias] if self.bias is not None else [])

    def __call__(self, x: Tensor, act: bool = False) -> Tensor:
        y = conv2d(x, self.weight, self.bias, self.stride, self.padding, self.groups)
        return silu(y) if act else y


@dataclass
class LinearParams:
    weight: Tensor  # [out, in]
    bias: Optional[Tensor] = None

    @classmethod
    def from_arrays(cls, weight, bias=None):
        return cls(Tensor(weight), None if bias is None else Tensor(bias))

    def tensors(self) -> list[Tensor]:
        return [self.weight] + ([self.bias] if self.bias is not None else [])

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


@dataclass(frozen=True)
class InitSpec:
    kind: str
    fan_in: int
    shape: tuple


class ParamStore:
    """Named learnable tensors, addressed by dotted paths.

    ``scope("backbone")`` returns a view that prefixes every name it creates;
    all views share the same storage and random generator, so creation order
    alone fixes the initial values for a given seed.
    """

    def __init__(self, seed: int = 0):
        self._tensors: dict[str, Tensor] = {}
        self._meta: dict[str, InitSpec] = {}
        self._rng = np.random.default_rng(seed)
        self._prefix = ""

    def scope(self, name: str) -> "ParamStore":
        view = object.__new__(ParamStore)
        view._tensors = self._tensors
        view._meta = self._meta
        view._rng = self._rng
        view._prefix = self._join(name)
        return view

    def _join(self, name: str) -> str:
        return f"{self._prefix}.{name}" if self._prefix else name

    def add(self, name: str, shape, init: str = "uniform", fan_in: Optional[int] = None) -> Tensor:
        full = self._join(name)
        if full in self._tensors:
            raise KeyError(f"parameter {full!r} already exists")
        shape = tuple(int(s) for s in shape)
        fan = int(fan_in if fan_in is not None else (np.prod(shape[1:]) if len(shape) > 1 else shape[0]))
        if init == "uniform":
            bound = 1.0 / np.sqrt(max(fan, 1))
            data = self._rng.uniform(-bound, bound, size=shape)
        elif init == "zeros":
            data = np.zeros(shape)
        elif init == "ones":
            data = np.ones(shape)
        elif isinstance(init, str) and init.startswith("const:"):
            data = np.full(shape, float(init.split(":", 1)[1]))
        else:
            raise ValueError(f"unknown init {init!r}")
        t = Tensor(data, requires_grad=True, name=full)
        self._tensors[full] = t
        self._meta[full] = InitSpec(init, fan, shape)
        return t

    def conv(
        self,
        name: str,
        c_in: int,
        c_out: int,
        k: int = 1,
        stride: int = 1,
        padding: Optional[int] = None,
        bias: bool = True,
        groups: int = 1,
        init: str = "uniform",
        bias_init: str = "uniform",
    ) -> ConvParams:
        fan = c_in // groups * k * k
        w = self.add(f"{name}.weight", (c_out, c_in // groups, k, k), init, fan_in=fan)
        b = self.add(f"{name}.bias", (c_out,), bias_init, fan_in=fan) if bias else None
        return ConvParams(w, b, stride, k // 2 if padding is None else padding, groups)

    def linear(
        self, name: str, d_in: int, d_out: int, bias: bool = True, init: str = "uniform", bias_init: str = "uniform"
    ) -> LinearParams:
        w = self.add(f"{name}.weight", (d_out, d_in), init, fan_in=d_in)
        b = self.add(f"{name}.bias", (d_out,), bias_init, fan_in=d_in) if bias else None
        return LinearParams(w, b)

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[self._join(name)]

    def __contains__(self, name: str) -> bool:
        return self._join(name) in self._tensors

    def __len__(self) -> int:
        return len(self.names())

    def names(self) -> list[str]:
        if not self._prefix:
            return list(self._tensors)
        p = self._prefix + "."
        return [n for n in self._tensors if n.startswith(p)]

    def items(self) -> Iterator[tuple[str, Tensor]]:
        for n in self.names():
            yield n, self._tensors[n]

    def tensors(self) -> list[Tensor]:
        return [t for _, t in self.items()]

    def meta(self, name: str) -> InitSpec:
        return self._meta[name]

    def count(self) -> int:
        return int(sum(t.size for t in self.tensors()))

    def zero_grad(self) -> None:
        for t in self.tensors():
            t.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for n, t in self.items():
            arr = np.asarray(state[n], dtype=np.float64)
            if arr.shape != t.shape:
                raise ValueError(f"{n}: shape {arr.shape} != {t.shape}")
            t.data = arr.copy()


def count_params(*blocks) -> int:
    """Total element count over parameter containers or bare tensors."""
    total = 0
    for b in blocks:
        if b is None:
            continue
        if isinstance(b, Tensor):
            total += b.size
        elif hasattr(b, "tensors"):
            total += sum(t.size for t in b.tensors())
        else:
            total += count_params(*b)
    return total


def rebind(obj, mapping: dict):
    """Copy of a parameter container with tensors swapped by identity.

    ``mapping`` maps ``id(old_tensor)`` to its replacement; containers are
    walked through dataclass fields, lists, tuples and dicts.
    """
    if isinstance(obj, Tensor):
        return mapping.get(id(obj), obj)
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        changes = {f.name: rebind(getattr(obj, f.name), mapping) for f in dataclasses.fields(obj) if f.init}
        return dataclasses.replace(obj, **changes)
    if isinstance(obj, list):
        return [rebind(v, mapping) for v in obj]
    if isinstance(obj, tuple):
        return tuple(rebind(v, mapping) for v in obj)
    if isinstance(obj, dict):
        return {k: rebind(v, mapping) for k, v in obj.items()}
    return obj
