"""Minimal parameter containers.

Assigning a :class:`Tensor` attribute on a :class:`Module` registers it as a
parameter; assigning a :class:`Module` registers a child. Every module carries
a census ``kind`` (``"patt"``, ``"ff"``, ...) that its own parameters inherit.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Iterator

import numpy as np

from . import functional as F
from .tensor import Tensor, get_default_dtype


class Module:
    kind: str = "other"

    def __init__(self) -> None:
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Tensor):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor, str]]:
        """Yield ``(name, tensor, kind)``; a tensor shared by two owners is yielded once."""
        seen: set[int] = set()
        for name, t, kind in self._walk(prefix):
            if id(t) not in seen:
                seen.add(id(t))
                yield name, t, kind

    def _walk(self, prefix):
        for name, t in self._params.items():
            yield prefix + name, t, self.kind
        for name, child in self._children.items():
            yield from child._walk(f"{prefix}{name}.")

    def parameters(self) -> list[Tensor]:
        return [t for _, t, _ in self.named_parameters()]

    def modules(self) -> Iterator[tuple[str, Module]]:
        yield "", self
        for name, child in self._children.items():
            for sub, m in child.modules():
                yield (f"{name}.{sub}" if sub else name), m

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def train(self, mode: bool = True):
        for _, m in self.modules():
            object.__setattr__(m, "training", mode)
        return self

    def eval(self):
        return self.train(False)

    def num_params(self) -> int:
        return sum(p.size for p in self.parameters())


class ModuleList(Module):
    def __init__(self, items=()):
        super().__init__()
        self._items: list[Module] = []
        for m in items:
            self.append(m)

    def append(self, m: Module) -> None:
        setattr(self, str(len(self._items)), m)
        self._items.append(m)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]


_shape_only = False


@contextmanager
def shape_only() -> Iterator[None]:
    """Build modules with zero-stride placeholder parameters (for counting only)."""
    global _shape_only
    old, _shape_only = _shape_only, True
    try:
        yield
    finally:
        _shape_only = old


def is_shape_only() -> bool:
    return _shape_only


def placeholder(shape, dtype=None) -> Tensor:
    t = Tensor(0.0, requires_grad=True, dtype=dtype or get_default_dtype())
    t.data = np.broadcast_to(t.data, tuple(shape))
    return t


def _param(shape, sample, dtype) -> Tensor:
    if _shape_only:
        return placeholder(shape, dtype)
    return Tensor(sample(), requires_grad=True, dtype=dtype or get_default_dtype())


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype=None) -> Tensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return _param(shape, lambda: rng.uniform(-limit, limit, size=shape), dtype)


def normal(rng: np.random.Generator, shape, std: float, dtype=None) -> Tensor:
    return _param(shape, lambda: rng.normal(0.0, std, size=shape), dtype)


def zeros(shape, dtype=None) -> Tensor:
    return _param(shape, lambda: np.zeros(shape), dtype)


def ones(shape, dtype=None) -> Tensor:
    return _param(shape, lambda: np.ones(shape), dtype)


class Linear(Module):
    """Dense ``x @ weight + bias`` with ``weight`` stored as ``[d_in, d_out]``."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True, kind: str = "other"):
        super().__init__()
        self.kind = kind
        self.d_in, self.d_out = d_in, d_out
        self.weight = glorot_uniform(rng, (d_in, d_out), d_in, d_out)
        self.bias = zeros((d_out,)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y

    def matrix(self) -> Tensor:
        return self.weight


class LayerNorm(Module):
    kind = "layer_norms"

    def __init__(self, d: int):
        super().__init__()
        self.gain = ones((d,))
        self.bias = zeros((d,))

    def __call__(self, x: Tensor) -> Tensor:
        return F.layer_norm(x, self.gain, self.bias)
