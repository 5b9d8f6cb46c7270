"""Parameter containers and the layers shared by every network."""
from __future__ import annotations

from collections import OrderedDict
from typing import Dict, Iterator, Tuple

import contextlib
import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

INIT_STD = 0.02
INIT_SCHEMES = ("normal", "fan_in")
_scheme = ["normal"]


def make_rng(seed) -> np.random.Generator:
    """All randomness in the package goes through PCG64 (numpy's 64-bit permuted congruential generator)."""
    return np.random.Generator(np.random.PCG64(seed))


def normal_param(rng: np.random.Generator, shape, std: float = INIT_STD) -> Tensor:
    return Tensor(rng.normal(0.0, std, size=shape), requires_grad=True)


@contextlib.contextmanager
def init_scheme(name: str):
    """Weight init for layers built inside the block.

    ``normal`` draws N(0, 0.02). ``fan_in`` draws N(0, 1/fan_in), which keeps
    activations at unit scale through a deep stack with no normalization layers.
    """
    if name not in INIT_SCHEMES:
        raise ValueError(f"unknown init scheme {name!r}; expected one of {INIT_SCHEMES}")
    _scheme.append(name)
    try:
        yield
    finally:
        _scheme.pop()


def weight_param(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    std = INIT_STD if _scheme[-1] == "normal" else 1.0 / np.sqrt(fan_in)
    return normal_param(rng, shape, std)


def zeros_param(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


class Module:
    """Walks its attributes to find parameters, buffers and child modules.

    Buffers are non-trainable arrays that still belong in a checkpoint (the
    spectral-norm ``u`` vectors). Attribute insertion order fixes parameter
    naming, so checkpoints are stable.
    """

    def __init__(self):
        self._buffers: Dict[str, np.ndarray] = OrderedDict()

    def register_buffer(self, name: str, value: np.ndarray):
        self._buffers[name] = value

    def children(self) -> Iterator[Tuple[str, "Module"]]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def _walk_parameters(self, prefix: str):
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
        for name, child in self.children():
            yield from child._walk_parameters(f"{prefix}{name}.")

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        """Each parameter once, under the first name it is reachable by."""
        seen = set()
        for name, p in self._walk_parameters(prefix):
            if id(p) not in seen:
                seen.add(id(p))
                yield name, p

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for name, value in self._buffers.items():
            yield prefix + name, value
        for name, child in self.children():
            yield from child.named_buffers(f"{prefix}{name}.")

    def set_buffer(self, dotted: str, value: np.ndarray):
        head, _, rest = dotted.partition(".")
        if not rest:
            self._buffers[head] = value
            return
        owner = getattr(self, head)
        if isinstance(owner, (list, tuple)):
            idx, _, rest = rest.partition(".")
            owner = owner[int(idx)]
        owner.set_buffer(rest, value)

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def to(self, dtype) -> "Module":
        """Cast parameters and buffers in place (float64 for gradient checks)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        for name, value in list(self.named_buffers()):
            self.set_buffer(name, value.astype(dtype))
        return self

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Linear(Module):
    """Affine map on the last axis; as a per-position map it is a 1×1 convolution."""

    def __init__(self, rng, n_in: int, n_out: int, bias: bool = True):
        super().__init__()
        self.weight = weight_param(rng, (n_in, n_out), n_in)
        self.bias = zeros_param((n_out,)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        y = ad.matmul(x, self.weight)
        return y if self.bias is None else y + self.bias


class Conv3x3(Module):
    def __init__(self, rng, c_in: int, c_out: int, stride: int = 1):
        super().__init__()
        self.stride = stride
        self.weight = weight_param(rng, (c_out, c_in, 3, 3), 9 * c_in)
        self.bias = zeros_param((c_out,))

    def forward(self, x: Tensor) -> Tensor:
        return ad.conv3x3(x, self.weight, self.bias, stride=self.stride)
