"""Small module system: parameter discovery, train/eval mode, basic layers."""

from __future__ import annotations

from typing import Iterator, List, Optional

import numpy as np

from . import functional as F
from .tensor import Tensor, get_default_dtype


def _rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


class Module:
    """Base class. Parameters are the ``requires_grad`` tensors stored as
    attributes, directly or inside child modules and lists of modules."""

    training = True

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def children(self) -> Iterator["Module"]:
        for value in vars(self).values():
            if isinstance(value, Module):
                yield value
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for child in self.children():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict:
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        for name, mod in self.named_modules():
            if isinstance(mod, BatchNorm2d):
                state[f"{name}running_mean"] = mod.running_mean.copy()
                state[f"{name}running_var"] = mod.running_var.copy()
        return state

    def named_modules(self, prefix: str = "") -> Iterator[tuple]:
        yield prefix, self
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield from value.named_modules(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_modules(f"{prefix}{name}.{i}.")


class Sequential(Module):
    def __init__(self, *layers: Module):
        self.layers = list(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x


class ReLU(Module):
    def forward(self, x):
        return F.relu(x)


class Identity(Module):
    def forward(self, x):
        return x


class Conv2d(Module):
    """Bias-free by default, Kaiming-normal (fan-in) initialised."""

    def __init__(self, c_in, c_out, k, stride=1, padding=0, dilation=1, groups=1, bias=False, rng=None):
        rng = _rng(rng)
        fan_in = (c_in // groups) * k * k
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(c_out, c_in // groups, k, k))
        self.weight = Tensor(w.astype(get_default_dtype()), requires_grad=True)
        self.bias = Tensor(np.zeros(c_out, dtype=get_default_dtype()), requires_grad=True) if bias else None
        self.stride, self.padding, self.dilation, self.groups = stride, padding, dilation, groups

    def forward(self, x):
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.dilation, self.groups)


class BatchNorm2d(Module):
    def __init__(self, channels, affine=True, momentum=0.1, eps=1e-5):
        dtype = get_default_dtype()
        self.channels = channels
        self.affine = affine
        self.momentum, self.eps = momentum, eps
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True) if affine else None
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True) if affine else None
        self.running_mean = np.zeros(channels, dtype=np.float64)
        self.running_var = np.ones(channels, dtype=np.float64)

    def forward(self, x):
        return F.batch_norm(
            x, self.gamma, self.beta, self.running_mean, self.running_var, self.training, self.momentum, self.eps
        )


class Linear(Module):
    def __init__(self, d_in, d_out, rng=None):
        rng = _rng(rng)
        bound = 1.0 / np.sqrt(d_in)
        dtype = get_default_dtype()
        self.weight = Tensor(rng.uniform(-bound, bound, size=(d_out, d_in)).astype(dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(d_out, dtype=dtype), requires_grad=True)

    def forward(self, x):
        return F.linear(x, self.weight, self.bias)


def load_state(module: Module, state: dict) -> None:
    """Copy arrays from :meth:`Module.state_dict` back into ``module``."""
    params = dict(module.named_parameters())
    for name, p in params.items():
        p.data = state[name].copy()
    for name, mod in module.named_modules():
        if isinstance(mod, BatchNorm2d):
            mod.running_mean = state[f"{name}running_mean"].copy()
            mod.running_var = state[f"{name}running_var"].copy()


def maybe_rng(rng: Optional[object]) -> np.random.Generator:
    return _rng(rng)
