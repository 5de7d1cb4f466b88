"""Candidate operators, the S1-S5 search spaces, and operator construction.

Conv operators follow the usual cell-search building blocks: every conv is
wrapped as ReLU -> conv -> BN, a separable conv stacks the depthwise +
pointwise block twice, and a stride-2 identity is a factorized reduce.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from . import functional as F
from .nn import BatchNorm2d, Conv2d, Module, ReLU, Sequential, maybe_rng
from .tensor import Tensor


class OperatorKind(str, enum.Enum):
    MaxPool3 = "MaxPool3"
    MaxPool5 = "MaxPool5"
    AvgPool3 = "AvgPool3"
    AvgPool5 = "AvgPool5"
    SepConv3 = "SepConv3"
    SepConv5 = "SepConv5"
    SepConv7 = "SepConv7"
    DilConv3 = "DilConv3"
    DilConv5 = "DilConv5"
    SkipConnect = "SkipConnect"
    Zero = "Zero"

    def __str__(self) -> str:
        return self.value

    @property
    def kernel_size(self) -> int:
        """Spatial kernel of the operator; 0 for the kernel-less identity/zero."""
        digits = "".join(ch for ch in self.value if ch.isdigit())
        return int(digits) if digits else 0

    @property
    def family(self) -> str:
        return self.value.rstrip("0123456789")

    @property
    def is_pool(self) -> bool:
        return self.family in ("MaxPool", "AvgPool")

    @property
    def parametric(self) -> bool:
        return self.family in ("SepConv", "DilConv")


def kind(tag) -> OperatorKind:
    """Parse a tag such as ``"SepConv3"`` (also accepts an OperatorKind)."""
    if isinstance(tag, OperatorKind):
        return tag
    try:
        return OperatorKind(str(tag))
    except ValueError:
        valid = ", ".join(k.value for k in OperatorKind)
        raise ValueError(f"unknown operator {tag!r}; valid: {valid}") from None


K = OperatorKind


@dataclass(frozen=True)
class SearchSpace:
    id: str
    kinds: Tuple[OperatorKind, ...]

    def __post_init__(self):
        if K.Zero not in self.kinds:
            raise ValueError(f"search space {self.id} must contain Zero")
        if len(set(self.kinds)) != len(self.kinds):
            raise ValueError(f"search space {self.id} lists an operator twice")

    def __len__(self) -> int:
        return len(self.kinds)

    def __contains__(self, item) -> bool:
        return kind(item) in self.kinds

    @property
    def functional_kinds(self) -> Tuple[OperatorKind, ...]:
        return tuple(k for k in self.kinds if k is not K.Zero)

    def index(self, item) -> int:
        return self.kinds.index(kind(item))

    @classmethod
    def custom(cls, space_id: str, tags: Sequence[str]) -> "SearchSpace":
        return cls(space_id, tuple(kind(t) for t in tags))


SPACES = {
    "S1": SearchSpace("S1", (K.MaxPool3, K.AvgPool3, K.SepConv3, K.SepConv5, K.DilConv3, K.DilConv5, K.SkipConnect, K.Zero)),
    "S2": SearchSpace("S2", (K.MaxPool3, K.MaxPool5, K.AvgPool3, K.AvgPool5, K.SepConv3, K.SepConv5, K.SkipConnect, K.Zero)),
    "S3": SearchSpace("S3", (K.MaxPool3, K.SepConv3, K.SepConv5, K.SepConv7, K.DilConv3, K.DilConv5, K.SkipConnect, K.Zero)),
    "S4": SearchSpace("S4", (K.SepConv3, K.SepConv5, K.DilConv3, K.DilConv5, K.SkipConnect, K.Zero)),
    "S5": SearchSpace("S5", (K.SepConv3, K.SkipConnect, K.Zero)),
}


def space(space_id: str) -> SearchSpace:
    try:
        return SPACES[str(space_id).upper()]
    except KeyError:
        raise ValueError(f"unknown search space {space_id!r}; valid ids: {', '.join(SPACES)}") from None


# -- operator modules ----------------------------------------------------------


class Operation(Module):
    """A built candidate operator: ``kind`` applied at ``channels``/``stride``."""

    kind: OperatorKind
    channels: int
    stride: int

    def _tag(self, kind_, channels, stride):
        self.kind, self.channels, self.stride = kind_, channels, stride


class Zero(Operation):
    def __init__(self, channels, stride):
        self._tag(K.Zero, channels, stride)

    def forward(self, x):
        n, c, h, w = x.shape
        h, w = -(-h // self.stride), -(-w // self.stride)
        return Tensor(np.zeros((n, c, h, w), dtype=x.dtype))


class Identity(Operation):
    def __init__(self, channels):
        self._tag(K.SkipConnect, channels, 1)

    def forward(self, x):
        return x


class ReLUConvBN(Module):
    def __init__(self, c_in, c_out, k, stride, padding, affine=True, rng=None):
        self.op = Sequential(ReLU(), Conv2d(c_in, c_out, k, stride, padding, rng=rng), BatchNorm2d(c_out, affine))

    def forward(self, x):
        return self.op(x)


class FactorizedReduce(Operation):
    """Stride-2 identity substitute: two offset 1x1 stride-2 convs, concatenated."""

    def __init__(self, c_in, c_out, affine=True, rng=None):
        if c_out % 2:
            raise ValueError(f"FactorizedReduce needs an even output channel count, got {c_out}")
        rng = maybe_rng(rng)
        self._tag(K.SkipConnect, c_out, 2)
        self.conv_1 = Conv2d(c_in, c_out // 2, 1, stride=2, rng=rng)
        self.conv_2 = Conv2d(c_in, c_out // 2, 1, stride=2, rng=rng)
        self.bn = BatchNorm2d(c_out, affine)

    def forward(self, x):
        if x.shape[2] % 2 or x.shape[3] % 2:
            raise ValueError(f"FactorizedReduce needs even spatial dims, got {x.shape[2:]}")
        x = F.relu(x)
        return self.bn(F.concat_channels([self.conv_1(x), self.conv_2(x[:, :, 1:, 1:])]))


class SepConv(Operation):
    def __init__(self, kind_, channels, k, stride, affine=True, rng=None):
        rng = maybe_rng(rng)
        self._tag(kind_, channels, stride)
        pad = (k - 1) // 2
        c = channels
        self.op = Sequential(
            ReLU(),
            Conv2d(c, c, k, stride, pad, groups=c, rng=rng),
            Conv2d(c, c, 1, rng=rng),
            BatchNorm2d(c, affine),
            ReLU(),
            Conv2d(c, c, k, 1, pad, groups=c, rng=rng),
            Conv2d(c, c, 1, rng=rng),
            BatchNorm2d(c, affine),
        )

    def forward(self, x):
        return self.op(x)


class DilConv(Operation):
    def __init__(self, kind_, channels, k, stride, dilation=2, affine=True, rng=None):
        rng = maybe_rng(rng)
        self._tag(kind_, channels, stride)
        pad = dilation * (k - 1) // 2
        c = channels
        self.op = Sequential(
            ReLU(),
            Conv2d(c, c, k, stride, pad, dilation=dilation, groups=c, rng=rng),
            Conv2d(c, c, 1, rng=rng),
            BatchNorm2d(c, affine),
        )

    def forward(self, x):
        return self.op(x)


class Pool(Operation):
    def __init__(self, kind_, channels, k, stride, normalize=False):
        self._tag(kind_, channels, stride)
        self.mode = "max" if kind_.family == "MaxPool" else "avg"
        self.k = k
        # inside a mixed edge pools get a non-affine BN so their scale is
        # comparable to the conv outputs
        self.bn = BatchNorm2d(channels, affine=False) if normalize else None

    def forward(self, x):
        y = F.pool2d(x, self.mode, self.k, self.stride, (self.k - 1) // 2)
        return self.bn(y) if self.bn is not None else y


def build(kind_, channels: int, stride: int = 1, rng=None, affine: bool = True, normalize_pool: bool = False) -> Operation:
    """Instantiate one candidate operator mapping [N,C,H,W] -> [N,C,H/s,W/s]."""
    k_ = kind(kind_)
    if channels < 1:
        raise ValueError(f"channels must be >= 1, got {channels}")
    if stride not in (1, 2):
        raise ValueError(f"unsupported stride {stride}; operators support stride 1 or 2")
    rng = maybe_rng(rng)
    if k_ is K.Zero:
        return Zero(channels, stride)
    if k_ is K.SkipConnect:
        return Identity(channels) if stride == 1 else FactorizedReduce(channels, channels, affine, rng)
    if k_.family == "SepConv":
        return SepConv(k_, channels, k_.kernel_size, stride, affine, rng)
    if k_.family == "DilConv":
        return DilConv(k_, channels, k_.kernel_size, stride, 2, affine, rng)
    return Pool(k_, channels, k_.kernel_size, stride, normalize_pool)


def param_count(instance: Module) -> int:
    """Exact number of trainable scalars in a built operator."""
    return instance.num_parameters()
