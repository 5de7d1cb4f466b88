"""Stacking cells into a classifier network.

Layout: stem -> cells -> global average pool -> linear. Each cell consumes
the outputs of the two previous cells (both equal the stem output for the
first cell). Reduction cells sit at ``n_cells // 3`` and ``2 * n_cells // 3``
and double the channel count.
"""

from __future__ import annotations

from typing import Callable, List

from . import functional as F
from .nn import BatchNorm2d, Conv2d, Linear, Module, Sequential, maybe_rng
from .operators import FactorizedReduce, ReLUConvBN, build, kind


def reduction_indices(n_cells: int) -> List[int]:
    if n_cells < 1:
        raise ValueError(f"n_cells must be >= 1, got {n_cells}")
    return sorted({n_cells // 3, 2 * n_cells // 3})


def n_edges(n_nodes: int) -> int:
    return sum(2 + j for j in range(n_nodes))


def edge_list(n_nodes: int) -> List[tuple]:
    """(source, target) node ids per edge; inputs are 0 and 1, internal nodes 2.."""
    return [(i, j + 2) for j in range(n_nodes) for i in range(2 + j)]


def preprocess_inputs(c_pp, c_p, c, reduction_prev, affine, rng):
    pre0 = FactorizedReduce(c_pp, c, affine, rng) if reduction_prev else ReLUConvBN(c_pp, c, 1, 1, 0, affine, rng)
    pre1 = ReLUConvBN(c_p, c, 1, 1, 0, affine, rng)
    return pre0, pre1


class Network(Module):
    """Generic cell stack; ``cell_factory`` builds each cell.

    ``cell_factory(c_pp, c_p, c, reduction, reduction_prev, index, rng)`` must
    return a module with an ``out_channels`` attribute whose ``forward`` takes
    ``(s0, s1, **kwargs)``.
    """

    def __init__(
        self,
        n_cells: int,
        channels: int,
        n_classes: int,
        cell_factory: Callable,
        in_channels: int = 3,
        stem_multiplier: int = 3,
        rng=None,
    ):
        rng = maybe_rng(rng)
        self.n_cells, self.channels, self.n_classes = n_cells, channels, n_classes
        self.reductions = reduction_indices(n_cells)
        c_stem = stem_multiplier * channels
        # pointwise stem: all spatial mixing has to come from searched operators
        self.stem = Sequential(Conv2d(in_channels, c_stem, 1, rng=rng), BatchNorm2d(c_stem))
        c_pp, c_p, c = c_stem, c_stem, channels
        self.cells = []
        reduction_prev = False
        for i in range(n_cells):
            reduction = i in self.reductions
            if reduction:
                c *= 2
            cell = cell_factory(c_pp, c_p, c, reduction, reduction_prev, i, rng)
            self.cells.append(cell)
            reduction_prev = reduction
            c_pp, c_p = c_p, cell.out_channels
        self.classifier = Linear(c_p, n_classes, rng=rng)

    def check_input(self, x):
        if x.ndim != 4:
            raise ValueError(f"network input must be [N,C,H,W], got {x.shape}")
        need = 2 ** (len(self.reductions) + 2)
        h, w = x.shape[2:]
        if h < need or w < need:
            raise ValueError(f"input {h}x{w} too small for {len(self.reductions)} reductions; need >= {need}x{need}")
        step = 2 ** len(self.reductions)
        if h % step or w % step:
            raise ValueError(f"input {h}x{w} must be divisible by {step} for {len(self.reductions)} reductions")

    def forward(self, x, **cell_kwargs):
        self.check_input(x)
        s0 = s1 = self.stem(x)
        for cell in self.cells:
            s0, s1 = s1, cell(s0, s1, **cell_kwargs)
        return self.classifier(F.global_avg_pool(s1))


class GenotypeCell(Module):
    """Discrete cell: each internal node sums its two chosen operator outputs."""

    def __init__(self, nodes, c_pp, c_p, c, reduction, reduction_prev, affine=True, rng=None):
        rng = maybe_rng(rng)
        self.reduction = reduction
        self.pre0, self.pre1 = preprocess_inputs(c_pp, c_p, c, reduction_prev, affine, rng)
        self.sources = []
        self.ops = []
        for node in nodes:
            for src, tag in node:
                stride = 2 if reduction and src < 2 else 1
                self.sources.append(src)
                self.ops.append(build(kind(tag), c, stride, rng, affine))
        self.n_nodes = len(nodes)
        self.out_channels = c * self.n_nodes

    def forward(self, s0, s1):
        states = [self.pre0(s0), self.pre1(s1)]
        for j in range(self.n_nodes):
            pair = range(2 * j, 2 * j + 2)
            states.append(F.add_n([self.ops[e](states[self.sources[e]]) for e in pair]))
        return F.concat_channels(states[2:])


class GenotypeNetwork(Network):
    def __init__(self, genotype, n_cells: int, channels: int, n_classes: int, stem_multiplier: int = 3, rng=None):
        def factory(c_pp, c_p, c, reduction, reduction_prev, index, rng_):
            nodes = genotype.reduce if reduction else genotype.normal
            return GenotypeCell(nodes, c_pp, c_p, c, reduction, reduction_prev, True, rng_)

        super().__init__(n_cells, channels, n_classes, factory, stem_multiplier=stem_multiplier, rng=rng)
        self.genotype = genotype
