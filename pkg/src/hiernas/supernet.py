"""Continuous relaxation of the cell search space.

Each edge of a search cell holds every candidate operator and outputs their
softmax-weighted sum. Logits (``beta``) are shared by all normal cells and,
separately, by all reduction cells. Rows may differ in length per edge, which
is how stage 2 gives each edge the members of its own activated group.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import functional as F
from .io import HT1Writer
from .network import Network, edge_list, n_edges, preprocess_inputs
from .nn import BatchNorm2d, Conv2d, Linear, Module, Sequential, maybe_rng
from .operators import OperatorKind, build, kind
from .tensor import Tensor, get_default_dtype, no_grad

CELL_TYPES = ("normal", "reduce")


@dataclass(frozen=True)
class CellSpec:
    n_nodes: int = 4
    reduction: bool = False
    n_inputs: int = 2

    @property
    def edges(self) -> List[tuple]:
        return edge_list(self.n_nodes)

    @property
    def n_edges(self) -> int:
        return n_edges(self.n_nodes)


class ArchitectureParams:
    """Per-edge logit vectors for the normal and the reduction cell type."""

    def __init__(self, candidates: Dict[str, Sequence[Sequence]], stage: str = "group"):
        self.stage = stage
        self.candidates = {t: [tuple(kind(k) for k in row) for row in candidates.get(t, [])] for t in CELL_TYPES}
        dtype = get_default_dtype()
        self.beta = {
            t: [Tensor(np.zeros(len(row), dtype=dtype), requires_grad=True) for row in self.candidates[t]]
            for t in CELL_TYPES
        }
        for t in CELL_TYPES:
            for i, row in enumerate(self.candidates[t]):
                if not row:
                    raise ValueError(f"{t} edge {i} has no candidate operators")

    @classmethod
    def uniform(cls, kinds: Sequence, n_nodes: int, stage: str = "group") -> "ArchitectureParams":
        row = [kind(k) for k in kinds]
        rows = [row] * n_edges(n_nodes)
        return cls({"normal": rows, "reduce": rows}, stage)

    def alpha(self, cell_type: str) -> List[Tensor]:
        return [F.softmax(b) for b in self.beta[cell_type]]

    def alpha_numpy(self, cell_type: str) -> List[np.ndarray]:
        with no_grad():
            return [a.data.astype(np.float64) for a in self.alpha(cell_type)]

    def tensors(self) -> List[Tensor]:
        return [b for t in CELL_TYPES for b in self.beta[t]]

    def num_parameters(self) -> int:
        return int(sum(b.size for b in self.tensors()))

    def snapshot(self) -> dict:
        return {t: [b.data.astype(np.float64).copy() for b in self.beta[t]] for t in CELL_TYPES}


def mixed_edge_forward(x: Tensor, ops: Sequence[Module], alpha_row: Tensor) -> Tensor:
    """Softmax-weighted sum of every candidate's output on ``x``."""
    if len(ops) != alpha_row.shape[0]:
        raise ValueError(f"mixed edge has {len(ops)} operators but alpha row of length {alpha_row.shape[0]}")
    outputs = [op(x) for op in ops]
    shapes = {o.shape for o in outputs}
    if len(shapes) != 1:
        raise ValueError(f"mixed edge operator outputs disagree in shape: {sorted(shapes)}")
    return F.weighted_sum(outputs, alpha_row)


class MixedEdge(Module):
    def __init__(self, kinds: Sequence, channels: int, stride: int, rng=None, affine: bool = False):
        rng = maybe_rng(rng)
        self.kinds = tuple(kind(k) for k in kinds)
        self.ops = [build(k, channels, stride, rng, affine=affine, normalize_pool=True) for k in self.kinds]
        self.recorder: Optional[Callable] = None

    def forward(self, x, alpha_row):
        if self.recorder is None:
            return mixed_edge_forward(x, self.ops, alpha_row)
        outputs = [op(x) for op in self.ops]
        self.recorder({k: o.data for k, o in zip(self.kinds, outputs)})
        return F.weighted_sum(outputs, alpha_row)


class SearchCell(Module):
    def __init__(self, rows, n_nodes, c_pp, c_p, c, reduction, reduction_prev, rng=None):
        rng = maybe_rng(rng)
        self.spec = CellSpec(n_nodes, reduction)
        self.pre0, self.pre1 = preprocess_inputs(c_pp, c_p, c, reduction_prev, False, rng)
        if len(rows) != self.spec.n_edges:
            raise ValueError(f"cell with {n_nodes} nodes needs {self.spec.n_edges} candidate rows, got {len(rows)}")
        self.edges = [
            MixedEdge(row, c, 2 if reduction and src < 2 else 1, rng) for row, (src, _) in zip(rows, self.spec.edges)
        ]
        self.out_channels = c * n_nodes

    @property
    def cell_type(self) -> str:
        return "reduce" if self.spec.reduction else "normal"

    def forward(self, s0, s1, alphas):
        return cell_forward((s0, s1), self, alphas[self.cell_type])


def cell_forward(inputs, cell: SearchCell, alpha_rows: Sequence[Tensor]) -> Tensor:
    """Node j = sum over earlier nodes i of mixed_edge(i, j); output = concat of internal nodes."""
    s0, s1 = inputs
    states = [cell.pre0(s0), cell.pre1(s1)]
    if states[0].shape != states[1].shape:
        raise ValueError(f"cell inputs disagree after preprocessing: {states[0].shape} vs {states[1].shape}")
    e = 0
    for j in range(cell.spec.n_nodes):
        terms = []
        for i in range(len(states)):
            terms.append(cell.edges[e](states[i], alpha_rows[e]))
            e += 1
        states.append(F.add_n(terms))
    return F.concat_channels(states[2:])


class Supernet(Network):
    """Stack of search cells sharing one :class:`ArchitectureParams`."""

    def __init__(
        self,
        n_cells: int,
        channels: int,
        n_classes: int,
        arch: ArchitectureParams,
        n_nodes: int = 4,
        stem_multiplier: int = 3,
        rng=None,
    ):
        self.arch = arch
        self.n_nodes = n_nodes

        def factory(c_pp, c_p, c, reduction, reduction_prev, index, rng_):
            rows = arch.candidates["reduce" if reduction else "normal"]
            return SearchCell(rows, n_nodes, c_pp, c_p, c, reduction, reduction_prev, rng_)

        super().__init__(n_cells, channels, n_classes, factory, stem_multiplier=stem_multiplier, rng=rng)

    def forward(self, x):
        alphas = {t: self.arch.alpha(t) for t in CELL_TYPES}
        return super().forward(x, alphas=alphas)

    def weights(self) -> List[Tensor]:
        return self.parameters()

    def arch_parameters(self) -> List[Tensor]:
        return self.arch.tensors()


def network_forward(x: Tensor, net: Network) -> Tensor:
    return net(x)


class SingleEdgeNet(Module):
    """pointwise stem -> one mixed edge -> global pool -> linear.

    With a single candidate the edge weight is the constant 1, which gives
    the stand-alone network for that operator.
    """

    def __init__(self, kinds: Sequence, channels: int = 8, n_classes: int = 2, in_channels: int = 3, rng=None):
        rng = maybe_rng(rng)
        self.stem = Sequential(Conv2d(in_channels, channels, 1, rng=rng), BatchNorm2d(channels))
        self.arch = ArchitectureParams({"normal": [list(kinds)], "reduce": []})
        self.edge = MixedEdge(kinds, channels, 1, rng)
        self.classifier = Linear(channels, n_classes, rng=rng)

    def forward(self, x):
        h = self.edge(self.stem(x), self.arch.alpha("normal")[0])
        return self.classifier(F.global_avg_pool(h))

    def weights(self) -> List[Tensor]:
        return self.parameters()

    def arch_parameters(self) -> List[Tensor]:
        return self.arch.tensors()


def _find_edge(net, cell: int, edge: int) -> MixedEdge:
    if isinstance(net, SingleEdgeNet):
        if cell != 0 or edge != 0:
            raise ValueError(f"single-edge net has only cell 0 edge 0, got ({cell}, {edge})")
        return net.edge
    cells = getattr(net, "cells", None)
    if cells is None or not 0 <= cell < len(cells):
        raise ValueError(f"unknown cell {cell}; network has {len(cells or [])} cells")
    edges = cells[cell].edges
    if not 0 <= edge < len(edges):
        raise ValueError(f"unknown edge {edge} in cell {cell}; cell has {len(edges)} edges")
    return edges[edge]


def capture_feature_maps(
    net,
    images: np.ndarray,
    cell: int = 0,
    edge: int = 0,
    batch_size: int = 64,
    out_dir: Optional[str] = None,
    on_batch: Optional[Callable[[Dict[OperatorKind, np.ndarray]], None]] = None,
) -> Dict[OperatorKind, np.ndarray]:
    """Record each candidate's output on one edge for every image.

    Zero and SkipConnect are not recorded. Returns ``{kind: [n_images, C*H*W]}``
    unless ``on_batch`` is given, in which case each batch's flattened outputs
    are handed to it and nothing is accumulated. ``out_dir`` additionally
    writes one ``<kind>.ht1`` file per operator with shape [n_images, C, H, W].
    """
    target = _find_edge(net, cell, edge)
    keep = [k for k in target.kinds if k not in (OperatorKind.Zero, OperatorKind.SkipConnect)]
    images = np.asarray(images)
    n = len(images)
    store: Dict[OperatorKind, List[np.ndarray]] = {k: [] for k in keep}
    writers: Dict[OperatorKind, HT1Writer] = {}

    def record(outputs):
        flat = {k: outputs[k].reshape(len(outputs[k]), -1).astype(np.float32) for k in keep}
        if out_dir is not None:
            for k in keep:
                if k not in writers:
                    writers[k] = HT1Writer(os.path.join(out_dir, f"{k.value}.ht1"), (n,) + outputs[k].shape[1:])
                writers[k].write(flat[k])
        if on_batch is not None:
            on_batch(flat)
        else:
            for k in keep:
                store[k].append(flat[k])

    was_training = net.training
    net.eval()
    target.recorder = record
    try:
        with no_grad():
            for start in range(0, n, batch_size):
                net(Tensor(images[start:start + batch_size]))
    finally:
        target.recorder = None
        net.train(was_training)
        for w in writers.values():
            w.close()
    if on_batch is not None:
        return {}
    return {k: np.concatenate(v, axis=0) if v else np.zeros((0, 0), np.float32) for k, v in store.items()}
