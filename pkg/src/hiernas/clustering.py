"""Operator correlation estimation and grouping.

Operators whose feature maps on the same edge are strongly Pearson-correlated
compete for the same role, so they are merged into one group and only a
representative enters the first search stage.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from importlib import resources
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .io import read_ht1
from .operators import OperatorKind, SearchSpace, kind, space as get_space

Label = Union[OperatorKind, str]


def pearson(x, y) -> float:
    """Two-pass Pearson correlation in float64."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValueError(f"pearson: length mismatch {x.size} vs {y.size}")
    if x.size < 2:
        raise ValueError("pearson: need at least 2 samples")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise ValueError("pearson: constant input has zero variance")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))


@dataclass
class CorrelationMatrix:
    labels: Tuple[Label, ...]
    values: np.ndarray

    def __post_init__(self):
        self.labels = tuple(_label(l) for l in self.labels)
        self.values = np.asarray(self.values, dtype=np.float64)
        n = len(self.labels)
        if self.values.shape != (n, n):
            raise ValueError(f"correlation matrix shape {self.values.shape} does not match {n} labels")
        if not np.array_equal(self.values, self.values.T):
            raise ValueError("correlation matrix must be symmetric")
        if not np.all(np.diag(self.values) == 1.0):
            raise ValueError("correlation matrix must have a unit diagonal")
        if np.any(np.abs(self.values) > 1.0):
            raise ValueError("correlation entries must lie in [-1, 1]")

    def __getitem__(self, pair) -> float:
        a, b = pair
        return float(self.values[self.index(a), self.index(b)])

    def index(self, label) -> int:
        return self.labels.index(_label(label))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["op"] + [str(l) for l in self.labels])
        for l, row in zip(self.labels, self.values):
            w.writerow([str(l)] + [f"{v:.6f}" for v in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "CorrelationMatrix":
        rows = [r for r in csv.reader(io.StringIO(text)) if r]
        if not rows:
            raise ValueError("empty correlation CSV")
        header = rows[0][1:]
        body = rows[1:]
        if [r[0] for r in body] != header:
            raise ValueError("correlation CSV row labels must match the header")
        values = np.array([[float(v) for v in r[1:]] for r in body])
        # round-trip through text can leave tiny asymmetries
        values = 0.5 * (values + values.T)
        np.fill_diagonal(values, 1.0)
        return cls(tuple(header), values)

    @classmethod
    def load(cls, path) -> "CorrelationMatrix":
        with open(path) as fh:
            return cls.from_csv(fh.read())


def _label(l):
    try:
        return kind(l)
    except ValueError:
        return str(l)


class CorrelationAccumulator:
    """Streaming pairwise Pearson over per-operator feature streams.

    Keeps shifted sums and a Gram matrix, so streams never need to be held in
    memory at once. The shift (first batch mean) guards against cancellation.
    """

    def __init__(self, labels: Sequence[Label]):
        self.labels = tuple(_label(l) for l in labels)
        k = len(self.labels)
        self.n = 0
        self.shift: Optional[np.ndarray] = None
        self.sums = np.zeros(k)
        self.gram = np.zeros((k, k))

    def update(self, batch: Union[Mapping, Sequence[np.ndarray]]) -> None:
        arrays = [batch[l] for l in self.labels] if isinstance(batch, Mapping) else list(batch)
        if len(arrays) != len(self.labels):
            raise ValueError(f"expected {len(self.labels)} streams, got {len(arrays)}")
        flat = [np.asarray(a, dtype=np.float64).ravel() for a in arrays]
        sizes = {f.size for f in flat}
        if len(sizes) != 1:
            raise ValueError(f"stream length mismatch within batch: {sorted(sizes)}")
        x = np.stack(flat)
        if self.shift is None:
            self.shift = x.mean(axis=1)
        x -= self.shift[:, None]
        self.n += x.shape[1]
        self.sums += x.sum(axis=1)
        self.gram += x @ x.T

    def result(self) -> CorrelationMatrix:
        if self.n < 2:
            raise ValueError("need at least 2 samples to estimate correlation")
        mu = self.sums / self.n
        cov = self.gram / self.n - np.outer(mu, mu)
        var = np.diag(cov).copy()
        if np.any(var <= 0):
            flat = [str(l) for l, v in zip(self.labels, var) if v <= 0]
            raise ValueError(f"zero-variance stream(s): {', '.join(flat)}")
        sd = np.sqrt(var)
        r = cov / np.outer(sd, sd)
        r = np.clip(0.5 * (r + r.T), -1.0, 1.0)
        np.fill_diagonal(r, 1.0)
        return CorrelationMatrix(self.labels, r)


def estimate_correlation(dumps: Mapping[Label, Union[np.ndarray, str]], chunk_rows: int = 256) -> CorrelationMatrix:
    """Pairwise Pearson over the concatenated flattened values of each stream.

    ``dumps`` maps operator -> array ``[n_images, ...]`` or a path to an HT1 file.
    """
    labels = list(dumps)
    arrays = [read_ht1(v, mmap=True) if isinstance(v, str) else np.asarray(v) for v in dumps.values()]
    lengths = {a.size for a in arrays}
    if len(lengths) != 1:
        detail = ", ".join(f"{l}={a.size}" for l, a in zip(labels, arrays))
        raise ValueError(f"stream length mismatch: {detail}")
    rows = {len(a) for a in arrays}
    acc = CorrelationAccumulator(labels)
    if len(rows) == 1 and arrays[0].ndim > 1:
        n = len(arrays[0])
        for start in range(0, n, chunk_rows):
            acc.update([a[start:start + chunk_rows] for a in arrays])
    else:
        acc.update(arrays)
    return acc.result()


@dataclass
class ClusterAssignment:
    groups: List[Tuple[OperatorKind, ...]]
    representatives: List[OperatorKind]

    def __post_init__(self):
        self.groups = [tuple(kind(k) for k in g) for g in self.groups]
        self.representatives = [kind(k) for k in self.representatives]
        seen = set()
        for g in self.groups:
            if not g:
                raise ValueError("empty operator group")
            if seen.intersection(g):
                raise ValueError(f"operator groups overlap: {sorted(map(str, seen.intersection(g)))}")
            seen.update(g)
        if self.representatives and len(self.representatives) != len(self.groups):
            raise ValueError("need one representative per group")
        for rep, g in zip(self.representatives, self.groups):
            if rep not in g:
                raise ValueError(f"representative {rep} is not a member of its group {[str(k) for k in g]}")

    def group_of(self, op) -> Tuple[OperatorKind, ...]:
        op = kind(op)
        for g in self.groups:
            if op in g:
                return g
        raise KeyError(f"{op} is in no group")

    def members_of(self, representative) -> Tuple[OperatorKind, ...]:
        rep = kind(representative)
        for r, g in zip(self.representatives, self.groups):
            if r is rep:
                return g
        raise KeyError(f"{rep} is not a representative")

    def as_sets(self) -> set:
        return {frozenset(g) for g in self.groups}

    def to_dict(self) -> dict:
        return {
            "groups": [[k.value for k in g] for g in self.groups],
            "representatives": [k.value for k in self.representatives],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ClusterAssignment":
        return cls(obj["groups"], obj.get("representatives", []))

    @classmethod
    def load(cls, path) -> "ClusterAssignment":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def cluster(corr: CorrelationMatrix, tau: float = 0.2, space: Optional[SearchSpace] = None) -> ClusterAssignment:
    """Single-linkage grouping: operators joined by any chain of pairs with r >= tau.

    Zero never takes part. With ``space``, functional operators missing from the
    matrix become singleton groups and ordering follows the space.
    """
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must be in (0, 1), got {tau}")
    labels = [l for l in corr.labels if l is not OperatorKind.Zero]
    if space is not None:
        order = {k: i for i, k in enumerate(space.kinds)}
        unknown = [str(l) for l in labels if l not in order]
        if unknown:
            raise ValueError(f"matrix labels not in space {space.id}: {', '.join(unknown)}")
        labels = sorted(labels, key=order.__getitem__) + [k for k in space.functional_kinds if k not in labels]
    parent = {l: l for l in labels}

    def find(a):
        while parent[a] is not a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    in_matrix = [l for l in labels if l in corr.labels]
    for i, a in enumerate(in_matrix):
        for b in in_matrix[i + 1:]:
            if corr[a, b] >= tau:
                ra, rb = find(a), find(b)
                if ra is not rb:
                    # keep the earlier label as root so output order is stable
                    if labels.index(ra) < labels.index(rb):
                        parent[rb] = ra
                    else:
                        parent[ra] = rb
    groups: Dict[object, list] = {}
    for l in labels:
        groups.setdefault(find(l), []).append(l)
    return ClusterAssignment([tuple(g) for g in groups.values()], [])


def _selection_key(op: OperatorKind, order: Dict[OperatorKind, int]):
    # identity has no kernel (0) and wins; among convs/pools 3x3 beats larger kernels
    return (op.kernel_size, order.get(op, len(order)))


def select_representatives(assignment: ClusterAssignment, space: SearchSpace) -> ClusterAssignment:
    """Pick one key operator per group: the smallest kernel, ties by space order."""
    order = {k: i for i, k in enumerate(space.kinds)}
    reps = [min(g, key=lambda op: _selection_key(op, order)) for g in assignment.groups]
    return ClusterAssignment(assignment.groups, reps)


# -- reference data ------------------------------------------------------------


def _fixture_text(name: str) -> str:
    return resources.files("hiernas").joinpath("fixtures", name).read_text()


def fixture_path(name: str) -> str:
    return str(resources.files("hiernas").joinpath("fixtures", name))


def reference_matrix(space_id: str) -> CorrelationMatrix:
    """Constructed correlation matrix encoding the reference grouping of a space."""
    sp = get_space(space_id)
    return CorrelationMatrix.from_csv(_fixture_text(f"{sp.id.lower()}.csv"))


def reference_groups(space_id: str) -> ClusterAssignment:
    """Reference groups and key operators for one of S1-S5."""
    sp = get_space(space_id)
    return ClusterAssignment.from_dict(json.loads(_fixture_text(f"{sp.id.lower()}_groups.json")))


# -- live pipeline -------------------------------------------------------------


def correlation_pipeline(
    space: SearchSpace,
    train,
    cfg,
    n_cells: int = 3,
    channels: int = 8,
    n_nodes: int = 2,
    n_capture: int = 512,
    cell: int = 0,
    edge: int = 0,
    out_dir: Optional[str] = None,
    log=None,
) -> CorrelationMatrix:
    """Train a supernet over the whole space, then correlate candidate outputs on one edge."""
    from .supernet import ArchitectureParams, Supernet, capture_feature_maps
    from .training import fit

    arch = ArchitectureParams.uniform(space.kinds, n_nodes)
    net = Supernet(n_cells, channels, train.n_classes, arch, n_nodes, rng=cfg.seed)
    fit(net, train, cfg, arch_params=net.arch_parameters(), context="correlation supernet",
        on_epoch=(lambda e, row: log(f"correlation supernet epoch {e}: loss {row['loss']:.4f}")) if log else None)
    target = net.cells[cell].edges[edge] if 0 <= cell < len(net.cells) else None
    if target is None:
        raise ValueError(f"unknown cell {cell}")
    labels = [k for k in target.kinds if k not in (OperatorKind.Zero, OperatorKind.SkipConnect)]
    acc = CorrelationAccumulator(labels)
    images = train.images[:n_capture]
    capture_feature_maps(net, images, cell, edge, out_dir=out_dir, on_batch=acc.update)
    return acc.result()
