"""Two-stage hierarchical search and genotype derivation.

Stage 1 trains a supernet whose edges hold one representative per operator
group (plus Zero) and activates a group on each edge. Stage 2 trains a fresh
supernet whose edges hold the members of their activated group (plus Zero)
and picks one operator per edge. Derivation keeps the two strongest incoming
edges of every node, scoring an edge by ``1 - alpha_Zero``.
"""

from __future__ import annotations

import csv
import os
import re
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .clustering import ClusterAssignment
from .data import Dataset
from .genotype import Genotype, count_skip
from .network import GenotypeNetwork, edge_list
from .operators import OperatorKind, SearchSpace, kind
from .supernet import CELL_TYPES, ArchitectureParams, Supernet
from .training import TrainConfig, evaluate, fit, one_level_step

__all__ = [
    "PRESETS",
    "SearchConfig",
    "StageResult",
    "count_skip",
    "derive_genotype",
    "one_level_step",
    "run_search",
    "stage1",
    "stage2",
    "train_final",
]

Z = OperatorKind.Zero


@dataclass(frozen=True)
class SearchConfig:
    stage1_cells: int = 3
    stage2_cells: int = 4
    channels: int = 16
    n_nodes: int = 2
    stage1_epochs: int = 6
    stage2_epochs: int = 6
    final_cells: int = 4
    final_channels: int = 16
    final_epochs: int = 6
    batch_size: int = 32
    eta: float = 0.05
    eta_min: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 3e-4
    delta: float = 0.5
    grad_clip: float = 5.0
    tau: float = 0.2
    warm_start: bool = False
    seed: int = 0

    def train_config(self, epochs: int) -> TrainConfig:
        return TrainConfig(
            epochs=epochs,
            batch_size=self.batch_size,
            eta=self.eta,
            eta_min=self.eta_min,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            delta=self.delta,
            grad_clip=self.grad_clip,
            seed=self.seed,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "SearchConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = sorted(set(obj) - known)
        if unknown:
            raise ValueError(f"unknown search config keys: {', '.join(unknown)}")
        return cls(**obj)


PRESETS: Dict[str, SearchConfig] = {
    "desk": SearchConfig(),
    # full-scale settings for reference; far beyond a laptop CPU with this engine
    "cifar-full": SearchConfig(
        stage1_cells=14,
        stage2_cells=20,
        channels=16,
        n_nodes=4,
        stage1_epochs=80,
        stage2_epochs=80,
        final_cells=20,
        final_channels=36,
        final_epochs=600,
        batch_size=64,
        eta=0.025,
    ),
}


def preset(name: str) -> SearchConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; valid: {', '.join(PRESETS)}") from None


@dataclass(frozen=True)
class StageResult:
    stage: int
    space: str
    candidates: Dict[str, Tuple[Tuple[OperatorKind, ...], ...]]
    beta: Dict[str, Tuple[np.ndarray, ...]]
    activated: Dict[str, Tuple[OperatorKind, ...]]
    groups: Tuple[Tuple[OperatorKind, ...], ...] = ()
    log: Tuple[dict, ...] = ()
    n_nodes: int = 2
    state: Optional[dict] = field(default=None, repr=False, compare=False)

    def alpha(self, cell_type: str) -> List[np.ndarray]:
        return [_softmax(b) for b in self.beta[cell_type]]

    def summary(self) -> dict:
        return {
            "stage": self.stage,
            "activated": {t: [k.value for k in self.activated[t]] for t in CELL_TYPES},
            "final_loss": self.log[-1]["loss"] if self.log else None,
        }


def _softmax(b: np.ndarray) -> np.ndarray:
    e = np.exp(b - b.max())
    return e / e.sum()


def activated_ops(rows, alphas) -> Tuple[OperatorKind, ...]:
    """Per edge, the non-Zero candidate with the largest alpha (first on ties)."""
    out = []
    for row, a in zip(rows, alphas):
        options = [(i, k) for i, k in enumerate(row) if k is not Z]
        if not options:
            raise ValueError("edge has no non-Zero candidate")
        i, k = max(options, key=lambda ik: (a[ik[0]], -ik[0]))
        out.append(k)
    return tuple(out)


def _space_order(space: SearchSpace, kinds) -> List[OperatorKind]:
    order = {k: i for i, k in enumerate(space.kinds)}
    return sorted(set(kinds), key=lambda k: order.get(k, len(order)))


def _as_assignment(space: SearchSpace, representatives) -> ClusterAssignment:
    if isinstance(representatives, ClusterAssignment):
        if not representatives.representatives:
            raise ValueError("cluster assignment has no representatives; run select_representatives first")
        return representatives
    reps = [kind(r) for r in representatives]
    return ClusterAssignment([(r,) for r in reps], reps)


def _train_stage(
    stage: int,
    space: SearchSpace,
    rows: Dict[str, List[tuple]],
    n_cells: int,
    cfg: SearchConfig,
    epochs: int,
    data: Dataset,
    groups=(),
    init_state: Optional[dict] = None,
    on_epoch: Optional[Callable] = None,
) -> StageResult:
    arch = ArchitectureParams(rows, stage="group" if stage == 1 else "member")
    net = Supernet(n_cells, cfg.channels, data.n_classes, arch, cfg.n_nodes, rng=[cfg.seed, stage])
    if init_state is not None:
        _warm_start(net, init_state)

    def epoch_hook(epoch, row):
        if on_epoch is not None:
            on_epoch(stage, epoch, row, arch)

    log = fit(
        net,
        data,
        cfg.train_config(epochs),
        arch_params=net.arch_parameters(),
        on_epoch=epoch_hook,
        context=f"stage {stage}",
    )
    beta = {t: tuple(b.data.astype(np.float64).copy() for b in arch.beta[t]) for t in CELL_TYPES}
    cands = {t: tuple(arch.candidates[t]) for t in CELL_TYPES}
    activated = {t: activated_ops(cands[t], [_softmax(b) for b in beta[t]]) for t in CELL_TYPES}
    return StageResult(
        stage, space.id, cands, beta, activated, tuple(groups), tuple(log), cfg.n_nodes, _keyed_state(net)
    )


def stage1(space: SearchSpace, representatives, cfg: SearchConfig, data: Dataset, on_epoch=None) -> StageResult:
    """Group search: every edge holds Zero plus one representative per group."""
    assignment = _as_assignment(space, representatives)
    if not assignment.representatives:
        raise ValueError("stage 1 needs at least one representative operator")
    for r in assignment.representatives:
        if r not in space:
            raise ValueError(f"representative {r} is not in space {space.id}")
    row = tuple(_space_order(space, list(assignment.representatives) + [Z]))
    n = len(edge_list(cfg.n_nodes))
    rows = {t: [row] * n for t in CELL_TYPES}
    return _train_stage(1, space, rows, cfg.stage1_cells, cfg, cfg.stage1_epochs, data, assignment.groups, on_epoch=on_epoch)


def stage2(space: SearchSpace, stage1_result: StageResult, cfg: SearchConfig, data: Dataset, on_epoch=None) -> StageResult:
    """Member search: each edge holds Zero plus the members of its activated group."""
    groups = stage1_result.groups or tuple((k,) for k in set(sum(stage1_result.activated.values(), ())))
    rows = {}
    for t in CELL_TYPES:
        rows[t] = []
        for e, rep in enumerate(stage1_result.activated[t]):
            group = next((g for g in groups if rep in g), None)
            if group is None:
                raise ValueError(f"{t} edge {e}: activated operator {rep} belongs to no known group")
            for k in group:
                if k not in space:
                    raise ValueError(f"{t} edge {e}: group member {k} is not in space {space.id}")
            rows[t].append(tuple(_space_order(space, list(group) + [Z])))
    init = stage1_result.state if cfg.warm_start else None
    return _train_stage(2, space, rows, cfg.stage2_cells, cfg, cfg.stage2_epochs, data, groups, init, on_epoch)


def derive_genotype(result: StageResult, meta: Optional[dict] = None) -> Genotype:
    """Keep the top-2 incoming edges per node by ``1 - alpha_Zero``; argmax non-Zero op per kept edge."""
    cells = {}
    edges = edge_list(result.n_nodes)
    for t in CELL_TYPES:
        rows = result.candidates[t]
        alphas = result.alpha(t)
        if len(rows) != len(edges):
            raise ValueError(f"{t}: {len(rows)} alpha rows do not fit a {result.n_nodes}-node cell")
        ops = activated_ops(rows, alphas)
        nodes = []
        for j in range(result.n_nodes):
            incoming = [e for e, (_, dst) in enumerate(edges) if dst == j + 2]
            if len(incoming) < 2:
                raise ValueError(f"{t} node {j + 2} has fewer than 2 incoming edges")

            def score(e):
                row = rows[e]
                return 1.0 - (float(alphas[e][row.index(Z)]) if Z in row else 0.0)

            kept = sorted(incoming, key=lambda e: (-score(e), edges[e][0]))[:2]
            kept.sort(key=lambda e: edges[e][0])
            nodes.append([(edges[e][0], ops[e]) for e in kept])
        cells[t] = nodes
    return Genotype(cells["normal"], cells["reduce"], result.space, dict(meta or {}))


def train_final(genotype: Genotype, data: Dataset, cfg: SearchConfig, test: Optional[Dataset] = None, on_epoch=None):
    """Train the discrete network; returns ``(model, test_accuracy, log)``."""
    net = GenotypeNetwork(genotype, cfg.final_cells, cfg.final_channels, data.n_classes, rng=[cfg.seed, 3])
    log = fit(net, data, cfg.train_config(cfg.final_epochs), on_epoch=on_epoch, context="final training")
    acc = evaluate(net, test if test is not None else data)
    return net, acc, log


# -- weight transfer between stages ---------------------------------------------

_OP_PATH = re.compile(r"^(cells\.\d+\.edges\.(\d+)\.)ops\.(\d+)\.")


def _keyed_state(net: Supernet) -> dict:
    """State dict whose edge-operator entries are keyed by operator kind instead of position."""
    state = net.state_dict()
    out = {}
    for name, value in state.items():
        m = _OP_PATH.match(name)
        if m:
            cell = int(name.split(".")[1])
            kinds = net.cells[cell].edges[int(m.group(2))].kinds
            name = f"{m.group(1)}{kinds[int(m.group(3))].value}.{name[m.end():]}"
        out[name] = value
    return out


def _warm_start(net: Supernet, state: dict) -> int:
    """Copy every parameter and BN buffer whose kind-keyed name and shape match; returns the count."""
    target = _keyed_state(net)
    params = dict(net.named_parameters())
    modules = dict(net.named_modules())
    copied = 0
    keyed_to_raw = dict(zip(target, net.state_dict()))
    for key, raw in keyed_to_raw.items():
        src = state.get(key)
        if src is None or src.shape != target[key].shape:
            continue
        if raw in params:
            params[raw].data = src.copy()
        else:
            mod_name, buf = raw.rsplit(".", 1)[0] + ".", raw.rsplit(".", 1)[1]
            setattr(modules[mod_name], buf, src.copy())
        copied += 1
    return copied


# -- pipeline -----------------------------------------------------------------


def write_alpha_csv(path: str, arch: ArchitectureParams, n_nodes: int) -> None:
    edges = edge_list(n_nodes)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cell", "edge", "src", "dst", "op", "beta", "alpha"])
        for t in CELL_TYPES:
            for e, (b, a) in enumerate(zip(arch.beta[t], arch.alpha_numpy(t))):
                for k, bv, av in zip(arch.candidates[t][e], b.data, a):
                    w.writerow([t, e, edges[e][0], edges[e][1], k.value, f"{float(bv):.8f}", f"{float(av):.8f}"])


def run_search(
    space: SearchSpace,
    assignment: ClusterAssignment,
    cfg: SearchConfig,
    train: Dataset,
    out_dir: Optional[str] = None,
    log: Optional[Callable[[str], None]] = None,
) -> Tuple[StageResult, StageResult, Genotype]:
    """stage 1 -> stage 2 -> derivation, optionally writing per-epoch alpha CSVs to ``out_dir``."""
    say = log or (lambda msg: None)

    def on_epoch(stage, epoch, row, arch):
        say(f"stage {stage} epoch {epoch}: loss {row['loss']:.4f} lr {row['lr']:.4g}")
        if out_dir is not None:
            write_alpha_csv(os.path.join(out_dir, f"alpha_stage{stage}_epoch{epoch:03d}.csv"), arch, cfg.n_nodes)

    r1 = stage1(space, assignment, cfg, train, on_epoch)
    say(f"stage 1 activated (normal): {[k.value for k in r1.activated['normal']]}")
    r2 = stage2(space, r1, cfg, train, on_epoch)
    meta = {"seed": cfg.seed, "stage1": r1.summary(), "stage2": r2.summary()}
    geno = derive_genotype(r2, meta)
    return r1, r2, geno
