"""Gradient confusion and depth matching.

Gradient confusion is the largest negative inner product between minibatch
gradients taken at the same parameters. Divided by the parameter count it
gives a size-normalised difficulty score, used to pick a search-network depth
whose optimisation behaves like the final network's.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from . import functional as F
from .data import Dataset
from .nn import BatchNorm2d, Conv2d, Linear, Module, ReLU, Sequential, maybe_rng
from .tensor import Tensor
from .training import TrainConfig, fit


def gradient_confusion(grads: Sequence[np.ndarray]) -> float:
    """max over i != j of -<g_i, g_j>."""
    if len(grads) < 2:
        raise ValueError(f"gradient confusion needs at least 2 gradients, got {len(grads)}")
    G = np.stack([np.asarray(g, dtype=np.float64).ravel() for g in grads])
    if G.shape[1] != np.asarray(grads[0]).size:
        raise ValueError("gradients must have equal length")
    gram = G @ G.T
    np.fill_diagonal(gram, np.inf)
    return float(-gram.min())


@dataclass
class ConfusionReport:
    config: dict
    zeta_samples: List[float]
    param_count: int
    zeta_mean: float = field(init=False)
    normalized: float = field(init=False)

    def __post_init__(self):
        if self.param_count <= 0:
            raise ValueError(f"param_count must be positive, got {self.param_count}")
        if not self.zeta_samples:
            raise ValueError("need at least one confusion sample")
        self.zeta_samples = [float(z) for z in self.zeta_samples]
        self.zeta_mean = float(np.mean(self.zeta_samples))
        self.normalized = self.zeta_mean / self.param_count

    @property
    def n_cells(self) -> int:
        return int(self.config["n_cells"])

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class NetConfig:
    """What to profile. ``kind`` is one of toy, toy-skip, supernet, genotype."""

    kind: str = "toy"
    n_cells: int = 4
    channels: int = 8
    n_nodes: int = 2
    space: str = "S1"
    genotype: Optional[object] = None
    tag: str = "candidate"

    def __post_init__(self):
        if self.kind not in ("toy", "toy-skip", "supernet", "genotype"):
            raise ValueError(f"unknown profile net kind {self.kind!r}; valid: toy, toy-skip, supernet, genotype")
        if self.n_cells < 1 or self.channels < 1:
            raise ValueError(f"n_cells and channels must be positive (got {self.n_cells}, {self.channels})")
        if self.kind == "genotype" and self.genotype is None:
            raise ValueError("genotype profile needs a genotype")

    def describe(self) -> dict:
        return {"kind": self.kind, "n_cells": self.n_cells, "channels": self.channels, "tag": self.tag}


class ToyStack(Module):
    """3x3 conv stem, ``depth`` ReLU-Conv3x3-BN blocks, global pool, linear.

    With ``skip`` every block gets a parallel identity path.
    """

    def __init__(self, depth: int, channels: int = 8, n_classes: int = 2, in_channels: int = 3, skip: bool = False,
                 norm: bool = True, rng=None):
        rng = maybe_rng(rng)
        self.skip = skip
        self.stem = Sequential(Conv2d(in_channels, channels, 3, padding=1, rng=rng), BatchNorm2d(channels))
        self.blocks = [
            Sequential(ReLU(), Conv2d(channels, channels, 3, padding=1, rng=rng),
                       *([BatchNorm2d(channels)] if norm else []))
            for _ in range(depth)
        ]
        self.classifier = Linear(channels, n_classes, rng=rng)

    def forward(self, x):
        h = self.stem(x)
        for block in self.blocks:
            h = h + block(h) if self.skip else block(h)
        return self.classifier(F.global_avg_pool(F.relu(h)))


def build_profile_net(cfg: NetConfig, n_classes: int, rng=None):
    """Returns ``(model, arch_params)``; arch_params is empty for fixed nets."""
    if cfg.kind in ("toy", "toy-skip"):
        return ToyStack(cfg.n_cells, cfg.channels, n_classes, skip=cfg.kind == "toy-skip", rng=rng), []
    if cfg.kind == "supernet":
        from .operators import space
        from .supernet import ArchitectureParams, Supernet

        arch = ArchitectureParams.uniform(space(cfg.space).kinds, cfg.n_nodes)
        net = Supernet(cfg.n_cells, cfg.channels, n_classes, arch, cfg.n_nodes, rng=rng)
        return net, net.arch_parameters()
    from .network import GenotypeNetwork

    return GenotypeNetwork(cfg.genotype, cfg.n_cells, cfg.channels, n_classes, rng=rng), []


def minibatch_gradients(model, params: Sequence[Tensor], batches) -> List[np.ndarray]:
    """Flattened loss gradient w.r.t. ``params`` for each ``(images, labels)`` batch."""
    out = []
    for images, labels in batches:
        for p in params:
            p.grad = None
        F.cross_entropy(model(Tensor(images)), labels).backward()
        flat = np.concatenate([
            (p.grad if p.grad is not None else np.zeros_like(p.data)).astype(np.float64).ravel() for p in params
        ])
        if not np.all(np.isfinite(flat)):
            raise FloatingPointError("non-finite gradient while profiling confusion")
        out.append(flat)
    for p in params:
        p.grad = None
    return out


def profile(
    net_config: NetConfig,
    dataset: Dataset,
    train_epochs: int,
    n_iters: int = 10,
    m: int = 8,
    batch_size: int = 32,
    train_cfg: Optional[TrainConfig] = None,
    seed: int = 0,
) -> ConfusionReport:
    """Train the net, then sample confusion over ``n_iters`` groups of ``m`` fresh minibatches.

    Parameters are frozen during sampling. Each group uses ``m`` disjoint
    batches; the parameter count includes architecture logits for supernets.
    """
    if m < 2:
        raise ValueError(f"m must be >= 2, got {m}")
    if len(dataset) < m * batch_size:
        raise ValueError(
            f"dataset of {len(dataset)} images too small for {m} disjoint minibatches of {batch_size}"
        )
    model, arch = build_profile_net(net_config, dataset.n_classes, rng=seed)
    cfg = train_cfg or TrainConfig(epochs=train_epochs, batch_size=batch_size, seed=seed)
    if cfg.epochs != train_epochs:
        cfg = TrainConfig(**{**cfg.to_dict(), "epochs": train_epochs})
    if train_epochs > 0:
        fit(model, dataset, cfg, arch_params=arch, context=f"confusion profile {net_config.describe()}")
    params = list(model.parameters()) + list(arch)
    rng = np.random.default_rng([seed, 1])
    model.train()
    samples = []
    for _ in range(n_iters):
        idx = rng.permutation(len(dataset))[: m * batch_size].reshape(m, batch_size)
        batches = [(dataset.images[i], dataset.labels[i]) for i in idx]
        samples.append(gradient_confusion(minibatch_gradients(model, params, batches)))
    M = int(sum(p.size for p in params))
    return ConfusionReport(net_config.describe(), samples, M)


def match_depth(candidates: Sequence[ConfusionReport], target: ConfusionReport) -> int:
    """Depth of the candidate closest in normalised confusion; ties go to the deeper one."""
    if not candidates:
        raise ValueError("match_depth needs at least one candidate")
    best = min(candidates, key=lambda r: (abs(r.normalized - target.normalized), -r.n_cells))
    return best.n_cells


def report_from_normalized(n_cells: int, normalized: float, tag: str = "candidate") -> ConfusionReport:
    """Report with M = 1 so that ``normalized`` equals the given value (for tabulated inputs)."""
    return ConfusionReport({"n_cells": n_cells, "tag": tag}, [normalized], 1)


def confusion_table(candidates: Sequence[ConfusionReport], target: ConfusionReport) -> List[dict]:
    """One row per report, target last, in the same column layout."""
    rows = []
    for r in list(candidates) + [target]:
        rows.append({
            "tag": r.config.get("tag", ""),
            "n_cells": r.n_cells,
            "channels": r.config.get("channels", ""),
            "params": r.param_count,
            "zeta_mean": r.zeta_mean,
            "confusion": r.normalized,
        })
    return rows
