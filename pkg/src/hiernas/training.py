"""Optimisers and the training loops shared by search, profiling and evaluation."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import functional as F
from .data import Dataset, minibatches
from .tensor import Tensor, no_grad


class NumericError(RuntimeError):
    """Raised when a loss or gradient stops being finite."""


@dataclass
class TrainConfig:
    epochs: int = 5
    batch_size: int = 32
    eta: float = 0.05  # initial weight learning rate
    eta_min: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 3e-4
    delta: float = 0.5  # architecture learning rate (plain SGD, constant)
    grad_clip: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.eta <= 0 or self.delta <= 0:
            raise ValueError(f"learning rates must be positive (eta={self.eta}, delta={self.delta})")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError(f"invalid epochs={self.epochs} / batch_size={self.batch_size}")

    def to_dict(self) -> dict:
        return asdict(self)


def cosine_lr(eta: float, eta_min: float, epoch: int, epochs: int) -> float:
    if epochs <= 0:
        return eta
    return eta_min + 0.5 * (eta - eta_min) * (1.0 + math.cos(math.pi * epoch / epochs))


class SGD:
    """Momentum SGD with L2 weight decay (heavy-ball, buffer seeded by the first gradient)."""

    def __init__(self, params: Sequence[Tensor], lr: float, momentum: float = 0.0, weight_decay: float = 0.0):
        self.params = list(params)
        self.lr, self.momentum, self.weight_decay = lr, momentum, weight_decay
        self._buf: Dict[int, np.ndarray] = {}

    def step(self) -> None:
        for p in self.params:
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            if self.momentum:
                buf = self._buf.get(id(p))
                buf = g.copy() if buf is None else self.momentum * buf + g
                self._buf[id(p)] = buf
                g = buf
            p.data = (p.data - self.lr * g).astype(p.data.dtype, copy=False)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def clip_grad_norm(params: Sequence[Tensor], max_norm: float) -> float:
    grads = [p.grad for p in params if p.grad is not None]
    total = math.sqrt(sum(float(np.vdot(g, g)) for g in grads))
    if max_norm and total > max_norm:
        scale = max_norm / (total + 1e-6)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return total


class OneLevelOptimizer:
    """Updates weights and architecture logits from one shared gradient."""

    def __init__(self, weights: Sequence[Tensor], arch: Sequence[Tensor], cfg: TrainConfig):
        self.cfg = cfg
        self.w = SGD(weights, cfg.eta, cfg.momentum, cfg.weight_decay)
        self.a = SGD(arch, cfg.delta) if arch else None

    def set_epoch(self, epoch: int) -> None:
        self.w.lr = cosine_lr(self.cfg.eta, self.cfg.eta_min, epoch, self.cfg.epochs)

    def zero_grad(self) -> None:
        self.w.zero_grad()
        if self.a is not None:
            self.a.zero_grad()


def _loss(model, images, labels) -> Tensor:
    return F.cross_entropy(model(Tensor(images)), labels)


def one_level_step(model, images, labels, opt: OneLevelOptimizer) -> float:
    """One forward/backward at (w, beta), then step both from those gradients."""
    opt.zero_grad()
    loss = _loss(model, images, labels)
    value = float(loss.data)
    if not math.isfinite(value):
        raise NumericError(f"non-finite training loss {value} (batch of {len(labels)}, lr={opt.w.lr:g})")
    loss.backward()
    norm = clip_grad_norm(opt.w.params, opt.cfg.grad_clip)
    if not math.isfinite(norm):
        raise NumericError(f"non-finite weight gradient norm {norm}")
    opt.w.step()
    if opt.a is not None:
        opt.a.step()
    return value


def evaluate(model, ds: Dataset, batch_size: int = 128) -> float:
    """Classification accuracy in eval mode."""
    was = model.training
    model.eval()
    correct = 0
    with no_grad():
        for start in range(0, len(ds), batch_size):
            logits = model(Tensor(ds.images[start:start + batch_size])).data
            correct += int((logits.argmax(axis=1) == ds.labels[start:start + batch_size]).sum())
    model.train(was)
    return correct / max(len(ds), 1)


def fit(
    model,
    train: Dataset,
    cfg: TrainConfig,
    arch_params: Optional[Sequence[Tensor]] = None,
    test: Optional[Dataset] = None,
    on_epoch: Optional[Callable[[int, dict], None]] = None,
    context: str = "",
) -> List[dict]:
    """Train for ``cfg.epochs``; with ``arch_params`` the one-level scheme is used."""
    weights = model.weights() if hasattr(model, "weights") else model.parameters()
    opt = OneLevelOptimizer(weights, list(arch_params or []), cfg)
    rng = np.random.default_rng(cfg.seed)
    log = []
    model.train()
    for epoch in range(cfg.epochs):
        opt.set_epoch(epoch)
        losses = []
        for images, labels in minibatches(train, cfg.batch_size, rng):
            try:
                losses.append(one_level_step(model, images, labels, opt))
            except NumericError as exc:
                raise NumericError(f"{context} epoch {epoch}: {exc}".strip()) from None
        row = {"epoch": epoch, "lr": opt.w.lr, "loss": float(np.mean(losses)) if losses else float("nan")}
        if test is not None:
            row["test_acc"] = evaluate(model, test)
        log.append(row)
        if on_epoch is not None:
            on_epoch(epoch, row)
    return log
