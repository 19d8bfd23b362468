"""Losses, the AdaMod optimizer, the step learning-rate schedule and the training loop."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor
from .metrics import mpjpe
from .network import UCondDGCN, copy_model, save_checkpoint

log = logging.getLogger(__name__)


@dataclass
class LossConfig:
    weight: float = 0.1                       # lambda on the motion term
    deltas: tuple[int, ...] = (1, 2, 4, 8, 16)

    def __post_init__(self):
        self.deltas = tuple(int(d) for d in self.deltas)
        if self.weight < 0:
            raise ValueError("motion loss weight must be non-negative")
        if any(d < 1 for d in self.deltas):
            raise ValueError("motion deltas must be positive")


def position_loss(pred, gt) -> Tensor:
    """Mean Euclidean distance per joint over (batch, frames, joints)."""
    return dc.mean(dc.l2_norm(dc.sub(pred, gt), axis=-1))


def motion_loss(pred, gt, deltas: Sequence[int]) -> Tensor:
    """Mean absolute difference of temporal displacement encodings.

    For each delta the encoding is X[t + delta] - X[t]; the per-delta means
    are averaged. Arrays are (B, T, J, 3).
    """
    pred = pred if isinstance(pred, Tensor) else Tensor(pred)
    gt = np.asarray(gt.data if isinstance(gt, Tensor) else gt, dtype=pred.dtype)
    T = pred.shape[1]
    valid = [d for d in deltas if d < T]
    if not valid:
        raise ValueError(f"no motion delta in {tuple(deltas)} is shorter than the {T}-frame window")
    terms = []
    for d in valid:
        m_pred = pred[:, d:] - pred[:, :-d]
        m_gt = gt[:, d:] - gt[:, :-d]
        terms.append(dc.mean(dc.abs(m_pred - m_gt)))
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total * (1.0 / len(terms))


def total_loss(pred, gt, cfg: LossConfig | None = None) -> Tensor:
    cfg = cfg or LossConfig()
    loss = position_loss(pred, gt)
    if cfg.weight > 0:
        loss = loss + motion_loss(pred, gt, cfg.deltas) * cfg.weight
    return loss


def lr_schedule(epoch: int, base: float = 5e-3, milestones: Sequence[int] = (80, 90, 100),
                gamma: float = 0.1) -> float:
    """Step decay: ``base`` through the first milestone epoch, times ``gamma`` after each."""
    return base * gamma ** sum(epoch > m for m in milestones)


class AdaMod:
    """Adam with per-coordinate step sizes capped by their own exponential moving average.

    Weight decay is added to the gradient (L2 style).
    """

    def __init__(self, params: dict[str, Tensor], lr: float = 5e-3, betas=(0.9, 0.999),
                 beta3: float = 0.9999, eps: float = 1e-8, weight_decay: float = 1e-5):
        self.params = dict(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.beta3 = beta3
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.exp_avg = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.exp_avg_sq = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.exp_avg_lr = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient in parameter group {name!r}")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        base_step = self.lr * np.sqrt(bc2) / bc1
        for name, p in self.params.items():
            g = grads[name]
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            m, v, s = self.exp_avg[name], self.exp_avg_sq[name], self.exp_avg_lr[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            step_size = base_step / (np.sqrt(v) + self.eps)
            s *= self.beta3
            s += (1.0 - self.beta3) * step_size
            p.data = (p.data - np.minimum(step_size, s) * m).astype(p.dtype, copy=False)


def adamod_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdaMod) -> dict[str, Tensor]:
    state.step(grads)
    return params


# data ----------------------------------------------------------------------

@dataclass
class WindowSet:
    """Training windows: normalized 2D inputs and root-relative 3D targets (meters)."""

    inputs: np.ndarray   # (N, T, J, 2)
    targets: np.ndarray  # (N, T, J, 3)
    labels: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.inputs)


@dataclass
class TrainingReport:
    rows: list[tuple[int, int, float, float, float]] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)
    best_score: float = float("inf")  # validation MPJPE, or train loss without validation
    best_epoch: int = 0
    best_model: UCondDGCN | None = None

    def lines(self) -> list[str]:
        return [f"{e}, {s}, {lr!r}, {tl!r}, {vm!r}" for e, s, lr, tl, vm in self.rows]


def evaluate_mpjpe(model: UCondDGCN, data: WindowSet, batch_size: int = 64, unit_mm: float = 1000.0) -> float:
    """Inference-mode MPJPE in millimeters over a window set."""
    was = model.training
    model.eval()
    preds = [model(data.inputs[i:i + batch_size]).data for i in range(0, len(data), batch_size)]
    model.train(was)
    return mpjpe(np.concatenate(preds) * unit_mm, data.targets * unit_mm)


def dataset_loss(model: UCondDGCN, data: WindowSet, loss_cfg: LossConfig | None = None,
                 batch_size: int = 64) -> float:
    """Inference-mode total loss averaged over a window set."""
    was = model.training
    model.eval()
    total, n = 0.0, 0
    for i in range(0, len(data), batch_size):
        x, y = data.inputs[i:i + batch_size], data.targets[i:i + batch_size]
        total += float(total_loss(model(x), y, loss_cfg).data) * len(x)
        n += len(x)
    model.train(was)
    return total / n


def train_step(model: UCondDGCN, opt: AdaMod, x: np.ndarray, y: np.ndarray,
               loss_cfg: LossConfig) -> float:
    params = model.named_parameters()
    with dc.Tape() as tape:
        loss = total_loss(model(x), y, loss_cfg)
    grads = tape.backward(loss, leaves=params.values(), accumulate=False)
    opt.step({k: grads[p] for k, p in params.items()})
    return float(loss.data)


def fit(model: UCondDGCN, train: WindowSet, epochs: int, batch_size: int = 256, seed: int = 0,
        val: WindowSet | None = None, loss_cfg: LossConfig | None = None, base_lr: float = 5e-3,
        milestones: Sequence[int] = (80, 90, 100), weight_decay: float = 1e-5,
        report_path: str | Path | None = None, checkpoint_path: str | Path | None = None,
        optimizer: AdaMod | None = None) -> TrainingReport:
    """Mini-batch training with seeded shuffling and active dropout.

    One report row per epoch (``epoch, step, lr, train_loss, val_mpjpe``);
    the model with the best validation MPJPE is kept in the report and
    written to ``checkpoint_path`` if given.
    """
    if len(train) == 0:
        raise ValueError("cannot train on an empty dataset")
    loss_cfg = loss_cfg or LossConfig()
    rng = np.random.default_rng(seed)
    model.seed_dropout(seed)
    model.train()
    opt = optimizer or AdaMod(model.named_parameters(), lr=base_lr, weight_decay=weight_decay)
    report = TrainingReport()
    fh = open(report_path, "a") if report_path else None
    step = 0
    try:
        for epoch in range(1, epochs + 1):
            opt.lr = lr_schedule(epoch, base_lr, milestones)
            order = rng.permutation(len(train))
            losses = []
            for i in range(0, len(order), batch_size):
                idx = np.sort(order[i:i + batch_size])
                loss = train_step(model, opt, train.inputs[idx], train.targets[idx], loss_cfg)
                losses.append(loss)
                report.step_losses.append(loss)
                step += 1
            val_mpjpe = evaluate_mpjpe(model, val) if val is not None and len(val) else float("nan")
            row = (epoch, step, opt.lr, float(np.mean(losses)), val_mpjpe)
            report.rows.append(row)
            if fh:
                fh.write(report.lines()[-1] + "\n")
                fh.flush()
            log.info("epoch %d step %d lr %.2e loss %.5f val %.2f mm", *row)
            score = val_mpjpe if np.isfinite(val_mpjpe) else row[3]
            if score < report.best_score:
                report.best_score = score
                report.best_epoch = epoch
                report.best_model = copy_model(model)
                if checkpoint_path:
                    save_checkpoint(report.best_model, checkpoint_path)
    finally:
        if fh:
            fh.close()
    model.eval()
    return report
