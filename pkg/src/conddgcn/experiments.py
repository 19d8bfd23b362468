"""Desk-scale ablation over conditional-connection placement, and connection inspection."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .data import PoseSequence, SynthConfig, make_windows, split_sequences, synth_generate, window_starts
from .network import ModelConfig, UCondDGCN, build_model
from .train import AdaMod, LossConfig, dataset_loss, evaluate_mpjpe, fit, lr_schedule, train_step

log = logging.getLogger(__name__)


def two_class_corpus(cfg: RunConfig, seed: int) -> list[PoseSequence]:
    """Alternating gait / reach sequences; each class couples a different set of distant joints."""
    return synth_generate(SynthConfig(count=cfg.count, frames=cfg.seq_frames, fps=cfg.fps, seed=seed,
                                      actions=tuple(cfg.actions), noise_px=cfg.noise_px,
                                      amp_range=(0.0, cfg.amp_max)))


def train_variant(cfg: RunConfig, cond: str, train_seqs, val_seqs, seed: int):
    model = build_model(ModelConfig(**{**cfg.model_kwargs(), "cond": cond}), seed=seed)
    train = make_windows(train_seqs, cfg.frames, cfg.window_stride or None)
    val = make_windows(val_seqs, cfg.frames)
    report = fit(model, train, cfg.epochs, cfg.batch_size, seed=seed,
                 loss_cfg=LossConfig(weight=cfg.motion_weight), base_lr=cfg.lr,
                 milestones=cfg.milestones, weight_decay=cfg.weight_decay)
    return model, evaluate_mpjpe(model, val), report


@dataclass
class AblationResult:
    variants: list[str]
    seeds: list[int]
    mpjpe: dict[str, list[float]] = field(default_factory=dict)  # variant -> per-seed held-out MPJPE (mm)

    def mean(self, variant: str) -> float:
        return float(np.mean(self.mpjpe[variant]))

    def ratio(self, variant: str, baseline: str = "off") -> float:
        return self.mean(variant) / self.mean(baseline)

    def table(self) -> str:
        head = "variant  " + "  ".join(f"seed{s:<4d}" for s in self.seeds) + "      mean"
        rows = [head]
        for v in self.variants:
            vals = "  ".join(f"{x:8.3f}" for x in self.mpjpe[v])
            rows.append(f"{v:<8s} {vals}  {self.mean(v):8.3f}")
        if "off" in self.variants:
            for v in self.variants:
                if v != "off":
                    rows.append(f"ratio {v}/off = {self.ratio(v):.4f}")
        return "\n".join(rows) + "\n"


def ablate(cfg: RunConfig, base_seed: int = 0) -> AblationResult:
    """Train every variant on the same corpus split for each seed; report held-out MPJPE.

    Seed ``s`` draws its own corpus and split from ``base_seed + s`` so that
    the comparison between variants is paired.
    """
    seeds = [base_seed + i for i in range(cfg.seeds)]
    result = AblationResult(list(cfg.variants), seeds, {v: [] for v in cfg.variants})
    for s in seeds:
        train_seqs, val_seqs = split_sequences(two_class_corpus(cfg, s), cfg.val_fraction, seed=s)
        for v in cfg.variants:
            _, err, _ = train_variant(cfg, v, train_seqs, val_seqs, s)
            result.mpjpe[v].append(err)
            log.info("seed %d variant %s held-out MPJPE %.3f mm", s, v, err)
    return result


@dataclass
class OverfitResult:
    initial_loss: float
    checkpoints: list[tuple[int, float]]  # (step, inference-mode loss on the training windows)
    seconds: float

    @property
    def steps(self) -> int:
        return self.checkpoints[-1][0] if self.checkpoints else 0

    @property
    def reduction(self) -> float:
        final = self.checkpoints[-1][1] if self.checkpoints else self.initial_loss
        return 1.0 - final / self.initial_loss


def overfit(model: UCondDGCN, data, max_steps: int = 2000, target: float = 0.9, every: int = 50,
            total_epochs: int = 110, milestones=(80, 90, 100), loss_cfg: LossConfig | None = None,
            lr: float = 5e-3) -> OverfitResult:
    """Full-batch training on a fixed window set until the loss drops by ``target``.

    The epoch-based learning-rate schedule is stretched over ``max_steps``.
    The loss is re-measured in inference mode every ``every`` steps.
    """
    loss_cfg = loss_cfg or LossConfig()
    t0 = time.perf_counter()
    start = dataset_loss(model, data, loss_cfg)
    opt = AdaMod(model.named_parameters(), lr=lr)
    result = OverfitResult(start, [], 0.0)
    model.train()
    for step in range(1, max_steps + 1):
        opt.lr = lr_schedule(int(np.ceil(step * total_epochs / max_steps)), lr, milestones)
        train_step(model, opt, data.inputs, data.targets, loss_cfg)
        if step % every == 0 or step == max_steps:
            cur = dataset_loss(model, data, loss_cfg)
            result.checkpoints.append((step, cur))
            log.info("step %d loss %.5f (%.1f%% below start)", step, cur, 100 * (1 - cur / start))
            if cur <= (1 - target) * start:
                break
    model.eval()
    result.seconds = time.perf_counter() - t0
    return result


# inspection -------------------------------------------------------------------

@dataclass
class Inspection:
    starts: list[int]
    matrices: list[np.ndarray]  # per conditional block: (num_windows, J, J)
    blocks: list[str]


def inspect_connections(model: UCondDGCN, seq: PoseSequence | np.ndarray, step: int | None = None) -> Inspection:
    """Conditional connection matrices for every window of a sequence.

    Windows are non-overlapping by default (``step`` = window length).
    """
    x = seq.normalized_2d() if isinstance(seq, PoseSequence) else np.asarray(seq, dtype=np.float64)
    T = model.cfg.frames
    starts = window_starts(len(x), T, step or T)
    names = [name for name, blk in _named_blocks(model) if blk.conditional]
    if not names:
        raise ValueError("model has no conditional blocks (cond=off)")
    was = model.training
    model.eval()
    try:
        model(np.stack([x[s:s + T] for s in starts]))
        mats = [m.copy() for m in model.connection_matrices()]
    finally:
        model.train(was)
    return Inspection(starts, mats, names)


def _named_blocks(model: UCondDGCN):
    out = [("embed", model.embed)]
    out += [(f"down{i}", b) for i, b in enumerate(model.down)]
    out += [(f"up{i}", b) for i, b in enumerate(model.up)]
    out += [(f"merge{i}", b) for i, b in enumerate(model.merge)]
    return out


def format_grid(matrix: np.ndarray, names=None) -> str:
    """Fixed-width text grid of a J x J matrix, rows and columns labelled."""
    J = matrix.shape[0]
    names = list(names) if names is not None else [str(j) for j in range(J)]
    width = max(10, max(len(n) for n in names) + 1)
    lines = [" " * width + "".join(f"{n[:width - 1]:>{width}s}" for n in names)]
    for i in range(J):
        lines.append(f"{names[i]:<{width}s}" + "".join(f"{v:>{width}.2e}" for v in matrix[i]))
    return "\n".join(lines) + "\n"
