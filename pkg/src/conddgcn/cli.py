"""Command-line entry point: ``conddgcn <command> [flags]``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .data import (MM_PER_UNIT, PoseFileError, PoseSequence, SynthConfig, infer_sequence, load_poses,
                   make_windows, save_poses, split_sequences, synth_generate)
from .experiments import ablate, format_grid, inspect_connections
from .gradcheck import run_gradcheck
from .metrics import AUC_THRESHOLDS, evaluate, pck_curve, root_relative
from .network import COND_PLACEMENTS, CheckpointError, ModelConfig, build_model, load_checkpoint, save_checkpoint
from .plotting import write_curve_svg, write_heatmap_pgm
from .train import LossConfig, fit

log = logging.getLogger("conddgcn")


class CommandError(RuntimeError):
    pass


def _out_dir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require(value, flag):
    if not value:
        raise CommandError(f"{flag} is required for this command")
    return value


def _pose_files(path) -> list[Path]:
    p = Path(path)
    if p.is_dir():
        files = sorted(p.glob("*.dgp"))
        if not files:
            raise CommandError(f"no .dgp files in {p}")
        return files
    if not p.is_file():
        raise CommandError(f"input not found: {p}")
    return [p]


def _config(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.cond:
        cfg.cond = args.cond
    return cfg


# commands ----------------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    seqs = synth_generate(SynthConfig(count=cfg.count, frames=cfg.seq_frames, fps=cfg.fps, seed=args.seed,
                                      actions=tuple(cfg.actions), noise_px=cfg.noise_px,
                                      amp_range=(0.0, cfg.amp_max)))
    for i, seq in enumerate(seqs):
        save_poses(seq, out / f"seq_{i:03d}_{seq.action}.dgp")
    print(f"wrote {len(seqs)} sequences of {cfg.seq_frames} frames to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    seqs = [load_poses(f) for f in _pose_files(_require(args.input, "--input"))]
    if any(s.poses3d is None or s.poses2d is None for s in seqs):
        raise CommandError("training files need both 2D and 3D poses")
    out = _out_dir(args)
    train_seqs, val_seqs = split_sequences(seqs, cfg.val_fraction, seed=args.seed) if len(seqs) > 1 else (seqs, [])
    model = build_model(ModelConfig(layout=seqs[0].layout, **cfg.model_kwargs()), seed=args.seed)
    train = make_windows(train_seqs, cfg.frames, cfg.window_stride or None)
    val = make_windows(val_seqs, cfg.frames) if val_seqs else None
    ckpt = Path(args.checkpoint) if args.checkpoint else out / "model.ckpt"
    report_path = out / "report.csv"
    report_path.write_text("epoch, step, lr, train_loss, val_mpjpe_mm\n")
    report = fit(model, train, cfg.epochs, cfg.batch_size, seed=args.seed, val=val,
                 loss_cfg=LossConfig(weight=cfg.motion_weight), base_lr=cfg.lr, milestones=cfg.milestones,
                 weight_decay=cfg.weight_decay, report_path=report_path, checkpoint_path=ckpt)
    last = report.rows[-1]
    print(f"trained {cfg.epochs} epochs ({last[1]} steps) on {len(train)} windows")
    print(f"final train loss {last[3]!r}")
    print(f"best score {report.best_score!r} at epoch {report.best_epoch}; checkpoint {ckpt}")
    return 0


def cmd_infer(args) -> int:
    model = load_checkpoint(_require(args.checkpoint, "--checkpoint"))
    seq = load_poses(_pose_files(_require(args.input, "--input"))[0])
    if seq.poses2d is None:
        raise CommandError("input file has no 2D poses")
    pred = infer_sequence(model, seq, args.window_step)
    out = Path(args.out) if args.out else Path(args.input).with_suffix(".pred.dgp")
    if out.is_dir():
        out = out / Path(args.input).name
    save_poses(pred, out)
    print(f"wrote {pred.frames} frames of 3D poses to {out}")
    return 0


def _stack_3d(files, what):
    seqs = [load_poses(f) for f in files]
    if any(s.poses3d is None for s in seqs):
        raise CommandError(f"{what} file without 3D poses")
    labels = [s.action or "unlabelled" for s in seqs for _ in range(s.frames)]
    return np.concatenate([s.poses3d for s in seqs]), labels


def cmd_eval(args) -> int:
    pred_files = _pose_files(_require(args.input, "--input"))
    gt_files = _pose_files(_require(args.gt, "--gt"))
    if [f.name for f in pred_files] != [f.name for f in gt_files] and len(pred_files) > 1:
        raise CommandError("prediction and ground-truth directories hold different file names")
    pred, _ = _stack_3d(pred_files, "prediction")
    gt, labels = _stack_3d(gt_files, "ground-truth")
    if pred.shape != gt.shape:
        raise CommandError(f"prediction shape {pred.shape} does not match ground truth {gt.shape}")
    report = evaluate(pred, gt, actions=labels if len(set(labels)) > 1 else None)
    print(report.to_text(), end="")
    if args.out:
        out = _out_dir(args)
        (out / "eval.txt").write_text(report.to_kv())
        write_curve_svg(out / "pck.svg", AUC_THRESHOLDS, pck_curve(root_relative(pred), root_relative(gt)))
    return 0


def cmd_gradcheck(args) -> int:
    results = run_gradcheck(seed=args.seed)
    for r in results:
        print(r.line())
    ok = all(r.passed for r in results)
    print("gradcheck: all passed" if ok else "gradcheck: FAILED")
    return 0 if ok else 1


def cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    if args.cond:
        cfg.variants = ["off"] + ([args.cond] if args.cond != "off" else [])
    bad = [v for v in cfg.variants if v not in COND_PLACEMENTS]
    if bad:
        raise ConfigError(f"unknown variants {bad}; choose from {COND_PLACEMENTS}")
    result = ablate(cfg, base_seed=args.seed)
    table = result.table()
    print(table, end="")
    if args.out:
        (_out_dir(args) / "ablation.txt").write_text(table)
    return 0


def cmd_inspect(args) -> int:
    model = load_checkpoint(_require(args.checkpoint, "--checkpoint"))
    seq = load_poses(_pose_files(_require(args.input, "--input"))[0])
    if seq.poses2d is None:
        raise CommandError("input file has no 2D poses")
    ins = inspect_connections(model, seq)
    out = _out_dir(args)
    names = model.skeleton.joint_names
    for block, mats in zip(ins.blocks, ins.matrices):
        with open(out / f"connections_{block}.txt", "w") as fh:
            for start, m in zip(ins.starts, mats):
                fh.write(f"# window starting at frame {start}\n")
                fh.write(format_grid(m, names))
                write_heatmap_pgm(out / f"connections_{block}_w{start:05d}.pgm", m)
    J = ins.matrices[0].shape[-1]
    print(f"{len(ins.starts)} windows x {len(ins.blocks)} conditional blocks, {J}x{J} grids in {out}")
    return 0


COMMANDS = {
    "synth": cmd_synth, "train": cmd_train, "infer": cmd_infer, "eval": cmd_eval,
    "gradcheck": cmd_gradcheck, "ablate": cmd_ablate, "inspect": cmd_inspect,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="conddgcn", description="2D-to-3D pose lifting with conditional directed graph convolutions")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="key = value config file")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", help="output directory (or file for infer)")
    parser.add_argument("--checkpoint")
    parser.add_argument("--input", help="pose file or directory of .dgp files")
    parser.add_argument("--gt", help="ground-truth pose file or directory")
    parser.add_argument("--cond", choices=COND_PLACEMENTS, help="conditional connection placement")
    parser.add_argument("--window-step", type=int, default=5)
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except (CommandError, ConfigError, CheckpointError, PoseFileError, ValueError, OSError,
            FloatingPointError, RuntimeError) as exc:
        print(f"conddgcn {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
