"""Conditional directed graph convolutions for lifting 2D pose sequences to 3D."""

from .data import PoseSequence, SynthConfig, load_poses, save_poses, sliding_window_infer, synth_generate
from .metrics import auc, evaluate, mpjpe, p_mpjpe, pck
from .network import ModelConfig, UCondDGCN, build_model, forward, load_checkpoint, param_count, save_checkpoint
from .skeleton import DirectedSkeleton, build_skeleton, incidence
from .train import AdaMod, LossConfig, fit, total_loss

__version__ = "0.1.0"
