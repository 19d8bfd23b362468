"""Pose sequences: the DGP text format, input normalization, a synthetic
forward-kinematics corpus, training windows and sliding-window inference."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from .skeleton import LAYOUTS, DirectedSkeleton, build_skeleton, edge_vectors
from .train import WindowSet

FORMAT_NAME = "DGP"
FORMAT_VERSION = 1
MM_PER_UNIT = 1000.0  # models regress meters; files and metrics use millimeters


class PoseFileError(ValueError):
    pass


@dataclass
class PoseSequence:
    layout: str
    fps: float
    poses2d: np.ndarray | None = None  # (T, J, 2) pixels
    poses3d: np.ndarray | None = None  # (T, J, 3) millimeters, camera frame
    width: int | None = None
    height: int | None = None
    parents: tuple[int, ...] | None = None  # custom layouts only
    camera: dict | None = None  # {"focal": f, "center": [cx, cy]}
    action: str | None = None

    def __post_init__(self):
        if self.poses2d is None and self.poses3d is None:
            raise ValueError("a pose sequence needs 2D or 3D poses")
        if self.poses2d is not None:
            self.poses2d = np.asarray(self.poses2d, dtype=np.float64)
            if self.width is None or self.height is None:
                raise ValueError("image width and height are required with 2D poses")
        if self.poses3d is not None:
            self.poses3d = np.asarray(self.poses3d, dtype=np.float64)
        if self.poses2d is not None and self.poses3d is not None and len(self.poses2d) != len(self.poses3d):
            raise ValueError("2D and 3D poses disagree on frame count")
        J = self.skeleton().num_joints
        for arr, d in ((self.poses2d, 2), (self.poses3d, 3)):
            if arr is not None and (arr.ndim != 3 or arr.shape[1:] != (J, d)):
                raise ValueError(f"poses shaped {arr.shape} do not match layout {self.layout!r} ({J} joints)")

    @property
    def frames(self) -> int:
        return len(self.poses2d if self.poses2d is not None else self.poses3d)

    def skeleton(self) -> DirectedSkeleton:
        return build_skeleton(self.parents if self.layout == "custom" else self.layout)

    def normalized_2d(self) -> np.ndarray:
        return normalize_2d(self)


def normalize_2d(seq: PoseSequence) -> np.ndarray:
    """Map pixels to [-1, 1]: x -> 2x/width - 1, y -> 2y/height - 1."""
    if seq.poses2d is None:
        raise ValueError("sequence has no 2D poses")
    scale = np.array([seq.width, seq.height], dtype=np.float64)
    return 2.0 * seq.poses2d / scale - 1.0


# file format -----------------------------------------------------------------

def save_poses(seq: PoseSequence, path: str | Path) -> None:
    """Write a JSON header line, then one line of coordinates per frame."""
    fields = [name for name in ("poses2d", "poses3d") if getattr(seq, name) is not None]
    header = {"format": FORMAT_NAME, "version": FORMAT_VERSION, "layout": seq.layout,
              "fps": seq.fps, "frames": seq.frames, "width": seq.width, "height": seq.height,
              "fields": fields}
    if seq.parents is not None:
        header["parents"] = list(seq.parents)
    if seq.camera is not None:
        header["camera"] = seq.camera
    if seq.action is not None:
        header["action"] = seq.action
    rows = np.concatenate([getattr(seq, f).reshape(seq.frames, -1) for f in fields], axis=1)
    with open(path, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        for row in rows.tolist():
            fh.write(" ".join(map(repr, row)) + "\n")


def load_poses(path: str | Path) -> PoseSequence:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise PoseFileError(f"{path}: line 1: empty file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise PoseFileError(f"{path}: line 1: bad header ({exc.msg})") from None
    if not isinstance(header, dict) or header.get("format") != FORMAT_NAME:
        raise PoseFileError(f"{path}: line 1: not a {FORMAT_NAME} file")
    if header.get("version") != FORMAT_VERSION:
        raise PoseFileError(f"{path}: line 1: unsupported version {header.get('version')!r}")
    layout = header.get("layout")
    parents = header.get("parents")
    if layout not in LAYOUTS and not (layout == "custom" and parents):
        raise PoseFileError(f"{path}: line 1: unknown layout {layout!r}")
    J = len(parents) if layout == "custom" else len(LAYOUTS[layout][0])
    fields = header.get("fields", [])
    dims = {"poses2d": 2, "poses3d": 3}
    if not fields or any(f not in dims for f in fields):
        raise PoseFileError(f"{path}: line 1: bad field list {fields!r}")
    frames = int(header.get("frames", -1))
    width = J * sum(dims[f] for f in fields)
    body = [ln for ln in lines[1:]]
    while body and not body[-1].strip():
        body.pop()
    if len(body) > frames:
        raise PoseFileError(f"{path}: line {frames + 2}: expected {frames} frames, found {len(body)}")
    data = np.empty((len(body), width))
    for i, ln in enumerate(body):
        tokens = ln.split()
        if len(tokens) != width:
            raise PoseFileError(f"{path}: line {i + 2}: expected {width} values, found {len(tokens)}")
        for k, tok in enumerate(tokens):
            try:
                data[i, k] = float(tok)
            except ValueError:
                raise PoseFileError(f"{path}: line {i + 2}: non-numeric token {tok!r}") from None
    if len(body) != frames:
        raise PoseFileError(f"{path}: line {len(body) + 2}: expected {frames} frames, found {len(body)}")
    arrays, col = {}, 0
    for f in fields:
        n = J * dims[f]
        arrays[f] = data[:, col:col + n].reshape(frames, J, dims[f])
        col += n
    try:
        return PoseSequence(layout=layout, fps=header.get("fps", 50.0), width=header.get("width"),
                            height=header.get("height"), parents=tuple(parents) if parents else None,
                            camera=header.get("camera"), action=header.get("action"), **arrays)
    except ValueError as exc:
        raise PoseFileError(f"{path}: line 1: {exc}") from None


# synthetic corpus ------------------------------------------------------------

# rest-pose bone offsets (mm) for h36m17 in a y-down, z-forward frame, arms hanging
H36M17_OFFSETS = np.array([
    [0, 0, 0],
    [-130, 0, 0], [0, 440, 0], [0, 440, 0],
    [130, 0, 0], [0, 440, 0], [0, 440, 0],
    [0, -230, 0], [0, -250, 0], [0, -110, 0], [0, -110, 0],
    [150, 0, 0], [0, 280, 0], [0, 250, 0],
    [-150, 0, 0], [0, 280, 0], [0, 250, 0],
], dtype=np.float64)

ACTIONS = ("free", "gait", "reach")


@dataclass
class SynthConfig:
    """Synthetic motion corpus parameters.

    Joint angles (radians, xyz Euler) are sums of random sinusoids plus an
    optional action-specific component; ``actions`` are cycled over sequences.
    """

    count: int = 8
    frames: int = 96
    fps: float = 50.0
    seed: int = 0
    offsets: np.ndarray | None = None  # (J, 3) rest offsets; defaults to H36M17_OFFSETS
    layout: str = "h36m17"
    sinusoids: int = 3
    freq_range: tuple[float, float] = (0.2, 1.5)
    amp_range: tuple[float, float] = (0.0, 0.25)
    actions: tuple[str, ...] = ("free",)
    action_amplitude: float = 1.0
    random_yaw: bool = True
    focal: float = 1145.0
    width: int = 1000
    height: int = 1000
    depth_range: tuple[float, float] = (4000.0, 5500.0)
    noise_px: float = 0.0
    max_retries: int = 20

    def __post_init__(self):
        if self.offsets is None:
            self.offsets = H36M17_OFFSETS
        self.offsets = np.asarray(self.offsets, dtype=np.float64)
        skel = build_skeleton(self.layout)
        lengths = np.linalg.norm(self.offsets[list(skel.edge_children)], axis=1)
        if self.offsets.shape != (skel.num_joints, 3) or np.any(lengths <= 0):
            raise ValueError("offsets must give every bone a positive length")
        if min(self.freq_range) <= 0:
            raise ValueError("frequencies must be positive")
        if self.sinusoids > 3 or self.sinusoids < 0:
            raise ValueError("at most three sinusoids per joint angle")
        if any(a not in ACTIONS for a in self.actions):
            raise ValueError(f"unknown action in {self.actions}; known: {ACTIONS}")

    def bone_lengths(self) -> np.ndarray:
        skel = build_skeleton(self.layout)
        return np.linalg.norm(self.offsets[list(skel.edge_children)], axis=1)


def forward_kinematics(skel: DirectedSkeleton, offsets: np.ndarray, local_rot: np.ndarray,
                       root_rot: np.ndarray, root_pos: np.ndarray) -> np.ndarray:
    """Joint positions (T, J, 3) from per-frame local rotations (T, J, 3, 3).

    A joint's rotation moves its children: ``pos[c] = pos[p] + R_world[p] @ offset[c]``.
    """
    T, J = local_rot.shape[:2]
    pos = np.zeros((T, J, 3))
    world = np.zeros((T, J, 3, 3))
    pos[:, skel.root] = root_pos
    world[:, skel.root] = root_rot @ local_rot[:, skel.root]
    for j in skel.topological_order()[1:]:
        p = skel.parent[j]
        pos[:, j] = pos[:, p] + np.einsum("tab,b->ta", world[:, p], offsets[j])
        world[:, j] = world[:, p] @ local_rot[:, j]
    return pos


def _action_angles(action: str, t: np.ndarray, rng: np.random.Generator, names: Sequence[str],
                   scale: float) -> np.ndarray:
    angles = np.zeros((len(t), len(names), 3))
    if action == "free" or scale == 0:
        return angles
    idx = {n: i for i, n in enumerate(names)}
    w = 2 * np.pi * rng.uniform(0.8, 1.3)
    phase = rng.uniform(0, 2 * np.pi)
    s = np.sin(w * t + phase)
    if action == "gait":
        # legs in anti-phase, each arm swinging with the opposite leg
        a = scale * rng.uniform(0.35, 0.55)
        angles[:, idx["r_hip"], 0] = a * s
        angles[:, idx["l_hip"], 0] = -a * s
        angles[:, idx["r_knee"], 0] = -scale * 0.6 * np.maximum(0, -s)
        angles[:, idx["l_knee"], 0] = -scale * 0.6 * np.maximum(0, s)
        angles[:, idx["l_shoulder"], 0] = 0.8 * a * s
        angles[:, idx["r_shoulder"], 0] = -0.8 * a * s
        angles[:, idx["l_elbow"], 0] = scale * 0.3 * (1 + s)
        angles[:, idx["r_elbow"], 0] = scale * 0.3 * (1 - s)
    elif action == "reach":
        # right hand repeatedly brought up to the head, legs nearly still
        c = 0.5 * (1 - np.cos(w * t + phase))
        angles[:, idx["r_shoulder"], 0] = scale * 1.0 * c
        angles[:, idx["r_shoulder"], 2] = -scale * 0.3 * c
        angles[:, idx["r_elbow"], 0] = scale * 2.0 * c
        angles[:, idx["neck"], 0] = scale * 0.2 * c
    return angles


def _synth_one(cfg: SynthConfig, skel: DirectedSkeleton, action: str,
               rng: np.random.Generator) -> PoseSequence:
    T, J = cfg.frames, skel.num_joints
    t = np.arange(T) / cfg.fps
    angles = np.zeros((T, J, 3))
    if cfg.sinusoids:
        n = rng.integers(1, cfg.sinusoids + 1, size=(J, 3))
        for j in range(J):
            for ax in range(3):
                for _ in range(n[j, ax]):
                    amp = rng.uniform(*cfg.amp_range)
                    freq = rng.uniform(*cfg.freq_range)
                    angles[:, j, ax] += amp * np.sin(2 * np.pi * freq * t + rng.uniform(0, 2 * np.pi))
    angles += _action_angles(action, t, rng, skel.joint_names, cfg.action_amplitude)
    local = Rotation.from_euler("xyz", angles.reshape(-1, 3)).as_matrix().reshape(T, J, 3, 3)
    yaw = rng.uniform(0, 2 * np.pi) if cfg.random_yaw else 0.0
    root_rot = np.broadcast_to(Rotation.from_euler("y", yaw).as_matrix(), (T, 3, 3))
    root_pos = np.array([rng.uniform(-300, 300), rng.uniform(-200, 200), rng.uniform(*cfg.depth_range)])
    pos3d = forward_kinematics(skel, cfg.offsets, local, root_rot, np.broadcast_to(root_pos, (T, 3)))
    center = (cfg.width / 2.0, cfg.height / 2.0)
    camera = {"focal": cfg.focal, "center": list(center)}
    pos2d = project(pos3d, camera)
    if cfg.noise_px > 0:
        pos2d = pos2d + rng.normal(0.0, cfg.noise_px, size=pos2d.shape)
    return PoseSequence(layout=cfg.layout, fps=cfg.fps, poses2d=pos2d, poses3d=pos3d,
                        width=cfg.width, height=cfg.height, camera=camera, action=action)


def project(poses3d: np.ndarray, camera: dict) -> np.ndarray:
    """Pinhole projection of camera-frame points (..., 3) to pixels (..., 2)."""
    z = poses3d[..., 2:3]
    return camera["focal"] * poses3d[..., :2] / z + np.asarray(camera["center"], dtype=np.float64)


def synth_generate(cfg: SynthConfig) -> list[PoseSequence]:
    """Deterministic corpus; each sequence draws from its own spawned seed."""
    skel = build_skeleton(cfg.layout)
    seqs = []
    for i, child in enumerate(np.random.SeedSequence(cfg.seed).spawn(cfg.count)):
        rng = np.random.default_rng(child)
        action = cfg.actions[i % len(cfg.actions)]
        for _ in range(cfg.max_retries):
            seq = _synth_one(cfg, skel, action, rng)
            if np.all(seq.poses3d[..., 2] > 100.0):
                break
        else:
            raise RuntimeError(f"sequence {i}: joints kept landing behind the camera")
        seqs.append(seq)
    return seqs


def measured_bone_lengths(seq: PoseSequence) -> np.ndarray:
    """(T, E) bone lengths measured from the 3D poses."""
    return np.linalg.norm(edge_vectors(seq.poses3d, seq.skeleton()), axis=-1)


# windows ---------------------------------------------------------------------

def split_sequences(seqs: Sequence[PoseSequence], val_fraction: float = 0.2, seed: int = 0):
    """Seeded split by sequence into (train, val)."""
    order = np.random.default_rng(seed).permutation(len(seqs))
    n_val = int(round(val_fraction * len(seqs)))
    val = [seqs[i] for i in sorted(order[:n_val])]
    train = [seqs[i] for i in sorted(order[n_val:])]
    return train, val


def window_starts(total: int, window: int, step: int) -> list[int]:
    """Starts 0, step, 2*step, ... plus a right-aligned window over the tail."""
    if total < window:
        raise ValueError(f"sequence of {total} frames is shorter than the {window}-frame window; pad it first")
    if step < 1:
        raise ValueError("window step must be positive")
    starts = list(range(0, total - window + 1, step))
    if starts[-1] != total - window:
        starts.append(total - window)
    return starts


def coverage_counts(total: int, window: int, step: int) -> np.ndarray:
    counts = np.zeros(total, dtype=int)
    for s in window_starts(total, window, step):
        counts[s:s + window] += 1
    return counts


def make_windows(seqs: Sequence[PoseSequence], window: int, stride: int | None = None) -> WindowSet:
    """Cut sequences into training windows (root-relative 3D targets in meters)."""
    stride = stride or window
    xs, ys, labels = [], [], []
    for seq in seqs:
        x = seq.normalized_2d()
        root = seq.skeleton().root
        y = (seq.poses3d - seq.poses3d[:, root:root + 1]) / MM_PER_UNIT
        for s in window_starts(seq.frames, window, stride):
            xs.append(x[s:s + window])
            ys.append(y[s:s + window])
            labels.append(seq.action or "")
    return WindowSet(np.stack(xs), np.stack(ys), labels)


def sliding_window_infer(model, seq, step: int = 5, batch_size: int = 32) -> np.ndarray:
    """Per-frame predictions averaged over every window that covers the frame.

    ``seq`` is a PoseSequence or an array of normalized 2D poses (T, J, 2).
    Returns model units (T, J, 3).
    """
    x = seq.normalized_2d() if isinstance(seq, PoseSequence) else np.asarray(seq, dtype=np.float64)
    window = model.cfg.frames
    starts = window_starts(len(x), window, step)
    total = np.zeros((len(x),) + x.shape[1:-1] + (3,))
    carry = np.zeros_like(total)  # compensated summation keeps the mean independent of the overlap count
    counts = np.zeros(len(x))
    was = model.training
    model.eval()
    try:
        for i in range(0, len(starts), batch_size):
            batch = starts[i:i + batch_size]
            pred = model(np.stack([x[s:s + window] for s in batch])).data
            for s, p in zip(batch, pred):
                acc = total[s:s + window]
                t = acc + p
                carry[s:s + window] += np.where(np.abs(acc) >= np.abs(p), (acc - t) + p, (p - t) + acc)
                total[s:s + window] = t
                counts[s:s + window] += 1
    finally:
        model.train(was)
    return (total + carry) / counts[:, None, None]


def infer_sequence(model, seq: PoseSequence, step: int = 5) -> PoseSequence:
    """Sequence with predicted root-relative 3D poses in millimeters."""
    pred = sliding_window_infer(model, seq, step) * MM_PER_UNIT
    return PoseSequence(layout=seq.layout, fps=seq.fps, poses2d=seq.poses2d, poses3d=pred,
                        width=seq.width, height=seq.height, parents=seq.parents,
                        camera=seq.camera, action=seq.action)
