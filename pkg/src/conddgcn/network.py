"""U-shaped network of ST-DGConv / ST-CondDGConv blocks and its checkpoint format."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .diffcore import Tensor
from .layers import FCHead, Module, STBlock, concat_features, temporal_upsample
from .skeleton import DirectedSkeleton, build_skeleton, incidence, init_features

CHECKPOINT_MAGIC = b"UCDG"
CHECKPOINT_VERSION = 1
COND_PLACEMENTS = ("merge", "down", "up", "all", "off")


class CheckpointError(ValueError):
    pass


@dataclass
class ModelConfig:
    layout: str = "h36m17"
    parents: tuple[int, ...] | None = None  # used when layout == "custom"
    frames: int = 96
    channels: int = 64
    merge_channels: int = 128
    depth: int = 2
    merge_blocks: int = 2
    kernel_size: int = 3
    num_bases: int = 16
    sparse_k: int = 3
    sparse_sigma: float = 0.01
    dropout: float = 0.3
    norm: bool = False
    cond: str = "merge"
    dtype: str = "float64"

    def __post_init__(self):
        if self.parents is not None:
            self.parents = tuple(int(p) for p in self.parents)
        if self.depth < 0:
            raise ValueError("depth must be non-negative")
        if self.frames < 1 or self.frames % (2 ** self.depth):
            raise ValueError(f"frames={self.frames} must be divisible by 2**depth={2 ** self.depth}")
        if min(self.channels, self.merge_channels) < 1:
            raise ValueError("channel widths must be at least 1")
        if self.merge_blocks < 1:
            raise ValueError("the merging stage needs at least one block")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd, got {self.kernel_size}")
        if self.cond not in COND_PLACEMENTS:
            raise ValueError(f"cond must be one of {COND_PLACEMENTS}, got {self.cond!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.layout == "custom" and self.parents is None:
            raise ValueError("custom layout needs a parent array")

    def skeleton(self) -> DirectedSkeleton:
        return build_skeleton(self.parents if self.layout == "custom" else self.layout)

    def stage_is_conditional(self, stage: str) -> bool:
        return self.cond == "all" or self.cond == stage

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        if d["parents"] is not None:
            d["parents"] = list(d["parents"])
        return d


class UCondDGCN(Module):
    """Embedding block, ``depth`` downsampling blocks, as many upsampling
    blocks fed by skips, then a merging stage over all scales and an FC head."""

    def __init__(self, cfg: ModelConfig, seed: int | None = 0):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.skeleton = cfg.skeleton()
        self.inc = incidence(self.skeleton)
        dtype = np.dtype(cfg.dtype)
        C, Cm, D = cfg.channels, cfg.merge_channels, cfg.depth
        common = dict(kernel_size=cfg.kernel_size, dropout=cfg.dropout, norm=cfg.norm,
                      num_bases=cfg.num_bases, sparse_k=cfg.sparse_k,
                      sparse_sigma=cfg.sparse_sigma, rng=rng, dtype=dtype)
        self.embed = STBlock(self.inc, 2, C, **common)
        self.down = [STBlock(self.inc, C, C, stride=2, conditional=cfg.stage_is_conditional("down"), **common)
                     for _ in range(D)]
        self.up = [STBlock(self.inc, 2 * C, C, conditional=cfg.stage_is_conditional("up"), **common)
                   for _ in range(D)]
        merge_cond = cfg.stage_is_conditional("merge")
        self.merge = [STBlock(self.inc, (D + 1) * C if i == 0 else Cm, Cm, conditional=merge_cond, **common)
                      for i in range(cfg.merge_blocks)]
        self.head = FCHead(Cm, 3, rng, dtype)
        self.seed_dropout(seed)

    def seed_dropout(self, seed: int | None) -> None:
        rng = np.random.default_rng(None if seed is None else seed + 7919)
        for blk in self.blocks():
            blk.rng = rng

    def blocks(self) -> list[STBlock]:
        return [self.embed, *self.down, *self.up, *self.merge]

    def resolutions(self) -> list[int]:
        """Temporal length at the output of the embedding and each downsampling block."""
        return [self.cfg.frames // 2 ** d for d in range(self.cfg.depth + 1)]

    def __call__(self, pose2d) -> Tensor:
        """Lift normalized 2D poses (B, T, J, 2) to 3D poses (B, T, J, 3)."""
        x = np.asarray(pose2d)
        if x.ndim == 3:
            x = x[None]
        if x.ndim != 4 or x.shape[1] != self.cfg.frames:
            raise ValueError(f"expected a window of {self.cfg.frames} frames shaped (B, T, J, 2), got {x.shape}")
        feats = init_features(x, self.skeleton, np.dtype(self.cfg.dtype))
        h = self.embed(feats)
        skips = [h]
        for blk in self.down:
            h = blk(h)
            skips.append(h)
        scales = [h]
        for i, blk in enumerate(self.up):
            skip = skips[-2 - i]
            h = blk(concat_features([temporal_upsample(h, skip.frames), skip]))
            scales.append(h)
        T = self.cfg.frames
        merged = concat_features([s if s.frames == T else temporal_upsample(s, T) for s in scales])
        for blk in self.merge:
            merged = blk(merged)
        return self.head(merged.nodes)

    def connection_matrices(self) -> list[np.ndarray]:
        """Conditional connection matrices (B, J, J) from the last forward pass, per cond block."""
        return [blk.graph.last_connections.matrix.data for blk in self.blocks()
                if blk.conditional and blk.graph.last_connections is not None]

    def state(self) -> list[np.ndarray]:
        """Parameters then buffers, in declaration order."""
        return [p.data for p in self.parameters()] + list(self.named_buffers().values())

    def load_state(self, arrays: list[np.ndarray]) -> None:
        params = self.parameters()
        buffers = list(self.named_buffers().values())
        if len(arrays) != len(params) + len(buffers):
            raise CheckpointError(f"expected {len(params) + len(buffers)} arrays, got {len(arrays)}")
        for p, a in zip(params, arrays):
            p.data = np.array(a, dtype=p.dtype).reshape(p.shape)
        for b, a in zip(buffers, arrays[len(params):]):
            b[...] = np.asarray(a).reshape(b.shape)


def build_model(cfg: ModelConfig | None = None, seed: int | None = 0) -> UCondDGCN:
    return UCondDGCN(cfg or ModelConfig(), seed)


def forward(model: UCondDGCN, pose2d) -> np.ndarray:
    """Inference-mode forward pass returning a plain array."""
    was_training = model.training
    model.eval()
    try:
        return model(pose2d).data
    finally:
        model.train(was_training)


def param_count(model: Module) -> int:
    return int(sum(p.data.size for p in model.parameters()))


# checkpoints ---------------------------------------------------------------

def save_checkpoint(model: UCondDGCN, path: str | Path) -> None:
    """Write magic, version, config JSON, float64 parameters and a SHA-256 trailer."""
    cfg_bytes = json.dumps(model.cfg.to_dict(), sort_keys=True).encode()
    arrays = model.state()
    body = bytearray()
    body += CHECKPOINT_MAGIC
    body += struct.pack("<II", CHECKPOINT_VERSION, len(cfg_bytes))
    body += cfg_bytes
    body += struct.pack("<I", len(arrays))
    for a in arrays:
        body += struct.pack("<Q", a.size)
        body += np.ascontiguousarray(a, dtype="<f8").tobytes()
    body += hashlib.sha256(body).digest()
    Path(path).write_bytes(bytes(body))


def load_checkpoint(path: str | Path, layout: str | None = None) -> UCondDGCN:
    """Read a checkpoint; ``layout`` (if given) must match the stored one."""
    raw = Path(path).read_bytes()
    if len(raw) < 4 + 8 + 32 or raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a model checkpoint (bad magic bytes)")
    body, digest = raw[:-32], raw[-32:]
    version, cfg_len = struct.unpack_from("<II", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch (truncated or corrupt file)")
    pos = 12
    cfg = ModelConfig(**json.loads(body[pos:pos + cfg_len].decode()))
    pos += cfg_len
    if layout is not None and cfg.layout != layout:
        raise CheckpointError(f"{path}: checkpoint layout {cfg.layout!r} does not match requested {layout!r}")
    (count,) = struct.unpack_from("<I", body, pos)
    pos += 4
    arrays = []
    for _ in range(count):
        (n,) = struct.unpack_from("<Q", body, pos)
        pos += 8
        arrays.append(np.frombuffer(body, dtype="<f8", count=n, offset=pos).copy())
        pos += 8 * n
    if pos != len(body):
        raise CheckpointError(f"{path}: {len(body) - pos} unexpected trailing bytes")
    model = UCondDGCN(cfg, seed=0)
    model.load_state(arrays)
    return model


def copy_model(model: UCondDGCN) -> UCondDGCN:
    clone = UCondDGCN(model.cfg, seed=0)
    clone.load_state([a.copy() for a in model.state()])
    return clone


__all__ = ["ModelConfig", "UCondDGCN", "build_model", "forward", "param_count",
           "save_checkpoint", "load_checkpoint", "copy_model", "CheckpointError"]
