"""Directed skeleton graphs: joints are nodes, bones are parent->child edges."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .diffcore import Tensor

H36M17_NAMES = (
    "hip", "r_hip", "r_knee", "r_ankle", "l_hip", "l_knee", "l_ankle",
    "spine", "thorax", "neck", "head",
    "l_shoulder", "l_elbow", "l_wrist", "r_shoulder", "r_elbow", "r_wrist",
)
H36M17_PARENTS = (-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 9, 8, 11, 12, 8, 14, 15)

LAYOUTS = {"h36m17": (H36M17_PARENTS, H36M17_NAMES)}


class SkeletonError(ValueError):
    pass


@dataclass(frozen=True)
class DirectedSkeleton:
    """A rooted tree over ``J`` joints. ``parent[root] == -1``."""

    parent: tuple[int, ...]
    joint_names: tuple[str, ...]
    root: int
    layout: str = "custom"

    @property
    def num_joints(self) -> int:
        return len(self.parent)

    @property
    def num_edges(self) -> int:
        return len(self.parent) - 1

    @cached_property
    def edge_children(self) -> tuple[int, ...]:
        """Child joint of each edge; edge index is the child's rank among non-root joints."""
        return tuple(j for j in range(self.num_joints) if j != self.root)

    def children(self, j: int) -> list[int]:
        return [c for c, p in enumerate(self.parent) if p == j]

    def topological_order(self) -> list[int]:
        order, stack = [], [self.root]
        while stack:
            j = stack.pop()
            order.append(j)
            stack.extend(reversed(self.children(j)))
        return order


def build_skeleton(layout: str | Sequence[int | None] = "h36m17",
                   joint_names: Sequence[str] | None = None) -> DirectedSkeleton:
    """Build and validate a skeleton from a layout name or a parent array.

    Parent entries of ``None`` or ``-1`` mark the root.
    """
    if isinstance(layout, str):
        if layout not in LAYOUTS:
            raise SkeletonError(f"unknown layout {layout!r}; known: {sorted(LAYOUTS)}")
        parents, names = LAYOUTS[layout]
        name = layout
    else:
        parents = tuple(-1 if p is None else int(p) for p in layout)
        names = tuple(joint_names) if joint_names is not None else tuple(f"j{i}" for i in range(len(parents)))
        name = "custom"
    J = len(parents)
    if J == 0:
        raise SkeletonError("skeleton needs at least one joint")
    if len(names) != J:
        raise SkeletonError(f"{len(names)} joint names for {J} joints")

    def label(j):
        return f"joint {j} ({names[j]})"

    roots = [j for j, p in enumerate(parents) if p == -1]
    if len(roots) != 1:
        if not roots:
            raise SkeletonError("no root joint (every joint has a parent)")
        raise SkeletonError(f"multiple roots: {', '.join(label(r) for r in roots)}")
    for j, p in enumerate(parents):
        if p != -1 and not 0 <= p < J:
            raise SkeletonError(f"{label(j)} has out-of-range parent {p}")
        if p == j:
            raise SkeletonError(f"{label(j)} is its own parent")
    for j in range(J):
        seen = {j}
        k = parents[j]
        while k != -1:
            if k in seen:
                raise SkeletonError(f"cycle through {label(j)}; it is not connected to the root")
            seen.add(k)
            k = parents[k]
    return DirectedSkeleton(tuple(parents), tuple(names), roots[0], name)


@dataclass(frozen=True)
class IncidenceMaps:
    """Node/edge incidence of a directed skeleton, plus dense gather matrices.

    ``in_edge[j]`` is ``None`` for the root. Matrices act on the last axis
    of a feature tensor via right multiplication.
    """

    in_edge: tuple[int | None, ...]
    out_edges: tuple[tuple[int, ...], ...]
    edge_source: tuple[int, ...]
    edge_target: tuple[int, ...]

    @property
    def num_joints(self) -> int:
        return len(self.in_edge)

    @property
    def num_edges(self) -> int:
        return len(self.edge_source)

    @cached_property
    def in_edge_matrix(self) -> np.ndarray:
        """(E, J): column j selects node j's incoming edge; the root column is zero."""
        m = np.zeros((self.num_edges, self.num_joints))
        for j, e in enumerate(self.in_edge):
            if e is not None:
                m[e, j] = 1.0
        return m

    @cached_property
    def out_pool_matrix(self) -> np.ndarray:
        """(E, J): column j averages node j's outgoing edges; leaf columns are zero."""
        m = np.zeros((self.num_edges, self.num_joints))
        for j, edges in enumerate(self.out_edges):
            for e in edges:
                m[e, j] = 1.0 / len(edges)
        return m

    @cached_property
    def source_matrix(self) -> np.ndarray:
        """(J, E): column e selects edge e's parent joint."""
        m = np.zeros((self.num_joints, self.num_edges))
        m[list(self.edge_source), np.arange(self.num_edges)] = 1.0
        return m

    @cached_property
    def target_matrix(self) -> np.ndarray:
        """(J, E): column e selects edge e's child joint."""
        m = np.zeros((self.num_joints, self.num_edges))
        m[list(self.edge_target), np.arange(self.num_edges)] = 1.0
        return m


def incidence(skel: DirectedSkeleton) -> IncidenceMaps:
    targets = skel.edge_children
    sources = tuple(skel.parent[c] for c in targets)
    in_edge: list[int | None] = [None] * skel.num_joints
    out_edges: list[list[int]] = [[] for _ in range(skel.num_joints)]
    for e, (s, t) in enumerate(zip(sources, targets)):
        in_edge[t] = e
        out_edges[s].append(e)
    return IncidenceMaps(tuple(in_edge), tuple(tuple(o) for o in out_edges), sources, targets)


@dataclass
class GraphFeatures:
    """Node features (B, C, T, J) paired with edge features (B, C, T, E)."""

    nodes: Tensor
    edges: Tensor

    def __post_init__(self):
        n, e = self.nodes.shape, self.edges.shape
        if len(n) != 4 or len(e) != 4 or n[0] != e[0] or n[2] != e[2]:
            raise ValueError(f"node features {n} and edge features {e} must share batch and time")

    @property
    def batch(self) -> int:
        return self.nodes.shape[0]

    @property
    def frames(self) -> int:
        return self.nodes.shape[2]


def edge_vectors(coords: np.ndarray, skel: DirectedSkeleton) -> np.ndarray:
    """child - parent for every edge; ``coords`` has joints on axis -2."""
    child = np.asarray(skel.edge_children)
    parent = np.asarray([skel.parent[c] for c in child])
    return coords[..., child, :] - coords[..., parent, :]


def init_features(pose2d, skel: DirectedSkeleton, dtype=np.float64) -> GraphFeatures:
    """Initial graph features from 2D joint coordinates.

    ``pose2d`` is a (B, T, J, 2) or (T, J, 2) array, or a PoseSequence whose
    normalized 2D coordinates are used. Nodes carry (x, y); edges carry the
    child-minus-parent offset.
    """
    if hasattr(pose2d, "normalized_2d"):
        pose2d = pose2d.normalized_2d()
    x = np.asarray(pose2d, dtype=dtype)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4 or x.shape[-1] != 2:
        raise ValueError(f"expected 2D poses shaped (B, T, J, 2), got {x.shape}")
    if x.shape[2] != skel.num_joints:
        raise ValueError(f"pose has {x.shape[2]} joints, skeleton has {skel.num_joints}")
    e = edge_vectors(x, skel)
    nodes = np.ascontiguousarray(x.transpose(0, 3, 1, 2))
    edges = np.ascontiguousarray(e.transpose(0, 3, 1, 2))
    return GraphFeatures(Tensor(nodes), Tensor(edges))


def reconstruct_from_edges(root_coords: np.ndarray, edges: np.ndarray, skel: DirectedSkeleton) -> np.ndarray:
    """Inverse of :func:`edge_vectors` given the root position.

    ``root_coords`` is (..., D) and ``edges`` is (..., E, D).
    """
    out = np.zeros(edges.shape[:-2] + (skel.num_joints, edges.shape[-1]), dtype=edges.dtype)
    out[..., skel.root, :] = root_coords
    edge_of = {c: e for e, c in enumerate(skel.edge_children)}
    for j in skel.topological_order()[1:]:
        out[..., j, :] = out[..., skel.parent[j], :] + edges[..., edge_of[j], :]
    return out
