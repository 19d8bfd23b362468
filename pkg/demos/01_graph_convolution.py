"""
Directed graph convolution on a skeleton
========================================

Walks through one conditional graph-convolution layer on the 17-joint
skeleton: the directed tree, the three update steps, and the per-sample
connection matrix predicted by the routing function.

Run with ``python3 demos/01_graph_convolution.py``.
"""

# %%
# The skeleton is a tree rooted at the hip. Every joint except the root owns
# exactly one incoming bone, and that bone is numbered by its child joint.
import numpy as np

from conddgcn import layers as L
from conddgcn.diffcore import Tensor
from conddgcn.skeleton import build_skeleton, incidence, init_features

skel = build_skeleton("h36m17")
inc = incidence(skel)
print(f"{skel.num_joints} joints, {skel.num_edges} bones")
for e in range(skel.num_edges):
    src, dst = inc.edge_source[e], inc.edge_target[e]
    print(f"  bone {e:2d}: {skel.joint_names[src]:>10s} -> {skel.joint_names[dst]}")

# %%
# Input features: joints carry their 2D position, bones carry the 2D vector
# from parent to child. Shapes are (batch, channels, frames, joints|bones).
rng = np.random.default_rng(0)
pose = rng.uniform(-1, 1, size=(2, 4, 17, 2))   # two samples, four frames
feats = init_features(pose, skel)
print("nodes", feats.nodes.shape, "edges", feats.edges.shape)

# %%
# One layer with 8 output channels and a bank of 16 basis connection matrices.
layer = L.GraphConv(inc, 2, 8, conditional=True, rng=rng)
bank = layer.bank
out, conn = L.cond_dgconv(feats, inc, bank, layer.params)
print("updated nodes", out.nodes.shape, "updated edges", out.edges.shape)

# %%
# The routing function pools every node and edge feature, maps the pooled
# vector to one weight per basis and squashes it into (0, 1).
alpha = conn.weights.data
print("blend weights, sample 0:", np.round(alpha[0], 3))
print("all strictly inside (0, 1):", bool(np.all((alpha > 0) & (alpha < 1))))

# %%
# The blended matrix is a signed J x J map. Entry [i, j] lets joint j's
# feature flow into joint i's "child" slot and joint i's feature into joint
# j's "parent" slot, whether or not the two are adjacent in the tree.
A = conn.matrix.data
print("two samples, two different matrices:", not np.array_equal(A[0], A[1]))
i, j = np.unravel_index(np.argmax(np.abs(A[0])), A[0].shape)
print(f"strongest link in sample 0: {skel.joint_names[i]} -> {skel.joint_names[j]} ({A[0, i, j]:+.4f})")

# %%
# Switching the middle step off gives the plain directed graph convolution,
# bit for bit.
plain = L.dgconv(feats, inc, layer.params)
off, _ = L.cond_dgconv(feats, inc, bank, layer.params, conditional=False)
print("cond step disabled == plain layer:", np.array_equal(plain.nodes.data, off.nodes.data))
