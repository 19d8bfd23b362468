"""Finite-difference verification of every layer and of a tiny end-to-end model."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from . import layers as L
from .diffcore import Tensor
from .network import ModelConfig, UCondDGCN
from .skeleton import build_skeleton, incidence
from .train import LossConfig, total_loss

TINY_PARENTS = (-1, 0, 1, 0, 3)  # root with two chains of two joints


@dataclass
class GradcheckResult:
    name: str
    error: float
    tol: float
    seconds: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.error) and self.error <= self.tol)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name:<14} max rel err {self.error:.3e} (tol {self.tol:.0e}, {self.seconds:.2f}s)"


def _leaf(rng, *shape, scale=1.0):
    return Tensor(rng.normal(0.0, scale, size=shape), requires_grad=True)


def _probe(fn, rng):
    # random projection turns any output into a scalar with a dense gradient
    w = rng.normal(size=fn().shape)
    return lambda: dc.sum(fn() * w)


def _check(name, fn, leaves, rng, tol, epsilon, coords=None):
    t0 = time.perf_counter()
    err = dc.finite_diff_check_tensors(_probe(fn, rng), leaves, epsilon, coords)
    return GradcheckResult(name, err, tol, time.perf_counter() - t0)


def layer_checks(seed: int = 0, tol: float = 1e-4, epsilon: float = 1e-6) -> list[GradcheckResult]:
    rng = np.random.default_rng(seed)
    inc = incidence(build_skeleton(TINY_PARENTS))
    J, E = inc.num_joints, inc.num_edges
    B, T, cin, cout, m = 2, 4, 3, 4, 3
    nodes, edges = _leaf(rng, B, cin, T, J), _leaf(rng, B, cin, T, E)
    out_nodes = _leaf(rng, B, cout, T, J)
    results = []

    w1, b1 = _leaf(rng, cout, 3 * cin, scale=0.5), _leaf(rng, cout)
    results.append(_check("node_step", lambda: L.dgconv_step_nodes(nodes, edges, inc, w1, b1),
                          [nodes, edges, w1, b1], rng, tol, epsilon))

    conn = _leaf(rng, B, J, J)
    w2, b2 = _leaf(rng, cout, 3 * cout, scale=0.5), _leaf(rng, cout)
    results.append(_check("cond_step", lambda: L.cond_step_nodes(out_nodes, conn, w2, b2),
                          [out_nodes, conn, w2, b2], rng, tol, epsilon))

    w3, b3 = _leaf(rng, cout, 2 * cout + cin, scale=0.5), _leaf(rng, cout)
    results.append(_check("edge_step", lambda: L.dgconv_step_edges(out_nodes, edges, inc, w3, b3),
                          [out_nodes, edges, w3, b3], rng, tol, epsilon))

    bank = L.ConnectionBank(J, 2 * cin, m, k=2, sigma=0.5, rng=rng)
    results.append(_check("routing", lambda: L.routing(nodes, edges, bank).matrix,
                          [nodes, edges, bank.bases, bank.routing_weight, bank.routing_bias],
                          rng, tol, epsilon))

    for stride in (1, 2):
        kn, kbn = _leaf(rng, cin, cin, 3), _leaf(rng, cin)
        ke, kbe = _leaf(rng, cin, cin, 3), _leaf(rng, cin)

        def tconv(stride=stride, kn=kn, kbn=kbn, ke=ke, kbe=kbe):
            out = L.temporal_conv(L.GraphFeatures(nodes, edges), kn, kbn, ke, kbe, stride)
            return dc.concat([dc.reshape(out.nodes, (-1,)), dc.reshape(out.edges, (-1,))], axis=0)

        results.append(_check(f"temporal_s{stride}", tconv, [nodes, edges, kn, kbn, ke, kbe],
                              rng, tol, epsilon))

    def upsample():
        return L.temporal_upsample(L.GraphFeatures(nodes, edges), 2 * T + 1).nodes

    results.append(_check("upsample", upsample, [nodes], rng, tol, epsilon))

    wh, bh = _leaf(rng, 3, cout), _leaf(rng, 3)
    results.append(_check("fc_head", lambda: L.fc_head(out_nodes, wh, bh), [out_nodes, wh, bh],
                          rng, tol, epsilon))
    return results


def tiny_model(seed: int = 0, cond: str = "all") -> UCondDGCN:
    cfg = ModelConfig(layout="custom", parents=TINY_PARENTS, frames=8, channels=4, merge_channels=6,
                      depth=2, merge_blocks=2, num_bases=4, sparse_k=2, sparse_sigma=0.1,
                      dropout=0.0, cond=cond)
    return UCondDGCN(cfg, seed)


def end_to_end_check(seed: int = 0, tol: float = 1e-3, coords_per_group: int = 10,
                     epsilon: float = 1e-6) -> GradcheckResult:
    """Total loss of the tiny model against a random target, spot-checked at
    ``coords_per_group`` random coordinates of every parameter tensor."""
    rng = np.random.default_rng(seed)
    model = tiny_model(seed).eval()
    x = rng.uniform(-1, 1, size=(2, 8, 5, 2))
    y = rng.normal(0, 0.3, size=(2, 8, 5, 3))
    params = model.parameters()
    coords = [rng.choice(p.data.size, size=min(coords_per_group, p.data.size), replace=False)
              for p in params]
    t0 = time.perf_counter()
    err = dc.finite_diff_check_tensors(lambda: total_loss(model(x), y, LossConfig()), params, epsilon, coords)
    return GradcheckResult("end_to_end", err, tol, time.perf_counter() - t0)


def run_gradcheck(seed: int = 0, layer_tol: float = 1e-4, e2e_tol: float = 1e-3) -> list[GradcheckResult]:
    return layer_checks(seed, layer_tol) + [end_to_end_check(seed, e2e_tol)]
