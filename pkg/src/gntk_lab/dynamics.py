"""Graph dynamic kernel ``H(t)`` and its drift away from initialization."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DomainError
from .gnn import _Blocks, grad_graph
from .gntk import KernelMatrix
from .graph_core import SelfLoopPolicy, aggregate_features, as_matrix


def dynamic_kernel_pair(params, aggG, aggH):
    """``(1/m) sum_r sum_{l,k} x_l.x'_k 1[w_r.x_l >= b] 1[w_r.x'_k >= b]``.

    Computed from activation patterns directly, not from gradients, so it
    serves as an independent check on :func:`grad_graph`.
    """
    X, Y = as_matrix(aggG), as_matrix(aggH)
    if X.shape[0] != params.d or Y.shape[0] != params.d:
        raise DomainError("feature dimension does not match the weights")
    ix = (params.W.T @ X >= params.bias).astype(float)
    iy = (params.W.T @ Y >= params.bias).astype(float)
    return float(np.sum((X.T @ Y) * (ix.T @ iy)) / params.m)


def dynamic_gram(params, dataset, policy=SelfLoopPolicy.INCLUDE, t=None):
    blocks = [aggregate_features(g, policy) for g in dataset.graphs]
    tag = "dynamic" if t is None else f"dynamic(t={t})"
    return KernelMatrix(_Blocks(blocks).dynamic_gram(params), tag)


def dynamic_gram_pairwise(params, dataset, policy=SelfLoopPolicy.INCLUDE):
    """Same matrix as :func:`dynamic_gram`, entry by entry through gradients."""
    grads = [grad_graph(params, aggregate_features(g, policy)) for g in dataset.graphs]
    n = len(grads)
    H = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            H[i, j] = np.sum(grads[i] * grads[j])
    return KernelMatrix(H, "dynamic")


def init_bound(N, n, m, delta):
    """High-probability entrywise scale of ``|H(0) - H^cts|``: ``4 N n sqrt(log(n/delta)/m)``."""
    return 4.0 * N * n * math.sqrt(math.log(n / delta) / m)


@dataclass
class DriftReport:
    t: list
    h0_vs_cts_frob: float
    ht_vs_h0_frob: list
    max_weight_move: list
    bound_h0: float
    bound_drift: list
    delta_used: float
    violations: list

    def csv_rows(self):
        return [{"t": t, "ht_vs_h0_frob": h, "max_weight_move": w, "bound_drift": b}
                for t, h, w, b in zip(self.t, self.ht_vs_h0_frob, self.max_weight_move, self.bound_drift)]


def drift_report(trace, dataset, policy=SelfLoopPolicy.INCLUDE, H_cts=None, delta=0.05):
    """Line up measured kernel drift against the weight-movement bound ``2 N n R``.

    ``violations`` lists the sampled ``t`` where ``|H(t) - H(0)|_F`` reaches
    ``2 N n max_r |w_r(t) - w_r(0)|``. Frobenius norms stand in for the
    operator norms of the bounds, which only makes the check stricter.
    """
    if not trace.has_kernel_snapshots:
        raise ConfigurationError("trace has no kernel snapshots; train with track_kernel=True")
    n = dataset.n
    N = dataset.max_nodes
    m = trace.params.m
    if H_cts is None:
        from .gntk import gntk_gram

        H_cts = gntk_gram(dataset, policy)
    h0_err = float(np.linalg.norm(trace.kernel_h0 - np.asarray(H_cts)))
    ts, drift, move, bound, bad = [], [], [], [], []
    for rec in trace.records:
        ts.append(rec.t)
        drift.append(rec.kernel_drift_frob)
        move.append(rec.max_weight_move)
        bound.append(2.0 * N * n * rec.max_weight_move)
        if rec.t > 0 and rec.kernel_drift_frob >= bound[-1] and rec.kernel_drift_frob > 0:
            bad.append(rec.t)
    return DriftReport(ts, h0_err, drift, move, init_bound(N, n, m, delta), bound, delta, bad)
