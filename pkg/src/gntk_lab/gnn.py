"""Finite-width graph neural networks.

The single-hidden-layer network on a graph with aggregated columns ``x_l``::

    f(W, G) = (1 / sqrt(m)) * sum_r a_r * sum_l relu(w_r . x_l - b)

Only ``W`` is trained; the signs ``a`` stay at their initial values. The
node-level network drops the sum over ``l`` and reads one column.

Training examples are handled uniformly as *blocks* of aggregated columns:
a graph contributes all of its columns, a node contributes one.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DomainError, SchemaError, TrainingError
from .graph_core import SelfLoopPolicy, aggregate_features, aggregation_matrix, as_matrix
from .gntk import C_SIGMA, KernelMatrix


@dataclass
class GnnParams:
    W: np.ndarray          # d x m, column r is w_r
    a: np.ndarray          # m signs
    bias: float = 0.0
    kappa: float = 1.0

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=float)
        self.a = np.asarray(self.a, dtype=float).reshape(-1)
        if self.W.ndim != 2 or self.W.shape[1] < 1:
            raise DomainError("W must be a d x m matrix with m >= 1")
        if self.a.shape[0] != self.W.shape[1]:
            raise DomainError("a must have one sign per hidden unit")
        if not np.all(np.abs(self.a) == 1.0):
            raise DomainError("every a_r must be -1 or +1")
        if not 0 < self.kappa <= 1:
            raise DomainError(f"kappa must lie in (0, 1], got {self.kappa}")
        if self.bias < 0:
            raise DomainError("bias must be >= 0")

    @property
    def d(self):
        return self.W.shape[0]

    @property
    def m(self):
        return self.W.shape[1]

    def to_json(self):
        return json.dumps({
            "d": self.d, "m": self.m, "bias": float(self.bias), "kappa": float(self.kappa),
            "W": self.W.ravel(order="F").tolist(), "a": [int(v) for v in self.a],
        })

    @classmethod
    def from_json(cls, text):
        obj = json.loads(text)
        for key in ("d", "m", "bias", "kappa", "W", "a"):
            if key not in obj:
                raise SchemaError(f"checkpoint is missing field {key!r}")
        d, m = int(obj["d"]), int(obj["m"])
        if len(obj["W"]) != d * m:
            raise SchemaError(f"checkpoint field 'W' has {len(obj['W'])} entries, expected {d * m}")
        W = np.array(obj["W"], dtype=float).reshape((d, m), order="F")
        return cls(W, np.array(obj["a"], dtype=float), float(obj["bias"]), float(obj["kappa"]))


def init_params(d, m, bias=0.0, kappa=1.0, seed=0):
    """Gaussian ``W`` and uniform signs ``a``.

    Draw order: all of ``W`` column by column (``w_1`` first), then ``a``.
    """
    if d < 1 or m < 1:
        raise DomainError("init_params needs d >= 1 and m >= 1")
    rng = np.random.default_rng(seed)
    W = rng.standard_normal((m, d)).T
    a = np.where(rng.integers(0, 2, size=m) == 1, 1.0, -1.0)
    return GnnParams(W, a, bias, kappa)


def _check_dim(params, X):
    if X.shape[0] != params.d:
        raise DomainError(f"feature dimension {X.shape[0]} does not match weights ({params.d})")


def _block_starts(sizes):
    return np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(int)


def _column_outputs(params, X):
    """Per-column contributions ``(1/sqrt m) sum_r a_r relu(w_r.x_l - b)``."""
    pre = params.W.T @ X - params.bias
    return params.a @ np.maximum(pre, 0.0) / np.sqrt(params.m)


def forward_graph(params, agg):
    X = as_matrix(agg)
    _check_dim(params, X)
    return float(_column_outputs(params, X).sum())


def forward_node(params, agg, node_index):
    X = as_matrix(agg)
    _check_dim(params, X)
    if not 0 <= node_index < X.shape[1]:
        raise DomainError(f"node index {node_index} out of range [0, {X.shape[1]})")
    return float(_column_outputs(params, X[:, [node_index]])[0])


def _indicators(params, X):
    return (params.W.T @ X >= params.bias).astype(float)  # m x C


def grad_graph(params, agg):
    """``d x m`` gradient of ``f(W, G)`` with respect to ``W``.

    Column ``r`` is ``(a_r / sqrt m) * sum_l x_l 1[w_r.x_l >= b]``.
    """
    X = as_matrix(agg)
    _check_dim(params, X)
    return (X @ _indicators(params, X).T) * (params.a / np.sqrt(params.m))


def grad_node(params, agg, node_index):
    X = as_matrix(agg)
    if not 0 <= node_index < X.shape[1]:
        raise DomainError(f"node index {node_index} out of range [0, {X.shape[1]})")
    return grad_graph(params, X[:, [node_index]])


@dataclass
class TraceRecord:
    t: int
    loss: float
    u_train: np.ndarray
    u_test: float | None
    max_weight_move: float
    kernel_drift_frob: float | None = None


@dataclass
class TrainTrace:
    records: list
    eta: float
    T: int
    params: GnnParams = field(repr=False)
    kernel_h0: np.ndarray | None = field(default=None, repr=False)

    @property
    def has_kernel_snapshots(self):
        return self.kernel_h0 is not None

    def final(self):
        return self.records[-1]

    def to_csv_rows(self):
        rows = []
        for rec in self.records:
            rows.append({
                "t": rec.t, "loss": rec.loss,
                "u_test": "" if rec.u_test is None else rec.u_test,
                "max_weight_move": rec.max_weight_move,
                "kernel_drift_frob": "" if rec.kernel_drift_frob is None else rec.kernel_drift_frob,
                **{f"u_train_{i}": v for i, v in enumerate(rec.u_train)},
            })
        return rows


class _Blocks:
    """Training examples as column blocks of one stacked matrix."""

    def __init__(self, blocks):
        mats = [as_matrix(b) for b in blocks]
        self.X = np.hstack(mats)
        self.sizes = np.array([m.shape[1] for m in mats])
        self.starts = _block_starts(self.sizes)
        self.owner = np.repeat(np.arange(len(mats)), self.sizes)

    def outputs(self, params):
        return np.add.reduceat(_column_outputs(params, self.X), self.starts)

    def gradients(self, params):
        """Per-example gradients, shape ``n x d x m``."""
        ind = _indicators(params, self.X)
        scale = params.a / np.sqrt(params.m)
        return np.stack([(self.X[:, s:s + k] @ ind[:, s:s + k].T) * scale
                         for s, k in zip(self.starts, self.sizes)])

    def dynamic_gram(self, params):
        G = self.gradients(params).reshape(len(self.sizes), -1)
        return G @ G.T


def auto_eta(H, kappa):
    """Largest step of the form ``1 / (kappa^2 lambda_max(H))``."""
    from .spectral import lambda_max

    lam = lambda_max(np.asarray(H))
    if lam <= 0:
        raise DomainError("kernel has no positive eigenvalue; cannot choose a step size")
    return 1.0 / (kappa ** 2 * lam)


def train_blocks(params, blocks, Y, test_block=None, eta=None, T=100, trace_every=1,
                 track_kernel=False):
    """Gradient descent on ``0.5 * |Y - kappa f(W)|^2`` over column blocks.

    Returns a :class:`TrainTrace` whose ``params`` is the trained state; the
    input ``params`` is left untouched. Records are taken at ``t = 0``, every
    ``trace_every`` steps, and at ``t = T``. With ``track_kernel`` each record
    carries ``|H(t) - H(0)|_F`` of the dynamic kernel.
    """
    if T < 0 or trace_every < 1:
        raise DomainError("T must be >= 0 and trace_every >= 1")
    data = _Blocks(blocks)
    _check_dim(params, data.X)
    Y = np.asarray(Y, dtype=float).reshape(-1)
    if Y.shape[0] != len(data.sizes):
        raise DomainError(f"{len(data.sizes)} examples but {Y.shape[0]} labels")
    Xt = None if test_block is None else as_matrix(test_block)
    kappa = params.kappa
    W0 = params.W.copy()
    W = W0.copy()
    cur = replace(params, W=W)
    H0 = data.dynamic_gram(cur) if (track_kernel or eta is None) else None
    if eta is None:
        eta = auto_eta(H0, kappa)
    if not eta > 0:
        raise DomainError("eta must be positive")
    scale = params.a / np.sqrt(params.m)

    def record(t, u):
        resid = Y - u
        rec = TraceRecord(
            t=t,
            loss=0.5 * float(resid @ resid),
            u_train=u.copy(),
            u_test=None if Xt is None else kappa * float(_column_outputs(cur, Xt).sum()),
            max_weight_move=float(np.linalg.norm(cur.W - W0, axis=0).max()),
        )
        if track_kernel:
            rec.kernel_drift_frob = float(np.linalg.norm(data.dynamic_gram(cur) - H0))
        return rec

    records = []
    for t in range(T + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            u = kappa * data.outputs(cur)
            resid = Y - u
            loss = 0.5 * float(resid @ resid)
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite loss at step {t}; eta={eta:g} is too large", step=t)
        if t % trace_every == 0 or t == T:
            records.append(record(t, u))
        if t == T:
            break
        ind = _indicators(cur, data.X)
        c = resid[data.owner]
        # dL/dW = -kappa * sum_l c_l x_l (a * 1_l)^T / sqrt(m)
        grad = -kappa * (data.X * c) @ ind.T * scale
        cur.W = cur.W - eta * grad
    return TrainTrace(records, float(eta), int(T), cur, H0 if track_kernel else None)


def train_gd(params, dataset, policy=SelfLoopPolicy.INCLUDE, eta=None, T=100, trace_every=1,
             test_graph=None, track_kernel=False):
    """Graph-level training. ``eta=None`` picks ``1 / (kappa^2 lambda_max(H(0)))``."""
    if dataset.mode != "graph":
        raise DomainError("train_gd expects a graph-mode dataset; use train_gd_node")
    blocks = [aggregate_features(g, policy) for g in dataset.graphs]
    if test_graph is None:
        test_graph = dataset.test_graph
    test_block = None if test_graph is None else aggregate_features(test_graph, policy)
    return train_blocks(params, blocks, dataset.labels, test_block, eta, T, trace_every, track_kernel)


def train_gd_node(params, graph, labels, train_nodes, test_node=None, policy=SelfLoopPolicy.INCLUDE,
                  eta=None, T=100, trace_every=1, track_kernel=False):
    """Transductive node-level training on ``train_nodes`` of a single graph."""
    X = aggregate_features(graph, policy).matrix
    labels = np.asarray(labels, dtype=float)
    train_nodes = list(train_nodes)
    blocks = [X[:, [u]] for u in train_nodes]
    test_block = None if test_node is None else X[:, [test_node]]
    return train_blocks(params, blocks, labels[train_nodes], test_block, eta, T, trace_every, track_kernel)


# multi-level, multi-layer network used to check the node-level recursion


@dataclass
class MultiNet:
    """``L`` levels of (aggregate, then ``R`` ReLU layers) plus a linear readout.

    ``weights[l][r]`` is the ``m x fan_in`` matrix of layer ``r + 1`` in level
    ``l + 1``; only the very first layer sees ``d`` inputs. ``readout`` is a
    Gaussian vector turning the last ``m``-dimensional output into a scalar
    per node; its gradient supplies the ``+ Sigma`` term of the kernel.
    """

    L: int
    R: int
    m: int
    weights: list
    readout: np.ndarray
    c_sigma: float = C_SIGMA

    @property
    def d(self):
        return self.weights[0][0].shape[1]


def init_multinet(d, m, L, R, seed=0, dtype=np.float64):
    """Standard Gaussian weights, drawn level by level, layer by layer, then the readout."""
    if min(d, m, L, R) < 1:
        raise DomainError("init_multinet needs d, m, L, R >= 1")
    rng = np.random.default_rng(seed)
    weights = []
    for level in range(L):
        layers = []
        for layer in range(R):
            fan_in = d if (level == 0 and layer == 0) else m
            layers.append(rng.standard_normal((m, fan_in), dtype=dtype))
        weights.append(layers)
    readout = rng.standard_normal(m, dtype=dtype)
    return MultiNet(L, R, m, weights, readout)


def _multinet_forward(net, graph, policy):
    if graph.dim != net.d:
        raise DomainError(f"graph feature dimension {graph.dim} does not match network ({net.d})")
    dtype = net.readout.dtype
    A = aggregation_matrix(graph, policy).astype(dtype)
    scale = np.sqrt(net.c_sigma / net.m)
    h = graph.features.astype(dtype)
    cache = []  # (input, indicator) per combine layer, in order
    pre_acts = []
    for level in range(net.L):
        h = h @ A
        for layer in range(net.R):
            W = net.weights[level][layer]
            g = W @ h
            pre_acts.append(g)
            cache.append((h, g >= 0))
            h = scale * np.maximum(g, 0)
    return h, cache, pre_acts, A


def forward_multilayer(net, graph, policy=SelfLoopPolicy.INCLUDE, return_preactivations=False):
    """``m x N`` output of the last layer; column ``u`` belongs to node ``u``.

    With ``return_preactivations`` also returns the list of ``W h`` matrices,
    one per combine layer in order.
    """
    out, _, pre, _ = _multinet_forward(net, graph, policy)
    return (out, pre) if return_preactivations else out


def empirical_ntk_node(net, graph, policy=SelfLoopPolicy.INCLUDE):
    """Finite-width node-level tangent kernel of ``z(u) = readout . f(u)``.

    Sums ``<dz(u)/dTheta, dz(u')/dTheta>`` over every weight matrix and the
    readout, accumulated layer by layer in reverse mode.
    """
    out, cache, _, A = _multinet_forward(net, graph, policy)
    N = graph.num_nodes
    scale = np.sqrt(net.c_sigma / net.m)
    K = (out.T @ out).astype(float)  # readout term
    # B[:, v, u] = d z(u) / d h[:, v] for the current layer's output h
    B = np.zeros((net.m, N, N), dtype=out.dtype)
    B[:, np.arange(N), np.arange(N)] = net.readout[:, None]
    k = len(cache) - 1
    for level in reversed(range(net.L)):
        for layer in reversed(range(net.R)):
            h_in, ind = cache[k]
            W = net.weights[level][layer]
            delta = scale * ind[:, :, None] * B               # d z(u) / d g[:, v]
            flat = delta.reshape(net.m, N * N)
            gram = (flat.T @ flat).astype(float).reshape(N, N, N, N)  # [v, u, v', u']
            K += np.einsum("vuwx,vw->ux", gram, (h_in.T @ h_in).astype(float))
            B = (W.T @ flat).reshape(W.shape[1], N, N)
            k -= 1
        # undo the aggregation that fed this level: h_agg[:, u'] = sum_v A[v, u'] h[:, v]
        B = np.einsum("cpu,vp->cvu", B, A)
    K = 0.5 * (K + K.T)
    return KernelMatrix(K, f"empirical(node, m={net.m})")
