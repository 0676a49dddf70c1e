"""Analytic and Monte Carlo graph neural tangent kernels.

Graph level: for aggregated columns ``x_l`` of ``G`` and ``x'_k`` of ``H``

    k(G, H) = sum_{l,k} <x_l, x'_k> * P[w.x_l >= 0, w.x'_k >= 0],   w ~ N(0, I)

and the co-activation probability of two half-spaces through the origin is
``(pi - theta) / (2 pi)``. Node level uses the multi-level, multi-layer
covariance recursion with ``c_sigma = 2``.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, InternalConsistencyError
from .graph_core import SelfLoopPolicy, aggregate_features, aggregation_matrix, as_matrix

C_SIGMA = 2.0
DIAG_TOL = 1e-12


@dataclass
class KernelMatrix:
    """Symmetric Gram matrix tagged with where it came from.

    The stored matrix is rebuilt from the upper triangle so it is exactly
    symmetric whatever roundoff the producer left in the lower half.
    """

    values: np.ndarray
    provenance: str = "analytic"

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise DomainError(f"kernel matrix must be square, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise DomainError("kernel matrix has non-finite entries")
        self.values = np.triu(v) + np.triu(v, 1).T

    @property
    def size(self):
        return self.values.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def to_csv(self):
        buf = io.StringIO()
        buf.write(f"# provenance: {self.provenance}\n")
        np.savetxt(buf, self.values, delimiter=",", fmt="%.17g")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        lines = text.splitlines()
        provenance = "unknown"
        if lines and lines[0].startswith("# provenance:"):
            provenance = lines[0].split(":", 1)[1].strip()
        vals = np.loadtxt(io.StringIO(text), delimiter=",", comments="#", ndmin=2)
        return cls(vals, provenance)


def _clamp_cos(c):
    return np.clip(c, -1.0, 1.0)


def coactivation_probability(cos_angle):
    """``P[w.x >= 0 and w.y >= 0]`` for Gaussian ``w`` when ``cos(x, y) = cos_angle``."""
    c = np.asarray(cos_angle, dtype=float)
    if np.any(np.isnan(c)):
        raise DomainError("cos_angle is NaN")
    out = (np.pi - np.arccos(_clamp_cos(c))) / (2.0 * np.pi)
    return float(out) if out.ndim == 0 else out


def _cosines(X, Y):
    inner = X.T @ Y
    nx = np.linalg.norm(X, axis=0)
    ny = np.linalg.norm(Y, axis=0)
    denom = np.outer(nx, ny)
    # zero columns get cos = 0; their inner product is 0 anyway
    cos = np.divide(inner, denom, out=np.zeros_like(inner), where=denom > 0)
    return inner, cos


def gntk_graph_pair(aggG, aggH):
    X, Y = as_matrix(aggG), as_matrix(aggH)
    if X.shape[0] != Y.shape[0]:
        raise DomainError(f"feature dimensions differ: {X.shape[0]} vs {Y.shape[0]}")
    inner, cos = _cosines(X, Y)
    return float(np.sum(inner * coactivation_probability(cos)))


def _stack(aggs):
    mats = [as_matrix(a) for a in aggs]
    dims = {m.shape[0] for m in mats}
    if len(dims) != 1:
        raise DomainError(f"feature dimensions differ across graphs: {sorted(dims)}")
    sizes = np.array([m.shape[1] for m in mats])
    return np.hstack(mats), sizes


def _group_sum(M, sizes_r, sizes_c):
    """Sum the blocks of ``M`` given row-block and column-block sizes."""
    starts_r = np.concatenate([[0], np.cumsum(sizes_r)[:-1]])
    starts_c = np.concatenate([[0], np.cumsum(sizes_c)[:-1]])
    return np.add.reduceat(np.add.reduceat(M, starts_r, axis=0), starts_c, axis=1)


def gntk_gram_from_columns(aggs):
    """Analytic Gram over a list of aggregated feature matrices."""
    X, sizes = _stack(aggs)
    inner, cos = _cosines(X, X)
    return KernelMatrix(_group_sum(inner * coactivation_probability(cos), sizes, sizes), "analytic")


def gntk_cross_from_columns(agg_test, aggs):
    X, sizes = _stack(aggs)
    T = as_matrix(agg_test)
    if T.shape[0] != X.shape[0]:
        raise DomainError("test graph feature dimension differs from the dataset")
    inner, cos = _cosines(T, X)
    return _group_sum(inner * coactivation_probability(cos), [T.shape[1]], sizes).ravel()


def gntk_gram(dataset, policy=SelfLoopPolicy.INCLUDE):
    """``H^cts``: analytic GNTK between every pair of training graphs."""
    return gntk_gram_from_columns([aggregate_features(g, policy) for g in dataset.graphs])


def gntk_cross(test_graph, dataset, policy=SelfLoopPolicy.INCLUDE):
    return gntk_cross_from_columns(aggregate_features(test_graph, policy),
                                   [aggregate_features(g, policy) for g in dataset.graphs])


def _mc_gram(aggs, m, seed, bias, chunk):
    if m < 1:
        raise DomainError("Monte Carlo width m must be >= 1")
    X, sizes = _stack(aggs)
    d = X.shape[0]
    rng = np.random.default_rng(seed)
    co = np.zeros((X.shape[1], X.shape[1]))
    done = 0
    while done < m:
        k = min(chunk, m - done)
        W = rng.standard_normal((k, d)).T
        act = (W.T @ X >= bias).astype(float)
        co += act.T @ act
        done += k
    return _group_sum((X.T @ X) * co / m, sizes, sizes)


def mc_gntk_gram(dataset, policy=SelfLoopPolicy.INCLUDE, m=10_000, seed=0, *, bias=0.0, chunk=65_536):
    """``H^dis``: the width-``m`` Monte Carlo estimate of ``H^cts``.

    Draws ``w_1..w_m`` i.i.d. ``N(0, I_d)`` from ``seed`` (row by row, in
    chunks; the chunk size does not change the draws).
    """
    aggs = [aggregate_features(g, policy) for g in dataset.graphs]
    vals = _mc_gram(aggs, m, seed, bias, chunk)
    tag = f"monte_carlo(m={m}, seed={seed})" if bias == 0 else f"monte_carlo(m={m}, seed={seed}, b={bias})"
    return KernelMatrix(vals, tag)


def mc_gram_with_stderr(aggs, m, seed, bias=0.0, chunk=65_536):
    """Monte Carlo Gram plus the entrywise standard error of the mean.

    Per-sample values ``sum_{l,k} x_l.x_k 1 1`` are accumulated exactly, so the
    standard error is the sample standard deviation over ``sqrt(m)``.
    """
    if m < 1:
        raise DomainError("Monte Carlo width m must be >= 1")
    X, sizes = _stack(aggs)
    d = X.shape[0]
    n = len(sizes)
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    rng = np.random.default_rng(seed)
    inner = X.T @ X
    chunk = max(1, min(chunk, 4_000_000 // (X.shape[1] ** 2)))
    s1 = np.zeros((n, n))
    s2 = np.zeros((n, n))
    done = 0
    while done < m:
        k = min(chunk, m - done)
        W = rng.standard_normal((k, d)).T
        act = (W.T @ X >= bias).astype(float)  # k x C
        # v[r, i, j] = sum_{l in i, q in j} inner[l, q] act[r, l] act[r, q]
        left = act[:, :, None] * inner[None, :, :]          # k x C x C
        per = np.einsum("rlq,rq->rlq", left, act)
        per = np.add.reduceat(np.add.reduceat(per, starts, axis=1), starts, axis=2)
        s1 += per.sum(axis=0)
        s2 += (per ** 2).sum(axis=0)
        done += k
    mean = s1 / m
    if m > 1:
        var = np.maximum(s2 / m - mean ** 2, 0.0) * m / (m - 1)
    else:
        var = np.zeros_like(mean)
    return mean, np.sqrt(var / m)


def shifted_gntk_gram(dataset, policy=SelfLoopPolicy.INCLUDE, b=0.0, m_mc=100_000, seed=0, chunk=65_536):
    """Monte Carlo kernel of the shifted ReLU ``sigma(w.x - b)``; indicators ``1[w.x >= b]``.

    With ``b = 0`` and the same seed this reproduces ``mc_gntk_gram`` exactly.
    """
    if b < 0:
        raise DomainError("shift b must be >= 0")
    return mc_gntk_gram(dataset, policy, m_mc, seed, bias=b, chunk=chunk)


def gauss_relu_moments(Lambda):
    """``(Sigma, SigmaDot)`` for ``(a, b) ~ N(0, Lambda)`` with ``c_sigma = 2``.

    ``Sigma = 2 E[relu(a) relu(b)]`` and ``SigmaDot = 2 P[a >= 0, b >= 0]``.
    Accepts a single 2x2 matrix; see :func:`relu_moment_maps` for the
    vectorized form used by the recursion.
    """
    L = np.asarray(Lambda, dtype=float)
    if L.shape != (2, 2):
        raise DomainError("Lambda must be 2 x 2")
    sig, sdot, _ = relu_moment_maps(np.array([[L[0, 0]]]), np.array([[L[1, 1]]]), np.array([[L[0, 1]]]))
    return float(sig[0, 0]), float(sdot[0, 0])


def relu_moment_maps(var_u, var_v, cov):
    """Elementwise arc-cosine maps. Returns ``(Sigma, SigmaDot, degenerate_mask)``."""
    var_u = np.asarray(var_u, dtype=float)
    var_v = np.asarray(var_v, dtype=float)
    cov = np.asarray(cov, dtype=float)
    if np.any(var_u < -DIAG_TOL) or np.any(var_v < -DIAG_TOL):
        raise DomainError("covariance has a negative diagonal entry")
    s = np.sqrt(np.maximum(var_u, 0.0) * np.maximum(var_v, 0.0))
    degenerate = s <= DIAG_TOL
    cos = np.divide(cov, s, out=np.zeros_like(cov), where=~degenerate)
    theta = np.arccos(_clamp_cos(cos))
    sigma = np.where(degenerate, 0.0, (s / np.pi) * (np.sin(theta) + (np.pi - theta) * np.cos(theta)))
    sigma_dot = (np.pi - theta) / np.pi
    return sigma, sigma_dot, degenerate


@dataclass
class NodeGntkState:
    """Covariance, derivative covariance and running kernel at one (level, layer)."""

    level: int
    layer: int
    Sigma: np.ndarray
    SigmaDot: np.ndarray | None
    K: np.ndarray
    degenerate: np.ndarray | None = field(default=None, repr=False)

    def check(self):
        tol = 1e-9 * max(1.0, float(np.abs(self.Sigma).max(initial=0.0)))
        if not np.allclose(self.Sigma, self.Sigma.T, atol=tol, rtol=0):
            raise InternalConsistencyError(f"Sigma lost symmetry at level {self.level}, layer {self.layer}")
        if not np.allclose(self.K, self.K.T, atol=1e-9 * max(1.0, float(np.abs(self.K).max(initial=0.0))), rtol=0):
            raise InternalConsistencyError(f"K lost symmetry at level {self.level}, layer {self.layer}")
        if np.any(np.diag(self.Sigma) < -DIAG_TOL):
            raise InternalConsistencyError(f"negative variance at level {self.level}, layer {self.layer}")


@dataclass
class NodeGntkResult:
    kernel: KernelMatrix
    states: list

    def state(self, level, layer):
        for s in self.states:
            if s.level == level and s.layer == layer:
                return s
        raise KeyError((level, layer))


def node_gntk_states(graph, policy=SelfLoopPolicy.INCLUDE, L=1, R=1, *, strict_paper=False):
    """Run the node-level recursion and keep every intermediate state.

    Layer 0 of each level is the aggregation step; layers ``1..R`` are the
    fully connected ReLU layers. The first level aggregates the raw feature
    covariance, matching a network whose first combine layer sees
    neighborhood sums. ``strict_paper=True`` starts instead from the
    un-aggregated ``h_u . h_u'``.
    """
    if L < 1 or R < 1:
        raise DomainError("node_gntk needs L >= 1 and R >= 1")
    A = aggregation_matrix(graph, policy)
    base = graph.features.T @ graph.features
    Sigma = base if strict_paper else A.T @ base @ A
    K = Sigma.copy()
    states = []
    for level in range(1, L + 1):
        if level > 1:
            Sigma = A.T @ Sigma @ A
            K = A.T @ K @ A
        st = NodeGntkState(level, 0, Sigma, None, K)
        st.check()
        states.append(st)
        for layer in range(1, R + 1):
            diag = np.diag(Sigma)
            if np.any(diag < -DIAG_TOL):
                raise InternalConsistencyError(f"negative variance entering level {level}, layer {layer}")
            new_sigma, sigma_dot, degenerate = relu_moment_maps(diag[:, None], diag[None, :], Sigma)
            K = K * sigma_dot + new_sigma
            Sigma = new_sigma
            st = NodeGntkState(level, layer, Sigma, sigma_dot, K, degenerate)
            st.check()
            states.append(st)
    tag = "analytic(node, strict_paper)" if strict_paper else "analytic(node)"
    return NodeGntkResult(KernelMatrix(K, tag), states)


def node_gntk(graph, policy=SelfLoopPolicy.INCLUDE, L=1, R=1, *, strict_paper=False):
    return node_gntk_states(graph, policy, L, R, strict_paper=strict_paper).kernel


def node_gram_single_layer(graph, policy=SelfLoopPolicy.INCLUDE, nodes=None):
    """Kernel of the single-hidden-layer node network: ``x_u.x_v * coactivation``."""
    X = aggregate_features(graph, policy).matrix
    if nodes is not None:
        X = X[:, list(nodes)]
    inner, cos = _cosines(X, X)
    return KernelMatrix(inner * coactivation_probability(cos), "analytic(node, single layer)")
