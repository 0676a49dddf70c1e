"""Graphs, neighbor aggregation and synthetic dataset generation.

A graph holds a ``d x N`` feature matrix (column ``u`` is the feature of
node ``u``) and symmetric adjacency lists. Everything downstream consumes
the *aggregated* features, where column ``u`` is the sum of the features
over the neighborhood of ``u``.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, GenerationError


class SelfLoopPolicy(str, enum.Enum):
    """Whether a node belongs to its own neighborhood when aggregating."""

    INCLUDE = "include"
    EXCLUDE = "exclude"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise DomainError(f"unknown self-loop policy {value!r}") from None


@dataclass(frozen=True)
class Graph:
    features: np.ndarray
    adjacency: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        feats = np.array(self.features, dtype=float)
        if feats.ndim != 2:
            raise DomainError("features must be a d x N matrix")
        feats.setflags(write=False)
        object.__setattr__(self, "features", feats)
        adj = tuple(tuple(sorted(set(int(v) for v in nbrs))) for nbrs in self.adjacency)
        object.__setattr__(self, "adjacency", adj)
        n = feats.shape[1]
        if n < 1:
            raise DomainError("a graph needs at least one node")
        if len(adj) != n:
            raise DomainError(f"adjacency has {len(adj)} lists for {n} nodes")
        for u, nbrs in enumerate(adj):
            for v in nbrs:
                if not 0 <= v < n:
                    raise DomainError(f"neighbor {v} of node {u} out of range [0, {n})")
                if u not in adj[v]:
                    raise DomainError(f"adjacency not symmetric: {v} in N({u}) but {u} not in N({v})")

    @classmethod
    def from_edges(cls, features, edges):
        feats = np.asarray(features, dtype=float)
        n = feats.shape[1]
        nbrs = [set() for _ in range(n)]
        for k, (u, v) in enumerate(edges):
            u, v = int(u), int(v)
            if not (0 <= u < n and 0 <= v < n):
                raise DomainError(f"edge {k} ({u}, {v}) out of range for {n} nodes")
            nbrs[u].add(v)
            nbrs[v].add(u)
        return cls(feats, tuple(tuple(s) for s in nbrs))

    @property
    def num_nodes(self):
        return self.features.shape[1]

    @property
    def dim(self):
        return self.features.shape[0]

    def edges(self):
        """Undirected edges, each listed once with ``u <= v``."""
        return [(u, v) for u, nbrs in enumerate(self.adjacency) for v in nbrs if u <= v]

    def relabel(self, perm):
        """Graph with node ``perm[i]`` of ``self`` moved to position ``i``."""
        perm = [int(p) for p in perm]
        inv = {old: new for new, old in enumerate(perm)}
        adj = [tuple(inv[v] for v in self.adjacency[old]) for old in perm]
        return Graph(self.features[:, perm], tuple(adj))


@dataclass
class GraphDataset:
    """Training graphs with labels, plus an optional held-out test graph.

    In ``"graph"`` mode there is one label per graph. In ``"node"`` mode there
    is a single graph and one label per node.
    """

    graphs: list
    labels: np.ndarray
    mode: str = "graph"
    test_graph: Graph | None = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=float).reshape(-1)
        if not self.graphs:
            raise DomainError("dataset needs at least one graph")
        dims = {g.dim for g in self.graphs}
        if self.test_graph is not None:
            dims.add(self.test_graph.dim)
        if len(dims) != 1:
            raise DomainError(f"graphs disagree on feature dimension: {sorted(dims)}")
        if self.mode == "graph":
            expected = len(self.graphs)
        elif self.mode == "node":
            if len(self.graphs) != 1:
                raise DomainError("node mode expects exactly one graph")
            expected = self.graphs[0].num_nodes
        else:
            raise DomainError(f"unknown mode {self.mode!r}")
        if self.labels.shape[0] != expected:
            raise DomainError(f"{self.mode} mode needs {expected} labels, got {self.labels.shape[0]}")

    @property
    def n(self):
        return len(self.graphs)

    @property
    def dim(self):
        return self.graphs[0].dim

    @property
    def max_nodes(self):
        return max(g.num_nodes for g in self.graphs)


@dataclass(frozen=True)
class AggregatedFeatures:
    """``d x N`` matrix whose column ``l`` is the neighborhood sum at node ``l``."""

    matrix: np.ndarray
    policy: SelfLoopPolicy = field(default=SelfLoopPolicy.INCLUDE)

    @property
    def num_nodes(self):
        return self.matrix.shape[1]

    @property
    def dim(self):
        return self.matrix.shape[0]

    def column(self, l):
        return AggregatedFeatures(self.matrix[:, [l]], self.policy)


def as_matrix(agg):
    """The raw ``d x N`` array behind ``agg`` (accepts plain arrays too)."""
    mat = agg.matrix if isinstance(agg, AggregatedFeatures) else np.asarray(agg, dtype=float)
    if mat.ndim == 1:
        mat = mat[:, None]
    return mat


def aggregation_matrix(graph, policy=SelfLoopPolicy.INCLUDE):
    """``N x N`` 0/1 matrix ``A`` with ``A[v, u] = 1`` iff ``v`` is in the neighborhood of ``u``.

    ``features @ A`` is the aggregated feature matrix.
    """
    policy = SelfLoopPolicy.parse(policy)
    n = graph.num_nodes
    A = np.zeros((n, n))
    for u, nbrs in enumerate(graph.adjacency):
        A[list(nbrs), u] = 1.0
    if policy is SelfLoopPolicy.INCLUDE:
        A[np.arange(n), np.arange(n)] = 1.0
    return A


def aggregate_features(graph, policy=SelfLoopPolicy.INCLUDE):
    policy = SelfLoopPolicy.parse(policy)
    return AggregatedFeatures(graph.features @ aggregation_matrix(graph, policy), policy)


@dataclass(frozen=True)
class FeatureNormBounds:
    raw: float
    aggregated: float


def feature_norm_bound(dataset, policy=SelfLoopPolicy.INCLUDE):
    """Largest raw and aggregated feature norms over every node of every graph.

    The test graph, when present, is included.
    """
    graphs = list(dataset.graphs) if isinstance(dataset, GraphDataset) else list(dataset)
    if not graphs:
        raise DomainError("feature_norm_bound needs a nonempty dataset")
    if isinstance(dataset, GraphDataset) and dataset.test_graph is not None:
        graphs.append(dataset.test_graph)
    raw = max(float(np.linalg.norm(g.features, axis=0).max()) for g in graphs)
    agg = max(float(np.linalg.norm(aggregate_features(g, policy).matrix, axis=0).max()) for g in graphs)
    return FeatureNormBounds(raw=raw, aggregated=agg)


def _normalize_columns(cols):
    cols = np.asarray(cols, dtype=float)
    norms = np.linalg.norm(cols, axis=0)
    if np.any(norms == 0):
        raise DomainError("unnormalizable point: zero column")
    return cols / norms


def _pairwise_separation(a, b=None):
    # min over pairs of min(|x - y|, |x + y|) for unit columns; via |x -/+ y|^2 = 2 -/+ 2<x, y>
    if b is None:
        g = a.T @ a
        iu = np.triu_indices(a.shape[1], k=1)
        inner = np.abs(g[iu])
    else:
        inner = np.abs(a.T @ b).ravel()
    if inner.size == 0:
        return np.inf
    return float(np.sqrt(max(0.0, 2.0 - 2.0 * inner.max())))


def delta_separation(columns):
    """Smallest ``min(|x - y|, |x + y|)`` over distinct pairs of normalized columns.

    ``columns`` is a ``d x k`` array or a sequence of ``d``-vectors. Returns
    ``inf`` for fewer than two columns.
    """
    if isinstance(columns, np.ndarray) and columns.ndim == 2:
        cols = columns
    else:
        cols = np.column_stack([np.asarray(c, dtype=float).ravel() for c in columns]) if len(columns) else np.zeros((1, 0))
    unit = _normalize_columns(cols)
    # exact norms: the Gram shortcut loses precision for near-identical points
    best = np.inf
    k = unit.shape[1]
    for i, j in itertools.combinations(range(k), 2):
        x, y = unit[:, i], unit[:, j]
        best = min(best, float(np.linalg.norm(x - y)), float(np.linalg.norm(x + y)))
    return best


def _random_graph(rng, N, d, edge_prob):
    # draw order per attempt: upper-triangle edge coins (row-major), then features column-major
    coins = rng.random(N * (N - 1) // 2)
    edges = [pair for pair, c in zip(itertools.combinations(range(N), 2), coins) if c < edge_prob]
    feats = rng.standard_normal((N, d)).T
    feats = feats / np.linalg.norm(feats, axis=0)
    return Graph.from_edges(feats, edges)


def generate_separated_dataset(n, N, d, delta_target, edge_prob, seed, *, mode="graph",
                               policy=SelfLoopPolicy.INCLUDE, with_test_graph=False,
                               max_attempts=100_000):
    """Random graphs whose normalized aggregated columns are ``delta_target``-separated.

    Graphs are drawn one at a time (Erdos-Renyi topology, unit-norm Gaussian
    feature directions) and redrawn until their columns are separated from each
    other and from every previously accepted column. Labels are uniform on
    ``[-1, 1]`` and drawn last. With ``with_test_graph`` an extra graph is
    drawn after the training graphs and stored as ``test_graph``; its columns
    join the separation constraint.

    In ``"node"`` mode ``n`` must be 1 and there is one label per node.
    """
    policy = SelfLoopPolicy.parse(policy)
    if d < 2:
        raise DomainError("generation needs d >= 2")
    if not 0.0 < delta_target < np.sqrt(2.0):
        raise DomainError("delta_target must lie in (0, sqrt(2))")
    if mode == "node" and n != 1:
        raise DomainError("node mode generates a single graph (n = 1)")
    rng = np.random.default_rng(seed)
    accepted = np.zeros((d, 0))
    graphs = []
    attempts = 0
    for _ in range(n + (1 if with_test_graph else 0)):
        while True:
            attempts += 1
            if attempts > max_attempts:
                raise GenerationError(
                    f"no {delta_target}-separated dataset within {max_attempts} attempts; "
                    "try a smaller delta_target")
            g = _random_graph(rng, N, d, edge_prob)
            cols = aggregate_features(g, policy).matrix
            norms = np.linalg.norm(cols, axis=0)
            if np.any(norms < 1e-12):
                continue
            unit = cols / norms
            if _pairwise_separation(unit) < delta_target:
                continue
            if accepted.shape[1] and _pairwise_separation(unit, accepted) < delta_target:
                continue
            graphs.append(g)
            accepted = np.hstack([accepted, unit])
            break
    test_graph = graphs.pop() if with_test_graph else None
    num_labels = N if mode == "node" else n
    labels = rng.uniform(-1.0, 1.0, size=num_labels)
    return GraphDataset(graphs, labels, mode=mode, test_graph=test_graph)


def dataset_columns(dataset, policy=SelfLoopPolicy.INCLUDE, include_test=False):
    """All aggregated columns of the dataset stacked side by side."""
    graphs = list(dataset.graphs)
    if include_test and dataset.test_graph is not None:
        graphs.append(dataset.test_graph)
    return np.hstack([aggregate_features(g, policy).matrix for g in graphs])
