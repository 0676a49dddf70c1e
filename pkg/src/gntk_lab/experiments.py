"""Width sweeps comparing trained networks with their tangent kernels.

Every row is one ``(m, seed)`` pair. Its randomness comes from
``SeedSequence([seed, m, role])``, so adding widths or seeds never changes
existing rows. Rows may run in a process pool (``GNTK_LAB_THREADS``) and are
always reported in ``(m, seed)`` order.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import io as lab_io
from .dynamics import drift_report, init_bound
from .errors import ConfigurationError, GntkLabError
from .gnn import forward_graph, init_params, train_blocks, train_gd
from .gntk import (gntk_cross, gntk_gram, mc_gntk_gram, mc_gram_with_stderr,
                   node_gram_single_layer)
from .graph_core import SelfLoopPolicy, aggregate_features, generate_separated_dataset
from .regression import RegressionProblem, iterate_regression, solve_exact
from .spectral import lambda_extremes

ROLE_INIT = 0
ROLE_KERNEL = 1

LAMBDA0_FLOOR = 1e-8


@dataclass
class ExperimentConfig:
    mode: str = "graph"
    dataset: object = field(default_factory=lambda: {
        "n": 5, "N": 4, "d": 3, "delta": 0.3, "edge_prob": 0.3, "seed": 0})
    widths: list = field(default_factory=lambda: [64, 256, 1024, 4096])
    T: int = 2000
    eta: object = "auto"
    kappa: float = 0.25
    bias: float = 0.0
    seeds: list = field(default_factory=lambda: list(range(10)))
    policy: str = "include"
    trace_every: int = 100
    out: str | None = None
    delta: float = 0.05
    test_node: int | None = None
    m_mc: int = 1_000_000

    def __post_init__(self):
        if self.mode not in ("graph", "node"):
            raise ConfigurationError(f"mode must be 'graph' or 'node', got {self.mode!r}")
        self.widths = [int(w) for w in self.widths]
        self.seeds = [int(s) for s in self.seeds]
        if not self.widths or any(b <= a for a, b in zip(self.widths, self.widths[1:])):
            raise ConfigurationError("widths must be nonempty and strictly increasing")
        if not self.seeds:
            raise ConfigurationError("seeds must be nonempty")
        if self.eta != "auto":
            self.eta = float(self.eta)
            if self.eta <= 0:
                raise ConfigurationError("eta must be positive or 'auto'")
        self.policy = SelfLoopPolicy.parse(self.policy).value
        if self.T < 0 or self.trace_every < 1:
            raise ConfigurationError("T must be >= 0 and trace_every >= 1")

    @classmethod
    def from_dict(cls, obj):
        known = {f for f in cls.__dataclass_fields__}
        extra = set(obj) - known
        if extra:
            raise ConfigurationError(f"unknown config fields: {sorted(extra)}")
        return cls(**obj)

    def to_dict(self):
        return asdict(self)

    def echo(self):
        """Config as echoed in report headers; the output path is left out."""
        d = self.to_dict()
        d.pop("out")
        return d

    def load_dataset(self):
        if isinstance(self.dataset, (str, os.PathLike)):
            return lab_io.load_dataset(self.dataset)
        gen = dict(self.dataset)
        node = self.mode == "node"
        return generate_separated_dataset(
            n=1 if node else gen.get("n", 5), N=gen.get("N", 4), d=gen.get("d", 3),
            delta_target=gen.get("delta", 0.3), edge_prob=gen.get("edge_prob", 0.3),
            seed=gen.get("seed", 0), mode=self.mode, policy=self.policy,
            with_test_graph=not node)


def row_seed(seed, m, role):
    return np.random.SeedSequence([int(seed), int(m), int(role)])


def _threads():
    try:
        return max(1, int(os.environ.get("GNTK_LAB_THREADS", "1")))
    except ValueError:
        return 1


def _run_rows(fn, jobs):
    """Apply ``fn`` to every job; order of results follows ``jobs``."""
    workers = min(_threads(), len(jobs))
    if workers <= 1:
        return [fn(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


@dataclass
class EquivalenceReport:
    rows: list
    config: dict
    summary: dict

    @property
    def errors(self):
        return [r for r in self.rows if r.get("error")]

    def median_gaps(self, key="gap_gnn_vs_exact"):
        out = {}
        for m in self.config["widths"]:
            vals = [r[key] for r in self.rows if r["m"] == m and not r.get("error")]
            out[m] = float(np.median(vals)) if vals else float("nan")
        return out

    def to_csv(self):
        cols = ["m", "seed", "gap_gnn_vs_exact", "gap_gntkiter_vs_exact", "lambda_min", "final_loss",
                "init_term", "gap_gnn_vs_linearized", "error"]
        return lab_io.report_csv(self.rows, {"config": self.config, "summary": self.summary}, cols)


@dataclass
class _KernelSide:
    """Everything about a sweep that does not depend on ``(m, seed)``."""

    blocks: list
    test_block: np.ndarray
    Y: np.ndarray
    H: np.ndarray
    k_test: np.ndarray
    alpha: np.ndarray
    u_star_test: float
    lambda_min: float
    lambda_max: float
    eta: float
    gap_gntkiter: float
    gap_gntkiter_half: float


def _kernel_side(blocks, test_block, Y, H, k_test, cfg):
    eig = lambda_extremes(H)
    if eig.lambda_min <= LAMBDA0_FLOOR:
        raise ConfigurationError(
            f"smallest kernel eigenvalue {eig.lambda_min:.3e} <= {LAMBDA0_FLOOR:g}; "
            "the equivalence needs a strictly positive-definite GNTK")
    exact = solve_exact(H, k_test, Y)
    eta = 1.0 / (cfg.kappa ** 2 * eig.lambda_max) if cfg.eta == "auto" else cfg.eta
    it = iterate_regression(RegressionProblem(H, k_test, Y, cfg.kappa, eta, cfg.T))
    return _KernelSide(blocks, test_block, Y, H, k_test, np.linalg.solve(H, k_test),
                       exact.u_test, eig.lambda_min, eig.lambda_max, eta,
                       abs(float(it.u_test[-1]) - exact.u_test),
                       abs(float(it.u_test[cfg.T // 2]) - exact.u_test))


def _equiv_row(job):
    cfg, side, m, seed = job
    row = {"m": m, "seed": seed, "gap_gntkiter_vs_exact": side.gap_gntkiter,
           "lambda_min": side.lambda_min, "error": ""}
    d = side.test_block.shape[0]
    try:
        params = init_params(d, m, cfg.bias, cfg.kappa, row_seed(seed, m, ROLE_INIT))
        f0 = np.array([forward_graph(params, b) for b in side.blocks])
        f0_test = forward_graph(params, side.test_block)
        # infinite-width prediction from the same starting outputs
        lin = iterate_regression(RegressionProblem(side.H, side.k_test, side.Y, cfg.kappa, side.eta, cfg.T),
                                 u0=cfg.kappa * f0, u_test0=cfg.kappa * f0_test)
        # a node example is a block of one column, so both modes share the trainer
        trace = train_blocks(params, side.blocks, side.Y, side.test_block, side.eta, cfg.T, cfg.T)
        fin = trace.final()
        row.update(
            gap_gnn_vs_exact=abs(fin.u_test - side.u_star_test),
            final_loss=fin.loss,
            init_term=cfg.kappa * abs(f0_test - float(side.alpha @ f0)),
            gap_gnn_vs_linearized=abs(fin.u_test - float(lin.u_test[-1])),
        )
    except GntkLabError as err:
        row.update(gap_gnn_vs_exact=float("nan"), final_loss=float("nan"), init_term=float("nan"),
                   gap_gnn_vs_linearized=float("nan"), error=f"{type(err).__name__}: {err}")
    return row


def _sweep(cfg, side):
    jobs = [(cfg, side, m, s) for m in cfg.widths for s in cfg.seeds]
    rows = _run_rows(_equiv_row, jobs)
    summary = {"u_star_test": side.u_star_test, "lambda_min": side.lambda_min,
               "lambda_max": side.lambda_max, "eta": side.eta,
               "gap_gntkiter_vs_exact": side.gap_gntkiter,
               "gap_gntkiter_at_half_T": side.gap_gntkiter_half}
    return EquivalenceReport(rows, cfg.echo(), summary)


def run_equivalence(cfg, dataset=None):
    """Graph-level sweep: trained GNN and iterated GNTK regression against the exact solve."""
    if dataset is None:
        dataset = cfg.load_dataset()
    if dataset.mode != "graph":
        raise ConfigurationError("run_equivalence needs a graph-mode dataset")
    if dataset.test_graph is None:
        raise ConfigurationError("dataset has no test graph")
    policy = SelfLoopPolicy.parse(cfg.policy)
    blocks = [aggregate_features(g, policy).matrix for g in dataset.graphs]
    test_block = aggregate_features(dataset.test_graph, policy).matrix
    if cfg.bias > 0:
        aggs = blocks + [test_block]
        full, _ = mc_gram_with_stderr(aggs, cfg.m_mc, row_seed(0, cfg.m_mc, ROLE_KERNEL), cfg.bias)
        H, k_test = full[:-1, :-1], full[-1, :-1]
    else:
        H = gntk_gram(dataset, policy).values
        k_test = gntk_cross(dataset.test_graph, dataset, policy)
    side = _kernel_side(blocks, test_block, dataset.labels, H, k_test, cfg)
    return _sweep(cfg, side)


def run_node_equivalence(cfg, dataset=None):
    """Transductive node-level sweep with one held-out node (``test_node``, default the last)."""
    if dataset is None:
        dataset = cfg.load_dataset()
    if dataset.mode != "node":
        raise ConfigurationError("run_node_equivalence needs a node-mode dataset")
    graph = dataset.graphs[0]
    N = graph.num_nodes
    if N < 2:
        raise ConfigurationError("node equivalence needs at least two nodes")
    test = N - 1 if cfg.test_node is None else int(cfg.test_node)
    if not 0 <= test < N:
        raise ConfigurationError(f"test_node {test} out of range [0, {N})")
    policy = SelfLoopPolicy.parse(cfg.policy)
    train = [u for u in range(N) if u != test]
    X = aggregate_features(graph, policy).matrix
    full = node_gram_single_layer(graph, policy).values
    H = full[np.ix_(train, train)]
    k_test = full[test, train]
    side = _kernel_side([X[:, [u]] for u in train], X[:, [test]], dataset.labels[train], H, k_test, cfg)
    report = _sweep(cfg, side)
    report.summary["test_node"] = test
    return report


def _log_slope(ms, vals):
    if len(ms) < 2:
        return None
    return float(np.polyfit(np.log(ms), np.log(vals), 1)[0])


def _concentration_row(job):
    cfg, dataset, H_cts, m, seed = job
    H_dis = mc_gntk_gram(dataset, cfg.policy, m, row_seed(seed, m, ROLE_KERNEL)).values
    bound = init_bound(dataset.max_nodes, dataset.n, m, cfg.delta)
    err = float(np.linalg.norm(H_dis - H_cts))
    return {"m": m, "seed": seed, "frob_err": err, "bound": bound, "within_bound": err <= bound}


def run_concentration(cfg, dataset=None):
    """``|H^dis - H^cts|_F`` per ``(m, seed)`` and the fitted log-log slope of its median."""
    if dataset is None:
        dataset = cfg.load_dataset()
    H_cts = gntk_gram(dataset, cfg.policy).values
    rows = _run_rows(_concentration_row,
                     [(cfg, dataset, H_cts, m, s) for m in cfg.widths for s in cfg.seeds])
    medians = [float(np.median([r["frob_err"] for r in rows if r["m"] == m])) for m in cfg.widths]
    slope = _log_slope(cfg.widths, medians)
    rows.append({"m": "slope", "seed": "", "frob_err": "" if slope is None else slope,
                 "bound": "", "within_bound": ""})
    return rows, slope


def _drift_row(job):
    cfg, dataset, H_cts, m, seed = job
    params = init_params(dataset.dim, m, cfg.bias, cfg.kappa, row_seed(seed, m, ROLE_INIT))
    eta = 1.0 / (cfg.kappa ** 2 * np.linalg.eigvalsh(H_cts)[-1]) if cfg.eta == "auto" else cfg.eta
    try:
        trace = train_gd(params, dataset, cfg.policy, eta, cfg.T, cfg.trace_every, track_kernel=True)
    except GntkLabError as err:
        return m, seed, None, f"{type(err).__name__}: {err}"
    return m, seed, drift_report(trace, dataset, cfg.policy, H_cts, cfg.delta), ""


def run_drift(cfg, dataset=None):
    """Train with kernel snapshots; one :class:`DriftReport` per ``(m, seed)``."""
    if dataset is None:
        dataset = cfg.load_dataset()
    H_cts = gntk_gram(dataset, cfg.policy).values
    return _run_rows(_drift_row, [(cfg, dataset, H_cts, m, s) for m in cfg.widths for s in cfg.seeds])


def drift_rows(results):
    rows = []
    for m, seed, rep, err in results:
        if rep is None:
            rows.append({"m": m, "seed": seed, "error": err})
            continue
        for r in rep.csv_rows():
            rows.append({"m": m, "seed": seed, **r, "violation": r["t"] in rep.violations, "error": ""})
    return rows


def init_scale_check(dataset, m, seeds, delta=0.05, policy=SelfLoopPolicy.INCLUDE, kappa=1.0):
    """Per seed: does ``|f(W(0), G)| <= 2 N R log(2 N m / delta)`` hold for every graph?"""
    graphs = list(dataset.graphs) + ([dataset.test_graph] if dataset.test_graph is not None else [])
    aggs = [aggregate_features(g, policy) for g in graphs]
    R = max(float(np.linalg.norm(a.matrix, axis=0).max()) for a in aggs)
    N = max(a.num_nodes for a in aggs)
    bound = 2.0 * N * R * math.log(2.0 * N * m / delta)
    out = []
    for s in seeds:
        params = init_params(dataset.dim, m, 0.0, kappa, row_seed(s, m, ROLE_INIT))
        worst = max(abs(forward_graph(params, a)) for a in aggs)
        out.append({"seed": s, "max_abs_f0": worst, "bound": bound, "holds": worst <= bound})
    return out


__all__ = [
    "ExperimentConfig", "EquivalenceReport", "run_equivalence", "run_node_equivalence",
    "run_concentration", "run_drift", "drift_rows", "init_scale_check", "row_seed",
]
