"""Command-line entry point: ``gntk-lab <subcommand> ...``.

Every subcommand writes CSV (or JSON for ``gen-data`` and ``spectral``) to
``--out`` or stdout. Sweep subcommands take ``--config file.json`` with the
full experiment configuration; explicit flags override it. The exit code is
0 exactly when no row reported an error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import io as lab_io
from .errors import GntkLabError
from .experiments import (ExperimentConfig, drift_rows, run_concentration, run_drift,
                          run_equivalence, run_node_equivalence)
from .gnn import init_params, train_gd, train_gd_node
from .gntk import (KernelMatrix, gntk_cross, gntk_gram, mc_gntk_gram, mc_gram_with_stderr,
                   node_gntk)
from .graph_core import SelfLoopPolicy, aggregate_features, generate_separated_dataset
from .regression import RegressionProblem, iterate_regression, solve_exact
from .spectral import check_separation_bound, check_shifted_bounds, lambda_extremes


def _emit(text, out):
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _policy_arg(p):
    p.add_argument("--policy", default="include", choices=[e.value for e in SelfLoopPolicy])


def _cmd_gen_data(args):
    ds = generate_separated_dataset(args.n, args.num_nodes, args.d, args.delta, args.edge_prob, args.seed,
                                    mode=args.mode, policy=args.policy,
                                    with_test_graph=args.mode == "graph" and not args.no_test_graph)
    lab_io.save_dataset(ds, args.out)
    return 0


def _cmd_gram(args):
    ds = lab_io.load_dataset(args.dataset)
    if args.bias > 0 or args.mc_m:
        m = args.mc_m or 1_000_000
        K = mc_gntk_gram(ds, args.policy, m, args.seed, bias=args.bias)
    else:
        K = gntk_gram(ds, args.policy)
    _emit(K.to_csv(), args.out)
    return 0


def _cmd_node_gntk(args):
    ds = lab_io.load_dataset(args.dataset)
    K = node_gntk(ds.graphs[0], args.policy, args.L, args.R, strict_paper=args.strict_paper)
    _emit(K.to_csv(), args.out)
    return 0


def _cmd_regress(args):
    ds = lab_io.load_dataset(args.dataset)
    if ds.test_graph is None:
        raise GntkLabError("dataset has no test_graph to predict")
    H = gntk_gram(ds, args.policy).values
    k = gntk_cross(ds.test_graph, ds, args.policy)
    exact = solve_exact(H, k, ds.labels)
    eta = None if args.eta == "auto" else float(args.eta)
    prob = RegressionProblem(H, k, ds.labels, args.kappa, eta, args.T)
    tr = iterate_regression(prob)
    rows = [{"t": t, "u_test": float(tr.u_test[t]), "gap": abs(float(tr.u_test[t]) - exact.u_test),
             "residual_norm": float(np.linalg.norm(tr.u[t] - ds.labels))}
            for t in range(0, args.T + 1) if t % args.trace_every == 0 or t == args.T]
    cfg = {"u_star_test": exact.u_test, "lambda_min": exact.lambda_min, "eta": prob.eta,
           "kappa": args.kappa, "T": args.T, "policy": args.policy}
    _emit(lab_io.report_csv(rows, cfg), args.out)
    return 0


def _cmd_train(args):
    ds = lab_io.load_dataset(args.dataset)
    params = init_params(ds.dim, args.m, args.bias, args.kappa, args.seed)
    eta = None if args.eta == "auto" else float(args.eta)
    if ds.mode == "graph":
        tr = train_gd(params, ds, args.policy, eta, args.T, args.trace_every,
                      track_kernel=args.track_kernel)
    else:
        N = ds.graphs[0].num_nodes
        test = N - 1 if args.test_node is None else args.test_node
        tr = train_gd_node(params, ds.graphs[0], ds.labels, [u for u in range(N) if u != test], test,
                           args.policy, eta, args.T, args.trace_every, track_kernel=args.track_kernel)
    if args.checkpoint:
        Path(args.checkpoint).write_text(tr.params.to_json())
    cfg = {"m": args.m, "seed": args.seed, "eta": tr.eta, "T": args.T, "kappa": args.kappa,
           "bias": args.bias, "policy": args.policy, "mode": ds.mode}
    _emit(lab_io.report_csv(tr.to_csv_rows(), cfg), args.out)
    return 0


def _sweep_config(args, mode):
    obj = {}
    if args.config:
        obj = json.loads(Path(args.config).read_text())
    obj.setdefault("mode", mode)
    if mode == "node" and "dataset" not in obj and args.dataset is None:
        obj["dataset"] = {"N": 8, "d": 4, "delta": 0.3, "edge_prob": 0.3, "seed": 0}
    overrides = {
        "dataset": args.dataset, "widths": args.widths, "T": args.T, "eta": args.eta,
        "kappa": args.kappa, "bias": args.bias, "seeds": args.seeds, "policy": args.policy,
        "trace_every": args.trace_every, "out": args.out, "delta": args.delta,
        "test_node": getattr(args, "test_node", None),
    }
    obj.update({k: v for k, v in overrides.items() if v is not None})
    if mode == "graph" and isinstance(obj.get("dataset"), dict) and "n" not in obj["dataset"]:
        obj["dataset"]["n"] = 5
    return ExperimentConfig.from_dict(obj)


def _cmd_equiv(args, node=False):
    cfg = _sweep_config(args, "node" if node else "graph")
    rep = run_node_equivalence(cfg) if node else run_equivalence(cfg)
    _emit(rep.to_csv(), cfg.out)
    return 1 if rep.errors else 0


def _cmd_concentration(args):
    cfg = _sweep_config(args, "graph")
    rows, _ = run_concentration(cfg)
    _emit(lab_io.report_csv(rows, cfg.echo(), ["m", "seed", "frob_err", "bound", "within_bound"]), cfg.out)
    return 0


def _cmd_drift(args):
    cfg = _sweep_config(args, "graph")
    results = run_drift(cfg)
    rows = drift_rows(results)
    cols = ["m", "seed", "t", "ht_vs_h0_frob", "max_weight_move", "bound_drift", "violation", "error"]
    _emit(lab_io.report_csv(rows, cfg.echo(), cols), cfg.out)
    return 1 if any(r[3] for r in results) else 0


def _cmd_spectral(args):
    report = {}
    if args.matrix:
        K = KernelMatrix.from_csv(Path(args.matrix).read_text())
        res = lambda_extremes(K.values, args.tol)
        report["spectral"] = vars(res)
        if args.delta is not None:
            report["separation"] = check_separation_bound(K.values, args.delta, K.size,
                                                          unit_norm_attested=args.unit_norm).to_dict()
    else:
        from .graph_core import dataset_columns, delta_separation

        ds = lab_io.load_dataset(args.dataset)
        H = gntk_gram(ds, args.policy).values
        cols = dataset_columns(ds, args.policy)
        norms = np.linalg.norm(cols, axis=0)
        unit = bool(np.allclose(norms, 1.0))
        delta = delta_separation(cols) if args.delta is None else args.delta
        report["spectral"] = vars(lambda_extremes(H, args.tol))
        report["separation"] = check_separation_bound(H, delta, ds.n, unit_norm_attested=unit).to_dict()
        for b in args.shift or []:
            aggs = [aggregate_features(g, args.policy) for g in ds.graphs]
            mean, se = mc_gram_with_stderr(aggs, args.m_mc, args.seed, b)
            stderr = float(np.linalg.norm(se))
            report.setdefault("shifted", []).append(
                check_shifted_bounds(mean, b, delta, ds.n, stderr).to_dict())
    report["policy"] = args.policy
    _emit(json.dumps(report, indent=1, default=float) + "\n", args.out)
    return 0


def _add_sweep_flags(p, node=False):
    p.add_argument("--config", help="JSON file with the full experiment configuration")
    p.add_argument("--dataset", help="dataset JSON path (default: generate the reference dataset)")
    p.add_argument("--widths", type=int, nargs="+")
    p.add_argument("--T", "--t", dest="T", type=int)
    p.add_argument("--eta", help="step size or 'auto'")
    p.add_argument("--kappa", type=float)
    p.add_argument("--bias", type=float)
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--policy", choices=[e.value for e in SelfLoopPolicy])
    p.add_argument("--trace-every", type=int)
    p.add_argument("--delta", type=float)
    p.add_argument("--out")
    if node:
        p.add_argument("--test-node", type=int)


def build_parser():
    parser = argparse.ArgumentParser(prog="gntk-lab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a delta-separated synthetic dataset (JSON)")
    p.add_argument("--n", type=int, default=5)
    p.add_argument("--num-nodes", "--N", dest="num_nodes", type=int, default=4)
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--delta", type=float, default=0.3)
    p.add_argument("--edge-prob", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=["graph", "node"], default="graph")
    p.add_argument("--no-test-graph", action="store_true")
    _policy_arg(p)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("gram", help="graph-level GNTK Gram matrix (CSV)")
    p.add_argument("--dataset", required=True)
    p.add_argument("--mc-m", type=int, help="Monte Carlo width instead of the closed form")
    p.add_argument("--bias", type=float, default=0.0, help="ReLU shift b (Monte Carlo only)")
    p.add_argument("--seed", type=int, default=0)
    _policy_arg(p)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_gram)

    p = sub.add_parser("node-gntk", help="node-level multi-layer GNTK (CSV)")
    p.add_argument("--dataset", required=True)
    p.add_argument("--L", type=int, default=1)
    p.add_argument("--R", type=int, default=1)
    p.add_argument("--strict-paper", action="store_true", help="un-aggregated first covariance")
    _policy_arg(p)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_node_gntk)

    p = sub.add_parser("regress", help="exact and iterated GNTK regression on the test graph")
    p.add_argument("--dataset", required=True)
    p.add_argument("--kappa", type=float, default=0.25)
    p.add_argument("--eta", default="auto")
    p.add_argument("--T", "--t", dest="T", type=int, default=2000)
    p.add_argument("--trace-every", type=int, default=100)
    _policy_arg(p)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_regress)

    p = sub.add_parser("train", help="train one finite-width GNN and print its trace")
    p.add_argument("--dataset", required=True)
    p.add_argument("--m", type=int, default=1024)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--kappa", type=float, default=0.25)
    p.add_argument("--bias", type=float, default=0.0)
    p.add_argument("--eta", default="auto")
    p.add_argument("--T", "--t", dest="T", type=int, default=2000)
    p.add_argument("--trace-every", type=int, default=100)
    p.add_argument("--track-kernel", action="store_true")
    p.add_argument("--test-node", type=int)
    p.add_argument("--checkpoint", help="write the trained parameters as JSON")
    _policy_arg(p)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("equiv", help="graph-level GNN vs GNTK width sweep")
    _add_sweep_flags(p)
    p.set_defaults(func=_cmd_equiv)

    p = sub.add_parser("equiv-node", help="node-level GNN vs GNTK width sweep")
    _add_sweep_flags(p, node=True)
    p.set_defaults(func=lambda a: _cmd_equiv(a, node=True))

    p = sub.add_parser("concentration", help="|H^dis - H^cts|_F against the width")
    _add_sweep_flags(p)
    p.set_defaults(func=_cmd_concentration)

    p = sub.add_parser("drift", help="dynamic-kernel drift during training")
    _add_sweep_flags(p)
    p.set_defaults(func=_cmd_drift)

    p = sub.add_parser("spectral", help="extreme eigenvalues and separation bounds (JSON)")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--dataset")
    src.add_argument("--matrix", help="kernel CSV as written by 'gram'")
    p.add_argument("--delta", type=float, help="separation (default: measured from the dataset)")
    p.add_argument("--shift", type=float, nargs="*", help="ReLU shifts b for the shifted-kernel bounds")
    p.add_argument("--m-mc", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--unit-norm", action="store_true", help="attest unit-norm aggregated columns")
    _policy_arg(p)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_spectral)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except GntkLabError as err:
        print(f"gntk-lab: {type(err).__name__}: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
