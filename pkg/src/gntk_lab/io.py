"""Dataset JSON and report CSV files.

Dataset schema::

    {"d": int, "mode": "graph" | "node",
     "graphs": [{"num_nodes": int, "edges": [[u, v], ...], "features": [[f_1..f_d], ...]}],
     "labels": [float, ...],
     "test_graph": {...}}          # optional, same shape as a graph entry

Edges are 0-indexed, undirected and listed once; ``features`` has one row per
node. Reports are CSV with a single leading ``#``-prefixed JSON line that
echoes the configuration.
"""

from __future__ import annotations

import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from .errors import DomainError, SchemaError
from .graph_core import Graph, GraphDataset


def _graph_to_obj(g):
    return {
        "num_nodes": g.num_nodes,
        "edges": [[u, v] for u, v in g.edges()],
        "features": g.features.T.tolist(),
    }


def dataset_to_obj(ds):
    obj = {
        "d": ds.dim,
        "mode": ds.mode,
        "graphs": [_graph_to_obj(g) for g in ds.graphs],
        "labels": [float(y) for y in ds.labels],
    }
    if ds.test_graph is not None:
        obj["test_graph"] = _graph_to_obj(ds.test_graph)
    return obj


def save_dataset(ds, path):
    text = json.dumps(dataset_to_obj(ds), indent=1)
    if path is None or str(path) == "-":
        sys.stdout.write(text + "\n")
    else:
        Path(path).write_text(text + "\n")


def _require(obj, key, where):
    if not isinstance(obj, dict) or key not in obj:
        raise SchemaError(f"{where}: missing field {key!r}")
    return obj[key]


def _graph_from_obj(obj, d, where):
    num_nodes = _require(obj, "num_nodes", where)
    edges = _require(obj, "edges", where)
    feats = _require(obj, "features", where)
    if not isinstance(num_nodes, int) or num_nodes < 1:
        raise SchemaError(f"{where}.num_nodes: expected a positive integer, got {num_nodes!r}")
    if len(feats) != num_nodes:
        raise SchemaError(f"{where}.features: {len(feats)} rows for {num_nodes} nodes")
    for i, row in enumerate(feats):
        if len(row) != d:
            raise SchemaError(f"{where}.features[{i}]: length {len(row)}, expected d = {d}")
    for k, e in enumerate(edges):
        if len(e) != 2:
            raise SchemaError(f"{where}.edges[{k}]: expected a pair, got {e!r}")
        for v in e:
            if not isinstance(v, int) or not 0 <= v < num_nodes:
                raise SchemaError(f"{where}.edges[{k}]: node index {v!r} out of range [0, {num_nodes})")
    try:
        return Graph.from_edges(np.array(feats, dtype=float).reshape(num_nodes, d).T, edges)
    except DomainError as err:
        raise SchemaError(f"{where}: {err}") from None


def dataset_from_obj(obj):
    d = _require(obj, "d", "dataset")
    mode = _require(obj, "mode", "dataset")
    graphs_obj = _require(obj, "graphs", "dataset")
    labels = _require(obj, "labels", "dataset")
    if mode not in ("graph", "node"):
        raise SchemaError(f"dataset.mode: expected 'graph' or 'node', got {mode!r}")
    if not isinstance(d, int) or d < 1:
        raise SchemaError(f"dataset.d: expected a positive integer, got {d!r}")
    if not graphs_obj:
        raise SchemaError("dataset.graphs: empty")
    graphs = [_graph_from_obj(g, d, f"graphs[{i}]") for i, g in enumerate(graphs_obj)]
    if mode == "graph" and len(labels) != len(graphs):
        raise SchemaError(f"dataset.labels: {len(labels)} labels for {len(graphs)} graphs")
    if mode == "node":
        if len(graphs) != 1:
            raise SchemaError(f"dataset.graphs: node mode expects one graph, got {len(graphs)}")
        if len(labels) != graphs[0].num_nodes:
            raise SchemaError(f"dataset.labels: {len(labels)} labels for {graphs[0].num_nodes} nodes")
    test = None
    if obj.get("test_graph") is not None:
        test = _graph_from_obj(obj["test_graph"], d, "test_graph")
    return GraphDataset(graphs, np.array(labels, dtype=float), mode=mode, test_graph=test)


def load_dataset(path):
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as err:
        raise SchemaError(f"{path}: not valid JSON ({err})") from None
    return dataset_from_obj(obj)


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def report_csv(rows, config=None, columns=None):
    """CSV text with an optional ``# {json config}`` header line."""
    buf = io.StringIO()
    if config is not None:
        buf.write("# " + json.dumps(config, sort_keys=True) + "\n")
    if rows:
        if columns is None:
            columns = []
            for row in rows:
                for key in row:
                    if key not in columns:
                        columns.append(key)
        writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row.get(k, "")) for k in columns})
    return buf.getvalue()


def save_report(rows, path=None, config=None, columns=None):
    text = report_csv(rows, config, columns)
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)
    return text


def read_report(path_or_text):
    """Parse a report back into ``(config, rows)``; values stay strings."""
    text = path_or_text
    if "\n" not in str(path_or_text):
        text = Path(path_or_text).read_text()
    lines = text.splitlines()
    config = None
    if lines and lines[0].startswith("#"):
        config = json.loads(lines[0][1:].strip())
        lines = lines[1:]
    rows = list(csv.DictReader(lines))
    return config, rows
