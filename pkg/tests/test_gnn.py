import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gntk_lab.errors import DomainError, SchemaError, TrainingError
from gntk_lab.gnn import (GnnParams, MultiNet, empirical_ntk_node, forward_graph, forward_multilayer,
                          forward_node, grad_graph, grad_node, init_multinet, init_params, train_gd,
                          train_gd_node)
from gntk_lab.graph_core import Graph, GraphDataset, aggregate_features, generate_separated_dataset
from gntk_lab.gntk import node_gntk

from conftest import random_graph


def fd_grad(params, agg, h=1e-6):
    """Oracle: central differences of forward_graph in every weight."""
    out = np.zeros_like(params.W)
    for i in range(params.W.shape[0]):
        for r in range(params.W.shape[1]):
            Wp, Wm = params.W.copy(), params.W.copy()
            Wp[i, r] += h
            Wm[i, r] -= h
            fp = forward_graph(GnnParams(Wp, params.a, params.bias, params.kappa), agg)
            fm = forward_graph(GnnParams(Wm, params.a, params.bias, params.kappa), agg)
            out[i, r] = (fp - fm) / (2 * h)
    return out


class TestForward:
    def test_single_unit(self):
        p = GnnParams(np.array([[1.0], [0.0]]), [1.0])
        x = np.array([[2.0], [5.0]])
        assert forward_graph(p, x) == pytest.approx(2.0)
        assert forward_graph(GnnParams(p.W, [-1.0]), x) == pytest.approx(-2.0)

    def test_bias(self):
        p = GnnParams(np.array([[1.0], [0.0]]), [1.0], bias=0.5)
        assert forward_graph(p, np.array([[2.0], [0.0]])) == pytest.approx(1.5)
        assert forward_graph(p, np.array([[0.4], [0.0]])) == 0.0

    def test_width_scaling(self):
        W = np.array([[1.0, 1.0, 1.0, 1.0], [0, 0, 0, 0]])
        p = GnnParams(W, [1.0, 1.0, 1.0, -1.0])
        assert forward_graph(p, np.array([[1.0], [0.0]])) == pytest.approx(2 / 2)

    def test_node_outputs_sum_to_graph_output(self, reference_dataset):
        p = init_params(3, 64, seed=1)
        agg = aggregate_features(reference_dataset.graphs[0])
        total = sum(forward_node(p, agg, v) for v in range(4))
        assert total == pytest.approx(forward_graph(p, agg), rel=1e-12)

    @given(st.integers(0, 2**32 - 1), st.floats(0.01, 100))
    @settings(max_examples=40, deadline=None)
    def test_positive_homogeneity(self, seed, c):
        rng = np.random.default_rng(seed)
        p = init_params(3, 16, seed=seed)
        X = rng.standard_normal((3, 4))
        assert forward_graph(p, c * X) == pytest.approx(c * forward_graph(p, X), rel=1e-9, abs=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(DomainError):
            forward_graph(init_params(3, 4), np.ones((2, 2)))

    def test_invalid_params(self):
        with pytest.raises(DomainError):
            GnnParams(np.ones((2, 2)), [1.0, 0.5])
        with pytest.raises(DomainError):
            GnnParams(np.ones((2, 2)), [1.0, 1.0], bias=-1)
        with pytest.raises(DomainError):
            GnnParams(np.ones((2, 2)), [1.0, 1.0], kappa=1.5)


class TestGradient:
    def test_example(self):
        p = GnnParams(np.array([[1.0, -1.0], [0.0, 0.0]]), [1.0, -1.0])
        X = np.array([[1.0, 2.0], [3.0, 0.0]])
        g = grad_graph(p, X)
        s = 1 / math.sqrt(2)
        np.testing.assert_allclose(g[:, 0], s * np.array([3.0, 3.0]))
        np.testing.assert_allclose(g[:, 1], 0.0)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        p = init_params(3, 8, seed=seed)
        X = rng.standard_normal((3, 3))
        if np.min(np.abs(p.W.T @ X)) < 1e-3:
            return  # too close to a kink for differences to mean anything
        np.testing.assert_allclose(grad_graph(p, X), fd_grad(p, X), atol=1e-6)

    def test_node_gradient_is_column_gradient(self):
        p = init_params(3, 5, seed=2)
        X = np.random.default_rng(0).standard_normal((3, 4))
        np.testing.assert_allclose(sum(grad_node(p, X, v) for v in range(4)), grad_graph(p, X))


class TestCheckpoint:
    def test_round_trip(self):
        p = init_params(3, 7, bias=0.25, kappa=0.5, seed=4)
        q = GnnParams.from_json(p.to_json())
        assert np.array_equal(p.W, q.W) and np.array_equal(p.a, q.a)
        assert (q.bias, q.kappa) == (0.25, 0.5)

    def test_missing_field(self):
        with pytest.raises(SchemaError, match="'a'"):
            GnnParams.from_json('{"d": 1, "m": 1, "bias": 0, "kappa": 1, "W": [1]}')

    def test_wrong_length(self):
        with pytest.raises(SchemaError, match="'W'"):
            GnnParams.from_json('{"d": 2, "m": 1, "bias": 0, "kappa": 1, "W": [1], "a": [1]}')


class TestTraining:
    def test_zero_steps(self, reference_dataset):
        p = init_params(3, 32, seed=0)
        tr = train_gd(p, reference_dataset, eta=0.1, T=0)
        assert len(tr.records) == 1
        assert np.array_equal(tr.params.W, p.W)

    def test_input_not_mutated(self, reference_dataset):
        p = init_params(3, 32, seed=0)
        W = p.W.copy()
        train_gd(p, reference_dataset, eta=0.1, T=5)
        assert np.array_equal(p.W, W)

    def test_all_dead_units_do_not_move(self):
        g = Graph.from_edges(np.array([[1.0], [0.0]]), [])
        ds = GraphDataset([g], [1.0])
        p = GnnParams(np.array([[-1.0, -2.0], [0.0, 0.0]]), [1.0, -1.0], bias=0.0)
        tr = train_gd(p, ds, eta=0.5, T=10)
        assert np.array_equal(tr.params.W, p.W)
        assert tr.final().loss == pytest.approx(0.5)

    def test_trace_schedule(self, reference_dataset):
        tr = train_gd(init_params(3, 32, seed=0), reference_dataset, eta=0.05, T=25, trace_every=10)
        assert [r.t for r in tr.records] == [0, 10, 20, 25]

    def test_divergence(self, reference_dataset):
        with pytest.raises(TrainingError) as info:
            train_gd(init_params(3, 32, seed=0), reference_dataset, eta=1e6, T=500)
        assert info.value.step > 0

    def test_loss_follows_linear_model(self):
        # oracle: predictor-space dynamics with the frozen initial kernel
        ds = generate_separated_dataset(2, 3, 3, 0.3, 0.3, seed=1)
        p = init_params(3, 512, kappa=1.0, seed=3)
        tr = train_gd(p, ds, T=200, track_kernel=True)
        H0, eta = tr.kernel_h0, tr.eta
        u = tr.records[0].u_train.copy()
        for _ in range(200):
            u = u + eta * H0 @ (ds.labels - u)
        lin_loss = 0.5 * float(np.sum((ds.labels - u) ** 2))
        ratio = tr.final().loss / tr.records[0].loss
        assert ratio < 1
        assert tr.final().loss == pytest.approx(lin_loss, rel=0.1, abs=1e-8)

    def test_node_training_decreases_loss(self, node_dataset):
        g = node_dataset.graphs[0]
        tr = train_gd_node(init_params(4, 256, seed=0), g, node_dataset.labels, range(7), test_node=7, T=100)
        assert tr.final().loss < tr.records[0].loss
        assert tr.final().u_test is not None

    def test_rejects_node_dataset(self, node_dataset):
        with pytest.raises(DomainError):
            train_gd(init_params(4, 8), node_dataset)


def _flat(net):
    return np.concatenate([w.ravel() for lvl in net.weights for w in lvl] + [net.readout])


def _unflat(net, theta):
    weights, k = [], 0
    for lvl in net.weights:
        layers = []
        for w in lvl:
            layers.append(theta[k:k + w.size].reshape(w.shape))
            k += w.size
        weights.append(layers)
    return MultiNet(net.L, net.R, net.m, weights, theta[k:k + net.m])


def fd_node_ntk(net, graph, h=1e-6):
    """Oracle: Jacobian of every readout z(u) by central differences, then J J^T."""
    theta = _flat(net)
    J = np.zeros((graph.num_nodes, theta.size))
    for i in range(theta.size):
        tp, tm = theta.copy(), theta.copy()
        tp[i] += h
        tm[i] -= h
        zp = _unflat(net, tp).readout @ forward_multilayer(_unflat(net, tp), graph)
        zm = _unflat(net, tm).readout @ forward_multilayer(_unflat(net, tm), graph)
        J[:, i] = (zp - zm) / (2 * h)
    return J @ J.T


class TestMultilayer:
    def test_single_layer_example(self):
        g = Graph.from_edges(np.array([[1.0, 2.0]]), [(0, 1)])
        net = MultiNet(1, 1, 2, [[np.array([[1.0], [-1.0]])]], np.ones(2))
        out = forward_multilayer(net, g)
        np.testing.assert_allclose(out, [[3.0, 3.0], [0.0, 0.0]])  # sqrt(2/2) = 1

    def test_preactivations(self):
        g = random_graph(np.random.default_rng(0), 3, 2)
        out, pre = forward_multilayer(init_multinet(2, 5, 2, 3, seed=0), g, return_preactivations=True)
        assert len(pre) == 6 and out.shape == (5, 3)

    @pytest.mark.parametrize("L,R", [(1, 1), (2, 2), (1, 3)])
    def test_empirical_kernel_matches_finite_differences(self, L, R):
        rng = np.random.default_rng(L * 10 + R)
        g = random_graph(rng, 3, 2, p=0.7)
        net = init_multinet(2, 4, L, R, seed=L + R)
        np.testing.assert_allclose(empirical_ntk_node(net, g).values, fd_node_ntk(net, g), rtol=1e-5, atol=1e-6)

    def test_wide_network_near_recursion(self):
        g = random_graph(np.random.default_rng(3), 4, 3, p=0.6)
        K = node_gntk(g, L=1, R=1).values
        E = np.mean([empirical_ntk_node(init_multinet(3, 4096, 1, 1, seed=s), g).values for s in range(4)], axis=0)
        assert np.linalg.norm(E - K) / np.linalg.norm(K) < 0.1

    def test_dimension_mismatch(self):
        with pytest.raises(DomainError):
            forward_multilayer(init_multinet(3, 4, 1, 1), random_graph(np.random.default_rng(0), 2, 2))
