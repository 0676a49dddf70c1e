import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gntk_lab.errors import ConfigurationError, DomainError, SingularKernelError
from gntk_lab.gntk import gntk_cross, gntk_gram
from gntk_lab.regression import RegressionProblem, iterate_regression, regression_gap, solve_exact


def spd(rng, n, floor=0.5):
    Q = np.linalg.qr(rng.standard_normal((n, n)))[0]
    return Q @ np.diag(rng.uniform(floor, 3.0, n)) @ Q.T


class TestExact:
    def test_identity(self):
        sol = solve_exact(np.eye(3), [1.0, 2.0, 3.0], [1.0, 0.0, -1.0])
        assert sol.u_test == pytest.approx(-2.0)
        assert sol.lambda_min == pytest.approx(1.0)

    def test_two_by_two(self):
        H = np.array([[2.0, 1.0], [1.0, 2.0]])
        # H^{-1} Y = [1/3, 1/3] for Y = [1, 1]
        assert solve_exact(H, [1.0, 1.0], [1.0, 1.0]).u_test == pytest.approx(2 / 3)

    @given(st.integers(0, 2**32 - 1), st.integers(1, 8))
    @settings(max_examples=40, deadline=None)
    def test_matches_linear_solve(self, seed, n):
        rng = np.random.default_rng(seed)
        H = spd(rng, n)
        k, Y = rng.standard_normal(n), rng.standard_normal(n)
        assert solve_exact(H, k, Y).u_test == pytest.approx(k @ np.linalg.solve(H, Y), rel=1e-9, abs=1e-12)

    def test_singular(self):
        with pytest.raises(SingularKernelError) as info:
            solve_exact(np.ones((2, 2)), [1.0, 1.0], [1.0, 0.0])
        assert info.value.eigenvalue == pytest.approx(0.0, abs=1e-12)

    def test_shapes(self):
        with pytest.raises(DomainError):
            solve_exact(np.eye(2), [1.0], [1.0, 2.0])


class TestIteration:
    def test_one_step_by_hand(self):
        p = RegressionProblem(np.eye(2), [1.0, 0.0], [1.0, -1.0], kappa=1.0, eta=0.5, T=1)
        tr = iterate_regression(p)
        np.testing.assert_allclose(tr.u[1], [0.5, -0.5])
        assert tr.u_test[1] == pytest.approx(0.5)

    def test_contraction_rate(self):
        rng = np.random.default_rng(0)
        H = spd(rng, 4)
        lam = np.linalg.eigvalsh(H)
        p = RegressionProblem(H, rng.standard_normal(4), rng.standard_normal(4), kappa=0.7)
        tr = iterate_regression(RegressionProblem(p.H, p.k_test, p.Y, p.kappa, p.eta, T=50))
        rate = 1 - p.eta * p.kappa ** 2 * lam[0]
        err = np.linalg.norm(tr.u - p.Y, axis=1)
        assert np.all(err[1:] <= err[:-1] * rate * (1 + 1e-9) + 1e-15)

    def test_converges_to_exact(self, reference_dataset):
        H = gntk_gram(reference_dataset).values
        k = gntk_cross(reference_dataset.test_graph, reference_dataset)
        lam = np.linalg.eigvalsh(H)
        p = RegressionProblem(H, k, reference_dataset.labels, kappa=0.25)
        T = int(np.ceil(10 / (p.eta * p.kappa ** 2 * lam[0])))
        gap = regression_gap(RegressionProblem(H, k, p.Y, 0.25, p.eta, T))
        assert gap <= 1e-6

    def test_unstable_step(self):
        with pytest.raises(ConfigurationError):
            iterate_regression(RegressionProblem(np.eye(2), [0, 0], [1, 1], kappa=1.0, eta=2.0, T=3))

    def test_default_eta(self):
        p = RegressionProblem(4 * np.eye(2), [0, 0], [1, 1], kappa=0.5)
        assert p.eta == pytest.approx(1.0)

    def test_nonzero_start(self):
        p = RegressionProblem(np.eye(1), [1.0], [2.0], kappa=1.0, eta=1.0, T=1)
        tr = iterate_regression(p, u0=np.array([5.0]), u_test0=3.0)
        assert tr.u[1, 0] == pytest.approx(2.0) and tr.u_test[1] == pytest.approx(0.0)
