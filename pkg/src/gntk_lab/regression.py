"""GNTK regression: the exact solve and its gradient-flow iteration.

The kernel regression weights live in the kernel's feature space and are
never formed. Their dynamics close on the predictors: with ``u(0) = 0``,

    u(t+1)      = u(t)      + eta kappa^2 H (Y - u(t))
    u_test(t+1) = u_test(t) + eta kappa^2 k_test . (Y - u(t))

which converges to ``u* = Y`` and ``u*_test = k_test . H^{-1} Y``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import ConfigurationError, DomainError, SingularKernelError


@dataclass
class RegressionProblem:
    H: np.ndarray
    k_test: np.ndarray
    Y: np.ndarray
    kappa: float = 1.0
    eta: float | None = None
    T: int = 1000

    def __post_init__(self):
        self.H = np.asarray(self.H, dtype=float)
        self.k_test = np.asarray(self.k_test, dtype=float).reshape(-1)
        self.Y = np.asarray(self.Y, dtype=float).reshape(-1)
        n = self.Y.shape[0]
        if self.H.shape != (n, n) or self.k_test.shape[0] != n:
            raise DomainError(f"shapes disagree: H {self.H.shape}, k_test {self.k_test.shape}, Y ({n},)")
        if self.eta is None:
            lam = float(np.linalg.eigvalsh(self.H)[-1])
            self.eta = 1.0 / (self.kappa ** 2 * lam)


@dataclass
class ExactSolution:
    u_test: float
    u_train: np.ndarray
    lambda_min: float


def solve_exact(H, k_test, Y, lambda_floor=None):
    """``k_test . H^{-1} Y`` through a Cholesky factorization.

    Refuses (rather than regularizes) when ``lambda_min(H)`` does not exceed
    ``lambda_floor``, by default ``1e-10 * trace(H)``. The training-side
    optimum is ``Y`` itself.
    """
    H = np.asarray(H, dtype=float)
    k_test = np.asarray(k_test, dtype=float).reshape(-1)
    Y = np.asarray(Y, dtype=float).reshape(-1)
    if H.shape != (Y.shape[0], Y.shape[0]) or k_test.shape != Y.shape:
        raise DomainError("H, k_test and Y have inconsistent shapes")
    if lambda_floor is None:
        lambda_floor = 1e-10 * float(np.trace(H))
    lam = float(np.linalg.eigvalsh(0.5 * (H + H.T))[0])
    if lam <= lambda_floor:
        raise SingularKernelError(
            f"kernel is numerically singular: lambda_min = {lam:.3e} <= floor {lambda_floor:.3e} "
            "(positive smallest eigenvalue required)", eigenvalue=lam)
    alpha = cho_solve(cho_factor(H), Y)
    return ExactSolution(float(k_test @ alpha), Y.copy(), lam)


@dataclass
class RegressionTrace:
    u: np.ndarray        # (T+1) x n
    u_test: np.ndarray   # T+1


def iterate_regression(problem, u0=None, u_test0=0.0):
    """Explicit-Euler gradient flow of kernel regression in predictor space.

    Starts from ``u(0) = 0`` as kernel regression does. A nonzero ``u0`` /
    ``u_test0`` gives the linearized dynamics of a network whose initial
    output is not zero.
    """
    p = problem
    lam_max = float(np.linalg.eigvalsh(p.H)[-1])
    step = p.eta * p.kappa ** 2
    if not step * lam_max < 2.0:
        raise ConfigurationError(
            f"unstable step: eta * kappa^2 * lambda_max = {step * lam_max:.4g} must be < 2")
    if p.T < 0:
        raise ConfigurationError("T must be >= 0")
    n = p.Y.shape[0]
    u = np.zeros((p.T + 1, n))
    ut = np.zeros(p.T + 1)
    if u0 is not None:
        u[0] = u0
    ut[0] = u_test0
    for t in range(p.T):
        r = p.Y - u[t]
        u[t + 1] = u[t] + step * (p.H @ r)
        ut[t + 1] = ut[t] + step * float(p.k_test @ r)
    return RegressionTrace(u, ut)


def regression_gap(problem, lambda_floor=None):
    """``|u_test(T) - u*_test|`` for the iterated versus exact regression."""
    exact = solve_exact(problem.H, problem.k_test, problem.Y, lambda_floor)
    trace = iterate_regression(problem)
    return abs(float(trace.u_test[-1]) - exact.u_test)
