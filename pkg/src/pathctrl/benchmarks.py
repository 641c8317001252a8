"""Canonical desk-scale problem instances and their quadrature oracles.

The workhorse is the one-dimensional benchmark (zero drift, unit
volatility, unit push direction) with terminal payoff -(x_T - 1)^2: the
push cone points upward and the payoff decreases beyond its peak, so the
unbounded-rate value equals the Gaussian expectation of the face-lifted
payoff, which adaptive quadrature computes to high accuracy.
"""

from __future__ import annotations

import numpy as np
from scipy import integrate

from .model import TerminalFunctional, toy1d_model

__all__ = [
    "quadratic_payoff",
    "quadratic_payoff_lifted",
    "neg_call_payoff",
    "toy1d_terminal",
    "gaussian_quadrature_oracle",
    "facelift_benchmark_limit",
]


def quadratic_payoff(x):
    """-(x - 1)^2 componentwise on the terminal value."""
    x = np.asarray(x, dtype=float)
    return -((x - 1.0) ** 2)


def quadratic_payoff_lifted(x):
    """Face-lift of the quadratic payoff under upward pushes: 0 below the
    peak, unchanged above it."""
    x = np.asarray(x, dtype=float)
    return np.where(x <= 1.0, 0.0, -((x - 1.0) ** 2))


def neg_call_payoff(x):
    """-(x - 1)^+: Lipschitz with a kink, its own face-lift under upward pushes."""
    x = np.asarray(x, dtype=float)
    return -np.maximum(x - 1.0, 0.0)


def toy1d_terminal(payoff=quadratic_payoff) -> TerminalFunctional:
    return TerminalFunctional(
        U=lambda paths: np.asarray(payoff(paths[:, -1, 0]), dtype=float),
        markovian_flag=True,
        lipschitz_C=2.0,
    )


def gaussian_quadrature_oracle(payoff, mean: float, var: float, tol: float = 1e-10) -> float:
    """Adaptive quadrature of E[payoff(mean + sqrt(var) Z)], Z standard normal."""
    sd = np.sqrt(var)

    def integrand(z):
        return payoff(mean + sd * z) * np.exp(-0.5 * z * z) / np.sqrt(2 * np.pi)

    val, _ = integrate.quad(integrand, -12.0, 12.0, epsabs=tol, epsrel=tol, limit=400)
    return float(val)


def facelift_benchmark_limit(x0: float = 0.0, horizon: float = 1.0) -> float:
    """Exact unbounded-rate value of the benchmark: the standard-normal
    quadrature of the face-lifted quadratic payoff."""
    return gaussian_quadrature_oracle(quadratic_payoff_lifted, x0, horizon)
