"""Coefficient functionals, constraint geometry, penalty and support
functions, the degenerate perturbation family, and the transaction-cost
model builder.

Drift/volatility functionals are vectorized and history-based: they receive
(t, hist) where hist has shape (n_paths, n_nodes_so_far, d) and holds the
discrete path history up to time t.  Non-anticipativity is structural --
callers never pass future nodes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import nnls

__all__ = [
    "ModelSpec",
    "PerturbedModel",
    "ConstraintSet",
    "TerminalFunctional",
    "PerturbationInvalidError",
    "rho",
    "in_constraint_cone",
    "support_function",
    "perturbed_sigma",
    "liquidation_value",
    "build_transaction_model",
    "transaction_sigma_inv",
    "toy1d_model",
    "make_model",
    "register_model",
]

CoeffFn = Callable[[float, np.ndarray], np.ndarray]


class PerturbationInvalidError(ValueError):
    pass


@dataclass
class ModelSpec:
    """Non-anticipative drift/volatility and singular-push directions."""

    dim: int
    mu: CoeffFn                      # (t, hist) -> (n_paths, d)
    sigma: CoeffFn                   # (t, hist) -> (n_paths, d, d)
    f: Callable[[float], np.ndarray]  # t -> (d, d)
    lipschitz_C: float = 1.0
    name: str = ""

    def sigma_inv(self, t: float, hist: np.ndarray) -> np.ndarray:
        return np.linalg.inv(self.sigma(t, hist))


@dataclass
class PerturbedModel:
    """Volatility perturbation eta_p * M + sigma restoring invertibility."""

    base: ModelSpec
    eta_p: Callable[[float, np.ndarray], np.ndarray]  # (t, hist) -> (n_paths,)
    M: Callable[[float], np.ndarray]                  # t -> (d, d)
    p: float
    sigma_inv_closed_form: Callable[[float, np.ndarray], np.ndarray] | None = None

    @property
    def dim(self) -> int:
        return self.base.dim

    @property
    def f(self):
        return self.base.f

    @property
    def mu(self):
        return self.base.mu

    def sigma(self, t: float, hist: np.ndarray) -> np.ndarray:
        return perturbed_sigma(self, t, hist)

    def sigma_inv(self, t: float, hist: np.ndarray) -> np.ndarray:
        if self.sigma_inv_closed_form is not None:
            return self.sigma_inv_closed_form(t, hist)
        sig = perturbed_sigma(self, t, hist)
        try:
            return np.linalg.inv(sig)
        except np.linalg.LinAlgError as exc:
            raise PerturbationInvalidError(
                f"perturbed volatility singular at t={t}, p={self.p}"
            ) from exc


@dataclass(frozen=True)
class ConstraintSet:
    """Cone of admissible gradients: q such that f_t^T q <= 0 componentwise."""

    f: Callable[[float], np.ndarray]


@dataclass
class TerminalFunctional:
    """Terminal reward over full paths, vectorized: (n_paths, n_nodes, d) -> (n_paths,)."""

    U: Callable[[np.ndarray], np.ndarray]
    growth_r: float = 0.0
    markovian_flag: bool = True
    lipschitz_C: float = 1.0


def rho(q: np.ndarray) -> np.ndarray:
    """Sum of positive parts of the components; zero iff q <= 0 componentwise."""
    q = np.asarray(q, dtype=float)
    return np.sum(np.maximum(q, 0.0), axis=-1)


def in_constraint_cone(q: np.ndarray, t: float, cs: ConstraintSet, atol: float = 1e-12):
    """True iff every component of f_t^T q is <= 0."""
    ft = cs.f(t)
    proj = np.asarray(q, dtype=float) @ ft  # (f^T q)_i = sum_j f_ji q_j
    return np.all(proj <= atol, axis=-1)


def support_function(u: np.ndarray, t: float, cs: ConstraintSet, tol: float = 1e-9) -> float:
    """sup{k . u : k in the constraint cone}: 0 on the polar cone, +inf outside.

    The polar cone is generated by the columns of f_t (and the kernel rows
    contribute free coordinates to the cone itself, which forces the
    corresponding components of u to vanish).  Membership is decided by a
    nonnegative least-squares fit on the generators.
    """
    u = np.asarray(u, dtype=float)
    nu = np.linalg.norm(u)
    if nu <= tol:
        return 0.0
    ft = cs.f(t)
    d = ft.shape[0]
    # cone K = {q : q . c_i <= 0} with c_i the columns of f_t; its polar is
    # the closed cone generated by those columns.  Free directions of K
    # (orthogonal complement of the column span) must be orthogonal to u.
    _, res = nnls(ft, u / nu)
    if res > math.sqrt(d) * 1e-7:
        return math.inf
    return 0.0


def perturbed_sigma(pm: PerturbedModel, t: float, hist: np.ndarray) -> np.ndarray:
    """eta_p(t, x) * M_t + sigma_t(x), shape (n_paths, d, d)."""
    eta = np.asarray(pm.eta_p(t, hist), dtype=float)
    if np.any(eta > 1e-12):
        raise PerturbationInvalidError(f"eta must be nonpositive, got max {eta.max()}")
    return eta[:, None, None] * pm.M(t)[None] + pm.base.sigma(t, hist)


# ---------------------------------------------------------------------------
# transaction-cost model
# ---------------------------------------------------------------------------

def liquidation_value(x: np.ndarray, y: np.ndarray, lambda_tc: float) -> np.ndarray:
    """Cash value of a (bank, risky) position net of proportional costs."""
    y = np.asarray(y, dtype=float)
    return x + np.maximum(y, 0.0) / (1.0 + lambda_tc) - (1.0 + lambda_tc) * np.maximum(-y, 0.0)


def transaction_sigma_inv(lambda_tc: float, Sigma_fn, p: float):
    """Closed-form inverse of the perturbed transaction volatility matrix."""

    def inv(t: float, hist: np.ndarray) -> np.ndarray:
        n = hist.shape[0]
        x2 = hist[:, -1, 1]
        s = np.asarray(Sigma_fn(t, hist[:, :, 2]), dtype=float) * x2
        out = np.zeros((n, 3, 3))
        out[:, 0, 0] = -p
        out[:, 1, 1] = -p
        out[:, 1, 2] = p * s
        out[:, 2, 2] = 1.0
        return out

    return inv


def build_transaction_model(
    lambda_tc: float,
    r_fn=None,
    m_fn=None,
    Sigma_fn=None,
    p: float = 1.0,
    utility: Callable[[np.ndarray], np.ndarray] | None = None,
) -> tuple[PerturbedModel, TerminalFunctional]:
    """Three-dimensional portfolio model with proportional transaction costs.

    State: (bank account, risky position, driving factor).  r_fn, m_fn and
    Sigma_fn are scalar functionals of (t, factor-history); constants are
    accepted.  The perturbation adds -1/p noise to the two account
    components so the volatility matrix becomes invertible.
    """
    if lambda_tc < 0:
        raise ValueError(f"transaction cost must be >= 0, got {lambda_tc}")
    if p <= 0:
        raise ValueError(f"perturbation index must be > 0, got {p}")

    def as_fn(c, default):
        if c is None:
            c = default
        if callable(c):
            return c
        return lambda t, h3, c=c: np.full(h3.shape[0], float(c))

    r_fn = as_fn(r_fn, 0.0)
    m_fn = as_fn(m_fn, 0.05)
    Sigma_fn = as_fn(Sigma_fn, 0.2)

    lam1 = 1.0 + lambda_tc
    f_mat = np.array([[1.0, -lam1, 0.0], [-lam1, 1.0, 0.0], [0.0, 0.0, 0.0]])
    M_mat = np.diag([1.0, 1.0, 0.0])

    def mu(t, hist):
        x = hist[:, -1, :]
        h3 = hist[:, :, 2]
        out = np.zeros_like(x)
        out[:, 0] = r_fn(t, h3) * x[:, 0]
        out[:, 1] = m_fn(t, h3) * x[:, 1]
        return out

    def sigma(t, hist):
        n = hist.shape[0]
        out = np.zeros((n, 3, 3))
        out[:, 1, 2] = Sigma_fn(t, hist[:, :, 2]) * hist[:, -1, 1]
        out[:, 2, 2] = 1.0
        return out

    base = ModelSpec(
        dim=3, mu=mu, sigma=sigma, f=lambda t: f_mat,
        lipschitz_C=1.0 + abs(0.05) + 0.2, name="transaction",
    )
    pm = PerturbedModel(
        base=base,
        eta_p=lambda t, hist: np.full(hist.shape[0], -1.0 / p),
        M=lambda t: M_mat,
        p=p,
        sigma_inv_closed_form=transaction_sigma_inv(lambda_tc, Sigma_fn, p),
    )

    if utility is None:
        utility = lambda w: w

    def U(paths):
        return np.asarray(utility(liquidation_value(paths[:, -1, 0], paths[:, -1, 1], lambda_tc)))

    terminal = TerminalFunctional(U=U, growth_r=0.0, markovian_flag=True, lipschitz_C=lam1)
    return pm, terminal


# ---------------------------------------------------------------------------
# model zoo
# ---------------------------------------------------------------------------

def toy1d_model() -> ModelSpec:
    """d=1 benchmark model: zero drift, unit volatility, unit push direction."""
    return ModelSpec(
        dim=1,
        mu=lambda t, hist: np.zeros((hist.shape[0], 1)),
        sigma=lambda t, hist: np.ones((hist.shape[0], 1, 1)),
        f=lambda t: np.ones((1, 1)),
        lipschitz_C=1.0,
        name="toy1d",
    )


_REGISTRY: dict[str, Callable] = {}


def register_model(name: str, factory: Callable) -> None:
    _REGISTRY[name] = factory


def make_model(name: str, **params):
    """Model zoo lookup: 'toy1d', 'transaction', or a registered custom model."""
    if name == "toy1d":
        return toy1d_model()
    if name == "transaction":
        return build_transaction_model(**params)
    if name in _REGISTRY:
        return _REGISTRY[name](**params)
    raise KeyError(f"unknown model {name!r}; known: toy1d, transaction, {sorted(_REGISTRY)}")
