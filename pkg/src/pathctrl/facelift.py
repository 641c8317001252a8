"""Face-lift transform and the support-function-penalized auxiliary control
problem, with its invariance and shift properties.

The face-lift of a payoff is its smallest dominating function that is
nonincreasing along the admissible push directions: the supremum of the
shifted payoff over the polar cone of the gradient-constraint set, net of
the (zero-or-infinite) support-function cost.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize

from .control import GridDpSpec, ValueEstimate, solve_grid_dp
from .model import ConstraintSet, ModelSpec, TerminalFunctional, support_function
from .pathspace import TimeGrid

__all__ = [
    "FaceliftSpec",
    "facelift",
    "facelift_with_info",
    "facelift_table_csv",
    "auxiliary_value_Y",
    "facelift_equivalence_test",
    "shift_property_test",
]


@dataclass
class FaceliftSpec:
    """Markovian payoff, push-direction matrix and search controls."""

    payoff: Callable[[np.ndarray], float]  # d-vector -> scalar
    directions: np.ndarray                 # f_T, (d, d)
    search_radius: float = 50.0
    search_points: int = 201

    @property
    def dim(self) -> int:
        return np.asarray(self.directions).shape[0]

    def delta(self, u: np.ndarray) -> float:
        """Support-function cost of a shift: 0 on the polar cone, +inf outside."""
        cs = ConstraintSet(f=lambda t: np.asarray(self.directions, dtype=float))
        return support_function(np.asarray(u, dtype=float), 0.0, cs)


def _cone_generators(f_mat: np.ndarray) -> np.ndarray:
    """Nonzero columns of f: the rays spanning the polar cone of shifts."""
    cols = [f_mat[:, i] for i in range(f_mat.shape[1])]
    return np.array([c for c in cols if np.linalg.norm(c) > 1e-12])


def facelift_with_info(spec: FaceliftSpec, x) -> tuple[float, np.ndarray, bool]:
    """Supremum of the payoff over polar-cone shifts from x.

    Returns (value, argmax shift, unbounded-flag).  The search covers
    nonnegative combinations of the cone generators up to search_radius on
    a lattice, followed by local refinement.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    f_mat = np.asarray(spec.directions, dtype=float)
    gens = _cone_generators(f_mat)
    base = float(spec.payoff(x))
    if len(gens) == 0:
        return base, np.zeros_like(x), False

    def obj(w):
        return float(spec.payoff(x + w @ gens))

    m = len(gens)
    pts = np.linspace(0.0, spec.search_radius, spec.search_points)
    best_val, best_w = base, np.zeros(m)
    if m == 1:
        vals = np.array([obj(np.array([w])) for w in pts])
        j = int(np.argmax(vals))
        if vals[j] > best_val:
            best_val, best_w = float(vals[j]), np.array([pts[j]])
    else:
        coarse = np.linspace(0.0, spec.search_radius, max(9, spec.search_points // 8))
        for w in itertools.product(coarse, repeat=m):
            v = obj(np.asarray(w))
            if v > best_val:
                best_val, best_w = v, np.asarray(w)

    res = minimize(
        lambda w: -obj(np.maximum(w, 0.0)),
        best_w,
        method="Nelder-Mead",
        bounds=[(0.0, spec.search_radius)] * m,
        options={"xatol": 1e-9, "fatol": 1e-12, "maxiter": 2000},
    )
    w_ref = np.clip(res.x, 0.0, spec.search_radius)
    if -res.fun > best_val:
        best_val, best_w = float(-res.fun), w_ref

    # still climbing at the search boundary?
    unbounded = False
    if np.any(best_w > 0.95 * spec.search_radius):
        step = 0.1 * spec.search_radius
        probe = obj(best_w + step * np.ones(m) * (best_w > 0.95 * spec.search_radius))
        if probe > best_val + 1e-12:
            unbounded = True
            warnings.warn(f"face-lift search still increasing at radius {spec.search_radius}")
    return max(best_val, base), best_w @ gens, unbounded


def facelift(spec: FaceliftSpec, x) -> float:
    value, _, _ = facelift_with_info(spec, x)
    return value


def facelift_table_csv(spec: FaceliftSpec, xs: np.ndarray) -> str:
    d = spec.dim
    lines = [",".join(f"x{i + 1}" for i in range(d)) + ",U,U_hat,argmax_u"]
    for x in np.atleast_2d(xs):
        val, arg, _ = facelift_with_info(spec, x)
        lines.append(
            ",".join(repr(float(v)) for v in x)
            + f",{spec.payoff(np.atleast_1d(x))!r},{val!r},"
            + ";".join(repr(float(a)) for a in np.atleast_1d(arg))
        )
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# auxiliary control problem with support-function running cost
# ---------------------------------------------------------------------------

def auxiliary_value_Y(
    model: ModelSpec,
    spec: FaceliftSpec,
    t: float,
    x,
    grid: TimeGrid,
    dp_spec: GridDpSpec,
    control_bound: float,
    n_levels: int = 5,
    terminal_override: Callable | None = None,
) -> ValueEstimate:
    """Grid-DP value of the cone-constrained problem with running cost
    delta(u): controls are polar-cone rates up to control_bound, pushed
    through f, and only zero-cost (polar cone) levels are admissible."""
    if abs(grid.t_start - t) > 1e-10:
        raise ValueError("grid must start at the requested time")
    if model.dim != 1:
        raise NotImplementedError("auxiliary DP implemented for d=1")
    gens = _cone_generators(np.asarray(spec.directions, dtype=float))
    scalars = np.linspace(0.0, control_bound, n_levels)
    # push enters the dynamics through f; in d=1 the generator is f itself
    levels = [[s] for s in scalars]
    payoff = spec.payoff if terminal_override is None else terminal_override
    term = TerminalFunctional(U=lambda paths: np.array([payoff(v) for v in paths[:, -1, :]]))
    dp = GridDpSpec(
        state_box=dp_spec.state_box,
        n_space=dp_spec.n_space,
        control_levels=levels,
        quad_nodes=dp_spec.quad_nodes,
    )
    res = solve_grid_dp(model, term, control_bound, dp, grid, x0=np.atleast_1d(x))
    est = res.estimate
    est.method = "grid_dp"
    est.meta["running_cost"] = "support_function"
    return est


def facelift_equivalence_test(
    model: ModelSpec,
    spec: FaceliftSpec,
    t: float,
    x,
    grid: TimeGrid,
    dp_spec: GridDpSpec,
    control_bound: float,
    tolerance: float,
    n_levels: int = 5,
) -> dict:
    """The auxiliary value with terminal payoff U must match the one with
    the face-lifted terminal payoff, within interpolation tolerance."""
    y_raw = auxiliary_value_Y(model, spec, t, x, grid, dp_spec, control_bound,
                              n_levels=n_levels)
    lifted = lambda v: facelift(spec, v)
    y_lift = auxiliary_value_Y(
        model, spec, t, x, grid, dp_spec, control_bound, n_levels=n_levels,
        terminal_override=lifted,
    )
    gap = abs(y_raw.value - y_lift.value)
    return {
        "value_raw": y_raw.value,
        "value_facelifted": y_lift.value,
        "gap": gap,
        "tolerance": 2.0 * tolerance,
        "ok": gap <= 2.0 * tolerance,
    }


def shift_property_test(
    model: ModelSpec,
    spec: FaceliftSpec,
    t: float,
    x,
    iota_list: Sequence,
    grid: TimeGrid,
    dp_spec: GridDpSpec,
    control_bound: float,
    tolerance: float,
) -> dict:
    """One-sided shift inequality: Y(x) >= Y(x + f iota) - delta(iota) for
    deterministic polar-cone shifts, with equality at iota = 0."""
    f_mat = np.asarray(spec.directions, dtype=float)
    y0 = auxiliary_value_Y(model, spec, t, x, grid, dp_spec, control_bound)
    rows = []
    ok = True
    for iota in iota_list:
        iv = np.atleast_1d(np.asarray(iota, dtype=float))
        cost = spec.delta(f_mat @ iv)
        if not np.isfinite(cost):
            raise ValueError(f"shift {iota} has infinite support-function cost")
        x_shift = np.atleast_1d(np.asarray(x, dtype=float)) + f_mat @ iv
        y_shift = auxiliary_value_Y(model, spec, t, x_shift, grid, dp_spec, control_bound)
        holds = y0.value >= y_shift.value - cost - tolerance
        ok = ok and holds
        rows.append({"iota": list(iv), "y_shifted": y_shift.value, "cost": cost, "holds": holds})
    return {"y_base": y0.value, "rows": rows, "ok": ok}
