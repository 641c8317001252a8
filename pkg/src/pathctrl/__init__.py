"""Numerical toolkit for path-dependent singular control via penalized
Z-constrained backward equations: forward simulation, least-squares
Monte-Carlo backward solves, grid dynamic programming, perturbation
ladders for degenerate volatility, and face-lift machinery.
"""

__version__ = "0.1.0"

from .pathspace import (  # noqa: F401
    TimeGrid,
    Path,
    Ensemble,
    concat,
    sup_norm,
    d_infinity,
    interpolate,
    constant_path,
)
from .model import (  # noqa: F401
    ModelSpec,
    PerturbedModel,
    ConstraintSet,
    TerminalFunctional,
    rho,
    in_constraint_cone,
    support_function,
    perturbed_sigma,
    build_transaction_model,
    liquidation_value,
    make_model,
)
from .simulate import (  # noqa: F401
    ControlSpec,
    SimulationPlan,
    simulate_forward,
    girsanov_weights,
    weak_strong_agreement,
    moment_diagnostics,
)
from .bsde import BasisSpec, BsdeSolution, solve_penalized, penalty_monotonicity, constraint_violation  # noqa: F401
from .control import (  # noqa: F401
    ValueEstimate,
    GridDpSpec,
    solve_grid_dp,
    estimate_value_mc,
    dpp_residual,
    convex_order_experiment,
    degenerate_sup_ladder,
    regularity_probe,
)
from .facelift import FaceliftSpec, facelift, auxiliary_value_Y  # noqa: F401
