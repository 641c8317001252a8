import numpy as np
import pytest

from pathctrl.bsde import (
    BasisSpec,
    constraint_violation,
    penalty_monotonicity,
    solution_to_csv,
    solve_penalized,
)
from pathctrl.model import TerminalFunctional, toy1d_model
from pathctrl.pathspace import TimeGrid
from pathctrl.simulate import SimulationPlan, constant_control, simulate_forward


MODEL = toy1d_model()
GRID = TimeGrid(0.0, 1.0, 25)


def _ensemble(n_paths=20000, seed=7, grid=GRID, x0=0.0):
    plan = SimulationPlan(grid, n_paths, seed, np.array([x0]))
    return simulate_forward(MODEL, plan)


def _terminal(fn):
    return TerminalFunctional(U=fn)


class TestUnpenalized:
    def test_constant_payoff(self):
        ens = _ensemble(2000)
        sol = solve_penalized(MODEL, _terminal(lambda p: np.full(p.shape[0], 3.0)),
                              0.0, ens, BasisSpec("polynomial", 2))
        assert np.max(np.abs(sol.y_values - 3.0)) < 1e-10
        assert np.max(np.abs(sol.z_values)) < 1e-10

    def test_martingale_property(self):
        # without penalty the initial value is the plain terminal mean
        ens = _ensemble(50000)
        term = _terminal(lambda p: -((p[:, -1, 0] - 1.0) ** 2))
        sol = solve_penalized(MODEL, term, 0.0, ens, BasisSpec("polynomial", 3))
        u = term.U(ens.values)
        se = np.std(u, ddof=1) / np.sqrt(len(u))
        assert abs(sol.y0 - np.mean(u)) < 3 * se

    def test_scaling_invariance(self):
        # lstsq is linear in the target, so scaling U scales (Y, Z) exactly
        ens = _ensemble(5000)
        term1 = _terminal(lambda p: p[:, -1, 0] ** 2)
        term5 = _terminal(lambda p: 5.0 * p[:, -1, 0] ** 2)
        a = solve_penalized(MODEL, term1, 0.0, ens, BasisSpec("polynomial", 3))
        b = solve_penalized(MODEL, term5, 0.0, ens, BasisSpec("polynomial", 3))
        assert np.allclose(5.0 * a.y_values, b.y_values, atol=1e-9)
        assert np.allclose(5.0 * a.z_values, b.z_values, atol=1e-9)

    def test_initial_slice_is_deterministic(self):
        ens = _ensemble(2000)
        sol = solve_penalized(MODEL, _terminal(lambda p: p[:, -1, 0]),
                              0.0, ens, BasisSpec("polynomial", 2))
        assert sol.y0_std < 1e-8


class TestPenalized:
    def test_linear_payoff_closed_form(self):
        # U = x_T, f = 1: pushing at full rate is optimal, Y_0 = x0 + n T
        ens = _ensemble(50000)
        term = _terminal(lambda p: p[:, -1, 0])
        sol = solve_penalized(MODEL, term, 1.0, ens, BasisSpec("local-bins", 7))
        assert sol.y0 == pytest.approx(1.0, abs=0.05)

    def test_linear_payoff_large_n(self):
        ens = _ensemble(50000)
        term = _terminal(lambda p: p[:, -1, 0])
        sol = solve_penalized(MODEL, term, 16.0, ens, BasisSpec("local-bins", 11))
        assert sol.y0 == pytest.approx(16.0, rel=0.05)

    def test_terminal_slice_is_exact(self):
        ens = _ensemble(2000)
        term = _terminal(lambda p: np.abs(p[:, -1, 0]))
        sol = solve_penalized(MODEL, term, 4.0, ens, BasisSpec("local-bins", 5))
        assert np.array_equal(sol.y_values[:, -1], term.U(ens.values))

    def test_penalty_never_hurts(self):
        ens = _ensemble(20000)
        term = _terminal(lambda p: -((p[:, -1, 0] - 1.0) ** 2))
        basis = BasisSpec("local-bins", 7)
        y0 = solve_penalized(MODEL, term, 0.0, ens, basis).y0
        y2 = solve_penalized(MODEL, term, 2.0, ens, basis).y0
        assert y2 >= y0

    def test_negative_penalty_rejected(self):
        ens = _ensemble(100)
        with pytest.raises(ValueError):
            solve_penalized(MODEL, _terminal(lambda p: p[:, -1, 0]), -1.0,
                            ens, BasisSpec())

    def test_controlled_ensemble_rejected(self):
        plan = SimulationPlan(GRID, 100, 0, np.array([0.0]), control=constant_control(1.0))
        ens = simulate_forward(MODEL, plan)
        with pytest.raises(ValueError, match="zero control"):
            solve_penalized(MODEL, _terminal(lambda p: p[:, -1, 0]), 1.0,
                            ens, BasisSpec())


class TestMonotonicityLadder:
    def test_requires_ascending_ladder(self):
        ens = _ensemble(100)
        with pytest.raises(ValueError):
            penalty_monotonicity(MODEL, _terminal(lambda p: p[:, -1, 0]),
                                 [0, 2, 1], ens, BasisSpec())

    def test_constant_payoff_flat_ladder(self):
        ens = _ensemble(2000)
        rep = penalty_monotonicity(MODEL, _terminal(lambda p: np.full(p.shape[0], 1.0)),
                                   [0, 1, 2], ens, BasisSpec("polynomial", 2))
        assert np.allclose(rep["values"], 1.0, atol=1e-9)
        assert rep["monotone_within_3se"]

    def test_quadratic_payoff_monotone(self):
        ens = _ensemble(20000)
        term = _terminal(lambda p: -((p[:, -1, 0] - 1.0) ** 2))
        rep = penalty_monotonicity(MODEL, term, [0, 1, 4], ens, BasisSpec("local-bins", 9))
        assert rep["monotone_within_3se"]
        assert rep["values"][2] > rep["values"][0]


class TestConstraintViolation:
    def test_zero_gradient(self):
        ens = _ensemble(2000)
        sol = solve_penalized(MODEL, _terminal(lambda p: np.full(p.shape[0], 2.0)),
                              0.0, ens, BasisSpec("polynomial", 2))
        assert np.max(constraint_violation(sol, MODEL, ens)) < 1e-9

    def test_linear_payoff_unit_violation(self):
        # Z = 1 everywhere, so rho(f^T sigma^-T Z) = 1 at every step
        ens = _ensemble(50000)
        sol = solve_penalized(MODEL, _terminal(lambda p: p[:, -1, 0]),
                              0.0, ens, BasisSpec("polynomial", 2))
        series = constraint_violation(sol, MODEL, ens)
        assert np.allclose(series, 1.0, atol=0.05)


def test_rank_deficiency_warns():
    ens = _ensemble(500)
    dup = BasisSpec(feature_map=lambda t, h: np.concatenate(
        [h[:, -1, :], h[:, -1, :]], axis=1))
    with pytest.warns(UserWarning, match="rank-deficient"):
        solve_penalized(MODEL, _terminal(lambda p: p[:, -1, 0]), 0.0, ens, dup)


def test_solution_csv_header():
    ens = _ensemble(500)
    sol = solve_penalized(MODEL, _terminal(lambda p: p[:, -1, 0]), 0.0,
                          ens, BasisSpec("polynomial", 2))
    text = solution_to_csv(sol, MODEL, ens)
    lines = text.strip().split("\n")
    assert lines[0] == "k,t,mean_Y,se_Y,mean_rho_violation"
    assert len(lines) == 1 + GRID.n_steps + 1


def test_path_dependent_features_include_running_stats():
    basis = BasisSpec(path_dependent=True)
    hist = np.array([[[0.0], [2.0], [1.0]]])
    feats = basis.features(0.0, hist)
    assert feats.shape == (1, 3)
    assert feats[0, 0] == 1.0          # current value
    assert feats[0, 1] == 2.0          # running max
    assert feats[0, 2] == pytest.approx(1.0)  # running average
