import math

import numpy as np
import pytest

from pathctrl.model import (
    ConstraintSet,
    ModelSpec,
    PerturbationInvalidError,
    PerturbedModel,
    build_transaction_model,
    in_constraint_cone,
    liquidation_value,
    make_model,
    perturbed_sigma,
    register_model,
    rho,
    support_function,
    transaction_sigma_inv,
)


class TestRho:
    def test_examples(self):
        assert rho(np.array([1.0, -2.0])) == 1.0
        assert rho(np.zeros(3)) == 0.0
        assert rho(np.array([2.0, 3.0, -1.0])) == 5.0

    def test_nonnegative_and_convex(self):
        rng = np.random.default_rng(0)
        q = rng.standard_normal((500, 4))
        r = rng.standard_normal((500, 4))
        assert np.all(rho(q) >= 0.0)
        mid = rho(0.5 * (q + r))
        assert np.all(mid <= 0.5 * rho(q) + 0.5 * rho(r) + 1e-12)

    def test_positive_homogeneity(self):
        q = np.array([1.5, -0.3, 0.2])
        assert rho(3.0 * q) == pytest.approx(3.0 * rho(q))


class TestConstraintCone:
    def test_identity_direction_examples(self):
        cs = ConstraintSet(f=lambda t: np.eye(2))
        assert in_constraint_cone(np.array([-1.0, -2.0]), 0.0, cs)
        assert not in_constraint_cone(np.array([0.1, -1.0]), 0.0, cs)

    def test_transaction_direction_example(self):
        pm, _ = build_transaction_model(lambda_tc=0.1)
        cs = ConstraintSet(f=pm.f)
        q = np.array([1.0, 1.0, 0.0])
        # f^T q = (-0.1, -0.1, 0)
        assert np.allclose(pm.f(0.0).T @ q, [-0.1, -0.1, 0.0])
        assert in_constraint_cone(q, 0.0, cs, atol=1e-10)

    def test_agrees_with_penalty_zero_set(self):
        pm, _ = build_transaction_model(lambda_tc=0.1)
        cs = ConstraintSet(f=pm.f)
        rng = np.random.default_rng(1)
        q = rng.standard_normal((10000, 3))
        pen = rho(q @ pm.f(0.0))
        inside = in_constraint_cone(q, 0.0, cs)
        assert np.array_equal(inside, pen <= 1e-12)


class TestSupportFunction:
    def test_zero_vector(self):
        cs = ConstraintSet(f=lambda t: np.eye(2))
        assert support_function(np.zeros(2), 0.0, cs) == 0.0

    def test_identity_cone(self):
        cs = ConstraintSet(f=lambda t: np.eye(2))
        assert support_function(np.array([1.0, 2.0]), 0.0, cs) == 0.0
        assert support_function(np.array([-1.0, 0.0]), 0.0, cs) == math.inf

    def test_positive_homogeneity(self):
        cs = ConstraintSet(f=lambda t: np.eye(2))
        for u in (np.array([2.0, 0.5]), np.array([-0.3, 1.0])):
            a = support_function(u, 0.0, cs)
            b = support_function(4.0 * u, 0.0, cs)
            assert a == b  # both 0 or both +inf for a cone indicator


class TestPerturbedSigma:
    @staticmethod
    def _base(dim, sigma):
        return ModelSpec(
            dim=dim,
            mu=lambda t, h: np.zeros((h.shape[0], dim)),
            sigma=sigma,
            f=lambda t: np.eye(dim),
        )

    def test_zero_eta_recovers_base(self):
        base = self._base(2, lambda t, h: np.tile(np.diag([1.0, 2.0]), (h.shape[0], 1, 1)))
        pm = PerturbedModel(base=base, eta_p=lambda t, h: np.zeros(h.shape[0]),
                            M=lambda t: np.eye(2), p=1.0)
        hist = np.zeros((3, 1, 2))
        assert np.array_equal(pm.sigma(0.0, hist), base.sigma(0.0, hist))

    def test_pure_perturbation(self):
        base = self._base(2, lambda t, h: np.zeros((h.shape[0], 2, 2)))
        pm = PerturbedModel(base=base, eta_p=lambda t, h: np.full(h.shape[0], -1.0),
                            M=lambda t: np.eye(2), p=1.0)
        hist = np.zeros((4, 1, 2))
        assert np.allclose(pm.sigma(0.0, hist), -np.eye(2)[None])

    def test_positive_eta_rejected(self):
        base = self._base(1, lambda t, h: np.ones((h.shape[0], 1, 1)))
        pm = PerturbedModel(base=base, eta_p=lambda t, h: np.full(h.shape[0], 0.5),
                            M=lambda t: np.eye(1), p=1.0)
        with pytest.raises(PerturbationInvalidError):
            perturbed_sigma(pm, 0.0, np.zeros((2, 1, 1)))


class TestTransactionModel:
    def setup_method(self):
        self.lam = 0.1
        self.p = 3.0
        self.pm, self.terminal = build_transaction_model(lambda_tc=self.lam, p=self.p)
        rng = np.random.default_rng(2)
        hist = rng.standard_normal((1000, 4, 3))
        hist[:, :, 1] = np.abs(hist[:, :, 1]) + 0.1  # keep risky position away from 0
        self.hist = hist

    def test_closed_form_inverse(self):
        sig = self.pm.sigma(0.3, self.hist)
        inv = self.pm.sigma_inv(0.3, self.hist)
        eye = np.broadcast_to(np.eye(3), sig.shape)
        assert np.max(np.abs(inv @ sig - eye)) < 1e-10
        assert np.max(np.abs(np.linalg.inv(sig) - inv)) < 1e-10

    def test_inverse_maps_push_directions(self):
        # (sigma^p)^{-1} f = -p f
        inv = self.pm.sigma_inv(0.0, self.hist)
        fmat = self.pm.f(0.0)
        assert np.max(np.abs(inv @ fmat - (-self.p) * fmat)) < 1e-13

    def test_skew_identity_for_base_volatility(self):
        # M sigma^T + sigma M = 0 for the unperturbed volatility
        sig = self.pm.base.sigma(0.7, self.hist)
        M = self.pm.M(0.7)
        assert np.max(np.abs(M @ np.swapaxes(sig, 1, 2) + sig @ M)) == 0.0

    def test_perturbation_vanishes_at_rate_one_over_p(self):
        hist = self.hist[:5]
        base = self.pm.base.sigma(0.0, hist)
        for p in (2.0, 8.0, 32.0):
            pm, _ = build_transaction_model(lambda_tc=self.lam, p=p)
            gap = np.max(np.abs(pm.sigma(0.0, hist) - base))
            assert gap == pytest.approx(1.0 / p)

    def test_invalid_parameters(self):
        with pytest.raises(ValueError):
            build_transaction_model(lambda_tc=-0.1)
        with pytest.raises(ValueError):
            build_transaction_model(lambda_tc=0.1, p=0.0)

    def test_terminal_is_liquidation_value(self):
        paths = np.zeros((3, 2, 3))
        paths[:, -1, 0] = [1.0, 1.0, 0.0]
        paths[:, -1, 1] = [1.0, -1.0, 0.0]
        got = self.terminal.U(paths)
        assert got[0] == pytest.approx(1.0 + 1.0 / 1.1)
        assert got[1] == pytest.approx(-0.1)
        assert got[2] == 0.0


class TestLiquidationValue:
    def test_examples(self):
        assert liquidation_value(1.0, 1.0, 0.1) == pytest.approx(1.0 + 1.0 / 1.1)
        assert liquidation_value(1.0, -1.0, 0.1) == pytest.approx(-0.1)

    def test_concave_piecewise_linear_in_y(self):
        y = np.linspace(-2, 2, 41)
        v = liquidation_value(0.0, y, 0.25)
        second = np.diff(v, 2)
        assert np.all(second <= 1e-12)

    def test_no_cost_reduces_to_sum(self):
        rng = np.random.default_rng(3)
        x, y = rng.standard_normal(100), rng.standard_normal(100)
        assert np.allclose(liquidation_value(x, y, 0.0), x + y)


class TestModelZoo:
    def test_toy1d(self):
        m = make_model("toy1d")
        hist = np.zeros((5, 1, 1))
        assert m.dim == 1
        assert np.allclose(m.mu(0.0, hist), 0.0)
        assert np.allclose(m.sigma(0.0, hist), 1.0)
        assert np.allclose(m.f(0.0), 1.0)

    def test_unknown_name(self):
        with pytest.raises(KeyError, match="unknown model"):
            make_model("nope")

    def test_register_custom(self):
        register_model("custom_flat", lambda: make_model("toy1d"))
        assert make_model("custom_flat").dim == 1

    def test_transaction_by_name(self):
        pm, _ = make_model("transaction", lambda_tc=0.05)
        assert pm.dim == 3


def test_transaction_sigma_inv_standalone():
    inv_fn = transaction_sigma_inv(0.1, lambda t, h3: np.full(h3.shape[0], 0.2), p=4.0)
    hist = np.ones((2, 1, 3))
    inv = inv_fn(0.0, hist)
    assert inv.shape == (2, 3, 3)
    assert np.allclose(inv[:, 0, 0], -4.0)
    assert np.allclose(inv[:, 1, 2], 4.0 * 0.2)
