"""Euler forward simulation of the controlled and uncontrolled dynamics,
stochastic-exponential reweighting for the weak formulation, and moment
diagnostics.

Coefficients are always evaluated on the discrete history up to the current
step (prefix segment followed by the simulated nodes), which is exactly the
piecewise-linear chain used by the coupled-scheme comparison arguments.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .model import ModelSpec, PerturbedModel, TerminalFunctional
from .pathspace import Ensemble, Path, TimeGrid

__all__ = [
    "ControlSpec",
    "SimulationPlan",
    "simulate_forward",
    "girsanov_weights",
    "weak_strong_agreement",
    "moment_diagnostics",
    "ensemble_to_csv",
    "ensemble_to_binary",
    "constant_control",
    "no_control",
    "feedback_control",
]

MAGIC = b"PCTL1"


@dataclass
class ControlSpec:
    """Componentwise rate control with values in [0, n_bound]."""

    kind: str  # none | constant | feedback | open_loop_table
    n_bound: float
    evaluator: Callable[[float, np.ndarray], np.ndarray]  # (t, hist) -> (n_paths, d)

    def rates(self, t: float, hist: np.ndarray) -> np.ndarray:
        nu = np.asarray(self.evaluator(t, hist), dtype=float)
        if nu.ndim == 1:
            nu = np.tile(nu, (hist.shape[0], 1))
        if np.any(nu < -1e-12) or np.any(nu > self.n_bound + 1e-12):
            raise ValueError(f"control outside [0, {self.n_bound}] at t={t}")
        return np.clip(nu, 0.0, self.n_bound)


def no_control(dim: int) -> ControlSpec:
    return ControlSpec("none", 0.0, lambda t, hist: np.zeros((hist.shape[0], dim)))


def constant_control(c) -> ControlSpec:
    c = np.atleast_1d(np.asarray(c, dtype=float))
    return ControlSpec("constant", float(np.max(c)), lambda t, hist: np.tile(c, (hist.shape[0], 1)))


def feedback_control(fn: Callable[[float, np.ndarray], np.ndarray], n_bound: float) -> ControlSpec:
    """fn maps (t, current state (n_paths, d)) -> rates (n_paths, d)."""
    return ControlSpec("feedback", n_bound, lambda t, hist: fn(t, hist[:, -1, :]))


@dataclass
class SimulationPlan:
    grid: TimeGrid
    n_paths: int
    seed: int
    initial_segment: Path | np.ndarray | float
    control: ControlSpec | None = None
    weak_mode: bool = False

    def __post_init__(self):
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        if isinstance(self.initial_segment, Path):
            if abs(self.initial_segment.grid.t_end - self.grid.t_start) > 1e-10:
                raise ValueError("initial segment must end at grid.t_start")


def _prefix_arrays(plan: SimulationPlan, dim: int):
    """History nodes at and before t_start: times (m,), values (m, d)."""
    seg = plan.initial_segment
    if isinstance(seg, Path):
        return seg.grid.nodes, np.asarray(seg.values, dtype=float)
    x0 = np.atleast_1d(np.asarray(seg, dtype=float))
    if x0.size != dim:
        raise ValueError(f"initial state has dim {x0.size}, model has dim {dim}")
    return np.array([plan.grid.t_start]), x0[None, :]


def brownian_increments(plan: SimulationPlan, dim: int) -> np.ndarray:
    """Counter-based increments: path j always draws block j of the stream,
    so its noise does not depend on the ensemble size."""
    rng = np.random.Generator(np.random.Philox(key=plan.seed))
    dB = rng.standard_normal((plan.n_paths, plan.grid.n_steps, dim))
    return dB * np.sqrt(plan.grid.dt)


def simulate_forward(model: ModelSpec | PerturbedModel, plan: SimulationPlan) -> Ensemble:
    """Euler scheme X_{k+1} = X_k + (mu + f nu) dt + sigma dB on the plan's grid."""
    dim = model.dim
    grid = plan.grid
    control = plan.control or no_control(dim)
    ptimes, pvals = _prefix_arrays(plan, dim)
    n_pre = len(ptimes) - 1  # nodes strictly before t_start

    dB = brownian_increments(plan, dim)
    dt = grid.dt
    nodes = grid.nodes

    hist = np.empty((plan.n_paths, n_pre + grid.n_steps + 1, dim))
    hist[:, : n_pre + 1, :] = pvals[None, :, :]
    controls = np.empty((plan.n_paths, grid.n_steps, dim))

    for k in range(grid.n_steps):
        t_k = nodes[k]
        h = hist[:, : n_pre + k + 1, :]
        mu_k = model.mu(t_k, h)
        sig_k = model.sigma(t_k, h)
        nu_k = control.rates(t_k, h)
        controls[:, k, :] = nu_k
        push = nu_k @ model.f(t_k).T
        diff = np.einsum("nij,nj->ni", sig_k, dB[:, k, :])
        hist[:, n_pre + k + 1, :] = hist[:, n_pre + k, :] + (mu_k + push) * dt + diff

    return Ensemble(
        grid=grid,
        values=hist[:, n_pre:, :],
        brownian_increments=dB,
        control_values=controls,
        girsanov_log_weights=np.zeros(plan.n_paths),
        seed=plan.seed,
        prefix_times=ptimes[:-1],
        prefix_values=pvals[:-1],
    )


def girsanov_weights(
    model: ModelSpec | PerturbedModel, plan: SimulationPlan, control: ControlSpec
) -> tuple[Ensemble, np.ndarray]:
    """Log stochastic-exponential weights tilting the uncontrolled law.

    Simulates the uncontrolled dynamics from plan.seed, evaluates the control
    along those paths, and accumulates log E(int sigma^-1 f nu . dB):
    sum_k theta_k . dB_k - 0.5 |theta_k|^2 dt.
    """
    base_plan = SimulationPlan(plan.grid, plan.n_paths, plan.seed, plan.initial_segment)
    ens = simulate_forward(model, base_plan)
    n_pre = 0 if ens.prefix_values is None else len(ens.prefix_values)
    full = (
        np.concatenate([np.tile(ens.prefix_values, (ens.n_paths, 1, 1)), ens.values], axis=1)
        if n_pre
        else ens.values
    )
    dt = plan.grid.dt
    logw = np.zeros(plan.n_paths)
    for k in range(plan.grid.n_steps):
        t_k = plan.grid.nodes[k]
        h = full[:, : n_pre + k + 1, :]
        nu_k = control.rates(t_k, h)
        sig_inv = model.sigma_inv(t_k, h)
        theta = np.einsum("nij,nj->ni", sig_inv, nu_k @ model.f(t_k).T)
        dBk = ens.brownian_increments[:, k, :]
        logw += np.einsum("ni,ni->n", theta, dBk) - 0.5 * np.einsum("ni,ni->n", theta, theta) * dt
    weighted = Ensemble(
        grid=ens.grid,
        values=ens.values,
        brownian_increments=ens.brownian_increments,
        control_values=ens.control_values,
        girsanov_log_weights=logw,
        seed=ens.seed,
        prefix_times=ens.prefix_times,
        prefix_values=ens.prefix_values,
    )
    return weighted, logw


def terminal_values(terminal: TerminalFunctional, ens: Ensemble) -> np.ndarray:
    """Reward evaluated on the full concatenated paths (prefix + simulation)."""
    if ens.prefix_values is not None and len(ens.prefix_values):
        full = np.concatenate(
            [np.tile(ens.prefix_values, (ens.n_paths, 1, 1)), ens.values], axis=1
        )
    else:
        full = ens.values
    return np.asarray(terminal.U(full), dtype=float)


def weak_strong_agreement(
    model: ModelSpec | PerturbedModel,
    terminal: TerminalFunctional,
    control: ControlSpec,
    plan: SimulationPlan,
) -> dict:
    """Strong-arm mean of U on controlled paths versus the weighted
    uncontrolled mean, paired by seed (common random numbers)."""
    strong_plan = SimulationPlan(plan.grid, plan.n_paths, plan.seed, plan.initial_segment, control)
    ens_s = simulate_forward(model, strong_plan)
    u_strong = terminal_values(terminal, ens_s)

    ens_w, logw = girsanov_weights(model, plan, control)
    u_weak = np.exp(logw) * terminal_values(terminal, ens_w)

    diff = u_strong - u_weak
    se = float(np.std(diff, ddof=1) / np.sqrt(plan.n_paths))
    z = float(np.mean(diff) / se) if se > 0 else 0.0
    return {
        "strong_estimate": float(np.mean(u_strong)),
        "strong_se": float(np.std(u_strong, ddof=1) / np.sqrt(plan.n_paths)),
        "weak_estimate": float(np.mean(u_weak)),
        "weak_se": float(np.std(u_weak, ddof=1) / np.sqrt(plan.n_paths)),
        "pooled_se": se,
        "z": z,
        "weight_mean": float(np.mean(np.exp(logw))),
    }


def moment_diagnostics(ens: Ensemble, powers=(2, 4), constants: dict | None = None) -> dict:
    """Empirical sup-moment estimates for the simulated paths.

    Reports E[sup_s |X_s - X_t|^p] and E[sup_s |X_s|^p] for the requested
    powers, together with the push mass of the controls.  If calibrated
    constants are supplied (from a pilot run), bound violations are flagged.
    """
    x0 = ens.values[:, 0, :]
    dev = np.linalg.norm(ens.values - x0[:, None, :], axis=2).max(axis=1)
    size = np.linalg.norm(ens.values, axis=2).max(axis=1)
    mass = np.linalg.norm(ens.control_values.sum(axis=1) * ens.grid.dt, axis=1)
    span = ens.grid.t_end - ens.grid.t_start
    report: dict = {"span": span, "control_mass_mean": float(np.mean(mass))}
    for p in powers:
        lhs_dev = float(np.mean(dev**p))
        lhs_size = float(np.mean(size**p))
        report[f"sup_deviation_p{p}"] = lhs_dev
        report[f"sup_size_p{p}"] = lhs_size
        if constants and f"C{p}" in constants:
            c = constants[f"C{p}"]
            x0n = float(np.mean(np.linalg.norm(x0, axis=1) ** p))
            bound_dev = c * (np.sqrt(span) * (1 + x0n) + (1 + np.sqrt(span)) * float(np.mean(mass**p)))
            bound_size = c * (1 + x0n + float(np.mean(mass**p)))
            report[f"bound_deviation_p{p}"] = bound_dev
            report[f"bound_size_p{p}"] = bound_size
            report[f"violated_p{p}"] = bool(lhs_dev > bound_dev or lhs_size > bound_size)
    return report


def ensemble_to_csv(ens: Ensemble) -> str:
    dim = ens.dim
    lines = ["path_id,k," + "t," + ",".join(f"x{i + 1}" for i in range(dim)) + ",logw"]
    nodes = ens.grid.nodes
    for j in range(ens.n_paths):
        lw = ens.girsanov_log_weights[j]
        for k in range(ens.grid.n_steps + 1):
            row = [str(j), str(k), repr(float(nodes[k]))]
            row += [repr(float(v)) for v in ens.values[j, k]]
            row.append(repr(float(lw)))
            lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def ensemble_to_binary(ens: Ensemble) -> bytes:
    """Compact dump: magic 'PCTL1', little-endian header (dims, counts), then
    float64 node values and log-weights."""
    header = struct.pack(
        "<5sqqqddq",
        MAGIC,
        ens.n_paths,
        ens.grid.n_steps,
        ens.dim,
        ens.grid.t_start,
        ens.grid.t_end,
        ens.seed,
    )
    body = ens.values.astype("<f8").tobytes() + ens.girsanov_log_weights.astype("<f8").tobytes()
    return header + body
