"""Configuration-driven experiment runner.

Every verification experiment is a named command with deterministic seeds
and machine-readable output: a results file (CSV or JSON) plus a
manifest.json echoing the configuration, the library version, wall time and
per-assertion pass/fail.  Exit status: 0 all assertions pass, 1 an
assertion failed, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .benchmarks import (
    facelift_benchmark_limit,
    gaussian_quadrature_oracle,
    quadratic_payoff,
    quadratic_payoff_lifted,
    toy1d_terminal,
)
from .bsde import BasisSpec, penalty_monotonicity
from .control import (
    GridDpSpec,
    convex_order_experiment,
    degenerate_sup_ladder,
    dpp_residual,
    regularity_probe,
    solve_grid_dp,
)
from .facelift import FaceliftSpec, facelift, shift_property_test
from .model import (
    build_transaction_model,
    liquidation_value,
    make_model,
    toy1d_model,
    transaction_sigma_inv,
)
from .pathspace import TimeGrid
from .simulate import (
    SimulationPlan,
    feedback_control,
    moment_diagnostics,
    simulate_forward,
    weak_strong_agreement,
)

_DEFAULTS = {
    "model": "toy1d",
    "grid": {"t_start": 0.0, "t_end": 1.0, "n_steps": 50},
    "paths": 20000,
    "seed": 7,
    "penalty_ladder": [0.0, 1.0, 2.0, 4.0, 8.0, 16.0],
    "p_ladder": [2.0, 4.0, 8.0, 16.0],
    "bound_ladder": [1.0, 4.0, 16.0],
    "output": ".",
    "format": "csv",
    "threads": None,
}

_KNOWN_KEYS = set(_DEFAULTS) | {"experiment", "model_params"}
_KNOWN_MODELS = {"toy1d", "transaction"}


class ConfigError(ValueError):
    pass


def _validate(cfg: dict) -> dict:
    out = dict(_DEFAULTS)
    for key, val in cfg.items():
        if key not in _KNOWN_KEYS:
            raise ConfigError(f"unknown config field {key!r}")
        out[key] = val
    if "experiment" not in out:
        raise ConfigError("missing required field 'experiment'")
    if out["experiment"] not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {out['experiment']!r} (field 'experiment')")
    if out["model"] not in _KNOWN_MODELS:
        raise ConfigError(f"unknown model {out['model']!r} (field 'model')")
    g = out["grid"]
    if not (isinstance(g, dict) and {"t_start", "t_end", "n_steps"} <= set(g)):
        raise ConfigError("field 'grid' must have t_start, t_end, n_steps")
    if g["t_start"] >= g["t_end"] or int(g["n_steps"]) < 1:
        raise ConfigError("field 'grid' must satisfy t_start < t_end, n_steps >= 1")
    if int(out["paths"]) < 1:
        raise ConfigError("field 'paths' must be positive")
    for lad in ("penalty_ladder", "p_ladder", "bound_ladder"):
        seq = list(out[lad])
        if any(b <= a for a, b in zip(seq, seq[1:])):
            raise ConfigError(f"field {lad!r} must be strictly ascending")
        out[lad] = [float(v) for v in seq]
    if out["format"] not in ("csv", "json"):
        raise ConfigError("field 'format' must be 'csv' or 'json'")
    return out


def _grid(cfg) -> TimeGrid:
    g = cfg["grid"]
    return TimeGrid(float(g["t_start"]), float(g["t_end"]), int(g["n_steps"]))


def _toy_plan(cfg) -> SimulationPlan:
    return SimulationPlan(_grid(cfg), int(cfg["paths"]), int(cfg["seed"]), 0.0)


# ---------------------------------------------------------------------------
# experiment implementations: each returns (rows, assertions)
# rows: list of dicts with a shared key set; assertions: list of
# {"name", "passed", "detail"}
# ---------------------------------------------------------------------------

def _exp_simulate(cfg):
    model = toy1d_model() if cfg["model"] == "toy1d" else build_transaction_model(0.01)[0]
    x0 = 0.0 if model.dim == 1 else np.array([1.0, 0.5, 0.0])
    plan = SimulationPlan(_grid(cfg), int(cfg["paths"]), int(cfg["seed"]), x0)
    ens = simulate_forward(model, plan)
    diag = moment_diagnostics(ens)
    rows = [{"quantity": k, "value": float(v)} for k, v in sorted(diag.items())]
    ok = bool(np.all(np.isfinite(ens.values)))
    return rows, [{"name": "all_values_finite", "passed": ok, "detail": ""}]


def _ws_control(model):
    d = model.dim
    if d == 1:
        return feedback_control(lambda t, x: 0.5 * (1.0 + np.tanh(-x)), 1.0)
    return feedback_control(
        lambda t, x: np.column_stack(
            [0.5 * (1.0 + np.tanh(-x[:, 0])), 0.25 * np.ones(len(x)), np.zeros(len(x))]
        ),
        1.0,
    )


def _exp_weak_strong(cfg):
    rows, asserts = [], []
    cases = [("toy1d", toy1d_model(), toy1d_terminal(), 0.0)]
    tm, tt = build_transaction_model(0.01, p=2.0)
    cases.append(("transaction", tm, tt, np.array([1.0, 0.5, 0.0])))
    for name, model, term, x0 in cases:
        plan = SimulationPlan(_grid(cfg), int(cfg["paths"]), int(cfg["seed"]), x0)
        rep = weak_strong_agreement(model, term, _ws_control(model), plan)
        rows.append({"case": name, **{k: float(v) for k, v in rep.items()}})
        asserts.append(
            {
                "name": f"weak_strong_z_{name}",
                "passed": bool(abs(rep["z"]) < 3.0),
                "detail": f"z={rep['z']:.3f}",
            }
        )
    return rows, asserts


def _exp_penalty_ladder(cfg):
    model = toy1d_model()
    term = toy1d_terminal()
    ens = simulate_forward(model, _toy_plan(cfg))
    basis = BasisSpec("local-bins", 11)
    rep = penalty_monotonicity(model, term, cfg["penalty_ladder"], ens, basis)
    rows = [
        {"penalty_n": n, "y0": v, "se": s}
        for n, v, s in zip(rep["n_list"], rep["values"], rep["ses"])
    ]
    asserts = [
        {
            "name": "ladder_monotone_within_3se",
            "passed": bool(rep["monotone_within_3se"]),
            "detail": f"values={['%.4f' % v for v in rep['values']]}",
        },
        {
            "name": "saturation_gap_reported",
            "passed": bool(np.isfinite(rep["saturation_gap"])),
            "detail": f"gap={rep['saturation_gap']:.4f}",
        },
    ]
    return rows, asserts


def _dp_spec():
    return GridDpSpec(state_box=[[-6.0, 8.0]], n_space=201, quad_nodes=7)


def _exp_grid_dp(cfg):
    model = toy1d_model()
    term = toy1d_terminal()
    grid = _grid(cfg)
    rows = []
    values = []
    for n in cfg["bound_ladder"]:
        res = solve_grid_dp(model, term, n, _dp_spec(), grid, x0=0.0)
        rows.append({"n_bound": n, "value": res.estimate.value})
        values.append(res.estimate.value)
    ok = all(b >= a - 1e-12 for a, b in zip(values, values[1:]))
    return rows, [
        {
            "name": "dp_values_nondecreasing",
            "passed": bool(ok),
            "detail": f"values={['%.4f' % v for v in values]}",
        }
    ]


def _exp_dpp_residual(cfg):
    model = toy1d_model()
    term = toy1d_terminal()
    grid = _grid(cfg)
    s = grid.nodes[grid.n_steps // 2]
    rep = dpp_residual(model, term, 4.0, float(s), _dp_spec(), grid, x0=0.0)
    rows = [{"quantity": k, "value": float(v)} for k, v in sorted(rep.items())]
    ok = rep["residual"] <= 2.0 * rep["interp_error_estimate"] + 1e-12
    return rows, [
        {
            "name": "residual_within_2x_interp_error",
            "passed": bool(ok),
            "detail": f"residual={rep['residual']:.2e} interp={rep['interp_error_estimate']:.2e}",
        }
    ]


def _tc_utility(w):
    return -np.exp(-np.asarray(w, dtype=float))


def _exp_convex_order(cfg):
    base = build_transaction_model(0.01, utility=_tc_utility)[0].base
    _, term = build_transaction_model(0.01, utility=_tc_utility)
    plan = SimulationPlan(
        _grid(cfg), int(cfg["paths"]), int(cfg["seed"]), np.array([1.0, 0.5, 0.0])
    )
    M_fn = lambda t: np.diag([1.0, 1.0, 0.0])
    rep = convex_order_experiment(
        base,
        lambda t, h: np.full(h.shape[0], -1.0 / 2.0),
        lambda t, h: np.full(h.shape[0], -1.0 / 8.0),
        M_fn,
        term,
        plan,
        p=2.0,
        q=8.0,
    )
    rows = [{"quantity": k, "value": float(v)} for k, v in sorted(rep.items())]
    return rows, [
        {
            "name": "concave_means_ordered",
            "passed": bool(rep["ordered_within_3se"]),
            "detail": f"mean_p={rep['mean_p']:.5f} mean_q={rep['mean_q']:.5f} z={rep['z']:.2f}",
        }
    ]


def _exp_degenerate_ladder(cfg):
    pm, term = build_transaction_model(0.01, utility=_tc_utility)
    base = pm.base
    plan = SimulationPlan(
        _grid(cfg), int(cfg["paths"]), int(cfg["seed"]), np.array([1.0, 0.5, 0.0])
    )
    policies = [
        feedback_control(lambda t, x, c=c: np.column_stack(
            [c * np.ones(len(x)), np.zeros(len(x)), np.zeros(len(x))]
        ), 1.0)
        for c in (0.0, 0.5, 1.0)
    ]
    rep = degenerate_sup_ladder(
        base,
        lambda p: (lambda t, h, p=p: np.full(h.shape[0], -1.0 / p)),
        lambda t: np.diag([1.0, 1.0, 0.0]),
        term,
        cfg["p_ladder"],
        plan,
        policies=policies,
    )
    rows = [
        {"p": p, "value": v, "se": s}
        for p, v, s in zip(rep["p_list"], rep["values"], rep["ses"])
    ]
    return rows, [
        {
            "name": "ladder_monotone_within_3se",
            "passed": bool(rep["monotone_within_3se"]),
            "detail": f"values={['%.5f' % v for v in rep['values']]}",
        }
    ]


def _toy_facelift_spec():
    return FaceliftSpec(
        payoff=lambda x: float(quadratic_payoff(x[0])), directions=np.ones((1, 1))
    )


def _exp_facelift(cfg):
    spec = _toy_facelift_spec()
    xs = np.linspace(-2.0, 3.0, 26)
    rows = [
        {"x": float(x), "payoff": float(quadratic_payoff(x)), "facelift": facelift(spec, [x])}
        for x in xs
    ]
    asserts = []
    for x in (0.0, 2.0):
        got = facelift(spec, [x])
        want = float(quadratic_payoff_lifted(x))
        asserts.append(
            {
                "name": f"facelift_at_{x:g}",
                "passed": bool(abs(got - want) < 1e-6),
                "detail": f"got={got:.8f} want={want:.8f}",
            }
        )
    return rows, asserts


def _exp_shift_property(cfg):
    model = toy1d_model()
    spec = _toy_facelift_spec()
    grid = _grid(cfg)
    rep = shift_property_test(
        model, spec, grid.t_start, [0.0], [[0.0], [0.5], [1.0]], grid,
        _dp_spec(), control_bound=8.0, tolerance=1e-3,
    )
    rows = [
        {"iota": r["iota"][0], "y_shifted": r["y_shifted"], "holds": int(r["holds"])}
        for r in rep["rows"]
    ]
    return rows, [
        {
            "name": "shift_inequality",
            "passed": bool(rep["ok"]),
            "detail": f"y_base={rep['y_base']:.5f}",
        }
    ]


def _exp_regularity(cfg):
    # kinked payoff that is already its own facelift: the limit value is the
    # heat semigroup applied to it, giving the square-root time behavior at
    # the kink
    payoff = lambda z: -np.maximum(z - 1.0, 0.0)

    def value_fn(tau, x):
        # tau is time to maturity
        if tau <= 0:
            return float(payoff(x))
        return gaussian_quadrature_oracle(payoff, x, tau)

    rep = regularity_probe(
        value_fn, 0.0, 1.0, h_list=[0.1, 0.2, 0.4], tau_list=[0.01, 0.04, 0.16]
    )
    rows = [{"quantity": "holder_exponent_fit", "value": rep["holder_exponent_fit"]}]
    rows += [{"quantity": f"lipschitz_ratio_{h}", "value": r}
             for h, r in zip([0.1, 0.2, 0.4], rep["lipschitz_ratios"])]
    ok = 0.4 <= rep["holder_exponent_fit"] <= 0.6
    return rows, [
        {
            "name": "holder_exponent_in_band",
            "passed": bool(ok),
            "detail": f"fit={rep['holder_exponent_fit']:.3f}",
        }
    ]


def _exp_transaction_demo(cfg):
    lam, p = 0.01, 4.0
    pm, term = build_transaction_model(lam, p=p)
    rng = np.random.default_rng(int(cfg["seed"]))
    hist = rng.standard_normal((1000, 3, 3))
    hist[:, :, 1] = np.abs(hist[:, :, 1]) + 0.1  # risky position away from 0
    sig = pm.sigma(0.0, hist)
    inv_closed = pm.sigma_inv(0.0, hist)
    inv_numeric = np.linalg.inv(sig)
    err_inv = float(np.max(np.abs(inv_closed - inv_numeric)))
    f_mat = pm.f(0.0)
    err_f = float(np.max(np.abs(inv_closed @ f_mat - (-p) * f_mat)))
    M = np.diag([1.0, 1.0, 0.0])
    base_sig = pm.base.sigma(0.0, hist)
    err_m = float(np.max(np.abs(M @ base_sig.transpose(0, 2, 1) + base_sig @ M)))
    ell = float(liquidation_value(np.array(2.0), np.array(-1.0), lam))
    rows = [
        {"quantity": "max_inverse_gap", "value": err_inv},
        {"quantity": "max_push_eigen_gap", "value": err_f},
        {"quantity": "max_skew_gap", "value": err_m},
        {"quantity": "liquidation_example", "value": ell},
    ]
    asserts = [
        {"name": "closed_form_inverse", "passed": err_inv < 1e-10, "detail": f"{err_inv:.2e}"},
        {"name": "push_directions_eigen", "passed": err_f < 1e-12, "detail": f"{err_f:.2e}"},
        {"name": "skew_identity", "passed": err_m == 0.0, "detail": f"{err_m:.2e}"},
    ]
    return rows, asserts


EXPERIMENTS = {
    "simulate": (_exp_simulate, "forward Euler ensemble with sup-moment diagnostics"),
    "weak_strong": (_exp_weak_strong, "controlled simulation vs reweighted uncontrolled one"),
    "penalty_ladder": (_exp_penalty_ladder, "backward-solver values along an ascending penalty ladder"),
    "grid_dp": (_exp_grid_dp, "brute-force lattice values for the bounded-rate problem"),
    "dpp_residual": (_exp_dpp_residual, "two-stage value composition against the direct solve"),
    "convex_order": (_exp_convex_order, "coupled perturbation comparison under a concave reward"),
    "degenerate_ladder": (_exp_degenerate_ladder, "policy-search values along the vanishing-perturbation ladder"),
    "facelift": (_exp_facelift, "payoff face-lift table and calculus checks"),
    "shift_property": (_exp_shift_property, "one-sided shift inequality of the auxiliary value"),
    "regularity": (_exp_regularity, "Lipschitz ratios and square-root-in-time exponent fit"),
    "transaction_demo": (_exp_transaction_demo, "transaction-model matrix algebra and liquidation demo"),
}


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

def _write_results(rows: list, path_base: str, fmt: str) -> str:
    if fmt == "json":
        path = path_base + ".json"
        with open(path, "w") as fh:
            json.dump(rows, fh, indent=1, sort_keys=True)
            fh.write("\n")
        return path
    path = path_base + ".csv"
    keys = list(rows[0].keys()) if rows else []
    with open(path, "w") as fh:
        fh.write(",".join(keys) + "\n")
        for row in rows:
            fh.write(",".join(repr(row[k]) if isinstance(row[k], float) else str(row[k])
                             for k in keys) + "\n")
    return path


def _run(cfg: dict) -> int:
    threads = cfg.get("threads")
    if threads is None:
        env = os.environ.get("PATHCTRL_THREADS")
        threads = int(env) if env else None
    t0 = time.perf_counter()
    fn, _ = EXPERIMENTS[cfg["experiment"]]
    if threads:
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=int(threads)):
            rows, asserts = fn(cfg)
    else:
        rows, asserts = fn(cfg)
    wall = time.perf_counter() - t0

    outdir = cfg["output"]
    os.makedirs(outdir, exist_ok=True)
    results_path = _write_results(rows, os.path.join(outdir, "results"), cfg["format"])
    passed = all(a["passed"] for a in asserts)
    manifest = {
        "experiment": cfg["experiment"],
        "config": {k: v for k, v in sorted(cfg.items())},
        "version": __version__,
        "wall_time_s": wall,
        "results_file": os.path.basename(results_path),
        "assertions": asserts,
        "passed": passed,
    }
    with open(os.path.join(outdir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    for a in asserts:
        status = "PASS" if a["passed"] else "FAIL"
        print(f"[{status}] {cfg['experiment']}.{a['name']} {a['detail']}")
    if not passed:
        print("assertion failure", file=sys.stderr)
        return 1
    return 0


def _load_config(args) -> dict:
    cfg = {}
    if args.config:
        try:
            with open(args.config) as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file: {exc}")
    # flag overrides
    if args.experiment:
        cfg["experiment"] = args.experiment
    if args.model:
        cfg["model"] = args.model
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.paths is not None:
        cfg["paths"] = args.paths
    if args.steps is not None:
        g = dict(cfg.get("grid", _DEFAULTS["grid"]))
        g["n_steps"] = args.steps
        cfg["grid"] = g
    if args.output:
        cfg["output"] = args.output
    if args.format:
        cfg["format"] = args.format
    if args.threads is not None:
        cfg["threads"] = args.threads
    return _validate(cfg)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="pathctrl", description="experiment runner for the control toolkit"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one experiment")
    val_p = sub.add_parser("validate", help="validate a configuration without running")
    for p in (run_p, val_p):
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--experiment", help="experiment name (see 'list')")
        p.add_argument("--model", help="model zoo key")
        p.add_argument("--seed", type=int)
        p.add_argument("--paths", type=int)
        p.add_argument("--steps", type=int)
        p.add_argument("--output", help="output directory")
        p.add_argument("--format", choices=["csv", "json"])
        p.add_argument("--threads", type=int)
    sub.add_parser("list", help="list registered experiments")

    args = parser.parse_args(argv)
    if args.command == "list":
        for name, (_, doc) in EXPERIMENTS.items():
            print(f"{name}: {doc}")
        return 0
    try:
        cfg = _load_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.command == "validate":
        print("ok")
        return 0
    return _run(cfg)


if __name__ == "__main__":
    sys.exit(main())
