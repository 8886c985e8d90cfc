"""Command-line front end.

Subcommands:

* ``run``: execute the configured scenarios, writing per-scenario
  trajectory CSVs, metrics JSON, and (optionally) SVG charts.
* ``verify``: sweep the closed-form control laws against the active-set
  oracle on random instances and print the largest deviations.
* ``gp-fit``: build (or load) the residual dataset, fit the posterior, and
  dump fit diagnostics.

Exit codes: 0 success, 1 configuration error, 2 scenario/verification error.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import os
import sys
import time

import numpy as np

from . import acc
from .backend import active_backend
from .clf_cbf import CbfTerms, ClfTerms, IncompatiblePoint, universal_formula
from .config import ConfigError, ExperimentConfig, default_config, parse_config
from .dynamics import SimulationError
from .gp import dataset_from_csv, fit_posterior
from .gp_control import ControlLimits, relaxed_universal_formula
from .gp_control import UncertaintyMargins
from .qp_oracle import PointwiseQp, solve_min_norm
from .report import render_plots, write_metrics_json, write_trajectory_csv


def _control_limits(cfg: ExperimentConfig):
    lc = cfg.control_limits
    if not lc.enabled:
        return None
    half = 0.5 * cfg.acc.weight
    lower = lc.lower if lc.lower is not None else -half
    upper = lc.upper if lc.upper is not None else half
    return ControlLimits(lower=np.array([lower]), upper=np.array([upper]))


def _scenario_spec(cfg: ExperimentConfig, slug: str) -> acc.ScenarioSpec:
    kind = acc.ScenarioKind.from_slug(slug)
    dataset = None
    if kind is acc.ScenarioKind.GP_LEARNED and cfg.gp.dataset is not None:
        dataset = dataset_from_csv(cfg.gp.dataset, noise_std=cfg.gp.noise_std)
    return acc.ScenarioSpec(kind=kind, mismatch_drag=cfg.mismatch, gp=cfg.gp_settings(dataset))


def _run_one(cfg: ExperimentConfig, slug: str, out_dir: str):
    spec = _scenario_spec(cfg, slug)
    limits = _control_limits(cfg)
    log, metrics = acc.run_scenario(
        spec, cfg.acc, horizon=cfg.integrator.horizon, dt=cfg.integrator.dt, limits=limits
    )
    scale = 1.0 / cfg.acc.weight
    write_trajectory_csv(log, os.path.join(out_dir, f"{slug}.csv"), input_scale=scale)
    write_metrics_json(metrics, os.path.join(out_dir, f"{slug}_metrics.json"))
    return log, metrics


def run_experiment(cfg: ExperimentConfig) -> int:
    """Run every configured scenario; returns the process exit code."""
    out_dir = cfg.output_dir
    os.makedirs(out_dir, exist_ok=True)
    logs = {}
    failed = False
    with concurrent.futures.ThreadPoolExecutor(max_workers=len(cfg.scenarios)) as pool:
        futures = {pool.submit(_run_one, cfg, slug, out_dir): slug for slug in cfg.scenarios}
        for future in concurrent.futures.as_completed(futures):
            slug = futures[future]
            label = acc.ScenarioKind.from_slug(slug).label
            try:
                log, metrics = future.result()
            except Exception as err:
                failed = True
                partial = getattr(err, "partial_log", None)
                metrics = {
                    "min_h": float(np.min(partial.cbf_values)) if partial is not None and len(partial) else None,
                    "max_speed_error": None,
                    "region_counts": {},
                    "u_min": None,
                    "u_max": None,
                    "runtime_s": None,
                    "error": f"{label}: {err}",
                }
                write_metrics_json(metrics, os.path.join(out_dir, f"{slug}_metrics.json"))
                print(f"[safestab] scenario {label} failed: {err}", file=sys.stderr)
                continue
            logs[label] = log
            print(f"[safestab] {label}: min_h={metrics['min_h']:.4f} "
                  f"max_speed_error={metrics['max_speed_error']:.4f} "
                  f"u_range=[{metrics['u_min']:.4f}, {metrics['u_max']:.4f}]")
    if cfg.plots and logs:
        ordered = {acc.ScenarioKind.from_slug(s).label: logs[acc.ScenarioKind.from_slug(s).label]
                   for s in cfg.scenarios if acc.ScenarioKind.from_slug(s).label in logs}
        render_plots(ordered, out_dir, desired_speed=cfg.acc.desired_speed,
                     input_scale=1.0 / cfg.acc.weight)
    return 2 if failed else 0


def _random_terms(rng) -> tuple:
    a, c = rng.uniform(-2.0, 2.0, size=2)
    b = rng.uniform(-2.0, 2.0, size=2)
    d = rng.uniform(-2.0, 2.0, size=2)
    zeta = float(np.sqrt(a * a + float(b @ b) ** 2))
    gamma = float(np.sqrt(c * c + float(d @ d) ** 2))
    return ClfTerms(a=a, b=b, zeta=zeta), CbfTerms(c=c, d=d, gamma=gamma)


def verify_against_oracle(samples: int = 10_000, seed: int = 0,
                          kappa: float = 0.2, rho: float = 0.1,
                          m_weight: float = 10.0):
    """Sweep both closed forms against the oracle; returns the two max deviations."""
    rng = np.random.default_rng(seed)
    zero = UncertaintyMargins(0.0, 0.0, np.zeros(3), np.zeros(3))
    worst_hard = 0.0
    worst_relaxed = 0.0
    incompatible = 0
    for _ in range(samples):
        ct, bt = _random_terms(rng)
        rhs_clf = -(ct.a + kappa * ct.zeta)
        rhs_cbf = rho * bt.gamma - bt.c
        try:
            dec = universal_formula(ct, bt, kappa, rho)
        except IncompatiblePoint:
            incompatible += 1
        else:
            sol = solve_min_norm(PointwiseQp(clf_row=(ct.b, rhs_clf), cbf_row=(bt.d, rhs_cbf)))
            worst_hard = max(worst_hard, float(np.linalg.norm(dec.u - sol.u)))
        rdec = relaxed_universal_formula(ct, bt, zero, kappa, rho, m_weight)
        rsol = solve_min_norm(PointwiseQp(clf_row=(ct.b, rhs_clf), cbf_row=(bt.d, rhs_cbf),
                                          slack_weight=1.0 / m_weight))
        worst_relaxed = max(worst_relaxed, float(np.linalg.norm(rdec.u - rsol.u)))
    return worst_hard, worst_relaxed, incompatible


def _cmd_run(args) -> int:
    cfg = _load_config(args)
    return run_experiment(cfg)


def _load_config(args) -> ExperimentConfig:
    cfg = parse_config(args.config) if args.config else default_config()
    from dataclasses import replace

    if args.out:
        cfg = replace(cfg, output_dir=args.out)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.scenario:
        cfg = replace(cfg, scenarios=tuple(args.scenario))
    return cfg


def _cmd_verify(args) -> int:
    start = time.perf_counter()
    hard, relaxed, incompatible = verify_against_oracle(samples=args.samples, seed=args.seed or 0)
    elapsed = time.perf_counter() - start
    print(f"universal formula vs oracle:  max |u - u*| = {hard:.3e}")
    print(f"relaxed formula vs oracle:    max |u - u*| = {relaxed:.3e}")
    print(f"instances: {args.samples}  incompatible: {incompatible}  elapsed: {elapsed:.2f}s")
    ok = hard <= 1e-8 and relaxed <= 1e-8
    print("verdict: PASS" if ok else "verdict: FAIL")
    return 0 if ok else 2


def _cmd_gp_fit(args) -> int:
    cfg = _load_config(args)
    os.makedirs(cfg.output_dir, exist_ok=True)
    params = cfg.acc
    plant = acc.build_true_plant(params, nominal_drag=cfg.mismatch)
    settings = cfg.gp_settings()
    if cfg.gp.dataset is not None:
        dataset = dataset_from_csv(cfg.gp.dataset, noise_std=cfg.gp.noise_std)
    else:
        dataset = acc.generate_training_data(
            plant, plant.nominal, settings.q, settings.seed, settings.noise_std
        )
    posterior = fit_posterior(dataset, settings.kernel_config())
    train_mean, _ = posterior.predict_batch(dataset.inputs[: min(200, dataset.q)])
    fit_err = float(np.max(np.abs(train_mean - dataset.targets[: train_mean.shape[0]])))
    center = np.array([(lo + hi) / 2 for lo, hi in acc.OPERATING_BOX])
    mean_c, std_c = posterior.predict(center)
    diagnostics = {
        "backend": active_backend(),
        "q": dataset.q,
        "noise_std": dataset.noise_std,
        "jitters": list(posterior.jitters),
        "log_marginal_likelihood": posterior.log_marginal_likelihood(dataset),
        "max_training_abs_error": fit_err,
        "center_mean": [float(v) for v in mean_c],
        "center_std": [float(v) for v in std_c],
    }
    path = os.path.join(cfg.output_dir, "gp_fit_diagnostics.json")
    write_metrics_json(diagnostics, path)
    for key, value in diagnostics.items():
        print(f"{key}: {value}")
    print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="safestab",
                                     description="Safe-stabilization benchmark runner")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML config file (omit for defaults)")
        p.add_argument("--out", help="output directory override")
        p.add_argument("--seed", type=int, help="top-level seed override")
        p.add_argument("--scenario", action="append",
                       help="scenario slug (repeatable): true_dynamics, "
                            "mismatched_dynamics, gp_learned")

    p_run = sub.add_parser("run", help="run the configured scenarios")
    common(p_run)
    p_run.set_defaults(func=_cmd_run)

    p_verify = sub.add_parser("verify", help="closed-form vs oracle sweep")
    p_verify.add_argument("--samples", type=int, default=10_000)
    p_verify.add_argument("--seed", type=int, default=0)
    p_verify.set_defaults(func=_cmd_verify)

    p_fit = sub.add_parser("gp-fit", help="fit the residual GP and print diagnostics")
    common(p_fit)
    p_fit.set_defaults(func=_cmd_gp_fit)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"[safestab] config error: {err}", file=sys.stderr)
        return 1
    except SimulationError as err:
        print(f"[safestab] scenario error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
