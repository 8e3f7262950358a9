"""CLI for fitting, risk estimation, bound verification and experiments."""

import argparse
import csv
import json
import logging
import os
import sys
from typing import List, Optional

from src.bounds import check_all, render_table
from src.curvature import a_hat
from src.errors import AloError, DomainError, ExperimentFailed, InvalidSpec, MaxIterExceeded
from src.experiments import EXPERIMENT_IDS, ExperimentConfig, run_experiment
from src.gen import (
    GENERATED_KINDS,
    ModelSpec,
    generate,
    parse_covariance,
    parse_noise,
    read_dataset_csv,
    read_matrix_csv,
    sparse_coefficients,
    write_dataset_csv,
    write_matrix_csv,
)
from src.metrics import render_summary_table
from src.model import parse_loss, parse_penalty, parse_test_function
from src.risk import loo_estimate, risk_report
from src.solver import SolverConfig, fit, fit_leave_one_out

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NOT_CERTIFIED = 2
EXIT_FAILED = 3


def _load_problem(args):
    sigma = read_matrix_csv(args.sigma) if getattr(args, "sigma", None) else None
    dataset = read_dataset_csv(args.data, sigma=sigma)
    loss = parse_loss(args.loss)
    penalty = parse_penalty(args.penalty, dataset.n, dataset.p, sigma)
    cfg = SolverConfig(tol=args.tol, max_iter=args.max_iter)
    return dataset, loss, penalty, cfg


def _emit_json(payload: dict, path: Optional[str] = None):
    text = json.dumps(payload, indent=2)
    if path:
        with open(path, "w") as f:
            f.write(text + "\n")
        print(f"Results written to {path}")
    else:
        print(text)


def cmd_gen(args):
    """Generate a dataset CSV from a seeded model."""
    covariance = parse_covariance(args.covariance)
    k = args.k if args.k is not None else max(1, args.p // 10)
    amplitude = args.amplitude if args.amplitude is not None else 1.0 / max(1.0, k) ** 0.5
    spec = ModelSpec(
        kind=args.model,
        n=args.n,
        p=args.p,
        seed=args.seed,
        truth=sparse_coefficients(args.p, k, amplitude, args.seed),
        covariance=covariance,
        noise=parse_noise(args.noise),
        link=args.link,
    )
    dataset = generate(spec)
    if args.out:
        with open(args.out, "w", newline="") as f:
            write_dataset_csv(dataset, f)
    else:
        write_dataset_csv(dataset, sys.stdout)
    if args.sigma_out:
        with open(args.sigma_out, "w", newline="") as f:
            write_matrix_csv(dataset.sigma, f)
    return EXIT_OK


def cmd_fit(args):
    """Fit and print the certified solution as JSON."""
    dataset, loss, penalty, cfg = _load_problem(args)
    result = fit(dataset, loss, penalty, cfg)
    payload = result.to_dict()
    payload["loss"] = loss.label()
    payload["penalty"] = penalty.label()
    payload["seed"] = args.seed
    _emit_json(payload, args.out)
    return EXIT_OK


def cmd_risk(args):
    """ALO, mean-field and (optionally) exact LOO estimates plus per-observation weights."""
    dataset, loss, penalty, cfg = _load_problem(args)
    g = parse_test_function(args.g)
    result = fit(dataset, loss, penalty, cfg)
    a = a_hat(dataset, penalty, result)
    loo = None
    if args.with_loo:
        loo, _ = loo_estimate(dataset, loss, penalty, cfg, g, warm=result)
    report = risk_report(dataset, loss, result, a, g, sigma=dataset.sigma, loo=loo)
    payload = report.to_dict()
    payload["loss"] = loss.label()
    payload["penalty"] = penalty.label()
    payload["fit"] = result.to_dict()

    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "report.json"), "w") as f:
            json.dump(payload, f, indent=2)
            f.write("\n")
        with open(os.path.join(args.out, "weights.csv"), "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["i", "W_i", "leverage", "denominator"])
            for i, (w, lev, den) in enumerate(zip(report.weights_alo, report.leverages, report.denominators)):
                writer.writerow([i, format(w, ".17g"), format(lev, ".17g"), format(den, ".17g")])
        print(f"Risk report written to {args.out}")
    else:
        print(json.dumps(payload, indent=2))
    return EXIT_OK


def cmd_verify(args):
    """Evaluate the deterministic bounds on one fit; exit 3 on any violation."""
    dataset, loss, penalty, cfg = _load_problem(args)
    result = fit(dataset, loss, penalty, cfg)
    a = a_hat(dataset, penalty, result)
    loo_fits = {}
    if args.with_loo:
        loo_fits = {i: fit_leave_one_out(dataset, loss, penalty, i, result, cfg) for i in range(dataset.n)}
    checks = check_all(dataset, loss, penalty, result, a, loo_fits)
    print(render_table(checks))
    return EXIT_OK if all(c.ok for c in checks) else EXIT_FAILED


def cmd_experiment(args):
    """Run one of E1-E5 and print the per-n medians."""
    overrides = dict(
        n_grid=tuple(args.n) if args.n else None,
        replicates=args.replicates,
        seed=args.seed,
        aspect=args.aspect,
        output_dir=args.out,
    )
    if args.config:
        config = ExperimentConfig.from_json(args.config, experiment_id=args.id, **overrides)
    elif args.id:
        config = ExperimentConfig.defaults(args.id, **overrides)
    else:
        raise InvalidSpec("experiment needs --id or --config")
    summary = run_experiment(config)
    per_n = {int(n): m for n, m in summary["per_n"].items()}
    metrics = sorted({k for m in per_n.values() for k in m})
    print(render_summary_table(per_n, metrics))
    print(f"Experiment {config.experiment_id} complete. Results in {config.output_dir}")
    return EXIT_OK


def _add_problem_flags(parser):
    parser.add_argument("--data", required=True, help="Dataset CSV (x_1..x_p, y)")
    parser.add_argument("--loss", default="square", help="square | huber[:m] | logistic")
    parser.add_argument("--penalty", required=True, help="ridge:nu | enet:lambda,nu | group:size,lambda,nu")
    parser.add_argument("--tol", type=float, default=1e-9, help="KKT residual target")
    parser.add_argument("--max-iter", type=int, default=100_000, help="Iteration budget")
    parser.add_argument("--seed", type=int, default=None, help="Recorded with the output")
    parser.add_argument("--sigma", default=None, help="Population covariance CSV")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Approximate leave-one-out risk estimation for regularized M-estimators")
    parser.add_argument("--log-level", default=os.environ.get("ALOCV_LOG_LEVEL", "WARNING"),
                        help="DEBUG | INFO | WARNING | ERROR")
    subparsers = parser.add_subparsers(dest="command", required=True)

    # gen
    gen_parser = subparsers.add_parser("gen", help="Generate a dataset CSV")
    gen_parser.add_argument("--model", choices=GENERATED_KINDS, default="linear")
    gen_parser.add_argument("--n", type=int, required=True, help="Number of observations")
    gen_parser.add_argument("--p", type=int, required=True, help="Number of features")
    gen_parser.add_argument("--seed", type=int, required=True, help="Random seed")
    gen_parser.add_argument("--covariance", default="identity", help="identity | ar1:rho")
    gen_parser.add_argument("--noise", default="gaussian:1", help="gaussian[:scale] | student_t[:df] | cauchy[:scale]")
    gen_parser.add_argument("--link", choices=["logistic", "probit"], default="logistic")
    gen_parser.add_argument("--k", type=int, default=None, help="Non-zero coefficients (default p/10)")
    gen_parser.add_argument("--amplitude", type=float, default=None, help="Coefficient magnitude (default 1/sqrt(k))")
    gen_parser.add_argument("--out", default=None, help="Output CSV (default stdout)")
    gen_parser.add_argument("--sigma-out", default=None, help="Write the population covariance CSV here")
    gen_parser.set_defaults(func=cmd_gen)

    # fit
    fit_parser = subparsers.add_parser("fit", help="Fit and print the solution as JSON")
    _add_problem_flags(fit_parser)
    fit_parser.add_argument("--out", default=None, help="Output JSON (default stdout)")
    fit_parser.set_defaults(func=cmd_fit)

    # risk
    risk_parser = subparsers.add_parser("risk", help="ALO / LOO / mean-field risk report")
    _add_problem_flags(risk_parser)
    risk_parser.add_argument("--g", default="sq", help="sq | abs | dev | mis[:t]")
    risk_parser.add_argument("--with-loo", action="store_true", help="Also run the n leave-one-out refits")
    risk_parser.add_argument("--out", default=None, help="Output directory for report.json and weights.csv")
    risk_parser.set_defaults(func=cmd_risk)

    # verify
    verify_parser = subparsers.add_parser("verify", help="Check the deterministic bounds on one fit")
    _add_problem_flags(verify_parser)
    verify_parser.add_argument("--with-loo", action="store_true", help="Include the leave-one-out proximity bound")
    verify_parser.set_defaults(func=cmd_verify)

    # experiment
    exp_parser = subparsers.add_parser("experiment", help="Run an experiment")
    exp_parser.add_argument("--id", choices=EXPERIMENT_IDS, default=None)
    exp_parser.add_argument("--config", default=None, help="JSON config file")
    exp_parser.add_argument("--n", type=int, nargs="+", default=None, help="Grid of sample sizes")
    exp_parser.add_argument("--replicates", type=int, default=None)
    exp_parser.add_argument("--seed", type=int, default=None, help="Master seed")
    exp_parser.add_argument("--aspect", type=float, default=None, help="p/n")
    exp_parser.add_argument("--out", default=None, help="Output directory")
    exp_parser.set_defaults(func=cmd_experiment)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main CLI entry point; returns the process exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except MaxIterExceeded as exc:
        payload = exc.result.to_dict() if exc.result is not None else {"certified": False}
        print(json.dumps(payload, indent=2))
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOT_CERTIFIED
    except ExperimentFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED
    except (InvalidSpec, DomainError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except AloError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
