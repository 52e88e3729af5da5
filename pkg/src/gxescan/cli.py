"""Command-line interface: simulate, fit, evaluate, stability, compare.

Configuration precedence is flags > config file (flat key=value lines
mirroring the flag names) > defaults.  All outputs are CSV or plain text;
no subcommand mutates its inputs, and identical configs produce
byte-identical outputs.  Exit codes: 0 success, 2 configuration error,
1 runtime error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import baselines, evaluate, robust, sim
from .data import IngestionError, load_csv, sort_and_weight, write_csv, write_truth_csv

log = logging.getLogger("gxescan")


def _parse_corr(text: str):
    if text == "independent":
        return "independent", 0.0
    kind, _, rho = text.partition(":")
    if kind in ("ar", "band") and rho:
        return kind, float(rho)
    raise argparse.ArgumentTypeError(
        f"correlation must be 'independent', 'ar:RHO' or 'band:RHO', got {text!r}")


def _parse_error(text: str):
    if text == "normal":
        return "normal", 0.0
    parts = text.split(":")
    if len(parts) == 3 and parts[0] == "mix" and parts[1] in ("cauchy", "t3"):
        return parts[1], float(parts[2])
    raise argparse.ArgumentTypeError(
        f"error must be 'normal' or 'mix:{{cauchy,t3}}:PI', got {text!r}")


def _scenario_from_args(args) -> sim.ScenarioConfig:
    try:
        corr, rho = _parse_corr(args.corr)
        err, pi = _parse_error(args.error)
        return sim.ScenarioConfig(n=args.n, p=args.p, q=args.q, correlation=corr,
                                  rho=rho, error=err, contamination=pi,
                                  target_censoring=args.censoring, seed=args.seed)
    except (ValueError, argparse.ArgumentTypeError) as exc:
        raise ConfigError(str(exc)) from exc


def _load_dataset(path):
    y, delta, X, Z = load_csv(path)
    return sort_and_weight(y, delta, X, Z)


def _add_scenario_flags(p, require_p=True):
    p.add_argument("--n", type=int, default=300, help="sample count")
    p.add_argument("--p", type=int, required=require_p, help="gene count")
    p.add_argument("--q", type=int, default=3, help="environmental covariate count")
    p.add_argument("--corr", default="independent",
                   help="independent | ar:RHO | band:RHO")
    p.add_argument("--error", default="normal",
                   help="normal | mix:cauchy:PI | mix:t3:PI")
    p.add_argument("--censoring", type=float, default=0.25,
                   help="target censoring fraction")
    p.add_argument("--seed", type=int, default=0)


def _add_common_flags(p):
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                   help="parallelism budget (1 = serial reference run)")
    p.add_argument("--verbose", action="store_true")
    p.add_argument("--config", default=None,
                   help="flat key=value file; flags override its values")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gxescan",
        description="Robust identification of gene-environment interactions "
                    "for censored survival outcomes")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="write a dataset CSV and truth sidecar")
    _add_scenario_flags(p_sim)
    _add_common_flags(p_sim)
    p_sim.add_argument("--out", required=True, help="dataset CSV path")
    p_sim.add_argument("--truth-out", default=None,
                       help="truth sidecar path (default: OUT with .truth.csv)")

    p_fit = sub.add_parser("fit", help="fit a solution surface on a dataset CSV")
    p_fit.add_argument("--input", required=True, help="dataset CSV")
    p_fit.add_argument("--out", required=True, help="surface CSV path")
    p_fit.add_argument("--method", default="robust",
                       choices=["robust", "unrobust", "quantile"])
    p_fit.add_argument("--n-lambda", type=int, default=50)
    p_fit.add_argument("--n-theta", type=int, default=10)
    p_fit.add_argument("--tau", type=float, default=0.5,
                       help="quantile level for the quantile method")
    _add_common_flags(p_fit)

    p_eval = sub.add_parser("evaluate",
                            help="run a replicate experiment and report AUCs")
    _add_scenario_flags(p_eval)
    p_eval.add_argument("--methods", default="robust,unrobust,stute,quantile")
    p_eval.add_argument("--replicates", type=int, default=100)
    p_eval.add_argument("--n-lambda", type=int, default=50)
    p_eval.add_argument("--n-theta", type=int, default=10)
    p_eval.add_argument("--tau", type=float, default=0.5)
    p_eval.add_argument("--out", required=True, help="report CSV path")
    p_eval.add_argument("--table-out", default=None,
                        help="plain-text table path (default: OUT with .txt)")
    p_eval.add_argument("--roc-out", default=None,
                        help="write ROC points CSV for replicate 0")
    _add_common_flags(p_eval)

    p_stab = sub.add_parser("stability",
                            help="leave-one-out selection frequencies")
    p_stab.add_argument("--input", required=True, help="dataset CSV")
    p_stab.add_argument("--k", type=int, required=True,
                        help="number of interactions to select")
    p_stab.add_argument("--method", default="robust",
                        choices=list(evaluate.METHODS))
    p_stab.add_argument("--n-lambda", type=int, default=50)
    p_stab.add_argument("--n-theta", type=int, default=10)
    p_stab.add_argument("--tau", type=float, default=0.5)
    p_stab.add_argument("--out", required=True, help="frequency CSV path")
    _add_common_flags(p_stab)

    p_cmp = sub.add_parser("compare",
                           help="overlap table of per-method selections")
    p_cmp.add_argument("--input", required=True, help="dataset CSV")
    p_cmp.add_argument("--k", type=int, required=True)
    p_cmp.add_argument("--methods", default="robust,unrobust,stute,quantile")
    p_cmp.add_argument("--n-lambda", type=int, default=50)
    p_cmp.add_argument("--n-theta", type=int, default=10)
    p_cmp.add_argument("--tau", type=float, default=0.5)
    p_cmp.add_argument("--out", required=True, help="overlap CSV path")
    p_cmp.add_argument("--table-out", default=None,
                       help="plain-text table path (default: OUT with .txt)")
    _add_common_flags(p_cmp)
    return parser


def _apply_config_file(parser, argv):
    """Two-pass parse: config file values become defaults, flags win."""
    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--config", default=None)
    known, _ = probe.parse_known_args(argv[1:])
    if known.config is None:
        return argv
    values = {}
    try:
        with open(known.config, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    parser.error(f"{known.config}:{lineno}: expected key=value")
                key, _, val = line.partition("=")
                values[key.strip()] = val.strip()
    except OSError as exc:
        parser.error(f"cannot read config file: {exc}")
    extra = []
    for key, val in values.items():
        flag = "--" + key.replace("_", "-")
        extra.extend([flag, val])
    # config-derived flags go first so explicit flags override them
    return [argv[0], argv[1], *extra, *argv[2:]]


def cmd_simulate(args) -> int:
    scenario = _scenario_from_args(args)
    ds, truth = sim.gen_dataset(scenario)
    write_csv(ds, args.out)
    truth_out = args.truth_out or _with_suffix(args.out, ".truth.csv")
    write_truth_csv(truth, truth_out)
    print(f"wrote {args.out} ({ds.n} rows, q={ds.q}, p={ds.p}) and {truth_out}")
    return 0


def _with_suffix(path, suffix):
    base = path[:-4] if path.endswith(".csv") else path
    return base + suffix


def cmd_fit(args) -> int:
    ds = _load_dataset(args.input)
    if args.method == "robust":
        grid = robust.grid_from_data(ds, n_lambda=args.n_lambda, n_theta=args.n_theta)
        surface = robust.fit_surface(ds, grid, threads=args.threads)
    elif args.method == "unrobust":
        surface = baselines.fit_unrobust_surface(ds, n_lambda=args.n_lambda,
                                                 threads=args.threads)
    else:
        surface = baselines.fit_quantile_surface(ds, tau=args.tau,
                                                 n_lambda=args.n_lambda,
                                                 threads=args.threads)
    surface.to_csv(args.out)
    _write_grid_sidecar(surface.grid, _with_suffix(args.out, ".grid.csv"))
    n_fits = surface.converged.size
    n_conv = int(surface.converged.sum())
    if n_conv < n_fits:
        print(f"{n_fits - n_conv} of {n_fits} fits not converged", file=sys.stderr)
    print(f"wrote {args.out} ({surface.n_genes} genes, "
          f"{surface.grid.n_lambda}x{surface.grid.n_theta} grid)")
    return 0


def _write_grid_sidecar(grid, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("axis,theta_idx,index,value\n")
        for t in range(grid.n_theta):
            for i, v in enumerate(grid.lambdas_for(t)):
                fh.write(f"lambda,{t},{i},{v:.17g}\n")
        for i, v in enumerate(grid.thetas):
            fh.write(f"theta,,{i},{v:.17g}\n")


def cmd_evaluate(args) -> int:
    scenario = _scenario_from_args(args)
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    for m in methods:
        if m not in evaluate.METHODS:
            raise ConfigError(f"unknown method {m!r}")
    report = evaluate.run_experiment(scenario, methods,
                                     replicates=args.replicates,
                                     n_lambda=args.n_lambda, n_theta=args.n_theta,
                                     tau=args.tau, threads=args.threads,
                                     collect_per_theta=args.verbose)
    report.to_csv(args.out)
    table_out = args.table_out or _with_suffix(args.out, ".txt")
    with open(table_out, "w", encoding="utf-8") as fh:
        fh.write(report.to_text())
    if report.failures:
        print(f"{report.failures} replicates failed and were excluded",
              file=sys.stderr)
    if args.verbose and "robust" in report.per_theta_auc:
        for r, slice_aucs in enumerate(report.per_theta_auc["robust"]):
            print(f"replicate {r} per-theta AUC: "
                  + " ".join(f"{a:.4f}" for a in slice_aucs))
    if args.roc_out:
        ds, truth = sim.gen_dataset(scenario, replicate=0)
        _write_roc(ds, truth, methods[0], args, args.roc_out)
    print(report.to_text(), end="")
    return 0


def _write_roc(ds, truth, method, args, path):
    if method == "robust":
        grid = robust.grid_from_data(ds, n_lambda=args.n_lambda,
                                     n_theta=args.n_theta)
        surface = robust.fit_surface(ds, grid, threads=args.threads)
        best, best_auc = None, -1.0
        for t in range(grid.n_theta):
            pts, a = evaluate.roc_auc(
                evaluate.rank_interactions(surface, theta_idx=t), truth)
            if a > best_auc:
                best, best_auc = pts, a
        pts = best
    elif method == "unrobust":
        surface = baselines.fit_unrobust_surface(ds, n_lambda=args.n_lambda,
                                                 threads=args.threads)
        pts, _ = evaluate.roc_auc(evaluate.rank_interactions(surface), truth)
    elif method == "quantile":
        surface = baselines.fit_quantile_surface(ds, tau=args.tau,
                                                 n_lambda=args.n_lambda,
                                                 threads=args.threads)
        pts, _ = evaluate.roc_auc(evaluate.rank_interactions(surface), truth)
    else:
        fits = baselines.fit_stute(ds, threads=args.threads)
        pts, _ = evaluate.roc_auc(evaluate.rank_interactions(fits), truth)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("fpr,tpr\n")
        for fpr, tpr in pts:
            fh.write(f"{fpr:.17g},{tpr:.17g}\n")


def cmd_stability(args) -> int:
    ds = _load_dataset(args.input)
    freqs = evaluate.stability_loo(ds, args.k, args.method, tau=args.tau,
                                   n_lambda=args.n_lambda, n_theta=args.n_theta,
                                   threads=args.threads)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("gene,env,frequency\n")
        for (gene, env), f in sorted(freqs.items()):
            fh.write(f"{gene},{env},{f:.17g}\n")
    print(f"wrote {args.out} ({len(freqs)} interactions)")
    return 0


def cmd_compare(args) -> int:
    ds = _load_dataset(args.input)
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    selections = {}
    for m in methods:
        if m not in evaluate.METHODS:
            raise ConfigError(f"unknown method {m!r}")
        selections[m] = evaluate.select_top_k(ds, args.k, m, tau=args.tau,
                                              n_lambda=args.n_lambda,
                                              n_theta=args.n_theta,
                                              threads=args.threads)
    table = evaluate.overlap_table(selections)
    table.to_csv(args.out)
    table_out = args.table_out or _with_suffix(args.out, ".txt")
    with open(table_out, "w", encoding="utf-8") as fh:
        fh.write(table.to_text())
    print(table.to_text(), end="")
    return 0


class ConfigError(ValueError):
    pass


_COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "evaluate": cmd_evaluate,
    "stability": cmd_stability,
    "compare": cmd_compare,
}


def main(argv=None) -> int:
    argv = list(sys.argv if argv is None else ["gxescan", *argv])
    parser = build_parser()
    if len(argv) < 2:
        parser.print_usage(sys.stderr)
        return 2
    argv = _apply_config_file(parser, argv)
    try:
        args = parser.parse_args(argv[1:])
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, sim.GenerationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (IngestionError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - top-level CLI guard
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
