"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure or failed property, 2 configuration error.
The output directory from the config can be overridden with ``FRAUDCTL_OUTPUT_DIR``.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .checks import run_oracle_suite
from .config import ConfigFileError, RunConfig, load_config
from .harness import ComparisonReport, ConfigError, Replication, run_experiment, tune_lambda
from .policies.oracles import ProblemSizeError
from . import reporting as rp

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2
FP_CHECK_POLICIES = ("myopic", "prospective")

logger = logging.getLogger("fraudctl")


def _setup_logging(level: str):
    logging.basicConfig(level=getattr(logging, level.upper()), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s", force=True)


def _per_seed(report: ComparisonReport) -> dict:
    return {r.seed: r.reports for r in report.replications}


def write_comparison_outputs(report: ComparisonReport, out_dir: Path) -> list[Path]:
    """Period reports, comparison table, plot data, diagnostics and JSON summary."""
    plan = report.plan
    per_seed = _per_seed(report)
    comparisons = [c.as_row() for c in report.comparisons()]
    diagnostics = report.calibration_diagnostics()
    fp_order = {}
    if diagnostics:
        fp = {row["policy"]: row["mean_fp_loss"] for row in diagnostics}
        fp_order = {f"{p}_fp_below_naive": bool(fp[p] < fp["naive"])
                    for p in FP_CHECK_POLICIES if p in fp}
    summary = {
        "policies": {name: {attr: report.mean_total(name, attr)
                            for attr in ("profit", "fn_loss", "fp_loss", "mr_cost", "n_approve",
                                         "n_review", "n_reject", "chargeback_rate")}
                     for name in report.policy_names},
        "comparisons": comparisons,
        "fp_ordering": fp_order,
        "audit_violations": len(report.audit_violations()),
        "n_seeds": len(report.replications),
        "n_periods": plan.n_periods,
        "baseline": plan.baseline_name,
    }
    files = [
        rp.write_text(out_dir / rp.PERIOD_REPORT_FILE,
                      rp.csv_text(rp.PERIOD_HEADER, rp.period_rows(per_seed))),
        rp.write_text(out_dir / rp.COMPARISON_FILE, rp.csv_text(rp.COMPARISON_HEADER, comparisons)),
        rp.write_text(out_dir / rp.DECISION_COUNTS_FILE,
                      rp.csv_text(("policy", "period", "approve", "review", "reject"),
                                  rp.decision_count_rows(per_seed))),
        rp.write_text(out_dir / rp.LOSS_DELTAS_FILE,
                      rp.csv_text(("policy", "period", "fn_diff_pct", "fp_diff_pct", "mr_diff_pct"),
                                  rp.loss_delta_rows(per_seed, plan.baseline_name))),
        rp.write_text(out_dir / rp.SUMMARY_FILE, rp.json_text(summary)),
    ]
    if diagnostics:
        files.append(rp.write_text(out_dir / rp.DIAGNOSTICS_FILE,
                                   rp.csv_text(rp.diagnostics_header(diagnostics), diagnostics)))
        if not all(fp_order.values()):
            logger.warning("FP loss of %s is not below naive under this calibration; see %s",
                           ", ".join(p for p in FP_CHECK_POLICIES
                                     if not fp_order.get(f"{p}_fp_below_naive", True)),
                           out_dir / rp.DIAGNOSTICS_FILE)
            for row in diagnostics:
                logger.warning("diagnostics %s", row)
    return files


def cmd_simulate(cfg: RunConfig) -> int:
    out_dir = cfg.resolved_output_dir()
    plan = cfg.plan
    if cfg.transaction_log:
        from dataclasses import replace
        plan = replace(plan, keep_decisions=True)
    report = run_experiment(plan)
    files = write_comparison_outputs(report, out_dir)
    if cfg.transaction_log:
        entries = ((rep.seed, name, log) for rep in report.replications
                   for name in report.policy_names for log, _, _ in rep.decisions[name])
        files.append(rp.write_transaction_log(out_dir / rp.TRANSACTIONS_FILE, entries))
    rp.write_manifest(out_dir, "simulate", cfg.sha256, plan.seeds, __version__, files)
    for c in report.comparisons():
        print(f"{c.policy:12s} profit_diff={c.profit_diff:.2f} sign_test_p={c.sign_test_p:.3g} "
              f"review_ratio={c.review_ratio:.4f} fp_diff_pct={c.fp_diff_pct:.2f}")
    print(f"wrote {len(files)} files to {out_dir}")
    return EXIT_OK


def cmd_oracle_check(cfg: RunConfig) -> int:
    results = run_oracle_suite(cfg.plan.costs, cfg.oracle)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} properties passed")
    return EXIT_RUNTIME if failed else EXIT_OK


def cmd_tune_lambda(cfg: RunConfig) -> int:
    out_dir = cfg.resolved_output_dir() / "tuning"
    res = tune_lambda(cfg.plan)
    for lam, profit in zip(res.grid, res.mean_profit):
        print(f"lambda={lam!r} mean_heldout_profit={profit!r}")
    print(f"chosen lambda={res.chosen!r}")
    payload = {"chosen": res.chosen, "grid": res.grid, "mean_profit": res.mean_profit,
               "folds": res.folds, "seed": int(cfg.plan.seeds[0])}
    path = rp.write_text(out_dir / "lambda_tuning.json", rp.json_text(payload))
    rp.write_manifest(out_dir, "tune-lambda", cfg.sha256, cfg.plan.seeds[:1], __version__, [path])
    return EXIT_OK


def cmd_report(cfg: RunConfig) -> int:
    """Re-aggregate the transaction log of a previous ``simulate`` run."""
    out_dir = cfg.resolved_output_dir()
    log_path = out_dir / rp.TRANSACTIONS_FILE
    if not log_path.exists():
        print(f"error: no transaction log at {log_path}", file=sys.stderr)
        return EXIT_RUNTIME
    per_seed = rp.reports_from_log(log_path, cfg.plan.costs)
    known = [p.name for p in cfg.plan.policies]
    reps = [Replication(seed, {n: per_seed[seed][n] for n in known if n in per_seed[seed]}, [])
            for seed in sorted(per_seed)]
    logged = {n for r in reps for n in r.reports}
    if logged != set(known):
        print(f"error: log policies {sorted(logged)} do not match config {sorted(known)}",
              file=sys.stderr)
        return EXIT_RUNTIME
    report = ComparisonReport(cfg.plan, reps)
    target = out_dir / "reaggregated"
    files = write_comparison_outputs(report, target)
    rp.write_manifest(target, "report", cfg.sha256, [r.seed for r in reps], __version__, files)
    print(f"wrote {len(files)} files to {target}")
    return EXIT_OK


COMMANDS = {
    "simulate": (cmd_simulate, "run the policy comparison and write reports"),
    "oracle-check": (cmd_oracle_check, "check greedy and value-iteration properties"),
    "tune-lambda": (cmd_tune_lambda, "choose the future-profit weight by blocked K-fold"),
    "report": (cmd_report, "re-aggregate reports from an existing transaction log"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fraudctl", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"fraudctl {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", help="YAML run configuration")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        cfg = load_config(args.config)
    except ConfigFileError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    _setup_logging(cfg.log_level)
    handler = COMMANDS[args.command][0]
    try:
        return handler(cfg)
    except (ConfigError, ProblemSizeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - top-level guard maps to exit 1
        logger.debug("runtime failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
