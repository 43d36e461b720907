import argparse
import json
import logging
import os
import sys
from dataclasses import replace

from dotenv import load_dotenv

from bounds import BoundInputs, compute_theory_bounds
from conformance import run_checks
from errors import ConfigError, ToolkitError
from experiment import load_experiment_config, prepare_scenarios, run_experiment, summarize
from report_store import ABSENT, ResultStore, load_report, write_report, write_summary_csv
from solvers import rspg_batch_size, rspgf_batch_size, rspgf_smoothing_mu

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


class UsageError(Exception):
    pass


class ArgumentParser(argparse.ArgumentParser):
    """Raises on bad arguments instead of exiting, so cli_main owns exit codes."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _common_flags(parser):
    parser.add_argument("--seed", type=int, default=None, help="Master seed (overrides the config file)")
    parser.add_argument("--threads", type=int, default=None, help="Worker threads (default SCO_THREADS or 1)")
    parser.add_argument("--out", type=str, default=None, help="Output directory")
    parser.add_argument("--format", choices=("csv", "json"), default=None, help="Restrict output to one format")
    parser.add_argument("--verbose", action="store_true", help="Debug logging")


def build_parser():
    parser = ArgumentParser(prog="sco-bench", description="Stochastic composite optimization benchmarks")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=ArgumentParser)

    run = sub.add_parser("run", help="Run an experiment grid and write report files")
    run.add_argument("--config", required=True, help="Experiment manifest (INI)")
    run.add_argument("--db", default=None, help="SQLAlchemy URL for the results store (default SCO_DATABASE_URL)")
    run.add_argument("--timings", action="store_true", help="Record wall time per replication")
    _common_flags(run)

    summ = sub.add_parser("summarize", help="Print mean/variance tables of a report")
    summ.add_argument("report", help="report.json or report.csv")
    summ.add_argument("--metric", default="mapping_norm_sq",
                      choices=("mapping_norm_sq", "objective", "zero_ratio"))
    _common_flags(summ)

    verify = sub.add_parser("verify", help="Run the conformance checks")
    _common_flags(verify)

    bounds = sub.add_parser("bounds", help="Print theoretical bounds for a config")
    bounds.add_argument("--config", required=True, help="Experiment manifest (INI)")
    _common_flags(bounds)
    return parser


def _threads(args):
    if args.threads is not None:
        return args.threads
    return int(os.getenv("SCO_THREADS", "1"))


def _load_config(args):
    config = load_experiment_config(args.config)
    if args.seed is not None:
        config = replace(config, master_seed=args.seed)
    if args.out is not None:
        config = replace(config, output_dir=args.out)
    if args.format is not None:
        config = replace(config, formats=(args.format,))
    if getattr(args, "timings", False):
        config = replace(config, record_timings=True)
    return config


def cmd_run(args):
    config = _load_config(args)
    report = run_experiment(config, threads=_threads(args))
    write_report(report, config.output_dir, config.formats)
    db_url = args.db or os.getenv("SCO_DATABASE_URL")
    if db_url:
        store = ResultStore(db_url)
        store.ensure_schema()
        store.save_report(report, run_label=f"seed-{config.master_seed}")
    return EXIT_OK


def _format_value(value):
    if value is None:
        return ABSENT
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def cmd_summarize(args):
    report = load_report(args.report)
    table = summarize(report, metric=args.metric)
    if args.format == "json":
        print(json.dumps(table, indent=2))
    else:
        header = list(table[0].keys())
        print("\t".join(header))
        for row in table:
            print("\t".join(_format_value(row.get(name)) for name in header))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        write_summary_csv(table, os.path.join(args.out, f"summary_{args.metric}.csv"))
    return EXIT_OK


def cmd_verify(args):
    results = run_checks(seed=args.seed or 0)
    for result in results:
        print(f"{'PASS' if result.passed else 'FAIL'}  {result.name}: {result.detail}")
    failed = [r for r in results if not r.passed]
    if failed:
        logger.error(f"{len(failed)} of {len(results)} checks failed")
        return EXIT_RUNTIME
    return EXIT_OK


def bounds_table(config):
    """Per scenario and budget: m, N, mu and every bound from the pilot constants."""
    out = []
    for context in prepare_scenarios(config):
        problem, params = context.problem, context.params
        alpha = context.geometry.modulus_alpha
        d_psi = problem.d_psi() or params.d_tilde
        v_bar = problem.v_bar(context.geometry)
        for budget in config.budgets:
            m = rspg_batch_size(budget, params.sigma, params.lipschitz, params.d_tilde)
            mu = rspgf_smoothing_mu(params.d_tilde, problem.dim, budget, convex=False, alpha=alpha)
            # Constant stepsize alpha/(2L) is both nondecreasing and nonincreasing
            stepsizes = (alpha / (2 * params.lipschitz),) * (budget // m)
            bounds = compute_theory_bounds(BoundInputs(
                lipschitz=params.lipschitz,
                alpha=alpha,
                sigma=params.sigma,
                d_psi=d_psi,
                d_tilde=params.d_tilde,
                total_budget=budget,
                iterations=budget // m,
                batch_size=m,
                stepsizes=stepsizes,
                v_star_x1=problem.v_star_x1(context.geometry),
                v_bar=v_bar,
                dim=problem.dim,
                gradient_bound=params.gradient_bound,
                mu=mu,
            ))
            record = {
                "scenario": context.scenario.name,
                "NS": budget,
                "m": m,
                "N": budget // m,
                "m_zeroth": rspgf_batch_size(budget, problem.dim, params.gradient_bound, params.sigma,
                                             params.lipschitz, params.d_tilde),
                "mu": mu,
            }
            record.update(bounds.as_dict())
            out.append(record)
    return out


def cmd_bounds(args):
    table = bounds_table(_load_config(args))
    if args.format == "json":
        print(json.dumps(table, indent=2))
        return EXIT_OK
    for record in table:
        print(f"[{record['scenario']} NS={record['NS']}]")
        for key, value in record.items():
            if key not in ("scenario", "NS"):
                print(f"  {key} = {_format_value(value)}")
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "summarize": cmd_summarize,
    "verify": cmd_verify,
    "bounds": cmd_bounds,
}


def cli_main(argv=None):
    load_dotenv()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG

    level = logging.DEBUG if args.verbose else getattr(logging, os.getenv("SCO_LOG_LEVEL", "INFO").upper(),
                                                       logging.INFO)
    logging.basicConfig(level=level, format='%(asctime)s - %(levelname)s - %(message)s')
    logging.getLogger().setLevel(level)

    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    except (ToolkitError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        return EXIT_RUNTIME
    except Exception as e:
        logger.error(f"An error occurred: {e}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(cli_main())
