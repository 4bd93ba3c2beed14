"""Command-line entry point.

Subcommands: scan, simulate, calibrate, summary, plot.  Exit codes: 0 on
success, 2 for configuration errors, 3 for ingestion errors, 4 for numerical
failures.
"""

import argparse
import os
import sys

from .exceptions import ConfigError, IngestError, NumericalError

EXIT_CONFIG = 2
EXIT_INGEST = 3
EXIT_NUMERIC = 4


def _add_common(parser):
    parser.add_argument("--config", help="config file path")
    parser.add_argument("--threads", type=int, help="worker process budget")
    parser.add_argument("--seed", type=int, help="master seed override")
    parser.add_argument("--out", help="output directory")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="rvkat",
        description="Gene-level rare-variant association tests with "
        "annotation/omics kernels",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_scan = sub.add_parser("scan", help="run the per-gene x per-trait scan")
    _add_common(p_scan)

    p_sim = sub.add_parser("simulate", help="write a synthetic cohort")
    _add_common(p_sim)

    p_cal = sub.add_parser("calibrate", help="type-I error / power study")
    _add_common(p_cal)
    p_cal.add_argument(
        "--methods",
        default="skat,skat-o",
        help="comma-separated method specs (default: skat,skat-o)",
    )
    p_cal.add_argument("--replicates", type=int, default=1000)
    p_cal.add_argument("--alpha", type=float, default=0.05)
    p_cal.add_argument(
        "--power",
        action="store_true",
        help="run a power study (scenario must have causal effects)",
    )

    p_sum = sub.add_parser("summary", help="min-p summary or cohort summary")
    _add_common(p_sum)
    p_sum.add_argument("--results", help="results.tsv from a scan")
    p_sum.add_argument("--genotypes", help="genotype file (cohort summary)")
    p_sum.add_argument("--variants", help="variant sidecar (cohort summary)")
    p_sum.add_argument("--phenotypes", help="phenotype file (cohort summary)")

    p_plot = sub.add_parser("plot", help="comparison scatter as SVG")
    _add_common(p_plot)
    p_plot.add_argument("--results", required=True)
    p_plot.add_argument("--x", help="method on the x axis")
    p_plot.add_argument("--y", help="method on the y axis")
    p_plot.add_argument("--trait-x", help="trait on the x axis")
    p_plot.add_argument("--trait-y", help="trait on the y axis")
    p_plot.add_argument("--method", help="method for trait-vs-trait plots")
    p_plot.add_argument("--name", default="compare.svg", help="output file name")
    return parser


def _require_config(args):
    if not args.config:
        raise ConfigError("this command needs --config PATH")
    return args.config


def _cmd_scan(args):
    from .config import RunConfig
    from .runner import run_scan

    config = RunConfig.from_file(_require_config(args))
    if args.threads:
        config.threads = args.threads
    if args.seed is not None:
        config.seed = args.seed
    if args.out:
        config.out = args.out
    run_scan(config, log=lambda msg: print(msg, file=sys.stderr))
    return 0


def _cmd_simulate(args):
    from .config import scenario_from_file
    from .simulate import simulate_cohort, write_cohort

    scenario = scenario_from_file(_require_config(args))
    if args.seed is not None:
        import dataclasses

        scenario = dataclasses.replace(scenario, seed=args.seed)
    outdir = args.out or "."
    cohort = simulate_cohort(scenario)
    paths = write_cohort(cohort, outdir)
    for key, path in paths.items():
        print(f"{key}\t{path}", file=sys.stderr)
    return 0


def _cmd_calibrate(args):
    from .config import scenario_from_file
    from .methods import parse_method
    from .simulate import run_calibration, run_power, write_rejection_report

    scenario = scenario_from_file(_require_config(args))
    if args.seed is not None:
        import dataclasses

        scenario = dataclasses.replace(scenario, seed=args.seed)
    specs = [parse_method(tok.strip()) for tok in args.methods.split(",") if tok.strip()]
    if not specs:
        raise ConfigError("no methods selected")
    runner = run_power if args.power else run_calibration
    reports, _ = runner(
        scenario,
        specs,
        args.replicates,
        alpha=args.alpha,
        threads=args.threads or 1,
    )
    outdir = args.out or "."
    os.makedirs(outdir, exist_ok=True)
    name = "power.tsv" if args.power else "calibration.tsv"
    path = os.path.join(outdir, name)
    write_rejection_report(reports, path)
    for r in reports:
        lo, hi = r.confidence_interval()
        print(
            f"{r.method}: rate={r.rate:.4f} [{lo:.4f}, {hi:.4f}]"
            f" ({r.rejections}/{r.replicates})",
            file=sys.stderr,
        )
    print(path, file=sys.stderr)
    return 0


def _cmd_summary(args):
    from . import cohort as cio
    from .runner import (
        cohort_summary,
        read_results_tsv,
        summarize_minp,
        write_cohort_summary_tsv,
        write_summary_tsv,
    )

    outdir = args.out or "."
    os.makedirs(outdir, exist_ok=True)
    if args.results:
        rows = summarize_minp(read_results_tsv(args.results))
        path = os.path.join(outdir, "summary.tsv")
        write_summary_tsv(rows, path)
        print(path, file=sys.stderr)
        return 0
    if args.genotypes and args.phenotypes:
        g = cio.load_genotypes(
            args.genotypes, fmt="dense-tsv", variants_path=args.variants
        )
        p = cio.load_phenotypes(args.phenotypes)
        rows = cohort_summary(p, g)
        path = os.path.join(outdir, "cohort_summary.tsv")
        write_cohort_summary_tsv(rows, path)
        print(path, file=sys.stderr)
        return 0
    raise ConfigError("summary needs --results or --genotypes/--phenotypes")


def _cmd_plot(args):
    from .plots import emit_compare_plot
    from .runner import read_results_tsv

    results = read_results_tsv(args.results)
    outdir = args.out or "."
    os.makedirs(outdir, exist_ok=True)
    path = os.path.join(outdir, args.name)
    panels, omitted = emit_compare_plot(
        results,
        path,
        method_x=args.x,
        method_y=args.y,
        trait_x=args.trait_x,
        trait_y=args.trait_y,
        method=args.method,
    )
    print(f"{path} ({panels} panel(s), {omitted} omitted)", file=sys.stderr)
    return 0


COMMANDS = {
    "scan": _cmd_scan,
    "simulate": _cmd_simulate,
    "calibrate": _cmd_calibrate,
    "summary": _cmd_summary,
    "plot": _cmd_plot,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IngestError as exc:
        print(f"ingestion error: {exc}", file=sys.stderr)
        return EXIT_INGEST
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
