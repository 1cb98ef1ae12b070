"""Command-line entry point: ``run``, ``gen-data`` and ``inspect``."""

import argparse
import logging
import sys

from .data import SYNTHETIC_KINDS, generate_synthetic, save_dataset
from .errors import InvalidConfigError, NoisyKDError
from .runner import GRID_KEYS, KEY_HELP, emit_report, failed_cells, format_table, load_grid, load_report, run_grid

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL, EXIT_FATAL = 0, 1, 2, 3


def _build_parser():
    parser = argparse.ArgumentParser(prog="noisykd", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser(
        "run", help="run a method x noise-rate x seed grid",
        description="Run an experiment grid. Config file: a [grid] section of key = value lines; "
                    "list values are comma-separated. Every key can be overridden by its flag.",
    )
    run.add_argument("--config", help="grid config file")
    run.add_argument("--jobs", type=int, default=1, help="cells to run in parallel")
    run.add_argument("--out", default="results", help="output directory")
    run.add_argument("--no-figures", action="store_true", help="skip PNG figures")
    keys = run.add_argument_group("grid keys")
    for name, f in GRID_KEYS.items():
        default = f.default
        if isinstance(default, tuple):
            default = ",".join(str(v) for v in default)
        keys.add_argument(f"--{name.replace('_', '-')}", dest=name, default=None, metavar="V",
                          help=f"{KEY_HELP[name]} (default: {default!r})")

    gen = sub.add_parser("gen-data", help="write a synthetic dataset as CSV or JSONL")
    gen.add_argument("--kind", choices=SYNTHETIC_KINDS, default="blobs")
    gen.add_argument("--n", type=int, default=1000)
    gen.add_argument("--d", type=int, default=2)
    gen.add_argument("--classes", type=int, default=2)
    gen.add_argument("--separation", type=float, default=3.0)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--format", choices=("csv", "jsonl"), default=None,
                     help="defaults from the file extension")
    gen.add_argument("--out", required=True)

    ins = sub.add_parser("inspect", help="summarize a report.json")
    ins.add_argument("--result", required=True)
    return parser


def _cmd_run(args):
    overrides = {name: getattr(args, name) for name in GRID_KEYS}
    grid = load_grid(args.config, overrides)
    if args.jobs < 1:
        raise InvalidConfigError("--jobs must be >= 1")
    report = run_grid(grid, jobs=args.jobs)
    emit_report(report, args.out, figures=not args.no_figures)
    print(format_table(report))
    failed = failed_cells(report)
    if failed:
        for c in failed:
            print(f"FAILED {c['cell_id']}: {c['error']}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def _cmd_gen(args):
    ds = generate_synthetic(args.kind, args.n, args.d, args.classes, args.separation, args.seed)
    save_dataset(ds, args.out, args.format)
    print(f"wrote {len(ds)} samples to {args.out}")
    return EXIT_OK


def _cmd_inspect(args):
    report = load_report(args.result)
    print(format_table(report))
    n_failed = len(failed_cells(report))
    print(f"\n{len(report['cells'])} cells, {n_failed} failed")
    for row in report["table"]:
        if row["agreement_after"] is not None:
            print(f"{row['method']} @ {row['rate']:.2f}: label agreement "
                  f"{row['agreement_before']:.3f} -> {row['agreement_after']:.3f}")
    return EXIT_OK


def main(argv=None):
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = {"run": _cmd_run, "gen-data": _cmd_gen, "inspect": _cmd_inspect}[args.command]
    try:
        return handler(args)
    except InvalidConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NoisyKDError, OSError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
