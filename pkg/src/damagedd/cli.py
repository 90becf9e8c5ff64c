"""Command-line driver for the benchmark runs.

Two subcommands::

    damagedd run --problem sdnt --mode dd --refine mid --out runs/sdnt-dd
    damagedd compare runs/sdnt-sd runs/sdnt-dd --out runs/sdnt-cmp

``run`` executes one analysis and writes ``reaction.csv``,
``decomposition.json``, ``report.txt`` and ``run.json`` into the output
directory (plus ``snapshots/*.pgm`` with ``--snapshots``).  ``compare``
reads two finished run directories of the same problem — first the plain
run, then the accelerated one — and emits the timing and accuracy
comparison as text and CSV.
"""

from __future__ import annotations

import argparse
import os
import sys

from .bench import RunConfig, compare, load_report, run
from .mesh import PROBLEMS, REFINEMENTS


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="damagedd",
        description="Notched-plate damage benchmarks: plain (sd) and "
                    "image-accelerated (dd) finite-element runs.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one analysis")
    p_run.add_argument("--problem", choices=PROBLEMS,
                       help="benchmark geometry (default snt-struct, "
                            "unless the config file says otherwise)")
    p_run.add_argument("--mode", choices=("sd", "dd"),
                       help="sd: plain solve; dd: adaptive decomposition")
    p_run.add_argument("--refine", choices=REFINEMENTS, dest="refinement",
                       help="mesh refinement (strips only; default coarse)")
    p_run.add_argument("--config", metavar="FILE",
                       help="JSON file with partial overrides of the "
                            "benchmark defaults")
    p_run.add_argument("--out", metavar="DIR",
                       help="output directory (default "
                            "runs/<problem>-<refine>-<mode>)")
    p_run.add_argument("--snapshots", action="store_true", default=None,
                       help="write the imaging pipeline stages as PGM files")
    p_run.add_argument("--debug-schur", action="store_true", default=None,
                       dest="debug_schur",
                       help="verify every condensed solve against a direct "
                            "factorization (slow)")

    p_cmp = sub.add_parser("compare",
                           help="compare a plain and an accelerated run")
    p_cmp.add_argument("sd_dir", help="output directory of the sd run")
    p_cmp.add_argument("dd_dir", help="output directory of the dd run")
    p_cmp.add_argument("--out", metavar="DIR",
                       help="also write comparison.txt/comparison.csv here")
    return parser


def _cmd_run(args):
    overrides = {
        "problem": args.problem,
        "mode": args.mode,
        "refinement": args.refinement,
        "out": args.out,
        "snapshots": args.snapshots,
        "debug_schur": args.debug_schur,
    }
    if args.config:
        config = RunConfig.from_json(args.config, **overrides)
    else:
        doc = {k: v for k, v in overrides.items() if v is not None}
        config = RunConfig.from_json(doc)
    report = run(config)
    sys.stdout.write(report.text())
    return 0 if report.completed else 1


def _cmd_compare(args):
    result = compare(load_report(args.sd_dir), load_report(args.dd_dir))
    sys.stdout.write(result.text())
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "comparison.txt"), "w",
                  encoding="utf-8") as fh:
            fh.write(result.text())
        with open(os.path.join(args.out, "comparison.csv"), "w",
                  encoding="utf-8") as fh:
            fh.write(result.csv_text())
    return 0


def main(argv=None):
    args = _build_parser().parse_args(argv)
    if args.command == "run":
        return _cmd_run(args)
    return _cmd_compare(args)


if __name__ == "__main__":
    sys.exit(main())
