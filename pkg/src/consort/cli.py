"""Command line interface.

Subcommands:
  verify     statically verify one program (exit 0 verified, 1 rejected,
             2 unknown, 3 tool error)
  interpret  run one program under the reference interpreter
  bench      verify a corpus of EXPECT-annotated programs
  dump       print an intermediate artifact (templates, ownership, chc)
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import bench, pipeline
from .backends import SolverError, SolverNotFound
from .ownership import OwnershipSolveError
from .parser import ParseError
from .simple_types import SimpleTypeError

_SOLVERS = ("spacer", "hoice", "eldarica", "parallel")


def _nonneg_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return value


def _pos_float(text: str) -> float:
    value = float(text)
    if value <= 0:
        raise argparse.ArgumentTypeError("must be positive")
    return value


def _add_solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--context-depth", "-k", type=_nonneg_int, default=1,
                   metavar="K",
                   help="call-site context depth (default 1)")
    p.add_argument("--solver", choices=_SOLVERS, default="spacer",
                   help="Horn clause solver, or 'parallel' to race all "
                        "available ones (default spacer)")
    p.add_argument("--timeout", type=_pos_float, default=60.0,
                   metavar="SECONDS",
                   help="per-solver-call timeout (default 60)")


def _add_interp_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, action="append", metavar="N",
                   help="random seed for nondeterministic values "
                        "(repeatable; default 0)")
    p.add_argument("--seed-count", type=int, metavar="N",
                   help="run seeds 0..N-1 (overrides --seed)")
    p.add_argument("--fuel", type=int, default=1_000_000, metavar="STEPS",
                   help="step budget per run (default 1000000)")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="consort",
        description="Fractional-ownership refinement type inference for "
                    "a small imperative language with mutable references.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    pv = sub.add_parser("verify", help="statically verify a program")
    pv.add_argument("file", type=Path, help="source program (.imp)")
    _add_solver_flags(pv)
    pv.add_argument("--dump-templates", type=Path, metavar="PATH",
                    help="write the invariant templates here ('-': stdout)")
    pv.add_argument("--dump-ownership", type=Path, metavar="PATH",
                    help="write the ownership system and solution here")
    pv.add_argument("--dump-chc", type=Path, metavar="PATH",
                    help="write the Horn clause script here")
    pv.add_argument("--check-dynamic", action="store_true",
                    help="also run the interpreter and cross-check "
                         "the verdict")
    _add_interp_flags(pv)

    pi = sub.add_parser("interpret", help="run a program concretely")
    pi.add_argument("file", type=Path, help="source program (.imp)")
    _add_interp_flags(pi)
    pi.add_argument("--trace", action="store_true",
                    help="print each small step taken")

    pb = sub.add_parser("bench", help="verify an EXPECT-annotated corpus")
    pb.add_argument("corpus", type=Path, nargs="?",
                    help="directory of .imp files (default: bundled corpus)")
    _add_solver_flags(pb)
    pb.add_argument("--report-dir", type=Path, metavar="DIR",
                    help="write results.csv and times.png here")

    pd = sub.add_parser("dump", help="print an intermediate artifact")
    pd.add_argument("kind", choices=("templates", "ownership", "chc"))
    pd.add_argument("file", type=Path, help="source program (.imp)")
    _add_solver_flags(pd)

    return parser


def _seeds(args: argparse.Namespace) -> tuple[int, ...]:
    if getattr(args, "seed_count", None):
        return tuple(range(args.seed_count))
    if getattr(args, "seed", None):
        return tuple(args.seed)
    return (0,)


def _cmd_verify(args: argparse.Namespace) -> int:
    cfg = pipeline.VerifyConfig(
        context_depth=args.context_depth,
        solver=args.solver,
        timeout=args.timeout,
        dump_templates=args.dump_templates,
        dump_ownership=args.dump_ownership,
        dump_chc=args.dump_chc,
        check_dynamic=args.check_dynamic,
        seeds=(_seeds(args) if (args.seed or args.seed_count)
               else tuple(range(10))),
        fuel=args.fuel,
    )
    report = pipeline.verify(args.file, cfg)
    sys.stdout.write(report.describe())
    return report.exit_code


def _cmd_interpret(args: argparse.Namespace) -> int:
    try:
        results = pipeline.interpret(args.file, seeds=_seeds(args),
                                     fuel=args.fuel, trace=args.trace)
    except (OSError, ParseError, SimpleTypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    failed = 0
    for seed, result in zip(_seeds(args), results):
        if args.trace:
            for line in result.trace:
                print(f"  {line}")
        print(f"seed {seed}: {result.outcome} ({result.steps} steps)")
        failed += result.failed
    if failed:
        print(f"{failed} run(s) failed")
    return 1 if failed else 0


def _cmd_bench(args: argparse.Namespace) -> int:
    cfg = pipeline.VerifyConfig(
        context_depth=args.context_depth,
        solver=args.solver,
        timeout=args.timeout,
    )
    return bench.run_bench(args.corpus, cfg, args.report_dir)


def _cmd_dump(args: argparse.Namespace) -> int:
    cfg = pipeline.VerifyConfig(
        context_depth=args.context_depth,
        solver=args.solver,
        timeout=args.timeout,
    )
    try:
        sys.stdout.write(pipeline.render_dump(args.file, args.kind, cfg))
    except (OSError, ParseError, SimpleTypeError, SolverNotFound,
            SolverError, OwnershipSolveError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    handler = {
        "verify": _cmd_verify,
        "interpret": _cmd_interpret,
        "bench": _cmd_bench,
        "dump": _cmd_dump,
    }[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
