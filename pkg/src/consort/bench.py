"""Corpus benchmark runner.

Walks a directory of `.imp` programs whose first line declares the
expected verdict (`// EXPECT: verified` or `// EXPECT: rejected`),
verifies each one, and prints a comparison table. With a report
directory it also writes `results.csv` and a `times.png` bar chart.
"""

from __future__ import annotations

import csv
import re
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import TextIO

from .pipeline import REJECTED, Report, VerifyConfig, verify

DEFAULT_CORPUS = Path(__file__).parent / "corpus"

_EXPECT = re.compile(r"^//\s*EXPECT:\s*(verified|rejected)\s*$")


@dataclass(slots=True)
class BenchRow:
    name: str
    expected: str
    report: Report

    @property
    def got(self) -> str:
        r = self.report
        if r.verdict == REJECTED:
            return f"rejected({r.reject_phase})"
        return r.verdict

    @property
    def seconds(self) -> float:
        return self.report.timings.get("total", 0.0)

    @property
    def matched(self) -> bool:
        if self.expected == REJECTED:
            return self.report.verdict == REJECTED
        return self.report.verdict == self.expected


def expected_verdict(path: Path) -> str | None:
    """The `// EXPECT:` declaration on the file's first line, if any."""
    with path.open() as fh:
        m = _EXPECT.match(fh.readline().strip())
    return m.group(1) if m else None


def run_bench(corpus: Path | None = None,
              config: VerifyConfig | None = None,
              report_dir: Path | None = None,
              out: TextIO = sys.stdout) -> int:
    """Runs the benchmark; returns 0 iff every verdict matched."""
    corpus = corpus or DEFAULT_CORPUS
    cfg = config or VerifyConfig()
    files = sorted(corpus.glob("*.imp"))
    if not files:
        print(f"no .imp programs under {corpus}", file=sys.stderr)
        return 2

    rows: list[BenchRow] = []
    for path in files:
        expected = expected_verdict(path)
        if expected is None:
            print(f"skipping {path.name}: no EXPECT header", file=sys.stderr)
            continue
        report = verify(path, cfg)
        rows.append(BenchRow(path.stem, expected, report))
    if not rows:
        print(f"no EXPECT-annotated programs under {corpus}",
              file=sys.stderr)
        return 2

    widths = (
        max((len(r.name) for r in rows), default=4),
        max(len("expected"), *(len(r.expected) for r in rows)),
        max(len("got"), *(len(r.got) for r in rows)),
    )
    header = (f"{'name':<{widths[0]}}  {'expected':<{widths[1]}}  "
              f"{'got':<{widths[2]}}  {'time(s)':>8}  {'ann':>3}")
    print(header, file=out)
    print("-" * len(header), file=out)
    for r in rows:
        line = (f"{r.name:<{widths[0]}}  {r.expected:<{widths[1]}}  "
                f"{r.got:<{widths[2]}}  {r.seconds:>8.2f}  "
                f"{r.report.aliases:>3}")
        if not r.matched:
            line += "  MISMATCH"
        print(line, file=out)
    mismatches = [r for r in rows if not r.matched]
    print(f"{len(rows)} programs, {len(rows) - len(mismatches)} matched, "
          f"{len(mismatches)} mismatched", file=out)

    if report_dir is not None:
        report_dir.mkdir(parents=True, exist_ok=True)
        _write_csv(report_dir / "results.csv", rows)
        _plot_times(report_dir / "times.png", rows)
        print(f"report written to {report_dir}/", file=out)

    return 1 if mismatches else 0


def _write_csv(path: Path, rows: list[BenchRow]) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["name", "expected", "got", "matched", "seconds",
                    "aliases", "clauses", "ownership_vars", "solver"])
        for r in rows:
            w.writerow([r.name, r.expected, r.got, r.matched,
                        f"{r.seconds:.3f}", r.report.aliases,
                        r.report.clauses, r.report.ownership_vars,
                        r.report.solver or ""])


def _plot_times(path: Path, rows: list[BenchRow]) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    names = [r.name for r in rows]
    seconds = [r.seconds for r in rows]
    colors = ["#2a9d8f" if r.matched else "#e76f51" for r in rows]
    fig, ax = plt.subplots(figsize=(8, max(2.5, 0.4 * len(rows) + 1)))
    ax.barh(names, seconds, color=colors)
    ax.invert_yaxis()
    ax.set_xlabel("total time (s)")
    ax.set_title("verification time per program")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
