"""Solver process orchestration.

Verification leans on external SMT/Horn solvers, run as subprocesses over
SMT-LIB2 files. Two solver roles exist:

- the ownership phase needs a rational arithmetic (QF_LRA) solver that can
  produce models and unsat cores — a z3-style engine;
- the refinement phase needs a constrained Horn clause (CHC) solver: z3's
  Spacer, hoice, or Eldarica.

Discovery order for the z3-style engine: the CONSORT_SPACER environment
variable (a full command line), a `z3` binary on PATH, then the bundled
WebAssembly build under tools/z3-wasm (requires `node`). hoice and Eldarica
are found via CONSORT_HOICE / CONSORT_ELDARICA or on PATH. `parallel` races
every available CHC solver and takes the first definitive answer;
disagreement between definitive answers is reported as an error rather than
silently picking one.

Subprocesses always get terminate/kill escalation on timeout so no solver
outlives its invocation.
"""
from __future__ import annotations

import os
import queue
import shlex
import shutil
import subprocess
import tempfile
import threading
import time
from collections.abc import Callable
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path


class SolverNotFound(Exception):
    pass


class SolverError(Exception):
    pass


@dataclass(frozen=True, slots=True)
class SolverSpec:
    """How to invoke one solver: argv prefix; the script path is appended."""

    name: str
    argv: tuple[str, ...]

    def describe(self) -> str:
        return f"{self.name} ({' '.join(self.argv)})"


@dataclass(slots=True)
class SolverRun:
    """Outcome of one solver invocation."""

    verdict: str  # "sat" | "unsat" | "unknown" | "timeout" | "error"
    output: str
    elapsed: float
    solver: str
    detail: str = ""

    @property
    def definitive(self) -> bool:
        return self.verdict in ("sat", "unsat")


# ---------------------------------------------------------------------------
# Discovery.


def _spec_from_env(name: str, env_var: str) -> SolverSpec | None:
    cmd = os.environ.get(env_var)
    if not cmd:
        return None
    argv = tuple(shlex.split(cmd))
    if not argv:
        return None
    return SolverSpec(name, argv)


def _bundled_wasm_wrapper() -> Path | None:
    # In a source checkout the wrapper lives at <repo>/tools/z3-wasm.
    root = Path(__file__).resolve().parents[2]
    wrapper = root / "tools" / "z3-wasm" / "z3wasm.mjs"
    modules = wrapper.parent / "node_modules"
    if wrapper.is_file() and modules.is_dir():
        return wrapper
    return None


def find_spacer() -> SolverSpec | None:
    """A z3-style solver: QF_LRA with models, and Spacer for Horn clauses."""
    spec = _spec_from_env("spacer", "CONSORT_SPACER")
    if spec is not None:
        return spec
    binary = shutil.which("z3")
    if binary is not None:
        return SolverSpec("spacer", (binary,))
    node = shutil.which("node")
    wrapper = _bundled_wasm_wrapper()
    if node is not None and wrapper is not None:
        return SolverSpec("spacer", (node, str(wrapper)))
    return None


def find_hoice() -> SolverSpec | None:
    spec = _spec_from_env("hoice", "CONSORT_HOICE")
    if spec is not None:
        return spec
    binary = shutil.which("hoice")
    if binary is not None:
        return SolverSpec("hoice", (binary,))
    return None


def find_eldarica() -> SolverSpec | None:
    spec = _spec_from_env("eldarica", "CONSORT_ELDARICA")
    if spec is not None:
        return spec
    binary = shutil.which("eld")
    if binary is not None:
        return SolverSpec("eldarica", (binary,))
    return None


_FINDERS = {
    "spacer": find_spacer,
    "hoice": find_hoice,
    "eldarica": find_eldarica,
}


def require_spacer() -> SolverSpec:
    spec = find_spacer()
    if spec is None:
        raise SolverNotFound(
            "no rational-arithmetic solver available: set CONSORT_SPACER, "
            "put z3 on PATH, or run `npm install` under tools/z3-wasm"
        )
    return spec


def chc_solvers(choice: str) -> list[SolverSpec]:
    """Solvers to use for the Horn clause phase, per --solver choice."""
    if choice == "parallel":
        specs = [f() for f in _FINDERS.values()]
        found = [s for s in specs if s is not None]
        if not found:
            raise SolverNotFound(
                "no Horn clause solver available: set CONSORT_SPACER, "
                "CONSORT_HOICE, or CONSORT_ELDARICA, or put z3 on PATH"
            )
        return found
    finder = _FINDERS.get(choice)
    if finder is None:
        raise SolverError(f"unknown solver choice {choice!r}")
    spec = finder()
    if spec is None:
        raise SolverNotFound(
            f"solver {choice!r} not available: set "
            f"CONSORT_{choice.upper()} or put it on PATH"
        )
    return [spec]


# ---------------------------------------------------------------------------
# Running.


def run_solver(spec: SolverSpec, script: str, timeout: float,
               cancel: threading.Event | None = None) -> SolverRun:
    """Runs one solver over an SMT-LIB script and classifies its answer."""
    start = time.monotonic()
    with tempfile.NamedTemporaryFile(
        "w", suffix=".smt2", prefix="consort-", delete=False
    ) as handle:
        handle.write(script)
        path = handle.name
    try:
        proc = subprocess.Popen(
            list(spec.argv) + [path],
            stdout=subprocess.PIPE,
            stderr=subprocess.STDOUT,
            text=True,
        )
        try:
            out = _communicate(proc, timeout, cancel)
        except subprocess.TimeoutExpired:
            _reap(proc)
            return SolverRun(
                "timeout", "", time.monotonic() - start, spec.name,
                f"no answer within {timeout:g}s",
            )
        except _Cancelled:
            _reap(proc)
            return SolverRun(
                "unknown", "", time.monotonic() - start, spec.name,
                "cancelled",
            )
        elapsed = time.monotonic() - start
        verdict = classify_answer(out)
        if verdict == "error":
            detail = out.strip().splitlines()[0] if out.strip() else (
                f"exit status {proc.returncode}"
            )
            return SolverRun("error", out, elapsed, spec.name, detail)
        return SolverRun(verdict, out, elapsed, spec.name)
    finally:
        try:
            os.unlink(path)
        except OSError:
            pass


class _Cancelled(Exception):
    pass


def _communicate(proc: subprocess.Popen, timeout: float,
                 cancel: threading.Event | None) -> str:
    """communicate() that also honours a cancellation event."""
    deadline = time.monotonic() + timeout
    if cancel is None:
        out, _ = proc.communicate(timeout=timeout)
        return out
    # Poll in short slices so a cancel from a sibling solver is honoured.
    while True:
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            raise subprocess.TimeoutExpired(proc.args, timeout)
        if cancel.is_set():
            raise _Cancelled()
        try:
            out, _ = proc.communicate(timeout=min(0.05, remaining))
            return out
        except subprocess.TimeoutExpired:
            continue


def _reap(proc: subprocess.Popen) -> None:
    proc.terminate()
    try:
        proc.wait(timeout=2)
    except subprocess.TimeoutExpired:
        proc.kill()
        proc.wait()
    # Drain pipes so the interpreter does not warn about them.
    if proc.stdout is not None:
        proc.stdout.close()


def classify_answer(output: str) -> str:
    for line in output.splitlines():
        token = line.strip()
        if token == "sat":
            return "sat"
        if token == "unsat":
            return "unsat"
        if token in ("unknown", "timeout"):
            return "unknown"
        if token.startswith("(error") or token.startswith("error"):
            return "error"
        if token:
            # Unrecognised leading chatter; keep scanning.
            continue
    return "error"


def run_race(specs: list[SolverSpec],
             script: str | Callable[[SolverSpec], str],
             timeout: float) -> SolverRun:
    """Races several solvers; first definitive answer wins.

    `script` may be a callable producing a per-solver script, since some
    engines need engine-specific option lines in the preamble.

    Disagreeing definitive answers turn into an error result: a sat/unsat
    split means at least one solver is wrong, and guessing would be unsound.
    """
    def script_for(spec: SolverSpec) -> str:
        return script(spec) if callable(script) else script

    if len(specs) == 1:
        return run_solver(specs[0], script_for(specs[0]), timeout)

    results: list[SolverRun] = []
    lock = threading.Lock()
    first_definitive = threading.Event()
    cancel = threading.Event()

    def work(spec: SolverSpec) -> None:
        run = run_solver(spec, script_for(spec), timeout, cancel)
        with lock:
            results.append(run)
            if run.definitive and not first_definitive.is_set():
                first_definitive.set()

    threads = [
        threading.Thread(target=work, args=(spec,), daemon=True)
        for spec in specs
    ]
    for th in threads:
        th.start()
    first_definitive.wait(timeout + 1.0)
    # Let a definitive answer cancel the stragglers, then collect everyone.
    cancel.set()
    for th in threads:
        th.join(timeout + 5.0)

    definitive = [r for r in results if r.definitive]
    verdicts = {r.verdict for r in definitive}
    if len(verdicts) > 1:
        detail = ", ".join(f"{r.solver}:{r.verdict}" for r in definitive)
        return SolverRun(
            "error", "", max(r.elapsed for r in results), "parallel",
            f"solvers disagree ({detail})",
        )
    if definitive:
        return definitive[0]
    if not results:
        return SolverRun("error", "", timeout, "parallel", "no solver ran")
    # No definitive answer: prefer reporting a timeout over unknown.
    for verdict in ("timeout", "unknown", "error"):
        for r in results:
            if r.verdict == verdict:
                return r
    return results[0]


# ---------------------------------------------------------------------------
# Incremental sessions. Repeated queries against one constraint base (the
# ownership maximization loop) reuse a single solver process via push/pop
# instead of paying process startup per query.


class SessionError(Exception):
    pass


class SolverSession:
    """A persistent solver subprocess evaluating SMT-LIB blocks.

    The bundled WASM wrapper is driven in its `--server` mode; any other
    z3-compatible binary is driven through `-in` with an `(echo ...)` marker
    used to find each answer's end. Close promptly; the subprocess is
    terminated on close and on interpreter exit (daemon reader thread).
    """

    _MARKER = ";;READY;;"
    _FLUSH = ";;FLUSH;;"

    def __init__(self, spec: SolverSpec) -> None:
        self.spec = spec
        self._wasm = any(a.endswith("z3wasm.mjs") for a in spec.argv)
        argv = list(spec.argv) + (["--server"] if self._wasm else ["-in"])
        try:
            self.proc = subprocess.Popen(
                argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                text=True,
            )
        except OSError as ex:
            raise SessionError(f"cannot start {spec.describe()}: {ex}")
        self._lines: "queue.Queue[str | None]" = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()
        self._evals = 0
        if self._wasm:
            # The server announces readiness once the WASM engine is up.
            self._read_until_marker(timeout=60.0, expect_tag="0")

    def _pump(self) -> None:
        assert self.proc.stdout is not None
        try:
            for line in self.proc.stdout:
                self._lines.put(line.rstrip("\n"))
        except ValueError:
            pass  # stream closed during shutdown
        self._lines.put(None)

    def _read_until_marker(self, timeout: float,
                           expect_tag: str | None = None) -> str:
        out: list[str] = []
        deadline = time.monotonic() + timeout
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                self.close()
                raise SessionError(
                    f"solver session timed out after {timeout:g}s"
                )
            try:
                line = self._lines.get(timeout=remaining)
            except queue.Empty:
                continue
            if line is None:
                self.close()
                raise SessionError("solver session ended unexpectedly")
            token = line.strip()
            if token.startswith(self._MARKER):
                tag = token[len(self._MARKER):]
                if expect_tag is not None and tag != expect_tag:
                    # An answer for a different block: the stream is no
                    # longer trustworthy, so refuse to hand it out.
                    self.close()
                    raise SessionError(
                        f"solver session out of sync "
                        f"(expected answer {expect_tag}, got {tag or '?'})"
                    )
                return "\n".join(out)
            out.append(line)

    def eval(self, block: str, timeout: float) -> str:
        """Evaluates one SMT-LIB block, returning its textual output."""
        if self.proc.poll() is not None or self.proc.stdin is None:
            raise SessionError("solver session is closed")
        expect: str | None = None
        try:
            if self._wasm:
                self._evals += 1
                expect = str(self._evals)
                self.proc.stdin.write(block + f"\n{self._FLUSH}\n")
            else:
                self.proc.stdin.write(
                    block + f'\n(echo "{self._MARKER}")\n'
                )
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as ex:
            raise SessionError(f"solver session lost: {ex}")
        return self._read_until_marker(timeout, expect_tag=expect)

    def close(self) -> None:
        if self.proc.poll() is None:
            try:
                if self.proc.stdin is not None:
                    self.proc.stdin.close()
            except OSError:
                pass
            _reap(self.proc)

    def __enter__(self) -> "SolverSession":
        return self

    def __exit__(self, *_exc) -> None:
        self.close()


# ---------------------------------------------------------------------------
# Answer parsing: models and unsat cores come back as S-expressions.


def _tokenize_sexpr(text: str) -> list[str]:
    out: list[str] = []
    i = 0
    while i < len(text):
        c = text[i]
        if c in "()":
            out.append(c)
            i += 1
        elif c.isspace():
            i += 1
        elif c == ";":
            while i < len(text) and text[i] != "\n":
                i += 1
        elif c == "|":
            j = text.index("|", i + 1)
            out.append(text[i:j + 1])
            i = j + 1
        else:
            j = i
            while j < len(text) and not text[j].isspace() \
                    and text[j] not in "();":
                j += 1
            out.append(text[i:j])
            i = j
    return out


def _read_sexprs(tokens: list[str]) -> list:
    pos = 0

    def read():
        nonlocal pos
        token = tokens[pos]
        pos += 1
        if token == "(":
            items = []
            while pos < len(tokens) and tokens[pos] != ")":
                items.append(read())
            if pos >= len(tokens):
                raise SolverError("unbalanced solver output")
            pos += 1
            return items
        if token == ")":
            raise SolverError("unbalanced solver output")
        return token

    forms = []
    while pos < len(tokens):
        forms.append(read())
    return forms


def _strip_verdict_lines(output: str) -> str:
    kept = [
        line for line in output.splitlines()
        if line.strip() not in ("sat", "unsat", "unknown")
        and not line.strip().startswith("(error")
    ]
    return "\n".join(kept)


def numeral_to_fraction(form) -> Fraction:
    """Converts an SMT-LIB numeral S-expression to an exact rational."""
    if isinstance(form, str):
        return Fraction(form)
    if isinstance(form, list) and form:
        if form[0] == "-" and len(form) == 2:
            return -numeral_to_fraction(form[1])
        if form[0] == "/" and len(form) == 3:
            return numeral_to_fraction(form[1]) / numeral_to_fraction(form[2])
    raise SolverError(f"cannot read numeral {form!r}")


def parse_model(output: str) -> dict[str, Fraction]:
    """Extracts constant define-funs from a get-model answer."""
    forms = _read_sexprs(_tokenize_sexpr(_strip_verdict_lines(output)))
    model: dict[str, Fraction] = {}

    def visit(form) -> None:
        if not isinstance(form, list):
            return
        if len(form) == 5 and form[0] == "define-fun" and form[2] == [] \
                and form[3] in ("Real", "Int"):
            name = form[1]
            if isinstance(name, str) and name.startswith("|"):
                name = name[1:-1]
            model[name] = numeral_to_fraction(form[4])
            return
        for item in form:
            visit(item)

    for form in forms:
        visit(form)
    return model


def parse_unsat_core(output: str) -> list[str]:
    """Extracts assertion names from a get-unsat-core answer."""
    forms = _read_sexprs(_tokenize_sexpr(_strip_verdict_lines(output)))
    for form in forms:
        if isinstance(form, list) and all(
            isinstance(item, str) for item in form
        ):
            return list(form)
    return []
