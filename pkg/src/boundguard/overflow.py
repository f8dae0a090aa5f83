"""Integer overflow/underflow detection.

The checker discovers the active integer bound (a limits macro the program
mentions, valued from a limits file when one is available), then probes every
assignment site on every feasible path: can the assigned variable's
mathematical value leave [lower, upper]?  The probe is a single disjunction
``var > upper or var < lower`` solved over the slice of constraints connected
to the variable, so a satisfiable probe comes with a concrete witness model.

Satisfiable probes become BugReports carrying everything the repair engine
needs: the detection slice (probe tagged removable), the detecting SSA
variable, the bound, and the branch-decision vector of the path.  Unknown
verdicts are recorded as unconfirmed sites, never as reports — a report is a
proof, not a guess.

The module also exposes the three guard preconditions (variable plus constant
addition, variable times constant, square) exactly as the emitted guard code
evaluates them, so tests can sweep them exhaustively against small bit widths.
"""

from __future__ import annotations

import hashlib
import re
import threading
from dataclasses import dataclass, field
from typing import Optional

from . import frontend as F
from .constraints import (
    Const, ConstraintSystem, GROUP_PROBE, OrRel, Rel, SolverContext, Var,
)
from .symexec import PathState, SiteInfo, SymVar

CHECKER_ID = "IOF"

SUPPORTED_MACROS = ("CHAR_MAX", "INT_MAX", "LLONG_MAX", "SHRT_MAX", "UINT_MAX")

_MIN_MACROS = {
    "CHAR_MAX": "CHAR_MIN",
    "SHRT_MAX": "SHRT_MIN",
    "INT_MAX": "INT_MIN",
    "LLONG_MAX": "LLONG_MIN",
}


class MalformedLimitsFile(Exception):
    def __init__(self, line: int, text: str):
        super().__init__(f"limits file line {line}: cannot parse {text!r}")
        self.line = line


class DivisorZero(Exception):
    pass


@dataclass(frozen=True)
class BoundInfo:
    """The active integer bound for a run."""

    macro: str
    upper_value: int
    lower_value: int
    origin: str  # "limits-file" | "program-usage" | "default"
    file_minimum: Optional[int] = None  # true minimum from the limits file, if any

    @staticmethod
    def from_macro(macro: str, upper: int, origin: str,
                   file_minimum: Optional[int] = None) -> "BoundInfo":
        lower = 0 if macro == "UINT_MAX" else -upper
        return BoundInfo(macro, upper, lower, origin, file_minimum)


_DEFINE_RE = re.compile(r"^\s*#\s*define\s+(\w+)\s+(.*?)\s*$")


def parse_limits_file(text: str) -> dict[str, int]:
    """Macro values from ``#define <MACRO> <integer>`` lines.

    Unknown macros are ignored; a supported macro (or its matching minimum)
    with a non-integer value is an error.
    """
    known = set(SUPPORTED_MACROS) | set(_MIN_MACROS.values())
    values: dict[str, int] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        m = _DEFINE_RE.match(line)
        if m is None:
            continue
        name, raw = m.group(1), m.group(2)
        if name not in known:
            continue
        raw = raw.strip().rstrip("uUlL").replace("(", "").replace(")", "")
        try:
            values[name] = int(raw, 0)
        except ValueError:
            raise MalformedLimitsFile(lineno, line) from None
    return values


def _macros_in_program(program: F.Program) -> list[str]:
    """Supported macros in source order of first occurrence."""
    seen: list[tuple[int, int, str]] = []
    for e in F.all_exprs(program):
        if isinstance(e, F.MacroRef) and e.macro in SUPPORTED_MACROS:
            seen.append((e.span.start_line, e.span.start_col, e.macro))
    seen.sort()
    out: list[str] = []
    for _, _, macro in seen:
        if macro not in out:
            out.append(macro)
    return out


def discover_upper_bound(program: F.Program,
                         limits_path: Optional[str] = None) -> BoundInfo:
    """Active bound: first supported macro the program uses, else INT_MAX.

    The macro's value comes from the limits file when one is given and defines
    it; otherwise from the built-in kind tables.
    """
    used = _macros_in_program(program)
    macro = used[0] if used else "INT_MAX"
    origin = "program-usage" if used else "default"
    file_values: dict[str, int] = {}
    if limits_path is not None:
        with open(limits_path, "r", encoding="utf-8") as fh:
            file_values = parse_limits_file(fh.read())
    if macro in file_values:
        minimum = file_values.get(_MIN_MACROS.get(macro, ""))
        return BoundInfo.from_macro(macro, file_values[macro], "limits-file", minimum)
    return BoundInfo.from_macro(macro, F.DEFAULT_MACRO_VALUES[macro], origin)


# ---------------------------------------------------------------------------
# Reports


@dataclass
class BugReport:
    problem_id: str
    file: str
    line: int
    col: int
    statement: str
    fn: str
    variable: SymVar
    slice: ConstraintSystem  # probe group retained, removable by tag
    bound: BoundInfo
    decisions: tuple[bool, ...]
    disjunct: str  # "over" | "under" — which probe arm the model satisfies
    witness: dict[str, int]
    checker_id: str = CHECKER_ID

    def to_dict(self) -> dict:
        from .constraints import emit_smtlib

        return {
            "problem_id": self.problem_id,
            "checker_id": self.checker_id,
            "file": self.file,
            "line": self.line,
            "col": self.col,
            "statement": self.statement,
            "fn": self.fn,
            "variable": {
                "base": self.variable.base,
                "index": self.variable.index,
                "smt_name": self.variable.smt_name,
                "kind": self.variable.kind.name,
            },
            "bound": {
                "macro": self.bound.macro,
                "upper": self.bound.upper_value,
                "lower": self.bound.lower_value,
                "origin": self.bound.origin,
            },
            "decisions": list(self.decisions),
            "disjunct": self.disjunct,
            "witness": self.witness,
            "slice_smt": emit_smtlib(self.slice),
        }


@dataclass
class UnconfirmedSite:
    file: str
    line: int
    col: int
    statement: str
    reason: str

    def to_dict(self) -> dict:
        return {"file": self.file, "line": self.line, "col": self.col,
                "statement": self.statement, "reason": self.reason}


def probe_formula(var_name: str, bound: BoundInfo) -> OrRel:
    return OrRel((
        Rel(">", Var(var_name), Const(bound.upper_value)),
        Rel("<", Var(var_name), Const(bound.lower_value)),
    ))


def check_assignment_site(state: PathState, site: SiteInfo, bound: BoundInfo,
                          solver: SolverContext) -> tuple[Optional[dict], Optional[str]]:
    """Probe one site; (sat result fields, None) | (None, unknown reason) | (None, None).

    The sat fields are the slice (probe retained), the model, and the
    satisfied disjunct; packaging into a BugReport (IDs, dedup) is the
    checker's job.
    """
    name = site.target.smt_name
    iv = state.intervals.get(name)
    if iv is not None and bound.lower_value <= iv[0] and iv[1] <= bound.upper_value:
        return None, None  # value provably in range on this path
    system = state.slice_for(site.target)
    system.add(GROUP_PROBE, probe_formula(name, bound))
    verdict = solver.check(system)
    if verdict.is_unsat:
        return None, None
    if verdict.is_unknown:
        return None, verdict.reason or "solver returned unknown"
    model = verdict.model or {}
    value = model.get(name, 0)
    disjunct = "over" if value > bound.upper_value else "under"
    return {"slice": system, "witness": model, "disjunct": disjunct}, None


class OverflowChecker:
    """Checker plugged into the analyzer; stateful only for IDs and dedup.

    ``capture_full`` additionally solves the whole path system plus the probe
    for every report, storing a witness that fixes *all* inputs (not just the
    slice's) so a concrete replay is guaranteed to follow the reported path.
    Off by default: the slice witness is enough for the report itself.
    """

    def __init__(self, bound: BoundInfo, run_stamp: str = "run",
                 checker_id: str = CHECKER_ID, capture_full: bool = False):
        self.bound = bound
        self.checker_id = checker_id
        self.run_stamp = run_stamp
        self.capture_full = capture_full
        self.unconfirmed: list[UnconfirmedSite] = []
        self._lock = threading.Lock()
        self._serial = 0
        self._reported: set[tuple[str, int, int, str]] = set()
        self._unconfirmed_seen: set[tuple[str, int, int]] = set()

    def _next_id(self) -> str:
        with self._lock:
            self._serial += 1
            return f"{self.run_stamp}-{self._serial:04d}-{self.checker_id}"

    def on_site(self, state: PathState, site: SiteInfo,
                solver: SolverContext) -> list[BugReport]:
        got, unknown_reason = check_assignment_site(state, site, self.bound, solver)
        span = site.span
        if unknown_reason is not None:
            key = (span.file, span.start_line, span.start_col)
            with self._lock:
                if key in self._unconfirmed_seen:
                    return []
                self._unconfirmed_seen.add(key)
            self.unconfirmed.append(UnconfirmedSite(
                span.file, span.start_line, span.start_col,
                F.stmt_text(site.stmt), unknown_reason))
            return []
        if got is None:
            return []
        dkey = (span.file, span.start_line, span.start_col, got["disjunct"])
        with self._lock:
            if dkey in self._reported:
                return []
            self._reported.add(dkey)
        if self.capture_full:
            full = state.full_system()
            full.add(GROUP_PROBE, probe_formula(site.target.smt_name, self.bound))
            full_verdict = solver.check(full)
            if full_verdict.is_sat and full_verdict.model is not None:
                got["witness"] = full_verdict.model
                value = full_verdict.model.get(site.target.smt_name, 0)
                got["disjunct"] = "over" if value > self.bound.upper_value else "under"
        report = BugReport(
            problem_id=self._next_id(),
            file=span.file,
            line=span.start_line,
            col=span.start_col,
            statement=F.stmt_text(site.stmt),
            fn=site.fn,
            variable=site.target,
            slice=got["slice"],
            bound=self.bound,
            decisions=site.decisions,
            disjunct=got["disjunct"],
            witness=got["witness"],
            checker_id=self.checker_id,
        )
        return [report]


def run_stamp_for(source_text: str) -> str:
    """Deterministic per-input stamp used in problem IDs."""
    return hashlib.sha256(source_text.encode()).hexdigest()[:12]


# ---------------------------------------------------------------------------
# Guard preconditions (the logic emitted guards evaluate at run time)


def eval_precondition_add_const(s1: int, s2: int, bound: BoundInfo) -> bool:
    """Variable plus constant: safe means the sum stays inside the bound."""
    return bound.lower_value <= s1 + s2 <= bound.upper_value


def eval_precondition_mul_const(s1: int, s2: int, bound: BoundInfo) -> bool:
    """Variable times nonzero constant: safe means the product stays inside.

    A zero constant is refused the same way the guard synthesis refuses it
    (its interval endpoints would divide by the constant).
    """
    if s2 == 0:
        raise DivisorZero("precondition divisor is zero")
    return bound.lower_value <= s1 * s2 <= bound.upper_value


def eval_precondition_square(s1: int, bound: BoundInfo) -> bool:
    """Square of a variable: safe means the square stays inside the bound."""
    return bound.lower_value <= s1 * s1 <= bound.upper_value


# ---------------------------------------------------------------------------
# Detection pipeline entry


@dataclass
class DetectionRun:
    """Everything one detection pass produced, ready for repair or reporting."""

    program: F.Program
    source: str
    bound: BoundInfo
    reports: list[BugReport]
    unconfirmed: list[UnconfirmedSite]
    macro_values: dict[str, int]
    run_stamp: str
    paths: int = 0
    sites: int = 0
    solver_queries: int = 0
    elapsed_s: float = 0.0
    # Roots whose exploration was abandoned (call-string depth exceeded) and
    # the walker diagnostics explaining why.  Non-empty means the report list
    # is incomplete for those roots; callers must not treat it as clean.
    aborted_roots: list[str] = field(default_factory=list)
    diagnostics: list[str] = field(default_factory=list)


def analyze_source(text: str, file: str = "<input>", *,
                   cfg_config=None, solver_config=None,
                   limits_path: Optional[str] = None,
                   roots=None, workers: int = 1,
                   capture_full: bool = False,
                   summaries=None, dump_writer=None) -> DetectionRun:
    """Parse, discover the bound, and run the overflow checker on every root.

    Raises frontend.ParseFailure on syntax errors and propagates solver
    availability problems; Unknown verdicts surface as unconfirmed sites.
    """
    from .cfg import CfgConfig, build_unit
    from .constraints import SolverConfig
    from .symexec import Analyzer, default_summaries

    program = F.parse_ok(text, file)
    bound = discover_upper_bound(program, limits_path)
    macro_values = dict(F.DEFAULT_MACRO_VALUES)
    if limits_path is not None:
        with open(limits_path, "r", encoding="utf-8") as fh:
            macro_values.update(parse_limits_file(fh.read()))
    checker = OverflowChecker(bound, run_stamp=run_stamp_for(text),
                              capture_full=capture_full)
    analyzer = Analyzer(build_unit(program),
                        cfg_config or CfgConfig(),
                        solver_config or SolverConfig(),
                        [checker],
                        summaries if summaries is not None else default_summaries(),
                        macro_values=macro_values,
                        roots=roots,
                        workers=workers,
                        dump_writer=dump_writer)
    try:
        result = analyzer.run()
    finally:
        analyzer.close()
    return DetectionRun(
        program=program,
        source=text,
        bound=bound,
        reports=result.reports,
        unconfirmed=checker.unconfirmed,
        macro_values=macro_values,
        run_stamp=checker.run_stamp,
        paths=result.paths,
        sites=result.sites,
        solver_queries=result.solver_queries,
        elapsed_s=result.elapsed_s,
        aborted_roots=list(result.aborted_roots),
        diagnostics=[d.message for d in result.diagnostics],
    )
