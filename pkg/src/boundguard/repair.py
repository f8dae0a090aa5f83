"""Guard-style source repair of confirmed overflow reports.

The engine turns each report into a staged candidate through a fixed sequence:
cluster the report with its statement and constraint slice, select the
detecting variable, re-constrain it to the in-range complement of the probe,
prove the combination sound and feasible, pick the best-matching guard pattern
from an ordered pool, instantiate the pattern with exact bounds, and splice
the guard around the statement.  Candidates mutate nothing; applying them is
a separate explicit step, and a full re-analysis of the patched text decides
`revalidated` per candidate.

Patterns are data: an ordered JSON pool of property lists and templates.  A
pattern is eligible only when every property it names holds for the statement;
among eligible patterns the one naming the most properties wins, ties going to
the earliest pool entry.  The shipped pool guards the operand with the exact
in-range interval (integer square root for squares, folded or textual bound
arithmetic for additions, sign-aware truncated quotients for multiplications
by constants), so an in-range execution never changes behavior: the guarded
statement runs exactly when the store it produces would have been legal.
"""

from __future__ import annotations

import difflib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from . import frontend as F
from .constraints import (
    Const, ConstraintSystem, GROUP_GUARD, GROUP_PROBE, Formula, Rel,
    SolverConfig, SolverContext, Var, formula_vars,
)
from .overflow import (
    BoundInfo, BugReport, DetectionRun, DivisorZero, analyze_source,
)
from .symexec import SymVar

DEFAULT_POOL_PATH = Path(__file__).with_name("patterns.json")

HANDLER_DEFS = {
    "v1": 'void __overflow_log(const char *msg) {\n}\n',
    "v2": 'void __overflow_handler(const char *file, const char *id, int line) {\n}\n',
}

HANDLER_CALLS = {
    "v1": '__overflow_log("{FileName}:{LineNumber}:{IO_ID}");',
    "v2": '__overflow_handler("{FileName}", "{IO_ID}", {LineNumber});',
}

_HANDLER_MARKERS = {
    "v1": "void __overflow_log(",
    "v2": "void __overflow_handler(",
}

_PLACEHOLDERS = ("operand", "value4", "value5", "buggyStm10",
                 "FileName", "IO_ID", "LineNumber", "handler_call")

_PROPERTY_VOCABULARY = {"operator", "operands_equal", "operand_count",
                        "has_const_operand"}


class RepairError(Exception):
    pass


class StaleState(RepairError):
    """The report no longer matches the program text it was produced from."""


class UnknownChecker(RepairError):
    def __init__(self, checker_id: str):
        super().__init__(f"no registered checker with id {checker_id!r}")
        self.checker_id = checker_id


class NoApplicablePattern(RepairError):
    pass


class UnboundPlaceholder(RepairError):
    pass


class SpanDrift(RepairError):
    """The file changed between detection and insertion."""


# ---------------------------------------------------------------------------
# Source text positions


def line_starts(text: str) -> list[int]:
    starts = [0]
    for i, ch in enumerate(text):
        if ch == "\n":
            starts.append(i + 1)
    return starts


def span_offsets(text: str, span: F.Span,
                 starts: Optional[list[int]] = None) -> tuple[int, int]:
    """Byte range [start, end) of a span; columns are 1-based, end exclusive."""
    if starts is None:
        starts = line_starts(text)
    return (starts[span.start_line - 1] + span.start_col - 1,
            starts[span.end_line - 1] + span.end_col - 1)


def span_text(text: str, span: F.Span,
              starts: Optional[list[int]] = None) -> str:
    a, b = span_offsets(text, span, starts)
    return text[a:b]


# ---------------------------------------------------------------------------
# Statement facts (the AST component view patterns are matched against)


@dataclass
class StmtFacts:
    stmt: F.Stmt
    fn: str
    is_decl: bool
    in_loop_header: bool
    target_text: str             # assigned name ("r" or "s.a")
    decl_type_text: str          # "int", "unsigned int", ... ("" for assigns)
    rhs: F.Expr
    rhs_text: str
    operator: Optional[str]      # top-level binary operator, if any
    operand_count: int
    lhs_operand_text: str
    rhs_operand_text: str
    operands_equal: bool
    has_const_operand: bool
    operand_text: str            # the guarded operand (non-constant side)
    const_value: Optional[int]   # the constant side's value, if exactly one
    indent: str


def _const_value(e: F.Expr, macro_values: dict[str, int]) -> Optional[int]:
    if isinstance(e, F.IntLit):
        return e.value
    if isinstance(e, F.MacroRef):
        return macro_values.get(e.macro)
    if isinstance(e, F.Unary) and e.op == "-":
        inner = _const_value(e.operand, macro_values)
        return -inner if inner is not None else None
    return None


def _type_text(tr: F.TypeRef) -> str:
    base = {"int64": "int64_t"}.get(tr.base, tr.base)
    if tr.is_struct:
        base = f"struct {tr.base}"
    out = ("const " if tr.const else "") + base
    if tr.stars:
        out += " " + "*" * tr.stars
    return out


def _iter_stmts(program: F.Program):
    """Yield (fn, stmt, in_loop_header) over every statement in the program."""

    def walk(block: F.Block, fn: str):
        for s in block.stmts:
            yield fn, s, False
            if isinstance(s, F.Block):
                yield from walk(s, fn)
            elif isinstance(s, F.IfStmt):
                yield from walk(s.then, fn)
                if s.els is not None:
                    yield from walk(s.els, fn)
            elif isinstance(s, F.WhileStmt):
                yield from walk(s.body, fn)
            elif isinstance(s, F.ForStmt):
                if s.init is not None:
                    yield fn, s.init, True
                if s.step is not None:
                    yield fn, s.step, True
                yield from walk(s.body, fn)

    for f in program.funcs:
        yield from walk(f.body, f.name)


def locate_statement(program: F.Program, file: str, line: int,
                     col: int) -> tuple[str, F.Stmt, bool]:
    for fn, stmt, in_header in _iter_stmts(program):
        sp = stmt.span
        if sp.file == file and sp.start_line == line and sp.start_col == col:
            return fn, stmt, in_header
    raise StaleState(f"no statement at {file}:{line}:{col}")


def statement_facts(program: F.Program, source: str, fn: str, stmt: F.Stmt,
                    in_loop_header: bool,
                    macro_values: dict[str, int]) -> StmtFacts:
    starts = line_starts(source)
    if isinstance(stmt, F.DeclStmt):
        is_decl = True
        target_text = stmt.name
        decl_type_text = _type_text(stmt.type_ref)
        rhs = stmt.init
    elif isinstance(stmt, F.AssignStmt):
        is_decl = False
        target_text = span_text(source, stmt.target.span, starts)
        decl_type_text = ""
        rhs = stmt.value
    else:
        raise StaleState(f"report points at a {type(stmt).__name__}")
    if rhs is None:
        raise StaleState("report points at a declaration with no initializer")
    rhs_text = span_text(source, rhs.span, starts)

    operator = None
    operand_count = 1
    lhs_text = rhs_text
    rhs_op_text = ""
    const_value: Optional[int] = None
    operand_text = rhs_text
    if isinstance(rhs, F.Binary):
        operator = rhs.op
        operand_count = 2
        lhs_text = span_text(source, rhs.lhs.span, starts)
        rhs_op_text = span_text(source, rhs.rhs.span, starts)
        lc = _const_value(rhs.lhs, macro_values)
        rc = _const_value(rhs.rhs, macro_values)
        if rc is not None and lc is None:
            const_value = rc
            operand_text = lhs_text
        elif lc is not None and rc is None:
            const_value = lc
            operand_text = rhs_op_text
        else:
            operand_text = lhs_text
    line_off = starts[stmt.span.start_line - 1]
    stmt_off = line_off + stmt.span.start_col - 1
    prefix = source[line_off:stmt_off]
    indent = prefix if prefix.strip() == "" else ""

    return StmtFacts(
        stmt=stmt, fn=fn, is_decl=is_decl, in_loop_header=in_loop_header,
        target_text=target_text, decl_type_text=decl_type_text,
        rhs=rhs, rhs_text=rhs_text, operator=operator,
        operand_count=operand_count,
        lhs_operand_text=lhs_text, rhs_operand_text=rhs_op_text,
        operands_equal=(operand_count == 2 and lhs_text == rhs_op_text),
        has_const_operand=(operand_count == 2 and const_value is not None),
        operand_text=operand_text, const_value=const_value, indent=indent,
    )


# ---------------------------------------------------------------------------
# Pattern pool


@dataclass(frozen=True)
class RepairPattern:
    pattern_id: str
    properties: dict
    bounds_rule: str            # "square" | "add" | "mul"
    template: str
    handler_variant: str        # "v1" | "v2"


def load_pattern_pool(path: Optional[str] = None) -> list[RepairPattern]:
    raw = json.loads(Path(path or DEFAULT_POOL_PATH).read_text(encoding="utf-8"))
    pool: list[RepairPattern] = []
    for entry in raw["patterns"]:
        props = dict(entry["properties"])
        unknown = set(props) - _PROPERTY_VOCABULARY
        if unknown:
            raise ValueError(f"pattern {entry['id']!r} names unknown "
                             f"properties: {sorted(unknown)}")
        if entry["bounds_rule"] not in ("square", "add", "mul"):
            raise ValueError(f"pattern {entry['id']!r} has unknown bounds rule "
                             f"{entry['bounds_rule']!r}")
        if entry.get("handler_variant", "v2") not in HANDLER_DEFS:
            raise ValueError(f"pattern {entry['id']!r} has unknown handler "
                             f"variant {entry['handler_variant']!r}")
        pool.append(RepairPattern(
            pattern_id=entry["id"],
            properties=props,
            bounds_rule=entry["bounds_rule"],
            template=entry["template"],
            handler_variant=entry.get("handler_variant", "v2"),
        ))
    if not pool:
        raise ValueError("pattern pool is empty")
    return pool


def _property_holds(name: str, wanted, facts: StmtFacts) -> bool:
    actual = {
        "operator": facts.operator,
        "operands_equal": facts.operands_equal,
        "operand_count": facts.operand_count,
        "has_const_operand": facts.has_const_operand,
    }[name]
    return actual == wanted


def select_pattern(facts: StmtFacts,
                   pool: Sequence[RepairPattern]) -> RepairPattern:
    """Most specific fully-matching pattern; pool order breaks ties.

    A partially-matching pattern would instantiate a guard for a statement
    shape it was not written for, so eligibility requires every named
    property to hold; property count then ranks specificity.
    """
    if facts.in_loop_header:
        raise NoApplicablePattern(
            "statement sits in a loop header and cannot be wrapped in place")
    best: Optional[RepairPattern] = None
    best_score = -1
    for p in pool:
        if all(_property_holds(k, v, facts) for k, v in p.properties.items()):
            score = len(p.properties)
            if score > best_score:
                best, best_score = p, score
    if best is None:
        raise NoApplicablePattern(
            f"no pattern matches statement shape "
            f"(operator={facts.operator!r}, operands={facts.operand_count})")
    return best


# ---------------------------------------------------------------------------
# Clustering and constraint-level validation


@dataclass
class BugCluster:
    report: BugReport
    stmt: F.Stmt
    fn: str
    facts: StmtFacts
    detecting: SymVar
    deps: tuple[str, ...]          # other variables the detection slice touches
    slice: ConstraintSystem        # probe group retained, removable by tag
    bound: BoundInfo


def cluster_bug(report: BugReport, program: F.Program, source: str,
                macro_values: Optional[dict[str, int]] = None) -> BugCluster:
    fn, stmt, in_header = locate_statement(program, report.file, report.line,
                                           report.col)
    if F.stmt_text(stmt) != report.statement:
        raise StaleState(
            f"statement at {report.file}:{report.line} reads "
            f"{F.stmt_text(stmt)!r}, report was for {report.statement!r}")
    slice_vars: set[str] = set()
    for a in report.slice.assertions:
        formula_vars(a.formula, slice_vars)
    if report.variable.smt_name not in slice_vars:
        raise StaleState(
            f"detecting variable {report.variable.smt_name} missing from slice")
    facts = statement_facts(program, source, fn, stmt, in_header,
                            macro_values or F.DEFAULT_MACRO_VALUES)
    deps = tuple(sorted(slice_vars - {report.variable.smt_name}))
    return BugCluster(report=report, stmt=stmt, fn=fn, facts=facts,
                      detecting=report.variable, deps=deps,
                      slice=report.slice, bound=report.bound)


def select_constraint_vars(cluster: BugCluster) -> list[SymVar]:
    """The variable whose store the probe fired on; dependencies stay in the
    cluster for inspection but are not themselves re-constrained."""
    return [cluster.detecting]


def reconstrain(cluster: BugCluster, selected: Sequence[SymVar]) -> list[Formula]:
    """In-range complement of the probe for each selected variable."""
    out: list[Formula] = []
    for v in selected:
        out.append(Rel("<=", Var(v.smt_name), Const(cluster.bound.upper_value)))
        out.append(Rel(">=", Var(v.smt_name), Const(cluster.bound.lower_value)))
    return out


def build_and_check_new_system(cluster: BugCluster,
                               guard: Sequence[Formula],
                               solver: SolverContext) -> tuple[str, str]:
    """("constraint-validated" | "failed", reason).

    Two checks: with the guard added the probe must become unsatisfiable
    (the guard excludes every overflowing execution), and with the probe
    removed the guard must be satisfiable (some in-range execution still
    reaches the site — a repair that guards an impossible range is no
    repair).  Unknown verdicts fail conservatively.
    """
    with_probe = cluster.slice.copy()
    for f in guard:
        with_probe.add(GROUP_GUARD, f)
    va = solver.check(with_probe)
    if va.is_unknown:
        return "failed", f"solver unknown on guard+probe: {va.reason}"
    if va.is_sat:
        return "failed", "guard does not exclude the reported overflow"
    guard_only = cluster.slice.remove_group(GROUP_PROBE)
    for f in guard:
        guard_only.add(GROUP_GUARD, f)
    vb = solver.check(guard_only)
    if vb.is_unknown:
        return "failed", f"solver unknown on guard-only system: {vb.reason}"
    if vb.is_unsat:
        return "failed", "no in-range execution reaches the site"
    return "constraint-validated", ""


def determine_bug_type(report: BugReport,
                       known: Sequence[str] = ("IOF",)) -> str:
    problem_id = report.problem_id
    if "-" not in problem_id:
        raise UnknownChecker(problem_id)
    suffix = problem_id.rsplit("-", 1)[1]
    if suffix not in known:
        raise UnknownChecker(suffix)
    return suffix


# ---------------------------------------------------------------------------
# Instantiation


def _ceil_div(a: int, b: int) -> int:
    return -((-a) // b)


def _floor_div(a: int, b: int) -> int:
    return a // b


def guard_interval(rule: str, bound: BoundInfo,
                   const: Optional[int]) -> tuple[object, object]:
    """(value4, value5): inclusive operand bounds making the store in-range.

    Values are ints when foldable; the add rule leaves strings to the caller
    when the second operand is a variable.
    """
    upper, lower = bound.upper_value, bound.lower_value
    if rule == "square":
        root = math.isqrt(upper)
        return root, (0 if lower >= 0 else -root)
    if rule == "add":
        if const is None:
            raise UnboundPlaceholder("add rule needs the constant operand")
        return upper - const, lower - const
    if rule == "mul":
        if const is None:
            raise UnboundPlaceholder("mul rule needs the constant operand")
        if const == 0:
            raise DivisorZero("multiplication guard with zero constant")
        if const > 0:
            return _floor_div(upper, const), _ceil_div(lower, const)
        return _floor_div(lower, const), _ceil_div(upper, const)
    raise ValueError(f"unknown bounds rule {rule!r}")


def instantiate_pattern(pattern: RepairPattern, cluster: BugCluster,
                        bound: BoundInfo,
                        handler_variant: Optional[str] = None) -> tuple[str, dict]:
    """(guard text, placeholder bindings).

    The guard text is unindented; insertion re-indents it to the statement.
    For a declaration the bound statement is its assignment form — the
    declaration itself is hoisted above the guard by the insertion step.
    """
    facts = cluster.facts
    variant = handler_variant or pattern.handler_variant
    if variant not in HANDLER_CALLS:
        raise ValueError(f"unknown handler variant {variant!r}")

    if pattern.bounds_rule == "add" and facts.const_value is None:
        v4: object = f"{bound.upper_value} - ({facts.rhs_operand_text})"
        v5: object = f"{bound.lower_value} - ({facts.rhs_operand_text})"
    else:
        v4, v5 = guard_interval(pattern.bounds_rule, bound, facts.const_value)

    guarded_stmt = f"{facts.target_text} = {facts.rhs_text};"

    bindings = {
        "operand": facts.operand_text,
        "value4": str(v4),
        "value5": str(v5),
        "buggyStm10": guarded_stmt,
        "FileName": cluster.report.file,
        "IO_ID": cluster.report.problem_id,
        "LineNumber": str(cluster.report.line),
        "handler_call": HANDLER_CALLS[variant],
    }
    text = pattern.template
    text = text.replace("{handler_call}", bindings["handler_call"])
    for name in _PLACEHOLDERS:
        if name == "handler_call":
            continue
        text = text.replace("{" + name + "}", bindings[name])
    for name in _PLACEHOLDERS:
        if "{" + name + "}" in text:
            raise UnboundPlaceholder(f"placeholder {{{name}}} left unbound")
    return text, bindings


# ---------------------------------------------------------------------------
# Candidates and insertion


@dataclass
class RepairCandidate:
    candidate_id: str
    problem_ids: list[str]
    file: str
    pattern_id: str
    status: str                   # unvalidated | constraint-validated | revalidated | failed
    reason: str
    line: int
    col: int
    span: tuple[int, int]         # byte range of the replaced statement
    original_statement: str       # exact bytes being replaced
    replacement: str              # exact bytes going in (indented)
    handler_variant: str
    bindings: dict = field(default_factory=dict)
    diff: str = ""
    patched_text: str = ""        # this candidate applied alone
    guard_lines: tuple[int, int] = (0, 0)   # line range in patched_text
    repair_type: str = "in-place"
    fresh_reports: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "candidate_id": self.candidate_id,
            "problem_ids": list(self.problem_ids),
            "file": self.file,
            "pattern_id": self.pattern_id,
            "status": self.status,
            "reason": self.reason,
            "line": self.line,
            "col": self.col,
            "span": list(self.span),
            "original_statement": self.original_statement,
            "replacement": self.replacement,
            "handler_variant": self.handler_variant,
            "bindings": dict(self.bindings),
            "diff": self.diff,
            "guard_lines": list(self.guard_lines),
            "repair_type": self.repair_type,
            "fresh_reports": [r.to_dict() if hasattr(r, "to_dict") else r
                              for r in self.fresh_reports],
        }


def _indent_block(text: str, indent: str) -> str:
    lines = text.split("\n")
    return ("\n" + indent).join(lines)


def build_replacement(facts: StmtFacts, guard_text: str) -> str:
    """Replacement bytes for the statement span (first line lands in place)."""
    if facts.is_decl:
        hoist = f"{facts.decl_type_text} {facts.target_text} = 0;"
        block = hoist + "\n" + guard_text
    else:
        block = guard_text
    return _indent_block(block, facts.indent)


def unified_diff(original: str, patched: str, name: str) -> str:
    diff = difflib.unified_diff(
        original.splitlines(keepends=True), patched.splitlines(keepends=True),
        fromfile=f"a/{name}", tofile=f"b/{name}")
    return "".join(diff)


def _handler_injection(text: str, variants: Sequence[str]) -> str:
    """Handler definitions missing from the text, to prepend (may be empty)."""
    out = []
    for v in sorted(set(variants)):
        if _HANDLER_MARKERS[v] not in text:
            out.append(HANDLER_DEFS[v])
    return "\n".join(out) + ("\n" if out else "")


@dataclass
class AppliedPatch:
    patched_text: str
    diff: str
    regions: list[tuple[str, int, int]]   # (candidate_id, first line, last line)


def apply_candidates(original: str, candidates: Sequence[RepairCandidate],
                     name: str) -> AppliedPatch:
    """Splice every candidate into one patched text (statement spans must not
    overlap), injecting each needed handler definition once at the top."""
    chosen = sorted(candidates, key=lambda c: c.span[0])
    for c in chosen:
        a, b = c.span
        if original[a:b] != c.original_statement:
            raise SpanDrift(
                f"{name}:{c.line}: bytes changed since detection for "
                f"{c.candidate_id}")
    for prev, nxt in zip(chosen, chosen[1:]):
        if prev.span[1] > nxt.span[0]:
            raise SpanDrift(f"{name}: overlapping repair spans "
                            f"{prev.candidate_id} / {nxt.candidate_id}")
    header = _handler_injection(original, [c.handler_variant for c in chosen])
    out = [header]
    regions: list[tuple[str, int, int]] = []
    pos = 0
    lines_emitted = header.count("\n")   # newlines in patched text so far
    for c in chosen:
        a, b = c.span
        between = original[pos:a]
        out.append(between)
        lines_emitted += between.count("\n")
        first = lines_emitted + 1
        out.append(c.replacement)
        lines_emitted += c.replacement.count("\n")
        regions.append((c.candidate_id, first, lines_emitted + 1))
        pos = b
    out.append(original[pos:])
    patched = "".join(out)
    return AppliedPatch(patched, unified_diff(original, patched, name), regions)


# ---------------------------------------------------------------------------
# End-to-end generation and revalidation


@dataclass
class RepairConfig:
    pattern_pool: Optional[str] = None
    handler_variant: Optional[str] = None   # None → pattern default
    solver_config: Optional[SolverConfig] = None


def generate_candidates(run: DetectionRun,
                        config: Optional[RepairConfig] = None,
                        name: Optional[str] = None) -> list[RepairCandidate]:
    """One candidate per reported site, in source order.

    Reports that share a statement (an over and an under arm) collapse into a
    single candidate: the guard constrains both directions at once.  Failures
    at any stage produce a `failed` candidate carrying the reason instead of
    silently dropping the report.
    """
    cfg = config or RepairConfig()
    pool = load_pattern_pool(cfg.pattern_pool)
    file_name = name or (run.reports[0].file if run.reports else "<input>")
    solver = SolverContext(cfg.solver_config or SolverConfig())
    by_site: dict[tuple[int, int], list[BugReport]] = {}
    for r in sorted(run.reports, key=lambda r: (r.line, r.col, r.problem_id)):
        by_site.setdefault((r.line, r.col), []).append(r)

    candidates: list[RepairCandidate] = []
    try:
        for (line, col), reports in sorted(by_site.items()):
            lead = reports[0]
            cand = RepairCandidate(
                candidate_id=f"{lead.problem_id}-repair",
                problem_ids=[r.problem_id for r in reports],
                file=lead.file, pattern_id="", status="unvalidated", reason="",
                line=line, col=col, span=(0, 0), original_statement="",
                replacement="", handler_variant="")
            try:
                determine_bug_type(lead)
                cluster = cluster_bug(lead, run.program, run.source,
                                      run.macro_values)
                selected = select_constraint_vars(cluster)
                guard = reconstrain(cluster, selected)
                status, reason = build_and_check_new_system(cluster, guard,
                                                            solver)
                if status != "constraint-validated":
                    cand.status, cand.reason = "failed", reason
                    candidates.append(cand)
                    continue
                pattern = select_pattern(cluster.facts, pool)
                variant = cfg.handler_variant or pattern.handler_variant
                guard_text, bindings = instantiate_pattern(
                    pattern, cluster, cluster.bound, variant)
                span = span_offsets(run.source, cluster.stmt.span)
                replacement = build_replacement(cluster.facts, guard_text)
                header = _handler_injection(run.source, [variant])
                patched = (header + run.source[:span[0]] + replacement
                           + run.source[span[1]:])
                first = (header.count("\n")
                         + run.source[:span[0]].count("\n") + 1)
                cand.pattern_id = pattern.pattern_id
                cand.span = span
                cand.original_statement = run.source[span[0]:span[1]]
                cand.replacement = replacement
                cand.handler_variant = variant
                cand.bindings = bindings
                cand.patched_text = patched
                cand.diff = unified_diff(run.source, patched, file_name)
                cand.guard_lines = (first, first + replacement.count("\n"))
                cand.status = "constraint-validated"
            except RepairError as exc:
                cand.status, cand.reason = "failed", str(exc)
            except DivisorZero as exc:
                cand.status, cand.reason = "failed", str(exc)
            candidates.append(cand)
    finally:
        solver.close()
    return candidates


@dataclass
class RevalidationOutcome:
    patched_text: str
    diff: str
    fresh_run: DetectionRun
    new_sites: list            # fresh reports not inside any guard region
    statuses: dict             # candidate_id -> "revalidated" | "failed"


def revalidate(run: DetectionRun, candidates: Sequence[RepairCandidate],
               name: str = "<input>", *, limits_path: Optional[str] = None,
               cfg_config=None, solver_config=None, roots=None,
               workers: int = 1) -> RevalidationOutcome:
    """Apply the validated candidates, re-analyze, and settle each status.

    A candidate is revalidated exactly when the fresh analysis reports nothing
    inside its guard block; anything else there (including the hoisted
    declaration) fails it with the fresh reports attached.  Reports outside
    every guard region are returned as new sites for the caller to compare
    against the pre-repair picture.
    """
    applicable = [c for c in candidates if c.status == "constraint-validated"]
    applied = apply_candidates(run.source, applicable, name)
    fresh = analyze_source(applied.patched_text, name,
                           cfg_config=cfg_config, solver_config=solver_config,
                           limits_path=limits_path, roots=roots,
                           workers=workers)
    statuses: dict[str, str] = {}
    new_sites = []
    regions = {cid: (a, b) for cid, a, b in applied.regions}
    for c in applicable:
        a, b = regions[c.candidate_id]
        if fresh.aborted_roots:
            # An aborted walk proves nothing about the guard region.
            c.status = "failed"
            c.reason = ("re-analysis incomplete: root(s) "
                        + ", ".join(fresh.aborted_roots) + " aborted")
            statuses[c.candidate_id] = "failed"
            continue
        inside = [r for r in fresh.reports if a <= r.line <= b]
        if inside:
            c.status = "failed"
            c.reason = "re-analysis still reports inside the guard"
            c.fresh_reports = inside
            statuses[c.candidate_id] = "failed"
        else:
            c.status = "revalidated"
            statuses[c.candidate_id] = "revalidated"
    covered = set()
    for cid, a, b in applied.regions:
        covered.update(range(a, b + 1))
    for r in fresh.reports:
        if r.line not in covered:
            new_sites.append(r)
    return RevalidationOutcome(applied.patched_text, applied.diff, fresh,
                               new_sites, statuses)
