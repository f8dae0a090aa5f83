"""Symbolic interpretation of program paths.

The analyzer walks every enumerated path of a control-flow unit and keeps one
PathState per walk: an SSA symbolic store plus the ordered, group-tagged
constraint list for the path so far.  Statements translate bottom-up into
definition constraints over mathematical integers (no wrapping — out-of-range
values are what checkers probe for).  Branches add path conditions in
conjunctive normal form and are validated against the solver; infeasible
branches prune the walk.  Calls to functions defined in the file were already
inlined by the walker; calls without a definition go through registered
function summaries.

Registered checkers are notified at every assignment site with read access to
the state and its slicing facility.  Slices are connected components of the
constraint-variable graph: every constraint transitively linked to the queried
variable through shared variables, which keeps solver queries small and their
verdicts equal to the full system's.

State mutations are journaled so the depth-first walker can undo them when it
backtracks, which keeps one path's constraints from ever leaking into a
sibling path.
"""

from __future__ import annotations

import sys
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol, Sequence

from . import frontend as F
from .cfg import (
    CallDepthExceeded, CfgConfig, CfgUnit, PathListener, PathStep, walk_paths,
)
from .constraints import (
    Assertion, BinTerm, Const, ConstraintSystem, Formula, GROUP_DEFINITION,
    GROUP_PATH, Ite, Neg, OrRel, Rel, AndRel, SolverConfig, SolverContext,
    Term, Var, Verdict, formula_vars,
)
from .intsolve import INF, formula_interval_status, term_interval

Iv = tuple[int, int]


class UnsupportedExpression(Exception):
    def __init__(self, span: Optional[F.Span], message: str):
        super().__init__(message)
        self.span = span
        self.message = message


class UnknownSymVar(Exception):
    pass


class MissingSummary(Exception):
    def __init__(self, name: str):
        super().__init__(f"no function summary registered for {name!r}")
        self.name = name


@dataclass(frozen=True)
class SymVar:
    """One SSA incarnation of a program variable."""

    base: str
    index: int
    kind: F.IntKind
    constraint_id: Optional[int] = None

    @property
    def smt_name(self) -> str:
        return smt_name(self.base, self.index)


def smt_name(base: str, index: int) -> str:
    """Solver-level name for an SSA incarnation.

    Plain concatenation unless the base ends in a digit or underscore, where a
    separator keeps distinct (base, index) pairs from colliding.
    """
    if base and base[-1] in "0123456789_":
        return f"{base}_{index}"
    return f"{base}{index}"


# ---------------------------------------------------------------------------
# Function summaries


@dataclass
class FunctionSummary:
    """Model of a function that has no definition in the analyzed file.

    ``make_return`` may produce a term the return value is equated to; when it
    is None the call returns a fresh unconstrained value of ``return_kind``.
    Summaries never touch existing constraints.
    """

    name: str
    return_kind: str = "int"
    make_return: Optional[Callable[["PathState", F.Call], Term]] = None


class SummaryRegistry:
    def __init__(self) -> None:
        self._by_name: dict[str, FunctionSummary] = {}

    def register(self, summary: FunctionSummary) -> None:
        self._by_name[summary.name] = summary

    def get(self, name: str) -> FunctionSummary:
        try:
            return self._by_name[name]
        except KeyError:
            raise MissingSummary(name) from None

    def __contains__(self, name: str) -> bool:
        return name in self._by_name


def default_summaries() -> SummaryRegistry:
    """Environment models: random sources and I/O return fresh values.

    Writes through pointer arguments (fscanf outputs, memcpy destinations) need
    no extra constraints because every pointer read already produces a fresh
    unconstrained value.
    """
    reg = SummaryRegistry()
    for name, kind in F.EXTERNAL_RETURN_KINDS.items():
        reg.register(FunctionSummary(name, kind))
    return reg


# ---------------------------------------------------------------------------
# Path state


_NEG_REL = {"=": "!=", "!=": "=", "<": ">=", "<=": ">", ">": "<=", ">=": "<"}
_CMP_TO_REL = {"==": "=", "!=": "!=", "<": "<", "<=": "<=", ">": ">", ">=": ">="}


class PathState:
    """SSA store plus ordered constraints for one path under construction.

    All mutation goes through a journal; ``mark``/``undo_to`` give the walker
    snapshot-free backtracking.  A union-find over variable names maintains
    the constraint components that back ``slice_for``.
    """

    def __init__(self, program: F.Program, macro_values: dict[str, int],
                 summaries: SummaryRegistry):
        self.program = program
        self.macro_values = macro_values
        self.summaries = summaries
        self.store: dict[str, SymVar] = {}
        self.assertions: list[Assertion] = []
        self.intervals: dict[str, Iv] = {}
        self.const_false = 0  # unchecked constant-false path conditions
        self._journal: list[tuple] = []
        self._parent: dict[str, str] = {}
        self._rank: dict[str, int] = {}
        self._comp: dict[str, list[int]] = {}
        self._fresh_serial = 0
        self._locals: dict[str, dict[str, F.TypeRef]] = {}
        self._global_types: dict[str, F.DeclStmt] = {g.name: g for g in program.globals}
        for fn in program.funcs:
            table: dict[str, F.TypeRef] = {p.name: p.type_ref for p in fn.params}
            _collect_decls(fn.body, table)
            self._locals[fn.name] = table

    # -- journal ----------------------------------------------------------

    def mark(self) -> int:
        return len(self._journal)

    def undo_to(self, mark: int) -> None:
        j = self._journal
        while len(j) > mark:
            op = j.pop()
            tag = op[0]
            if tag == "store":
                _, base, old = op
                if old is None:
                    del self.store[base]
                else:
                    self.store[base] = old
            elif tag == "assert":
                self.assertions.pop()
            elif tag == "iv":
                _, name, old = op
                if old is None:
                    self.intervals.pop(name, None)
                else:
                    self.intervals[name] = old
            elif tag == "ufadd":
                _, v = op
                del self._parent[v]
                del self._rank[v]
                del self._comp[v]
            elif tag == "union":
                _, child, bumped = op
                self._parent[child] = child
                if bumped is not None:
                    self._rank[bumped] -= 1
            elif tag == "comp":
                _, root, old_len = op
                del self._comp[root][old_len:]
            elif tag == "serial":
                self._fresh_serial -= 1
            elif tag == "cfalse":
                self.const_false -= 1
            else:  # pragma: no cover - journal tags are closed
                raise AssertionError(tag)

    # -- union-find over variable names ------------------------------------

    def _uf_add(self, v: str) -> None:
        if v not in self._parent:
            self._parent[v] = v
            self._rank[v] = 0
            self._comp[v] = []
            self._journal.append(("ufadd", v))

    def _uf_find(self, v: str) -> str:
        p = self._parent
        while p[v] != v:
            v = p[v]
        return v

    def _uf_union(self, a: str, b: str) -> str:
        ra, rb = self._uf_find(a), self._uf_find(b)
        if ra == rb:
            return ra
        if self._rank[ra] < self._rank[rb]:
            ra, rb = rb, ra
        bumped = None
        if self._rank[ra] == self._rank[rb]:
            self._rank[ra] += 1
            bumped = ra
        self._parent[rb] = ra
        self._journal.append(("union", rb, bumped))
        self._journal.append(("comp", ra, len(self._comp[ra])))
        self._comp[ra].extend(self._comp[rb])
        return ra

    # -- constraints --------------------------------------------------------

    def add_formula(self, group: str, formula: Formula) -> int:
        """Append one tagged constraint; returns its id (position)."""
        idx = len(self.assertions)
        self.assertions.append(Assertion(group, formula))
        self._journal.append(("assert",))
        names = sorted(formula_vars(formula))
        if names:
            for v in names:
                self._uf_add(v)
            root = self._uf_find(names[0])
            for v in names[1:]:
                root = self._uf_union(root, v)
            self._journal.append(("comp", root, len(self._comp[root])))
            self._comp[root].append(idx)
        return idx

    def current(self, base: str) -> Optional[SymVar]:
        return self.store.get(base)

    def _set_store(self, base: str, sym: SymVar) -> None:
        self._journal.append(("store", base, self.store.get(base)))
        self.store[base] = sym

    def _set_interval(self, name: str, iv: Iv) -> None:
        self._journal.append(("iv", name, self.intervals.get(name)))
        self.intervals[name] = iv

    def new_version(self, base: str, kind: F.IntKind) -> SymVar:
        old = self.store.get(base)
        index = old.index + 1 if old is not None else 0
        sym = SymVar(base, index, kind)
        self._set_store(base, sym)
        return sym

    def define(self, base: str, kind: F.IntKind, term: Term,
               group: str = GROUP_DEFINITION) -> SymVar:
        """Fresh SSA incarnation of base equated to term."""
        sym = self.new_version(base, kind)
        cid = self.add_formula(group, Rel("=", Var(sym.smt_name), term))
        sym = SymVar(sym.base, sym.index, sym.kind, cid)
        self._set_store(base, sym)
        iv = term_interval(term, self.intervals) or (-INF, INF)
        self._set_interval(sym.smt_name, iv)
        return sym

    def fresh_input(self, base: str, kind: F.IntKind) -> SymVar:
        """Fresh unconstrained value of the kind, range-bounded to the kind."""
        sym = self.new_version(base, kind)
        name = Var(sym.smt_name)
        self.add_formula(GROUP_DEFINITION, Rel(">=", name, Const(kind.min_value)))
        self.add_formula(GROUP_DEFINITION, Rel("<=", name, Const(kind.max_value)))
        self._set_interval(sym.smt_name, (kind.min_value, kind.max_value))
        return sym

    def fresh_anonymous(self, tag: str, kind: F.IntKind) -> SymVar:
        """Fresh input not tied to a stored program variable (deref, summary)."""
        self._fresh_serial += 1
        self._journal.append(("serial",))
        base = f"$in.{tag}.{self._fresh_serial}"
        sym = SymVar(base, 0, kind)
        name = Var(sym.smt_name)
        self.add_formula(GROUP_DEFINITION, Rel(">=", name, Const(kind.min_value)))
        self.add_formula(GROUP_DEFINITION, Rel("<=", name, Const(kind.max_value)))
        self._set_interval(sym.smt_name, (kind.min_value, kind.max_value))
        return sym

    def note_const_false(self) -> None:
        self.const_false += 1
        self._journal.append(("cfalse",))

    # -- slicing ------------------------------------------------------------

    def slice_for(self, var: "SymVar | str") -> ConstraintSystem:
        """Constraints transitively connected to var through shared variables."""
        name = var.smt_name if isinstance(var, SymVar) else var
        if name not in self._parent:
            raise UnknownSymVar(name)
        return self._system_for_roots([self._uf_find(name)])

    def slice_for_names(self, names: Sequence[str]) -> ConstraintSystem:
        roots: list[str] = []
        for n in names:
            if n not in self._parent:
                raise UnknownSymVar(n)
            r = self._uf_find(n)
            if r not in roots:
                roots.append(r)
        return self._system_for_roots(roots)

    def _system_for_roots(self, roots: list[str]) -> ConstraintSystem:
        idxs: list[int] = []
        for r in roots:
            idxs.extend(self._comp[r])
        cs = ConstraintSystem()
        for i in sorted(set(idxs)):
            a = self.assertions[i]
            cs.add(a.group, a.formula)
        return cs

    def full_system(self) -> ConstraintSystem:
        cs = ConstraintSystem()
        for a in self.assertions:
            cs.add(a.group, a.formula)
        return cs

    # -- name resolution ----------------------------------------------------

    def base_name(self, fn: str, ident: str) -> str:
        if ident in self._locals.get(fn, ()):
            return f"{fn}.{ident}"
        return ident

    def type_of(self, fn: str, ident: str) -> Optional[F.TypeRef]:
        tr = self._locals.get(fn, {}).get(ident)
        if tr is not None:
            return tr
        g = self._global_types.get(ident)
        return g.type_ref if g is not None else None


def _collect_decls(block: F.Block, table: dict[str, F.TypeRef]) -> None:
    for s in block.stmts:
        if isinstance(s, F.DeclStmt):
            table.setdefault(s.name, s.type_ref)
        elif isinstance(s, F.Block):
            _collect_decls(s, table)
        elif isinstance(s, F.IfStmt):
            _collect_decls(s.then, table)
            if s.els is not None:
                _collect_decls(s.els, table)
        elif isinstance(s, F.WhileStmt):
            _collect_decls(s.body, table)
        elif isinstance(s, F.ForStmt):
            if isinstance(s.init, F.DeclStmt):
                table.setdefault(s.init.name, s.init.type_ref)
            _collect_decls(s.body, table)


# ---------------------------------------------------------------------------
# Expression translation


def _kind_or_int(kind: Optional[F.IntKind]) -> F.IntKind:
    return kind if kind is not None else F.KINDS["int"]


class Translator:
    """Bottom-up expression-to-term translation in one function's context."""

    def __init__(self, state: PathState, fn: str):
        self.state = state
        self.fn = fn

    # -- variables ----------------------------------------------------------

    def read_var(self, base: str, kind: F.IntKind, init: Optional[F.Expr] = None) -> SymVar:
        sym = self.state.current(base)
        if sym is not None:
            return sym
        # First read: globals materialize their initializer (default zero);
        # locals read before their declaration executes also read as zero.
        if init is not None:
            return self.state.define(base, kind, self.term(init))
        return self.state.define(base, kind, Const(0))

    def _name_sym(self, e: F.Name) -> SymVar:
        base = self.state.base_name(self.fn, e.ident)
        tr = self.state.type_of(self.fn, e.ident)
        if tr is None:
            raise UnsupportedExpression(e.span, f"undeclared identifier {e.ident!r}")
        if tr.stars > 0:
            return self.read_var(base, F.KINDS["int64"])
        if tr.is_struct:
            raise UnsupportedExpression(e.span, f"struct {e.ident!r} used as a scalar")
        init = None
        if base == e.ident:
            g = self.state._global_types.get(e.ident)
            init = g.init if g is not None else None
        return self.read_var(base, _kind_or_int(tr.kind), init)

    def _member_sym(self, e: F.Member) -> SymVar:
        base_var = self.state.base_name(self.fn, e.base)
        tr = self.state.type_of(self.fn, e.base)
        if tr is None or not tr.is_struct:
            raise UnsupportedExpression(e.span, f"{e.base!r} is not a struct")
        kind = e.kind or F.resolve_field_type(self.state.program, tr.base, e.path)
        flat = ".".join((base_var,) + e.path)
        return self.read_var(flat, kind)

    def lvalue_target(self, e: F.Expr) -> Optional[tuple[str, F.IntKind]]:
        """(base, kind) for a storable target; None for pointer stores.

        Pure resolution: a first-touch assignment must not materialize a
        zero-valued incarnation the way a first read does.
        """
        if isinstance(e, F.Name):
            base = self.state.base_name(self.fn, e.ident)
            tr = self.state.type_of(self.fn, e.ident)
            if tr is None:
                raise UnsupportedExpression(e.span, f"undeclared identifier {e.ident!r}")
            if tr.stars > 0:
                return base, F.KINDS["int64"]
            if tr.is_struct:
                raise UnsupportedExpression(e.span, f"struct {e.ident!r} used as a scalar")
            return base, _kind_or_int(tr.kind)
        if isinstance(e, F.Member):
            base_var = self.state.base_name(self.fn, e.base)
            tr = self.state.type_of(self.fn, e.base)
            if tr is None or not tr.is_struct:
                raise UnsupportedExpression(e.span, f"{e.base!r} is not a struct")
            kind = e.kind or F.resolve_field_type(self.state.program, tr.base, e.path)
            return ".".join((base_var,) + e.path), kind
        if isinstance(e, F.Deref):
            return None  # stores through pointers leave the integer store alone
        raise UnsupportedExpression(e.span, "assignment target not supported")

    # -- terms --------------------------------------------------------------

    def term(self, e: F.Expr) -> Term:
        if isinstance(e, F.IntLit):
            return Const(e.value)
        if isinstance(e, F.MacroRef):
            value = self.state.macro_values.get(e.macro)
            if value is None:
                raise UnsupportedExpression(e.span, f"unknown macro {e.macro!r}")
            return Const(value)
        if isinstance(e, F.StrLit):
            return Var(self.state.fresh_anonymous("str", F.KINDS["int64"]).smt_name)
        if isinstance(e, F.Name):
            return Var(self._name_sym(e).smt_name)
        if isinstance(e, F.Member):
            return Var(self._member_sym(e).smt_name)
        if isinstance(e, F.Deref):
            tr = self.state.type_of(self.fn, e.ident)
            if tr is None or tr.stars == 0:
                raise UnsupportedExpression(e.span, f"cannot dereference {e.ident!r}")
            kind = _kind_or_int(tr.kind) if tr.stars == 1 else F.KINDS["int64"]
            return Var(self.state.fresh_anonymous("deref." + e.ident, kind).smt_name)
        if isinstance(e, F.Unary):
            if e.op == "-":
                return Neg(self.term(e.operand))
            if e.op == "!":
                return Ite(self.formula(e.operand, False), Const(1), Const(0))
            raise UnsupportedExpression(e.span, f"unary {e.op!r} not supported")
        if isinstance(e, F.Binary):
            if e.op in ("+", "-", "*", "/"):
                lhs = self.term(e.lhs)
                rhs = self.term(e.rhs)
                if e.op == "/":
                    self.state.add_formula(GROUP_PATH, Rel("!=", rhs, Const(0)))
                return BinTerm(e.op, lhs, rhs)
            if e.op in _CMP_TO_REL or e.op in ("&&", "||"):
                return Ite(self.formula(e, True), Const(1), Const(0))
            raise UnsupportedExpression(e.span, f"operator {e.op!r} not supported")
        if isinstance(e, F.Call):
            # Calls to defined functions were hoisted and inlined before this.
            return Var(apply_summary(e, self.state, self.fn).smt_name)
        raise UnsupportedExpression(e.span, f"expression {type(e).__name__} not supported")

    # -- conditions ---------------------------------------------------------

    def formula(self, e: F.Expr, taken: bool) -> Formula:
        """Condition (or its negation) in negation normal form."""
        if isinstance(e, F.Unary) and e.op == "!":
            return self.formula(e.operand, not taken)
        if isinstance(e, F.Binary) and e.op in ("&&", "||"):
            both_and = (e.op == "&&") == taken
            parts = (self.formula(e.lhs, taken), self.formula(e.rhs, taken))
            return AndRel(parts) if both_and else OrRel(parts)
        if isinstance(e, F.Binary) and e.op in _CMP_TO_REL:
            op = _CMP_TO_REL[e.op]
            if not taken:
                op = _NEG_REL[op]
            return Rel(op, self.term(e.lhs), self.term(e.rhs))
        value = self.term(e)
        return Rel("!=" if taken else "=", value, Const(0))


def cnf_clauses(f: Formula) -> list[Formula]:
    """Clauses (atoms or disjunctions of atoms) of an NNF formula."""
    if isinstance(f, Rel):
        return [f]
    if isinstance(f, AndRel):
        out: list[Formula] = []
        for p in f.parts:
            out.extend(cnf_clauses(p))
        return out
    if isinstance(f, OrRel):
        product: list[list[Formula]] = [[]]
        for p in f.parts:
            branch_clauses = cnf_clauses(p)
            product = [acc + [c] for acc in product for c in branch_clauses]
        out = []
        for combo in product:
            atoms: list[Formula] = []
            for c in combo:
                if isinstance(c, OrRel):
                    atoms.extend(c.parts)
                else:
                    atoms.append(c)
            out.append(atoms[0] if len(atoms) == 1 else OrRel(tuple(atoms)))
        return out
    raise TypeError(type(f).__name__)


# ---------------------------------------------------------------------------
# Spec-level operations


def encode_statement(stmt: F.Stmt, state: PathState, fn: str) -> Optional[SymVar]:
    """Translate one statement; returns the SymVar it defines, if any."""
    tr = Translator(state, fn)
    if isinstance(stmt, F.DeclStmt):
        if stmt.type_ref.is_struct and stmt.init is None:
            return None  # member slots materialize lazily as zero
        if stmt.type_ref.stars > 0 and stmt.init is None:
            return None
        kind = F.KINDS["int64"] if stmt.type_ref.stars > 0 else _kind_or_int(stmt.type_ref.kind)
        term = tr.term(stmt.init) if stmt.init is not None else Const(0)
        return state.define(state.base_name(fn, stmt.name), kind, term)
    if isinstance(stmt, F.AssignStmt):
        target = tr.lvalue_target(stmt.target)
        term = tr.term(stmt.value)
        if target is None:
            return None
        base, kind = target
        return state.define(base, kind, term)
    if isinstance(stmt, F.ReturnStmt):
        fdef = state.program.func(fn)
        kind = _kind_or_int(fdef.ret.kind if fdef is not None else None)
        term = tr.term(stmt.value) if stmt.value is not None else Const(0)
        return state.define(f"{fn}.$ret", kind, term)
    if isinstance(stmt, F.ExprStmt):
        tr.term(stmt.expr)  # effects only (summary application, divisor conditions)
        return None
    raise UnsupportedExpression(stmt.span, f"statement {type(stmt).__name__} not supported")


def apply_summary(call: F.Call, state: PathState, fn: str) -> SymVar:
    """Instantiate the registered summary for an external call."""
    summary = state.summaries.get(call.callee)
    tr = Translator(state, fn)
    for arg in call.args:
        tr.term(arg)  # argument evaluation still contributes divisor conditions
    if summary.make_return is not None:
        term = summary.make_return(state, call)
        kind = F.KINDS.get(summary.return_kind, F.KINDS["int"])
        self_base = f"$in.{call.callee}.ret"
        return state.define(self_base, kind, term)
    kind = F.KINDS.get(summary.return_kind, F.KINDS["int"])
    return state.fresh_anonymous(call.callee, kind)


def validate_branch(state: PathState, condition: F.Expr, taken: bool, fn: str,
                    solver: SolverContext, checked: bool = True) -> bool:
    """Add the branch condition; False when the path became infeasible.

    Each CNF clause is first decided against the running interval enclosures;
    only genuinely undecided clauses reach the solver, queried on the slice of
    the constraints connected to the clause's variables.
    """
    tr = Translator(state, fn)
    clauses = cnf_clauses(tr.formula(condition, taken))
    need_check: list[Formula] = []
    for clause in clauses:
        names = formula_vars(clause)
        if not names:
            ok = formula_interval_status(clause, {})
            if ok is True:
                continue
            if checked:
                return False
            state.note_const_false()
            continue
        status = formula_interval_status(clause, {n: state.intervals.get(n, (-INF, INF))
                                                  for n in names})
        if status is False and checked:
            return False
        state.add_formula(GROUP_PATH, clause)
        if checked and status is not True:
            need_check.append(clause)
    if not checked or not need_check:
        return not checked or state.const_false == 0
    if state.const_false > 0:
        return False
    roots: list[str] = []
    for clause in need_check:
        for n in sorted(formula_vars(clause)):
            r = state._uf_find(n)
            if r not in roots:
                roots.append(r)
    for r in roots:
        verdict = solver.check(state._system_for_roots([r]))
        if verdict.is_unsat:
            return False
    return True


# ---------------------------------------------------------------------------
# Checker interface


@dataclass
class SiteInfo:
    """Context handed to checkers at an assignment site."""

    fn: str
    stmt: F.Stmt
    span: F.Span
    target: SymVar
    rhs: Term
    path_seq: int
    site_seq: int
    decisions: tuple[bool, ...]


class Checker(Protocol):
    checker_id: str

    def on_site(self, state: PathState, site: SiteInfo, solver: SolverContext) -> list:
        ...


@dataclass
class AnalysisResult:
    reports: list
    paths: int = 0
    pruned: int = 0
    sites: int = 0
    diagnostics: list[F.Diagnostic] = field(default_factory=list)
    aborted_roots: list[str] = field(default_factory=list)
    solver_queries: int = 0
    solver_cache_hits: int = 0
    elapsed_s: float = 0.0
    per_root_paths: dict[str, int] = field(default_factory=dict)


class _PathWalk(PathListener):
    """Bridges the CFG walker to one PathState, checkers, and the solver."""

    def __init__(self, analyzer: "Analyzer", state: PathState, root: str,
                 sink: list, diags: list[F.Diagnostic]):
        self.an = analyzer
        self.state = state
        self.root = root
        self.sink = sink
        self.diags = diags
        self.paths = 0
        self.pruned = 0
        self.sites = 0
        self._stack: list[tuple[int, int]] = []  # (journal mark, decision depth)
        self._decisions: list[bool] = []
        self._site_seq = 0

    def _fail_path(self, mark: int, span: Optional[F.Span], message: str) -> bool:
        self.state.undo_to(mark)
        self.pruned += 1
        diag = F.Diagnostic(message, span.start_line if span else 0,
                            span.start_col if span else 0, "note")
        if diag not in self.diags:
            self.diags.append(diag)
        return False

    def enter_step(self, step: PathStep) -> bool:
        state = self.state
        mark = state.mark()
        depth = len(self._decisions)
        try:
            if step.kind == "stmt":
                defined = encode_statement(step.stmt, state, step.fn)
                if defined is not None and isinstance(step.stmt, (F.DeclStmt, F.AssignStmt)):
                    self._notify(step.fn, step.stmt, defined)
            elif step.kind == "branch":
                feasible = validate_branch(state, step.cond, step.decision, step.fn,
                                           self.an.solver, checked=step.checked)
                if not feasible:
                    state.undo_to(mark)
                    self.pruned += 1
                    return False
                self._decisions.append(step.decision)
            elif step.kind == "enter":
                ret_kind = _kind_or_int(state.program.func(step.callee).ret.kind)
                state.define(f"{step.callee}.$ret", ret_kind, Const(0))
            elif step.kind == "bind-param":
                callee_fn = step.fn
                tr = Translator(state, step.caller)
                term = tr.term(step.arg) if step.arg is not None else Const(0)
                ptype = state._locals[callee_fn][step.param]
                kind = F.KINDS["int64"] if ptype.stars > 0 else _kind_or_int(ptype.kind)
                state.define(f"{callee_fn}.{step.param}", kind, term)
            elif step.kind == "bind-ret":
                ret = state.current(f"{step.callee}.$ret")
                tr = Translator(state, step.fn)
                target = tr.lvalue_target(step.target)
                if target is not None and ret is not None:
                    base, kind = target
                    defined = state.define(base, kind, Var(ret.smt_name))
                    if isinstance(step.stmt, (F.DeclStmt, F.AssignStmt)):
                        self._notify(step.fn, step.stmt, defined)
            # "leave": nothing to do entering it; undo happens on leave_step
        except UnsupportedExpression as exc:
            return self._fail_path(mark, exc.span, f"path abandoned: {exc.message}")
        except MissingSummary as exc:
            span = step.stmt.span if step.stmt is not None else None
            return self._fail_path(mark, span, f"path abandoned: {exc}")
        self._stack.append((mark, depth))
        return True

    def leave_step(self, step: PathStep) -> None:
        mark, depth = self._stack.pop()
        del self._decisions[depth:]
        self.state.undo_to(mark)

    def end_path(self) -> None:
        self.paths += 1
        if self.an.dump_writer is not None:
            from .constraints import emit_smtlib

            self.an.dump_writer(self.root, self.paths - 1,
                                emit_smtlib(self.state.full_system()))

    def _notify(self, fn: str, stmt: F.Stmt, defined: SymVar) -> None:
        self.sites += 1
        if self.state.const_false > 0:
            return  # beyond an unconditionally false exit nothing executes
        self._site_seq += 1
        site = SiteInfo(fn, stmt, stmt.span, defined,
                        self._rhs_term(defined), self.paths, self._site_seq,
                        tuple(self._decisions))
        for checker in self.an.checkers:
            reports = checker.on_site(self.state, site, self.an.solver)
            for r in reports:
                self.sink.append(r)

    def _rhs_term(self, defined: SymVar) -> Term:
        if defined.constraint_id is not None:
            formula = self.state.assertions[defined.constraint_id].formula
            if isinstance(formula, Rel) and formula.op == "=":
                return formula.rhs
        return Var(defined.smt_name)


class Analyzer:
    """Runs every registered checker over every path of every root function."""

    def __init__(self, unit: CfgUnit,
                 cfg_config: Optional[CfgConfig] = None,
                 solver_config: Optional[SolverConfig] = None,
                 checkers: Optional[Sequence[Checker]] = None,
                 summaries: Optional[SummaryRegistry] = None,
                 macro_values: Optional[dict[str, int]] = None,
                 roots: Optional[Sequence[str]] = None,
                 workers: int = 1,
                 dump_writer: Optional[Callable[[str, int, str], None]] = None):
        self.unit = unit
        self.cfg_config = cfg_config or CfgConfig()
        self.solver = SolverContext(solver_config)
        self._solver_lock = threading.Lock()
        self.checkers = list(checkers or [])
        self.summaries = summaries or default_summaries()
        self.macro_values = dict(F.DEFAULT_MACRO_VALUES)
        if macro_values:
            self.macro_values.update(macro_values)
        self.roots = list(roots) if roots is not None else self.unit.roots()
        self.workers = max(1, workers)
        self.dump_writer = dump_writer
        check = self.solver.check

        def locked_check(system: ConstraintSystem) -> Verdict:
            with self._solver_lock:
                return check(system)

        self.solver.check = locked_check  # type: ignore[method-assign]

    def run(self) -> AnalysisResult:
        t0 = time.monotonic()
        old_limit = sys.getrecursionlimit()
        sys.setrecursionlimit(max(old_limit, 100_000))
        result = AnalysisResult(reports=[])
        slots: list[Optional[tuple[list, list, _PathWalk]]] = [None] * len(self.roots)
        try:
            if self.workers == 1 or len(self.roots) <= 1:
                for i, root in enumerate(self.roots):
                    slots[i] = self._run_root(root)
            else:
                from concurrent.futures import ThreadPoolExecutor

                with ThreadPoolExecutor(max_workers=self.workers) as pool:
                    for i, got in enumerate(pool.map(self._run_root, self.roots)):
                        slots[i] = got
        finally:
            sys.setrecursionlimit(old_limit)
        for i, root in enumerate(self.roots):
            got = slots[i]
            if got is None:
                continue
            sink, diags, walk = got
            result.reports.extend(sink)
            for d in diags:
                if d not in result.diagnostics:
                    result.diagnostics.append(d)
            if walk is None:
                result.aborted_roots.append(root)
            else:
                result.paths += walk.paths
                result.pruned += walk.pruned
                result.sites += walk.sites
                result.per_root_paths[root] = walk.paths
        result.solver_queries = self.solver.queries
        result.solver_cache_hits = self.solver.cache_hits
        result.elapsed_s = time.monotonic() - t0
        return result

    def _run_root(self, root: str):
        state = PathState(self.unit.program, self.macro_values, self.summaries)
        fdef = self.unit.program.func(root)
        if fdef is not None:
            for p in fdef.params:
                kind = F.KINDS["int64"] if p.type_ref.stars > 0 else _kind_or_int(p.type_ref.kind)
                state.fresh_input(f"{root}.{p.name}", kind)
        sink: list = []
        diags: list[F.Diagnostic] = []
        walk = _PathWalk(self, state, root, sink, diags)
        try:
            walk_paths(self.unit, root, self.cfg_config, walk)
        except CallDepthExceeded as exc:
            diags.append(F.Diagnostic(
                f"call depth {exc.depth} exceeded inlining {exc.callee} from {exc.fn}",
                0, 0, "error"))
            return sink, diags, None
        return sink, diags, walk

    def close(self) -> None:
        self.solver.close()
