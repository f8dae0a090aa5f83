"""Concrete execution of subset programs over mathematical integers.

This interpreter is the ground-truth oracle the symbolic pipeline is tested
against: it mirrors the symbolic semantics exactly — unbounded integers (a
store can hold an out-of-range value; that is precisely what gets recorded as
an overflow event), locals and globals default to zero, a function falling off
its end returns zero, division truncates toward zero and traps on a zero
divisor, reads through pointers and calls without a definition consume values
from a caller-supplied input queue in evaluation order, and boolean operators
evaluate both operands (the subset is side-effect-free, so short-circuiting
is unobservable except through traps, which the test generators avoid inside
conditions).

When a bound is supplied, every store into a declared integer variable is
checked against [lower, upper] and out-of-range stores are recorded as events
with the source position — the exhaustive-enumeration counterpart of the
symbolic checker's probe.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional, Sequence

from . import frontend as F
from .constraints import trunc_div
from .overflow import BoundInfo
from .symexec import smt_name


class Trap(Exception):
    """Execution cannot continue (zero divisor, runaway loop, deep recursion)."""

    def __init__(self, kind: str, span: Optional[F.Span] = None):
        super().__init__(kind)
        self.kind = kind
        self.span = span


class _Return(Exception):
    def __init__(self, value: int):
        self.value = value


@dataclass
class OverflowEvent:
    file: str
    line: int
    col: int
    base: str
    value: int
    disjunct: str  # "over" | "under"

    @property
    def site(self) -> tuple[str, int, int]:
        return (self.file, self.line, self.col)


@dataclass
class RunResult:
    ret: Optional[int]
    globals: dict[str, int]
    events: list[OverflowEvent]
    steps: int
    trap: Optional[str] = None

    @property
    def output(self) -> tuple:
        """Observable behavior: return value plus final global store."""
        return (self.ret, tuple(sorted(self.globals.items())), self.trap)

    @property
    def event_sites(self) -> set[tuple[str, int, int]]:
        return {e.site for e in self.events}


class Interpreter:
    def __init__(self, program: F.Program, bound: Optional[BoundInfo] = None,
                 inputs: Sequence[int] = (), max_steps: int = 1_000_000,
                 max_call_depth: int = 64,
                 macro_values: Optional[dict[str, int]] = None):
        self.program = program
        self.bound = bound
        self.macro_values = (dict(F.DEFAULT_MACRO_VALUES) if macro_values is None
                             else macro_values)
        self.inputs = list(inputs)
        self._next_input = 0
        self.max_steps = max_steps
        self.max_call_depth = max_call_depth
        self.steps = 0
        self.events: list[OverflowEvent] = []
        self.globals: dict[str, int] = {}
        self._global_decls = {g.name: g for g in program.globals}
        self._depth = 0

    # -- plumbing -----------------------------------------------------------

    def _take_input(self) -> int:
        if self._next_input < len(self.inputs):
            v = self.inputs[self._next_input]
            self._next_input += 1
            return v
        return 0

    def _tick(self, span: Optional[F.Span]) -> None:
        self.steps += 1
        if self.steps > self.max_steps:
            raise Trap("step-budget", span)

    def _record(self, base: str, value: int, span: F.Span) -> None:
        if self.bound is None:
            return
        if value > self.bound.upper_value:
            self.events.append(OverflowEvent(span.file, span.start_line,
                                             span.start_col, base, value, "over"))
        elif value < self.bound.lower_value:
            self.events.append(OverflowEvent(span.file, span.start_line,
                                             span.start_col, base, value, "under"))

    def _global_value(self, name: str) -> int:
        if name in self.globals:
            return self.globals[name]
        decl = self._global_decls.get(name)
        value = 0
        # Pointer globals read as plain slots; their initializers are addresses,
        # not integers, and never materialize into the integer store.
        if decl is not None and decl.init is not None and decl.type_ref.stars == 0:
            value = self._expr(decl.init, {}, "")
        self.globals[name] = value
        return value

    # -- entry --------------------------------------------------------------

    def run(self, entry: str = "main", args: Sequence[int] = ()) -> RunResult:
        fdef = self.program.func(entry)
        if fdef is None:
            raise ValueError(f"no function {entry!r}")
        trap: Optional[str] = None
        ret: Optional[int] = None
        try:
            ret = self._call(fdef, list(args))
        except Trap as t:
            trap = t.kind
        return RunResult(ret, dict(self.globals), list(self.events), self.steps, trap)

    # -- execution ----------------------------------------------------------

    def _call(self, fdef: F.FuncDef, args: list[int]) -> int:
        self._depth += 1
        if self._depth > self.max_call_depth:
            self._depth -= 1
            raise Trap("call-depth", fdef.span)
        frame: dict[str, int] = {}
        for i, p in enumerate(fdef.params):
            frame[p.name] = args[i] if i < len(args) else 0
        try:
            self._block(fdef.body, frame, fdef.name)
        except _Return as r:
            return r.value
        finally:
            self._depth -= 1
        return 0  # fell off the end

    def _block(self, block: F.Block, frame: dict[str, int], fn: str) -> None:
        for s in block.stmts:
            self._stmt(s, frame, fn)

    def _store(self, target: F.Expr, value: int, frame: dict[str, int], fn: str,
               span: F.Span) -> None:
        if isinstance(target, F.Name):
            name = target.ident
            if name in frame or self._is_local(fn, name):
                frame[name] = value
            else:
                self.globals[name] = value
            self._record(name, value, span)
        elif isinstance(target, F.Member):
            flat = target.flat_name
            if target.base in frame or self._is_local(fn, target.base):
                frame[flat] = value
            else:
                self.globals[flat] = value
            self._record(flat, value, span)
        elif isinstance(target, F.Deref):
            pass  # stores through pointers do not touch the integer store
        else:
            raise Trap("bad-store", span)

    def _is_local(self, fn: str, name: str) -> bool:
        fdef = self.program.func(fn)
        if fdef is None:
            return False
        if any(p.name == name for p in fdef.params):
            return True
        return _declares(fdef.body, name)

    def _stmt(self, s: F.Stmt, frame: dict[str, int], fn: str) -> None:
        self._tick(s.span)
        if isinstance(s, F.DeclStmt):
            if s.type_ref.is_struct:
                return  # member slots default to zero on first use
            if s.type_ref.stars > 0 and s.init is None:
                return  # bare pointer declaration defines nothing checkable
            value = self._expr(s.init, frame, fn) if s.init is not None else 0
            frame[s.name] = value
            self._record(s.name, value, s.span)
        elif isinstance(s, F.AssignStmt):
            value = self._expr(s.value, frame, fn)
            self._store(s.target, value, frame, fn, s.span)
        elif isinstance(s, F.ExprStmt):
            self._expr(s.expr, frame, fn)
        elif isinstance(s, F.Block):
            self._block(s, frame, fn)
        elif isinstance(s, F.IfStmt):
            if self._expr(s.cond, frame, fn) != 0:
                self._block(s.then, frame, fn)
            elif s.els is not None:
                self._block(s.els, frame, fn)
        elif isinstance(s, F.WhileStmt):
            while self._expr(s.cond, frame, fn) != 0:
                self._tick(s.span)
                self._block(s.body, frame, fn)
        elif isinstance(s, F.ForStmt):
            if s.init is not None:
                self._stmt(s.init, frame, fn)
            while s.cond is None or self._expr(s.cond, frame, fn) != 0:
                self._tick(s.span)
                self._block(s.body, frame, fn)
                if s.step is not None:
                    self._stmt(s.step, frame, fn)
        elif isinstance(s, F.ReturnStmt):
            value = self._expr(s.value, frame, fn) if s.value is not None else 0
            raise _Return(value)
        else:
            raise Trap("bad-stmt", s.span)

    def _read(self, name: str, frame: dict[str, int], fn: str) -> int:
        if name in frame:
            return frame[name]
        if self._is_local(fn, name):
            return 0  # declared later in the function; reads as zero
        return self._global_value(name)

    def _expr(self, e: F.Expr, frame: dict[str, int], fn: str) -> int:
        if isinstance(e, F.IntLit):
            return e.value
        if isinstance(e, F.MacroRef):
            value = self.macro_values.get(e.macro)
            if value is None:
                raise Trap("unknown-macro", e.span)
            return value
        if isinstance(e, F.StrLit):
            return self._take_input()
        if isinstance(e, F.Name):
            return self._read(e.ident, frame, fn)
        if isinstance(e, F.Member):
            flat = e.flat_name
            if e.base in frame or self._is_local(fn, e.base):
                return frame.get(flat, 0)
            return self.globals.get(flat, 0)
        if isinstance(e, F.Deref):
            return self._take_input()
        if isinstance(e, F.Unary):
            v = self._expr(e.operand, frame, fn)
            return -v if e.op == "-" else (0 if v != 0 else 1)
        if isinstance(e, F.Binary):
            lhs = self._expr(e.lhs, frame, fn)
            rhs = self._expr(e.rhs, frame, fn)
            op = e.op
            if op == "+":
                return lhs + rhs
            if op == "-":
                return lhs - rhs
            if op == "*":
                return lhs * rhs
            if op == "/":
                if rhs == 0:
                    raise Trap("div-zero", e.span)
                return trunc_div(lhs, rhs)
            if op == "==":
                return int(lhs == rhs)
            if op == "!=":
                return int(lhs != rhs)
            if op == "<":
                return int(lhs < rhs)
            if op == "<=":
                return int(lhs <= rhs)
            if op == ">":
                return int(lhs > rhs)
            if op == ">=":
                return int(lhs >= rhs)
            if op == "&&":
                return int(lhs != 0 and rhs != 0)
            if op == "||":
                return int(lhs != 0 or rhs != 0)
            raise Trap("bad-op", e.span)
        if isinstance(e, F.Call):
            argv = [self._expr(a, frame, fn) for a in e.args]
            fdef = self.program.func(e.callee)
            if fdef is not None:
                return self._call(fdef, argv)
            return self._take_input()
        raise Trap("bad-expr", e.span)


def _declares(block: F.Block, name: str) -> bool:
    for s in block.stmts:
        if isinstance(s, F.DeclStmt) and s.name == name:
            return True
        if isinstance(s, F.Block) and _declares(s, name):
            return True
        if isinstance(s, F.IfStmt):
            if _declares(s.then, name) or (s.els is not None and _declares(s.els, name)):
                return True
        if isinstance(s, F.WhileStmt) and _declares(s.body, name):
            return True
        if isinstance(s, F.ForStmt):
            if isinstance(s.init, F.DeclStmt) and s.init.name == name:
                return True
            if _declares(s.body, name):
                return True
    return False


def run_program(program: F.Program, entry: str = "main", args: Sequence[int] = (),
                inputs: Sequence[int] = (), bound: Optional[BoundInfo] = None,
                max_steps: int = 1_000_000,
                macro_values: Optional[dict[str, int]] = None) -> RunResult:
    return Interpreter(program, bound=bound, inputs=inputs, max_steps=max_steps,
                       macro_values=macro_values).run(entry, args)


_ANON_INPUT = re.compile(r"^\$in\..*\.(\d+)_0$")


def replay_plan(model: dict[str, int], program: F.Program,
                entry: str = "main") -> tuple[list[int], list[int]]:
    """(entry args, input queue) that replays a full-path witness concretely.

    Entry parameters are seeded symbolically as their first incarnations;
    anonymous inputs carry a serial in their name that is exactly the order
    the interpreter consumes the queue in, because both sides evaluate the
    same statements left to right.  Calls to functions defined in the file
    must appear only as whole right-hand sides for the orders to agree; the
    program generators used in testing respect that.
    """
    fdef = program.func(entry)
    params = fdef.params if fdef is not None else ()
    args = [model.get(smt_name(f"{entry}.{p.name}", 0), 0) for p in params]
    queued: list[tuple[int, int]] = []
    for name, value in model.items():
        m = _ANON_INPUT.match(name)
        if m:
            queued.append((int(m.group(1)), value))
    queued.sort()
    return args, [v for _, v in queued]


def exhaustive_overflow_sites(program: F.Program, entry: str, bound: BoundInfo,
                              lo: int, hi: int, n_args: int,
                              max_steps: int = 200_000) -> set[tuple[str, int, int]]:
    """Every (file, line, col) where any input assignment stores out of range.

    Enumerates the full cartesian input cube [lo, hi]^n_args, so callers keep
    n_args and the range small (the differential suites use 8-bit, ≤ 2 args).
    """
    sites: set[tuple[str, int, int]] = set()
    if n_args == 0:
        sites |= run_program(program, entry, (), bound=bound,
                             max_steps=max_steps).event_sites
        return sites

    def sweep(prefix: tuple[int, ...]) -> None:
        if len(prefix) == n_args:
            sites.update(run_program(program, entry, prefix, bound=bound,
                                     max_steps=max_steps).event_sites)
            return
        for v in range(lo, hi + 1):
            sweep(prefix + (v,))

    sweep(())
    return sites
