"""Control flow graphs and bounded path enumeration.

A program is first lowered: ``for`` loops desugar to ``while``, and calls are
hoisted out of expressions so that every call appears as the sole right-hand
side of an assignment (or as a bare call statement).  Lowered statements keep
the spans of the statements they came from, so everything the checkers report
points at original source lines.

Each function gets its own graph.  Path enumeration is a depth-first walk,
true branch before false, so branch-decision vectors come out in lexicographic
order with true < false.  Loops are unrolled up to a configured bound; when the
bound is exhausted the walk takes the exit edge, either still subject to the
branch feasibility check ("prune", the default) or skipping it ("bypass").
Calls to functions defined in the file are inlined under a call-string context;
recursion past the configured depth raises CallDepthExceeded.

Two walkers exist on purpose: `walk_paths` drives a listener and supports
pruning (the analyzer uses it; no global path materialization), while
`enumerate_paths` is an independent plain generator.  The test suite holds
them against each other.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Iterator, Optional

from .frontend import (
    AssignStmt, Binary, Block, Call, DeclStmt, Deref, Diagnostic, Expr,
    ExprStmt, ForStmt, FuncDef, IfStmt, IntLit, KINDS, Member, Name, Program,
    ReturnStmt, Span, Stmt, StrLit, TypeRef, Unary, WhileStmt, MacroRef,
)


class CallDepthExceeded(Exception):
    def __init__(self, fn: str, callee: str, depth: int):
        self.fn, self.callee, self.depth = fn, callee, depth
        super().__init__(f"call depth {depth} exceeded at call to {callee} in {fn}")


@dataclass(frozen=True)
class CfgConfig:
    unroll_bound: int = 10
    call_depth: int = 8
    on_exhaust: str = "prune"  # or "bypass"


# ---------------------------------------------------------------------------
# Lowering: for-desugar and call hoisting


def _has_call(e: Expr) -> bool:
    if isinstance(e, Call):
        return True
    if isinstance(e, Unary):
        return _has_call(e.operand)
    if isinstance(e, Binary):
        return _has_call(e.lhs) or _has_call(e.rhs)
    return False


class _Lowerer:
    def __init__(self, program: Program):
        self.program = program
        self.counter = 0

    def fresh(self) -> str:
        name = f"__t{self.counter}"
        self.counter += 1
        return name

    def hoist(self, e: Expr, out: list[Stmt]) -> Expr:
        """Replace every call in e by a temp; emit temp declarations into out."""
        if isinstance(e, Call):
            args = tuple(self.hoist(a, out) for a in e.args)
            call = replace(e, args=args)
            tmp = self.fresh()
            kind = e.kind or KINDS["int"]
            tr = TypeRef(kind.name)
            out.append(DeclStmt(e.span, tr, tmp, call))
            return Name(e.span, kind, tmp)
        if isinstance(e, Unary) and _has_call(e.operand):
            return replace(e, operand=self.hoist(e.operand, out))
        if isinstance(e, Binary) and _has_call(e):
            return replace(e, lhs=self.hoist(e.lhs, out), rhs=self.hoist(e.rhs, out))
        return e

    def stmts(self, body: tuple[Stmt, ...]) -> list[Stmt]:
        out: list[Stmt] = []
        for s in body:
            self.stmt(s, out)
        return out

    def stmt(self, s: Stmt, out: list[Stmt]) -> None:
        if isinstance(s, DeclStmt):
            if s.init is not None and _has_call(s.init):
                if isinstance(s.init, Call):
                    # Already the supported shape: decl with a sole call init.
                    args: list[Stmt] = []
                    init = replace(s.init, args=tuple(self.hoist(a, args) for a in s.init.args))
                    out.extend(args)
                    out.append(replace(s, init=init))
                else:
                    init = self.hoist(s.init, out)
                    out.append(replace(s, init=init))
            else:
                out.append(s)
        elif isinstance(s, AssignStmt):
            if _has_call(s.value):
                if isinstance(s.value, Call):
                    args = []
                    value = replace(s.value, args=tuple(self.hoist(a, args) for a in s.value.args))
                    out.extend(args)
                    out.append(replace(s, value=value))
                else:
                    out.append(replace(s, value=self.hoist(s.value, out)))
            else:
                out.append(s)
        elif isinstance(s, ExprStmt):
            if isinstance(s.expr, Call):
                args = []
                expr = replace(s.expr, args=tuple(self.hoist(a, args) for a in s.expr.args))
                out.extend(args)
                out.append(replace(s, expr=expr))
            else:
                out.append(replace(s, expr=self.hoist(s.expr, out)))
        elif isinstance(s, ReturnStmt):
            if s.value is not None and _has_call(s.value):
                out.append(replace(s, value=self.hoist(s.value, out)))
            else:
                out.append(s)
        elif isinstance(s, Block):
            out.append(Block(s.span, tuple(self.stmts(s.stmts))))
        elif isinstance(s, IfStmt):
            cond = self.hoist(s.cond, out) if _has_call(s.cond) else s.cond
            then = Block(s.then.span, tuple(self.stmts(s.then.stmts)))
            els = Block(s.els.span, tuple(self.stmts(s.els.stmts))) if s.els is not None else None
            out.append(IfStmt(s.span, cond, then, els))
        elif isinstance(s, WhileStmt):
            body = self.stmts(s.body.stmts)
            if _has_call(s.cond):
                # while (f(x)) {B}  =>  t = f(x); while (t) {B; t = f(x);}
                pre: list[Stmt] = []
                cond = self.hoist(s.cond, pre)
                out.extend(pre)
                assert isinstance(cond, Name) or not isinstance(s.cond, Call)
                reeval: list[Stmt] = []
                cond2 = self.hoist(_clone_expr(s.cond), reeval)
                # Re-bind the same temps at the end of the body.
                rebind = [_decl_to_assign(d) for d in reeval]
                out.append(WhileStmt(s.span, cond, Block(s.body.span, tuple(body + rebind))))
            else:
                out.append(WhileStmt(s.span, s.cond, Block(s.body.span, tuple(body))))
        elif isinstance(s, ForStmt):
            # for (init; cond; step) {B}  =>  init; while (cond) {B; step;}
            if s.init is not None:
                self.stmt(s.init, out)
            cond = s.cond if s.cond is not None else IntLit(s.span, KINDS["int"], 1)
            body = list(s.body.stmts)
            if s.step is not None:
                body.append(s.step)
            self.stmt(WhileStmt(s.span, cond, Block(s.body.span, tuple(body))), out)
        else:
            out.append(s)


def _clone_expr(e: Expr) -> Expr:
    if isinstance(e, Unary):
        return replace(e, operand=_clone_expr(e.operand))
    if isinstance(e, Binary):
        return replace(e, lhs=_clone_expr(e.lhs), rhs=_clone_expr(e.rhs))
    if isinstance(e, Call):
        return replace(e, args=tuple(_clone_expr(a) for a in e.args))
    return replace(e)


def _decl_to_assign(d: Stmt) -> Stmt:
    assert isinstance(d, DeclStmt) and d.init is not None
    return AssignStmt(d.span, Name(d.span, d.type_ref.kind, d.name), d.init)


def lower_program(program: Program) -> Program:
    """Program with for loops desugared and calls hoisted to statement level.

    Call-init temp declarations created by the while-condition rewrite are
    re-assigned at the loop body end, so the loop re-evaluates its condition.
    """
    lw = _Lowerer(program)
    funcs = []
    for fn in program.funcs:
        body = Block(fn.body.span, tuple(lw.stmts(fn.body.stmts)))
        funcs.append(FuncDef(fn.ret, fn.name, fn.params, body, fn.span))
    return Program(program.file, program.structs, program.globals, tuple(funcs))


# ---------------------------------------------------------------------------
# Graph construction


@dataclass
class Node:
    id: int
    kind: str  # "entry" | "exit" | "stmt" | "branch"
    stmt: Optional[Stmt] = None
    cond: Optional[Expr] = None
    span: Optional[Span] = None
    loop_header: bool = False


@dataclass
class Cfg:
    fn: FuncDef
    nodes: list[Node] = field(default_factory=list)
    succ: dict[int, list[tuple[Optional[bool], int]]] = field(default_factory=dict)
    entry_id: int = 0
    exit_id: int = 0

    def node(self, nid: int) -> Node:
        return self.nodes[nid]

    def new_node(self, kind: str, **kw) -> Node:
        n = Node(len(self.nodes), kind, **kw)
        self.nodes.append(n)
        self.succ[n.id] = []
        return n

    def edge(self, src: int, dst: int, label: Optional[bool] = None) -> None:
        self.succ[src].append((label, dst))

    @property
    def edge_count(self) -> int:
        return sum(len(v) for v in self.succ.values())


def build_cfg(fn: FuncDef) -> Cfg:
    cfg = Cfg(fn)
    entry = cfg.new_node("entry", span=fn.span)
    cfg.entry_id = entry.id

    def connect(preds: list[tuple[int, Optional[bool]]], nid: int) -> None:
        for src, label in preds:
            cfg.edge(src, nid, label)

    def build(s: Stmt, preds: list[tuple[int, Optional[bool]]]) -> list[tuple[int, Optional[bool]]]:
        if isinstance(s, Block):
            cur = preds
            for inner in s.stmts:
                cur = build(inner, cur)
            return cur
        if isinstance(s, (DeclStmt, AssignStmt, ExprStmt)):
            n = cfg.new_node("stmt", stmt=s, span=s.span)
            connect(preds, n.id)
            return [(n.id, None)]
        if isinstance(s, ReturnStmt):
            n = cfg.new_node("stmt", stmt=s, span=s.span)
            connect(preds, n.id)
            cfg.edge(n.id, -1)  # patched to exit id below
            return []
        if isinstance(s, IfStmt):
            b = cfg.new_node("branch", cond=s.cond, span=s.span)
            connect(preds, b.id)
            then_out = build(s.then, [(b.id, True)])
            if s.els is not None:
                else_out = build(s.els, [(b.id, False)])
            else:
                else_out = [(b.id, False)]
            return then_out + else_out
        if isinstance(s, WhileStmt):
            b = cfg.new_node("branch", cond=s.cond, span=s.span, loop_header=True)
            connect(preds, b.id)
            body_out = build(s.body, [(b.id, True)])
            connect(body_out, b.id)  # back edges
            return [(b.id, False)]
        if isinstance(s, ForStmt):
            raise AssertionError("for loops must be desugared before CFG construction")
        raise TypeError(f"unknown statement node {type(s).__name__}")

    out = build(fn.body, [(entry.id, None)])
    exit_node = cfg.new_node("exit", span=fn.span)
    cfg.exit_id = exit_node.id
    connect(out, exit_node.id)
    # Patch return edges recorded before the exit node existed.
    for src, edges in cfg.succ.items():
        cfg.succ[src] = [(lab, exit_node.id if dst == -1 else dst) for lab, dst in edges]
    return cfg


@dataclass
class CfgUnit:
    """All per-function graphs of one lowered program."""

    program: Program
    cfgs: dict[str, Cfg]

    def callees(self, fn: str) -> set[str]:
        out: set[str] = set()
        cfg = self.cfgs[fn]
        for n in cfg.nodes:
            c = _stmt_call(n.stmt)
            if c is not None and c.callee in self.cfgs:
                out.add(c.callee)
        return out

    def roots(self) -> list[str]:
        called: set[str] = set()
        for name in self.cfgs:
            called |= self.callees(name)
        roots = [f.name for f in self.program.funcs if f.name not in called]
        return roots if roots else [f.name for f in self.program.funcs]


def build_unit(program: Program) -> CfgUnit:
    lowered = lower_program(program)
    return CfgUnit(lowered, {fn.name: build_cfg(fn) for fn in lowered.funcs})


def _stmt_call(s: Optional[Stmt]) -> Optional[Call]:
    if isinstance(s, DeclStmt) and isinstance(s.init, Call):
        return s.init
    if isinstance(s, AssignStmt) and isinstance(s.value, Call):
        return s.value
    if isinstance(s, ExprStmt) and isinstance(s.expr, Call):
        return s.expr
    return None


def dump_cfg(cfg: Cfg) -> str:
    """One node per line with successor edges, for debug output."""
    from .frontend import expr_text

    lines = [f"cfg {cfg.fn.name}:"]
    for n in cfg.nodes:
        if n.kind == "stmt":
            desc = _stmt_text_short(n.stmt)
        elif n.kind == "branch":
            desc = f"branch ({expr_text(n.cond)})" + (" [loop]" if n.loop_header else "")
        else:
            desc = n.kind
        edges = " ".join(
            (f"{'T' if lab is True else 'F' if lab is False else ''}->n{dst}")
            for lab, dst in cfg.succ[n.id]
        )
        lines.append(f"  n{n.id}: {desc} {edges}".rstrip())
    return "\n".join(lines)


def _stmt_text_short(s: Stmt) -> str:
    from .frontend import _stmt_lines

    return _stmt_lines(s, 0)[0]


# ---------------------------------------------------------------------------
# Path steps


@dataclass(frozen=True)
class CallSite:
    fn: str
    node_id: int


@dataclass(frozen=True)
class PathStep:
    kind: str  # "stmt" | "branch" | "enter" | "bind-param" | "bind-ret" | "leave"
    fn: str
    node_id: int
    stmt: Optional[Stmt] = None
    cond: Optional[Expr] = None
    decision: Optional[bool] = None
    checked: bool = True
    ctx: tuple[CallSite, ...] = ()
    caller: Optional[str] = None
    param: Optional[str] = None
    arg: Optional[Expr] = None
    target: Optional[Expr] = None
    callee: Optional[str] = None


ProgramPath = list[PathStep]


def path_decisions(path: ProgramPath) -> tuple[bool, ...]:
    return tuple(s.decision for s in path if s.kind == "branch")


class PathListener:
    """Walk callbacks.  enter_step returning False prunes the subtree; the
    walker then does not call leave_step for that step."""

    def enter_step(self, step: PathStep) -> bool:
        return True

    def leave_step(self, step: PathStep) -> None:
        pass

    def end_path(self) -> None:
        pass


# ---------------------------------------------------------------------------
# Listener-driven walker (prunable, used by the analyzer)


def walk_paths(unit: CfgUnit, entry_fn: str, config: CfgConfig, listener: PathListener) -> None:
    cfg0 = unit.cfgs[entry_fn]

    def guarded(step: PathStep, k: Callable[[], None]) -> None:
        if listener.enter_step(step):
            try:
                k()
            finally:
                listener.leave_step(step)

    def walk(fn: str, nid: int, counters: dict[int, int], ctx: tuple[CallSite, ...],
             k_exit: Callable[[], None]) -> None:
        cfg = unit.cfgs[fn]
        entered: list[PathStep] = []
        try:
            while True:
                node = cfg.node(nid)
                if node.kind == "exit":
                    k_exit()
                    return
                if node.kind == "branch":
                    _walk_branch(fn, node, counters, ctx, k_exit, cfg)
                    return
                if node.kind == "stmt":
                    call = _stmt_call(node.stmt)
                    if call is not None and call.callee in unit.cfgs:
                        _walk_call(fn, node, call, counters, ctx, k_exit, cfg)
                        return
                    nxt = cfg.succ[nid][0][1]
                    step = PathStep("stmt", fn, nid, stmt=node.stmt, ctx=ctx)
                    if not listener.enter_step(step):
                        return
                    entered.append(step)
                    nid = nxt
                else:  # entry
                    nid = cfg.succ[nid][0][1]
        finally:
            for s in reversed(entered):
                listener.leave_step(s)

    def _walk_branch(fn, node, counters, ctx, k_exit, cfg):
        succ = dict((lab, dst) for lab, dst in cfg.succ[node.id])
        if node.loop_header:
            old = counters.get(node.id, 0)
            if old < config.unroll_bound:
                options = [(True, True), (False, True)]
            else:
                options = [(False, config.on_exhaust == "prune")]
        else:
            old = None
            options = [(True, True), (False, True)]
        for decision, checked in options:
            step = PathStep("branch", fn, node.id, cond=node.cond,
                            decision=decision, checked=checked, ctx=ctx)
            if node.loop_header:
                counters[node.id] = (old + 1) if decision else 0
            if listener.enter_step(step):
                try:
                    walk(fn, succ[decision], counters, ctx, k_exit)
                finally:
                    listener.leave_step(step)
        if node.loop_header:
            counters[node.id] = old

    def _walk_call(fn, node, call, counters, ctx, k_exit, cfg):
        ctx2 = ctx + (CallSite(fn, node.id),)
        if len(ctx2) > config.call_depth:
            raise CallDepthExceeded(fn, call.callee, len(ctx2))
        callee = call.callee
        callee_fn = unit.program.func(callee)
        nxt = cfg.succ[node.id][0][1]
        target = _stmt_target(node.stmt)

        def after_callee() -> None:
            def cont() -> None:
                walk(fn, nxt, counters, ctx, k_exit)

            leave = PathStep("leave", fn, node.id, ctx=ctx2, callee=callee)
            if target is not None:
                def with_bind() -> None:
                    bind = PathStep("bind-ret", fn, node.id, stmt=node.stmt, ctx=ctx,
                                    target=target, callee=callee)
                    guarded(bind, cont)
                guarded(leave, with_bind)
            else:
                guarded(leave, cont)

        def enter_body() -> None:
            def bind_params(i: int) -> None:
                if i == len(callee_fn.params):
                    walk(callee, unit.cfgs[callee].entry_id, {}, ctx2, after_callee)
                    return
                p = callee_fn.params[i]
                arg = call.args[i] if i < len(call.args) else None
                step = PathStep("bind-param", callee, node.id, ctx=ctx2, caller=fn,
                                param=p.name, arg=arg, callee=callee)
                guarded(step, lambda: bind_params(i + 1))

            bind_params(0)

        enter = PathStep("enter", callee, node.id, ctx=ctx2, caller=fn, callee=callee)
        guarded(enter, enter_body)

    walk(entry_fn, cfg0.entry_id, {}, (), listener.end_path)


def _stmt_target(s: Stmt) -> Optional[Expr]:
    if isinstance(s, DeclStmt):
        return Name(s.span, s.type_ref.kind, s.name)
    if isinstance(s, AssignStmt):
        return s.target
    return None


# ---------------------------------------------------------------------------
# Independent generator walker (streams complete paths, no pruning)


def enumerate_paths(unit: CfgUnit, entry_fn: str, config: CfgConfig) -> Iterator[ProgramPath]:
    """All bounded paths in DFS order, true branch first.

    Implemented separately from walk_paths; the two are checked against each
    other.  Each yielded list is freshly allocated.
    """

    def gen(fn: str, nid: int, counters: dict[int, int], ctx: tuple[CallSite, ...]) -> Iterator[list[PathStep]]:
        cfg = unit.cfgs[fn]
        node = cfg.node(nid)
        if node.kind == "exit":
            yield []
            return
        if node.kind == "entry":
            yield from gen(fn, cfg.succ[nid][0][1], counters, ctx)
            return
        if node.kind == "branch":
            succ = dict(cfg.succ[nid])
            if node.loop_header:
                old = counters.get(nid, 0)
                if old < config.unroll_bound:
                    options = [(True, True), (False, True)]
                else:
                    options = [(False, config.on_exhaust == "prune")]
            else:
                old = None
                options = [(True, True), (False, True)]
            for decision, checked in options:
                c2 = dict(counters)
                if node.loop_header:
                    c2[nid] = (old + 1) if decision else 0
                step = PathStep("branch", fn, nid, cond=node.cond,
                                decision=decision, checked=checked, ctx=ctx)
                for rest in gen(fn, succ[decision], c2, ctx):
                    yield [step] + rest
            return
        # stmt node
        call = _stmt_call(node.stmt)
        nxt = cfg.succ[nid][0][1]
        if call is not None and call.callee in unit.cfgs:
            ctx2 = ctx + (CallSite(fn, nid),)
            if len(ctx2) > config.call_depth:
                raise CallDepthExceeded(fn, call.callee, len(ctx2))
            callee_fn = unit.program.func(call.callee)
            prefix: list[PathStep] = [PathStep("enter", call.callee, nid, ctx=ctx2,
                                               caller=fn, callee=call.callee)]
            for i, p in enumerate(callee_fn.params):
                arg = call.args[i] if i < len(call.args) else None
                prefix.append(PathStep("bind-param", call.callee, nid, ctx=ctx2, caller=fn,
                                       param=p.name, arg=arg, callee=call.callee))
            target = _stmt_target(node.stmt)
            suffix: list[PathStep] = [PathStep("leave", fn, nid, ctx=ctx2, callee=call.callee)]
            if target is not None:
                suffix.append(PathStep("bind-ret", fn, nid, stmt=node.stmt, ctx=ctx,
                                       target=target, callee=call.callee))
            for body in gen(call.callee, unit.cfgs[call.callee].entry_id, {}, ctx2):
                for rest in gen(fn, nxt, counters, ctx):
                    yield prefix + body + suffix + rest
            return
        step = PathStep("stmt", fn, nid, stmt=node.stmt, ctx=ctx)
        for rest in gen(fn, nxt, counters, ctx):
            yield [step] + rest

    yield from gen(entry_fn, unit.cfgs[entry_fn].entry_id, {}, ())
