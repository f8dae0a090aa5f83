"""Constraint systems over unbounded integers, and their satisfiability.

A system is an ordered set of integer declarations plus ordered assertions.
Each assertion carries a group tag ("definition", "path-condition",
"checker-probe", "guard") so that a whole group can be removed without
renumbering anything else.  Formulas are conjunctions of clauses; a clause is
an atomic comparison or a disjunction of atoms (the overflow probe needs one
disjunction, branch conditions normalize to this shape too).

Division follows C semantics, truncating toward zero.  SMT-LIB's ``div`` is
Euclidean, so emission expands truncating division into an ``ite`` over
operand signs that only ever applies ``div`` to a non-negative numerator.
Emission is byte-stable: same system, same bytes.

Satisfiability has three routes:

* ``check_sat`` with the default config runs the built-in decision engine
  in process (interval propagation plus bounded search, see intsolve).
* ``check_sat`` with a solver path talks SMT-LIB v2 to an external solver
  subprocess with a per-query timeout; any compliant binary works, and the
  package ships one (``boundguard-smt``).
* ``brute_force_check`` exhaustively enumerates small bit-width ranges and is
  the independent oracle the others are tested against.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterator, Optional, Union


# ---------------------------------------------------------------------------
# Terms


@dataclass(frozen=True)
class Const:
    value: int


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Term"


@dataclass(frozen=True)
class BinTerm:
    op: str  # "+", "-", "*", "/" (truncating), "div" (Euclidean)
    lhs: "Term"
    rhs: "Term"


@dataclass(frozen=True)
class Ite:
    cond: "Formula"
    then: "Term"
    els: "Term"


Term = Union[Const, Var, Neg, BinTerm, Ite]


@dataclass(frozen=True)
class Rel:
    op: str  # "=", "!=", "<", "<=", ">", ">="
    lhs: Term
    rhs: Term


@dataclass(frozen=True)
class OrRel:
    parts: tuple["Formula", ...]


@dataclass(frozen=True)
class AndRel:
    parts: tuple["Formula", ...]


Formula = Union[Rel, OrRel, AndRel]

REL_OPS = {"=", "!=", "<", "<=", ">", ">="}

GROUP_DEFINITION = "definition"
GROUP_PATH = "path-condition"
GROUP_PROBE = "checker-probe"
GROUP_GUARD = "guard"


def term_vars(t: Term, out: Optional[set[str]] = None) -> set[str]:
    if out is None:
        out = set()
    if isinstance(t, Var):
        out.add(t.name)
    elif isinstance(t, Neg):
        term_vars(t.operand, out)
    elif isinstance(t, BinTerm):
        term_vars(t.lhs, out)
        term_vars(t.rhs, out)
    elif isinstance(t, Ite):
        formula_vars(t.cond, out)
        term_vars(t.then, out)
        term_vars(t.els, out)
    return out


def formula_vars(f: Formula, out: Optional[set[str]] = None) -> set[str]:
    if out is None:
        out = set()
    if isinstance(f, Rel):
        term_vars(f.lhs, out)
        term_vars(f.rhs, out)
    else:
        for p in f.parts:
            formula_vars(p, out)
    return out


class EvalError(Exception):
    """Division by zero during concrete term evaluation."""


def trunc_div(a: int, b: int) -> int:
    if b == 0:
        raise EvalError("division by zero")
    q = abs(a) // abs(b)
    return q if (a < 0) == (b < 0) else -q


def euclid_div(a: int, b: int) -> int:
    if b == 0:
        raise EvalError("division by zero")
    return a // b if b > 0 else -(a // -b)


def eval_term(t: Term, model: dict[str, int]) -> int:
    if isinstance(t, Const):
        return t.value
    if isinstance(t, Var):
        return model[t.name]
    if isinstance(t, Neg):
        return -eval_term(t.operand, model)
    if isinstance(t, BinTerm):
        a = eval_term(t.lhs, model)
        b = eval_term(t.rhs, model)
        if t.op == "+":
            return a + b
        if t.op == "-":
            return a - b
        if t.op == "*":
            return a * b
        if t.op == "/":
            return trunc_div(a, b)
        if t.op == "div":
            return euclid_div(a, b)
        raise ValueError(f"unknown term op {t.op}")
    if isinstance(t, Ite):
        return eval_term(t.then if eval_formula(t.cond, model) else t.els, model)
    raise TypeError(f"unknown term {type(t).__name__}")


def eval_formula(f: Formula, model: dict[str, int]) -> bool:
    if isinstance(f, Rel):
        a = eval_term(f.lhs, model)
        b = eval_term(f.rhs, model)
        return {
            "=": a == b, "!=": a != b, "<": a < b,
            "<=": a <= b, ">": a > b, ">=": a >= b,
        }[f.op]
    if isinstance(f, OrRel):
        return any(eval_formula(p, model) for p in f.parts)
    if isinstance(f, AndRel):
        return all(eval_formula(p, model) for p in f.parts)
    raise TypeError(f"unknown formula {type(f).__name__}")


# ---------------------------------------------------------------------------
# Systems


@dataclass(frozen=True)
class Assertion:
    group: str
    formula: Formula
    defines: Optional[str] = None  # variable this assertion defines, if any


class ConstraintSystem:
    """Ordered declarations and grouped assertions; removal keeps order."""

    def __init__(self) -> None:
        self._decls: dict[str, None] = {}
        self.assertions: list[Assertion] = []

    # -- construction

    def declare(self, name: str) -> None:
        self._decls.setdefault(name, None)

    def add(self, group: str, formula: Formula, defines: Optional[str] = None) -> None:
        for v in formula_vars(formula):
            self.declare(v)
        self.assertions.append(Assertion(group, formula, defines))

    def extend(self, assertions: list[Assertion]) -> None:
        for a in assertions:
            self.add(a.group, a.formula, a.defines)

    # -- views

    @property
    def declared(self) -> list[str]:
        return list(self._decls)

    def groups(self) -> list[str]:
        seen: dict[str, None] = {}
        for a in self.assertions:
            seen.setdefault(a.group, None)
        return list(seen)

    def group_assertions(self, group: str) -> list[Assertion]:
        return [a for a in self.assertions if a.group == group]

    def copy(self) -> "ConstraintSystem":
        out = ConstraintSystem()
        out._decls = dict(self._decls)
        out.assertions = list(self.assertions)
        return out

    def remove_group(self, group: str) -> "ConstraintSystem":
        """New system without the group's assertions; declarations survive."""
        out = ConstraintSystem()
        out._decls = dict(self._decls)
        out.assertions = [a for a in self.assertions if a.group != group]
        return out

    def __len__(self) -> int:
        return len(self.assertions)


# ---------------------------------------------------------------------------
# SMT-LIB v2 emission


def _trunc_expansion(a: Term, b: Term) -> Term:
    """Truncating division over Euclidean div, applied to non-negative numerators."""
    pos_b = Rel(">", b, Const(0))
    return Ite(
        Rel(">=", a, Const(0)),
        Ite(pos_b, BinTerm("div", a, b), Neg(BinTerm("div", a, Neg(b)))),
        Ite(pos_b, Neg(BinTerm("div", Neg(a), b)), BinTerm("div", Neg(a), Neg(b))),
    )


def term_sexpr(t: Term) -> str:
    if isinstance(t, Const):
        return str(t.value) if t.value >= 0 else f"(- {-t.value})"
    if isinstance(t, Var):
        return t.name
    if isinstance(t, Neg):
        return f"(- {term_sexpr(t.operand)})"
    if isinstance(t, BinTerm):
        if t.op == "/":
            return term_sexpr(_trunc_expansion(t.lhs, t.rhs))
        return f"({t.op} {term_sexpr(t.lhs)} {term_sexpr(t.rhs)})"
    if isinstance(t, Ite):
        return f"(ite {formula_sexpr(t.cond)} {term_sexpr(t.then)} {term_sexpr(t.els)})"
    raise TypeError(f"unknown term {type(t).__name__}")


def formula_sexpr(f: Formula) -> str:
    if isinstance(f, Rel):
        op = "distinct" if f.op == "!=" else f.op
        return f"({op} {term_sexpr(f.lhs)} {term_sexpr(f.rhs)})"
    if isinstance(f, OrRel):
        return f"(or {' '.join(formula_sexpr(p) for p in f.parts)})"
    if isinstance(f, AndRel):
        return f"(and {' '.join(formula_sexpr(p) for p in f.parts)})"
    raise TypeError(f"unknown formula {type(f).__name__}")


def emit_smtlib(system: ConstraintSystem, logic: str = "QF_NIA") -> str:
    """SMT-LIB v2 script for the system; byte-stable for equal systems."""
    lines = [f"(set-logic {logic})"]
    for name in system.declared:
        lines.append(f"(declare-fun {name} () Int)")
    for a in system.assertions:
        lines.append(f"(assert {formula_sexpr(a.formula)})")
    lines.append("(check-sat)")
    return "\n".join(lines) + "\n"


def system_digest(system: ConstraintSystem) -> str:
    return hashlib.sha256(emit_smtlib(system).encode()).hexdigest()


# ---------------------------------------------------------------------------
# Verdicts


@dataclass
class Verdict:
    status: str  # "sat" | "unsat" | "unknown"
    model: Optional[dict[str, int]] = None
    reason: str = ""

    @property
    def is_sat(self) -> bool:
        return self.status == "sat"

    @property
    def is_unsat(self) -> bool:
        return self.status == "unsat"

    @property
    def is_unknown(self) -> bool:
        return self.status == "unknown"


class SolverUnavailable(Exception):
    """The configured solver subprocess could not be started."""


class SpaceTooLarge(Exception):
    """Brute-force enumeration space exceeds the 2**24 assignment cap."""


@dataclass(frozen=True)
class SolverConfig:
    solver_path: Optional[str] = None  # None or "builtin": in-process engine
    timeout_s: float = 10.0
    node_budget: int = 200_000

    @property
    def is_builtin(self) -> bool:
        return self.solver_path in (None, "", "builtin")


def verify_model(system: ConstraintSystem, model: dict[str, int]) -> bool:
    full = dict.fromkeys(system.declared, 0)
    full.update(model)
    try:
        return all(eval_formula(a.formula, full) for a in system.assertions)
    except EvalError:
        return False


class SolverContext:
    """One solving session: verdict cache plus a lazy subprocess client.

    Models returned through here are independently re-evaluated against the
    system; a model that fails verification downgrades the verdict to unknown
    rather than ever reporting an unsound sat.
    """

    def __init__(self, config: Optional[SolverConfig] = None):
        self.config = config or SolverConfig()
        self._cache: dict[str, Verdict] = {}
        self._client = None
        self.queries = 0
        self.cache_hits = 0

    def check(self, system: ConstraintSystem) -> Verdict:
        key = system_digest(system)
        hit = self._cache.get(key)
        if hit is not None:
            self.cache_hits += 1
            return hit
        self.queries += 1
        verdict = self._check_uncached(system)
        if verdict.is_sat:
            assert verdict.model is not None
            full = dict.fromkeys(system.declared, 0)
            full.update(verdict.model)
            verdict.model = full
            if not verify_model(system, full):
                verdict = Verdict("unknown", reason="model failed independent verification")
        self._cache[key] = verdict
        return verdict

    def _check_uncached(self, system: ConstraintSystem) -> Verdict:
        if self.config.is_builtin:
            from .intsolve import decide

            return decide(system, node_budget=self.config.node_budget,
                          timeout_s=self.config.timeout_s)
        if self._client is None:
            from .smtio import SolverClient

            self._client = SolverClient(self.config.solver_path)
        return self._client.check(system, timeout_s=self.config.timeout_s)

    def close(self) -> None:
        if self._client is not None:
            self._client.close()
            self._client = None


def check_sat(system: ConstraintSystem, config: Optional[SolverConfig] = None) -> Verdict:
    """One-shot satisfiability check; see SolverContext for session use."""
    ctx = SolverContext(config)
    try:
        return ctx.check(system)
    finally:
        ctx.close()


# ---------------------------------------------------------------------------
# Brute-force oracle


def _definition_order(system: ConstraintSystem) -> tuple[dict[str, Term], list[str], list[Assertion]]:
    """Split assertions into an acyclic definition map and residual checks.

    Definitions are detected syntactically: "v = t" with v not occurring in t,
    first definition of each v wins.  Cyclic candidates are demoted back to
    plain assertions.  Returns (defs, topological order, residual assertions).
    """
    defs: dict[str, Term] = {}
    def_assertions: dict[str, Assertion] = {}
    residual: list[Assertion] = []
    for a in system.assertions:
        f = a.formula
        if isinstance(f, Rel) and f.op == "=" and isinstance(f.lhs, Var) \
                and f.lhs.name not in defs and f.lhs.name not in term_vars(f.rhs):
            defs[f.lhs.name] = f.rhs
            def_assertions[f.lhs.name] = a
        else:
            residual.append(a)

    # Topological order over def-to-def dependencies; cycles get demoted.
    order: list[str] = []
    state: dict[str, int] = {}  # 0 visiting, 1 done

    def visit(v: str, stack: list[str]) -> bool:
        st = state.get(v)
        if st == 1:
            return True
        if st == 0:
            return False  # cycle
        state[v] = 0
        for dep in sorted(term_vars(defs[v]) & defs.keys()):
            if dep in defs and not visit(dep, stack):
                return False
        state[v] = 1
        order.append(v)
        return True

    for v in list(defs):
        if v in defs and state.get(v) != 1:
            if not visit(v, []):
                # Demote every not-yet-finished definition on this walk.
                for w in [w for w, s in state.items() if s == 0]:
                    residual.append(def_assertions[w])
                    del defs[w]
                    del state[w]
    order = [v for v in order if v in defs]
    return defs, order, residual


def brute_force_check(system: ConstraintSystem, width: int = 8, signed: bool = True,
                      kinds: Optional[dict[str, tuple[int, int]]] = None) -> Verdict:
    """Exhaustive oracle over small ranges.

    Free variables (those without an acyclic syntactic definition) enumerate
    their full width range in declaration order, ascending, so a sat verdict
    carries the lexicographically smallest model.  Defined variables are
    evaluated, not enumerated.  ``kinds`` overrides (lo, hi) per variable.
    """
    if width > 16:
        raise SpaceTooLarge(f"width {width} exceeds 16")
    defs, order, residual = _definition_order(system)
    free = [v for v in system.declared if v not in defs]
    lo = -(1 << (width - 1)) if signed else 0
    hi = (1 << (width - 1)) - 1 if signed else (1 << width) - 1
    ranges = [(kinds or {}).get(v, (lo, hi)) for v in free]
    space = 1
    for a, b in ranges:
        space *= b - a + 1
        if space > 1 << 24:
            raise SpaceTooLarge(f"{len(free)} free variables exceed 2**24 assignments")

    model: dict[str, int] = {}

    def assign(i: int) -> Optional[dict[str, int]]:
        if i == len(free):
            try:
                for v in order:
                    model[v] = eval_term(defs[v], model)
                if all(eval_formula(a.formula, model) for a in residual):
                    return dict(model)
            except EvalError:
                pass
            return None
        a, b = ranges[i]
        v = free[i]
        for value in range(a, b + 1):
            model[v] = value
            found = assign(i + 1)
            if found is not None:
                return found
        del model[v]
        return None

    found = assign(0)
    if found is None:
        return Verdict("unsat")
    return Verdict("sat", model=found)
