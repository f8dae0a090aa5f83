"""Built-in satisfiability engine for the nonlinear-integer fragment.

The systems the pipeline emits are conjunctions of clauses over integer
variables: functional definitions (``v = t``), range atoms on inputs, branch
conditions, and one disjunctive probe.  That fragment yields to interval
propagation (forward evaluation plus backward narrowing through ``+ - *``)
combined with a small branch-and-bound search over the free variables, with
disjunctions handled by case split.

Bounds are plain integers with sentinel magnitudes: a lower endpoint of
``-INF`` means "unbounded below" and an upper endpoint of ``+INF`` means
"unbounded above" (INF is 2**4096).  Deeply iterated multiplication can push
true values past any fixed magnitude — squaring an 8-bit variable twelve
times already exceeds INF — so endpoint arithmetic treats sentinel operands
as genuine infinities and out-of-range results are stored by *widening only*
(a lower endpoint past +INF weakens to INF-1, an upper endpoint past -INF
weakens to -INF+1, never the reverse).  Stored intervals therefore always
contain the true value set; the sentinels trade precision, never soundness.
The engine is deterministic: variables are considered in declaration order
and candidate values in a fixed order.  Search is complete for finite boxes;
exhausting the node budget or the deadline returns unknown, never a wrong
verdict.  Models are verified by concrete evaluation before being reported.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional

from .constraints import (
    AndRel, Assertion, BinTerm, Const, ConstraintSystem, EvalError, Formula,
    Ite, Neg, OrRel, Rel, Term, Var, Verdict, _definition_order, eval_formula,
    eval_term,
)

INF = 1 << 4096

_ROUND_CAP = 40
_ENUM_LIMIT = 64


def _lo_store(x: int) -> int:
    """Store a computed lower endpoint, widening only.

    ``-INF`` in the lower slot means "unbounded below"; a computed lower bound
    at or beyond ``+INF`` weakens to the finite stand-in ``INF - 1`` so the
    sentinel keeps its infinite reading.
    """
    if x <= -INF:
        return -INF
    if x >= INF:
        return INF - 1
    return x


def _hi_store(x: int) -> int:
    """Store a computed upper endpoint, widening only (mirror of _lo_store)."""
    if x >= INF:
        return INF
    if x <= -INF:
        return -INF + 1
    return x


Iv = tuple[int, int]


def _store(a: Iv) -> Iv:
    return (_lo_store(a[0]), _hi_store(a[1]))


def _inter(a: Iv, b: Iv) -> Iv:
    return (max(a[0], b[0]), min(a[1], b[1]))


def _is_empty(a: Iv) -> bool:
    return a[0] > a[1]


def _add(a: Iv, b: Iv) -> Iv:
    a, b = _store(a), _store(b)
    lo = -INF if (a[0] <= -INF or b[0] <= -INF) else a[0] + b[0]
    hi = INF if (a[1] >= INF or b[1] >= INF) else a[1] + b[1]
    return (_lo_store(lo), _hi_store(hi))


def _sub(a: Iv, b: Iv) -> Iv:
    a, b = _store(a), _store(b)
    lo = -INF if (a[0] <= -INF or b[1] >= INF) else a[0] - b[1]
    hi = INF if (a[1] >= INF or b[0] <= -INF) else a[1] - b[0]
    return (_lo_store(lo), _hi_store(hi))


def _neg(a: Iv) -> Iv:
    a = _store(a)
    return (-a[1], -a[0])


def _einc(x: int) -> int:
    """Endpoint increment for strict bounds; sentinels absorb."""
    return x if abs(x) >= INF else x + 1


def _edec(x: int) -> int:
    """Endpoint decrement for strict bounds; sentinels absorb."""
    return x if abs(x) >= INF else x - 1


def _emul(x: int, y: int) -> int:
    """Endpoint product; sentinel endpoints are read as infinities."""
    if x == 0 or y == 0:
        return 0
    if abs(x) >= INF or abs(y) >= INF:
        return INF if (x > 0) == (y > 0) else -INF
    return x * y


def _mul(a: Iv, b: Iv) -> Iv:
    a, b = _store(a), _store(b)
    cands = [_emul(x, y) for x in a for y in b]
    return (_lo_store(min(cands)), _hi_store(max(cands)))


def _tdiv(a: int, b: int) -> int:
    q = abs(a) // abs(b)
    return q if (a < 0) == (b < 0) else -q


def _ediv(a: int, b: int) -> int:
    return a // b if b > 0 else -(a // -b)


def _div_iv(a: Iv, b: Iv, fn) -> Optional[Iv]:
    """Forward interval of a division; None when the divisor is exactly zero."""
    a, b = _store(a), _store(b)
    if b == (0, 0):
        return None
    if all(abs(e) < INF for e in (*a, *b)) and (b[0] >= 1 or b[1] <= -1):
        cands = [fn(x, y) for x in a for y in b]
        return (_lo_store(min(cands)), _hi_store(max(cands)))
    if a[0] <= -INF or a[1] >= INF:
        return (-INF, INF)
    # Divisor spans zero or is unbounded: for every defined quotient the
    # divisor magnitude is at least one, so |q| <= max |dividend endpoint|.
    m = max(abs(a[0]), abs(a[1]))
    return (_lo_store(-m), _hi_store(m))


def _formula_status(f: Formula, env: dict[str, Iv]) -> Optional[bool]:
    """True if entailed, False if refuted, None if undecided under env."""
    if isinstance(f, Rel):
        la = _fwd(f.lhs, env)
        rb = _fwd(f.rhs, env)
        if la is None or rb is None:
            return False
        (ll, lh), (rl, rh) = la, rb
        if f.op == "<":
            return True if lh < rl else False if ll >= rh else None
        if f.op == "<=":
            return True if lh <= rl else False if ll > rh else None
        if f.op == ">":
            return True if ll > rh else False if lh <= rl else None
        if f.op == ">=":
            return True if ll >= rh else False if lh < rl else None
        if f.op == "=":
            if ll == lh == rl == rh:
                return True
            return False if lh < rl or ll > rh else None
        if f.op == "!=":
            if lh < rl or ll > rh:
                return True
            return False if ll == lh == rl == rh else None
    if isinstance(f, OrRel):
        states = [_formula_status(p, env) for p in f.parts]
        if any(s is True for s in states):
            return True
        return False if all(s is False for s in states) else None
    if isinstance(f, AndRel):
        states = [_formula_status(p, env) for p in f.parts]
        if any(s is False for s in states):
            return False
        return True if all(s is True for s in states) else None
    raise TypeError(type(f).__name__)


def _fwd(t: Term, env: dict[str, Iv]) -> Optional[Iv]:
    """Forward interval of a term; None when undefined everywhere (div by 0)."""
    if isinstance(t, Const):
        return (t.value, t.value)
    if isinstance(t, Var):
        return env[t.name]
    if isinstance(t, Neg):
        a = _fwd(t.operand, env)
        return None if a is None else _neg(a)
    if isinstance(t, BinTerm):
        a = _fwd(t.lhs, env)
        b = _fwd(t.rhs, env)
        if a is None or b is None:
            return None
        if t.op == "+":
            return _add(a, b)
        if t.op == "-":
            return _sub(a, b)
        if t.op == "*":
            return _mul(a, b)
        if t.op == "/":
            return _div_iv(a, b, _tdiv)
        if t.op == "div":
            return _div_iv(a, b, _ediv)
        raise ValueError(t.op)
    if isinstance(t, Ite):
        st = _formula_status(t.cond, env)
        if st is True:
            return _fwd(t.then, env)
        if st is False:
            return _fwd(t.els, env)
        a = _fwd(t.then, env)
        b = _fwd(t.els, env)
        if a is None:
            return b
        if b is None:
            return a
        return (min(a[0], b[0]), max(a[1], b[1]))
    raise TypeError(type(t).__name__)


class _Empty(Exception):
    pass


def _narrow(t: Term, target: Iv, env: dict[str, Iv]) -> bool:
    """Narrow variables so the term fits target; True if anything changed."""
    if _is_empty(target):
        raise _Empty()
    if isinstance(t, Const):
        if not (target[0] <= t.value <= target[1]):
            raise _Empty()
        return False
    if isinstance(t, Var):
        cur = env[t.name]
        new = _inter(cur, target)
        if _is_empty(new):
            raise _Empty()
        new = _store(new)
        if new != cur:
            env[t.name] = new
            return True
        return False
    if isinstance(t, Neg):
        return _narrow(t.operand, _neg(target), env)
    if isinstance(t, BinTerm):
        a = _fwd(t.lhs, env)
        b = _fwd(t.rhs, env)
        if a is None or b is None:
            raise _Empty()
        changed = False
        if t.op == "+":
            changed |= _narrow(t.lhs, _sub(target, b), env)
            changed |= _narrow(t.rhs, _sub(target, _fwd(t.lhs, env) or a), env)
        elif t.op == "-":
            changed |= _narrow(t.lhs, _add(target, b), env)
            changed |= _narrow(t.rhs, _sub(_fwd(t.lhs, env) or a, target), env)
        elif t.op == "*":
            changed |= _narrow_mul(t.lhs, target, _fwd(t.rhs, env) or b, env)
            changed |= _narrow_mul(t.rhs, target, _fwd(t.lhs, env) or a, env)
        # "/", "div": no backward narrowing, search closes the gap.
        return changed
    if isinstance(t, Ite):
        return False
    raise TypeError(type(t).__name__)


def _narrow_mul(factor: Term, target: Iv, other: Iv, env: dict[str, Iv]) -> bool:
    """factor * other within target: narrow factor, outward-rounded quotients."""
    target, other = _store(target), _store(other)
    if other[0] <= 0 <= other[1]:
        return False  # zero divisor possible, no sound narrowing
    cands = []
    for tt in target:
        for oo in other:
            if abs(tt) >= INF:
                cands.append(INF if (tt > 0) == (oo > 0) else -INF)
            elif abs(oo) >= INF:
                cands.extend((-1, 1))       # finite / unbounded: unit cover
            else:
                cands.append(tt // oo)          # floor
                cands.append(-((-tt) // oo))    # ceil
    return _narrow(factor, (_lo_store(min(cands)), _hi_store(max(cands))), env)


def _revise(f: Rel, env: dict[str, Iv]) -> bool:
    a = _fwd(f.lhs, env)
    b = _fwd(f.rhs, env)
    if a is None or b is None:
        raise _Empty()
    changed = False
    if f.op == "=":
        t = _inter(a, b)
        if _is_empty(t):
            raise _Empty()
        changed |= _narrow(f.lhs, t, env)
        changed |= _narrow(f.rhs, t, env)
    elif f.op == "<=":
        changed |= _narrow(f.lhs, (-INF, b[1]), env)
        changed |= _narrow(f.rhs, (a[0], INF), env)
    elif f.op == "<":
        changed |= _narrow(f.lhs, (-INF, _edec(b[1])), env)
        changed |= _narrow(f.rhs, (_einc(a[0]), INF), env)
    elif f.op == ">=":
        changed |= _narrow(f.lhs, (b[0], INF), env)
        changed |= _narrow(f.rhs, (-INF, a[1]), env)
    elif f.op == ">":
        changed |= _narrow(f.lhs, (_einc(b[0]), INF), env)
        changed |= _narrow(f.rhs, (-INF, _edec(a[1])), env)
    elif f.op == "!=":
        if b[0] == b[1]:
            c = b[0]
            lo, hi = a
            if lo == hi == c:
                raise _Empty()
            if lo == c:
                changed |= _narrow(f.lhs, (lo + 1, hi), env)
            elif hi == c:
                changed |= _narrow(f.lhs, (lo, hi - 1), env)
        if a[0] == a[1]:
            c = a[0]
            lo, hi = b
            if lo == hi == c:
                raise _Empty()
            if lo == c:
                changed |= _narrow(f.rhs, (lo + 1, hi), env)
            elif hi == c:
                changed |= _narrow(f.rhs, (lo, hi - 1), env)
    else:
        raise ValueError(f.op)
    return changed


class _Budget:
    def __init__(self, nodes: int, deadline: Optional[float]):
        self.nodes = nodes
        self.deadline = deadline

    def spend(self) -> bool:
        self.nodes -= 1
        if self.nodes <= 0:
            return False
        if self.deadline is not None and self.nodes % 256 == 0:
            if time.monotonic() > self.deadline:
                return False
        return True


class _Unknown(Exception):
    pass


def _flatten(f: Formula, atoms: list[Rel], clauses: list[OrRel]) -> None:
    if isinstance(f, Rel):
        atoms.append(f)
    elif isinstance(f, AndRel):
        for p in f.parts:
            _flatten(p, atoms, clauses)
    elif isinstance(f, OrRel):
        clauses.append(f)
    else:
        raise TypeError(type(f).__name__)


def _propagate(atoms: list[Rel], env: dict[str, Iv]) -> None:
    for _ in range(_ROUND_CAP):
        changed = False
        for f in atoms:
            changed |= _revise(f, env)
        if not changed:
            return


def decide(system: ConstraintSystem, node_budget: int = 200_000,
           timeout_s: Optional[float] = None) -> Verdict:
    """Sat with a verified model, unsat, or unknown on exhausted budget."""
    defs, order, _residual = _definition_order(system)
    names = system.declared
    free = [v for v in names if v not in defs]
    formulas = [a.formula for a in system.assertions]
    deadline = time.monotonic() + timeout_s if timeout_s is not None else None
    budget = _Budget(node_budget, deadline)

    base_atoms: list[Rel] = []
    base_clauses: list[OrRel] = []
    for f in formulas:
        _flatten(f, base_atoms, base_clauses)

    def finish(env: dict[str, Iv]) -> Optional[dict[str, int]]:
        model = {v: env[v][0] for v in free}
        try:
            for v in order:
                model[v] = eval_term(defs[v], model)
            for v in names:
                model.setdefault(v, env[v][0])
            if all(eval_formula(f, model) for f in formulas):
                return model
        except EvalError:
            pass
        return None

    def solve(atoms: list[Rel], clauses: list[OrRel], env: dict[str, Iv]) -> Optional[dict[str, int]]:
        """Model or None (box unsat); raises _Unknown on budget exhaustion."""
        if not budget.spend():
            raise _Unknown()
        try:
            _propagate(atoms, env)
        except _Empty:
            return None

        # Clause processing: drop entailed, fail refuted, unit-propagate.
        pending: list[OrRel] = []
        new_atoms: list[Rel] = []
        for cl in clauses:
            states = [_formula_status(p, env) for p in cl.parts]
            if any(s is True for s in states):
                continue
            open_parts = [p for p, s in zip(cl.parts, states) if s is not False]
            if not open_parts:
                return None
            if len(open_parts) == 1:
                sub_a: list[Rel] = []
                sub_c: list[OrRel] = []
                _flatten(open_parts[0], sub_a, sub_c)
                new_atoms.extend(sub_a)
                pending.extend(sub_c)
            else:
                pending.append(OrRel(tuple(open_parts)))
        if new_atoms:
            return solve(atoms + new_atoms, pending, env)

        if pending:
            cl = pending[0]
            rest = pending[1:]
            unknown = False
            for part in cl.parts:
                sub_a, sub_c = [], []
                _flatten(part, sub_a, sub_c)
                try:
                    got = solve(atoms + sub_a, rest + sub_c, dict(env))
                except _Unknown:
                    unknown = True
                    continue
                if got is not None:
                    return got
            if unknown:
                raise _Unknown()
            return None

        # Pure conjunction of atoms now.  Split on free variables.
        undecided = [v for v in free if env[v][0] != env[v][1]]
        if not undecided:
            return finish(env)
        v = undecided[0]
        lo, hi = env[v]
        if hi - lo + 1 <= _ENUM_LIMIT and -INF < lo and hi < INF:
            for value in range(lo, hi + 1):
                e2 = dict(env)
                e2[v] = (value, value)
                got = solve(atoms, [], e2)
                if got is not None:
                    return got
            return None
        candidates = []
        if lo > -INF:
            candidates.append(lo)
        if hi < INF:
            candidates.append(hi)
        if lo <= 0 <= hi:
            candidates.append(0)
        if lo > -INF and hi < INF:
            candidates.append((lo + hi) // 2)
        seen: set[int] = set()
        for c in candidates:
            if c in seen:
                continue
            seen.add(c)
            e2 = dict(env)
            e2[v] = (c, c)
            got = solve(atoms, [], e2)
            if got is not None:
                return got
        if lo > -INF and hi < INF:
            mid = (lo + hi) // 2
            unknown = False
            for box in ((lo, mid), (mid + 1, hi)):
                e2 = dict(env)
                e2[v] = box
                try:
                    got = solve(atoms, [], e2)
                except _Unknown:
                    unknown = True
                    continue
                if got is not None:
                    return got
            if unknown:
                raise _Unknown()
            return None
        # Unbounded and candidates failed: give up on this box.
        raise _Unknown()

    env0 = {v: (-INF, INF) for v in names}
    try:
        model = solve(base_atoms, base_clauses, env0)
    except _Unknown:
        return Verdict("unknown", reason="search budget exhausted")
    except RecursionError:
        return Verdict("unknown", reason="search recursion limit")
    if model is None:
        return Verdict("unsat")
    return Verdict("sat", model=model)


def term_interval(t: Term, env: dict[str, Iv]) -> Optional[Iv]:
    """Sound enclosure of a term's value given variable enclosures.

    ``None`` means the term is undefined for every assignment in env (division
    by a divisor that can only be zero).  Used by checkers to skip probes whose
    value provably stays in range.
    """
    return _fwd(t, env)


def formula_interval_status(f: Formula, env: dict[str, Iv]) -> Optional[bool]:
    """True/False when the enclosures entail or refute the formula, else None."""
    return _formula_status(f, env)
