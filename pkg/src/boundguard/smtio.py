"""SMT-LIB v2 interchange: script parsing, a solver executable, and a client.

Three pieces share the s-expression grammar that emit_smtlib produces:

* ``parse_script`` reads a script back into a ConstraintSystem, so dumped
  constraint files round-trip and the solver executable can be tested against
  the emitter byte for byte.
* ``solver_main`` is the ``boundguard-smt`` console entry point: a minimal
  SMT-LIB v2 read-eval loop over stdin that answers ``(check-sat)`` with the
  built-in decision engine and supports ``(get-model)``, ``(reset)``,
  ``(echo ...)`` and ``(exit)``.  Any compliant solver binary can take its
  place; this one exists so the subprocess route always has a real peer.
* ``SolverClient`` drives such a binary over pipes with a per-query timeout,
  returning Verdicts with parsed models.
"""

from __future__ import annotations

import os
import selectors
import shlex
import subprocess
import sys
import time
from typing import Optional, Union

from .constraints import (
    AndRel, BinTerm, Const, ConstraintSystem, Formula, Ite, Neg, OrRel, Rel,
    REL_OPS, SolverUnavailable, Term, Var, Verdict, emit_smtlib,
)

Sexpr = Union[str, list]


class SmtParseError(ValueError):
    pass


# ---------------------------------------------------------------------------
# S-expressions


def tokenize_sexpr(text: str) -> list[str]:
    tokens: list[str] = []
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c in " \t\r\n":
            i += 1
        elif c == ";":
            while i < n and text[i] != "\n":
                i += 1
        elif c in "()":
            tokens.append(c)
            i += 1
        elif c == '"':
            j = i + 1
            while j < n and text[j] != '"':
                j += 1
            if j >= n:
                raise SmtParseError("unterminated string literal")
            tokens.append(text[i:j + 1])
            i = j + 1
        else:
            j = i
            while j < n and text[j] not in ' \t\r\n();"':
                j += 1
            tokens.append(text[i:j])
            i = j
    return tokens


def parse_sexprs(text: str) -> list[Sexpr]:
    tokens = tokenize_sexpr(text)
    forms: list[Sexpr] = []
    stack: list[list] = []
    for tok in tokens:
        if tok == "(":
            stack.append([])
        elif tok == ")":
            if not stack:
                raise SmtParseError("unbalanced ')'")
            done = stack.pop()
            if stack:
                stack[-1].append(done)
            else:
                forms.append(done)
        else:
            if stack:
                stack[-1].append(tok)
            else:
                forms.append(tok)
    if stack:
        raise SmtParseError("unbalanced '('")
    return forms


def _int_atom(s: str) -> Optional[int]:
    if s.isdigit() or (s[:1] == "-" and s[1:].isdigit()):
        return int(s)
    return None


def parse_term(e: Sexpr) -> Term:
    if isinstance(e, str):
        v = _int_atom(e)
        if v is not None:
            return Const(v)
        return Var(e)
    if not e:
        raise SmtParseError("empty term")
    head = e[0]
    if not isinstance(head, str):
        raise SmtParseError("compound head")
    args = e[1:]
    if head == "-" and len(args) == 1:
        inner = parse_term(args[0])
        if isinstance(inner, Const):
            return Const(-inner.value)
        return Neg(inner)
    if head == "ite" and len(args) == 3:
        return Ite(parse_formula(args[0]), parse_term(args[1]), parse_term(args[2]))
    if head in ("+", "-", "*", "div") and len(args) >= 2:
        out = parse_term(args[0])
        for a in args[1:]:
            out = BinTerm(head, out, parse_term(a))
        return out
    raise SmtParseError(f"unknown term head {head!r}")


_NEG_REL = {"=": "!=", "!=": "=", "<": ">=", "<=": ">", ">": "<=", ">=": "<"}


def _negate(f: Formula) -> Formula:
    if isinstance(f, Rel):
        return Rel(_NEG_REL[f.op], f.lhs, f.rhs)
    if isinstance(f, OrRel):
        return AndRel(tuple(_negate(p) for p in f.parts))
    if isinstance(f, AndRel):
        return OrRel(tuple(_negate(p) for p in f.parts))
    raise SmtParseError("cannot negate formula")


def parse_formula(e: Sexpr) -> Formula:
    if isinstance(e, str):
        raise SmtParseError(f"expected formula, got atom {e!r}")
    if not e or not isinstance(e[0], str):
        raise SmtParseError("bad formula")
    head, args = e[0], e[1:]
    if head == "distinct" and len(args) == 2:
        return Rel("!=", parse_term(args[0]), parse_term(args[1]))
    if head in REL_OPS and len(args) == 2:
        return Rel(head, parse_term(args[0]), parse_term(args[1]))
    if head == "or":
        return OrRel(tuple(parse_formula(a) for a in args))
    if head == "and":
        return AndRel(tuple(parse_formula(a) for a in args))
    if head == "not" and len(args) == 1:
        return _negate(parse_formula(args[0]))
    raise SmtParseError(f"unknown formula head {head!r}")


def parse_script(text: str) -> ConstraintSystem:
    """Declarations and assertions of a script; other commands are ignored."""
    system = ConstraintSystem()
    for form in parse_sexprs(text):
        if not isinstance(form, list) or not form:
            continue
        head = form[0]
        if head == "declare-fun" and len(form) == 4:
            system.declare(form[1])
        elif head == "declare-const" and len(form) == 3:
            system.declare(form[1])
        elif head == "assert" and len(form) == 2:
            system.add("path-condition", parse_formula(form[1]))
    return system


# ---------------------------------------------------------------------------
# Solver executable


def _model_sexpr(names: list[str], model: dict[str, int]) -> str:
    lines = ["("]
    for name in names:
        v = model.get(name, 0)
        val = str(v) if v >= 0 else f"(- {-v})"
        lines.append(f"  (define-fun {name} () Int {val})")
    lines.append(")")
    return "\n".join(lines)


def solver_main(argv: Optional[list[str]] = None) -> int:
    """Entry point of ``boundguard-smt``.

    Reads SMT-LIB v2 commands from stdin (or from a script file given as the
    sole argument), executing each complete form as soon as its parentheses
    balance.
    """
    args = list(sys.argv[1:] if argv is None else argv)
    if args and args[0] in ("-h", "--help"):
        print("usage: boundguard-smt [script.smt2]")
        return 0

    from .intsolve import decide

    system = ConstraintSystem()
    last: Optional[Verdict] = None
    out = sys.stdout

    def run_form(form: Sexpr) -> Optional[str]:
        nonlocal system, last
        if not isinstance(form, list) or not form or not isinstance(form[0], str):
            print('(error "expected a command")', file=out, flush=True)
            return None
        head = form[0]
        try:
            if head in ("set-logic", "set-option", "set-info"):
                pass
            elif head == "declare-fun" and len(form) == 4:
                system.declare(form[1])
            elif head == "declare-const" and len(form) == 3:
                system.declare(form[1])
            elif head == "assert" and len(form) == 2:
                system.add("path-condition", parse_formula(form[1]))
            elif head == "check-sat":
                last = decide(system)
                print(last.status, file=out, flush=True)
            elif head == "get-model":
                if last is None or not last.is_sat or last.model is None:
                    print('(error "no model available")', file=out, flush=True)
                else:
                    print(_model_sexpr(system.declared, last.model), file=out, flush=True)
            elif head == "echo" and len(form) == 2:
                print(str(form[1]).strip('"'), file=out, flush=True)
            elif head == "reset":
                system = ConstraintSystem()
                last = None
            elif head == "exit":
                return "exit"
            else:
                print(f'(error "unsupported command {head}")', file=out, flush=True)
        except SmtParseError as exc:
            print(f'(error "{exc}")', file=out, flush=True)
        return None

    if args:
        with open(args[0], "r", encoding="utf-8") as fh:
            text = fh.read()
        for form in parse_sexprs(text):
            if run_form(form) == "exit":
                break
        return 0

    buf = ""
    while True:
        chunk = sys.stdin.readline()
        if chunk == "":
            break
        buf += chunk
        # Execute every form that is complete so far.
        while True:
            try:
                depth = 0
                end = None
                in_str = False
                for i, c in enumerate(buf):
                    if in_str:
                        if c == '"':
                            in_str = False
                        continue
                    if c == '"':
                        in_str = True
                    elif c == "(":
                        depth += 1
                    elif c == ")":
                        depth -= 1
                        if depth == 0:
                            end = i + 1
                            break
                        if depth < 0:
                            raise SmtParseError("unbalanced ')'")
                if end is None:
                    break
                form_text, buf = buf[:end], buf[end:]
                forms = parse_sexprs(form_text)
            except SmtParseError as exc:
                print(f'(error "{exc}")', flush=True)
                buf = ""
                break
            if forms and run_form(forms[0]) == "exit":
                return 0
    return 0


# ---------------------------------------------------------------------------
# Subprocess client


_SENTINEL = "@@boundguard-done@@"


class SolverClient:
    """Drives an SMT-LIB v2 solver binary over pipes, one query at a time.

    ``path`` may include arguments ("z3 -in" style); it is split like a shell
    word list.  Every query is framed by ``(reset)`` before and an ``(echo)``
    sentinel after, so responses cannot bleed between queries.  A query that
    misses its deadline kills the process (restarted lazily) and comes back
    unknown.
    """

    def __init__(self, path: str):
        self.argv = shlex.split(path)
        if not self.argv:
            raise SolverUnavailable("empty solver command")
        self._proc: Optional[subprocess.Popen] = None
        self._pending = b""
        self._spawn()

    def _spawn(self) -> None:
        try:
            self._proc = subprocess.Popen(
                self.argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
            )
        except OSError as exc:
            self._proc = None
            raise SolverUnavailable(f"cannot start solver {self.argv[0]!r}: {exc}") from exc
        self._pending = b""

    def _kill(self) -> None:
        if self._proc is not None:
            try:
                self._proc.kill()
                self._proc.wait(timeout=5)
            except OSError:
                pass
            self._proc = None
        self._pending = b""

    def close(self) -> None:
        if self._proc is None:
            return
        try:
            assert self._proc.stdin is not None
            self._proc.stdin.write(b"(exit)\n")
            self._proc.stdin.flush()
            self._proc.wait(timeout=2)
        except (OSError, subprocess.TimeoutExpired, ValueError):
            self._kill()
        self._proc = None

    def _read_until_sentinel(self, deadline: float) -> Optional[list[str]]:
        """Collect response lines up to the sentinel, or None on deadline.

        Reads the raw pipe fd directly (select + os.read) and splits lines
        here: select on a *buffered* stream is unsound, since readline can
        pull several lines into user space and leave the fd silent while
        answers are already waiting in the buffer.
        """
        assert self._proc is not None and self._proc.stdout is not None
        raw_fd = self._proc.stdout.fileno()
        sel = selectors.DefaultSelector()
        sel.register(raw_fd, selectors.EVENT_READ)
        lines: list[str] = []
        try:
            while True:
                while b"\n" in self._pending:
                    raw, self._pending = self._pending.split(b"\n", 1)
                    line = raw.decode("utf-8", "replace").rstrip("\r")
                    if line == _SENTINEL:
                        return lines
                    lines.append(line)
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return None
                if not sel.select(timeout=remaining):
                    return None
                chunk = os.read(raw_fd, 65536)
                if chunk == b"":
                    raise SolverUnavailable("solver process ended unexpectedly")
                self._pending += chunk
        finally:
            sel.close()

    def check(self, system: ConstraintSystem, timeout_s: float = 10.0) -> Verdict:
        if self._proc is None or self._proc.poll() is not None:
            self._spawn()
        assert self._proc is not None and self._proc.stdin is not None
        script = (
            "(reset)\n"
            + emit_smtlib(system)
            + "(get-model)\n"
            + f'(echo "{_SENTINEL}")\n'
        )
        try:
            self._proc.stdin.write(script.encode("utf-8"))
            self._proc.stdin.flush()
        except (OSError, ValueError) as exc:
            self._kill()
            raise SolverUnavailable(f"cannot write to solver: {exc}") from exc
        try:
            lines = self._read_until_sentinel(time.monotonic() + timeout_s)
        except SolverUnavailable:
            self._kill()
            raise
        if lines is None:
            self._kill()
            return Verdict("unknown", reason="solver timeout")
        status = next((ln for ln in lines if ln in ("sat", "unsat", "unknown")), None)
        if status == "sat":
            model_text = "\n".join(ln for ln in lines if ln not in ("sat", "unsat", "unknown"))
            return Verdict("sat", model=_parse_model(model_text))
        if status == "unsat":
            return Verdict("unsat")
        reason = "; ".join(lines) if lines else "no solver answer"
        return Verdict("unknown", reason=reason)


def _parse_model(text: str) -> dict[str, int]:
    model: dict[str, int] = {}
    try:
        forms = parse_sexprs(text)
    except SmtParseError:
        return model
    entries: list = []
    for form in forms:
        if isinstance(form, list):
            entries.extend(p for p in form if isinstance(p, list))
    for entry in entries:
        # (define-fun name () Int value)
        if len(entry) == 5 and entry[0] == "define-fun" and isinstance(entry[1], str):
            value = parse_term(entry[4])
            if isinstance(value, Const):
                model[entry[1]] = value.value
    return model


if __name__ == "__main__":
    sys.exit(solver_main())
