"""Shared test utilities: program builders, sweeps, and the differential oracle."""

from __future__ import annotations

import os
import random
import shutil
import stat
import sys
from pathlib import Path

sys.setrecursionlimit(100_000)

from boundguard import frontend as F
from boundguard.cfg import CfgConfig, build_unit
from boundguard.concrete import replay_plan, run_program
from boundguard.constraints import SolverConfig
from boundguard.overflow import OverflowChecker, discover_upper_bound, run_stamp_for
from boundguard.symexec import Analyzer, default_summaries

HAVE_CC = shutil.which("cc") is not None


def run_src(src: str, file: str, bound, args=(), inputs=()):
    """Parse and execute one source text concretely."""
    return run_program(F.parse_ok(src, file), args=args, inputs=inputs,
                       bound=bound)


def write_solver_shim(directory: Path) -> Path:
    """Executable script that speaks SMT-LIB v2 by delegating to the
    in-process engine, for exercising the subprocess solver route."""
    src_dir = Path(__file__).resolve().parent.parent / "src"
    shim = directory / "smt-shim"
    shim.write_text(
        "#!/bin/sh\n"
        f'PYTHONPATH="{src_dir}" exec {sys.executable} -m boundguard.smtio "$@"\n',
        encoding="utf-8")
    shim.chmod(shim.stat().st_mode | stat.S_IXUSR | stat.S_IXGRP | stat.S_IXOTH)
    return shim


def exhaustive_preservation(original_src: str, patched_src: str, file: str,
                            bound, arg_tuples) -> tuple[int, int]:
    """Sweep both programs over the argument tuples.

    Returns (count of inputs where the original overflowed, count of in-range
    inputs whose observable output differs).  Asserts the patched program
    never raises an overflow event on any input.
    """
    original = F.parse_ok(original_src, file)
    patched = F.parse_ok(patched_src, file)
    overflowed = 0
    mismatches = 0
    for args in arg_tuples:
        before = run_program(original, args=args, bound=bound)
        after = run_program(patched, args=args, bound=bound)
        assert not after.events, (args, after.events)
        if before.events:
            overflowed += 1
        elif before.output != after.output:
            mismatches += 1
    return overflowed, mismatches


# ---------------------------------------------------------------------------
# Random 8-bit program generator for the detector-vs-execution oracle


def _gen_expr(rng, vars_, depth):
    if depth == 0 or rng.random() < 0.35:
        if vars_ and rng.random() < 0.7:
            return rng.choice(vars_)
        return str(rng.randint(-20, 20))
    op = rng.choice(["+", "-", "*", "*", "/"])
    lhs = _gen_expr(rng, vars_, depth - 1)
    if op == "/":
        rhs = str(rng.choice([2, 3, 5, 7]))  # constant nonzero divisors only
    else:
        rhs = _gen_expr(rng, vars_, depth - 1)
    return f"({lhs} {op} {rhs})"


def _gen_cmp(rng, vars_):
    v = rng.choice(vars_) if vars_ else "0"
    op = rng.choice(["<", "<=", ">", ">=", "==", "!="])
    c = rng.randint(-30, 30)
    if rng.random() < 0.3 and len(vars_) > 1:
        v2 = rng.choice(vars_)
        op2 = rng.choice(["<", ">"])
        joiner = rng.choice(["&&", "||"])
        return f"({v} {op} {c} {joiner} {v2} {op2} {rng.randint(-30, 30)})"
    return f"({v} {op} {c})"


def _gen_stmts(rng, vars_, n, depth_budget, fresh, indent="  "):
    lines = []
    for _ in range(n):
        kind = rng.random()
        if kind < 0.45 or not vars_:
            name = fresh()
            lines.append(f"{indent}int {name} = {_gen_expr(rng, vars_, 2)};")
            vars_.append(name)
        elif kind < 0.75:
            tgt = rng.choice(vars_)
            lines.append(f"{indent}{tgt} = {_gen_expr(rng, vars_, 2)};")
        elif kind < 0.92 and depth_budget > 0:
            inner = _gen_stmts(rng, list(vars_), rng.randint(1, 2),
                               depth_budget - 1, fresh, indent + "  ")
            block = (f"{indent}if {_gen_cmp(rng, vars_)} {{\n"
                     + "\n".join(inner) + f"\n{indent}}}")
            if rng.random() < 0.4:
                inner2 = _gen_stmts(rng, list(vars_), 1, depth_budget - 1,
                                    fresh, indent + "  ")
                block += " else {\n" + "\n".join(inner2) + f"\n{indent}}}"
            lines.append(block)
        elif depth_budget > 0 and vars_:
            i = fresh()
            trip = rng.randint(1, 6)
            tgt = rng.choice(vars_)
            body = f"{indent}  {tgt} = {_gen_expr(rng, vars_, 1)};"
            lines.append(f"{indent}for (int {i} = 0; {i} < {trip}; "
                         f"{i} = {i} + 1) {{\n{body}\n{indent}}}")
        else:
            tgt = rng.choice(vars_)
            lines.append(f"{indent}{tgt} = {_gen_expr(rng, vars_, 1)};")
    return lines


def gen_8bit_program(rng) -> str:
    """One random program over a single char-range parameter."""
    vars_ = ["a"]
    counter = iter(range(10_000))
    fresh = lambda: f"v{next(counter)}"  # noqa: E731
    body = _gen_stmts(rng, vars_, rng.randint(3, 7), 2, fresh)
    ret = rng.choice(vars_)
    return ("char cap = CHAR_MAX;\n"
            "int main(char a) {\n" + "\n".join(body) + f"\n  return {ret};\n}}\n")


def differential_check(n_programs: int, seed: int) -> tuple[int, int]:
    """Detector verdicts vs exhaustive 8-bit execution on random programs.

    For each generated program: the set of (line, col) sites the checker
    reports must equal the set of sites where some input in [-128, 127]
    raises an overflow event; every reported disjunct must be witnessed by
    the sweep; and every report's own witness must replay to an event at
    its site.  Returns (total reports, mismatching programs).
    """
    rng = random.Random(seed)
    mismatches = 0
    total_reports = 0
    for _ in range(n_programs):
        src = gen_8bit_program(rng)
        program = F.parse_ok(src)
        bound = discover_upper_bound(program)
        assert bound.upper_value == 127, bound

        checker = OverflowChecker(bound, run_stamp=run_stamp_for(src),
                                  capture_full=True)
        analyzer = Analyzer(build_unit(program), CfgConfig(), SolverConfig(),
                            [checker], default_summaries())
        try:
            result = analyzer.run()
        finally:
            analyzer.close()
        assert not checker.unconfirmed, (src, checker.unconfirmed)

        swept_sites = set()
        swept_arms = set()
        for a in range(-128, 128):
            rr = run_program(program, "main", args=(a,), bound=bound,
                             max_steps=50_000)
            assert rr.trap is None, (src, a, rr.trap)
            for e in rr.events:
                swept_sites.add((e.line, e.col))
                swept_arms.add((e.line, e.col, e.disjunct))

        reported_sites = {(r.line, r.col) for r in result.reports}
        total_reports += len(result.reports)
        if reported_sites != swept_sites:
            mismatches += 1
            continue
        for rep in result.reports:
            assert (rep.line, rep.col, rep.disjunct) in swept_arms, \
                (src, rep.line, rep.col, rep.disjunct)
            args, inputs = replay_plan(rep.witness, program, "main")
            rr = run_program(program, "main", args=args, inputs=inputs,
                             bound=bound)
            assert (rep.file, rep.line, rep.col) in rr.event_sites, \
                (src, rep.problem_id)
    return total_reports, mismatches


def c_trunc_div(a: int, b: int) -> int:
    """C99 integer division: truncation toward zero."""
    q = abs(a) // abs(b)
    return q if (a >= 0) == (b >= 0) else -q


def install_env_with_src() -> dict:
    env = dict(os.environ)
    src_dir = str(Path(__file__).resolve().parent.parent / "src")
    existing = env.get("PYTHONPATH")
    env["PYTHONPATH"] = src_dir + (os.pathsep + existing if existing else "")
    return env
