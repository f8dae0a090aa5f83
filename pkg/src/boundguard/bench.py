"""Seeded micro-benchmark generation and corpus scoring.

Every generated program carries exactly one reachable true-positive overflow,
a configurable number of decoy sites (input arithmetic dominated by range
guards, so the overflow probe over the guarded path is unsatisfiable), and
enough filler to hit a target size class.  Generation is deterministic from
the BenchSpec alone, verifies its own ground truth before writing anything (the
recorded witness is executed concretely and must trip exactly the seeded
line; each decoy is probed in isolation and must be unsatisfiable), and
records everything a scorer needs in a JSON-lines manifest.

Filler is built so the analyzer discharges it without solver work: every
filler value is rooted in constants and tracked concretely during generation,
branch conditions on filler are concrete (one arm prunes by interval
refutation), and loops stay within the unroll bound.  Inputs enter only as
root-function parameters, never through stores, so the only solver-visible
sites are the seeded one and the guarded decoys.

Size classes: "S" is the corpus class (roughly 550-900 lines, matching the
scale at which detection completeness is scored); "6K", "11K", "20K" target
those line counts within ten percent for the scaling measurements; "R" is a
small self-contained shape with a driver `main`, used for compiled runtime
overhead measurements (its seeded function is analyzed as an explicit root).
"""

from __future__ import annotations

import hashlib
import json
import math
import random
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from . import frontend as F
from .concrete import Interpreter
from .constraints import (
    BinTerm, Const, ConstraintSystem, GROUP_PATH, GROUP_PROBE, OrRel, Rel,
    Var, check_sat,
)
from .overflow import BoundInfo, analyze_source
from .repair import RepairConfig, generate_candidates, revalidate


class GenerationError(Exception):
    pass


class ManifestMismatch(Exception):
    pass


LOC_TARGETS = {"6K": 6000, "11K": 11000, "20K": 20000}
LOC_TOLERANCE = 0.10
_S_RANGE = (550, 900)
_R_RANGE = (240, 320)

_INT = F.KINDS["int"]
_DEFAULT_BOUND = BoundInfo.from_macro(
    "INT_MAX", F.DEFAULT_MACRO_VALUES["INT_MAX"], "default")

# Seeded statement shapes: all three are repairable by the shipped pool.
TP_SHAPES = ("square", "mul-const", "add-const")
_MUL_CONST = 70000
_ADD_CONST = 2000000000


@dataclass(frozen=True)
class BenchSpec:
    function_count: int
    loop_iteration_count: int
    false_positive_count: int
    seed_depth: int
    seed: int
    loc_class: str = "S"

    def validate(self) -> None:
        if self.function_count < 0 or self.false_positive_count < 0:
            raise GenerationError("counts must be non-negative")
        if not 1 <= self.seed_depth <= 8:
            raise GenerationError("seed_depth must be in 1..8")
        if not 1 <= self.loop_iteration_count <= 10:
            raise GenerationError("loop_iteration_count must be in 1..10")
        if self.loc_class not in ("S", "R", *LOC_TARGETS):
            raise GenerationError(f"unknown loc class {self.loc_class!r}")


@dataclass
class GeneratedProgram:
    source: str
    manifest: dict


@dataclass
class CorpusMetrics:
    programs: int = 0
    tp: int = 0
    fp: int = 0
    fn: int = 0
    manifest_tp: int = 0
    detect_s: list = field(default_factory=list)      # per program
    repair_gen_s: list = field(default_factory=list)  # per program
    loc_before: int = 0
    loc_after: int = 0
    repaired: int = 0
    repair_failed: int = 0
    per_class: dict = field(default_factory=dict)     # class -> [detect_s...]
    rows: list = field(default_factory=list)

    def to_dict(self) -> dict:
        total_detect = sum(self.detect_s)
        total_repair = sum(self.repair_gen_s)
        return {
            "schema_version": 1,
            "programs": self.programs,
            "tp": self.tp, "fp": self.fp, "fn": self.fn,
            "manifest_tp": self.manifest_tp,
            "tp_rate": (self.tp / self.manifest_tp) if self.manifest_tp else None,
            "detection_s_total": total_detect,
            "repair_generation_s_total": total_repair,
            "repair_generation_overhead": (total_repair / total_detect)
                                          if total_detect else None,
            "loc_before": self.loc_before,
            "loc_after": self.loc_after,
            "loc_increase": ((self.loc_after - self.loc_before) / self.loc_before)
                            if self.loc_before else None,
            "repaired": self.repaired,
            "repair_failed": self.repair_failed,
            "per_class_mean_detect_s": {
                k: sum(v) / len(v) for k, v in sorted(self.per_class.items()) if v
            },
            "rows": self.rows,
        }

    def table(self) -> str:
        d = self.to_dict()
        lines = [
            "program        class   loc   tp  fp  fn   detect_s   repair_s",
            "-" * 64,
        ]
        for r in self.rows:
            lines.append(
                f"{r['file']:<14} {r['class']:<6} {r['loc']:>5}  "
                f"{r['tp']:>3} {r['fp']:>3} {r['fn']:>3}  "
                f"{r['detect_s']:>9.3f}  {r['repair_gen_s']:>9.3f}")
        lines.append("-" * 64)
        lines.append(f"totals: programs={d['programs']} tp={d['tp']} "
                     f"fp={d['fp']} fn={d['fn']}")
        lines.append(f"detection total {d['detection_s_total']:.3f}s, "
                     f"repair generation total {d['repair_generation_s_total']:.3f}s"
                     + (f" ({100 * d['repair_generation_overhead']:.2f}% of detection)"
                        if d["repair_generation_overhead"] is not None else ""))
        if d["loc_increase"] is not None:
            lines.append(f"loc {d['loc_before']} -> {d['loc_after']} "
                         f"(+{100 * d['loc_increase']:.3f}%)")
        for k, v in d["per_class_mean_detect_s"].items():
            lines.append(f"class {k}: mean detection {v:.3f}s")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Program synthesis


class _Writer:
    def __init__(self) -> None:
        self.lines: list[str] = []
        self.depth = 0

    def emit(self, text: str = "") -> int:
        self.lines.append(("    " * self.depth + text) if text else "")
        return len(self.lines)

    @property
    def loc(self) -> int:
        return len(self.lines)


class _Gen:
    """One generated program; deterministic from its BenchSpec."""

    def __init__(self, spec: BenchSpec, file: str):
        spec.validate()
        self.spec = spec
        self.file = file
        self.rng = random.Random(spec.seed * 1_000_003 + 17)
        self.w = _Writer()
        self.counter = 0
        self.branch_count = 0   # if statements + loops emitted (ground truth)
        self.fn_values: list[tuple[str, int]] = []   # (name, concrete return)
        self.decoy_lines: list[int] = []
        self.tp_line = 0
        self.tp_statement = ""
        self.tp_shape = ""
        self.witness_args: list[int] = []
        self.benign_args: list[int] = []

    def fresh(self, prefix: str = "v") -> str:
        self.counter += 1
        return f"{prefix}{self.counter}"

    # -- filler ------------------------------------------------------------

    def _pad_chain(self, scope: list[tuple[str, int]], length: int) -> None:
        """Constant-rooted arithmetic; every value tracked and kept small."""
        for _ in range(length):
            r = self.rng
            if not scope or r.random() < 0.3:
                n, v = self.fresh(), r.randint(-99, 99)
                self.w.emit(f"int {n} = {v};")
            else:
                a, av = r.choice(scope)
                form = r.randrange(4)
                if form == 0:
                    k = r.randint(-80, 80)
                    n, v, text = self.fresh(), av + k, f"{a} + {k}"
                elif form == 1:
                    k = r.randint(-80, 80)
                    n, v, text = self.fresh(), av - k, f"{a} - {k}"
                elif form == 2:
                    k = r.randint(2, 9)
                    n, v, text = self.fresh(), av * k, f"{a} * {k}"
                else:
                    k = r.choice((2, 3, 5, 7))
                    n, v, text = self.fresh(), _trunc(av, k), f"{a} / {k}"
                if abs(v) > 900:
                    n, v = self.fresh(), r.randint(-99, 99)
                    self.w.emit(f"int {n} = {v};")
                else:
                    self.w.emit(f"int {n} = {text};")
            scope.append((n, v))

    def _pad_branch(self, scope: list[tuple[str, int]]) -> None:
        """Branch on a concrete value: the analyzer prunes the dead arm."""
        r = self.rng
        if scope:
            a, av = r.choice(scope)
            t = r.randint(-100, 100)
            cond, taken = f"{a} > {t}", av > t
        else:
            cond, taken = "1 > 0", True
        self.branch_count += 1
        self.w.emit(f"if ({cond}) {{")
        self.w.depth += 1
        self._pad_chain(list(scope), r.randint(1, 3))
        self.w.depth -= 1
        self.w.emit("} else {")
        self.w.depth += 1
        self._pad_chain(list(scope), r.randint(1, 3))
        self.w.depth -= 1
        self.w.emit("}")
        del taken  # both arms are constant-rooted; neither can overflow

    def _pad_loop(self, scope: list[tuple[str, int]]) -> None:
        r = self.rng
        trips = r.randint(1, self.spec.loop_iteration_count)
        i = self.fresh("i")
        x = self.fresh()
        k = r.randint(1, 9)
        self.branch_count += 1
        if r.random() < 0.5:
            self.w.emit(f"for (int {i} = 0; {i} < {trips}; {i} = {i} + 1) {{")
            self.w.depth += 1
            self.w.emit(f"int {x} = {i} * {k};")
            self._pad_chain(list(scope), 1)
            self.w.depth -= 1
            self.w.emit("}")
        else:
            self.w.emit(f"int {i} = 0;")
            self.w.emit(f"while ({i} < {trips}) {{")
            self.w.depth += 1
            self.w.emit(f"int {x} = {i} * {k};")
            self._pad_chain(list(scope), 1)
            self.w.emit(f"{i} = {i} + 1;")
            self.w.depth -= 1
            self.w.emit("}")

    def _pad_call(self, scope: list[tuple[str, int]]) -> None:
        if not self.fn_values:
            self._pad_chain(scope, 1)
            return
        name, value = self.rng.choice(self.fn_values)
        q = self.fresh("q")
        self.w.emit(f"int {q} = {name}({self.rng.randint(-50, 50)});")
        scope.append((q, value))

    def _filler_block(self, scope: list[tuple[str, int]]) -> None:
        pick = self.rng.random()
        if pick < 0.55:
            self._pad_chain(scope, self.rng.randint(2, 5))
        elif pick < 0.75:
            self._pad_branch(scope)
        elif pick < 0.9:
            self._pad_loop(scope)
        else:
            self._pad_call(scope)

    def _pad_function(self) -> None:
        name = f"calc_{self.fresh('f')}"
        self.w.emit(f"int {name}(int seed_arg) {{")
        self.w.depth += 1
        scope: list[tuple[str, int]] = []
        self._pad_chain(scope, self.rng.randint(3, 7))
        if self.rng.random() < 0.5:
            self._pad_branch(scope)
        if self.rng.random() < 0.4:
            self._pad_loop(scope)
        last, value = scope[-1]
        self.w.emit(f"return {last};")
        self.w.depth -= 1
        self.w.emit("}")
        self.w.emit()
        self.fn_values.append((name, value))

    # -- seeded sites --------------------------------------------------------

    def _decoy(self, params: Sequence[str]) -> None:
        r = self.rng
        p = r.choice(list(params))
        lo, hi = r.randint(-60, -1), r.randint(1, 60)
        m, b = r.randint(2, 40), r.randint(-500, 500)
        shape = r.randrange(3)
        d = self.fresh("d")
        if shape == 0:
            rhs = f"{p} * {m} + {b}"
            term = BinTerm("+", BinTerm("*", Var("g"), Const(m)), Const(b))
        elif shape == 1:
            rhs = f"{p} + {b}"
            term = BinTerm("+", Var("g"), Const(b))
        else:
            rhs = f"{p} * {m}"
            term = BinTerm("*", Var("g"), Const(m))
        _assert_decoy_infeasible(term, lo, hi)
        self.branch_count += 1
        self.w.emit(f"if ({p} >= {lo} && {p} <= {hi}) {{")
        self.w.depth += 1
        line = self.w.emit(f"int {d} = {rhs};")
        self.decoy_lines.append(line)
        self.w.depth -= 1
        self.w.emit("}")

    def _seeded_site(self, gate: str, val: str) -> None:
        r = self.rng
        self.tp_shape = r.choice(TP_SHAPES)
        boom = self.fresh("boom")
        upper = _DEFAULT_BOUND.upper_value
        if self.tp_shape == "square":
            rhs, val_w = f"{val} * {val}", math.isqrt(upper) + 1
        elif self.tp_shape == "mul-const":
            rhs, val_w = f"{val} * {_MUL_CONST}", upper // _MUL_CONST + 1
        else:
            rhs, val_w = f"{val} + {_ADD_CONST}", upper - _ADD_CONST + 1
        thresholds = sorted(r.sample(range(3, 45), self.spec.seed_depth))
        gate_w = thresholds[-1] + 1
        scope: list[tuple[str, int]] = []
        for t in thresholds:
            self.branch_count += 1
            self.w.emit(f"if ({gate} > {t}) {{")
            self.w.depth += 1
            if r.random() < 0.5:
                self._pad_chain(scope, r.randint(1, 2))
        self.tp_line = self.w.emit(f"int {boom} = {rhs};")
        self.tp_statement = f"int {boom} = {rhs};"
        for _ in thresholds:
            self.w.depth -= 1
            self.w.emit("}")
        self.witness_args = [gate_w, val_w]
        self.benign_args = [gate_w, 0]

    # -- whole programs ------------------------------------------------------

    def _target_loc(self) -> tuple[int, int]:
        cls = self.spec.loc_class
        if cls == "S":
            size = self.rng.randint(*_S_RANGE)
            return size, size + 250
        if cls == "R":
            size = self.rng.randint(*_R_RANGE)
            return size, size + 40
        target = LOC_TARGETS[cls]
        margin = int(target * LOC_TOLERANCE)
        return target - margin // 2, target + margin - margin // 2

    def build(self) -> GeneratedProgram:
        if self.spec.loc_class == "R":
            return self._build_runtime_shape()
        lo, hi = self._target_loc()
        for _ in range(self.spec.function_count):
            self._pad_function()
        self.w.emit("int main(int gate, int val) {")
        self.w.depth += 1
        scope: list[tuple[str, int]] = []
        self._pad_chain(scope, 3)
        decoys_left = self.spec.false_positive_count
        # Reserve room for the trailer (nest + remaining decoys + return).
        while True:
            reserve = 12 * (decoys_left + 1) + 6 * self.spec.seed_depth + 10
            if self.w.loc + reserve >= lo:
                break
            self._filler_block(scope)
            if decoys_left and self.rng.random() < 0.3:
                self._decoy(("gate", "val"))
                decoys_left -= 1
        tp_first = self.rng.random() < 0.5
        if tp_first:
            self._seeded_site("gate", "val")
        while decoys_left:
            self._decoy(("gate", "val"))
            decoys_left -= 1
            self._filler_block(scope)
        if not tp_first:
            self._seeded_site("gate", "val")
        while self.w.loc < lo:
            self._filler_block(scope)
        last, _ = scope[-1]
        self.w.emit(f"return {last};")
        self.w.depth -= 1
        self.w.emit("}")
        if not lo <= self.w.loc <= hi:
            raise GenerationError(
                f"{self.file}: {self.w.loc} lines misses [{lo}, {hi}]")
        return self._finish(entry="main", roots=None, driver=False)

    def _build_runtime_shape(self) -> GeneratedProgram:
        """Self-contained C program: seeded function + a timing driver main.

        The seeded function is analyzed as an explicit root (the driver calls
        it, so it is not a default root).  The driver feeds it arguments that
        always satisfy the repair guard, so original and repaired binaries do
        identical arithmetic and the measured delta is pure guard overhead.
        """
        boom = self.fresh("boom")
        self.w.emit("int compute(int gate, int val) {")
        self.w.depth += 1
        self.w.emit(f"int {boom} = 0;")
        scope: list[tuple[str, int]] = []
        self._pad_chain(scope, 6)
        decoys_left = self.spec.false_positive_count
        lo, hi = self._target_loc()
        while self.w.loc + 4 * (decoys_left + 1) + 2 * self.spec.seed_depth + 16 < lo:
            self._filler_block(scope)
        while decoys_left:
            self._decoy(("gate", "val"))
            decoys_left -= 1
        # Always square: the driver's val stays under the square guard bound,
        # so the handler branch is never taken and behavior cannot change.
        # High thresholds keep the guarded site off the driver's hot path
        # (entered for two of every 83 iterations): the measurement then
        # reflects a guard at a realistic, non-innermost-loop site.  The
        # seeded value flows into the return so an optimizing compiler keeps
        # both the site and the guard alive.
        thresholds = [80 - 2 * (self.spec.seed_depth - 1 - i)
                      for i in range(self.spec.seed_depth)]
        for t in thresholds:
            self.branch_count += 1
            self.w.emit(f"if (gate > {t}) {{")
            self.w.depth += 1
        self.tp_line = self.w.emit(f"{boom} = val * val;")
        self.tp_statement = f"{boom} = val * val;"
        self.tp_shape = "square"
        for _ in thresholds:
            self.w.depth -= 1
            self.w.emit("}")
        self.witness_args = [thresholds[-1] + 1,
                             math.isqrt(_DEFAULT_BOUND.upper_value) + 1]
        self.benign_args = [thresholds[-1] + 1, 0]
        last, _ = scope[-1]
        self.w.emit(f"return {last} + {boom} / 100000;")
        self.w.depth -= 1
        self.w.emit("}")
        self.w.emit()
        n_iters = 600_000_000
        self.w.emit("int main() {")
        self.w.depth += 1
        self.w.emit("int s = 0;")
        self.w.emit("int t = 0;")
        self.branch_count += 1
        self.w.emit(f"while (t < {n_iters}) {{")
        self.w.depth += 1
        self.w.emit("int g = t - (t / 83) * 83;")
        self.w.emit("int w = t - (t / 46000) * 46000;")
        self.w.emit("int u = compute(g, w);")
        self.w.emit("s = s / 2 + u;")
        self.w.emit("t = t + 1;")
        self.w.depth -= 1
        self.w.emit("}")
        self.w.emit("return s;")
        self.w.depth -= 1
        self.w.emit("}")
        return self._finish(entry="compute", roots=["compute"], driver=True,
                            driver_iterations=n_iters)

    def _finish(self, entry: str, roots: Optional[list[str]], driver: bool,
                driver_iterations: int = 0) -> GeneratedProgram:
        source = "\n".join(self.w.lines) + "\n"
        program = F.parse_ok(source, self.file)
        _verify_ground_truth(program, entry, self.tp_line,
                             self.witness_args, self.benign_args)
        manifest = {
            "schema_version": 1,
            "file": self.file,
            "loc": self.w.loc,
            "loc_class": self.spec.loc_class,
            "seed": self.spec.seed,
            "spec": {
                "function_count": self.spec.function_count,
                "loop_iteration_count": self.spec.loop_iteration_count,
                "false_positive_count": self.spec.false_positive_count,
                "seed_depth": self.spec.seed_depth,
            },
            "tp": {"line": self.tp_line, "kind": "IOF",
                   "shape": self.tp_shape, "statement": self.tp_statement},
            "branch_count": self.branch_count,
            "decoys": list(self.decoy_lines),
            "witness": {"entry": entry, "args": list(self.witness_args),
                        "benign_args": list(self.benign_args)},
            "roots": roots,
            "driver": driver,
            "driver_iterations": driver_iterations,
            "sha256": hashlib.sha256(source.encode()).hexdigest(),
        }
        return GeneratedProgram(source=source, manifest=manifest)


def _trunc(a: int, b: int) -> int:
    q = abs(a) // abs(b)
    return q if (a >= 0) == (b > 0) else -q


def _assert_decoy_infeasible(term: BinTerm, lo: int, hi: int) -> None:
    """What makes a decoy a decoy: its overflow probe, under the guarding
    range, has no model.  Checked with the real decision engine at
    generation time."""
    system = ConstraintSystem()
    system.add(GROUP_PATH, Rel(">=", Var("g"), Const(_INT.min_value)))
    system.add(GROUP_PATH, Rel("<=", Var("g"), Const(_INT.max_value)))
    system.add(GROUP_PATH, Rel(">=", Var("g"), Const(lo)))
    system.add(GROUP_PATH, Rel("<=", Var("g"), Const(hi)))
    system.add(GROUP_PATH, Rel("=", Var("d"), term), defines="d")
    system.add(GROUP_PROBE, OrRel((
        Rel(">", Var("d"), Const(_DEFAULT_BOUND.upper_value)),
        Rel("<", Var("d"), Const(_DEFAULT_BOUND.lower_value)))))
    verdict = check_sat(system)
    if not verdict.is_unsat:
        raise GenerationError(f"decoy site is not infeasible: {verdict.status}")


def _verify_ground_truth(program: F.Program, entry: str, tp_line: int,
                         witness_args: Sequence[int],
                         benign_args: Sequence[int]) -> None:
    run = Interpreter(program, bound=_DEFAULT_BOUND,
                      max_steps=5_000_000).run(entry, tuple(witness_args))
    lines = sorted({e.line for e in run.events})
    if lines != [tp_line]:
        raise GenerationError(
            f"witness trips lines {lines}, expected exactly [{tp_line}]")
    benign = Interpreter(program, bound=_DEFAULT_BOUND,
                         max_steps=5_000_000).run(entry, tuple(benign_args))
    if benign.events:
        raise GenerationError(
            f"benign input trips lines {sorted({e.line for e in benign.events})}")


def generate_program(spec: BenchSpec, file: str) -> GeneratedProgram:
    return _Gen(spec, file).build()


def spec_for_index(master_seed: int, index: int,
                   loc_class: str = "S") -> BenchSpec:
    """Deterministic mixed-shape spec for the index-th corpus program."""
    r = random.Random(master_seed * 7_919 + index)
    return BenchSpec(
        function_count=r.randint(2, 6),
        loop_iteration_count=r.randint(2, 8),
        false_positive_count=r.randint(1, 6),
        seed_depth=r.randint(2, 6),
        seed=master_seed * 100_000 + index,
        loc_class=loc_class,
    )


def generate_corpus(out_dir: str, count: int, master_seed: int,
                    loc_class: str = "S") -> list[dict]:
    """Write count programs plus manifest.jsonl into out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for i in range(count):
        spec = spec_for_index(master_seed, i, loc_class)
        name = f"p{i:04d}.c"
        gen = generate_program(spec, name)
        (out / name).write_text(gen.source, encoding="utf-8")
        rows.append(gen.manifest)
    with (out / "manifest.jsonl").open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    return rows


def load_manifest(path: str) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    if not rows:
        raise ManifestMismatch(f"{path}: empty manifest")
    return rows


# ---------------------------------------------------------------------------
# Corpus scoring


def run_corpus(corpus_dir: str, manifest_path: Optional[str] = None, *,
               cfg_config=None, solver_config=None, repair: bool = True,
               repair_config: Optional[RepairConfig] = None,
               artifacts_dir: Optional[str] = None,
               workers: int = 1) -> CorpusMetrics:
    """Detect (and by default repair) every manifest program; score against
    the recorded ground truth.  Classification is per site: any report at the
    seeded line counts the true positive as found, a report at any other line
    is a false positive, and a seeded line with no report is a false negative.
    """
    corpus = Path(corpus_dir)
    rows = load_manifest(manifest_path or str(corpus / "manifest.jsonl"))
    metrics = CorpusMetrics()
    art = Path(artifacts_dir) if artifacts_dir else None
    if art:
        art.mkdir(parents=True, exist_ok=True)

    for row in rows:
        path = corpus / row["file"]
        if not path.is_file():
            raise ManifestMismatch(f"{row['file']}: file missing from corpus")
        text = path.read_text(encoding="utf-8")
        digest = hashlib.sha256(text.encode()).hexdigest()
        if digest != row["sha256"]:
            raise ManifestMismatch(f"{row['file']}: content drifted from manifest")

        t0 = time.monotonic()
        run = analyze_source(text, row["file"], cfg_config=cfg_config,
                             solver_config=solver_config, roots=row.get("roots"),
                             workers=workers)
        detect_s = time.monotonic() - t0

        report_lines = sorted({r.line for r in run.reports})
        tp_line = row["tp"]["line"]
        hit = 1 if tp_line in report_lines else 0
        fp_lines = [ln for ln in report_lines if ln != tp_line]
        metrics.manifest_tp += 1
        metrics.tp += hit
        metrics.fn += 1 - hit
        metrics.fp += len(fp_lines)
        metrics.detect_s.append(detect_s)
        metrics.per_class.setdefault(row["loc_class"], []).append(detect_s)

        repair_gen_s = 0.0
        repaired = failed = 0
        loc_before = len(text.splitlines())
        loc_after = loc_before
        if repair:
            t1 = time.monotonic()
            cands = generate_candidates(run, repair_config, name=row["file"])
            repair_gen_s = time.monotonic() - t1
            validated = [c for c in cands if c.status == "constraint-validated"]
            failed = sum(1 for c in cands if c.status == "failed")
            if validated:
                outcome = revalidate(run, validated, row["file"],
                                     cfg_config=cfg_config,
                                     solver_config=solver_config,
                                     roots=row.get("roots"), workers=workers)
                loc_after = len(outcome.patched_text.splitlines())
                repaired = sum(1 for s in outcome.statuses.values()
                               if s == "revalidated")
                failed += sum(1 for s in outcome.statuses.values()
                              if s == "failed")
            if art:
                _dump_artifacts(art, row["file"], run, cands)
        metrics.repair_gen_s.append(repair_gen_s)
        metrics.loc_before += loc_before
        metrics.loc_after += loc_after
        metrics.repaired += repaired
        metrics.repair_failed += failed
        metrics.programs += 1
        metrics.rows.append({
            "file": row["file"], "class": row["loc_class"],
            "loc": loc_before, "tp": hit, "fp": len(fp_lines), "fn": 1 - hit,
            "fp_lines": fp_lines, "detect_s": detect_s,
            "repair_gen_s": repair_gen_s, "repaired": repaired,
            "loc_after": loc_after,
            "paths": run.paths, "solver_queries": run.solver_queries,
        })
    return metrics


def _dump_artifacts(art: Path, file: str, run, cands) -> None:
    stem = Path(file).stem
    reports = [r.to_dict() for r in run.reports]
    (art / f"{stem}.reports.json").write_text(
        json.dumps({"schema_version": 1, "file": file, "reports": reports},
                   indent=2, sort_keys=True) + "\n", encoding="utf-8")
    (art / f"{stem}.candidates.json").write_text(
        json.dumps({"schema_version": 1, "file": file,
                    "candidates": [c.to_dict() for c in cands]},
                   indent=2, sort_keys=True) + "\n", encoding="utf-8")
