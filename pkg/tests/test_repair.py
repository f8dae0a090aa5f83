"""Guard synthesis, candidate staging, patch application, revalidation.

Each staged candidate must (a) exclude every overflowing execution, (b) keep
some in-range execution alive, and (c) leave in-range behavior byte-for-byte
observable-identical — the last verified here by exhaustive 8-bit sweeps.
"""

from __future__ import annotations

import dataclasses
import json

import pytest

from helpers import exhaustive_preservation
from boundguard.cfg import CfgConfig
from boundguard.frontend import parse_ok
from boundguard.overflow import BoundInfo, DivisorZero, analyze_source
from boundguard.repair import (
    NoApplicablePattern,
    RepairConfig,
    SpanDrift,
    StaleState,
    UnboundPlaceholder,
    UnknownChecker,
    apply_candidates,
    determine_bug_type,
    generate_candidates,
    guard_interval,
    line_starts,
    load_pattern_pool,
    locate_statement,
    revalidate,
    span_offsets,
    span_text,
)

CHAR_BOUND = BoundInfo.from_macro("CHAR_MAX", 127, "default")

SRC_SQUARE = """\
char cap = CHAR_MAX;

int main(int a) {
    int r = a * a;
    return r;
}
"""

SRC_ADD = """\
char cap = CHAR_MAX;

int main(int a, int b) {
    int r = a + b;
    return r;
}
"""

SRC_TWO = """\
char cap = CHAR_MAX;

int main(int a, int b) {
    int r = a * a;
    int s = b + 100;
    return r + s;
}
"""


def staged(src: str, name: str, config: RepairConfig | None = None):
    run = analyze_source(src, name)
    cands = generate_candidates(run, config, name=name)
    return run, cands


# ---------------------------------------------------------------------------
# End-to-end repairs per statement shape


def test_square_repair_hoists_folds_and_preserves_behavior():
    run, cands = staged(SRC_SQUARE, "sq.c")
    assert len(run.reports) == 1 and len(cands) == 1
    c = cands[0]
    assert c.status == "constraint-validated", c.reason
    assert c.pattern_id == "square-operand-range"
    assert (c.bindings["value4"], c.bindings["value5"]) == ("11", "-11")
    assert c.repair_type == "in-place"
    # The declaration is hoisted above the guard and the result re-parses.
    assert "int r = 0;" in c.replacement
    parse_ok(c.patched_text, "sq.c")

    out = revalidate(run, cands, "sq.c")
    assert out.statuses[c.candidate_id] == "revalidated"
    assert c.status == "revalidated"
    assert not out.new_sites

    # Patched text is clean for the analyzer, so a second round is a no-op.
    run2 = analyze_source(out.patched_text, "sq.c")
    assert not run2.reports
    assert generate_candidates(run2, name="sq.c") == []

    over, mism = exhaustive_preservation(
        SRC_SQUARE, out.patched_text, "sq.c", run.bound,
        [(a,) for a in range(-128, 128)])
    assert over > 0 and mism == 0


def test_constant_overflow_cannot_be_guarded():
    run, cands = staged(
        "char cap = CHAR_MAX;\n\nint main(int a) {\n"
        "    int r = 200 * 200;\n    return r;\n}\n", "k.c")
    assert len(run.reports) == 1
    assert cands[0].status == "failed"
    assert "no in-range execution" in cands[0].reason


def test_add_with_variable_operand_uses_textual_bounds():
    run, cands = staged(SRC_ADD, "add.c")
    c = cands[0]
    assert c.status == "constraint-validated", c.reason
    assert c.pattern_id == "add-operand-range"
    assert c.bindings["value4"] == "127 - (b)"
    assert c.bindings["value5"] == "-127 - (b)"
    out = revalidate(run, cands, "add.c")
    assert out.statuses[c.candidate_id] == "revalidated"
    over, mism = exhaustive_preservation(
        SRC_ADD, out.patched_text, "add.c", run.bound,
        [(a, b) for a in range(-40, 41, 8) for b in range(-128, 128, 7)])
    assert over > 0 and mism == 0


def test_add_with_constant_folds_the_interval():
    run, cands = staged(
        "char cap = CHAR_MAX;\n\nint main(int a) {\n"
        "    int r = a + 100;\n    return r;\n}\n", "addc.c")
    c = cands[0]
    assert c.status == "constraint-validated", c.reason
    assert (c.bindings["value4"], c.bindings["value5"]) == ("27", "-227")
    out = revalidate(run, cands, "addc.c")
    assert out.statuses[c.candidate_id] == "revalidated"


def test_multiply_by_negative_constant_flips_the_interval():
    src = ("char cap = CHAR_MAX;\n\nint main(int a) {\n"
           "    int r = a * -3;\n    return r;\n}\n")
    run, cands = staged(src, "muln.c")
    c = cands[0]
    assert c.status == "constraint-validated", c.reason
    assert c.pattern_id == "multiply-constant-range"
    assert (c.bindings["value4"], c.bindings["value5"]) == ("42", "-42")
    out = revalidate(run, cands, "muln.c")
    assert out.statuses[c.candidate_id] == "revalidated"
    over, mism = exhaustive_preservation(
        src, out.patched_text, "muln.c", run.bound,
        [(a,) for a in range(-128, 128)])
    assert over > 0 and mism == 0


def test_assignment_statement_is_guarded_without_hoist():
    src = ("char cap = CHAR_MAX;\n\nint main(int a) {\n"
           "    int r = 0;\n    r = a * 5;\n    return r;\n}\n")
    run, cands = staged(src, "as.c")
    assert len(cands) == 1
    c = cands[0]
    assert c.status == "constraint-validated", c.reason
    assert "= 0;" not in c.replacement  # nothing to hoist
    assert c.replacement.lstrip().startswith("if (")
    out = revalidate(run, cands, "as.c")
    assert out.statuses[c.candidate_id] == "revalidated"


def test_both_disjunct_arms_collapse_into_one_candidate():
    src = """int dbl(int v) {
    int r = v + v;
    return 0;
}
int main(int b) {
    int p = 0;
    int q = 0;
    if (b > 0) {
        p = dbl(b);
    } else {
        q = dbl(b);
    }
    return p + q;
}
"""
    run, cands = staged(src, "b.c")
    assert len(run.reports) == 2  # over and under, same statement
    assert len(cands) == 1
    c = cands[0]
    assert sorted(c.problem_ids) == sorted(r.problem_id for r in run.reports)
    assert c.status == "constraint-validated", c.reason
    out = revalidate(run, cands, "b.c")
    assert out.statuses[c.candidate_id] == "revalidated"


@pytest.mark.parametrize("rhs,label", [
    ("a * b", "product of two distinct variables"),
    ("a - 100", "subtraction"),
])
def test_unsupported_shapes_fail_with_the_reason(rhs, label):
    src = (f"char cap = CHAR_MAX;\n\nint main(int a, int b) {{\n"
           f"    int r = {rhs};\n    return r;\n}}\n")
    run, cands = staged(src, "shape.c")
    assert run.reports, label
    assert cands[0].status == "failed"
    assert "no pattern matches" in cands[0].reason


def test_loop_header_sites_are_refused():
    src = """int main(int n) {
    int s = 0;
    for (int i = n * n; i < 3; i = i + 1) {
        s = s + 1;
    }
    return s;
}
"""
    run, cands = staged(src, "hdr.c")
    assert any(r.line == 3 for r in run.reports)
    hdr = [c for c in cands if c.line == 3]
    assert hdr and hdr[0].status == "failed"
    assert "loop header" in hdr[0].reason


def test_two_sites_share_one_handler_definition():
    run, cands = staged(SRC_TWO, "two.c")
    ok = [c for c in cands if c.status == "constraint-validated"]
    assert len(ok) == 2
    out = revalidate(run, ok, "two.c")
    assert out.patched_text.count("void __overflow_handler(") == 1
    assert all(out.statuses[c.candidate_id] == "revalidated" for c in ok)
    assert not out.new_sites
    parse_ok(out.patched_text, "two.c")


def test_logging_handler_variant_swaps_the_injected_callee():
    run, cands = staged(SRC_SQUARE, "sq.c",
                        RepairConfig(handler_variant="v1"))
    c = cands[0]
    assert c.status == "constraint-validated", c.reason
    assert c.handler_variant == "v1"
    assert "__overflow_log(" in c.replacement
    out = revalidate(run, cands, "sq.c")
    assert out.statuses[c.candidate_id] == "revalidated"
    assert out.patched_text.count("void __overflow_log(") == 1
    assert "void __overflow_handler(" not in out.patched_text


# ---------------------------------------------------------------------------
# Candidate artifacts


def test_candidate_dict_is_compact_and_json_ready():
    _, cands = staged(SRC_SQUARE, "sq.c")
    d = cands[0].to_dict()
    json.dumps(d)
    assert "patched_text" not in d  # artifacts stay compact
    assert d["problem_ids"] and d["diff"].startswith("--- a/sq.c")
    assert d["span"][0] < d["span"][1]
    assert d["original_statement"] == "int r = a * a;"


def test_single_candidate_patch_matches_the_batch_application():
    run, cands = staged(SRC_SQUARE, "sq.c")
    c = cands[0]
    applied = apply_candidates(run.source, [c], "sq.c")
    assert applied.patched_text == c.patched_text
    assert applied.diff == c.diff
    (cid, first, last), = applied.regions
    assert cid == c.candidate_id and (first, last) == c.guard_lines
    lines = applied.patched_text.splitlines()
    assert "int r = 0;" in lines[first - 1]
    assert lines[last - 1].strip() == "}"


def test_guard_regions_report_their_line_ranges():
    run, cands = staged(SRC_TWO, "two.c")
    ok = [c for c in cands if c.status == "constraint-validated"]
    applied = apply_candidates(run.source, ok, "two.c")
    lines = applied.patched_text.splitlines()
    for cid, first, last in applied.regions:
        block = "\n".join(lines[first - 1:last])
        assert "if (" in block and "else" in block


# ---------------------------------------------------------------------------
# Drift protection


def test_byte_drift_refuses_to_patch():
    run, cands = staged(SRC_SQUARE, "sq.c")
    edited = run.source.replace("a * a", "a  * a")
    with pytest.raises(SpanDrift):
        apply_candidates(edited, cands, "sq.c")


def test_overlapping_spans_refuse_to_patch():
    run, cands = staged(SRC_SQUARE, "sq.c")
    twin = dataclasses.replace(cands[0], candidate_id="twin")
    with pytest.raises(SpanDrift):
        apply_candidates(run.source, [cands[0], twin], "sq.c")


def test_relocated_statement_is_stale():
    run, _ = staged(SRC_SQUARE, "sq.c")
    program = run.program
    with pytest.raises(StaleState):
        locate_statement(program, "sq.c", 99, 1)
    report = run.reports[0]
    report.statement = "int r = a + a;"  # file changed under the report
    cands = generate_candidates(run, name="sq.c")
    assert cands[0].status == "failed"
    assert "report was for" in cands[0].reason


def test_unknown_checker_ids_are_rejected():
    run, _ = staged(SRC_SQUARE, "sq.c")
    report = run.reports[0]
    assert determine_bug_type(report) == "IOF"
    report.problem_id = report.problem_id.replace("-IOF", "-XYZ")
    with pytest.raises(UnknownChecker):
        determine_bug_type(report)
    report.problem_id = "nodashes"
    with pytest.raises(UnknownChecker):
        determine_bug_type(report)


# ---------------------------------------------------------------------------
# Interval synthesis (unit level)


def test_guard_intervals_fold_exactly():
    b = CHAR_BOUND
    assert guard_interval("square", b, None) == (11, -11)
    assert guard_interval("add", b, 100) == (27, -227)
    assert guard_interval("mul", b, 3) == (42, -42)
    assert guard_interval("mul", b, -3) == (42, -42)
    unsigned = BoundInfo.from_macro("UINT_MAX", 4294967295, "default")
    assert guard_interval("square", unsigned, None) == (65535, 0)


def test_guard_interval_refuses_degenerate_inputs():
    with pytest.raises(DivisorZero):
        guard_interval("mul", CHAR_BOUND, 0)
    with pytest.raises(UnboundPlaceholder):
        guard_interval("mul", CHAR_BOUND, None)
    with pytest.raises(UnboundPlaceholder):
        guard_interval("add", CHAR_BOUND, None)
    with pytest.raises(ValueError):
        guard_interval("cube", CHAR_BOUND, 2)


@pytest.mark.parametrize("const", [2, 3, 5, -2, -7, 100])
def test_mul_interval_is_the_exact_safe_set(const):
    from boundguard.overflow import eval_precondition_mul_const

    hi, lo = guard_interval("mul", CHAR_BOUND, const)
    for v in range(-200, 201):
        assert (lo <= v <= hi) == eval_precondition_mul_const(
            v, const, CHAR_BOUND), (v, const)


@pytest.mark.parametrize("const", [1, 27, 100, -100, -255])
def test_add_interval_is_the_exact_safe_set(const):
    from boundguard.overflow import eval_precondition_add_const

    hi, lo = guard_interval("add", CHAR_BOUND, const)
    for v in range(-400, 401):
        assert (lo <= v <= hi) == eval_precondition_add_const(
            v, const, CHAR_BOUND), (v, const)


def test_square_interval_is_the_exact_safe_set():
    from boundguard.overflow import eval_precondition_square

    hi, lo = guard_interval("square", CHAR_BOUND, None)
    for v in range(-50, 51):
        assert (lo <= v <= hi) == eval_precondition_square(v, CHAR_BOUND), v


# ---------------------------------------------------------------------------
# Pattern pool


def write_pool(tmp_path, patterns):
    path = tmp_path / "pool.json"
    path.write_text(json.dumps({"schema_version": 1, "patterns": patterns}))
    return str(path)


GOOD_PATTERN = {
    "id": "square-a",
    "properties": {"operator": "*", "operands_equal": True,
                   "operand_count": 2},
    "bounds_rule": "square",
    "handler_variant": "v2",
    "template": "if (({operand}) <= {value4} && ({operand}) >= {value5}) {\n"
                "    {buggyStm10}\n} else {\n    {handler_call}\n}",
}


def test_shipped_pool_loads_and_orders():
    pool = load_pattern_pool()
    assert [p.pattern_id for p in pool] == [
        "square-operand-range", "add-operand-range",
        "multiply-constant-range",
    ]


def test_pool_validation_rejects_bad_entries(tmp_path):
    bad_prop = dict(GOOD_PATTERN, properties={"color": "red"})
    with pytest.raises(ValueError, match="unknown properties"):
        load_pattern_pool(write_pool(tmp_path, [bad_prop]))
    bad_rule = dict(GOOD_PATTERN, bounds_rule="cube")
    with pytest.raises(ValueError, match="bounds rule"):
        load_pattern_pool(write_pool(tmp_path, [bad_rule]))
    bad_variant = dict(GOOD_PATTERN, handler_variant="v9")
    with pytest.raises(ValueError, match="handler"):
        load_pattern_pool(write_pool(tmp_path, [bad_variant]))
    with pytest.raises(ValueError, match="empty"):
        load_pattern_pool(write_pool(tmp_path, []))


def test_equally_specific_patterns_tie_break_by_pool_order(tmp_path):
    second = dict(GOOD_PATTERN, id="square-b")
    path = write_pool(tmp_path, [GOOD_PATTERN, second])
    _, cands = staged(SRC_SQUARE, "sq.c", RepairConfig(pattern_pool=path))
    assert cands[0].pattern_id == "square-a"


def test_more_specific_pattern_wins_regardless_of_order(tmp_path):
    loose = {
        "id": "any-star",
        "properties": {"operator": "*"},
        "bounds_rule": "square",
        "handler_variant": "v2",
        "template": GOOD_PATTERN["template"],
    }
    path = write_pool(tmp_path, [loose, GOOD_PATTERN])
    _, cands = staged(SRC_SQUARE, "sq.c", RepairConfig(pattern_pool=path))
    assert cands[0].pattern_id == "square-a"


# ---------------------------------------------------------------------------
# Revalidation honesty


def test_revalidation_fails_when_reanalysis_cannot_finish():
    run, cands = staged(SRC_SQUARE, "sq.c")
    out = revalidate(run, cands, "sq.c", cfg_config=CfgConfig(call_depth=0))
    assert out.statuses[cands[0].candidate_id] == "failed"
    assert "incomplete" in cands[0].reason


# ---------------------------------------------------------------------------
# Span bookkeeping


def test_span_offsets_slice_the_exact_statement():
    run, _ = staged(SRC_SQUARE, "sq.c")
    starts = line_starts(run.source)
    fn, stmt, _ = locate_statement(run.program, "sq.c", 4, 5)
    assert fn == "main"
    a, b = span_offsets(run.source, stmt.span, starts)
    assert run.source[a:b] == "int r = a * a;"
    assert span_text(run.source, stmt.span) == "int r = a * a;"
