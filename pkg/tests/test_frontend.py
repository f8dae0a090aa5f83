"""Parser, type references, macro tables, and source diagnostics."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from boundguard import frontend as F
from boundguard.concrete import run_program


def parse_main(body: str) -> F.Program:
    return F.parse_ok("int main() {\n" + body + "\n}\n")


# ---------------------------------------------------------------------------
# Structure


def test_globals_functions_params():
    src = """
    int total = 7;
    struct pair { int a; int b; };
    int helper(int x, char c) { return x; }
    int main(int argc) { return helper(argc, 0); }
    """
    program = F.parse_ok(src)
    assert [g.name for g in program.globals] == ["total"]
    assert [s.name for s in program.structs] == ["pair"]
    assert [f.name for f in program.funcs] == ["helper", "main"]
    helper = program.funcs[0]
    assert [p.name for p in helper.params] == ["x", "c"]
    assert helper.params[0].type_ref.base == "int"
    assert helper.params[1].type_ref.base == "char"


def test_type_ref_const_pointer():
    src = "int f(const unsigned int *p) { return *p; }"
    program = F.parse_ok(src)
    ref = program.funcs[0].params[0].type_ref
    assert ref.base == "unsigned int"
    assert ref.const
    assert ref.stars == 1
    assert not ref.is_struct


def test_struct_member_assignment_round_trip():
    src = """
    struct pair { int a; int b; };
    int main(int k) {
      struct pair s;
      s.a = k;
      s.b = s.a + 1;
      return s.b;
    }
    """
    program = F.parse_ok(src)
    assert run_program(program, args=(4,)).ret == 5


def test_stmt_text_exact_source_slice():
    src = "int main(int a) {\n    int r = a * a;\n    return r;\n}\n"
    program = F.parse_ok(src)
    decl = program.funcs[0].body.stmts[0]
    assert F.stmt_text(decl) == "int r = a * a;"


# ---------------------------------------------------------------------------
# Diagnostics and rejected constructs


def test_parse_collects_diagnostics_without_raising():
    program, diags = F.parse("int main( {")
    assert diags
    assert all(hasattr(d, "line") for d in diags)


def test_parse_ok_raises_with_position():
    with pytest.raises(F.ParseFailure) as info:
        F.parse_ok("int main( {")
    assert "1:" in str(info.value)


@pytest.mark.parametrize("src", [
    "int main(int a) { int r = a % 3; return r; }",      # no modulo
    "int main(int a) { int r = a & 1; return r; }",      # no bitwise and
    "int main(int a) { int r = a | 1; return r; }",      # no bitwise or
    "int main(int a) { int r = a ^ 1; return r; }",      # no xor
    "int main(int a) { int r = a << 1; return r; }",     # no shifts
    "typedef int myint; int main() { return 0; }",       # no typedef
    "volatile int g = 0; int main() { return g; }",      # no volatile
])
def test_rejected_constructs(src):
    with pytest.raises(F.ParseFailure):
        F.parse_ok(src)


# ---------------------------------------------------------------------------
# Macro and kind tables


def test_kind_table_two_complement_ranges():
    for kind in F.KINDS.values():
        if kind.signed:
            assert kind.min_value == -(1 << (kind.width - 1))
            assert kind.max_value == (1 << (kind.width - 1)) - 1
        else:
            assert kind.min_value == 0
            assert kind.max_value == (1 << kind.width) - 1


def test_default_macro_values():
    v = F.DEFAULT_MACRO_VALUES
    assert v["CHAR_MAX"] == 127
    assert v["INT_MAX"] == 2147483647
    assert v["UINT_MAX"] == 4294967295


# ---------------------------------------------------------------------------
# Expression grammar: precedence against a parenthesized oracle


@st.composite
def _flat_expressions(draw):
    """Unparenthesized chains like ``3 + 4 * 2 - 5`` over + - * only, where
    Python's precedence and associativity agree with the subset's."""
    n = draw(st.integers(min_value=1, max_value=6))
    parts = [str(draw(st.integers(min_value=0, max_value=9)))]
    for _ in range(n):
        parts.append(draw(st.sampled_from(["+", "-", "*"])))
        parts.append(str(draw(st.integers(min_value=0, max_value=9))))
    return " ".join(parts)


@settings(max_examples=80, deadline=None)
@given(_flat_expressions())
def test_precedence_matches_python_oracle(expr):
    """For + - * on small ints, the subset grammar must bind exactly like
    Python (same precedence, same left associativity, no overflow in range)."""
    program = F.parse_ok(f"int main() {{ return {expr}; }}")
    assert run_program(program).ret == eval(expr)  # noqa: S307 (digit/op-only)


def test_left_associativity():
    assert run_program(F.parse_ok("int main() { return 10 - 4 - 3; }")).ret == 3
    assert run_program(F.parse_ok("int main() { return 2 + 3 * 4; }")).ret == 14
    assert run_program(F.parse_ok("int main() { return (2 + 3) * 4; }")).ret == 20


# ---------------------------------------------------------------------------
# Limits-file parsing


def test_limits_file_overrides_macros(tmp_path):
    from boundguard.overflow import discover_upper_bound

    limits = tmp_path / "limits.h"
    limits.write_text("#define INT_MAX 1000\n#define INT_MIN (-1000)\n")
    program = F.parse_ok("int cap = INT_MAX;\nint main(int a) { return a; }")
    bound = discover_upper_bound(program, str(limits))
    assert bound.upper_value == 1000
    assert bound.origin == "limits-file"
