"""Control-flow graphs and bounded path enumeration.

Covers graph shape (statement order preserved, one branch node per decision
point), the unrolling rule (each loop taken 0..unroll_bound times), DFS
emission order, agreement between the two independent walkers, call-string
inlining, and the loud-failure contract when the call-string budget cannot
cover an input.
"""

from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from boundguard.bench import BenchSpec, generate_program
from boundguard.cfg import (
    CallDepthExceeded,
    CfgConfig,
    PathListener,
    build_unit,
    dump_cfg,
    enumerate_paths,
    path_decisions,
    walk_paths,
)
from boundguard.frontend import parse_ok
from boundguard.overflow import analyze_source


def unit_of(src: str):
    return build_unit(parse_ok(src, "t.c"))


def paths_of(src: str, entry: str = "main", **cfg_kw):
    unit = unit_of(src)
    return list(enumerate_paths(unit, entry, CfgConfig(**cfg_kw)))


def count_bounded_paths(cfg, bound: int) -> int:
    """Independent path counter over one graph (no call handling).

    Re-derives the unrolling rule directly: a loop header's true arm is
    available while its counter is below the bound, the false arm always,
    and leaving a loop resets its counter.
    """

    def count(nid: int, counters: dict[int, int]) -> int:
        node = cfg.node(nid)
        if node.kind == "exit":
            return 1
        if node.kind in ("entry", "stmt"):
            return count(cfg.succ[nid][0][1], counters)
        succ = dict(cfg.succ[nid])
        total = 0
        if node.loop_header:
            taken = counters.get(nid, 0)
            if taken < bound:
                total += count(succ[True], {**counters, nid: taken + 1})
            total += count(succ[False], {**counters, nid: 0})
        else:
            total += count(succ[True], dict(counters))
            total += count(succ[False], dict(counters))
        return total

    return count(cfg.entry_id, {})


class RecordingListener(PathListener):
    """Accepts every step and snapshots each completed path."""

    def __init__(self) -> None:
        self.stack: list = []
        self.paths: list[list] = []

    def enter_step(self, step) -> bool:
        self.stack.append(step)
        return True

    def leave_step(self, step) -> None:
        assert self.stack and self.stack[-1] is step
        self.stack.pop()

    def end_path(self) -> None:
        self.paths.append(list(self.stack))


def step_key(step):
    return (step.kind, step.fn, step.node_id, step.decision, step.checked,
            step.ctx)


STRAIGHT = """int main(int a) {
    int x = 1;
    int y = 2;
    int z = 3;
    return z;
}
"""

IF_ELSE = """int main(int a) {
    int x = 0;
    if (a > 0) {
        x = 1;
    } else {
        x = 2;
    }
    return x;
}
"""

TWO_IFS = """int main(int a, int b) {
    int x = 0;
    if (a > 0) {
        x = 1;
    }
    if (b > 0) {
        x = 2;
    }
    return x;
}
"""

ONE_WHILE = """int main(int a) {
    int i = 0;
    while (i < a) {
        i = i + 1;
    }
    return i;
}
"""

NESTED_LOOPS = """int main(int a, int b) {
    int s = 0;
    while (a > s) {
        int t = 0;
        while (b > t) {
            t = t + 1;
        }
        s = s + 1;
    }
    return s;
}
"""

CALL_CHAIN = """int h(int x) {
    return x + 1;
}
int g(int x) {
    int r = h(x);
    return r;
}
int main(int n) {
    int out = g(n);
    return out;
}
"""

RECURSIVE = """int f(int n) {
    if (n > 0) {
        return f(n - 1);
    }
    return 0;
}
int main(int n) {
    int r = f(n);
    return r;
}
"""


# ---------------------------------------------------------------------------
# Graph shape


def test_straight_line_is_a_chain_in_statement_order():
    cfg = unit_of(STRAIGHT).cfgs["main"]
    kinds = [n.kind for n in cfg.nodes]
    assert kinds.count("entry") == 1
    assert kinds.count("exit") == 1
    assert kinds.count("stmt") == 4  # three decls + return
    assert kinds.count("branch") == 0
    assert cfg.edge_count == 5
    # Statement order is preserved along the single chain.
    nid = cfg.entry_id
    seen = []
    while cfg.node(nid).kind != "exit":
        node = cfg.node(nid)
        if node.kind == "stmt":
            seen.append(node.span.start_line)
        nid = cfg.succ[nid][0][1]
    assert seen == sorted(seen)


def test_if_else_has_one_branch_and_arms_merge():
    cfg = unit_of(IF_ELSE).cfgs["main"]
    branches = [n for n in cfg.nodes if n.kind == "branch"]
    assert len(branches) == 1
    labels = sorted(lab for lab, _ in cfg.succ[branches[0].id])
    assert labels == [False, True]
    # Both arms reach the same successor (the return statement) before exit.
    arm_targets = {dst for _, dst in cfg.succ[branches[0].id]}
    merged = {cfg.succ[t][0][1] for t in arm_targets}
    assert len(merged) == 1


def test_for_loop_desugars_to_one_loop_header():
    src = """int main(int a) {
        int s = 0;
        for (int i = 0; i < 3; i = i + 1) {
            s = s + i;
        }
        return s;
    }
    """
    cfg = unit_of(src).cfgs["main"]
    branches = [n for n in cfg.nodes if n.kind == "branch"]
    assert len(branches) == 1
    assert branches[0].loop_header


@pytest.mark.parametrize("seed", [0, 1])
def test_generated_branch_count_matches_graph(seed):
    spec = BenchSpec(function_count=2, loop_iteration_count=4,
                     false_positive_count=1, seed_depth=2, seed=seed)
    gp = generate_program(spec, "g.c")
    unit = unit_of(gp.source)
    got = sum(1 for cfg in unit.cfgs.values()
              for n in cfg.nodes if n.kind == "branch")
    assert got == gp.manifest["branch_count"]


# ---------------------------------------------------------------------------
# Roots


def test_roots_are_the_never_called_functions():
    assert unit_of(CALL_CHAIN).roots() == ["main"]
    assert unit_of(STRAIGHT).roots() == ["main"]


def test_roots_fall_back_to_all_functions_on_a_cycle():
    src = """int f(int n) {
        int r = g(n);
        return r;
    }
    int g(int n) {
        int r = f(n);
        return r;
    }
    """
    assert unit_of(src).roots() == ["f", "g"]


# ---------------------------------------------------------------------------
# Bounded enumeration: counts and order


def test_if_else_yields_two_paths_true_first():
    paths = paths_of(IF_ELSE)
    assert [path_decisions(p) for p in paths] == [(True,), (False,)]


def test_two_ifs_yield_four_paths_in_lexicographic_order():
    paths = paths_of(TWO_IFS)
    vectors = [path_decisions(p) for p in paths]
    assert vectors == [
        (True, True), (True, False), (False, True), (False, False),
    ]
    ranked = [tuple(0 if d else 1 for d in v) for v in vectors]
    assert ranked == sorted(ranked)


def test_single_while_takes_zero_through_bound_iterations():
    paths = paths_of(ONE_WHILE, unroll_bound=3)
    iters = [path_decisions(p).count(True) for p in paths]
    assert iters == [3, 2, 1, 0]  # DFS: deepest unrolling first


def test_exhausted_loop_exit_is_checked_only_under_prune():
    for mode, want in (("prune", True), ("bypass", False)):
        paths = paths_of(ONE_WHILE, unroll_bound=2, on_exhaust=mode)
        deepest = paths[0]
        last_branch = [s for s in deepest if s.kind == "branch"][-1]
        assert last_branch.decision is False
        assert last_branch.checked is want
        # Non-exhausted exits stay checked in both modes.
        assert all(s.checked for p in paths[1:] for s in p)


def test_nested_loops_match_the_independent_counter():
    unit = unit_of(NESTED_LOOPS)
    got = len(list(enumerate_paths(unit, "main", CfgConfig(unroll_bound=2))))
    oracle = count_bounded_paths(unit.cfgs["main"], 2)
    # Outer taken k times nests an independent 3-way inner choice each time:
    # 3**0 + 3**1 + 3**2.
    assert got == oracle == 13


def test_enumeration_is_deterministic():
    a = [tuple(map(step_key, p)) for p in paths_of(NESTED_LOOPS, unroll_bound=2)]
    b = [tuple(map(step_key, p)) for p in paths_of(NESTED_LOOPS, unroll_bound=2)]
    assert a == b


def test_path_decisions_reads_branch_steps_in_order():
    paths = paths_of(TWO_IFS)
    assert path_decisions(paths[1]) == (True, False)
    assert all(s.kind == "branch"
               for s in paths[1] if s.decision is not None)


# ---------------------------------------------------------------------------
# The two walkers agree


@pytest.mark.parametrize("src,kw", [
    (IF_ELSE, {}),
    (TWO_IFS, {}),
    (ONE_WHILE, {"unroll_bound": 3}),
    (NESTED_LOOPS, {"unroll_bound": 2}),
    (CALL_CHAIN, {"call_depth": 2}),
])
def test_listener_walk_matches_generator_walk(src, kw):
    unit = unit_of(src)
    config = CfgConfig(**kw)
    rec = RecordingListener()
    walk_paths(unit, "main", config, rec)
    live = [[step_key(s) for s in p] for p in rec.paths]
    gen = [[step_key(s) for s in p]
           for p in enumerate_paths(unit, "main", config)]
    assert live == gen
    assert live  # at least one complete path per program here


def _stmt_lines_strategy():
    flat = st.sampled_from(["x = x + 1;", "y = x - 2;", "x = y * 2;"])

    def block(children):
        wrapped = st.lists(children, min_size=1, max_size=2).map(" ".join)
        return st.one_of(
            st.tuples(st.sampled_from(["a > b", "b > 0", "a < 3"]), wrapped)
            .map(lambda t: f"if ({t[0]}) {{ {t[1]} }} else {{ {t[1]} }}"),
            st.tuples(st.sampled_from(["a > x", "x < b"]), wrapped)
            .map(lambda t: f"while ({t[0]}) {{ {t[1]} x = x + 1; }}"),
        )

    stmt = st.recursive(flat, block, max_leaves=4)
    return st.lists(stmt, min_size=1, max_size=3).map(" ".join)


@settings(max_examples=25, deadline=None)
@given(body=_stmt_lines_strategy())
def test_walkers_agree_on_arbitrary_nesting(body):
    src = f"int main(int a, int b) {{ int x = 0; int y = 0; {body} return x; }}"
    unit = unit_of(src)
    config = CfgConfig(unroll_bound=2)
    rec = RecordingListener()
    walk_paths(unit, "main", config, rec)
    live = [[step_key(s) for s in p] for p in rec.paths]
    gen = [[step_key(s) for s in p]
           for p in enumerate_paths(unit, "main", config)]
    assert live == gen
    # No loop entry runs past the bound: within one path, consecutive true
    # decisions at one header count its iterations for that entry.
    headers = {n.id for n in unit.cfgs["main"].nodes if n.loop_header}
    for path in rec.paths:
        for h in headers:
            run = 0
            for s in path:
                if s.kind != "branch" or s.node_id != h:
                    continue
                if s.decision:
                    run += 1
                    assert run <= 2
                else:
                    run = 0


# ---------------------------------------------------------------------------
# Call-string inlining


def test_call_chain_inlines_with_context_markers():
    paths = paths_of(CALL_CHAIN, call_depth=2)
    assert len(paths) == 1
    kinds = [s.kind for s in paths[0]]
    assert kinds.count("enter") == 2
    assert kinds.count("leave") == 2
    assert kinds.count("bind-param") == 2
    assert kinds.count("bind-ret") == 2
    enters = [s for s in paths[0] if s.kind == "enter"]
    assert [s.callee for s in enters] == ["g", "h"]
    assert len(enters[0].ctx) == 1 and len(enters[1].ctx) == 2


def test_call_depth_budget_is_a_loud_error():
    unit = unit_of(CALL_CHAIN)
    with pytest.raises(CallDepthExceeded):
        list(enumerate_paths(unit, "main", CfgConfig(call_depth=1)))
    run = analyze_source(CALL_CHAIN, "chain.c",
                         cfg_config=CfgConfig(call_depth=1))
    assert run.aborted_roots == ["main"]
    assert run.paths == 0
    assert any("call depth" in d for d in run.diagnostics)
    ok = analyze_source(CALL_CHAIN, "chain.c",
                        cfg_config=CfgConfig(call_depth=2))
    assert ok.aborted_roots == [] and ok.paths == 1


@pytest.mark.parametrize("depth", [1, 6])
def test_recursion_aborts_at_any_budget(depth):
    unit = unit_of(RECURSIVE)
    with pytest.raises(CallDepthExceeded):
        list(enumerate_paths(unit, "main", CfgConfig(call_depth=depth)))
    run = analyze_source(RECURSIVE, "rec.c",
                         cfg_config=CfgConfig(call_depth=depth))
    assert run.aborted_roots == ["main"]
    assert run.reports == [] and run.paths == 0


# ---------------------------------------------------------------------------
# Feasibility-aware walking (analyzer on top of the walker)


def test_concrete_loop_has_one_feasible_path():
    src = """int main(int a) {
        int s = 0;
        for (int i = 0; i < 3; i = i + 1) {
            s = s + 1;
        }
        return s;
    }
    """
    run = analyze_source(src, "for3.c")
    assert run.paths == 1


def test_symbolic_loop_keeps_every_unrolling_feasible():
    for mode in ("prune", "bypass"):
        run = analyze_source(ONE_WHILE, "w.c",
                             cfg_config=CfgConfig(unroll_bound=4,
                                                  on_exhaust=mode))
        assert run.paths == 5  # 0..4 iterations


def test_exhaust_mode_decides_reachability_past_the_bound():
    src = """int main(int n) {
    int i = 0;
    int x = 0;
    while (i < 100) {
        i = i + 1;
    }
    x = n * n;
    return x;
}
"""
    pruned = analyze_source(src, "deep.c",
                            cfg_config=CfgConfig(unroll_bound=4,
                                                 on_exhaust="prune"))
    assert pruned.paths == 0 and pruned.reports == []
    bypassed = analyze_source(src, "deep.c",
                              cfg_config=CfgConfig(unroll_bound=4,
                                                   on_exhaust="bypass"))
    assert bypassed.paths == 1
    assert [(r.line, r.disjunct) for r in bypassed.reports] == [(7, "over")]


# ---------------------------------------------------------------------------
# Debug dump


def test_dump_lists_every_node_with_labeled_edges():
    unit = unit_of(ONE_WHILE)
    text = dump_cfg(unit.cfgs["main"])
    lines = text.splitlines()
    assert lines[0] == "cfg main:"
    assert len(lines) == 1 + len(unit.cfgs["main"].nodes)
    assert any("[loop]" in ln for ln in lines)
    assert any("T->n" in ln for ln in lines)
    assert any("F->n" in ln for ln in lines)
    assert any(": entry" in ln for ln in lines)
    assert any(": exit" in ln for ln in lines)
