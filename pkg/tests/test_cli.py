"""Command-line behavior: configuration layering, run directories, exit
codes, and the analyze/repair/decide/apply workflow end to end.

All invocations go through ``main(argv)`` in-process so exit codes and
stdout/stderr are asserted exactly as a shell would see them.
"""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from boundguard.cli import (
    EXIT_ERROR, EXIT_OK, EXIT_PARSE, EXIT_SOLVER, RunConfig,
    compute_run_id, load_config_file, main,
)

GOOD_SRC = """\
char cap = CHAR_MAX;

int main(int a) {
    int r = a * a;
    return r;
}
"""

REC_SRC = "int f(int n) {\n    int r = f(n - 1);\n    return r;\n}\n"

EXHAUST_SRC = """\
int main(int n) {
    int i = 0;
    while (i < 100) {
        i = i + 1;
    }
    int x = n * n;
    return x;
}
"""


@pytest.fixture()
def ws(tmp_path):
    """Workspace with one analyzable file and an isolated runs dir."""
    src = tmp_path / "sq.c"
    src.write_text(GOOD_SRC)
    runs = tmp_path / "runs"
    return tmp_path, src, runs


def run_cli(*argv):
    return main([str(a) for a in argv])


def only_run_dir(runs: Path) -> Path:
    dirs = [p for p in runs.iterdir() if p.is_dir()]
    assert len(dirs) == 1, dirs
    return dirs[0]


# ---------------------------------------------------------------------------
# Configuration


def test_config_file_parses_types_comments_and_none(tmp_path):
    cfg = tmp_path / "bg.conf"
    cfg.write_text(
        "# comment\n"
        "unroll_bound = 6\n"
        "solver_timeout = 2.5   # trailing comment\n"
        "auto_apply = yes\n"
        "limits_path = none\n"
        "\n"
        "on_exhaust = bypass\n")
    assert load_config_file(str(cfg)) == {
        "unroll_bound": 6, "solver_timeout": 2.5, "auto_apply": True,
        "limits_path": None, "on_exhaust": "bypass",
    }


def test_config_file_rejects_unknown_keys_with_line_numbers(tmp_path):
    cfg = tmp_path / "bg.conf"
    cfg.write_text("unroll_bound = 4\ncolor = mauve\n")
    with pytest.raises(ValueError, match=r"bg\.conf:2: unknown setting"):
        load_config_file(str(cfg))
    cfg.write_text("just words\n")
    with pytest.raises(ValueError, match="expected 'key = value'"):
        load_config_file(str(cfg))
    cfg.write_text("auto_apply = maybe\n")
    with pytest.raises(ValueError, match="true or false"):
        load_config_file(str(cfg))


def test_flags_override_config_file_which_overrides_defaults(ws, capsys):
    tmp_path, src, runs = ws
    cfg = tmp_path / "bg.conf"
    cfg.write_text("unroll_bound = 3\ncall_depth = 7\n")
    assert run_cli("analyze", src, "--config", cfg, "--unroll-bound", "4",
                   "--runs-dir", runs) == EXIT_OK
    snapshot = json.loads(
        (only_run_dir(runs) / "run.json").read_text())["config"]
    assert snapshot["unroll_bound"] == 4      # flag beats file
    assert snapshot["call_depth"] == 7        # file beats default
    assert snapshot["on_exhaust"] == "prune"  # untouched default


@pytest.mark.parametrize("bad", [
    dict(unroll_bound=0),
    dict(call_depth=0),
    dict(on_exhaust="retry"),
    dict(solver_timeout=0.0),
    dict(workers=0),
    dict(handler_variant="v3"),
    dict(limits_path="/nonexistent/limits.h"),
    dict(pattern_pool="/nonexistent/pool.json"),
    dict(solver_path="/nonexistent/solver"),
])
def test_invalid_settings_are_rejected(bad):
    rc = RunConfig(**bad)
    with pytest.raises(ValueError):
        rc.validate()


def test_invalid_flag_value_exits_with_usage_error(ws, capsys):
    _, src, runs = ws
    assert run_cli("analyze", src, "--unroll-bound", "0",
                   "--runs-dir", runs) == EXIT_PARSE
    assert "unroll_bound" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# Run identity


def test_run_id_tracks_inputs_and_knobs():
    files = [("a.c", "f" * 64), ("b.c", "0" * 64)]
    rc = RunConfig()
    base = compute_run_id(files, rc)
    assert base == compute_run_id(list(reversed(files)), rc)
    assert base.startswith("run-") and len(base) == 4 + 12
    assert compute_run_id(files, RunConfig(unroll_bound=9)) != base
    assert compute_run_id(files, RunConfig(on_exhaust="bypass")) != base
    assert compute_run_id([("a.c", "e" * 64)], rc) != base
    # Presentation-only settings do not fork the run identity.
    assert compute_run_id(files, RunConfig(workers=4, runs_dir="elsewhere",
                                           auto_apply=True)) == base


# ---------------------------------------------------------------------------
# analyze


def test_analyze_writes_a_complete_run_directory(ws, capsys):
    _, src, runs = ws
    assert run_cli("analyze", src, "--runs-dir", runs) == EXIT_OK
    out = capsys.readouterr().out
    assert "1 report(s), 0 unconfirmed, 1 file(s)" in out
    assert f"{src}:4:5: overflow risk" in out

    run_dir = only_run_dir(runs)
    run = json.loads((run_dir / "run.json").read_text())
    assert run["run_id"] == run_dir.name
    assert run["files"][0]["file"] == str(src)
    reports = json.loads((run_dir / "reports.json").read_text())
    assert [r["line"] for r in reports["reports"]] == [4]
    cands = json.loads((run_dir / "candidates.json").read_text())
    assert cands["candidates"] == []
    decisions = json.loads((run_dir / "decisions.json").read_text())
    assert decisions["decisions"] == {}
    metrics = json.loads((run_dir / "metrics.json").read_text())
    stats = metrics["stats"][str(src)]
    assert stats["paths"] >= 1 and stats["sites"] >= 1
    assert stats["solver_queries"] >= 1


def test_analyze_rerun_is_byte_identical(ws, capsys):
    _, src, runs = ws
    assert run_cli("analyze", src, "--runs-dir", runs) == EXIT_OK
    run_dir = only_run_dir(runs)
    before = {name: (run_dir / name).read_bytes()
              for name in ("run.json", "reports.json", "candidates.json")}
    assert run_cli("analyze", src, "--runs-dir", runs) == EXIT_OK
    assert only_run_dir(runs) == run_dir  # same identity, same directory
    for name, data in before.items():
        assert (run_dir / name).read_bytes() == data, name


def test_analyze_json_output(ws, capsys):
    _, src, runs = ws
    assert run_cli("analyze", src, "--json", "--runs-dir", runs) == EXIT_OK
    payload = json.loads(capsys.readouterr().out)
    assert set(payload) == {"run_id", "run_dir", "reports", "unconfirmed"}
    rep, = payload["reports"]
    assert rep["line"] == 4 and rep["disjunct"] == "over"
    assert rep["problem_id"].endswith("-IOF")
    assert Path(payload["run_dir"]).name == payload["run_id"]


def test_analyze_orders_reports_across_files(tmp_path, capsys):
    runs = tmp_path / "runs"
    b = tmp_path / "b.c"
    a = tmp_path / "a.c"
    for p in (a, b):
        p.write_text(GOOD_SRC)
    assert run_cli("analyze", b, a, "--runs-dir", runs, "--json") == EXIT_OK
    payload = json.loads(capsys.readouterr().out)
    assert [r["file"] for r in payload["reports"]] == [str(a), str(b)]
    # Input order does not fork the run identity either.
    assert run_cli("analyze", a, b, "--runs-dir", runs, "--json") == EXIT_OK
    again = json.loads(capsys.readouterr().out)
    assert again["run_id"] == payload["run_id"]


def test_exhaust_mode_flag_changes_detection(ws, capsys):
    tmp_path, _, runs = ws
    src = tmp_path / "loop.c"
    src.write_text(EXHAUST_SRC)
    assert run_cli("analyze", src, "--unroll-bound", "4", "--json",
                   "--runs-dir", runs) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["reports"] == []
    assert run_cli("analyze", src, "--unroll-bound", "4",
                   "--on-exhaust", "bypass", "--json",
                   "--runs-dir", runs) == EXIT_OK
    reports = json.loads(capsys.readouterr().out)["reports"]
    assert [(r["line"], r["disjunct"]) for r in reports] == [(6, "over")]


def test_dump_flags_write_cfgs_and_constraints(ws):
    _, src, runs = ws
    assert run_cli("analyze", src, "--dump-cfg", "--dump-constraints",
                   "--runs-dir", runs) == EXIT_OK
    dumps = only_run_dir(runs) / "dumps"
    cfgs = sorted(p.name for p in dumps.glob("*.cfg"))
    assert cfgs == ["sq.main.cfg"]
    assert (dumps / "sq.main.cfg").read_text().startswith("cfg main:")
    smt = sorted(dumps.glob("*.smt2"))
    assert smt and all("(check-sat)" in p.read_text() for p in smt)


# ---------------------------------------------------------------------------
# Failure exit codes


def test_parse_failure_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.c"
    bad.write_text("int main( {\n")
    assert run_cli("analyze", bad, "--runs-dir", tmp_path / "runs") == EXIT_PARSE
    assert "parse error:" in capsys.readouterr().err


def test_missing_input_exits_2(tmp_path, capsys):
    assert run_cli("analyze", tmp_path / "ghost.c",
                   "--runs-dir", tmp_path / "runs") == EXIT_PARSE
    assert "no such file" in capsys.readouterr().err


def test_unfinishable_analysis_exits_2_and_keeps_no_run_dir(tmp_path, capsys):
    rec = tmp_path / "rec.c"
    rec.write_text(REC_SRC)
    runs = tmp_path / "runs"
    assert run_cli("analyze", rec, "--runs-dir", runs) == EXIT_PARSE
    err = capsys.readouterr().err
    assert "analysis incomplete" in err and "rec" in err
    assert "--call-depth" in err
    assert not runs.exists() or not any(runs.iterdir())
    # The same holds when the dumps directory was already created.
    assert run_cli("analyze", rec, "--dump-constraints",
                   "--runs-dir", runs) == EXIT_PARSE
    assert not runs.exists() or not any(runs.iterdir())


def test_broken_solver_exits_3(ws, capsys):
    tmp_path, src, runs = ws
    solver = tmp_path / "solver.sh"
    solver.write_text("#!/bin/sh\nexit 7\n")
    solver.chmod(0o755)
    assert run_cli("analyze", src, "--solver", solver,
                   "--runs-dir", runs) == EXIT_SOLVER
    assert "solver unavailable:" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# repair / decide / apply


def test_repair_stages_without_touching_sources(ws, capsys):
    _, src, runs = ws
    before = src.read_text()
    assert run_cli("repair", src, "--runs-dir", runs) == EXIT_OK
    out = capsys.readouterr().out
    assert "1 of 1 candidate(s) staged" in out
    assert "constraint-validated: square-operand-range" in out
    assert src.read_text() == before

    run_dir = only_run_dir(runs)
    cands = json.loads((run_dir / "candidates.json").read_text())["candidates"]
    assert [c["status"] for c in cands] == ["constraint-validated"]
    decisions = json.loads((run_dir / "decisions.json").read_text())["decisions"]
    assert decisions[cands[0]["candidate_id"]] == {"state": "pending"}
    metrics = json.loads((run_dir / "metrics.json").read_text())
    assert metrics["repair_generation_s"] >= 0.0


def test_repair_yes_patches_and_revalidates(ws, capsys):
    _, src, runs = ws
    assert run_cli("repair", src, "--yes", "--json",
                   "--runs-dir", runs) == EXIT_OK
    payload = json.loads(capsys.readouterr().out)
    apply_summary = payload["apply"]
    cid = payload["candidates"][0]["candidate_id"]
    assert apply_summary["applied"] == [cid]
    assert apply_summary["revalidated"] == [cid]
    assert apply_summary["failed"] == {} and apply_summary["new_sites"] == []
    assert apply_summary["files"] == [str(src)]

    patched = src.read_text()
    assert "if ((a) <= 11 && (a) >= -11)" in patched
    assert "__overflow_handler" in patched
    decisions = json.loads(
        (only_run_dir(runs) / "decisions.json").read_text())["decisions"]
    assert decisions[cid]["state"] == "applied"
    assert decisions[cid]["revalidation"] == "revalidated"

    # The patched file is clean on re-analysis.
    assert run_cli("analyze", src, "--json",
                   "--runs-dir", runs) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["reports"] == []


def test_decide_then_apply_flow(ws, capsys):
    _, src, runs = ws
    assert run_cli("repair", src, "--runs-dir", runs) == EXIT_OK
    run_dir = only_run_dir(runs)
    capsys.readouterr()
    reports = json.loads((run_dir / "reports.json").read_text())["reports"]
    problem_id = reports[0]["problem_id"]

    assert run_cli("decide", "--run", run_dir.name, "--runs-dir", runs,
                   problem_id, "accepted") == EXIT_OK
    assert "accepted" in capsys.readouterr().out

    assert run_cli("apply", "--run", run_dir.name,
                   "--runs-dir", runs) == EXIT_OK
    out = capsys.readouterr().out
    assert f"patched {src}" in out
    assert "1 applied, 1 revalidated, 0 failed" in out
    assert "__overflow_handler" in src.read_text()

    # Deciding an applied finding is a conflict.
    assert run_cli("decide", "--run", run_dir.name, "--runs-dir", runs,
                   problem_id, "rejected") == EXIT_ERROR
    assert "already applied" in capsys.readouterr().err


def test_rejected_candidates_are_skipped_by_apply(ws, capsys):
    _, src, runs = ws
    before = src.read_text()
    assert run_cli("repair", src, "--runs-dir", runs) == EXIT_OK
    run_dir = only_run_dir(runs)
    capsys.readouterr()
    reports = json.loads((run_dir / "reports.json").read_text())["reports"]
    cands = json.loads((run_dir / "candidates.json").read_text())["candidates"]
    assert run_cli("decide", "--run", run_dir.name, "--runs-dir", runs,
                   reports[0]["problem_id"], "rejected") == EXIT_OK
    assert run_cli("apply", "--run", run_dir.name, "--runs-dir", runs,
                   "--ids", cands[0]["candidate_id"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "skipped" in out and "0 applied" in out
    assert src.read_text() == before


def test_decide_unknown_finding_exits_1(ws, capsys):
    _, src, runs = ws
    assert run_cli("repair", src, "--runs-dir", runs) == EXIT_OK
    run_dir = only_run_dir(runs)
    assert run_cli("decide", "--run", run_dir.name, "--runs-dir", runs,
                   "feedbeef0000-0001-IOF", "accepted") == EXIT_ERROR
    assert "unknown finding" in capsys.readouterr().err


def test_apply_on_missing_run_exits_2(tmp_path, capsys):
    assert run_cli("apply", "--run", "run-doesnotexist",
                   "--runs-dir", tmp_path / "runs") == EXIT_PARSE
    assert "no such run directory" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# bench subcommands


def test_bench_gen_and_run_round_trip(tmp_path, capsys):
    corpus = tmp_path / "corpus"
    assert run_cli("bench", "gen", corpus, "--count", "2",
                   "--seed", "3") == EXIT_OK
    assert "2 program(s)" in capsys.readouterr().out
    assert (corpus / "manifest.jsonl").is_file()
    assert sorted(p.name for p in corpus.glob("*.c")) == ["p0000.c", "p0001.c"]

    metrics_file = tmp_path / "metrics.json"
    assert run_cli("bench", "run", corpus, "--json",
                   "--out", metrics_file) == EXIT_OK
    payload = json.loads(capsys.readouterr().out)
    assert (payload["tp"], payload["fp"], payload["fn"]) == (2, 0, 0)
    assert payload["repaired"] == 2
    saved = json.loads(metrics_file.read_text())
    assert (saved["tp"], saved["fp"], saved["fn"]) == (2, 0, 0)


def test_bench_run_table_output(tmp_path, capsys):
    corpus = tmp_path / "corpus"
    assert run_cli("bench", "gen", corpus, "--count", "1",
                   "--seed", "4") == EXIT_OK
    capsys.readouterr()
    assert run_cli("bench", "run", corpus, "--no-repair") == EXIT_OK
    out = capsys.readouterr().out
    assert "totals: programs=1 tp=1 fp=0 fn=0" in out
