"""Command-line front door.

Subcommands:

    analyze FILE...      detect overflow sites, write a run directory
    repair FILE...       detect + stage guard candidates (``--yes`` applies)
    decide               record an accept/reject decision on a staged candidate
    apply                patch source files for accepted candidates
    bench gen / run      generate and score synthetic benchmark corpora
    serve                loopback HTTP review service over a run directory

Exit codes: 0 success, 2 the input did not parse, 3 the solver backend is
unavailable.

Every run writes ``<runs-dir>/<run_id>/`` where ``run_id`` is a digest of the
input bytes and the analysis-relevant configuration — identical inputs and
settings land in the same directory with byte-identical reports.json and
candidates.json.  Wall-clock timing lives only in metrics.json so the rest of
the run directory stays reproducible.

Configuration is layered: built-in defaults, then an optional ``key = value``
config file (``--config``), then command-line flags.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import shutil
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from . import bench
from .cfg import CfgConfig, build_unit, dump_cfg
from .constraints import SolverConfig, SolverUnavailable
from .frontend import ParseFailure, parse_ok
from .overflow import DetectionRun, analyze_source
from .repair import DEFAULT_POOL_PATH, RepairConfig, generate_candidates
from .service import (SCHEMA_VERSION, DecisionConflict, FindingStore,
                      UnknownFinding, _write_json, serve_review)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_PARSE = 2
EXIT_SOLVER = 3


# ---------------------------------------------------------------------------
# Configuration


@dataclass
class RunConfig:
    unroll_bound: int = 10
    call_depth: int = 8
    on_exhaust: str = "prune"
    solver_path: Optional[str] = None
    solver_timeout: float = 10.0
    limits_path: Optional[str] = None
    pattern_pool: Optional[str] = None
    handler_variant: Optional[str] = None
    auto_apply: bool = False
    workers: int = 1
    runs_dir: str = "runs"

    def validate(self) -> None:
        if self.unroll_bound < 1:
            raise ValueError("unroll_bound must be >= 1")
        if self.call_depth < 1:
            raise ValueError("call_depth must be >= 1")
        if self.on_exhaust not in ("prune", "bypass"):
            raise ValueError("on_exhaust must be 'prune' or 'bypass'")
        if self.solver_timeout <= 0:
            raise ValueError("solver_timeout must be positive")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.handler_variant not in (None, "v1", "v2"):
            raise ValueError("handler_variant must be 'v1' or 'v2'")
        for label, p in (("limits_path", self.limits_path),
                         ("pattern_pool", self.pattern_pool)):
            if p is not None and not Path(p).is_file():
                raise ValueError(f"{label}: no such file: {p}")
        if (self.solver_path not in (None, "builtin")
                and not Path(self.solver_path).is_file()):
            raise ValueError(f"solver_path: no such file: {self.solver_path}")

    def cfg_config(self) -> CfgConfig:
        return CfgConfig(unroll_bound=self.unroll_bound,
                         call_depth=self.call_depth,
                         on_exhaust=self.on_exhaust)

    def solver_config(self) -> SolverConfig:
        return SolverConfig(solver_path=self.solver_path,
                            timeout_s=self.solver_timeout)

    def repair_config(self) -> RepairConfig:
        return RepairConfig(pattern_pool=self.pattern_pool,
                            handler_variant=self.handler_variant,
                            solver_config=self.solver_config())


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    if key in ("unroll_bound", "call_depth", "workers"):
        return int(raw)
    if key == "solver_timeout":
        return float(raw)
    if key == "auto_apply":
        if raw.lower() in ("true", "yes", "1"):
            return True
        if raw.lower() in ("false", "no", "0"):
            return False
        raise ValueError(f"{key} must be true or false, got {raw!r}")
    if raw.lower() == "none":
        return None
    return raw


def load_config_file(path: str) -> dict:
    """``key = value`` pairs, ``#`` comments, unknown keys rejected."""
    values: dict = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if key not in _FIELD_TYPES:
            raise ValueError(f"{path}:{lineno}: unknown setting {key!r}")
        try:
            values[key] = _parse_value(key, raw)
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from None
    return values


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """defaults < config file < flags."""
    rc = RunConfig()
    if getattr(args, "config", None):
        for key, value in load_config_file(args.config).items():
            setattr(rc, key, value)
    for key in _FIELD_TYPES:
        flag = getattr(args, key, None)
        if flag is not None:
            setattr(rc, key, flag)
    rc.validate()
    return rc


def _add_config_flags(p: argparse.ArgumentParser, *, repair: bool = False) -> None:
    p.add_argument("--config", metavar="FILE",
                   help="key = value settings file (flags still win)")
    p.add_argument("--unroll-bound", dest="unroll_bound", type=int,
                   metavar="N", help="loop unrolling bound (default 10)")
    p.add_argument("--call-depth", dest="call_depth", type=int,
                   metavar="N", help="call inlining depth (default 8)")
    p.add_argument("--on-exhaust", dest="on_exhaust",
                   choices=("prune", "bypass"),
                   help="behavior past the unroll bound (default prune)")
    p.add_argument("--solver", dest="solver_path", metavar="PATH",
                   help="SMT solver binary ('builtin' or a path; "
                        "default builtin)")
    p.add_argument("--solver-timeout", dest="solver_timeout", type=float,
                   metavar="SECONDS", help="per-query timeout (default 10)")
    p.add_argument("--limits", dest="limits_path", metavar="FILE",
                   help="limits header overriding built-in macro values")
    p.add_argument("--workers", dest="workers", type=int, metavar="N",
                   help="parallel path exploration workers (default 1)")
    p.add_argument("--runs-dir", dest="runs_dir", metavar="DIR",
                   help="where run directories are written (default runs)")
    if repair:
        p.add_argument("--pattern-pool", dest="pattern_pool", metavar="FILE",
                       help=f"repair pattern pool (default "
                            f"{Path(DEFAULT_POOL_PATH).name})")
        p.add_argument("--handler-variant", dest="handler_variant",
                       choices=("v1", "v2"),
                       help="overflow handler flavor the guards call "
                            "(default v2)")


# ---------------------------------------------------------------------------
# Run directories


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def compute_run_id(files: Sequence[tuple[str, str]], rc: RunConfig) -> str:
    """Digest of (file name, content hash) pairs plus result-affecting knobs."""
    knobs = {
        "unroll_bound": rc.unroll_bound,
        "call_depth": rc.call_depth,
        "on_exhaust": rc.on_exhaust,
        "solver_path": rc.solver_path,
        "solver_timeout": rc.solver_timeout,
        "limits": _sha256(Path(rc.limits_path).read_bytes())
        if rc.limits_path else None,
        "pattern_pool": _sha256(Path(rc.pattern_pool).read_bytes())
        if rc.pattern_pool else None,
        "handler_variant": rc.handler_variant,
    }
    blob = json.dumps({"files": sorted(files), "config": knobs},
                      sort_keys=True).encode()
    return "run-" + _sha256(blob)[:12]


def _report_sort_key(rep: dict) -> tuple:
    return (rep["file"], rep["line"], rep["col"], tuple(rep["decisions"]),
            rep["disjunct"], rep["problem_id"])


def _config_snapshot(rc: RunConfig) -> dict:
    return {
        "unroll_bound": rc.unroll_bound,
        "call_depth": rc.call_depth,
        "on_exhaust": rc.on_exhaust,
        "solver_path": rc.solver_path,
        "solver_timeout": rc.solver_timeout,
        "limits_path": rc.limits_path,
        "pattern_pool": rc.pattern_pool,
        "handler_variant": rc.handler_variant,
        "workers": rc.workers,
    }


class _AnalysisOutcome:
    def __init__(self) -> None:
        self.runs: dict[str, DetectionRun] = {}   # file name -> run
        self.reports: list[dict] = []
        self.unconfirmed: list[dict] = []
        self.timing: dict[str, float] = {}


def _analyze_files(files: list[tuple[str, Path, str]], rc: RunConfig,
                   run_dir: Optional[Path],
                   dump_constraints: bool) -> _AnalysisOutcome:
    out = _AnalysisOutcome()
    for name, _, text in files:
        dump_writer = None
        if dump_constraints and run_dir is not None:
            dumps = run_dir / "dumps"
            dumps.mkdir(parents=True, exist_ok=True)
            stem = Path(name).stem

            def dump_writer(root: str, index: int, smt: str,
                            _stem: str = stem, _dir: Path = dumps) -> None:
                target = _dir / f"{_stem}.{root}.path{index:04d}.smt2"
                target.write_text(smt, encoding="utf-8")

        started = time.monotonic()
        run = analyze_source(text, name,
                             cfg_config=rc.cfg_config(),
                             solver_config=rc.solver_config(),
                             limits_path=rc.limits_path,
                             workers=rc.workers,
                             dump_writer=dump_writer)
        out.timing[name] = time.monotonic() - started
        if run.aborted_roots:
            # Partial results must not be persisted as if they were complete.
            if (run_dir is not None and run_dir.is_dir()
                    and not (run_dir / "run.json").is_file()):
                shutil.rmtree(run_dir)
            detail = run.diagnostics[0] if run.diagnostics else "call depth exceeded"
            raise ValueError(
                f"{name}: analysis incomplete, root(s) "
                f"{', '.join(run.aborted_roots)} aborted: {detail}; "
                f"raise --call-depth or remove recursion")
        out.runs[name] = run
        out.reports.extend(r.to_dict() for r in run.reports)
        out.unconfirmed.extend(u.to_dict() for u in run.unconfirmed)
    out.reports.sort(key=_report_sort_key)
    out.unconfirmed.sort(key=lambda u: (u["file"], u["line"], u["col"]))
    return out


def _load_inputs(paths: Sequence[str]) -> list[tuple[str, Path, str]]:
    """(name as given, resolved path, content) per input; missing -> error."""
    loaded = []
    for p in paths:
        path = Path(p)
        if not path.is_file():
            raise FileNotFoundError(f"no such file: {p}")
        loaded.append((p, path.resolve(), path.read_text(encoding="utf-8")))
    return loaded


def _write_run_dir(run_dir: Path, run_id: str, rc: RunConfig,
                   files: list[tuple[str, Path, str]],
                   outcome: _AnalysisOutcome,
                   candidates: list[dict]) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    _write_json(run_dir / "run.json", {
        "schema_version": SCHEMA_VERSION,
        "run_id": run_id,
        "files": [{"file": name, "path": str(path),
                   "sha256": _sha256(text.encode())}
                  for name, path, text in files],
        "config": _config_snapshot(rc),
    })
    _write_json(run_dir / "reports.json", {
        "schema_version": SCHEMA_VERSION,
        "run_id": run_id,
        "reports": outcome.reports,
        "unconfirmed": outcome.unconfirmed,
    })
    _write_json(run_dir / "candidates.json", {
        "schema_version": SCHEMA_VERSION,
        "run_id": run_id,
        "candidates": candidates,
    })
    decisions_file = run_dir / "decisions.json"
    if not decisions_file.is_file():
        _write_json(decisions_file, {
            "schema_version": SCHEMA_VERSION,
            "decisions": {c["candidate_id"]: {"state": "pending"}
                          for c in candidates},
        })
    stats = {
        name: {"paths": run.paths, "sites": run.sites,
               "solver_queries": run.solver_queries}
        for name, run in outcome.runs.items()
    }
    _write_json(run_dir / "metrics.json", {
        "schema_version": SCHEMA_VERSION,
        "detection_s": {k: round(v, 6) for k, v in outcome.timing.items()},
        "stats": stats,
    })


def _dump_cfgs(run_dir: Path, files: list[tuple[str, Path, str]]) -> int:
    dumps = run_dir / "dumps"
    dumps.mkdir(parents=True, exist_ok=True)
    count = 0
    for name, _, text in files:
        unit = build_unit(parse_ok(text, name))
        stem = Path(name).stem
        for fn_name in sorted(unit.cfgs):
            target = dumps / f"{stem}.{fn_name}.cfg"
            target.write_text(dump_cfg(unit.cfgs[fn_name]) + "\n",
                              encoding="utf-8")
            count += 1
    return count


# ---------------------------------------------------------------------------
# Subcommands


def cmd_analyze(args: argparse.Namespace) -> int:
    rc = resolve_config(args)
    files = _load_inputs(args.files)
    run_id = compute_run_id([(n, _sha256(t.encode())) for n, _, t in files], rc)
    run_dir = Path(rc.runs_dir) / run_id

    outcome = _analyze_files(files, rc, run_dir, args.dump_constraints)
    _write_run_dir(run_dir, run_id, rc, files, outcome, candidates=[])
    if args.dump_cfg:
        _dump_cfgs(run_dir, files)

    if args.json:
        json.dump({"run_id": run_id, "run_dir": str(run_dir),
                   "reports": outcome.reports,
                   "unconfirmed": outcome.unconfirmed},
                  sys.stdout, indent=2, sort_keys=True)
        print()
    else:
        for rep in outcome.reports:
            print(f"{rep['file']}:{rep['line']}:{rep['col']}: "
                  f"{rep['disjunct']}flow risk in {rep['fn']}: "
                  f"{rep['statement']}  [{rep['problem_id']}]")
        for unc in outcome.unconfirmed:
            print(f"{unc['file']}:{unc['line']}:{unc['col']}: "
                  f"unconfirmed: {unc['reason']}")
        print(f"{len(outcome.reports)} report(s), "
              f"{len(outcome.unconfirmed)} unconfirmed, "
              f"{len(files)} file(s); run directory {run_dir}")
    return EXIT_OK


def cmd_repair(args: argparse.Namespace) -> int:
    rc = resolve_config(args)
    if args.yes:
        rc.auto_apply = True
    files = _load_inputs(args.files)
    run_id = compute_run_id([(n, _sha256(t.encode())) for n, _, t in files], rc)
    run_dir = Path(rc.runs_dir) / run_id

    outcome = _analyze_files(files, rc, run_dir, args.dump_constraints)
    if args.dump_cfg:
        _dump_cfgs(run_dir, files)

    repair_started = time.monotonic()
    candidates: list[dict] = []
    for name, _, _ in files:
        run = outcome.runs[name]
        for cand in generate_candidates(run, rc.repair_config(), name=name):
            candidates.append(cand.to_dict())
    repair_s = time.monotonic() - repair_started
    candidates.sort(key=lambda c: (c["file"], c["line"], c["col"],
                                   c["candidate_id"]))
    _write_run_dir(run_dir, run_id, rc, files, outcome, candidates)
    metrics = json.loads((run_dir / "metrics.json").read_text())
    metrics["repair_generation_s"] = round(repair_s, 6)
    _write_json(run_dir / "metrics.json", metrics)

    staged = [c for c in candidates if c["status"] == "constraint-validated"]
    if not args.json:
        for cand in candidates:
            print(f"{cand['file']}:{cand['line']}:{cand['col']}: "
                  f"{cand['status']}: {cand['pattern_id']} "
                  f"[{cand['candidate_id']}]"
                  + (f" ({cand['reason']})" if cand["reason"] else ""))
        print(f"{len(staged)} of {len(candidates)} candidate(s) staged; "
              f"run directory {run_dir}")

    summary = None
    if rc.auto_apply and staged:
        store = FindingStore(str(run_dir))
        for cand in staged:
            store.decisions[cand["candidate_id"]]["state"] = "accepted"
        store.save_decisions()
        summary = store.apply_accepted()
        if not args.json:
            _print_apply_summary(summary)

    if args.json:
        payload = {"run_id": run_id, "run_dir": str(run_dir),
                   "reports": outcome.reports, "candidates": candidates}
        if summary is not None:
            payload["apply"] = summary.to_dict()
        json.dump(payload, sys.stdout, indent=2, sort_keys=True)
        print()
    return EXIT_OK


def _print_apply_summary(summary) -> None:
    d = summary.to_dict()
    for path in d["files"]:
        print(f"patched {path}")
    for cid in d["revalidated"]:
        print(f"revalidated {cid}")
    for cid, reason in d["failed"].items():
        print(f"failed {cid}: {reason}")
    for cid in d["skipped"]:
        print(f"skipped {cid} (not accepted)")
    if d["new_sites"]:
        print(f"{len(d['new_sites'])} new site(s) outside the patched "
              f"regions — inspect the run directory")
    print(f"{len(d['applied'])} applied, {len(d['revalidated'])} "
          f"revalidated, {len(d['failed'])} failed")


def _open_store(args: argparse.Namespace) -> FindingStore:
    runs_dir = args.runs_dir or "runs"
    run_dir = Path(runs_dir) / args.run
    if not run_dir.is_dir():
        raise FileNotFoundError(f"no such run directory: {run_dir}")
    return FindingStore(str(run_dir))


def cmd_decide(args: argparse.Namespace) -> int:
    store = _open_store(args)
    entry = store.set_decision(args.finding, args.decision)
    print(f"{args.finding}: {entry['state']}")
    return EXIT_OK


def cmd_apply(args: argparse.Namespace) -> int:
    store = _open_store(args)
    ids = args.ids.split(",") if args.ids else None
    summary = store.apply_accepted(ids)
    _print_apply_summary(summary)
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    store = _open_store(args)
    ui_dir = args.ui if args.ui and Path(args.ui).is_dir() else None
    server = serve_review(store, host=args.host, port=args.port,
                          ui_dir=ui_dir, verbose=args.verbose)
    host, port = server.server_address[:2]
    print(f"review service for {store.run_id} on http://{host}:{port}/ "
          f"(UI {'enabled' if ui_dir else 'not built'}); Ctrl-C stops it")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


def cmd_bench_gen(args: argparse.Namespace) -> int:
    manifest = bench.generate_corpus(args.out, args.count,
                                     master_seed=args.seed,
                                     loc_class=args.loc_class)
    total_loc = sum(row["loc"] for row in manifest)
    print(f"{len(manifest)} program(s) in {args.out} "
          f"({total_loc} LOC total, class {args.loc_class}, "
          f"seed {args.seed})")
    return EXIT_OK


def cmd_bench_run(args: argparse.Namespace) -> int:
    rc = resolve_config(args)
    metrics = bench.run_corpus(
        args.corpus,
        manifest_path=args.manifest,
        cfg_config=rc.cfg_config(),
        solver_config=rc.solver_config(),
        repair=not args.no_repair,
        repair_config=rc.repair_config(),
        artifacts_dir=args.artifacts,
        workers=rc.workers,
    )
    if args.json:
        json.dump(metrics.to_dict(), sys.stdout, indent=2, sort_keys=True)
        print()
    else:
        print(metrics.table())
    if args.out:
        _write_json(Path(args.out), metrics.to_dict())
        if not args.json:
            print(f"metrics written to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="boundguard",
        description="static integer-overflow detection and source repair "
                    "for a C subset")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="detect overflow sites")
    p.add_argument("files", nargs="+", metavar="FILE")
    _add_config_flags(p)
    p.add_argument("--dump-cfg", action="store_true",
                   help="write per-function control-flow graphs to the run "
                        "directory")
    p.add_argument("--dump-constraints", action="store_true",
                   help="write per-path SMT-LIB constraint dumps to the run "
                        "directory")
    p.add_argument("--json", action="store_true",
                   help="machine-readable output on stdout")
    p.set_defaults(fn=cmd_analyze)

    p = sub.add_parser("repair", help="detect and stage guard candidates")
    p.add_argument("files", nargs="+", metavar="FILE")
    _add_config_flags(p, repair=True)
    p.add_argument("--yes", action="store_true",
                   help="accept and apply every staged candidate, then "
                        "revalidate")
    p.add_argument("--dump-cfg", action="store_true",
                   help=argparse.SUPPRESS)
    p.add_argument("--dump-constraints", action="store_true",
                   help=argparse.SUPPRESS)
    p.add_argument("--json", action="store_true",
                   help="machine-readable output on stdout")
    p.set_defaults(fn=cmd_repair)

    p = sub.add_parser("decide", help="accept or reject a staged candidate")
    p.add_argument("--run", required=True, metavar="RUN_ID")
    p.add_argument("--runs-dir", dest="runs_dir", metavar="DIR")
    p.add_argument("finding", metavar="PROBLEM_ID",
                   help="problem id of the finding the decision is about")
    p.add_argument("decision", choices=("accepted", "rejected"))
    p.set_defaults(fn=cmd_decide)

    p = sub.add_parser("apply", help="patch sources for accepted candidates")
    p.add_argument("--run", required=True, metavar="RUN_ID")
    p.add_argument("--runs-dir", dest="runs_dir", metavar="DIR")
    p.add_argument("--ids", metavar="ID[,ID...]",
                   help="only these candidate ids (default: all accepted)")
    p.set_defaults(fn=cmd_apply)

    p = sub.add_parser("serve", help="loopback HTTP review service")
    p.add_argument("--run", required=True, metavar="RUN_ID")
    p.add_argument("--runs-dir", dest="runs_dir", metavar="DIR")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--ui", metavar="DIR",
                   help="static review UI directory (e.g. frontend/dist)")
    p.add_argument("--verbose", action="store_true",
                   help="log requests to stderr")
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("bench", help="synthetic benchmark corpora")
    bench_sub = p.add_subparsers(dest="bench_command", required=True)

    g = bench_sub.add_parser("gen", help="generate a corpus")
    g.add_argument("out", metavar="DIR")
    g.add_argument("--count", type=int, default=10)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--loc-class", dest="loc_class", default="S",
                   choices=sorted(("S", "R") + tuple(bench.LOC_TARGETS)))
    g.set_defaults(fn=cmd_bench_gen)

    r = bench_sub.add_parser("run", help="analyze and score a corpus")
    r.add_argument("corpus", metavar="DIR")
    r.add_argument("--manifest", metavar="FILE")
    r.add_argument("--no-repair", action="store_true",
                   help="score detection only")
    r.add_argument("--artifacts", metavar="DIR",
                   help="write per-program reports/candidates JSON here")
    r.add_argument("--out", metavar="FILE",
                   help="also write the metrics JSON to this file")
    r.add_argument("--json", action="store_true")
    _add_config_flags(r, repair=True)
    r.set_defaults(fn=cmd_bench_run)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ParseFailure as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except SolverUnavailable as exc:
        print(f"solver unavailable: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (FileNotFoundError, ValueError, bench.GenerationError,
            bench.ManifestMismatch) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except UnknownFinding as exc:
        print(f"error: unknown finding {exc}", file=sys.stderr)
        return EXIT_ERROR
    except DecisionConflict as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    sys.exit(main())
