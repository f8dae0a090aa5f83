"""Finding persistence and the local review service.

A run directory is the single source of truth for one analyze/repair run:

    runs/<run_id>/run.json         files analyzed (path + digest) and config
    runs/<run_id>/reports.json     every report, deterministically ordered
    runs/<run_id>/candidates.json  staged repair candidates
    runs/<run_id>/decisions.json   per-candidate decision state (the only
                                   mutable file) plus applied outcomes
    runs/<run_id>/metrics.json     wall-clock timings (excluded from
                                   determinism comparisons)

Reports and candidates are append-only artifacts of the run; reviewing only
ever touches decisions.  Applying goes through exactly one code path —
`FindingStore.apply_accepted` — whether triggered from the command line or
the HTTP API, so both produce byte-identical files.

The HTTP service is a deliberately small stdlib server bound to loopback: it
exposes the findings, accepts accept/reject decisions, triggers apply, and
serves the optional static review UI.  Requests are handled serially; the
store is single-writer.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, HTTPServer
from pathlib import Path
from typing import Optional, Sequence
from urllib.parse import urlparse

from .cfg import CfgConfig
from .constraints import SolverConfig
from .overflow import analyze_source
from .repair import RepairCandidate, SpanDrift, apply_candidates

SCHEMA_VERSION = 1

DECISION_STATES = ("pending", "accepted", "rejected", "applied")


class UnknownFinding(KeyError):
    pass


class DecisionConflict(Exception):
    """Decision change on an already-applied candidate."""


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")


def _atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=str(path.parent), prefix=path.name + ".")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def candidate_from_dict(d: dict) -> RepairCandidate:
    return RepairCandidate(
        candidate_id=d["candidate_id"],
        problem_ids=list(d["problem_ids"]),
        file=d["file"],
        pattern_id=d["pattern_id"],
        status=d["status"],
        reason=d["reason"],
        line=d["line"],
        col=d["col"],
        span=tuple(d["span"]),
        original_statement=d["original_statement"],
        replacement=d["replacement"],
        handler_variant=d["handler_variant"],
        bindings=dict(d.get("bindings", {})),
        diff=d.get("diff", ""),
        guard_lines=tuple(d.get("guard_lines", (0, 0))),
        repair_type=d.get("repair_type", "in-place"),
    )


@dataclass
class ApplySummary:
    applied: list = field(default_factory=list)      # candidate ids
    revalidated: list = field(default_factory=list)
    failed: dict = field(default_factory=dict)       # candidate_id -> reason
    skipped: list = field(default_factory=list)      # not accepted / unknown
    files: list = field(default_factory=list)        # files rewritten
    new_sites: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "applied": sorted(self.applied),
            "revalidated": sorted(self.revalidated),
            "failed": dict(sorted(self.failed.items())),
            "skipped": sorted(self.skipped),
            "files": sorted(self.files),
            "new_sites": self.new_sites,
        }


class FindingStore:
    """One run directory; reports immutable, decisions the only mutable state."""

    def __init__(self, run_dir: str):
        self.dir = Path(run_dir)
        self.run = self._load("run.json")
        self.reports = self._load("reports.json")["reports"]
        self.candidates = self._load("candidates.json")["candidates"]
        decisions_file = self.dir / "decisions.json"
        if decisions_file.is_file():
            self.decisions = json.loads(
                decisions_file.read_text(encoding="utf-8"))["decisions"]
        else:
            self.decisions = {}
        for cand in self.candidates:
            self.decisions.setdefault(cand["candidate_id"], {"state": "pending"})
        self._by_problem: dict[str, dict] = {}
        for cand in self.candidates:
            for pid in cand["problem_ids"]:
                self._by_problem[pid] = cand
        self._report_by_id = {r["problem_id"]: r for r in self.reports}

    def _load(self, name: str) -> dict:
        path = self.dir / name
        if not path.is_file():
            raise FileNotFoundError(f"run directory is missing {name}")
        return json.loads(path.read_text(encoding="utf-8"))

    @property
    def run_id(self) -> str:
        return self.run["run_id"]

    def save_decisions(self) -> None:
        _write_json(self.dir / "decisions.json",
                    {"schema_version": SCHEMA_VERSION, "decisions": self.decisions})

    # -- queries -----------------------------------------------------------

    def findings(self) -> list[dict]:
        out = []
        for rep in self.reports:
            cand = self._by_problem.get(rep["problem_id"])
            decision = (self.decisions[cand["candidate_id"]]
                        if cand else {"state": "pending"})
            out.append({
                "problem_id": rep["problem_id"],
                "file": rep["file"],
                "line": rep["line"],
                "col": rep["col"],
                "statement": rep["statement"],
                "disjunct": rep["disjunct"],
                "fn": rep["fn"],
                "candidate_id": cand["candidate_id"] if cand else None,
                "candidate_status": cand["status"] if cand else None,
                "pattern_id": cand["pattern_id"] if cand else None,
                "repair_type": cand.get("repair_type") if cand else None,
                "decision": decision["state"],
                "revalidation": decision.get("revalidation"),
            })
        return out

    def finding(self, problem_id: str) -> dict:
        rep = self._report_by_id.get(problem_id)
        if rep is None:
            raise UnknownFinding(problem_id)
        cand = self._by_problem.get(problem_id)
        decision = (self.decisions[cand["candidate_id"]]
                    if cand else {"state": "pending"})
        return {
            "schema_version": SCHEMA_VERSION,
            "report": rep,
            "candidate": cand,
            "decision": decision,
            "diff": cand.get("diff", "") if cand else "",
        }

    def status(self) -> dict:
        counts = {state: 0 for state in DECISION_STATES}
        for d in self.decisions.values():
            counts[d["state"]] = counts.get(d["state"], 0) + 1
        return {
            "schema_version": SCHEMA_VERSION,
            "run_id": self.run_id,
            "files": self.run["files"],
            "reports": len(self.reports),
            "candidates": len(self.candidates),
            "decisions": counts,
        }

    # -- mutations -----------------------------------------------------------

    def set_decision(self, problem_id: str, decision: str) -> dict:
        if decision not in ("accepted", "rejected"):
            raise ValueError(f"decision must be accepted or rejected, "
                             f"got {decision!r}")
        cand = self._by_problem.get(problem_id)
        if cand is None or problem_id not in self._report_by_id:
            raise UnknownFinding(problem_id)
        entry = self.decisions[cand["candidate_id"]]
        if entry["state"] == "applied":
            raise DecisionConflict(
                f"{cand['candidate_id']} is already applied")
        entry["state"] = decision
        self.save_decisions()
        return entry

    def apply_accepted(self, candidate_ids: Optional[Sequence[str]] = None,
                       *, cfg_config=None,
                       solver_config=None) -> ApplySummary:
        """Patch the analyzed source files for every accepted candidate.

        Files are grouped and rewritten atomically (temp file + rename); a
        candidate whose recorded bytes no longer match the file is failed on
        its own without blocking the rest.  After patching, each touched file
        is re-analyzed: a candidate with no fresh report inside its guard
        region is recorded as revalidated.
        """
        summary = ApplySummary()
        saved = self.run.get("config", {})
        if cfg_config is None:
            cfg_config = CfgConfig(
                unroll_bound=saved.get("unroll_bound", 10),
                call_depth=saved.get("call_depth", 8),
                on_exhaust=saved.get("on_exhaust", "prune"))
        if solver_config is None:
            solver_config = SolverConfig(
                solver_path=saved.get("solver_path"),
                timeout_s=saved.get("solver_timeout", 10.0))
        wanted = set(candidate_ids) if candidate_ids is not None else None
        chosen: dict[str, list[dict]] = {}
        for cand in self.candidates:
            cid = cand["candidate_id"]
            state = self.decisions[cid]["state"]
            if wanted is not None and cid not in wanted:
                continue
            if state != "accepted":
                if wanted is not None:
                    summary.skipped.append(cid)
                continue
            chosen.setdefault(cand["file"], []).append(cand)
        if wanted is not None:
            for cid in wanted:
                if cid not in self.decisions:
                    summary.skipped.append(cid)

        file_paths = {f["file"]: f["path"] for f in self.run["files"]}
        for file, cands in sorted(chosen.items()):
            path = Path(file_paths.get(file, file))
            try:
                original = path.read_text(encoding="utf-8")
            except OSError as exc:
                for cand in cands:
                    summary.failed[cand["candidate_id"]] = str(exc)
                continue

            live: list[RepairCandidate] = []
            for cand in cands:
                a, b = cand["span"]
                if original[a:b] != cand["original_statement"]:
                    reason = (f"{file}:{cand['line']}: statement bytes changed "
                              f"since detection")
                    summary.failed[cand["candidate_id"]] = reason
                    entry = self.decisions[cand["candidate_id"]]
                    entry["state"] = "accepted"  # unchanged; retryable
                    entry["revalidation"] = "failed"
                    entry["reason"] = reason
                else:
                    live.append(candidate_from_dict(cand))
            if not live:
                continue
            try:
                applied = apply_candidates(original, live, file)
            except SpanDrift as exc:
                for cand in live:
                    summary.failed[cand.candidate_id] = str(exc)
                continue

            _atomic_write(path, applied.patched_text)
            summary.files.append(str(path))

            fresh = analyze_source(applied.patched_text, file,
                                   cfg_config=cfg_config,
                                   solver_config=solver_config,
                                   limits_path=saved.get("limits_path"))
            regions = {cid: (first, last) for cid, first, last in applied.regions}
            covered: set[int] = set()
            for _, first, last in applied.regions:
                covered.update(range(first, last + 1))
            for cand in live:
                cid = cand.candidate_id
                first, last = regions[cid]
                inside = [r.to_dict() for r in fresh.reports
                          if first <= r.line <= last]
                entry = self.decisions[cid]
                entry["state"] = "applied"
                entry["applied_file"] = str(path)
                entry["guard_lines"] = [first, last]
                if fresh.aborted_roots:
                    # An aborted walk means absence of reports proves nothing.
                    entry["revalidation"] = "failed"
                    summary.failed[cid] = (
                        "re-analysis incomplete: root(s) "
                        + ", ".join(fresh.aborted_roots) + " aborted")
                elif inside:
                    entry["revalidation"] = "failed"
                    entry["fresh_reports"] = inside
                    summary.failed[cid] = "re-analysis still reports inside the guard"
                else:
                    entry["revalidation"] = "revalidated"
                    summary.revalidated.append(cid)
                summary.applied.append(cid)
            summary.new_sites.extend(
                r.to_dict() for r in fresh.reports if r.line not in covered)
        self.save_decisions()
        return summary


# ---------------------------------------------------------------------------
# HTTP service


_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".json": "application/json; charset=utf-8",
    ".map": "application/json; charset=utf-8",
    ".svg": "image/svg+xml",
    ".ico": "image/x-icon",
}


class ReviewHandler(BaseHTTPRequestHandler):
    server_version = "boundguard-review/1"

    @property
    def store(self) -> FindingStore:
        return self.server.store  # type: ignore[attr-defined]

    def log_message(self, fmt: str, *args) -> None:  # quiet by default
        if getattr(self.server, "verbose", False):
            super().log_message(fmt, *args)

    def _json(self, code: int, payload: dict) -> None:
        body = json.dumps(payload, indent=2, sort_keys=True).encode()
        self.send_response(code)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _error(self, code: int, message: str) -> None:
        self._json(code, {"error": message})

    def _read_body(self) -> Optional[dict]:
        length = int(self.headers.get("Content-Length") or 0)
        raw = self.rfile.read(length) if length else b""
        if not raw:
            return {}
        try:
            payload = json.loads(raw.decode("utf-8"))
        except (ValueError, UnicodeDecodeError):
            return None
        return payload if isinstance(payload, dict) else None

    # -- routes ------------------------------------------------------------

    def do_GET(self) -> None:  # noqa: N802 (stdlib naming)
        path = urlparse(self.path).path
        if path == "/api/findings":
            self._json(200, {"schema_version": SCHEMA_VERSION,
                             "findings": self.store.findings()})
        elif path.startswith("/api/findings/"):
            problem_id = path[len("/api/findings/"):]
            try:
                self._json(200, self.store.finding(problem_id))
            except UnknownFinding:
                self._error(404, f"unknown finding {problem_id!r}")
        elif path == "/api/status":
            self._json(200, self.store.status())
        elif path.startswith("/api/"):
            self._error(404, "unknown endpoint")
        else:
            self._static(path)

    def do_POST(self) -> None:  # noqa: N802
        path = urlparse(self.path).path
        if path.startswith("/api/findings/") and path.endswith("/decision"):
            problem_id = path[len("/api/findings/"):-len("/decision")]
            payload = self._read_body()
            if payload is None or "decision" not in payload:
                self._error(400, 'body must be JSON: {"decision": '
                                 '"accepted" | "rejected"}')
                return
            try:
                entry = self.store.set_decision(problem_id, payload["decision"])
            except UnknownFinding:
                self._error(404, f"unknown finding {problem_id!r}")
            except DecisionConflict as exc:
                self._error(409, str(exc))
            except ValueError as exc:
                self._error(400, str(exc))
            else:
                self._json(200, {"schema_version": SCHEMA_VERSION,
                                 "problem_id": problem_id, "decision": entry})
        elif path == "/api/apply":
            payload = self._read_body()
            if payload is None:
                self._error(400, "body must be a JSON object")
                return
            ids = payload.get("candidate_ids")
            if ids is not None and not (isinstance(ids, list)
                                        and all(isinstance(i, str) for i in ids)):
                self._error(400, "candidate_ids must be a list of strings")
                return
            summary = self.store.apply_accepted(ids)
            self._json(200, summary.to_dict())
        elif path.startswith("/api/"):
            self._error(404, "unknown endpoint")
        else:
            self._error(404, "unknown endpoint")

    # -- static UI -----------------------------------------------------------

    def _static(self, path: str) -> None:
        ui_dir: Optional[str] = getattr(self.server, "ui_dir", None)
        if not ui_dir:
            body = (b"review UI not built; the /api endpoints are live\n")
            self.send_response(200)
            self.send_header("Content-Type", "text/plain; charset=utf-8")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)
            return
        root = Path(ui_dir).resolve()
        rel = path.lstrip("/") or "index.html"
        target = (root / rel).resolve()
        if not str(target).startswith(str(root)) or not target.is_file():
            self._error(404, "not found")
            return
        data = target.read_bytes()
        self.send_response(200)
        self.send_header("Content-Type", _CONTENT_TYPES.get(
            target.suffix, "application/octet-stream"))
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)


def serve_review(store: FindingStore, host: str = "127.0.0.1",
                 port: int = 8765, ui_dir: Optional[str] = None,
                 verbose: bool = False) -> HTTPServer:
    """Build the server (call serve_forever on the result)."""
    server = HTTPServer((host, port), ReviewHandler)
    server.store = store              # type: ignore[attr-defined]
    server.ui_dir = ui_dir            # type: ignore[attr-defined]
    server.verbose = verbose          # type: ignore[attr-defined]
    return server
