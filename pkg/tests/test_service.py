"""Finding store transitions and the loopback review HTTP API.

The store is exercised directly first (state machine, persistence, drift
handling); the HTTP layer is then checked against a live server on an
ephemeral loopback port, including the guarantee that applying through the
API and applying through the store produce byte-identical patched sources.
"""

from __future__ import annotations

import http.client
import json
import threading
from pathlib import Path

import pytest

from boundguard.cli import main
from boundguard.service import (
    DecisionConflict, FindingStore, UnknownFinding, serve_review,
)

SRC = """\
char cap = CHAR_MAX;

int main(int a) {
    int r = a * a;
    return r;
}
"""


def make_run(tmp_path: Path, name: str = "sq.c") -> tuple[Path, Path]:
    src = tmp_path / name
    src.write_text(SRC)
    runs = tmp_path / "runs"
    assert main(["repair", str(src), "--runs-dir", str(runs)]) == 0
    run_dir, = [p for p in runs.iterdir() if p.is_dir()]
    return run_dir, src


@pytest.fixture()
def store_ws(tmp_path):
    run_dir, src = make_run(tmp_path)
    return FindingStore(str(run_dir)), run_dir, src


# ---------------------------------------------------------------------------
# Store


def test_findings_join_reports_candidates_and_decisions(store_ws):
    store, _, src = store_ws
    rows = store.findings()
    assert len(rows) == 1
    row = rows[0]
    assert row["file"] == str(src) and row["line"] == 4
    assert row["candidate_status"] == "constraint-validated"
    assert row["pattern_id"] == "square-operand-range"
    assert row["decision"] == "pending" and row["revalidation"] is None

    detail = store.finding(row["problem_id"])
    assert detail["report"]["problem_id"] == row["problem_id"]
    assert detail["candidate"]["candidate_id"] == row["candidate_id"]
    assert detail["diff"].startswith("--- a/")
    with pytest.raises(UnknownFinding):
        store.finding("feedbeef0000-0001-IOF")


def test_status_counts_decision_states(store_ws):
    store, _, _ = store_ws
    status = store.status()
    assert status["run_id"] == store.run_id
    assert status["reports"] == 1 and status["candidates"] == 1
    assert status["decisions"] == {"pending": 1, "accepted": 0,
                                   "rejected": 0, "applied": 0}


def test_decisions_persist_across_store_instances(store_ws):
    store, run_dir, _ = store_ws
    pid = store.findings()[0]["problem_id"]
    entry = store.set_decision(pid, "accepted")
    assert entry["state"] == "accepted"
    assert FindingStore(str(run_dir)).findings()[0]["decision"] == "accepted"
    store.set_decision(pid, "rejected")  # reversible until applied
    assert FindingStore(str(run_dir)).findings()[0]["decision"] == "rejected"


def test_set_decision_validates_inputs(store_ws):
    store, _, _ = store_ws
    pid = store.findings()[0]["problem_id"]
    with pytest.raises(ValueError, match="accepted or rejected"):
        store.set_decision(pid, "maybe")
    with pytest.raises(UnknownFinding):
        store.set_decision("feedbeef0000-0001-IOF", "accepted")


def test_apply_patches_revalidates_and_locks_the_decision(store_ws):
    store, run_dir, src = store_ws
    pid = store.findings()[0]["problem_id"]
    cid = store.findings()[0]["candidate_id"]
    store.set_decision(pid, "accepted")
    summary = store.apply_accepted()
    assert summary.applied == [cid] and summary.revalidated == [cid]
    assert summary.failed == {} and summary.new_sites == []
    assert "__overflow_handler" in src.read_text()
    assert store.decisions[cid]["state"] == "applied"
    assert store.decisions[cid]["revalidation"] == "revalidated"
    with pytest.raises(DecisionConflict):
        store.set_decision(pid, "rejected")
    # Nothing left in the accepted state: a second apply is a no-op.
    again = store.apply_accepted()
    assert again.applied == [] and again.files == []


def test_apply_with_explicit_ids_skips_non_accepted(store_ws):
    store, _, src = store_ws
    before = src.read_text()
    cid = store.findings()[0]["candidate_id"]
    summary = store.apply_accepted([cid, "bogus-id"])
    assert sorted(summary.skipped) == sorted([cid, "bogus-id"])
    assert summary.applied == [] and src.read_text() == before


def test_drifted_source_fails_retryably(store_ws):
    store, run_dir, src = store_ws
    pid = store.findings()[0]["problem_id"]
    cid = store.findings()[0]["candidate_id"]
    store.set_decision(pid, "accepted")
    original = src.read_text()
    src.write_text("// edited\n" + original)
    summary = store.apply_accepted()
    assert cid in summary.failed
    assert "bytes changed since detection" in summary.failed[cid]
    assert store.decisions[cid]["state"] == "accepted"  # still retryable
    assert store.decisions[cid]["revalidation"] == "failed"

    src.write_text(original)
    retry = FindingStore(str(run_dir)).apply_accepted()
    assert retry.applied == [cid] and retry.revalidated == [cid]


def test_store_requires_a_complete_run_directory(tmp_path):
    with pytest.raises(FileNotFoundError, match="run.json"):
        FindingStore(str(tmp_path))


# ---------------------------------------------------------------------------
# HTTP API


@pytest.fixture()
def server_ws(tmp_path):
    run_dir, src = make_run(tmp_path)
    ui = tmp_path / "ui"
    ui.mkdir()
    (ui / "index.html").write_text("<h1>review</h1>")
    (ui / "app.js").write_text("console.log('ready');")
    store = FindingStore(str(run_dir))
    server = serve_review(store, port=0, ui_dir=str(ui))
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        yield server, store, src
    finally:
        server.shutdown()
        server.server_close()
        thread.join(timeout=5)


def request(server, method: str, path: str, body: dict | None = None,
            raw_body: bytes | None = None):
    host, port = server.server_address[:2]
    conn = http.client.HTTPConnection(host, port, timeout=10)
    payload = raw_body
    headers = {}
    if body is not None:
        payload = json.dumps(body).encode()
    if payload is not None:
        headers["Content-Type"] = "application/json"
    conn.request(method, path, payload, headers)
    resp = conn.getresponse()
    data = resp.read()
    ctype = resp.getheader("Content-Type", "")
    conn.close()
    parsed = json.loads(data) if ctype.startswith("application/json") else data
    return resp.status, ctype, parsed


def test_get_findings_matches_the_store_order(server_ws):
    server, store, _ = server_ws
    status, _, payload = request(server, "GET", "/api/findings")
    assert status == 200
    assert payload["findings"] == store.findings()


def test_get_single_finding_and_404(server_ws):
    server, store, _ = server_ws
    pid = store.findings()[0]["problem_id"]
    status, _, payload = request(server, "GET", f"/api/findings/{pid}")
    assert status == 200 and payload["report"]["problem_id"] == pid
    status, _, payload = request(server, "GET", "/api/findings/nope-0001-IOF")
    assert status == 404 and "unknown finding" in payload["error"]
    status, _, payload = request(server, "GET", "/api/nothing")
    assert status == 404 and payload["error"] == "unknown endpoint"
    status, _, payload = request(server, "POST", "/api/nothing", body={})
    assert status == 404


def test_decision_endpoint_validates_and_persists(server_ws):
    server, store, _ = server_ws
    pid = store.findings()[0]["problem_id"]
    url = f"/api/findings/{pid}/decision"

    status, _, payload = request(server, "POST", url, raw_body=b"not json")
    assert status == 400
    status, _, payload = request(server, "POST", url, body={"nope": 1})
    assert status == 400
    status, _, payload = request(server, "POST", url, body={"decision": "maybe"})
    assert status == 400 and "accepted or rejected" in payload["error"]
    status, _, payload = request(
        server, "POST", "/api/findings/ghost-0001-IOF/decision",
        body={"decision": "accepted"})
    assert status == 404

    status, _, payload = request(server, "POST", url,
                                 body={"decision": "accepted"})
    assert status == 200 and payload["decision"]["state"] == "accepted"
    assert store.findings()[0]["decision"] == "accepted"


def test_apply_endpoint_patches_and_conflicts_after(server_ws):
    server, store, src = server_ws
    pid = store.findings()[0]["problem_id"]
    cid = store.findings()[0]["candidate_id"]
    request(server, "POST", f"/api/findings/{pid}/decision",
            body={"decision": "accepted"})

    status, _, payload = request(server, "POST", "/api/apply",
                                 body={"candidate_ids": "not-a-list"})
    assert status == 400

    status, _, payload = request(server, "POST", "/api/apply", body={})
    assert status == 200
    assert payload["applied"] == [cid] and payload["revalidated"] == [cid]
    assert "__overflow_handler" in src.read_text()

    # Redeciding an applied finding conflicts.
    status, _, payload = request(server, "POST",
                                 f"/api/findings/{pid}/decision",
                                 body={"decision": "rejected"})
    assert status == 409 and "already applied" in payload["error"]


def test_status_endpoint(server_ws):
    server, store, _ = server_ws
    status, _, payload = request(server, "GET", "/api/status")
    assert status == 200 and payload["run_id"] == store.run_id


def test_static_ui_serving_and_traversal_guard(server_ws):
    server, _, _ = server_ws
    status, ctype, body = request(server, "GET", "/")
    assert status == 200 and ctype.startswith("text/html")
    assert b"review" in body
    status, ctype, _ = request(server, "GET", "/app.js")
    assert status == 200 and ctype.startswith("text/javascript")
    status, _, payload = request(server, "GET", "/missing.js")
    assert status == 404
    # Raw traversal attempts never leave the UI root.
    status, _, payload = request(server, "GET", "/../run.json")
    assert status == 404


def test_placeholder_page_when_ui_not_built(tmp_path):
    run_dir, _ = make_run(tmp_path)
    server = serve_review(FindingStore(str(run_dir)), port=0, ui_dir=None)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        status, ctype, body = request(server, "GET", "/")
        assert status == 200 and ctype.startswith("text/plain")
        assert b"review UI not built" in body
    finally:
        server.shutdown()
        server.server_close()
        thread.join(timeout=5)


def test_api_apply_equals_store_apply_byte_for_byte(tmp_path, monkeypatch):
    # Same relative file name in both workspaces: the guards embed the name,
    # so equality below compares everything including the injected handler.
    run_dirs = []
    for sub in ("a", "b"):
        ws = tmp_path / sub
        ws.mkdir()
        (ws / "sq.c").write_text(SRC)
        monkeypatch.chdir(ws)
        assert main(["repair", "sq.c", "--runs-dir", str(ws / "runs")]) == 0
        run_dirs.append(next(p for p in (ws / "runs").iterdir() if p.is_dir()))
    run_a, run_b = run_dirs
    src_a = tmp_path / "a" / "sq.c"
    src_b = tmp_path / "b" / "sq.c"

    store_a = FindingStore(str(run_a))
    pid = store_a.findings()[0]["problem_id"]
    store_a.set_decision(pid, "accepted")
    store_a.apply_accepted()

    store_b = FindingStore(str(run_b))
    server = serve_review(store_b, port=0)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        request(server, "POST", f"/api/findings/{pid}/decision",
                body={"decision": "accepted"})
        status, _, payload = request(server, "POST", "/api/apply", body={})
        assert status == 200 and payload["revalidated"]
    finally:
        server.shutdown()
        server.server_close()
        thread.join(timeout=5)

    assert src_a.read_bytes() == src_b.read_bytes()
