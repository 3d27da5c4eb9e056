"""Integration tests against the reference socket tool server.

Spawns the Node server from frontend/dist and checks three things: every
request kind round-trips with responses that satisfy the shared protocol
schema, a full corpus run over TCP is report-identical to the in-process
fixture path, and injected transport faults are absorbed by the client's
timeout/retry logic without aborting the pipeline.
"""

import json
import shutil
import socket
import subprocess
import time
from pathlib import Path

import jsonschema
import pytest

from opgkit.jsonutil import canonical_line, load_json
from opgkit.planner import RunConfig, run_case
from opgkit.toolbox import REQUEST_KINDS, ToolRegistry

REPO = Path(__file__).resolve().parents[1]
DIST_CLI = REPO / "frontend" / "dist" / "cli.js"
SCHEMA_PATH = REPO / "docs" / "protocol" / "schema.json"

pytestmark = pytest.mark.skipif(
    shutil.which("node") is None or not DIST_CLI.exists(),
    reason="frontend server not built (cd frontend && npm install && npm run build)",
)


@pytest.fixture(scope="module")
def protocol_schema():
    return load_json(SCHEMA_PATH)


def _validator(schema, definition):
    doc = {"definitions": schema["definitions"], "$ref": f"#/definitions/{definition}"}
    return jsonschema.Draft7Validator(doc)


class ServerHandle:
    def __init__(self, *extra_args):
        self.proc = subprocess.Popen(
            ["node", str(DIST_CLI), "--fixtures", str(REPO / "corpus" / "cases"), "--port", "0", *extra_args],
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            text=True,
        )
        line = self.proc.stdout.readline().strip()
        if not line.startswith("listening "):
            raise RuntimeError(f"server failed to start: {line!r} / {self.proc.stderr.read()[:500]}")
        self.port = int(line.split()[1])

    def stop(self) -> str:
        self.proc.terminate()
        try:
            _, stderr = self.proc.communicate(timeout=10)
        except subprocess.TimeoutExpired:
            self.proc.kill()
            _, stderr = self.proc.communicate()
        return stderr

    def call(self, request: dict, timeout: float = 5.0) -> dict:
        with socket.create_connection(("127.0.0.1", self.port), timeout=timeout) as sock:
            sock.settimeout(timeout)
            sock.sendall((canonical_line(request) + "\n").encode("utf-8"))
            buf = b""
            while not buf.endswith(b"\n"):
                chunk = sock.recv(65536)
                if not chunk:
                    break
                buf += chunk
        return json.loads(buf.decode("utf-8"))


@pytest.fixture()
def server():
    handle = ServerHandle()
    yield handle
    handle.stop()


def tcp_registry(corpus_dir, port) -> ToolRegistry:
    manifest = load_json(corpus_dir / "manifest.json")
    for tool in manifest["tools"]:
        if tool["endpoint"] != "builtin":
            tool["endpoint"] = f"tcp:127.0.0.1:{port}"
    return ToolRegistry.from_manifest(manifest)


def sample_request(kind: str) -> dict:
    params = {}
    if kind == "segment_tooth":
        params = {"tooth": "16"}
    elif kind == "read_image":
        params = {"region_key": "full"}
    elif kind == "detect_pathology":
        params = {"field": "caries"}
    return {
        "v": 1,
        "tool": "expert-alpha",
        "kind": kind,
        "image": "case-002",
        "region": None,
        "params": params,
    }


class TestSchemaConformance:
    def test_every_request_kind_round_trips_schema_valid(self, server, protocol_schema):
        req_validator = _validator(protocol_schema, "request")
        res_validator = _validator(protocol_schema, "response")
        for kind in REQUEST_KINDS:
            request = sample_request(kind)
            req_validator.validate(request)
            response = server.call(request)
            res_validator.validate(response)
            assert response["status"] == "ok", (kind, response["error"])

    def test_error_responses_also_conform(self, server, protocol_schema):
        res_validator = _validator(protocol_schema, "response")
        for request in (
            {**sample_request("read_image"), "image": "case-404"},
            {**sample_request("segment_tooth"), "params": {"tooth": "99"}},
            {**sample_request("read_image"), "kind": "levitate"},
            {**sample_request("read_image"), "v": 99},
        ):
            response = server.call(request)
            res_validator.validate(response)
            assert response["status"] == "error"
            assert response["error"]

    def test_server_survives_error_responses(self, server):
        assert server.call({**sample_request("read_image"), "image": "case-404"})["status"] == "error"
        assert server.call(sample_request("detect_teeth"))["status"] == "ok"


class TestSocketPathEquivalence:
    def test_reports_identical_to_in_process_path(self, server, tmp_path, corpus_dir, schema, case_dirs, corpus_run):
        config = RunConfig(manifest_path=str(corpus_dir / "manifest.json"))
        registry = tcp_registry(corpus_dir, server.port)
        out = tmp_path / "tcp-run"
        for case_dir in case_dirs:
            run_case(case_dir, config, registry, schema, out_dir=out)
        for case_dir in case_dirs:
            got = (out / case_dir.name / "report.json").read_bytes()
            want = (corpus_run / case_dir.name / "report.json").read_bytes()
            assert got == want, f"{case_dir.name}: socket-path report differs from in-process path"
            got_trace = (out / case_dir.name / "trace.json").read_bytes()
            want_trace = (corpus_run / case_dir.name / "trace.json").read_bytes()
            assert got_trace == want_trace, f"{case_dir.name}: traces diverge"


class TestFailureInjection:
    def test_timeout_and_retry_absorb_injected_faults(self, tmp_path, corpus_dir, schema, case_dirs):
        handle = ServerHandle("--fail-first", "2", "--hang-first", "1")
        try:
            config = RunConfig(
                manifest_path=str(corpus_dir / "manifest.json"),
                timeout_s=1.0,
                retries=2,
            )
            registry = tcp_registry(corpus_dir, handle.port)
            case_dir = case_dirs[1]
            started = time.monotonic()
            report, _ = run_case(case_dir, config, registry, schema, out_dir=tmp_path / "tcp")
            elapsed = time.monotonic() - started
            # the hang must have cost at least one full client timeout
            assert elapsed >= 1.0
        finally:
            stderr = handle.stop()
        assert stderr.count("injected failure") == 2
        assert stderr.count("injected hang") == 1

        # same config over the in-process path: faults were absorbed, not
        # worked around, so the reports must agree byte for byte
        mock_registry = ToolRegistry.from_manifest(corpus_dir / "manifest.json")
        run_case(case_dir, config, mock_registry, schema, out_dir=tmp_path / "mock")
        got = (tmp_path / "tcp" / case_dir.name / "report.json").read_bytes()
        want = (tmp_path / "mock" / case_dir.name / "report.json").read_bytes()
        assert got == want

    def test_latency_within_timeout_is_harmless(self, tmp_path, corpus_dir, schema, case_dirs):
        handle = ServerHandle("--latency-ms", "25")
        try:
            config = RunConfig(manifest_path=str(corpus_dir / "manifest.json"), timeout_s=5.0)
            registry = tcp_registry(corpus_dir, handle.port)
            report, _ = run_case(case_dirs[0], config, registry, schema, out_dir=tmp_path / "slow")
            assert report.findings
        finally:
            handle.stop()
