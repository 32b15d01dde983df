import http.client
import json

import pytest

from stablescore.serving import ScoringService, ServiceSettings
from stablescore.serving.http import ScoringHTTPServer
from stablescore.serving.loadtest import run_load
from stablescore.transforms import QuantileTable
from support import ROUTING_EXAMPLE, example_snapshot, payload


@pytest.fixture
def server(tmp_path):
    svc = ScoringService(example_snapshot(), ServiceSettings(sink_path=str(tmp_path / "sink.jsonl")))
    srv = ScoringHTTPServer(svc, "127.0.0.1", 0)
    srv.start_background()
    yield srv
    srv.shutdown()
    srv.server_close()
    svc.close()


def call(srv, method, path, body=None):
    host, port = srv.server_address[:2]
    conn = http.client.HTTPConnection(host, port, timeout=5)
    data = body if isinstance(body, (bytes, type(None))) else (body if isinstance(body, str) else json.dumps(body)).encode()
    conn.request(method, path, body=data)
    resp = conn.getresponse()
    out = resp.status, json.loads(resp.read())
    conn.close()
    return out


def test_readiness_follows_warmup(server):
    assert call(server, "GET", "/health/ready") == (503, {"ready": False})
    assert call(server, "POST", "/v1/score", payload(1))[0] == 503
    server.service.warmup(10)
    assert call(server, "GET", "/health/ready") == (200, {"ready": True})


def test_score_endpoint(server):
    server.service.warmup(0)
    status, body = call(server, "POST", "/v1/score", payload(7))
    assert status == 200
    assert body["event_id"] == "e7" and body["predictor"] == "bank1-predictor-v1"
    assert 0.0 <= body["score"] <= 1.0 and body["latency_micros"] >= 0
    assert call(server, "POST", "/v1/score", b"{oops")[0] == 400
    assert call(server, "POST", "/nope", b"{}")[0] == 404
    assert call(server, "GET", "/nope")[0] == 404


def test_admin_endpoints(server):
    server.service.warmup(0)
    version = call(server, "GET", "/admin/version")[1]
    assert set(version) == {"config_version", "tables"}
    table = QuantileTable((0.0, 0.3, 1.0), (0.0, 0.6, 1.0), version="v7", fitted_at="")
    status, ack = call(server, "POST", "/admin/quantile-table?table_id=identity", table.to_json())
    assert status == 200 and ack["new_version"] == "v7"
    bad = json.dumps({"source_q": [0, 1], "reference_q": [1, 0]})
    assert call(server, "POST", "/admin/quantile-table?table_id=identity", bad)[0] == 422
    assert call(server, "GET", "/admin/version")[1]["tables"]["identity"] == "v7"
    status, ack = call(server, "POST", "/admin/config", ROUTING_EXAMPLE.replace("# Catch-all", "# x\n"))
    assert status == 200
    assert call(server, "POST", "/admin/config", "routing: 3")[0] == 422


def test_short_load_run(server):
    server.service.warmup(0)
    result = run_load(server.url + "/v1/score", lambda i: payload(i), rate=200, duration_s=1.0, connections=2)
    assert result.failed == 0 and result.ok == result.sent
    assert result.sent >= 190
    assert result.p99_ms < 100
