"""HTTP front end over :class:`ScoringService` (stdlib server, keep-alive).

Routes::

    POST /v1/score             JSON event -> {event_id, predictor, score, latency_micros}
    POST /admin/config         routing YAML -> {old_version, new_version}
    POST /admin/quantile-table table JSON (+ ?table_id=) -> {table_id, old_version, new_version}
    GET  /admin/version
    GET  /health/ready
"""

from __future__ import annotations

import json
import logging
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlsplit

from stablescore.serving.service import ScoringService

log = logging.getLogger(__name__)


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    disable_nagle_algorithm = True
    server: "ScoringHTTPServer"

    def log_message(self, format, *args):  # noqa: A002 - stdlib signature
        log.debug("%s - " + format, self.address_string(), *args)

    def _send(self, status: int, body: dict) -> None:
        data = json.dumps(body, separators=(",", ":")).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def _body(self) -> bytes:
        length = int(self.headers.get("Content-Length") or 0)
        return self.rfile.read(length) if length else b""

    def do_POST(self) -> None:  # noqa: N802
        url = urlsplit(self.path)
        service = self.server.service
        body = self._body()
        if url.path == "/v1/score":
            self._send(*service.handle_score(body))
        elif url.path == "/admin/config":
            self._send(*service.handle_admin_config(body))
        elif url.path == "/admin/quantile-table":
            table_id = parse_qs(url.query).get("table_id", [None])[0]
            self._send(*service.handle_admin_table(body, table_id))
        else:
            self._send(404, {"error": "NotFound", "message": url.path})

    def do_GET(self) -> None:  # noqa: N802
        path = urlsplit(self.path).path
        service = self.server.service
        if path == "/health/ready":
            ready = service.ready
            self._send(200 if ready else 503, {"ready": ready})
        elif path == "/admin/version":
            self._send(200, service.version_info())
        else:
            self._send(404, {"error": "NotFound", "message": path})


class ScoringHTTPServer(ThreadingHTTPServer):
    daemon_threads = True
    request_queue_size = 256

    def __init__(self, service: ScoringService, host: str = "127.0.0.1", port: int = 8080) -> None:
        self.service = service
        super().__init__((host, port), _Handler)

    @property
    def url(self) -> str:
        host, port = self.server_address[:2]
        return f"http://{host}:{port}"

    def start_background(self) -> threading.Thread:
        t = threading.Thread(target=self.serve_forever, name="http", daemon=True)
        t.start()
        return t
