"""Open-loop load generator for SLO smoke tests against the HTTP endpoint."""

from __future__ import annotations

import http.client
import json
import threading
import time
from dataclasses import dataclass
from typing import Callable
from urllib.parse import urlsplit

import numpy as np


@dataclass
class LoadResult:
    sent: int
    ok: int
    failed: int
    duration_s: float
    achieved_rps: float
    p50_ms: float
    p99_ms: float
    p999_ms: float
    max_ms: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def run_load(
    url: str,
    make_payload: Callable[[int], dict],
    rate: float = 1000.0,
    duration_s: float = 60.0,
    connections: int = 8,
) -> LoadResult:
    """Send ``rate`` requests/s for ``duration_s`` over persistent connections.

    Each connection owns a fixed schedule (every ``connections``-th slot).
    Latency is measured from the scheduled send time, so a client that falls
    behind is charged for the backlog instead of hiding it.
    """
    parts = urlsplit(url)
    total = int(rate * duration_s)
    interval = 1.0 / rate
    latencies = np.full(total, np.nan)
    failures = [0] * connections
    bodies = [json.dumps(make_payload(i)).encode() for i in range(total)]
    start = time.perf_counter() + 0.2

    def worker(c: int) -> None:
        conn = http.client.HTTPConnection(parts.hostname, parts.port, timeout=10)
        headers = {"Content-Type": "application/json"}
        for i in range(c, total, connections):
            due = start + i * interval
            delay = due - time.perf_counter()
            if delay > 0:
                time.sleep(delay)
            try:
                conn.request("POST", "/v1/score", bodies[i], headers)
                resp = conn.getresponse()
                resp.read()
                if resp.status != 200:
                    failures[c] += 1
                    continue
            except (OSError, http.client.HTTPException):
                failures[c] += 1
                conn.close()
                conn = http.client.HTTPConnection(parts.hostname, parts.port, timeout=10)
                continue
            latencies[i] = time.perf_counter() - due
        conn.close()

    threads = [threading.Thread(target=worker, args=(c,), daemon=True) for c in range(connections)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    elapsed = time.perf_counter() - start
    done = latencies[~np.isnan(latencies)] * 1000.0
    if done.size == 0:
        done = np.array([np.inf])
    return LoadResult(
        sent=total,
        ok=int(np.sum(~np.isnan(latencies))),
        failed=sum(failures),
        duration_s=elapsed,
        achieved_rps=float(np.sum(~np.isnan(latencies)) / elapsed),
        p50_ms=float(np.percentile(done, 50)),
        p99_ms=float(np.percentile(done, 99)),
        p999_ms=float(np.percentile(done, 99.9)),
        max_ms=float(done.max()),
    )
