"""Builders and data shared by the test modules."""

from __future__ import annotations

from pathlib import Path

from stablescore.serving import ServingSnapshot
from stablescore.routing import load_config
from stablescore.synthetic import ensemble_backends, ensemble_predictor
from stablescore.transforms import QuantileTable

DATA = Path(__file__).parent / "data"
ROUTING_EXAMPLE = (DATA / "routing_example.yaml").read_text()
EXAMPLE_PREDICTORS = (
    "bank1-predictor-v1",
    "bank1-predictor-v2",
    "america-predictor-v1",
    "global-predictor-v3",
)


def example_snapshot(routing_text: str = ROUTING_EXAMPLE, backends=None) -> ServingSnapshot:
    """Three-expert ensembles behind every predictor named in the routing example."""
    predictors = {name: ensemble_predictor(name, "identity") for name in EXAMPLE_PREDICTORS}
    # v2 maps through its own table so its scores differ from v1.
    predictors["bank1-predictor-v2"] = ensemble_predictor("bank1-predictor-v2", "bank1-v2")
    tables = {
        "identity": QuantileTable.identity(),
        "bank1-v2": QuantileTable((0.0, 0.2, 1.0), (0.0, 0.5, 1.0), version="t1", fitted_at=""),
    }
    routing = load_config(routing_text, predictors)
    return ServingSnapshot(routing, predictors, tables, backends or ensemble_backends())


def payload(i: int, tenant: str = "bank1", geography: str = "EMEA", schema: str = "fraud_v1") -> dict:
    return {
        "event_id": f"e{i}",
        "tenant": tenant,
        "geography": geography,
        "schema": schema,
        "features": {"z_m1": (i % 17) / 4 - 2, "z_m2": (i % 11) / 3 - 2, "z_m3": (i % 7) / 2 - 3},
    }


PROMOTED_EXAMPLE = """\
routing:
  scoringRules:
    - description: "Custom DAG for bank1"
      condition:
        tenants: ["bank1"]
      targetPredictorName: "bank1-predictor-v2"
    - description: "Custom DAG for tenants in US or LATAM, using schema v1"
      condition:
        geographies: ["NAMER", "LATAM"]
        schemas: ["fraud_v1"]
      targetPredictorName: "america-predictor-v1"
    - description: "Default DAG for cold start clients"
      condition: {}
      targetPredictorName: "global-predictor-v3"
  shadowRules: []
"""


def versioned_config(tag: str):
    """Config whose every target name and description carries ``tag``."""
    return load_config(
        f"""
routing:
  version: {tag}
  scoringRules:
    - description: "{tag} live"
      condition: {{}}
      targetPredictorName: "{tag}-live"
  shadowRules:
    - description: "{tag} shadow one"
      condition: {{}}
      targetPredictorNames: ["{tag}-shadow-1"]
    - description: "{tag} shadow two"
      condition: {{}}
      targetPredictorNames: ["{tag}-shadow-2"]
"""
    )


def swap_stress(total_ops: int = 10_000, readers: int = 4):
    """Concurrent resolves against a store being swapped between two configs.

    Returns ``(decisions_seen, blended)`` where ``blended`` counts decisions
    mixing names or versions from both configs.
    """
    import threading

    from stablescore.routing import ConfigStore, swap_config
    from stablescore.types import Event

    configs = [versioned_config("A"), versioned_config("B")]
    store = ConfigStore(configs[0])
    event = Event("any", {"x": 1.0}, event_id="e")
    per_reader = total_ops // (readers + 1)
    results: list[list] = [[] for _ in range(readers)]
    start = threading.Barrier(readers + 1)

    def reader(slot):
        start.wait()
        out = results[slot]
        for _ in range(per_reader):
            out.append(store.resolve(event))

    def swapper():
        start.wait()
        for i in range(per_reader):
            swap_config(store, configs[(i + 1) % 2])

    threads = [threading.Thread(target=reader, args=(k,)) for k in range(readers)]
    threads.append(threading.Thread(target=swapper))
    for t in threads:
        t.start()
    for t in threads:
        t.join()

    blended = 0
    seen = 0
    for out in results:
        for d in out:
            seen += 1
            tag = d.config_version
            names = [d.live_predictor, *d.shadow_predictors, d.matched_rule_description]
            expected = [f"{tag}-live", f"{tag}-shadow-1", f"{tag}-shadow-2", f"{tag} live"]
            if names != expected:
                blended += 1
    return seen + per_reader, blended


def replay(snapshot, payloads, sink_path):
    """Serve ``payloads`` on a fresh service; return live wire bodies and sink records.

    ``latency_micros`` is wall-clock and dropped from the returned bodies.
    """
    import json

    from stablescore.serving import ScoringService, ServiceSettings

    svc = ScoringService(snapshot, ServiceSettings(sink_path=str(sink_path), shadow_queue_depth=len(payloads) + 1))
    svc.warmup(0)
    bodies = []
    try:
        for p in payloads:
            status, body = svc.handle_score(p)
            body.pop("latency_micros", None)
            bodies.append(json.dumps([status, body], sort_keys=True).encode())
    finally:
        svc.close()
    text = Path(sink_path).read_text() if Path(sink_path).exists() else ""
    records = [json.loads(line) for line in text.splitlines() if line]
    return bodies, records, svc.stats
