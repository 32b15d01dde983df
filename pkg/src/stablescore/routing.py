"""Intent-based routing: request metadata -> one live predictor plus shadows.

The config format is the declarative YAML document::

    routing:
      scoringRules:
        - description: "Custom DAG for bank1"
          condition:
            tenants: ["bank1"]
          targetPredictorName: "bank1-predictor-v1"
      shadowRules:
        - description: "..."
          condition: {tenants: ["bank1"]}
          targetPredictorNames: ["bank1-predictor-v2"]

Scoring rules are tried in order and the first match wins. Every matching
shadow rule contributes its targets.
"""

from __future__ import annotations

import hashlib
import json
import logging
import threading
from collections import Counter
from dataclasses import dataclass
from typing import Any, Iterable, Mapping

import yaml

from stablescore.types import Event, ValidationError

log = logging.getLogger(__name__)

CONDITION_FIELDS = {"tenants": "tenant_id", "geographies": "geography", "schemas": "schema_id"}


class ParseError(ValidationError):
    code = "ParseError"


class UnknownPredictor(ValidationError):
    code = "UnknownPredictor"


class DuplicatePredictorId(ValidationError):
    code = "DuplicatePredictorId"


class NoMatchingRule(LookupError):
    code = "NoMatchingRule"


@dataclass(frozen=True)
class RuleCondition:
    """``None`` for a field means "any value". Lists are OR'd, fields AND'd."""

    tenants: frozenset[str] | None = None
    geographies: frozenset[str] | None = None
    schemas: frozenset[str] | None = None

    def matches(self, event: Event) -> bool:
        if self.tenants is not None and event.tenant_id not in self.tenants:
            return False
        if self.geographies is not None and event.geography not in self.geographies:
            return False
        if self.schemas is not None and event.schema_id not in self.schemas:
            return False
        return True

    @property
    def is_catch_all(self) -> bool:
        return self.tenants is None and self.geographies is None and self.schemas is None


@dataclass(frozen=True)
class ScoringRule:
    description: str
    condition: RuleCondition
    target_predictor_name: str


@dataclass(frozen=True)
class ShadowRule:
    description: str
    condition: RuleCondition
    target_predictor_names: tuple[str, ...]


@dataclass(frozen=True)
class RoutingDecision:
    live_predictor: str
    shadow_predictors: tuple[str, ...]
    matched_rule_description: str
    config_version: str = ""


@dataclass(frozen=True)
class RoutingConfig:
    scoring_rules: tuple[ScoringRule, ...]
    shadow_rules: tuple[ShadowRule, ...]
    config_version: str

    @property
    def predictor_names(self) -> set[str]:
        names = {r.target_predictor_name for r in self.scoring_rules}
        for r in self.shadow_rules:
            names.update(r.target_predictor_names)
        return names

    @property
    def has_catch_all(self) -> bool:
        return any(r.condition.is_catch_all for r in self.scoring_rules)

    def without_shadows(self) -> "RoutingConfig":
        return RoutingConfig(self.scoring_rules, (), self.config_version + "+noshadow")


def resolve(event: Event, config: RoutingConfig) -> RoutingDecision:
    for rule in config.scoring_rules:
        if rule.condition.matches(event):
            live, description = rule.target_predictor_name, rule.description
            break
    else:
        raise NoMatchingRule(
            f"no scoring rule matches tenant={event.tenant_id!r} "
            f"geography={event.geography!r} schema={event.schema_id!r}"
        )
    shadows: list[str] = []
    for rule in config.shadow_rules:
        if rule.condition.matches(event):
            for name in rule.target_predictor_names:
                if name not in shadows:
                    shadows.append(name)
    return RoutingDecision(live, tuple(shadows), description, config.config_version)


def _string_list(value: Any, where: str) -> frozenset[str]:
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise ParseError(f"{where} must be a list of strings")
    return frozenset(value)


def _condition(doc: Any, where: str) -> RuleCondition:
    if doc is None:
        doc = {}
    if not isinstance(doc, Mapping):
        raise ParseError(f"{where}.condition must be a mapping")
    unknown = set(doc) - set(CONDITION_FIELDS)
    if unknown:
        raise ParseError(f"{where}.condition has unknown keys {sorted(unknown)}")
    return RuleCondition(
        **{
            key: _string_list(doc[key], f"{where}.condition.{key}")
            for key in CONDITION_FIELDS
            if key in doc
        }
    )


def _description(rule: Mapping, where: str) -> str:
    d = rule.get("description", "")
    if not isinstance(d, str):
        raise ParseError(f"{where}.description must be a string")
    return d


def _content_version(doc: Any) -> str:
    canon = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return "sha256:" + hashlib.sha256(canon.encode()).hexdigest()[:16]


def load_config(document: str, predictors: Iterable[str] | None = None) -> RoutingConfig:
    """Parse and validate a routing document.

    When ``predictors`` is given, every target name must be one of them and
    the collection itself must not repeat a name. ``routing.version`` sets the
    config version; otherwise a content hash is used.
    """
    try:
        doc = yaml.safe_load(document)
    except yaml.YAMLError as exc:
        raise ParseError(f"invalid YAML: {exc}") from exc
    if not isinstance(doc, Mapping) or not isinstance(doc.get("routing"), Mapping):
        raise ParseError("document must contain a top-level 'routing' mapping")
    routing = doc["routing"]

    scoring_docs = routing.get("scoringRules")
    shadow_docs = routing.get("shadowRules")
    scoring_docs = [] if scoring_docs is None else scoring_docs
    shadow_docs = [] if shadow_docs is None else shadow_docs
    if not isinstance(scoring_docs, list) or not isinstance(shadow_docs, list):
        raise ParseError("scoringRules and shadowRules must be lists")

    scoring = []
    for i, rule in enumerate(scoring_docs):
        where = f"scoringRules[{i}]"
        if not isinstance(rule, Mapping):
            raise ParseError(f"{where} must be a mapping")
        target = rule.get("targetPredictorName")
        if not isinstance(target, str) or not target:
            raise ParseError(f"{where}.targetPredictorName must be a non-empty string")
        scoring.append(ScoringRule(_description(rule, where), _condition(rule.get("condition"), where), target))

    shadow = []
    for i, rule in enumerate(shadow_docs):
        where = f"shadowRules[{i}]"
        if not isinstance(rule, Mapping):
            raise ParseError(f"{where} must be a mapping")
        targets = rule.get("targetPredictorNames")
        if not isinstance(targets, list) or not all(isinstance(t, str) and t for t in targets):
            raise ParseError(f"{where}.targetPredictorNames must be a list of names")
        shadow.append(
            ShadowRule(_description(rule, where), _condition(rule.get("condition"), where), tuple(targets))
        )

    version = routing.get("version")
    config = RoutingConfig(
        tuple(scoring),
        tuple(shadow),
        str(version) if version is not None else _content_version(doc),
    )

    if predictors is not None:
        names = list(predictors)
        dupes = sorted(n for n, c in Counter(names).items() if c > 1)
        if dupes:
            raise DuplicatePredictorId(f"predictor ids registered more than once: {dupes}")
        missing = sorted(config.predictor_names - set(names))
        if missing:
            raise UnknownPredictor(f"unknown predictor(s): {missing}")

    if scoring and not config.has_catch_all:
        log.warning("routing config %s has no catch-all scoring rule", config.config_version)
    return config


class ConfigStore:
    """Holds the active routing snapshot.

    Readers call :meth:`snapshot` once per request and keep using that object;
    swapping rebinds a single attribute, so a reader sees either the old or
    the new snapshot, never a mixture.
    """

    def __init__(self, config: RoutingConfig) -> None:
        self._current = config
        self._write_lock = threading.Lock()

    def snapshot(self) -> RoutingConfig:
        return self._current

    def swap(self, new: RoutingConfig) -> str:
        with self._write_lock:
            previous = self._current.config_version
            self._current = new
        return previous

    def resolve(self, event: Event) -> RoutingDecision:
        return resolve(event, self._current)


def swap_config(store: ConfigStore, new: RoutingConfig) -> str:
    """Atomically install ``new``; returns the previous config version."""
    return store.swap(new)
