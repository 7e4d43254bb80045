"""Edge-triggered threshold alerting.

A rule watches one Data node and fires a notification only when its predicate
flips from false to true between consecutive samples on that path (the very
first sample counts as a flip if it already satisfies the predicate). A
condition that merely stays true emits nothing, so a stuck sensor cannot
flood the notification log.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass
from enum import Enum
from typing import Callable

from .ontology import (
    DataNode,
    OntologyPath,
    PathNotFoundError,
    SiteDescriptor,
    resolve,
)
from .telemetry import TelemetrySample


class Comparator(str, Enum):
    ABOVE = "above"
    BELOW = "below"


class Severity(str, Enum):
    INFO = "info"
    ATTENTION = "attention"
    CRITICAL = "critical"


class MeterStatus(str, Enum):
    OK = "OK"
    ATT = "ATT"


DEFAULT_MESSAGE = "{path}: value {value} went {comparator} {threshold}"
_TEMPLATE_FIELDS = {"path", "value", "threshold", "comparator", "rule_id", "severity"}


class AlertError(Exception):
    pass


class DuplicateRuleError(AlertError):
    pass


class BadRuleError(AlertError):
    pass


class UnknownNotificationError(AlertError):
    pass


class AlreadyAcknowledgedError(AlertError):
    pass


@dataclass(frozen=True)
class AlertRule:
    id: str
    target: OntologyPath
    comparator: Comparator
    threshold: float
    severity: Severity = Severity.ATTENTION
    message: str = DEFAULT_MESSAGE

    def predicate(self, value: float) -> bool:
        if self.comparator is Comparator.ABOVE:
            return value > self.threshold
        return value < self.threshold


@dataclass
class Notification:
    id: int
    rule_id: str
    path: OntologyPath
    triggered_at: int
    value: float
    severity: Severity
    message: str
    acknowledged: bool = False

    @property
    def state(self) -> str:
        return "acknowledged" if self.acknowledged else "active"

    def to_obj(self) -> dict:
        return {
            "id": self.id,
            "rule_id": self.rule_id,
            "path": str(self.path),
            "triggered_at": self.triggered_at,
            "value": self.value,
            "severity": self.severity.value,
            "message": self.message,
            "state": self.state,
        }


class AlertEngine:
    """Rule registry, crossing detector, and notification log for one site."""

    def __init__(self, descriptor: SiteDescriptor):
        self.descriptor = descriptor
        self._lock = threading.Lock()
        self._rules: dict[str, AlertRule] = {}
        self._last_state: dict[str, bool] = {}  # rule id -> predicate at last sample
        self._by_path: dict[str, list[AlertRule]] = {}
        self._log: list[Notification] = []
        self._by_id: dict[int, Notification] = {}
        self._next_id = 1
        self._listeners: list[Callable[[Notification], None]] = []

    def register_rule(self, rule: AlertRule) -> None:
        if not math.isfinite(rule.threshold):
            raise BadRuleError(f"rule {rule.id!r}: threshold must be finite, got {rule.threshold}")
        try:
            node = resolve(self.descriptor, rule.target)
        except PathNotFoundError as exc:
            raise BadRuleError(f"rule {rule.id!r}: {exc}") from exc
        if not isinstance(node, DataNode):
            raise BadRuleError(f"rule {rule.id!r}: target {rule.target} is not a Data node")
        _check_template(rule)
        with self._lock:
            if rule.id in self._rules:
                raise DuplicateRuleError(f"rule id {rule.id!r} already registered")
            self._rules[rule.id] = rule
            self._by_path.setdefault(str(rule.target), []).append(rule)

    def rules(self) -> list[AlertRule]:
        with self._lock:
            return list(self._rules.values())

    def evaluate(self, sample: TelemetrySample) -> list[Notification]:
        """Feed one sample through every rule watching its path."""
        fired: list[Notification] = []
        with self._lock:
            for rule in self._by_path.get(str(sample.path), []):
                now_true = rule.predicate(sample.value)
                was_true = self._last_state.get(rule.id, False)
                self._last_state[rule.id] = now_true
                if now_true and not was_true:
                    note = Notification(
                        id=self._next_id,
                        rule_id=rule.id,
                        path=sample.path,
                        triggered_at=sample.timestamp,
                        value=sample.value,
                        severity=rule.severity,
                        message=_render(rule, sample.value),
                    )
                    self._next_id += 1
                    self._log.append(note)
                    self._by_id[note.id] = note
                    fired.append(note)
            listeners = list(self._listeners)
        for note in fired:
            for listener in listeners:
                listener(note)
        return fired

    def acknowledge(self, notification_id: int) -> Notification:
        with self._lock:
            note = self._by_id.get(notification_id)
            if note is None:
                raise UnknownNotificationError(f"no notification with id {notification_id}")
            if note.acknowledged:
                raise AlreadyAcknowledgedError(f"notification {notification_id} already acknowledged")
            note.acknowledged = True
            return note

    def recent_notifications(
        self,
        scope: OntologyPath,
        limit: int,
        active_only: bool = False,
    ) -> list[Notification]:
        """Newest-first notifications whose path starts with ``scope``.

        Ordered by triggered_at descending, ties broken by id descending.
        """
        if limit < 0:
            raise ValueError(f"limit must be >= 0, got {limit}")
        with self._lock:
            hits = [
                n for n in self._log
                if scope.is_prefix_of(n.path) and not (active_only and n.acknowledged)
            ]
        hits.sort(key=lambda n: (-n.triggered_at, -n.id))
        return hits[:limit]

    def meter_status(self, scope: OntologyPath) -> MeterStatus:
        """ATT while any unacknowledged notification targets ``scope``."""
        with self._lock:
            for note in self._log:
                if not note.acknowledged and scope.is_prefix_of(note.path):
                    return MeterStatus.ATT
        return MeterStatus.OK

    def active_count(self, scope: OntologyPath) -> int:
        with self._lock:
            return sum(1 for n in self._log if not n.acknowledged and scope.is_prefix_of(n.path))

    def add_listener(self, listener: Callable[[Notification], None]) -> None:
        """Called synchronously after each emission, outside the engine lock."""
        with self._lock:
            self._listeners.append(listener)


def _render(rule: AlertRule, value: float) -> str:
    return rule.message.format_map({
        "path": str(rule.target),
        "value": value,
        "threshold": rule.threshold,
        "comparator": rule.comparator.value,
        "rule_id": rule.id,
        "severity": rule.severity.value,
    })


def _check_template(rule: AlertRule) -> None:
    try:
        _render(rule, 0.0)
    except (KeyError, IndexError, ValueError) as exc:
        raise BadRuleError(
            f"rule {rule.id!r}: bad message template {rule.message!r} "
            f"(allowed placeholders: {', '.join(sorted(_TEMPLATE_FIELDS))})"
        ) from exc


def load_rules(text: str) -> list[AlertRule]:
    """Parse a JSON rules file: an array of rule objects."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise BadRuleError(f"rules file is not valid JSON: {exc.msg}") from exc
    if not isinstance(raw, list):
        raise BadRuleError(f"rules file must hold a JSON array, got {type(raw).__name__}")
    rules = []
    for i, obj in enumerate(raw):
        where = f"rules[{i}]"
        if not isinstance(obj, dict):
            raise BadRuleError(f"{where}: expected an object")
        try:
            rules.append(AlertRule(
                id=str(obj["id"]),
                target=OntologyPath.parse(obj["target"]),
                comparator=Comparator(obj["comparator"]),
                threshold=float(obj["threshold"]),
                severity=Severity(obj.get("severity", Severity.ATTENTION.value)),
                message=str(obj.get("message", DEFAULT_MESSAGE)),
            ))
        except KeyError as exc:
            raise BadRuleError(f"{where}: missing field {exc.args[0]!r}") from exc
        except ValueError as exc:
            raise BadRuleError(f"{where}: {exc}") from exc
    return rules
