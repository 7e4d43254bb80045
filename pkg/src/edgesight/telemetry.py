"""Telemetry wire format: topic scheme and JSON sample payloads.

One monitored quantity maps to one topic of the form
``enerman/<site>/<department>/<asset>/<resource>/<data>`` where every segment
past the fixed root is a node id from the site descriptor. Payloads are JSON
objects with keys ``ts`` (epoch milliseconds), ``value`` (number), ``unit``
(must match the target Data node) and optional ``quality``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from typing import Any

from .ontology import DataNode, OntologyPath, PathNotFoundError, SiteDescriptor, Unit, resolve

TOPIC_ROOT = "enerman"


class Quality(str, Enum):
    GOOD = "good"
    SUSPECT = "suspect"


class TelemetryError(Exception):
    """Base class for telemetry decoding and store errors."""


class MalformedTopicError(TelemetryError):
    pass


class MalformedPayloadError(TelemetryError):
    pass


class UnitMismatchError(TelemetryError):
    def __init__(self, path: OntologyPath, declared: Unit, received: Unit):
        super().__init__(
            f"{path}: payload unit {received.value!r} does not match declared {declared.value!r}"
        )
        self.path = path
        self.declared = declared
        self.received = received


class UnknownPathError(TelemetryError):
    def __init__(self, path: OntologyPath):
        super().__init__(f"path {path} does not name a Data node of the active descriptor")
        self.path = path


@dataclass(frozen=True)
class TelemetrySample:
    path: OntologyPath
    timestamp: int  # epoch milliseconds UTC
    value: float
    unit: Unit
    quality: Quality = Quality.GOOD

    def to_obj(self) -> dict:
        return {
            "path": str(self.path),
            "ts": self.timestamp,
            "value": self.value,
            "unit": self.unit.value,
            "quality": self.quality.value,
        }


def topic_for(desc: SiteDescriptor, path: OntologyPath) -> str:
    """Map a full-depth path onto its topic. Injective per descriptor."""
    if path.depth != 5:
        raise UnknownPathError(path)
    node = _resolve_data_node(desc, path)
    if node is None:
        raise UnknownPathError(path)
    return "/".join((TOPIC_ROOT,) + path.segments)


def parse_topic(topic: str) -> OntologyPath:
    """Invert topic_for syntactically; resolution is the caller's concern."""
    parts = topic.split("/")
    if len(parts) != 6 or parts[0] != TOPIC_ROOT or any(p == "" for p in parts):
        raise MalformedTopicError(f"expected {TOPIC_ROOT}/<site>/<department>/<asset>/<resource>/<data>, got {topic!r}")
    return OntologyPath(*parts[1:])


def subscription_filter(site_id: str) -> str:
    """Wildcard filter covering every topic of one site."""
    return f"{TOPIC_ROOT}/{site_id}/#"


def parse_sample(desc: SiteDescriptor, topic: str, payload: str | bytes | dict) -> TelemetrySample:
    """Decode one published sample and bind it to its Data node.

    Raises MalformedTopicError / MalformedPayloadError for wire problems,
    UnknownPathError when the topic does not resolve in ``desc``, and
    UnitMismatchError when the payload disagrees with the declared unit.
    """
    path = parse_topic(topic)
    node = _resolve_data_node(desc, path)
    if node is None:
        raise UnknownPathError(path)

    if isinstance(payload, (str, bytes)):
        try:
            obj = json.loads(payload)
        except json.JSONDecodeError as exc:
            raise MalformedPayloadError(f"payload is not valid JSON: {exc.msg}") from exc
    else:
        obj = payload
    if not isinstance(obj, dict):
        raise MalformedPayloadError(f"payload must be a JSON object, got {type(obj).__name__}")

    ts = _payload_field(obj, "ts")
    if isinstance(ts, bool) or not isinstance(ts, int) or ts <= 0:
        raise MalformedPayloadError(f"ts must be a positive epoch-millisecond integer, got {ts!r}")
    value = _payload_field(obj, "value")
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise MalformedPayloadError(f"value must be a finite number, got {value!r}")

    unit_text = _payload_field(obj, "unit")
    try:
        unit = Unit(unit_text)
    except ValueError:
        raise MalformedPayloadError(f"unknown unit {unit_text!r}") from None
    if unit is not node.unit:
        raise UnitMismatchError(path, node.unit, unit)

    quality_text = obj.get("quality", Quality.GOOD.value)
    try:
        quality = Quality(quality_text)
    except ValueError:
        raise MalformedPayloadError(f"unknown quality {quality_text!r}") from None

    return TelemetrySample(path=path, timestamp=ts, value=float(value), unit=unit, quality=quality)


def encode_payload(sample: TelemetrySample) -> str:
    """Render the JSON payload published for one sample."""
    obj: dict[str, Any] = {"ts": sample.timestamp, "value": sample.value, "unit": sample.unit.value}
    if sample.quality is not Quality.GOOD:
        obj["quality"] = sample.quality.value
    return json.dumps(obj)


def _payload_field(obj: dict, key: str) -> Any:
    if key not in obj:
        raise MalformedPayloadError(f"payload missing required key {key!r}")
    return obj[key]


def _resolve_data_node(desc: SiteDescriptor, path: OntologyPath) -> DataNode | None:
    if path.depth != 5:
        return None
    try:
        node = resolve(desc, path)
    except PathNotFoundError:
        return None
    return node if isinstance(node, DataNode) else None
