"""Server configuration: one JSON file, environment overrides on top.

Referenced files must exist and parse at load time so a bad deployment fails
at startup, not on first request. Relative paths resolve against the config
file's own directory. ``EDGESIGHT_BROKER`` and ``EDGESIGHT_PORT`` override
the broker address and listen port.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .alerts import AlertRule, BadRuleError, load_rules
from .awareness import AwarenessConfig
from .ontology import OntologyError, SiteDescriptor, parse_descriptor
from .store import DEFAULT_CAPACITY

ENV_BROKER = "EDGESIGHT_BROKER"
ENV_PORT = "EDGESIGHT_PORT"


class ConfigError(Exception):
    pass


@dataclass
class ServerConfig:
    descriptors: list[SiteDescriptor]
    rules: list[AlertRule] = field(default_factory=list)
    broker: str | None = None
    listen_host: str = "127.0.0.1"
    listen_port: int = 8000
    refresh_tick_ms: int = 1000
    retention: int = DEFAULT_CAPACITY
    session_idle_timeout_s: float = 300.0
    awareness: AwarenessConfig = field(default_factory=AwarenessConfig)

    def __post_init__(self) -> None:
        if not self.descriptors:
            raise ConfigError("at least one site descriptor is required")
        ids = [d.id for d in self.descriptors]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"duplicate site ids across descriptors: {ids}")
        if self.refresh_tick_ms <= 0:
            raise ConfigError(f"refresh_tick_ms must be positive, got {self.refresh_tick_ms}")
        if self.retention <= 0:
            raise ConfigError(f"retention must be positive, got {self.retention}")


def load_server_config(path: str | Path) -> ServerConfig:
    config_path = Path(path)
    try:
        raw = json.loads(config_path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {config_path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {config_path} is not valid JSON: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {config_path} must hold a JSON object")

    base = config_path.parent
    descriptor_paths = raw.get("descriptors", [])
    if not isinstance(descriptor_paths, list) or not descriptor_paths:
        raise ConfigError(f"{config_path}: 'descriptors' must be a non-empty array of file paths")
    descriptors = [_load_descriptor(base / p) for p in descriptor_paths]

    rules: list[AlertRule] = []
    if raw.get("rules"):
        rules = _load_rules(base / raw["rules"])

    listen = raw.get("listen", {})
    awareness_raw = raw.get("awareness", {})
    try:
        awareness = AwarenessConfig(**awareness_raw)
    except TypeError as exc:
        raise ConfigError(f"{config_path}: bad awareness settings: {exc}") from exc

    config = ServerConfig(
        descriptors=descriptors,
        rules=rules,
        broker=raw.get("broker"),
        listen_host=listen.get("host", "127.0.0.1"),
        listen_port=int(listen.get("port", 8000)),
        refresh_tick_ms=int(raw.get("refresh_tick_ms", 1000)),
        retention=int(raw.get("retention", DEFAULT_CAPACITY)),
        session_idle_timeout_s=float(raw.get("session_idle_timeout_s", 300.0)),
        awareness=awareness,
    )
    return apply_env_overrides(config)


def apply_env_overrides(config: ServerConfig) -> ServerConfig:
    broker = os.environ.get(ENV_BROKER)
    if broker:
        config.broker = broker
    port = os.environ.get(ENV_PORT)
    if port:
        try:
            config.listen_port = int(port)
        except ValueError:
            raise ConfigError(f"{ENV_PORT} must be an integer, got {port!r}") from None
    return config


def _load_descriptor(path: Path) -> SiteDescriptor:
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise ConfigError(f"descriptor file not found: {path}") from None
    try:
        return parse_descriptor(text)
    except OntologyError as exc:
        raise ConfigError(f"descriptor {path}: {exc}") from exc


def _load_rules(path: Path) -> list[AlertRule]:
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise ConfigError(f"rules file not found: {path}") from None
    try:
        return load_rules(text)
    except BadRuleError as exc:
        raise ConfigError(f"rules {path}: {exc}") from exc
