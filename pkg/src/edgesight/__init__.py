"""Edge factory monitoring: ontology, telemetry, alerts, analytics, awareness."""

__version__ = "0.1.0"
