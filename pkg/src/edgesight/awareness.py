"""Observer-relative information tiers and view-packet composition.

Every asset sits in one of three tiers relative to the observer: ``area``
(only the ambient overview mentions it), ``proximity`` (its panel appears),
and ``detail`` (close and in view: per-compartment readouts unlock). The
proximity boundary uses distinct enter/exit radii so a panel does not flicker
while the observer stands near the threshold; the detail boundary does not,
because it additionally requires line-of-view, which the observer controls.

All computation is planar: distances and the field-of-view test ignore z,
matching a walk-through observer who aims panels, not a pitch axis.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from typing import Mapping

from .alerts import AlertEngine, MeterStatus
from .analytics import AggregateFn, AggregateResult, area_aggregate
from .geometry import Vec3
from .ontology import (
    Asset,
    AssetKind,
    OntologyPath,
    Semantic,
    SiteDescriptor,
    Unit,
    iter_assets,
)
from .store import TelemetryStore
from .telemetry import TelemetrySample

COINCIDENT_EPSILON_M = 0.01

DEFAULT_R_DETAIL = 3.0
DEFAULT_R_PROX_ENTER = 8.0
DEFAULT_R_PROX_EXIT = 10.0
DEFAULT_FOV_HALF_ANGLE = math.pi / 4


class Tier(str, Enum):
    NONE = "none"
    AREA = "area"
    PROXIMITY = "proximity"
    DETAIL = "detail"


@dataclass(frozen=True)
class ObserverPose:
    position: Vec3
    yaw: float  # radians in the floor plane, 0 = +x axis
    fov_half_angle: float = DEFAULT_FOV_HALF_ANGLE

    def __post_init__(self) -> None:
        if not 0 < self.fov_half_angle <= math.pi:
            raise ValueError(f"fov_half_angle must be in (0, pi], got {self.fov_half_angle}")

    def to_obj(self) -> dict:
        return {
            "x": self.position.x,
            "y": self.position.y,
            "z": self.position.z,
            "yaw": self.yaw,
            "fov_half_angle": self.fov_half_angle,
        }


def validate_pose(desc: SiteDescriptor, pose: ObserverPose) -> None:
    if not desc.bounds.contains(pose.position):
        raise ValueError(f"pose position {pose.position} outside site bounds {desc.bounds}")


@dataclass(frozen=True)
class TierAssignment:
    tier: Tier
    distance: float
    in_fov: bool
    path: OntologyPath | None = None


@dataclass(frozen=True)
class AwarenessConfig:
    r_detail: float = DEFAULT_R_DETAIL
    r_prox_enter: float = DEFAULT_R_PROX_ENTER
    r_prox_exit: float = DEFAULT_R_PROX_EXIT
    panel_cap: int = 5
    detail_cap: int = 8
    overview_window_ms: int = 60_000
    site_notification_limit: int = 5
    panel_notification_limit: int = 2


def in_field_of_view(pose: ObserverPose, point: Vec3, fov_half_angle: float | None = None) -> bool:
    """Floor-plane visibility test; a coincident point always counts as seen."""
    half = pose.fov_half_angle if fov_half_angle is None else fov_half_angle
    dx = point.x - pose.position.x
    dy = point.y - pose.position.y
    if math.hypot(dx, dy) <= COINCIDENT_EPSILON_M:
        return True
    bearing = math.atan2(dy, dx)
    return abs(math.remainder(bearing - pose.yaw, math.tau)) <= half


def classify_tier(
    pose: ObserverPose,
    target: Vec3,
    previous: Tier = Tier.NONE,
    *,
    r_detail: float = DEFAULT_R_DETAIL,
    r_prox_enter: float = DEFAULT_R_PROX_ENTER,
    r_prox_exit: float = DEFAULT_R_PROX_EXIT,
    fov_half_angle: float | None = None,
) -> TierAssignment:
    """Assign the tier for one target given the previous assignment.

    Detail requires closeness and view. Proximity is entered at
    ``r_prox_enter`` but, once held (previous proximity or detail), survives
    out to ``r_prox_exit``.
    """
    if not r_prox_enter <= r_prox_exit:
        raise ValueError(f"r_prox_enter {r_prox_enter} must not exceed r_prox_exit {r_prox_exit}")
    distance = pose.position.planar_distance(target)
    seen = in_field_of_view(pose, target, fov_half_angle)
    if distance <= r_detail and seen:
        tier = Tier.DETAIL
    elif distance <= r_prox_enter:
        tier = Tier.PROXIMITY
    elif previous in (Tier.PROXIMITY, Tier.DETAIL) and distance <= r_prox_exit:
        tier = Tier.PROXIMITY
    else:
        tier = Tier.AREA
    return TierAssignment(tier=tier, distance=distance, in_fov=seen)


class TierTracker:
    """Previous tier per target for one observer; feeds the hysteresis rule."""

    def __init__(self) -> None:
        self._tiers: dict[str, Tier] = {}

    def previous(self, path: OntologyPath) -> Tier:
        return self._tiers.get(str(path), Tier.NONE)

    def update(self, path: OntologyPath, tier: Tier) -> None:
        self._tiers[str(path)] = tier

    def copy(self) -> "TierTracker":
        out = TierTracker()
        out._tiers = dict(self._tiers)
        return out


# --- packet composition -----------------------------------------------------

@dataclass(frozen=True)
class Reading:
    path: str
    name: str
    value: float
    unit: str
    semantic: str
    ts: int

    def to_obj(self) -> dict:
        return {
            "path": self.path,
            "name": self.name,
            "value": self.value,
            "unit": self.unit,
            "semantic": self.semantic,
            "ts": self.ts,
        }


@dataclass(frozen=True)
class AreaOverview:
    department: str | None
    department_name: str | None
    power: AggregateResult | None
    environment: tuple[Reading, ...] = ()

    def to_obj(self) -> dict:
        return {
            "department": self.department,
            "department_name": self.department_name,
            "power": self.power.to_obj() if self.power else None,
            "environment": [r.to_obj() for r in self.environment],
        }


@dataclass(frozen=True)
class AssetPanel:
    path: str
    name: str
    kind: str
    tier: str
    distance: float
    in_fov: bool
    status: str  # "normal" / "attention", from active notifications under the asset
    headline_power_kw: float | None
    readings: tuple[Reading, ...]
    notifications: tuple[Mapping, ...]

    def to_obj(self) -> dict:
        return {
            "path": self.path,
            "name": self.name,
            "kind": self.kind,
            "tier": self.tier,
            "distance": self.distance,
            "in_fov": self.in_fov,
            "status": self.status,
            "headline_power_kw": self.headline_power_kw,
            "readings": [r.to_obj() for r in self.readings],
            "notifications": [dict(n) for n in self.notifications],
        }


@dataclass(frozen=True)
class DetailPanel:
    path: str
    name: str
    meter_status: str  # "OK" / "ATT"
    readings: tuple[Reading, ...]

    def to_obj(self) -> dict:
        return {
            "path": self.path,
            "name": self.name,
            "meter_status": self.meter_status,
            "readings": [r.to_obj() for r in self.readings],
        }


@dataclass(frozen=True)
class ViewPacket:
    pose: ObserverPose
    area_overview: AreaOverview
    asset_panels: tuple[AssetPanel, ...]
    detail_panels: tuple[DetailPanel, ...]
    notifications: tuple[Mapping, ...]
    generated_at: int

    def to_obj(self) -> dict:
        return {
            "pose": self.pose.to_obj(),
            "area_overview": self.area_overview.to_obj(),
            "asset_panels": [p.to_obj() for p in self.asset_panels],
            "detail_panels": [p.to_obj() for p in self.detail_panels],
            "notifications": [dict(n) for n in self.notifications],
            "generated_at": self.generated_at,
        }

    def to_json(self) -> str:
        """Canonical rendering: identical inputs give identical bytes."""
        return json.dumps(self.to_obj(), sort_keys=True, separators=(",", ":"))


@dataclass(frozen=True)
class _AssetRadii:
    r_detail: float
    r_prox_enter: float
    r_prox_exit: float
    fov_half_angle: float | None


def asset_radii(asset: Asset, config: AwarenessConfig) -> _AssetRadii:
    """Per-asset radii: descriptor extension fields override the defaults."""
    ext = asset.extras.get("awareness")
    ext = ext if isinstance(ext, dict) else {}

    def pick(key: str, default: float | None) -> float | None:
        value = ext.get(key)
        return float(value) if isinstance(value, (int, float)) and not isinstance(value, bool) else default

    return _AssetRadii(
        r_detail=pick("r_detail", config.r_detail),
        r_prox_enter=pick("r_prox_enter", config.r_prox_enter),
        r_prox_exit=pick("r_prox_exit", config.r_prox_exit),
        fov_half_angle=pick("fov_half_angle", None),
    )


def compose_view_packet(
    desc: SiteDescriptor,
    store: TelemetryStore,
    alerts: AlertEngine,
    pose: ObserverPose,
    tracker: TierTracker,
    config: AwarenessConfig = AwarenessConfig(),
    now_ms: int = 0,
) -> ViewPacket:
    """Fold pose, live values, and the notification log into one packet.

    Deterministic: iteration follows descriptor order, panel lists carry
    explicit sort keys, and the caller supplies the clock.
    """
    overview = _area_overview(desc, store, pose, config, now_ms)

    assignments: list[tuple[OntologyPath, Asset, TierAssignment]] = []
    for path, asset in iter_assets(desc):
        radii = asset_radii(asset, config)
        assignment = classify_tier(
            pose,
            asset.position,
            tracker.previous(path),
            r_detail=radii.r_detail,
            r_prox_enter=radii.r_prox_enter,
            r_prox_exit=radii.r_prox_exit,
            fov_half_angle=radii.fov_half_angle,
        )
        tracker.update(path, assignment.tier)
        if assignment.tier in (Tier.PROXIMITY, Tier.DETAIL):
            assignments.append((path, asset, assignment))

    assignments.sort(key=lambda item: (item[2].distance, item[0].asset_id))
    panels = tuple(
        _asset_panel(desc, store, alerts, path, asset, assignment, config)
        for path, asset, assignment in assignments[: config.panel_cap]
    )

    details: list[DetailPanel] = []
    for path, asset, assignment in assignments:
        if assignment.tier is not Tier.DETAIL:
            continue
        fov = asset_radii(asset, config).fov_half_angle
        for res in asset.resources:
            if res.local_offset is None:
                continue
            world = asset.position + res.local_offset
            if not in_field_of_view(pose, world, fov):
                continue
            rpath = path.child(res.id)
            details.append(DetailPanel(
                path=str(rpath),
                name=res.name,
                meter_status=alerts.meter_status(rpath).value,
                readings=_readings(store, rpath, res.data),
            ))
    details = details[: config.detail_cap]

    site_notes = alerts.recent_notifications(
        desc.path, config.site_notification_limit, active_only=True
    )
    return ViewPacket(
        pose=pose,
        area_overview=overview,
        asset_panels=panels,
        detail_panels=tuple(details),
        notifications=tuple(n.to_obj() for n in site_notes),
        generated_at=now_ms,
    )


def observer_department(desc: SiteDescriptor, pose: ObserverPose):
    """Department whose footprint holds the observer, else the nearest one.

    Overlapping footprints resolve to the first match in descriptor order.
    Returns None for a site without departments.
    """
    x, y = pose.position.x, pose.position.y
    for dept in desc.departments:
        if dept.footprint.contains_point(x, y):
            return dept
    if not desc.departments:
        return None
    return min(desc.departments, key=lambda d: (d.footprint.distance_to_point(x, y), d.id))


def _area_overview(
    desc: SiteDescriptor,
    store: TelemetryStore,
    pose: ObserverPose,
    config: AwarenessConfig,
    now_ms: int,
) -> AreaOverview:
    dept = observer_department(desc, pose)
    power = None
    dept_path = None
    if dept is not None:
        dept_path = OntologyPath(desc.id, dept.id)
        power = area_aggregate(
            store,
            dept_path,
            Semantic.MOMENTARY,
            now_ms - config.overview_window_ms,
            now_ms,
            AggregateFn.SUM,
            unit=Unit.KILOWATT,
        )

    env: list[Reading] = []
    for apath, asset in iter_assets(desc):
        if asset.kind is not AssetKind.ENV_SENSOR:
            continue
        for res in asset.resources:
            env.extend(_readings(store, apath.child(res.id), res.data))
    return AreaOverview(
        department=str(dept_path) if dept_path else None,
        department_name=dept.name if dept else None,
        power=power,
        environment=tuple(env),
    )


def _asset_panel(
    desc: SiteDescriptor,
    store: TelemetryStore,
    alerts: AlertEngine,
    path: OntologyPath,
    asset: Asset,
    assignment: TierAssignment,
    config: AwarenessConfig,
) -> AssetPanel:
    """Exterior view of one asset: status line, headline power, flat readings.

    Readings cover offset-free resources only; compartments (offset-bearing
    resources) stay hidden until the detail tier reveals them individually.
    """
    headline = None
    power_values = []
    readings: list[Reading] = []
    for res in asset.resources:
        rpath = path.child(res.id)
        for node in res.data:
            npath = rpath.child(node.id)
            sample = store.latest(npath)
            if sample is None:
                continue
            if node.semantic is Semantic.MOMENTARY and node.unit is Unit.KILOWATT:
                power_values.append(sample.value)
            if res.local_offset is None and node.semantic is not Semantic.PREDICTED:
                readings.append(_reading(npath, node, sample))
    if power_values:
        headline = sum(power_values)

    active = alerts.active_count(path)
    notes = alerts.recent_notifications(path, config.panel_notification_limit)
    return AssetPanel(
        path=str(path),
        name=asset.name,
        kind=asset.kind.value,
        tier=assignment.tier.value,
        distance=assignment.distance,
        in_fov=assignment.in_fov,
        status="attention" if active else "normal",
        headline_power_kw=headline,
        readings=tuple(readings),
        notifications=tuple(n.to_obj() for n in notes),
    )


def _readings(store: TelemetryStore, rpath: OntologyPath, nodes) -> tuple[Reading, ...]:
    out = []
    for node in nodes:
        if node.semantic is Semantic.PREDICTED:
            continue
        npath = rpath.child(node.id)
        sample = store.latest(npath)
        if sample is not None:
            out.append(_reading(npath, node, sample))
    return tuple(out)


def _reading(path: OntologyPath, node, sample: TelemetrySample) -> Reading:
    return Reading(
        path=str(path),
        name=node.name,
        value=sample.value,
        unit=sample.unit.value,
        semantic=node.semantic.value,
        ts=sample.timestamp,
    )
