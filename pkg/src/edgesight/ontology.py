"""Five-level asset ontology: Site / Department / Asset / Resource / Data.

A site descriptor is a JSON document describing one factory site as a tree.
Descriptors are immutable after parsing; to change one, parse a new document.
Unknown keys on any node are kept in ``extras`` and written back on
serialization, so pilot-specific additions survive a round trip.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterator

from .geometry import Box3, Rect2, Vec3


class AssetKind(str, Enum):
    COOLING_TUNNEL = "cooling_tunnel"
    LIQUID_TANK = "liquid_tank"
    MIXING_MACHINE = "mixing_machine"
    ENV_SENSOR = "env_sensor"
    POWER_PANEL = "power_panel"
    GENERIC = "generic"


class Unit(str, Enum):
    CELSIUS = "celsius"
    PERCENT_RH = "percent_rh"
    KILOWATT = "kilowatt"
    KILOWATT_HOUR = "kilowatt_hour"
    FRACTION = "fraction"
    COUNT = "count"
    UNITLESS = "unitless"


class Semantic(str, Enum):
    MOMENTARY = "momentary"
    PREDICTED = "predicted"
    AVERAGE = "average"
    STATUS = "status"


# Node ids become topic segments and URL path segments, so the separator and
# subscription wildcards are off limits, as is whitespace.
_ID_PATTERN = re.compile(r"^[^/+#\s]+$")


def is_valid_id(node_id: str) -> bool:
    return isinstance(node_id, str) and bool(_ID_PATTERN.match(node_id))


class OntologyError(Exception):
    """Base class for descriptor and path errors."""


class DescriptorSyntaxError(OntologyError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"invalid JSON at line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class DescriptorSchemaError(OntologyError):
    def __init__(self, location: str, message: str):
        super().__init__(f"{location}: {message}")
        self.location = location


class PathNotFoundError(OntologyError):
    def __init__(self, path: "OntologyPath", segment: str):
        super().__init__(f"path {path} does not resolve: no node {segment!r}")
        self.path = path
        self.segment = segment


@dataclass(frozen=True)
class OntologyPath:
    """Slash-joined address of a node, site first, progressively deeper.

    A path with only ``site_id`` names the site; a full five-segment path
    names one Data node. Deeper segments require all shallower ones.
    """

    site_id: str
    department_id: str | None = None
    asset_id: str | None = None
    resource_id: str | None = None
    data_id: str | None = None

    def __post_init__(self) -> None:
        segs = (self.site_id, self.department_id, self.asset_id, self.resource_id, self.data_id)
        seen_none = False
        for seg in segs:
            if seg is None:
                seen_none = True
            elif seen_none:
                raise ValueError(f"non-contiguous path segments: {segs}")

    @property
    def segments(self) -> tuple[str, ...]:
        out = []
        for seg in (self.site_id, self.department_id, self.asset_id, self.resource_id, self.data_id):
            if seg is None:
                break
            out.append(seg)
        return tuple(out)

    @property
    def depth(self) -> int:
        return len(self.segments)

    def is_prefix_of(self, other: "OntologyPath") -> bool:
        mine = self.segments
        return other.segments[: len(mine)] == mine

    def child(self, segment: str) -> "OntologyPath":
        if self.depth >= 5:
            raise ValueError(f"cannot extend a full-depth path: {self}")
        return OntologyPath(*self.segments, segment)

    def parent(self) -> "OntologyPath":
        if self.depth == 1:
            raise ValueError(f"site path has no parent: {self}")
        return OntologyPath(*self.segments[:-1])

    def __str__(self) -> str:
        return "/".join(self.segments)

    @staticmethod
    def parse(text: str) -> "OntologyPath":
        parts = text.split("/") if text else []
        if not 1 <= len(parts) <= 5 or any(p == "" for p in parts):
            raise ValueError(f"invalid ontology path: {text!r}")
        return OntologyPath(*parts)


def _freeze(obj: Any, attr: str, value: Any) -> None:
    object.__setattr__(obj, attr, value)


@dataclass(frozen=True)
class DataNode:
    id: str
    name: str
    unit: Unit
    semantic: Semantic
    extras: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Resource:
    id: str
    name: str
    local_offset: Vec3 | None = None
    data: tuple[DataNode, ...] = ()
    extras: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        _freeze(self, "data", tuple(self.data))


@dataclass(frozen=True)
class Asset:
    id: str
    name: str
    kind: AssetKind
    position: Vec3
    resources: tuple[Resource, ...] = ()
    extras: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        _freeze(self, "resources", tuple(self.resources))


@dataclass(frozen=True)
class Department:
    id: str
    name: str
    footprint: Rect2
    assets: tuple[Asset, ...] = ()
    extras: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        _freeze(self, "assets", tuple(self.assets))


@dataclass(frozen=True)
class SiteDescriptor:
    id: str
    name: str
    bounds: Box3
    departments: tuple[Department, ...] = ()
    extras: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        _freeze(self, "departments", tuple(self.departments))

    @property
    def path(self) -> OntologyPath:
        return OntologyPath(self.id)


@dataclass(frozen=True)
class Violation:
    path: OntologyPath
    message: str

    def __str__(self) -> str:
        return f"{self.path}: {self.message}"


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = ()

    def __post_init__(self) -> None:
        _freeze(self, "violations", tuple(self.violations))

    @property
    def ok(self) -> bool:
        return not self.violations

    def __iter__(self) -> Iterator[Violation]:
        return iter(self.violations)

    def __len__(self) -> int:
        return len(self.violations)


class DescriptorInvariantError(OntologyError):
    def __init__(self, report: ValidationReport):
        lines = "; ".join(str(v) for v in report)
        super().__init__(f"descriptor violates invariants: {lines}")
        self.report = report


# --- validation -------------------------------------------------------------

def validate(desc: SiteDescriptor) -> ValidationReport:
    """Check every structural invariant; violations are data, not exceptions."""
    out: list[Violation] = []
    site_path = desc.path

    if not is_valid_id(desc.id):
        out.append(Violation(site_path, f"invalid site id {desc.id!r}"))
    if not desc.bounds.is_positive():
        out.append(Violation(site_path, f"site bounds must be strictly positive, got {desc.bounds}"))

    _check_unique_ids(out, site_path, desc.departments, "department")
    for dept in desc.departments:
        dpath = site_path.child(dept.id) if is_valid_id(dept.id) else site_path
        if not is_valid_id(dept.id):
            out.append(Violation(site_path, f"invalid department id {dept.id!r}"))
            continue
        if not dept.footprint.is_positive():
            out.append(Violation(dpath, f"footprint must have positive extent, got {dept.footprint}"))
        elif not dept.footprint.within(desc.bounds):
            out.append(Violation(dpath, f"footprint {dept.footprint} exceeds site bounds {desc.bounds}"))

        _check_unique_ids(out, dpath, dept.assets, "asset")
        for asset in dept.assets:
            if not is_valid_id(asset.id):
                out.append(Violation(dpath, f"invalid asset id {asset.id!r}"))
                continue
            apath = dpath.child(asset.id)
            if not desc.bounds.contains(asset.position):
                out.append(Violation(apath, f"position {asset.position} outside site bounds {desc.bounds}"))

            _check_unique_ids(out, apath, asset.resources, "resource")
            for res in asset.resources:
                if not is_valid_id(res.id):
                    out.append(Violation(apath, f"invalid resource id {res.id!r}"))
                    continue
                rpath = apath.child(res.id)
                if res.local_offset is not None:
                    world = asset.position + res.local_offset
                    if not desc.bounds.contains(world):
                        out.append(Violation(
                            rpath,
                            f"offset places resource at {world}, outside site bounds {desc.bounds}",
                        ))
                _check_unique_ids(out, rpath, res.data, "data node")
                for node in res.data:
                    if not is_valid_id(node.id):
                        out.append(Violation(rpath, f"invalid data id {node.id!r}"))

    return ValidationReport(tuple(out))


def _check_unique_ids(out: list[Violation], parent: OntologyPath, children, label: str) -> None:
    seen: set[str] = set()
    for child in children:
        if child.id in seen and is_valid_id(child.id):
            out.append(Violation(parent.child(child.id), f"duplicate {label} id {child.id!r}"))
        seen.add(child.id)


# --- resolution -------------------------------------------------------------

def resolve(desc: SiteDescriptor, path: OntologyPath):
    """Walk the tree along ``path`` and return the node it names.

    Returns SiteDescriptor, Department, Asset, Resource or DataNode by depth.
    Raises PathNotFoundError naming the first segment that does not resolve.
    """
    if path.site_id != desc.id:
        raise PathNotFoundError(path, path.site_id)
    node: Any = desc
    for segment, children_attr in (
        (path.department_id, "departments"),
        (path.asset_id, "assets"),
        (path.resource_id, "resources"),
        (path.data_id, "data"),
    ):
        if segment is None:
            break
        children = getattr(node, children_attr)
        for child in children:
            if child.id == segment:
                node = child
                break
        else:
            raise PathNotFoundError(path, segment)
    return node


def iter_data_paths(desc: SiteDescriptor) -> Iterator[tuple[OntologyPath, DataNode]]:
    """Yield (full path, node) for every Data node in descriptor order."""
    for dept in desc.departments:
        for asset in dept.assets:
            for res in asset.resources:
                for node in res.data:
                    yield OntologyPath(desc.id, dept.id, asset.id, res.id, node.id), node


def iter_assets(desc: SiteDescriptor) -> Iterator[tuple[OntologyPath, Asset]]:
    for dept in desc.departments:
        for asset in dept.assets:
            yield OntologyPath(desc.id, dept.id, asset.id), asset


# --- parsing ----------------------------------------------------------------

_SITE_KEYS = {"id", "name", "bounds", "departments"}
_DEPT_KEYS = {"id", "name", "footprint", "assets"}
_ASSET_KEYS = {"id", "name", "kind", "position", "resources"}
_RESOURCE_KEYS = {"id", "name", "offset", "data"}
_DATA_KEYS = {"id", "name", "unit", "semantic"}


def parse_descriptor(text: str) -> SiteDescriptor:
    """Parse and validate a site descriptor document.

    Raises DescriptorSyntaxError for malformed JSON, DescriptorSchemaError for
    missing/mistyped fields (with the offending location), and
    DescriptorInvariantError when the tree parses but violates an invariant.
    """
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DescriptorSyntaxError(exc.msg, exc.lineno, exc.colno) from exc

    desc = descriptor_from_obj(raw)
    report = validate(desc)
    if not report.ok:
        raise DescriptorInvariantError(report)
    return desc


def descriptor_from_obj(raw: Any, location: str = "$") -> SiteDescriptor:
    """Build a descriptor from already-decoded JSON without invariant checks."""
    _require_object(raw, location)
    return SiteDescriptor(
        id=_require_str(raw, "id", location),
        name=_require_str(raw, "name", location),
        bounds=_parse_box(_require(raw, "bounds", location), f"{location}.bounds"),
        departments=tuple(
            _parse_department(item, f"{location}.departments[{i}]")
            for i, item in enumerate(_optional_list(raw, "departments", location))
        ),
        extras=_extras(raw, _SITE_KEYS),
    )


def _parse_department(raw: Any, location: str) -> Department:
    _require_object(raw, location)
    return Department(
        id=_require_str(raw, "id", location),
        name=_require_str(raw, "name", location),
        footprint=_parse_rect(_require(raw, "footprint", location), f"{location}.footprint"),
        assets=tuple(
            _parse_asset(item, f"{location}.assets[{i}]")
            for i, item in enumerate(_optional_list(raw, "assets", location))
        ),
        extras=_extras(raw, _DEPT_KEYS),
    )


def _parse_asset(raw: Any, location: str) -> Asset:
    _require_object(raw, location)
    return Asset(
        id=_require_str(raw, "id", location),
        name=_require_str(raw, "name", location),
        kind=_parse_enum(AssetKind, _require_str(raw, "kind", location), f"{location}.kind"),
        position=_parse_vec(_require(raw, "position", location), f"{location}.position"),
        resources=tuple(
            _parse_resource(item, f"{location}.resources[{i}]")
            for i, item in enumerate(_optional_list(raw, "resources", location))
        ),
        extras=_extras(raw, _ASSET_KEYS),
    )


def _parse_resource(raw: Any, location: str) -> Resource:
    _require_object(raw, location)
    offset = None
    if raw.get("offset") is not None:
        offset = _parse_vec(raw["offset"], f"{location}.offset")
    return Resource(
        id=_require_str(raw, "id", location),
        name=_require_str(raw, "name", location),
        local_offset=offset,
        data=tuple(
            _parse_data(item, f"{location}.data[{i}]")
            for i, item in enumerate(_optional_list(raw, "data", location))
        ),
        extras=_extras(raw, _RESOURCE_KEYS),
    )


def _parse_data(raw: Any, location: str) -> DataNode:
    _require_object(raw, location)
    return DataNode(
        id=_require_str(raw, "id", location),
        name=_require_str(raw, "name", location),
        unit=_parse_enum(Unit, _require_str(raw, "unit", location), f"{location}.unit"),
        semantic=_parse_enum(Semantic, _require_str(raw, "semantic", location), f"{location}.semantic"),
        extras=_extras(raw, _DATA_KEYS),
    )


def _parse_vec(raw: Any, location: str) -> Vec3:
    _require_object(raw, location)
    return Vec3(
        _require_number(raw, "x", location),
        _require_number(raw, "y", location),
        _require_number(raw, "z", location),
    )


def _parse_box(raw: Any, location: str) -> Box3:
    _require_object(raw, location)
    return Box3(
        _require_number(raw, "w", location),
        _require_number(raw, "d", location),
        _require_number(raw, "h", location),
    )


def _parse_rect(raw: Any, location: str) -> Rect2:
    _require_object(raw, location)
    return Rect2(
        _require_number(raw, "x", location),
        _require_number(raw, "y", location),
        _require_number(raw, "w", location),
        _require_number(raw, "d", location),
    )


def _parse_enum(enum_cls, value: str, location: str):
    try:
        return enum_cls(value)
    except ValueError:
        allowed = ", ".join(m.value for m in enum_cls)
        raise DescriptorSchemaError(location, f"unknown value {value!r}, expected one of: {allowed}") from None


def _require_object(raw: Any, location: str) -> None:
    if not isinstance(raw, dict):
        raise DescriptorSchemaError(location, f"expected an object, got {type(raw).__name__}")


def _require(raw: dict, key: str, location: str) -> Any:
    if key not in raw:
        raise DescriptorSchemaError(location, f"missing required field {key!r}")
    return raw[key]


def _require_str(raw: dict, key: str, location: str) -> str:
    value = _require(raw, key, location)
    if not isinstance(value, str):
        raise DescriptorSchemaError(f"{location}.{key}", f"expected a string, got {type(value).__name__}")
    return value


def _require_number(raw: dict, key: str, location: str) -> float:
    value = _require(raw, key, location)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise DescriptorSchemaError(f"{location}.{key}", f"expected a number, got {type(value).__name__}")
    return float(value)


def _optional_list(raw: dict, key: str, location: str) -> list:
    value = raw.get(key, [])
    if not isinstance(value, list):
        raise DescriptorSchemaError(f"{location}.{key}", f"expected an array, got {type(value).__name__}")
    return value


def _extras(raw: dict, known: set[str]) -> dict:
    return {k: raw[k] for k in raw if k not in known}


# --- serialization ----------------------------------------------------------

def serialize(desc: SiteDescriptor, indent: int | None = 2) -> str:
    """Render a descriptor back to its JSON document form.

    parse_descriptor(serialize(d)) reproduces d field for field, extras
    included.
    """
    return json.dumps(descriptor_to_obj(desc), indent=indent)


def descriptor_to_obj(desc: SiteDescriptor) -> dict:
    out: dict[str, Any] = {
        "id": desc.id,
        "name": desc.name,
        "bounds": {"w": desc.bounds.w, "d": desc.bounds.d, "h": desc.bounds.h},
        "departments": [_dept_to_obj(d) for d in desc.departments],
    }
    out.update(_sorted_extras(desc.extras))
    return out


def _dept_to_obj(dept: Department) -> dict:
    fp = dept.footprint
    out: dict[str, Any] = {
        "id": dept.id,
        "name": dept.name,
        "footprint": {"x": fp.x, "y": fp.y, "w": fp.w, "d": fp.d},
        "assets": [_asset_to_obj(a) for a in dept.assets],
    }
    out.update(_sorted_extras(dept.extras))
    return out


def _asset_to_obj(asset: Asset) -> dict:
    out: dict[str, Any] = {
        "id": asset.id,
        "name": asset.name,
        "kind": asset.kind.value,
        "position": _vec_to_obj(asset.position),
        "resources": [_resource_to_obj(r) for r in asset.resources],
    }
    out.update(_sorted_extras(asset.extras))
    return out


def _resource_to_obj(res: Resource) -> dict:
    out: dict[str, Any] = {"id": res.id, "name": res.name}
    if res.local_offset is not None:
        out["offset"] = _vec_to_obj(res.local_offset)
    out["data"] = [_data_to_obj(n) for n in res.data]
    out.update(_sorted_extras(res.extras))
    return out


def _data_to_obj(node: DataNode) -> dict:
    out: dict[str, Any] = {
        "id": node.id,
        "name": node.name,
        "unit": node.unit.value,
        "semantic": node.semantic.value,
    }
    out.update(_sorted_extras(node.extras))
    return out


def _vec_to_obj(v: Vec3) -> dict:
    return {"x": v.x, "y": v.y, "z": v.z}


def _sorted_extras(extras: dict) -> dict:
    return {k: extras[k] for k in sorted(extras)}
