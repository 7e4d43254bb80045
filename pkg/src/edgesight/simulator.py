"""Demo pilot site and its deterministic telemetry generator.

The demo site is a 90 x 40 x 12 m hall: a cooling line with three tunnels
(four instrumented compartments each), a preparation line with four liquid
tanks and two mixers, plus a power-distribution panel with four sub-meters and
an ambient sensor. Each tunnel's power reading is shadowed by three
prediction streams derived from the actual value: model-a applies a +3% bias,
model-b adds seeded gaussian noise (sigma 0.2 kW), model-c lags by one tick.

Every emitted value is a pure function of (scenario, signal specs): per-path
random generators are seeded from the scenario seed and the path, so streams
do not shift when paths are added or removed.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Iterator

from .geometry import Box3, Rect2, Vec3
from .ontology import (
    Asset,
    AssetKind,
    DataNode,
    Department,
    OntologyPath,
    Resource,
    Semantic,
    SiteDescriptor,
    Unit,
    iter_data_paths,
)
from .telemetry import Quality, TelemetrySample, UnknownPathError

DEFAULT_EPOCH_MS = 1_700_000_000_000
DEFAULT_HOLD_TICKS = 10

MODEL_BIAS = "model-a"  # +3% multiplicative bias
MODEL_NOISE = "model-b"  # additive gaussian noise, sigma in kW
MODEL_LAG = "model-c"  # previous tick's actual
MODEL_NOISE_SIGMA = 0.2
MODEL_BIAS_FACTOR = 1.03


class ScenarioError(Exception):
    pass


class GeneratorKind(str, Enum):
    RANDOM_WALK = "random_walk"
    PERIODIC = "periodic"
    CONSTANT = "constant"


@dataclass(frozen=True)
class SignalSpec:
    """Per-node generator parameters, in the node's own unit."""

    kind: GeneratorKind
    mean: float  # walk start / periodic base / constant value
    sigma: float = 0.0
    amplitude: float = 0.0
    period_ms: int = 600_000
    lo: float | None = None
    hi: float | None = None

    def __post_init__(self) -> None:
        if self.sigma < 0:
            raise ScenarioError(f"sigma must be >= 0, got {self.sigma}")
        if self.period_ms <= 0:
            raise ScenarioError(f"period_ms must be positive, got {self.period_ms}")
        if self.lo is not None and self.hi is not None and self.lo > self.hi:
            raise ScenarioError(f"clamp bounds out of order: [{self.lo}, {self.hi}]")

    def clamp(self, value: float) -> float:
        if self.lo is not None:
            value = max(value, self.lo)
        if self.hi is not None:
            value = min(value, self.hi)
        return value


@dataclass(frozen=True)
class AnomalyEvent:
    at_ms: int  # offset from scenario start
    path: OntologyPath
    value: float
    mode: str = "force"  # "force" replaces the value, "offset" shifts it
    hold_ticks: int = DEFAULT_HOLD_TICKS

    def __post_init__(self) -> None:
        if self.mode not in ("force", "offset"):
            raise ScenarioError(f"anomaly mode must be force or offset, got {self.mode!r}")
        if self.hold_ticks <= 0:
            raise ScenarioError(f"hold_ticks must be positive, got {self.hold_ticks}")


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int
    duration_s: float
    tick_ms: int = 1000
    start_ms: int = DEFAULT_EPOCH_MS
    events: tuple[AnomalyEvent, ...] = ()
    signals: dict = field(default_factory=dict)  # path string -> SignalSpec overrides

    def __post_init__(self) -> None:
        if self.tick_ms <= 0:
            raise ScenarioError(f"tick_ms must be positive, got {self.tick_ms}")
        if self.duration_s <= 0:
            raise ScenarioError(f"duration_s must be positive, got {self.duration_s}")
        for event in self.events:
            if not 0 <= event.at_ms <= self.duration_s * 1000:
                raise ScenarioError(
                    f"event at {event.at_ms} ms lies outside the {self.duration_s} s scenario"
                )

    @property
    def tick_count(self) -> int:
        return int(self.duration_s * 1000) // self.tick_ms


# --- demo site ----------------------------------------------------------------

def build_demo_site() -> SiteDescriptor:
    """The built-in demo descriptor; validates clean by construction."""
    prediction_nodes = tuple(
        DataNode(model, f"Predicted power ({model})", Unit.KILOWATT, Semantic.PREDICTED)
        for model in (MODEL_BIAS, MODEL_NOISE, MODEL_LAG)
    )

    def tunnel(i: int, x: float) -> Asset:
        compartments = tuple(
            Resource(
                id=f"comp-{j}",
                name=f"Compartment {j}",
                local_offset=Vec3(0.0, -6.0 + 4.0 * (j - 1), 1.0),
                data=(DataNode("temp", "Compartment temperature", Unit.CELSIUS, Semantic.MOMENTARY),),
            )
            for j in range(1, 5)
        )
        return Asset(
            id=f"tunnel-{i}",
            name=f"Cooling tunnel {i}",
            kind=AssetKind.COOLING_TUNNEL,
            position=Vec3(x, 20.0, 0.0),
            resources=(
                Resource(
                    id="power",
                    name="Energy consumption",
                    data=(DataNode("momentary", "Momentary power", Unit.KILOWATT, Semantic.MOMENTARY),)
                    + prediction_nodes,
                ),
            )
            + compartments,
        )

    def tank(i: int, y: float) -> Asset:
        return Asset(
            id=f"tank-{i}",
            name=f"Liquid tank {i}",
            kind=AssetKind.LIQUID_TANK,
            position=Vec3(60.0, y, 0.0),
            resources=(
                Resource("temp", "Temperature", data=(
                    DataNode("momentary", "Tank temperature", Unit.CELSIUS, Semantic.MOMENTARY),
                )),
                Resource("fill", "Fullness", data=(
                    DataNode("momentary", "Fill level", Unit.FRACTION, Semantic.MOMENTARY),
                )),
            ),
        )

    def mixer(i: int, y: float) -> Asset:
        return Asset(
            id=f"mixer-{i}",
            name=f"Mixing machine {i}",
            kind=AssetKind.MIXING_MACHINE,
            position=Vec3(75.0, y, 0.0),
            resources=(
                Resource("power", "Energy consumption", data=(
                    DataNode("momentary", "Momentary power", Unit.KILOWATT, Semantic.MOMENTARY),
                )),
            ),
        )

    meters = tuple(
        Resource(
            id=f"meter-{i}",
            name=f"Meter {i}",
            local_offset=Vec3(0.5, 0.0, 0.4 * i),
            data=(
                DataNode("momentary", "Momentary power", Unit.KILOWATT, Semantic.MOMENTARY),
                DataNode("status", "Meter status", Unit.UNITLESS, Semantic.STATUS),
            ),
        )
        for i in range(1, 5)
    )
    panel = Asset(
        id="panel-1",
        name="Power distribution panel",
        kind=AssetKind.POWER_PANEL,
        position=Vec3(5.0, 39.0, 1.5),
        resources=meters,
    )
    env = Asset(
        id="env-1",
        name="Ambient sensor",
        kind=AssetKind.ENV_SENSOR,
        position=Vec3(45.0, 39.0, 6.0),
        resources=(
            Resource("ambient", "Ambient conditions", data=(
                DataNode("avg-temp", "Average temperature", Unit.CELSIUS, Semantic.AVERAGE),
                DataNode("avg-rh", "Average relative humidity", Unit.PERCENT_RH, Semantic.AVERAGE),
            )),
        ),
    )

    return SiteDescriptor(
        id="demo",
        name="Demo pilot site",
        bounds=Box3(90.0, 40.0, 12.0),
        departments=(
            Department(
                id="cooling",
                name="Cooling line",
                footprint=Rect2(0.0, 0.0, 50.0, 40.0),
                assets=(tunnel(1, 10.0), tunnel(2, 25.0), tunnel(3, 40.0)),
            ),
            Department(
                id="prep",
                name="Preparation line",
                footprint=Rect2(50.0, 0.0, 40.0, 40.0),
                assets=(tank(1, 8.0), tank(2, 16.0), tank(3, 24.0), tank(4, 32.0),
                        mixer(1, 12.0), mixer(2, 28.0)),
            ),
            Department(
                id="utility",
                name="Site utilities",
                footprint=Rect2(0.0, 38.0, 90.0, 2.0),
                assets=(panel, env),
            ),
        ),
    )


def demo_signal_specs(desc: SiteDescriptor) -> dict[str, SignalSpec]:
    """Nominal operating envelopes for every demo data node.

    Tank temperature 38-45 C, compartment temperature 2-6 C, tunnel power
    3-8 kW, fullness 0-1, ambient 18-28 C and 30-60 %RH. Prediction nodes
    carry no spec; they derive from their momentary sibling.
    """
    walk = lambda mean, sigma, lo, hi: SignalSpec(GeneratorKind.RANDOM_WALK, mean, sigma=sigma, lo=lo, hi=hi)
    specs: dict[str, SignalSpec] = {}
    for path, node in iter_data_paths(desc):
        if node.semantic is Semantic.PREDICTED:
            continue
        key = str(path)
        if node.semantic is Semantic.STATUS:
            specs[key] = SignalSpec(GeneratorKind.CONSTANT, 0.0)
        elif node.unit is Unit.PERCENT_RH:
            specs[key] = SignalSpec(
                GeneratorKind.PERIODIC, 45.0, amplitude=10.0, period_ms=900_000, lo=30.0, hi=60.0
            )
        elif node.semantic is Semantic.AVERAGE and node.unit is Unit.CELSIUS:
            specs[key] = SignalSpec(
                GeneratorKind.PERIODIC, 23.0, amplitude=3.0, period_ms=600_000, lo=18.0, hi=28.0
            )
        elif node.unit is Unit.FRACTION:
            specs[key] = walk(0.6, 0.01, 0.0, 1.0)
        elif node.unit is Unit.CELSIUS and path.asset_id and path.asset_id.startswith("tank"):
            specs[key] = walk(41.5, 0.15, 38.0, 45.0)
        elif node.unit is Unit.CELSIUS:
            specs[key] = walk(4.0, 0.1, 2.0, 6.0)
        elif node.unit is Unit.KILOWATT and path.asset_id and path.asset_id.startswith("tunnel"):
            specs[key] = walk(5.5, 0.15, 3.0, 8.0)
        elif node.unit is Unit.KILOWATT and path.asset_id and path.asset_id.startswith("mixer"):
            specs[key] = walk(2.5, 0.1, 1.0, 4.0)
        elif node.unit is Unit.KILOWATT:
            specs[key] = walk(1.3, 0.05, 0.5, 2.5)
        else:
            specs[key] = SignalSpec(GeneratorKind.CONSTANT, 0.0)
    return specs


# --- simulation ---------------------------------------------------------------

@dataclass
class _Channel:
    path: OntologyPath
    node: DataNode
    spec: SignalSpec | None
    rng: random.Random
    value: float = 0.0
    predicts: OntologyPath | None = None  # momentary sibling for prediction nodes


@dataclass
class _Override:
    mode: str
    value: float
    until_tick: int  # exclusive


class Simulator:
    """Tick-driven sample generator for one descriptor."""

    def __init__(
        self,
        descriptor: SiteDescriptor,
        scenario: ScenarioConfig,
        signals: dict[str, SignalSpec] | None = None,
    ):
        self.descriptor = descriptor
        self.scenario = scenario
        base = dict(signals) if signals is not None else demo_signal_specs(descriptor)
        base.update(scenario.signals)

        self._channels: list[_Channel] = []
        self._by_path: dict[str, _Channel] = {}
        momentary_by_resource: dict[str, OntologyPath] = {}
        for path, node in iter_data_paths(descriptor):
            if node.semantic is Semantic.MOMENTARY:
                momentary_by_resource[str(path.parent())] = path
        for path, node in iter_data_paths(descriptor):
            key = str(path)
            spec = base.get(key)
            predicts = None
            if node.semantic is Semantic.PREDICTED and spec is None:
                predicts = momentary_by_resource.get(str(path.parent()))
                if predicts is None:
                    continue  # nothing to derive from and no spec: inactive
            elif spec is None:
                continue
            channel = _Channel(
                path=path,
                node=node,
                spec=spec,
                rng=random.Random(f"{scenario.seed}:{key}"),
                value=spec.clamp(spec.mean) if spec else 0.0,
                predicts=predicts,
            )
            self._channels.append(channel)
            self._by_path[key] = channel

        self._overrides: dict[str, _Override] = {}
        self._pending = sorted(scenario.events, key=lambda e: e.at_ms)
        self._pending_idx = 0
        self._last_actuals: dict[str, float] = {}

    @property
    def active_paths(self) -> list[str]:
        return [str(c.path) for c in self._channels]

    def inject_anomaly(self, event: AnomalyEvent) -> None:
        """Queue an extra event; takes effect at the first tick at or past at_ms."""
        if str(event.path) not in self._by_path:
            raise UnknownPathError(event.path)
        self._pending.append(event)
        self._pending.sort(key=lambda e: e.at_ms)

    def step(self, tick: int) -> list[TelemetrySample]:
        """Samples for one tick; call with tick = 0, 1, 2, ... in order."""
        offset_ms = tick * self.scenario.tick_ms
        ts = self.scenario.start_ms + offset_ms
        self._activate_events(tick, offset_ms)

        actuals: dict[str, float] = {}
        out: list[TelemetrySample] = []
        for channel in self._channels:
            if channel.predicts is not None:
                continue
            value = self._generate(channel, offset_ms)
            value = self._apply_override(str(channel.path), tick, value)
            actuals[str(channel.path)] = value
            out.append(self._sample(channel, ts, value))

        for channel in self._channels:
            if channel.predicts is None:
                continue
            actual = actuals[str(channel.predicts)]
            value = self._predict(channel, actual)
            value = self._apply_override(str(channel.path), tick, value)
            out.append(self._sample(channel, ts, value))

        self._last_actuals = actuals
        return out

    def run(self) -> Iterator[tuple[int, list[TelemetrySample]]]:
        for tick in range(self.scenario.tick_count):
            yield tick, self.step(tick)

    def _generate(self, channel: _Channel, offset_ms: int) -> float:
        spec = channel.spec
        assert spec is not None
        if spec.kind is GeneratorKind.CONSTANT:
            return spec.clamp(spec.mean)
        if spec.kind is GeneratorKind.PERIODIC:
            phase = math.tau * offset_ms / spec.period_ms
            return spec.clamp(spec.mean + spec.amplitude * math.sin(phase))
        channel.value = spec.clamp(channel.value + channel.rng.gauss(0.0, spec.sigma))
        return channel.value

    def _predict(self, channel: _Channel, actual: float) -> float:
        model = channel.path.data_id
        if model == MODEL_BIAS:
            return actual * MODEL_BIAS_FACTOR
        if model == MODEL_NOISE:
            return actual + channel.rng.gauss(0.0, MODEL_NOISE_SIGMA)
        if model == MODEL_LAG:
            # First tick has no history; repeat the actual so every active
            # node still emits exactly one sample per tick.
            return self._last_actuals.get(str(channel.predicts), actual)
        return actual

    def _apply_override(self, key: str, tick: int, value: float) -> float:
        override = self._overrides.get(key)
        if override is None or tick >= override.until_tick:
            return value
        if override.mode == "force":
            return override.value
        return value + override.value

    def _activate_events(self, tick: int, offset_ms: int) -> None:
        while self._pending_idx < len(self._pending):
            event = self._pending[self._pending_idx]
            if event.at_ms > offset_ms:
                break
            self._overrides[str(event.path)] = _Override(
                mode=event.mode,
                value=event.value,
                until_tick=tick + event.hold_ticks,
            )
            self._pending_idx += 1

    def _sample(self, channel: _Channel, ts: int, value: float) -> TelemetrySample:
        return TelemetrySample(
            path=channel.path,
            timestamp=ts,
            value=value,
            unit=channel.node.unit,
            quality=Quality.GOOD,
        )


def publish_scenario(
    sim: Simulator,
    publish: Callable[[str, TelemetrySample], None],
    pace: bool = False,
    sleep: Callable[[float], None] | None = None,
) -> int:
    """Drive the simulator to completion, handing each sample to ``publish``.

    With ``pace`` set, sleeps one tick between steps (real-time playback).
    Returns the number of samples published.
    """
    import time as _time

    from .telemetry import topic_for

    do_sleep = sleep if sleep is not None else _time.sleep
    count = 0
    for tick, samples in sim.run():
        for sample in samples:
            publish(topic_for(sim.descriptor, sample.path), sample)
            count += 1
        if pace and tick + 1 < sim.scenario.tick_count:
            do_sleep(sim.scenario.tick_ms / 1000.0)
    return count


# --- scenario files -------------------------------------------------------------

def load_scenario(text: str) -> ScenarioConfig:
    """Parse a scenario JSON document."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"scenario file is not valid JSON: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ScenarioError("scenario file must hold a JSON object")
    try:
        events = tuple(
            AnomalyEvent(
                at_ms=int(obj["at_ms"]),
                path=OntologyPath.parse(obj["path"]),
                value=float(obj["value"]),
                mode=obj.get("mode", "force"),
                hold_ticks=int(obj.get("hold_ticks", DEFAULT_HOLD_TICKS)),
            )
            for obj in raw.get("events", [])
        )
        signals = {
            path: signal_spec_from_obj(obj)
            for path, obj in raw.get("signals", {}).items()
        }
        return ScenarioConfig(
            seed=int(raw["seed"]),
            duration_s=float(raw["duration_s"]),
            tick_ms=int(raw.get("tick_ms", 1000)),
            start_ms=int(raw.get("start_ms", DEFAULT_EPOCH_MS)),
            events=events,
            signals=signals,
        )
    except KeyError as exc:
        raise ScenarioError(f"scenario missing field {exc.args[0]!r}") from exc
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"bad scenario value: {exc}") from exc


def signal_spec_from_obj(obj: dict) -> SignalSpec:
    return SignalSpec(
        kind=GeneratorKind(obj["kind"]),
        mean=float(obj["mean"]),
        sigma=float(obj.get("sigma", 0.0)),
        amplitude=float(obj.get("amplitude", 0.0)),
        period_ms=int(obj.get("period_ms", 600_000)),
        lo=float(obj["lo"]) if "lo" in obj else None,
        hi=float(obj["hi"]) if "hi" in obj else None,
    )


def with_start_time(scenario: ScenarioConfig, start_ms: int) -> ScenarioConfig:
    return replace(scenario, start_ms=start_ms)
