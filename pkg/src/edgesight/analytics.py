"""Desk-scale analytics over the series store.

Pure functions over store snapshots: area aggregates for the at-a-glance
overview, nearest-timestamp pairing of actual readings with prediction
streams, and error summaries over the paired points.
"""

from __future__ import annotations

from bisect import bisect_left
from dataclasses import dataclass
from enum import Enum

from .ontology import DataNode, OntologyPath, Semantic, Unit, iter_data_paths, resolve
from .store import SeriesQuery, TelemetryStore
from .telemetry import TelemetrySample

DEFAULT_PAIRING_TOLERANCE_MS = 1_000


class AnalyticsError(Exception):
    pass


class AggregateFn(str, Enum):
    SUM = "sum"
    MEAN = "mean"


@dataclass(frozen=True)
class AggregateResult:
    scope: OntologyPath
    semantic: Semantic
    t0: int
    t1: int
    fn: AggregateFn
    value: float | None  # None when no path contributed a sample in the window
    contributing: tuple[str, ...]
    excluded: tuple[str, ...]

    def to_obj(self) -> dict:
        return {
            "scope": str(self.scope),
            "semantic": self.semantic.value,
            "t0": self.t0,
            "t1": self.t1,
            "fn": self.fn.value,
            "value": self.value,
            "contributing": list(self.contributing),
            "excluded": list(self.excluded),
        }


@dataclass(frozen=True)
class PairedPoint:
    timestamp: int
    actual: float
    predictions: dict[str, float | None]  # model id -> value, None when absent

    def to_obj(self) -> dict:
        return {"ts": self.timestamp, "actual": self.actual, "predictions": dict(self.predictions)}


@dataclass(frozen=True)
class PredictionError:
    model: str
    mae: float
    mape: float | None  # percent; None when every paired actual was zero
    n: int

    def to_obj(self) -> dict:
        return {"model": self.model, "mae": self.mae, "mape": self.mape, "n": self.n}


def area_aggregate(
    store: TelemetryStore,
    scope: OntologyPath,
    semantic: Semantic,
    t0: int,
    t1: int,
    fn: AggregateFn,
    unit: Unit | None = None,
) -> AggregateResult:
    """Aggregate the latest-in-window sample of every matching node under scope.

    Matching nodes share the requested semantic (and unit, when given, since
    summing across units is meaningless). Paths with no sample inside the
    window are excluded from the value and reported separately.
    """
    resolve(store.descriptor, scope)  # raises PathNotFoundError for a bad scope
    contributing: list[str] = []
    excluded: list[str] = []
    values: list[float] = []
    for path, node in iter_data_paths(store.descriptor):
        if not scope.is_prefix_of(path):
            continue
        if node.semantic is not semantic or (unit is not None and node.unit is not unit):
            continue
        sample = store.latest_in_window(path, t0, t1)
        if sample is None:
            excluded.append(str(path))
        else:
            contributing.append(str(path))
            values.append(sample.value)

    if not values:
        value = None
    elif fn is AggregateFn.SUM:
        value = sum(values)
    else:
        value = sum(values) / len(values)
    return AggregateResult(
        scope=scope,
        semantic=semantic,
        t0=t0,
        t1=t1,
        fn=fn,
        value=value,
        contributing=tuple(contributing),
        excluded=tuple(excluded),
    )


def pair_predictions(
    store: TelemetryStore,
    actual_path: OntologyPath,
    prediction_paths: list[OntologyPath],
    t0: int,
    t1: int,
    tolerance: int = DEFAULT_PAIRING_TOLERANCE_MS,
) -> list[PairedPoint]:
    """Attach to each actual sample the nearest prediction within +/- tolerance.

    One entry per actual sample in [t0, t1], ascending. A model with no sample
    inside the tolerance contributes None for that point. An exact distance
    tie is broken toward the earlier prediction sample.
    """
    if tolerance <= 0:
        raise AnalyticsError(f"tolerance must be positive, got {tolerance}")
    for p in [actual_path, *prediction_paths]:
        node = resolve(store.descriptor, p)
        if not isinstance(node, DataNode):
            raise AnalyticsError(f"{p} is not a Data node")

    model_ids = _model_ids(prediction_paths)
    actuals = store.range(SeriesQuery(actual_path, t0, t1))
    # Nearest neighbors may sit just outside the query window.
    series = {
        model: store.range(SeriesQuery(path, t0 - tolerance, t1 + tolerance))
        for model, path in zip(model_ids, prediction_paths)
    }

    out = []
    for actual in actuals:
        predictions: dict[str, float | None] = {}
        for model in model_ids:
            match = _nearest(series[model], actual.timestamp, tolerance)
            predictions[model] = match.value if match is not None else None
        out.append(PairedPoint(timestamp=actual.timestamp, actual=actual.value, predictions=predictions))
    return out


def prediction_error(paired: list[PairedPoint], model: str) -> PredictionError:
    """MAE and MAPE of one model over the points where it produced a value.

    MAPE only counts points with a nonzero actual; it is None if there are
    none. Raises AnalyticsError when the model matched no points at all.
    """
    pts = [
        (p.actual, p.predictions[model])
        for p in paired
        if p.predictions.get(model) is not None
    ]
    if not pts:
        raise AnalyticsError(f"no usable points for model {model!r}")
    mae = sum(abs(a - pred) for a, pred in pts) / len(pts)
    nonzero = [(a, pred) for a, pred in pts if a != 0]
    mape = (
        100.0 * sum(abs(a - pred) / abs(a) for a, pred in nonzero) / len(nonzero)
        if nonzero
        else None
    )
    return PredictionError(model=model, mae=mae, mape=mape, n=len(pts))


def _model_ids(prediction_paths: list[OntologyPath]) -> list[str]:
    """Data-node ids when unambiguous, full paths otherwise."""
    short = [p.data_id or str(p) for p in prediction_paths]
    if len(set(short)) == len(short):
        return short
    return [str(p) for p in prediction_paths]


def _nearest(series: list[TelemetrySample], ts: int, tolerance: int) -> TelemetrySample | None:
    if not series:
        return None
    i = bisect_left(series, ts, key=lambda s: s.timestamp)
    best: TelemetrySample | None = None
    best_distance = tolerance + 1
    # Earlier candidate first so an exact tie keeps it.
    for j in (i - 1, i):
        if 0 <= j < len(series):
            distance = abs(series[j].timestamp - ts)
            if distance <= tolerance and distance < best_distance:
                best = series[j]
                best_distance = distance
    return best
