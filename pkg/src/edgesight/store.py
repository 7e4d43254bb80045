"""Bounded in-memory series store for the edge stream.

Each Data node keeps a ring of the most recent samples ordered by producer
timestamp. Late arrivals are inserted in order, a re-delivered timestamp
replaces the earlier value (last writer wins), and once a ring is full the
smallest-timestamp sample is dropped. Deep history lives upstream; this store
only has to answer "what is happening now" and short-window chart queries.
"""

from __future__ import annotations

import threading
from bisect import bisect_left, bisect_right
from dataclasses import dataclass

from .ontology import OntologyPath, SiteDescriptor, iter_data_paths
from .telemetry import Quality, TelemetrySample, UnknownPathError

DEFAULT_CAPACITY = 10_000


@dataclass(frozen=True)
class SeriesQuery:
    path: OntologyPath
    t0: int
    t1: int
    bucket: int | None = None

    def __post_init__(self) -> None:
        if self.t0 > self.t1:
            raise ValueError(f"t0 {self.t0} must not exceed t1 {self.t1}")
        if self.bucket is not None and self.bucket <= 0:
            raise ValueError(f"bucket must be positive, got {self.bucket}")


class TelemetryStore:
    """Latest-value plus bounded-history store for one site descriptor.

    A short store-wide lock serializes each operation, so one ingest writer
    and any number of readers interleave without unbounded blocking.
    """

    def __init__(self, descriptor: SiteDescriptor, capacity: int = DEFAULT_CAPACITY):
        if capacity <= 0:
            raise ValueError(f"capacity must be positive, got {capacity}")
        self.descriptor = descriptor
        self.capacity = capacity
        self._lock = threading.Lock()
        self._series: dict[str, list[TelemetrySample]] = {
            str(path): [] for path, _ in iter_data_paths(descriptor)
        }

    def paths(self) -> list[str]:
        return list(self._series)

    def append(self, sample: TelemetrySample) -> None:
        series = self._series_for(sample.path)
        with self._lock:
            ts = sample.timestamp
            if series and series[-1].timestamp < ts:
                series.append(sample)
            else:
                i = bisect_left(series, ts, key=lambda s: s.timestamp)
                if i < len(series) and series[i].timestamp == ts:
                    series[i] = sample
                else:
                    series.insert(i, sample)
            while len(series) > self.capacity:
                series.pop(0)

    def latest(self, path: OntologyPath) -> TelemetrySample | None:
        series = self._series_for(path)
        with self._lock:
            return series[-1] if series else None

    def range(self, query: SeriesQuery) -> list[TelemetrySample]:
        """Samples with t0 <= ts <= t1, ascending.

        With ``bucket`` set, returns one synthetic sample per occupied bucket:
        buckets are epoch-aligned (start = ts // bucket * bucket), the value is
        the arithmetic mean of the contained samples, and the quality is good
        only if every contributor was good.
        """
        series = self._series_for(query.path)
        with self._lock:
            lo = bisect_left(series, query.t0, key=lambda s: s.timestamp)
            hi = bisect_right(series, query.t1, key=lambda s: s.timestamp)
            window = series[lo:hi]
        if query.bucket is None:
            return window
        return _bucketed(query.path, window, query.bucket)

    def latest_in_window(self, path: OntologyPath, t0: int, t1: int) -> TelemetrySample | None:
        """Greatest-timestamp sample inside [t0, t1], or None."""
        series = self._series_for(path)
        with self._lock:
            hi = bisect_right(series, t1, key=lambda s: s.timestamp)
            if hi == 0:
                return None
            candidate = series[hi - 1]
        return candidate if candidate.timestamp >= t0 else None

    def _series_for(self, path: OntologyPath) -> list[TelemetrySample]:
        try:
            return self._series[str(path)]
        except KeyError:
            raise UnknownPathError(path) from None


def _bucketed(path: OntologyPath, window: list[TelemetrySample], bucket: int) -> list[TelemetrySample]:
    out: list[TelemetrySample] = []
    i = 0
    while i < len(window):
        start = window[i].timestamp // bucket * bucket
        total = 0.0
        count = 0
        quality = Quality.GOOD
        while i < len(window) and window[i].timestamp // bucket * bucket == start:
            total += window[i].value
            count += 1
            if window[i].quality is not Quality.GOOD:
                quality = Quality.SUSPECT
            i += 1
        out.append(TelemetrySample(
            path=path,
            timestamp=start,
            value=total / count,
            unit=window[0].unit,
            quality=quality,
        ))
    return out
