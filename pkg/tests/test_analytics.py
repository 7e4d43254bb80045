import random

import pytest

from conftest import make_sample
from edgesight.analytics import (
    AggregateFn,
    AnalyticsError,
    PairedPoint,
    area_aggregate,
    pair_predictions,
    prediction_error,
)
from edgesight.ontology import OntologyPath, PathNotFoundError, Semantic, Unit

ACTUAL = OntologyPath.parse("demo/cooling/tunnel-1/power/momentary")
MODEL_A = OntologyPath.parse("demo/cooling/tunnel-1/power/model-a")
MODEL_B = OntologyPath.parse("demo/cooling/tunnel-1/power/model-b")
COOLING = OntologyPath.parse("demo/cooling")


def brute_force_pairs(actuals, prediction_series, tolerance):
    """Exhaustive O(n*m) nearest-neighbor oracle with earlier-on-tie rule."""
    out = []
    for a in actuals:
        predictions = {}
        for model, series in prediction_series.items():
            best = None
            for s in series:
                d = abs(s.timestamp - a.timestamp)
                if d > tolerance:
                    continue
                if best is None or d < abs(best.timestamp - a.timestamp) or (
                    d == abs(best.timestamp - a.timestamp) and s.timestamp < best.timestamp
                ):
                    best = s
            predictions[model] = best.value if best else None
        out.append(PairedPoint(a.timestamp, a.value, predictions))
    return out


class TestAreaAggregate:
    def fill_tunnel_powers(self, store, values, ts=1000):
        for i, v in enumerate(values, start=1):
            path = OntologyPath.parse(f"demo/cooling/tunnel-{i}/power/momentary")
            store.append(make_sample(path, ts, v, Unit.KILOWATT))

    def test_sum_of_three_tunnels(self, demo_store):
        self.fill_tunnel_powers(demo_store, [1.0, 2.0, 3.0])
        result = area_aggregate(
            demo_store, COOLING, Semantic.MOMENTARY, 0, 2000, AggregateFn.SUM, unit=Unit.KILOWATT
        )
        assert result.value == 6.0
        assert len(result.contributing) == 3

    def test_empty_window_is_undefined(self, demo_store):
        self.fill_tunnel_powers(demo_store, [1.0, 2.0, 3.0], ts=5000)
        result = area_aggregate(
            demo_store, COOLING, Semantic.MOMENTARY, 0, 2000, AggregateFn.SUM, unit=Unit.KILOWATT
        )
        assert result.value is None
        assert result.contributing == ()
        assert len(result.excluded) == 3

    def test_mean_matches_hand_summed_oracle(self, demo_store):
        # Brute force: recompute from the store contents directly.
        rng = random.Random(9)
        latest = {}
        for i in (1, 2, 3):
            path = OntologyPath.parse(f"demo/cooling/tunnel-{i}/power/momentary")
            for ts in sorted(rng.sample(range(100, 5000), 5)):
                v = rng.uniform(3, 8)
                demo_store.append(make_sample(path, ts, v, Unit.KILOWATT))
                if ts <= 4000:
                    latest[str(path)] = v
        result = area_aggregate(
            demo_store, COOLING, Semantic.MOMENTARY, 0, 4000, AggregateFn.MEAN, unit=Unit.KILOWATT
        )
        expected = sum(latest.values()) / len(latest)
        assert result.value == pytest.approx(expected, rel=1e-12)
        assert set(result.contributing) == set(latest)

    def test_sum_recomputable_from_contributors(self, demo_store):
        self.fill_tunnel_powers(demo_store, [1.5, 2.5, 3.5])
        result = area_aggregate(
            demo_store, COOLING, Semantic.MOMENTARY, 0, 2000, AggregateFn.SUM, unit=Unit.KILOWATT
        )
        recomputed = sum(
            demo_store.latest_in_window(OntologyPath.parse(p), 0, 2000).value
            for p in result.contributing
        )
        assert result.value == recomputed

    def test_semantic_filter_excludes_predictions(self, demo_store):
        demo_store.append(make_sample(ACTUAL, 1000, 5.0, Unit.KILOWATT))
        demo_store.append(make_sample(MODEL_A, 1000, 9.9, Unit.KILOWATT))
        result = area_aggregate(
            demo_store, COOLING, Semantic.MOMENTARY, 0, 2000, AggregateFn.SUM, unit=Unit.KILOWATT
        )
        assert result.value == 5.0

    def test_unresolvable_scope(self, demo_store):
        with pytest.raises(PathNotFoundError):
            area_aggregate(
                demo_store, OntologyPath.parse("demo/nowhere"),
                Semantic.MOMENTARY, 0, 1, AggregateFn.SUM,
            )


class TestPairPredictions:
    def test_within_tolerance(self, demo_store):
        demo_store.append(make_sample(ACTUAL, 1000, 10.0, Unit.KILOWATT))
        demo_store.append(make_sample(MODEL_A, 990, 10.3, Unit.KILOWATT))
        (point,) = pair_predictions(demo_store, ACTUAL, [MODEL_A], 0, 2000, tolerance=50)
        assert point.predictions == {"model-a": 10.3}

    def test_exact_tie_prefers_earlier(self, demo_store):
        demo_store.append(make_sample(ACTUAL, 1000, 10.0, Unit.KILOWATT))
        demo_store.append(make_sample(MODEL_A, 950, 1.0, Unit.KILOWATT))
        demo_store.append(make_sample(MODEL_A, 1050, 2.0, Unit.KILOWATT))
        (point,) = pair_predictions(demo_store, ACTUAL, [MODEL_A], 0, 2000, tolerance=100)
        assert point.predictions == {"model-a": 1.0}

    def test_absent_model_marked(self, demo_store):
        demo_store.append(make_sample(ACTUAL, 1000, 10.0, Unit.KILOWATT))
        demo_store.append(make_sample(MODEL_A, 3000, 9.0, Unit.KILOWATT))
        (point,) = pair_predictions(demo_store, ACTUAL, [MODEL_A], 0, 2000, tolerance=100)
        assert point.predictions == {"model-a": None}

    def test_neighbor_just_outside_window_still_pairs(self, demo_store):
        demo_store.append(make_sample(ACTUAL, 1000, 10.0, Unit.KILOWATT))
        demo_store.append(make_sample(MODEL_A, 960, 9.0, Unit.KILOWATT))
        (point,) = pair_predictions(demo_store, ACTUAL, [MODEL_A], 1000, 2000, tolerance=50)
        assert point.predictions == {"model-a": 9.0}

    def test_random_streams_match_brute_force(self, demo_store):
        rng = random.Random(23)
        actual_ts = sorted(rng.sample(range(0, 20_000), 40))
        for ts in actual_ts:
            demo_store.append(make_sample(ACTUAL, ts, rng.uniform(3, 8), Unit.KILOWATT))
        for path in (MODEL_A, MODEL_B):
            for ts in sorted(rng.sample(range(0, 20_000), 30)):
                demo_store.append(make_sample(path, ts, rng.uniform(3, 8), Unit.KILOWATT))

        from edgesight.store import SeriesQuery
        t0, t1, tol = 2_000, 18_000, 700
        got = pair_predictions(demo_store, ACTUAL, [MODEL_A, MODEL_B], t0, t1, tolerance=tol)
        expected = brute_force_pairs(
            demo_store.range(SeriesQuery(ACTUAL, t0, t1)),
            {
                "model-a": demo_store.range(SeriesQuery(MODEL_A, 0, 30_000)),
                "model-b": demo_store.range(SeriesQuery(MODEL_B, 0, 30_000)),
            },
            tol,
        )
        assert got == expected

    def test_bad_tolerance(self, demo_store):
        with pytest.raises(AnalyticsError):
            pair_predictions(demo_store, ACTUAL, [MODEL_A], 0, 1, tolerance=0)

    def test_unresolvable_path(self, demo_store):
        with pytest.raises(PathNotFoundError):
            pair_predictions(
                demo_store, OntologyPath.parse("demo/cooling/ghost/power/momentary"),
                [MODEL_A], 0, 1,
            )


class TestPredictionError:
    def test_identity_predictions(self):
        paired = [PairedPoint(t, 5.0, {"m": 5.0}) for t in (1, 2, 3)]
        err = prediction_error(paired, "m")
        assert err.mae == 0.0
        assert err.mape == 0.0
        assert err.n == 3

    def test_hand_arithmetic(self):
        paired = [
            PairedPoint(1, 10.0, {"m": 12.0}),
            PairedPoint(2, 20.0, {"m": 18.0}),
        ]
        err = prediction_error(paired, "m")
        assert err.mae == pytest.approx(2.0)
        assert err.mape == pytest.approx(15.0)
        assert err.n == 2

    def test_absent_points_skipped(self):
        paired = [
            PairedPoint(1, 10.0, {"m": 12.0}),
            PairedPoint(2, 20.0, {"m": None}),
        ]
        err = prediction_error(paired, "m")
        assert err.n == 1
        assert err.mae == pytest.approx(2.0)

    def test_zero_actuals_have_no_mape(self):
        paired = [PairedPoint(1, 0.0, {"m": 1.0})]
        err = prediction_error(paired, "m")
        assert err.mae == 1.0
        assert err.mape is None

    def test_no_usable_points(self):
        paired = [PairedPoint(1, 10.0, {"m": None})]
        with pytest.raises(AnalyticsError):
            prediction_error(paired, "m")

    def test_spreadsheet_style_recomputation(self):
        # Independent oracle: running-total arithmetic, no shared helpers.
        rng = random.Random(31)
        paired = []
        for t in range(50):
            actual = rng.uniform(1, 9)
            paired.append(PairedPoint(t, actual, {"m": actual + rng.uniform(-1, 1)}))
        err = prediction_error(paired, "m")
        abs_total = 0.0
        pct_total = 0.0
        for p in paired:
            abs_total += abs(p.actual - p.predictions["m"])
            pct_total += abs(p.actual - p.predictions["m"]) / abs(p.actual)
        assert err.mae == pytest.approx(abs_total / 50, rel=1e-12)
        assert err.mape == pytest.approx(100 * pct_total / 50, rel=1e-12)
