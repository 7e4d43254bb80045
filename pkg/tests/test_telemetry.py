import json

import pytest

from edgesight.ontology import OntologyPath, iter_data_paths
from edgesight.telemetry import (
    MalformedPayloadError,
    MalformedTopicError,
    Quality,
    UnitMismatchError,
    UnknownPathError,
    encode_payload,
    parse_sample,
    parse_topic,
    subscription_filter,
    topic_for,
)


class TestTopics:
    def test_demo_tunnel_power_topic(self, demo_site):
        path = OntologyPath.parse("demo/cooling/tunnel-1/power/momentary")
        assert topic_for(demo_site, path) == "enerman/demo/cooling/tunnel-1/power/momentary"

    def test_round_trip_over_all_nodes(self, demo_site):
        topics = set()
        for path, _ in iter_data_paths(demo_site):
            topic = topic_for(demo_site, path)
            assert parse_topic(topic) == path
            topics.add(topic)
        # Injective: one topic per Data node.
        assert len(topics) == sum(1 for _ in iter_data_paths(demo_site))

    def test_partial_path_rejected(self, demo_site):
        with pytest.raises(UnknownPathError):
            topic_for(demo_site, OntologyPath.parse("demo/cooling/tunnel-1/power"))

    def test_unresolvable_path_rejected(self, demo_site):
        with pytest.raises(UnknownPathError):
            topic_for(demo_site, OntologyPath.parse("demo/cooling/ghost/power/momentary"))

    @pytest.mark.parametrize("topic", [
        "demo/cooling/tunnel-1/power/momentary",          # missing root
        "enerman/demo/cooling/tunnel-1/power",            # five segments
        "enerman/demo/cooling/tunnel-1/power/x/y",        # seven segments
        "enerman/demo//tunnel-1/power/momentary",         # empty segment
    ])
    def test_malformed_topics(self, topic):
        with pytest.raises(MalformedTopicError):
            parse_topic(topic)

    def test_subscription_filter(self):
        assert subscription_filter("demo") == "enerman/demo/#"


class TestParseSample:
    TOPIC = "enerman/demo/prep/tank-2/temp/momentary"

    def test_tank_temperature_payload(self, demo_site):
        payload = json.dumps({"ts": 1700000000000, "value": 41.5, "unit": "celsius"})
        sample = parse_sample(demo_site, self.TOPIC, payload)
        assert sample.path == OntologyPath.parse("demo/prep/tank-2/temp/momentary")
        assert sample.value == 41.5
        assert sample.quality is Quality.GOOD

    def test_unit_mismatch(self, demo_site):
        payload = json.dumps({"ts": 1700000000000, "value": 41.5, "unit": "kilowatt"})
        with pytest.raises(UnitMismatchError):
            parse_sample(demo_site, self.TOPIC, payload)

    def test_missing_value(self, demo_site):
        payload = json.dumps({"ts": 1700000000000, "unit": "celsius"})
        with pytest.raises(MalformedPayloadError):
            parse_sample(demo_site, self.TOPIC, payload)

    @pytest.mark.parametrize("payload", [
        "not json",
        json.dumps([1, 2]),
        json.dumps({"ts": -5, "value": 1.0, "unit": "celsius"}),
        json.dumps({"ts": 1.5, "value": 1.0, "unit": "celsius"}),
        json.dumps({"ts": 1700000000000, "value": "warm", "unit": "celsius"}),
        json.dumps({"ts": 1700000000000, "value": 1.0, "unit": "furlongs"}),
        json.dumps({"ts": 1700000000000, "value": 1.0, "unit": "celsius", "quality": "great"}),
    ])
    def test_malformed_payloads(self, demo_site, payload):
        with pytest.raises(MalformedPayloadError):
            parse_sample(demo_site, self.TOPIC, payload)

    def test_unknown_topic_path(self, demo_site):
        payload = json.dumps({"ts": 1, "value": 1.0, "unit": "celsius"})
        with pytest.raises(UnknownPathError):
            parse_sample(demo_site, "enerman/demo/prep/tank-9/temp/momentary", payload)

    def test_quality_suspect(self, demo_site):
        payload = json.dumps(
            {"ts": 1700000000000, "value": 40.0, "unit": "celsius", "quality": "suspect"}
        )
        assert parse_sample(demo_site, self.TOPIC, payload).quality is Quality.SUSPECT

    def test_encode_decode_round_trip(self, demo_site):
        payload = json.dumps({"ts": 1700000000123, "value": 39.25, "unit": "celsius"})
        sample = parse_sample(demo_site, self.TOPIC, payload)
        again = parse_sample(demo_site, self.TOPIC, encode_payload(sample))
        assert again == sample
