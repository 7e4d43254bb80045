import json
import time

import pytest
from fastapi.testclient import TestClient

from conftest import make_sample
from edgesight.alerts import AlertRule, Comparator
from edgesight.config import ServerConfig
from edgesight.gateway import Gateway, create_app
from edgesight.ontology import OntologyPath, Unit
from edgesight.pubsub import Broker, BrokerClient
from edgesight.simulator import build_demo_site
from edgesight.telemetry import encode_payload

TANK3 = "demo/prep/tank-3/temp/momentary"
COMP = "demo/cooling/tunnel-1/comp-2/temp"


def demo_rules():
    return [
        AlertRule("tank-3-hot", OntologyPath.parse(TANK3), Comparator.ABOVE, 45.0),
        AlertRule("comp-warm", OntologyPath.parse(COMP), Comparator.ABOVE, 8.0),
    ]


@pytest.fixture
def gateway():
    config = ServerConfig(
        descriptors=[build_demo_site()],
        rules=demo_rules(),
        broker=None,
        refresh_tick_ms=100,
        session_idle_timeout_s=300,
    )
    return Gateway(config)


@pytest.fixture
def client(gateway):
    with TestClient(create_app(gateway)) as c:
        yield c


def ingest(gateway, path, ts, value, unit):
    sample = make_sample(path, ts, value, unit)
    runtime = gateway.sites["demo"]
    runtime.store.append(sample)
    runtime.alerts.evaluate(sample)
    return sample


class TestRest:
    def test_healthz_without_broker(self, client):
        body = client.get("/healthz").json()
        assert body["status"] == "ok"
        assert body["ingest"] == {"state": "disabled"}

    def test_sites(self, client):
        body = client.get("/api/sites").json()
        assert body["sites"] == [{"id": "demo", "name": "Demo pilot site"}]

    def test_descriptor_document(self, client, demo_site):
        body = client.get("/api/sites/demo/descriptor").json()
        assert body["id"] == "demo"
        assert len(body["departments"]) == 3
        assert client.get("/api/sites/ghost/descriptor").status_code == 404

    def test_latest(self, client, gateway):
        assert client.get(f"/api/data/{TANK3}/latest").json() == {"sample": None}
        ingest(gateway, TANK3, 1000, 41.5, Unit.CELSIUS)
        body = client.get(f"/api/data/{TANK3}/latest").json()
        assert body["sample"]["value"] == 41.5
        assert body["sample"]["path"] == TANK3

    def test_latest_unknown_path_404(self, client):
        response = client.get("/api/data/demo/prep/tank-9/temp/momentary/latest")
        assert response.status_code == 404

    def test_malformed_path_400(self, client):
        assert client.get("/api/data/demo//x/latest").status_code == 400

    def test_range_with_bucket(self, client, gateway):
        for ts, v in ((1000, 1.0), (1500, 2.0), (2000, 3.0)):
            ingest(gateway, TANK3, ts, v, Unit.CELSIUS)
        body = client.get(f"/api/data/{TANK3}/range", params={"t0": 0, "t1": 2000}).json()
        assert [s["ts"] for s in body["samples"]] == [1000, 1500, 2000]
        body = client.get(
            f"/api/data/{TANK3}/range", params={"t0": 0, "t1": 2000, "bucket": 1000}
        ).json()
        assert [(s["ts"], s["value"]) for s in body["samples"]] == [(1000, 1.5), (2000, 3.0)]

    def test_range_validation(self, client):
        assert client.get(f"/api/data/{TANK3}/range", params={"t0": 5, "t1": 1}).status_code == 400
        assert client.get(f"/api/data/{TANK3}/range", params={"t0": 1}).status_code == 400

    def test_aggregate(self, client, gateway):
        for i, v in ((1, 1.0), (2, 2.0), (3, 3.0)):
            ingest(gateway, f"demo/cooling/tunnel-{i}/power/momentary", 1000, v, Unit.KILOWATT)
        body = client.get("/api/analytics/aggregate", params={
            "scope": "demo/cooling", "fn": "sum", "unit": "kilowatt", "t0": 0, "t1": 2000,
        }).json()
        assert body["value"] == 6.0
        assert len(body["contributing"]) == 3

    def test_aggregate_bad_scope(self, client):
        assert client.get("/api/analytics/aggregate", params={
            "scope": "demo/nowhere", "fn": "sum", "t0": 0, "t1": 1,
        }).status_code == 404

    def test_pairs_with_errors(self, client, gateway):
        actual = "demo/cooling/tunnel-1/power/momentary"
        model = "demo/cooling/tunnel-1/power/model-a"
        for ts in (1000, 2000, 3000):
            ingest(gateway, actual, ts, 5.0, Unit.KILOWATT)
            ingest(gateway, model, ts, 5.15, Unit.KILOWATT)
        body = client.get("/api/analytics/pairs", params={
            "actual": actual, "models": model, "t0": 0, "t1": 4000, "tolerance": 100,
        }).json()
        assert len(body["pairs"]) == 3
        assert body["pairs"][0]["predictions"]["model-a"] == 5.15
        assert body["errors"]["model-a"]["mae"] == pytest.approx(0.15)
        assert body["errors"]["model-a"]["n"] == 3

    def test_notifications_and_ack_lifecycle(self, client, gateway):
        ingest(gateway, TANK3, 1000, 47.0, Unit.CELSIUS)
        notes = client.get("/api/notifications", params={"scope": "demo"}).json()["notifications"]
        assert len(notes) == 1
        nid = notes[0]["id"]

        status = client.get(f"/api/status/demo/prep/tank-3/temp").json()
        assert status["status"] == "ATT"

        assert client.post(f"/api/notifications/{nid}/ack").status_code == 200
        assert client.post(f"/api/notifications/{nid}/ack").status_code == 409
        assert client.post("/api/notifications/999/ack").status_code == 404

        status = client.get(f"/api/status/demo/prep/tank-3/temp").json()
        assert status["status"] == "OK"
        active = client.get(
            "/api/notifications", params={"scope": "demo", "active": "1"}
        ).json()["notifications"]
        assert active == []

    def test_status_unknown_path(self, client):
        assert client.get("/api/status/demo/prep/tank-9").status_code == 404

    def test_notifications_limit(self, client, gateway):
        for i in range(4):
            ingest(gateway, TANK3, 1000 + 2 * i, 47.0, Unit.CELSIUS)
            ingest(gateway, TANK3, 1001 + 2 * i, 40.0, Unit.CELSIUS)
        notes = client.get(
            "/api/notifications", params={"scope": "demo", "limit": 2}
        ).json()["notifications"]
        assert len(notes) == 2
        assert notes[0]["triggered_at"] > notes[1]["triggered_at"]


class TestPoseAndStream:
    def test_pose_post_creates_session(self, client):
        response = client.post("/api/session/alpha/pose", json={"x": 10, "y": 20, "yaw": 0})
        assert response.status_code == 200
        assert response.json() == {"session": "alpha", "site": "demo"}

    def test_pose_out_of_bounds_400(self, client):
        response = client.post("/api/session/alpha/pose", json={"x": -5, "y": 0, "yaw": 0})
        assert response.status_code == 400

    def test_pose_malformed_400(self, client):
        assert client.post("/api/session/a/pose", json={"x": 1}).status_code == 400
        assert client.post(
            "/api/session/a/pose", content=b"{", headers={"content-type": "application/json"}
        ).status_code == 400

    def test_stream_hello_then_packets(self, client):
        with client.websocket_connect("/api/session/s1/stream") as ws:
            hello = ws.receive_json()
            assert hello["type"] == "hello"
            assert hello["site"] == "demo"
            first = ws.receive_json()
            assert first["type"] == "packet"
            assert first["data"]["pose"]["x"] == 45.0  # default: site center
            second = ws.receive_json()
            assert second["seq"] > first["seq"]

    def test_pose_echoes_in_next_packet(self, client):
        with client.websocket_connect("/api/session/s2/stream") as ws:
            ws.receive_json()  # hello
            ws.receive_json()  # initial packet
            client.post("/api/session/s2/pose", json={"x": 10.0, "y": 22.0, "yaw": -1.5708})
            deadline = time.monotonic() + 5
            while time.monotonic() < deadline:
                frame = ws.receive_json()
                if frame["type"] == "packet" and frame["data"]["pose"]["x"] == 10.0:
                    assert frame["data"]["pose"]["y"] == 22.0
                    return
            pytest.fail("pose update never echoed")

    def test_sequences_strictly_increase(self, client):
        with client.websocket_connect("/api/session/s3/stream") as ws:
            ws.receive_json()
            seqs = [ws.receive_json()["seq"] for _ in range(5)]
            assert all(b > a for a, b in zip(seqs, seqs[1:]))

    def test_notification_pushed_on_stream(self, client, gateway):
        with client.websocket_connect("/api/session/s4/stream") as ws:
            ws.receive_json()  # hello
            ingest(gateway, COMP, 5000, 12.0, Unit.CELSIUS)
            deadline = time.monotonic() + 5
            while time.monotonic() < deadline:
                frame = ws.receive_json()
                if frame["type"] == "notification":
                    assert frame["data"]["rule_id"] == "comp-warm"
                    assert frame["data"]["value"] == 12.0
                    return
            pytest.fail("notification never arrived on stream")

    def test_second_stream_rejected(self, client):
        with client.websocket_connect("/api/session/s5/stream") as ws1:
            ws1.receive_json()
            with pytest.raises(Exception):
                with client.websocket_connect("/api/session/s5/stream") as ws2:
                    ws2.receive_json()

    def test_packet_tiers_respond_to_pose(self, client, gateway):
        ingest(gateway, "demo/cooling/tunnel-1/comp-1/temp", 1000, 4.0, Unit.CELSIUS)
        client.post("/api/session/s6/pose", json={"x": 10.0, "y": 22.0, "yaw": -1.5708})
        with client.websocket_connect("/api/session/s6/stream") as ws:
            ws.receive_json()  # hello
            packet = ws.receive_json()["data"]
            panels = [p["path"] for p in packet["asset_panels"]]
            assert panels == ["demo/cooling/tunnel-1"]
            assert packet["asset_panels"][0]["tier"] == "detail"


class TestIngestWorker:
    def test_ingest_from_broker(self):
        with Broker() as broker:
            config = ServerConfig(
                descriptors=[build_demo_site()],
                rules=demo_rules(),
                broker=broker.address,
                refresh_tick_ms=100,
            )
            gateway = Gateway(config)
            with TestClient(create_app(gateway)) as client:
                deadline = time.monotonic() + 5
                while time.monotonic() < deadline:
                    if client.get("/healthz").json()["status"] == "ok":
                        break
                    time.sleep(0.02)
                assert client.get("/healthz").json()["ingest"]["state"] == "connected"

                publisher = BrokerClient("127.0.0.1", broker.port)
                sample = make_sample(TANK3, 1234, 41.0, Unit.CELSIUS)
                publisher.publish("enerman/" + TANK3, encode_payload(sample))

                deadline = time.monotonic() + 5
                while time.monotonic() < deadline:
                    body = client.get(f"/api/data/{TANK3}/latest").json()
                    if body["sample"] is not None:
                        break
                    time.sleep(0.02)
                assert body["sample"]["value"] == 41.0
                publisher.close()

    def test_degraded_when_broker_down(self):
        config = ServerConfig(
            descriptors=[build_demo_site()],
            broker="127.0.0.1:1",  # nothing listens there
            refresh_tick_ms=100,
        )
        gateway = Gateway(config)
        with TestClient(create_app(gateway)) as client:
            body = client.get("/healthz").json()
            assert body["status"] == "degraded"
            assert body["ingest"]["state"] == "disconnected"

    def test_malformed_payload_counted_not_fatal(self):
        with Broker() as broker:
            config = ServerConfig(descriptors=[build_demo_site()], broker=broker.address)
            gateway = Gateway(config)
            with TestClient(create_app(gateway)) as client:
                deadline = time.monotonic() + 5
                while time.monotonic() < deadline:
                    if gateway.ingest is not None and gateway.ingest.connected:
                        break
                    time.sleep(0.02)
                publisher = BrokerClient("127.0.0.1", broker.port)
                publisher.publish("enerman/" + TANK3, "not json")
                sample = make_sample(TANK3, 99, 40.0, Unit.CELSIUS)
                publisher.publish("enerman/" + TANK3, encode_payload(sample))
                deadline = time.monotonic() + 5
                while time.monotonic() < deadline:
                    if client.get(f"/api/data/{TANK3}/latest").json()["sample"]:
                        break
                    time.sleep(0.02)
                assert gateway.ingest.samples_rejected == 1
                assert gateway.ingest.samples_ingested == 1
                publisher.close()
