import json
import threading

import pytest
from click.testing import CliRunner

from edgesight.cli import main
from edgesight.ontology import iter_data_paths, serialize
from edgesight.telemetry import parse_topic
from edgesight.pubsub import Broker, BrokerClient
from edgesight.simulator import build_demo_site


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def demo_file(tmp_path):
    path = tmp_path / "demo.site.json"
    path.write_text(serialize(build_demo_site()))
    return str(path)


@pytest.fixture
def scenario_file(tmp_path):
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps({
        "seed": 9,
        "duration_s": 2,
        "tick_ms": 200,
        "events": [
            {"at_ms": 400, "path": "demo/cooling/tunnel-1/comp-2/temp", "value": 12.0},
        ],
    }))
    return str(path)


class TestLint:
    def test_clean_descriptor_exits_zero(self, runner, demo_file):
        result = runner.invoke(main, ["lint", demo_file])
        assert result.exit_code == 0
        assert "ok" in result.output

    def test_duplicate_id_exits_one_with_path(self, runner, tmp_path):
        doc = {
            "id": "s1", "name": "S", "bounds": {"w": 100, "d": 100, "h": 10},
            "departments": [{
                "id": "d1", "name": "D", "footprint": {"x": 0, "y": 0, "w": 50, "d": 50},
                "assets": [
                    {"id": "a", "name": "A", "kind": "generic", "position": {"x": 1, "y": 1, "z": 0}},
                    {"id": "a", "name": "B", "kind": "generic", "position": {"x": 2, "y": 2, "z": 0}},
                ],
            }],
        }
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps(doc))
        result = runner.invoke(main, ["lint", str(bad)])
        assert result.exit_code == 1
        assert "s1/d1/a" in result.output

    def test_missing_file(self, runner):
        result = runner.invoke(main, ["lint", "nope.json"])
        assert result.exit_code == 1

    def test_multiple_files(self, runner, demo_file, tmp_path):
        bad = tmp_path / "syntax.json"
        bad.write_text("{not json")
        result = runner.invoke(main, ["lint", demo_file, str(bad)])
        assert result.exit_code == 1


class TestTopics:
    def test_bijective_with_descriptor_walk(self, runner, demo_file):
        result = runner.invoke(main, ["topics", demo_file])
        assert result.exit_code == 0
        lines = [l for l in result.output.splitlines() if l.strip()]
        demo = build_demo_site()
        expected = {f"enerman/{path}" for path, _ in iter_data_paths(demo)}
        assert set(lines) == expected
        assert len(lines) == len(expected)
        for line in lines:
            parse_topic(line)  # every printed topic is well-formed

    def test_missing_descriptor(self, runner):
        result = runner.invoke(main, ["topics", "ghost.json"])
        assert result.exit_code == 1


class TestSimulate:
    def test_publishes_against_live_broker(self, runner, scenario_file):
        received = []
        done = threading.Event()
        with Broker() as broker:
            sub = BrokerClient("127.0.0.1", broker.port)
            sub.subscribe("enerman/demo/#", lambda t, p: received.append((t, p)))
            result = runner.invoke(main, [
                "simulate", "--scenario", scenario_file,
                "--broker", broker.address, "--fast", "--start", "scenario",
            ])
            assert result.exit_code == 0, result.output
            node_count = sum(1 for _ in iter_data_paths(build_demo_site()))
            expected = 10 * node_count  # 2 s at 200 ms
            done.wait(0.5)
            assert len(received) == expected
            topic, payload = received[0]
            assert topic.startswith("enerman/demo/")
            assert "ts" in json.loads(payload)
            sub.close()

    def test_broker_unreachable(self, runner, scenario_file):
        result = runner.invoke(main, [
            "simulate", "--scenario", scenario_file, "--broker", "127.0.0.1:1",
        ])
        assert result.exit_code == 1
        assert "cannot reach broker" in result.output

    def test_bad_scenario(self, runner, tmp_path):
        bad = tmp_path / "s.json"
        bad.write_text("{}")
        result = runner.invoke(main, ["simulate", "--scenario", str(bad)])
        assert result.exit_code == 1


class TestServe:
    def test_missing_config(self, runner):
        result = runner.invoke(main, ["serve", "--config", "ghost.json"])
        assert result.exit_code == 1
        assert "ghost.json" in result.output


class TestReport:
    def test_writes_tables_and_figures(self, runner, scenario_file, tmp_path):
        rules = tmp_path / "rules.json"
        rules.write_text(json.dumps([
            {"id": "comp-warm", "target": "demo/cooling/tunnel-1/comp-2/temp",
             "comparator": "above", "threshold": 8.0},
        ]))
        out = tmp_path / "out"
        result = runner.invoke(main, [
            "report", "--scenario", scenario_file, "--rules", str(rules), "--out", str(out),
        ])
        assert result.exit_code == 0, result.output
        assert (out / "series_summary.csv").exists()
        assert (out / "notifications.csv").exists()
        assert (out / "prediction_errors.csv").exists()
        assert (out / "power_momentary.png").stat().st_size > 0
        assert (out / "predictions_tunnel-1.png").exists()
        assert (out / "environment.png").exists()
        assert "1 notifications" in result.output
