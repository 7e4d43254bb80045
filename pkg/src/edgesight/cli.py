"""Operator command line: serve, simulate, lint, topics, broker, report."""

from __future__ import annotations

import logging
import sys
import time
from pathlib import Path

import click

from .alerts import BadRuleError, load_rules
from .config import ConfigError, load_server_config
from .ontology import (
    DescriptorInvariantError,
    OntologyError,
    iter_data_paths,
    parse_descriptor,
    validate,
)
from .pubsub import Broker, BrokerClient, PubSubError, parse_address
from .simulator import (
    ScenarioError,
    Simulator,
    build_demo_site,
    load_scenario,
    publish_scenario,
    with_start_time,
)
from .telemetry import encode_payload


def _fail(message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(1)


def _load_site(site_file: str | None):
    if site_file is None:
        return build_demo_site()
    try:
        return parse_descriptor(Path(site_file).read_text())
    except FileNotFoundError:
        _fail(f"descriptor file not found: {site_file}")
    except OntologyError as exc:
        _fail(f"descriptor {site_file}: {exc}")


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Debug logging.")
def main(verbose: bool) -> None:
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s %(message)s",
    )


@main.command()
@click.option("--config", "config_file", required=True, type=click.Path(), help="Server config JSON.")
def serve(config_file: str) -> None:
    """Run the gateway: ingest, alerting, REST API, and observer streams."""
    from .gateway import serve as run_server

    try:
        config = load_server_config(config_file)
    except ConfigError as exc:
        _fail(str(exc))
    click.echo(f"serving on {config.listen_host}:{config.listen_port}", err=True)
    run_server(config)


@main.command()
@click.option("--scenario", "scenario_file", required=True, type=click.Path(), help="Scenario JSON.")
@click.option("--broker", "broker_address", default="127.0.0.1:1883", show_default=True,
              help="Broker to publish to.")
@click.option("--site", "site_file", type=click.Path(), default=None,
              help="Site descriptor (defaults to the built-in demo site).")
@click.option("--start", type=click.Choice(["now", "scenario"]), default="now",
              show_default=True, help="Timestamp base: wall clock or the scenario's start_ms.")
@click.option("--fast", is_flag=True, help="Publish without real-time pacing.")
def simulate(scenario_file: str, broker_address: str, site_file: str | None,
             start: str, fast: bool) -> None:
    """Replay a scenario against a broker, one batch of samples per tick."""
    descriptor = _load_site(site_file)
    try:
        scenario = load_scenario(Path(scenario_file).read_text())
    except FileNotFoundError:
        _fail(f"scenario file not found: {scenario_file}")
    except ScenarioError as exc:
        _fail(str(exc))
    if start == "now":
        scenario = with_start_time(scenario, int(time.time() * 1000))

    host, port = parse_address(broker_address)
    try:
        client = BrokerClient(host, port)
    except (OSError, PubSubError) as exc:
        _fail(f"cannot reach broker {broker_address}: {exc}")

    sim = Simulator(descriptor, scenario)
    click.echo(
        f"publishing {len(sim.active_paths)} series for {scenario.duration_s:g}s "
        f"(tick {scenario.tick_ms} ms) to {broker_address}",
        err=True,
    )
    try:
        count = publish_scenario(
            sim, lambda topic, s: client.publish(topic, encode_payload(s)), pace=not fast,
        )
    except PubSubError as exc:
        _fail(f"broker connection lost: {exc}")
    finally:
        client.close()
    click.echo(f"published {count} samples", err=True)


@main.command()
@click.argument("descriptors", nargs=-1, required=True, type=click.Path())
def lint(descriptors: tuple[str, ...]) -> None:
    """Validate descriptor files; exit 0 when clean, 1 with violations printed."""
    failed = False
    for file in descriptors:
        try:
            text = Path(file).read_text()
        except FileNotFoundError:
            click.echo(f"{file}: file not found", err=True)
            failed = True
            continue
        try:
            desc = parse_descriptor(text)
        except DescriptorInvariantError as exc:
            for violation in exc.report:
                click.echo(f"{file}: {violation}")
            failed = True
            continue
        except OntologyError as exc:
            click.echo(f"{file}: {exc}", err=True)
            failed = True
            continue
        report = validate(desc)
        if report.ok:
            click.echo(f"{file}: ok")
        else:
            for violation in report:
                click.echo(f"{file}: {violation}")
            failed = True
    sys.exit(1 if failed else 0)


@main.command()
@click.argument("descriptor", type=click.Path())
def topics(descriptor: str) -> None:
    """Print the full topic map of a descriptor, one topic per line."""
    from .telemetry import topic_for

    try:
        desc = parse_descriptor(Path(descriptor).read_text())
    except FileNotFoundError:
        _fail(f"descriptor file not found: {descriptor}")
    except OntologyError as exc:
        _fail(str(exc))
    for path, _ in iter_data_paths(desc):
        click.echo(topic_for(desc, path))


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=1883, show_default=True)
def broker(host: str, port: int) -> None:
    """Run the embedded pub/sub broker until interrupted."""
    b = Broker(host, port).start()
    click.echo(f"broker listening on {b.address}", err=True)
    try:
        while True:
            time.sleep(1)
    except KeyboardInterrupt:
        click.echo("stopping", err=True)
    finally:
        b.stop()


@main.command()
@click.option("--scenario", "scenario_file", required=True, type=click.Path(), help="Scenario JSON.")
@click.option("--site", "site_file", type=click.Path(), default=None,
              help="Site descriptor (defaults to the built-in demo site).")
@click.option("--rules", "rules_file", type=click.Path(), default=None,
              help="Alert rules applied during the replay.")
@click.option("--out", "out_dir", default="reports", show_default=True,
              help="Output directory for CSV tables and PNG figures.")
def report(scenario_file: str, site_file: str | None, rules_file: str | None, out_dir: str) -> None:
    """Replay a scenario offline and write CSV tables plus chart PNGs."""
    from .report import generate_report

    descriptor = _load_site(site_file)
    try:
        scenario = load_scenario(Path(scenario_file).read_text())
    except FileNotFoundError:
        _fail(f"scenario file not found: {scenario_file}")
    except ScenarioError as exc:
        _fail(str(exc))

    rules = []
    if rules_file is not None:
        try:
            rules = load_rules(Path(rules_file).read_text())
        except FileNotFoundError:
            _fail(f"rules file not found: {rules_file}")
        except BadRuleError as exc:
            _fail(str(exc))

    result = generate_report(descriptor, scenario, rules, out_dir)
    for table in result.tables:
        click.echo(str(table))
    for figure in result.figures:
        click.echo(str(figure))
    click.echo(
        f"{len(result.notifications)} notifications during replay", err=True,
    )


if __name__ == "__main__":
    main()
