"""Offline scenario reports: replay a scenario, write CSV tables and figures.

The report path needs no broker or server: the simulator feeds an in-memory
store and alert engine directly, then the analytics run over the result.
Output lands in one directory: summary/notification/error tables as CSV and
PNG charts for power, predictions-vs-actual, and ambient conditions.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .alerts import AlertEngine, AlertRule, Notification
from .analytics import pair_predictions, prediction_error
from .ontology import OntologyPath, Semantic, SiteDescriptor, iter_data_paths
from .simulator import ScenarioConfig, SignalSpec, Simulator
from .store import SeriesQuery, TelemetryStore

logger = logging.getLogger(__name__)

FIGSIZE = (9.0, 4.5)


@dataclass
class ReportResult:
    out_dir: Path
    tables: list[Path] = field(default_factory=list)
    figures: list[Path] = field(default_factory=list)
    notifications: list[Notification] = field(default_factory=list)


def generate_report(
    descriptor: SiteDescriptor,
    scenario: ScenarioConfig,
    rules: list[AlertRule],
    out_dir: str | Path,
    signals: dict[str, SignalSpec] | None = None,
) -> ReportResult:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    store = TelemetryStore(descriptor, capacity=max(scenario.tick_count, 1))
    engine = AlertEngine(descriptor)
    for rule in rules:
        engine.register_rule(rule)

    sim = Simulator(descriptor, scenario, signals)
    notifications: list[Notification] = []
    for _, samples in sim.run():
        for sample in samples:
            store.append(sample)
            notifications.extend(engine.evaluate(sample))

    result = ReportResult(out_dir=out, notifications=notifications)
    t0 = scenario.start_ms
    t1 = scenario.start_ms + int(scenario.duration_s * 1000)

    result.tables.append(_write_series_summary(out, descriptor, store, t0, t1))
    result.tables.append(_write_notifications(out, notifications))
    errors_rows = _prediction_error_rows(descriptor, store, scenario, t0, t1)
    result.tables.append(_write_prediction_errors(out, errors_rows))

    result.figures.append(_plot_power(out, descriptor, store, t0, t1))
    result.figures.extend(_plot_predictions(out, descriptor, store, t0, t1))
    env_figure = _plot_environment(out, descriptor, store, t0, t1)
    if env_figure is not None:
        result.figures.append(env_figure)

    logger.info(
        "report written to %s: %d tables, %d figures, %d notifications",
        out, len(result.tables), len(result.figures), len(notifications),
    )
    return result


# --- tables -------------------------------------------------------------------

def _write_series_summary(out: Path, desc, store, t0, t1) -> Path:
    path = out / "series_summary.csv"
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "unit", "semantic", "count", "min", "mean", "max", "last"])
        for opath, node in iter_data_paths(desc):
            samples = store.range(SeriesQuery(opath, t0, t1))
            if not samples:
                writer.writerow([str(opath), node.unit.value, node.semantic.value, 0, "", "", "", ""])
                continue
            values = [s.value for s in samples]
            writer.writerow([
                str(opath), node.unit.value, node.semantic.value, len(values),
                f"{min(values):.6g}", f"{sum(values) / len(values):.6g}",
                f"{max(values):.6g}", f"{values[-1]:.6g}",
            ])
    return path


def _write_notifications(out: Path, notifications) -> Path:
    path = out / "notifications.csv"
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "rule_id", "path", "severity", "triggered_at", "value", "message"])
        for n in notifications:
            writer.writerow([n.id, n.rule_id, str(n.path), n.severity.value,
                             n.triggered_at, n.value, n.message])
    return path


def _prediction_error_rows(desc, store, scenario, t0, t1):
    rows = []
    for actual_path, models in _prediction_groups(desc):
        paired = pair_predictions(
            store, actual_path, models, t0, t1, tolerance=scenario.tick_ms,
        )
        for model_path in models:
            model = model_path.data_id
            try:
                err = prediction_error(paired, model)
            except Exception:
                continue
            rows.append((str(actual_path), model, err.mae, err.mape, err.n))
    return rows


def _write_prediction_errors(out: Path, rows) -> Path:
    path = out / "prediction_errors.csv"
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["actual_path", "model", "mae", "mape_percent", "n"])
        for actual, model, mae, mape, n in rows:
            writer.writerow([actual, model, f"{mae:.9g}",
                             "" if mape is None else f"{mape:.9g}", n])
    return path


def _prediction_groups(desc):
    """Yield (actual path, [prediction paths]) per resource that has both."""
    by_resource: dict[str, dict] = {}
    for path, node in iter_data_paths(desc):
        key = str(path.parent())
        group = by_resource.setdefault(key, {"actual": None, "models": []})
        if node.semantic is Semantic.MOMENTARY:
            group["actual"] = path
        elif node.semantic is Semantic.PREDICTED:
            group["models"].append(path)
    for group in by_resource.values():
        if group["actual"] is not None and group["models"]:
            yield group["actual"], group["models"]


# --- figures ------------------------------------------------------------------

def _series_xy(store, path: OntologyPath, t0: int, t1: int):
    samples = store.range(SeriesQuery(path, t0, t1))
    return [(s.timestamp - t0) / 1000.0 for s in samples], [s.value for s in samples]


def _new_axes(title: str, ylabel: str):
    fig, ax = plt.subplots(figsize=FIGSIZE)
    ax.set_title(title)
    ax.set_xlabel("time [s]")
    ax.set_ylabel(ylabel)
    ax.grid(True, alpha=0.3)
    return fig, ax


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def _plot_power(out: Path, desc, store, t0, t1) -> Path:
    fig, ax = _new_axes("Momentary power by asset", "kW")
    for path, node in iter_data_paths(desc):
        if node.semantic is not Semantic.MOMENTARY or node.unit.value != "kilowatt":
            continue
        xs, ys = _series_xy(store, path, t0, t1)
        if xs:
            ax.plot(xs, ys, label=f"{path.asset_id}/{path.resource_id}", linewidth=1.0)
    ax.legend(fontsize=7, ncol=2)
    return _save(fig, out / "power_momentary.png")


def _plot_predictions(out: Path, desc, store, t0, t1) -> list[Path]:
    figures = []
    for actual_path, models in _prediction_groups(desc):
        fig, ax = _new_axes(f"Actual vs predictions: {actual_path.asset_id}", "kW")
        xs, ys = _series_xy(store, actual_path, t0, t1)
        ax.plot(xs, ys, label="actual", linewidth=1.6, color="black")
        for model_path in models:
            xs, ys = _series_xy(store, model_path, t0, t1)
            ax.plot(xs, ys, label=model_path.data_id, linewidth=0.9, alpha=0.8)
        ax.legend(fontsize=8)
        figures.append(_save(fig, out / f"predictions_{actual_path.asset_id}.png"))
    return figures


def _plot_environment(out: Path, desc, store, t0, t1) -> Path | None:
    env_paths = [
        (path, node) for path, node in iter_data_paths(desc)
        if node.semantic is Semantic.AVERAGE
    ]
    if not env_paths:
        return None
    fig, axes = plt.subplots(len(env_paths), 1, figsize=(FIGSIZE[0], 2.2 * len(env_paths)),
                             sharex=True, squeeze=False)
    for ax_row, (path, node) in zip(axes, env_paths):
        ax = ax_row[0]
        xs, ys = _series_xy(store, path, t0, t1)
        ax.plot(xs, ys, linewidth=1.0)
        ax.set_ylabel(node.unit.value)
        ax.set_title(node.name, fontsize=9)
        ax.grid(True, alpha=0.3)
    axes[-1][0].set_xlabel("time [s]")
    return _save(fig, out / "environment.png")
