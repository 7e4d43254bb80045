"""HTTP gateway: REST for reads and acknowledgments, a websocket per observer.

Both data paths of the platform meet here: the live edge stream (latest
values, notifications, view packets) and the analytics path (history, area
aggregates, prediction pairing) are served to the same clients.

The stream sends one frame per refresh tick and immediately after each pose
update; a slow consumer coalesces to latest state because every send composes
from the current snapshot. Sequence numbers increase strictly per session and
survive stream reconnects.
"""

from __future__ import annotations

import asyncio
import json
import logging
import threading
import time
from contextlib import asynccontextmanager
from dataclasses import dataclass, field
from urllib.parse import unquote

from fastapi import FastAPI, Request, WebSocket, WebSocketDisconnect
from fastapi.responses import JSONResponse

from .alerts import (
    AlertEngine,
    AlreadyAcknowledgedError,
    BadRuleError,
    DuplicateRuleError,
    Notification,
    UnknownNotificationError,
)
from .analytics import (
    AggregateFn,
    AnalyticsError,
    pair_predictions,
    prediction_error,
    area_aggregate,
)
from .awareness import ObserverPose, TierTracker, compose_view_packet, validate_pose
from .config import ServerConfig
from .geometry import Vec3
from .ontology import (
    OntologyPath,
    PathNotFoundError,
    Semantic,
    SiteDescriptor,
    Unit,
    descriptor_to_obj,
    resolve,
)
from .pubsub import BrokerClient, PubSubError, parse_address
from .store import SeriesQuery, TelemetryStore
from .telemetry import TelemetryError, parse_sample, subscription_filter

logger = logging.getLogger(__name__)


class ApiError(Exception):
    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status
        self.message = message


@dataclass
class SiteRuntime:
    descriptor: SiteDescriptor
    store: TelemetryStore
    alerts: AlertEngine


@dataclass
class Session:
    id: str
    site: SiteRuntime
    pose: ObserverPose
    tracker: TierTracker = field(default_factory=TierTracker)
    seq: int = 0
    last_activity: float = field(default_factory=time.monotonic)
    pending_notifications: list[dict] = field(default_factory=list)
    wake: asyncio.Event = field(default_factory=asyncio.Event)
    stream_attached: bool = False

    def touch(self) -> None:
        self.last_activity = time.monotonic()

    def next_seq(self) -> int:
        self.seq += 1
        return self.seq


class IngestWorker(threading.Thread):
    """Broker subscriber feeding stores and alert engines.

    Retries with capped exponential backoff, so a broker that is down at
    startup (or restarts later) only degrades ingest, never the API.
    """

    def __init__(self, broker_address: str, sites: dict[str, SiteRuntime]):
        super().__init__(name="edgesight-ingest", daemon=True)
        self.broker_address = broker_address
        self.sites = sites
        self.connected = False
        self.samples_ingested = 0
        self.samples_rejected = 0
        self._stop = threading.Event()
        self._client: BrokerClient | None = None

    def run(self) -> None:
        host, port = parse_address(self.broker_address)
        backoff = 0.5
        while not self._stop.is_set():
            try:
                client = BrokerClient(host, port)
                for site_id in self.sites:
                    client.subscribe(subscription_filter(site_id), self._on_message)
            except (OSError, PubSubError) as exc:
                logger.warning("broker %s unreachable (%s); retrying in %.1fs",
                               self.broker_address, exc, backoff)
                self._stop.wait(backoff)
                backoff = min(backoff * 2, 10.0)
                continue
            self._client = client
            self.connected = True
            backoff = 0.5
            logger.info("ingest connected to %s", self.broker_address)
            while not self._stop.is_set() and not client.closed():
                self._stop.wait(0.2)
            self.connected = False
            client.close()
            if not self._stop.is_set():
                logger.warning("broker connection lost; reconnecting")

    def stop(self) -> None:
        self._stop.set()
        if self._client is not None:
            self._client.close()

    def _on_message(self, topic: str, payload: str) -> None:
        site_id = topic.split("/")[1] if topic.count("/") >= 1 else ""
        runtime = self.sites.get(site_id)
        if runtime is None:
            return
        try:
            sample = parse_sample(runtime.descriptor, topic, payload)
        except TelemetryError as exc:
            self.samples_rejected += 1
            logger.warning("rejected sample on %s: %s", topic, exc)
            return
        runtime.store.append(sample)
        runtime.alerts.evaluate(sample)
        self.samples_ingested += 1


class Gateway:
    """Wires descriptors, stores, alert engines, sessions, and ingest."""

    def __init__(self, config: ServerConfig):
        self.config = config
        self.sites: dict[str, SiteRuntime] = {}
        for desc in config.descriptors:
            runtime = SiteRuntime(
                descriptor=desc,
                store=TelemetryStore(desc, capacity=config.retention),
                alerts=AlertEngine(desc),
            )
            self.sites[desc.id] = runtime
        for rule in config.rules:
            runtime = self.sites.get(rule.target.site_id)
            if runtime is None:
                raise BadRuleError(f"rule {rule.id!r} targets unknown site {rule.target.site_id!r}")
            try:
                runtime.alerts.register_rule(rule)
            except DuplicateRuleError:
                raise
        self.sessions: dict[str, Session] = {}
        self.ingest: IngestWorker | None = None
        self.started_at = time.time()
        self._loop: asyncio.AbstractEventLoop | None = None
        self.default_site = config.descriptors[0].id
        for runtime in self.sites.values():
            runtime.alerts.add_listener(self._notification_listener(runtime))

    # -- lifecycle -------------------------------------------------------

    def startup(self) -> None:
        self._loop = asyncio.get_running_loop()
        if self.config.broker:
            self.ingest = IngestWorker(self.config.broker, self.sites)
            self.ingest.start()

    def shutdown(self) -> None:
        if self.ingest is not None:
            self.ingest.stop()
        for session in self.sessions.values():
            session.wake.set()
        self.sessions.clear()

    # -- sessions ---------------------------------------------------------

    def session_for(self, session_id: str, site_id: str | None = None) -> Session:
        session = self.sessions.get(session_id)
        if session is not None:
            return session
        runtime = self.runtime(site_id or self.default_site)
        bounds = runtime.descriptor.bounds
        pose = ObserverPose(position=Vec3(bounds.w / 2, bounds.d / 2, 0.0), yaw=0.0)
        session = Session(id=session_id, site=runtime, pose=pose)
        self.sessions[session_id] = session
        return session

    def runtime(self, site_id: str) -> SiteRuntime:
        runtime = self.sites.get(site_id)
        if runtime is None:
            raise ApiError(404, f"unknown site {site_id!r}")
        return runtime

    def runtime_for_path(self, path: OntologyPath) -> SiteRuntime:
        return self.runtime(path.site_id)

    def compose_packet(self, session: Session) -> dict:
        packet = compose_view_packet(
            session.site.descriptor,
            session.site.store,
            session.site.alerts,
            session.pose,
            session.tracker,
            self.config.awareness,
            now_ms=int(time.time() * 1000),
        )
        return packet.to_obj()

    def expire_idle_sessions(self) -> None:
        deadline = time.monotonic() - self.config.session_idle_timeout_s
        for sid in [s.id for s in self.sessions.values() if s.last_activity < deadline]:
            session = self.sessions.pop(sid)
            session.wake.set()
            logger.info("session %s expired after idle timeout", sid)

    def _notification_listener(self, runtime: SiteRuntime):
        def deliver(note: Notification) -> None:
            loop = self._loop
            if loop is None or loop.is_closed():
                return
            obj = note.to_obj()
            loop.call_soon_threadsafe(self._fan_out, runtime, obj)

        return deliver

    def _fan_out(self, runtime: SiteRuntime, note_obj: dict) -> None:
        for session in self.sessions.values():
            if session.site is runtime:
                session.pending_notifications.append(note_obj)
                session.wake.set()

    def health(self) -> dict:
        if self.config.broker is None:
            ingest = {"state": "disabled"}
            status = "ok"
        elif self.ingest is not None and self.ingest.connected:
            ingest = {
                "state": "connected",
                "broker": self.config.broker,
                "samples": self.ingest.samples_ingested,
                "rejected": self.ingest.samples_rejected,
            }
            status = "ok"
        else:
            ingest = {"state": "disconnected", "broker": self.config.broker}
            status = "degraded"
        return {
            "status": status,
            "ingest": ingest,
            "sites": sorted(self.sites),
            "sessions": len(self.sessions),
            "uptime_s": round(time.time() - self.started_at, 1),
        }


# --- request plumbing ---------------------------------------------------------


def _parse_path(text: str) -> OntologyPath:
    try:
        return OntologyPath.parse(unquote(text))
    except ValueError as exc:
        raise ApiError(400, str(exc)) from exc


def _int_param(request: Request, name: str, default: int | None = None) -> int:
    raw = request.query_params.get(name)
    if raw is None:
        if default is None:
            raise ApiError(400, f"missing query parameter {name!r}")
        return default
    try:
        return int(raw)
    except ValueError:
        raise ApiError(400, f"query parameter {name!r} must be an integer") from None


def _pose_from_body(body: dict, previous: ObserverPose) -> ObserverPose:
    try:
        return ObserverPose(
            position=Vec3(
                float(body["x"]),
                float(body["y"]),
                float(body.get("z", previous.position.z)),
            ),
            yaw=float(body.get("yaw", previous.yaw)),
            fov_half_angle=float(body.get("fov_half_angle", previous.fov_half_angle)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ApiError(400, f"bad pose: {exc}") from exc


def create_app(gateway: Gateway) -> FastAPI:
    @asynccontextmanager
    async def lifespan(_app: FastAPI):
        gateway.startup()
        reaper = asyncio.create_task(_reap_idle_sessions(gateway))
        try:
            yield
        finally:
            reaper.cancel()
            gateway.shutdown()

    app = FastAPI(title="edgesight gateway", docs_url=None, redoc_url=None, lifespan=lifespan)
    app.state.gateway = gateway

    @app.exception_handler(ApiError)
    async def _api_error(_req: Request, exc: ApiError) -> JSONResponse:
        return JSONResponse(status_code=exc.status, content={"error": exc.message})

    @app.get("/healthz")
    async def healthz() -> dict:
        return gateway.health()

    @app.get("/api/sites")
    async def sites() -> dict:
        return {
            "sites": [
                {"id": r.descriptor.id, "name": r.descriptor.name}
                for r in gateway.sites.values()
            ]
        }

    @app.get("/api/sites/{site_id}/descriptor")
    async def descriptor(site_id: str) -> dict:
        return descriptor_to_obj(gateway.runtime(site_id).descriptor)

    @app.get("/api/data/{path:path}/latest")
    async def latest(path: str) -> dict:
        opath = _parse_path(path)
        runtime = gateway.runtime_for_path(opath)
        try:
            sample = runtime.store.latest(opath)
        except TelemetryError as exc:
            raise ApiError(404, str(exc)) from exc
        return {"sample": sample.to_obj() if sample else None}

    @app.get("/api/data/{path:path}/range")
    async def data_range(path: str, request: Request) -> dict:
        opath = _parse_path(path)
        runtime = gateway.runtime_for_path(opath)
        bucket = request.query_params.get("bucket")
        try:
            query = SeriesQuery(
                path=opath,
                t0=_int_param(request, "t0"),
                t1=_int_param(request, "t1"),
                bucket=int(bucket) if bucket is not None else None,
            )
        except ValueError as exc:
            raise ApiError(400, str(exc)) from exc
        try:
            samples = runtime.store.range(query)
        except TelemetryError as exc:
            raise ApiError(404, str(exc)) from exc
        return {"samples": [s.to_obj() for s in samples]}

    @app.get("/api/analytics/aggregate")
    async def aggregate(request: Request) -> dict:
        scope = _parse_path(request.query_params.get("scope", ""))
        runtime = gateway.runtime_for_path(scope)
        fn_text = request.query_params.get("fn", "sum")
        semantic_text = request.query_params.get("semantic", Semantic.MOMENTARY.value)
        unit_text = request.query_params.get("unit")
        try:
            fn = AggregateFn(fn_text)
            semantic = Semantic(semantic_text)
            unit = Unit(unit_text) if unit_text else None
        except ValueError as exc:
            raise ApiError(400, str(exc)) from exc
        try:
            result = area_aggregate(
                runtime.store, scope, semantic,
                _int_param(request, "t0"), _int_param(request, "t1"), fn, unit=unit,
            )
        except PathNotFoundError as exc:
            raise ApiError(404, str(exc)) from exc
        return result.to_obj()

    @app.get("/api/analytics/pairs")
    async def pairs(request: Request) -> dict:
        actual = _parse_path(request.query_params.get("actual", ""))
        models_text = request.query_params.get("models", "")
        if not models_text:
            raise ApiError(400, "missing query parameter 'models'")
        model_paths = [_parse_path(m) for m in models_text.split(",")]
        runtime = gateway.runtime_for_path(actual)
        try:
            paired = pair_predictions(
                runtime.store, actual, model_paths,
                _int_param(request, "t0"), _int_param(request, "t1"),
                tolerance=_int_param(request, "tolerance", 1000),
            )
        except PathNotFoundError as exc:
            raise ApiError(404, str(exc)) from exc
        except AnalyticsError as exc:
            raise ApiError(400, str(exc)) from exc

        errors = {}
        if paired:
            for model in paired[0].predictions:
                try:
                    errors[model] = prediction_error(paired, model).to_obj()
                except AnalyticsError:
                    errors[model] = None
        return {"pairs": [p.to_obj() for p in paired], "errors": errors}

    @app.get("/api/notifications")
    async def notifications(request: Request) -> dict:
        scope = _parse_path(request.query_params.get("scope", gateway.default_site))
        runtime = gateway.runtime_for_path(scope)
        limit = _int_param(request, "limit", 50)
        if limit < 0:
            raise ApiError(400, "limit must be >= 0")
        active_only = request.query_params.get("active", "") in ("1", "true")
        notes = runtime.alerts.recent_notifications(scope, limit, active_only=active_only)
        return {"notifications": [n.to_obj() for n in notes]}

    @app.post("/api/notifications/{notification_id}/ack")
    async def acknowledge(notification_id: int, request: Request) -> dict:
        site_id = request.query_params.get("site", gateway.default_site)
        runtime = gateway.runtime(site_id)
        try:
            note = runtime.alerts.acknowledge(notification_id)
        except UnknownNotificationError as exc:
            raise ApiError(404, str(exc)) from exc
        except AlreadyAcknowledgedError as exc:
            raise ApiError(409, str(exc)) from exc
        return {"notification": note.to_obj()}

    @app.get("/api/status/{path:path}")
    async def meter_status(path: str) -> dict:
        opath = _parse_path(path)
        runtime = gateway.runtime_for_path(opath)
        try:
            # Resolution check so unknown paths 404 instead of reporting OK.
            resolve(runtime.descriptor, opath)
        except PathNotFoundError as exc:
            raise ApiError(404, str(exc)) from exc
        return {
            "path": str(opath),
            "status": runtime.alerts.meter_status(opath).value,
            "active": runtime.alerts.active_count(opath),
        }

    @app.post("/api/session/{session_id}/pose")
    async def post_pose(session_id: str, request: Request) -> dict:
        try:
            body = await request.json()
        except json.JSONDecodeError as exc:
            raise ApiError(400, f"pose body is not valid JSON: {exc.msg}") from exc
        if not isinstance(body, dict):
            raise ApiError(400, "pose body must be a JSON object")
        session = gateway.session_for(session_id, request.query_params.get("site"))
        pose = _pose_from_body(body, session.pose)
        try:
            validate_pose(session.site.descriptor, pose)
        except ValueError as exc:
            raise ApiError(400, str(exc)) from exc
        session.pose = pose
        session.touch()
        session.wake.set()
        return {"session": session.id, "site": session.site.descriptor.id}

    @app.websocket("/api/session/{session_id}/stream")
    async def stream(websocket: WebSocket, session_id: str) -> None:
        await websocket.accept()
        session = gateway.session_for(session_id, websocket.query_params.get("site"))
        if session.stream_attached:
            await websocket.close(code=1008, reason="stream already attached to this session")
            return
        session.stream_attached = True
        session.touch()
        tick_s = gateway.config.refresh_tick_ms / 1000.0
        try:
            await websocket.send_text(json.dumps({
                "type": "hello",
                "session": session.id,
                "site": session.site.descriptor.id,
                "refresh_tick_ms": gateway.config.refresh_tick_ms,
            }))
            while True:
                if gateway.sessions.get(session.id) is not session:
                    await websocket.close(code=1001, reason="session expired")
                    return
                session.touch()  # an attached stream is not idle
                while session.pending_notifications:
                    note_obj = session.pending_notifications.pop(0)
                    await websocket.send_text(json.dumps({
                        "type": "notification", "seq": session.next_seq(), "data": note_obj,
                    }))
                packet_obj = gateway.compose_packet(session)
                await websocket.send_text(json.dumps({
                    "type": "packet", "seq": session.next_seq(), "data": packet_obj,
                }))
                session.wake.clear()
                try:
                    await asyncio.wait_for(session.wake.wait(), timeout=tick_s)
                except asyncio.TimeoutError:
                    pass
        except (WebSocketDisconnect, RuntimeError):
            pass
        finally:
            session.stream_attached = False

    return app


async def _reap_idle_sessions(gateway: Gateway) -> None:
    while True:
        await asyncio.sleep(max(gateway.config.refresh_tick_ms / 1000.0, 1.0))
        gateway.expire_idle_sessions()


def serve(config: ServerConfig) -> None:
    """Run the gateway under uvicorn until interrupted."""
    import uvicorn

    app = create_app(Gateway(config))
    uvicorn.run(
        app,
        host=config.listen_host,
        port=config.listen_port,
        log_level="info",
        ws_ping_interval=None,
    )
