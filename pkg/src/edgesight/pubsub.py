"""Embedded pub/sub transport: a TCP broker speaking JSON lines.

Stands in for an external MQTT broker with the same topic grammar: `+`
matches one level, a trailing `#` matches the rest. Frames are one JSON
object per line:

    {"op": "sub",  "filter": "enerman/demo/#"}
    {"op": "pub",  "topic": "enerman/demo/...", "payload": "<string>"}
    {"op": "msg",  "topic": "...", "payload": "..."}   (broker to client)

Delivery is in-order and reliable while a connection lives (TCP); a consumer
that reconnects re-subscribes and may see a message twice, never corrupted.
Each subscriber has a bounded outbound queue so one stalled consumer cannot
block publishers; overflow drops that consumer's oldest frames.
"""

from __future__ import annotations

import json
import logging
import queue
import socket
import threading
from typing import Callable

logger = logging.getLogger(__name__)

MAX_LINE_BYTES = 1 << 20
SUBSCRIBER_QUEUE_SIZE = 10_000


class PubSubError(Exception):
    pass


def topic_matches(pattern: str, topic: str) -> bool:
    """MQTT-style filter match; `a/#` also matches `a` itself."""
    p_segments = pattern.split("/")
    t_segments = topic.split("/")
    for i, seg in enumerate(p_segments):
        if seg == "#":
            return True
        if i >= len(t_segments):
            return False
        if seg != "+" and seg != t_segments[i]:
            return False
    return len(t_segments) == len(p_segments)


def valid_filter(pattern: str) -> bool:
    if not pattern:
        return False
    segments = pattern.split("/")
    for i, seg in enumerate(segments):
        if seg == "":
            return False
        if seg == "#" and i != len(segments) - 1:
            return False
        if "#" in seg and seg != "#":
            return False
        if "+" in seg and seg != "+":
            return False
    return True


class _Connection:
    def __init__(self, sock: socket.socket, peer: str):
        self.sock = sock
        self.peer = peer
        self.filters: list[str] = []
        self.outbound: queue.Queue[bytes | None] = queue.Queue(maxsize=SUBSCRIBER_QUEUE_SIZE)
        self.alive = True

    def enqueue(self, frame: bytes) -> None:
        while True:
            try:
                self.outbound.put_nowait(frame)
                return
            except queue.Full:
                try:
                    self.outbound.get_nowait()  # drop oldest for this consumer
                except queue.Empty:
                    pass


class Broker:
    """Tiny in-process broker; start() binds, stop() tears everything down."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0):
        self.host = host
        self.port = port
        self._server: socket.socket | None = None
        self._connections: set[_Connection] = set()
        self._lock = threading.Lock()
        self._accept_thread: threading.Thread | None = None
        self._stopping = threading.Event()

    def start(self) -> "Broker":
        server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        server.bind((self.host, self.port))
        server.listen(64)
        self.port = server.getsockname()[1]
        self._server = server
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._accept_thread.start()
        logger.info("broker listening on %s:%d", self.host, self.port)
        return self

    def stop(self) -> None:
        self._stopping.set()
        if self._server is not None:
            try:
                self._server.close()
            except OSError:
                pass
        with self._lock:
            connections = list(self._connections)
        for conn in connections:
            self._drop(conn)
        if self._accept_thread is not None:
            self._accept_thread.join(timeout=2)

    def __enter__(self) -> "Broker":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

    @property
    def address(self) -> str:
        return f"{self.host}:{self.port}"

    def connection_count(self) -> int:
        with self._lock:
            return len(self._connections)

    def _accept_loop(self) -> None:
        assert self._server is not None
        while not self._stopping.is_set():
            try:
                sock, addr = self._server.accept()
            except OSError:
                return
            conn = _Connection(sock, f"{addr[0]}:{addr[1]}")
            with self._lock:
                self._connections.add(conn)
            threading.Thread(target=self._read_loop, args=(conn,), daemon=True).start()
            threading.Thread(target=self._write_loop, args=(conn,), daemon=True).start()

    def _read_loop(self, conn: _Connection) -> None:
        try:
            for line in _lines(conn.sock):
                try:
                    frame = json.loads(line)
                except json.JSONDecodeError:
                    logger.warning("dropping malformed frame from %s", conn.peer)
                    continue
                self._handle(conn, frame)
        except OSError:
            pass
        finally:
            self._drop(conn)

    def _write_loop(self, conn: _Connection) -> None:
        while True:
            frame = conn.outbound.get()
            if frame is None:
                return
            try:
                conn.sock.sendall(frame)
            except OSError:
                self._drop(conn)
                return

    def _handle(self, conn: _Connection, frame: dict) -> None:
        op = frame.get("op")
        if op == "sub":
            pattern = frame.get("filter", "")
            if valid_filter(pattern):
                with self._lock:
                    if pattern not in conn.filters:
                        conn.filters.append(pattern)
            else:
                logger.warning("ignoring invalid filter %r from %s", pattern, conn.peer)
        elif op == "unsub":
            with self._lock:
                if frame.get("filter") in conn.filters:
                    conn.filters.remove(frame["filter"])
        elif op == "pub":
            topic = frame.get("topic")
            payload = frame.get("payload")
            if not isinstance(topic, str) or not isinstance(payload, str):
                logger.warning("ignoring malformed publish from %s", conn.peer)
                return
            encoded = (json.dumps({"op": "msg", "topic": topic, "payload": payload}) + "\n").encode()
            with self._lock:
                targets = [
                    c for c in self._connections
                    if c.alive and any(topic_matches(f, topic) for f in c.filters)
                ]
            for target in targets:
                target.enqueue(encoded)
        else:
            logger.warning("unknown op %r from %s", op, conn.peer)

    def _drop(self, conn: _Connection) -> None:
        with self._lock:
            if conn not in self._connections:
                return
            self._connections.discard(conn)
        conn.alive = False
        conn.outbound.put(None)
        _shutdown_and_close(conn.sock)


class BrokerClient:
    """Publisher/subscriber endpoint for one broker connection.

    Callbacks run on the client's reader thread; keep them quick or hand off.
    The client does not reconnect by itself: a dropped connection surfaces as
    closed(), and the owner decides when to dial again.
    """

    def __init__(self, host: str, port: int, connect_timeout: float = 5.0):
        self._sock = socket.create_connection((host, port), timeout=connect_timeout)
        self._sock.settimeout(None)
        self._write_lock = threading.Lock()
        self._subscriptions: list[tuple[str, Callable[[str, str], None]]] = []
        self._closed = threading.Event()
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def publish(self, topic: str, payload: str) -> None:
        self._send({"op": "pub", "topic": topic, "payload": payload})

    def subscribe(self, pattern: str, callback: Callable[[str, str], None]) -> None:
        if not valid_filter(pattern):
            raise PubSubError(f"invalid topic filter {pattern!r}")
        self._subscriptions.append((pattern, callback))
        self._send({"op": "sub", "filter": pattern})

    def closed(self) -> bool:
        return self._closed.is_set()

    def close(self) -> None:
        self._closed.set()
        _shutdown_and_close(self._sock)

    def _send(self, frame: dict) -> None:
        if self._closed.is_set():
            raise PubSubError("client is closed")
        data = (json.dumps(frame) + "\n").encode()
        try:
            with self._write_lock:
                self._sock.sendall(data)
        except OSError as exc:
            self.close()
            raise PubSubError(f"broker connection lost: {exc}") from exc

    def _read_loop(self) -> None:
        try:
            for line in _lines(self._sock):
                try:
                    frame = json.loads(line)
                except json.JSONDecodeError:
                    continue
                if frame.get("op") != "msg":
                    continue
                topic = frame.get("topic", "")
                payload = frame.get("payload", "")
                for pattern, callback in list(self._subscriptions):
                    if topic_matches(pattern, topic):
                        try:
                            callback(topic, payload)
                        except Exception:
                            logger.exception("subscriber callback failed for %s", topic)
        except OSError:
            pass
        finally:
            self._closed.set()


def _shutdown_and_close(sock: socket.socket) -> None:
    # shutdown() wakes any thread blocked in recv(); close() alone would not.
    try:
        sock.shutdown(socket.SHUT_RDWR)
    except OSError:
        pass
    try:
        sock.close()
    except OSError:
        pass


def _lines(sock: socket.socket):
    """Yield newline-delimited records from a socket until it closes."""
    buffer = b""
    while True:
        try:
            chunk = sock.recv(65536)
        except OSError:
            return
        if not chunk:
            return
        buffer += chunk
        if len(buffer) > MAX_LINE_BYTES:
            logger.warning("peer exceeded frame size limit; closing")
            return
        while b"\n" in buffer:
            line, buffer = buffer.split(b"\n", 1)
            if line:
                yield line


def parse_address(address: str, default_port: int = 1883) -> tuple[str, int]:
    """Split "host:port" (port optional) into a connectable pair."""
    if ":" in address:
        host, _, port_text = address.rpartition(":")
        try:
            return host or "127.0.0.1", int(port_text)
        except ValueError:
            raise PubSubError(f"bad broker address {address!r}") from None
    return address, default_port
