"""Length-prefixed JSON RPC over loopback TCP.

Frame layout: a 4-byte big-endian unsigned length, then that many bytes of
canonical JSON (UTF-8, keys sorted, floats in shortest round-trip form).
Three envelope kinds cross the wire:

    {"args": [...], "id": N, "kind": "call", "method": "name"}
    {"id": N, "kind": "result", "value": ...}
    {"id": N, "kind": "error", "message": "text"}

Values are JSON scalars, sequences, and string-keyed mappings only; handle
markers never appear on the wire, they live in launch manifests.
"""
from __future__ import annotations

import errno
import itertools
import json
import logging
import math
import socket
import struct
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

from .errors import (
    AddressInUseError,
    ConnectionFailedError,
    FrameTooLargeError,
    InvalidArgumentError,
    NeedMoreData,
    ProtocolError,
    RemoteError,
    TimedOutError,
    TransportError,
)

log = logging.getLogger("launchgraph.wire")

MAX_FRAME_LEN = 2**31 - 1
MAX_CALL_ID = 2**64 - 1

SERIALIZED = "serialized"
CONCURRENT = "concurrent"
DISPATCH_MODES = (SERIALIZED, CONCURRENT)

_LEN = struct.Struct(">I")
_KINDS = ("call", "result", "error")
# Exact key sets per kind; anything else on the wire is a protocol error.
_KEYS = {
    "call": frozenset(("args", "id", "kind", "method")),
    "result": frozenset(("id", "kind", "value")),
    "error": frozenset(("id", "kind", "message")),
}


@dataclass
class Envelope:
    """One message: a call, a result, or an error."""

    kind: str
    id: int
    method: str | None = None
    args: list = field(default_factory=list)
    value: Any = None
    message: str | None = None

    @classmethod
    def call(cls, call_id: int, method: str, args=()) -> "Envelope":
        return cls(kind="call", id=call_id, method=method, args=list(args) if isinstance(args, (list, tuple)) else args)

    @classmethod
    def result(cls, call_id: int, value) -> "Envelope":
        return cls(kind="result", id=call_id, value=value)

    @classmethod
    def error(cls, call_id: int, message: str) -> "Envelope":
        return cls(kind="error", id=call_id, message=message)


def _check_wire_value(value, path: str) -> None:
    if value is None or isinstance(value, (bool, str)):
        return
    if isinstance(value, int):
        return
    if isinstance(value, float):
        if not math.isfinite(value):
            raise InvalidArgumentError(f"non-finite float at {path}: {value!r}")
        return
    if isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            _check_wire_value(item, f"{path}[{i}]")
        return
    if isinstance(value, dict):
        for key, item in value.items():
            if not isinstance(key, str):
                raise InvalidArgumentError(f"non-string mapping key at {path}: {key!r}")
            _check_wire_value(item, f"{path}[{key!r}]")
        return
    raise InvalidArgumentError(f"not a wire value at {path}: {type(value).__name__}")


def _check_call_id(call_id) -> None:
    if isinstance(call_id, bool) or not isinstance(call_id, int):
        raise InvalidArgumentError(f"call id must be an integer, got {type(call_id).__name__}")
    if not 0 <= call_id <= MAX_CALL_ID:
        raise InvalidArgumentError(f"call id out of unsigned 64-bit range: {call_id}")


def _envelope_body(env: Envelope) -> dict:
    _check_call_id(env.id)
    if env.kind == "call":
        if not isinstance(env.method, str) or not env.method:
            raise InvalidArgumentError("call envelope needs a nonempty method name")
        if not isinstance(env.args, (list, tuple)):
            raise InvalidArgumentError("call args must be a sequence")
        _check_wire_value(list(env.args), "args")
        return {"args": list(env.args), "id": env.id, "kind": "call", "method": env.method}
    if env.kind == "result":
        _check_wire_value(env.value, "value")
        return {"id": env.id, "kind": "result", "value": env.value}
    if env.kind == "error":
        if not isinstance(env.message, str):
            raise InvalidArgumentError("error envelope needs a string message")
        return {"id": env.id, "kind": "error", "message": env.message}
    raise InvalidArgumentError(f"unknown envelope kind: {env.kind!r}")


def encode_frame(envelope: Envelope) -> bytes:
    """Serialize one envelope to its exact wire bytes."""
    body = _envelope_body(envelope)
    payload = json.dumps(
        body, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False
    ).encode("utf-8")
    if len(payload) > MAX_FRAME_LEN:
        raise FrameTooLargeError(f"payload of {len(payload)} bytes exceeds {MAX_FRAME_LEN}")
    return _LEN.pack(len(payload)) + payload


def _reject_constant(name: str):
    raise ValueError(f"non-finite JSON constant: {name}")


def _decode_body(payload: bytes) -> Envelope:
    try:
        body = json.loads(payload.decode("utf-8"), parse_constant=_reject_constant)
    except (UnicodeDecodeError, ValueError) as exc:
        raise ProtocolError(f"malformed payload: {exc}") from None
    if not isinstance(body, dict):
        raise ProtocolError(f"payload is not an object: {type(body).__name__}")
    kind = body.get("kind")
    if kind not in _KINDS:
        raise ProtocolError(f"unknown kind: {kind!r}")
    if set(body) != _KEYS[kind]:
        raise ProtocolError(f"wrong keys for {kind}: {sorted(body)}")
    call_id = body["id"]
    if isinstance(call_id, bool) or not isinstance(call_id, int) or not 0 <= call_id <= MAX_CALL_ID:
        raise ProtocolError(f"bad call id: {call_id!r}")
    if kind == "call":
        if not isinstance(body["method"], str) or not body["method"]:
            raise ProtocolError("call without a method name")
        if not isinstance(body["args"], list):
            raise ProtocolError("call args must be an array")
        return Envelope.call(call_id, body["method"], body["args"])
    if kind == "result":
        return Envelope.result(call_id, body["value"])
    if not isinstance(body["message"], str):
        raise ProtocolError("error message must be a string")
    return Envelope.error(call_id, body["message"])


def decode_frame(data) -> tuple[Envelope, int]:
    """Decode the first frame in `data`; returns (envelope, bytes consumed).

    Bytes past the first frame are left untouched. Raises NeedMoreData when
    the buffer ends mid-frame and ProtocolError for malformed payloads.
    """
    if len(data) < 4:
        raise NeedMoreData(f"have {len(data)} bytes, need a 4-byte length prefix")
    (n,) = _LEN.unpack_from(data, 0)
    if n > MAX_FRAME_LEN:
        raise ProtocolError(f"length prefix {n} exceeds {MAX_FRAME_LEN}")
    if len(data) < 4 + n:
        raise NeedMoreData(f"frame needs {4 + n} bytes, have {len(data)}")
    return _decode_body(bytes(data[4 : 4 + n])), 4 + n


@dataclass(frozen=True)
class Endpoint:
    """A dialable loopback address."""

    host: str
    port: int

    def __post_init__(self):
        if not self.host:
            raise InvalidArgumentError("endpoint host must be nonempty")
        if not isinstance(self.port, int) or not 1 <= self.port <= 65535:
            raise InvalidArgumentError(f"endpoint port out of range: {self.port!r}")

    def __str__(self) -> str:
        return f"{self.host}:{self.port}"

    @classmethod
    def parse(cls, text: str) -> "Endpoint":
        host, sep, port = text.rpartition(":")
        if not sep:
            raise InvalidArgumentError(f"not a host:port endpoint: {text!r}")
        try:
            return cls(host, int(port))
        except ValueError:
            raise InvalidArgumentError(f"not a host:port endpoint: {text!r}") from None


class CallFuture:
    """Outcome of one asynchronous call: pending, then resolved or failed."""

    __slots__ = ("_event", "_value", "_error")

    def __init__(self):
        self._event = threading.Event()
        self._value = None
        self._error: Exception | None = None

    def done(self) -> bool:
        return self._event.is_set()

    def result(self, timeout: float | None = None):
        """Block for the reply; raises the remote or transport failure."""
        if not self._event.wait(timeout):
            raise TimedOutError(f"no reply within {timeout} s")
        if self._error is not None:
            raise self._error
        return self._value

    def _resolve(self, value) -> None:
        if not self._event.is_set():
            self._value = value
            self._event.set()

    def _fail(self, error: Exception) -> None:
        if not self._event.is_set():
            self._error = error
            self._event.set()


def _read_exact(sock: socket.socket, n: int, closed: threading.Event | None) -> bytes | None:
    """Read exactly n bytes; None on EOF, error, or server shutdown."""
    chunks = []
    remaining = n
    while remaining:
        try:
            chunk = sock.recv(remaining)
        except socket.timeout:
            if closed is not None and closed.is_set():
                return None
            continue
        except OSError:
            return None
        if not chunk:
            return None
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def _method_table(service) -> Mapping[str, Callable]:
    if isinstance(service, Mapping):
        return dict(service)
    table = getattr(service, "methods", None)
    if isinstance(table, Mapping):
        return dict(table)
    raise InvalidArgumentError(
        f"cannot serve {type(service).__name__}: expected a method mapping or .methods attribute"
    )


class Server:
    """Accepts connections on one endpoint and dispatches calls.

    The listener binds immediately so peers can dial before the service
    instance exists; calls that arrive early wait for set_service. Under
    serialized dispatch at most one method body runs at any instant; under
    concurrent dispatch each call gets its own thread.
    """

    def __init__(self, endpoint: Endpoint | None = None):
        host = endpoint.host if endpoint else "127.0.0.1"
        port = endpoint.port if endpoint else 0
        sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            sock.bind((host, port))
        except OSError as exc:
            sock.close()
            if exc.errno == errno.EADDRINUSE:
                raise AddressInUseError(f"{host}:{port} is already bound") from None
            raise
        sock.listen(128)
        sock.settimeout(0.2)
        self._sock = sock
        self.endpoint = Endpoint(host, sock.getsockname()[1])
        self._methods: Mapping[str, Callable] | None = None
        self._dispatch = SERIALIZED
        self._ready = threading.Event()
        self._closed = threading.Event()
        self._service_lock = threading.Lock()
        self._conn_lock = threading.Lock()
        self._conns: dict[socket.socket, threading.Lock] = {}
        self._accept_thread = threading.Thread(
            target=self._accept_loop, daemon=True, name=f"lgserve-{self.endpoint.port}"
        )
        self._started = False

    def set_service(self, service, dispatch: str = SERIALIZED) -> None:
        """Publish the method table; early calls block until this happens."""
        if dispatch not in DISPATCH_MODES:
            raise InvalidArgumentError(f"unknown dispatch mode: {dispatch!r}")
        self._methods = _method_table(service)
        self._dispatch = dispatch
        self._ready.set()

    def start(self) -> None:
        if not self._started:
            self._started = True
            self._accept_thread.start()

    def stop(self) -> None:
        """Close the listener and all connections; safe to call twice."""
        if self._closed.is_set():
            return
        self._closed.set()
        self._ready.set()
        try:
            self._sock.close()
        except OSError:
            pass
        with self._conn_lock:
            conns = list(self._conns)
            self._conns.clear()
        for conn in conns:
            _close_socket(conn)
        if self._started and self._accept_thread is not threading.current_thread():
            self._accept_thread.join(timeout=2.0)

    def _accept_loop(self) -> None:
        while not self._closed.is_set():
            try:
                conn, _addr = self._sock.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            conn.settimeout(0.2)
            with self._conn_lock:
                if self._closed.is_set():
                    _close_socket(conn)
                    break
                self._conns[conn] = threading.Lock()
            threading.Thread(
                target=self._conn_loop, args=(conn,), daemon=True, name="lgserve-conn"
            ).start()

    def _conn_loop(self, conn: socket.socket) -> None:
        try:
            while not self._closed.is_set():
                header = _read_exact(conn, 4, self._closed)
                if header is None:
                    break
                (n,) = _LEN.unpack(header)
                if n > MAX_FRAME_LEN:
                    log.warning("dropping connection: oversized frame of %d bytes", n)
                    break
                payload = _read_exact(conn, n, self._closed)
                if payload is None:
                    break
                try:
                    env = _decode_body(payload)
                except ProtocolError as exc:
                    log.warning("dropping connection: %s", exc)
                    break
                if env.kind != "call":
                    log.warning("dropping connection: unexpected %s envelope", env.kind)
                    break
                self._dispatch_call(conn, env)
        finally:
            with self._conn_lock:
                self._conns.pop(conn, None)
            _close_socket(conn)

    def _dispatch_call(self, conn: socket.socket, env: Envelope) -> None:
        while not self._ready.wait(timeout=0.2):
            if self._closed.is_set():
                return
        fn = self._methods.get(env.method)
        if fn is None:
            self._send(conn, encode_frame(Envelope.error(env.id, f"no such method: {env.method}")))
            return
        if self._dispatch == SERIALIZED:
            with self._service_lock:
                self._invoke(conn, env, fn)
        else:
            threading.Thread(
                target=self._invoke, args=(conn, env, fn), daemon=True, name="lgserve-call"
            ).start()

    def _invoke(self, conn: socket.socket, env: Envelope, fn: Callable) -> None:
        try:
            value = fn(*env.args)
        except Exception as exc:  # any failure travels back as an error envelope
            self._send(conn, encode_frame(Envelope.error(env.id, str(exc) or type(exc).__name__)))
            return
        try:
            frame = encode_frame(Envelope.result(env.id, value))
        except (InvalidArgumentError, FrameTooLargeError) as exc:
            frame = encode_frame(Envelope.error(env.id, f"unserializable result: {exc}"))
        self._send(conn, frame)

    def _send(self, conn: socket.socket, frame: bytes) -> None:
        with self._conn_lock:
            lock = self._conns.get(conn)
        if lock is None:
            return
        try:
            with lock:
                conn.sendall(frame)
        except OSError:
            with self._conn_lock:
                self._conns.pop(conn, None)
            _close_socket(conn)


def _close_socket(sock: socket.socket) -> None:
    try:
        sock.shutdown(socket.SHUT_RDWR)
    except OSError:
        pass
    try:
        sock.close()
    except OSError:
        pass


def serve(service, endpoint: Endpoint | None = None, dispatch: str = SERIALIZED) -> Server:
    """Bind a server for `service` and start accepting calls.

    `service` is a mapping of method names to callables, or any object with
    such a mapping as its .methods attribute. The registry never exposes a
    method named "run", so it cannot be called remotely.
    """
    table = _method_table(service)
    if not table:
        raise InvalidArgumentError("refusing to serve an empty method table")
    if dispatch not in DISPATCH_MODES:
        raise InvalidArgumentError(f"unknown dispatch mode: {dispatch!r}")
    server = Server(endpoint)
    server.set_service(table, dispatch)
    server.start()
    return server


class _RemoteMethod:
    __slots__ = ("_client", "_name", "_async")

    def __init__(self, client: "Client", name: str, is_async: bool):
        self._client = client
        self._name = name
        self._async = is_async

    def __call__(self, *args):
        if self._async:
            return self._client.call_async(self._name, *args)
        return self._client.call(self._name, *args)


class _FutureNamespace:
    """client.futures.method(...) dispatches call_async("method", ...)."""

    __slots__ = ("_client",)

    def __init__(self, client: "Client"):
        self._client = client

    def __getattr__(self, name: str):
        if name.startswith("_"):
            raise AttributeError(name)
        return _RemoteMethod(self._client, name, is_async=True)


class Client:
    """Thread-safe connection to one server.

    Replies are matched to callers by call id, so any number of threads may
    issue calls concurrently and out-of-order replies resolve correctly.
    Remote method sugar: client.some_method(x) is client.call("some_method", x)
    and client.futures.some_method(x) is the call_async form.
    """

    def __init__(self, sock: socket.socket, endpoint: Endpoint):
        sock.settimeout(None)
        self._sock = sock
        self.endpoint = endpoint
        self._ids = itertools.count(1)
        self._send_lock = threading.Lock()
        self._state_lock = threading.Lock()
        self._pending: dict[int, CallFuture] = {}
        self._closed = False
        self._reader = threading.Thread(
            target=self._read_loop, daemon=True, name=f"lgclient-{endpoint.port}"
        )
        self._reader.start()

    def call(self, method: str, *args, timeout: float | None = None):
        """Call and block for the result; `timeout` is an optional deadline."""
        return self.call_async(method, *args).result(timeout)

    def call_async(self, method: str, *args) -> CallFuture:
        future = CallFuture()
        with self._state_lock:
            if self._closed:
                future._fail(TransportError(f"connection to {self.endpoint} is closed"))
                return future
            call_id = next(self._ids)
        frame = encode_frame(Envelope.call(call_id, method, list(args)))
        with self._state_lock:
            self._pending[call_id] = future
        try:
            with self._send_lock:
                self._sock.sendall(frame)
        except OSError as exc:
            with self._state_lock:
                self._pending.pop(call_id, None)
            future._fail(TransportError(f"send to {self.endpoint} failed: {exc}"))
        return future

    def __getattr__(self, name: str):
        if name.startswith("_"):
            raise AttributeError(name)
        return _RemoteMethod(self, name, is_async=False)

    @property
    def futures(self) -> _FutureNamespace:
        return _FutureNamespace(self)

    def close(self) -> None:
        with self._state_lock:
            if self._closed:
                return
            self._closed = True
        _close_socket(self._sock)
        if self._reader is not threading.current_thread():
            self._reader.join(timeout=2.0)

    def _read_loop(self) -> None:
        sock = self._sock
        try:
            while True:
                header = _read_exact(sock, 4, None)
                if header is None:
                    break
                (n,) = _LEN.unpack(header)
                if n > MAX_FRAME_LEN:
                    break
                payload = _read_exact(sock, n, None)
                if payload is None:
                    break
                try:
                    env = _decode_body(payload)
                except ProtocolError as exc:
                    log.warning("dropping reply: %s", exc)
                    break
                with self._state_lock:
                    future = self._pending.pop(env.id, None)
                if future is None:
                    log.debug("reply for unknown call id %d", env.id)
                    continue
                if env.kind == "result":
                    future._resolve(env.value)
                elif env.kind == "error":
                    future._fail(RemoteError(env.message))
                else:
                    future._fail(TransportError(f"server sent a {env.kind} envelope"))
        finally:
            with self._state_lock:
                self._closed = True
                pending = list(self._pending.values())
                self._pending.clear()
            for future in pending:
                future._fail(TransportError(f"connection to {self.endpoint} closed mid-call"))


def connect(endpoint: Endpoint, deadline: float = 10.0) -> Client:
    """Dial an endpoint, retrying with backoff until `deadline` seconds pass."""
    stop_at = time.monotonic() + deadline
    delay = 0.01
    while True:
        budget = max(0.05, min(1.0, stop_at - time.monotonic()))
        try:
            sock = socket.create_connection((endpoint.host, endpoint.port), timeout=budget)
        except OSError as exc:
            if time.monotonic() + delay >= stop_at:
                raise ConnectionFailedError(
                    f"could not reach {endpoint} within {deadline:.1f} s: {exc}"
                ) from None
            time.sleep(delay)
            delay = min(delay * 2, 0.2)
            continue
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        return Client(sock, endpoint)
