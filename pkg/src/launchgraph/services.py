"""Execution-phase machinery: the service registry, handle dereferencing,
and turning node specs into runnable executables.

Service classes are registered by name with an explicit method list; specs
carry only the name, so graphs stay serializable and nothing is constructed
until an executable actually runs ("deferred constructors").
"""
from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass
from typing import Callable

from .errors import (
    AlreadyRegisteredError,
    InvalidArgumentError,
    InvalidStateError,
    UnknownFactoryError,
    UnresolvedPlaceholderError,
)
from .topology import (
    Handle,
    HandleRef,
    NodeSpec,
    _iter_refs,
    cacher_node,
    colocation_node,
    leaf_node,
    service_node,
)
from .wire import CONCURRENT, DISPATCH_MODES, SERIALIZED, Client, Endpoint, Server, connect

__all__ = [
    "DEFAULT_REGISTRY",
    "Executable",
    "ExecutionContext",
    "RegisteredService",
    "ServiceRegistry",
    "cacher_node",
    "colocation_node",
    "dereference",
    "leaf_node",
    "register",
    "service_node",
    "to_executables",
]


@dataclass(frozen=True)
class RegisteredService:
    """One factory entry: how to construct a service and what it exposes."""

    name: str
    constructor: Callable
    methods: tuple[str, ...]
    run: str | None
    dispatch: str
    module: str


class ServiceRegistry:
    """Name → factory mapping, frozen in practice once launch begins."""

    def __init__(self):
        self._services: dict[str, RegisteredService] = {}

    def register(self, name, constructor, methods=(), run=None, dispatch=SERIALIZED) -> None:
        if not isinstance(name, str) or not name:
            raise InvalidArgumentError("factory name must be a nonempty string")
        if name in self._services:
            raise AlreadyRegisteredError(f"factory {name!r} is already registered")
        if not callable(constructor):
            raise InvalidArgumentError(f"constructor for {name!r} is not callable")
        methods = tuple(methods)
        if len(set(methods)) != len(methods):
            raise InvalidArgumentError(f"duplicate method names for {name!r}")
        for method in methods:
            if not isinstance(method, str) or not method:
                raise InvalidArgumentError(f"bad method name {method!r} for {name!r}")
        # The entry procedure drives the node; it is never callable remotely.
        if "run" in methods:
            raise InvalidArgumentError('"run" cannot be a served method')
        if run is not None:
            if not isinstance(run, str) or not run:
                raise InvalidArgumentError(f"run entry for {name!r} must be a method name")
            if run in methods:
                raise InvalidArgumentError(f"entry procedure {run!r} cannot also be served")
        if dispatch not in DISPATCH_MODES:
            raise InvalidArgumentError(f"unknown dispatch mode {dispatch!r}")
        self._services[name] = RegisteredService(
            name=name,
            constructor=constructor,
            methods=methods,
            run=run,
            dispatch=dispatch,
            module=getattr(constructor, "__module__", "") or "",
        )

    def get(self, name: str) -> RegisteredService:
        try:
            return self._services[name]
        except KeyError:
            raise UnknownFactoryError(f"no factory registered as {name!r}") from None

    def __contains__(self, name) -> bool:
        return name in self._services

    def names(self):
        return tuple(self._services)


DEFAULT_REGISTRY = ServiceRegistry()


def register(name, constructor=None, *, methods=(), run=None, dispatch=SERIALIZED, registry=None):
    """Register a service class; usable directly or as a class decorator."""
    target = registry if registry is not None else DEFAULT_REGISTRY
    if constructor is None:
        def decorator(cls):
            target.register(name, cls, methods=methods, run=run, dispatch=dispatch)
            return cls
        return decorator
    target.register(name, constructor, methods=methods, run=run, dispatch=dispatch)
    return constructor


def dereference(handle, table, deadline: float = 10.0) -> Client:
    """Turn a handle plus the address table into a live client."""
    if isinstance(handle, Handle):
        handle = HandleRef(handle)
    if not isinstance(handle, HandleRef):
        raise InvalidArgumentError(f"cannot dereference {type(handle).__name__}")
    token = handle.placeholder
    if token is None:
        raise UnresolvedPlaceholderError("handle was never added to a program")
    endpoint = table.get(token)
    if endpoint is None:
        raise UnresolvedPlaceholderError(f"address table has no entry for {token!r}")
    if isinstance(endpoint, str):
        endpoint = Endpoint.parse(endpoint)
    return connect(endpoint, deadline)


class ExecutionContext:
    """Per-executable environment: address table, registry, stop signal,
    and bookkeeping so close() tears down every connection it opened."""

    def __init__(self, table, registry: ServiceRegistry, stop_event=None, connect_deadline=10.0):
        self.table = dict(table)
        self.registry = registry
        self.stop_event = stop_event if stop_event is not None else threading.Event()
        self.connect_deadline = connect_deadline
        self._lock = threading.Lock()
        self._clients: list[Client] = []
        self._servers: list[Server] = []
        self._closed = False

    def dereference(self, handle) -> Client:
        client = dereference(handle, self.table, self.connect_deadline)
        with self._lock:
            if self._closed:
                client.close()
                raise InvalidStateError("execution context is closed")
            self._clients.append(client)
        return client

    def add_server(self, server: Server) -> None:
        with self._lock:
            if self._closed:
                server.stop()
                raise InvalidStateError("execution context is closed")
            self._servers.append(server)

    def resolve_args(self, args):
        """Deep-copy args with every handle reference dialed into a client."""
        if isinstance(args, HandleRef):
            return self.dereference(args)
        if isinstance(args, list):
            return [self.resolve_args(a) for a in args]
        if isinstance(args, dict):
            return {k: self.resolve_args(v) for k, v in args.items()}
        return args

    def close(self) -> None:
        """Unblocks anything waiting on this executable's connections."""
        with self._lock:
            if self._closed:
                return
            self._closed = True
            clients, self._clients = self._clients, []
            servers, self._servers = self._servers, []
        self.stop_event.set()
        for server in servers:
            server.stop()
        for client in clients:
            client.close()


@dataclass
class Executable:
    """The materialized unit of computation one node yields.

    runner(ctx, on_running) does all the work: dereference args, construct
    the service, serve and/or drive it, return when the node is done.
    on_running fires once the executable is actually up.
    """

    node_id: int
    index: int
    name: str
    serves: str | None
    same_host: bool
    same_process: bool
    runner: Callable


class Cacher:
    """Read-through memoizing proxy over one upstream client.

    Entries are keyed by method name plus the canonical serialization of
    the arguments; expiry is lazy, checked on read against a monotonic
    clock. A fetch runs outside the lock, so concurrent misses on one key
    may duplicate upstream work; they never corrupt the table.
    """

    def __init__(self, upstream: Client, ttl: float):
        self._upstream = upstream
        self._ttl = ttl
        self._lock = threading.Lock()
        self._entries: dict[str, tuple[object, float]] = {}

    def lookup(self, method: str, args):
        key = method + "/" + json.dumps(list(args), sort_keys=True, separators=(",", ":"))
        with self._lock:
            entry = self._entries.get(key)
            if entry is not None and time.monotonic() - entry[1] < self._ttl:
                return entry[0]
        value = self._upstream.call(method, *args)
        with self._lock:
            self._entries[key] = (value, time.monotonic())
        return value

    def proxy_methods(self, names):
        def make(method):
            return lambda *args: self.lookup(method, args)

        return {name: make(name) for name in names}


def _service_runner(spec: NodeSpec, token: str, factory: str, args):
    def runner(ctx: ExecutionContext, on_running):
        registration = ctx.registry.get(factory)
        endpoint = ctx.table[token]
        # Bind before constructing: peers may dial this node while its own
        # constructor is still dereferencing handles, which is what makes
        # cyclic topologies start up at all. Early calls wait for set_service.
        server = Server(endpoint if isinstance(endpoint, Endpoint) else Endpoint.parse(endpoint))
        ctx.add_server(server)
        server.start()
        try:
            resolved = ctx.resolve_args(args)
            instance = registration.constructor(*resolved)
            table = {}
            for method in registration.methods:
                fn = getattr(instance, method, None)
                if not callable(fn):
                    raise InvalidArgumentError(
                        f"{factory} instance has no callable method {method!r}"
                    )
                table[method] = fn
            server.set_service(table, registration.dispatch)
            on_running()
            if registration.run is not None:
                entry = getattr(instance, registration.run, None)
                if not callable(entry):
                    raise InvalidArgumentError(
                        f"{factory} instance has no entry procedure {registration.run!r}"
                    )
                entry()
            else:
                ctx.stop_event.wait()
        finally:
            server.stop()

    return runner


def _leaf_runner(spec: NodeSpec, factory: str, args):
    def runner(ctx: ExecutionContext, on_running):
        registration = ctx.registry.get(factory)
        if registration.run is None:
            raise InvalidArgumentError(f"leaf factory {factory!r} has no entry procedure")
        resolved = ctx.resolve_args(args)
        instance = registration.constructor(*resolved)
        entry = getattr(instance, registration.run, None)
        if not callable(entry):
            raise InvalidArgumentError(
                f"{factory} instance has no entry procedure {registration.run!r}"
            )
        on_running()
        entry()

    return runner


def _cacher_runner(spec: NodeSpec, token: str, factory: str, args):
    def runner(ctx: ExecutionContext, on_running):
        registration = ctx.registry.get(factory)
        endpoint = ctx.table[token]
        server = Server(endpoint if isinstance(endpoint, Endpoint) else Endpoint.parse(endpoint))
        ctx.add_server(server)
        server.start()
        try:
            upstream = ctx.dereference(args[0])
            cacher = Cacher(upstream, args[1])
            # Reads are lock-cheap; concurrent dispatch keeps a slow upstream
            # fetch from stalling fresh-entry traffic.
            server.set_service(cacher.proxy_methods(registration.methods), CONCURRENT)
            on_running()
            ctx.stop_event.wait()
        finally:
            server.stop()

    return runner


def _check_spec_addresses(spec_args, table, where: str) -> None:
    for ref in _iter_refs(spec_args):
        token = ref.placeholder
        if token is None or token not in table:
            raise UnresolvedPlaceholderError(f"{where} references {token!r} which has no address")


def _make_executable(spec, child, node_id, index, token, table, registry, same_host, same_process):
    kind = child.kind
    factory = child.factory
    registration = registry.get(factory)
    label = token if token is not None else f"n{node_id}"
    name = f"{label}:{factory}"
    _check_spec_addresses(child.args, table, name)
    if kind == "service":
        if not registration.methods and registration.run is None:
            raise InvalidArgumentError(f"{factory!r} serves no methods and has no entry procedure")
        if token not in table:
            raise UnresolvedPlaceholderError(f"{name} has no allocated endpoint")
        runner = _service_runner(child, token, factory, child.args)
    elif kind == "cacher":
        if not registration.methods:
            raise InvalidArgumentError(f"cannot cache {factory!r}: it serves no methods")
        if token not in table:
            raise UnresolvedPlaceholderError(f"{name} has no allocated endpoint")
        runner = _cacher_runner(child, token, factory, child.args)
    elif kind == "leaf":
        if registration.run is None:
            raise InvalidArgumentError(f"leaf factory {factory!r} has no entry procedure")
        runner = _leaf_runner(child, factory, child.args)
    else:
        raise InvalidStateError(f"cannot materialize a {kind} node")
    return Executable(
        node_id=node_id,
        index=index,
        name=name,
        serves=token if kind in ("service", "cacher") else None,
        same_host=same_host,
        same_process=same_process,
        runner=runner,
    )


def to_executables(spec: NodeSpec, table, registry: ServiceRegistry) -> list[Executable]:
    """Materialize one node spec into executables.

    Plain nodes yield one executable; a colocation node yields one per
    child, tagged same_host (and same_process under mode="threads").
    Factory and address resolution are checked here, eagerly, so launch
    fails fast instead of inside a worker thread.
    """
    if spec.node_id is None:
        raise InvalidStateError("node spec was never added to a program")
    if spec.kind == "deferred":
        raise InvalidStateError(f"node {spec.node_id} was deferred but never bound")
    if spec.kind == "colocation":
        same_process = spec.mode == "threads"
        out = []
        for j, child in enumerate(spec.children):
            token = child.handle.placeholder if child.handle is not None else None
            out.append(
                _make_executable(
                    spec, child, spec.node_id, j, token, table, registry,
                    same_host=True, same_process=same_process,
                )
            )
        return out
    token = spec.handle.placeholder if spec.handle is not None else None
    return [
        _make_executable(
            spec, spec, spec.node_id, 0, token, table, registry,
            same_host=False, same_process=False,
        )
    ]
