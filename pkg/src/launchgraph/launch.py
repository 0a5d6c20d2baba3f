"""Launchers and the control plane.

launch() takes a validated program through the launch phase: allocate one
loopback endpoint per placeholder, materialize executables, and start them
either as threads in this process or as child processes running this
package's run-node entry. The returned ControlPlane supervises: it tracks
per-node status, applies the restart policy, captures per-node stdout, and
tears everything down on stop().
"""
from __future__ import annotations

import io
import logging
import os
import socket
import subprocess
import sys
import tempfile
import threading
import time
from dataclasses import dataclass, field

from .errors import (
    InvalidArgumentError,
    InvalidProgramError,
    ResourceUnavailableError,
    TimedOutError,
    UnknownGroupError,
)
from .services import DEFAULT_REGISTRY, ExecutionContext, ServiceRegistry, to_executables
from .topology import Handle, NodeSpec, Program, to_manifest
from .wire import Endpoint

log = logging.getLogger("launchgraph.launch")

LAUNCHERS = ("threads", "processes")

STARTING = "starting"
RUNNING = "running"
FINISHED = "finished"
FAILED = "failed"
RESTARTING = "restarting"
TERMINAL = (FINISHED, FAILED)


@dataclass(frozen=True)
class RestartPolicy:
    """How many times a failing node may be restarted at its old endpoints."""

    max_restarts: int = 0

    @classmethod
    def never(cls) -> "RestartPolicy":
        return cls(0)

    @classmethod
    def on_failure(cls, max_restarts: int) -> "RestartPolicy":
        if not isinstance(max_restarts, int) or max_restarts < 0:
            raise InvalidArgumentError("max_restarts must be a nonnegative integer")
        return cls(max_restarts)


@dataclass
class NodeStatus:
    node_id: int
    status: str
    detail: str | None = None
    restarts: int = 0


@dataclass
class WaitResult:
    statuses: dict[int, NodeStatus]

    @property
    def ok(self) -> bool:
        return all(s.status == FINISHED for s in self.statuses.values())


class _StdoutRouter:
    """Routes print() by thread so each in-process executable gets its own
    captured output. Installed over sys.stdout while a threads launch is
    live; unknown threads fall through to the real stream."""

    _lock = threading.Lock()
    _active: "_StdoutRouter | None" = None
    _refs = 0

    def __init__(self, original):
        self._original = original
        self._routes: dict[int, io.StringIO] = {}

    @classmethod
    def install(cls) -> "_StdoutRouter":
        with cls._lock:
            if cls._active is None:
                cls._active = cls(sys.stdout)
                sys.stdout = cls._active
            cls._refs += 1
            return cls._active

    @classmethod
    def uninstall(cls) -> None:
        with cls._lock:
            cls._refs -= 1
            if cls._refs == 0 and cls._active is not None:
                sys.stdout = cls._active._original
                cls._active = None

    def attach(self, buffer: io.StringIO) -> None:
        self._routes[threading.get_ident()] = buffer

    def detach(self) -> None:
        self._routes.pop(threading.get_ident(), None)

    def write(self, text) -> int:
        target = self._routes.get(threading.get_ident(), self._original)
        return target.write(text)

    def flush(self) -> None:
        target = self._routes.get(threading.get_ident(), self._original)
        target.flush()


class _ThreadUnit:
    """One executable running on a daemon thread in this process."""

    def __init__(self, plane: "ControlPlane", executable):
        self.executable = executable
        self._plane = plane
        self._lock = threading.Lock()
        self._attempts: list[io.StringIO] = []
        self._ctx: ExecutionContext | None = None
        self._thread: threading.Thread | None = None
        self.state = "pending"
        self.detail: str | None = None

    def start(self) -> None:
        buffer = io.StringIO()
        ctx = ExecutionContext(
            self._plane.table, self._plane.registry, connect_deadline=self._plane.connect_deadline
        )
        with self._lock:
            self._attempts.append(buffer)
            self._ctx = ctx
            self.state = STARTING
            self.detail = None
        router = self._plane._router

        def on_running():
            with self._lock:
                if self.state == STARTING:
                    self.state = RUNNING

        def body():
            if router is not None:
                router.attach(buffer)
            try:
                self.executable.runner(ctx, on_running)
            except Exception as exc:
                with self._lock:
                    self.state = FAILED
                    self.detail = str(exc) or type(exc).__name__
            else:
                with self._lock:
                    self.state = FINISHED
            finally:
                if router is not None:
                    router.detach()
                ctx.close()

        thread = threading.Thread(target=body, daemon=True, name=self.executable.name)
        with self._lock:
            self._thread = thread
        thread.start()

    def request_stop(self) -> None:
        with self._lock:
            ctx = self._ctx
        if ctx is not None:
            ctx.close()

    def join(self, timeout: float) -> None:
        with self._lock:
            thread = self._thread
        if thread is not None:
            thread.join(timeout=max(0.0, timeout))

    def output(self) -> str:
        with self._lock:
            return "".join(buf.getvalue() for buf in self._attempts)

    def pids(self):
        return []

    def poll(self) -> None:
        pass

    def kill(self) -> None:
        self.request_stop()


class _ProcessUnit:
    """One child process running one node (or one colocation slice)."""

    def __init__(self, plane: "ControlPlane", node_id: int, exec_index, name: str, workdir: str):
        self._plane = plane
        self.node_id = node_id
        self.exec_index = exec_index  # None = whole node in one child
        self.name = name
        suffix = "all" if exec_index is None else str(exec_index)
        self.out_path = os.path.join(workdir, f"node{node_id}-{suffix}.out")
        self._proc: subprocess.Popen | None = None
        self.state = "pending"
        self.detail: str | None = None

    def start(self) -> None:
        cmd = [
            sys.executable,
            "-m",
            "launchgraph",
            "run-node",
            "--manifest",
            self._plane._manifest_path,
            "--node",
            str(self.node_id),
        ]
        if self.exec_index is not None:
            cmd += ["--exec", str(self.exec_index)]
        env = dict(os.environ)
        env["PYTHONPATH"] = os.pathsep.join(p for p in sys.path if p)
        # Append so output survives restarts of the same node.
        with open(self.out_path, "ab") as out:
            self._proc = subprocess.Popen(cmd, stdout=out, stderr=None, env=env)
        self.state = RUNNING
        self.detail = None

    def poll(self) -> None:
        if self._proc is None or self.state in (FINISHED, FAILED):
            return
        code = self._proc.poll()
        if code is None:
            return
        if code == 0:
            self.state = FINISHED
        else:
            self.state = FAILED
            self.detail = f"exit code {code}"

    def request_stop(self) -> None:
        if self._proc is not None and self._proc.poll() is None:
            try:
                self._proc.terminate()
            except OSError:
                pass

    def join(self, timeout: float) -> None:
        if self._proc is None:
            return
        try:
            self._proc.wait(timeout=max(0.0, timeout))
        except subprocess.TimeoutExpired:
            try:
                self._proc.kill()
            except OSError:
                pass
            self._proc.wait()

    def kill(self) -> None:
        if self._proc is not None and self._proc.poll() is None:
            try:
                self._proc.kill()
            except OSError:
                pass
            self._proc.wait()

    def output(self) -> str:
        try:
            with open(self.out_path, "rb") as fh:
                return fh.read().decode("utf-8", errors="replace")
        except FileNotFoundError:
            return ""

    def pids(self):
        if self._proc is not None and self._proc.poll() is None:
            return [self._proc.pid]
        return []


def _allocate_endpoints(tokens) -> dict[str, Endpoint]:
    """Bind every placeholder's loopback port simultaneously, so the OS
    hands out pairwise-distinct ports, then release them for the
    executables to rebind."""
    listeners = []
    table: dict[str, Endpoint] = {}
    try:
        for token in tokens:
            sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            try:
                sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
                sock.bind(("127.0.0.1", 0))
            except OSError as exc:
                sock.close()
                raise ResourceUnavailableError(f"cannot allocate a port: {exc}") from None
            listeners.append(sock)
            table[token] = Endpoint("127.0.0.1", sock.getsockname()[1])
    finally:
        for sock in listeners:
            sock.close()
    return table


def _node_key(node) -> int:
    if isinstance(node, int) and not isinstance(node, bool):
        return node
    if isinstance(node, Handle):
        if node.target_node_id is None:
            raise InvalidArgumentError("handle was never added to a program")
        return node.target_node_id
    if isinstance(node, NodeSpec):
        if node.node_id is None:
            raise InvalidArgumentError("node spec was never added to a program")
        return node.node_id
    raise InvalidArgumentError(f"cannot identify a node from {type(node).__name__}")


class ControlPlane:
    """Supervises one launched program; also a context manager."""

    def __init__(self, program: Program, launcher: str, table, registry, policy, connect_deadline):
        self.program = program
        self.launcher = launcher
        self.table = dict(table)
        self.registry = registry
        self.policy = policy
        self.connect_deadline = connect_deadline
        self._nodes: dict[int, NodeStatus] = {
            spec.node_id: NodeStatus(spec.node_id, STARTING) for spec in program.nodes
        }
        self._units: dict[int, list] = {}
        self._lock = threading.RLock()
        self._shutdown = threading.Event()
        self._stopped = False
        self._router = None
        self._workdir: str | None = None
        self._manifest_path: str | None = None
        self._monitor_thread: threading.Thread | None = None

    # -- launch-time assembly -------------------------------------------

    def _start(self, executables_by_node: dict[int, list]) -> None:
        if self.launcher == "threads":
            self._router = _StdoutRouter.install()
            for node_id, executables in executables_by_node.items():
                self._units[node_id] = [_ThreadUnit(self, e) for e in executables]
        else:
            self._workdir = tempfile.mkdtemp(prefix="launchgraph-")
            self._manifest_path = os.path.join(self._workdir, "manifest.json")
            imports = sorted(
                {
                    self.registry.get(factory).module
                    for factory in _factories(self.program)
                    if self.registry.get(factory).module
                }
            )
            addresses = {token: str(ep) for token, ep in self.table.items()}
            with open(self._manifest_path, "w", encoding="utf-8") as fh:
                fh.write(to_manifest(self.program, addresses=addresses, imports=imports))
            for node_id, executables in executables_by_node.items():
                spec = self.program.nodes[node_id]
                if spec.kind == "colocation" and spec.mode == "threads":
                    units = [_ProcessUnit(self, node_id, None, f"n{node_id}", self._workdir)]
                else:
                    units = [
                        _ProcessUnit(self, node_id, e.index, e.name, self._workdir)
                        for e in executables
                    ]
                self._units[node_id] = units
        for units in self._units.values():
            for unit in units:
                unit.start()
        self._monitor_thread = threading.Thread(
            target=self._monitor, daemon=True, name="launchgraph-monitor"
        )
        self._monitor_thread.start()

    # -- supervision ------------------------------------------------------

    def _monitor(self) -> None:
        while not self._shutdown.wait(0.05):
            self._adjudicate()

    def _adjudicate(self) -> None:
        with self._lock:
            if self._stopped:
                return
            for node_id, units in self._units.items():
                record = self._nodes[node_id]
                if record.status in TERMINAL:
                    continue
                for unit in units:
                    unit.poll()
                states = [unit.state for unit in units]
                if FAILED in states:
                    detail = next(u.detail for u in units if u.state == FAILED)
                    if record.restarts < self.policy.max_restarts:
                        record.status = RESTARTING
                        record.detail = detail
                        record.restarts += 1
                        log.info("restarting node %d (%s), attempt %d", node_id, detail, record.restarts)
                        self._restart_node(node_id, units)
                        record.status = STARTING
                    else:
                        record.status = FAILED
                        record.detail = detail
                elif all(state == FINISHED for state in states):
                    record.status = FINISHED
                elif all(state in (RUNNING, FINISHED) for state in states):
                    record.status = RUNNING

    def _restart_node(self, node_id: int, units) -> None:
        if self.launcher == "threads":
            # Only the failed slices rerun; healthy siblings keep serving.
            for unit in units:
                if unit.state == FAILED:
                    unit.start()
        else:
            for unit in units:
                unit.kill()
            for unit in units:
                unit.start()

    # -- observation ------------------------------------------------------

    def statuses(self) -> dict[int, NodeStatus]:
        with self._lock:
            return {
                nid: NodeStatus(nid, s.status, s.detail, s.restarts)
                for nid, s in self._nodes.items()
            }

    def restart_count(self, node) -> int:
        with self._lock:
            return self._nodes[_node_key(node)].restarts

    def output(self, node) -> str:
        node_id = _node_key(node)
        with self._lock:
            units = list(self._units.get(node_id, ()))
        return "".join(unit.output() for unit in units)

    def process_ids(self, node) -> list[int]:
        node_id = _node_key(node)
        with self._lock:
            units = list(self._units.get(node_id, ()))
        return [pid for unit in units for pid in unit.pids()]

    @property
    def address_table(self) -> dict[str, Endpoint]:
        return dict(self.table)

    def wait(self, nodes=None, timeout: float | None = None) -> WaitResult:
        """Block until the given nodes (default: all) reach a terminal
        status; raises TimedOutError carrying a snapshot on timeout."""
        if nodes is None:
            targets = list(self._nodes)
        else:
            targets = [_node_key(n) for n in nodes]
        deadline = None if timeout is None else time.monotonic() + timeout
        while True:
            snapshot = self.statuses()
            picked = {nid: snapshot[nid] for nid in targets}
            if all(s.status in TERMINAL for s in picked.values()):
                return WaitResult(picked)
            if deadline is not None and time.monotonic() >= deadline:
                raise TimedOutError(
                    f"nodes {sorted(targets)} not terminal within {timeout} s", statuses=picked
                )
            time.sleep(0.02)

    # -- shutdown ---------------------------------------------------------

    def stop(self, grace: float = 5.0) -> None:
        """Signal everything to stop; after `grace` seconds, force-kill.
        Nodes that had not already finished or failed are marked finished
        with detail "stopped". Idempotent."""
        with self._lock:
            if self._stopped:
                return
            self._stopped = True
        self._shutdown.set()
        if self._monitor_thread is not None:
            self._monitor_thread.join(timeout=2.0)
        with self._lock:
            all_units = [u for units in self._units.values() for u in units]
            pre_stop = {nid: s.status for nid, s in self._nodes.items()}
        for unit in all_units:
            unit.request_stop()
        deadline = time.monotonic() + grace
        for unit in all_units:
            unit.join(deadline - time.monotonic())
        with self._lock:
            for node_id, record in self._nodes.items():
                for unit in self._units.get(node_id, ()):
                    unit.poll()
                if pre_stop[node_id] not in TERMINAL:
                    record.status = FINISHED
                    record.detail = "stopped"
        if self._router is not None:
            _StdoutRouter.uninstall()
            self._router = None

    def __enter__(self) -> "ControlPlane":
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        self.stop()


def _factories(program: Program):
    for spec in program.nodes:
        members = [spec] if spec.kind != "colocation" else list(spec.children)
        for member in members:
            if member.factory:
                yield member.factory


def launch(
    program: Program,
    launcher: str = "threads",
    resources=None,
    restart: RestartPolicy | None = None,
    registry: ServiceRegistry | None = None,
    connect_deadline: float = 10.0,
) -> ControlPlane:
    """Run a program on the chosen platform and return its control plane.

    Allocates endpoints for every placeholder, materializes executables
    (validating factories and addresses eagerly), and starts them all;
    start order is unconstrained, peers synchronize via connect retry.
    """
    if launcher not in LAUNCHERS:
        raise InvalidArgumentError(f"launcher must be one of {LAUNCHERS}, got {launcher!r}")
    registry = registry if registry is not None else DEFAULT_REGISTRY
    policy = restart if restart is not None else RestartPolicy.never()

    report = program.validate()
    if report.errors:
        raise InvalidProgramError(f"program is not launchable:\n{report}", report)
    if resources:
        for group, assignment in resources.items():
            if group not in program.groups:
                raise UnknownGroupError(f"resources name unknown group {group!r}")
            log.info("resources[%s] = %r", group, assignment)

    program.freeze()
    table = _allocate_endpoints(program.placeholders)

    if launcher == "processes":
        for factory in set(_factories(program)):
            module = registry.get(factory).module
            if module == "__main__":
                raise InvalidArgumentError(
                    f"factory {factory!r} is defined in __main__, which child processes "
                    "cannot import; move it into a module"
                )

    executables_by_node = {
        spec.node_id: to_executables(spec, table, registry) for spec in program.nodes
    }

    plane = ControlPlane(program, launcher, table, registry, policy, connect_deadline)
    plane._start(executables_by_node)
    return plane
