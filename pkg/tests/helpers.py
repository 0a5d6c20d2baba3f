"""Service classes used across the test suite.

Importing this module registers everything in the default registry, which
is also how child processes pick these classes up: launch manifests list
"tests.helpers" among their imports.
"""
import os
import threading
import time

from launchgraph.errors import TransportError
from launchgraph.services import register


class Echo:
    def __init__(self, tag=""):
        self._tag = tag

    def echo(self, x):
        return x

    def add(self, a, b):
        return a + b

    def tag(self):
        return self._tag


class Probe:
    """Counting constructor: the oracle for deferred construction."""

    constructed = 0
    _lock = threading.Lock()

    def __init__(self, *args):
        with Probe._lock:
            Probe.constructed += 1

    @classmethod
    def reset(cls):
        with cls._lock:
            cls.constructed = 0

    def count(self):
        return Probe.constructed


class Upstream:
    """Serves fresh serial numbers so tests can count upstream fetches."""

    def __init__(self, sleep_ms=0):
        self._count = 0
        self._sleep = sleep_ms / 1000.0
        self._lock = threading.Lock()

    def get_value(self, *key):
        with self._lock:
            self._count += 1
            serial = self._count
        if self._sleep:
            time.sleep(self._sleep)
        return {"serial": serial, "t": time.monotonic(), "key": list(key)}

    def call_count(self):
        with self._lock:
            return self._count


class Collector:
    """Leaf that drains `count` echo calls into a class-level list."""

    results = []

    def __init__(self, target, count):
        self._target = target
        self._count = count

    def run(self):
        for i in range(self._count):
            Collector.results.append(self._target.echo(i))


class InfiniteCaller:
    """Leaf that hammers get_value until the connection is torn down."""

    def __init__(self, target):
        self._target = target

    def run(self):
        try:
            while True:
                self._target.get_value()
        except TransportError:
            pass


class PingPong:
    """Half of a two-node cycle: ping hops to the peer, pong answers."""

    def __init__(self, peer):
        self._peer = peer

    def ping(self, x):
        return self._peer.pong(x + 1)

    def pong(self, x):
        return x + 1


class CallPrinter:
    """Leaf that prints add(i, i) results from a remote Echo service."""

    def __init__(self, target, count):
        self._target = target
        self._count = count

    def run(self):
        for i in range(self._count):
            print(self._target.add(i, i))


class Printer:
    """Leaf that prints its payload lines to stdout, one per call."""

    def __init__(self, lines):
        self._lines = lines

    def run(self):
        for line in self._lines:
            print(line)


class Crasher:
    """Leaf that fails until its marker file exists, then prints a line.

    The marker survives process restarts, so under a restart policy the
    first attempt fails and the second succeeds in any launcher.
    """

    def __init__(self, marker_path):
        self._marker = marker_path

    def run(self):
        if not os.path.exists(self._marker):
            with open(self._marker, "w") as fh:
                fh.write("attempted\n")
            raise RuntimeError("induced crash")
        print("recovered")


class Sleeper:
    """Leaf that naps briefly then prints; exercises slow finishers."""

    def __init__(self, seconds):
        self._seconds = seconds

    def run(self):
        time.sleep(self._seconds)
        print("slept")


register("Echo", Echo, methods=("echo", "add", "tag"))
register("Probe", Probe, methods=("count",))
register("Upstream", Upstream, methods=("get_value", "call_count"))
register("Collector", Collector, run="run")
register("CallPrinter", CallPrinter, run="run")
register("InfiniteCaller", InfiniteCaller, run="run")
register("PingPong", PingPong, methods=("ping", "pong"))
register("Printer", Printer, run="run")
register("Crasher", Crasher, run="run")
register("Sleeper", Sleeper, run="run")
