"""Parameter-server throughput benchmark.

One service hands out values with a fixed 1 ms service time; requester
leaves hammer it for a wall-clock duration and report how many calls they
completed. Three topologies are compared: a single server, a partitioned
pool of servers, and a single server behind a cacher. Reports normalize
throughput against the single-server single-requester cell.
"""
import math
import random
import time
from dataclasses import dataclass, field

from ..launch import launch
from ..services import cacher_node, leaf_node, register, service_node
from ..topology import Program

from ._support import require_finished

CSV_HEADER = "variant,num_requesters,duration,total_requests,qps,qps_relative"


class ParamServer:
    """Returns a fresh uniform value per call after a 1 ms service delay."""

    def __init__(self):
        self._rng = random.Random()

    def get_value(self):
        time.sleep(0.001)
        return self._rng.random()


class Requester:
    """Calls get_value in a tight loop for `duration` seconds, then prints
    the number of completed calls. Counting replaces per-value printing so
    the benchmark does not measure terminal I/O."""

    def __init__(self, target, duration):
        self._target = target
        self._duration = duration

    def run(self):
        deadline = time.monotonic() + self._duration
        count = 0
        while time.monotonic() < deadline:
            self._target.get_value()
            count += 1
        print(count)


register("ParamServer", ParamServer, methods=("get_value",))
register("Requester", Requester, run="run")


@dataclass(frozen=True)
class Variant:
    kind: str
    servers: int = 1
    ttl: float = 0.0

    def __str__(self):
        if self.kind == "partitioned":
            return f"partitioned:{self.servers}"
        if self.kind == "cached":
            return f"cached:{self.ttl:g}"
        return "single"


def parse_variant(text):
    """Parse 'single', 'partitioned:<k>', or 'cached:<ttl>'."""
    kind, sep, rest = text.partition(":")
    if kind == "single":
        if sep:
            raise ValueError(f"variant 'single' takes no parameter: {text!r}")
        return Variant("single")
    if kind == "partitioned":
        try:
            servers = int(rest)
        except ValueError:
            raise ValueError(f"bad partition count in {text!r}") from None
        if servers < 1:
            raise ValueError(f"partition count must be >= 1: {text!r}")
        return Variant("partitioned", servers=servers)
    if kind == "cached":
        try:
            ttl = float(rest)
        except ValueError:
            raise ValueError(f"bad ttl in {text!r}") from None
        if not math.isfinite(ttl) or ttl < 0:
            raise ValueError(f"ttl must be finite and >= 0: {text!r}")
        return Variant("cached", ttl=ttl)
    raise ValueError(f"unknown variant {text!r}")


@dataclass
class QpsReport:
    variant: str
    num_requesters: int
    duration_seconds: float
    total_requests: int
    qps: float
    qps_relative: float = field(default=1.0)

    def csv_row(self):
        return (
            f"{self.variant},{self.num_requesters},{self.duration_seconds:g},"
            f"{self.total_requests},{self.qps:.2f},{self.qps_relative:.3f}"
        )


def build_cell(variant, num_requesters, duration):
    """Build the program for one benchmark cell.

    Partitioned wiring assigns requester i to server i mod k; cached wiring
    puts one cacher in front of the lone server and points every requester
    at the cache.
    """
    program = Program(f"param-server-{variant.kind}")
    num_servers = variant.servers if variant.kind == "partitioned" else 1
    with program.group("servers"):
        servers = [program.add(service_node("ParamServer")) for _ in range(num_servers)]
    if variant.kind == "cached":
        cache = program.add(cacher_node(servers[0], variant.ttl))
        targets = [cache] * num_requesters
    else:
        targets = [servers[i % num_servers] for i in range(num_requesters)]
    requesters = []
    for i in range(num_requesters):
        spec = leaf_node("Requester", targets[i], duration)
        program.add(spec)
        requesters.append(spec)
    return program, requesters


def run_cell(variant_text, num_requesters, duration, launcher="threads"):
    """Measure one (variant, requester count) cell and return its report."""
    if num_requesters < 1:
        raise ValueError("num_requesters must be >= 1")
    variant = parse_variant(variant_text)
    program, requesters = build_cell(variant, num_requesters, duration)
    with launch(program, launcher=launcher) as control:
        result = control.wait(requesters, timeout=duration + 120.0)
        require_finished(result)
        total = sum(int(control.output(spec).strip()) for spec in requesters)
    return QpsReport(
        variant=str(variant),
        num_requesters=num_requesters,
        duration_seconds=duration,
        total_requests=total,
        qps=total / duration,
    )


def sweep(variants, counts, duration, launcher="threads"):
    """Run the full grid and scale qps_relative to the single/1 baseline.

    The single-variant single-requester cell anchors the scale when the grid
    contains it; otherwise the first cell does.
    """
    reports = []
    for text in variants:
        for count in counts:
            reports.append(run_cell(text, count, duration, launcher=launcher))
    baseline = reports[0].qps
    for report in reports:
        if report.variant == "single" and report.num_requesters == 1:
            baseline = report.qps
            break
    for report in reports:
        report.qps_relative = report.qps / baseline if baseline > 0 else 0.0
    return reports
