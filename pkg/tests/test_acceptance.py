"""Acceptance suite: one test per numbered criterion, pass/fail per line.

Each test pins the tolerances it enforces. Criterion 6's final-norm bound
is asserted last inside its test so the determinism and parallelism checks
report first; see the project notes for the analysis of that bound.
"""
import collections
import json
import math
import os
import random
import socket
import statistics
import struct
import time

import pytest

from launchgraph.gallery import actor_learner, es, mapreduce, param_server, producer_consumer
from launchgraph.launch import RestartPolicy, launch
from launchgraph.services import cacher_node, colocation_node, service_node
from launchgraph.topology import Program, from_manifest, to_manifest
from launchgraph.wire import connect, decode_frame, encode_frame

from tests import helpers
from tests.test_gallery import es_oracle, word_count_oracle
from tests.test_wire_frames import GOLDEN, _random_envelope


def wait_all_running(control, timeout=30.0):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        statuses = control.statuses()
        assert not any(s.status == "failed" for s in statuses.values()), statuses
        if all(s.status == "running" for s in statuses.values()):
            return
        time.sleep(0.01)
    raise AssertionError(f"nodes never all came up: {control.statuses()}")


def test_criterion_1_wire_golden_vectors_and_round_trip():
    start = time.monotonic()
    assert len(GOLDEN) >= 10
    for envelope, body in GOLDEN:
        payload = body.encode("utf-8")
        frame = struct.pack(">I", len(payload)) + payload
        assert encode_frame(envelope) == frame
        decoded, consumed = decode_frame(frame)
        assert decoded == envelope
        assert consumed == len(frame)
    rng = random.Random(0xACCE97)
    for _ in range(1000):
        envelope = _random_envelope(rng)
        frame = encode_frame(envelope)
        decoded, consumed = decode_frame(frame)
        assert decoded == envelope
        assert consumed == len(frame)
        assert encode_frame(decoded) == frame
    assert time.monotonic() - start < 5.0


def test_criterion_2_producer_consumer_launcher_equivalence():
    start = time.monotonic()
    threads = producer_consumer.run(launcher="threads")
    processes = producer_consumer.run(launcher="processes")
    assert threads == list(range(20))
    assert processes == list(range(20))
    assert threads == processes
    assert time.monotonic() - start < 30.0


def test_criterion_3_parameter_server_scaling():
    start = time.monotonic()
    duration = 5.0
    single_8 = param_server.run_cell("single", 8, duration).qps
    single_16 = param_server.run_cell("single", 16, duration).qps
    cached_16 = param_server.run_cell("cached:0.1", 16, duration).qps
    partitioned_16 = param_server.run_cell("partitioned:4", 16, duration).qps
    # (a) saturation: the 1 ms serialized service time caps the single server.
    assert single_16 <= 1.3 * single_8, (single_8, single_16)
    # (b) caching beats the saturated single server by at least 2x.
    assert cached_16 >= 2.0 * single_16, (single_16, cached_16)
    # (c) four partitions beat the single server by at least 1.5x.
    assert partitioned_16 >= 1.5 * single_16, (single_16, partitioned_16)
    assert time.monotonic() - start < 300.0


def cacher_stack(ttl):
    program = Program("cacher-acceptance")
    upstream = program.add(service_node("Upstream", 0))
    cache = program.add(cacher_node(upstream, ttl))
    return program, upstream, cache


def test_criterion_4_cacher_semantics():
    # ttl=0: every request forwards; upstream counter is exact.
    program, upstream, cache = cacher_stack(0.0)
    with launch(program) as control:
        through = connect(control.address_table[cache.placeholder])
        for _ in range(25):
            through.call("get_value")
        direct = connect(control.address_table[upstream.placeholder])
        assert direct.call("call_count") == 25
        through.close()
        direct.close()

    # ttl=10 s: 100 requests within one second hit upstream exactly once.
    program, upstream, cache = cacher_stack(10.0)
    with launch(program) as control:
        through = connect(control.address_table[cache.placeholder])
        start = time.monotonic()
        for _ in range(100):
            through.call("get_value")
        assert time.monotonic() - start < 1.0
        direct = connect(control.address_table[upstream.placeholder])
        assert direct.call("call_count") == 1
        through.close()
        direct.close()

    # Staleness: under the threads launcher every process shares one
    # monotonic clock, so produced-at timestamps compare directly.
    ttl = 0.15
    slack = 0.05
    program, upstream, cache = cacher_stack(ttl)
    with launch(program) as control:
        through = connect(control.address_table[cache.placeholder])
        deadline = time.monotonic() + 1.0
        while time.monotonic() < deadline:
            value = through.call("get_value")
            age = time.monotonic() - value["t"]
            assert age <= ttl + slack, age
            time.sleep(0.01)
        through.close()


def test_criterion_5_mapreduce_oracle_equivalence(tmp_path):
    start = time.monotonic()
    corpus = [text * 85 for text in mapreduce.SAMPLE_TEXTS]
    total_tokens = sum(len(text.split()) for text in corpus)
    assert 4000 <= total_tokens <= 7000, total_tokens
    expected = word_count_oracle(corpus)
    for num_reducers in (1, 2, 4, 8):
        out_dir = str(tmp_path / f"reducers-{num_reducers}")
        got = mapreduce.run(corpus, num_reducers, out_dir)
        assert got == expected
        reparsed = collections.Counter()
        for path in mapreduce.partition_paths(out_dir, num_reducers):
            reparsed.update(mapreduce.read_partition(path))
        assert dict(reparsed) == expected
    assert time.monotonic() - start < 60.0


def test_criterion_6_es_determinism_and_convergence():
    start = time.monotonic()
    expected = es_oracle(4, 8, 200, 7)
    result = es.run(dim=4, num_evaluators=8, generations=200, seed=7)
    # Determinism: distributed mean equals the sequential oracle bit for bit.
    assert result.mean == expected
    # Parallelism: 8 evaluators sleeping 50 ms must overlap.
    timed = es.run(dim=2, num_evaluators=8, generations=4, seed=1, sleep_ms=50.0)
    assert max(timed.gen_seconds) < 3 * 0.050, timed.gen_seconds
    assert time.monotonic() - start < 120.0
    # Convergence bound on the final mean.
    norm = math.sqrt(sum(x * x for x in result.mean))
    assert norm < 0.1, f"final mean norm {norm}"


def test_criterion_7_actor_learner_with_actor_kill():
    start = time.monotonic()
    program, learner, actors = actor_learner.build_program(
        num_actors=4, batch_size=16, total_updates=200
    )
    policy = RestartPolicy.on_failure(3)
    with launch(program, launcher="processes", restart=policy) as control:
        wait_all_running(control)
        victim = actors[0]
        (pid,) = control.process_ids(victim)
        os.kill(pid, 9)
        result = control.wait([learner], timeout=150.0)
        assert result.ok, result.statuses
        assert control.restart_count(victim) == 1
        text = control.output(learner)
    values = None
    for line in text.splitlines():
        if line.startswith("params="):
            values = json.loads(line[len("params="):])
    assert values is not None
    assert values[1] - values[0] > 0.3, values
    assert time.monotonic() - start < 180.0


def test_criterion_8_lifecycle_invariants(monkeypatch):
    helpers.Probe.reset()
    binds = []
    real_socket = socket.socket

    class CountingSocket(real_socket):
        def bind(self, address):
            binds.append(address)
            return super().bind(address)

    monkeypatch.setattr(socket, "socket", CountingSocket)

    program = Program("lifecycle")
    program.add(service_node("Probe"))
    first, slot = program.add_deferred()
    second = program.add(service_node("PingPong", first))
    slot.bind("PingPong", second)

    report = program.validate()
    assert not report.errors
    assert any(issue.code == "cycle" for issue in report.warnings)
    text = to_manifest(program)
    assert to_manifest(from_manifest(text).program) == text

    # Declaring, validating, and serializing the graph may not construct
    # any service or touch the network.
    assert helpers.Probe.constructed == 0
    assert binds == []

    with launch(program) as control:
        table = control.address_table
        assert set(table) == set(program.placeholders)
        endpoints = [str(endpoint) for endpoint in table.values()]
        assert len(set(endpoints)) == len(endpoints)
        client = connect(table[second.placeholder])
        assert client.call("ping", 0) == 2
        client.close()
        wait_all_running(control)
        assert helpers.Probe.constructed == 1
    assert binds


def run_node_children():
    """Scan the process table for launcher children of this process."""
    me = str(os.getpid())
    children = []
    for entry in os.listdir("/proc"):
        if not entry.isdigit():
            continue
        try:
            with open(f"/proc/{entry}/cmdline", "rb") as fh:
                cmdline = fh.read().decode("utf-8", errors="replace")
            with open(f"/proc/{entry}/stat", "r", encoding="utf-8") as fh:
                stat = fh.read()
        except OSError:
            continue
        ppid = stat.rpartition(")")[2].split()[1]
        if ppid == me and "run-node" in cmdline:
            children.append(int(entry))
    return children


def test_criterion_9_clean_shutdown():
    program = Program("shutdown")
    program.add(service_node("Echo"))
    program.add(service_node("Upstream", 0))
    program.add(
        colocation_node([service_node("Echo"), service_node("Echo")], mode="processes")
    )
    control = launch(program, launcher="processes")
    try:
        wait_all_running(control)
        pids = [pid for nid in (0, 1, 2) for pid in control.process_ids(nid)]
        assert len(pids) == 4
        assert sorted(run_node_children()) == sorted(pids)
    finally:
        control.stop()
    for pid in pids:
        with pytest.raises(OSError):
            os.kill(pid, 0)
    assert run_node_children() == []
