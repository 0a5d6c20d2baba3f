"""Producer-consumer: two bounded integer producers drained by one consumer.

The consumer asks each producer how many values it holds, then pulls them
one call at a time and prints each. The printed sequence is the program's
output and must not depend on the launcher.
"""
from collections import deque

from ..launch import launch
from ..services import leaf_node, register, service_node
from ..topology import Program

from ._support import require_finished


class Range:
    """Serves the integers [start, stop) in order, one per produce() call."""

    def __init__(self, start, stop):
        self._values = deque(range(start, stop))

    def get_size(self):
        return len(self._values)

    def produce(self):
        return self._values.popleft()


class Consumer:
    def __init__(self, producers):
        self._producers = producers

    def run(self):
        for producer in self._producers:
            for _ in range(producer.get_size()):
                print(producer.produce())


register("Range", Range, methods=("get_size", "produce"))
register("Consumer", Consumer, run="run")


def build_program(ranges=((0, 10), (10, 20))):
    program = Program("producer-consumer")
    producers = [program.add(service_node("Range", start, stop)) for start, stop in ranges]
    consumer = leaf_node("Consumer", producers)
    program.add(consumer)
    return program, consumer


def run(launcher="threads", ranges=((0, 10), (10, 20))):
    """Launch the program and return the consumed sequence."""
    program, consumer = build_program(ranges)
    with launch(program, launcher=launcher) as control:
        result = control.wait([consumer], timeout=120.0)
        require_finished(result)
        text = control.output(consumer)
    return [int(line) for line in text.split()]
