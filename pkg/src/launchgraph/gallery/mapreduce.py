"""Distributed word count.

One mapper leaf per input text routes each whitespace-split token to one of
K reducer services by a fixed 64-bit hash of the word. Every mapper first
announces itself to all reducers, then streams words, then announces
completion; a reducer writes its sorted partition file once every mapper
has announced completion. Run output is the merged count table.

The routing hash must be stable across processes, so the host language's
randomized hash() is not usable here.
"""
import os
import time

from ..errors import InvalidStateError, TimedOutError
from ..launch import launch
from ..services import leaf_node, register, service_node
from ..topology import Program

from ._support import require_finished

SAMPLE_TEXTS = (
    "the quick brown fox jumps over the lazy dog\n"
    "the dog sleeps while the fox runs\n"
    "quick words count for quick readers\n",
    "count every word and count it once\n"
    "every partition holds its own words\n"
    "the reducers write sorted lines\n",
    "one mapper per text one reducer per partition\n"
    "words route by hash so the same word lands in the same partition\n",
)

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def fnv1a64(data):
    value = _FNV_OFFSET
    for byte in data:
        value ^= byte
        value = (value * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return value


def route(word, num_reducers):
    return fnv1a64(word.encode("utf-8")) % num_reducers


class WordMapper:
    """Streams one text's tokens to the reducers.

    All mapper_begin calls go out before any word is read so that no reducer
    can observe a completion count equal to its begin count while other
    mappers are still starting.
    """

    def __init__(self, text, reducers):
        self._text = text
        self._reducers = reducers

    def run(self):
        for reducer in self._reducers:
            reducer.mapper_begin()
        for line in self._text.splitlines():
            for word in line.split():
                self._reducers[route(word, len(self._reducers))].word(word)
        for reducer in self._reducers:
            reducer.mapper_done()


class CountReducer:
    """Counts its partition and writes it once all mappers are done.

    num_mappers is fixed up front: a reducer must not treat "everyone who
    began has finished" as completion while some mapper has yet to begin.
    With zero mappers the partition is empty and written immediately.
    """

    def __init__(self, out_path, num_mappers):
        self._out_path = out_path
        self._num_mappers = num_mappers
        self._counts = {}
        self._begun = 0
        self._done = 0
        if num_mappers == 0:
            self._write()

    def mapper_begin(self):
        self._begun += 1

    def word(self, word):
        self._counts[word] = self._counts.get(word, 0) + 1

    def mapper_done(self):
        self._done += 1
        if self._done == self._num_mappers and self._begun == self._num_mappers:
            self._write()

    def _write(self):
        with open(self._out_path, "w", encoding="utf-8") as fh:
            for word in sorted(self._counts):
                fh.write(f"{word} {self._counts[word]}\n")


register("WordMapper", WordMapper, run="run")
register("CountReducer", CountReducer, methods=("mapper_begin", "word", "mapper_done"))


def partition_paths(out_dir, num_reducers):
    return [os.path.join(out_dir, f"part-{i}.txt") for i in range(num_reducers)]


def read_partition(path):
    counts = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            word, _, count = line.rstrip("\n").rpartition(" ")
            counts[word] = int(count)
    return counts


def build_program(texts, num_reducers, out_dir):
    if num_reducers < 1:
        raise ValueError("num_reducers must be >= 1")
    program = Program("word-count")
    with program.group("reducers"):
        reducers = [
            program.add(service_node("CountReducer", path, len(texts)))
            for path in partition_paths(out_dir, num_reducers)
        ]
    mappers = []
    for text in texts:
        spec = leaf_node("WordMapper", text, reducers)
        program.add(spec)
        mappers.append(spec)
    return program, mappers


def run(texts, num_reducers, out_dir, launcher="threads"):
    """Count words across texts and return the merged table."""
    os.makedirs(out_dir, exist_ok=True)
    program, mappers = build_program(texts, num_reducers, out_dir)
    with launch(program, launcher=launcher) as control:
        if mappers:
            result = control.wait(mappers, timeout=120.0)
            require_finished(result)
        else:
            _wait_all_running(control)
        merged = {}
        for path in partition_paths(out_dir, num_reducers):
            for word, count in read_partition(path).items():
                merged[word] = merged.get(word, 0) + count
    return merged


def _wait_all_running(control, timeout=30.0):
    # With no mappers the reducers write at construction; they never finish,
    # so completion is "every node reached running".
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        statuses = control.statuses()
        failed = [s for s in statuses.values() if s.status == "failed"]
        if failed:
            parts = ", ".join(f"node {s.node_id}: {s.detail}" for s in failed)
            raise InvalidStateError(f"gallery run failed ({parts})")
        if all(s.status == "running" for s in statuses.values()):
            return
        time.sleep(0.01)
    raise TimedOutError("reducers did not come up", statuses=control.statuses())
