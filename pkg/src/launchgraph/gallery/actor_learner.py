"""Actor-learner: data collection separated from parameter updates.

Actors play an epsilon-greedy policy on a two-armed Bernoulli bandit and
push fixed-length trajectories to the Learner's queue, refetching the
latest parameters before every trajectory. The Learner drains the queue in
batches and applies an incremental-mean value update per arm. Actors hold
no state that matters across trajectories, so a killed actor can be
restarted with no effect on the learned values.
"""
import json
import queue
import random
import threading

from ..errors import TransportError
from ..launch import launch
from ..services import leaf_node, register, service_node
from ..topology import Program
from ..wire import CONCURRENT

from ._support import last_tagged, require_finished

ARM_PROBS = (0.2, 0.8)
EPSILON = 0.1
TRAJECTORY_LEN = 10


class Learner:
    """Serves get_params/put while its run loop consumes batches.

    put must accept concurrent calls from many actors, hence the queue and
    the lock around the value table.
    """

    def __init__(self, batch_size, total_updates):
        self._batch_size = batch_size
        self._total_updates = total_updates
        self._queue = queue.Queue()
        self._lock = threading.Lock()
        self._values = [0.0, 0.0]
        self._counts = [0, 0]

    def get_params(self):
        with self._lock:
            return list(self._values)

    def put(self, trajectory):
        self._queue.put(trajectory)

    def run(self):
        for _ in range(self._total_updates):
            batch = [self._queue.get() for _ in range(self._batch_size)]
            with self._lock:
                for trajectory in batch:
                    for _obs, action, reward in trajectory:
                        self._counts[action] += 1
                        delta = reward - self._values[action]
                        self._values[action] += delta / self._counts[action]
        print(f"params={json.dumps(self._values, separators=(',', ':'))}")


class Actor:
    """Collects trajectories until the learner goes away.

    The learner exits after its final update, which tears down its server;
    the next call from here raises TransportError and that is the actor's
    signal to finish.
    """

    def __init__(self, learner, seed=None):
        self._learner = learner
        self._rng = random.Random(seed)

    def _act(self, values):
        if self._rng.random() < EPSILON:
            return self._rng.randrange(len(ARM_PROBS))
        return values.index(max(values))

    def run(self):
        try:
            while True:
                values = self._learner.get_params()
                trajectory = []
                for _ in range(TRAJECTORY_LEN):
                    action = self._act(values)
                    reward = 1.0 if self._rng.random() < ARM_PROBS[action] else 0.0
                    trajectory.append([0, action, reward])
                self._learner.put(trajectory)
        except TransportError:
            return


register("Learner", Learner, methods=("get_params", "put"), run="run", dispatch=CONCURRENT)
register("Actor", Actor, run="run")


def build_program(num_actors, batch_size, total_updates):
    if num_actors < 1 or batch_size < 1 or total_updates < 1:
        raise ValueError("num_actors, batch_size, and total_updates must be >= 1")
    program = Program("actor-learner")
    learner = program.add(service_node("Learner", batch_size, total_updates))
    actors = []
    for i in range(num_actors):
        spec = leaf_node("Actor", learner, i)
        program.add(spec)
        actors.append(spec)
    return program, learner, actors


def run(num_actors, batch_size, total_updates, launcher="threads"):
    """Run to completion and return the learned per-arm values."""
    program, learner, actors = build_program(num_actors, batch_size, total_updates)
    with launch(program, launcher=launcher) as control:
        result = control.wait([learner] + actors, timeout=600.0)
        require_finished(result)
        text = control.output(learner)
    final = last_tagged(text, "params")
    if final is None:
        raise ValueError("learner produced no final params")
    return json.loads(final)
