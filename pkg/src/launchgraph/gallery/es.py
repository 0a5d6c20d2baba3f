"""Evolution strategies with parallel fitness evaluation.

An Evolver leaf owns the search distribution (an isotropic Gaussian) and
the only random state in the program. Each generation it samples one
perturbed parameter vector per evaluator, dispatches every evaluation as a
future so they run in parallel, then applies the score-weighted gradient
estimate. Evaluators are pure, so a fixed seed makes the whole run
deterministic regardless of launcher or evaluator count.
"""
import json
import random
import time
from dataclasses import dataclass

from ..launch import launch
from ..services import leaf_node, register, service_node
from ..topology import Program

from ._support import last_tagged, require_finished

SIGMA = 0.5
LEARNING_RATE = 0.05


def fitness(params):
    return -sum(value * value for value in params)


class Evaluator:
    def __init__(self, sleep_ms=0.0):
        self._delay = sleep_ms / 1000.0

    def evaluate(self, params):
        if self._delay:
            time.sleep(self._delay)
        return fitness(params)


class Evolver:
    """Runs the generation loop and prints one line per generation.

    The update is mean[j] += LEARNING_RATE * grad[j] / (n * SIGMA) with
    grad[j] = sum_i score_i * eps_i[j], accumulated in evaluator order.
    Keeping the expression order fixed keeps runs bit-reproducible.
    """

    def __init__(self, evaluators, dim, generations, seed):
        self._evaluators = evaluators
        self._dim = dim
        self._generations = generations
        self._seed = seed

    def run(self):
        rng = random.Random(self._seed)
        n = len(self._evaluators)
        mean = [1.0] * self._dim
        for gen in range(self._generations):
            start = time.monotonic()
            samples = []
            futures = []
            for evaluator in self._evaluators:
                eps = [rng.gauss(0.0, 1.0) for _ in range(self._dim)]
                point = [m + SIGMA * e for m, e in zip(mean, eps)]
                samples.append(eps)
                futures.append(evaluator.futures.evaluate(point))
            scores = [future.result() for future in futures]
            grad = [0.0] * self._dim
            for score, eps in zip(scores, samples):
                for j in range(self._dim):
                    grad[j] += score * eps[j]
            mean = [m + LEARNING_RATE * g / (n * SIGMA) for m, g in zip(mean, grad)]
            elapsed = time.monotonic() - start
            print(f"gen={gen} dt={elapsed:.6f} mean={json.dumps(mean, separators=(',', ':'))}")
        print(f"mean={json.dumps(mean, separators=(',', ':'))}")


register("Evaluator", Evaluator, methods=("evaluate",))
register("Evolver", Evolver, run="run")


@dataclass
class EsResult:
    mean: list
    gen_seconds: list


def build_program(dim, num_evaluators, generations, seed, sleep_ms=0.0):
    if dim < 1 or num_evaluators < 1:
        raise ValueError("dim and num_evaluators must be >= 1")
    program = Program("es")
    with program.group("evaluators"):
        evaluators = [
            program.add(service_node("Evaluator", sleep_ms)) for _ in range(num_evaluators)
        ]
    evolver = leaf_node("Evolver", evaluators, dim, generations, seed)
    program.add(evolver)
    return program, evolver


def run(dim, num_evaluators, generations, seed, sleep_ms=0.0, launcher="threads"):
    """Run the full loop and return the final mean plus per-generation times."""
    program, evolver = build_program(dim, num_evaluators, generations, seed, sleep_ms)
    with launch(program, launcher=launcher) as control:
        result = control.wait([evolver], timeout=600.0)
        require_finished(result)
        text = control.output(evolver)
    final = last_tagged(text, "mean")
    if final is None:
        raise ValueError("evolver produced no final mean")
    gen_seconds = []
    for line in text.splitlines():
        if line.startswith("gen="):
            fields = line.split(" ", 2)
            gen_seconds.append(float(fields[1][len("dt="):]))
    return EsResult(mean=json.loads(final), gen_seconds=gen_seconds)
