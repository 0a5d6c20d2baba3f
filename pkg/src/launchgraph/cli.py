"""Command line entry: run gallery programs, benchmark the parameter
server, validate manifests, and host child processes for the processes
launcher (run-node).

Exit codes: 0 success, 1 runtime or validation failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import importlib
import json
import logging
import math
import os
import sys
import tempfile
import threading

from .errors import LaunchgraphError
from .services import DEFAULT_REGISTRY, ExecutionContext, to_executables
from .topology import from_manifest
from .wire import Endpoint

log = logging.getLogger("launchgraph.cli")

PROGRAMS = ("producer-consumer", "param-server", "mapreduce", "es", "actor-learner")

_LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def _configure_logging() -> None:
    wanted = os.environ.get("LAUNCHGRAPH_LOG", "error").lower()
    level = _LOG_LEVELS.get(wanted, logging.ERROR)
    logging.basicConfig(stream=sys.stderr, level=level, format="%(name)s %(levelname)s %(message)s")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="launchgraph", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a gallery program")
    run_p.add_argument("program", choices=PROGRAMS)
    run_p.add_argument("--launcher", choices=("threads", "processes"), default="threads")
    run_p.add_argument("params", nargs="*", metavar="key=value")

    bench_p = sub.add_parser("bench", help="parameter-server QPS sweep")
    bench_p.add_argument("--launcher", choices=("threads", "processes"), default="threads")
    bench_p.add_argument("--variants", default="single,partitioned:4,cached:0.1")
    bench_p.add_argument("--requesters", default="1,2,4,8,16")
    bench_p.add_argument("--duration", type=float, default=5.0)
    bench_p.add_argument("--out", default=None)

    val_p = sub.add_parser("validate", help="validate a program manifest")
    val_p.add_argument("manifest")

    node_p = sub.add_parser("run-node", help="child entry for the processes launcher")
    node_p.add_argument("--manifest", required=True)
    node_p.add_argument("--node", required=True, type=int)
    node_p.add_argument("--exec", dest="exec_index", type=int, default=None)

    return parser


def _parse_params(pairs):
    params = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep or not key:
            raise ValueError(f"expected key=value, got {pair!r}")
        params[key] = value
    return params


def cmd_run(args) -> int:
    from . import gallery

    try:
        params = _parse_params(args.params)
    except ValueError as exc:
        print(f"launchgraph run: {exc}", file=sys.stderr)
        return 2
    try:
        if args.program == "producer-consumer":
            values = gallery.producer_consumer.run(launcher=args.launcher)
            for value in values:
                print(value)
        elif args.program == "param-server":
            report = gallery.param_server.run_cell(
                params.get("variant", "single"),
                int(params.get("requesters", "4")),
                float(params.get("duration", "5")),
                launcher=args.launcher,
            )
            print(gallery.param_server.CSV_HEADER)
            print(report.csv_row())
        elif args.program == "mapreduce":
            if "inputs" in params:
                texts = []
                for path in params["inputs"].split(","):
                    with open(path, "r", encoding="utf-8") as fh:
                        texts.append(fh.read())
            else:
                texts = list(gallery.mapreduce.SAMPLE_TEXTS)
            out_dir = params.get("out") or tempfile.mkdtemp(prefix="launchgraph-wc-")
            counts = gallery.mapreduce.run(
                texts,
                int(params.get("reducers", "2")),
                out_dir,
                launcher=args.launcher,
            )
            for word in sorted(counts):
                print(f"{word} {counts[word]}")
            print(f"partitions written to {out_dir}", file=sys.stderr)
        elif args.program == "es":
            result = gallery.es.run(
                dim=int(params.get("dim", "4")),
                num_evaluators=int(params.get("evaluators", "8")),
                generations=int(params.get("generations", "200")),
                seed=int(params.get("seed", "7")),
                sleep_ms=float(params.get("sleep_ms", "0")),
                launcher=args.launcher,
            )
            print(f"mean={json.dumps(result.mean)}")
            print(f"norm={math.sqrt(sum(x * x for x in result.mean))}")
        elif args.program == "actor-learner":
            values = gallery.actor_learner.run(
                num_actors=int(params.get("actors", "4")),
                batch_size=int(params.get("batch", "16")),
                total_updates=int(params.get("updates", "200")),
                launcher=args.launcher,
            )
            print(f"params={json.dumps(values)}")
            print(f"gap={values[1] - values[0]}")
    except ValueError as exc:
        print(f"launchgraph run: {exc}", file=sys.stderr)
        return 2
    except LaunchgraphError as exc:
        print(f"launchgraph run: {exc}", file=sys.stderr)
        return 1
    return 0


def cmd_bench(args) -> int:
    from .gallery import param_server

    if args.duration < 1.0:
        print("launchgraph bench: --duration must be at least 1 second", file=sys.stderr)
        return 2
    try:
        variants = [v.strip() for v in args.variants.split(",") if v.strip()]
        counts = [int(c) for c in args.requesters.split(",") if c.strip()]
        if not variants or not counts:
            raise ValueError("empty sweep")
        for variant in variants:
            param_server.parse_variant(variant)
    except ValueError as exc:
        print(f"launchgraph bench: {exc}", file=sys.stderr)
        return 2
    try:
        reports = param_server.sweep(variants, counts, args.duration, launcher=args.launcher)
    except LaunchgraphError as exc:
        print(f"launchgraph bench: {exc}", file=sys.stderr)
        return 1
    lines = [param_server.CSV_HEADER] + [r.csv_row() for r in reports]
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if args.out:
        try:
            with open(args.out, "w", encoding="utf-8") as fh:
                fh.write(text)
        except OSError as exc:
            print(f"launchgraph bench: cannot write {args.out}: {exc}", file=sys.stderr)
            return 1
    return 0


def cmd_validate(args) -> int:
    try:
        with open(args.manifest, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        print(f"launchgraph validate: {exc}", file=sys.stderr)
        return 1
    try:
        loaded = from_manifest(text)
    except LaunchgraphError as exc:
        print(f"launchgraph validate: {exc}", file=sys.stderr)
        return 1
    report = loaded.program.validate()
    print(report)
    return 0 if report.ok else 1


def cmd_run_node(args) -> int:
    """Child entry: rebuild the program from the manifest and run one
    node's executables to completion. Diagnostics go to stderr only."""
    try:
        with open(args.manifest, "r", encoding="utf-8") as fh:
            loaded = from_manifest(fh.read())
        for module in loaded.imports:
            importlib.import_module(module)
        if not 0 <= args.node < len(loaded.program.nodes):
            raise LaunchgraphError(f"no node {args.node} in manifest")
        table = {token: Endpoint.parse(addr) for token, addr in loaded.addresses.items()}
        spec = loaded.program.nodes[args.node]
        executables = to_executables(spec, table, DEFAULT_REGISTRY)
        if args.exec_index is not None:
            if not 0 <= args.exec_index < len(executables):
                raise LaunchgraphError(f"node {args.node} has no executable {args.exec_index}")
            executables = [executables[args.exec_index]]
    except (LaunchgraphError, OSError, ImportError) as exc:
        print(f"launchgraph run-node: {exc}", file=sys.stderr)
        return 1

    contexts = [ExecutionContext(table, DEFAULT_REGISTRY) for _ in executables]
    failures = []
    failure_lock = threading.Lock()

    def body(executable, ctx):
        try:
            executable.runner(ctx, lambda: None)
        except Exception as exc:
            with failure_lock:
                failures.append(f"{executable.name}: {exc}")
            # Fail the whole slice: serving siblings in this process stop
            # so the supervisor sees one exit and can restart the node.
            for other in contexts:
                other.close()
        finally:
            ctx.close()

    threads = [
        threading.Thread(target=body, args=(e, ctx), name=e.name)
        for e, ctx in zip(executables, contexts)
    ]
    for thread in threads:
        thread.start()
    for thread in threads:
        thread.join()
    for message in failures:
        print(f"launchgraph run-node: {message}", file=sys.stderr)
    return 1 if failures else 0


def main(argv=None) -> int:
    _configure_logging()
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    handlers = {
        "run": cmd_run,
        "bench": cmd_bench,
        "validate": cmd_validate,
        "run-node": cmd_run_node,
    }
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
