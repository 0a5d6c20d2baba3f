"""Program graphs built during the setup phase.

A Program is an ordered list of node specs plus resource groups, edges, and
a placeholder registry. Nothing here touches sockets or constructs service
objects; specs are pure data, which is what lets a graph serialize into a
manifest and launch on any platform.

Edges point from the receiving node to its provider: adding a node whose
args contain a handle to node B records (new node -> B).
"""
from __future__ import annotations

import json
import math
from contextlib import contextmanager
from dataclasses import dataclass

from .errors import (
    DanglingHandleError,
    GroupTypeError,
    InvalidArgumentError,
    InvalidStateError,
    UnknownGroupError,
    UnresolvedPlaceholderError,
)

NODE_KINDS = ("service", "leaf", "cacher", "colocation", "deferred")
COLOCATION_MODES = ("threads", "processes")
DEFAULT_GROUP = "default"
MANIFEST_FORMAT = "launchgraph/1"
# Reserved mapping key marking a handle reference inside serialized args.
HANDLE_KEY = "__handle__"


class Handle:
    """Data-only reference to a node.

    Carries the target's kind and factory name from the moment the spec is
    created; the placeholder token and node id are filled in when the spec
    is added to a program. Handles hold no connection; dereferencing one at
    execution time needs the launcher's address table.
    """

    __slots__ = ("kind", "factory", "placeholder", "target_node_id")

    def __init__(self, kind: str, factory: str):
        self.kind = kind
        self.factory = factory
        self.placeholder: str | None = None
        self.target_node_id: int | None = None

    def __repr__(self):
        where = self.placeholder if self.placeholder is not None else "unadded"
        return f"<Handle {self.kind}:{self.factory or '?'} {where}>"


class HandleRef:
    """A handle-shaped argument: wraps a live Handle, or a bare placeholder
    token when the graph came from a manifest."""

    __slots__ = ("handle", "token")

    def __init__(self, target):
        if isinstance(target, Handle):
            self.handle: Handle | None = target
            self.token: str | None = None
        elif isinstance(target, HandleRef):
            self.handle = target.handle
            self.token = target.token
        elif isinstance(target, str) and target:
            self.handle = None
            self.token = target
        else:
            raise InvalidArgumentError(f"not a handle or placeholder token: {target!r}")

    @property
    def placeholder(self) -> str | None:
        return self.token if self.handle is None else self.handle.placeholder

    def __eq__(self, other):
        if not isinstance(other, HandleRef):
            return NotImplemented
        mine, theirs = self.placeholder, other.placeholder
        if mine is None or theirs is None:
            return self.handle is not None and self.handle is other.handle
        return mine == theirs

    def __hash__(self):
        token = self.placeholder
        return hash(token) if token is not None else id(self.handle)

    def __repr__(self):
        return f"<HandleRef {self.placeholder or 'unresolved'}>"


def _normalize_arg(value, path: str):
    if isinstance(value, Handle):
        return HandleRef(value)
    if isinstance(value, HandleRef):
        return value
    if value is None or isinstance(value, (bool, str)):
        return value
    if isinstance(value, int):
        return value
    if isinstance(value, float):
        if not math.isfinite(value):
            raise InvalidArgumentError(f"non-finite float at {path}: {value!r}")
        return value
    if isinstance(value, (list, tuple)):
        return [_normalize_arg(v, f"{path}[{i}]") for i, v in enumerate(value)]
    if isinstance(value, dict):
        out = {}
        for key, item in value.items():
            if not isinstance(key, str):
                raise InvalidArgumentError(f"non-string mapping key at {path}: {key!r}")
            if key == HANDLE_KEY:
                raise InvalidArgumentError(f"{HANDLE_KEY!r} is reserved for handle markers")
            out[key] = _normalize_arg(item, f"{path}[{key!r}]")
        return out
    raise InvalidArgumentError(f"not a node argument at {path}: {type(value).__name__}")


def _iter_refs(value):
    if isinstance(value, HandleRef):
        yield value
    elif isinstance(value, list):
        for item in value:
            yield from _iter_refs(item)
    elif isinstance(value, dict):
        for item in value.values():
            yield from _iter_refs(item)


class NodeSpec:
    """What to build at execution time: a kind, a registered factory name,
    and construction args. Specs are inert data until launched."""

    __slots__ = ("kind", "factory", "args", "node_id", "group", "handle", "children", "mode", "_consumed")

    def __init__(self, kind, factory, args, handle=None, children=(), mode=None):
        self.kind = kind
        self.factory = factory
        self.args = args
        self.handle = handle
        self.children: tuple[NodeSpec, ...] = tuple(children)
        self.mode = mode
        self.node_id: int | None = None
        self.group: str | None = None
        self._consumed = False

    def __repr__(self):
        where = self.node_id if self.node_id is not None else "unadded"
        return f"<NodeSpec {self.kind}:{self.factory or '?'} node={where}>"


def _check_factory(factory) -> str:
    if not isinstance(factory, str) or not factory:
        raise InvalidArgumentError("factory must be a nonempty registered name")
    return factory


def service_node(factory: str, *args) -> NodeSpec:
    """A node that binds an endpoint and serves its registered methods."""
    _check_factory(factory)
    normalized = [_normalize_arg(a, f"args[{i}]") for i, a in enumerate(args)]
    return NodeSpec("service", factory, normalized, handle=Handle("service", factory))


def leaf_node(factory: str, *args) -> NodeSpec:
    """A run-only node: it initiates calls but serves nothing and has no
    handle, so nothing can ever call it."""
    _check_factory(factory)
    normalized = [_normalize_arg(a, f"args[{i}]") for i, a in enumerate(args)]
    return NodeSpec("leaf", factory, normalized, handle=None)


def cacher_node(target, ttl_seconds) -> NodeSpec:
    """A memoizing proxy in front of `target`.

    Serves exactly the target's registered methods; fresh entries (younger
    than ttl_seconds) answer without contacting the target.
    """
    if isinstance(target, HandleRef):
        target = target.handle
    if not isinstance(target, Handle):
        raise InvalidArgumentError(f"cacher target must be a handle, got {type(target).__name__}")
    if target.kind not in ("service", "cacher"):
        raise InvalidArgumentError(f"cannot cache a {target.kind} node")
    if isinstance(ttl_seconds, bool) or not isinstance(ttl_seconds, (int, float)):
        raise InvalidArgumentError(f"ttl must be a number, got {type(ttl_seconds).__name__}")
    ttl = float(ttl_seconds)
    if not math.isfinite(ttl) or ttl < 0:
        raise InvalidArgumentError(f"ttl must be finite and nonnegative, got {ttl!r}")
    return NodeSpec(
        "cacher", target.factory, [HandleRef(target), ttl], handle=Handle("cacher", target.factory)
    )


def colocation_node(children, mode: str) -> NodeSpec:
    """A placement wrapper forcing its children onto one host.

    mode="threads" additionally puts them in one process. Children keep
    their own handles and endpoints; the wrapper itself serves nothing.
    """
    children = list(children)
    if not children:
        raise InvalidArgumentError("colocation needs at least one child")
    if mode not in COLOCATION_MODES:
        raise InvalidArgumentError(f"colocation mode must be one of {COLOCATION_MODES}, got {mode!r}")
    seen = set()
    for child in children:
        if not isinstance(child, NodeSpec):
            raise InvalidArgumentError(f"colocation child must be a node spec, got {type(child).__name__}")
        if child.kind == "colocation":
            raise InvalidArgumentError("colocation nodes cannot nest")
        if child._consumed or child.node_id is not None:
            raise InvalidArgumentError("colocation child was already added to a program")
        if id(child) in seen:
            raise InvalidArgumentError("duplicate colocation child")
        seen.add(id(child))
    return NodeSpec("colocation", "", [], handle=Handle("colocation", ""), children=children, mode=mode)


class DeferredSlot:
    """Write-once binding point for a node whose handle was issued before
    its implementation was known."""

    __slots__ = ("_program", "node_id")

    def __init__(self, program: "Program", node_id: int):
        self._program = program
        self.node_id = node_id

    def bind(self, factory: str, *args, kind: str = "service") -> None:
        self._program._bind_deferred(self, factory, args, kind)


@dataclass(frozen=True)
class Issue:
    severity: str
    code: str
    message: str
    node_id: int | None = None

    def __str__(self):
        where = f" (node {self.node_id})" if self.node_id is not None else ""
        return f"{self.severity}[{self.code}]{where}: {self.message}"


class ValidationReport:
    """Errors block launching; warnings describe suspect but legal shapes."""

    def __init__(self, issues):
        self.issues = list(issues)

    @property
    def errors(self):
        return [i for i in self.issues if i.severity == "error"]

    @property
    def warnings(self):
        return [i for i in self.issues if i.severity == "warning"]

    @property
    def ok(self) -> bool:
        return not self.errors

    def summary(self) -> str:
        return f"{len(self.errors)} errors, {len(self.warnings)} warnings"

    def __str__(self):
        lines = [str(i) for i in self.issues]
        lines.append(self.summary())
        return "\n".join(lines)


class Program:
    """An ordered graph of node specs.

    Construction is single-threaded; freeze() makes the graph immutable so
    launchers can share it read-only.
    """

    def __init__(self, name: str):
        if not isinstance(name, str) or not name:
            raise InvalidArgumentError("program name must be a nonempty string")
        self.name = name
        self.nodes: list[NodeSpec] = []
        self.groups: dict[str, list[int]] = {DEFAULT_GROUP: []}
        self.edges: set[tuple[int, int]] = set()
        self.placeholders: dict[str, int] = {}
        self._handles: dict[str, Handle] = {}
        self._group_stack: list[str] = []
        self._frozen = False

    def __repr__(self):
        return f"<Program {self.name!r} nodes={len(self.nodes)} edges={len(self.edges)}>"

    def _check_mutable(self):
        if self._frozen:
            raise InvalidStateError("program is frozen once launch begins")

    def freeze(self) -> None:
        self._frozen = True

    @contextmanager
    def group(self, name: str):
        """Scope within which added nodes land in the named resource group."""
        self._check_mutable()
        if not isinstance(name, str) or not name:
            raise InvalidArgumentError("group name must be a nonempty string")
        if name in self._group_stack:
            raise InvalidStateError(f"group {name!r} is already open")
        self.groups.setdefault(name, [])
        self._group_stack.append(name)
        try:
            yield self
        finally:
            self._group_stack.remove(name)

    def _active_group(self, group) -> str:
        if group is None:
            return self._group_stack[-1] if self._group_stack else DEFAULT_GROUP
        if not isinstance(group, str) or not group:
            raise InvalidArgumentError("group name must be a nonempty string")
        if group not in self.groups:
            raise UnknownGroupError(f"group {group!r} was never opened")
        return group

    def _check_group_kind(self, group: str, kind: str) -> None:
        # The default group is a catch-all and exempt from homogeneity.
        if group == DEFAULT_GROUP:
            return
        canon = "service" if kind == "deferred" else kind
        for nid in self.groups.get(group, ()):
            existing = self.nodes[nid].kind
            existing_canon = "service" if existing == "deferred" else existing
            if existing_canon != canon:
                raise GroupTypeError(
                    f"group {group!r} holds {existing} nodes; cannot add a {kind} node"
                )
            break

    def _resolve_ref(self, ref: HandleRef, tentative: dict[int, str], node_id: int) -> int:
        if ref.handle is not None:
            token = ref.handle.placeholder
            if token is None:
                if id(ref.handle) in tentative:
                    return node_id
                raise DanglingHandleError("handle references a node spec not added to this program")
            if self._handles.get(token) is not ref.handle:
                raise DanglingHandleError(f"handle {token!r} belongs to a different program")
            return self.placeholders[token]
        token = ref.token
        if token in tentative.values():
            return node_id
        if token not in self.placeholders:
            raise DanglingHandleError(f"unknown placeholder {token!r}")
        return self.placeholders[token]

    def add(self, spec: NodeSpec, group: str | None = None) -> Handle | None:
        """Append a node; returns its Handle, or None for leaf nodes.

        Validation happens before any mutation, so a failed add leaves the
        graph unchanged.
        """
        self._check_mutable()
        if not isinstance(spec, NodeSpec):
            raise InvalidArgumentError(f"expected a node spec, got {type(spec).__name__}")
        if spec.kind == "deferred":
            raise InvalidArgumentError("use add_deferred for deferred nodes")
        if spec.kind not in NODE_KINDS:
            raise InvalidArgumentError(f"unknown node kind {spec.kind!r}")
        if spec._consumed or spec.node_id is not None:
            raise InvalidStateError("node spec was already added")
        group_name = self._active_group(group)
        self._check_group_kind(group_name, spec.kind)
        node_id = len(self.nodes)

        tentative: dict[int, str] = {}
        if spec.handle is not None:
            tentative[id(spec.handle)] = f"n{node_id}"
        for j, child in enumerate(spec.children):
            if child.handle is not None:
                tentative[id(child.handle)] = f"n{node_id}.c{j}"

        edges = set()
        for ref in _iter_refs(spec.args):
            edges.add((node_id, self._resolve_ref(ref, tentative, node_id)))
        for child in spec.children:
            for ref in _iter_refs(child.args):
                provider = self._resolve_ref(ref, tentative, node_id)
                # Wiring between colocated siblings stays internal.
                if provider != node_id:
                    edges.add((node_id, provider))

        spec.node_id = node_id
        spec.group = group_name
        spec._consumed = True
        for child in spec.children:
            child._consumed = True
        if spec.handle is not None:
            self._assign_token(spec.handle, f"n{node_id}", node_id)
        for j, child in enumerate(spec.children):
            if child.handle is not None:
                self._assign_token(child.handle, f"n{node_id}.c{j}", node_id)
        self.nodes.append(spec)
        self.groups[group_name].append(node_id)
        self.edges.update(edges)
        return spec.handle

    def _assign_token(self, handle: Handle, token: str, node_id: int) -> None:
        handle.placeholder = token
        handle.target_node_id = node_id
        self.placeholders[token] = node_id
        self._handles[token] = handle

    def add_deferred(self, group: str | None = None) -> tuple[Handle, DeferredSlot]:
        """Append an empty node, returning its handle now and a slot to
        bind the implementation later. Enables cyclic wiring."""
        self._check_mutable()
        group_name = self._active_group(group)
        self._check_group_kind(group_name, "deferred")
        node_id = len(self.nodes)
        spec = NodeSpec("deferred", "", [], handle=Handle("deferred", ""))
        spec.node_id = node_id
        spec.group = group_name
        spec._consumed = True
        self._assign_token(spec.handle, f"n{node_id}", node_id)
        self.nodes.append(spec)
        self.groups[group_name].append(node_id)
        return spec.handle, DeferredSlot(self, node_id)

    def _bind_deferred(self, slot: DeferredSlot, factory: str, args, kind: str) -> None:
        self._check_mutable()
        if slot._program is not self:
            raise InvalidArgumentError("slot belongs to a different program")
        if kind != "service":
            raise InvalidArgumentError(
                f"a deferred node already handed out a handle; it can only become a service, not {kind!r}"
            )
        spec = self.nodes[slot.node_id]
        if spec.kind != "deferred":
            raise InvalidStateError(f"node {slot.node_id} is already bound")
        _check_factory(factory)
        normalized = [_normalize_arg(a, f"args[{i}]") for i, a in enumerate(args)]
        edges = set()
        for ref in _iter_refs(normalized):
            edges.add((slot.node_id, self._resolve_ref(ref, {}, slot.node_id)))
        spec.kind = "service"
        spec.factory = factory
        spec.args = normalized
        spec.handle.kind = "service"
        spec.handle.factory = factory
        self.edges.update(edges)

    def validate(self) -> ValidationReport:
        """Report structural problems; cycles are warnings, not errors."""
        issues = []
        for spec in self.nodes:
            if spec.kind == "deferred":
                issues.append(
                    Issue("error", "unbound-deferred", "deferred node was never bound", spec.node_id)
                )
            arg_sources = [spec.args] + [child.args for child in spec.children]
            for args in arg_sources:
                for ref in _iter_refs(args):
                    token = ref.placeholder
                    if token is None or token not in self.placeholders:
                        issues.append(
                            Issue(
                                "error",
                                "dangling-handle",
                                f"argument references unknown placeholder {token!r}",
                                spec.node_id,
                            )
                        )
        for name in sorted(self.groups):
            if name == DEFAULT_GROUP:
                continue
            kinds = set()
            for nid in self.groups[name]:
                kind = self.nodes[nid].kind
                kinds.add("service" if kind == "deferred" else kind)
            if len(kinds) > 1:
                issues.append(
                    Issue(
                        "error",
                        "group-type-violation",
                        f"group {name!r} mixes node kinds {sorted(kinds)}",
                    )
                )
        for a, b in sorted(self.edges):
            if a == b:
                issues.append(Issue("warning", "self-loop", "node calls itself", a))
        for component in _cycles(len(self.nodes), self.edges):
            members = ",".join(str(n) for n in component)
            issues.append(
                Issue("warning", "cycle", f"nodes {members} form a call cycle", component[0])
            )
        return ValidationReport(issues)


def _cycles(count: int, edges) -> list[list[int]]:
    """Strongly connected components of size >= 2, via iterative Tarjan."""
    adjacency: dict[int, list[int]] = {n: [] for n in range(count)}
    for a, b in sorted(edges):
        if a != b:
            adjacency[a].append(b)
    index: dict[int, int] = {}
    low: dict[int, int] = {}
    on_stack: set[int] = set()
    stack: list[int] = []
    counter = [0]
    components: list[list[int]] = []

    for root in range(count):
        if root in index:
            continue
        work = [(root, 0)]
        while work:
            node, edge_i = work[-1]
            if edge_i == 0:
                index[node] = low[node] = counter[0]
                counter[0] += 1
                stack.append(node)
                on_stack.add(node)
            advanced = False
            neighbors = adjacency[node]
            while edge_i < len(neighbors):
                nxt = neighbors[edge_i]
                edge_i += 1
                if nxt not in index:
                    work[-1] = (node, edge_i)
                    work.append((nxt, 0))
                    advanced = True
                    break
                if nxt in on_stack:
                    low[node] = min(low[node], index[nxt])
            if advanced:
                continue
            work.pop()
            if low[node] == index[node]:
                component = []
                while True:
                    member = stack.pop()
                    on_stack.discard(member)
                    component.append(member)
                    if member == node:
                        break
                if len(component) > 1:
                    components.append(sorted(component))
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[node])
    components.sort()
    return components


@dataclass
class Manifest:
    """A deserialized launch manifest: the graph plus launch-time extras."""

    program: Program
    addresses: dict[str, str]
    imports: list[str]


def _encode_arg(value):
    if isinstance(value, HandleRef):
        token = value.placeholder
        if token is None:
            raise UnresolvedPlaceholderError("handle was never added to a program")
        return {HANDLE_KEY: token}
    if isinstance(value, list):
        return [_encode_arg(v) for v in value]
    if isinstance(value, dict):
        return {k: _encode_arg(v) for k, v in value.items()}
    return value


def _node_doc(spec: NodeSpec) -> dict:
    doc = {
        "args": [_encode_arg(a) for a in spec.args],
        "factory": spec.factory,
        "group": spec.group,
        "id": spec.node_id,
        "kind": spec.kind,
        "placeholder": spec.handle.placeholder if spec.handle is not None else None,
    }
    if spec.kind == "colocation":
        doc["mode"] = spec.mode
        doc["children"] = [
            {
                "args": [_encode_arg(a) for a in child.args],
                "factory": child.factory,
                "kind": child.kind,
                "placeholder": child.handle.placeholder if child.handle is not None else None,
            }
            for child in spec.children
        ]
    return doc


def to_manifest(program: Program, addresses=None, imports=()) -> str:
    """Serialize a program to canonical JSON: sorted keys, compact
    separators, UTF-8 text. Deterministic for identical graphs."""
    doc = {
        "addresses": {token: str(ep) for token, ep in (addresses or {}).items()},
        "format": MANIFEST_FORMAT,
        "groups": {name: list(ids) for name, ids in program.groups.items()},
        "imports": sorted(set(imports)),
        "name": program.name,
        "nodes": [_node_doc(spec) for spec in program.nodes],
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def _bad(msg: str) -> InvalidArgumentError:
    return InvalidArgumentError(f"malformed manifest: {msg}")


def _decode_arg(value, path: str):
    if isinstance(value, dict):
        if HANDLE_KEY in value:
            if set(value) != {HANDLE_KEY} or not isinstance(value[HANDLE_KEY], str):
                raise _bad(f"bad handle marker at {path}")
            return HandleRef(value[HANDLE_KEY])
        return {k: _decode_arg(v, f"{path}[{k!r}]") for k, v in value.items()}
    if isinstance(value, list):
        return [_decode_arg(v, f"{path}[{i}]") for i, v in enumerate(value)]
    return value


def _decode_child(doc, path: str) -> NodeSpec:
    if not isinstance(doc, dict):
        raise _bad(f"{path} is not an object")
    kind = doc.get("kind")
    if kind not in ("service", "cacher", "leaf"):
        raise _bad(f"{path} has invalid child kind {kind!r}")
    factory = doc.get("factory")
    if not isinstance(factory, str):
        raise _bad(f"{path} missing factory")
    args = doc.get("args")
    if not isinstance(args, list):
        raise _bad(f"{path} missing args")
    placeholder = doc.get("placeholder")
    handle = None
    if placeholder is not None:
        if not isinstance(placeholder, str):
            raise _bad(f"{path} has bad placeholder")
        handle = Handle(kind, factory)
        handle.placeholder = placeholder
    child = NodeSpec(kind, factory, [_decode_arg(a, f"{path}.args") for a in args], handle=handle)
    child._consumed = True
    return child


def from_manifest(text) -> Manifest:
    """Parse a manifest back into a Program.

    Dangling handle references are tolerated here and surface through
    validate(); structural malformations raise immediately.
    """
    if isinstance(text, (bytes, bytearray)):
        text = text.decode("utf-8")
    if isinstance(text, str):
        try:
            doc = json.loads(text)
        except ValueError as exc:
            raise _bad(str(exc)) from None
    else:
        doc = text
    if not isinstance(doc, dict):
        raise _bad("top level is not an object")
    if doc.get("format") != MANIFEST_FORMAT:
        raise _bad(f"unsupported format {doc.get('format')!r}")
    name = doc.get("name")
    if not isinstance(name, str) or not name:
        raise _bad("missing program name")
    nodes = doc.get("nodes")
    groups = doc.get("groups")
    if not isinstance(nodes, list) or not isinstance(groups, dict):
        raise _bad("missing nodes or groups")

    program = Program(name)
    for position, node_doc in enumerate(nodes):
        if not isinstance(node_doc, dict):
            raise _bad(f"nodes[{position}] is not an object")
        if node_doc.get("id") != position:
            raise _bad(f"node ids must be dense 0..{len(nodes) - 1}")
        kind = node_doc.get("kind")
        if kind not in NODE_KINDS:
            raise _bad(f"nodes[{position}] has unknown kind {kind!r}")
        factory = node_doc.get("factory")
        group = node_doc.get("group")
        args = node_doc.get("args")
        if not isinstance(factory, str) or not isinstance(group, str) or not isinstance(args, list):
            raise _bad(f"nodes[{position}] missing factory, group, or args")
        placeholder = node_doc.get("placeholder")
        handle = None
        if placeholder is not None:
            if not isinstance(placeholder, str):
                raise _bad(f"nodes[{position}] has bad placeholder")
            handle = Handle(kind, factory)
        decoded_args = [_decode_arg(a, f"nodes[{position}].args") for a in args]
        children = ()
        mode = None
        if kind == "colocation":
            mode = node_doc.get("mode")
            if mode not in COLOCATION_MODES:
                raise _bad(f"nodes[{position}] has bad colocation mode {mode!r}")
            raw_children = node_doc.get("children")
            if not isinstance(raw_children, list) or not raw_children:
                raise _bad(f"nodes[{position}] colocation without children")
            children = [
                _decode_child(c, f"nodes[{position}].children[{j}]") for j, c in enumerate(raw_children)
            ]
        spec = NodeSpec(kind, factory, decoded_args, handle=handle, children=children, mode=mode)
        spec.node_id = position
        spec.group = group
        spec._consumed = True
        if handle is not None:
            program._assign_token(handle, placeholder, position)
        for child in spec.children:
            if child.handle is not None:
                program._assign_token(child.handle, child.handle.placeholder, position)
        program.nodes.append(spec)

    rebuilt_groups: dict[str, list[int]] = {DEFAULT_GROUP: []}
    for group_name, ids in groups.items():
        if not isinstance(group_name, str) or not isinstance(ids, list):
            raise _bad("groups must map names to id lists")
        rebuilt_groups[group_name] = []
        for nid in ids:
            if not isinstance(nid, int) or not 0 <= nid < len(program.nodes):
                raise _bad(f"group {group_name!r} references unknown node {nid!r}")
            rebuilt_groups[group_name].append(nid)
    placed = [nid for ids in rebuilt_groups.values() for nid in ids]
    if sorted(placed) != list(range(len(program.nodes))):
        raise _bad("groups must partition the node ids")
    for group_name, ids in rebuilt_groups.items():
        for nid in ids:
            if program.nodes[nid].group != group_name:
                raise _bad(f"node {nid} group disagrees with groups mapping")
    program.groups = rebuilt_groups

    for spec in program.nodes:
        arg_sources = [spec.args] + [child.args for child in spec.children]
        for args in arg_sources:
            for ref in _iter_refs(args):
                provider = program.placeholders.get(ref.placeholder)
                if provider is None:
                    continue  # left for validate() to flag
                if spec.children and provider == spec.node_id:
                    continue
                program.edges.add((spec.node_id, provider))

    addresses = doc.get("addresses", {})
    if not isinstance(addresses, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in addresses.items()
    ):
        raise _bad("addresses must map placeholder tokens to host:port strings")
    imports = doc.get("imports", [])
    if not isinstance(imports, list) or not all(isinstance(m, str) for m in imports):
        raise _bad("imports must be a list of module names")
    return Manifest(program=program, addresses=dict(addresses), imports=list(imports))
