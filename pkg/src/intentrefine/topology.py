"""Network topology model: parsing, endpoint resolution, simple-path enumeration.

The input format is a flat YAML document with `nodes` and `links` lists (see
tests/fixtures for full scenarios). Topologies are immutable after parsing and
all operations here are pure.
"""

from __future__ import annotations

import hashlib
import ipaddress
import json
import re
from dataclasses import dataclass, field

import yaml

from .errors import DocumentSyntaxError, UnknownEndpoint, ValidationError

NODE_ID_RE = re.compile(r"^[A-Za-z0-9_.-]+$")

ENDPOINT = "endpoint"
SUBNET = "subnet"
DEVICE = "device"
NODE_KINDS = (ENDPOINT, SUBNET, DEVICE)


@dataclass(frozen=True)
class Node:
    id: str
    kind: str
    ip: str | None = None
    domains: frozenset[str] = frozenset()
    controls: tuple[str, ...] = ()


@dataclass(frozen=True)
class Path:
    """Intermediate nodes of a simple route, endpoints excluded."""

    intermediate: tuple[str, ...]

    def devices(self, topo: Topology) -> tuple[str, ...]:
        """Project the path onto its device nodes only."""
        return tuple(n for n in self.intermediate if topo.nodes[n].kind == DEVICE)


@dataclass(frozen=True)
class Topology:
    name: str
    nodes: dict[str, Node]
    links: frozenset[frozenset[str]]
    _adjacency: dict[str, tuple[str, ...]] = field(default_factory=dict, repr=False)

    def neighbors(self, node_id: str) -> tuple[str, ...]:
        return self._adjacency.get(node_id, ())

    def canonical(self) -> str:
        """Deterministic serialization, independent of declaration order."""
        doc = {
            "name": self.name,
            "nodes": [
                {
                    "id": n.id,
                    "kind": n.kind,
                    "ip": n.ip,
                    "domains": sorted(n.domains),
                    "controls": sorted(n.controls),
                }
                for n in sorted(self.nodes.values(), key=lambda n: n.id)
            ],
            "links": sorted(sorted(pair) for pair in self.links),
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()


def _require_ipv4(value: str, context: str) -> str:
    try:
        ipaddress.IPv4Address(value)
    except (ipaddress.AddressValueError, ValueError):
        raise ValidationError(f"{context}: not an IPv4 dotted-quad: {value!r}")
    return value


def _parse_node(raw: object) -> Node:
    if not isinstance(raw, dict) or "id" not in raw:
        raise DocumentSyntaxError(f"node entry must be a mapping with an 'id': {raw!r}")
    node_id = str(raw["id"])
    if not NODE_ID_RE.match(node_id):
        raise ValidationError(f"invalid node id {node_id!r}")
    kind = raw.get("kind")
    if kind not in NODE_KINDS:
        raise ValidationError(f"node {node_id}: missing or unknown kind {kind!r}")
    ip = raw.get("ip")
    domains = raw.get("domains") or []
    controls = raw.get("controls")
    if ip is not None:
        if kind != ENDPOINT:
            raise ValidationError(f"node {node_id}: only endpoints carry an ip")
        _require_ipv4(str(ip), f"node {node_id}")
    if domains and kind != ENDPOINT:
        raise ValidationError(f"node {node_id}: only endpoints carry domains")
    if controls:
        if kind != DEVICE:
            raise ValidationError(f"node {node_id}: only devices carry controls")
    if controls is None:
        controls = []
    return Node(
        id=node_id,
        kind=kind,
        ip=str(ip) if ip is not None else None,
        domains=frozenset(str(d).lower() for d in domains),
        controls=tuple(str(c) for c in controls),
    )


def parse_topology(document: str) -> Topology:
    """Parse and validate a topology document.

    Declaration order does not affect the result. Raises DocumentSyntaxError
    for malformed YAML and ValidationError for structural violations
    (duplicate ids, dangling links, endpoints not attached to exactly one
    subnet).
    """
    try:
        raw = yaml.safe_load(document)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise DocumentSyntaxError(f"malformed topology document: {exc}", line=line)
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise DocumentSyntaxError("topology document must be a mapping")

    nodes: dict[str, Node] = {}
    for entry in raw.get("nodes") or []:
        node = _parse_node(entry)
        if node.id in nodes:
            raise ValidationError(f"duplicate node id {node.id!r}")
        nodes[node.id] = node

    links: set[frozenset[str]] = set()
    for entry in raw.get("links") or []:
        if not isinstance(entry, (list, tuple)) or len(entry) != 2:
            raise DocumentSyntaxError(f"link entry must be a pair: {entry!r}")
        a, b = str(entry[0]), str(entry[1])
        if a == b:
            raise ValidationError(f"self-link on {a!r}")
        for end in (a, b):
            if end not in nodes:
                raise ValidationError(f"link references undeclared node {end!r}")
        links.add(frozenset((a, b)))

    adjacency: dict[str, set[str]] = {n: set() for n in nodes}
    for pair in links:
        a, b = tuple(pair)
        adjacency[a].add(b)
        adjacency[b].add(a)

    for node in nodes.values():
        if node.kind == ENDPOINT:
            attached = adjacency[node.id]
            if len(attached) != 1 or any(nodes[p].kind != SUBNET for p in attached):
                raise ValidationError(
                    f"endpoint {node.id} must attach to exactly one subnet"
                )

    return Topology(
        name=str(raw.get("name", "")),
        nodes=nodes,
        links=frozenset(links),
        _adjacency={n: tuple(sorted(v)) for n, v in adjacency.items()},
    )


def resolve_endpoint(topo: Topology, name: str) -> Node:
    node = topo.nodes.get(name)
    if node is None or node.kind != ENDPOINT:
        raise UnknownEndpoint(f"no endpoint named {name!r} in topology {topo.name!r}")
    return node


def enumerate_paths(topo: Topology, subject: str, obj: str) -> list[Path]:
    """All simple paths between two endpoints, endpoints excluded.

    Result is sorted lexicographically by node-id sequence; empty when the
    endpoints are disconnected.
    """
    resolve_endpoint(topo, subject)
    resolve_endpoint(topo, obj)

    found: list[tuple[str, ...]] = []
    stack: list[str] = []
    visited = {subject}

    def dfs(current: str) -> None:
        for nxt in topo.neighbors(current):
            if nxt == obj:
                found.append(tuple(stack))
            elif nxt not in visited and topo.nodes[nxt].kind != ENDPOINT:
                visited.add(nxt)
                stack.append(nxt)
                dfs(nxt)
                stack.pop()
                visited.remove(nxt)

    dfs(subject)
    return [Path(intermediate=seq) for seq in sorted(found)]
