"""Atlas graph model: model nodes, typed edges, integrity rules and analytics.

An :class:`Atlas` is a DAG whose nodes are trained models and whose edges are
weight transformations (fine-tuning, quantization, merging, ...). Edges are
validated on insertion so every atlas built through :meth:`Atlas.add_edge` is
acyclic and only merge edges produce multiple parents.

Every set-valued result is returned as a list sorted by ``(created_at, id)``.
"""

from __future__ import annotations

import heapq
import json
import math
from collections import defaultdict, deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Iterator, Mapping

from .errors import (
    CycleCreated,
    DuplicateId,
    IllegalMultiParent,
    InvalidNode,
    UnknownEndpoint,
    UnknownId,
)

ATTRIBUTE_KEYS = ("pipeline_tag", "library_name", "model_type", "license", "relation_type")
EXTENSION_PREFIX = "x-"


class EdgeKind(str, Enum):
    FINE_TUNE = "FineTune"
    ADAPTER = "Adapter"
    QUANTIZATION = "Quantization"
    MERGE = "Merge"
    DUPLICATE = "Duplicate"
    UNKNOWN = "Unknown"

    def __str__(self) -> str:
        return self.value


def is_attribute_key(key: str) -> bool:
    return key in ATTRIBUTE_KEYS or (key.startswith(EXTENSION_PREFIX) and len(key) > 2)


@dataclass
class ModelNode:
    """One model in the atlas.

    ``known_parents`` is ``None`` when the lineage is undocumented; an empty
    list means the model is documented as having no parent. ``attributes``
    and ``metrics`` omit keys that are unknown; a key mapped to ``None`` is an
    explicitly missing value and is preserved by serialization.
    """

    id: str
    created_at: int
    downloads: int = 0
    quantized: bool = False
    placeholder: bool = False
    known_parents: list[str] | None = None
    attributes: dict[str, str | None] = field(default_factory=dict)
    metrics: dict[str, float | None] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not isinstance(self.id, str) or not self.id:
            raise InvalidNode(f"model id must be a nonempty string, got {self.id!r}")
        if isinstance(self.created_at, bool) or not isinstance(self.created_at, int):
            raise InvalidNode(f"{self.id}: created_at must be an integer")
        if self.created_at <= 0 and not self.placeholder:
            raise InvalidNode(f"{self.id}: created_at must be positive")
        if isinstance(self.downloads, bool) or not isinstance(self.downloads, int) or self.downloads < 0:
            raise InvalidNode(f"{self.id}: downloads must be a non-negative integer")
        for key, value in self.attributes.items():
            if not is_attribute_key(key):
                raise InvalidNode(f"{self.id}: unknown attribute key {key!r}")
            if value is not None and not isinstance(value, str):
                raise InvalidNode(f"{self.id}: attribute {key!r} must be a string or null")
        for name, value in self.metrics.items():
            if value is None:
                continue
            if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
                raise InvalidNode(f"{self.id}: metric {name!r} must be a finite real or null")
        if self.known_parents is not None:
            if any(not isinstance(p, str) or not p for p in self.known_parents):
                raise InvalidNode(f"{self.id}: known_parents must be nonempty ids")
            if self.id in self.known_parents:
                raise InvalidNode(f"{self.id}: a model cannot be its own parent")

    @property
    def sort_key(self) -> tuple[int, str]:
        return (self.created_at, self.id)

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "created_at": self.created_at,
            "downloads": self.downloads,
            "quantized": self.quantized,
            "placeholder": self.placeholder,
            "known_parents": None if self.known_parents is None else list(self.known_parents),
            "attributes": dict(self.attributes),
            "metrics": dict(self.metrics),
        }

    @classmethod
    def from_dict(cls, record: Mapping[str, Any]) -> "ModelNode":
        parents = record.get("known_parents")
        metrics = {
            k: (float(v) if isinstance(v, int) and not isinstance(v, bool) else v)
            for k, v in (record.get("metrics") or {}).items()
        }
        return cls(
            id=record["id"],
            created_at=record["created_at"],
            downloads=record.get("downloads", 0) if record.get("downloads") is not None else 0,
            quantized=bool(record.get("quantized", False)),
            placeholder=bool(record.get("placeholder", False)),
            known_parents=None if parents is None else list(parents),
            attributes=dict(record.get("attributes") or {}),
            metrics=metrics,
        )


@dataclass(frozen=True)
class Edge:
    parent: str
    child: str
    kind: EdgeKind = EdgeKind.UNKNOWN

    def to_dict(self) -> dict[str, str]:
        return {"parent": self.parent, "child": self.child, "kind": self.kind.value}


@dataclass(frozen=True)
class Hub:
    """Sibling leaves that share exactly the same parent set."""

    parents: tuple[str, ...]
    members: tuple[str, ...]


class Atlas:
    """Directed acyclic graph of :class:`ModelNode` objects.

    Mutation happens during a build phase through :meth:`add_node` and
    :meth:`add_edge`; all query methods are read-only.
    """

    def __init__(self, nodes: Iterable[ModelNode] = (), edges: Iterable[Edge] = ()):
        self.nodes: dict[str, ModelNode] = {}
        self._out: dict[str, dict[str, EdgeKind]] = {}
        self._in: dict[str, dict[str, EdgeKind]] = {}
        for node in nodes:
            self.add_node(node)
        for edge in edges:
            self.add_edge(edge)

    # -- construction -----------------------------------------------------

    def add_node(self, node: ModelNode) -> "Atlas":
        if node.id in self.nodes:
            raise DuplicateId(f"model {node.id!r} already present")
        self.nodes[node.id] = node
        self._out[node.id] = {}
        self._in[node.id] = {}
        return self

    def add_edge(self, edge: Edge | str, child: str | None = None,
                 kind: EdgeKind | str = EdgeKind.UNKNOWN) -> "Atlas":
        """Insert an edge, either as an :class:`Edge` or as ``(parent, child, kind)``."""
        if not isinstance(edge, Edge):
            edge = Edge(edge, child, EdgeKind(kind))  # type: ignore[arg-type]
        parent, child = edge.parent, edge.child
        for endpoint in (parent, child):
            if endpoint not in self.nodes:
                raise UnknownEndpoint(f"edge {parent!r} -> {child!r}: unknown node {endpoint!r}")
        if parent == child:
            raise CycleCreated(f"self-loop on {parent!r}")
        if child in self._out[parent]:
            raise DuplicateId(f"edge {parent!r} -> {child!r} already present")
        if self._in[child] and edge.kind is not EdgeKind.MERGE:
            raise IllegalMultiParent(
                f"{child!r} already has a parent; additional parents need a Merge edge"
            )
        if self._reaches(child, parent):
            raise CycleCreated(f"edge {parent!r} -> {child!r} would create a cycle")
        self._out[parent][child] = edge.kind
        self._in[child][parent] = edge.kind
        return self

    def _reaches(self, start: str, target: str) -> bool:
        stack = [start]
        seen = {start}
        while stack:
            current = stack.pop()
            if current == target:
                return True
            for nxt in self._out[current]:
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        return False

    # -- basic queries ----------------------------------------------------

    def __len__(self) -> int:
        return len(self.nodes)

    def __contains__(self, model_id: object) -> bool:
        return model_id in self.nodes

    def __iter__(self) -> Iterator[ModelNode]:
        return iter(self.sorted_nodes())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Atlas):
            return NotImplemented
        return self.nodes == other.nodes and set(self.edges) == set(other.edges)

    def _require(self, model_id: str) -> ModelNode:
        try:
            return self.nodes[model_id]
        except KeyError:
            raise UnknownId(f"unknown model {model_id!r}") from None

    def key(self, model_id: str) -> tuple[int, str]:
        return self.nodes[model_id].sort_key

    def sort_ids(self, ids: Iterable[str]) -> list[str]:
        return sorted(ids, key=self.key)

    def sorted_nodes(self) -> list[ModelNode]:
        return sorted(self.nodes.values(), key=lambda n: n.sort_key)

    @property
    def edges(self) -> list[Edge]:
        out = [
            Edge(parent, child, kind)
            for parent, children in self._out.items()
            for child, kind in children.items()
        ]
        out.sort(key=lambda e: (self.key(e.child), self.key(e.parent)))
        return out

    @property
    def n_edges(self) -> int:
        return sum(len(c) for c in self._out.values())

    def parents(self, model_id: str) -> list[str]:
        self._require(model_id)
        return self.sort_ids(self._in[model_id])

    def children(self, model_id: str) -> list[str]:
        self._require(model_id)
        return self.sort_ids(self._out[model_id])

    def in_edges(self, model_id: str) -> list[Edge]:
        return [Edge(p, model_id, self._in[model_id][p]) for p in self.parents(model_id)]

    def edge_kind(self, parent: str, child: str) -> EdgeKind | None:
        return self._out.get(parent, {}).get(child)

    def in_degree(self, model_id: str) -> int:
        self._require(model_id)
        return len(self._in[model_id])

    def out_degree(self, model_id: str) -> int:
        self._require(model_id)
        return len(self._out[model_id])

    def sources(self) -> list[str]:
        return self.sort_ids(n for n in self.nodes if not self._in[n])

    def leaves(self) -> list[str]:
        return self.sort_ids(n for n in self.nodes if not self._out[n])

    def parent_map(self) -> dict[str, frozenset[str]]:
        return {n: frozenset(self._in[n]) for n in self.nodes}

    # -- traversal & analytics -------------------------------------------

    def topological_order(self) -> list[str]:
        """Kahn's algorithm; among ready nodes the smallest (created_at, id) goes first."""
        remaining = {n: len(self._in[n]) for n in self.nodes}
        ready = [self.key(n) for n, deg in remaining.items() if deg == 0]
        heapq.heapify(ready)
        order: list[str] = []
        while ready:
            _, current = heapq.heappop(ready)
            order.append(current)
            for child in self._out[current]:
                remaining[child] -= 1
                if remaining[child] == 0:
                    heapq.heappush(ready, self.key(child))
        if len(order) != len(self.nodes):
            raise CycleCreated("atlas contains a cycle")
        return order

    def descendants(self, model_id: str) -> list[str]:
        self._require(model_id)
        seen: set[str] = set()
        stack = list(self._out[model_id])
        while stack:
            current = stack.pop()
            if current in seen:
                continue
            seen.add(current)
            stack.extend(c for c in self._out[current] if c not in seen)
        return self.sort_ids(seen)

    def ancestors(self, model_id: str) -> list[str]:
        self._require(model_id)
        seen: set[str] = set()
        stack = list(self._in[model_id])
        while stack:
            current = stack.pop()
            if current in seen:
                continue
            seen.add(current)
            stack.extend(p for p in self._in[current] if p not in seen)
        return self.sort_ids(seen)

    def subtree_downloads(self, model_id: str) -> int:
        """Downloads of the model plus each distinct descendant, counted once."""
        node = self._require(model_id)
        return node.downloads + sum(self.nodes[d].downloads for d in self.descendants(model_id))

    def depths(self, mode: str = "longest") -> dict[str, int]:
        """Depth of every node measured from the in-degree-0 sources.

        ``mode="longest"`` uses the longest directed path from any source,
        ``mode="shortest"`` the shortest one.
        """
        if mode not in ("longest", "shortest"):
            raise ValueError(f"unknown depth mode {mode!r}")
        pick = max if mode == "longest" else min
        depth: dict[str, int] = {}
        for node in self.topological_order():
            parents = self._in[node]
            depth[node] = 0 if not parents else pick(depth[p] for p in parents) + 1
        return depth

    def depth_histogram(self, mode: str = "longest") -> dict[int, int]:
        counts: dict[int, int] = defaultdict(int)
        for d in self.depths(mode).values():
            counts[d] += 1
        return dict(sorted(counts.items()))

    def hubs(self) -> list[Hub]:
        """Groups of at least two leaves whose parent sets are identical."""
        groups: dict[frozenset[str], list[str]] = defaultdict(list)
        for node in self.nodes:
            if not self._out[node] and self._in[node]:
                groups[frozenset(self._in[node])].append(node)
        hubs = [
            Hub(tuple(self.sort_ids(parents)), tuple(self.sort_ids(members)))
            for parents, members in groups.items()
            if len(members) >= 2
        ]
        hubs.sort(key=lambda h: self.key(h.members[0]))
        return hubs

    def hub_coverage(self) -> float:
        if not self.nodes:
            return 0.0
        return sum(len(h.members) for h in self.hubs()) / len(self.nodes)

    def neighbors(self, model_id: str) -> list[str]:
        """Parents and children, i.e. neighbours in the undirected atlas."""
        self._require(model_id)
        return self.sort_ids(set(self._in[model_id]) | set(self._out[model_id]))

    def undirected_hop_distance(self, a: str, b: str) -> int | None:
        """Shortest path length ignoring direction, or ``None`` when unreachable."""
        self._require(a)
        self._require(b)
        if a == b:
            return 0
        seen = {a}
        frontier = deque([(a, 0)])
        while frontier:
            current, dist = frontier.popleft()
            for nxt in (*self._in[current], *self._out[current]):
                if nxt == b:
                    return dist + 1
                if nxt not in seen:
                    seen.add(nxt)
                    frontier.append((nxt, dist + 1))
        return None

    def weakly_connected_components(self) -> list[list[str]]:
        seen: set[str] = set()
        components = []
        for start in self.sort_ids(self.nodes):
            if start in seen:
                continue
            comp = []
            stack = [start]
            seen.add(start)
            while stack:
                current = stack.pop()
                comp.append(current)
                for nxt in (*self._in[current], *self._out[current]):
                    if nxt not in seen:
                        seen.add(nxt)
                        stack.append(nxt)
            components.append(self.sort_ids(comp))
        return components

    # -- population statistics --------------------------------------------

    def quantized_leaf_fraction(self) -> float | None:
        quantized = [n for n, node in self.nodes.items() if node.quantized]
        if not quantized:
            return None
        return sum(1 for n in quantized if not self._out[n]) / len(quantized)

    def temporal_consistency(self) -> float | None:
        """Fraction of edges whose parent is not newer than its child."""
        edges = self.edges
        if not edges:
            return None
        ok = sum(
            1 for e in edges
            if self.nodes[e.parent].created_at <= self.nodes[e.child].created_at
        )
        return ok / len(edges)

    # -- validation --------------------------------------------------------

    def validate(self) -> None:
        """Re-check every structural invariant; raises on the first violation."""
        for child, parents in self._in.items():
            if len(parents) > 1 and EdgeKind.MERGE not in parents.values():
                raise IllegalMultiParent(f"{child!r} has {len(parents)} parents but no Merge edge")
        self.topological_order()

    def restore_missing_parents(self, references: Mapping[str, Iterable[str]] | None = None) -> list[str]:
        """Create placeholder nodes for referenced parents that are not in the atlas.

        ``references`` maps child id to parent ids and defaults to the nodes'
        ``known_parents``. Each placeholder gets ``created_at`` one second
        before its earliest child. Returns the ids of the created placeholders.
        """
        if references is None:
            references = {
                n.id: n.known_parents for n in self.nodes.values() if n.known_parents
            }
        missing: dict[str, list[str]] = defaultdict(list)
        for child, parents in references.items():
            self._require(child)
            for parent in parents:
                if parent not in self.nodes:
                    missing[parent].append(child)
        for parent, children in missing.items():
            earliest = min(self.nodes[c].created_at for c in children)
            self.add_node(ModelNode(parent, created_at=earliest - 1, placeholder=True))
        for child, parents in references.items():
            parents = list(dict.fromkeys(parents))
            kind = EdgeKind.MERGE if len(parents) > 1 else EdgeKind.UNKNOWN
            for parent in parents:
                if parent in missing and child not in self._out[parent]:
                    self.add_edge(Edge(parent, child, kind))
        return self.sort_ids(missing)

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        return {
            "nodes": [n.to_dict() for n in self.sorted_nodes()],
            "edges": [e.to_dict() for e in self.edges],
        }

    @classmethod
    def from_dict(cls, document: Mapping[str, Any]) -> "Atlas":
        atlas = cls(ModelNode.from_dict(r) for r in document.get("nodes", []))
        for record in document.get("edges", []):
            atlas.add_edge(Edge(record["parent"], record["child"], EdgeKind(record.get("kind", "Unknown"))))
        return atlas

    def dumps(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=False)

    @classmethod
    def loads(cls, text: str) -> "Atlas":
        return cls.from_dict(json.loads(text))

    def copy(self) -> "Atlas":
        return Atlas.from_dict(self.to_dict())

    def subgraph(self, ids: Iterable[str]) -> "Atlas":
        keep = set(ids)
        sub = Atlas(self.nodes[n] for n in self.sort_ids(keep))
        for e in self.edges:
            if e.parent in keep and e.child in keep:
                sub.add_edge(e)
        return sub


def atlas_from_metadata(nodes: Iterable[ModelNode], restore_missing: bool = False) -> Atlas:
    """Build an atlas from documented ``known_parents`` only.

    References to models outside ``nodes`` are dropped unless
    ``restore_missing`` is set, in which case placeholder parents are created.
    """
    atlas = Atlas(nodes)
    if restore_missing:
        atlas.restore_missing_parents()
    for node in atlas.sorted_nodes():
        parents = [p for p in dict.fromkeys(node.known_parents or ()) if p in atlas.nodes]
        kind = EdgeKind.MERGE if len(parents) > 1 else EdgeKind.UNKNOWN
        for parent in parents:
            if atlas.edge_kind(parent, node.id) is None:
                atlas.add_edge(Edge(parent, node.id, kind))
    return atlas
