"""Reference lineage predictors used for comparison with :func:`chart`.

All of them start from a stem: a subset of models whose true edges are
known. Every eval model receives exactly one predicted parent.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import Atlas, Edge, EdgeKind, ModelNode
from .distance import DistanceMatrix
from .errors import DisconnectedInput, EmptyInput, MissingFingerprint
from .ingest.fingerprint import Fingerprint


@dataclass
class StemSplit:
    """Models split into a stem with known edges and an evaluation set."""

    nodes: list[ModelNode]
    stem: frozenset[str]
    eval: frozenset[str]
    stem_edges: list[Edge] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.nodes = sorted(self.nodes, key=lambda n: n.sort_key)
        ids = {n.id for n in self.nodes}
        if self.stem | self.eval != ids or self.stem & self.eval:
            raise ValueError("stem and eval must partition the node set")
        for edge in self.stem_edges:
            if edge.child not in self.stem or edge.parent not in self.stem:
                raise ValueError(f"stem edge {edge.parent} -> {edge.child} leaves the stem")

    @property
    def order(self) -> list[str]:
        return [n.id for n in self.nodes]

    def base_atlas(self) -> Atlas:
        return Atlas((replace(n) for n in self.nodes), self.stem_edges)

    def stem_sources(self) -> list[str]:
        children = {e.child for e in self.stem_edges}
        return [m for m in self.order if m in self.stem and m not in children]

    def root(self) -> str:
        sources = self.stem_sources()
        if not sources:
            raise EmptyInput("empty stem")
        return sources[0]

    def restrict(self, ids: Iterable[str]) -> "StemSplit":
        keep = set(ids)
        return StemSplit(
            [n for n in self.nodes if n.id in keep],
            frozenset(self.stem & keep),
            frozenset(self.eval & keep),
            [e for e in self.stem_edges if e.child in keep and e.parent in keep],
        )

    def eval_in_order(self) -> list[str]:
        return [m for m in self.order if m in self.eval]


def _require_stem(split: StemSplit) -> None:
    if not split.stem:
        raise EmptyInput("the stem must not be empty")


def baseline_random(split: StemSplit, seed: int) -> Atlas:
    """Each eval model gets a uniformly random earlier model as parent."""
    _require_stem(split)
    rng = np.random.default_rng(seed)
    atlas = split.base_atlas()
    order = split.order
    for i, model_id in enumerate(order):
        if model_id in split.eval and i > 0:
            atlas.add_edge(Edge(order[int(rng.integers(i))], model_id, EdgeKind.UNKNOWN))
    return atlas


def baseline_random_root(split: StemSplit) -> Atlas:
    """Every eval model attached directly to the stem root."""
    _require_stem(split)
    atlas = split.base_atlas()
    root = split.root()
    for model_id in split.eval_in_order():
        atlas.add_edge(Edge(root, model_id, EdgeKind.UNKNOWN))
    return atlas


def baseline_majority(split: StemSplit) -> Atlas:
    """Every eval model attached to the stem model with the most stem children."""
    _require_stem(split)
    atlas = split.base_atlas()
    stem_order = [m for m in split.order if m in split.stem]
    hub = max(stem_order, key=lambda m: (atlas.out_degree(m), -stem_order.index(m)))
    for model_id in split.eval_in_order():
        atlas.add_edge(Edge(hub, model_id, EdgeKind.UNKNOWN))
    return atlas


def baseline_price(split: StemSplit, seed: int, c: float = 1.0) -> Atlas:
    """Preferential attachment: parent drawn with probability proportional to out-degree + c."""
    if not c > 0:
        raise ValueError("c must be positive")
    _require_stem(split)
    rng = np.random.default_rng(seed)
    atlas = split.base_atlas()
    order = split.order
    degree = np.array([atlas.out_degree(m) for m in order], dtype=np.float64)
    for i, model_id in enumerate(order):
        if model_id not in split.eval or i == 0:
            continue
        weights = degree[:i] + c
        j = int(rng.choice(i, p=weights / weights.sum()))
        atlas.add_edge(Edge(order[j], model_id, EdgeKind.UNKNOWN))
        degree[j] += 1
    return atlas


def kurtosis(values: np.ndarray) -> float:
    """Excess kurtosis (Fisher), 0 for constant input."""
    x = np.asarray(values, dtype=np.float64)
    centered = x - x.mean()
    m2 = float(np.mean(centered**2))
    if m2 == 0.0:
        return 0.0
    return float(np.mean(centered**4)) / (m2 * m2) - 3.0


def minimum_spanning_tree(values: np.ndarray) -> list[tuple[int, int]]:
    """Prim's algorithm on a dense symmetric matrix; zero weights are real edges.

    Returns ``(tree_parent, node)`` pairs grown from position 0; ties go to
    the lower index.
    """
    n = values.shape[0]
    if n == 0:
        return []
    in_tree = np.zeros(n, dtype=bool)
    best = np.full(n, np.inf)
    link = np.full(n, -1, dtype=np.int64)
    in_tree[0] = True
    row = np.asarray(values[0], dtype=np.float64)
    best[1:] = row[1:]
    link[1:] = 0
    edges = []
    for _ in range(n - 1):
        candidates = np.where(in_tree, np.inf, best)
        j = int(np.argmin(candidates))
        if not np.isfinite(candidates[j]):
            raise DisconnectedInput("distance matrix has no finite path to every model")
        in_tree[j] = True
        edges.append((int(link[j]), j))
        row = np.asarray(values[j], dtype=np.float64)
        closer = (~in_tree) & (row < best)
        best[closer] = row[closer]
        link[closer] = j
    return edges


def baseline_mst_kurtosis(nodes: Sequence[ModelNode], matrix: DistanceMatrix, split: StemSplit,
                          fingerprints: Mapping[str, Fingerprint] | Sequence[Fingerprint]) -> Atlas:
    """Undirected minimum spanning tree, oriented away from a kurtosis-chosen root.

    The root is the stem source whose fingerprint has the largest kurtosis,
    or the earliest stem model when the stem has no source. Times are not
    used. Approximates the direction rule of kurtosis-based lineage methods.
    """
    _require_stem(split)
    fps = dict(fingerprints) if isinstance(fingerprints, Mapping) else {fp.id: fp for fp in fingerprints}
    nodes = sorted(nodes, key=lambda n: n.sort_key)
    ids = [n.id for n in nodes]
    for m in ids:
        if m not in fps:
            raise MissingFingerprint(f"no fingerprint for {m!r}")
    idx = np.array([matrix.index(m) for m in ids], dtype=np.int64)
    values = np.asarray(matrix.values[np.ix_(idx, idx)])
    tree = minimum_spanning_tree(values)
    adjacency: dict[int, list[int]] = {i: [] for i in range(len(ids))}
    for a, b in tree:
        adjacency[a].append(b)
        adjacency[b].append(a)
    sources = [m for m in split.stem_sources() if m in set(ids)]
    if sources:
        root = max(sources, key=lambda m: (kurtosis(fps[m].values), -ids.index(m)))
    else:
        root = next(m for m in ids if m in split.stem)
    atlas = Atlas(replace(n) for n in nodes)
    start = ids.index(root)
    seen = {start}
    stack = [start]
    while stack:
        current = stack.pop()
        for nxt in sorted(adjacency[current]):
            if nxt not in seen:
                seen.add(nxt)
                atlas.add_edge(Edge(ids[current], ids[nxt], EdgeKind.UNKNOWN))
                stack.append(nxt)
    return atlas
