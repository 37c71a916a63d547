"""Greedy lineage recovery from weight distances and upload times.

Each model, visited in ``(created_at, id)`` order, looks at its K nearest
unmasked earlier models. A wide spread of neighbour distances means the
nearest model is the parent. A tight cluster is ambiguous and is resolved by
how distance tracks upload-time gap: when they correlate (a checkpoint
trajectory, "snake") the nearest model wins, otherwise (a sweep, "fan") the
earliest model of the cluster wins.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import Atlas, Edge, EdgeKind, ModelNode
from .distance import DistanceMatrix, compute_distance_matrix, find_exact_duplicates
from .errors import EmptyInput, MissingFingerprint, TooFewNeighbors
from .ingest.fingerprint import Fingerprint

log = logging.getLogger(__name__)

SNAKE = "Snake"
FAN = "Fan"
FALLBACK_RHO = 0.6


@dataclass(frozen=True)
class RhoPolicy:
    kind: str = "percentile"  # or "fixed"
    value: float = 60.0

    def __post_init__(self) -> None:
        if self.kind not in ("percentile", "fixed"):
            raise ValueError(f"unknown rho policy {self.kind!r}")
        if self.kind == "percentile" and not 0.0 < self.value < 100.0:
            raise ValueError("percentile must lie in (0, 100)")

    @classmethod
    def fixed(cls, value: float) -> "RhoPolicy":
        return cls("fixed", float(value))

    @classmethod
    def percentile(cls, p: float) -> "RhoPolicy":
        return cls("percentile", float(p))

    @classmethod
    def parse(cls, text: str | float) -> "RhoPolicy":
        """``"p60"`` is the 60th percentile, a bare number is a fixed threshold."""
        if isinstance(text, (int, float)):
            return cls.fixed(text)
        text = text.strip().lower()
        if text.startswith("p"):
            return cls.percentile(float(text[1:]))
        return cls.fixed(float(text))

    def __str__(self) -> str:
        return f"p{self.value:g}" if self.kind == "percentile" else f"{self.value:g}"


@dataclass(frozen=True)
class ChartingConfig:
    K: int = 5
    K_th: float = 0.05
    rho_policy: RhoPolicy = field(default_factory=RhoPolicy)
    distance_normalization: str = "unit"  # "unit" or "none"
    duplicate_policy: str = "leaf"  # "leaf" or "same-parent"
    quantized_are_leaves: bool = True
    honor_known_parents: bool = True
    # ablation switches; all on reproduces the full method
    dedup: bool = True
    temporal_filter: bool = True
    snake_fan: bool = True
    # nodes whose correlation feeds the percentile: "tight" (spread test
    # passed) or "all" chartable nodes with at least two candidates
    rho_population: str = "all"
    tie_seed: int = 0

    def __post_init__(self) -> None:
        if self.K < 2:
            raise ValueError("K must be at least 2")
        if not self.K_th > 0:
            raise ValueError("K_th must be positive")
        if self.distance_normalization not in ("unit", "none"):
            raise ValueError(f"unknown distance normalization {self.distance_normalization!r}")
        if self.duplicate_policy not in ("leaf", "same-parent"):
            raise ValueError(f"unknown duplicate policy {self.duplicate_policy!r}")
        if self.rho_population not in ("tight", "all"):
            raise ValueError(f"unknown rho population {self.rho_population!r}")

    @property
    def normalize(self) -> bool:
        return self.distance_normalization == "unit"

    def with_(self, **changes) -> "ChartingConfig":
        return replace(self, **changes)


def pearson(x: Sequence[float] | np.ndarray, y: Sequence[float] | np.ndarray) -> float:
    """Pearson correlation, defined as 0 when either series has zero variance."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    if sxx == 0.0 or syy == 0.0:
        return 0.0
    return max(-1.0, min(1.0, float(np.dot(dx, dy)) / math.sqrt(sxx * syy)))


def classify_pattern(knn_distances: Sequence[float], knn_times: Sequence[float], query_time: float,
                     rho_th: float) -> str:
    """Snake when distance correlates with upload-time gap above ``rho_th``, else Fan."""
    if len(knn_distances) < 2 or len(knn_distances) != len(knn_times):
        raise TooFewNeighbors("need at least two neighbours with matching times")
    gaps = np.abs(np.asarray(knn_times, dtype=np.float64) - float(query_time))
    return SNAKE if pearson(knn_distances, gaps) > rho_th else FAN


def rho_threshold(correlations: Sequence[float], policy: RhoPolicy) -> float:
    """Fixed value, or the nearest-rank percentile of per-node correlations."""
    if policy.kind == "fixed":
        return policy.value
    if len(correlations) == 0:
        return FALLBACK_RHO
    ordered = sorted(correlations)
    rank = max(1, math.ceil(policy.value / 100.0 * len(ordered)))
    return float(ordered[rank - 1])


def find_components(matrix: DistanceMatrix, linkage_threshold: float) -> list[set[str]]:
    """Single-linkage groups: chains of pairwise distances ``< linkage_threshold``.

    Components are listed by their earliest member in matrix order.
    """
    n = len(matrix)
    parent = list(range(n))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for start in range(0, n, 1024):
        block = matrix.values[start : start + 1024]
        rows, cols = np.nonzero(block < linkage_threshold)
        for r, c in zip(rows + start, cols):
            if r < c:
                ra, rb = find(int(r)), find(int(c))
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)
    groups: dict[int, set[str]] = {}
    for i in range(n):
        groups.setdefault(find(i), set()).add(matrix.ids[i])
    return [groups[root] for root in sorted(groups)]


@dataclass
class Decision:
    """Why a node received its parents."""

    id: str
    route: str  # duplicate | known | source | loose | snake | fan | nearest
    parents: tuple[str, ...] = ()
    spread: float | None = None
    correlation: float | None = None
    candidates: tuple[str, ...] = ()


@dataclass
class ChartTrace:
    rho_th: float
    correlations: list[float]
    decisions: dict[str, Decision]

    def route_counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for d in self.decisions.values():
            out[d.route] = out.get(d.route, 0) + 1
        return dict(sorted(out.items()))


def _local_matrix(nodes: list[ModelNode], matrix: DistanceMatrix) -> np.ndarray:
    positions = []
    for node in nodes:
        if node.id not in matrix:
            raise MissingFingerprint(f"no fingerprint for {node.id!r}")
        positions.append(matrix.index(node.id))
    idx = np.asarray(positions, dtype=np.int64)
    if len(idx) == len(matrix) and np.array_equal(idx, np.arange(len(idx))):
        return matrix.values
    return np.asarray(matrix.values[np.ix_(idx, idx)])


def _resolve_matrix(nodes: list[ModelNode], fingerprints: Mapping[str, Fingerprint] | Sequence[Fingerprint] | None,
                    matrix: DistanceMatrix | None, config: ChartingConfig) -> DistanceMatrix:
    fps: dict[str, Fingerprint] | None = None
    if fingerprints is not None:
        fps = dict(fingerprints) if isinstance(fingerprints, Mapping) else {fp.id: fp for fp in fingerprints}
        missing = [n.id for n in nodes if n.id not in fps]
        if missing:
            raise MissingFingerprint(f"no fingerprint for {len(missing)} model(s), e.g. {missing[0]!r}")
    if matrix is not None and matrix.normalized == config.normalize:
        return matrix
    if fps is None:
        if matrix is None:
            raise MissingFingerprint("neither fingerprints nor a distance matrix given")
        raise ValueError("distance matrix normalization does not match the charting config")
    times = {n.id: n.created_at for n in nodes}
    return compute_distance_matrix([fps[n.id] for n in nodes], times, normalize=config.normalize)


def chart_with_trace(nodes: Iterable[ModelNode],
                     fingerprints: Mapping[str, Fingerprint] | Sequence[Fingerprint] | None = None,
                     matrix: DistanceMatrix | None = None,
                     config: ChartingConfig | None = None) -> tuple[Atlas, ChartTrace]:
    """Chart one connected component; also returns the per-node decisions."""
    config = config or ChartingConfig()
    nodes = sorted(nodes, key=lambda n: n.sort_key)
    if not nodes:
        raise EmptyInput("nothing to chart")
    matrix = _resolve_matrix(nodes, fingerprints, matrix, config)
    D = _local_matrix(nodes, matrix)
    n = len(nodes)
    ids = [node.id for node in nodes]
    index = {m: i for i, m in enumerate(ids)}
    times = np.array([node.created_at for node in nodes], dtype=np.float64)
    atlas = Atlas(replace(node) for node in nodes)
    rng = np.random.default_rng(config.tie_seed)

    masked = np.zeros(n, dtype=bool)
    for m in matrix.mask:
        if m in index:
            masked[index[m]] = True
    representative: dict[int, int] = {}
    if config.dedup:
        local = DistanceMatrix(ids, D, times.astype(np.int64), matrix.normalized)
        for group in find_exact_duplicates(local):
            rep = index[group.representative]
            for member in group.members[1:]:
                representative[index[member]] = rep
                masked[index[member]] = True
    if config.quantized_are_leaves:
        for i, node in enumerate(nodes):
            if node.quantized:
                masked[i] = True

    def known(node: ModelNode) -> list[str] | None:
        """Documented parents inside this component; ``[]`` documents a source."""
        if not config.honor_known_parents or node.known_parents is None:
            return None
        parents = sorted({p for p in node.known_parents if p in index})
        if len(parents) != len(set(node.known_parents)):
            log.warning("%s: known parents outside the component are ignored", node.id)
            if not parents:
                return None
        return parents

    def candidates(i: int, exclude: np.ndarray | None = None) -> np.ndarray:
        allowed = ~masked
        if config.temporal_filter:
            allowed = allowed.copy()
            allowed[i:] = False
        else:
            allowed = allowed.copy()
            allowed[i] = False
        if exclude is not None:
            allowed &= ~exclude
        pool = np.flatnonzero(allowed)
        if pool.size == 0:
            return pool
        row = D[i, pool]
        if config.dedup:
            order = np.lexsort((pool, row))
        else:
            # without duplicate collapsing, equal distances carry no information
            order = np.lexsort((rng.random(pool.size), row))
        return pool[order[: config.K]]

    decisions: dict[str, Decision] = {}

    def add(parents: list[str], child: str, kind: EdgeKind) -> None:
        for p in parents:
            atlas.add_edge(Edge(p, child, kind))

    # documented lineage goes in first so that inferred edges can never close a cycle through it;
    # it also wins over duplicate collapsing (two merges of one pair are bitwise equal)
    documented: set[int] = set()
    for i, node in enumerate(nodes):
        parents = known(node)
        if parents is not None:
            child_kind = EdgeKind.QUANTIZATION if node.quantized else EdgeKind.UNKNOWN
            add(parents, node.id, EdgeKind.MERGE if len(parents) > 1 else child_kind)
            decisions[node.id] = Decision(node.id, "known", tuple(parents))
            documented.add(i)

    chartable = [i for i in range(n) if i not in representative and i not in documented]

    # first pass: correlations of every tight neighbourhood, for the percentile threshold
    static = {i: candidates(i) for i in chartable} if config.temporal_filter else {}
    correlations = []
    if config.snake_fan and config.rho_policy.kind == "percentile":
        for i in chartable:
            cand = static[i] if config.temporal_filter else candidates(i)
            if cand.size < 2:
                continue
            if config.rho_population == "all" or D[i, cand[-1]] - D[i, cand[0]] <= config.K_th:
                correlations.append(pearson(D[i, cand], np.abs(times[cand] - times[i])))
    rho_th = rho_threshold(correlations, config.rho_policy)

    for i, node in enumerate(nodes):
        if i in documented:
            continue
        child_kind = EdgeKind.QUANTIZATION if node.quantized else EdgeKind.UNKNOWN
        if i in representative:
            rep = ids[representative[i]]
            if config.duplicate_policy == "same-parent" and atlas.parents(rep):
                parents = atlas.parents(rep)
            else:
                parents = [rep]
            add(parents, node.id, EdgeKind.MERGE if len(parents) > 1 else EdgeKind.DUPLICATE)
            decisions[node.id] = Decision(node.id, "duplicate", tuple(parents))
            continue
        exclude = None
        if atlas.children(node.id):
            exclude = np.zeros(n, dtype=bool)
            for d in atlas.descendants(node.id):
                exclude[index[d]] = True
            cand = candidates(i, exclude)
        elif config.temporal_filter:
            cand = static[i]
        else:
            cand = candidates(i)
        if cand.size == 0:
            decisions[node.id] = Decision(node.id, "source")
            continue
        dists = D[i, cand]
        spread = float(dists[-1] - dists[0])
        names = tuple(ids[j] for j in cand)
        if cand.size < 2 or spread > config.K_th:
            choice, route, r = cand[0], "loose" if cand.size >= 2 else "nearest", None
        elif not config.snake_fan:
            choice, route, r = cand[0], "nearest", None
        else:
            r = pearson(dists, np.abs(times[cand] - times[i]))
            if r > rho_th:
                choice, route = cand[0], "snake"
            else:
                choice, route = int(cand.min()), "fan"
        add([ids[choice]], node.id, child_kind)
        decisions[node.id] = Decision(node.id, route, (ids[choice],), spread, r, names)
    return atlas, ChartTrace(rho_th, correlations, decisions)


def chart(nodes: Iterable[ModelNode],
          fingerprints: Mapping[str, Fingerprint] | Sequence[Fingerprint] | None = None,
          matrix: DistanceMatrix | None = None,
          config: ChartingConfig | None = None) -> Atlas:
    """Recover the lineage of one connected component."""
    return chart_with_trace(nodes, fingerprints, matrix, config)[0]


def chart_components(nodes: Iterable[ModelNode],
                     fingerprints: Mapping[str, Fingerprint] | Sequence[Fingerprint],
                     config: ChartingConfig | None = None,
                     linkage_threshold: float = 0.5,
                     components: Iterable[Iterable[str]] | None = None,
                     matrix: DistanceMatrix | None = None) -> Atlas:
    """Split into components (single linkage unless given) and chart each one.

    A precomputed ``matrix`` is used when it covers exactly these models with
    the configured normalization; otherwise distances are recomputed.
    """
    config = config or ChartingConfig()
    nodes = sorted(nodes, key=lambda n: n.sort_key)
    if not nodes:
        raise EmptyInput("nothing to chart")
    fps = dict(fingerprints) if isinstance(fingerprints, Mapping) else {fp.id: fp for fp in fingerprints}
    missing = [n.id for n in nodes if n.id not in fps]
    if missing:
        raise MissingFingerprint(f"no fingerprint for {len(missing)} model(s), e.g. {missing[0]!r}")
    times = {n.id: n.created_at for n in nodes}
    if (matrix is None or matrix.normalized != config.normalize
            or dict(zip(matrix.ids, matrix.created_at.tolist())) != times):
        matrix = compute_distance_matrix([fps[n.id] for n in nodes], times, normalize=config.normalize)
    groups = [set(c) for c in components] if components is not None else find_components(matrix, linkage_threshold)
    by_id = {n.id: n for n in nodes}
    out = Atlas(replace(node) for node in nodes)
    for group in groups:
        sub = matrix.subset(group) if len(groups) > 1 else matrix
        part = chart(sorted((by_id[m] for m in group), key=lambda n: n.sort_key), matrix=sub, config=config)
        for edge in part.edges:
            out.add_edge(edge)
    return out
