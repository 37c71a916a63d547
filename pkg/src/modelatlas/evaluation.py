"""Stem/eval splits, parent-accuracy reports and a uniform method runner."""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .baselines import (
    StemSplit,
    baseline_majority,
    baseline_mst_kurtosis,
    baseline_price,
    baseline_random,
    baseline_random_root,
)
from .charting import ChartingConfig, chart, find_components
from .core import Atlas, ModelNode
from .distance import DistanceMatrix, compute_distance_matrix
from .errors import NodeSetMismatch
from .ingest.fingerprint import Fingerprint

METHODS = ("ours", "random", "random-root", "majority", "price", "mst")
DEFAULT_LINKAGE = 0.5


def make_split(truth: Atlas, fraction: float = 0.1, policy: str = "earliest", seed: int = 0) -> StemSplit:
    """Stem of ``ceil(fraction * n)`` models (plus every source) with their true edges.

    ``earliest`` takes models in ``(created_at, id)`` order; ``random`` grows a
    random ancestor-closed stem from the sources, so it stays connected.
    At least one model is always left for evaluation when there are two or more.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError("split fraction must lie in (0, 1)")
    nodes = truth.sorted_nodes()
    n = len(nodes)
    size = min(math.ceil(fraction * n), max(n - 1, 1))
    sources = truth.sources()
    if policy == "earliest":
        stem = set(sources)
        for node in nodes:
            if len(stem) >= size:
                break
            stem.add(node.id)
    elif policy == "random":
        rng = np.random.default_rng(seed)
        stem = set(sources)
        while len(stem) < size:
            frontier = sorted(
                m for m in truth.nodes
                if m not in stem and all(p in stem for p in truth.parents(m))
            )
            if not frontier:
                break
            stem.add(frontier[int(rng.integers(len(frontier)))])
    else:
        raise ValueError(f"unknown split policy {policy!r}")
    edges = [e for e in truth.edges if e.child in stem and e.parent in stem]
    ids = set(truth.nodes)
    return StemSplit([replace(n) for n in nodes], frozenset(stem), frozenset(ids - stem), edges)


@dataclass
class EvalReport:
    method: str
    accuracy: float
    n_nodes: int
    n_stem: int
    n_eval: int
    correct: int
    edge_recall: float
    per_kind: dict[str, dict[str, float]] = field(default_factory=dict)
    wall_time: float | None = None

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def evaluate_charting(predicted: Atlas, truth: Atlas, split: StemSplit, method: str = "ours",
                      wall_time: float | None = None) -> EvalReport:
    """Fraction of eval models whose predicted parent set equals the true one."""
    if set(predicted.nodes) != set(truth.nodes):
        missing = set(truth.nodes) ^ set(predicted.nodes)
        raise NodeSetMismatch(f"predicted and true atlases differ on {len(missing)} model(s)")
    correct = 0
    true_edges = found_edges = 0
    kinds: dict[str, list[int]] = {}
    for model_id in truth.sort_ids(split.eval):
        want = set(truth.parents(model_id))
        got = set(predicted.parents(model_id))
        ok = want == got
        correct += ok
        true_edges += len(want)
        found_edges += len(want & got)
        in_edges = truth.in_edges(model_id)
        kind = in_edges[0].kind.value if in_edges else "Source"
        tally = kinds.setdefault(kind, [0, 0])
        tally[0] += ok
        tally[1] += 1
    n_eval = len(split.eval)
    return EvalReport(
        method=method,
        accuracy=correct / n_eval if n_eval else 1.0,
        n_nodes=len(truth),
        n_stem=len(split.stem),
        n_eval=n_eval,
        correct=correct,
        edge_recall=found_edges / true_edges if true_edges else 1.0,
        per_kind={k: {"correct": c, "total": t, "accuracy": c / t} for k, (c, t) in sorted(kinds.items())},
        wall_time=wall_time,
    )


def with_stem_lineage(nodes: Iterable[ModelNode], split: StemSplit) -> list[ModelNode]:
    """Metadata in which stem models document their true parents."""
    parents: dict[str, list[str]] = {}
    for edge in split.stem_edges:
        parents.setdefault(edge.child, []).append(edge.parent)
    out = []
    for node in nodes:
        if node.id in split.stem:
            node = replace(node, known_parents=sorted(parents.get(node.id, [])))
        out.append(node)
    return out


def run_method(method: str, nodes: Sequence[ModelNode], fingerprints: Mapping[str, Fingerprint],
               split: StemSplit, config: ChartingConfig | None = None, seed: int = 0,
               matrix: DistanceMatrix | None = None, linkage_threshold: float = DEFAULT_LINKAGE,
               components: Iterable[Iterable[str]] | None = None) -> Atlas:
    """Predict an atlas with one of :data:`METHODS`, component by component."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    config = config or ChartingConfig()
    nodes = sorted(with_stem_lineage(nodes, split), key=lambda n: n.sort_key)
    if matrix is None or matrix.normalized != config.normalize:
        matrix = compute_distance_matrix([fingerprints[n.id] for n in nodes],
                                         {n.id: n.created_at for n in nodes}, normalize=config.normalize)
    groups = [set(c) for c in components] if components is not None else find_components(matrix, linkage_threshold)
    by_id = {n.id: n for n in nodes}
    out = Atlas(replace(n) for n in nodes)
    for k, group in enumerate(groups):
        members = sorted((by_id[m] for m in group), key=lambda n: n.sort_key)
        sub_matrix = matrix.subset(group) if len(groups) > 1 else matrix
        if method == "ours":
            part = chart(members, matrix=sub_matrix, config=config)
        else:
            sub = split.restrict(group)
            if not sub.stem:
                first = members[0].id
                sub = StemSplit(sub.nodes, frozenset({first}), sub.eval - {first}, [])
            if method == "random":
                part = baseline_random(sub, seed + k)
            elif method == "random-root":
                part = baseline_random_root(sub)
            elif method == "majority":
                part = baseline_majority(sub)
            elif method == "price":
                part = baseline_price(sub, seed + k)
            else:
                part = baseline_mst_kurtosis(members, sub_matrix, sub, fingerprints)
        for edge in part.edges:
            out.add_edge(edge)
    return out


def benchmark(method: str, truth: Atlas, nodes: Sequence[ModelNode], fingerprints: Mapping[str, Fingerprint],
              split: StemSplit, config: ChartingConfig | None = None, seed: int = 0,
              linkage_threshold: float = DEFAULT_LINKAGE) -> EvalReport:
    """Run ``method`` end to end (distances included) and score it."""
    start = time.perf_counter()
    predicted = run_method(method, nodes, fingerprints, split, config=config, seed=seed,
                           linkage_threshold=linkage_threshold)
    elapsed = time.perf_counter() - start
    return evaluate_charting(predicted, truth, split, method=method, wall_time=elapsed)


@dataclass
class PatternBenchmark:
    rho_th: float
    accuracy: float
    n_patterns: int
    per_kind: dict[str, float]
    correlations: list[float] = field(default_factory=list, repr=False)


def pattern_classification_benchmark(n_patterns: int = 1000, fan_share: float = 0.6, seed: int = 0,
                                     spec: "SyntheticSpec | None" = None,
                                     config: ChartingConfig | None = None) -> PatternBenchmark:
    """Classify isolated planted snakes and fans from their last member's neighbourhood.

    Each pattern is generated on its own (a root plus one snake or fan), the
    query is the pattern's last model and its candidates are its K nearest
    earlier models. The threshold follows ``config.rho_policy`` over all
    patterns' correlations.
    """
    from .charting import SNAKE, classify_pattern, pearson, rho_threshold
    from .distance import knn
    from .syngen import SyntheticSpec, Dist, generate

    config = config or ChartingConfig()
    spec = spec or SyntheticSpec()
    rng = np.random.default_rng(seed)
    kinds, rows = [], []
    for _ in range(n_patterns):
        kind = "fan" if rng.random() < fan_share else "snake"
        length = (spec.fan_width if kind == "fan" else spec.snake_length).sample(rng)
        length = max(length, config.K + 1)
        pure = replace(
            spec, n_components=1, component_size=Dist("fixed", length + 1),
            fan_rate=1.0 if kind == "fan" else 0.0, snake_rate=1.0 if kind == "snake" else 0.0,
            merge_rate=0.0, duplicate_rate=0.0, quantize_rate=0.0,
            fan_width=Dist("fixed", length), snake_length=Dist("fixed", length),
            seed=int(rng.integers(2**63)),
        )
        corpus = generate(pure)
        times = {n.id: n.created_at for n in corpus.truth}
        matrix = compute_distance_matrix(corpus.fingerprint_list(), times, normalize=config.normalize)
        query = corpus.patterns[0].members[-1]
        near = knn(matrix, query, config.K, earlier_only=True)
        dists = [d for _, d in near]
        gaps = [abs(times[m] - times[query]) for m, _ in near]
        kinds.append(kind)
        rows.append((dists, [times[m] for m, _ in near], times[query], pearson(dists, gaps)))
    correlations = [r[3] for r in rows]
    rho_th = rho_threshold(correlations, config.rho_policy)
    hits: dict[str, list[bool]] = {"fan": [], "snake": []}
    for kind, (dists, knn_times, query_time, _) in zip(kinds, rows):
        label = classify_pattern(dists, knn_times, query_time, rho_th)
        hits[kind].append((label == SNAKE) == (kind == "snake"))
    total = hits["fan"] + hits["snake"]
    return PatternBenchmark(
        rho_th=rho_th,
        accuracy=sum(total) / len(total),
        n_patterns=len(total),
        per_kind={k: (sum(v) / len(v) if v else float("nan")) for k, v in hits.items()},
        correlations=correlations,
    )
