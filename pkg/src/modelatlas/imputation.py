"""Filling in missing metrics and attributes from atlas structure.

Metrics are averaged over the nearest labeled models in the undirected
atlas (hop distance). Attributes are voted within hubs, the groups of sibling
leaves that share a parent set.
"""

from __future__ import annotations

import math
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import Atlas, is_attribute_key
from .errors import EmptyLabelSet, KeyMismatch, NoLabeledNodes

KNN = "knn"
HUB = "hub"
FALLBACK = "global-fallback"
TABLE_KS = (1, 2, 3, 5)


@dataclass
class MetricLabelSet:
    metric_name: str
    labels: dict[str, float]

    def __post_init__(self) -> None:
        for model_id, value in self.labels.items():
            if not math.isfinite(value):
                raise ValueError(f"label for {model_id!r} is not finite")

    @classmethod
    def from_atlas(cls, atlas: Atlas, metric_name: str) -> "MetricLabelSet":
        return cls(metric_name, {
            n.id: float(n.metrics[metric_name])
            for n in atlas.sorted_nodes()
            if n.metrics.get(metric_name) is not None
        })

    def check(self, atlas: Atlas) -> None:
        unknown = [m for m in self.labels if m not in atlas]
        if unknown:
            raise KeyMismatch(f"{len(unknown)} labeled model(s) not in the atlas, e.g. {unknown[0]!r}")

    def mean(self) -> float:
        if not self.labels:
            raise EmptyLabelSet(f"no labels for {self.metric_name!r}")
        return math.fsum(self.labels.values()) / len(self.labels)


@dataclass(frozen=True)
class Prediction:
    value: float | str
    source: str  # knn | hub | global-fallback
    support: int = 0  # labeled models the value was computed from
    hops: int | None = None  # farthest hop level used


def _bfs_labels(atlas: Atlas, start: str, labels: Mapping[str, float], k: int) -> tuple[list[float], int | None]:
    """Labeled values by increasing hop distance; the last level is kept whole."""
    seen = {start}
    level = [start]
    found: list[float] = []
    depth = 0
    while level and len(found) < k:
        depth += 1
        nxt = []
        for model_id in level:
            for other in atlas.neighbors(model_id):
                if other not in seen:
                    seen.add(other)
                    nxt.append(other)
        found.extend(labels[m] for m in nxt if m in labels)
        level = nxt
    return found, (depth if found else None)


def impute_metric_knn(atlas: Atlas, labelset: MetricLabelSet, k: int,
                      targets: Iterable[str] | None = None) -> dict[str, Prediction]:
    """Average of the ``k`` hop-nearest labeled models, ties at the last level included.

    Targets default to every unlabeled model. Models with no labeled model in
    reach get the global labeled mean, tagged ``global-fallback``.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    labelset.check(atlas)
    fallback = labelset.mean()
    if targets is None:
        targets = [m for m in atlas.sort_ids(atlas.nodes) if m not in labelset.labels]
    out = {}
    for model_id in targets:
        if model_id not in atlas:
            raise KeyMismatch(f"target {model_id!r} not in the atlas")
        values, hops = _bfs_labels(atlas, model_id, labelset.labels, k)
        if values:
            out[model_id] = Prediction(math.fsum(values) / len(values), KNN, len(values), hops)
        else:
            out[model_id] = Prediction(fallback, FALLBACK)
    return out


def baseline_metric_mean(labelset: MetricLabelSet, targets: Iterable[str]) -> dict[str, Prediction]:
    mean = labelset.mean()
    return {m: Prediction(mean, FALLBACK, len(labelset.labels)) for m in targets}


def _attribute_labels(atlas: Atlas, attribute_key: str,
                      labels: Mapping[str, str] | None) -> dict[str, str]:
    if not is_attribute_key(attribute_key):
        raise ValueError(f"unknown attribute key {attribute_key!r}")
    if labels is None:
        labels = {
            n.id: n.attributes[attribute_key]
            for n in atlas.sorted_nodes()
            if n.attributes.get(attribute_key) is not None
        }
    if not labels:
        raise NoLabeledNodes(f"no model has {attribute_key!r}")
    return dict(labels)


def majority_label(labels: Iterable[str]) -> str:
    """Most frequent label, ties to the lexicographically smallest."""
    counts = Counter(labels)
    if not counts:
        raise NoLabeledNodes("no labels to vote on")
    return min(counts, key=lambda label: (-counts[label], label))


def _default_targets(atlas: Atlas, labels: Mapping[str, str], targets: Iterable[str] | None) -> list[str]:
    if targets is None:
        return [m for m in atlas.sort_ids(atlas.nodes) if m not in labels]
    return list(targets)


def impute_attribute_hub(atlas: Atlas, attribute_key: str, labels: Mapping[str, str] | None = None,
                         targets: Iterable[str] | None = None) -> dict[str, Prediction]:
    """Majority vote among labeled members of the target's hub.

    ``labels`` defaults to the values present on the atlas nodes; targets
    default to the models without one. Models outside hubs, or in hubs with
    no labeled member, get the global majority label.
    """
    labels = _attribute_labels(atlas, attribute_key, labels)
    fallback = majority_label(labels.values())
    hub_of: dict[str, tuple[str, ...]] = {}
    for hub in atlas.hubs():
        for member in hub.members:
            hub_of[member] = hub.members
    out = {}
    for model_id in _default_targets(atlas, labels, targets):
        members = hub_of.get(model_id, ())
        votes = [labels[m] for m in members if m != model_id and m in labels]
        if votes:
            out[model_id] = Prediction(majority_label(votes), HUB, len(votes))
        else:
            out[model_id] = Prediction(fallback, FALLBACK, len(labels))
    return out


def baseline_attribute_majority(atlas: Atlas, attribute_key: str, labels: Mapping[str, str] | None = None,
                                targets: Iterable[str] | None = None) -> dict[str, Prediction]:
    labels = _attribute_labels(atlas, attribute_key, labels)
    fallback = majority_label(labels.values())
    return {m: Prediction(fallback, FALLBACK, len(labels)) for m in _default_targets(atlas, labels, targets)}


@dataclass
class ImputationReport:
    kind: str  # "numeric" or "categorical"
    n: int
    mse: float | None = None
    mae: float | None = None
    pearson: float | None = None  # None when either side has zero variance
    accuracy: float | None = None
    fallback_fraction: float = 0.0
    predictions: dict[str, float | str] = field(default_factory=dict)

    def summary(self) -> dict[str, float | int | str | None]:
        return {k: v for k, v in self.__dict__.items() if k != "predictions"}


def pearson_or_none(x: Sequence[float], y: Sequence[float]) -> float | None:
    a = np.asarray(x, dtype=np.float64)
    b = np.asarray(y, dtype=np.float64)
    if a.size < 2:
        return None
    da, db = a - a.mean(), b - b.mean()
    saa, sbb = float(np.dot(da, da)), float(np.dot(db, db))
    if saa == 0.0 or sbb == 0.0:
        return None
    return max(-1.0, min(1.0, float(np.dot(da, db)) / math.sqrt(saa * sbb)))


def evaluate_imputation(predictions: Mapping[str, Prediction | float | str],
                        held_out_truth: Mapping[str, float | str]) -> ImputationReport:
    """Error statistics over held-out models; both mappings must share their keys."""
    if set(predictions) != set(held_out_truth):
        diff = set(predictions) ^ set(held_out_truth)
        raise KeyMismatch(f"predictions and truth differ on {len(diff)} id(s)")
    ids = sorted(held_out_truth)
    values = [predictions[m].value if isinstance(predictions[m], Prediction) else predictions[m] for m in ids]
    fallback = sum(
        1 for m in ids if isinstance(predictions[m], Prediction) and predictions[m].source == FALLBACK
    )
    truth = [held_out_truth[m] for m in ids]
    n = len(ids)
    report_predictions = dict(zip(ids, values))
    if n and all(isinstance(v, str) for v in truth):
        accuracy = sum(p == t for p, t in zip(values, truth)) / n
        return ImputationReport("categorical", n, accuracy=accuracy,
                                fallback_fraction=fallback / n, predictions=report_predictions)
    p = np.asarray(values, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    err = p - t
    return ImputationReport(
        "numeric", n,
        mse=float(np.mean(err**2)) if n else None,
        mae=float(np.mean(np.abs(err))) if n else None,
        pearson=pearson_or_none(p, t),
        fallback_fraction=fallback / n if n else 0.0,
        predictions=report_predictions,
    )


def metric_imputation_table(atlas: Atlas, labelset: MetricLabelSet, held_out_truth: Mapping[str, float],
                            ks: Sequence[int] = TABLE_KS) -> list[dict[str, float | int | str | None]]:
    """Rows for the global-mean baseline and k-NN at each ``k``."""
    targets = sorted(held_out_truth)
    rows = []
    base = evaluate_imputation(baseline_metric_mean(labelset, targets), held_out_truth)
    rows.append({"method": "baseline", "k": None, "mse": base.mse, "mae": base.mae, "pearson": base.pearson})
    for k in ks:
        rep = evaluate_imputation(impute_metric_knn(atlas, labelset, k, targets), held_out_truth)
        rows.append({"method": f"{k}-NN", "k": k, "mse": rep.mse, "mae": rep.mae, "pearson": rep.pearson})
    return rows
