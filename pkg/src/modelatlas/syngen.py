"""Seeded generator of ground-truth atlases with fingerprints and metadata.

Components grow from far-apart roots by repeated expansion steps. Each step
picks a parent (preferential attachment on out-degree) and one action:

* plain fine-tune: ``child = parent + N(0, child_sigma^2 I)``;
* snake: a checkpoint trajectory, one fine-tune step followed by small
  sequential steps uploaded at regular intervals;
* fan: a hyperparameter sweep, children sharing a small common offset plus
  small individual noise, uploaded within a short window;
* quantize: the parent rounded to 256 levels, flagged quantized, a leaf;
* duplicate: an exact copy, a leaf;
* merge: the average of two parents, documented through ``known_parents``.

Timestamps strictly increase along every edge.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Mapping

import numpy as np

from .core import ATTRIBUTE_KEYS, Atlas, Edge, EdgeKind, ModelNode
from .errors import InfeasibleSpec
from .ingest.fingerprint import UNIQUE_SAMPLE, Fingerprint, round_to_levels
from .ingest.safetensors import DType

T0 = 1_600_000_000
# unique-value ratio a 256-level checkpoint shows over the sampled weights
QUANTIZED_UNIQUE_RATIO = 256 / UNIQUE_SAMPLE


@dataclass(frozen=True)
class Dist:
    """Integer distribution: ``fixed`` (a), ``uniform`` (a..b inclusive) or ``poisson`` (a + Poisson(b))."""

    kind: str = "fixed"
    a: float = 1
    b: float = 0

    def sample(self, rng: np.random.Generator) -> int:
        if self.kind == "fixed":
            return int(self.a)
        if self.kind == "uniform":
            return int(rng.integers(int(self.a), int(self.b) + 1))
        if self.kind == "poisson":
            return int(self.a) + int(rng.poisson(self.b))
        raise ValueError(f"unknown distribution kind {self.kind!r}")

    @property
    def minimum(self) -> int:
        return int(self.a)

    @property
    def maximum(self) -> float:
        if self.kind == "fixed":
            return int(self.a)
        if self.kind == "uniform":
            return int(self.b)
        return math.inf

    @classmethod
    def parse(cls, value: Any) -> "Dist":
        if isinstance(value, Dist):
            return value
        if isinstance(value, (int, float)):
            return cls("fixed", value)
        if isinstance(value, Mapping):
            return cls(value.get("kind", "fixed"), value.get("a", 1), value.get("b", 0))
        if isinstance(value, (list, tuple)) and len(value) == 2:
            return cls("uniform", value[0], value[1])
        raise ValueError(f"cannot parse distribution {value!r}")


DEFAULT_ATTRIBUTES = {
    "license": {"apache-2.0": 0.35, "mit": 0.25, "llama3": 0.15, "cc-by-nc-4.0": 0.15, "openrail": 0.10},
    "pipeline_tag": {"text-generation": 0.5, "text-classification": 0.2, "feature-extraction": 0.15,
                     "question-answering": 0.15},
}


@dataclass(frozen=True)
class SyntheticSpec:
    n_components: int = 3
    component_size: Dist = Dist("fixed", 100)
    fan_rate: float = 0.05
    snake_rate: float = 0.05
    merge_rate: float = 0.03
    duplicate_rate: float = 0.04
    quantize_rate: float = 0.1
    snake_length: Dist = Dist("uniform", 6, 10)
    fan_width: Dist = Dist("uniform", 6, 10)
    dim: int = 100
    child_sigma: float = 0.1
    # inter-root distance as a multiple of one fine-tune step (child_sigma * sqrt(dim))
    root_separation: float = 4.0
    # checkpoint / sweep step size relative to child_sigma
    tight_scale: float = 0.3
    # shared sweep offset relative to the per-child sweep noise
    fan_shift: float = 0.7
    # rescale every derived fingerprint to its parent's norm, so that
    # normalized step sizes do not shrink with depth
    preserve_norm: bool = True
    # intermediate checkpoints and sweep runs may receive further children
    pattern_members_are_parents: bool = False
    # parents are drawn with weight (out_degree + 1) ** attach_power
    attach_power: float = 1.0
    time_step: float = 86_400.0
    time_jitter: float = 0.2
    fan_window: float = 0.05  # fan upload spacing as a fraction of time_step
    attribute_scheme: Mapping[str, Mapping[str, float]] = field(default_factory=lambda: DEFAULT_ATTRIBUTES)
    attribute_noise: float = 0.1
    metric_scheme: str = "depth"  # "depth" (depth + N(0, sigma^2)) or "constant"
    metric_sigma: float = 1.0
    metric_constant: float = 0.0
    metric_name: str = "score"
    metric_label_rate: float = 0.2
    attribute_label_rate: float = 0.3
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("component_size", "snake_length", "fan_width"):
            object.__setattr__(self, name, Dist.parse(getattr(self, name)))
        rates = (self.fan_rate, self.snake_rate, self.merge_rate, self.duplicate_rate, self.quantize_rate)
        if any(not 0.0 <= r <= 1.0 for r in rates):
            raise InfeasibleSpec("rates must lie in [0, 1]")
        if sum(rates) > 1.0 + 1e-12:
            raise InfeasibleSpec("expansion rates sum to more than 1")
        if self.n_components < 1:
            raise InfeasibleSpec("need at least one component")
        if self.dim < 1 or self.child_sigma <= 0 or self.root_separation <= 0:
            raise InfeasibleSpec("dim, child_sigma and root_separation must be positive")
        if self.time_step < 1 or self.time_jitter < 0 or self.time_jitter >= 1:
            raise InfeasibleSpec("time_step >= 1 and 0 <= time_jitter < 1 required")
        if self.metric_scheme not in ("depth", "constant"):
            raise InfeasibleSpec(f"unknown metric scheme {self.metric_scheme!r}")
        for key in self.attribute_scheme:
            if key not in ATTRIBUTE_KEYS and not key.startswith("x-"):
                raise InfeasibleSpec(f"unknown attribute key {key!r}")
        if self.component_size.minimum < 1:
            raise InfeasibleSpec("component size must be at least 1")
        if self.snake_rate > 0 and self.snake_length.minimum < 1:
            raise InfeasibleSpec("snake length must be at least 1")
        if self.fan_rate > 0 and self.fan_width.minimum < 1:
            raise InfeasibleSpec("fan width must be at least 1")
        if self.snake_rate > 0 and self.snake_length.minimum > self.component_size.maximum:
            raise InfeasibleSpec("snakes are longer than any component")
        if self.fan_rate > 0 and self.fan_width.minimum > self.component_size.maximum:
            raise InfeasibleSpec("fans are wider than any component")

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out["attribute_scheme"] = {k: dict(v) for k, v in self.attribute_scheme.items()}
        return out

    @classmethod
    def from_dict(cls, record: Mapping[str, Any]) -> "SyntheticSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(record) - known
        if unknown:
            raise InfeasibleSpec(f"unknown spec fields: {sorted(unknown)}")
        kwargs = dict(record)
        for name in ("component_size", "snake_length", "fan_width"):
            if name in kwargs:
                kwargs[name] = Dist.parse(kwargs[name])
        return cls(**kwargs)

    def with_(self, **changes: Any) -> "SyntheticSpec":
        return replace(self, **changes)


@dataclass
class Pattern:
    kind: str  # "snake" or "fan"
    parent: str
    members: list[str]


@dataclass
class SyntheticCorpus:
    spec: SyntheticSpec
    truth: Atlas
    fingerprints: dict[str, Fingerprint]
    metadata: list[ModelNode]  # what a charting method may observe
    component_of: dict[str, int]
    patterns: list[Pattern]
    duplicates: dict[str, list[str]]  # original -> exact copies
    metric_labeled: set[str]
    attribute_labeled: dict[str, set[str]]

    @property
    def ids(self) -> list[str]:
        return [n.id for n in self.truth.sorted_nodes()]

    def fingerprint_list(self) -> list[Fingerprint]:
        return [self.fingerprints[i] for i in self.ids]

    def components(self) -> list[list[str]]:
        out: dict[int, list[str]] = {}
        for model_id in self.ids:
            out.setdefault(self.component_of[model_id], []).append(model_id)
        return [out[c] for c in sorted(out)]

    def fan_confusion_rate(self) -> float | None:
        """Fraction of fans in which some child has a sibling nearer than the parent."""
        fans = [p for p in self.patterns if p.kind == "fan" and len(p.members) >= 2]
        if not fans:
            return None
        confused = 0
        for fan in fans:
            parent = self.fingerprints[fan.parent].values
            vecs = [self.fingerprints[m].values for m in fan.members]
            for j in range(1, len(vecs)):
                to_parent = float(np.sum((vecs[j] - parent) ** 2))
                if any(float(np.sum((vecs[j] - vecs[i]) ** 2)) < to_parent for i in range(j)):
                    confused += 1
                    break
        return confused / len(fans)


class _Builder:
    def __init__(self, spec: SyntheticSpec):
        self.spec = spec
        self.rng = np.random.default_rng(spec.seed)
        self.clock = T0
        self.vectors: dict[str, np.ndarray] = {}
        self.nodes: list[ModelNode] = []
        self.edges: list[Edge] = []
        self.out_degree: dict[str, int] = {}
        self.eligible: dict[int, list[str]] = {}
        self.component_of: dict[str, int] = {}
        self.patterns: list[Pattern] = []
        self.duplicates: dict[str, list[str]] = {}
        self.quantized: set[str] = set()
        self.attr: dict[str, dict[str, str]] = {}
        self.family: dict[str, dict[str, str]] = {}
        self.serial = 0

    # time
    def _gap(self, scale: float) -> int:
        jitter = self.spec.time_jitter
        return max(1, int(round(scale * (1.0 + jitter * self.rng.uniform(-1.0, 1.0)))))

    def _tick(self, scale: float | None = None) -> int:
        self.clock += self._gap(self.spec.time_step if scale is None else scale)
        return self.clock

    # attributes
    def _draw(self, key: str) -> str:
        labels = self.spec.attribute_scheme[key]
        names = list(labels)
        p = np.array([labels[n] for n in names], dtype=float)
        return names[int(self.rng.choice(len(names), p=p / p.sum()))]

    def _plant_attributes(self, model_id: str, parent: str | None) -> None:
        own, fam = {}, {}
        for key in self.spec.attribute_scheme:
            if parent is None or self.rng.random() < self.spec.attribute_noise:
                own[key] = self._draw(key)
            else:
                own[key] = self.family[parent][key]
            fam[key] = own[key] if self.rng.random() < 0.5 else self._draw(key)
        self.attr[model_id] = own
        self.family[model_id] = fam

    # nodes
    def _new(self, comp: int, vector: np.ndarray, parents: list[str], kind: EdgeKind,
             created_at: int, quantized: bool = False, can_parent: bool = True) -> str:
        model_id = f"org{comp:02d}/model-{self.serial:05d}"
        self.serial += 1
        self.vectors[model_id] = vector
        downloads = int(self.rng.lognormal(mean=4.0, sigma=2.0))
        self.nodes.append(ModelNode(model_id, created_at, downloads=downloads, quantized=quantized,
                                    known_parents=list(parents)))
        self.out_degree[model_id] = 0
        self.component_of[model_id] = comp
        for p in parents:
            self.edges.append(Edge(p, model_id, kind))
            self.out_degree[p] += 1
        if quantized:
            self.quantized.add(model_id)
        if can_parent:
            self.eligible[comp].append(model_id)
        self._plant_attributes(model_id, parents[0] if parents else None)
        return model_id

    def _pick_parent(self, comp: int) -> str:
        pool = self.eligible[comp]
        weights = np.array([(self.out_degree[m] + 1.0) ** self.spec.attach_power for m in pool])
        return pool[int(self.rng.choice(len(pool), p=weights / weights.sum()))]

    def _step(self, scale: float) -> np.ndarray:
        return self.rng.normal(0.0, scale, self.spec.dim)

    def _keep_norm(self, vector: np.ndarray, norm: float) -> np.ndarray:
        if not self.spec.preserve_norm:
            return vector
        return vector * (norm / float(np.linalg.norm(vector)))

    def build(self) -> None:
        spec = self.spec
        root_scale = spec.root_separation * spec.child_sigma / math.sqrt(2.0)
        sizes = [spec.component_size.sample(self.rng) for _ in range(spec.n_components)]
        remaining = {}
        for comp, size in enumerate(sizes):
            self.eligible[comp] = []
            vector = self.rng.normal(0.0, root_scale, spec.dim)
            self._new(comp, vector, [], EdgeKind.FINE_TUNE, self._tick())
            remaining[comp] = size - 1
        rates = np.array([spec.fan_rate, spec.snake_rate, spec.merge_rate,
                          spec.duplicate_rate, spec.quantize_rate])
        actions = ["fan", "snake", "merge", "duplicate", "quantize"]
        tight = spec.tight_scale * spec.child_sigma
        while any(remaining.values()):
            open_comps = [c for c, r in remaining.items() if r > 0]
            weights = np.array([remaining[c] for c in open_comps], dtype=float)
            comp = open_comps[int(self.rng.choice(len(open_comps), p=weights / weights.sum()))]
            u = self.rng.random()
            cumulative = np.cumsum(rates)
            action = next((a for a, c in zip(actions, cumulative) if u < c), "finetune")
            budget = remaining[comp]
            parent = self._pick_parent(comp)
            pv = self.vectors[parent]
            if action == "snake":
                length = min(spec.snake_length.sample(self.rng), budget)
                members = []
                norm = float(np.linalg.norm(pv))
                current = self._keep_norm(pv + self._step(spec.child_sigma), norm)
                prev = parent
                self._tick()
                for i in range(length):
                    if i > 0:
                        current = self._keep_norm(current + self._step(tight), norm)
                        self._tick()
                    last = i == length - 1
                    prev = self._new(comp, current, [prev], EdgeKind.FINE_TUNE, self.clock,
                                     can_parent=last or spec.pattern_members_are_parents)
                    members.append(prev)
                self.patterns.append(Pattern("snake", parent, members))
                remaining[comp] -= length
            elif action == "fan":
                width = min(spec.fan_width.sample(self.rng), budget)
                shift = self._step(tight * spec.fan_shift)
                members = []
                self._tick()
                for i in range(width):
                    if i > 0:
                        self._tick(spec.time_step * spec.fan_window)
                    vector = self._keep_norm(pv + shift + self._step(tight), float(np.linalg.norm(pv)))
                    members.append(self._new(comp, vector, [parent], EdgeKind.FINE_TUNE, self.clock,
                                             can_parent=spec.pattern_members_are_parents))
                self.patterns.append(Pattern("fan", parent, members))
                remaining[comp] -= width
            elif action == "merge" and len(self.eligible[comp]) >= 2:
                other = parent
                for _ in range(20):
                    other = self._pick_parent(comp)
                    if other != parent:
                        break
                if other == parent:
                    other = next(m for m in self.eligible[comp] if m != parent)
                a, b = sorted((parent, other))
                vector = self._keep_norm((self.vectors[a] + self.vectors[b]) / 2.0,
                                         float(np.linalg.norm(self.vectors[a]) + np.linalg.norm(self.vectors[b])) / 2.0)
                self._new(comp, vector, [a, b], EdgeKind.MERGE, self._tick())
                remaining[comp] -= 1
            elif action == "duplicate":
                copy = self._new(comp, pv.copy(), [parent], EdgeKind.DUPLICATE, self._tick(), can_parent=False)
                self.duplicates.setdefault(parent, []).append(copy)
                remaining[comp] -= 1
            elif action == "quantize":
                vector = round_to_levels(pv, 256, offset=float(self.rng.random()))
                self._new(comp, vector, [parent], EdgeKind.QUANTIZATION, self._tick(),
                          quantized=True, can_parent=False)
                remaining[comp] -= 1
            else:
                vector = self._keep_norm(pv + self._step(spec.child_sigma), float(np.linalg.norm(pv)))
                self._new(comp, vector, [parent], EdgeKind.FINE_TUNE, self._tick())
                remaining[comp] -= 1


def generate(spec: SyntheticSpec) -> SyntheticCorpus:
    """Build a synthetic corpus; a pure function of ``spec`` (including its seed)."""
    builder = _Builder(spec)
    builder.build()
    truth = Atlas(builder.nodes, builder.edges)
    depths = truth.depths()
    label_rng = np.random.default_rng([spec.seed, 7])
    metric_rng = np.random.default_rng([spec.seed, 11])

    ids = [n.id for n in truth.sorted_nodes()]
    metric_labeled = {m for m in ids if label_rng.random() < spec.metric_label_rate}
    attribute_labeled = {
        key: {m for m in ids if label_rng.random() < spec.attribute_label_rate}
        for key in spec.attribute_scheme
    }
    for node in truth.sorted_nodes():
        if spec.metric_scheme == "depth":
            value = depths[node.id] + float(metric_rng.normal(0.0, spec.metric_sigma))
        else:
            value = float(spec.metric_constant)
        node.metrics = {spec.metric_name: value}
        node.attributes = dict(builder.attr[node.id])

    observed = []
    for node in truth.sorted_nodes():
        parents = node.known_parents or []
        observed.append(ModelNode(
            id=node.id,
            created_at=node.created_at,
            downloads=node.downloads,
            quantized=node.quantized,
            known_parents=list(parents) if len(parents) > 1 else None,
            attributes={k: v for k, v in node.attributes.items() if node.id in attribute_labeled[k]},
            metrics={k: v for k, v in node.metrics.items() if node.id in metric_labeled},
        ))

    fingerprints = {
        m: Fingerprint(m, builder.vectors[m],
                       dtype_tag=DType.F32,
                       unique_ratio=QUANTIZED_UNIQUE_RATIO if m in builder.quantized else 1.0,
                       selector=f"*;n={spec.dim}", seed=spec.seed)
        for m in ids
    }
    return SyntheticCorpus(
        spec=spec,
        truth=truth,
        fingerprints=fingerprints,
        metadata=observed,
        component_of=dict(builder.component_of),
        patterns=builder.patterns,
        duplicates=builder.duplicates,
        metric_labeled=metric_labeled,
        attribute_labeled=attribute_labeled,
    )


def corrupt(metadata: list[ModelNode], drop_rates: Mapping[str, float], seed: int) -> list[ModelNode]:
    """Blank metadata fields independently at the given rates.

    Keys of ``drop_rates`` are attribute keys, metric names, ``"metrics"``
    (all metrics), ``"downloads"`` or ``"known_parents"``; the latter only
    drops single-parent lineage and leaves documented merges intact.
    """
    for name, rate in drop_rates.items():
        if not 0.0 <= rate <= 1.0:
            raise ValueError(f"drop rate for {name!r} must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    keys = sorted(drop_rates)
    out = []
    for node in sorted(metadata, key=lambda n: n.sort_key):
        attributes = dict(node.attributes)
        metrics = dict(node.metrics)
        parents = None if node.known_parents is None else list(node.known_parents)
        downloads = node.downloads
        for key in keys:
            u = rng.random()
            if u >= drop_rates[key]:
                continue
            if key == "known_parents":
                if parents is not None and len(parents) <= 1:
                    parents = None
            elif key == "metrics":
                metrics = {}
            elif key == "downloads":
                downloads = 0
            elif key in attributes:
                del attributes[key]
            elif key in metrics:
                del metrics[key]
        out.append(replace(node, attributes=attributes, metrics=metrics,
                           known_parents=parents, downloads=downloads))
    return out


def load_spec(path: str) -> SyntheticSpec:
    with open(path, encoding="utf-8") as fh:
        return SyntheticSpec.from_dict(json.load(fh))
