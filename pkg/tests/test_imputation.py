import math
import random

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from modelatlas.core import Atlas, Edge, EdgeKind, ModelNode
from modelatlas.errors import EmptyLabelSet, KeyMismatch, NoLabeledNodes
from modelatlas.imputation import (
    FALLBACK,
    HUB,
    KNN,
    MetricLabelSet,
    Prediction,
    baseline_attribute_majority,
    baseline_metric_mean,
    evaluate_imputation,
    impute_attribute_hub,
    impute_metric_knn,
    majority_label,
    metric_imputation_table,
)
from modelatlas.syngen import generate

from conftest import chain, hub_rich_spec, random_dag


def fan(parent, children):
    atlas = Atlas([ModelNode(parent, 1)] + [ModelNode(c, 2 + i) for i, c in enumerate(children)])
    for c in children:
        atlas.add_edge(parent, c, EdgeKind.FINE_TUNE)
    return atlas


def held_out(corpus, key=None):
    t = corpus.truth
    if key is None:
        name = corpus.spec.metric_name
        labels = {m: t.nodes[m].metrics[name] for m in corpus.metric_labeled}
        return MetricLabelSet(name, labels), {m: t.nodes[m].metrics[name] for m in t.nodes if m not in labels}
    labels = {m: t.nodes[m].attributes[key] for m in corpus.attribute_labeled[key] if t.nodes[m].attributes.get(key)}
    return labels, {m: t.nodes[m].attributes[key] for m in t.nodes
                    if m not in labels and t.nodes[m].attributes.get(key)}


class TestMetricKnn:
    def test_forced_average(self):
        atlas = chain("A", "B", "C")
        pred = impute_metric_knn(atlas, MetricLabelSet("s", {"A": 0.0, "C": 10.0}), 2)
        assert pred["B"] == Prediction(5.0, KNN, 2, 1)

    def test_constant_field(self):
        atlas = random_dag(30, 1)
        labels = {m: 7.5 for m in sorted(atlas.nodes)[::3]}
        pred = impute_metric_knn(atlas, MetricLabelSet("s", labels), 3)
        assert {p.value for p in pred.values()} == {7.5}

    def test_ties_at_last_level_are_kept(self):
        atlas = fan("P", ["a", "b", "c", "q"])
        pred = impute_metric_knn(atlas, MetricLabelSet("s", {"a": 1.0, "b": 2.0, "c": 6.0}), 1, ["q"])
        assert pred["q"].value == 3.0 and pred["q"].support == 3 and pred["q"].hops == 2

    def test_unreachable_falls_back(self):
        atlas = Atlas([ModelNode("a", 1), ModelNode("b", 2), ModelNode("c", 3)])
        atlas.add_edge("a", "b", EdgeKind.FINE_TUNE)
        pred = impute_metric_knn(atlas, MetricLabelSet("s", {"a": 4.0}), 1)
        assert pred["b"].source == KNN and pred["c"] == Prediction(4.0, FALLBACK)

    def test_errors(self):
        atlas = chain("A", "B")
        with pytest.raises(KeyMismatch):
            impute_metric_knn(atlas, MetricLabelSet("s", {"Z": 1.0}), 1)
        with pytest.raises(ValueError):
            impute_metric_knn(atlas, MetricLabelSet("s", {"A": 1.0}), 0)
        with pytest.raises(EmptyLabelSet):
            impute_metric_knn(atlas, MetricLabelSet("s", {}), 1)
        with pytest.raises(ValueError):
            MetricLabelSet("s", {"A": math.nan})

    @given(st.integers(2, 12), st.integers(0, 10_000), st.integers(1, 4))
    def test_relabeling_equivariance(self, n, seed, k):
        atlas = random_dag(n, seed)
        rng = random.Random(seed)
        names = [f"z{v:03d}" for v in rng.sample(range(1000), n)]
        rename = dict(zip(sorted(atlas.nodes), names))
        # shuffled insertion order and new ids, same graph
        order = list(atlas.nodes.values())
        rng.shuffle(order)
        copy = Atlas(ModelNode(rename[x.id], x.created_at) for x in order)
        edges = list(atlas.edges)
        rng.shuffle(edges)
        for e in edges:
            copy.add_edge(Edge(rename[e.parent], rename[e.child], e.kind))
        labels = {m: float(rng.randint(0, 9)) for m in sorted(atlas.nodes) if rng.random() < 0.4} or {sorted(atlas.nodes)[0]: 1.0}
        a = impute_metric_knn(atlas, MetricLabelSet("s", labels), k)
        b = impute_metric_knn(copy, MetricLabelSet("s", {rename[m]: v for m, v in labels.items()}), k)
        assert {rename[m]: p for m, p in a.items()} == b

    @given(st.integers(0, 10_000))
    def test_label_elsewhere_changes_nothing(self, seed):
        left = random_dag(10, seed)
        right = Atlas(ModelNode(f"r{i}", 5000 + i) for i in range(4))
        right.add_edge("r0", "r1", EdgeKind.FINE_TUNE)
        both = Atlas(list(left.nodes.values()) + list(right.nodes.values()), left.edges + right.edges)
        labels = {"m000": 1.0, "m005": 3.0}
        targets = sorted(left.nodes)
        before = impute_metric_knn(both, MetricLabelSet("s", labels), 2, targets)
        after = impute_metric_knn(both, MetricLabelSet("s", {**labels, "r1": 100.0}), 2, targets)
        for m in targets:
            if before[m].source == KNN:
                assert before[m] == after[m]


class TestMetricBaseline:
    def test_mean(self):
        pred = baseline_metric_mean(MetricLabelSet("s", {"a": 1.0, "b": 3.0}), ["x", "y"])
        assert {p.value for p in pred.values()} == {2.0}

    def test_single_label(self):
        assert baseline_metric_mean(MetricLabelSet("s", {"a": -4.0}), ["x"])["x"].value == -4.0

    def test_closed_form_mse(self):
        corpus = generate(hub_rich_spec(seed=2, component_size=300))
        labelset, truth = held_out(corpus)
        mu = math.fsum(labelset.labels.values()) / len(labelset.labels)
        t = np.array(list(truth.values()))
        expected = t.var() + (t.mean() - mu) ** 2
        got = evaluate_imputation(baseline_metric_mean(labelset, truth), truth).mse
        assert got == pytest.approx(expected, rel=1e-12)


class TestAttributes:
    def test_unanimous_hub(self):
        atlas = fan("A", ["B", "C", "D"])
        pred = impute_attribute_hub(atlas, "license", {"B": "mit", "C": "mit"})
        assert pred["D"] == Prediction("mit", HUB, 2)

    def test_tie_is_lexicographic(self):
        atlas = fan("A", ["B", "C", "D"])
        assert impute_attribute_hub(atlas, "license", {"B": "mit", "C": "apache"})["D"].value == "apache"
        assert majority_label(["b", "a", "b", "a"]) == "a"

    def test_outside_hub_falls_back(self):
        atlas = chain("A", "B", "C")
        pred = impute_attribute_hub(atlas, "license", {"A": "mit"})
        assert pred["C"].source == FALLBACK and pred["C"].value == "mit"

    def test_reads_labels_from_atlas(self):
        atlas = fan("A", ["B", "C", "D"])
        atlas.nodes["B"].attributes["license"] = "mit"
        assert set(impute_attribute_hub(atlas, "license")) == {"A", "C", "D"}

    def test_errors(self):
        atlas = fan("A", ["B", "C"])
        with pytest.raises(NoLabeledNodes):
            impute_attribute_hub(atlas, "license")
        with pytest.raises(ValueError):
            impute_attribute_hub(atlas, "colour", {"B": "x"})

    def test_majority(self):
        atlas = fan("A", ["B", "C", "D", "E", "F"])
        labels = {"B": "mit", "C": "mit", "D": "mit", "E": "apache"}
        assert {p.value for p in baseline_attribute_majority(atlas, "license", labels).values()} == {"mit"}
        same = {"B": "gpl", "C": "gpl"}
        assert {p.value for p in baseline_attribute_majority(atlas, "license", same).values()} == {"gpl"}

    def test_majority_accuracy_is_class_frequency(self):
        rng = random.Random(5)
        atlas = Atlas(ModelNode(f"n{i:03d}", 1 + i) for i in range(400))
        values = {m: rng.choices(["a", "b", "c"], weights=[6, 3, 1])[0] for m in atlas.nodes}
        labels = {m: v for m, v in values.items() if rng.random() < 0.3}
        truth = {m: v for m, v in values.items() if m not in labels}
        winner = majority_label(labels.values())
        report = evaluate_imputation(baseline_attribute_majority(atlas, "license", labels), truth)
        assert report.accuracy == sum(v == winner for v in truth.values()) / len(truth)

    def test_hub_path_on_planted_attributes(self):
        corpus = generate(hub_rich_spec(seed=1, attribute_noise=0.0))
        labels, truth = held_out(corpus, "license")
        hub = impute_attribute_hub(corpus.truth, "license", labels, truth)
        base = baseline_attribute_majority(corpus.truth, "license", labels, truth)
        on_path = [m for m in truth if hub[m].source == HUB]
        assert sum(hub[m].value == truth[m] for m in on_path) / len(on_path) >= 0.95
        assert evaluate_imputation(hub, truth).accuracy > evaluate_imputation(base, truth).accuracy


class TestEvaluate:
    def test_perfect(self):
        rep = evaluate_imputation({"a": 1.0, "b": 1.0}, {"a": 1.0, "b": 1.0})
        assert rep.mse == 0 and rep.mae == 0 and rep.pearson is None

    def test_offset(self):
        truth = {"a": 1.0, "b": 2.0, "c": 4.0}
        rep = evaluate_imputation({k: v + 1 for k, v in truth.items()}, truth)
        assert rep.mse == 1 and rep.mae == 1 and rep.pearson == pytest.approx(1.0)

    def test_random_uncorrelated(self):
        hits = 0
        for seed in range(100):
            rng = np.random.default_rng(seed)
            truth = {f"m{i}": float(v) for i, v in enumerate(rng.normal(size=1000))}
            pred = {f"m{i}": float(v) for i, v in enumerate(rng.normal(size=1000))}
            hits += abs(evaluate_imputation(pred, truth).pearson) < 0.1
        assert hits >= 99

    def test_categorical_and_fallback_fraction(self):
        pred = {"a": Prediction("mit", HUB, 1), "b": Prediction("gpl", FALLBACK)}
        rep = evaluate_imputation(pred, {"a": "mit", "b": "mit"})
        assert rep.kind == "categorical" and rep.accuracy == 0.5 and rep.fallback_fraction == 0.5

    def test_key_mismatch(self):
        with pytest.raises(KeyMismatch):
            evaluate_imputation({"a": 1.0}, {"b": 1.0})


def test_table_rows():
    corpus = generate(hub_rich_spec(seed=0, component_size=300))
    labelset, truth = held_out(corpus)
    rows = metric_imputation_table(corpus.truth, labelset, truth)
    assert [r["method"] for r in rows] == ["baseline", "1-NN", "2-NN", "3-NN", "5-NN"]
    assert rows[-1]["mse"] < rows[0]["mse"]
