"""Acceptance criteria, one test each; a PASS/FAIL line per criterion is printed at the end.

Run directly (``python tests/test_acceptance.py``) for the same lines without pytest.
"""

from __future__ import annotations

import math
import random
import sys
import time
from dataclasses import replace
from functools import lru_cache
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).parent))

from conftest import ACCEPTANCE_LINES, hub_rich_spec, random_dag  # noqa: E402
from modelatlas.charting import ChartingConfig, chart, chart_components  # noqa: E402
from modelatlas.core import Atlas, ModelNode  # noqa: E402
from modelatlas.distance import compute_distance_matrix, knn  # noqa: E402
from modelatlas.evaluation import (  # noqa: E402
    benchmark,
    make_split,
    pattern_classification_benchmark,
)
from modelatlas.export import export_gexf, validate_gexf  # noqa: E402
from modelatlas.imputation import (  # noqa: E402
    MetricLabelSet,
    baseline_attribute_majority,
    evaluate_imputation,
    impute_attribute_hub,
    metric_imputation_table,
)
from modelatlas.ingest import Fingerprint, dumps_metadata, loads_metadata, read_fingerprints, write_fingerprints  # noqa: E402
from modelatlas.syngen import Dist, SyntheticSpec, generate  # noqa: E402

SEEDS = range(10)
BASELINES = ("random", "price", "majority", "mst")
ABLATIONS = {
    "quantization-leaf": "quantized_are_leaves",
    "dedup": "dedup",
    "temporal filter": "temporal_filter",
    "snake/fan": "snake_fan",
    "merge honoring": "honor_known_parents",
}


def mixed_spec(seed: int, **changes) -> SyntheticSpec:
    """Default mixture of fans, snakes, quantization, duplicates and merges; 1000 models."""
    return SyntheticSpec(n_components=2, component_size=Dist("fixed", 500), seed=seed, **changes)


def record(number: int, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES[number] = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"


def fmt(values) -> str:
    return "[" + ", ".join(f"{v:.3f}" for v in values) + "]"


# -- shared runs -------------------------------------------------------------

@lru_cache(maxsize=None)
def corpus(seed: int, quantize_rate: float | None = None):
    spec = mixed_spec(seed) if quantize_rate is None else mixed_spec(seed, quantize_rate=quantize_rate)
    return generate(spec)


@lru_cache(maxsize=None)
def run(seed: int, method: str, ablation: str | None = None, quantize_rate: float | None = None):
    c = corpus(seed, quantize_rate)
    config = ChartingConfig(**({ablation: False} if ablation else {}))
    split = make_split(c.truth, 0.1)
    return benchmark(method, c.truth, c.metadata, c.fingerprints, split, config=config, seed=seed)


# -- criteria ----------------------------------------------------------------

def check_1():
    ours = [run(s, "ours").accuracy for s in SEEDS]
    times = [run(s, "ours").wall_time for s in SEEDS]
    base = {m: float(np.mean([run(s, m).accuracy for s in SEEDS])) for m in BASELINES}
    confusion = [corpus(s).fan_confusion_rate() for s in SEEDS]
    mean = float(np.mean(ours))
    best = max(base["majority"], base["mst"])
    ok = (min(ours) >= 0.90
          and base["random"] < base["price"] < best < mean
          and mean - best >= 0.20
          and max(times) < 30.0
          and min(confusion) >= 0.20)
    detail = (f"chart acc {fmt(ours)} (mean {mean:.3f}, min {min(ours):.3f}); baselines mean "
              + ", ".join(f"{m} {v:.3f}" for m, v in base.items())
              + f"; margin over best {mean - best:.3f}; max runtime {max(times):.2f}s; "
              f"fan confusion min {min(confusion):.2f}")
    return ok, detail


def check_2():
    full = float(np.mean([run(s, "ours").accuracy for s in SEEDS]))
    drops = {}
    for name, flag in ABLATIONS.items():
        drops[name] = full - float(np.mean([run(s, "ours", flag).accuracy for s in SEEDS]))
    heavy_full = float(np.mean([run(s, "ours", None, 0.4).accuracy for s in SEEDS]))
    heavy_off = float(np.mean([run(s, "ours", "quantized_are_leaves", 0.4).accuracy for s in SEEDS]))
    heavy_drop = heavy_full - heavy_off
    ok = all(d >= 0.02 for d in drops.values()) and heavy_drop >= 0.15
    detail = ("mean drops " + ", ".join(f"-{k} {v * 100:.2f}pt" for k, v in drops.items())
              + f"; quantize_rate 0.4: -quantization-leaf {heavy_drop * 100:.1f}pt "
              f"({heavy_full:.3f} -> {heavy_off:.3f})")
    return ok, detail


def _prior_violations(nodes, atlas):
    quantized = [n.id for n in nodes if n.quantized]
    bad_q = sum(atlas.out_degree(m) > 0 for m in quantized)
    bad_t = sum(atlas.nodes[e.parent].created_at > atlas.nodes[e.child].created_at for e in atlas.edges)
    return len(quantized), bad_q, len(atlas.edges), bad_t


def check_3():
    totals = np.zeros(4, dtype=int)
    outputs = 0
    for s in SEEDS:
        for qr in (None, 0.4):
            c = corpus(s, qr)
            atlas = chart_components(c.metadata, c.fingerprints)
            totals += _prior_violations(c.metadata, atlas)
            outputs += 1
    for s in range(100):
        c = generate(SyntheticSpec(n_components=1, component_size=Dist("uniform", 20, 120), quantize_rate=0.3,
                                   duplicate_rate=0.1, seed=10_000 + s))
        totals += _prior_violations(c.metadata, chart(c.metadata, c.fingerprints))
        outputs += 1
    q, bad_q, e, bad_t = (int(v) for v in totals)
    ok = bad_q == 0 and bad_t == 0 and q > 0
    detail = (f"{outputs} charted outputs: quantized leaves {q - bad_q}/{q} ({100 * (q - bad_q) / q:.2f}%), "
              f"time-ordered edges {e - bad_t}/{e} ({100 * (e - bad_t) / e:.2f}%)")
    return ok, detail


def wilson(successes: int, n: int, z: float = 2.5758) -> tuple[float, float]:
    p = successes / n
    centre = (p + z * z / (2 * n)) / (1 + z * z / n)
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / (1 + z * z / n)
    return centre - half, centre + half


def check_4():
    res = pattern_classification_benchmark(1000, seed=0)
    hits = round(res.accuracy * res.n_patterns)
    low, high = wilson(hits, res.n_patterns)
    ok = high >= 0.95  # 0.95 not excluded by the 99% interval
    detail = (f"pattern accuracy {res.accuracy:.3f} on {res.n_patterns} patterns, 99% CI [{low:.3f}, {high:.3f}]; "
              f"fan {res.per_kind['fan']:.3f}, snake {res.per_kind['snake']:.3f}; rho_th {res.rho_th:.3f}")
    return ok, detail


def metric_rows(seed: int):
    c = generate(hub_rich_spec(seed=seed))
    t, name = c.truth, c.spec.metric_name
    labels = MetricLabelSet(name, {m: t.nodes[m].metrics[name] for m in c.metric_labeled})
    held = {m: t.nodes[m].metrics[name] for m in t.nodes if m not in c.metric_labeled}
    return metric_imputation_table(t, labels, held)


def check_5():
    tables = [metric_rows(s) for s in SEEDS]
    mse = np.mean([[r["mse"] for r in rows] for rows in tables], axis=0)
    r5 = float(np.mean([rows[-1]["pearson"] for rows in tables]))
    ratio = float(mse[-1] / mse[0])
    monotone = all(mse[i] > mse[i + 1] for i in range(1, len(mse) - 1))
    ok = ratio <= 0.5 and r5 >= 0.8 and monotone
    detail = (f"mean MSE baseline {mse[0]:.3f}, 1/2/3/5-NN {fmt(mse[1:])}; 5-NN/baseline {ratio:.3f}; "
              f"5-NN r {r5:.3f}; monotone k=1..5 {monotone}")
    return ok, detail


def check_6():
    gains = {}
    for key in ("license", "pipeline_tag"):
        hub, base = [], []
        for s in SEEDS:
            c = generate(hub_rich_spec(seed=s))
            t = c.truth
            labels = {m: t.nodes[m].attributes[key] for m in c.attribute_labeled[key]}
            held = {m: t.nodes[m].attributes[key] for m in t.nodes if m not in labels}
            hub.append(evaluate_imputation(impute_attribute_hub(t, key, labels, held), held).accuracy)
            base.append(evaluate_imputation(baseline_attribute_majority(t, key, labels, held), held).accuracy)
        gains[key] = (float(np.mean(hub)), float(np.mean(base)), min(h - b for h, b in zip(hub, base)))
    ok = all(h - b >= 0.15 for h, b, _ in gains.values())
    detail = "; ".join(f"{k}: hub {h:.3f} vs majority {b:.3f} (+{(h - b) * 100:.1f}pt, worst seed +{w * 100:.1f}pt)"
                       for k, (h, b, w) in gains.items())
    return ok, detail


def _double_loop(rows):
    n = len(rows)
    out = np.full((n, n), np.inf)
    for i in range(n):
        for j in range(n):
            if i != j:
                s = 0.0
                for a, b in zip(rows[i], rows[j]):
                    d = a - b
                    s += d * d
                out[i, j] = s
    return out


def _reach(atlas, start):
    seen, stack = set(), [start]
    while stack:
        for child in atlas.children(stack.pop()):
            if child not in seen:
                seen.add(child)
                stack.append(child)
    return seen


def check_7():
    rng = np.random.default_rng(0)
    dist_ok = knn_ok = True
    cases = 0
    for trial in range(30):
        n = int(rng.integers(2, 51))
        rows = rng.normal(size=(n, int(rng.integers(1, 101))))
        if trial % 3 == 0:
            rows = np.round(rows, 1)  # plenty of exact ties
        fps = [Fingerprint(f"m{i:03d}", r) for i, r in enumerate(rows)]
        m = compute_distance_matrix(fps)
        dist_ok &= np.array_equal(m.values, _double_loop(rows.tolist()))
        for q in m.ids:
            k = int(rng.integers(1, n))
            i = m.index(q)
            pool = sorted((float(m.values[i, j]), j, x) for j, x in enumerate(m.ids) if j != i)
            knn_ok &= knn(m, q, k) == [(x, d) for d, _, x in pool[:k]]
            cases += 1
    sub_ok = True
    for seed in range(200):
        atlas = random_dag(int(random.Random(seed).randint(1, 50)), seed)
        for x in atlas.nodes:
            expected = atlas.nodes[x].downloads + sum(atlas.nodes[d].downloads for d in _reach(atlas, x))
            sub_ok &= atlas.subtree_downloads(x) == expected
    ok = bool(dist_ok and knn_ok and sub_ok)
    detail = (f"distance vs double loop (30 matrices, n<=50) {'exact' if dist_ok else 'MISMATCH'}; "
              f"subtree_downloads vs reachability sum (200 DAGs) {'exact' if sub_ok else 'MISMATCH'}; "
              f"kNN vs full sort ({cases} queries) {'exact' if knn_ok else 'MISMATCH'}")
    return ok, detail


def _pairs(atlas):
    return sorted((e.parent, e.child) for e in atlas.edges)


def check_8():
    shift_ok = dup_ok = det_ok = 0
    trials = 200
    for t in range(trials):
        rng = random.Random(t)
        c = generate(SyntheticSpec(n_components=1, component_size=Dist("uniform", 30, 80), duplicate_rate=0.0,
                                   seed=20_000 + t))
        before = chart(c.metadata, c.fingerprints)

        shift = rng.randint(1, 10**7)
        shifted = [replace(n, created_at=n.created_at + shift) for n in c.metadata]
        shift_ok += _pairs(chart(shifted, c.fingerprints)) == _pairs(before)

        nodes, fps = list(c.metadata), dict(c.fingerprints)
        by_id = {n.id: n for n in nodes}
        for k, m in enumerate(rng.sample(c.ids, rng.randint(1, 5))):
            copy = f"{m}-copy{k}"
            nodes.append(ModelNode(copy, by_id[m].created_at + rng.randint(1, 10**6)))
            fps[copy] = replace(fps[m], id=copy)
        after = chart(nodes, fps)
        dup_ok += all(after.parents(m) == before.parents(m) for m in c.ids)

        again = generate(c.spec)
        det_ok += (chart(again.metadata, again.fingerprints).dumps() == before.dumps()
                   and again.truth.dumps() == c.truth.dumps())
    ok = shift_ok == dup_ok == det_ok == trials
    detail = (f"time shift {shift_ok}/{trials}, duplicate insertion {dup_ok}/{trials}, "
              f"byte-exact reruns {det_ok}/{trials}")
    return ok, detail


def check_9():
    times = {}
    for n in (500, 1000, 2000):
        c = generate(SyntheticSpec(n_components=1, component_size=n, seed=n))
        best = math.inf
        for _ in range(3):
            start = time.perf_counter()
            chart(c.metadata, c.fingerprints)
            best = min(best, time.perf_counter() - start)
        times[n] = best
    growth = [times[1000] / times[500], times[2000] / times[1000]]
    rows = np.random.default_rng(1).normal(size=(2000, 100))
    fps = [Fingerprint(f"m{i:04d}", r) for i, r in enumerate(rows)]
    dist_best = math.inf
    for _ in range(3):
        start = time.perf_counter()
        compute_distance_matrix(fps)
        dist_best = min(dist_best, time.perf_counter() - start)
    ok = max(growth) <= 4.5 and dist_best < 5.0
    detail = (f"chart time n=500/1000/2000 {times[500]:.2f}s/{times[1000]:.2f}s/{times[2000]:.2f}s, "
              f"growth per doubling {growth[0]:.2f}x, {growth[1]:.2f}x; distances n=2000 dim=100 {dist_best:.3f}s")
    return ok, detail


def check_10(tmp: Path):
    gexf_errors = 0
    documents = 0
    for s in SEEDS:
        c = corpus(s)
        for atlas in (c.truth, chart_components(c.metadata, c.fingerprints)):
            gexf_errors += len(validate_gexf(export_gexf(atlas)))
            documents += 1
    atlas_ok = fp_ok = meta_ok = 0
    for t in range(100):
        c = generate(SyntheticSpec(n_components=int(1 + t % 3), component_size=Dist("uniform", 5, 60),
                                   merge_rate=0.1, seed=30_000 + t))
        text = c.truth.dumps()
        again = Atlas.loads(text)
        atlas_ok += again == c.truth and again.dumps() == text
        path = tmp / f"fp{t}.jsonl"
        write_fingerprints(c.fingerprint_list(), path)
        back = read_fingerprints(path)
        fp_ok += len(back) == len(c.ids) and all(
            a.id == b.id and np.array_equal(a.values, b.values) and a.values.dtype == b.values.dtype
            and a.dtype_tag == b.dtype_tag and a.unique_ratio == b.unique_ratio
            and a.selector == b.selector and a.seed == b.seed
            for a, b in zip(c.fingerprint_list(), back))
        nodes, errors = loads_metadata(dumps_metadata(c.metadata))
        full, errors2 = loads_metadata(dumps_metadata(c.truth.sorted_nodes()))
        meta_ok += not errors and not errors2 and nodes == c.metadata and full == c.truth.sorted_nodes()
    ok = gexf_errors == 0 and atlas_ok == fp_ok == meta_ok == 100
    detail = (f"GEXF 1.3 schema errors {gexf_errors} over {documents} documents; lossless round trips over "
              f"100 corpora: atlas JSON {atlas_ok}, fingerprint JSONL {fp_ok}, metadata JSONL {meta_ok}")
    return ok, detail


# -- pytest ------------------------------------------------------------------

def _assert(number: int, result) -> None:
    ok, detail = result
    record(number, ok, detail)
    assert ok, detail


def test_criterion_1_charting_accuracy():
    _assert(1, check_1())


def test_criterion_2_ablations():
    _assert(2, check_2())


def test_criterion_3_structural_invariants():
    _assert(3, check_3())


def test_criterion_4_pattern_classifier():
    _assert(4, check_4())


def test_criterion_5_metric_imputation():
    _assert(5, check_5())


def test_criterion_6_hub_imputation():
    _assert(6, check_6())


def test_criterion_7_oracles():
    _assert(7, check_7())


def test_criterion_8_metamorphic():
    _assert(8, check_8())


def test_criterion_9_scaling():
    _assert(9, check_9())


def test_criterion_10_formats(tmp_path):
    _assert(10, check_10(tmp_path))


if __name__ == "__main__":
    import tempfile

    with tempfile.TemporaryDirectory() as tmp:
        checks = [check_1, check_2, check_3, check_4, check_5, check_6, check_7, check_8, check_9,
                  lambda: check_10(Path(tmp))]
        for number, check in enumerate(checks, 1):
            try:
                record(number, *check())
            except Exception as exc:  # report and keep going
                record(number, False, f"raised {exc!r}")
            print(ACCEPTANCE_LINES[number], flush=True)
    sys.exit(0 if all(": PASS" in line for line in ACCEPTANCE_LINES.values()) else 1)
