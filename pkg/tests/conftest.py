from __future__ import annotations

import random

import pytest
from hypothesis import HealthCheck, settings

from modelatlas.core import Atlas, Edge, EdgeKind, ModelNode
from modelatlas.syngen import Dist, SyntheticSpec, generate

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")

# filled by tests/test_acceptance.py, printed at the end of the run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])


def random_dag(n: int, seed: int, edge_p: float = 0.3, merges: bool = True) -> Atlas:
    """Random valid atlas: nodes in time order, edges only from earlier nodes."""
    rng = random.Random(seed)
    atlas = Atlas(ModelNode(f"m{i:03d}", 1000 + i, downloads=rng.randint(0, 50)) for i in range(n))
    for i in range(1, n):
        if rng.random() < edge_p:
            continue  # stays a source
        parents = rng.sample(range(i), k=min(i, 2 if merges and rng.random() < 0.2 else 1))
        kind = EdgeKind.MERGE if len(parents) > 1 else EdgeKind.FINE_TUNE
        for p in parents:
            atlas.add_edge(Edge(f"m{p:03d}", f"m{i:03d}", kind))
    return atlas


def chain(*ids: str, downloads: tuple[int, ...] | None = None) -> Atlas:
    nodes = [ModelNode(m, 10 + i, downloads=(downloads[i] if downloads else 0)) for i, m in enumerate(ids)]
    atlas = Atlas(nodes)
    for a, b in zip(ids, ids[1:]):
        atlas.add_edge(Edge(a, b, EdgeKind.FINE_TUNE))
    return atlas


def small_spec(**changes) -> SyntheticSpec:
    base = dict(n_components=1, component_size=Dist("fixed", 80))
    base.update(changes)
    return SyntheticSpec(**base)


@pytest.fixture(scope="session")
def corpus():
    return generate(SyntheticSpec(n_components=2, component_size=Dist("fixed", 150), seed=3))


def hub_rich_spec(seed: int = 0, **changes) -> SyntheticSpec:
    """One 1000-model component made mostly of wide fans, so most leaves sit in hubs."""
    base = dict(
        n_components=1, component_size=Dist("fixed", 1000), fan_rate=0.5, fan_width=Dist("uniform", 20, 40),
        snake_rate=0.0, merge_rate=0.0, pattern_members_are_parents=True, attach_power=-2.0,
        metric_sigma=1.0, seed=seed,
    )
    base.update(changes)
    return SyntheticSpec(**base)
