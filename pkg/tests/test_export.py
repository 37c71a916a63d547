import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from modelatlas.core import Atlas, EdgeKind, ModelNode
from modelatlas.export import PALETTE, GexfStyle, export_dot, export_gexf, export_json, read_gexf, validate_gexf
from modelatlas.syngen import generate

from conftest import chain, random_dag, small_spec


def test_single_node():
    text = export_gexf(Atlas([ModelNode("solo", 5, downloads=9)]))
    assert validate_gexf(text) == []
    ids, edges = read_gexf(text)
    assert ids == ["solo"] and edges == []


def test_empty_documents():
    empty = Atlas()
    assert validate_gexf(export_gexf(empty)) == []
    assert export_dot(empty) == "digraph atlas {\n  rankdir=TB;\n}\n"
    assert Atlas.loads(export_json(empty)).nodes == {}


@given(st.integers(1, 40), st.integers(0, 10_000))
def test_round_trip_ids_and_edges(n, seed):
    atlas = random_dag(n, seed)
    ids, edges = read_gexf(export_gexf(atlas))
    assert sorted(ids) == sorted(atlas.nodes)
    assert sorted(edges) == sorted((e.parent, e.child, e.kind.value) for e in atlas.edges)


def test_merge_has_two_incoming_edges():
    atlas = Atlas(ModelNode(f"n{i}", 1 + i) for i in range(10))
    for i in range(1, 8):
        atlas.add_edge(f"n{i - 1}", f"n{i}", EdgeKind.FINE_TUNE)
    atlas.add_edge("n3", "n9", EdgeKind.MERGE)
    atlas.add_edge("n7", "n9", EdgeKind.MERGE)
    text = export_gexf(atlas)
    assert validate_gexf(text) == []
    assert sorted(s for s, t, _ in read_gexf(text)[1] if t == "n9") == ["n3", "n7"]


def test_generated_corpus_is_schema_valid():
    corpus = generate(small_spec(seed=2))
    text = export_gexf(corpus.truth)
    assert validate_gexf(text) == []
    assert "lastmodifieddate" not in text
    assert "viz:size" in text and "viz:color" in text


def test_size_and_colour():
    atlas = chain("a", "b", downloads=(9, 90))
    text = export_gexf(atlas)
    # subtree of "a" is 99 downloads, so its size is log10(100)
    assert 'value="2.0"' in text
    assert 'value="1.0"' in export_gexf(atlas, GexfStyle(size_by="downloads"))
    assert 'r="23" g="190" b="207"' in text  # the source colour
    assert PALETTE["FineTune"] == "#1f77b4"
    with pytest.raises(ValueError):
        GexfStyle(size_by="stars")


def test_schema_rejects_broken_documents():
    text = export_gexf(chain("a", "b"))
    assert validate_gexf(text.replace('defaultedgetype="directed"', 'defaultedgetype="sideways"'))
    assert validate_gexf(text.replace("<edges", "<links").replace("</edges>", "</links>"))


def test_attributes_are_exported():
    node = ModelNode("a", 1, attributes={"license": "mit"}, metrics={"score": 0.5}, known_parents=[])
    text = export_gexf(Atlas([node]))
    assert validate_gexf(text) == []
    assert 'for="attr:license" value="mit"' in text and 'for="metric:score" value="0.5"' in text


def test_dot_chain():
    text = export_dot(chain("a", "b", "c"))
    assert text.count("->") == 2 and 'kind="FineTune"' in text
    quoted = Atlas([ModelNode('we"ird', 1, quantized=True)])
    assert '"we\\"ird"' in export_dot(quoted) and "shape=box" in export_dot(quoted)


@given(st.integers(1, 30), st.integers(0, 10_000))
def test_json_round_trip(n, seed):
    atlas = random_dag(n, seed)
    again = Atlas.loads(export_json(atlas))
    assert again == atlas
    assert sorted(map(str, again.edges)) == sorted(map(str, atlas.edges))
    json.loads(export_json(atlas))
