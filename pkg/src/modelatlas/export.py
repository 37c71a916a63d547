"""Atlas serialization for graph tools: GEXF 1.3, Graphviz DOT and JSON."""

from __future__ import annotations

import json
import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from importlib import resources
from typing import Mapping

from .core import Atlas, EdgeKind

GEXF_NS = "http://gexf.net/1.3"
VIZ_NS = "http://gexf.net/1.3/viz"
SOURCE_KEY = "Source"

# colour of a node by the kind of its incoming edge(s)
PALETTE: dict[str, str] = {
    EdgeKind.FINE_TUNE.value: "#1f77b4",
    EdgeKind.ADAPTER.value: "#ff7f0e",
    EdgeKind.QUANTIZATION.value: "#2ca02c",
    EdgeKind.MERGE.value: "#d62728",
    EdgeKind.DUPLICATE.value: "#9467bd",
    EdgeKind.UNKNOWN.value: "#7f7f7f",
    SOURCE_KEY: "#17becf",
}


@dataclass(frozen=True)
class GexfStyle:
    size_by: str = "subtree_downloads"  # or "downloads"
    palette: Mapping[str, str] = field(default_factory=lambda: dict(PALETTE))

    def __post_init__(self) -> None:
        if self.size_by not in ("subtree_downloads", "downloads"):
            raise ValueError(f"unknown size source {self.size_by!r}")


def _rgb(hex_color: str) -> tuple[int, int, int]:
    text = hex_color.lstrip("#")
    return int(text[0:2], 16), int(text[2:4], 16), int(text[4:6], 16)


def _node_kind(atlas: Atlas, model_id: str) -> str:
    edges = atlas.in_edges(model_id)
    if not edges:
        return SOURCE_KEY
    kinds = {e.kind for e in edges}
    return EdgeKind.MERGE.value if len(edges) > 1 else kinds.pop().value


def _fmt(value: float) -> str:
    return repr(float(value))


def export_gexf(atlas: Atlas, style: GexfStyle | None = None) -> str:
    """GEXF 1.3 document with node/edge attributes and viz size and colour."""
    style = style or GexfStyle()
    ET.register_namespace("", GEXF_NS)
    ET.register_namespace("viz", VIZ_NS)
    g = f"{{{GEXF_NS}}}"
    v = f"{{{VIZ_NS}}}"
    root = ET.Element(f"{g}gexf", {"version": "1.3"})
    meta = ET.SubElement(root, f"{g}meta")
    ET.SubElement(meta, f"{g}creator").text = "modelatlas"
    ET.SubElement(meta, f"{g}description").text = "model lineage atlas"
    graph = ET.SubElement(root, f"{g}graph", {"defaultedgetype": "directed", "mode": "static", "idtype": "string"})

    nodes = atlas.sorted_nodes()
    attribute_keys = sorted({k for n in nodes for k in n.attributes})
    metric_names = sorted({k for n in nodes for k in n.metrics})
    columns: list[tuple[str, str, str]] = [
        ("created_at", "created_at", "long"),
        ("downloads", "downloads", "long"),
        ("subtree_downloads", "subtree_downloads", "long"),
        ("quantized", "quantized", "boolean"),
        ("placeholder", "placeholder", "boolean"),
        ("known_parents", "known_parents", "string"),
        ("kind", "incoming_kind", "string"),
    ]
    columns += [(f"attr:{k}", k, "string") for k in attribute_keys]
    columns += [(f"metric:{k}", k, "double") for k in metric_names]
    node_attrs = ET.SubElement(graph, f"{g}attributes", {"class": "node", "mode": "static"})
    for col_id, title, kind in columns:
        ET.SubElement(node_attrs, f"{g}attribute", {"id": col_id, "title": title, "type": kind})
    edge_attrs = ET.SubElement(graph, f"{g}attributes", {"class": "edge", "mode": "static"})
    ET.SubElement(edge_attrs, f"{g}attribute", {"id": "kind", "title": "kind", "type": "string"})

    xml_nodes = ET.SubElement(graph, f"{g}nodes", {"count": str(len(nodes))})
    for node in nodes:
        el = ET.SubElement(xml_nodes, f"{g}node", {"id": node.id, "label": node.id})
        subtree = atlas.subtree_downloads(node.id)
        kind = _node_kind(atlas, node.id)
        values: list[tuple[str, str]] = [
            ("created_at", str(node.created_at)),
            ("downloads", str(node.downloads)),
            ("subtree_downloads", str(subtree)),
            ("quantized", "true" if node.quantized else "false"),
            ("placeholder", "true" if node.placeholder else "false"),
        ]
        if node.known_parents is not None:
            values.append(("known_parents", json.dumps(list(node.known_parents))))
        values.append(("kind", kind))
        values += [(f"attr:{k}", val) for k, val in sorted(node.attributes.items()) if val is not None]
        values += [(f"metric:{k}", _fmt(val)) for k, val in sorted(node.metrics.items()) if val is not None]
        attvalues = ET.SubElement(el, f"{g}attvalues")
        for key, value in values:
            ET.SubElement(attvalues, f"{g}attvalue", {"for": key, "value": value})
        size = math.log10(1 + (subtree if style.size_by == "subtree_downloads" else node.downloads))
        ET.SubElement(el, f"{v}size", {"value": _fmt(size)})
        r, gr, b = _rgb(style.palette.get(kind, PALETTE[EdgeKind.UNKNOWN.value]))
        ET.SubElement(el, f"{v}color", {"r": str(r), "g": str(gr), "b": str(b)})

    edges = atlas.edges
    xml_edges = ET.SubElement(graph, f"{g}edges", {"count": str(len(edges))})
    for i, edge in enumerate(edges):
        el = ET.SubElement(xml_edges, f"{g}edge", {
            "id": str(i), "source": edge.parent, "target": edge.child,
            "type": "directed", "label": edge.kind.value,
        })
        attvalues = ET.SubElement(el, f"{g}attvalues")
        ET.SubElement(attvalues, f"{g}attvalue", {"for": "kind", "value": edge.kind.value})
    ET.indent(root)
    return '<?xml version="1.0" encoding="UTF-8"?>\n' + ET.tostring(root, encoding="unicode") + "\n"


def read_gexf(text: str) -> tuple[list[str], list[tuple[str, str, str]]]:
    """Node ids and ``(source, target, kind)`` triples of a GEXF document."""
    root = ET.fromstring(text.encode("utf-8"))
    g = f"{{{GEXF_NS}}}"
    ids = [el.get("id") for el in root.iter(f"{g}node")]
    edges = []
    for el in root.iter(f"{g}edge"):
        kind = el.get("label") or EdgeKind.UNKNOWN.value
        edges.append((el.get("source"), el.get("target"), kind))
    return ids, edges  # type: ignore[return-value]


def gexf_schema():
    import xmlschema

    path = resources.files("modelatlas") / "schemas" / "gexf.xsd"
    with resources.as_file(path) as local:
        return xmlschema.XMLSchema(str(local))


def validate_gexf(text: str) -> list[str]:
    """Schema violations of a GEXF document; empty when valid."""
    schema = gexf_schema()
    return [str(err.reason or err) for err in schema.iter_errors(text)]


def _dot_quote(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n") + '"'


def export_dot(atlas: Atlas) -> str:
    lines = ["digraph atlas {", "  rankdir=TB;"]
    for node in atlas.sorted_nodes():
        extra = ", shape=box" if node.quantized else ""
        lines.append(f"  {_dot_quote(node.id)} [label={_dot_quote(node.id)}{extra}];")
    for edge in atlas.edges:
        lines.append(f"  {_dot_quote(edge.parent)} -> {_dot_quote(edge.child)} [kind={_dot_quote(edge.kind.value)}];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def export_json(atlas: Atlas) -> str:
    return atlas.dumps()
