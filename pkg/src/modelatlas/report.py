"""Atlas summary statistics and report rendering (json, csv, table)."""

from __future__ import annotations

import csv
import io
import json
from typing import Any, Mapping, Sequence

from .core import Atlas

FORMATS = ("json", "csv", "table")


def atlas_stats(atlas: Atlas) -> dict[str, Any]:
    """Counts, depth histogram, hub coverage, quantized-leaf and temporal fractions.

    Fractions with an empty denominator (no quantized models, no edges) are ``None``.
    """
    hubs = atlas.hubs()
    return {
        "nodes": len(atlas),
        "edges": len(atlas.edges),
        "sources": len(atlas.sources()),
        "components": len(atlas.weakly_connected_components()),
        "depth_histogram": {str(k): v for k, v in atlas.depth_histogram().items()},
        "hubs": len(hubs),
        "hub_coverage": atlas.hub_coverage(),
        "quantized_leaf_fraction": atlas.quantized_leaf_fraction(),
        "temporal_consistency": atlas.temporal_consistency(),
    }


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (dict, list, tuple)):
        return json.dumps(value, sort_keys=True)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def render(report: Mapping[str, Any] | Sequence[Mapping[str, Any]], fmt: str = "json") -> str:
    """Render one record or a list of records; output is deterministic."""
    if fmt not in FORMATS:
        raise ValueError(f"unknown report format {fmt!r}")
    if fmt == "json":
        return json.dumps(report, indent=2, sort_keys=True) + "\n"
    rows = [dict(report)] if isinstance(report, Mapping) else [dict(r) for r in report]
    columns: list[str] = []
    for row in rows:
        columns += [c for c in row if c not in columns]
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(row.get(c)) for c in columns])
        return buf.getvalue()
    cells = [[_cell(row.get(c)) for c in columns] for row in rows]
    widths = [max(len(c), *(len(r[i]) for r in cells)) for i, c in enumerate(columns)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip() for r in cells]
    return "\n".join(lines) + "\n"
