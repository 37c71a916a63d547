"""Metadata dumps (JSON lines or hub-stats style CSV) to ModelNode lists."""

from __future__ import annotations

import csv
import io
import json
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable, Mapping, TextIO

from ..core import ATTRIBUTE_KEYS, ModelNode, is_attribute_key
from ..errors import InvalidNode, MalformedRecord

FIELDS = ("id", "created_at", "downloads", "quantized", "placeholder", "known_parents", "attributes", "metrics")


def parse_timestamp(value: Any) -> int:
    """Integer epoch seconds from an int, a numeric string or an ISO-8601 string."""
    if isinstance(value, bool):
        raise ValueError("boolean is not a timestamp")
    if isinstance(value, int):
        return value
    if isinstance(value, float) and value.is_integer():
        return int(value)
    if isinstance(value, str):
        text = value.strip()
        if text.lstrip("-").isdigit():
            return int(text)
        parsed = datetime.fromisoformat(text.replace("Z", "+00:00"))
        if parsed.tzinfo is None:
            parsed = parsed.replace(tzinfo=timezone.utc)
        return int(parsed.timestamp())
    raise ValueError(f"cannot interpret {value!r} as a timestamp")


def _as_bool(value: Any) -> bool:
    if isinstance(value, bool):
        return value
    if isinstance(value, str):
        lowered = value.strip().lower()
        if lowered in ("true", "1", "yes"):
            return True
        if lowered in ("false", "0", "no", ""):
            return False
    if isinstance(value, int):
        return bool(value)
    raise ValueError(f"cannot interpret {value!r} as a boolean")


def record_to_node(record: Mapping[str, Any]) -> ModelNode:
    """Map one metadata record to a node; raises ValueError/InvalidNode on bad input.

    Attribute keys given at the top level (as hub-stats exports do) are folded
    into ``attributes``; other unknown top-level keys are ignored.
    """
    if not isinstance(record, Mapping):
        raise ValueError("record is not an object")
    model_id = record.get("id")
    if not isinstance(model_id, str) or not model_id:
        raise ValueError("missing id")
    if record.get("created_at") is None:
        raise ValueError("missing created_at")
    attributes = dict(record.get("attributes") or {})
    for key, value in record.items():
        if key not in FIELDS and is_attribute_key(key):
            attributes.setdefault(key, value)
    parents = record.get("known_parents")
    if parents is not None and not isinstance(parents, list):
        raise ValueError("known_parents must be a list")
    downloads = record.get("downloads")
    metrics = {}
    for name, value in (record.get("metrics") or {}).items():
        metrics[name] = None if value is None else float(value)
    return ModelNode(
        id=model_id,
        created_at=parse_timestamp(record["created_at"]),
        downloads=0 if downloads is None else int(downloads),
        quantized=_as_bool(record.get("quantized", False)),
        placeholder=_as_bool(record.get("placeholder", False)),
        known_parents=None if parents is None else [str(p) for p in parents],
        attributes=attributes,
        metrics=metrics,
    )


def _collect(records: Iterable[tuple[int, Any]]) -> tuple[list[ModelNode], list[MalformedRecord]]:
    nodes: list[ModelNode] = []
    errors: list[MalformedRecord] = []
    seen: set[str] = set()
    for line, record in records:
        if isinstance(record, MalformedRecord):
            errors.append(record)
            continue
        model_id = record.get("id") if isinstance(record, Mapping) else None
        try:
            node = record_to_node(record)
        except (ValueError, TypeError, InvalidNode) as exc:
            errors.append(MalformedRecord(str(exc), line=line, model_id=model_id if isinstance(model_id, str) else None))
            continue
        if node.id in seen:
            errors.append(MalformedRecord("duplicate id", line=line, model_id=node.id))
            continue
        seen.add(node.id)
        nodes.append(node)
    return nodes, errors


def _jsonl_records(fh: TextIO) -> Iterable[tuple[int, Any]]:
    for lineno, line in enumerate(fh, 1):
        if not line.strip():
            continue
        try:
            yield lineno, json.loads(line)
        except json.JSONDecodeError as exc:
            yield lineno, MalformedRecord(f"invalid JSON: {exc.msg}", line=lineno)


def load_metadata(source: str | Path | TextIO) -> tuple[list[ModelNode], list[MalformedRecord]]:
    """Parse a JSON-lines dump.

    Bad records do not abort the load: they are returned as the second element
    with their line numbers.
    """
    if isinstance(source, (str, Path)):
        with open(source, encoding="utf-8") as fh:
            return _collect(list(_jsonl_records(fh)))
    return _collect(list(_jsonl_records(source)))


def loads_metadata(text: str) -> tuple[list[ModelNode], list[MalformedRecord]]:
    return load_metadata(io.StringIO(text))


def _csv_cell(column: str, cell: str) -> Any:
    if cell == "":
        return None
    if column in ("attributes", "metrics"):
        return json.loads(cell)
    if column == "known_parents":
        if cell.lstrip().startswith("["):
            return json.loads(cell)
        return [p.strip() for p in cell.split(";") if p.strip()]
    return cell


def _csv_records(fh: TextIO) -> Iterable[tuple[int, Any]]:
    reader = csv.DictReader(fh)
    for row in reader:
        line = reader.line_num
        try:
            record = {k: _csv_cell(k, v or "") for k, v in row.items() if k is not None}
        except json.JSONDecodeError as exc:
            yield line, MalformedRecord(f"invalid JSON cell: {exc.msg}", line=line, model_id=row.get("id"))
            continue
        record = {k: v for k, v in record.items() if v is not None or k in ATTRIBUTE_KEYS}
        yield line, record


def load_metadata_csv(source: str | Path | TextIO) -> tuple[list[ModelNode], list[MalformedRecord]]:
    """CSV reader using the JSONL field names as headers; line numbers count the header."""
    if isinstance(source, (str, Path)):
        with open(source, encoding="utf-8", newline="") as fh:
            return _collect(list(_csv_records(fh)))
    return _collect(list(_csv_records(source)))


def dumps_metadata(nodes: Iterable[ModelNode]) -> str:
    return "".join(json.dumps(node.to_dict()) + "\n" for node in nodes)


def save_metadata(nodes: Iterable[ModelNode], path: str | Path) -> None:
    Path(path).write_text(dumps_metadata(nodes), encoding="utf-8")
