"""Weight fingerprints: a fixed-size, seeded subsample of a model's weights."""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping

import numpy as np

from ..errors import MalformedRecord, SelectorTooNarrow
from . import safetensors as st
from .safetensors import DType, WeightContainer

DEFAULT_DIM = 100
UNIQUE_SAMPLE = 100_000
DEFAULT_UNIQUE_THRESHOLD = 0.05

# Named selector presets. Diffusion models are fingerprinted from attention
# layers only because those are the layers LoRA fine-tuning touches.
PRESETS = {"all": "*", "diffusion": "attn"}


def parse_selector(selector: str) -> tuple[str, ...]:
    selector = PRESETS.get(selector, selector)
    if selector.strip() in ("", "*"):
        return ()
    return tuple(sorted({p.strip() for p in selector.split(",") if p.strip()}))


def selected_names(container: WeightContainer, selector: str) -> list[str]:
    patterns = parse_selector(selector)
    return [n for n in container.names() if not patterns or any(p in n for p in patterns)]


@dataclass
class Fingerprint:
    id: str
    values: np.ndarray
    dtype_tag: DType = DType.F32
    unique_ratio: float = 1.0
    selector: str = "*"
    seed: int = 0

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        self.dtype_tag = DType(self.dtype_tag)
        if self.values.size < 1:
            raise ValueError(f"{self.id}: fingerprint must have at least one value")
        if not np.all(np.isfinite(self.values)):
            raise ValueError(f"{self.id}: fingerprint values must be finite")
        if not 0.0 <= self.unique_ratio <= 1.0:
            raise ValueError(f"{self.id}: unique_ratio must lie in [0, 1]")

    @property
    def dim(self) -> int:
        return int(self.values.size)

    @property
    def schema(self) -> tuple[int, str, int]:
        return (self.dim, self.selector, self.seed)

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "dim": self.dim,
            "values": [float(v) for v in self.values],
            "dtype_tag": self.dtype_tag.value,
            "unique_ratio": float(self.unique_ratio),
            "selector": self.selector,
            "seed": int(self.seed),
        }

    @classmethod
    def from_dict(cls, record: Mapping[str, Any]) -> "Fingerprint":
        values = record["values"]
        if "dim" in record and int(record["dim"]) != len(values):
            raise ValueError(f"{record['id']}: dim {record['dim']} but {len(values)} values")
        return cls(
            id=record["id"],
            values=np.array(values, dtype=np.float64),
            dtype_tag=DType(record.get("dtype_tag", "F32")),
            unique_ratio=float(record.get("unique_ratio", 1.0)),
            selector=record.get("selector", "*"),
            seed=int(record.get("seed", 0)),
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Fingerprint):
            return NotImplemented
        return (
            self.id == other.id
            and np.array_equal(self.values, other.values)
            and self.dtype_tag == other.dtype_tag
            and self.unique_ratio == other.unique_ratio
            and self.selector == other.selector
            and self.seed == other.seed
        )


def _gather(container: WeightContainer, names: list[str], flat_indices: np.ndarray) -> np.ndarray:
    """Read the values at sorted flat indices of the concatenation of ``names``."""
    sizes = np.array([container.tensors[n].size for n in names], dtype=np.int64)
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    owner = np.searchsorted(starts, flat_indices, side="right") - 1
    out = np.empty(flat_indices.size, dtype=np.float64)
    for t in np.unique(owner):
        sel = owner == t
        values = container.tensors[names[t]].values()
        out[sel] = values[flat_indices[sel] - starts[t]]
    return out


def _dominant_dtype(container: WeightContainer, names: list[str]) -> DType:
    weight: dict[DType, int] = {}
    for n in names:
        tag = container.tensors[n].dtype_tag
        weight[tag] = weight.get(tag, 0) + container.tensors[n].size
    return max(weight, key=lambda tag: (weight[tag], tag.value))


def unique_ratio(container: WeightContainer, names: list[str], seed: int = 0) -> float:
    total = sum(container.tensors[n].size for n in names)
    if total == 0:
        return 0.0
    m = min(UNIQUE_SAMPLE, total)
    rng = np.random.default_rng([seed, 1])
    idx = np.sort(rng.choice(total, size=m, replace=False))
    return float(np.unique(_gather(container, names, idx)).size / m)


def extract_fingerprint(container: WeightContainer, model_id: str, selector: str = "*",
                        dim: int = DEFAULT_DIM, seed: int = 0) -> Fingerprint:
    """Subsample ``dim`` weights from the tensors matched by ``selector``.

    Tensors are concatenated in name order; a seeded draw without replacement
    picks the flat indices, which are read in increasing order.
    """
    if dim < 1:
        raise ValueError("dim must be at least 1")
    names = selected_names(container, selector)
    total = sum(container.tensors[n].size for n in names)
    if total < dim:
        raise SelectorTooNarrow(
            f"{model_id}: selector {selector!r} matches {total} weights, need {dim}"
        )
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(total, size=dim, replace=False))
    values = _gather(container, names, idx)
    patterns = parse_selector(selector)
    return Fingerprint(
        id=model_id,
        values=values,
        dtype_tag=_dominant_dtype(container, names),
        unique_ratio=unique_ratio(container, names, seed),
        selector=f"{','.join(patterns) or '*'};n={total}",
        seed=seed,
    )


@dataclass(frozen=True)
class QuantizationVerdict:
    quantized: bool
    reason: str | None  # "LowPrecisionDtype", "LowUniqueRatio" or None

    def __iter__(self):
        return iter((self.quantized, self.reason))


def detect_quantization(source: WeightContainer | Fingerprint,
                        threshold: float = DEFAULT_UNIQUE_THRESHOLD) -> QuantizationVerdict:
    """Flag integer dtypes, or too few distinct weight values, as quantized.

    Half-precision floats alone are not treated as quantized.
    """
    if isinstance(source, WeightContainer):
        names = source.names()
        dtype = _dominant_dtype(source, names) if names else DType.OTHER
        ratio = unique_ratio(source, names)
    else:
        dtype, ratio = source.dtype_tag, source.unique_ratio
    if dtype in (DType.I8, DType.I4):
        return QuantizationVerdict(True, "LowPrecisionDtype")
    if ratio < threshold:
        return QuantizationVerdict(True, "LowUniqueRatio")
    return QuantizationVerdict(False, None)


def round_to_levels(values: np.ndarray, levels: int = 256, offset: float = 0.0) -> np.ndarray:
    """Uniformly quantize ``values`` onto ``levels`` points spanning their range.

    ``offset`` (in units of one grid step, within [0, 1)) shifts the grid the
    way a different zero-point would.
    """
    values = np.asarray(values, dtype=np.float64)
    lo, hi = float(values.min()), float(values.max())
    if hi == lo or levels < 2:
        return values.copy()
    step = (hi - lo) / (levels - 1)
    codes = np.clip(np.round((values - lo) / step - offset), 0, levels - 1)
    return lo + (codes + offset) * step


def quantize_container(container: WeightContainer, bits: int) -> WeightContainer:
    """Round every tensor to ``2**bits`` levels, keeping its float storage dtype."""
    arrays, dtypes = {}, {}
    for name, tensor in container.tensors.items():
        arrays[name] = round_to_levels(tensor.values(), 2**bits).reshape(tensor.shape)
        dtypes[name] = tensor.dtype
    return WeightContainer.from_arrays(arrays, dtypes)


def fingerprint_files(paths: Mapping[str, str | Path], selector: str = "*", dim: int = DEFAULT_DIM,
                      seed: int = 0, workers: int = 1) -> list[Fingerprint]:
    """Fingerprint one safetensors file per model id; results sorted by id."""

    def one(item: tuple[str, str | Path]) -> Fingerprint:
        model_id, path = item
        return extract_fingerprint(st.read(path), model_id, selector, dim, seed)

    items = sorted(paths.items())
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, items))
    return [one(item) for item in items]


def write_fingerprints(fingerprints: Iterable[Fingerprint], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for fp in fingerprints:
            fh.write(json.dumps(fp.to_dict()) + "\n")


def read_fingerprints(path: str | Path) -> list[Fingerprint]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(Fingerprint.from_dict(json.loads(line)))
            except (KeyError, ValueError, TypeError) as exc:
                raise MalformedRecord(f"bad fingerprint record: {exc}", line=lineno) from exc
    return out


def normalized(values: np.ndarray) -> np.ndarray:
    norm = math.sqrt(float(np.dot(values, values)))
    return values / norm if norm > 0 else values.copy()
