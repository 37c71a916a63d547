"""Minimal reader/writer for the safetensors weight-container format.

Layout: an 8-byte little-endian header length, a UTF-8 JSON header mapping
tensor names to ``{"dtype", "shape", "data_offsets"}``, then the raw buffer.
Unlike ``safetensors.numpy`` this reader decodes bfloat16 and 4-bit tensors
and keeps tensors of unknown dtype (tagged ``Other``) instead of failing.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping

import numpy as np

from ..errors import MalformedContainer


class DType(str, Enum):
    F32 = "F32"
    F16 = "F16"
    BF16 = "BF16"
    I8 = "I8"
    I4 = "I4"
    OTHER = "Other"

    def __str__(self) -> str:
        return self.value


# safetensors dtype string -> (numpy dtype or None for special decoding, tag)
_DTYPES: dict[str, tuple[np.dtype | None, DType]] = {
    "F32": (np.dtype("<f4"), DType.F32),
    "F16": (np.dtype("<f2"), DType.F16),
    "BF16": (None, DType.BF16),
    "I8": (np.dtype("i1"), DType.I8),
    "I4": (None, DType.I4),
    "F64": (np.dtype("<f8"), DType.OTHER),
    "I16": (np.dtype("<i2"), DType.OTHER),
    "I32": (np.dtype("<i4"), DType.OTHER),
    "I64": (np.dtype("<i8"), DType.OTHER),
    "U8": (np.dtype("u1"), DType.OTHER),
    "U16": (np.dtype("<u2"), DType.OTHER),
    "U32": (np.dtype("<u4"), DType.OTHER),
    "U64": (np.dtype("<u8"), DType.OTHER),
    "BOOL": (np.dtype("?"), DType.OTHER),
}
_ITEM_BITS = {"BF16": 16, "I4": 4}
_MAX_HEADER = 100 * 1024 * 1024


def _item_bits(dtype: str) -> int | None:
    if dtype in _ITEM_BITS:
        return _ITEM_BITS[dtype]
    np_dtype = _DTYPES.get(dtype, (None, None))[0]
    return None if np_dtype is None else np_dtype.itemsize * 8


@dataclass
class Tensor:
    name: str
    dtype: str
    shape: tuple[int, ...]
    raw: bytes = field(repr=False)

    @property
    def dtype_tag(self) -> DType:
        return _DTYPES.get(self.dtype, (None, DType.OTHER))[1]

    @property
    def size(self) -> int:
        return math.prod(self.shape)

    def values(self) -> np.ndarray:
        """Flat float64 view of the tensor values."""
        if self.dtype == "BF16":
            bits = np.frombuffer(self.raw, dtype="<u2").astype(np.uint32) << 16
            return bits.view(np.float32).astype(np.float64)
        if self.dtype == "I4":
            packed = np.frombuffer(self.raw, dtype=np.uint8)
            nibbles = np.empty(packed.size * 2, dtype=np.int8)
            nibbles[0::2] = packed & 0x0F
            nibbles[1::2] = packed >> 4
            nibbles[nibbles > 7] -= 16
            return nibbles[: self.size].astype(np.float64)
        np_dtype = _DTYPES.get(self.dtype, (None, None))[0]
        if np_dtype is None:
            raise MalformedContainer(f"tensor {self.name!r}: cannot decode dtype {self.dtype!r}")
        return np.frombuffer(self.raw, dtype=np_dtype).astype(np.float64)


@dataclass
class WeightContainer:
    tensors: dict[str, Tensor]
    metadata: dict[str, str] = field(default_factory=dict)

    def names(self) -> list[str]:
        return sorted(self.tensors)

    @property
    def size(self) -> int:
        return sum(t.size for t in self.tensors.values())

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray], dtypes: Mapping[str, str] | None = None) -> "WeightContainer":
        """Build a container from numpy arrays; ``dtypes`` overrides the stored dtype per name."""
        tensors = {}
        for name, array in arrays.items():
            dtype = (dtypes or {}).get(name) or _dtype_for(array)
            tensors[name] = Tensor(name, dtype, tuple(int(s) for s in array.shape), encode(array, dtype))
        return cls(tensors)


def _dtype_for(array: np.ndarray) -> str:
    for name, (np_dtype, _) in _DTYPES.items():
        if np_dtype is not None and array.dtype == np_dtype.newbyteorder("=") and name != "BOOL":
            return name
    if array.dtype == np.bool_:
        return "BOOL"
    raise MalformedContainer(f"no safetensors dtype for numpy dtype {array.dtype}")


def encode(array: np.ndarray, dtype: str) -> bytes:
    """Encode values as raw little-endian bytes of safetensors ``dtype``."""
    flat = np.asarray(array).reshape(-1)
    if dtype == "BF16":
        as_f32 = flat.astype(np.float32)
        bits = as_f32.view(np.uint32)
        # round to nearest even on the dropped 16 bits
        rounded = (bits + 0x7FFF + ((bits >> 16) & 1)) >> 16
        return rounded.astype("<u2").tobytes()
    if dtype == "I4":
        vals = flat.astype(np.int8)
        if vals.size and (vals.min() < -8 or vals.max() > 7):
            raise MalformedContainer("I4 values must lie in [-8, 7]")
        nib = (vals & 0x0F).astype(np.uint8)
        if nib.size % 2:
            nib = np.append(nib, np.uint8(0))
        return (nib[0::2] | (nib[1::2] << 4)).tobytes()
    np_dtype = _DTYPES.get(dtype, (None, None))[0]
    if np_dtype is None:
        raise MalformedContainer(f"cannot encode dtype {dtype!r}")
    return flat.astype(np_dtype).tobytes()


def _no_duplicate_keys(pairs: list[tuple[str, object]]) -> dict:
    out: dict = {}
    for key, value in pairs:
        if key in out:
            raise MalformedContainer(f"duplicate tensor name {key!r} in header")
        out[key] = value
    return out


def loads(data: bytes) -> WeightContainer:
    if len(data) < 8:
        raise MalformedContainer("file shorter than the 8-byte header length")
    (header_len,) = struct.unpack("<Q", data[:8])
    if header_len > _MAX_HEADER or 8 + header_len > len(data):
        raise MalformedContainer(f"header length {header_len} exceeds file size")
    try:
        header = json.loads(data[8 : 8 + header_len].decode("utf-8"), object_pairs_hook=_no_duplicate_keys)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedContainer(f"unreadable header: {exc}") from exc
    if not isinstance(header, dict):
        raise MalformedContainer("header must be a JSON object")
    buffer = data[8 + header_len :]
    metadata = header.pop("__metadata__", None) or {}
    tensors: dict[str, Tensor] = {}
    for name, info in header.items():
        try:
            dtype = str(info["dtype"])
            shape = tuple(int(s) for s in info["shape"])
            start, end = (int(o) for o in info["data_offsets"])
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedContainer(f"tensor {name!r}: bad header entry") from exc
        if any(s < 0 for s in shape) or not 0 <= start <= end <= len(buffer):
            raise MalformedContainer(f"tensor {name!r}: offsets {start}..{end} out of range")
        bits = _item_bits(dtype)
        if bits is not None and (end - start) != -(-math.prod(shape) * bits // 8):
            raise MalformedContainer(f"tensor {name!r}: {end - start} bytes do not match shape {shape} of {dtype}")
        tensors[name] = Tensor(name, dtype, shape, bytes(buffer[start:end]))
    return WeightContainer(tensors, dict(metadata))


def dumps(container: WeightContainer) -> bytes:
    header: dict[str, object] = {}
    if container.metadata:
        header["__metadata__"] = dict(container.metadata)
    offset = 0
    chunks = []
    for name in container.names():
        tensor = container.tensors[name]
        header[name] = {
            "dtype": tensor.dtype,
            "shape": list(tensor.shape),
            "data_offsets": [offset, offset + len(tensor.raw)],
        }
        chunks.append(tensor.raw)
        offset += len(tensor.raw)
    blob = json.dumps(header, separators=(",", ":")).encode("utf-8")
    blob += b" " * (-len(blob) % 8)
    return struct.pack("<Q", len(blob)) + blob + b"".join(chunks)


def read(path: str | Path) -> WeightContainer:
    return loads(Path(path).read_bytes())


def write(container: WeightContainer, path: str | Path) -> None:
    Path(path).write_bytes(dumps(container))

