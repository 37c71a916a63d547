from .fetch import fetch_metadata
from .fingerprint import (
    Fingerprint,
    QuantizationVerdict,
    detect_quantization,
    extract_fingerprint,
    fingerprint_files,
    quantize_container,
    read_fingerprints,
    round_to_levels,
    write_fingerprints,
)
from .metadata import dumps_metadata, load_metadata, load_metadata_csv, loads_metadata, save_metadata
from .safetensors import DType, Tensor, WeightContainer

__all__ = [
    "DType",
    "Fingerprint",
    "QuantizationVerdict",
    "Tensor",
    "WeightContainer",
    "detect_quantization",
    "dumps_metadata",
    "extract_fingerprint",
    "fetch_metadata",
    "fingerprint_files",
    "load_metadata",
    "load_metadata_csv",
    "loads_metadata",
    "quantize_container",
    "read_fingerprints",
    "round_to_levels",
    "save_metadata",
    "write_fingerprints",
]
