"""Pairwise squared-Euclidean distances between fingerprints.

Accumulation runs over fingerprint coordinates in index order, one
coordinate at a time, so every entry is bitwise identical to the naive loop
``s += (a[k] - b[k]) ** 2`` regardless of block size or machine threads.
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import MixedFingerprintSchema, UnknownId
from .ingest.fingerprint import Fingerprint, normalized

MAGIC = b"MATL1"
DENSE_LIMIT = 20_000
# tile edge; an accumulator and a scratch tile (2 * 192^2 doubles) stay in L2
TILE = 192


@dataclass
class DistanceMatrix:
    """Symmetric distance matrix over ids ordered by ``(created_at, id)``.

    The diagonal holds ``+inf``. ``mask`` lists ids that must never be
    returned as neighbours; it is the only part meant to change after
    construction.
    """

    ids: list[str]
    values: np.ndarray
    created_at: np.ndarray
    normalized: bool = False
    mask: set[str] = field(default_factory=set)

    def __post_init__(self) -> None:
        self._index = {m: i for i, m in enumerate(self.ids)}
        if len(self._index) != len(self.ids):
            raise ValueError("duplicate ids in distance matrix")

    def __len__(self) -> int:
        return len(self.ids)

    def index(self, model_id: str) -> int:
        try:
            return self._index[model_id]
        except KeyError:
            raise UnknownId(f"{model_id!r} not in distance matrix") from None

    def __contains__(self, model_id: object) -> bool:
        return model_id in self._index

    def distance(self, a: str, b: str) -> float:
        return float(self.values[self.index(a), self.index(b)])

    def masked_array(self) -> np.ndarray:
        out = np.zeros(len(self.ids), dtype=bool)
        for m in self.mask:
            if m in self._index:
                out[self._index[m]] = True
        return out

    def subset(self, ids: Iterable[str]) -> "DistanceMatrix":
        """Restriction to ``ids``, keeping the matrix order."""
        idx = np.array(sorted(self.index(m) for m in set(ids)), dtype=np.int64)
        keep = [self.ids[i] for i in idx]
        return DistanceMatrix(
            ids=keep,
            values=np.ascontiguousarray(self.values[np.ix_(idx, idx)]),
            created_at=self.created_at[idx].copy(),
            normalized=self.normalized,
            mask={m for m in self.mask if m in set(keep)},
        )

    def as_dict(self) -> dict[tuple[str, str], float]:
        return {
            (a, b): float(self.values[i, j])
            for i, a in enumerate(self.ids)
            for j, b in enumerate(self.ids)
        }


def check_schema(fingerprints: Sequence[Fingerprint]) -> None:
    schemas = {fp.schema for fp in fingerprints}
    if len(schemas) > 1:
        raise MixedFingerprintSchema(
            "fingerprints differ in (dim, selector, seed): " + ", ".join(map(str, sorted(schemas)))
        )


def _order(fingerprints: Sequence[Fingerprint], created_at: Mapping[str, int] | None) -> list[int]:
    if created_at is None:
        return sorted(range(len(fingerprints)), key=lambda i: (0, fingerprints[i].id))
    return sorted(range(len(fingerprints)), key=lambda i: (created_at[fingerprints[i].id], fingerprints[i].id))


def _allocate(n: int, dense_limit: int) -> np.ndarray:
    if n <= dense_limit:
        return np.empty((n, n), dtype=np.float64)
    cache_dir = os.environ.get("ATLAS_CACHE_DIR") or tempfile.gettempdir()
    Path(cache_dir).mkdir(parents=True, exist_ok=True)
    handle = tempfile.NamedTemporaryFile(dir=cache_dir, prefix="distances-", suffix=".f64", delete=False)
    handle.close()
    return np.memmap(handle.name, dtype=np.float64, mode="w+", shape=(n, n))


def pairwise_sq_distances(weights: np.ndarray, out: np.ndarray | None = None,
                          tile: int = TILE) -> np.ndarray:
    """Tiled squared distances with per-coordinate sequential accumulation.

    Only tiles on or above the diagonal are computed; ``(a - b)**2`` and
    ``(b - a)**2`` are bitwise equal, so the mirror image is exact.
    """
    if tile < 1:
        raise ValueError("tile must be positive")
    n, dim = weights.shape
    cols = np.ascontiguousarray(weights.T)
    if out is None:
        out = np.empty((n, n), dtype=np.float64)
    for r0 in range(0, n, tile):
        r1 = min(r0 + tile, n)
        for c0 in range(r0, n, tile):
            c1 = min(c0 + tile, n)
            acc = np.zeros((r1 - r0, c1 - c0), dtype=np.float64)
            tmp = np.empty_like(acc)
            for k in range(dim):
                np.subtract(cols[k, r0:r1, None], cols[k, None, c0:c1], out=tmp)
                np.multiply(tmp, tmp, out=tmp)
                acc += tmp
            out[r0:r1, c0:c1] = acc
            if c0 != r0:
                out[c0:c1, r0:r1] = acc.T
    np.fill_diagonal(out, np.inf)
    return out


def compute_distance_matrix(fingerprints: Sequence[Fingerprint],
                            created_at: Mapping[str, int] | None = None,
                            normalize: bool = False,
                            dense_limit: int = DENSE_LIMIT) -> DistanceMatrix:
    """Squared Euclidean distance matrix; optionally on unit-norm fingerprints.

    Rows are ordered by ``(created_at, id)`` when timestamps are given, else by
    id. Above ``dense_limit`` rows the matrix lives in a memory-mapped file
    under ``$ATLAS_CACHE_DIR`` with the same interface.
    """
    check_schema(fingerprints)
    order = _order(fingerprints, created_at)
    ordered = [fingerprints[i] for i in order]
    ids = [fp.id for fp in ordered]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate fingerprint ids")
    if not ordered:
        return DistanceMatrix([], np.zeros((0, 0)), np.zeros(0, dtype=np.int64), normalize)
    weights = np.stack([normalized(fp.values) if normalize else fp.values for fp in ordered])
    values = pairwise_sq_distances(weights, out=_allocate(len(ids), dense_limit))
    times = np.array([created_at[m] if created_at else 0 for m in ids], dtype=np.int64)
    return DistanceMatrix(ids, values, times, normalize)


def _select(row: np.ndarray, candidates: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` smallest ``row[candidates]``; ties by index."""
    if candidates.size == 0:
        return candidates
    dists = row[candidates]
    if candidates.size > 4 * k:
        part = np.argpartition(dists, k - 1)[:k]
        cutoff = dists[part].max()
        keep = dists <= cutoff
        candidates, dists = candidates[keep], dists[keep]
    order = np.lexsort((candidates, dists))
    return candidates[order[:k]]


def knn_indices(matrix: DistanceMatrix, i: int, k: int, allowed: np.ndarray) -> np.ndarray:
    """Like :func:`knn` on matrix positions; ``allowed`` is a boolean candidate mask."""
    allowed = allowed.copy()
    allowed[i] = False
    return _select(matrix.values[i], np.flatnonzero(allowed), k)


def knn(matrix: DistanceMatrix, model_id: str, k: int,
        candidates: Iterable[str] | None = None, earlier_only: bool = False) -> list[tuple[str, float]]:
    """The ``k`` nearest unmasked neighbours of ``model_id``, nearest first.

    ``candidates`` restricts the pool; ``earlier_only`` keeps only models
    that precede the query in ``(created_at, id)`` order. Ties are broken by
    that same order.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    i = matrix.index(model_id)
    allowed = ~matrix.masked_array()
    if candidates is not None:
        pool = np.zeros(len(matrix), dtype=bool)
        for c in candidates:
            pool[matrix.index(c)] = True
        allowed &= pool
    if earlier_only:
        allowed[i:] = False
    return [(matrix.ids[j], float(matrix.values[i, j])) for j in knn_indices(matrix, i, k, allowed)]


@dataclass(frozen=True)
class DuplicateGroup:
    representative: str
    members: tuple[str, ...]  # including the representative, in matrix order


def find_exact_duplicates(matrix: DistanceMatrix, epsilon: float = 0.0) -> list[DuplicateGroup]:
    """Connected groups of models at distance ``<= epsilon`` (exact zero by default).

    The representative of each group is its earliest member.
    """
    n = len(matrix)
    parent = list(range(n))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for start in range(0, n, 1024):
        block = matrix.values[start : start + 1024]
        rows, cols = np.nonzero(block <= epsilon)
        for r, c in zip(rows + start, cols):
            if r < c:
                ra, rb = find(r), find(c)
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)
    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    return [
        DuplicateGroup(matrix.ids[root], tuple(matrix.ids[i] for i in members))
        for root, members in sorted(groups.items())
        if len(members) > 1
    ]


def save_matrix(matrix: DistanceMatrix, path: str | Path) -> None:
    """Binary cache: magic, n, id table, then the strict upper triangle as float64."""
    n = len(matrix)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", n))
        for model_id, t in zip(matrix.ids, matrix.created_at):
            raw = model_id.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<q", int(t)))
        fh.write(struct.pack("<?", matrix.normalized))
        for i in range(n - 1):
            fh.write(np.ascontiguousarray(matrix.values[i, i + 1 :], dtype="<f8").tobytes())


def load_matrix(path: str | Path) -> DistanceMatrix:
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise ValueError(f"{path}: not a distance-matrix cache")
    pos = len(MAGIC)
    (n,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    ids, times = [], []
    for _ in range(n):
        (length,) = struct.unpack_from("<I", data, pos)
        pos += 4
        ids.append(data[pos : pos + length].decode("utf-8"))
        pos += length
        times.append(struct.unpack_from("<q", data, pos)[0])
        pos += 8
    (is_normalized,) = struct.unpack_from("<?", data, pos)
    pos += 1
    tri = np.frombuffer(data, dtype="<f8", count=n * (n - 1) // 2, offset=pos)
    values = np.empty((n, n), dtype=np.float64)
    iu = np.triu_indices(n, 1)
    values[iu] = tri
    values[(iu[1], iu[0])] = tri
    np.fill_diagonal(values, np.inf)
    return DistanceMatrix(ids, values, np.array(times, dtype=np.int64), bool(is_normalized))
