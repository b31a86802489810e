"""Distance metrics, blocked distance-matrix computation, matrix persistence
(the competition submission artifact), and per-query ranking.
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

DIST_MAGIC = b"WRDIST1"

METRICS = ("manhattan", "euclidean", "chi_square")

DEFAULT_TILE = 256


class MatrixFormatError(ValueError):
    """Raised for bad magic, truncated payloads, or inconsistent headers."""


@dataclass
class DistanceMatrix:
    values: np.ndarray  # (n, n) float32, symmetric, zero diagonal
    image_ids: list

    @property
    def n(self) -> int:
        return self.values.shape[0]


def distance(a, b, metric: str) -> float:
    """Distance between two vectors under the named metric."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    if metric == "manhattan":
        return float(np.abs(a - b).sum())
    if metric == "euclidean":
        return float(np.sqrt(((a - b) ** 2).sum()))
    if metric == "chi_square":
        if (a < 0).any() or (b < 0).any():
            raise ValueError("chi_square requires non-negative inputs")
        s = a + b
        nz = s > 0
        return float((((a - b) ** 2)[nz] / s[nz]).sum())
    raise ValueError(f"unknown metric {metric!r}")


def _block(A: np.ndarray, B: np.ndarray, metric: str) -> np.ndarray:
    """All-pairs distances between row blocks, float64 accumulation."""
    if metric == "manhattan":
        return cdist(A, B, "cityblock")
    if metric == "euclidean":
        return cdist(A, B, "euclidean")
    if metric == "chi_square":
        out = np.empty((A.shape[0], B.shape[0]))
        for i, a in enumerate(A):
            s = a + B
            d = np.where(s > 0, (a - B) ** 2 / np.where(s > 0, s, 1.0), 0.0)
            out[i] = d.sum(axis=1)
        return out
    raise ValueError(f"unknown metric {metric!r}")


def compute_distance_matrix(
    embeddings: np.ndarray,
    metric: str = "manhattan",
    tile: int = DEFAULT_TILE,
    workers: int = 1,
    image_ids=None,
) -> DistanceMatrix:
    """Symmetric all-pairs distance matrix, computed tile by tile.

    Only upper-triangle tiles are computed; each is mirrored, so the result
    is exactly symmetric with an exactly zero diagonal. Peak working memory
    is bounded by the tile size plus the embedding set. Accumulation is
    float64; the stored matrix is float32.
    """
    X = np.ascontiguousarray(embeddings, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("embeddings must be a non-empty 2-D array")
    if metric == "chi_square" and (X < 0).any():
        raise ValueError("chi_square requires non-negative inputs")
    if tile < 1:
        raise ValueError("tile must be >= 1")
    n = X.shape[0]
    if image_ids is None:
        image_ids = [str(i) for i in range(n)]
    if len(image_ids) != n:
        raise ValueError("image_ids length must match embedding count")

    out = np.zeros((n, n), dtype=np.float32)
    starts = range(0, n, tile)
    jobs = [(i0, j0) for i0 in starts for j0 in starts if j0 >= i0]

    def run(job):
        i0, j0 = job
        i1, j1 = min(i0 + tile, n), min(j0 + tile, n)
        block = _block(X[i0:i1], X[j0:j1], metric).astype(np.float32)
        out[i0:i1, j0:j1] = block
        if j0 > i0:
            out[j0:j1, i0:i1] = block.T

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, jobs))
    else:
        for job in jobs:
            run(job)

    # Diagonal tiles were computed whole; enforce exact symmetry and zeros.
    for i0 in starts:
        i1 = min(i0 + tile, n)
        tri = np.triu(out[i0:i1, i0:i1], 1)
        out[i0:i1, i0:i1] = tri + tri.T
    return DistanceMatrix(out, list(image_ids))


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def write_matrix(mtx: DistanceMatrix, path, fmt: str = "binary") -> None:
    if fmt == "binary":
        with open(path, "wb") as fh:
            fh.write(DIST_MAGIC)
            fh.write(struct.pack("<I", mtx.n))
            for image_id in mtx.image_ids:
                raw = image_id.encode("utf-8")
                fh.write(struct.pack("<I", len(raw)))
                fh.write(raw)
            fh.write(np.ascontiguousarray(mtx.values, dtype="<f4").tobytes())
    elif fmt == "csv":
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("query_id," + ",".join(mtx.image_ids) + "\n")
            for image_id, row in zip(mtx.image_ids, mtx.values):
                fh.write(image_id + "," + ",".join(f"{v:.9g}" for v in row) + "\n")
    else:
        raise ValueError(f"unknown matrix format {fmt!r}")


def read_matrix(path) -> DistanceMatrix:
    """Read a distance matrix, detecting binary vs CSV by the magic bytes."""
    with open(path, "rb") as fh:
        head = fh.read(len(DIST_MAGIC))
    if head == DIST_MAGIC:
        return _read_matrix_binary(path)
    try:
        return _read_matrix_csv(path)
    except (UnicodeDecodeError, ValueError) as exc:
        if isinstance(exc, MatrixFormatError):
            raise
        raise MatrixFormatError(f"{path}: bad magic and not a CSV matrix") from exc


def _read_matrix_binary(path) -> DistanceMatrix:
    with open(path, "rb") as fh:
        fh.read(len(DIST_MAGIC))
        header = fh.read(4)
        if len(header) != 4:
            raise MatrixFormatError(f"{path}: truncated header")
        (n,) = struct.unpack("<I", header)
        ids = []
        for _ in range(n):
            lenraw = fh.read(4)
            if len(lenraw) != 4:
                raise MatrixFormatError(f"{path}: truncated id index")
            (length,) = struct.unpack("<I", lenraw)
            raw = fh.read(length)
            if len(raw) != length:
                raise MatrixFormatError(f"{path}: truncated id index")
            ids.append(raw.decode("utf-8"))
        payload = fh.read()
    expected = n * n * 4
    if len(payload) != expected:
        raise MatrixFormatError(f"{path}: payload is {len(payload)} bytes, expected {expected}")
    values = np.frombuffer(payload, dtype="<f4").reshape(n, n).copy()
    return DistanceMatrix(values, ids)


def _read_matrix_csv(path) -> DistanceMatrix:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split(",")
        if not header or header[0] != "query_id":
            raise MatrixFormatError(f"{path}: bad CSV header (not a distance matrix?)")
        ids = header[1:]
        n = len(ids)
        values = np.zeros((n, n), dtype=np.float32)
        for i in range(n):
            line = fh.readline()
            if not line:
                raise MatrixFormatError(f"{path}: expected {n} rows, got {i}")
            cells = line.rstrip("\n").split(",")
            if len(cells) != n + 1 or cells[0] != ids[i]:
                raise MatrixFormatError(f"{path}: row {i} does not match the id index")
            values[i] = [float(c) for c in cells[1:]]
    return DistanceMatrix(values, ids)


# ---------------------------------------------------------------------------
# Ranking
# ---------------------------------------------------------------------------


def rank_for_query(mtx: DistanceMatrix, q: int) -> np.ndarray:
    """Gallery indices sorted by ascending distance to query ``q``.

    The query itself is excluded; ties break by ascending index so rankings
    are run-to-run reproducible.
    """
    if not 0 <= q < mtx.n:
        raise IndexError(f"query index {q} out of range for n={mtx.n}")
    order = np.argsort(mtx.values[q], kind="stable")
    return order[order != q]
