"""Sparse vectors over a fixed feature space, plus the binary matrix file format.

A SparseVector is the universal representation for encoded inputs, label
embeddings, and classifier weights: sorted unique indices with finite values
over a feature space of known dimension.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

_MAGIC = b"PXSM"
_VERSION = 1


@dataclass(frozen=True)
class SparseVector:
    """Sorted (index, value) pairs over a feature space of size `dim`.

    Invariants: indices strictly increasing, all < dim, no explicit zeros.
    When `normalized` is set the Euclidean norm is 1 within 1e-6 (zero
    vectors are never flagged normalized).
    """

    indices: np.ndarray
    values: np.ndarray
    dim: int
    normalized: bool = field(default=False)

    @staticmethod
    def from_pairs(pairs: dict[int, float], dim: int) -> "SparseVector":
        items = sorted((i, v) for i, v in pairs.items() if v != 0.0)
        idx = np.array([i for i, _ in items], dtype=np.int32)
        val = np.array([v for _, v in items], dtype=np.float64)
        return SparseVector(idx, val, dim)

    @staticmethod
    def zeros(dim: int) -> "SparseVector":
        return SparseVector(np.empty(0, dtype=np.int32), np.empty(0, dtype=np.float64), dim)

    @property
    def nnz(self) -> int:
        return len(self.indices)

    def norm(self) -> float:
        return float(np.sqrt(np.dot(self.values, self.values)))

    def unit(self) -> "SparseVector":
        """Euclidean-normalized copy; a zero vector is returned unflagged."""
        n = self.norm()
        if n == 0.0:
            return self
        return SparseVector(self.indices, self.values / n, self.dim, normalized=True)

    def dot(self, other: "SparseVector") -> float:
        if self.dim != other.dim:
            raise ValueError(f"dimension mismatch: {self.dim} vs {other.dim}")
        out = 0.0
        i = j = 0
        a_idx, a_val = self.indices, self.values
        b_idx, b_val = other.indices, other.values
        while i < len(a_idx) and j < len(b_idx):
            ai, bj = a_idx[i], b_idx[j]
            if ai == bj:
                out += a_val[i] * b_val[j]
                i += 1
                j += 1
            elif ai < bj:
                i += 1
            else:
                j += 1
        return float(out)

    def validate(self) -> None:
        if len(self.indices) != len(self.values):
            raise ValueError("indices/values length mismatch")
        if len(self.indices) > 0:
            if np.any(np.diff(self.indices) <= 0):
                raise ValueError("indices must be strictly increasing")
            if self.indices[0] < 0 or self.indices[-1] >= self.dim:
                raise ValueError("index out of range")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("values must be finite")
        if np.any(self.values == 0.0):
            raise ValueError("explicit zeros are not allowed")
        if self.normalized and abs(self.norm() - 1.0) > 1e-6:
            raise ValueError("flagged normalized but norm != 1")

    def to_csr_row(self) -> sp.csr_matrix:
        indptr = np.array([0, self.nnz], dtype=np.int64)
        return sp.csr_matrix((self.values, self.indices, indptr), shape=(1, self.dim))


def rows_to_csr(rows: list[SparseVector], dim: int) -> sp.csr_matrix:
    """Stack SparseVectors into a CSR matrix (one row each)."""
    indptr = np.zeros(len(rows) + 1, dtype=np.int64)
    for i, r in enumerate(rows):
        if r.dim != dim:
            raise ValueError("row dimension mismatch")
        indptr[i + 1] = indptr[i] + r.nnz
    nnz = int(indptr[-1])
    indices = np.empty(nnz, dtype=np.int32)
    values = np.empty(nnz, dtype=np.float64)
    for i, r in enumerate(rows):
        indices[indptr[i]:indptr[i + 1]] = r.indices
        values[indptr[i]:indptr[i + 1]] = r.values
    return sp.csr_matrix((values, indices, indptr), shape=(len(rows), dim))


def csr_row_to_vector(matrix: sp.csr_matrix, row: int, normalized: bool = False) -> SparseVector:
    s, e = matrix.indptr[row], matrix.indptr[row + 1]
    return SparseVector(
        matrix.indices[s:e].astype(np.int32, copy=True),
        matrix.data[s:e].astype(np.float64, copy=True),
        matrix.shape[1],
        normalized=normalized,
    )


def save_csr(path, matrix: sp.csr_matrix) -> None:
    """Write a CSR matrix: header (rows, dim, nnz), then indptr/index/value arrays.

    All fields little-endian; values float64 so the round trip is exact.
    """
    m = matrix.tocsr()
    m.sort_indices()
    indptr = m.indptr.astype("<i8")
    indices = m.indices.astype("<i4")
    data = m.data.astype("<f8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IQQQ", _VERSION, m.shape[0], m.shape[1], m.nnz))
        fh.write(indptr.tobytes())
        fh.write(indices.tobytes())
        fh.write(data.tobytes())


def load_csr(path) -> sp.csr_matrix:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a sparse matrix file (bad magic {magic!r})")
        version, n_rows, dim, nnz = struct.unpack("<IQQQ", fh.read(28))
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported format version {version}")
        indptr = np.frombuffer(fh.read(8 * (n_rows + 1)), dtype="<i8")
        indices = np.frombuffer(fh.read(4 * nnz), dtype="<i4")
        data = np.frombuffer(fh.read(8 * nnz), dtype="<f8")
    return sp.csr_matrix(
        (data.copy(), indices.copy(), indptr.copy()), shape=(int(n_rows), int(dim))
    )
