"""Matrix Market coordinate I/O for complex Hermitian matrices.

Writes the lower triangle only (the Hermitian convention), one entry per
line as ``row col real imag`` with 1-based indices in column-major order,
and floats printed with 17 significant digits so that export -> import ->
export reproduces the file byte for byte.
"""

import numpy as np
import scipy.sparse as sp

HEADER = "%%MatrixMarket matrix coordinate complex hermitian"


def _as_matrix(H):
    if hasattr(H, "matrix"):
        return H.matrix
    return H


def export_matrix(H, path):
    """Write a complex Hermitian sparse matrix in Matrix Market format."""
    A = sp.csc_matrix(_as_matrix(H)).astype(complex)
    if A.shape[0] != A.shape[1]:
        raise ValueError("matrix must be square")
    defect = A - A.getH()
    if defect.nnz and np.max(np.abs(defect.data)) != 0.0:
        raise ValueError("matrix is not exactly Hermitian")
    L = sp.tril(A, 0).tocsc()
    L.sort_indices()
    L.eliminate_zeros()
    coo = L.tocoo()
    # csc order: column-major, rows ascending inside each column
    order = np.lexsort((coo.row, coo.col))
    rows = coo.row[order] + 1
    cols = coo.col[order] + 1
    data = coo.data[order]
    lines = [HEADER, f"{A.shape[0]} {A.shape[1]} {len(data)}"]
    for r, c, v in zip(rows, cols, data):
        lines.append(f"{r} {c} {v.real:.17g} {v.imag:.17g}")
    text = "\n".join(lines) + "\n"
    with open(path, "w") as fh:
        fh.write(text)
    return path


def import_matrix(path):
    """Read a complex Hermitian Matrix Market file; returns csc_matrix."""
    with open(path) as fh:
        header = fh.readline().strip()
        if header != HEADER:
            raise ValueError(f"unsupported Matrix Market header: {header!r}")
        line = fh.readline()
        while line.startswith("%"):
            line = fh.readline()
        n, m, nnz = (int(tok) for tok in line.split())
        rows = np.empty(nnz, dtype=np.int64)
        cols = np.empty(nnz, dtype=np.int64)
        data = np.empty(nnz, dtype=complex)
        for i in range(nnz):
            tok = fh.readline().split()
            rows[i] = int(tok[0]) - 1
            cols[i] = int(tok[1]) - 1
            data[i] = complex(float(tok[2]), float(tok[3]))
    if np.any(rows < cols):
        raise ValueError("hermitian file must store the lower triangle")
    L = sp.csc_matrix((data, (rows, cols)), shape=(n, m))
    strict = sp.tril(L, -1)
    A = (L + strict.getH()).tocsc()
    A.sort_indices()
    return A
