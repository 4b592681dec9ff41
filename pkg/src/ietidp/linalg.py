"""Sparse direct solvers and small linear-algebra utilities.

Sparse matrices are plain ``scipy.sparse`` CSR matrices built through
:func:`from_triplets` (duplicates are summed on finalization). Direct
factorizations wrap SuperLU with a minimum-degree ordering on A + A^T; the
SPD path prefers diagonal pivots, the symmetric-indefinite path keeps
partial pivoting for saddle-point blocks with a zero diagonal.
"""

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "SingularMatrixError",
    "Factorization",
    "LinearOperator",
    "from_triplets",
    "factorize",
    "solve",
    "sparse_matvec",
    "sparse_transpose_matvec",
    "write_matrix_market",
]

# pivots below this fraction of the largest initial diagonal entry are
# treated as numerically singular (flags floating patches early)
SINGULAR_PIVOT_REL = 1e-12


class SingularMatrixError(Exception):
    """Raised when a factorization hits a (near-)zero pivot."""


def from_triplets(nrows, ncols, rows, cols, vals):
    """Finalize COO triplets into CSR; duplicate entries are summed."""
    m = sp.coo_matrix((vals, (rows, cols)), shape=(nrows, ncols))
    out = m.tocsr()
    out.sum_duplicates()
    return out


class Factorization:
    """Reusable direct factorization of a square sparse matrix."""

    def __init__(self, matrix, kind):
        if kind not in ("spd", "symmetric-indefinite"):
            raise ValueError(f"unknown factorization kind {kind!r}")
        matrix = sp.csc_matrix(matrix)
        if matrix.shape[0] != matrix.shape[1]:
            raise ValueError(f"matrix is not square: {matrix.shape}")
        self.kind = kind
        self.n = matrix.shape[0]
        diag = matrix.diagonal()
        scale = np.max(np.abs(diag)) if self.n else 0.0
        if scale == 0.0:
            scale = max(np.max(np.abs(matrix.data)) if matrix.nnz else 0.0, 1.0)
        if self.n == 0:
            self._lu = None
            return
        opts = {"SymmetricMode": True} if kind == "spd" else {}
        thresh = 0.0 if kind == "spd" else 1.0
        try:
            self._lu = spla.splu(
                matrix,
                permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=thresh,
                options=opts,
            )
        except RuntimeError as exc:  # SuperLU reports exact singularity
            raise SingularMatrixError(f"singular matrix: {exc}") from exc
        upiv = np.abs(self._lu.U.diagonal())
        bad = np.nonzero(upiv <= SINGULAR_PIVOT_REL * scale)[0]
        if len(bad):
            raise SingularMatrixError(
                f"singular matrix: zero pivot at elimination stage {int(bad[0])}"
            )

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        if b.shape[0] != self.n:
            raise ValueError(f"rhs has length {b.shape[0]}, expected {self.n}")
        if self.n == 0:
            return b.copy()
        return self._lu.solve(b)


def factorize(matrix, kind="spd"):
    """Factorize a square sparse matrix for repeated solves.

    ``kind`` is ``"spd"`` for symmetric positive definite input or
    ``"symmetric-indefinite"`` for symmetric saddle-point systems.
    """
    return Factorization(matrix, kind)


def solve(factorization, b):
    return factorization.solve(b)


def sparse_matvec(matrix, x):
    x = np.asarray(x)
    if matrix.shape[1] != x.shape[0]:
        raise ValueError(f"dimension mismatch: {matrix.shape} @ {x.shape}")
    return matrix @ x


def sparse_transpose_matvec(matrix, x):
    x = np.asarray(x)
    if matrix.shape[0] != x.shape[0]:
        raise ValueError(f"dimension mismatch: {matrix.shape}^T @ {x.shape}")
    return matrix.T @ x


class LinearOperator:
    """Matrix-free square operator: a dimension plus an apply rule."""

    def __init__(self, n, apply):
        self.n = int(n)
        self._apply = apply

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[0] != self.n:
            raise ValueError(f"operand has length {x.shape[0]}, expected {self.n}")
        return self._apply(x)

    def to_dense(self):
        """Apply to the identity; intended for small test problems only."""
        return np.asarray(self(np.eye(self.n)))


def write_matrix_market(matrix, path):
    """Dump a sparse matrix in MatrixMarket coordinate format (1-based)."""
    m = sp.coo_matrix(matrix)
    with open(path, "w") as fh:
        fh.write("%%MatrixMarket matrix coordinate real general\n")
        fh.write(f"{m.shape[0]} {m.shape[1]} {m.nnz}\n")
        for i, j, v in zip(m.row, m.col, m.data):
            fh.write(f"{i + 1} {j + 1} {v:.17g}\n")
