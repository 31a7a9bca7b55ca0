"""Dense and sparse kernels shared by the whole toolkit.

Vectors are 1-D float64 numpy arrays, dense matrices are 2-D float64
arrays in row-major order.  Factorizations and eigensolves delegate to
LAPACK (via numpy/scipy) behind the small wrappers below, which add the
dimension checks, pivot thresholds and error types the rest of the
package relies on.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse
from scipy.linalg.lapack import dpotrf

__all__ = [
    "DENSIFY_LIMIT",
    "NotPositiveDefiniteError",
    "SingularMatrixError",
    "EigenSolverError",
    "LinearOperator",
    "CsrMatrix",
    "CholeskyFactor",
    "aslinearoperator",
    "densify",
    "spmv",
    "cholesky",
    "sym_eig",
    "gen_sym_eig",
    "lu_solve",
]

# Operators are materialized to dense (by application to basis vectors)
# only up to this dimension; larger requests fail loudly.
DENSIFY_LIMIT = 4096


class NotPositiveDefiniteError(Exception):
    """A symmetric matrix failed a positive-definiteness requirement."""

    def __init__(self, pivot: int, message: str | None = None):
        self.pivot = pivot
        super().__init__(message or f"matrix is not positive definite (pivot {pivot})")


class SingularMatrixError(Exception):
    """An LU factorization met a (numerically) zero pivot."""

    def __init__(self, pivot: int, message: str | None = None):
        self.pivot = pivot
        super().__init__(message or f"matrix is singular to working precision (pivot {pivot})")


class EigenSolverError(Exception):
    """The symmetric eigensolver failed to converge."""


def _as_vector(x, dim: int | None = None) -> np.ndarray:
    v = np.asarray(x, dtype=float)
    if v.ndim != 1:
        raise ValueError(f"expected a vector, got array of shape {v.shape}")
    if dim is not None and v.shape[0] != dim:
        raise ValueError(f"dimension mismatch: expected {dim}, got {v.shape[0]}")
    return v


def _as_square(a) -> np.ndarray:
    m = np.asarray(a, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    return m


def _check_symmetric(s: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
    scale = max(np.abs(s).max(), 1.0)
    if np.abs(s - s.T).max() > rtol * scale:
        raise ValueError("matrix is not symmetric")
    return 0.5 * (s + s.T)


class LinearOperator:
    """A square operator known only through its action on vectors."""

    def __init__(self, dim: int, apply):
        self.dim = int(dim)
        self._apply = apply

    def apply(self, x) -> np.ndarray:
        return np.asarray(self._apply(_as_vector(x, self.dim)), dtype=float)

    __call__ = apply

    @classmethod
    def from_dense(cls, a) -> "LinearOperator":
        m = _as_square(a)
        return cls(m.shape[0], lambda x: m @ x)

    @classmethod
    def identity(cls, dim: int) -> "LinearOperator":
        return cls(dim, lambda x: x.copy())


def aslinearoperator(obj, dim: int | None = None) -> LinearOperator:
    """Coerce a dense array, CsrMatrix, callable or operator to LinearOperator."""
    if isinstance(obj, LinearOperator):
        return obj
    if isinstance(obj, CsrMatrix):
        return LinearOperator(obj.rows, obj.matvec)
    if callable(obj):
        if dim is None:
            dim = getattr(obj, "dim", None)
        if dim is None:
            raise ValueError("dim is required when wrapping a bare callable")
        return LinearOperator(dim, obj)
    return LinearOperator.from_dense(obj)


def densify(op, limit: int = DENSIFY_LIMIT) -> np.ndarray:
    """Materialize an operator as a dense matrix by applying it to basis vectors."""
    if isinstance(op, np.ndarray):
        return _as_square(op)
    if isinstance(op, CsrMatrix):
        return op.to_dense()
    lin = aslinearoperator(op)
    if lin.dim > limit:
        raise ValueError(f"refusing to densify operator of dimension {lin.dim} > {limit}")
    cols = np.empty((lin.dim, lin.dim))
    e = np.zeros(lin.dim)
    for j in range(lin.dim):
        e[j] = 1.0
        cols[:, j] = lin.apply(e)
        e[j] = 0.0
    return cols


@dataclass
class CsrMatrix:
    """Compressed sparse row storage.

    row_offsets has length rows+1 and is nondecreasing; within each row
    the column indices are strictly increasing.  Duplicate entries in
    assembly input are summed by :meth:`from_coo`.
    """

    rows: int
    cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.row_offsets = np.asarray(self.row_offsets, dtype=np.int64)
        self.col_indices = np.asarray(self.col_indices, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=float)
        if self.row_offsets.shape != (self.rows + 1,):
            raise ValueError("row_offsets must have length rows+1")
        if self.row_offsets[0] != 0 or np.any(np.diff(self.row_offsets) < 0):
            raise ValueError("row_offsets must start at 0 and be nondecreasing")
        if self.row_offsets[-1] != len(self.values) or len(self.col_indices) != len(self.values):
            raise ValueError("nnz mismatch between row_offsets, col_indices and values")
        if len(self.col_indices) and (
            self.col_indices.min() < 0 or self.col_indices.max() >= self.cols
        ):
            raise ValueError("column index out of range")
        if len(self.col_indices) > 1:
            row_of = np.repeat(np.arange(self.rows), np.diff(self.row_offsets))
            same_row = row_of[:-1] == row_of[1:]
            if np.any(same_row & (np.diff(self.col_indices) <= 0)):
                bad = int(row_of[:-1][same_row & (np.diff(self.col_indices) <= 0)][0])
                raise ValueError(f"column indices not strictly increasing in row {bad}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("matrix entries must be finite")
        self._scipy = scipy.sparse.csr_matrix(
            (self.values, self.col_indices, self.row_offsets), shape=(self.rows, self.cols)
        )

    @property
    def nnz(self) -> int:
        return len(self.values)

    @classmethod
    def from_coo(cls, rows: int, cols: int, i, j, v) -> "CsrMatrix":
        """Build from triplets; duplicate (i, j) entries are summed."""
        coo = scipy.sparse.coo_matrix(
            (np.asarray(v, dtype=float), (np.asarray(i), np.asarray(j))), shape=(rows, cols)
        )
        return cls.from_scipy(coo.tocsr())

    @classmethod
    def from_scipy(cls, m) -> "CsrMatrix":
        m = m.tocsr()
        m.sum_duplicates()
        m.sort_indices()
        return cls(m.shape[0], m.shape[1], m.indptr.copy(), m.indices.copy(), m.data.copy())

    @classmethod
    def from_dense(cls, a, drop_tol: float = 0.0) -> "CsrMatrix":
        m = np.asarray(a, dtype=float)
        if drop_tol > 0.0:
            m = np.where(np.abs(m) > drop_tol, m, 0.0)
        return cls.from_scipy(scipy.sparse.csr_matrix(m))

    @classmethod
    def identity(cls, n: int) -> "CsrMatrix":
        return cls.from_scipy(scipy.sparse.identity(n, format="csr"))

    def matvec(self, x) -> np.ndarray:
        return self._scipy @ _as_vector(x, self.cols)

    def to_dense(self) -> np.ndarray:
        return self._scipy.toarray()

    def to_scipy(self) -> scipy.sparse.csr_matrix:
        return self._scipy.copy()

    def add(self, other: "CsrMatrix") -> "CsrMatrix":
        if (self.rows, self.cols) != (other.rows, other.cols):
            raise ValueError("shape mismatch")
        return CsrMatrix.from_scipy(self._scipy + other._scipy)

    def submatrix(self, idx) -> "CsrMatrix":
        idx = np.asarray(idx, dtype=np.int64)
        return CsrMatrix.from_scipy(self._scipy[np.ix_(idx, idx)])


def spmv(m: CsrMatrix, x) -> np.ndarray:
    """Sparse matrix-vector product m @ x."""
    return m.matvec(x)


@dataclass
class CholeskyFactor:
    """Lower-triangular factor L with L L^T equal to the factored matrix."""

    lower: np.ndarray

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def solve(self, b) -> np.ndarray:
        y = scipy.linalg.solve_triangular(self.lower, np.asarray(b, dtype=float), lower=True)
        return scipy.linalg.solve_triangular(self.lower.T, y, lower=False)

    def reconstruct(self) -> np.ndarray:
        return self.lower @ self.lower.T


def cholesky(s) -> CholeskyFactor:
    """Factor a symmetric positive definite matrix as L L^T.

    Fails with NotPositiveDefiniteError when LAPACK meets a nonpositive
    pivot, or when a pivot falls at or below dim * eps * max(diag),
    which flags numerically semidefinite inputs.
    """
    m = _check_symmetric(_as_square(s))
    n = m.shape[0]
    c, info = dpotrf(m, lower=1)
    if info > 0:
        raise NotPositiveDefiniteError(pivot=info - 1)
    if info < 0:
        raise ValueError(f"illegal value in argument {-info} of dpotrf")
    lower = np.tril(c)
    pivots = np.diag(lower) ** 2
    threshold = n * np.finfo(float).eps * max(np.diag(m).max(), 0.0)
    if pivots.min() <= threshold:
        raise NotPositiveDefiniteError(pivot=int(np.argmin(pivots)))
    return CholeskyFactor(lower=lower)


def sym_eig(s) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (ascending) and orthonormal eigenvectors of a symmetric matrix."""
    m = _check_symmetric(_as_square(s))
    try:
        vals, vecs = np.linalg.eigh(m)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK non-convergence
        raise EigenSolverError(str(exc)) from exc
    return vals, vecs


def gen_sym_eig(s, m) -> np.ndarray:
    """Ascending eigenvalues of the pencil S y = lambda M y with M SPD.

    Reduces through M = L L^T to the ordinary symmetric problem for
    L^{-1} S L^{-T}.
    """
    s = _check_symmetric(_as_square(s))
    factor = cholesky(m)
    y = scipy.linalg.solve_triangular(factor.lower, s, lower=True)
    reduced = scipy.linalg.solve_triangular(factor.lower, y.T, lower=True).T
    vals, _ = sym_eig(0.5 * (reduced + reduced.T))
    return vals


def lu_solve(a, b) -> np.ndarray:
    """Solve a x = b by LU with partial pivoting."""
    m = _as_square(a)
    rhs = _as_vector(b, m.shape[0])
    with warnings.catch_warnings():
        # singularity is detected below with an explicit pivot threshold
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(m, check_finite=True)
    diag = np.abs(np.diag(lu))
    threshold = m.shape[0] * np.finfo(float).eps * max(np.abs(m).max(), 0.0)
    if diag.min() <= threshold:
        raise SingularMatrixError(pivot=int(np.argmin(diag)))
    return scipy.linalg.lu_solve((lu, piv), rhs)
