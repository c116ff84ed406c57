"""Sparse kernels, block-vector layout, and the desk-scale eigensolver.

Hot kernels are compiled with numba in ``nogil`` mode so that concurrent
per-time-block solves can run on separate threads.  A real matrix applied to
a complex vector is promoted on the fly; no complex copy of the matrix is
made.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np
import scipy.io
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import ConfigurationError, NumericalError

__all__ = [
    "SparseMatrix",
    "spmv",
    "BlockLayout",
    "dense_eigs",
    "DenseLU",
    "read_matrix_market",
    "write_matrix_market",
    "dump_block_vector",
    "load_block_vector",
    "DENSE_EIG_LIMIT",
]

DENSE_EIG_LIMIT = 6000


@numba.njit(cache=True, nogil=True)
def _csr_matvec(indptr, indices, data, x, y):
    n = indptr.size - 1
    for i in range(n):
        acc = y[i]
        for k in range(indptr[i], indptr[i + 1]):
            acc += data[k] * x[indices[k]]
        y[i] = acc


@numba.njit(cache=True, nogil=True)
def _csr_residual(indptr, indices, data, x, b, r):
    # r = b - A x
    n = indptr.size - 1
    for i in range(n):
        acc = b[i]
        for k in range(indptr[i], indptr[i + 1]):
            acc -= data[k] * x[indices[k]]
        r[i] = acc


@numba.njit(cache=True, nogil=True)
def _csr_sor_forward(indptr, indices, data, diag, b, x, omega, sweeps):
    n = indptr.size - 1
    for _ in range(sweeps):
        for i in range(n):
            acc = b[i]
            for k in range(indptr[i], indptr[i + 1]):
                acc -= data[k] * x[indices[k]]
            x[i] += omega * acc / diag[i]


def _result_dtype(a, b):
    return np.result_type(a.dtype, b.dtype)


class SparseMatrix:
    """Immutable CSR matrix over float64 or complex128.

    Column indices are sorted within each row and explicit zeros removed at
    construction.
    """

    __slots__ = ("indptr", "indices", "data", "shape", "_diag")

    def __init__(self, indptr, indices, data, shape):
        A = sp.csr_matrix((data, indices, indptr), shape=shape)
        A.sum_duplicates()
        A.eliminate_zeros()
        A.sort_indices()
        dtype = np.complex128 if np.iscomplexobj(A.data) else np.float64
        self.indptr = np.ascontiguousarray(A.indptr, dtype=np.int64)
        self.indices = np.ascontiguousarray(A.indices, dtype=np.int64)
        self.data = np.ascontiguousarray(A.data, dtype=dtype)
        self.shape = tuple(A.shape)
        self._diag = None
        for arr in (self.indptr, self.indices, self.data):
            arr.setflags(write=False)

    @classmethod
    def from_scipy(cls, A) -> "SparseMatrix":
        A = sp.csr_matrix(A)
        return cls(A.indptr, A.indices, A.data, A.shape)

    @classmethod
    def from_dense(cls, A) -> "SparseMatrix":
        return cls.from_scipy(sp.csr_matrix(np.asarray(A)))

    def to_scipy(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.data.copy(), self.indices.copy(), self.indptr.copy()),
                             shape=self.shape)

    def toarray(self) -> np.ndarray:
        return self.to_scipy().toarray()

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_complex(self) -> bool:
        return self.data.dtype == np.complex128

    @property
    def nnz(self) -> int:
        return self.data.size

    @property
    def T(self) -> "SparseMatrix":
        return SparseMatrix.from_scipy(self.to_scipy().T)

    @property
    def H(self) -> "SparseMatrix":
        return SparseMatrix.from_scipy(self.to_scipy().conj().T)

    def diagonal(self) -> np.ndarray:
        if self._diag is None:
            d = self.to_scipy().diagonal()
            d.setflags(write=False)
            self._diag = d
        return self._diag

    def __matmul__(self, x):
        x = np.asarray(x)
        if x.ndim == 1:
            return spmv(self, x)
        return self.to_scipy() @ x

    def residual(self, x: np.ndarray, b: np.ndarray) -> np.ndarray:
        """``b - A x`` in one pass."""
        r = np.empty(self.shape[0], dtype=np.result_type(self.dtype, x.dtype, b.dtype))
        _csr_residual(self.indptr, self.indices, self.data,
                      np.ascontiguousarray(x), np.ascontiguousarray(b, dtype=r.dtype), r)
        return r

    def sor_sweep(self, b: np.ndarray, x: np.ndarray, omega: float = 1.0, sweeps: int = 1) -> None:
        """Forward SOR sweeps on ``A x = b``, updating ``x`` in place."""
        if x.dtype != np.result_type(self.dtype, b.dtype):
            raise ConfigurationError("SOR iterate has the wrong scalar type")
        _csr_sor_forward(self.indptr, self.indices, self.data, self.diagonal(),
                         np.ascontiguousarray(b, dtype=x.dtype), x, omega, sweeps)

    def __repr__(self):
        kind = "complex" if self.is_complex else "real"
        return f"SparseMatrix({self.shape[0]}x{self.shape[1]}, nnz={self.nnz}, {kind})"


def spmv(A: SparseMatrix, x: np.ndarray) -> np.ndarray:
    """``y = A x`` for real or complex ``A`` and ``x``."""
    x = np.ascontiguousarray(x)
    if x.ndim != 1 or x.shape[0] != A.shape[1]:
        raise ConfigurationError(f"spmv shape mismatch: {A.shape} @ {x.shape}")
    y = np.zeros(A.shape[0], dtype=_result_dtype(A.data, x))
    _csr_matvec(A.indptr, A.indices, A.data, x, y)
    return y


@dataclass(frozen=True)
class BlockLayout:
    """Layout of an all-at-once vector.

    Storage is field-major: ``[v_1..v_n, p_1..p_n, lam_1..lam_n, mu_1..mu_n]``
    with ``n = n_t - 1`` time blocks.  The block-diagonal ordering used by the
    per-block solvers is time-major ``(v_j, lam_j, p_j, mu_j)`` per block.
    """

    n_blocks: int
    n_v: int
    n_p: int

    @property
    def size(self) -> int:
        return 2 * self.n_blocks * (self.n_v + self.n_p)

    @property
    def block_size(self) -> int:
        return 2 * (self.n_v + self.n_p)

    def fields(self, x: np.ndarray) -> tuple[np.ndarray, ...]:
        """Views ``(v, p, lam, mu)``, each shaped (n_blocks, field_size)."""
        if x.shape[-1] != self.size:
            raise ConfigurationError(f"vector of length {x.shape[-1]} does not match layout {self.size}")
        n, nv, np_ = self.n_blocks, self.n_v, self.n_p
        o1 = n * nv
        o2 = o1 + n * np_
        o3 = o2 + n * nv
        return (x[:o1].reshape(n, nv), x[o1:o2].reshape(n, np_),
                x[o2:o3].reshape(n, nv), x[o3:].reshape(n, np_))

    def zeros(self, dtype=float) -> np.ndarray:
        return np.zeros(self.size, dtype=dtype)

    def assemble(self, v, p, lam, mu) -> np.ndarray:
        return np.concatenate([np.ravel(v), np.ravel(p), np.ravel(lam), np.ravel(mu)])

    def block_permutation(self) -> np.ndarray:
        """Index map ``perm`` with ``x_block = x[perm]``."""
        n, nv, np_ = self.n_blocks, self.n_v, self.n_p
        o1 = n * nv
        o2 = o1 + n * np_
        o3 = o2 + n * nv
        j = np.arange(n)[:, None]
        v = j * nv + np.arange(nv)[None, :]
        lam = o2 + j * nv + np.arange(nv)[None, :]
        p = o1 + j * np_ + np.arange(np_)[None, :]
        mu = o3 + j * np_ + np.arange(np_)[None, :]
        return np.concatenate([v, lam, p, mu], axis=1).ravel()

    def to_blocks(self, x: np.ndarray) -> np.ndarray:
        """Field-major vector -> array (n_blocks, block_size) in (v, lam, p, mu) order."""
        v, p, lam, mu = self.fields(x)
        return np.concatenate([v, lam, p, mu], axis=1)

    def from_blocks(self, xb: np.ndarray) -> np.ndarray:
        nv, np_ = self.n_v, self.n_p
        v = xb[:, :nv]
        lam = xb[:, nv:2 * nv]
        p = xb[:, 2 * nv:2 * nv + np_]
        mu = xb[:, 2 * nv + np_:]
        return self.assemble(v, p, lam, mu)


@numba.njit(cache=True, nogil=True)
def _lu_substitute(lu, piv, y):
    # y <- U^{-1} L^{-1} P y, with LAPACK row interchanges in ``piv``
    n = lu.shape[0]
    for i in range(n):
        k = piv[i]
        if k != i:
            t = y[i]
            y[i] = y[k]
            y[k] = t
    for i in range(n):
        acc = y[i]
        for k in range(i):
            acc -= lu[i, k] * y[k]
        y[i] = acc
    for i in range(n - 1, -1, -1):
        acc = y[i]
        for k in range(i + 1, n):
            acc -= lu[i, k] * y[k]
        y[i] = acc / lu[i, i]


class DenseLU:
    """Dense LU factorization whose solve phase is safe to run from many threads.

    The factorization is computed once with LAPACK; solves use a compiled
    substitution kernel that touches no shared state, so concurrent calls
    from worker threads are deterministic.
    """

    __slots__ = ("lu", "piv", "shape")

    def __init__(self, A):
        A = np.asarray(A)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ConfigurationError(f"LU needs a square matrix, got shape {A.shape}")
        dtype = np.complex128 if np.iscomplexobj(A) else np.float64
        lu, piv = sla.lu_factor(A.astype(dtype), check_finite=True)
        self.lu = np.ascontiguousarray(lu)
        self.piv = np.ascontiguousarray(piv, dtype=np.int64)
        self.shape = A.shape
        self.lu.setflags(write=False)
        self.piv.setflags(write=False)

    def pivot_magnitudes(self) -> np.ndarray:
        return np.abs(np.diag(self.lu))

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b)
        if b.shape != (self.shape[0],):
            raise ConfigurationError(f"LU solve shape mismatch: {self.shape} with {b.shape}")
        y = np.array(b, dtype=np.result_type(self.lu.dtype, b.dtype), order="C")
        _lu_substitute(self.lu, self.piv, y)
        return y


def dense_eigs(A: np.ndarray, B: np.ndarray | None = None) -> np.ndarray:
    """Eigenvalues of a general (complex) matrix, sorted by real part descending.

    With ``B`` the generalized problem ``A x = lambda B x`` is solved.
    """
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ConfigurationError("dense_eigs needs a square matrix")
    if A.shape[0] > DENSE_EIG_LIMIT:
        raise ConfigurationError(f"dimension {A.shape[0]} exceeds desk-scale limit {DENSE_EIG_LIMIT}")
    try:
        w = sla.eigvals(A, B)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"eigenvalue computation failed for n={A.shape[0]}: {exc}") from exc
    if not np.all(np.isfinite(w)):
        raise NumericalError("eigenvalue computation returned non-finite values")
    order = np.lexsort((-w.imag, -w.real))
    return w[order]


def write_matrix_market(path, A, comment: str = "") -> None:
    if isinstance(A, SparseMatrix):
        A = A.to_scipy()
    scipy.io.mmwrite(str(path), sp.coo_matrix(A), comment=comment)


def read_matrix_market(path) -> SparseMatrix:
    return SparseMatrix.from_scipy(scipy.io.mmread(str(path)))


def dump_block_vector(path, x: np.ndarray) -> None:
    """Raw little-endian dump (float64 or complex128)."""
    dtype = "<c16" if np.iscomplexobj(x) else "<f8"
    Path(path).write_bytes(np.ascontiguousarray(x, dtype=dtype).tobytes())


def load_block_vector(path, complex_: bool = False) -> np.ndarray:
    return np.frombuffer(Path(path).read_bytes(), dtype="<c16" if complex_ else "<f8").copy()
