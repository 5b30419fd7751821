"""Symmetric CSR storage and a Jacobi-preconditioned CG solver handle."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import kernels


class SolverError(RuntimeError):
    """CG failed to reach the requested tolerance."""

    def __init__(self, message, iterations=None, residual=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class SparseMatrixSym:
    """Compressed-row symmetric matrix with sorted columns and no stored zeros."""

    __slots__ = ("indptr", "indices", "data", "n")

    def __init__(self, indptr, indices, data, n):
        self.indptr = np.ascontiguousarray(indptr, dtype=np.int32)
        self.indices = np.ascontiguousarray(indices, dtype=np.int32)
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.n = int(n)
        for a in (self.indptr, self.indices, self.data):
            a.setflags(write=False)

    @classmethod
    def from_scipy(cls, a) -> "SparseMatrixSym":
        a = sp.csr_matrix(a, dtype=np.float64, copy=True)
        if a.shape[0] != a.shape[1]:
            raise ValueError(f"matrix must be square, got {a.shape}")
        a.sum_duplicates()
        a.eliminate_zeros()
        a.sort_indices()
        return cls(a.indptr, a.indices, a.data, a.shape[0])

    @classmethod
    def from_coo(cls, rows, cols, vals, n) -> "SparseMatrixSym":
        return cls.from_scipy(sp.coo_matrix((vals, (rows, cols)), shape=(n, n)))

    @classmethod
    def from_dense(cls, a) -> "SparseMatrixSym":
        return cls.from_scipy(sp.csr_matrix(np.asarray(a, dtype=np.float64)))

    @property
    def nnz(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self):
        return (self.n, self.n)

    def to_scipy(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.data, self.indices, self.indptr), shape=self.shape)

    def todense(self) -> np.ndarray:
        return self.to_scipy().toarray()

    def diagonal(self) -> np.ndarray:
        return self.to_scipy().diagonal()

    def __matmul__(self, x):
        return matvec(self, x)

    def lincomb(self, alpha: float, other: "SparseMatrixSym", beta: float) -> "SparseMatrixSym":
        """Return alpha*self + beta*other."""
        return SparseMatrixSym.from_scipy(alpha * self.to_scipy() + beta * other.to_scipy())

    def max_asymmetry(self) -> float:
        a = self.to_scipy()
        d = abs(a - a.T)
        return float(d.max()) if d.nnz else 0.0


def matvec(a: SparseMatrixSym, x, out=None) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.shape != (a.n,):
        raise ValueError(f"dimension mismatch: matrix is {a.n}x{a.n}, vector has shape {x.shape}")
    if out is None:
        out = np.empty(a.n)
    kernels.csr_matvec(a.indptr, a.indices, a.data, x, out)
    return out


@dataclass
class SolveInfo:
    iterations: int
    residual: float
    history: np.ndarray | None = None


@dataclass
class SolverHandle:
    """Reusable solver for one fixed SPD matrix.

    The Jacobi preconditioner is built once at construction; ``setups``
    counts preconditioner builds and ``solves``/``iterations`` accumulate
    usage so callers can assert the matrix is never rebuilt.
    """

    matrix: SparseMatrixSym
    tol: float = 1e-10
    maxiter: int = 10000
    dinv: np.ndarray = field(init=False, repr=False)
    setups: int = field(init=False, default=0)
    solves: int = field(init=False, default=0)
    iterations: int = field(init=False, default=0)
    last: SolveInfo | None = field(init=False, default=None, repr=False)

    def __post_init__(self):
        diag = self.matrix.diagonal()
        if np.any(diag <= 0):
            raise ValueError("matrix has non-positive diagonal entries; not SPD")
        self.dinv = np.ascontiguousarray(1.0 / diag)
        self.dinv.setflags(write=False)
        self.setups += 1

    def solve(self, rhs, x0=None, record_history=False) -> np.ndarray:
        return solve(self, rhs, x0=x0, record_history=record_history)


def solve(handle: SolverHandle, rhs, x0=None, record_history=False) -> np.ndarray:
    """Solve ``handle.matrix @ x = rhs`` to relative residual ``handle.tol``."""
    a = handle.matrix
    b = np.ascontiguousarray(rhs, dtype=np.float64)
    if b.shape != (a.n,):
        raise ValueError(f"dimension mismatch: matrix is {a.n}x{a.n}, rhs has shape {b.shape}")
    if not np.all(np.isfinite(b)):
        raise ValueError("right-hand side contains non-finite values")
    x = np.zeros(a.n) if x0 is None else np.array(x0, dtype=np.float64, copy=True)
    history = np.full(handle.maxiter + 1, np.nan) if record_history else None
    it, res, status = kernels.pcg(a.indptr, a.indices, a.data, handle.dinv, b, x, handle.tol, handle.maxiter, history)
    handle.solves += 1
    handle.iterations += it
    handle.last = SolveInfo(it, res, None if history is None else history[: it + 1].copy())
    if status == 2:
        raise SolverError(f"CG breakdown after {it} iterations: matrix is not positive definite", it, res)
    if status != 0:
        raise SolverError(
            f"CG did not converge in {it} iterations (relative residual {res:.3e} > {handle.tol:.1e})", it, res
        )
    return x
