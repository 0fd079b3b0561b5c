"""Sparse symmetric solves: reusable SPD factorizations and KKT systems."""
from __future__ import annotations

import threading
import warnings

import numpy as np
import scipy.linalg
import scipy.sparse as sparse
import scipy.sparse.linalg as spla

RESIDUAL_WARN = 1e-8


class SingularSystemError(np.linalg.LinAlgError):
    """Raised for singular or indefinite input to an SPD factorization."""


class RankDeficientConstraintError(ValueError):
    def __init__(self, rows):
        self.rows = list(int(r) for r in rows)
        super().__init__(f"constraint matrix is rank deficient; redundant rows: {self.rows}")


class IllConditionedWarning(RuntimeWarning):
    pass


def as_csr(A) -> sparse.csr_matrix:
    """CSR copy with sorted, duplicate-free column indices."""
    A = sparse.csr_matrix(A, dtype=float)
    A.sum_duplicates()
    A.sort_indices()
    return A


def is_symmetric(A, rtol: float = 1e-14) -> bool:
    A = as_csr(A)
    D = abs(A - A.T)
    if D.nnz == 0:
        return True
    scale = abs(A).maximum(abs(A.T)).tocsr()
    D = D.tocoo()
    ref = np.maximum(np.asarray(scale[D.row, D.col]).ravel(), 1.0)
    return bool(np.all(D.data <= rtol * ref))


def _relative_residual(A, x, b) -> float:
    r = A @ x - b
    return float(np.linalg.norm(r) / max(np.linalg.norm(b), 1.0))


def _check_residual(A, x, b, what: str) -> float:
    res = _relative_residual(A, x, b)
    if res > RESIDUAL_WARN:
        warnings.warn(f"{what}: relative residual {res:.2e}", IllConditionedWarning, stacklevel=3)
    return res


class Factorization:
    """Solve handle for a fixed SPD matrix; factorized once at construction.

    ``method="direct"`` uses a symmetric-mode SuperLU factorization with
    diagonal pivoting, so the pivots are those of an LDL^T decomposition and
    their signs certify positive definiteness. ``method="cg"`` is an
    iterative fallback for very large systems.
    """

    def __init__(self, A, method: str = "direct", check: bool = True):
        self.A = as_csr(A)
        if self.A.shape[0] != self.A.shape[1]:
            raise ValueError(f"matrix must be square, got {self.A.shape}")
        self.method = method
        self.n = self.A.shape[0]
        self._lock = threading.Lock()
        if check and not is_symmetric(self.A, rtol=1e-12):
            raise SingularSystemError("matrix is not symmetric")
        if method == "direct":
            self._lu = self._factor_direct()
        elif method == "cg":
            self._lu = None
            diag = self.A.diagonal()
            if np.any(diag <= 0):
                raise SingularSystemError("non-positive diagonal entry; matrix is not SPD")
        else:
            raise ValueError(f"unknown method {method!r}")

    def _factor_direct(self):
        if self.n == 0:
            return None
        try:
            lu = spla.splu(
                self.A.tocsc(),
                permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=0.0,
                options={"SymmetricMode": True},
            )
        except RuntimeError as exc:
            raise SingularSystemError(f"factorization failed: {exc}") from exc
        if not np.array_equal(lu.perm_r, lu.perm_c):
            raise SingularSystemError("zero pivot encountered; matrix is singular or indefinite")
        pivots = lu.U.diagonal()
        bad = np.flatnonzero(pivots <= 0)
        if bad.size:
            raise SingularSystemError(
                f"non-positive pivot ({pivots[bad[0]]:.3e}); matrix is indefinite or singular"
            )
        return lu

    def solve(self, b) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        if self.n == 0:
            return np.zeros_like(b)
        if self.method == "direct":
            with self._lock:
                x = self._lu.solve(b)
        else:
            cols = [b] if b.ndim == 1 else [b[:, j] for j in range(b.shape[1])]
            out = []
            for col in cols:
                y, info = spla.cg(self.A, col, rtol=1e-12, atol=0.0, maxiter=10 * self.n)
                if info < 0:
                    raise SingularSystemError(f"CG breakdown (info={info})")
                out.append(y)
            x = out[0] if b.ndim == 1 else np.column_stack(out)
        _check_residual(self.A, x, b, "SPD solve")
        return x


def factorize(A, method: str = "direct") -> Factorization:
    return Factorization(A, method=method)


def redundant_rows(C, tol: float = 1e-10) -> list[int]:
    """Rows of C that are linear combinations of the others (pivoted QR)."""
    Cd = C.toarray() if sparse.issparse(C) else np.asarray(C, dtype=float)
    if Cd.shape[0] == 0:
        return []
    _, R, piv = scipy.linalg.qr(Cd.T, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    scale = d[0] if d.size and d[0] > 0 else 1.0
    rank = int(np.sum(d > tol * scale))
    return sorted(int(p) for p in piv[rank:])


class ConstrainedSolver:
    """Factorized KKT system [[A, C^T], [C, 0]] for repeated right-hand sides."""

    def __init__(self, A, C, check_rank: bool = True):
        self.A = as_csr(A)
        self.C = as_csr(C)
        n, k = self.A.shape[0], self.C.shape[0]
        if self.C.shape[1] != n:
            raise ValueError(f"constraint width {self.C.shape[1]} does not match {n}")
        if check_rank and k:
            bad = redundant_rows(self.C)
            if bad:
                raise RankDeficientConstraintError(bad)
        self.n, self.k = n, k
        self.K = sparse.bmat([[self.A, self.C.T], [self.C, None]], format="csc")
        self._lock = threading.Lock()
        try:
            self._lu = spla.splu(self.K)
        except RuntimeError as exc:
            raise SingularSystemError(f"KKT factorization failed: {exc}") from exc

    def solve(self, b) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        rhs = np.concatenate([b, np.zeros((self.k,) + b.shape[1:])], axis=0)
        with self._lock:
            sol = self._lu.solve(rhs)
        _check_residual(self.K, sol, rhs, "KKT solve")
        return sol[: self.n]


def solve_constrained(A, C, b) -> np.ndarray:
    """w with C w = 0 and w^T A v = b^T v for all v in ker(C)."""
    return ConstrainedSolver(A, C).solve(b)
