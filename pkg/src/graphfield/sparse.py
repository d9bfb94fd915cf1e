"""Sparse symmetric positive definite matrices with a cached factorization.

The factorization is a sparse LDL^T obtained from SuperLU in symmetric mode
with diagonal pivoting disabled; for a positive definite matrix this yields
identical row/column permutations and positive pivots, giving cheap access
to the log-determinant, solves, exact sampling transforms, and selected
inverse entries.  A dense Cholesky fallback covers the rare case where
SuperLU abandons the symmetric ordering.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import cho_solve, cholesky

__all__ = ["SparseSymmetric", "FactorizationError"]


class FactorizationError(RuntimeError):
    pass


class _DenseFactor:
    def __init__(self, A):
        try:
            self.L = cholesky(A, lower=True)
        except np.linalg.LinAlgError as exc:
            raise FactorizationError(f"matrix is not positive definite: {exc}") from exc
        self.logdet = 2.0 * np.sum(np.log(np.diag(self.L)))

    def solve(self, b):
        return cho_solve((self.L, True), b)

    def sample_transform(self, z):
        # x = L^{-T} z has covariance A^{-1}
        from scipy.linalg import solve_triangular

        return solve_triangular(self.L.T, z, lower=False)


class _SuperLUFactor:
    def __init__(self, A_csc):
        try:
            self.lu = spla.splu(
                A_csc,
                permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=0.0,
                options=dict(SymmetricMode=True),
            )
        except RuntimeError as exc:
            raise FactorizationError(f"sparse factorization failed: {exc}") from exc
        self.symmetric = np.array_equal(self.lu.perm_r, self.lu.perm_c)
        d = self.lu.U.diagonal()
        if not self.symmetric or np.any(d <= 0) or not np.all(np.isfinite(d)):
            raise FactorizationError("matrix is not positive definite")
        self._d = d
        self._inv_perm = np.argsort(self.lu.perm_c)
        self.logdet = float(np.sum(np.log(d)))
        self._U_csr = None

    def solve(self, b):
        if b.ndim == 1:
            return self.lu.solve(b)
        return self.lu.solve(np.ascontiguousarray(b))

    def sample_transform(self, z):
        # A[inv_p][:, inv_p] = L D L^T; x[inv_p] = U^{-1} sqrt(D) z gives
        # Cov(x) = A^{-1} exactly.
        if self._U_csr is None:
            self._U_csr = self.lu.U.tocsr()
        scale = np.sqrt(self._d)
        scaled = scale[:, None] * z if z.ndim > 1 else scale * z
        w = spla.spsolve_triangular(self._U_csr, scaled, lower=False)
        x = np.empty_like(w)
        x[self._inv_perm] = w
        return x


class SparseSymmetric:
    """Symmetric positive definite matrix with lazy factorization.

    Construct from triplets or any scipy sparse/dense matrix; only the data
    as given is stored (callers supply the full symmetric pattern).
    """

    def __init__(self, A, dense_threshold=64):
        if sp.issparse(A):
            self.A = A.tocsc()
        else:
            self.A = sp.csc_matrix(np.asarray(A, dtype=float))
        if self.A.shape[0] != self.A.shape[1]:
            raise ValueError("matrix must be square")
        self.n = self.A.shape[0]
        self._dense_threshold = dense_threshold
        self._factor = None

    @classmethod
    def from_triplets(cls, n, rows, cols, vals):
        A = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsc()
        A.sum_duplicates()
        return cls(A)

    # ---- basic algebra ------------------------------------------------------

    def toarray(self):
        return self.A.toarray()

    def __add__(self, other):
        B = other.A if isinstance(other, SparseSymmetric) else other
        return SparseSymmetric(self.A + B)

    def scaled(self, c):
        return SparseSymmetric(self.A * c)

    def submatrix(self, idx):
        idx = np.asarray(idx)
        return SparseSymmetric(self.A[np.ix_(idx, idx)])

    # ---- factorization-backed operations ------------------------------------

    @property
    def factor(self):
        if self._factor is None:
            if self.n <= self._dense_threshold:
                self._factor = _DenseFactor(self.A.toarray())
            else:
                try:
                    self._factor = _SuperLUFactor(self.A)
                except FactorizationError:
                    # symmetric-mode refusal; retry densely before giving up
                    self._factor = _DenseFactor(self.A.toarray())
        return self._factor

    @property
    def logdet(self):
        return self.factor.logdet

    def solve(self, b):
        return self.factor.solve(np.asarray(b, dtype=float))

    def sample_transform(self, z):
        """Map iid standard normals z to a draw with covariance A^{-1}."""
        return self.factor.sample_transform(np.asarray(z, dtype=float))

    def inv_cols(self, idx):
        """Columns of A^{-1} at the given indices (n x len(idx))."""
        idx = np.atleast_1d(idx)
        E = np.zeros((self.n, len(idx)))
        E[idx, np.arange(len(idx))] = 1.0
        return self.solve(E)

    def inv_diag_at(self, idx):
        """Selected diagonal entries of A^{-1}."""
        idx = np.atleast_1d(idx)
        cols = self.inv_cols(idx)
        return cols[idx, np.arange(len(idx))]

    def quad_form(self, x):
        return float(x @ (self.A @ x))

    def save_matrix_market(self, path):
        from scipy.io import mmwrite

        mmwrite(path, self.A.tocoo(), symmetry="general")
