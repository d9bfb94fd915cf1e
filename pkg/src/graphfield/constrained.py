"""Gaussians under hard linear constraints A u = b.

The constraints are rotated onto a leading coordinate block by an orthogonal
change of basis T built per constraint group (groups = connected components
of the column-support graph, one per vertex in the intended application).
With u* = T u the constraint fixes u*_C and everything reduces to ordinary
sparse Gaussian conditioning on the free block u*_U: marginal likelihoods,
posteriors, and exact constraint-satisfying samples all come from
factorizations of Q*_UU and its data-updated version.

Because T is orthogonal blockwise, det T = +-1 and no Jacobian terms enter
the likelihood.  The returned log-density is fully normalized (it includes
the -(n/2) log(2 pi) constant), so values are comparable across parameter
values and integrate to one over the data.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import cho_factor, cho_solve, qr
from scipy.sparse.linalg import spsolve

from .sparse import SparseSymmetric

__all__ = [
    "ConstraintSystem",
    "ConstrainedModel",
    "DiagonalCov",
    "BlockDiagCov",
    "change_of_basis",
    "constrained_loglik",
    "constrained_posterior",
    "adjust_marginal",
]

_RANK_TOL = 1e-10


class ConstraintError(ValueError):
    pass


def _constraint_groups(A_csr):
    """Connected components of rows linked through shared columns."""
    k, _ = A_csr.shape
    parent = list(range(k))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    col_owner = {}
    for i in range(k):
        for j in A_csr.indices[A_csr.indptr[i]:A_csr.indptr[i + 1]]:
            if j in col_owner:
                a, b = find(i), find(col_owner[j])
                if a != b:
                    parent[b] = a
            else:
                col_owner[j] = i
    groups = {}
    for i in range(k):
        groups.setdefault(find(i), []).append(i)
    return [groups[r] for r in sorted(groups, key=lambda r: min(groups[r]))]


def change_of_basis(A, m=None):
    """Orthogonal T with A T^T supported on the leading k coordinates.

    T is orthogonal within each constraint group's column block and the
    identity elsewhere; the k constrained directions come first, ordered by
    group.  Raises if any group's rows are linearly dependent.
    """
    A = sp.csr_matrix(A)
    k, m_a = A.shape
    m = m_a if m is None else m
    if k == 0:
        return sp.identity(m, format="csr")
    rows_c = []   # (global_row, col_array, coeff_array) for constrained rows
    rows_u = []
    touched = np.zeros(m, dtype=bool)
    n_c = 0
    for group in _constraint_groups(A):
        cols = np.unique(np.concatenate([
            A.indices[A.indptr[i]:A.indptr[i + 1]] for i in group
        ]))
        Ag = A[group][:, cols].toarray()
        kg, mg = Ag.shape
        if kg > mg:
            raise ConstraintError(
                f"constraint group with rows {group} has more rows than columns"
            )
        Qfull, R = qr(Ag.T, mode="full")
        diag = np.abs(np.diag(R[:kg, :kg])) if kg else np.array([])
        if kg and diag.min() <= _RANK_TOL * max(1.0, diag.max()):
            raise ConstraintError(f"constraint group with rows {group} is rank deficient")
        Tg = Qfull.T
        for r in range(kg):
            rows_c.append((cols, Tg[r]))
        for r in range(kg, mg):
            rows_u.append((cols, Tg[r]))
        touched[cols] = True
        n_c += kg
    if n_c != k:
        raise ConstraintError("internal error: group rows do not cover A")
    data, ri, ci = [], [], []
    row = 0
    for cols, coeff in rows_c:
        ri.extend([row] * len(cols))
        ci.extend(cols.tolist())
        data.extend(coeff.tolist())
        row += 1
    for cols, coeff in rows_u:
        ri.extend([row] * len(cols))
        ci.extend(cols.tolist())
        data.extend(coeff.tolist())
        row += 1
    for j in np.nonzero(~touched)[0]:
        ri.append(row)
        ci.append(int(j))
        data.append(1.0)
        row += 1
    if row != m:
        raise ConstraintError("constraint columns exceed model dimension")
    return sp.csr_matrix((data, (ri, ci)), shape=(m, m))


@dataclass
class ConstraintSystem:
    """Hard constraints A u = b with their change-of-basis matrix."""

    A: sp.csr_matrix
    b: np.ndarray
    T: sp.csr_matrix = None
    m: int = None

    def __post_init__(self):
        self.A = sp.csr_matrix(self.A)
        self.b = np.asarray(self.b, dtype=float)
        if self.m is None:
            self.m = self.A.shape[1]
        if self.T is None:
            self.T = change_of_basis(self.A, self.m)
        if self.A.shape[0] != self.b.shape[0]:
            raise ConstraintError("A and b have inconsistent sizes")

    @property
    def k(self):
        return self.A.shape[0]

    @classmethod
    def none(cls, m):
        return cls(sp.csr_matrix((0, m)), np.zeros(0), m=m)

    def b_star(self):
        """Constrained-block coordinates: solves (A T^T)_C b* = b."""
        if self.k == 0:
            return np.zeros(0)
        Atilde = (self.A @ self.T.T).tocsc()
        Ac = Atilde[:, : self.k]
        res = spsolve(Ac, self.b)
        return np.atleast_1d(res)

    def stacked(self, extra_A, extra_b):
        """New system with additional constraint rows appended."""
        A = sp.vstack([self.A, sp.csr_matrix(extra_A)]).tocsr()
        b = np.concatenate([self.b, np.asarray(extra_b, dtype=float)])
        return ConstraintSystem(A, b, m=self.m)


# ---------------------------------------------------------------------------
# observation covariances
# ---------------------------------------------------------------------------

class DiagonalCov:
    """Independent observation noise with per-observation variances."""

    def __init__(self, var):
        self.var = np.atleast_1d(np.asarray(var, dtype=float))
        if np.any(self.var <= 0):
            raise ConstraintError("observation variances must be positive")
        self.n = len(self.var)
        self.logdet = float(np.sum(np.log(self.var)))

    def solve(self, r):
        return r / self.var if r.ndim == 1 else r / self.var[:, None]

    def bt_sinv_b(self, B):
        return (B.T @ B.multiply(1.0 / self.var[:, None])).tocsc()

    def bt_sinv_r(self, B, r):
        return B.T @ (r / self.var)

    def quad(self, r):
        return float(np.sum(r * r / self.var))


class BlockDiagCov:
    """Block-diagonal observation covariance given as (row index, block) pairs."""

    def __init__(self, blocks, n):
        self.n = n
        self.blocks = []
        covered = np.zeros(n, dtype=bool)
        logdet = 0.0
        for idx, blk in blocks:
            idx = np.asarray(idx, dtype=int)
            blk = np.atleast_2d(np.asarray(blk, dtype=float))
            if covered[idx].any():
                raise ConstraintError("observation blocks overlap")
            covered[idx] = True
            c = cho_factor(blk, lower=True)
            logdet += 2.0 * float(np.sum(np.log(np.diag(c[0]))))
            self.blocks.append((idx, blk, c))
        if not covered.all():
            raise ConstraintError("observation blocks do not cover all observations")
        self.logdet = logdet

    def solve(self, r):
        out = np.empty_like(r)
        for idx, _, c in self.blocks:
            out[idx] = cho_solve(c, r[idx])
        return out

    def bt_sinv_b(self, B):
        B = B.tocsr()
        data, ri, ci = [], [], []
        for idx, _, c in self.blocks:
            Bg = B[idx]
            cols = np.unique(Bg.indices)
            if len(cols) == 0:
                continue
            Bd = Bg[:, cols].toarray()
            M = Bd.T @ cho_solve(c, Bd)
            ri.extend(np.repeat(cols, len(cols)).tolist())
            ci.extend(np.tile(cols, len(cols)).tolist())
            data.extend(M.ravel().tolist())
        return sp.csc_matrix((data, (ri, ci)), shape=(B.shape[1], B.shape[1]))

    def bt_sinv_r(self, B, r):
        return B.T @ self.solve(r)

    def quad(self, r):
        return float(r @ self.solve(r))


# ---------------------------------------------------------------------------
# constrained model
# ---------------------------------------------------------------------------

@dataclass
class ConstrainedModel:
    """Prior N(mu, Q^{-1}) with observations y | u ~ N(B u, Sigma) and hard
    constraints A u = b."""

    mu: np.ndarray
    Q: SparseSymmetric
    constraints: ConstraintSystem
    B: sp.spmatrix = None
    noise: object = None  # DiagonalCov or BlockDiagCov

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        if self.B is not None:
            self.B = sp.csr_matrix(self.B)


class _Transformed:
    """Shared pieces of the likelihood and posterior computations."""

    def __init__(self, model: ConstrainedModel, y=None):
        con = model.constraints
        m, k = con.m, con.k
        T = con.T
        Qs = (T @ model.Q.A @ T.T).tocsc()
        self.T, self.m, self.k = T, m, k
        self.Q_UU = SparseSymmetric(Qs[k:, k:])
        self.b_star = con.b_star()
        mu_s = T @ model.mu
        if k:
            Q_UC = Qs[k:, :k]
            shift = self.Q_UU.solve(Q_UC @ (self.b_star - mu_s[:k]))
            self.mu_tilde = mu_s[k:] - shift
        else:
            self.mu_tilde = mu_s
        self.y = None
        if y is not None:
            y = np.asarray(y, dtype=float)
            Bs = (model.B @ T.T).tocsr()
            B_C, self.B_U = Bs[:, :k], Bs[:, k:]
            self.resid = y - B_C @ self.b_star
            self.noise = model.noise
            self.y = y
            Qhat = self.Q_UU.A + self.noise.bt_sinv_b(self.B_U)
            self.Qhat_UU = SparseSymmetric(Qhat)
            rhs = self.Q_UU.A @ self.mu_tilde + self.noise.bt_sinv_r(self.B_U, self.resid)
            self.mu_hat = self.Qhat_UU.solve(rhs)
        else:
            self.Qhat_UU = self.Q_UU
            self.mu_hat = self.mu_tilde

    def mean_full(self):
        return self.T.T @ np.concatenate([self.b_star, self.mu_hat])


def constrained_loglik(model: ConstrainedModel, y) -> float:
    """Log of the marginal density of y given A u = b.

    Normalization convention: all (2 pi) factors are kept, so the value is
    the exact log-density (the prior and posterior Gaussian normalizations
    over the free block cancel, leaving -(n/2) log(2 pi)).
    """
    if model.B is None or model.noise is None:
        raise ConstraintError("model carries no observation map")
    t = _Transformed(model, y)
    n = len(t.y)
    quad = (
        t.noise.quad(t.resid)
        + t.mu_tilde @ (t.Q_UU.A @ t.mu_tilde)
        - t.mu_hat @ (t.Qhat_UU.A @ t.mu_hat)
    )
    return float(
        0.5 * t.Q_UU.logdet
        - 0.5 * t.Qhat_UU.logdet
        - 0.5 * t.noise.logdet
        - 0.5 * n * np.log(2 * np.pi)
        - 0.5 * quad
    )


@dataclass
class ConstrainedPosterior:
    """Posterior of u given data and constraints, in factored form."""

    mean: np.ndarray
    _t: _Transformed = field(repr=False, default=None)

    def cov(self, i, j):
        """Posterior covariance entries between coordinate sets i and j."""
        ti = self._t.T[self._t.k:, np.atleast_1d(i)].toarray()
        tj = self._t.T[self._t.k:, np.atleast_1d(j)].toarray()
        if self._t.m == self._t.k:
            return np.zeros((ti.shape[1], tj.shape[1]))
        return ti.T @ self._t.Qhat_UU.solve(tj)

    def marginal_variance(self, idx):
        idx = np.atleast_1d(idx)
        out = np.empty(len(idx))
        for a, i in enumerate(idx):
            ti = self._t.T[self._t.k:, [int(i)]].toarray().ravel()
            if ti.any():
                out[a] = float(ti @ self._t.Qhat_UU.solve(ti))
            else:
                out[a] = 0.0
        return out

    def sample(self, rng, size=None):
        """Exact posterior draws; every draw satisfies A u = b."""
        t = self._t
        nU = t.m - t.k
        one = size is None
        ns = 1 if one else int(size)
        z = rng.standard_normal((nU, ns))
        w = t.mu_hat[:, None] + (t.Qhat_UU.sample_transform(z) if nU else np.zeros((0, ns)))
        full = np.vstack([np.repeat(t.b_star[:, None], ns, axis=1), w])
        u = t.T.T @ full
        return u[:, 0] if one else u.T


def constrained_posterior(model: ConstrainedModel, y=None) -> ConstrainedPosterior:
    """Posterior of u | A u = b (and | y when observations are supplied)."""
    if y is not None and (model.B is None or model.noise is None):
        raise ConstraintError("model carries no observation map")
    t = _Transformed(model, y)
    return ConstrainedPosterior(mean=t.mean_full(), _t=t)


# ---------------------------------------------------------------------------
# marginal adjustment (used as an oracle for the free-edge precision)
# ---------------------------------------------------------------------------

def adjust_marginal(sigma_joint, n_a, H):
    """Replace the B-marginal of a joint zero-mean Gaussian by N(0, H).

    The conditional of the A-block given the B-block is preserved.  Returns
    (Sigma_star, Q_star).  A singular H is handled through its pseudo-inverse
    and the projection onto its range.
    """
    S = np.asarray(sigma_joint, dtype=float)
    H = np.atleast_2d(np.asarray(H, dtype=float))
    n = S.shape[0]
    n_b = n - n_a
    if H.shape != (n_b, n_b):
        raise ConstraintError("H has wrong shape for the B-block")
    SAA, SAB = S[:n_a, :n_a], S[:n_a, n_a:]
    SBA, SBB = S[n_a:, :n_a], S[n_a:, n_a:]
    Q = np.linalg.inv(S)
    QAA, QAB = Q[:n_a, :n_a], Q[:n_a, n_a:]
    QBA, QBB = Q[n_a:, :n_a], Q[n_a:, n_a:]
    W = np.linalg.solve(SBB, SBA)  # Sigma_BB^{-1} Sigma_BA
    cond = SAA - SAB @ W
    sigma_star = np.block([
        [cond + W.T @ H @ W, W.T @ H],
        [H @ W, H],
    ])
    eigvals = np.linalg.eigvalsh(H)
    tol = max(1e-12, 1e-12 * max(abs(eigvals.max()), 1.0))
    if eigvals.min() < -tol:
        raise ConstraintError("H must be nonnegative definite")
    if eigvals.min() > tol:
        Hinv = np.linalg.inv(H)
        q_star = np.block([
            [QAA, QAB],
            [QBA, Hinv + QBA @ np.linalg.solve(QAA, QAB)],
        ])
    else:
        Hdag = np.linalg.pinv(H)
        P = Hdag @ H
        q_star = np.block([
            [QAA, QAB @ P],
            [P @ QBA, Hdag + P @ (QBA @ np.linalg.solve(QAA, QAB)) @ P],
        ])
    return sigma_star, q_star
