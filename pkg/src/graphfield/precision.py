"""Global sparse precision assembly on metric graphs.

alpha=1 gives a precision directly on the vertices (one row per vertex,
loops contribute a tanh term after their midpoint vertex is integrated
out).  alpha=2 gives a block-diagonal precision over per-edge endpoint
states [u(0), u'(0), u(T), u'(T)] together with the vertex constraint
system: per vertex, deg-1 chained continuity rows on values and one row
forcing the outward derivatives to sum to zero.  The outward derivative is
+u' at an edge's lower endpoint and -u' at its upper endpoint.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .constrained import ConstraintSystem
from .graph import LOWER, UPPER, MetricGraph, split_loops_and_subdivide
from .kernels import ModelParams, _alpha1_q, edge_precision
from .sparse import SparseSymmetric

__all__ = [
    "assemble_alpha1",
    "assemble_alpha1_adjusted",
    "assemble_alpha2_system",
    "extended_precision",
    "alpha2_state_index",
]


class AssemblyError(ValueError):
    pass


def assemble_alpha1(g: MetricGraph, params: ModelParams, adjusted=False) -> SparseSymmetric:
    """Vertex precision of the alpha=1 field on g.

    Loops and parallel edges are handled exactly; with ``adjusted`` the
    degree-1 boundary condition is changed so that leaf vertices keep the
    stationary marginal (adds kappa*tau^2 to their diagonal).
    """
    if params.alpha != 1:
        raise AssemblyError("assemble_alpha1 requires alpha=1")
    f = 2.0 * params.kappa * params.tau**2
    n = g.n_vertices
    rows, cols, vals = [], [], []
    diag = np.zeros(n)
    for e in range(g.n_edges):
        u, v, ell = g.edge_u[e], g.edge_v[e], g.edge_length[e]
        if u == v:
            diag[u] += np.tanh(params.kappa * ell / 2.0)
            continue
        qd, qo = _alpha1_q(params.kappa, ell)
        diag[u] += qd
        diag[v] += qd
        rows += [u, v]
        cols += [v, u]
        vals += [qo, qo]
    if adjusted:
        for v in range(n):
            if g.degree(v) == 1:
                diag[v] += 0.5
    rows += list(range(n))
    cols += list(range(n))
    vals += diag.tolist()
    A = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsc()
    A.sum_duplicates()
    return SparseSymmetric(f * A)


def assemble_alpha1_adjusted(g: MetricGraph, params: ModelParams) -> SparseSymmetric:
    """Boundary-adjusted variant: stationary marginals at degree-1 vertices."""
    return assemble_alpha1(g, params, adjusted=True)


def alpha2_state_index(e, end, deriv):
    """Coordinate of (edge, endpoint, value/derivative) in the stacked state."""
    return 4 * e + 2 * (1 if end == UPPER else 0) + (1 if deriv else 0)


def assemble_alpha2_system(g: MetricGraph, params: ModelParams):
    """(block precision, Kirchhoff constraints) for the alpha=2 field.

    Loop edges must be split beforehand (they would tie both endpoints of
    one block to the same vertex, which the chained-difference constraint
    rows do not express).
    """
    if params.alpha != 2:
        raise AssemblyError("assemble_alpha2_system requires alpha=2")
    if g.has_loops():
        raise AssemblyError("alpha=2 assembly needs loop-free input; split loops first")
    m = 4 * g.n_edges
    Q = sp.block_diag(
        [edge_precision(params, g.edge_length[e]) for e in range(g.n_edges)],
        format="csc",
    )
    rows, cols, vals = [], [], []
    r = 0
    for v in range(g.n_vertices):
        inc = g.incident[v]
        # continuity: chained differences of values over the incident edges
        for (e1, n1), (e2, n2) in zip(inc[:-1], inc[1:]):
            rows += [r, r]
            cols += [alpha2_state_index(e1, n1, 0), alpha2_state_index(e2, n2, 0)]
            vals += [1.0, -1.0]
            r += 1
        # Kirchhoff: outward derivatives sum to zero
        for e, end in inc:
            rows.append(r)
            cols.append(alpha2_state_index(e, end, 1))
            vals.append(1.0 if end == LOWER else -1.0)
        r += 1
    A = sp.csr_matrix((vals, (rows, cols)), shape=(r, m))
    return SparseSymmetric(Q), ConstraintSystem(A, np.zeros(r), m=m)


def extended_precision(g: MetricGraph, params: ModelParams, sites):
    """alpha=1 precision on the graph extended with the given sites.

    Returns (precision, site vertex indices, extended graph).  Duplicate
    sites and sites on existing vertices collapse to the same index.
    """
    if params.alpha != 1:
        raise AssemblyError("extended_precision requires alpha=1")
    gg, smap = split_loops_and_subdivide(g, extra_sites=list(sites))
    Q = assemble_alpha1(gg, params)
    idx = []
    for p in sites:
        q = smap.map_point(p)
        v = gg.point_as_vertex(q)
        if v is None:
            raise AssemblyError(f"site {p} did not become a vertex")
        idx.append(v)
    return Q, np.array(idx, dtype=int), gg, smap


def marginal_site_precision(g: MetricGraph, params: ModelParams, sites):
    """Dense precision of the field at the sites (vertices integrated out)."""
    Q, idx, gg, _ = extended_precision(g, params, sites)
    n = Q.n
    keep = np.zeros(n, dtype=bool)
    keep[idx] = True
    others = np.nonzero(~keep)[0]
    Qd = Q.A
    Q_ss = Qd[np.ix_(idx, idx)].toarray()
    if len(others) == 0:
        return Q_ss
    Q_sv = Qd[np.ix_(idx, others)].toarray()
    Q_vv = SparseSymmetric(Qd[np.ix_(others, others)])
    return Q_ss - Q_sv @ Q_vv.solve(Q_sv.T)
