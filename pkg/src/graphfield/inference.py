"""Likelihood evaluation, maximum-likelihood fitting, and kriging.

Two algebraically equal likelihood routes exist for alpha=1: the extended
graph (observation sites inserted as vertices, noise folded in through the
posterior precision) and the integrated form (edge interiors conditioned
out, observations entering through per-edge conditional maps).  alpha=2
uses the constrained machinery with per-edge conditional observation maps
built from the derivative-augmented stationary kernel.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize

from .constrained import (
    BlockDiagCov,
    ConstrainedModel,
    DiagonalCov,
    constrained_loglik,
    constrained_posterior,
)
from .graph import MetricGraph, PointOnEdge, split_loops_and_subdivide
from .kernels import ModelParams, stationary_block
from .precision import (
    alpha2_state_index,
    assemble_alpha1,
    assemble_alpha2_system,
)
from .sparse import SparseSymmetric

__all__ = [
    "Dataset",
    "FitResult",
    "loglik",
    "loglik_alpha1_extended",
    "loglik_alpha1_integrated",
    "loglik_alpha2",
    "fit_mle",
    "krig_predict",
    "covariance_trace",
    "variance_trace",
]

_LOG2PI = np.log(2.0 * np.pi)


class InferenceError(ValueError):
    pass


@dataclass
class Dataset:
    """Observation sites and values; the noise level lives in ModelParams."""

    sites: list
    y: np.ndarray

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        if len(self.sites) != len(self.y):
            raise InferenceError("sites and values have different lengths")
        if not np.all(np.isfinite(self.y)):
            raise InferenceError("observations must be finite")

    @property
    def n(self):
        return len(self.y)

    def to_csv(self, path):
        with open(path, "w") as f:
            f.write("edge_id,offset,value\n")
            for p, v in zip(self.sites, self.y):
                f.write(f"{p.edge},{p.offset:.17g},{v:.17g}\n")

    @classmethod
    def from_csv(cls, path):
        sites, vals = [], []
        with open(path) as f:
            header = f.readline()
            for line in f:
                if not line.strip():
                    continue
                e, t, v = line.split(",")
                sites.append(PointOnEdge(int(e), float(t)))
                vals.append(float(v))
        return cls(sites, np.array(vals))


# ---------------------------------------------------------------------------
# extension plumbing shared by the likelihoods and kriging
# ---------------------------------------------------------------------------

def _extend(g, sites):
    """Split loops, insert sites as vertices; return (graph, site vertex ids)."""
    gg, smap = split_loops_and_subdivide(g, extra_sites=list(sites))
    idx = np.array([gg.point_as_vertex(smap.map_point(p)) for p in sites], dtype=int)
    return gg, idx, smap


def _gmrf_marginal_loglik(Q: SparseSymmetric, B, noise, y):
    """log N(y; 0, B Q^{-1} B^T + Sigma) in sparse precision form."""
    Qp = SparseSymmetric(Q.A + noise.bt_sinv_b(B))
    rhs = noise.bt_sinv_r(B, y)
    mu = Qp.solve(rhs)
    return float(
        0.5 * Q.logdet
        - 0.5 * Qp.logdet
        - 0.5 * noise.logdet
        - 0.5 * len(y) * _LOG2PI
        - 0.5 * noise.quad(y)
        + 0.5 * mu @ (Qp.A @ mu)
    )


def _collapse_exact_duplicates(idx, y):
    """With sigma=0, repeated sites must agree; returns deduplicated (idx, y)."""
    seen = {}
    keep_idx, keep_y = [], []
    for v, val in zip(idx, y):
        if v in seen:
            if abs(seen[v] - val) > 1e-12:
                raise InferenceError(
                    f"conflicting exact observations at the same site (vertex {v}): "
                    f"{seen[v]} vs {val}; the likelihood is -inf"
                )
            continue
        seen[v] = val
        keep_idx.append(v)
        keep_y.append(val)
    return np.array(keep_idx, dtype=int), np.array(keep_y)


def loglik_alpha1_extended(g: MetricGraph, params: ModelParams, data: Dataset) -> float:
    """Exact alpha=1 log-likelihood via the extended graph."""
    if params.alpha != 1:
        raise InferenceError("alpha=1 likelihood requested with alpha != 1")
    gg, idx, _ = _extend(g, data.sites)
    Q = assemble_alpha1(gg, params)
    if params.sigma > 0:
        B = sp.csr_matrix(
            (np.ones(data.n), (np.arange(data.n), idx)), shape=(data.n, Q.n)
        )
        noise = DiagonalCov(np.full(data.n, params.sigma**2))
        return _gmrf_marginal_loglik(Q, B, noise, data.y)
    # direct observations: marginalize the non-observed vertices through
    # log|Q_s| = log|Qbar| - log|Q_vv| and one sparse matvec for the
    # quadratic form (never forms the dense marginal)
    uidx, uy = _collapse_exact_duplicates(idx, data.y)
    keep = np.zeros(Q.n, dtype=bool)
    keep[uidx] = True
    others = np.nonzero(~keep)[0]
    w = np.zeros(Q.n)
    w[uidx] = uy
    full = Q.A @ w
    quad = float(w @ full)
    logdet = Q.logdet
    if len(others):
        Qvv = SparseSymmetric(Q.A[np.ix_(others, others)])
        c = full[others]
        quad -= float(c @ Qvv.solve(c))
        logdet -= Qvv.logdet
    return float(0.5 * logdet - 0.5 * len(uy) * _LOG2PI - 0.5 * quad)


def _edge_observation_map(g, params, site_idx_offsets, n_obs, state_cols, d):
    """Per-edge conditional maps: B rows and noise blocks for grouped sites.

    site_idx_offsets: dict edge -> list of (obs row, offset); state_cols(e)
    gives the 2d global columns of edge e's endpoint state.
    """
    rows, cols, vals = [], [], []
    blocks = []
    s2 = params.sigma**2
    for e, entries in site_idx_offsets.items():
        obs_rows, offsets = zip(*entries)
        T = g.edge_length[e]
        Rtt = np.block([
            [stationary_block(params, 0.0, 0.0), stationary_block(params, 0.0, T)],
            [stationary_block(params, T, 0.0), stationary_block(params, 0.0, 0.0)],
        ])
        ne = len(offsets)
        Rst = np.empty((ne, 2 * d))
        for i, s in enumerate(offsets):
            Rst[i, :d] = stationary_block(params, s, 0.0)[0]
            Rst[i, d:] = stationary_block(params, s, T)[0]
        Rss = np.empty((ne, ne))
        for i, si in enumerate(offsets):
            for j, sj in enumerate(offsets):
                Rss[i, j] = stationary_block(params, si, sj)[0, 0]
        W = np.linalg.solve(Rtt, Rst.T).T
        Sig = Rss - W @ Rst.T + s2 * np.eye(ne)
        gcols = state_cols(e)
        for i, r in enumerate(obs_rows):
            for j, c in enumerate(gcols):
                rows.append(r)
                cols.append(c)
                vals.append(W[i, j])
        blocks.append((np.array(obs_rows, dtype=int), Sig))
    return rows, cols, vals, blocks


def loglik_alpha1_integrated(g: MetricGraph, params: ModelParams, data: Dataset) -> float:
    """alpha=1 log-likelihood with edge interiors integrated out (sigma > 0)."""
    if params.alpha != 1:
        raise InferenceError("alpha=1 likelihood requested with alpha != 1")
    if params.sigma <= 0:
        raise InferenceError("the integrated form requires sigma > 0")
    Q = assemble_alpha1(g, params)
    rows, cols, vals = [], [], []
    blocks = []
    by_edge = {}
    vertex_rows = []
    for i, p in enumerate(data.sites):
        g.validate_point(p)
        v = g.point_as_vertex(p)
        if v is not None:
            vertex_rows.append((i, v))
        else:
            by_edge.setdefault(p.edge, []).append((i, p.offset))
    if vertex_rows:
        for i, v in vertex_rows:
            rows.append(i)
            cols.append(v)
            vals.append(1.0)
        vidx = np.array([i for i, _ in vertex_rows], dtype=int)
        blocks.append((vidx, params.sigma**2 * np.eye(len(vidx))))
    er, ec, ev, eblocks = _edge_observation_map(
        g, params, by_edge, data.n,
        state_cols=lambda e: [g.edge_u[e], g.edge_v[e]],
        d=1,
    )
    rows += er
    cols += ec
    vals += ev
    blocks += eblocks
    B = sp.csr_matrix((vals, (rows, cols)), shape=(data.n, Q.n))
    noise = BlockDiagCov(blocks, data.n)
    return _gmrf_marginal_loglik(Q, B, noise, data.y)


def _alpha2_model(g, params, data):
    """Constrained model for alpha=2 observations (loops pre-split here)."""
    gg, smap = split_loops_and_subdivide(g)
    Q, cons = assemble_alpha2_system(gg, params)
    by_edge = {}
    for i, p in enumerate(data.sites):
        g.validate_point(p)
        q = smap.map_point(p)
        by_edge.setdefault(q.edge, []).append((i, q.offset))
    rows, cols, vals, blocks = _edge_observation_map(
        gg, params, by_edge, data.n,
        state_cols=lambda e: [alpha2_state_index(e, 0, 0), alpha2_state_index(e, 0, 1),
                              alpha2_state_index(e, 1, 0), alpha2_state_index(e, 1, 1)],
        d=2,
    )
    B = sp.csr_matrix((vals, (rows, cols)), shape=(data.n, Q.n))
    noise = BlockDiagCov(blocks, data.n)
    return ConstrainedModel(mu=np.zeros(Q.n), Q=Q, constraints=cons, B=B, noise=noise)


def loglik_alpha2(g: MetricGraph, params: ModelParams, data: Dataset) -> float:
    """alpha=2 log-likelihood via the constrained marginal density (sigma > 0)."""
    if params.alpha != 2:
        raise InferenceError("alpha=2 likelihood requested with alpha != 2")
    if params.sigma <= 0:
        raise InferenceError("alpha=2 likelihood requires sigma > 0")
    model = _alpha2_model(g, params, data)
    return constrained_loglik(model, data.y)


def loglik(g, params, data):
    """Dispatch on alpha; alpha=1 uses the extended-graph form."""
    if params.alpha == 1:
        return loglik_alpha1_extended(g, params, data)
    return loglik_alpha2(g, params, data)


# ---------------------------------------------------------------------------
# maximum likelihood
# ---------------------------------------------------------------------------

@dataclass
class FitResult:
    params: ModelParams
    loglik: float
    converged: bool
    n_evals: int
    trace: list = field(default_factory=list)

    def to_json_dict(self):
        return {
            "alpha": self.params.alpha,
            "kappa": self.params.kappa,
            "tau": self.params.tau,
            "sigma": self.params.sigma,
            "loglik": self.loglik,
            "converged": self.converged,
            "n_evals": self.n_evals,
            "trace": self.trace,
        }


def fit_mle(g, data, alpha, init: ModelParams = None, fixed=(), max_iter=500):
    """Maximize the likelihood over log-parameterized (kappa, tau, sigma).

    ``fixed`` names parameters held at their init values.  Derivative-free
    Nelder-Mead simplex; tolerance 1e-8 on the log-likelihood.  On failure
    to converge the best iterate is returned with converged=False.
    """
    if data.n == 0:
        raise InferenceError("cannot fit with no data")
    if init is None:
        init = ModelParams(alpha=alpha, kappa=1.0, tau=1.0, sigma=0.1)
    fixed = set(fixed)
    names = [nm for nm in ("kappa", "tau", "sigma") if nm not in fixed]
    if "sigma" in names and init.sigma <= 0:
        raise InferenceError("free sigma needs a positive starting value")
    trace = []

    def build(theta):
        vals = dict(kappa=init.kappa, tau=init.tau, sigma=init.sigma)
        for nm, t in zip(names, theta):
            vals[nm] = float(np.exp(t))
        return ModelParams(alpha=alpha, **vals)

    def objective(theta):
        p = build(theta)
        try:
            ll = loglik(g, p, data)
        except Exception:
            return 1e10
        trace.append({"kappa": p.kappa, "tau": p.tau, "sigma": p.sigma, "loglik": ll})
        return -ll

    if not names:
        ll = loglik(g, init, data)
        return FitResult(params=init, loglik=ll, converged=True, n_evals=1,
                         trace=[{"kappa": init.kappa, "tau": init.tau,
                                 "sigma": init.sigma, "loglik": ll}])
    x0 = np.log([getattr(init, nm) for nm in names])
    res = minimize(
        objective, x0, method="Nelder-Mead",
        options=dict(fatol=1e-8, xatol=1e-8, maxiter=max_iter, maxfev=4 * max_iter),
    )
    best = build(res.x)
    return FitResult(
        params=best,
        loglik=-res.fun,
        converged=bool(res.success),
        n_evals=int(res.nfev),
        trace=trace,
    )


# ---------------------------------------------------------------------------
# kriging
# ---------------------------------------------------------------------------

def krig_predict(g: MetricGraph, params: ModelParams, data: Dataset, targets):
    """Exact conditional mean and variance of the field at the targets.

    Observation and target sites are inserted into the graph, so prediction
    is plain Gaussian conditioning at vertex level.  With sigma=0 the
    observations enter as hard constraints (alpha=2) or by exact
    conditioning (alpha=1).
    """
    for p in targets:
        g.validate_point(p)
    all_sites = list(data.sites) + list(targets)
    if params.alpha == 1:
        gg, idx, _ = _extend(g, all_sites)
        oidx, tidx = idx[: data.n], idx[data.n:]
        Q = assemble_alpha1(gg, params)
        if params.sigma > 0:
            B = sp.csr_matrix(
                (np.ones(data.n), (np.arange(data.n), oidx)), shape=(data.n, Q.n)
            )
            noise = DiagonalCov(np.full(data.n, params.sigma**2))
            Qp = SparseSymmetric(Q.A + noise.bt_sinv_b(B))
            mu = Qp.solve(noise.bt_sinv_r(B, data.y))
            return mu[tidx], Qp.inv_diag_at(tidx)
        uo, uy = _collapse_exact_duplicates(oidx, data.y)
        obs_set = {int(v): float(val) for v, val in zip(uo, uy)}
        rest = np.array([v for v in range(Q.n) if v not in obs_set], dtype=int)
        pos_in_rest = {int(v): i for i, v in enumerate(rest)}
        Qd = Q.A
        Qrr = SparseSymmetric(Qd[np.ix_(rest, rest)])
        Qro = Qd[np.ix_(rest, uo)].toarray()
        mean_rest = -Qrr.solve(Qro @ uy)
        means = np.empty(len(tidx))
        varis = np.empty(len(tidx))
        for i, v in enumerate(tidx):
            v = int(v)
            if v in obs_set:
                means[i] = obs_set[v]
                varis[i] = 0.0
            else:
                j = pos_in_rest[v]
                means[i] = mean_rest[j]
                varis[i] = Qrr.inv_diag_at([j])[0]
        return means, varis
    # alpha = 2
    gg, smap = split_loops_and_subdivide(g, extra_sites=all_sites)
    Q, cons = assemble_alpha2_system(gg, params)

    def value_coord(p):
        v = gg.point_as_vertex(smap.map_point(p))
        e, end = gg.incident[v][0]
        return alpha2_state_index(e, end, 0)

    ocols = [value_coord(p) for p in data.sites]
    tcols = [value_coord(p) for p in targets]
    if params.sigma > 0:
        B = sp.csr_matrix(
            (np.ones(data.n), (np.arange(data.n), ocols)), shape=(data.n, Q.n)
        )
        noise = DiagonalCov(np.full(data.n, params.sigma**2))
        model = ConstrainedModel(mu=np.zeros(Q.n), Q=Q, constraints=cons,
                                 B=B, noise=noise)
        post = constrained_posterior(model, data.y)
    else:
        rows = sp.csr_matrix(
            (np.ones(data.n), (np.arange(data.n), ocols)), shape=(data.n, Q.n)
        )
        cons = cons.stacked(rows, data.y)
        model = ConstrainedModel(mu=np.zeros(Q.n), Q=Q, constraints=cons)
        post = constrained_posterior(model)
    return post.mean[tcols], post.marginal_variance(tcols)


# ---------------------------------------------------------------------------
# prior moment traces (CLI report path)
# ---------------------------------------------------------------------------

def _edge_grid(g, resolution):
    """Per-edge offsets at roughly the requested spacing, endpoints included."""
    out = []
    for e in range(g.n_edges):
        ell = g.edge_length[e]
        npts = max(2, int(np.ceil(ell / resolution)) + 1)
        out.append((e, np.linspace(0.0, ell, npts)))
    return out


def _alpha1_edge_weights(params, T, offsets):
    Rtt = np.array([
        [stationary_block(params, 0.0, 0.0)[0, 0], stationary_block(params, 0.0, T)[0, 0]],
        [stationary_block(params, T, 0.0)[0, 0], stationary_block(params, 0.0, 0.0)[0, 0]],
    ])
    Rst = np.column_stack([
        [stationary_block(params, s, 0.0)[0, 0] for s in offsets],
        [stationary_block(params, s, T)[0, 0] for s in offsets],
    ])
    W = np.linalg.solve(Rtt, Rst.T).T
    condvar = np.array([
        stationary_block(params, s, s)[0, 0] - W[i] @ Rst[i]
        for i, s in enumerate(offsets)
    ])
    return W, condvar


def covariance_trace(g: MetricGraph, params: ModelParams, s0: PointOnEdge, resolution):
    """Cov(u(s0), u(t)) for t on a grid along every edge.

    Returns a list of (edge_id, offset, value) in original coordinates.
    """
    g.validate_point(s0)
    if params.alpha == 1:
        gg, idx, smap = _extend(g, [s0])
        Q = assemble_alpha1(gg, params)
        col = Q.inv_cols([idx[0]])[:, 0]
        rows = []
        for e, offs in _edge_grid(g, resolution):
            mapped = [smap.map_point(PointOnEdge(e, t)) for t in offs]
            for t, q in zip(offs, mapped):
                v = gg.point_as_vertex(q)
                if v is not None:
                    rows.append((e, float(t), float(col[v])))
                else:
                    T = gg.edge_length[q.edge]
                    W, _ = _alpha1_edge_weights(params, T, [q.offset])
                    cu, cv = col[gg.edge_u[q.edge]], col[gg.edge_v[q.edge]]
                    rows.append((e, float(t), float(W[0] @ [cu, cv])))
        return rows
    # alpha=2: one column of the constrained state covariance
    gg, smap = split_loops_and_subdivide(g, extra_sites=[s0])
    Q, cons = assemble_alpha2_system(gg, params)
    model = ConstrainedModel(mu=np.zeros(Q.n), Q=Q, constraints=cons)
    post = constrained_posterior(model)
    v0 = gg.point_as_vertex(smap.map_point(s0))
    e0, end0 = gg.incident[v0][0]
    c0 = alpha2_state_index(e0, end0, 0)
    col = post.cov(np.arange(Q.n), [c0])[:, 0]
    rows = []
    for e, offs in _edge_grid(g, resolution):
        for t in offs:
            q = smap.map_point(PointOnEdge(e, t))
            ge = q.edge
            T = gg.edge_length[ge]
            Rtt = np.block([
                [stationary_block(params, 0.0, 0.0), stationary_block(params, 0.0, T)],
                [stationary_block(params, T, 0.0), stationary_block(params, 0.0, 0.0)],
            ])
            Rst = np.concatenate([
                stationary_block(params, q.offset, 0.0)[0],
                stationary_block(params, q.offset, T)[0],
            ])
            w = np.linalg.solve(Rtt, Rst)
            gcols = [alpha2_state_index(ge, 0, 0), alpha2_state_index(ge, 0, 1),
                     alpha2_state_index(ge, 1, 0), alpha2_state_index(ge, 1, 1)]
            # s0 is a vertex of the extended graph, never interior to ge,
            # so no shared-edge remainder enters
            base = float(w @ col[gcols])
            if not (0.0 < q.offset < T):
                vq = gg.point_as_vertex(q)
                eq, endq = gg.incident[vq][0]
                base = float(col[alpha2_state_index(eq, endq, 0)])
            rows.append((e, float(t), base))
    return rows


def variance_trace(g: MetricGraph, params: ModelParams, resolution, adjusted=False):
    """Marginal variances of the field on a grid along every edge."""
    if params.alpha == 1:
        gg, smap = split_loops_and_subdivide(g)
        Q = assemble_alpha1(gg, params, adjusted=adjusted)
        cols = Q.inv_cols(np.arange(Q.n))
        rows = []
        for e, offs in _edge_grid(g, resolution):
            for t in offs:
                q = smap.map_point(PointOnEdge(e, t))
                v = gg.point_as_vertex(q)
                if v is not None:
                    rows.append((e, float(t), float(cols[v, v])))
                    continue
                T = gg.edge_length[q.edge]
                u0, u1 = gg.edge_u[q.edge], gg.edge_v[q.edge]
                W, cvar = _alpha1_edge_weights(params, T, [q.offset])
                Se = np.array([[cols[u0, u0], cols[u0, u1]], [cols[u1, u0], cols[u1, u1]]])
                rows.append((e, float(t), float(cvar[0] + W[0] @ Se @ W[0])))
        return rows
    if adjusted:
        raise InferenceError("the boundary adjustment is defined for alpha=1")
    gg, smap = split_loops_and_subdivide(g)
    Q, cons = assemble_alpha2_system(gg, params)
    model = ConstrainedModel(mu=np.zeros(Q.n), Q=Q, constraints=cons)
    post = constrained_posterior(model)
    rows = []
    edge_cov = {}
    for e, offs in _edge_grid(g, resolution):
        for t in offs:
            q = smap.map_point(PointOnEdge(e, t))
            ge = q.edge
            if ge not in edge_cov:
                gcols = [alpha2_state_index(ge, 0, 0), alpha2_state_index(ge, 0, 1),
                         alpha2_state_index(ge, 1, 0), alpha2_state_index(ge, 1, 1)]
                edge_cov[ge] = (gcols, post.cov(gcols, gcols))
            gcols, Se = edge_cov[ge]
            T = gg.edge_length[ge]
            Rtt = np.block([
                [stationary_block(params, 0.0, 0.0), stationary_block(params, 0.0, T)],
                [stationary_block(params, T, 0.0), stationary_block(params, 0.0, 0.0)],
            ])
            Rst = np.concatenate([
                stationary_block(params, q.offset, 0.0)[0],
                stationary_block(params, q.offset, T)[0],
            ])
            w = np.linalg.solve(Rtt, Rst)
            cvar = stationary_block(params, q.offset, q.offset)[0, 0] - w @ Rst
            rows.append((e, float(t), float(cvar + w @ Se @ w)))
    return rows
