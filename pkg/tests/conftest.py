"""Shared fixtures and dense reference implementations for the test suite.

The dense oracles deliberately avoid the library's sparse code paths: they
condition and marginalize full covariance matrices with plain numpy, so a
match means the sparse machinery reproduces textbook Gaussian algebra.
"""
import numpy as np
import pytest

import graphfield as gf
from graphfield.kernels import stationary_block


@pytest.fixture
def interval():
    return gf.MetricGraph.interval(1.0)


@pytest.fixture
def three_star():
    return gf.MetricGraph.star(3, 1.0)


def random_connected_graph(rng, n_extra=4, allow_loops=True):
    """Random multigraph grown edge by edge; always connected."""
    edges = [(0, 1, float(rng.uniform(0.4, 1.6)))]
    nv = 2
    for _ in range(n_extra):
        kind = rng.integers(0, 4)
        if kind == 0 and allow_loops:
            v = int(rng.integers(0, nv))
            edges.append((v, v, float(rng.uniform(0.6, 1.5))))
        elif kind == 1:
            u, v = rng.integers(0, nv, size=2)
            edges.append((int(u), int(v), float(rng.uniform(0.4, 1.6))))
        else:
            u = int(rng.integers(0, nv))
            edges.append((u, nv, float(rng.uniform(0.4, 1.6))))
            nv += 1
    # reject accidental loops when not allowed
    if not allow_loops:
        edges = [(u, v, l) for (u, v, l) in edges if u != v] or [(0, 1, 1.0)]
        nv = max(max(u, v) for u, v, _ in edges) + 1
    return gf.MetricGraph(nv, edges)


def random_sites(rng, g, n, interior_only=False):
    sites = []
    for _ in range(n):
        e = int(rng.integers(0, g.n_edges))
        lo, hi = (0.05, 0.95) if interior_only else (0.0, 1.0)
        t = float(rng.uniform(lo, hi) * g.edge_length[e])
        sites.append(gf.PointOnEdge(e, t))
    return sites


# ---------------------------------------------------------------------------
# dense Gaussian algebra
# ---------------------------------------------------------------------------

def dense_condition(mu, S, idx_obs, values):
    """Mean and covariance of the remaining block given exact observations."""
    n = len(mu)
    rest = [i for i in range(n) if i not in set(idx_obs)]
    Soo = S[np.ix_(idx_obs, idx_obs)]
    Sro = S[np.ix_(rest, idx_obs)]
    Srr = S[np.ix_(rest, rest)]
    W = Sro @ np.linalg.inv(Soo)
    mean = mu[rest] + W @ (np.asarray(values) - mu[idx_obs])
    cov = Srr - W @ Sro.T
    return rest, mean, cov


def gauss_logpdf(y, mean, cov):
    n = len(y)
    sign, logdet = np.linalg.slogdet(cov)
    assert sign > 0
    r = y - mean
    return float(-0.5 * (n * np.log(2 * np.pi) + logdet + r @ np.linalg.solve(cov, r)))


def dense_constrained_loglik(mu, S, B, Sn, A, b, y):
    """Brute force: condition u on Au=b densely, then marginalize to y."""
    AS = A @ S
    M = AS @ A.T
    gain = np.linalg.solve(M, AS).T
    mu_c = mu + gain @ (b - A @ mu)
    S_c = S - gain @ AS
    return gauss_logpdf(y, B @ mu_c, B @ S_c @ B.T + Sn)


def dense_constrained_posterior(mu, S, B, Sn, A, b, y):
    """Posterior mean/cov of u given Au=b (exact) and y (noisy), densely."""
    if B is None:
        AS = A @ S
        gain = np.linalg.solve(AS @ A.T, AS).T
        return mu + gain @ (b - A @ mu), S - gain @ AS
    H = np.vstack([A, B])
    obs_cov = H @ S @ H.T
    k = A.shape[0]
    obs_cov[k:, k:] += Sn
    cross = S @ H.T
    gain = np.linalg.solve(obs_cov, cross.T).T
    resid = np.concatenate([b, y]) - H @ mu
    return mu + gain @ resid, S - gain @ cross.T


def soft_constrained_loglik(mu, S, B, Sn, A, b, y, eps=1e-6):
    """Replace Au=b by an observation with noise eps and condition on it."""
    k = A.shape[0]
    SY = B @ S @ B.T + Sn
    SC = A @ S @ A.T + eps**2 * np.eye(k)
    X = B @ S @ A.T
    mean_y = B @ mu + X @ np.linalg.solve(SC, b - A @ mu)
    cov_y = SY - X @ np.linalg.solve(SC, X.T)
    return gauss_logpdf(y, mean_y, cov_y)


# ---------------------------------------------------------------------------
# field covariance oracles built from the edge-conditional decomposition
# ---------------------------------------------------------------------------

def site_cov_alpha1(g, params, sites):
    """Dense site covariance from vertex covariance plus per-edge bridges.

    This is the conditional-decomposition route: it never inserts sites into
    the graph, so it is independent of the extended-graph marginalization.
    """
    gg, smap = gf.split_loops_and_subdivide(g)
    Q = gf.assemble_alpha1(gg, params)
    SV = np.linalg.inv(Q.toarray())
    n = len(sites)
    mapped = [smap.map_point(p) for p in sites]

    def weights(q):
        v = gg.point_as_vertex(q)
        if v is not None:
            return {v: 1.0}, None, None
        T = gg.edge_length[q.edge]
        Rtt = np.array([
            [stationary_block(params, 0.0, 0.0)[0, 0], stationary_block(params, 0.0, T)[0, 0]],
            [stationary_block(params, T, 0.0)[0, 0], stationary_block(params, 0.0, 0.0)[0, 0]],
        ])
        Rst = np.array([
            stationary_block(params, q.offset, 0.0)[0, 0],
            stationary_block(params, q.offset, T)[0, 0],
        ])
        w = np.linalg.solve(Rtt, Rst)
        return (
            {gg.edge_u[q.edge]: w[0], gg.edge_v[q.edge]: w[1]},
            q,
            Rtt,
        )

    C = np.empty((n, n))
    for i in range(n):
        wi, qi, _ = weights(mapped[i])
        for j in range(i, n):
            wj, qj, _ = weights(mapped[j])
            val = 0.0
            for vi, ai in wi.items():
                for vj, aj in wj.items():
                    val += ai * aj * SV[vi, vj]
            if qi is not None and qj is not None and qi.edge == qj.edge:
                # shared-edge conditional remainder
                T = gg.edge_length[qi.edge]
                Rtt = np.array([
                    [stationary_block(params, 0.0, 0.0)[0, 0], stationary_block(params, 0.0, T)[0, 0]],
                    [stationary_block(params, T, 0.0)[0, 0], stationary_block(params, 0.0, 0.0)[0, 0]],
                ])
                Ri = np.array([
                    stationary_block(params, qi.offset, 0.0)[0, 0],
                    stationary_block(params, qi.offset, T)[0, 0],
                ])
                Rj = np.array([
                    stationary_block(params, qj.offset, 0.0)[0, 0],
                    stationary_block(params, qj.offset, T)[0, 0],
                ])
                val += stationary_block(params, qi.offset, qj.offset)[0, 0] - Ri @ np.linalg.solve(Rtt, Rj)
            C[i, j] = C[j, i] = val
    return C


def site_cov_alpha2(g, params, sites):
    """Dense site covariance for alpha=2 through the constrained machinery."""
    from graphfield.constrained import ConstrainedModel, constrained_posterior
    from graphfield.precision import alpha2_state_index, assemble_alpha2_system

    gg, smap = gf.split_loops_and_subdivide(g, extra_sites=list(sites))
    Q, cons = assemble_alpha2_system(gg, params)
    model = ConstrainedModel(mu=np.zeros(Q.n), Q=Q, constraints=cons)
    post = constrained_posterior(model)
    cols = []
    for p in sites:
        v = gg.point_as_vertex(smap.map_point(p))
        e, end = gg.incident[v][0]
        cols.append(alpha2_state_index(e, end, 0))
    return post.cov(cols, cols)
