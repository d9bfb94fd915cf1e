import numpy as np
import pytest
from scipy import stats

import graphfield as gf
from graphfield.simulate import SimulationError, _bridge_system
from graphfield.sparse import SparseSymmetric


class TestSampleVertices:
    def test_scalar_precision(self):
        Q = SparseSymmetric(np.array([[4.0]]))
        x = gf.sample_vertices(Q, seed=0, size=200000)
        assert np.var(x) == pytest.approx(0.25, rel=0.02)

    def test_interval_covariance(self):
        p = gf.ModelParams(alpha=1, kappa=1.0, tau=1.0)
        Q = gf.assemble_alpha1(gf.MetricGraph.interval(1.0), p)
        X = gf.sample_vertices(Q, seed=1, size=200000)
        emp = X.T @ X / len(X)
        want = np.linalg.inv(Q.toarray())
        se = np.sqrt((np.outer(np.diag(want), np.diag(want)) + want**2) / len(X))
        assert np.all(np.abs(emp - want) < 4 * se)

    def test_seeded_determinism(self):
        p = gf.ModelParams(alpha=1, kappa=1.0, tau=1.0)
        Q = gf.assemble_alpha1(gf.MetricGraph.star(3, 1.0), p)
        a = gf.sample_vertices(Q, seed=7)
        b = gf.sample_vertices(Q, seed=7)
        assert np.array_equal(a, b)

    def test_constrained_samples_satisfy_kirchhoff(self):
        g = gf.MetricGraph.star(3, 1.0)
        p = gf.ModelParams(alpha=2, kappa=1.0, tau=1.0)
        Q, cons = gf.assemble_alpha2_system(g, p)
        U = gf.sample_vertices(Q, seed=3, constraints=cons, size=50)
        resid = np.abs(U @ cons.A.T.toarray())
        assert resid.max() < 1e-10


class TestSampleBridge:
    def test_endpoint_sites_return_endpoint_values(self):
        p = gf.ModelParams(alpha=1, kappa=1.0, tau=1.0)
        rng = np.random.default_rng(0)
        out = gf.sample_bridge(p, 2.0, 1.5, -0.5, [0.0, 2.0], rng)
        assert out == pytest.approx([1.5, -0.5])

    def test_midpoint_conditional_variance(self):
        # Var(u(1) | u(0), u(2)) = r(0) - [r(1), r(1)] R^{-1} [r(1), r(1)]^T
        p = gf.ModelParams(alpha=1, kappa=1.0, tau=1.0)
        r = lambda h: gf.matern_cov(p, h)
        R = np.array([[r(0.0), r(2.0)], [r(2.0), r(0.0)]])
        v = np.array([r(1.0), r(1.0)])
        want = r(0.0) - v @ np.linalg.solve(R, v)
        _, cov = _bridge_system(p, 2.0, [1.0])
        assert cov[0, 0] == pytest.approx(want, abs=1e-14)
        rng = np.random.default_rng(1)
        draws = np.array([
            gf.sample_bridge(p, 2.0, 0.3, -0.2, [1.0], rng)[0] for _ in range(15000)
        ])
        assert np.var(draws) == pytest.approx(want, rel=0.08)

    def test_two_stage_reproduces_interval_covariance(self):
        # vertex + bridge draws match the exact covariance at interior sites
        g = gf.MetricGraph.interval(1.0)
        p = gf.ModelParams(alpha=1, kappa=1.0, tau=1.0)
        sites = [gf.PointOnEdge(0, t) for t in (0.25, 0.5, 0.75)]
        N = 12000
        vals = np.empty((N, 3))
        for i in range(N):
            vals[i] = gf.simulate_field(g, p, sites, seed=i, method="two_stage").values
        emp = vals.T @ vals / N
        want = np.array([
            [gf.closed_form_interval(p, 1.0, a.offset, b.offset) for b in sites]
            for a in sites
        ])
        se = np.sqrt((np.outer(np.diag(want), np.diag(want)) + want**2) / N)
        assert np.all(np.abs(emp - want) < 3.5 * se)

    def test_one_stage_and_two_stage_agree_in_distribution(self):
        g = gf.MetricGraph.star(3, 1.0)
        p = gf.ModelParams(alpha=1, kappa=1.0, tau=1.0)
        sites = [gf.PointOnEdge(0, 0.3), gf.PointOnEdge(1, 0.6), gf.PointOnEdge(2, 0.5)]
        # batched equivalents of the two samplers
        Q_ext, idx, gg, _ = gf.extended_precision(g, p, sites)
        sd = np.sqrt(np.linalg.inv(Q_ext.toarray())[idx, idx])
        Qv = gf.assemble_alpha1(g, p)
        W, cov = _bridge_system(p, 1.0, [0.3])
        L = np.linalg.cholesky(cov + 1e-15 * np.eye(1))
        n_bad = 0
        for run in range(20):
            N = 500
            one = gf.sample_vertices(Q_ext, seed=1000 + run, size=N)[:, idx]
            V = gf.sample_vertices(Qv, seed=2000 + run, size=N)
            rng = np.random.default_rng(3000 + run)
            two = np.empty((N, 3))
            for j, s in enumerate(sites):
                ends = V[:, [g.edge_u[s.edge], g.edge_v[s.edge]]]
                Wj, covj = _bridge_system(p, g.edge_length[s.edge], [s.offset])
                eps = np.sqrt(covj[0, 0]) * rng.standard_normal(N)
                two[:, j] = ends @ Wj[0] + eps
            pv = stats.ks_2samp((one / sd).ravel(), (two / sd).ravel()).pvalue
            if pv <= 0.001:
                n_bad += 1
        assert n_bad == 0


class TestSimulateField:
    def test_deterministic(self):
        g = gf.MetricGraph.star(3, 1.0)
        p = gf.ModelParams(alpha=1, kappa=2.0, tau=1.0)
        sites = [gf.PointOnEdge(0, 0.4), gf.PointOnEdge(2, 0.9)]
        a = gf.simulate_field(g, p, sites, seed=5)
        b = gf.simulate_field(g, p, sites, seed=5)
        assert np.array_equal(a.values, b.values)

    def test_alpha2_reports_derivatives(self):
        g = gf.MetricGraph.interval(1.0)
        p = gf.ModelParams(alpha=2, kappa=1.0, tau=1.0)
        s = gf.simulate_field(g, p, [gf.PointOnEdge(0, 0.5)], seed=0)
        assert s.derivatives is not None and np.isfinite(s.derivatives).all()

    def test_csv_roundtrip(self, tmp_path):
        g = gf.MetricGraph.interval(1.0)
        p = gf.ModelParams(alpha=1, kappa=1.0, tau=1.0)
        s = gf.simulate_field(g, p, [gf.PointOnEdge(0, 0.5)], seed=0)
        path = tmp_path / "s.csv"
        s.to_csv(path)
        text = path.read_text().splitlines()
        assert text[0] == "site_edge,site_offset,value"
        assert len(text) == 2


class TestKLBasis:
    def test_interval_eigenpairs(self):
        basis = gf.KLBasis("interval", 1.5, 6)
        lam = basis.eigenvalues()
        assert lam[0] == 0.0
        assert lam[2] == pytest.approx((2 * np.pi / 1.5) ** 2)
        # orthonormality by quadrature
        s = np.linspace(0, 1.5, 20001)
        E = basis.eigenfunctions(s)
        G = E.T @ E * (s[1] - s[0])
        G[np.abs(G) < 1e-3] = 0
        assert np.abs(G - np.eye(6)).max() < 2e-3

    def test_interval_functions_satisfy_neumann(self):
        basis = gf.KLBasis("interval", 2.0, 5)
        h = 1e-6
        E0 = basis.eigenfunctions([0.0, 2.0])
        Eh = basis.eigenfunctions([h, 2.0 - h])
        deriv = (Eh - E0) / h
        assert np.abs(deriv).max() < 1e-4

    def test_circle_eigenpairs(self):
        basis = gf.KLBasis("circle", 2.0, 7)
        lam = basis.eigenvalues()
        assert lam[1] == lam[2] == pytest.approx((2 * np.pi / 2.0) ** 2)
        s = np.linspace(0, 2.0, 40001)[:-1]
        E = basis.eigenfunctions(s)
        G = E.T @ E * (s[1] - s[0])
        assert np.abs(G - np.eye(7)).max() < 1e-6

    def test_weyl_bound(self):
        for kind, L in (("interval", 1.0), ("circle", 2.0), ("interval", 3.7)):
            basis = gf.KLBasis(kind, L, 200)
            lam = basis.eigenvalues()
            j = np.arange(2, 200)
            ratio = lam[j] / j**2
            assert ratio.min() > 0
            assert ratio.max() / ratio.min() < 16.0
        assert np.all(np.diff(gf.KLBasis("circle", 2.0, 50).eigenvalues()) >= 0)

    def test_rejects_unknown_domain(self):
        with pytest.raises(SimulationError):
            gf.KLBasis("sphere", 1.0, 3)


class TestKLCovariance:
    def test_circle_matches_closed_form_alpha1(self):
        p = gf.ModelParams(alpha=1, kappa=1.0, tau=1.0)
        basis = gf.KLBasis("circle", 2.0, 10001)
        for s, t in ((0.0, 0.5), (0.3, 1.2), (0.1, 1.9)):
            got = gf.kl_covariance(basis, p, s, t)
            want = gf.closed_form_circle(p, 2.0, s, t)
            assert got == pytest.approx(want, abs=2e-6)

    def test_circle_matches_closed_form_alpha2(self):
        p = gf.ModelParams(alpha=2, kappa=1.3, tau=0.9)
        basis = gf.KLBasis("circle", 2.0, 4001)
        for s, t in ((0.0, 0.0), (0.3, 1.2)):
            got = gf.kl_covariance(basis, p, s, t)
            want = gf.closed_form_circle(p, 2.0, s, t)
            assert got == pytest.approx(want, abs=1e-6)

    def test_interval_matches_closed_form_alpha2(self):
        p = gf.ModelParams(alpha=2, kappa=1.0, tau=1.0)
        basis = gf.KLBasis("interval", 1.0, 4001)
        got = gf.kl_covariance(basis, p, 0.0, 0.0)
        assert got == pytest.approx(gf.closed_form_interval(p, 1.0, 0.0, 0.0), abs=1e-6)

    def test_psd_on_grid(self):
        p = gf.ModelParams(alpha=1, kappa=1.0, tau=1.0)
        basis = gf.KLBasis("circle", 2.0, 101)
        s = np.linspace(0, 2, 17)[:-1]
        C = gf.kl_covariance(basis, p, s, s)
        w = np.linalg.eigvalsh(C)
        assert w.min() > -1e-10

    def test_kl_simulation_moments(self):
        p = gf.ModelParams(alpha=1, kappa=1.0, tau=1.0)
        basis = gf.KLBasis("circle", 2.0, 401)
        sites = [0.0, 0.7]
        N = 8000
        draws = np.array([
            gf.kl_simulate(basis, p, sites, seed=s).values for s in range(N)
        ])
        emp = draws.T @ draws / N
        want = gf.kl_covariance(basis, p, sites, sites)
        assert np.abs(emp - want).max() < 0.04


class TestKLTruncationError:
    def test_matches_direct_tail_sum(self):
        p = gf.ModelParams(alpha=2, kappa=1.0, tau=1.0)
        basis = gf.KLBasis("circle", 2.0, 64)
        lam_many = gf.KLBasis("circle", 2.0, 400000).eigenvalues()
        for n in (5, 16, 33):
            direct = np.sqrt(np.sum((1 + lam_many[n:]) ** -2.0))
            got = gf.kl_truncation_error(basis, p, n)
            assert got == pytest.approx(direct, rel=1e-6)

    def test_monotone_decreasing(self):
        p = gf.ModelParams(alpha=1, kappa=1.0, tau=1.0)
        basis = gf.KLBasis("circle", 2.0, 16)
        errs = [gf.kl_truncation_error(basis, p, n) for n in (4, 8, 16, 32, 64)]
        assert np.all(np.diff(errs) < 0)

    @pytest.mark.parametrize("alpha,lo,hi", [(1, -0.65, -0.35), (2, -1.65, -1.35)])
    def test_decay_rate(self, alpha, lo, hi):
        p = gf.ModelParams(alpha=alpha, kappa=1.0, tau=1.0)
        basis = gf.KLBasis("circle", 2.0, 16)
        ns = [2**j for j in range(4, 13)]
        errs = [gf.kl_truncation_error(basis, p, n) for n in ns]
        slope = np.polyfit(np.log(ns), np.log(errs), 1)[0]
        assert lo <= slope <= hi
