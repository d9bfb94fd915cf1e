"""Command-line front end.

Subcommands: simulate, loglik, fit, predict, covariance, variances,
compare-laplacian, kl-rate.  Inputs are a graph JSON file and (where
needed) an observation CSV ``edge_id,offset,value``; outputs are CSV/JSON
files with 17 significant digits.  ``--plot`` renders a matplotlib figure
next to the delimited output.  Any failure prints an error JSON on stdout
and exits nonzero.
"""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .graph import MetricGraph, PointOnEdge
from .inference import (
    Dataset,
    covariance_trace,
    fit_mle,
    krig_predict,
    loglik,
    loglik_alpha1_integrated,
    variance_trace,
)
from .kernels import ModelParams
from .laplacian import scaled_comparison
from .precision import assemble_alpha1, assemble_alpha2_system
from .simulate import KLBasis, kl_truncation_error, simulate_field

FMT = "%.17g"


def _fmt(x):
    return FMT % float(x)


def _params(args, alpha=None):
    return ModelParams(
        alpha=int(alpha if alpha is not None else args.alpha),
        kappa=args.kappa,
        tau=args.tau,
        sigma=args.sigma,
    )


def _load_graph(args):
    return MetricGraph.load_json(args.graph)


def _parse_site(spec):
    e, t = spec.split(":")
    return PointOnEdge(int(e), float(t))


def _site_list(args, g):
    sites = []
    if args.sites:
        sites += [_parse_site(s) for s in args.sites.split(",")]
    if args.sites_file:
        with open(args.sites_file) as f:
            f.readline()
            for line in f:
                if line.strip():
                    e, t = line.split(",")[:2]
                    sites.append(PointOnEdge(int(e), float(t)))
    if args.sites_per_edge:
        for e in range(g.n_edges):
            ell = g.edge_length[e]
            for t in np.linspace(0.0, ell, args.sites_per_edge):
                sites.append(PointOnEdge(e, float(t)))
    if not sites:
        raise ValueError("no sites given; use --sites, --sites-file or --sites-per-edge")
    return sites


def _write_rows(path, header, rows):
    with open(path, "w") as f:
        f.write(header + "\n")
        for row in rows:
            f.write(",".join(_fmt(x) if isinstance(x, float) else str(x) for x in row))
            f.write("\n")


def _maybe_plot_trace(args, g, rows, ylabel):
    if not args.plot:
        return None
    from . import plots

    png = args.out + ".png"
    if g.coords is not None:
        plots.plot_graph_values(g, rows, png, title=ylabel)
    else:
        plots.plot_edge_profiles(rows, ylabel, png)
    return png


# ---------------------------------------------------------------------------
# subcommand handlers
# ---------------------------------------------------------------------------

def cmd_simulate(args):
    g = _load_graph(args)
    params = _params(args)
    sites = _site_list(args, g)
    sample = simulate_field(g, params, sites, seed=args.seed)
    sample.to_csv(args.out)
    rows = [(p.edge, p.offset, v) for p, v in zip(sample.sites, sample.values)]
    png = _maybe_plot_trace(args, g, rows, "simulated field")
    return {"out": args.out, "n_sites": len(sites), "seed": args.seed,
            **({"plot": png} if png else {})}


def cmd_loglik(args):
    g = _load_graph(args)
    params = _params(args)
    data = Dataset.from_csv(args.data)
    if args.method == "integrated":
        value = loglik_alpha1_integrated(g, params, data)
    else:
        value = loglik(g, params, data)
    if args.dump_precision:
        if params.alpha == 1:
            assemble_alpha1(g, params).save_matrix_market(args.dump_precision)
        else:
            from .graph import split_loops_and_subdivide

            gg, _ = split_loops_and_subdivide(g)
            Q, _cons = assemble_alpha2_system(gg, params)
            Q.save_matrix_market(args.dump_precision)
    out = {"loglik": value, "n": data.n, "alpha": params.alpha,
           "kappa": params.kappa, "tau": params.tau, "sigma": params.sigma}
    with open(args.out, "w") as f:
        json.dump(out, f, indent=1)
    return out


def cmd_fit(args):
    g = _load_graph(args)
    data = Dataset.from_csv(args.data)
    init = _params(args)
    fixed = [s for s in (args.fixed or "").split(",") if s]
    res = fit_mle(g, data, alpha=args.alpha, init=init, fixed=fixed,
                  max_iter=args.max_iter)
    out = res.to_json_dict()
    with open(args.out, "w") as f:
        json.dump(out, f, indent=1)
    if args.plot and res.trace:
        from . import plots

        lls = [t["loglik"] for t in res.trace]
        plots.plot_loglog(
            np.arange(1, len(lls) + 1), np.maximum(np.max(lls) - lls, 1e-16) + 1e-16,
            args.out + ".png", "evaluation", "loglik gap to best",
        )
    return {k: out[k] for k in ("kappa", "tau", "sigma", "loglik", "converged")}


def cmd_predict(args):
    g = _load_graph(args)
    params = _params(args)
    data = Dataset.from_csv(args.data)
    targets = _site_list(args, g)
    means, variances = krig_predict(g, params, data, targets)
    rows = [
        (p.edge, float(p.offset), float(m), float(v))
        for p, m, v in zip(targets, means, variances)
    ]
    _write_rows(args.out, "site_edge,site_offset,mean,variance", rows)
    if args.plot:
        from . import plots

        plots.plot_points(
            [(r[0], r[1], r[2]) for r in rows], "kriging mean", args.out + ".png",
            yerr=np.sqrt([r[3] for r in rows]),
        )
    return {"out": args.out, "n_targets": len(targets)}


def cmd_covariance(args):
    g = _load_graph(args)
    params = _params(args)
    s0 = _parse_site(args.s0)
    rows = covariance_trace(g, params, s0, resolution=args.resolution)
    _write_rows(args.out, "edge_id,offset,cov", rows)
    png = _maybe_plot_trace(args, g, rows, f"covariance with site {args.s0}")
    return {"out": args.out, "n_points": len(rows), **({"plot": png} if png else {})}


def cmd_variances(args):
    g = _load_graph(args)
    params = _params(args)
    rows = variance_trace(g, params, resolution=args.resolution,
                          adjusted=args.adjusted)
    _write_rows(args.out, "edge_id,offset,variance", rows)
    png = _maybe_plot_trace(args, g, rows, "marginal variance")
    return {"out": args.out, "n_points": len(rows), **({"plot": png} if png else {})}


def cmd_compare_laplacian(args):
    g = _load_graph(args)
    params = _params(args, alpha=1)
    hs = [float(h) for h in args.h_grid.split(",")]
    rows = []
    for h in hs:
        r = scaled_comparison(g, params, h)
        rows.append((r.h, r.max_abs_diff, r.sherman_morrison_pred,
                     r.sherman_morrison_err, r.degree2_row_error))
    _write_rows(
        args.out,
        "h,max_abs_diff,sherman_morrison_pred,sherman_morrison_err,degree2_row_error",
        rows,
    )
    if args.plot:
        from . import plots

        plots.plot_loglog([r[0] for r in rows], [r[1] for r in rows],
                          args.out + ".png", "subdivision step h",
                          "max covariance discrepancy")
    return {"out": args.out, "h": hs, "max_abs_diff": [r[1] for r in rows]}


def cmd_kl_rate(args):
    params = _params(args)
    L = args.length
    ns = [2**j for j in range(4, int(np.log2(args.n_max)) + 1)]
    basis = KLBasis(args.domain, L, max(ns))
    rows = []
    for n in ns:
        err = kl_truncation_error(basis, params, n)
        rows.append((float(n), err))
    _write_rows(args.out, "n,truncation_error", rows)
    slope = np.polyfit(np.log([r[0] for r in rows]), np.log([r[1] for r in rows]), 1)[0]
    if args.plot:
        from . import plots

        plots.plot_loglog([r[0] for r in rows], [r[1] for r in rows],
                          args.out + ".png", "truncation n", "L2 error",
                          ref_slope=-(params.alpha - 0.5))
    return {"out": args.out, "slope": slope, "target": -(params.alpha - 0.5)}


# ---------------------------------------------------------------------------

def build_parser():
    ap = argparse.ArgumentParser(
        prog="graphfield",
        description="Gaussian Markov random fields on metric graphs",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, data=False, needs_sites=False):
        p.add_argument("--graph", required=True, help="graph JSON file")
        p.add_argument("--alpha", type=int, default=1, choices=(1, 2))
        p.add_argument("--kappa", type=float, default=1.0)
        p.add_argument("--tau", type=float, default=1.0)
        p.add_argument("--sigma", type=float, default=0.0)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", required=True, help="output file")
        p.add_argument("--plot", action="store_true",
                       help="render a PNG figure next to the output")
        if data:
            p.add_argument("--data", required=True, help="observation CSV")
        if needs_sites:
            p.add_argument("--sites", help="comma list edge:offset")
            p.add_argument("--sites-file", help="CSV with edge_id,offset columns")
            p.add_argument("--sites-per-edge", type=int,
                           help="regular grid with this many points per edge")

    p = sub.add_parser("simulate", help="draw the field at sites")
    common(p, needs_sites=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("loglik", help="evaluate the log-likelihood")
    common(p, data=True)
    p.add_argument("--method", choices=("extended", "integrated"), default="extended")
    p.add_argument("--dump-precision", help="write the precision in matrix-market form")
    p.set_defaults(func=cmd_loglik)

    p = sub.add_parser("fit", help="maximum-likelihood fit")
    common(p, data=True)
    p.add_argument("--fixed", help="comma list of parameters to hold (kappa,tau,sigma)")
    p.add_argument("--max-iter", type=int, default=500)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="kriging at target sites")
    common(p, data=True, needs_sites=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("covariance", help="covariance trace against one site")
    common(p)
    p.add_argument("--s0", required=True, help="reference site edge:offset")
    p.add_argument("--resolution", type=float, default=0.01)
    p.set_defaults(func=cmd_covariance)

    p = sub.add_parser("variances", help="marginal variance trace")
    common(p)
    p.add_argument("--resolution", type=float, default=0.01)
    p.add_argument("--adjusted", action="store_true",
                   help="stationary boundary condition at degree-1 vertices")
    p.set_defaults(func=cmd_variances)

    p = sub.add_parser("compare-laplacian", help="graph-Laplacian approximation error")
    common(p)
    p.add_argument("--h-grid", default="0.5,0.25,0.125,0.0625")
    p.set_defaults(func=cmd_compare_laplacian)

    p = sub.add_parser("kl-rate", help="spectral truncation error decay")
    p.add_argument("--domain", choices=("interval", "circle"), default="circle")
    p.add_argument("--length", type=float, default=2.0)
    p.add_argument("--n-max", type=int, default=4096)
    p.add_argument("--alpha", type=int, default=1, choices=(1, 2))
    p.add_argument("--kappa", type=float, default=1.0)
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--sigma", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=cmd_kl_rate)

    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        summary = args.func(args)
    except Exception as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}))
        return 1
    print(json.dumps(summary, default=float))
    return 0


if __name__ == "__main__":
    sys.exit(main())
