"""Figure rendering for the CLI report commands (Agg backend, files only)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
from matplotlib.collections import LineCollection

__all__ = ["plot_edge_profiles", "plot_graph_values", "plot_loglog", "plot_points"]


def _group_rows(rows):
    by_edge = {}
    for e, t, v in rows:
        by_edge.setdefault(e, []).append((t, v))
    return {e: np.array(sorted(pts)) for e, pts in by_edge.items()}


def plot_edge_profiles(rows, ylabel, path, title=None):
    """One line per edge: value against the offset along that edge."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for e, pts in sorted(_group_rows(rows).items()):
        ax.plot(pts[:, 0], pts[:, 1], label=f"edge {e}", lw=1.4)
    ax.set_xlabel("offset along edge")
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    if len(_group_rows(rows)) <= 12:
        ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def _edge_xy(g, e, t):
    poly = g.edge_polyline[e]
    if poly is not None and len(poly) >= 2:
        pts = np.asarray(poly, dtype=float)
        seg = np.sqrt(((pts[1:] - pts[:-1]) ** 2).sum(axis=1))
        arc = np.concatenate([[0.0], np.cumsum(seg)])
        if arc[-1] > 0:
            s = t / g.edge_length[e] * arc[-1]
            x = np.interp(s, arc, pts[:, 0])
            y = np.interp(s, arc, pts[:, 1])
            return x, y
    (x0, y0) = g.coords[g.edge_u[e]]
    (x1, y1) = g.coords[g.edge_v[e]]
    f = t / g.edge_length[e]
    return x0 + f * (x1 - x0), y0 + f * (y1 - y0)


def plot_graph_values(g, rows, path, title=None):
    """Planar view of the network with segments colored by value.

    Needs vertex coordinates; callers fall back to profiles otherwise.
    """
    fig, ax = plt.subplots(figsize=(6.5, 5.5))
    segs, vals = [], []
    for e, pts in _group_rows(rows).items():
        xy = np.array([_edge_xy(g, e, t) for t in pts[:, 0]])
        for i in range(len(xy) - 1):
            segs.append([xy[i], xy[i + 1]])
            vals.append(0.5 * (pts[i, 1] + pts[i + 1, 1]))
    lc = LineCollection(segs, cmap="viridis", linewidths=3.0)
    lc.set_array(np.asarray(vals))
    ax.add_collection(lc)
    ax.autoscale()
    ax.set_aspect("equal")
    ax.set_xticks([])
    ax.set_yticks([])
    fig.colorbar(lc, ax=ax, shrink=0.85)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_loglog(xs, ys, path, xlabel, ylabel, ref_slope=None, title=None):
    fig, ax = plt.subplots(figsize=(5.5, 4.2))
    ax.loglog(xs, ys, "o-", lw=1.2)
    if ref_slope is not None and len(xs) > 1:
        x0, y0 = xs[0], ys[0]
        ax.loglog(xs, [y0 * (x / x0) ** ref_slope for x in xs], "k--", lw=1.0,
                  label=f"slope {ref_slope:g}")
        ax.legend(frameon=False)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_points(rows, ylabel, path, yerr=None, title=None):
    """Scattered per-site values (simulate/predict output), offset on x."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    by_edge = {}
    for i, (e, t, v) in enumerate(rows):
        by_edge.setdefault(e, []).append((t, v, None if yerr is None else yerr[i]))
    for e, pts in sorted(by_edge.items()):
        pts.sort()
        ts = [p[0] for p in pts]
        vs = [p[1] for p in pts]
        line, = ax.plot(ts, vs, "o-", ms=3, lw=0.9, label=f"edge {e}")
        if yerr is not None:
            es = np.array([p[2] for p in pts])
            ax.fill_between(ts, np.array(vs) - 2 * es, np.array(vs) + 2 * es,
                            alpha=0.2, color=line.get_color())
    ax.set_xlabel("offset along edge")
    ax.set_ylabel(ylabel)
    if len(by_edge) <= 12:
        ax.legend(frameon=False, fontsize=8)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
