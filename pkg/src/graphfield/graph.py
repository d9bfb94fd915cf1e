"""Compact metric graphs: points on edges, network distance, graph surgery.

A metric graph is a multigraph whose edges carry positive lengths and are
identified with intervals [0, length].  Loops and parallel edges are
allowed.  Graphs are immutable after construction; the surgery operations
(subdivision, degree-2 merging) return new graphs together with maps that
translate point coordinates between the old and new graph.
"""
from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field

__all__ = [
    "MetricGraph",
    "PointOnEdge",
    "GraphSurgeryMap",
    "geodesic_distance",
    "split_loops_and_subdivide",
    "merge_degree2",
]

LOWER = 0
UPPER = 1

_OFFSET_TOL = 1e-12


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class PointOnEdge:
    """A location on the network, expressed as (edge id, offset in [0, length])."""

    edge: int
    offset: float

    def __post_init__(self):
        if self.offset < 0:
            raise GraphError(f"negative offset {self.offset} on edge {self.edge}")


class MetricGraph:
    """Connected multigraph with edge lengths; vertices/edges use dense int ids.

    Parameters
    ----------
    edges : list of (u, v, length) or (u, v, length, polyline)
        Vertex ids must be 0..n_vertices-1.  u is the lower endpoint (offset
        0), v the upper endpoint (offset = length).  A loop has u == v.
    coords : optional list of (x, y) per vertex, display only.
    """

    def __init__(self, n_vertices, edges, coords=None):
        self.n_vertices = int(n_vertices)
        self.edge_u = []
        self.edge_v = []
        self.edge_length = []
        self.edge_polyline = []
        for spec in edges:
            if len(spec) == 3:
                u, v, ell = spec
                poly = None
            else:
                u, v, ell, poly = spec
            u, v = int(u), int(v)
            ell = float(ell)
            if not (0 <= u < self.n_vertices and 0 <= v < self.n_vertices):
                raise GraphError(f"edge ({u},{v}) references unknown vertex")
            if not ell > 0 or not ell < float("inf"):
                raise GraphError(f"edge ({u},{v}) has invalid length {ell}")
            self.edge_u.append(u)
            self.edge_v.append(v)
            self.edge_length.append(ell)
            self.edge_polyline.append(poly)
        self.n_edges = len(self.edge_u)
        self.coords = coords
        # incidence index: per vertex, list of (edge id, LOWER/UPPER)
        self.incident = [[] for _ in range(self.n_vertices)]
        for e in range(self.n_edges):
            self.incident[self.edge_u[e]].append((e, LOWER))
            self.incident[self.edge_v[e]].append((e, UPPER))
        self._check()

    def _check(self):
        if self.n_vertices == 0 or self.n_edges == 0:
            raise GraphError("graph must have at least one vertex and one edge")
        # adjacency/edge round trip
        for v, inc in enumerate(self.incident):
            for e, end in inc:
                w = self.edge_u[e] if end == LOWER else self.edge_v[e]
                if w != v:
                    raise GraphError("adjacency index inconsistent with edge list")
        if not self.is_connected():
            raise GraphError("graph is not connected")

    def degree(self, v):
        return len(self.incident[v])

    def is_loop(self, e):
        return self.edge_u[e] == self.edge_v[e]

    def has_loops(self):
        return any(self.is_loop(e) for e in range(self.n_edges))

    def total_length(self):
        return sum(self.edge_length)

    def is_connected(self):
        seen = [False] * self.n_vertices
        stack = [0]
        seen[0] = True
        while stack:
            v = stack.pop()
            for e, _ in self.incident[v]:
                for w in (self.edge_u[e], self.edge_v[e]):
                    if not seen[w]:
                        seen[w] = True
                        stack.append(w)
        return all(seen)

    def endpoint(self, e, end):
        return self.edge_u[e] if end == LOWER else self.edge_v[e]

    def validate_point(self, p: PointOnEdge):
        if not (0 <= p.edge < self.n_edges):
            raise GraphError(f"point references unknown edge {p.edge}")
        ell = self.edge_length[p.edge]
        if p.offset < -_OFFSET_TOL or p.offset > ell + _OFFSET_TOL:
            raise GraphError(f"offset {p.offset} outside [0, {ell}] on edge {p.edge}")

    def point_as_vertex(self, p: PointOnEdge):
        """Vertex id if p sits on an edge endpoint, else None."""
        self.validate_point(p)
        if p.offset <= _OFFSET_TOL:
            return self.edge_u[p.edge]
        if p.offset >= self.edge_length[p.edge] - _OFFSET_TOL:
            return self.edge_v[p.edge]
        return None

    def vertex_point(self, v):
        """Some PointOnEdge representation of vertex v."""
        e, end = self.incident[v][0]
        t = 0.0 if end == LOWER else self.edge_length[e]
        return PointOnEdge(e, t)

    def same_site(self, a: PointOnEdge, b: PointOnEdge):
        va, vb = self.point_as_vertex(a), self.point_as_vertex(b)
        if va is not None or vb is not None:
            return va == vb and va is not None
        return a.edge == b.edge and abs(a.offset - b.offset) <= _OFFSET_TOL

    # ---- serialization ----------------------------------------------------

    def to_json_dict(self):
        verts = []
        for v in range(self.n_vertices):
            d = {"id": v}
            if self.coords is not None:
                d["x"], d["y"] = float(self.coords[v][0]), float(self.coords[v][1])
            verts.append(d)
        edges = []
        for e in range(self.n_edges):
            d = {
                "id": e,
                "u": self.edge_u[e],
                "v": self.edge_v[e],
                "length": self.edge_length[e],
            }
            if self.edge_polyline[e] is not None:
                d["polyline"] = [[float(x), float(y)] for x, y in self.edge_polyline[e]]
            edges.append(d)
        return {"vertices": verts, "edges": edges}

    def save_json(self, path):
        with open(path, "w") as f:
            json.dump(self.to_json_dict(), f, indent=1)

    @classmethod
    def from_json_dict(cls, d):
        verts = d["vertices"]
        ids = sorted(v["id"] for v in verts)
        if ids != list(range(len(ids))):
            raise GraphError("vertex ids must be dense 0..n-1")
        coords = None
        if all("x" in v and "y" in v for v in verts):
            coords = [None] * len(verts)
            for v in verts:
                coords[v["id"]] = (v["x"], v["y"])
        edges_in = sorted(d["edges"], key=lambda e: e["id"])
        if [e["id"] for e in edges_in] != list(range(len(edges_in))):
            raise GraphError("edge ids must be dense 0..m-1")
        edges = [(e["u"], e["v"], e["length"], e.get("polyline")) for e in edges_in]
        return cls(len(verts), edges, coords=coords)

    @classmethod
    def load_json(cls, path):
        with open(path) as f:
            return cls.from_json_dict(json.load(f))

    # ---- common builders ---------------------------------------------------

    @classmethod
    def interval(cls, length=1.0):
        return cls(2, [(0, 1, length)])

    @classmethod
    def circle(cls, perimeter=1.0):
        return cls(1, [(0, 0, perimeter)])

    @classmethod
    def star(cls, n_leaves=3, arm_length=1.0, edges_per_arm=1):
        """Symmetric star: center vertex 0, arms split into equal edges."""
        edges = []
        nv = 1
        for _ in range(n_leaves):
            prev = 0
            for _ in range(edges_per_arm):
                edges.append((prev, nv, arm_length / edges_per_arm))
                prev = nv
                nv += 1
        return cls(nv, edges)


@dataclass
class GraphSurgeryMap:
    """Coordinate translation between an original graph and a transformed one.

    forward_spans[e] lists (t0, t1, new_edge, s0, s1) pieces covering original
    edge e; offset t in [t0, t1] maps to s0 + (t - t0) * (s1 - s0) / (t1 - t0)
    on new_edge (s1 < s0 encodes a reversed piece).  The inverse direction is
    stored the same way, keyed by new edge id.
    """

    forward_spans: dict = field(default_factory=dict)
    inverse_spans: dict = field(default_factory=dict)

    @staticmethod
    def _map_with(spans, p: PointOnEdge):
        pieces = spans.get(p.edge)
        if pieces is None:
            raise GraphError(f"edge {p.edge} has no image under this surgery")
        for (t0, t1, ne, s0, s1) in pieces:
            if t0 - _OFFSET_TOL <= p.offset <= t1 + _OFFSET_TOL:
                t = min(max(p.offset, t0), t1)
                frac = 0.0 if t1 == t0 else (t - t0) / (t1 - t0)
                return PointOnEdge(ne, s0 + frac * (s1 - s0))
        raise GraphError(f"offset {p.offset} not covered on edge {p.edge}")

    def map_point(self, p: PointOnEdge) -> PointOnEdge:
        return self._map_with(self.forward_spans, p)

    def unmap_point(self, p: PointOnEdge) -> PointOnEdge:
        return self._map_with(self.inverse_spans, p)

    @staticmethod
    def compose(first: "GraphSurgeryMap", second: "GraphSurgeryMap") -> "ComposedSurgeryMap":
        return ComposedSurgeryMap(first, second)


@dataclass
class ComposedSurgeryMap:
    first: object
    second: object

    def map_point(self, p):
        return self.second.map_point(self.first.map_point(p))

    def unmap_point(self, p):
        return self.first.unmap_point(self.second.unmap_point(p))


# ---------------------------------------------------------------------------
# network distance
# ---------------------------------------------------------------------------

def _vertex_distances(g: MetricGraph, sources):
    """Dijkstra over the vertex skeleton from a dict {vertex: start_dist}."""
    dist = [float("inf")] * g.n_vertices
    heap = []
    for v, d0 in sources.items():
        if d0 < dist[v]:
            dist[v] = d0
            heapq.heappush(heap, (d0, v))
    while heap:
        d, v = heapq.heappop(heap)
        if d > dist[v]:
            continue
        for e, end in g.incident[v]:
            w = g.endpoint(e, UPPER if end == LOWER else LOWER)
            nd = d + g.edge_length[e]
            if nd < dist[w]:
                dist[w] = nd
                heapq.heappush(heap, (nd, w))
    return dist


def geodesic_distance(g: MetricGraph, a: PointOnEdge, b: PointOnEdge) -> float:
    """Shortest-path distance between two points on the network."""
    g.validate_point(a)
    g.validate_point(b)
    # candidate: stay within the common edge
    direct = float("inf")
    if a.edge == b.edge:
        direct = abs(a.offset - b.offset)
    # route through vertices: dist(a, v) + dist(v, b)
    ea, eb = a.edge, b.edge
    la, lb = g.edge_length[ea], g.edge_length[eb]
    src = {}
    for v, d0 in ((g.edge_u[ea], a.offset), (g.edge_v[ea], la - a.offset)):
        src[v] = min(src.get(v, float("inf")), d0)
    dist = _vertex_distances(g, src)
    via = min(
        dist[g.edge_u[eb]] + b.offset,
        dist[g.edge_v[eb]] + lb - b.offset,
    )
    out = min(direct, via)
    if out == float("inf"):
        raise GraphError("points are not connected")
    return out


# ---------------------------------------------------------------------------
# surgery: subdivision and merging
# ---------------------------------------------------------------------------

def split_loops_and_subdivide(g: MetricGraph, extra_sites=()):
    """Insert vertices at the given sites and at the midpoint of every loop.

    Returns (new graph, surgery map).  Sites that already are vertices are
    dropped; duplicate sites are merged.  Edge lengths partition exactly.
    """
    cuts = {e: [] for e in range(g.n_edges)}  # edge -> sorted interior offsets
    for p in extra_sites:
        g.validate_point(p)
        if g.point_as_vertex(p) is not None:
            continue
        cuts[p.edge].append(p.offset)
    for e in range(g.n_edges):
        if g.is_loop(e) and not cuts[e]:
            cuts[e].append(g.edge_length[e] / 2.0)
    new_edges = []
    fmap = GraphSurgeryMap()
    nv = g.n_vertices
    coords = list(g.coords) if g.coords is not None else None
    for e in range(g.n_edges):
        offs = sorted(set(cuts[e]))
        dedup = []
        for t in offs:
            if not dedup or t - dedup[-1] > _OFFSET_TOL:
                dedup.append(t)
        bounds = [0.0] + dedup + [g.edge_length[e]]
        nodes = [g.edge_u[e]]
        for _ in dedup:
            nodes.append(nv)
            nv += 1
            if coords is not None:
                coords.append(_interp_coord(g, e, bounds[len(nodes) - 1]))
        nodes.append(g.edge_v[e])
        spans = []
        for k in range(len(bounds) - 1):
            ne = len(new_edges)
            seg = bounds[k + 1] - bounds[k]
            new_edges.append((nodes[k], nodes[k + 1], seg))
            spans.append((bounds[k], bounds[k + 1], ne, 0.0, seg))
            fmap.inverse_spans[ne] = [(0.0, seg, e, bounds[k], bounds[k + 1])]
        fmap.forward_spans[e] = spans
    gg = MetricGraph(nv, new_edges, coords=coords)
    return gg, fmap


def _interp_coord(g, e, t):
    if g.coords is None:
        return (0.0, 0.0)
    (x0, y0) = g.coords[g.edge_u[e]]
    (x1, y1) = g.coords[g.edge_v[e]]
    f = t / g.edge_length[e]
    return (x0 + f * (x1 - x0), y0 + f * (y1 - y0))


def merge_degree2(g: MetricGraph):
    """Remove degree-2 vertices by merging their two incident edges.

    A pure cycle keeps one anchor vertex (the smallest id on the cycle) and
    becomes a loop edge of the full cycle length.  Returns (graph, map).
    """
    # chains are built on the current edge set; walk from every non-mergeable
    # vertex (degree != 2, or degree-2 via a loop) along degree-2 vertices.
    def mergeable(v):
        inc = g.incident[v]
        return len(inc) == 2 and inc[0][0] != inc[1][0]

    used_edge = [False] * g.n_edges
    keep_vertex = [not mergeable(v) for v in range(g.n_vertices)]
    chains = []  # list of lists of (edge, forward?) traversed lower->upper order

    def other_end(e, end):
        return UPPER if end == LOWER else LOWER

    for v0 in range(g.n_vertices):
        if not keep_vertex[v0]:
            continue
        for e0, end0 in g.incident[v0]:
            if used_edge[e0]:
                continue
            # walk away from v0 through degree-2 vertices
            chain = []
            e, end = e0, end0
            used_edge[e] = True
            chain.append((e, end == LOWER))  # forward if entered at lower end
            w = g.endpoint(e, other_end(e, end))
            while not keep_vertex[w]:
                (ea, na), (eb, nb) = g.incident[w]
                e_next, end_next = (eb, nb) if (ea == e) else (ea, na)
                if used_edge[e_next]:
                    break
                e, end = e_next, end_next
                used_edge[e] = True
                chain.append((e, end == LOWER))
                w = g.endpoint(e, other_end(e, end))
            chains.append(chain)
    # pure cycles: all vertices degree 2, none kept on that component
    for e0 in range(g.n_edges):
        if used_edge[e0]:
            continue
        anchor = min(g.edge_u[e0], g.edge_v[e0])
        chain = []
        e, end = e0, LOWER
        # ensure the walk starts at the anchor
        start = g.edge_u[e0]
        cyc_vertices = []
        cur = start
        while True:
            cyc_vertices.append(cur)
            nxt = None
            for ee, nn in g.incident[cur]:
                if not used_edge[ee]:
                    nxt = (ee, nn)
                    break
            if nxt is None:
                break
            ee, nn = nxt
            used_edge[ee] = True
            chain.append((ee, nn == LOWER))
            cur = g.endpoint(ee, other_end(ee, nn))
            if cur == start:
                break
        anchor = min(cyc_vertices)
        keep_vertex[anchor] = True
        # rotate chain so it starts and ends at anchor
        # walk again from anchor for simplicity
        for ee, _ in chain:
            used_edge[ee] = False
        chain = []
        cur = anchor
        while True:
            nxt = None
            for ee, nn in g.incident[cur]:
                if not used_edge[ee]:
                    nxt = (ee, nn)
                    break
            if nxt is None:
                break
            ee, nn = nxt
            used_edge[ee] = True
            chain.append((ee, nn == LOWER))
            cur = g.endpoint(ee, other_end(ee, nn))
            if cur == anchor:
                break
        chains.append(chain)

    old2new = {}
    nv = 0
    for v in range(g.n_vertices):
        if keep_vertex[v]:
            old2new[v] = nv
            nv += 1
    coords = None
    if g.coords is not None:
        coords = [g.coords[v] for v in range(g.n_vertices) if keep_vertex[v]]
    new_edges = []
    fmap = GraphSurgeryMap()
    for chain in chains:
        e_first, fwd_first = chain[0]
        v_start = g.edge_u[e_first] if fwd_first else g.edge_v[e_first]
        e_last, fwd_last = chain[-1]
        v_end = g.edge_v[e_last] if fwd_last else g.edge_u[e_last]
        ne = len(new_edges)
        total = sum(g.edge_length[e] for e, _ in chain)
        new_edges.append((old2new[v_start], old2new[v_end], total))
        pos = 0.0
        inv = []
        for e, fwd in chain:
            ell = g.edge_length[e]
            if fwd:
                fmap.forward_spans.setdefault(e, []).append((0.0, ell, ne, pos, pos + ell))
                inv.append((pos, pos + ell, e, 0.0, ell))
            else:
                fmap.forward_spans.setdefault(e, []).append((0.0, ell, ne, pos + ell, pos))
                inv.append((pos, pos + ell, e, ell, 0.0))
            pos += ell
        fmap.inverse_spans[ne] = inv
    gg = MetricGraph(nv, new_edges, coords=coords)
    return gg, fmap
