"""Planar metric graphs with straight edges: distance field, edge frames, JSON I/O."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "Edge",
    "MetricGraph",
    "EdgeFrame",
    "distance_to_graph",
    "squared_distance_grid",
    "squared_distance_per_edge",
    "edge_frame",
    "to_edge_coords",
    "from_edge_coords",
    "load_graph",
    "v_graph",
    "straight_line",
]


@dataclass(frozen=True)
class Edge:
    """Straight edge leaving vertex ``start`` along unit ``direction``.

    ``length`` may be ``inf``, which makes the edge a ray.
    """

    start: int
    direction: tuple[float, float]
    length: float = np.inf

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float)
        if d.shape != (2,) or not np.all(np.isfinite(d)):
            raise ValueError(f"edge direction must be a finite 2-vector, got {self.direction}")
        if abs(np.hypot(*d) - 1.0) > 1e-12:
            raise ValueError(f"edge direction {tuple(d)} is not a unit vector")
        if not self.length > 0:
            raise ValueError(f"edge length must be positive, got {self.length}")


@dataclass(frozen=True)
class MetricGraph:
    vertices: tuple[tuple[float, float], ...]
    edges: tuple[Edge, ...]
    _end_index: tuple = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        verts = np.asarray(self.vertices, dtype=float).reshape(-1, 2)
        if not np.all(np.isfinite(verts)):
            raise ValueError("vertex coordinates must be finite")
        used = set()
        for e in self.edges:
            if not 0 <= e.start < len(verts):
                raise ValueError(f"edge start {e.start} is not a vertex index")
            used.add(e.start)
        used.update(i for i in self._end_index if i is not None)
        if len(used) != len(verts):
            missing = sorted(set(range(len(verts))) - used)
            raise ValueError(f"isolated vertices {missing}")

    @property
    def vertex_array(self) -> np.ndarray:
        return np.asarray(self.vertices, dtype=float).reshape(-1, 2)

    def edge_arrays(self):
        """Start points ``(E, 2)``, unit directions ``(E, 2)`` and lengths ``(E,)``."""
        v = self.vertex_array
        p0 = np.array([v[e.start] for e in self.edges])
        d = np.array([e.direction for e in self.edges], dtype=float)
        ln = np.array([e.length for e in self.edges], dtype=float)
        return p0, d, ln


@dataclass(frozen=True)
class EdgeFrame:
    """Orthonormal right-handed frame attached to an edge start."""

    origin: np.ndarray
    tangent: np.ndarray
    normal: np.ndarray


def edge_frame(g: MetricGraph, j: int) -> EdgeFrame:
    if not 0 <= j < len(g.edges):
        raise IndexError(f"edge index {j} out of range for {len(g.edges)} edges")
    e = g.edges[j]
    t = np.asarray(e.direction, dtype=float)
    return EdgeFrame(g.vertex_array[e.start].copy(), t, np.array([-t[1], t[0]]))


def to_edge_coords(frame: EdgeFrame, q):
    """Map plane points ``q[..., 2]`` to ``(x, y)`` along/normal to the edge."""
    r = np.asarray(q, dtype=float) - frame.origin
    return r @ frame.tangent, r @ frame.normal


def from_edge_coords(frame: EdgeFrame, x, y):
    x = np.asarray(x, dtype=float)[..., None]
    y = np.asarray(y, dtype=float)[..., None]
    return frame.origin + x * frame.tangent + y * frame.normal


def _edge_sq_distance(p0, d, ln, qx, qy):
    rx = qx - p0[0]
    ry = qy - p0[1]
    t = np.clip(rx * d[0] + ry * d[1], 0.0, ln)
    ex = rx - t * d[0]
    ey = ry - t * d[1]
    return ex * ex + ey * ey


def distance_to_graph(g: MetricGraph, q) -> np.ndarray:
    """Exact Euclidean distance from points ``q[..., 2]`` to the graph.

    Each edge is handled by projection onto the segment or ray with clamping,
    then the minimum over edges is taken. Works on arbitrary batch shapes.
    """
    q = np.asarray(q, dtype=float)
    qx, qy = q[..., 0], q[..., 1]
    p0, d, ln = g.edge_arrays()
    best = np.full(qx.shape, np.inf)
    for k in range(len(ln)):
        np.minimum(best, _edge_sq_distance(p0[k], d[k], ln[k], qx, qy), out=best)
    return np.sqrt(best)


def squared_distance_grid(g: MetricGraph, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """``d^2`` on the tensor grid ``x[:, None], y[None, :]`` without forming point arrays."""
    p0, d, ln = g.edge_arrays()
    X = x[:, None]
    Y = y[None, :]
    best = np.full((len(x), len(y)), np.inf)
    for k in range(len(ln)):
        np.minimum(best, _edge_sq_distance(p0[k], d[k], ln[k], X, Y), out=best)
    return best


def squared_distance_per_edge(g: MetricGraph, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Squared distance to each edge separately on the tensor grid, shape ``(E, len(x), len(y))``."""
    p0, d, ln = g.edge_arrays()
    X = x[:, None]
    Y = y[None, :]
    return np.stack([_edge_sq_distance(p0[k], d[k], ln[k], X, Y) for k in range(len(ln))])


def _build(vertices, edge_specs) -> MetricGraph:
    verts = np.asarray(vertices, dtype=float).reshape(-1, 2)
    edges = []
    ends = []
    for spec in edge_specs:
        i = int(spec["start"])
        if "end" in spec:
            j = int(spec["end"])
            vec = verts[j] - verts[i]
            ln = float(np.hypot(*vec))
            if ln == 0.0:
                raise ValueError(f"edge {i}->{j} has zero length")
            edges.append(Edge(i, tuple(vec / ln), ln))
            ends.append(j)
        else:
            dvec = np.asarray(spec["direction"], dtype=float)
            edges.append(Edge(i, tuple(dvec / np.hypot(*dvec)), np.inf))
            ends.append(None)
    return MetricGraph(tuple(map(tuple, verts)), tuple(edges), tuple(ends))


def load_graph(source) -> MetricGraph:
    """Read a graph from a JSON file path or an already-parsed dict.

    Edges use either ``{"start": i, "end": j}`` (finite segment) or
    ``{"start": i, "direction": [dx, dy]}`` (ray).
    """
    if isinstance(source, (str, Path)):
        source = json.loads(Path(source).read_text())
    return _build(source["vertices"], source["edges"])


def graph_to_dict(g: MetricGraph) -> dict:
    out = {"vertices": [list(v) for v in g.vertices], "edges": []}
    for e, end in zip(g.edges, g._end_index or [None] * len(g.edges)):
        if end is not None:
            out["edges"].append({"start": e.start, "end": end})
        else:
            out["edges"].append({"start": e.start, "direction": list(e.direction)})
    return out


def v_graph(opening: float = np.pi / 2, bisector: float = np.pi / 4) -> MetricGraph:
    """Two rays from the origin separated by ``opening``, symmetric about ``bisector``.

    With the defaults the rays are the positive x and y axes.
    """
    a1 = bisector - opening / 2
    a2 = bisector + opening / 2
    rays = [{"start": 0, "direction": [np.cos(a), np.sin(a)]} for a in (a1, a2)]
    # snap to exact axis directions where cos/sin round off
    for r in rays:
        r["direction"] = [0.0 if abs(c) < 1e-15 else c for c in r["direction"]]
    return _build([[0.0, 0.0]], rays)


def straight_line(angle: float = 0.0) -> MetricGraph:
    """Full line through the origin, built as two opposite rays."""
    c, s = np.cos(angle), np.sin(angle)
    c = 0.0 if abs(c) < 1e-15 else c
    s = 0.0 if abs(s) < 1e-15 else s
    return _build([[0.0, 0.0]], [{"start": 0, "direction": [c, s]}, {"start": 0, "direction": [-c, -s]}])
