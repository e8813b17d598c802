"""Sampled metric spaces, surface meshes, and induced length metrics.

Distances are plain float64 arrays; unreachable pairs carry ``math.inf`` (the
explicit infinity sentinel, never a large finite stand-in).
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix
from scipy.sparse.csgraph import connected_components, dijkstra

from .errors import MeshInvalid, NegativeProduct, NoPath

logger = logging.getLogger(__name__)

INF = math.inf

# ---------------------------------------------------------------------------
# ambient metrics


def pair_dist(a: np.ndarray, b: np.ndarray, kind: str) -> np.ndarray:
    """Distance between coordinate rows under an ambient plane metric."""
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    if kind == "l2":
        return np.sqrt((d * d).sum(axis=-1))
    if kind == "linf":
        return np.abs(d).max(axis=-1)
    raise ValueError(f"unknown ambient metric {kind!r}")


# ---------------------------------------------------------------------------
# sampled metric spaces


@dataclass(frozen=True)
class SampledMetricSpace:
    """Finite metric space: point labels plus a symmetric distance matrix.

    ``dist`` may contain ``inf`` for pairs in different components. Instances
    are treated as immutable; concurrent readers need no locking.
    """

    points: tuple
    dist: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.dist, dtype=float)
        if d.ndim != 2 or d.shape[0] != d.shape[1]:
            raise MeshInvalid("distance matrix must be square")
        if len(self.points) != d.shape[0]:
            raise MeshInvalid("points/dist size mismatch")
        object.__setattr__(self, "dist", d)

    @property
    def n(self) -> int:
        return self.dist.shape[0]

    def index(self, label) -> int:
        return self.points.index(label)


@dataclass
class ViolationReport:
    """Outcome of metric_axioms_check. Empty lists mean the axioms hold."""

    symmetry: list = field(default_factory=list)
    diagonal: list = field(default_factory=list)
    negativity: list = field(default_factory=list)
    triangle: list = field(default_factory=list)
    checked_triples: int = 0

    @property
    def ok(self) -> bool:
        return not (self.symmetry or self.diagonal or self.negativity or self.triangle)

    def worst_triangle_excess(self) -> float:
        if not self.triangle:
            return 0.0
        return max(t[3] for t in self.triangle)


def metric_axioms_check(
    space: SampledMetricSpace,
    rel_tol: float = 1e-9,
    max_report: int = 32,
    max_full: int = 600,
    sample_triples: int = 200_000,
    seed: int = 0,
) -> ViolationReport:
    """Check symmetry, zero diagonal, nonnegativity and the triangle inequality.

    Full cubic sweep up to ``max_full`` points, seeded random triples beyond.
    Infinite entries are legal when symmetric; NaN is always a violation.
    """
    d = space.dist
    n = d.shape[0]
    finite = d[np.isfinite(d)]
    scale = float(finite.max()) if finite.size else 1.0
    tol = rel_tol * max(scale, 1.0)
    rep = ViolationReport()

    if np.isnan(d).any():
        ii, jj = np.argwhere(np.isnan(d))[:max_report].T
        rep.negativity.extend((int(i), int(j), float("nan")) for i, j in zip(ii, jj))
        return rep

    with np.errstate(invalid="ignore"):
        asym = np.abs(d - d.T)
    asym[~np.isfinite(asym)] = np.where(
        np.isfinite(d)[~np.isfinite(asym)] == np.isfinite(d.T)[~np.isfinite(asym)], 0.0, INF
    )
    bad = np.argwhere(asym > tol)
    for i, j in bad[:max_report]:
        rep.symmetry.append((int(i), int(j), float(asym[i, j])))

    diag = np.abs(np.diagonal(d))
    for i in np.nonzero(diag > tol)[0][:max_report]:
        rep.diagonal.append((int(i), float(d[i, i])))

    neg = np.argwhere(d < -tol)
    for i, j in neg[:max_report]:
        rep.negativity.append((int(i), int(j), float(d[i, j])))

    if n <= max_full:
        ks = range(n)
        rep.checked_triples = n * n * n
        for k in ks:
            # d(i,j) <= d(i,k) + d(k,j); inf arithmetic is safe here
            through = d[:, k][:, None] + d[k, :][None, :]
            excess = d - through
            excess[~np.isfinite(excess)] = 0.0  # inf - inf pairs: no violation
            viol = np.argwhere(excess > tol)
            for i, j in viol:
                if len(rep.triangle) >= max_report:
                    break
                rep.triangle.append((int(i), int(j), int(k), float(excess[i, j])))
            if len(rep.triangle) >= max_report:
                break
    else:
        rng = np.random.default_rng(seed)
        m = min(sample_triples, n * n)
        trip = rng.integers(0, n, size=(m, 3))
        lhs = d[trip[:, 0], trip[:, 1]]
        rhs = d[trip[:, 0], trip[:, 2]] + d[trip[:, 2], trip[:, 1]]
        excess = lhs - rhs
        excess[~np.isfinite(excess)] = 0.0
        rep.checked_triples = m
        for idx in np.nonzero(excess > tol)[0][:max_report]:
            i, j, k = trip[idx]
            rep.triangle.append((int(i), int(j), int(k), float(excess[idx])))
    return rep


def gromov_product(d_pr: float, d_qr: float, d_pq: float, tol: float = 1e-9) -> float:
    """(p . q)_r = (d(p,r) + d(q,r) - d(p,q)) / 2 from the three distances.

    Raises NegativeProduct when the value is negative beyond tolerance (the
    inputs then violate the triangle inequality); tiny negatives clamp to 0.
    """
    for v in (d_pr, d_qr, d_pq):
        if not math.isfinite(v) or v < 0:
            raise NegativeProduct(f"distances must be finite and nonnegative, got {v}")
    val = 0.5 * (d_pr + d_qr - d_pq)
    scale = max(d_pr, d_qr, d_pq, 1.0)
    if val < -tol * scale:
        raise NegativeProduct(f"gromov product {val} < 0; not a metric triple")
    return max(val, 0.0)


# ---------------------------------------------------------------------------
# surface meshes


def _canonical_edges(faces: np.ndarray) -> np.ndarray:
    e = np.vstack([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    e.sort(axis=1)
    return np.unique(e, axis=0)


@dataclass
class MetricSurfaceMesh:
    """Triangle mesh with per-edge lengths and an optional ambient plane metric.

    ``area_weight`` converts Lebesgue (coordinate) face area into Hausdorff
    2-measure for the declared metric: 1 for l2, pi/4 for linf meshes.
    ``vertex_grid`` is an optional structured chart (2-d array of vertex ids)
    attached by the generators; block triangulation requires it.

    Instances are not mutated after ``build``; share freely across threads.
    """

    vertices: Optional[np.ndarray]
    faces: np.ndarray
    edges: np.ndarray
    edge_lengths: np.ndarray
    ambient: Optional[str] = None
    ambient_matrix: Optional[np.ndarray] = None
    area_weight: float = 1.0
    vertex_grid: Optional[np.ndarray] = None
    face_length_weight: Optional[np.ndarray] = None
    _edge_index: dict = field(default_factory=dict, repr=False)
    _graph: Optional[csr_matrix] = field(default=None, repr=False)

    # -- construction -------------------------------------------------------

    @classmethod
    def build(
        cls,
        vertices: Optional[np.ndarray],
        faces: Sequence[Sequence[int]],
        edge_lengths: Optional[dict] = None,
        ambient: Optional[str] = None,
        ambient_matrix: Optional[np.ndarray] = None,
        area_weight: float = 1.0,
        vertex_grid: Optional[np.ndarray] = None,
        face_length_weight: Optional[np.ndarray] = None,
        validate: bool = True,
        strict_faces: bool = True,
    ) -> "MetricSurfaceMesh":
        faces = np.asarray(faces, dtype=np.int64)
        if faces.ndim != 2 or faces.shape[1] != 3:
            raise MeshInvalid("faces must be (m, 3)")
        if vertices is not None:
            vertices = np.asarray(vertices, dtype=float)
            nv = vertices.shape[0]
        else:
            nv = int(faces.max()) + 1 if faces.size else 0
        if faces.size and (faces.min() < 0 or faces.max() >= nv):
            raise MeshInvalid("face indices out of range")
        if ((faces[:, 0] == faces[:, 1]) | (faces[:, 1] == faces[:, 2]) | (faces[:, 0] == faces[:, 2])).any():
            raise MeshInvalid("degenerate face (repeated vertex)")

        edges = _canonical_edges(faces)
        lengths = np.empty(len(edges), dtype=float)
        if edge_lengths is not None:
            for r, (i, j) in enumerate(edges):
                key = (int(i), int(j))
                if key in edge_lengths:
                    lengths[r] = edge_lengths[key]
                elif (key[1], key[0]) in edge_lengths:
                    lengths[r] = edge_lengths[(key[1], key[0])]
                else:
                    raise MeshInvalid(f"missing edge length for {key}")
        else:
            if vertices is None:
                raise MeshInvalid("edge lengths required for abstract meshes")
            kind = ambient or "l2"
            if kind == "matrix":
                if ambient_matrix is None:
                    raise MeshInvalid("ambient 'matrix' requires ambient_matrix")
                lengths = np.asarray(
                    [ambient_matrix[i, j] for i, j in edges], dtype=float
                )
            else:
                lengths = pair_dist(vertices[edges[:, 0]], vertices[edges[:, 1]], kind)

        mesh = cls(
            vertices=vertices,
            faces=faces,
            edges=edges,
            edge_lengths=lengths,
            ambient=ambient,
            ambient_matrix=None if ambient_matrix is None else np.asarray(ambient_matrix, float),
            area_weight=float(area_weight),
            vertex_grid=None if vertex_grid is None else np.asarray(vertex_grid, np.int64),
            face_length_weight=None if face_length_weight is None else np.asarray(face_length_weight, float),
        )
        mesh._edge_index = {(int(i), int(j)): r for r, (i, j) in enumerate(edges)}
        if validate:
            mesh._validate(strict_faces=strict_faces)
        return mesh

    def _validate(self, strict_faces: bool = True):
        if (self.edge_lengths <= 0).any():
            raise MeshInvalid("edge lengths must be positive")
        counts = self.edge_face_counts()
        if (counts > 2).any():
            raise MeshInvalid("non-manifold edge (more than two incident faces)")
        # strict triangle inequality on the three edge lengths of every face;
        # meshes carrying degenerate length weights only get the non-strict form
        el = self.face_edge_lengths()
        s = el.sum(axis=1)
        tol = 1e-12 * np.maximum(s, 1.0)
        mx2 = 2 * el.max(axis=1)
        # strict mode flags flat faces (equality); non-strict mode allows them
        bad = (mx2 >= s - tol) if strict_faces else (mx2 > s + tol)
        if bad.any():
            worst = int(np.argmax(mx2 - s))
            raise MeshInvalid(f"face {worst} violates the triangle inequality")
        # With degenerate length weights the coordinates are only a chart, so
        # edge lengths may legitimately undershoot the ambient distance.
        if (
            self.vertices is not None
            and self.ambient in ("l2", "linf")
            and self.face_length_weight is None
        ):
            amb = pair_dist(
                self.vertices[self.edges[:, 0]], self.vertices[self.edges[:, 1]], self.ambient
            )
            if (self.edge_lengths < amb - 1e-9 * np.maximum(amb, 1.0)).any():
                raise MeshInvalid("edge length below ambient distance of its endpoints")

    # -- basic queries -------------------------------------------------------

    @property
    def n_vertices(self) -> int:
        if self.vertices is not None:
            return self.vertices.shape[0]
        return int(self.faces.max()) + 1 if self.faces.size else 0

    @property
    def n_faces(self) -> int:
        return self.faces.shape[0]

    def edge_id(self, i: int, j: int) -> int:
        key = (i, j) if i < j else (j, i)
        return self._edge_index[key]

    def edge_face_counts(self) -> np.ndarray:
        counts = np.zeros(len(self.edges), dtype=np.int64)
        for fe in self.face_edge_ids().ravel():
            counts[fe] += 1
        return counts

    def face_edge_ids(self) -> np.ndarray:
        if not hasattr(self, "_face_edge_ids"):
            ids = np.empty_like(self.faces)
            for r, (a, b, c) in enumerate(self.faces):
                ids[r, 0] = self.edge_id(int(a), int(b))
                ids[r, 1] = self.edge_id(int(b), int(c))
                ids[r, 2] = self.edge_id(int(c), int(a))
            self._face_edge_ids = ids
        return self._face_edge_ids

    def face_edge_lengths(self) -> np.ndarray:
        return self.edge_lengths[self.face_edge_ids()]

    def face_areas(self) -> np.ndarray:
        """Hausdorff 2-measure of each face (area_weight times Lebesgue area)."""
        if self.vertices is not None:
            p = self.vertices[self.faces]
            lebesgue = 0.5 * np.abs(
                (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1])
            )
            return self.area_weight * lebesgue
        el = np.sort(self.face_edge_lengths(), axis=1)
        a, b, c = el[:, 2], el[:, 1], el[:, 0]
        # numerically stable Heron (Kahan ordering a >= b >= c)
        t = (a + (b + c)) * (c - (a - b)) * (c + (a - b)) * (a + (b - c))
        return self.area_weight * 0.25 * np.sqrt(np.maximum(t, 0.0))

    def total_area(self) -> float:
        return float(self.face_areas().sum())

    def boundary_loops(self) -> list:
        """Ordered vertex loops of the boundary (edges with one incident face)."""
        counts = self.edge_face_counts()
        bedges = self.edges[counts == 1]
        adj: dict = {}
        for i, j in bedges:
            adj.setdefault(int(i), []).append(int(j))
            adj.setdefault(int(j), []).append(int(i))
        seen = set()
        loops = []
        for start in sorted(adj):
            if start in seen:
                continue
            loop = [start]
            seen.add(start)
            prev, cur = None, start
            while True:
                nxts = [v for v in sorted(adj[cur]) if v != prev and v not in seen]
                if not nxts:
                    break
                prev, cur = cur, nxts[0]
                loop.append(cur)
                seen.add(cur)
            loops.append(np.asarray(loop, dtype=np.int64))
        return loops

    def graph(self) -> csr_matrix:
        """Symmetric vertex adjacency with edge lengths as weights."""
        if self._graph is None:
            i, j = self.edges[:, 0], self.edges[:, 1]
            w = self.edge_lengths
            n = self.n_vertices
            g = coo_matrix(
                (np.concatenate([w, w]), (np.concatenate([i, j]), np.concatenate([j, i]))),
                shape=(n, n),
            )
            self._graph = g.tocsr()
        return self._graph

    # -- serialization -------------------------------------------------------

    def to_json_dict(self) -> dict:
        out = {
            "vertices": None if self.vertices is None else self.vertices.tolist(),
            "faces": self.faces.tolist(),
            "edge_lengths": {
                f"{int(i)}-{int(j)}": float(l)
                for (i, j), l in zip(self.edges, self.edge_lengths)
            },
            "ambient": self.ambient,
        }
        if self.ambient == "matrix":
            out["matrix"] = self.ambient_matrix.tolist()
        if self.area_weight != 1.0:
            out["area_weight"] = self.area_weight
        if self.vertex_grid is not None:
            out["vertex_grid"] = self.vertex_grid.tolist()
        if self.face_length_weight is not None:
            out["face_length_weight"] = self.face_length_weight.tolist()
        return out

    @classmethod
    def from_json_dict(
        cls, data: dict, strict_faces: Optional[bool] = None
    ) -> "MetricSurfaceMesh":
        lengths = {}
        for key, val in data.get("edge_lengths", {}).items():
            i, j = key.split("-")
            lengths[(int(i), int(j))] = float(val)
        if strict_faces is None:
            strict_faces = data.get("face_length_weight") is None
        return cls.build(
            vertices=None if data.get("vertices") is None else np.asarray(data["vertices"], float),
            faces=np.asarray(data["faces"], np.int64),
            edge_lengths=lengths or None,
            ambient=data.get("ambient"),
            ambient_matrix=None if data.get("matrix") is None else np.asarray(data["matrix"], float),
            area_weight=float(data.get("area_weight", 1.0)),
            vertex_grid=None if data.get("vertex_grid") is None else np.asarray(data["vertex_grid"], np.int64),
            face_length_weight=None
            if data.get("face_length_weight") is None
            else np.asarray(data["face_length_weight"], float),
            strict_faces=strict_faces,
        )

    def save(self, path: str):
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, sort_keys=True)

    @classmethod
    def load(cls, path: str) -> "MetricSurfaceMesh":
        with open(path) as fh:
            return cls.from_json_dict(json.load(fh))


# ---------------------------------------------------------------------------
# induced length metric


def _subdivided_graph(mesh: MetricSurfaceMesh, k: int):
    """Vertex graph refined with k-fold edge subdivision plus face chords.

    Returns (csr graph, total node count). Vertices keep their ids; edge
    interior nodes are appended after them. Chords require coordinates and an
    l2/linf ambient (a chord is the straight passage across a flat face, whose
    length under either metric is the ambient distance of its endpoints).
    """
    n = mesh.n_vertices
    if k <= 1:
        return mesh.graph(), n
    if mesh.vertices is None or mesh.ambient not in ("l2", "linf", None):
        raise MeshInvalid("subdivision refinement needs coordinates and an l2/linf ambient")
    kind = mesh.ambient or "l2"

    rows, cols, data = [], [], []
    node_count = n
    coords = [mesh.vertices]
    # nodes along each edge: [u, e_1, ..., e_{k-1}, v]
    edge_nodes = np.empty((len(mesh.edges), k + 1), dtype=np.int64)
    for r, (u, v) in enumerate(mesh.edges):
        ids = [int(u)]
        ts = np.arange(1, k) / k
        pts = (1 - ts)[:, None] * mesh.vertices[u] + ts[:, None] * mesh.vertices[v]
        for p in pts:
            ids.append(node_count)
            node_count += 1
        coords.append(pts)
        ids.append(int(v))
        edge_nodes[r] = ids
        w = mesh.edge_lengths[r] / k
        for a, b in zip(ids[:-1], ids[1:]):
            rows.append(a), cols.append(b), data.append(w)
    allc = np.vstack(coords)

    flw = mesh.face_length_weight
    for fi, fe in enumerate(mesh.face_edge_ids()):
        nodes = np.unique(np.concatenate([edge_nodes[e] for e in fe]))
        pts = allc[nodes]
        scale = 1.0 if flw is None else float(flw[fi])
        for ai in range(len(nodes)):
            d = scale * pair_dist(pts[ai + 1 :], pts[ai], kind)
            for off, w in enumerate(d):
                rows.append(int(nodes[ai])), cols.append(int(nodes[ai + 1 + off])), data.append(float(w))

    rows = np.asarray(rows)
    cols = np.asarray(cols)
    data = np.asarray(data, dtype=float)
    # chords duplicate chain arcs along shared edges; coo->csr would sum the
    # duplicates, so collapse each unordered pair to its smallest weight first
    a = np.minimum(rows, cols)
    b = np.maximum(rows, cols)
    order = np.lexsort((b, a))
    a, b, data = a[order], b[order], data[order]
    firsts = np.concatenate([[True], (np.diff(a) != 0) | (np.diff(b) != 0)])
    idx = np.flatnonzero(firsts)
    wmin = np.minimum.reduceat(data, idx)
    g = coo_matrix(
        (
            np.concatenate([wmin, wmin]),
            (np.concatenate([a[idx], b[idx]]), np.concatenate([b[idx], a[idx]])),
        ),
        shape=(node_count, node_count),
    )
    return g.tocsr(), node_count


def vertex_distances(
    mesh: MetricSurfaceMesh, sources: Sequence[int], subdivision: int = 1
) -> np.ndarray:
    """Induced-length distances from the given source vertices to all vertices."""
    g, _ = _subdivided_graph(mesh, subdivision)
    src = np.asarray(sources, dtype=np.int64)
    dist = dijkstra(g, directed=False, indices=src)
    return dist[:, : mesh.n_vertices]


def induced_length_metric(
    mesh: MetricSurfaceMesh, subdivision: int = 1, sources: Optional[Sequence[int]] = None
) -> SampledMetricSpace:
    """Shortest-path length metric on mesh vertices (inf across components).

    ``subdivision`` >= 2 refines each edge into that many segments and adds
    straight face chords between same-face boundary nodes; refining never
    increases any distance between surviving vertices.
    """
    n = mesh.n_vertices
    idx = np.arange(n) if sources is None else np.asarray(sources, np.int64)
    dist = vertex_distances(mesh, idx, subdivision=subdivision)
    if sources is None:
        dist = 0.5 * (dist + dist.T)  # symmetrize float noise
        return SampledMetricSpace(points=tuple(range(n)), dist=dist)
    return SampledMetricSpace(points=tuple(int(i) for i in idx), dist=dist[:, idx])


# ---------------------------------------------------------------------------
# geodesics


@dataclass(frozen=True)
class PathPolyline:
    """Vertex path with its length; ``points`` filled when the mesh has coords."""

    vertex_ids: np.ndarray
    length: float
    points: Optional[np.ndarray] = None


def geodesic(mesh: MetricSurfaceMesh, a: int, b: int) -> PathPolyline:
    """A shortest vertex path from a to b, ties broken lexicographically.

    At every step the smallest-index neighbor that stays on some shortest path
    is taken, so the returned polyline is deterministic. Raises NoPath when the
    endpoints lie in different components.
    """
    n = mesh.n_vertices
    if not (0 <= a < n and 0 <= b < n):
        raise MeshInvalid("geodesic endpoints out of range")
    if a == b:
        ids = np.asarray([a], dtype=np.int64)
        pts = None if mesh.vertices is None else mesh.vertices[ids]
        return PathPolyline(vertex_ids=ids, length=0.0, points=pts)

    g = mesh.graph()
    dist_b = dijkstra(g, directed=False, indices=b)
    total = float(dist_b[a])
    if not math.isfinite(total):
        raise NoPath(f"vertices {a} and {b} lie in different components")

    tol = 1e-9 * max(total, 1.0)
    indptr, indices, data = g.indptr, g.indices, g.data
    path = [a]
    cur = a
    while cur != b:
        nbrs = indices[indptr[cur] : indptr[cur + 1]]
        wts = data[indptr[cur] : indptr[cur + 1]]
        ok = np.abs(wts + dist_b[nbrs] - dist_b[cur]) <= tol
        if not ok.any():
            raise NoPath("shortest-path reconstruction failed (inconsistent graph)")
        cur = int(nbrs[ok].min())
        path.append(cur)
        if len(path) > n:
            raise NoPath("shortest-path reconstruction cycled")
    ids = np.asarray(path, dtype=np.int64)
    pts = None if mesh.vertices is None else mesh.vertices[ids]
    return PathPolyline(vertex_ids=ids, length=total, points=pts)


def component_labels(mesh: MetricSurfaceMesh) -> np.ndarray:
    _, labels = connected_components(mesh.graph(), directed=False)
    return labels
