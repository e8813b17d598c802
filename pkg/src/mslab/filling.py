"""Flat polyhedral disks that fill a metric triangle boundary.

The filling of a triangle is the Jordan region enclosed by its planar
boundary embedding, scaled by the bi-Lipschitz constant 4 and triangulated.
Scaling makes every disk distance dominate the original boundary metric, so
the disk can replace the triangle in a larger complex without shrinking any
distance. Boundary arcs correspond to triangle edges by arclength-
proportional reparametrization; the per-edge stretch factors land in [1, 16]
and are reported rather than hidden.
"""

import heapq
import json
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from .errors import DominationFailed, EmbeddingFailed, MismatchedSampling
from .metric_core import MetricSurfaceMesh, vertex_distances
from .tripod import K_CHECK, MetricTriangle, embed_triangle

# allowed ratio bound after the factor-4 scaling (areas scale by 16)
L_CONFIG = K_CHECK * 16
_SCALE = 4.0


@dataclass(frozen=True)
class BoundaryArc:
    """One boundary arc of a disk with its triangle-edge correspondence.

    ``disk_vertices`` walks the arc in order including both endpoints;
    ``arc_s`` is the cumulative disk arclength and ``arc_t`` its
    arclength-proportional image on the triangle edge.
    """

    disk_vertices: np.ndarray
    arc_s: np.ndarray
    arc_t: np.ndarray

    @property
    def length_s(self) -> float:
        return float(self.arc_s[-1])

    @property
    def length_t(self) -> float:
        return float(self.arc_t[-1])


@dataclass(frozen=True)
class PolyhedralDisk:
    """Flat triangulated disk filling a metric triangle boundary."""

    mesh: MetricSurfaceMesh
    boundary_correspondence: Tuple[BoundaryArc, BoundaryArc, BoundaryArc]
    scale: float
    sample_vertices: np.ndarray  # disk vertex id of each triangle sample

    def euler_characteristic(self) -> int:
        m = self.mesh
        return m.n_vertices - len(m.edges) + m.n_faces

    def to_json_dict(self) -> dict:
        return {
            "mesh": self.mesh.to_json_dict(),
            "scale": self.scale,
            "sample_vertices": self.sample_vertices.tolist(),
            "boundary_correspondence": [
                {
                    "disk_vertices": arc.disk_vertices.tolist(),
                    "arc_s": arc.arc_s.tolist(),
                    "arc_t": arc.arc_t.tolist(),
                }
                for arc in self.boundary_correspondence
            ],
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "PolyhedralDisk":
        arcs = tuple(
            BoundaryArc(
                disk_vertices=np.asarray(a["disk_vertices"], dtype=np.int64),
                arc_s=np.asarray(a["arc_s"], dtype=float),
                arc_t=np.asarray(a["arc_t"], dtype=float),
            )
            for a in data["boundary_correspondence"]
        )
        return cls(
            mesh=MetricSurfaceMesh.from_json_dict(data["mesh"], strict_faces=False),
            boundary_correspondence=arcs,
            scale=float(data["scale"]),
            sample_vertices=np.asarray(data["sample_vertices"], dtype=np.int64),
        )

    def save(self, path: str):
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, sort_keys=True)

    @classmethod
    def load(cls, path: str) -> "PolyhedralDisk":
        with open(path) as fh:
            return cls.from_json_dict(json.load(fh))


@dataclass(frozen=True)
class FillingReport:
    diam_ratio: float
    area_ratio: float
    boundary_length_ratios: Tuple[float, float, float]
    min_domination: float
    region_area: float
    boundary_diameter: float

    @property
    def near_zero_area(self) -> bool:
        """True when the enclosed region is negligible at the boundary scale."""
        return self.region_area <= 1e-3 * self.boundary_diameter**2


def _ear_clip(points: np.ndarray) -> np.ndarray:
    """Triangulate a simple polygon; tolerates collinear runs and slivers."""
    m = len(points)
    idx = list(range(m))
    x, y = points[:, 0], points[:, 1]
    signed = 0.5 * (np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))
    if signed < 0:
        idx = idx[::-1]
    scale2 = float(np.ptp(points, axis=0).max()) ** 2
    tol = 1e-12 * max(scale2, 1e-300)

    def cross(a, b, c):
        return (points[b, 0] - points[a, 0]) * (points[c, 1] - points[a, 1]) - (
            points[b, 1] - points[a, 1]
        ) * (points[c, 0] - points[a, 0])

    def blocked(a, b, c, ring):
        # any other ring vertex strictly inside triangle (a, b, c)
        for v in ring:
            if v in (a, b, c):
                continue
            s1 = cross(a, b, v)
            s2 = cross(b, c, v)
            s3 = cross(c, a, v)
            if s1 > tol and s2 > tol and s3 > tol:
                return True
            if s1 < -tol and s2 < -tol and s3 < -tol:
                return True
        return False

    faces: List[Tuple[int, int, int]] = []
    guard = 0
    while len(idx) > 3:
        n = len(idx)
        best = None
        best_flat = None
        for k in range(n):
            a, b, c = idx[k - 1], idx[k], idx[(k + 1) % n]
            turn = cross(a, b, c)
            if turn < -tol:
                continue
            if blocked(a, b, c, idx):
                continue
            if turn > tol:
                best = (k, a, b, c)
                break
            if best_flat is None:
                best_flat = (k, a, b, c)
        pick = best or best_flat
        if pick is None:
            # numerically stuck; clip the least reflex corner to terminate
            turns = [cross(idx[k - 1], idx[k], idx[(k + 1) % n]) for k in range(n)]
            k = int(np.argmax(turns))
            pick = (k, idx[k - 1], idx[k], idx[(k + 1) % n])
        k, a, b, c = pick
        if b != a and b != c and a != c:
            faces.append((a, b, c))
        idx.pop(k)
        guard += 1
        if guard > 4 * m:
            raise EmbeddingFailed("polygon triangulation did not terminate")
    a, b, c = idx
    faces.append((a, b, c))
    return np.asarray(faces, dtype=np.int64)


def _subdivide(points: np.ndarray, faces: np.ndarray):
    """One 4-to-1 midpoint split; returns (points, faces, midpoint map)."""
    mid = {}
    pts = [points]
    nxt = len(points)

    def midpoint(i, j):
        nonlocal nxt
        key = (i, j) if i < j else (j, i)
        if key not in mid:
            mid[key] = nxt
            pts.append(0.5 * (points[key[0]] + points[key[1]])[None, :])
            nxt += 1
        return mid[key]

    out = []
    for a, b, c in faces:
        ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        out.extend([(a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)])
    return np.vstack(pts), np.asarray(out, dtype=np.int64), mid


def fill_triangle(
    tri: MetricTriangle, h2_t: float, mesh_density: int = 1
) -> Tuple[PolyhedralDisk, FillingReport]:
    """Polyhedral disk filling the triangle, with its achieved constants.

    ``h2_t`` is the measured 2-content of the surface triangle this boundary
    came from, used for the reported area ratio (pass 0 for a boundary with
    no filled measure; the ratio is then reported against the region alone).
    ``mesh_density`` counts midpoint refinement rounds.
    """
    emb = embed_triangle(tri)
    pts = _SCALE * emb.points
    m = len(pts)
    faces = _ear_clip(pts)
    # boundary chains per arc, in sample order with the leading shared vertex
    n = tri.samples_per_edge
    chains = []
    for j in range(3):
        ids = [tri.vertex_indices[j]] + list(range(j * n, (j + 1) * n))
        chains.append([int(v) for v in ids])
    for _ in range(max(0, int(mesh_density))):
        pts, faces, mid = _subdivide(pts, faces)
        for chain in chains:
            refined = []
            for a, b in zip(chain[:-1], chain[1:]):
                key = (a, b) if a < b else (b, a)
                refined.extend([a, mid[key]])
            refined.append(chain[-1])
            chain[:] = refined

    mesh = MetricSurfaceMesh.build(
        vertices=pts, faces=faces, ambient="l2", strict_faces=False
    )

    arcs = []
    for j, chain in enumerate(chains):
        cids = np.asarray(chain, dtype=np.int64)
        seg = np.hypot(*np.diff(pts[cids], axis=0).T)
        arc_s = np.concatenate([[0.0], np.cumsum(seg)])
        total_s = max(arc_s[-1], 1e-300)
        arc_t = arc_s / total_s * tri.edge_lengths[j]
        arcs.append(BoundaryArc(disk_vertices=cids, arc_s=arc_s, arc_t=arc_t))
    sample_vertices = np.arange(m, dtype=np.int64)
    disk = PolyhedralDisk(
        mesh=mesh,
        boundary_correspondence=tuple(arcs),
        scale=_SCALE,
        sample_vertices=sample_vertices,
    )

    report = _measure_filling(disk, tri, h2_t, vertex_distances_fn=_scipy_distances)
    if report.min_domination < 1.0 - 1e-9:
        raise DominationFailed(
            f"disk distance undercuts the boundary metric "
            f"(min ratio {report.min_domination:.12g})"
        )
    if report.diam_ratio > L_CONFIG or report.area_ratio > L_CONFIG:
        raise EmbeddingFailed("filling exceeds the configured ratio bound")
    return disk, report


def _scipy_distances(mesh: MetricSurfaceMesh, sources) -> np.ndarray:
    return vertex_distances(mesh, sources)


def _heap_distances(mesh: MetricSurfaceMesh, sources) -> np.ndarray:
    """Plain binary-heap Dijkstra, independent of the bundled solver."""
    n = mesh.n_vertices
    adj: List[List[Tuple[int, float]]] = [[] for _ in range(n)]
    for (i, j), w in zip(mesh.edges, mesh.edge_lengths):
        adj[int(i)].append((int(j), float(w)))
        adj[int(j)].append((int(i), float(w)))
    out = np.full((len(sources), n), np.inf)
    for row, s in enumerate(sources):
        dist = out[row]
        dist[int(s)] = 0.0
        heap = [(0.0, int(s))]
        while heap:
            dv, v = heapq.heappop(heap)
            if dv > dist[v]:
                continue
            for w, lw in adj[v]:
                nd = dv + lw
                if nd < dist[w]:
                    dist[w] = nd
                    heapq.heappush(heap, (nd, w))
    return out


def _measure_filling(disk, tri, h2_t, vertex_distances_fn) -> FillingReport:
    mesh = disk.mesh
    all_d = vertex_distances_fn(mesh, np.arange(mesh.n_vertices))
    diam_s = float(all_d.max())
    diam_t = float(tri.dist.max())
    region_area = float(mesh.total_area()) / disk.scale**2
    samples = disk.sample_vertices
    ds = all_d[np.ix_(samples, samples)]
    dt = tri.dist
    np.fill_diagonal(ds, np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = ds / dt
    min_dom = float(np.nanmin(ratios))
    ratios_b = tuple(
        arc.length_s / tri.edge_lengths[j]
        for j, arc in enumerate(disk.boundary_correspondence)
    )
    area_ref = h2_t if h2_t > 0 else max(region_area, 1e-300)
    return FillingReport(
        diam_ratio=diam_s / max(diam_t, 1e-300),
        area_ratio=float(mesh.total_area()) / area_ref,
        boundary_length_ratios=ratios_b,
        min_domination=min_dom,
        region_area=region_area,
        boundary_diameter=diam_t,
    )


@dataclass(frozen=True)
class VerifyDetail:
    ok: bool
    diam_ok: bool
    area_ok: bool
    boundary_ok: bool
    domination_ok: bool
    max_deviation: float
    recomputed: FillingReport


def verify_filling(
    disk: PolyhedralDisk, tri: MetricTriangle, report: FillingReport, tol: float = 1e-6
) -> VerifyDetail:
    """Recompute every reported ratio with an independent shortest-path pass.

    Flags each lemma item separately: a deviation beyond ``tol`` on a ratio
    marks that item as failed rather than raising.
    """
    n = tri.samples_per_edge
    if len(disk.sample_vertices) != 3 * n:
        raise MismatchedSampling("disk was built for a different sampling")
    for arc in disk.boundary_correspondence:
        if len(arc.disk_vertices) != len(arc.arc_s):
            raise MismatchedSampling("boundary correspondence arrays disagree")
    fresh = _measure_filling(disk, tri, 0.0, vertex_distances_fn=_heap_distances)

    def close(a, b):
        return abs(a - b) <= tol * max(abs(a), abs(b), 1.0)

    diam_ok = close(fresh.diam_ratio, report.diam_ratio)
    area_ok = close(fresh.region_area, report.region_area)
    boundary_ok = all(
        close(a, b) and 1.0 - tol <= b <= 16.0 + tol
        for a, b in zip(fresh.boundary_length_ratios, report.boundary_length_ratios)
    )
    domination_ok = (
        close(fresh.min_domination, report.min_domination)
        and fresh.min_domination >= 1.0 - 1e-9
    )
    devs = [
        abs(fresh.diam_ratio - report.diam_ratio),
        abs(fresh.region_area - report.region_area),
        abs(fresh.min_domination - report.min_domination),
        abs(fresh.boundary_diameter - report.boundary_diameter),
    ] + [
        abs(a - b)
        for a, b in zip(fresh.boundary_length_ratios, report.boundary_length_ratios)
    ]
    return VerifyDetail(
        ok=diam_ok and area_ok and boundary_ok and domination_ok,
        diam_ok=diam_ok,
        area_ok=area_ok,
        boundary_ok=boundary_ok,
        domination_ok=domination_ok,
        max_deviation=float(max(devs)),
        recomputed=fresh,
    )
