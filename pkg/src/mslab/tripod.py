"""Metric triangles, tripod projection, and the planar boundary embedding.

A metric triangle is a Jordan curve made of three arcs, each isometric to an
interval. Its tripod model is the plane tree with three straight spokes whose
lengths are the Gromov products of the vertex distances. The boundary embeds
into the plane by pushing each tripod foot outward, along a fixed direction
per edge, by the distance to the union of the other two edges. That embedding
is 4-bi-Lipschitz, and the Jordan region it bounds has area at most
K_CHECK times the Hausdorff 2-measure of any surface triangle with this
boundary; both constants are checked here numerically, not proven.
"""

from dataclasses import dataclass
from typing import Sequence, Tuple, Union

import numpy as np
from scipy.sparse.csgraph import floyd_warshall

from .errors import (
    EmbeddingFailed,
    InconsistentTriangle,
    MismatchedSampling,
    NotJordan,
    SelfIntersection,
    ZeroDistancePair,
)
from .metric_core import MetricSurfaceMesh, geodesic, gromov_product, vertex_distances

# area ratio allowed between the embedded Jordan region and the triangle,
# 64 * 30 * pi
K_CHECK = 64 * 30 * np.pi

# spoke directions e_j and outward offset directions v_j, 120 degrees apart,
# with v_j bisecting the sector between spokes j and j+1
_SPOKE_DIR = np.stack(
    [np.array([np.cos(a), np.sin(a)]) for a in (0.0, 2 * np.pi / 3, 4 * np.pi / 3)]
)
_OFFSET_DIR = np.stack(
    [np.array([np.cos(a), np.sin(a)]) for a in (np.pi / 3, np.pi, 5 * np.pi / 3)]
)


@dataclass(frozen=True)
class MetricTriangle:
    """Sampled metric on the boundary curve of a triangle.

    Samples are laid out edge by edge: block j holds the n samples of edge j
    at arclengths (k+1) * len_j / n from the edge's start vertex, so each
    block ends with a triangle vertex and the start vertex lives in the
    previous block. ``dist`` is the full symmetric matrix over all 3n
    samples; ``arc`` holds the within-edge arclength coordinate.
    """

    edge_lengths: Tuple[float, float, float]
    samples_per_edge: int
    dist: np.ndarray
    vertex_indices: Tuple[int, int, int]
    edge_assignment: np.ndarray
    arc: np.ndarray

    @property
    def n_samples(self) -> int:
        return self.dist.shape[0]

    def edge_members(self, j: int) -> np.ndarray:
        """Sample ids on edge j including both endpoint vertices."""
        n = self.samples_per_edge
        block = np.arange(j * n, (j + 1) * n)
        start = self.vertex_indices[j]
        return np.concatenate([[start], block])

    def edge_arcs(self, j: int) -> np.ndarray:
        """Arclength from the edge start for ``edge_members(j)``."""
        n = self.samples_per_edge
        return np.concatenate([[0.0], self.arc[j * n : (j + 1) * n]])

    def validate(self, rel_tol: float = 1e-9) -> None:
        d = self.dist
        n = self.samples_per_edge
        if d.shape != (3 * n, 3 * n):
            raise InconsistentTriangle("distance matrix must cover 3n samples")
        scale = max(float(np.max(self.edge_lengths)), 1e-300)
        tol = rel_tol * scale
        if np.abs(d - d.T).max() > tol or np.abs(np.diagonal(d)).max() > tol:
            raise InconsistentTriangle("distance matrix is not symmetric with zero diagonal")
        if d.min() < -tol:
            raise InconsistentTriangle("negative distances")
        for j in range(3):
            ids = self.edge_members(j)
            arcs = self.edge_arcs(j)
            want = np.abs(arcs[:, None] - arcs[None, :])
            got = d[np.ix_(ids, ids)]
            if np.abs(got - want).max() > tol:
                raise InconsistentTriangle(
                    f"edge {j} is not isometric to an interval"
                )
            if abs(arcs[-1] - self.edge_lengths[j]) > tol:
                raise InconsistentTriangle(f"edge {j} arclength mismatch")
        # spot-check the triangle inequality through a vertex anchor
        for v in self.vertex_indices:
            slack = d - (d[:, [v]] + d[[v], :])
            if slack.max() > tol:
                raise InconsistentTriangle("triangle inequality fails through a vertex")


@dataclass(frozen=True)
class TripodModel:
    """Plane tripod: three spokes from the origin, 120 degrees apart."""

    spoke_lengths: np.ndarray  # (3,) Gromov products
    vertices: np.ndarray  # (3, 2) outer endpoints u_j

    def vertex(self, j: int) -> np.ndarray:
        return self.vertices[j]


@dataclass(frozen=True)
class EmbeddedTriangle:
    """Planar image of the boundary samples under the offset embedding."""

    tri: MetricTriangle
    tripod: TripodModel
    feet: np.ndarray  # (3n, 2) tripod projections
    foot_spoke: np.ndarray  # (3n,) spoke index of each foot
    foot_radius: np.ndarray  # (3n,) distance of the foot from the center
    offsets: np.ndarray  # (3n,) distance to the union of the other edges
    points: np.ndarray  # (3n, 2) embedded positions


def build_tripod(tri: MetricTriangle, rel_tol: float = 1e-9) -> TripodModel:
    """Tripod model with spoke lengths from the vertex Gromov products.

    Raises InconsistentTriangle when adjacent spokes fail to split an edge
    length exactly, which happens iff some edge is not a geodesic between its
    endpoints.
    """
    vi = tri.vertex_indices
    dv = tri.dist[np.ix_(vi, vi)]
    spokes = np.array(
        [gromov_product(dv[j, (j + 1) % 3], dv[j, (j + 2) % 3], dv[(j + 1) % 3, (j + 2) % 3])
         for j in range(3)]
    )
    scale = max(float(np.max(tri.edge_lengths)), 1e-300)
    for j in range(3):
        want = tri.edge_lengths[j]
        got = spokes[j] + spokes[(j + 1) % 3]
        if abs(got - want) > rel_tol * scale:
            raise InconsistentTriangle(
                f"spokes {got:.12g} do not split edge {j} of length {want:.12g}"
            )
    return TripodModel(spoke_lengths=spokes, vertices=spokes[:, None] * _SPOKE_DIR)


def _feet(tri: MetricTriangle, tripod: TripodModel):
    """Spoke index, radius, and planar point of every sample's projection."""
    j = tri.edge_assignment
    s = tri.arc
    r1 = tripod.spoke_lengths[j]
    inward = s <= r1
    spoke = np.where(inward, j, (j + 1) % 3)
    radius = np.where(inward, r1 - s, s - r1)
    pts = radius[:, None] * _SPOKE_DIR[spoke]
    return spoke, radius, pts


def project_to_tripod(
    tri: MetricTriangle, sample: Union[int, Tuple[int, float]]
) -> np.ndarray:
    """Planar tripod image of a boundary sample (or of (edge, arclength))."""
    tripod = build_tripod(tri)
    if isinstance(sample, (int, np.integer)):
        spoke, radius, pts = _feet(tri, tripod)
        return pts[int(sample)]
    j, s = sample
    r1 = tripod.spoke_lengths[j]
    if s <= r1:
        return (r1 - s) * _SPOKE_DIR[j]
    return (s - r1) * _SPOKE_DIR[(j + 1) % 3]


def tripod_pair_distances(spoke: np.ndarray, radius: np.ndarray) -> np.ndarray:
    """Tree metric between tripod points given as (spoke, radius) pairs."""
    same = spoke[:, None] == spoke[None, :]
    return np.where(
        same,
        np.abs(radius[:, None] - radius[None, :]),
        radius[:, None] + radius[None, :],
    )


def projection_expansion(tri: MetricTriangle) -> float:
    """Worst ratio of tripod distance to triangle distance over sample pairs.

    The tripod projection is 1-Lipschitz, so this is at most 1 up to float
    noise for any valid metric triangle.
    """
    tripod = build_tripod(tri)
    spoke, radius, _ = _feet(tri, tripod)
    td = tripod_pair_distances(spoke, radius)
    d = tri.dist.copy()
    np.fill_diagonal(d, np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = td / d
    return float(np.nanmax(ratio))


def embed_triangle(tri: MetricTriangle) -> EmbeddedTriangle:
    """Offset embedding of the boundary samples into the plane.

    The offset of a sample on edge j is its distance to the union of the
    other two edges, estimated as a minimum over their samples (error at most
    half the sample spacing); shared vertices belong to both adjacent edges,
    so vertex offsets are exactly zero.
    """
    tri.validate()
    tripod = build_tripod(tri)
    spoke, radius, feet = _feet(tri, tripod)
    n = tri.samples_per_edge
    m = 3 * n
    offsets = np.empty(m)
    for j in range(3):
        block = np.arange(j * n, (j + 1) * n)
        other = np.setdiff1d(np.arange(m), block)
        # the block's own end sample is a triangle vertex, hence also a point
        # of the next edge
        targets = np.concatenate([other, [tri.vertex_indices[(j + 1) % 3]]])
        offsets[block] = tri.dist[np.ix_(block, targets)].min(axis=1)
    points = feet + offsets[:, None] * _OFFSET_DIR[tri.edge_assignment]

    gap = points[:, None, :] - points[None, :, :]
    pdist = np.hypot(gap[..., 0], gap[..., 1])
    np.fill_diagonal(pdist, np.inf)
    if pdist.min() <= 0.0:
        i, k = np.unravel_index(int(np.argmin(pdist)), pdist.shape)
        raise SelfIntersection(f"samples {i} and {k} embed to the same point")
    emb = EmbeddedTriangle(
        tri=tri,
        tripod=tripod,
        feet=feet,
        foot_spoke=spoke,
        foot_radius=radius,
        offsets=offsets,
        points=points,
    )
    bad = _first_self_intersection(points)
    if bad is not None:
        raise SelfIntersection(f"boundary segments {bad[0]} and {bad[1]} cross")
    return emb


def _first_self_intersection(points: np.ndarray):
    """Indices of the first properly crossing segment pair, or None."""
    m = len(points)
    a = points
    b = np.roll(points, -1, axis=0)

    def orient(p, q, r):
        return (q[..., 0] - p[..., 0]) * (r[..., 1] - p[..., 1]) - (
            q[..., 1] - p[..., 1]
        ) * (r[..., 0] - p[..., 0])

    for i in range(m - 2):
        ks = np.arange(i + 2, m if i > 0 else m - 1)
        if len(ks) == 0:
            continue
        o1 = orient(a[i], b[i], a[ks]) * orient(a[i], b[i], b[ks])
        o2 = orient(a[ks], b[ks], a[i]) * orient(a[ks], b[ks], b[i])
        hit = np.flatnonzero((o1 < 0) & (o2 < 0))
        if len(hit):
            return i, int(ks[hit[0]])
    return None


@dataclass(frozen=True)
class DistortionReport:
    max_expand: float
    max_contract: float


def distortion_certificate(
    emb: EmbeddedTriangle, tol: float = 1e-9, check: bool = True
) -> DistortionReport:
    """Extremal expansion and contraction of the embedding over sample pairs.

    Both factors are at most 4 for every metric triangle; with ``check`` the
    bound is asserted at 4 * (1 + tol).
    """
    d = emb.tri.dist
    m = d.shape[0]
    iu = np.triu_indices(m, k=1)
    dd = d[iu]
    if dd.min() <= 0.0:
        k = int(np.argmin(dd))
        raise ZeroDistancePair(f"samples {iu[0][k]} and {iu[1][k]} coincide")
    gap = emb.points[iu[0]] - emb.points[iu[1]]
    ed = np.hypot(gap[:, 0], gap[:, 1])
    max_expand = float((ed / dd).max())
    max_contract = float((dd / np.maximum(ed, 1e-300)).max())
    if check and max(max_expand, max_contract) > 4.0 * (1.0 + tol):
        raise EmbeddingFailed(
            f"distortion {max(max_expand, max_contract):.6g} exceeds 4"
        )
    return DistortionReport(max_expand=max_expand, max_contract=max_contract)


def region_area_check(
    emb: EmbeddedTriangle, triangle_area_h2: float, k_check: float = K_CHECK
) -> float:
    """Ratio of the embedded Jordan region's area to the triangle's measure.

    The area comes from the shoelace formula over the sample polygon. A zero
    measure with a zero-area region gives ratio 0; otherwise the ratio must
    not exceed ``k_check``.
    """
    pts = emb.points
    if _first_self_intersection(pts) is not None:
        raise NotJordan("embedded boundary is not a Jordan polygon")
    x, y = pts[:, 0], pts[:, 1]
    area = 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))
    scale = max(float(np.max(emb.tri.edge_lengths)) ** 2, 1e-300)
    if triangle_area_h2 <= 0.0:
        if area <= 1e-12 * scale:
            return 0.0
        raise EmbeddingFailed("positive region area over a zero-measure triangle")
    ratio = area / triangle_area_h2
    if ratio > k_check:
        raise EmbeddingFailed(f"area ratio {ratio:.6g} exceeds {k_check:.6g}")
    return ratio


# ---------------------------------------------------------------------------
# constructors


def _layout(lengths: Sequence[float], n: int):
    lengths = tuple(float(v) for v in lengths)
    if len(lengths) != 3 or min(lengths) <= 0:
        raise InconsistentTriangle("need three positive edge lengths")
    if n < 2:
        raise MismatchedSampling("need at least 2 samples per edge")
    arc = np.concatenate([(np.arange(1, n + 1) / n) * lv for lv in lengths])
    assign = np.repeat(np.arange(3), n)
    vidx = (3 * n - 1, n - 1, 2 * n - 1)
    return lengths, arc, assign, vidx


def _circle_positions(lengths, arc, assign):
    offs = np.concatenate([[0.0], np.cumsum(lengths)])[:3]
    return offs[assign] + arc


def intrinsic_triangle(lengths: Sequence[float], n: int = 16) -> MetricTriangle:
    """Triangle whose metric is the path metric of its boundary circle.

    Requires len_j <= sum of the other two; equality gives a degenerate
    triangle with one zero spoke.
    """
    lengths, arc, assign, vidx = _layout(lengths, n)
    total = sum(lengths)
    for j in range(3):
        if lengths[j] > total - lengths[j] + 1e-12 * total:
            raise InconsistentTriangle(
                "an edge longer than the other two combined is not a circle metric"
            )
    pos = _circle_positions(lengths, arc, assign)
    lin = np.abs(pos[:, None] - pos[None, :])
    d = np.minimum(lin, total - lin)
    return MetricTriangle(
        edge_lengths=lengths,
        samples_per_edge=n,
        dist=d,
        vertex_indices=vidx,
        edge_assignment=assign,
        arc=arc,
    )


def euclid_boundary_triangle(lengths: Sequence[float], n: int = 16) -> MetricTriangle:
    """Boundary of a flat Euclidean triangle with the chord metric."""
    lengths, arc, assign, vidx = _layout(lengths, n)
    l1, l2, l3 = lengths
    if l1 >= l2 + l3 or l2 >= l1 + l3 or l3 >= l1 + l2:
        raise InconsistentTriangle("side lengths do not bound a Euclidean triangle")
    x3 = (l1 * l1 + l3 * l3 - l2 * l2) / (2 * l1)
    y3 = float(np.sqrt(max(l3 * l3 - x3 * x3, 0.0)))
    corners = np.array([[0.0, 0.0], [l1, 0.0], [x3, y3]])
    t = (arc / np.asarray(lengths)[assign])[:, None]
    pts = (1 - t) * corners[assign] + t * corners[(assign + 1) % 3]
    gap = pts[:, None, :] - pts[None, :, :]
    d = np.hypot(gap[..., 0], gap[..., 1])
    return MetricTriangle(
        edge_lengths=lengths,
        samples_per_edge=n,
        dist=d,
        vertex_indices=vidx,
        edge_assignment=assign,
        arc=arc,
    )


def near_tripod_triangle(
    lengths: Sequence[float], n: int = 16, blend: float = 0.05
) -> MetricTriangle:
    """Triangle whose metric is almost the tree metric of its own tripod.

    Cross-edge distances are the pointwise maximum of the tripod tree metric
    and ``blend`` times the boundary path metric, so the offset embedding
    hugs the tripod and encloses area of order blend squared. ``blend`` = 0
    would collapse distinct points together and is rejected.
    """
    if not 0 < blend <= 1:
        raise InconsistentTriangle("blend must be in (0, 1]")
    lengths, arc, assign, vidx = _layout(lengths, n)
    total = sum(lengths)
    spokes = np.array(
        [0.5 * (lengths[j] + lengths[(j + 2) % 3] - lengths[(j + 1) % 3]) for j in range(3)]
    )
    if spokes.min() < 0:
        raise InconsistentTriangle("edge lengths violate the triangle inequality")
    r1 = spokes[assign]
    inward = arc <= r1
    spoke = np.where(inward, assign, (assign + 1) % 3)
    radius = np.where(inward, r1 - arc, arc - r1)
    tree = tripod_pair_distances(spoke, radius)
    pos = _circle_positions(lengths, arc, assign)
    lin = np.abs(pos[:, None] - pos[None, :])
    circ = np.minimum(lin, total - lin)
    d = np.maximum(tree, blend * circ)
    return MetricTriangle(
        edge_lengths=lengths,
        samples_per_edge=n,
        dist=d,
        vertex_indices=vidx,
        edge_assignment=assign,
        arc=arc,
    )


def random_metric_triangle(
    rng: np.random.Generator, n: int = 12, lam_lo: float = 0.3
) -> MetricTriangle:
    """Random metric triangle with non-geodesic cross-edge behavior.

    Cross-edge distances start as a per-pair convex mix of the boundary path
    metric and a fraction of it, then are repaired to a genuine metric by
    shortest-path closure with the same-edge entries re-pinned to exact arc
    differences after each pass. If the pins will not settle the draw is
    retried with a mix closer to the path metric.
    """
    for attempt in range(8):
        while True:
            lengths = tuple(rng.uniform(0.5, 3.0, size=3))
            total = sum(lengths)
            if max(lengths) <= 0.98 * (total - max(lengths)):
                break
        lengths, arc, assign, vidx = _layout(lengths, n)
        pos = _circle_positions(lengths, arc, assign)
        lin = np.abs(pos[:, None] - pos[None, :])
        circ = np.minimum(lin, sum(lengths) - lin)
        lo = min(1.0, lam_lo + attempt * 0.2)
        lam = rng.uniform(lo, 1.0, size=circ.shape)
        lam = np.minimum(lam, lam.T)
        d = lam * circ

        tri = MetricTriangle(
            edge_lengths=lengths,
            samples_per_edge=n,
            dist=d,
            vertex_indices=vidx,
            edge_assignment=assign,
            arc=arc,
        )
        pin_ids = [tri.edge_members(j) for j in range(3)]
        pin_vals = [np.abs(tri.edge_arcs(j)[:, None] - tri.edge_arcs(j)[None, :]) for j in range(3)]
        for ids, vals in zip(pin_ids, pin_vals):
            d[np.ix_(ids, ids)] = vals
        settled = False
        for _ in range(3):
            d = floyd_warshall(d, directed=False)
            worst = max(
                float(np.abs(d[np.ix_(ids, ids)] - vals).max())
                for ids, vals in zip(pin_ids, pin_vals)
            )
            if worst <= 1e-12 * total:
                settled = True
                break
            for ids, vals in zip(pin_ids, pin_vals):
                d[np.ix_(ids, ids)] = vals
        if not settled:
            continue
        tri = MetricTriangle(
            edge_lengths=lengths,
            samples_per_edge=n,
            dist=d,
            vertex_indices=vidx,
            edge_assignment=assign,
            arc=arc,
        )
        tri.validate()
        return tri
    raise InconsistentTriangle("random triangle generation did not settle")


def mesh_boundary_triangle(
    mesh: MetricSurfaceMesh, corners: Sequence[int], n: int = 12
) -> MetricTriangle:
    """Metric triangle from three mesh vertices joined by geodesics.

    Samples sit at path vertices nearest to equally spaced arclength marks,
    and carry the mesh's induced metric. Raises MismatchedSampling when a
    geodesic is too coarse to supply n distinct samples.
    """
    if len(corners) != 3:
        raise InconsistentTriangle("need exactly three corner vertices")
    sample_ids = []
    arcs = []
    lengths = []
    for j in range(3):
        path = geodesic(mesh, int(corners[j]), int(corners[(j + 1) % 3]))
        ids = np.asarray(path.vertex_ids, dtype=np.int64)
        if len(ids) < 2:
            raise MismatchedSampling("corner pair is not joined by a real path")
        seg = mesh.edge_lengths[
            np.array([mesh.edge_id(a, b) for a, b in zip(ids[:-1], ids[1:])])
        ]
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        marks = np.arange(1, n + 1) / n * cum[-1]
        take = np.searchsorted(cum, marks)
        take = np.clip(take, 1, len(ids) - 1)
        take[-1] = len(ids) - 1
        if len(np.unique(take)) != n:
            raise MismatchedSampling(
                f"geodesic {j} has too few vertices for {n} samples per edge"
            )
        sample_ids.extend(int(v) for v in ids[take])
        arcs.extend(float(c) for c in cum[take])
        lengths.append(float(cum[-1]))
    sample_ids = np.asarray(sample_ids, dtype=np.int64)
    d = vertex_distances(mesh, sample_ids)[:, sample_ids]
    d = 0.5 * (d + d.T)
    np.fill_diagonal(d, 0.0)
    return MetricTriangle(
        edge_lengths=tuple(lengths),
        samples_per_edge=n,
        dist=d,
        vertex_indices=(3 * n - 1, n - 1, 2 * n - 1),
        edge_assignment=np.repeat(np.arange(3), n),
        arc=np.asarray(arcs),
    )
