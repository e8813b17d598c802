"""Hausdorff content estimation, curve length, level sets, and the co-area check."""

import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateLevel, LipschitzViolated, MeshInvalid
from .metric_core import MetricSurfaceMesh, PathPolyline, SampledMetricSpace, pair_dist


def normalization_constant(s: float) -> float:
    """C(s) = pi^(s/2) / (Gamma(s/2 + 1) * 2^s); C(2) = pi/4, C(1) = 1."""
    return math.pi ** (s / 2.0) / (math.gamma(s / 2.0 + 1.0) * 2.0 ** s)


@dataclass(frozen=True)
class CoveringFamily:
    """Metric balls (center, diameter) whose union contains every sample."""

    centers: np.ndarray
    diameters: np.ndarray

    def __len__(self):
        return len(self.diameters)


@dataclass(frozen=True)
class ContentEstimate:
    s: float
    delta: float
    upper_value: float
    covering: CoveringFamily


def square_sample_cloud(m: int) -> np.ndarray:
    """Cell-centered m x m sampling of the unit square (spacing 1/m)."""
    xs = (np.arange(m) + 0.5) / m
    gx, gy = np.meshgrid(xs, xs)
    return np.column_stack([gx.ravel(), gy.ravel()])


def _spacing(points: np.ndarray, kind: str) -> float:
    tree = cKDTree(points)
    p = np.inf if kind == "linf" else 2
    take = points if len(points) <= 512 else points[:: len(points) // 512]
    d, _ = tree.query(take, k=2, p=p)
    return float(np.median(d[:, 1]))


# candidate center offsets tried for each uncovered point, in tie-break order
_NUDGE_DIRS = np.array(
    [(0, 0), (1, 1), (1, -1), (-1, 1), (-1, -1), (1, 0), (-1, 0), (0, 1), (0, -1)],
    dtype=float,
)


def _round_radii(delta: float, h: float) -> List[float]:
    """Half-integer-in-h radii descending from delta/2, ending in a singleton
    round of radius zero so every sample is eventually covered.

    Centers sit on samples, so a radius (k - 1/2) h ball owns a window of
    exactly 2k - 1 sample cells per axis and its counted diameter matches the
    ground it covers.
    """
    k = max(1, int(np.floor(delta / h + 1.0) / 2))
    radii = []
    while k >= 1:
        radii.append((k - 0.5) * h)
        nk = int(np.floor(0.8 * k)) if k > 12 else k - 1
        k = nk if nk < k else k - 1
    radii.append(0.0)
    return radii


def content_estimate(
    points: Union[np.ndarray, SampledMetricSpace],
    s: float,
    delta: float,
    kind: str = "l2",
    gate: float = 0.5,
) -> ContentEstimate:
    """Greedy disjoint-ball upper bound for the delta-Hausdorff s-content.

    Vitali-style rounds at descending radii: each round walks the uncovered
    samples in index order and, for each, tries a small set of nearby centers
    (the point itself plus nudges one radius toward each compass direction),
    keeping the disjoint candidate that covers the most uncovered samples.
    The nudges let boundary balls sit inside the sampled region instead of
    overhanging it, and the gate rejects balls whose fresh coverage is small
    next to their counted value, leaving thin wedges to later, smaller
    rounds. A final radius-zero round turns stragglers into singletons, which
    add nothing to the value, so the family always covers.
    """
    if isinstance(points, SampledMetricSpace):
        return _content_estimate_sampled(points, s, delta)
    points = np.asarray(points, dtype=float)
    if len(points) == 0:
        return ContentEstimate(
            s, delta, 0.0, CoveringFamily(np.zeros((0, 2)), np.zeros(0))
        )
    if len(points) == 1:
        cov = CoveringFamily(points.copy(), np.zeros(1))
        return ContentEstimate(s, delta, 0.0, cov)
    if delta <= 0:
        raise ValueError("delta must be positive")

    p = np.inf if kind == "linf" else 2
    tree = cKDTree(points)
    h = _spacing(points, kind)
    c_s = normalization_constant(s)
    dim = points.shape[1]
    dirs = _NUDGE_DIRS[:, :dim] if dim <= 2 else np.zeros((1, dim))
    norms = pair_dist(dirs, np.zeros(dim), kind)
    norms[norms == 0] = 1.0
    unit = dirs / norms[:, None]

    covered = np.zeros(len(points), dtype=bool)
    centers: List[int] = []
    center_radii: List[float] = []
    value = 0.0

    for rk in _round_radii(delta, h):
        if not (~covered).any():
            break
        if rk == 0.0:
            for i in np.flatnonzero(~covered):
                centers.append(i)
                center_radii.append(0.0)
            covered[:] = True
            break
        prior_idx = np.asarray(centers, dtype=int)
        prior_r = np.asarray(center_radii)
        prior_pts = points[prior_idx] if len(prior_idx) else None
        prior_tree = cKDTree(prior_pts) if prior_pts is not None else None
        prior_reach = (prior_r.max() if len(prior_idx) else 0.0) + rk + 1e-9
        bucket = {}
        cell = 2.0 * rk
        is_l2 = p == 2

        def _dists(rows, c):
            d = rows - c
            return np.sqrt((d * d).sum(-1)) if is_l2 else np.abs(d).max(-1)

        def viable(c):
            kx, ky = int(np.floor(c[0] / cell)), int(np.floor(c[1] / cell))
            near = []
            for dx in (-1, 0, 1):
                for dy in (-1, 0, 1):
                    near.extend(bucket.get((kx + dx, ky + dy), ()))
            if near and (_dists(points[near], c) < 2.0 * rk - 1e-9).any():
                return None
            if prior_tree is not None:
                js = prior_tree.query_ball_point(c, prior_reach, p=p)
                if js and (_dists(prior_pts[js], c) < rk + prior_r[js] - 1e-9).any():
                    return None
            return (kx, ky)

        gate_count = gate * c_s * (2.0 * rk) ** s / h ** s
        ball_cells = (np.pi if p == 2 else 4.0) * (rk / h) ** 2
        skip = np.zeros(len(points), dtype=bool)
        for i in np.flatnonzero(~covered):
            if covered[i] or skip[i]:
                continue
            cand_pts = points[i] + (rk - 0.5 * h) * unit
            cand_pts[0] = points[i]
            _, cand_idx = tree.query(cand_pts, k=1, p=p)
            best = None
            seen = set()
            for ci in cand_idx:
                ci = int(ci)
                if ci in seen:
                    continue
                seen.add(ci)
                key = viable(points[ci])
                if key is None:
                    continue
                hit = tree.query_ball_point(points[ci], rk + 1e-9, p=p)
                fresh = int(np.count_nonzero(~covered[hit]))
                if fresh < gate_count:
                    continue
                if best is None or fresh > best[0]:
                    best = (fresh, ci, key, hit)
                    if fresh >= 0.9 * ball_cells:
                        break
            if best is None:
                # neighbors share the same blocked surroundings; retry next round
                skip[tree.query_ball_point(points[i], 0.25 * rk, p=p)] = True
                continue
            _, ci, key, hit = best
            centers.append(ci)
            center_radii.append(rk)
            bucket.setdefault(key, []).append(ci)
            covered[hit] = True
            value += c_s * (2.0 * rk) ** s

    cov = CoveringFamily(
        points[np.asarray(centers, dtype=int)].copy(),
        2.0 * np.asarray(center_radii, dtype=float),
    )
    return ContentEstimate(s=s, delta=delta, upper_value=value, covering=cov)


def _content_estimate_sampled(
    space: SampledMetricSpace, s: float, delta: float
) -> ContentEstimate:
    """The same greedy packing, driven by an explicit distance matrix."""
    n = space.n
    if n == 0:
        return ContentEstimate(s, delta, 0.0, CoveringFamily(np.zeros((0, 1)), np.zeros(0)))
    d = space.dist
    finite = d[np.isfinite(d) & (d > 0)]
    h = float(finite.min()) if finite.size else 1.0
    c_s = normalization_constant(s)

    covered = np.zeros(n, dtype=bool)
    idx: List[int] = []
    center_radii: List[float] = []
    value = 0.0
    for rk in _round_radii(delta, h):
        for i in np.flatnonzero(~covered):
            if rk > 0.0 and any(
                d[i, j] < rk + rj - 1e-9 for j, rj in zip(idx, center_radii)
            ):
                continue
            idx.append(i)
            center_radii.append(rk)
            covered |= d[i] <= rk + 1e-9
            value += c_s * (2.0 * rk) ** s
        if covered.all():
            break

    pts = np.asarray([space.points[i] for i in idx], dtype=float)
    cov = CoveringFamily(pts, 2.0 * np.asarray(center_radii))
    return ContentEstimate(s=s, delta=delta, upper_value=value, covering=cov)


def content_schedule(
    points, s: float, deltas: Sequence[float], kind: str = "l2"
) -> List[ContentEstimate]:
    """Estimates along a decreasing delta schedule (the H^s approximation)."""
    out = []
    for d in sorted(deltas, reverse=True):
        out.append(content_estimate(points, s, d, kind=kind))
    return out


def curve_length(polyline, metric: Union[str, Callable] = "l2") -> float:
    """Length of a polyline under an ambient metric name or callable."""
    if isinstance(polyline, PathPolyline):
        pts = polyline.points
        if pts is None:
            return polyline.length
    else:
        pts = np.asarray(polyline, dtype=float)
    if len(pts) < 2:
        return 0.0
    pts = np.asarray(pts, dtype=float)
    if callable(metric):
        segs = [metric(a, b) for a, b in zip(pts[:-1], pts[1:])]
        return float(np.sum(segs))
    return float(pair_dist(pts[:-1], pts[1:], metric).sum())


# ---------------------------------------------------------------------------
# level sets


@dataclass(frozen=True)
class LevelSetCurve:
    """A connected component of a level set, as a face-crossing polyline."""

    t: float
    polyline: PathPolyline
    separates: Tuple[np.ndarray, np.ndarray]
    closed: bool
    crossed_edges: np.ndarray


def _level_components(mesh: MetricSurfaceMesh, f: np.ndarray, t: float):
    """All level-t components; assumes no vertex value equals t."""
    if mesh.vertices is None or mesh.ambient not in ("l2", "linf"):
        raise MeshInvalid("level sets need coordinates and an l2/linf ambient")
    kind = mesh.ambient
    below = f < t
    e = mesh.edges
    straddle = below[e[:, 0]] != below[e[:, 1]]
    cross_ids = np.flatnonzero(straddle)
    if len(cross_ids) == 0:
        return []
    u, v = e[cross_ids, 0], e[cross_ids, 1]
    w = (t - f[u]) / (f[v] - f[u])
    cross_pts = mesh.vertices[u] + w[:, None] * (mesh.vertices[v] - mesh.vertices[u])
    pos = {int(eid): k for k, eid in enumerate(cross_ids)}

    # each face with exactly two straddling edges contributes one segment
    fe = mesh.face_edge_ids()
    seg_by_edge = {}
    for fi, row in enumerate(fe):
        hits = [int(eid) for eid in row if straddle[eid]]
        if len(hits) == 2:
            a, b = hits
            seg_by_edge.setdefault(a, []).append((b, fi))
            seg_by_edge.setdefault(b, []).append((a, fi))

    visited_pairs = set()
    comps = []
    for start in sorted(seg_by_edge):
        if all((min(start, nb), max(start, nb)) in visited_pairs for nb, _ in seg_by_edge[start]):
            continue
        # walk to one extreme (boundary edge or loop closure), then traverse
        chain = [start]
        faces_seen = []
        prev = None
        cur = start
        while True:
            nxts = [
                (nb, fi)
                for nb, fi in seg_by_edge[cur]
                if (min(cur, nb), max(cur, nb)) not in visited_pairs
            ]
            if not nxts:
                break
            nb, fi = nxts[0]
            visited_pairs.add((min(cur, nb), max(cur, nb)))
            chain.append(nb)
            faces_seen.append(fi)
            prev, cur = cur, nb
            if cur == start:
                break
        if len(chain) < 2:
            continue
        closed = chain[0] == chain[-1]
        if not closed:
            # extend backwards from the start if it was mid-chain
            back = [start]
            cur = start
            while True:
                nxts = [
                    (nb, fi)
                    for nb, fi in seg_by_edge[cur]
                    if (min(cur, nb), max(cur, nb)) not in visited_pairs
                ]
                if not nxts:
                    break
                nb, fi = nxts[0]
                visited_pairs.add((min(cur, nb), max(cur, nb)))
                back.append(nb)
                faces_seen.append(fi)
                cur = nb
            chain = back[::-1] + chain[1:]
            closed = chain[0] == chain[-1] and len(chain) > 2
        pts = cross_pts[[pos[c] for c in chain]]
        length = float(pair_dist(pts[:-1], pts[1:], kind).sum())
        edge_arr = np.asarray(chain, dtype=np.int64)
        touched = np.unique(e[edge_arr].ravel())
        side_a = touched[below[touched]]
        side_b = touched[~below[touched]]
        comps.append(
            LevelSetCurve(
                t=t,
                polyline=PathPolyline(vertex_ids=(), length=length, points=pts),
                separates=(side_a, side_b),
                closed=closed,
                crossed_edges=edge_arr,
            )
        )
    return comps


def level_set_components(
    mesh: MetricSurfaceMesh, f: Sequence[float], t: float, jitter: float = 1e-7
) -> List[LevelSetCurve]:
    """Level-set components of a vertex function, jittering off vertex values."""
    f = np.asarray(f, dtype=float)
    lo, hi = float(f.min()), float(f.max())
    if not (lo < t < hi):
        raise DegenerateLevel(f"level {t} outside the open value range ({lo}, {hi})")
    span = hi - lo
    t_eff = t
    for _ in range(3):
        if np.min(np.abs(f - t_eff)) > 1e-12 * max(span, 1.0):
            return _level_components(mesh, f, t_eff)
        t_eff += jitter * span
    raise DegenerateLevel(f"level {t} keeps hitting vertex values after jitter")


def level_set_extract(
    mesh: MetricSurfaceMesh, f: Sequence[float], t: float, jitter: float = 1e-7
) -> LevelSetCurve:
    """The dominant (longest) component of the t-level set."""
    comps = level_set_components(mesh, f, t, jitter=jitter)
    if not comps:
        raise DegenerateLevel(f"level {t} crosses no face")
    return max(comps, key=lambda c: c.polyline.length)


def separation_holds(mesh: MetricSurfaceMesh, curve: LevelSetCurve) -> bool:
    """True when removing the crossed edges disconnects the declared sides."""
    from scipy.sparse import coo_matrix
    from scipy.sparse.csgraph import connected_components

    keep = np.ones(len(mesh.edges), dtype=bool)
    keep[curve.crossed_edges] = False
    e = mesh.edges[keep]
    n = mesh.n_vertices
    g = coo_matrix(
        (np.ones(2 * len(e)), (np.concatenate([e[:, 0], e[:, 1]]), np.concatenate([e[:, 1], e[:, 0]]))),
        shape=(n, n),
    )
    _, labels = connected_components(g, directed=False)
    a, b = curve.separates
    return not bool(set(labels[a]) & set(labels[b]))


# ---------------------------------------------------------------------------
# co-area


@dataclass(frozen=True)
class CoareaReport:
    lhs: float
    rhs: float
    ratio: float
    lipschitz_observed: float
    n_levels: int

    def assert_ok(self, tol: float = 0.03):
        if self.lhs > self.rhs * (1.0 + tol):
            raise MeshInvalid(
                f"co-area inequality violated: {self.lhs:.6f} > {self.rhs:.6f} (tol {tol})"
            )


def coarea_check(
    mesh: MetricSurfaceMesh,
    f: Sequence[float],
    g: Sequence[float],
    L: float,
    n_levels: int = 48,
    tol: float = 1e-9,
) -> CoareaReport:
    """Compare the level-set integral of g against (4 L / pi) * integral of g.

    The left side integrates g over every component of f^{-1}(t) for a
    midpoint grid of levels; the right side is the area integral scaled by
    the co-area constant. f must be L-Lipschitz edgewise.
    """
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    e = mesh.edges
    df = np.abs(f[e[:, 0]] - f[e[:, 1]])
    lip = float(np.max(df / np.maximum(mesh.edge_lengths, 1e-300)))
    if lip > L * (1.0 + 1e-6) + tol:
        raise LipschitzViolated(f"observed constant {lip:.6f} exceeds declared {L}")

    areas = mesh.face_areas()
    g_face = g[mesh.faces].mean(axis=1)
    rhs = (4.0 * L / np.pi) * float((g_face * areas).sum())

    lo, hi = float(f.min()), float(f.max())
    dt = (hi - lo) / n_levels
    lhs = 0.0
    kind = mesh.ambient
    for i in range(n_levels):
        t = lo + (i + 0.5) * dt
        try:
            comps = level_set_components(mesh, f, t)
        except DegenerateLevel:
            continue
        for comp in comps:
            pts = comp.polyline.points
            if pts is None or len(pts) < 2:
                continue
            seg = pair_dist(pts[:-1], pts[1:], kind)
            # interpolate g at segment midpoints through the crossing edges
            gu = _interp_vertex_values(mesh, g, f, comp)
            gmid = 0.5 * (gu[:-1] + gu[1:])
            lhs += float((seg * gmid).sum()) * dt

    rhs_f = rhs if rhs != 0 else 0.0
    ratio = lhs / rhs_f if rhs_f else (0.0 if lhs == 0 else np.inf)
    return CoareaReport(
        lhs=lhs, rhs=rhs, ratio=ratio, lipschitz_observed=lip, n_levels=n_levels
    )


def pairwise_lipschitz(mesh: MetricSurfaceMesh, f: Sequence[float]) -> float:
    """Largest |f(u) - f(v)| / d(u, v) over all vertex pairs, ambient d.

    Edgewise ratios miss multi-hop anisotropy: a graph-distance function can
    change by sqrt(2) per unit of ambient distance across directions the
    edge set serves badly, while every single edge looks 1-Lipschitz. The
    co-area comparison needs the pairwise constant.
    """
    f = np.asarray(f, dtype=float)
    v = mesh.vertices
    n = mesh.n_vertices
    worst = 0.0
    chunk = max(1, int(2 ** 22 // max(n, 1)))
    for lo in range(0, n, chunk):
        hi = min(n, lo + chunk)
        d = pair_dist(v[lo:hi, None, :], v[None, :, :], mesh.ambient)
        df = np.abs(f[lo:hi, None] - f[None, :])
        np.fill_diagonal(d[:, lo:hi], np.inf)
        worst = max(worst, float((df / np.maximum(d, 1e-300)).max()))
    return worst


def _interp_vertex_values(
    mesh: MetricSurfaceMesh, g: np.ndarray, f: np.ndarray, comp: LevelSetCurve
) -> np.ndarray:
    e = mesh.edges[comp.crossed_edges]
    fu, fv = f[e[:, 0]], f[e[:, 1]]
    w = (comp.t - fu) / (fv - fu)
    return g[e[:, 0]] + w * (g[e[:, 1]] - g[e[:, 0]])
