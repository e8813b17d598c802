"""Generators for the example surfaces the experiments run on.

Grid hosts (Euclidean and l-infinity squares), polar disks and annuli, a
slit disk, a degenerate-weight plane, and a quotient plane built over a fat
Cantor set. Everything returns a MetricSurfaceMesh; the Cantor quotient is
wrapped in QuotientPlaneMesh, which carries the collapsed classes and the
quotient metric alongside the raw grid.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from .errors import ConfigInvalid, LevelOutOfRange, MeshInvalid, RadiusOrder
from .metric_core import MetricSurfaceMesh, SampledMetricSpace

ZERO_LENGTH = 1e-12


# ---------------------------------------------------------------------------
# rectangular grids


def _tensor_grid(x_lines: np.ndarray, y_lines: np.ndarray):
    """Vertices, faces and integer chart for a tensor grid of the given lines.

    Each cell is split along its south-west to north-east diagonal. The vertex
    with chart coordinates (ix, iy) has id iy*(nx+1) + ix; cell (ix, iy) owns
    faces 2*(iy*nx + ix) and 2*(iy*nx + ix) + 1.
    """
    x_lines = np.asarray(x_lines, dtype=float)
    y_lines = np.asarray(y_lines, dtype=float)
    nx = len(x_lines) - 1
    ny = len(y_lines) - 1
    if nx < 1 or ny < 1:
        raise ConfigInvalid("tensor grid needs at least one cell per axis")
    xs, ys = np.meshgrid(x_lines, y_lines)
    vertices = np.column_stack([xs.ravel(), ys.ravel()])
    gx, gy = np.meshgrid(np.arange(nx + 1), np.arange(ny + 1))
    vertex_grid = np.column_stack([gx.ravel(), gy.ravel()]).astype(np.int64)

    cx, cy = np.meshgrid(np.arange(nx), np.arange(ny))
    sw = (cy * (nx + 1) + cx).ravel()
    se = sw + 1
    nw = sw + nx + 1
    ne = nw + 1
    faces = np.empty((2 * nx * ny, 3), dtype=np.int64)
    faces[0::2] = np.column_stack([sw, se, ne])
    faces[1::2] = np.column_stack([sw, ne, nw])
    return vertices, faces, vertex_grid


def gen_euclid_rect(
    nx: int, ny: int, width: float = 1.0, height: float = 1.0
) -> MetricSurfaceMesh:
    """Euclidean width x height rectangle on an nx x ny cell grid."""
    if nx < 1 or ny < 1 or width <= 0 or height <= 0:
        raise ConfigInvalid("rectangle grid needs positive cell counts and side lengths")
    vertices, faces, vertex_grid = _tensor_grid(
        np.linspace(0.0, width, nx + 1), np.linspace(0.0, height, ny + 1)
    )
    return MetricSurfaceMesh.build(
        vertices=vertices, faces=faces, ambient="l2", vertex_grid=vertex_grid
    )


def gen_euclid_square(n: int) -> MetricSurfaceMesh:
    """Unit Euclidean square, n x n cells (two triangles per cell)."""
    if n < 2:
        raise ConfigInvalid("square grid needs n >= 2")
    return gen_euclid_rect(n, n)


def gen_linf_square(n: int) -> MetricSurfaceMesh:
    """Unit square under the l-infinity metric.

    Edge lengths are max-norm distances and the area weight is pi/4 per unit
    of Lebesgue area, the normalization that makes the Hausdorff 2-measure of
    the unit square equal pi/4.
    """
    if n < 2:
        raise ConfigInvalid("square grid needs n >= 2")
    vertices, faces, vertex_grid = _tensor_grid(
        np.linspace(0.0, 1.0, n + 1), np.linspace(0.0, 1.0, n + 1)
    )
    return MetricSurfaceMesh.build(
        vertices=vertices,
        faces=faces,
        ambient="linf",
        area_weight=np.pi / 4.0,
        vertex_grid=vertex_grid,
    )


def grid_side_vertices(mesh: MetricSurfaceMesh, side: str) -> np.ndarray:
    """Vertex ids along one side of a chart-rectangular mesh, in order."""
    if mesh.vertex_grid is None:
        raise MeshInvalid("mesh carries no integer chart")
    vg = mesh.vertex_grid
    nx = int(vg[:, 0].max())
    ny = int(vg[:, 1].max())
    picks = {
        "left": (vg[:, 0] == 0, 1),
        "right": (vg[:, 0] == nx, 1),
        "bottom": (vg[:, 1] == 0, 0),
        "top": (vg[:, 1] == ny, 0),
    }
    if side not in picks:
        raise ConfigInvalid(f"unknown side {side!r}")
    mask, axis = picks[side]
    ids = np.flatnonzero(mask)
    return ids[np.argsort(vg[ids, axis])]


@dataclass(frozen=True)
class RectPatch:
    """A chart-aligned rectangle inside a planar mesh, with its four sides."""

    face_ids: np.ndarray
    left: np.ndarray
    right: np.ndarray
    bottom: np.ndarray
    top: np.ndarray
    bounds: Tuple[float, float, float, float]


def chart_rectangle(
    mesh: MetricSurfaceMesh, x0: float, x1: float, y0: float, y1: float
) -> RectPatch:
    """Faces and side vertices of [x0,x1] x [y0,y1] in a planar mesh.

    The rectangle edges are expected to lie on mesh lines; side vertex sets
    are matched with a small tolerance and returned ordered along the side.
    """
    if mesh.vertices is None:
        raise MeshInvalid("chart rectangles need vertex coordinates")
    pts = mesh.vertices
    cent = pts[mesh.faces].mean(axis=1)
    inside = (
        (cent[:, 0] > x0) & (cent[:, 0] < x1) & (cent[:, 1] > y0) & (cent[:, 1] < y1)
    )
    face_ids = np.flatnonzero(inside)
    if len(face_ids) == 0:
        raise ConfigInvalid("chart rectangle contains no faces")
    tol = 1e-9
    on_x = (pts[:, 0] > x0 - tol) & (pts[:, 0] < x1 + tol)
    on_y = (pts[:, 1] > y0 - tol) & (pts[:, 1] < y1 + tol)

    def side(fixed_axis, value, order_axis):
        m = (np.abs(pts[:, fixed_axis] - value) < tol) & on_x & on_y
        ids = np.flatnonzero(m)
        return ids[np.argsort(pts[ids, order_axis])]

    return RectPatch(
        face_ids=face_ids,
        left=side(0, x0, 1),
        right=side(0, x1, 1),
        bottom=side(1, y0, 0),
        top=side(1, y1, 0),
        bounds=(x0, x1, y0, y1),
    )


# ---------------------------------------------------------------------------
# polar meshes


def _polar_mesh(radii: np.ndarray, n_t: int) -> MetricSurfaceMesh:
    radii = np.asarray(radii, dtype=float)
    if n_t < 3:
        raise ConfigInvalid("polar mesh needs at least three angular steps")
    has_center = radii[0] == 0.0
    rings = radii[1:] if has_center else radii
    angles = 2.0 * np.pi * np.arange(n_t) / n_t
    cos, sin = np.cos(angles), np.sin(angles)

    chunks = []
    if has_center:
        chunks.append(np.zeros((1, 2)))
    for r in rings:
        chunks.append(np.column_stack([r * cos, r * sin]))
    vertices = np.vstack(chunks)
    off = 1 if has_center else 0

    def vid(i, j):
        return off + i * n_t + (j % n_t)

    faces = []
    if has_center:
        for j in range(n_t):
            faces.append((0, vid(0, j), vid(0, j + 1)))
    for i in range(len(rings) - 1):
        for j in range(n_t):
            a, b = vid(i, j), vid(i, j + 1)
            c, d = vid(i + 1, j + 1), vid(i + 1, j)
            faces.append((a, b, c))
            faces.append((a, c, d))
    return MetricSurfaceMesh.build(
        vertices=vertices, faces=np.asarray(faces, dtype=np.int64), ambient="l2"
    )


def gen_disk(n_r: int = 16, n_t: int = 48, radius: float = 1.0) -> MetricSurfaceMesh:
    """Euclidean disk, uniform rings."""
    if n_r < 1 or radius <= 0:
        raise ConfigInvalid("disk needs n_r >= 1 and positive radius")
    return _polar_mesh(np.linspace(0.0, radius, n_r + 1), n_t)


def gen_annulus(
    n_r: int,
    n_t: int,
    r_inner: float,
    r_outer: float,
    spacing: str = "log",
) -> MetricSurfaceMesh:
    """Euclidean annulus; log ring spacing keeps per-layer moduli equal."""
    if not (0 < r_inner < r_outer):
        raise RadiusOrder("annulus needs 0 < r_inner < r_outer")
    if spacing == "log":
        radii = r_inner * (r_outer / r_inner) ** (np.arange(n_r + 1) / n_r)
    elif spacing == "linear":
        radii = np.linspace(r_inner, r_outer, n_r + 1)
    else:
        raise ConfigInvalid(f"unknown ring spacing {spacing!r}")
    return _polar_mesh(radii, n_t)


def gen_slit_disk(n: int, multi: bool = False, n_r: int = 16) -> MetricSurfaceMesh:
    """Unit disk minus radial sector slits, under the ambient plane metric.

    The single-slit variant removes the closed sector of angular half-width
    pi/(2n) around angle 0 between radii 1/2 and 1; the multi variant removes
    n such sectors centered at angles 2*pi*k/n. The returned surface keeps the
    Euclidean distances of the ambient plane, so points on opposite banks of a
    slit stay close even though any connecting path must detour around it.
    """
    if n < 2:
        raise ConfigInvalid("slit disk needs n >= 2")
    if n_r % 2 != 0:
        raise ConfigInvalid("slit disk needs an even ring count so r = 1/2 is a ring")
    m = max(1, int(np.ceil(48 / (4 * n))))
    n_t = 4 * n * m
    base = gen_disk(n_r=n_r, n_t=n_t, radius=1.0)

    cent = base.vertices[base.faces].mean(axis=1)
    r = np.hypot(cent[:, 0], cent[:, 1])
    theta = np.arctan2(cent[:, 1], cent[:, 0])
    centers = 2.0 * np.pi * np.arange(1, n + 1) / n if multi else np.array([0.0])
    half = np.pi / (2 * n)
    in_sector = np.zeros(len(cent), dtype=bool)
    for phi in centers:
        delta = np.mod(theta - phi + np.pi, 2.0 * np.pi) - np.pi
        in_sector |= (np.abs(delta) <= half) & (r >= 0.5)
    faces = base.faces[~in_sector]

    used = np.unique(faces)
    remap = -np.ones(base.n_vertices, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return MetricSurfaceMesh.build(
        vertices=base.vertices[used], faces=remap[faces], ambient="l2"
    )


# ---------------------------------------------------------------------------
# degenerate-weight plane


def cell_faces(n: int, cells: Sequence[Tuple[int, int]]) -> np.ndarray:
    """Face ids of the given (ix, iy) cells on an n x n grid."""
    out = []
    for ix, iy in cells:
        if not (0 <= ix < n and 0 <= iy < n):
            raise ConfigInvalid(f"cell {(ix, iy)} outside the {n} x {n} grid")
        c = iy * n + ix
        out.extend((2 * c, 2 * c + 1))
    return np.asarray(sorted(out), dtype=np.int64)


def gen_weighted_plane(
    zero_cells: Optional[Sequence[Tuple[int, int]]], n: int
) -> MetricSurfaceMesh:
    """Unit square whose metric collapses on a set of grid cells.

    Paths inside a zero cell cost nothing, so every edge touching one is
    floored at ZERO_LENGTH, and remaining edge lengths are relaxed until each
    face satisfies the (non-strict) triangle inequality, which reproduces the
    collapsed path metric on the one-hop scale. Face areas keep their full
    Lebesgue value: the degenerate region still carries positive measure.
    """
    if n < 2:
        raise ConfigInvalid("weighted plane needs n >= 2")
    mesh = gen_euclid_square(n)
    if not zero_cells:
        return mesh

    zero_faces = cell_faces(n, zero_cells)
    weight = np.ones(mesh.n_faces)
    weight[zero_faces] = ZERO_LENGTH

    fe = mesh.face_edge_ids()
    lengths = mesh.edge_lengths.copy()
    lengths[np.unique(fe[zero_faces])] = ZERO_LENGTH
    for _ in range(64):
        caps = lengths[fe].sum(axis=1)[:, None] - lengths[fe]
        new = lengths.copy()
        np.minimum.at(new, fe.ravel(), caps.ravel())
        new = np.maximum(new, ZERO_LENGTH)
        if np.max(np.abs(new - lengths)) < 1e-15:
            lengths = new
            break
        lengths = new
    else:
        raise MeshInvalid("edge relaxation for the degenerate region did not settle")

    return MetricSurfaceMesh.build(
        vertices=mesh.vertices,
        faces=mesh.faces,
        edge_lengths={tuple(e): float(l) for e, l in zip(mesh.edges, lengths)},
        ambient="l2",
        vertex_grid=mesh.vertex_grid,
        face_length_weight=weight,
        strict_faces=False,
    )


def _cell_radius(n: int) -> np.ndarray:
    """Chebyshev ring index of every cell around the grid center, shape (n, n)."""
    i = np.arange(n)
    rad = np.maximum(n // 2 - 1 - i, i - n // 2)
    return np.maximum(rad[None, :], rad[:, None])


def nested_ring_cells(
    n: int, ring_bounds: Optional[Sequence[Tuple[int, int]]] = None
) -> Dict[str, object]:
    """Cell layout for the nested-conductor experiment on an n x n grid.

    Everything inside the outermost insulator that is not a conducting ring is
    a zero cell, so curves leaving the center pay only while crossing the
    conducting rings. Returns the zero cells, the per-ring cell lists, and the
    ring bounds in Chebyshev cell radii.
    """
    if n % 2 != 0 or n < 16:
        raise ConfigInvalid("nested rings need an even grid with n >= 16")
    if ring_bounds is None:
        ring_bounds = [(max(1, n // 64), n // 8), (n // 8 + 3, 3 * n // 8)]
    rad = _cell_radius(n)
    limit = max(b for _, b in ring_bounds) + 2

    conducting: List[List[Tuple[int, int]]] = []
    ring_mask = np.zeros_like(rad, dtype=bool)
    for a, b in ring_bounds:
        if not (0 < a <= b < n // 2):
            raise ConfigInvalid("ring bounds must be increasing and fit the grid")
        m = (rad >= a) & (rad <= b)
        ring_mask |= m
        iy, ix = np.nonzero(m)
        conducting.append(list(zip(ix.tolist(), iy.tolist())))

    zero_mask = (rad <= limit) & ~ring_mask
    iy, ix = np.nonzero(zero_mask)
    zero_cells = list(zip(ix.tolist(), iy.tolist()))
    return {
        "zero_cells": zero_cells,
        "conducting": conducting,
        "ring_bounds": list(ring_bounds),
        "n": n,
    }


def gen_square_frame(n_per_unit: int = 8) -> MetricSurfaceMesh:
    """Euclidean square frame [0,3]^2 minus the open middle square [1,2]^2.

    The frame is an annular region with two boundary loops; n_per_unit cells
    per unit side. Vertices of the removed block are dropped and the mesh is
    reindexed, so boundary loops come out clean.
    """
    if n_per_unit < 2:
        raise ConfigInvalid("square frame needs at least two cells per unit")
    lines = np.linspace(0.0, 3.0, 3 * n_per_unit + 1)
    vertices, faces, vertex_grid = _tensor_grid(lines, lines)
    cent = vertices[faces].mean(axis=1)
    keep = ~(
        (cent[:, 0] > 1.0) & (cent[:, 0] < 2.0) & (cent[:, 1] > 1.0) & (cent[:, 1] < 2.0)
    )
    faces = faces[keep]
    used = np.unique(faces)
    remap = np.full(len(vertices), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return MetricSurfaceMesh.build(
        vertices=vertices[used],
        faces=remap[faces],
        ambient="l2",
        vertex_grid=vertex_grid[used],
    )


# ---------------------------------------------------------------------------
# fat Cantor set and the quotient plane


def default_gap_fractions(levels: int = 6) -> Tuple[float, ...]:
    return tuple(4.0 ** -(k + 1) for k in range(levels))


@dataclass(frozen=True)
class CantorSpec:
    """Fat Cantor set construction data.

    Level k removes the middle fraction gap_fractions[k-1] from each level
    k-1 interval; eta(k) is the half-height of the H-shape glued over a level
    k gap.
    """

    gap_fractions: Tuple[float, ...] = field(default_factory=default_gap_fractions)
    levels: int = 6

    def __post_init__(self):
        fr = tuple(float(a) for a in self.gap_fractions)
        object.__setattr__(self, "gap_fractions", fr)
        if self.levels != len(fr):
            raise ConfigInvalid("levels must match the number of gap fractions")
        if self.levels < 1 or self.levels > 8:
            raise ConfigInvalid("supported construction depth is 1..8 levels")
        if any(not (0.0 < a < 1.0) for a in fr):
            raise ConfigInvalid("gap fractions must lie in (0, 1)")

    def eta(self, level: int) -> float:
        if level < 1:
            raise LevelOutOfRange("H-shape heights are defined for level >= 1")
        return 1.0 / level

    def interval_length(self, level: int) -> float:
        """Length of a single level-`level` interval."""
        if not (0 <= level <= self.levels):
            raise LevelOutOfRange(f"level {level} outside 0..{self.levels}")
        out = 1.0
        for a in self.gap_fractions[:level]:
            out = out * (1.0 - a) / 2.0
        return out

    def cantor_measure(self) -> float:
        """Total length of the level-N union: the product formula."""
        out = 1.0
        for a in self.gap_fractions:
            out *= 1.0 - a
        return out

    def intervals(self, level: int) -> np.ndarray:
        """The 2**level kept intervals of the given level, ordered, as (lo, hi)."""
        if not (0 <= level <= self.levels):
            raise LevelOutOfRange(f"level {level} outside 0..{self.levels}")
        iv = np.array([[0.0, 1.0]])
        for k in range(level):
            a = self.gap_fractions[k]
            length = iv[:, 1] - iv[:, 0]
            g = a * length
            child = (length - g) / 2.0
            nxt = np.empty((2 * len(iv), 2))
            nxt[0::2, 0] = iv[:, 0]
            nxt[0::2, 1] = iv[:, 0] + child
            nxt[1::2, 0] = iv[:, 1] - child
            nxt[1::2, 1] = iv[:, 1]
            iv = nxt
        return iv

    def gaps(self) -> List[Tuple[int, float, float]]:
        """All removed gaps as (level, lo, hi), by level then left to right."""
        out = []
        iv = np.array([[0.0, 1.0]])
        for k in range(self.levels):
            a = self.gap_fractions[k]
            length = iv[:, 1] - iv[:, 0]
            g = a * length
            child = (length - g) / 2.0
            for (lo, hi), c in zip(iv, child):
                out.append((k + 1, float(lo + c), float(hi - c)))
            nxt = np.empty((2 * len(iv), 2))
            nxt[0::2, 0] = iv[:, 0]
            nxt[0::2, 1] = iv[:, 0] + child
            nxt[1::2, 0] = iv[:, 1] - child
            nxt[1::2, 1] = iv[:, 1]
            iv = nxt
        return out

    def axis_measure(self, x0: float, x1: float) -> float:
        """Length of the level-N union inside [x0, x1] (order-insensitive)."""
        lo, hi = (x0, x1) if x0 <= x1 else (x1, x0)
        iv = self.intervals(self.levels)
        overlap = np.minimum(iv[:, 1], hi) - np.maximum(iv[:, 0], lo)
        return float(np.clip(overlap, 0.0, None).sum())

    def witness_chain(self) -> List[Dict[str, object]]:
        """Nested intervals and gaps along the alternating left/right address.

        Entry k-1 describes construction step k: the parent interval, the gap
        removed from it, the child interval the address descends into, and
        whether that child is the left one.
        """
        out = []
        lo, hi = 0.0, 1.0
        for k in range(1, self.levels + 1):
            a = self.gap_fractions[k - 1]
            length = hi - lo
            g = a * length
            child = (length - g) / 2.0
            gap = (lo + child, hi - child)
            take_left = k % 2 == 1
            nxt = (lo, lo + child) if take_left else (hi - child, hi)
            out.append(
                {
                    "level": k,
                    "parent": (lo, hi),
                    "gap": gap,
                    "child": nxt,
                    "took_left": take_left,
                }
            )
            lo, hi = nxt
        return out


@dataclass(frozen=True)
class CantorRectangle:
    """Witness rectangle between two H-shapes of consecutive gap levels."""

    level: int
    x0: float
    x1: float
    height: float
    left_gap: Tuple[int, float, float]
    right_gap: Tuple[int, float, float]


def cantor_rectangle(spec: CantorSpec, level: int) -> CantorRectangle:
    """The upper-half-plane rectangle spanning a kept level+1 interval.

    Its vertical sides lie on the H-shapes of the witness gaps of levels
    `level` and `level + 1`, and its height is the half-height of the deeper
    H-shape.
    """
    if not (1 <= level <= spec.levels - 1):
        raise LevelOutOfRange(
            f"rectangles exist for levels 1..{spec.levels - 1}, got {level}"
        )
    chain = spec.witness_chain()
    step, nxt = chain[level - 1], chain[level]
    gap_n = (step["level"], *step["gap"])
    gap_n1 = (nxt["level"], *nxt["gap"])
    child_lo, child_hi = step["child"]
    if step["took_left"]:
        # the deeper gap sits in the left child, the shallow gap to its right
        x0, x1 = nxt["gap"][1], child_hi
        left_gap, right_gap = gap_n1, gap_n
    else:
        x0, x1 = child_lo, nxt["gap"][0]
        left_gap, right_gap = gap_n, gap_n1
    return CantorRectangle(
        level=level,
        x0=float(x0),
        x1=float(x1),
        height=spec.eta(level + 1),
        left_gap=left_gap,
        right_gap=right_gap,
    )


def _fill_lines(specials: Sequence[float], max_step: float) -> np.ndarray:
    """Sorted unique line set, with uniform inserts so no gap exceeds max_step."""
    base = np.sort(np.asarray(list(specials), dtype=float))
    keep = np.concatenate([[True], np.diff(base) > 1e-12])
    base = base[keep]
    out = [base[0]]
    for lo, hi in zip(base[:-1], base[1:]):
        gap = hi - lo
        if gap > max_step:
            k = int(np.ceil(gap / max_step))
            out.extend(lo + gap * np.arange(1, k) / k)
        out.append(hi)
    return np.asarray(out)


WITNESS_MARGINS = (0.2, 0.1, 0.05, 0.025, 0.0125)
_CANTOR_PAD = 0.25
_CANTOR_YMAX = 1.5


@dataclass
class QuotientPlaneMesh:
    """Planar grid over the H-shape decoration, with the quotient metric.

    `classes` lists the vertex set of each collapsed H-shape, indexed like
    spec-order gaps; `class_of` maps vertices to their class (or -1). The
    sampled metric `dR` holds quotient distances over `probe_ids`, which cover
    every axis vertex of [0, 1] plus far-field reference points.
    """

    mesh: MetricSurfaceMesh
    spec: CantorSpec
    gaps: List[Tuple[int, float, float]]
    classes: List[np.ndarray]
    class_of: np.ndarray
    probe_ids: np.ndarray
    dR: SampledMetricSpace
    witness_margins: Tuple[float, ...] = WITNESS_MARGINS
    _roots: Optional[np.ndarray] = None
    _qgraph: Optional[object] = None

    def _quotient_graph(self):
        if self._qgraph is not None:
            return self._qgraph, self._roots
        root = np.arange(self.mesh.n_vertices)
        for verts in self.classes:
            root[verts] = verts.min()
        uniq, node = np.unique(root, return_inverse=True)
        e = self.mesh.edges
        r, c = node[root[e[:, 0]]], node[root[e[:, 1]]]
        w = self.mesh.edge_lengths
        m = r != c
        # contraction can merge several edges into one arc; keep the shortest
        order = np.lexsort((c[m], r[m]))
        rr, cc, ww = r[m][order], c[m][order], w[m][order]
        firsts = np.concatenate([[True], (np.diff(rr) != 0) | (np.diff(cc) != 0)])
        idx = np.flatnonzero(firsts)
        wmin = np.minimum.reduceat(ww, idx)
        g = coo_matrix(
            (
                np.concatenate([wmin, wmin]),
                (
                    np.concatenate([rr[idx], cc[idx]]),
                    np.concatenate([cc[idx], rr[idx]]),
                ),
            ),
            shape=(len(uniq), len(uniq)),
        ).tocsr()
        self._qgraph = g
        self._roots = node[root]
        return g, self._roots

    def quotient_distances(self, sources: Sequence[int]) -> np.ndarray:
        """Quotient-metric distances from source vertices to every vertex."""
        g, node = self._quotient_graph()
        src = np.unique(node[np.asarray(sources, dtype=np.int64)])
        d = dijkstra(g, directed=False, indices=src, min_only=True)
        return d[node]

    def vertex_at(self, x: float, y: float) -> int:
        pts = self.mesh.vertices
        i = int(np.argmin(np.abs(pts[:, 0] - x) + np.abs(pts[:, 1] - y)))
        if abs(pts[i, 0] - x) + abs(pts[i, 1] - y) > 1e-9:
            raise ConfigInvalid(f"({x}, {y}) is not a grid vertex")
        return i

    def axis_vertex(self, x: float) -> int:
        return self.vertex_at(x, 0.0)

    def gap_class(self, level: int, which: int = 0) -> int:
        """Index of the class of the `which`-th gap of the given level."""
        hits = [i for i, (lv, _, _) in enumerate(self.gaps) if lv == level]
        if not hits or which >= len(hits):
            raise LevelOutOfRange(f"no gap #{which} at level {level}")
        return hits[which]

    def class_for_gap(self, gap: Tuple[int, float, float]) -> int:
        for i, g in enumerate(self.gaps):
            if g[0] == gap[0] and abs(g[1] - gap[1]) < 1e-12:
                return i
        raise LevelOutOfRange(f"gap {gap} is not part of this construction")


def gen_cantor_quotient(spec: CantorSpec, n: int = 24) -> QuotientPlaneMesh:
    """Grid realization of the plane with H-shapes collapsed to points.

    The tensor grid has x-lines at every kept-interval endpoint (none strictly
    inside a gap), y-lines at 0, at every H-shape half-height, and filler
    lines at step about 1/n. Extra lines support the shrinking witness
    quadrilaterals around the level-1 H-shape.
    """
    if n < 8:
        raise ConfigInvalid("quotient grid needs n >= 8 filler resolution")
    gaps = spec.gaps()
    lvl1_lo, lvl1_hi = gaps[0][1], gaps[0][2]

    x_specials = [-_CANTOR_PAD, 1.0 + _CANTOR_PAD, 0.0, 1.0]
    x_specials.extend(spec.intervals(spec.levels).ravel().tolist())
    for t in WITNESS_MARGINS:
        x_specials.extend([lvl1_lo - t, lvl1_lo - t / 2, lvl1_hi + t / 2, lvl1_hi + t])
    # filler resolution only matters outside [0, 1]; inside, the endpoint
    # lines are already denser than 1/n everywhere except across gaps, which
    # must stay line-free
    x_lines = np.sort(np.unique(np.asarray(x_specials)))
    margin_fill = _fill_lines([-_CANTOR_PAD, 0.0], 1.0 / n)
    margin_fill2 = _fill_lines([1.0, 1.0 + _CANTOR_PAD], 1.0 / n)
    x_lines = np.sort(np.unique(np.concatenate([x_lines, margin_fill, margin_fill2])))
    keep = np.concatenate([[True], np.diff(x_lines) > 1e-12])
    x_lines = x_lines[keep]

    y_specials = [0.0, _CANTOR_YMAX, -_CANTOR_YMAX]
    for k in range(1, spec.levels + 1):
        y_specials.extend([spec.eta(k), -spec.eta(k)])
    for t in WITNESS_MARGINS:
        y_specials.extend([1.0 + t, -(1.0 + t), 1.0 + t / 2, -(1.0 + t / 2)])
    y_lines = _fill_lines(y_specials, 1.0 / n)

    vertices, faces, vertex_grid = _tensor_grid(x_lines, y_lines)
    mesh = MetricSurfaceMesh.build(
        vertices=vertices, faces=faces, ambient="l2", vertex_grid=vertex_grid
    )

    nxp = len(x_lines)

    def col(x):
        i = int(np.searchsorted(x_lines, x))
        i = min(max(i, 0), nxp - 1)
        if abs(x_lines[i] - x) > 1e-12 and i > 0 and abs(x_lines[i - 1] - x) <= 1e-12:
            i -= 1
        if abs(x_lines[i] - x) > 1e-12:
            raise MeshInvalid(f"expected a grid line at x = {x}")
        return i

    y0_row = int(np.argmin(np.abs(y_lines)))
    if abs(y_lines[y0_row]) > 1e-12:
        raise MeshInvalid("expected a grid line at y = 0")

    classes = []
    class_of = -np.ones(mesh.n_vertices, dtype=np.int64)
    for ci, (level, lo, hi) in enumerate(gaps):
        eta = spec.eta(level)
        ilo, ihi = col(lo), col(hi)
        vg = vertex_grid
        on_side = (vg[:, 0] == ilo) | (vg[:, 0] == ihi)
        within = np.abs(vertices[:, 1]) <= eta + 1e-12
        on_gap_segment = (
            (vg[:, 1] == y0_row) & (vg[:, 0] >= ilo) & (vg[:, 0] <= ihi)
        )
        verts = np.flatnonzero((on_side & within) | on_gap_segment)
        classes.append(verts)
        class_of[verts] = ci

    axis = np.flatnonzero(
        (vertex_grid[:, 1] == y0_row)
        & (vertices[:, 0] > -1e-12)
        & (vertices[:, 0] < 1.0 + 1e-12)
    )
    far = [
        mesh_index(vertices, -_CANTOR_PAD, 0.0),
        mesh_index(vertices, 1.0 + _CANTOR_PAD, 0.0),
        mesh_index(vertices, 0.0, _CANTOR_YMAX),
        mesh_index(vertices, 0.0, -_CANTOR_YMAX),
    ]
    probes = np.unique(np.concatenate([axis, np.asarray(far, dtype=np.int64)]))

    qpm = QuotientPlaneMesh(
        mesh=mesh,
        spec=spec,
        gaps=gaps,
        classes=classes,
        class_of=class_of,
        probe_ids=probes,
        dR=SampledMetricSpace(points=(), dist=np.zeros((0, 0))),
    )
    g, node = qpm._quotient_graph()
    d = dijkstra(g, directed=False, indices=node[probes])
    dist = d[:, node[probes]]
    dist = np.minimum(dist, dist.T)
    np.fill_diagonal(dist, 0.0)
    qpm.dR = SampledMetricSpace(
        points=tuple(map(tuple, mesh.vertices[probes])), dist=dist
    )
    return qpm


def mesh_index(vertices: np.ndarray, x: float, y: float) -> int:
    i = int(np.argmin(np.abs(vertices[:, 0] - x) + np.abs(vertices[:, 1] - y)))
    if abs(vertices[i, 0] - x) + abs(vertices[i, 1] - y) > 1e-9:
        raise ConfigInvalid(f"({x}, {y}) is not a grid vertex")
    return i


@dataclass(frozen=True)
class CantorModulusReport:
    level: int
    analytic: float
    solved: float
    rectangle: CantorRectangle


def cantor_rectangle_moduli(
    spec: CantorSpec,
    level: int,
    qpm: Optional[QuotientPlaneMesh] = None,
    n: int = 24,
    check_tol: Optional[float] = 0.10,
) -> CantorModulusReport:
    """Analytic and solved crossing modulus of the level-`level` rectangle.

    The analytic value is eta(level+1) over the kept level+1 interval length.
    The solver result is the discrete modulus of curves joining the two
    collapsed H-shapes inside the rectangle.
    """
    rect = cantor_rectangle(spec, level)
    analytic = rect.height / spec.interval_length(level + 1)
    if qpm is None:
        qpm = gen_cantor_quotient(spec, n)

    from . import modulus

    patch = chart_rectangle(qpm.mesh, rect.x0, rect.x1, 0.0, rect.height)
    left_cls = qpm.classes[qpm.class_for_gap(rect.left_gap)]
    right_cls = qpm.classes[qpm.class_for_gap(rect.right_gap)]
    res = modulus.modulus_connect(
        qpm.mesh,
        sources=left_cls,
        sinks=right_cls,
        support_faces=patch.face_ids,
        classes=qpm.classes,
    )
    solved = res.value
    if check_tol is not None and abs(solved - analytic) > check_tol * analytic:
        raise MeshInvalid(
            f"rectangle modulus {solved:.4f} strays from analytic {analytic:.4f}"
        )
    return CantorModulusReport(level=level, analytic=analytic, solved=solved, rectangle=rect)
