"""Discrete conformal 2-modulus of curve families on triangle meshes.

A curve is discretized as a face chain: a walk through edge midpoints where
consecutive midpoints share a face. The passage through face f contributes
rho_f times the chord length between its midpoints, so "every curve has
rho-length >= 1" becomes a sparse linear constraint system over face
densities. The solver generates constraints lazily: it alternates a
shortest-chain search under the current density with a projected-gradient
solve of the quadratic program restricted to the chains found so far, and
stops when the globally shortest chain certifies admissibility up to
``solver_tol``.

Each round rescales the current iterate by its globally shortest chain
length, which makes it admissible outright; the best such density is kept
and returned, so ``value`` is a true upper bound for the discrete modulus
and ``value - duality_gap_estimate`` is the best dual lower bound seen.
"""

import time
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from .errors import (
    ConfigInvalid,
    IterationLimit,
    MeshInvalid,
    NoCurve,
    NoSeparationNeeded,
    RadiusOrder,
)
from .metric_core import MetricSurfaceMesh, pair_dist, vertex_distances

SOLVER_TOL = 1e-3
MAX_CHAINS = 6000
_TIE = 1e-12  # deterministic tie-break on zero-density arcs


# ---------------------------------------------------------------------------
# result types


@dataclass(frozen=True)
class DensityField:
    """Nonnegative density per face; zero outside ``restricted_support``."""

    rho: np.ndarray
    restricted_support: Optional[np.ndarray] = None

    def energy(self, mesh: MetricSurfaceMesh) -> float:
        return float(mesh.face_areas() @ (self.rho * self.rho))


@dataclass(frozen=True)
class CurveFamilySpec:
    """What was solved: the family kind and its defining vertex/face sets."""

    kind: str
    sources: np.ndarray
    sinks: np.ndarray
    region_faces: Optional[np.ndarray] = None
    rho_support: Optional[np.ndarray] = None


@dataclass
class ModulusResult:
    """Solved modulus with its admissibility certificate.

    ``value`` is the energy of ``rho``; ``certificate`` is the rho-length of
    the globally shortest chain under ``rho``, so whenever certificate >= 1
    the density is admissible and the discrete modulus is at most ``value``.
    ``duality_gap_estimate`` measures value minus the best dual bound, so
    the modulus is also at least ``lower_bound()``.
    """

    value: float
    rho: DensityField
    certificate: float
    iterations: int
    duality_gap_estimate: float
    n_constraints: int
    family: Optional[CurveFamilySpec] = None

    def lower_bound(self) -> float:
        if not np.isfinite(self.value):
            return np.inf
        return max(self.value - self.duality_gap_estimate, 0.0)


@dataclass(frozen=True)
class QuadMarking:
    """Four boundary arcs of a face region, listed in cyclic order.

    ``sides`` holds vertex ids for (zeta1, zeta2, zeta3, zeta4); adjacent
    arcs may share corner vertices, opposite arcs must be disjoint.
    ``face_ids`` restricts the curves to a sub-region (None means the whole
    mesh).
    """

    sides: Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]
    face_ids: Optional[np.ndarray] = None

    def validate(self) -> None:
        if len(self.sides) != 4:
            raise ConfigInvalid("a quadrilateral needs exactly four marked arcs")
        for s in self.sides:
            if len(s) == 0:
                raise ConfigInvalid("empty quadrilateral arc")
        if len(np.intersect1d(self.sides[0], self.sides[2])):
            raise ConfigInvalid("opposite arcs zeta1, zeta3 overlap")
        if len(np.intersect1d(self.sides[1], self.sides[3])):
            raise ConfigInvalid("opposite arcs zeta2, zeta4 overlap")


@dataclass
class QuadModuli:
    """Primal and conjugate moduli of a marked quadrilateral."""

    primal: ModulusResult
    conjugate: ModulusResult

    def __iter__(self):
        return iter((self.primal, self.conjugate))

    @property
    def product(self) -> float:
        return self.primal.value * self.conjugate.value

    @property
    def product_lower(self) -> float:
        """Certified lower bound on the product from the dual bounds."""
        return self.primal.lower_bound() * self.conjugate.lower_bound()


@dataclass
class ReciprocityReport:
    """Min/max quad product over a scan, against the universal lower bound."""

    products: np.ndarray
    min_product: float
    max_product: float
    lower_bound: float
    lower_ok: bool
    kappa_upper: Optional[float]
    flagged: np.ndarray

    @property
    def n_quads(self) -> int:
        return len(self.products)


# ---------------------------------------------------------------------------
# chain graph


class _ChainGraph:
    """Directed arc list over edge-midpoint nodes plus terminals.

    Arcs carry the face they cross and the geometric chord length there
    (already scaled by any per-face length weight); terminal and class
    hookup arcs that cost nothing carry face -1.
    """

    def __init__(self, mesh: MetricSurfaceMesh, region_faces=None, classes=None):
        if mesh.vertices is None:
            raise MeshInvalid("modulus needs vertex coordinates to route face chains")
        self.mesh = mesh
        self.ambient = mesh.ambient or "l2"
        self.mids = mesh.vertices[mesh.edges].mean(axis=1)
        self.n_nodes = mesh.edges.shape[0]
        self._src: List[np.ndarray] = []
        self._dst: List[np.ndarray] = []
        self._face: List[np.ndarray] = []
        self._chord: List[np.ndarray] = []
        self._tie: List[np.ndarray] = []

        nf = mesh.n_faces
        self.keep = np.zeros(nf, dtype=bool)
        if region_faces is None:
            self.keep[:] = True
        else:
            self.keep[np.asarray(region_faces, dtype=np.int64)] = True
        self._flw = mesh.face_length_weight
        self._fe = mesh.face_edge_ids()

        fid = np.flatnonzero(self.keep)
        fe = self._fe[fid]
        for a, b in ((0, 1), (1, 2), (0, 2)):
            ea, eb = fe[:, a], fe[:, b]
            c = pair_dist(self.mids[ea], self.mids[eb], self.ambient)
            if self._flw is not None:
                c = c * self._flw[fid]
            # ties between equal-cost chains break toward the Euclidean
            # shortest one, keeping degenerate metrics (linf) from cycling
            # through zigzag variants of one crossing
            t = pair_dist(self.mids[ea], self.mids[eb], "l2")
            self._push(ea, eb, fid, c, t)
            self._push(eb, ea, fid, c, t)

        # one hub node per collapsed class; crossing into the collapsed point
        # costs the in-face distance from the midpoint to the class corner
        self.class_nodes: dict = {}
        self.class_sets: List[np.ndarray] = []
        if classes:
            class_of = np.full(mesh.n_vertices, -1, dtype=np.int64)
            for ci, verts in enumerate(classes):
                verts = np.asarray(verts, dtype=np.int64)
                self.class_sets.append(verts)
                class_of[verts] = ci
                self.class_nodes[ci] = self._alloc()
            base = self.n_nodes - len(classes)
            for k in range(3):
                cc = class_of[mesh.faces[:, k]]
                m = self.keep & (cc >= 0)
                if not m.any():
                    continue
                fsel = np.flatnonzero(m)
                pv = mesh.vertices[mesh.faces[fsel, k]]
                hub = base + cc[fsel]
                for e in range(3):
                    eid = self._fe[fsel, e]
                    c = pair_dist(self.mids[eid], pv, self.ambient)
                    if self._flw is not None:
                        c = c * self._flw[fsel]
                    t = pair_dist(self.mids[eid], pv, "l2")
                    self._push(eid, hub, fsel, c, t)
                    self._push(hub, eid, fsel, c, t)

    def _alloc(self) -> int:
        node = self.n_nodes
        self.n_nodes += 1
        return node

    def _push(self, src, dst, face, chord, tie=None) -> None:
        src = np.atleast_1d(np.asarray(src, dtype=np.int64)).copy()
        self._src.append(src)
        self._dst.append(np.broadcast_to(np.asarray(dst, dtype=np.int64), src.shape).copy())
        self._face.append(np.broadcast_to(np.asarray(face, dtype=np.int64), src.shape).copy())
        self._chord.append(np.broadcast_to(np.asarray(chord, dtype=float), src.shape).copy())
        self._tie.append(
            np.broadcast_to(np.asarray(chord if tie is None else tie, dtype=float), src.shape).copy()
        )

    def _terminal(self, verts: np.ndarray, is_source: bool) -> int:
        """Attach a terminal: free entry along internal edges of the set,
        charged entry across faces from its vertices, free hop to any
        collapsed class it meets."""
        verts = np.asarray(verts, dtype=np.int64)
        node = self._alloc()
        inset = np.zeros(self.mesh.n_vertices, dtype=bool)
        inset[verts] = True

        e = self.mesh.edges
        internal = np.flatnonzero(inset[e[:, 0]] & inset[e[:, 1]])
        if len(internal):
            zero = np.zeros(len(internal))
            none = np.full(len(internal), -1, dtype=np.int64)
            if is_source:
                self._push(np.full(len(internal), node), internal, none, zero)
            else:
                self._push(internal, np.full(len(internal), node), none, zero)

        for k in range(3):
            m = self.keep & inset[self.mesh.faces[:, k]]
            if not m.any():
                continue
            fsel = np.flatnonzero(m)
            pv = self.mesh.vertices[self.mesh.faces[fsel, k]]
            for eslot in range(3):
                eid = self._fe[fsel, eslot]
                c = pair_dist(self.mids[eid], pv, self.ambient)
                if self._flw is not None:
                    c = c * self._flw[fsel]
                t = pair_dist(self.mids[eid], pv, "l2")
                if is_source:
                    self._push(np.full(len(fsel), node), eid, fsel, c, t)
                else:
                    self._push(eid, np.full(len(fsel), node), fsel, c, t)

        for ci, cverts in enumerate(self.class_sets):
            if len(np.intersect1d(cverts, verts)):
                hub = self.class_nodes[ci]
                if is_source:
                    self._push([node], [hub], [-1], [0.0])
                else:
                    self._push([hub], [node], [-1], [0.0])
        return node

    def add_source(self, verts) -> int:
        return self._terminal(verts, True)

    def add_sink(self, verts) -> int:
        return self._terminal(verts, False)

    def finish(self) -> None:
        """Freeze arcs; parallel (u, v) arcs keep the shortest chord."""
        src = np.concatenate(self._src)
        dst = np.concatenate(self._dst)
        face = np.concatenate(self._face)
        chord = np.concatenate(self._chord)
        tie = np.concatenate(self._tie)
        order = np.lexsort((face, chord, dst, src))
        src, dst = src[order], dst[order]
        first = np.concatenate([[True], (np.diff(src) != 0) | (np.diff(dst) != 0)])
        self.src, self.dst = src[first], dst[first]
        self.face, self.chord = face[order][first], chord[order][first]
        self.tie = tie[order][first]
        self._arc_of = {}
        for i, (u, v) in enumerate(zip(self.src, self.dst)):
            self._arc_of[(int(u), int(v))] = i

    def weights(self, rho: np.ndarray) -> np.ndarray:
        f = np.maximum(self.face, 0)
        w = rho[f] * self.chord * (self.face >= 0)
        w += _TIE * self.tie
        return w

    def _walk(self, pred, source, tail, aggregate=True):
        """Face passage of the tree path source -> tail (portals included)."""
        faces, chords = [], []
        node = tail
        while node != source:
            u = pred[node]
            if u < 0:
                return None
            a = self._arc_of[(int(u), int(node))]
            if self.face[a] >= 0:
                faces.append(self.face[a])
                chords.append(self.chord[a])
            node = u
        faces = np.asarray(faces, dtype=np.int64)
        chords = np.asarray(chords)
        if not aggregate or len(faces) == 0:
            return faces, chords
        uf, inv = np.unique(faces, return_inverse=True)
        return uf, np.bincount(inv, weights=chords)

    def _walk_out(self, pred, sink, head):
        """Face passage of the reverse-tree path head -> sink, unaggregated."""
        faces, chords = [], []
        node = head
        while node != sink:
            u = pred[node]
            if u < 0:
                return None
            a = self._arc_of[(int(node), int(u))]
            if self.face[a] >= 0:
                faces.append(self.face[a])
                chords.append(self.chord[a])
            node = u
        return np.asarray(faces, dtype=np.int64), np.asarray(chords)

    def shortest_chains(self, rho, source, sink, limit, tol=SOLVER_TOL):
        """The shortest rho-chain plus up to ``limit`` face-covering chains.

        Builds the shortest-path tree from the source and the reverse tree
        from the sink; the first returned passage is the globally shortest
        chain (the admissibility certificate). Every arc then knows the best
        chain through it, so for each face carrying a violating chain the
        best chain through that face is read off the two trees. Wide curve
        families (fat annuli, long sides) are covered across their whole
        width in one round instead of one tree path at a time. Returns a
        list of (faces, chords) passages led by the shortest one, or None
        when the terminals are disconnected.
        """
        w = self.weights(rho)
        g = csr_matrix((w, (self.src, self.dst)), shape=(self.n_nodes, self.n_nodes))
        dS, predS = dijkstra(g, directed=True, indices=source, return_predecessors=True)
        if not np.isfinite(dS[sink]):
            return None
        first = self._walk(predS, source, sink)
        if first is None:
            return None
        out = [first]
        gr = csr_matrix((w, (self.dst, self.src)), shape=(self.n_nodes, self.n_nodes))
        dT, predT = dijkstra(gr, directed=True, indices=sink, return_predecessors=True)
        through = dS[self.src] + w + dT[self.dst]
        cut = 1.0 - 0.5 * tol
        idx = np.flatnonzero((self.face >= 0) & np.isfinite(through) & (through < cut))
        if idx.size:
            # best violating arc per face, then most violating faces first
            o = np.lexsort((through[idx], self.face[idx]))
            ii = idx[o]
            ff = self.face[ii]
            lead = np.concatenate([[True], np.diff(ff) != 0])
            picks = ii[lead]
            picks = picks[np.argsort(through[picks], kind="stable")][: max(limit, 1)]
            for a in picks:
                head = self._walk(predS, source, int(self.src[a]), aggregate=False)
                tail = self._walk_out(predT, sink, int(self.dst[a]))
                if head is None or tail is None:
                    continue
                faces = np.concatenate([head[0], [self.face[a]], tail[0]])
                chords = np.concatenate([head[1], [self.chord[a]], tail[1]])
                uf, inv = np.unique(faces, return_inverse=True)
                out.append((uf, np.bincount(inv, weights=chords)))
        return out


# ---------------------------------------------------------------------------
# quadratic program on the recorded chains


def _qp_dual(L, area, lam, tol, iters):
    """min sum(rho^2 area) s.t. L rho >= 1, rho >= 0, by dual projected ascent.

    The step is Polyak's, aimed at a level target halfway between the best
    dual value and the best feasible primal energy; aiming straight at the
    primal estimate overshoots badly while that estimate is still loose.
    Early on the primal estimate can be arbitrarily bad (the shortest recorded
    chain may have near-zero length under the current rho), so the level is
    capped relative to the best dual and the step carries a damping factor
    that shrinks whenever the dual ascent falls off a cliff; the iterate is
    then restored from the best dual point instead of carrying the blow-up.
    Returns (lam, rho, primal, dual) with lam at the best dual point and rho
    feasible for the rows of L (scaled so the shortest recorded chain has
    length exactly 1).
    """
    inv2a = 0.5 / area
    best_p = np.inf
    best_d = -np.inf
    best_rho = None
    lam_best = lam.copy()
    beta = 1.0
    for _ in range(iters):
        rho = (L.T @ lam) * inv2a
        energy = float(area @ (rho * rho))
        lens = L @ rho
        dual = float(lam.sum()) - energy
        if dual > best_d:
            best_d = dual
            lam_best = lam.copy()
        mn = float(lens.min()) if lens.size else 0.0
        if mn > 0.0:
            p = energy / (mn * mn)
            if p < best_p:
                best_p = p
                best_rho = rho / mn
        if np.isfinite(best_p) and best_p - best_d <= tol * max(abs(best_p), 1e-12):
            break
        if not np.isfinite(dual) or dual < best_d - 10.0 * (1.0 + abs(best_d)):
            lam = lam_best.copy()
            beta *= 0.5
            if beta < 1e-12:
                break
            continue
        grad = 1.0 - lens
        gn = float(grad @ grad)
        if gn <= 1e-300:
            break
        if np.isfinite(best_p):
            target = best_d + 0.5 * (best_p - best_d)
        else:
            target = best_d + 1.0
        target = min(target, best_d + 10.0 * (1.0 + abs(best_d)))
        lam = np.maximum(0.0, lam + beta * (max(target - dual, 1e-12) / gn) * grad)
    return lam_best, best_rho, best_p, best_d


def _solve_family(
    graph: _ChainGraph,
    source: int,
    sink: int,
    family: CurveFamilySpec,
    tol: float = SOLVER_TOL,
    max_chains: int = MAX_CHAINS,
    max_rounds: Optional[int] = None,
    time_budget: Optional[float] = None,
) -> ModulusResult:
    mesh = graph.mesh
    area = np.maximum(mesh.face_areas(), 1e-300)
    nf = mesh.n_faces
    row_keep = None
    if family.rho_support is not None:
        row_keep = np.zeros(nf, dtype=bool)
        row_keep[np.asarray(family.rho_support, dtype=np.int64)] = True

    rho = np.zeros(nf)
    rows_f: List[np.ndarray] = []
    rows_c: List[np.ndarray] = []
    lam = np.zeros(0)
    seen: dict = {}
    inner_tol, inner_iters = 1e-4, 900
    strikes = 0
    dual_best = 0.0
    cert = 0.0
    batch = 1024
    started = time.monotonic()
    # incumbent: scaling any iterate by its shortest-chain length makes it
    # admissible outright, so the best such rescaling is a certified upper
    # bound that only improves; it is what the solve ultimately returns
    best_val = np.inf
    best_rho = rho
    best_round = 0
    # separating families on round annuli are fully degenerate (every cycle
    # is extremal), which stalls the dual tail; accept a looser energy gap
    # there rather than grinding the inner solve for marginal digits
    gap_mult = 30.0 if family.kind == "separate" else 10.0
    rounds = max_chains if max_rounds is None else min(max_chains, max_rounds)

    for it in range(1, rounds + 1):
        cands = graph.shortest_chains(rho, source, sink, batch, tol=tol)
        if cands is None:
            raise NoCurve("terminal sets are disconnected in the region")
        faces, chords = cands[0]
        cert = float(rho[faces] @ chords)
        if rows_f and cert > 0.0:
            ub = float(area @ (rho * rho)) / cert**2
            if ub < best_val:
                if ub < best_val * (1.0 - 1e-3):
                    best_round = it
                best_val = ub
                best_rho = rho / cert
            gap = best_val - dual_best
            if gap <= gap_mult * tol * max(best_val, 1e-12):
                break
            if it - best_round >= 25:
                # the certified bound has been flat for many rounds while
                # the gap refuses to close (heavily degenerate families);
                # stop and report the residual gap rather than spin
                break
        if time_budget is not None and time.monotonic() - started > time_budget:
            if np.isfinite(best_val):
                break
            err = IterationLimit(
                f"no admissible density within {time_budget:.0f}s"
            )
            err.value = float(area @ (rho * rho))
            err.certificate = cert
            raise err
        if float(chords.sum()) <= 1e-13:
            # a cost-free curve joins the terminals: no admissible density
            return ModulusResult(
                value=np.inf,
                rho=DensityField(np.zeros(nf), family.rho_support),
                certificate=0.0,
                iterations=it,
                duality_gap_estimate=np.inf,
                n_constraints=len(rows_f),
                family=family,
            )
        added = 0
        progress = 0
        for cf, cc in cands:
            clen = float(rho[cf] @ cc)
            if progress and clen >= 1.0 - 0.5 * tol:
                break
            if row_keep is not None and len(cf):
                m = row_keep[cf]
                cf, cc = cf[m], cc[m]
            if float(cc.sum()) <= 1e-13:
                continue
            # one working row per face set: near-duplicate chains through
            # the same faces would only pad the system, so a collision keeps
            # the more binding chord vector (the final certificate checks
            # the density against all chains, not just the working set)
            key = cf.tobytes()
            hit = seen.get(key)
            if hit is not None:
                if clen < float(rho[cf] @ rows_c[hit]) - 1e-15:
                    rows_c[hit] = cc
                    progress += 1
                continue
            seen[key] = len(rows_f)
            rows_f.append(cf)
            rows_c.append(cc)
            added += 1
            progress += 1
        if added:
            lam = np.concatenate([lam, np.zeros(added)])
        if progress:
            strikes = 0
        else:
            # the short chains are all recorded already: the inner solve is
            # the bottleneck, so tighten it instead of growing the system
            inner_tol = max(inner_tol * 0.2, 1e-9)
            inner_iters = min(inner_iters * 2, 12000)
            strikes += 1
            if strikes > 8:
                if np.isfinite(best_val):
                    # an admissible density is in hand; keep whatever gap
                    # the inner solve could close, reported honestly below
                    break
                err = IterationLimit(
                    f"certificate stuck at {cert:.6f} after {it} rounds"
                )
                err.value = float(area @ (rho * rho))
                err.certificate = cert
                raise err

        L = csr_matrix(
            (
                np.concatenate(rows_c),
                (
                    np.repeat(np.arange(len(rows_f)), [len(f) for f in rows_f]),
                    np.concatenate(rows_f),
                ),
            ),
            shape=(len(rows_f), nf),
        )
        lam, rho_new, primal, dual = _qp_dual(L, area, lam, inner_tol, inner_iters)
        if rho_new is not None:
            rho = rho_new
        # the dual of the working system stays a lower bound for the full
        # family even after rows are pruned, so the running maximum holds
        dual_best = max(dual_best, dual)

        if len(rows_f) > 2500 or (len(rows_f) > 80 and it % 20 == 0):
            lens = L @ rho
            live = (lens < 11.0) | (lam > 1e-12)
            if live.sum() > 6000:
                # working-set cap: keep every supporting row, fill the rest
                # with the most binding ones; anything dropped regenerates
                # through the certificate check if it ever matters again
                hold = lam > 1e-12
                slots = max(6000 - int(hold.sum()), 0)
                spare = np.flatnonzero(~hold)
                hold[spare[np.argsort(lens[spare], kind="stable")[:slots]]] = True
                live = hold
            if not live.all():
                rows_f = [f for f, k in zip(rows_f, live) if k]
                rows_c = [c for c, k in zip(rows_c, live) if k]
                lam = lam[live]
                seen = {f.tobytes(): i for i, f in enumerate(rows_f)}
    else:
        if not np.isfinite(best_val):
            err = IterationLimit(f"no certificate after {rounds} rounds")
            err.value = float(area @ (rho * rho))
            err.certificate = cert
            raise err
        it = rounds

    return ModulusResult(
        value=best_val,
        rho=DensityField(best_rho, family.rho_support),
        certificate=1.0,
        iterations=it,
        duality_gap_estimate=max(best_val - dual_best, 0.0),
        n_constraints=len(rows_f),
        family=family,
    )


# ---------------------------------------------------------------------------
# public solvers


def _as_ids(x) -> np.ndarray:
    out = np.unique(np.asarray(x, dtype=np.int64))
    if out.size == 0:
        raise ConfigInvalid("empty vertex set")
    return out


def modulus_connect(
    mesh: MetricSurfaceMesh,
    sources,
    sinks,
    support_faces=None,
    classes=None,
    rho_support=None,
    tol: float = SOLVER_TOL,
    max_chains: int = MAX_CHAINS,
    max_rounds: Optional[int] = None,
    time_budget: Optional[float] = None,
) -> ModulusResult:
    """Modulus of curves joining two vertex sets inside a face region.

    ``support_faces`` confines the curves (and hence the density) to a
    sub-region; ``rho_support`` instead restricts only where the density may
    live, letting curves run elsewhere for free. ``classes`` lists
    collapsed vertex sets of a quotient surface; travel within a class is
    free and entering or leaving one is charged across the incident face.
    """
    E, F = _as_ids(sources), _as_ids(sinks)
    if len(np.intersect1d(E, F)):
        raise ConfigInvalid("source and sink sets overlap")
    graph = _ChainGraph(mesh, region_faces=support_faces, classes=classes)
    s = graph.add_source(E)
    t = graph.add_sink(F)
    graph.finish()
    fam = CurveFamilySpec(
        kind="connect",
        sources=E,
        sinks=F,
        region_faces=None if support_faces is None else np.asarray(support_faces),
        rho_support=None if rho_support is None else np.asarray(rho_support),
    )
    return _solve_family(
        graph,
        s,
        t,
        fam,
        tol=tol,
        max_chains=max_chains,
        max_rounds=max_rounds,
        time_budget=time_budget,
    )


def modulus_quad(
    mesh: MetricSurfaceMesh,
    quad: QuadMarking,
    classes=None,
    tol: float = SOLVER_TOL,
    max_chains: int = MAX_CHAINS,
    max_rounds: Optional[int] = None,
    time_budget: Optional[float] = None,
) -> QuadModuli:
    """Primal (zeta1-zeta3) and conjugate (zeta2-zeta4) moduli of a quad."""
    quad.validate()
    primal = modulus_connect(
        mesh,
        quad.sides[0],
        quad.sides[2],
        support_faces=quad.face_ids,
        classes=classes,
        tol=tol,
        max_chains=max_chains,
        max_rounds=max_rounds,
        time_budget=time_budget,
    )
    conjugate = modulus_connect(
        mesh,
        quad.sides[1],
        quad.sides[3],
        support_faces=quad.face_ids,
        classes=classes,
        tol=tol,
        max_chains=max_chains,
        max_rounds=max_rounds,
        time_budget=time_budget,
    )
    return QuadModuli(primal=primal, conjugate=conjugate)


def modulus_point_condition(
    mesh: MetricSurfaceMesh,
    center,
    R: float,
    r_schedule: Sequence[float],
    distances: Optional[np.ndarray] = None,
    classes=None,
    tol: float = SOLVER_TOL,
    max_chains: int = MAX_CHAINS,
    max_rounds: Optional[int] = None,
    time_budget: Optional[float] = None,
) -> List[ModulusResult]:
    """Annulus moduli Mod(closed ball(r), complement of ball(R)) per r.

    ``center`` is a vertex id or a set of vertices (a collapsed class);
    ``distances`` overrides the ball metric, e.g. with quotient distances.
    """
    rs = np.asarray(r_schedule, dtype=float)
    if rs.size == 0:
        raise ConfigInvalid("empty radius schedule")
    if (np.diff(rs) >= 0).any():
        raise RadiusOrder("radius schedule must be strictly decreasing")
    if rs[0] >= R or rs[-1] <= 0:
        raise RadiusOrder("radii must satisfy 0 < r < R")
    centers = np.atleast_1d(np.asarray(center, dtype=np.int64))
    if distances is None:
        d = vertex_distances(mesh, centers).min(axis=0)
    else:
        d = np.asarray(distances, dtype=float)
    far = np.flatnonzero(d >= R - 1e-12)
    if len(far) == 0:
        raise ConfigInvalid("no vertex lies outside the outer ball")
    # Faces whose corners all sit outside the outer ball never carry mass:
    # a crossing chain can be cut at its first far contact, and the extremal
    # density vanishes past that point. Dropping them shrinks the graph
    # without changing the value.
    region = np.flatnonzero((d[mesh.faces] < R - 1e-12).any(axis=1))
    out = []
    for r in rs:
        ball = np.flatnonzero(d <= r + 1e-12)
        out.append(
            modulus_connect(
                mesh,
                ball,
                far,
                support_faces=region,
                classes=classes,
                tol=tol,
                max_chains=max_chains,
                max_rounds=max_rounds,
                time_budget=time_budget,
            )
        )
    return out


def _vertex_graph(mesh: MetricSurfaceMesh, allowed: Optional[np.ndarray]) -> csr_matrix:
    e, w = mesh.edges, mesh.edge_lengths
    if allowed is not None:
        m = allowed[e[:, 0]] & allowed[e[:, 1]]
        e, w = e[m], w[m]
    n = mesh.n_vertices
    return csr_matrix(
        (np.concatenate([w, w]), (np.concatenate([e[:, 0], e[:, 1]]), np.concatenate([e[:, 1], e[:, 0]]))),
        shape=(n, n),
    )


def modulus_separating(
    mesh: MetricSurfaceMesh,
    E,
    F,
    region_faces=None,
    classes=None,
    tol: float = SOLVER_TOL,
    max_chains: int = MAX_CHAINS,
    max_rounds: Optional[int] = None,
    time_budget: Optional[float] = None,
) -> ModulusResult:
    """Modulus of closed chains separating E from F in an annular region.

    The region is cut along one shortest E-F vertex path; midpoint nodes of
    the cut edges are split into a left and a right copy, and separating
    cycles become chains joining the copies. Chains are not forced to close
    onto their starting point, so the family is a mild relaxation; the
    round-annulus oracle pins the resulting bias.
    """
    E, F = _as_ids(E), _as_ids(F)
    if len(np.intersect1d(E, F)):
        raise ConfigInvalid("the separated sets overlap")
    if mesh.vertices is None:
        raise MeshInvalid("separating families need vertex coordinates")

    allowed = None
    if region_faces is not None:
        allowed = np.zeros(mesh.n_vertices, dtype=bool)
        allowed[np.unique(mesh.faces[np.asarray(region_faces, dtype=np.int64)])] = True
        allowed[E] = True
        allowed[F] = True
    g = _vertex_graph(mesh, allowed)
    dist, pred, src_of = dijkstra(
        g, directed=False, indices=E, min_only=True, return_predecessors=True
    )
    reach = dist[F]
    if not np.isfinite(reach).any():
        raise NoSeparationNeeded("the sets lie in different components")
    node = int(F[np.argmin(reach)])
    path = [node]
    while pred[node] >= 0:
        node = int(pred[node])
        path.append(node)
    path = path[::-1]
    if len(path) < 2:
        raise MeshInvalid("degenerate cut path")

    graph = _ChainGraph(mesh, region_faces=region_faces, classes=classes)
    cut_edges = np.array(
        [mesh.edge_id(path[i], path[i + 1]) for i in range(len(path) - 1)],
        dtype=np.int64,
    )

    # classify each face incident to the cut by the side of the directed path
    pts = mesh.vertices
    cent = pts[mesh.faces].mean(axis=1)
    side_right = np.zeros(mesh.n_faces, dtype=bool)
    touched = np.zeros(mesh.n_faces, dtype=bool)
    fe = mesh.face_edge_ids()
    in_cut = np.zeros(mesh.edges.shape[0], dtype=bool)
    in_cut[cut_edges] = True
    edge_rank = np.full(mesh.edges.shape[0], -1, dtype=np.int64)
    edge_rank[cut_edges] = np.arange(len(cut_edges))
    for f in np.flatnonzero(in_cut[fe].any(axis=1)):
        eids = [e for e in fe[f] if in_cut[e]]
        rank = min(edge_rank[e] for e in eids)
        a, b = path[rank], path[rank + 1]
        v = pts[b] - pts[a]
        w = cent[f] - pts[a]
        side_right[f] = v[0] * w[1] - v[1] * w[0] < 0
        touched[f] = True

    twin = {}
    twin_of = np.full(mesh.edges.shape[0], -1, dtype=np.int64)
    for e in cut_edges:
        twin[int(e)] = graph._alloc()
        twin_of[e] = twin[int(e)]
    # reroute right-side arc endpoints to the twin copies; terminals are not
    # attached yet, so every stored arc still carries a face
    n_edges = mesh.edges.shape[0]
    for k in range(len(graph._src)):
        fa = graph._face[k]
        m = fa >= 0
        if not m.any():
            continue
        right = np.zeros(len(fa), dtype=bool)
        right[m] = touched[fa[m]] & side_right[fa[m]]
        for arr in (graph._src[k], graph._dst[k]):
            hit = right & (arr < n_edges) & in_cut[np.minimum(arr, n_edges - 1)]
            if hit.any():
                arr[hit] = twin_of[arr[hit]]

    s = graph._alloc()
    t = graph._alloc()
    left_ids = cut_edges
    right_ids = np.array([twin[int(e)] for e in cut_edges], dtype=np.int64)
    graph._push(np.full(len(left_ids), s), left_ids, np.full(len(left_ids), -1), np.zeros(len(left_ids)))
    graph._push(right_ids, np.full(len(right_ids), t), np.full(len(right_ids), -1), np.zeros(len(right_ids)))
    graph.finish()

    fam = CurveFamilySpec(
        kind="separate",
        sources=E,
        sinks=F,
        region_faces=None if region_faces is None else np.asarray(region_faces),
    )
    return _solve_family(
        graph,
        s,
        t,
        fam,
        tol=tol,
        max_chains=max_chains,
        max_rounds=max_rounds,
        time_budget=time_budget,
    )


def reciprocity_scan(
    mesh: MetricSurfaceMesh,
    quad_generator,
    n_quads: int = 50,
    classes=None,
    lower_slack: float = 0.1,
    kappa_upper: Optional[float] = None,
    tol: float = SOLVER_TOL,
) -> ReciprocityReport:
    """Product Mod(Q) * Mod*(Q) over a stream of quadrilaterals.

    ``quad_generator`` is an iterable of QuadMarking (or a callable taking
    the quad index). The report checks the universal lower bound
    pi^2/16 * (1 - lower_slack) and flags products above ``kappa_upper``.
    """
    if callable(quad_generator):
        quads: Iterable[QuadMarking] = (quad_generator(i) for i in range(n_quads))
    else:
        quads = quad_generator
    products = []
    for i, quad in enumerate(quads):
        if i >= n_quads:
            break
        qm = modulus_quad(mesh, quad, classes=classes, tol=tol)
        products.append(qm.product)
    products = np.asarray(products)
    if products.size == 0:
        raise ConfigInvalid("the generator yielded no quadrilaterals")
    bound = (np.pi ** 2 / 16.0) * (1.0 - lower_slack)
    flagged = (
        np.flatnonzero(products > kappa_upper)
        if kappa_upper is not None
        else np.empty(0, dtype=np.int64)
    )
    return ReciprocityReport(
        products=products,
        min_product=float(products.min()),
        max_product=float(products.max()),
        lower_bound=bound,
        lower_ok=bool(products.min() >= bound),
        kappa_upper=kappa_upper,
        flagged=flagged,
    )


# ---------------------------------------------------------------------------
# quadrilateral builders


def quad_from_patch(patch) -> QuadMarking:
    """QuadMarking for a chart rectangle (sides left, bottom, right, top)."""
    return QuadMarking(
        sides=(patch.left, patch.bottom, patch.right, patch.top),
        face_ids=patch.face_ids,
    )


def grid_subquads(mesh: MetricSurfaceMesh, rng: np.random.Generator, min_lines: int = 4):
    """Endless stream of chart-aligned sub-quadrilaterals of a planar grid.

    The first quad is the full chart; later ones pick random distinct grid
    lines with at least ``min_lines`` lines between opposite sides.
    """
    from .spaces import chart_rectangle

    if mesh.vertices is None:
        raise MeshInvalid("sub-quadrilaterals need vertex coordinates")
    xs = np.unique(mesh.vertices[:, 0])
    ys = np.unique(mesh.vertices[:, 1])
    if len(xs) <= min_lines or len(ys) <= min_lines:
        raise ConfigInvalid("grid too coarse for sub-quadrilaterals")
    yield quad_from_patch(chart_rectangle(mesh, xs[0], xs[-1], ys[0], ys[-1]))
    while True:
        i0 = int(rng.integers(0, len(xs) - min_lines))
        i1 = int(rng.integers(i0 + min_lines, len(xs)))
        j0 = int(rng.integers(0, len(ys) - min_lines))
        j1 = int(rng.integers(j0 + min_lines, len(ys)))
        yield quad_from_patch(chart_rectangle(mesh, xs[i0], xs[i1], ys[j0], ys[j1]))


def cantor_witness_quads(qpm):
    """Quadrilaterals shrinking onto the collapsed middle H-shape.

    One quad per witness margin t: the box [gap_lo - t, gap_hi + t] x
    [-(1+t), 1+t] around the level-1 gap, whose sides lie on grid lines laid
    down by the quotient generator.
    """
    from .spaces import chart_rectangle

    level, lo, hi = qpm.gaps[qpm.gap_class(1)]
    for t in qpm.witness_margins:
        patch = chart_rectangle(qpm.mesh, lo - t, hi + t, -(1.0 + t), 1.0 + t)
        yield quad_from_patch(patch)


def disk_quarter_marking(mesh: MetricSurfaceMesh) -> QuadMarking:
    """Quarter-arc marking of a disk boundary, split at the diagonals.

    zeta1 is the right quarter (|angle| <= pi/4), zeta3 the left one, so the
    primal family joins the two arcs straddling the x-axis.
    """
    loops = mesh.boundary_loops()
    if len(loops) != 1:
        raise MeshInvalid("quarter marking needs a single boundary loop")
    loop = np.asarray(loops[0], dtype=np.int64)
    ang = np.arctan2(mesh.vertices[loop, 1], mesh.vertices[loop, 0])
    tol = 1e-9
    right = loop[np.abs(ang) <= np.pi / 4 + tol]
    top = loop[(ang >= np.pi / 4 - tol) & (ang <= 3 * np.pi / 4 + tol)]
    left = loop[np.abs(ang) >= 3 * np.pi / 4 - tol]
    bottom = loop[(ang <= -np.pi / 4 + tol) & (ang >= -3 * np.pi / 4 - tol)]
    return QuadMarking(sides=(right, top, left, bottom))
