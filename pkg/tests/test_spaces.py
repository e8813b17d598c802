import numpy as np
import pytest

from mslab.errors import ConfigInvalid, LevelOutOfRange, RadiusOrder
from mslab.metric_core import induced_length_metric, vertex_distances
from mslab.spaces import (
    CantorSpec,
    cantor_rectangle,
    cell_faces,
    chart_rectangle,
    default_gap_fractions,
    gen_annulus,
    gen_cantor_quotient,
    gen_disk,
    gen_euclid_rect,
    gen_euclid_square,
    gen_linf_square,
    gen_slit_disk,
    gen_weighted_plane,
    grid_side_vertices,
    nested_ring_cells,
)

# total length of the kept set: prod(1 - 4^-k) for k = 1..6
CANTOR_MEASURE = 0.6885935740967852


class TestSquares:
    def test_euclid_square_area(self):
        mesh = gen_euclid_square(2)
        assert mesh.n_faces == 8
        assert mesh.total_area() == pytest.approx(1.0, abs=1e-12)

    def test_euclid_rect(self):
        mesh = gen_euclid_rect(2, 4, width=1.0, height=2.0)
        assert mesh.n_faces == 16
        assert mesh.total_area() == pytest.approx(2.0, abs=1e-12)

    def test_linf_square_weight(self):
        mesh = gen_linf_square(4)
        assert mesh.total_area() == pytest.approx(np.pi / 4, abs=1e-12)
        assert mesh.ambient == "linf"

    def test_min_resolution_guard(self):
        with pytest.raises(ConfigInvalid):
            gen_euclid_square(1)

    def test_side_vertices(self):
        mesh = gen_euclid_square(2)
        assert list(grid_side_vertices(mesh, "left")) == [0, 3, 6]
        assert list(grid_side_vertices(mesh, "right")) == [2, 5, 8]
        assert list(grid_side_vertices(mesh, "bottom")) == [0, 1, 2]
        assert list(grid_side_vertices(mesh, "top")) == [6, 7, 8]
        with pytest.raises(ConfigInvalid):
            grid_side_vertices(mesh, "middle")

    def test_chart_rectangle(self):
        mesh = gen_euclid_square(4)
        patch = chart_rectangle(mesh, 0.0, 0.5, 0.0, 0.25)
        assert len(patch.face_ids) == 4
        assert len(patch.left) == 2 and len(patch.right) == 2
        xs = mesh.vertices[patch.left][:, 0]
        assert np.allclose(xs, 0.0)


class TestRoundMeshes:
    def test_disk_area_close_to_pi(self):
        mesh = gen_disk()
        assert mesh.total_area() == pytest.approx(3.1326286132812378, abs=1e-9)
        assert abs(mesh.total_area() / np.pi - 1.0) < 3e-3

    def test_disk_boundary(self):
        loops = gen_disk().boundary_loops()
        assert len(loops) == 1 and len(loops[0]) == 48

    def test_annulus_two_loops(self):
        mesh = gen_annulus(8, 48, 0.5, 1.0)
        assert len(mesh.boundary_loops()) == 2
        assert mesh.total_area() == pytest.approx(np.pi * (1 - 0.25), rel=5e-3)

    def test_radius_order_guard(self):
        with pytest.raises(RadiusOrder):
            gen_annulus(8, 48, 1.0, 0.5)

    def test_slit_disk_counts(self):
        single = gen_slit_disk(2)
        multi = gen_slit_disk(2, multi=True)
        assert multi.n_vertices < single.n_vertices
        assert len(single.boundary_loops()) == 1
        assert len(multi.boundary_loops()) == 1
        # removing sectors strictly removes area but not half the disk
        assert np.pi / 2 < multi.total_area() < single.total_area() < np.pi


class TestWeightedPlane:
    def test_zero_cell_shortcut(self):
        mesh = gen_weighted_plane([(3, 3)], 8)
        a = int(np.flatnonzero(
            (mesh.vertices[:, 0] == 0.0) & (mesh.vertices[:, 1] == 0.375)
        )[0])
        b = int(np.flatnonzero(
            (mesh.vertices[:, 0] == 1.0) & (mesh.vertices[:, 1] == 0.375)
        )[0])
        d = vertex_distances(mesh, [a])[0, b]
        assert d == pytest.approx(0.875, abs=1e-6)

    def test_zero_cell_is_flat(self):
        mesh = gen_weighted_plane([(3, 3)], 8)
        c0 = int(np.flatnonzero(
            (mesh.vertices[:, 0] == 0.375) & (mesh.vertices[:, 1] == 0.375)
        )[0])
        c1 = int(np.flatnonzero(
            (mesh.vertices[:, 0] == 0.5) & (mesh.vertices[:, 1] == 0.5)
        )[0])
        assert vertex_distances(mesh, [c0])[0, c1] < 1e-6

    def test_areas_retained(self):
        mesh = gen_weighted_plane([(1, 1), (2, 2)], 8)
        assert mesh.total_area() == pytest.approx(1.0, abs=1e-9)

    def test_no_zero_cells_is_plain_square(self):
        mesh = gen_weighted_plane(None, 4)
        assert mesh.face_length_weight is None

    def test_cell_faces_indexing(self):
        ids = cell_faces(4, [(0, 0)])
        assert list(ids) == [0, 1]

    def test_nested_ring_layout(self):
        layout = nested_ring_cells(64)
        assert layout["ring_bounds"] == [(1, 8), (11, 24)]
        zero = set(layout["zero_cells"])
        for ring in layout["conducting"]:
            assert ring and not (set(ring) & zero)

    def test_nested_ring_guards(self):
        with pytest.raises(ConfigInvalid):
            nested_ring_cells(15)
        with pytest.raises(ConfigInvalid):
            nested_ring_cells(64, ring_bounds=[(8, 1)])


class TestCantorSpec:
    def test_default_fractions(self):
        assert default_gap_fractions() == tuple(4.0 ** -(k + 1) for k in range(6))

    def test_measure_product_formula(self):
        spec = CantorSpec()
        expect = 1.0
        for a in spec.gap_fractions:
            expect *= 1.0 - a
        assert spec.cantor_measure() == pytest.approx(expect, abs=1e-15)
        assert spec.cantor_measure() == pytest.approx(CANTOR_MEASURE, abs=1e-15)

    def test_interval_lengths(self):
        spec = CantorSpec()
        assert spec.interval_length(0) == 1.0
        assert spec.interval_length(1) == pytest.approx(0.375)
        assert spec.interval_length(2) == pytest.approx(0.17578125)
        # each level halves-and-trims: 2^k intervals of that length sum to
        # the partial product
        for k in range(spec.levels + 1):
            total = 2**k * spec.interval_length(k)
            part = np.prod([1 - a for a in spec.gap_fractions[:k]])
            assert total == pytest.approx(float(part), abs=1e-14)

    def test_intervals_and_gaps_tile(self):
        spec = CantorSpec()
        iv = spec.intervals(3)
        assert iv.shape == (8, 2)
        assert (np.diff(iv.ravel()) >= -1e-15).all()
        gaps = [g for g in spec.gaps() if g[0] <= 3]
        covered = iv[:, 1] - iv[:, 0]
        gap_len = sum(hi - lo for _, lo, hi in gaps)
        assert covered.sum() + gap_len == pytest.approx(1.0, abs=1e-12)

    def test_axis_measure_endpoints(self):
        spec = CantorSpec()
        assert spec.axis_measure(0.0, 1.0) == pytest.approx(CANTOR_MEASURE, abs=1e-12)
        assert spec.axis_measure(1.0, 0.0) == pytest.approx(CANTOR_MEASURE, abs=1e-12)
        lo, hi = spec.intervals(spec.levels)[0]
        assert spec.axis_measure(lo, hi) == pytest.approx(hi - lo, abs=1e-15)

    def test_witness_chain_alternates(self):
        chain = CantorSpec().witness_chain()
        assert [c["took_left"] for c in chain] == [True, False, True, False, True, False]
        assert chain[0]["gap"] == (0.375, 0.625)
        assert chain[0]["child"] == (0.0, 0.375)
        for prev, cur in zip(chain, chain[1:]):
            assert cur["parent"] == prev["child"]

    def test_config_guards(self):
        with pytest.raises(ConfigInvalid):
            CantorSpec(gap_fractions=(0.5,), levels=2)
        with pytest.raises(ConfigInvalid):
            CantorSpec(gap_fractions=(1.5, 0.5), levels=2)
        with pytest.raises(LevelOutOfRange):
            CantorSpec().interval_length(9)


class TestCantorRectangle:
    def test_level_one_geometry(self):
        spec = CantorSpec()
        rect = cantor_rectangle(spec, 1)
        assert rect.height == pytest.approx(0.5)
        assert rect.x0 == pytest.approx(0.19921875)
        assert rect.x1 == pytest.approx(0.375)
        assert rect.left_gap[0] == 2 and rect.right_gap[0] == 1

    def test_spans_kept_interval(self):
        spec = CantorSpec()
        for level in range(1, spec.levels):
            rect = cantor_rectangle(spec, level)
            assert rect.x1 - rect.x0 == pytest.approx(
                spec.interval_length(level + 1), abs=1e-15
            )
            assert rect.height == pytest.approx(1.0 / (level + 1))

    def test_level_bounds(self):
        spec = CantorSpec()
        with pytest.raises(LevelOutOfRange):
            cantor_rectangle(spec, 0)
        with pytest.raises(LevelOutOfRange):
            cantor_rectangle(spec, spec.levels)


@pytest.fixture(scope="module")
def quotient():
    return gen_cantor_quotient(CantorSpec())


class TestCantorQuotient:
    def test_unit_span_distance_is_measure(self, quotient):
        a = quotient.axis_vertex(0.0)
        b = quotient.axis_vertex(1.0)
        i, j = quotient.probe_ids.tolist().index(a), quotient.probe_ids.tolist().index(b)
        assert quotient.dR.dist[i, j] == pytest.approx(CANTOR_MEASURE, abs=1e-12)

    def test_axis_formula_matches_measure(self, quotient):
        spec = quotient.spec
        probes = quotient.probe_ids
        xs = quotient.mesh.vertices[probes][:, 0]
        ys = quotient.mesh.vertices[probes][:, 1]
        on_axis = np.flatnonzero((ys == 0.0) & (xs >= 0.0) & (xs <= 1.0))
        rng = np.random.default_rng(7)
        take = rng.choice(on_axis, size=40, replace=True)
        for i, j in zip(take[:20], take[20:]):
            want = spec.axis_measure(xs[i], xs[j])
            got = quotient.dR.dist[i, j]
            assert got == pytest.approx(want, abs=1e-9)

    def test_collapsed_classes_have_zero_diameter(self, quotient):
        for verts in quotient.classes[:8]:
            d = quotient.quotient_distances([int(verts[0])])
            assert d[verts].max() < 1e-12

    def test_dR_is_a_metric(self, quotient):
        from mslab.metric_core import metric_axioms_check

        rep = metric_axioms_check(quotient.dR)
        assert rep.ok

    def test_off_grid_vertex_raises(self, quotient):
        with pytest.raises(ConfigInvalid):
            quotient.vertex_at(0.123456789, 0.0)

    def test_gap_class_lookup(self, quotient):
        idx = quotient.gap_class(1)
        assert quotient.gaps[idx][0] == 1
        assert quotient.class_for_gap(quotient.gaps[idx]) == idx
        with pytest.raises(LevelOutOfRange):
            quotient.gap_class(99)
