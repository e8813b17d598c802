import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mslab.errors import MeshInvalid, NegativeProduct, NoPath
from mslab.metric_core import (
    MetricSurfaceMesh,
    PathPolyline,
    SampledMetricSpace,
    component_labels,
    geodesic,
    gromov_product,
    induced_length_metric,
    metric_axioms_check,
    pair_dist,
    vertex_distances,
)
from mslab.spaces import gen_euclid_square, gen_linf_square


def test_pair_dist_l2_and_linf():
    a = np.array([[0.0, 0.0], [1.0, 2.0]])
    b = np.array([[3.0, 4.0], [1.0, 0.0]])
    assert np.allclose(pair_dist(a, b, "l2"), [5.0, 2.0])
    assert np.allclose(pair_dist(a, b, "linf"), [4.0, 2.0])
    with pytest.raises(ValueError):
        pair_dist(a, b, "l7")


def test_sampled_space_shape_guard():
    with pytest.raises(MeshInvalid):
        SampledMetricSpace(points=("a",), dist=np.zeros((2, 2)))
    sp = SampledMetricSpace(points=("a", "b"), dist=np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert sp.n == 2 and sp.index("b") == 1


class TestAxiomsCheck:
    def test_valid_metric_passes(self):
        pts = np.random.default_rng(3).uniform(size=(40, 2))
        d = pair_dist(pts[:, None, :], pts[None, :, :], "l2")
        rep = metric_axioms_check(SampledMetricSpace(tuple(range(40)), d))
        assert rep.ok and rep.checked_triples == 40**3

    def test_inf_entries_are_legal(self):
        d = np.array([[0.0, np.inf], [np.inf, 0.0]])
        assert metric_axioms_check(SampledMetricSpace((0, 1), d)).ok

    def test_violations_flagged(self):
        d = np.array([[0.0, 1.0, 1.0], [1.0, 0.1, 1.0], [1.0, 1.0, 0.0]])
        rep = metric_axioms_check(SampledMetricSpace((0, 1, 2), d))
        assert rep.diagonal and not rep.ok

        d2 = np.array([[0.0, 5.0, 1.0], [5.0, 0.0, 1.0], [1.0, 1.0, 0.0]])
        rep2 = metric_axioms_check(SampledMetricSpace((0, 1, 2), d2))
        assert rep2.triangle
        assert rep2.worst_triangle_excess() == pytest.approx(3.0)

        d3 = np.array([[0.0, -1.0], [-1.0, 0.0]])
        assert metric_axioms_check(SampledMetricSpace((0, 1), d3)).negativity

        d4 = np.array([[0.0, 1.0], [2.0, 0.0]])
        assert metric_axioms_check(SampledMetricSpace((0, 1), d4)).symmetry

    def test_nan_always_flagged(self):
        d = np.array([[0.0, np.nan], [np.nan, 0.0]])
        assert not metric_axioms_check(SampledMetricSpace((0, 1), d)).ok

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_random_euclidean_clouds_are_metrics(self, seed):
        pts = np.random.default_rng(seed).uniform(size=(12, 2))
        d = pair_dist(pts[:, None, :], pts[None, :, :], "l2")
        assert metric_axioms_check(SampledMetricSpace(tuple(range(12)), d)).ok


def test_gromov_product_345():
    # right triangle with side lengths 3, 4, 5: products are 1, 2, 3
    assert gromov_product(5.0, 4.0, 3.0) == pytest.approx(3.0)
    assert gromov_product(3.0, 5.0, 4.0) == pytest.approx(2.0)
    assert gromov_product(4.0, 3.0, 5.0) == pytest.approx(1.0)


def test_gromov_product_guards():
    with pytest.raises(NegativeProduct):
        gromov_product(1.0, 1.0, 3.0)
    with pytest.raises(NegativeProduct):
        gromov_product(-1.0, 1.0, 1.0)
    with pytest.raises(NegativeProduct):
        gromov_product(np.inf, 1.0, 1.0)
    assert gromov_product(1.0, 1.0, 2.0 + 1e-12) == 0.0


class TestMeshBuild:
    def test_euclid_square_counts(self):
        mesh = gen_euclid_square(2)
        assert mesh.n_vertices == 9
        assert mesh.n_faces == 8
        assert len(mesh.edges) == 16
        assert mesh.total_area() == pytest.approx(1.0, abs=1e-12)

    def test_linf_area_weight(self):
        mesh = gen_linf_square(4)
        assert mesh.ambient == "linf"
        assert mesh.total_area() == pytest.approx(np.pi / 4, abs=1e-12)

    def test_boundary_loop(self):
        mesh = gen_euclid_square(2)
        loops = mesh.boundary_loops()
        assert len(loops) == 1
        assert len(loops[0]) == 8  # all but the center vertex

    def test_degenerate_face_rejected(self):
        with pytest.raises(MeshInvalid):
            MetricSurfaceMesh.build(np.zeros((3, 2)), [[0, 1, 1]])

    def test_face_index_out_of_range(self):
        v = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        with pytest.raises(MeshInvalid):
            MetricSurfaceMesh.build(v, [[0, 1, 5]])

    def test_triangle_inequality_on_lengths(self):
        v = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        bad = {(0, 1): 1.0, (1, 2): 1.0, (0, 2): 5.0}
        with pytest.raises(MeshInvalid):
            MetricSurfaceMesh.build(v, [[0, 1, 2]], edge_lengths=bad, ambient=None)

    def test_flat_face_needs_non_strict(self):
        lengths = {(0, 1): 1.0, (1, 2): 1.0, (0, 2): 2.0}
        with pytest.raises(MeshInvalid):
            MetricSurfaceMesh.build(None, [[0, 1, 2]], edge_lengths=lengths)
        mesh = MetricSurfaceMesh.build(
            None, [[0, 1, 2]], edge_lengths=lengths, strict_faces=False
        )
        assert mesh.face_areas()[0] == pytest.approx(0.0, abs=1e-12)

    def test_missing_edge_length(self):
        with pytest.raises(MeshInvalid):
            MetricSurfaceMesh.build(None, [[0, 1, 2]], edge_lengths={(0, 1): 1.0})

    def test_nonpositive_length_rejected(self):
        lengths = {(0, 1): 0.0, (1, 2): 1.0, (0, 2): 1.0}
        with pytest.raises(MeshInvalid):
            MetricSurfaceMesh.build(None, [[0, 1, 2]], edge_lengths=lengths)

    def test_non_manifold_edge_rejected(self):
        v = np.array([[0, 0], [1, 0], [0, 1], [1, 1], [-1, 1]], dtype=float)
        faces = [[0, 1, 2], [0, 1, 3], [0, 1, 4]]
        with pytest.raises(MeshInvalid):
            MetricSurfaceMesh.build(v, faces)

    def test_length_below_ambient_rejected(self):
        v = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        lengths = {(0, 1): 0.5, (1, 2): 1.5, (0, 2): 1.2}
        with pytest.raises(MeshInvalid):
            MetricSurfaceMesh.build(v, [[0, 1, 2]], edge_lengths=lengths, ambient="l2")

    def test_abstract_mesh_heron_area(self):
        lengths = {(0, 1): 3.0, (1, 2): 4.0, (0, 2): 5.0}
        mesh = MetricSurfaceMesh.build(None, [[0, 1, 2]], edge_lengths=lengths)
        assert mesh.total_area() == pytest.approx(6.0)


def test_json_roundtrip(tmp_path):
    mesh = gen_linf_square(3)
    path = tmp_path / "mesh.json"
    mesh.save(str(path))
    back = MetricSurfaceMesh.load(str(path))
    assert np.array_equal(back.faces, mesh.faces)
    assert np.allclose(back.edge_lengths, mesh.edge_lengths)
    assert back.ambient == "linf"
    # vertex grid survives, so chart-based tooling works after reload
    assert np.array_equal(back.vertex_grid, mesh.vertex_grid)
    data = json.loads(path.read_text())
    assert set(data) >= {"vertices", "faces", "edge_lengths", "ambient"}


def test_json_roundtrip_face_length_weight():
    from mslab.spaces import gen_weighted_plane

    mesh = gen_weighted_plane([(1, 1)], 4)
    back = MetricSurfaceMesh.from_json_dict(mesh.to_json_dict())
    assert np.allclose(back.face_length_weight, mesh.face_length_weight)
    assert np.allclose(back.edge_lengths, mesh.edge_lengths)


class TestInducedMetric:
    def test_grid_distances_frozen(self):
        m = induced_length_metric(gen_euclid_square(2))
        assert m.dist[0, 8] == pytest.approx(np.sqrt(2.0), abs=1e-12)
        assert m.dist[0, 2] == pytest.approx(1.0, abs=1e-12)

    def test_linf_diagonal_exact(self):
        # lattice diagonals realize l-infinity additivity exactly
        m = induced_length_metric(gen_linf_square(4))
        assert m.dist[0, 24] == pytest.approx(1.0, abs=1e-12)

    def test_refinement_never_increases(self):
        mesh = gen_euclid_square(3)
        coarse = induced_length_metric(mesh).dist
        fine = induced_length_metric(mesh, subdivision=3).dist
        assert (fine <= coarse + 1e-9).all()

    def test_disconnected_components_inf(self):
        v = np.array([[0, 0], [1, 0], [0, 1], [10, 10], [11, 10], [10, 11]], float)
        mesh = MetricSurfaceMesh.build(v, [[0, 1, 2], [3, 4, 5]])
        m = induced_length_metric(mesh)
        assert np.isinf(m.dist[0, 3])
        assert metric_axioms_check(m).ok
        assert len(np.unique(component_labels(mesh))) == 2

    def test_sources_subset(self):
        mesh = gen_euclid_square(2)
        m = induced_length_metric(mesh, sources=[0, 8])
        assert m.points == (0, 8)
        assert m.dist.shape == (2, 2)

    def test_vertex_distances_row_shape(self):
        mesh = gen_euclid_square(2)
        d = vertex_distances(mesh, [0])
        assert d.shape == (1, mesh.n_vertices)
        assert d[0, 0] == 0.0


class TestGeodesic:
    def test_diagonal_path(self):
        mesh = gen_euclid_square(2)
        p = geodesic(mesh, 0, 8)
        assert p.length == pytest.approx(np.sqrt(2.0), abs=1e-12)
        assert list(p.vertex_ids) == [0, 4, 8]
        assert p.points.shape == (3, 2)

    def test_same_vertex(self):
        mesh = gen_euclid_square(2)
        p = geodesic(mesh, 5, 5)
        assert p.length == 0.0 and list(p.vertex_ids) == [5]

    def test_no_path_raises(self):
        v = np.array([[0, 0], [1, 0], [0, 1], [10, 10], [11, 10], [10, 11]], float)
        mesh = MetricSurfaceMesh.build(v, [[0, 1, 2], [3, 4, 5]])
        with pytest.raises(NoPath):
            geodesic(mesh, 0, 3)

    def test_length_matches_distance(self):
        mesh = gen_linf_square(4)
        m = induced_length_metric(mesh)
        for a, b in [(0, 24), (3, 20), (7, 17)]:
            assert geodesic(mesh, a, b).length == pytest.approx(m.dist[a, b], abs=1e-9)

    def test_polyline_dataclass(self):
        p = PathPolyline(vertex_ids=np.array([0]), length=0.0)
        assert p.points is None
