import numpy as np
import pytest

from mslab.filling import (
    L_CONFIG,
    BoundaryArc,
    FillingReport,
    PolyhedralDisk,
    fill_triangle,
    verify_filling,
)
from mslab.errors import MismatchedSampling
from mslab.tripod import (
    euclid_boundary_triangle,
    intrinsic_triangle,
    near_tripod_triangle,
    random_metric_triangle,
)


@pytest.fixture(scope="module")
def equilateral():
    tri = euclid_boundary_triangle((1, 1, 1), n=16)
    disk, report = fill_triangle(tri, h2_t=np.sqrt(3) / 4)
    return tri, disk, report


class TestFillTriangle:
    def test_equilateral_report(self, equilateral):
        _, _, report = equilateral
        assert report.min_domination >= 1.0
        assert report.diam_ratio <= L_CONFIG
        assert report.area_ratio <= L_CONFIG
        for r in report.boundary_length_ratios:
            assert 1.0 - 1e-9 <= r <= 16.0 + 1e-9

    def test_disk_topology(self, equilateral):
        _, disk, _ = equilateral
        assert disk.euler_characteristic() == 1
        loops = disk.mesh.boundary_loops()
        assert len(loops) == 1
        declared = set()
        for arc in disk.boundary_correspondence:
            declared.update(int(v) for v in arc.disk_vertices)
        assert declared == set(int(v) for v in loops[0])

    def test_sliver(self):
        tri = euclid_boundary_triangle((3, 4, 6.99), n=20)
        _, report = fill_triangle(tri, h2_t=0.5)
        assert report.min_domination >= 1.0
        assert report.area_ratio <= L_CONFIG

    def test_near_tripod_flags_area(self):
        tri = near_tripod_triangle((1, 1, 1), n=16, blend=1e-4)
        _, report = fill_triangle(tri, h2_t=0.4)
        assert report.near_zero_area
        assert report.min_domination >= 1.0

    def test_regular_triangle_not_flagged(self, equilateral):
        _, _, report = equilateral
        assert not report.near_zero_area

    def test_refinement_keeps_area(self):
        tri = euclid_boundary_triangle((1, 1, 1), n=12)
        areas = []
        for density in (0, 1, 2):
            _, report = fill_triangle(tri, h2_t=np.sqrt(3) / 4, mesh_density=density)
            areas.append(report.area_ratio)
        assert areas[1] == pytest.approx(areas[0], rel=1e-9)
        assert areas[2] <= areas[1] + 1e-9

    def test_domination_exact_inequality(self, equilateral):
        tri, disk, _ = equilateral
        from mslab.metric_core import vertex_distances

        samples = disk.sample_vertices
        ds = vertex_distances(disk.mesh, samples)[:, samples]
        scale = max(tri.edge_lengths)
        assert (ds >= tri.dist - 1e-9 * scale).all()

    def test_random_suite(self):
        rng = np.random.default_rng(4)
        for _ in range(25):
            tri = random_metric_triangle(rng)
            _, report = fill_triangle(tri, h2_t=0.3)
            assert report.min_domination >= 1.0
            for r in report.boundary_length_ratios:
                assert 1.0 - 1e-9 <= r <= 16.0 + 1e-9


class TestVerify:
    def test_roundtrip_matches(self, equilateral):
        tri, disk, report = equilateral
        detail = verify_filling(disk, tri, report)
        assert detail.ok
        assert detail.max_deviation <= 1e-6

    def test_lengthened_boundary_flagged(self, equilateral):
        tri, disk, report = equilateral
        ratios = list(report.boundary_length_ratios)
        ratios[0] = 2.0 * ratios[0]
        tampered = FillingReport(
            diam_ratio=report.diam_ratio,
            area_ratio=report.area_ratio,
            boundary_length_ratios=tuple(ratios),
            min_domination=report.min_domination,
            region_area=report.region_area,
            boundary_diameter=report.boundary_diameter,
        )
        detail = verify_filling(disk, tri, tampered)
        assert not detail.ok
        assert not detail.boundary_ok
        assert detail.diam_ok and detail.domination_ok

    def test_shortcut_disk_flagged(self, equilateral):
        tri, disk, report = equilateral
        # collapse the disk scale so distances undercut the triangle metric
        from mslab.metric_core import MetricSurfaceMesh

        small = MetricSurfaceMesh.build(
            vertices=disk.mesh.vertices / 8.0,
            faces=disk.mesh.faces,
            ambient="l2",
            strict_faces=False,
        )
        shrunk = PolyhedralDisk(
            mesh=small,
            boundary_correspondence=disk.boundary_correspondence,
            scale=disk.scale,
            sample_vertices=disk.sample_vertices,
        )
        detail = verify_filling(shrunk, tri, report)
        assert not detail.ok
        assert not detail.domination_ok

    def test_mismatched_sampling(self, equilateral):
        tri, disk, report = equilateral
        other = euclid_boundary_triangle((1, 1, 1), n=8)
        with pytest.raises(MismatchedSampling):
            verify_filling(disk, other, report)


class TestSerialization:
    def test_json_roundtrip(self, equilateral, tmp_path):
        tri, disk, report = equilateral
        path = tmp_path / "disk.json"
        disk.save(str(path))
        back = PolyhedralDisk.load(str(path))
        assert back.mesh.n_faces == disk.mesh.n_faces
        assert back.scale == disk.scale
        assert np.array_equal(back.sample_vertices, disk.sample_vertices)
        for a, b in zip(back.boundary_correspondence, disk.boundary_correspondence):
            assert isinstance(a, BoundaryArc)
            assert np.allclose(a.arc_s, b.arc_s)
            assert np.allclose(a.arc_t, b.arc_t)
        assert verify_filling(back, tri, report).ok

    def test_arc_lengths_consistent(self, equilateral):
        tri, disk, _ = equilateral
        for j, arc in enumerate(disk.boundary_correspondence):
            assert arc.length_t == pytest.approx(tri.edge_lengths[j], rel=1e-12)
            assert arc.arc_s[0] == 0.0
            assert (np.diff(arc.arc_s) > 0).all()
