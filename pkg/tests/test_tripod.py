import numpy as np
import pytest

from mslab.errors import (
    EmbeddingFailed,
    InconsistentTriangle,
    MismatchedSampling,
    ZeroDistancePair,
)
from mslab.spaces import gen_linf_square
from mslab.tripod import (
    K_CHECK,
    build_tripod,
    distortion_certificate,
    embed_triangle,
    euclid_boundary_triangle,
    intrinsic_triangle,
    mesh_boundary_triangle,
    project_to_tripod,
    projection_expansion,
    random_metric_triangle,
    region_area_check,
    tripod_pair_distances,
)

V1 = np.array([np.cos(np.pi / 3), np.sin(np.pi / 3)])


class TestBuildTripod:
    def test_equilateral_spokes(self):
        tp = build_tripod(intrinsic_triangle((1, 1, 1), n=8))
        assert np.allclose(tp.spoke_lengths, 0.5)

    def test_345_spokes(self):
        tp = build_tripod(euclid_boundary_triangle((3, 4, 5), n=8))
        assert sorted(tp.spoke_lengths) == pytest.approx([1.0, 2.0, 3.0], abs=1e-12)

    def test_degenerate_zero_spoke(self):
        tp = build_tripod(intrinsic_triangle((5, 3, 2), n=8))
        assert tp.spoke_lengths.min() == pytest.approx(0.0, abs=1e-12)

    def test_spoke_identity(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            tri = random_metric_triangle(rng)
            tp = build_tripod(tri)
            for j in range(3):
                got = tp.spoke_lengths[j] + tp.spoke_lengths[(j + 1) % 3]
                assert got == pytest.approx(tri.edge_lengths[j], rel=1e-9)

    def test_non_geodesic_edge_rejected(self):
        tri = intrinsic_triangle((1, 1, 1), n=8)
        d = tri.dist.copy()
        vi = tri.vertex_indices
        d[vi[0], vi[1]] = d[vi[1], vi[0]] = 0.7  # vertex chord shorter than edge
        broken = type(tri)(
            edge_lengths=tri.edge_lengths,
            samples_per_edge=tri.samples_per_edge,
            dist=d,
            vertex_indices=vi,
            edge_assignment=tri.edge_assignment,
            arc=tri.arc,
        )
        with pytest.raises(InconsistentTriangle):
            build_tripod(broken)


class TestProjection:
    def test_vertices_map_to_spoke_tips(self):
        tri = euclid_boundary_triangle((3, 4, 5), n=8)
        tp = build_tripod(tri)
        for j, vi in enumerate(tri.vertex_indices):
            assert np.allclose(project_to_tripod(tri, vi), tp.vertices[j], atol=1e-12)

    def test_equilateral_midpoint_hits_center(self):
        tri = intrinsic_triangle((1, 1, 1), n=16)
        assert np.allclose(project_to_tripod(tri, (0, 0.5)), 0.0, atol=1e-12)

    def test_partial_arc_stays_on_spoke(self):
        tri = intrinsic_triangle((1, 1, 1), n=16)
        p = project_to_tripod(tri, (0, 0.2))
        assert np.allclose(p, [0.3, 0.0], atol=1e-12)

    def test_one_lipschitz(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            tri = random_metric_triangle(rng)
            assert projection_expansion(tri) <= 1.0 + 1e-9

    def test_pair_distances_tree_metric(self):
        spoke = np.array([0, 0, 1])
        radius = np.array([1.0, 0.25, 0.5])
        td = tripod_pair_distances(spoke, radius)
        assert td[0, 1] == pytest.approx(0.75)
        assert td[0, 2] == pytest.approx(1.5)
        assert np.allclose(np.diagonal(td), 0.0)


class TestEmbedding:
    def test_equilateral_midpoint_offset(self):
        tri = intrinsic_triangle((1, 1, 1), n=16)
        emb = embed_triangle(tri)
        mid = 7  # arclength 0.5 along the first edge
        assert tri.arc[mid] == pytest.approx(0.5)
        assert np.allclose(emb.points[mid], 0.5 * V1, atol=1e-12)

    def test_vertex_offsets_are_zero(self):
        tri = euclid_boundary_triangle((3, 4, 5), n=12)
        emb = embed_triangle(tri)
        assert np.allclose(emb.offsets[list(tri.vertex_indices)], 0.0, atol=1e-12)

    def test_injective_on_samples(self):
        tri = euclid_boundary_triangle((3, 4, 6.999), n=24)
        emb = embed_triangle(tri)
        gap = emb.points[:, None, :] - emb.points[None, :, :]
        d = np.hypot(gap[..., 0], gap[..., 1])
        np.fill_diagonal(d, np.inf)
        assert d.min() > 0

    def test_edgewise_isometry_up_to_sampling(self):
        tri = euclid_boundary_triangle((2, 2.5, 3), n=20)
        emb = embed_triangle(tri)
        for j in range(3):
            ids = tri.edge_members(j)
            pts = emb.points[ids]
            path = np.concatenate(
                [[0.0], np.cumsum(np.hypot(*np.diff(pts, axis=0).T))]
            )
            spacing = tri.edge_lengths[j] / tri.samples_per_edge
            assert np.abs(path - tri.edge_arcs(j)).max() <= 2 * spacing


class TestDistortion:
    def test_equilateral_within_four(self):
        cert = distortion_certificate(embed_triangle(intrinsic_triangle((1, 1, 1), n=16)))
        assert max(cert.max_expand, cert.max_contract) <= 4.0

    def test_near_degenerate_within_four(self):
        tri = euclid_boundary_triangle((3, 4, 6.999), n=24)
        cert = distortion_certificate(embed_triangle(tri))
        assert max(cert.max_expand, cert.max_contract) <= 4.0

    def test_random_suite(self):
        rng = np.random.default_rng(17)
        for _ in range(100):
            tri = random_metric_triangle(rng)
            cert = distortion_certificate(embed_triangle(tri))
            assert max(cert.max_expand, cert.max_contract) <= 4.0

    def test_zero_distance_pair(self):
        tri = intrinsic_triangle((1, 1, 1), n=8)
        emb = embed_triangle(tri)
        d = tri.dist.copy()
        d[0, 1] = d[1, 0] = 0.0
        broken = type(tri)(
            edge_lengths=tri.edge_lengths,
            samples_per_edge=tri.samples_per_edge,
            dist=d,
            vertex_indices=tri.vertex_indices,
            edge_assignment=tri.edge_assignment,
            arc=tri.arc,
        )
        emb2 = type(emb)(
            tri=broken,
            tripod=emb.tripod,
            feet=emb.feet,
            foot_spoke=emb.foot_spoke,
            foot_radius=emb.foot_radius,
            offsets=emb.offsets,
            points=emb.points,
        )
        with pytest.raises(ZeroDistancePair):
            distortion_certificate(emb2)


class TestRegionArea:
    def test_flat_equilateral_ratio(self):
        emb = embed_triangle(intrinsic_triangle((1, 1, 1), n=24))
        ratio = region_area_check(emb, np.sqrt(3) / 4)
        assert 0 < ratio <= K_CHECK

    def test_zero_measure_zero_area(self):
        # a degenerate triangle embeds with near-zero enclosed area
        emb = embed_triangle(intrinsic_triangle((2, 1, 1), n=16))
        x, y = emb.points[:, 0], emb.points[:, 1]
        area = 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))
        if area <= 1e-12:
            assert region_area_check(emb, 0.0) == 0.0
        else:
            with pytest.raises(EmbeddingFailed):
                region_area_check(emb, 0.0)

    def test_mesh_triangle_ratio(self):
        mesh = gen_linf_square(32)

        def vid(ix, iy):
            vg = mesh.vertex_grid
            return int(np.flatnonzero((vg[:, 0] == ix) & (vg[:, 1] == iy))[0])

        tri = mesh_boundary_triangle(mesh, [vid(2, 2), vid(30, 6), vid(14, 30)], n=10)
        emb = embed_triangle(tri)
        distortion_certificate(emb)
        # enclosed region holds most of the square, so its measure is within
        # a small factor of the full pi/4
        ratio = region_area_check(emb, float(mesh.total_area()))
        assert ratio <= K_CHECK


class TestGenerators:
    def test_intrinsic_rejects_broken_lengths(self):
        with pytest.raises(InconsistentTriangle):
            intrinsic_triangle((10, 1, 1), n=8)

    def test_euclid_requires_strict_inequality(self):
        with pytest.raises(InconsistentTriangle):
            euclid_boundary_triangle((5, 3, 2), n=8)

    def test_sampling_floor(self):
        with pytest.raises(MismatchedSampling):
            intrinsic_triangle((1, 1, 1), n=1)

    def test_random_triangles_validate(self):
        rng = np.random.default_rng(23)
        for _ in range(10):
            random_metric_triangle(rng).validate()

    def test_mesh_triangle_too_coarse(self):
        mesh = gen_linf_square(4)
        with pytest.raises(MismatchedSampling):
            mesh_boundary_triangle(mesh, [0, 4, 24], n=12)
