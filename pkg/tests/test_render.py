import hashlib

import numpy as np
import pytest
from scipy.ndimage import binary_dilation

import citypano as cp
from citypano.errors import FormatError
from citypano.geometry import pose_rotation, unproject_pixel, view_rotation
from citypano.imgio import (
    read_depth_pfm,
    read_pfm,
    read_segment_png,
    read_semantic_png,
    write_depth_pfm,
    write_pfm,
    write_segment_png,
    write_semantic_png,
)
from citypano.mesh import CityMesh, SemanticTag, newell_vector
from citypano.render import RenderConfig, render_cad_view, render_viewpoint_products, resample_pano_to_perspective
from citypano.extract import polygon_to_segment_array, segment_surfaces
from citypano.mesh import build_adjacency
from citypano.synth import SceneSpec, generate_city, synth_panorama
from conftest import make_unit_cube


def oracle_depth(mesh, cfg, coverage_eps=0.0):
    """Independent per-pixel depth: plane intersection + 2D point-in-polygon
    in the polygon's dominant-axis projection (no Moller-Trumbore, no raster)."""
    intr = cfg.intrinsics
    r_total = pose_rotation(cfg.pose) @ view_rotation(intr)
    jj, ii = np.meshgrid(np.arange(intr.width), np.arange(intr.height))
    d_cam = unproject_pixel(intr, jj + 0.5, ii + 0.5).reshape(-1, 3)
    d_world = d_cam @ r_total.T
    origin = cfg.pose.location
    best = np.full(len(d_world), np.inf)
    for pi in range(mesh.n_polygons):
        pts = mesh.polygon_vertices(pi)
        n = newell_vector(pts)
        nn = np.linalg.norm(n)
        if nn < 1e-12:
            continue
        n = n / nn
        denom = d_world @ n
        t = ((pts[0] - origin) @ n) / np.where(np.abs(denom) < 1e-15, np.nan, denom)
        hit = origin + t[:, None] * d_world
        # project out the dominant normal axis for the 2D containment test
        drop = int(np.argmax(np.abs(n)))
        keep = [a for a in range(3) if a != drop]
        poly2 = pts[:, keep]
        h2 = hit[:, keep]
        inside = np.zeros(len(h2), dtype=bool)
        x0s, y0s = poly2[:, 0], poly2[:, 1]
        x1s, y1s = np.roll(x0s, -1), np.roll(y0s, -1)
        for x0, y0, x1, y1 in zip(x0s, y0s, x1s, y1s):
            crosses = (y0 > h2[:, 1]) != (y1 > h2[:, 1])
            with np.errstate(invalid="ignore", divide="ignore"):
                xi = x0 + (h2[:, 1] - y0) / (y1 - y0) * (x1 - x0)
            inside ^= crosses & (h2[:, 0] < xi)
        zdepth = t * d_cam[:, 2]
        ok = inside & np.isfinite(t) & (t > 0) & (zdepth >= cfg.near - 1e-9)
        better = ok & (zdepth < best)
        best[better] = zdepth[better]
    return best.reshape(intr.height, intr.width)


def edge_mask(ids):
    e = np.zeros(ids.shape, dtype=bool)
    e[:-1, :] |= ids[:-1, :] != ids[1:, :]
    e[1:, :] |= ids[:-1, :] != ids[1:, :]
    e[:, :-1] |= ids[:, :-1] != ids[:, 1:]
    e[:, 1:] |= ids[:, :-1] != ids[:, 1:]
    return e


def segmented(mesh, max_dihedral=45.0):
    segs = segment_surfaces(mesh, build_adjacency(mesh), max_dihedral)
    return polygon_to_segment_array(segs, mesh.n_polygons)


class TestResample:
    def test_constant_panorama_stays_constant(self):
        pano = np.full((128, 256, 3), 77, dtype=np.uint8)
        cfg = RenderConfig(
            intrinsics=cp.PerspectiveIntrinsics(90, 64, 64, yaw=0.3, pitch=0.2),
            pose=cp.CameraPose(location=[0, 0, 0], azimuth=0.0),
        )
        out = resample_pano_to_perspective(pano, cfg)
        assert np.all(out == 77)

    def test_forward_white_pixel_lands_at_center(self):
        h, w = 512, 1024
        pano = np.zeros((h, w, 3), dtype=np.uint8)
        pano[h // 2, w // 2] = 255  # pixel whose center is the forward direction
        cfg = RenderConfig(
            intrinsics=cp.PerspectiveIntrinsics(90, 512, 512),
            pose=cp.CameraPose(location=[0, 0, 0], azimuth=0.0),
        )
        out = resample_pano_to_perspective(pano, cfg)
        ys, xs = np.nonzero(out[..., 0] > 0)
        cy = (ys * out[ys, xs, 0]).sum() / out[ys, xs, 0].sum()
        cx = (xs * out[ys, xs, 0]).sum() / out[ys, xs, 0].sum()
        assert abs(cx + 0.5 - 256) <= 1.0 and abs(cy + 0.5 - 256) <= 1.0

    def test_bit_identical_runs(self, rng):
        pano = rng.integers(0, 256, size=(256, 512, 3), dtype=np.uint8)
        cfg = RenderConfig(
            intrinsics=cp.PerspectiveIntrinsics(90, 128, 128, yaw=1.0, pitch=0.4),
            pose=cp.CameraPose(location=[0, 0, 0], azimuth=0.0),
        )
        a = resample_pano_to_perspective(pano, cfg)
        b = resample_pano_to_perspective(pano, cfg)
        assert np.array_equal(a, b)

    def test_malformed_panorama_rejected(self):
        with pytest.raises(FormatError):
            resample_pano_to_perspective(
                np.zeros((100, 150, 3), dtype=np.uint8),
                RenderConfig(
                    intrinsics=cp.PerspectiveIntrinsics(90, 64, 64),
                    pose=cp.CameraPose(location=[0, 0, 0], azimuth=0.0),
                ),
            )


class TestRenderCadView:
    def _cfg(self, size=128, yaw=0.0, pitch=0.0, pose=None):
        return RenderConfig(
            intrinsics=cp.PerspectiveIntrinsics(90, size, size, yaw=yaw, pitch=pitch),
            pose=pose or cp.CameraPose(location=[0.5, -10.0, 0.5], azimuth=0.0),
        )

    def test_empty_mesh_is_all_sky(self):
        mesh = CityMesh(vertices=np.zeros((0, 3)), polygons=[], tags=[])
        layers = render_cad_view(mesh, np.zeros(0, dtype=int), self._cfg())
        assert np.all(np.isinf(layers.depth))
        assert np.all(layers.segment_id == 0)
        assert np.all(layers.semantic == 0)

    def test_box_depth_matches_analytic(self):
        # 8 m box with its front face 10 m ahead, filling part of the frame
        cube = make_unit_cube()
        mesh = CityMesh(vertices=cube.vertices * 8.0, polygons=cube.polygons, tags=cube.tags)
        cfg = self._cfg(pose=cp.CameraPose(location=[4.0, -10.0, 4.0], azimuth=0.0))
        layers = render_cad_view(mesh, segmented(mesh), cfg)
        oracle = oracle_depth(mesh, cfg)
        both = np.isfinite(layers.depth) & np.isfinite(oracle)
        interior = both & ~binary_dilation(edge_mask(layers.poly_id), iterations=1)
        assert interior.sum() > 50
        assert np.max(np.abs(layers.depth[interior] - oracle[interior])) < 1e-4
        front = layers.poly_id == 2  # the -y face
        assert front.sum() > 0
        assert layers.depth[np.isfinite(layers.depth)].min() == pytest.approx(10.0, abs=1e-9)

    def test_nearer_facade_wins(self):
        verts = np.array(
            [
                [-3, 5, -3], [3, 5, -3], [3, 5, 3], [-3, 5, 3],     # near wall, y=5
                [-3, 9, -3], [3, 9, -3], [3, 9, 3], [-3, 9, 3],     # far wall, y=9
            ],
            dtype=float,
        )
        mesh = CityMesh(
            vertices=verts,
            polygons=[[4, 5, 6, 7], [0, 1, 2, 3]],  # far listed first
            tags=[int(SemanticTag.BUILDING)] * 2,
        )
        cfg = RenderConfig(
            intrinsics=cp.PerspectiveIntrinsics(90, 64, 64),
            pose=cp.CameraPose(location=[0, 0, 0], azimuth=0.0),
        )
        layers = render_cad_view(mesh, np.array([1, 2]), cfg)
        covered = np.isfinite(layers.depth)
        assert np.all(layers.poly_id[covered] == 1)
        assert np.allclose(layers.depth[covered].min(), 5.0, atol=1e-9)

    def test_depth_oracle_random_scenes(self):
        for seed in (0, 1, 2):
            mesh, _ = generate_city(SceneSpec(seed=seed, n_buildings=4))
            cfg = self._cfg(pose=cp.CameraPose(location=[1.0, -2.0, 2.5], azimuth=0.3), yaw=0.6, pitch=0.15)
            layers = render_cad_view(mesh, segmented(mesh), cfg)
            oracle = oracle_depth(mesh, cfg)
            sky_match = np.isfinite(layers.depth) == np.isfinite(oracle)
            interior = ~binary_dilation(edge_mask(layers.poly_id), iterations=1)
            ok = interior & np.isfinite(layers.depth) & np.isfinite(oracle)
            close = np.abs(layers.depth[ok] - oracle[ok]) < 1e-4
            assert close.mean() >= 0.999
            assert sky_match[interior].mean() >= 0.999

    def test_normals_match_winner_polygon_exactly(self):
        mesh, _ = generate_city(SceneSpec(seed=4, n_buildings=4))
        cfg = self._cfg(pose=cp.CameraPose(location=[0.5, 1.0, 2.5], azimuth=-0.4), yaw=0.2)
        layers = render_cad_view(mesh, segmented(mesh), cfg)
        r_total = pose_rotation(cfg.pose) @ view_rotation(cfg.intrinsics)
        hit = layers.poly_id >= 0
        for pi in np.unique(layers.poly_id[hit]):
            pts = mesh.polygon_vertices(pi)
            nv = newell_vector(pts)
            n_cam = (nv / np.linalg.norm(nv)) @ r_total
            if np.dot(n_cam, (pts[0] - cfg.pose.location) @ r_total) > 0:
                n_cam = -n_cam
            sel = layers.poly_id == pi
            assert np.array_equal(layers.normal[sel], np.broadcast_to(n_cam, (sel.sum(), 3)))

    def test_normals_unit_and_segment_semantic_consistent(self):
        mesh, _ = generate_city(SceneSpec(seed=5, n_buildings=4))
        layers = render_cad_view(mesh, segmented(mesh), self._cfg(pose=cp.CameraPose(location=[0, 0, 2.5], azimuth=0.9)))
        hit = np.isfinite(layers.depth)
        norms = np.linalg.norm(layers.normal[hit], axis=1)
        assert np.max(np.abs(norms - 1)) < 1e-3
        assert np.all((layers.segment_id > 0) == (layers.semantic != 0))

    def test_projection_consistency_yaw_vs_prerotated_scene(self):
        mesh, _ = generate_city(SceneSpec(seed=6, n_buildings=4))
        seg = segmented(mesh)
        theta = np.pi / 2
        pose = cp.CameraPose(location=[0, 0, 2.5], azimuth=0.0)
        a = render_cad_view(mesh, seg, self._cfg(pose=pose, yaw=theta)).segment_id
        rz = np.array([[np.cos(theta), -np.sin(theta), 0], [np.sin(theta), np.cos(theta), 0], [0, 0, 1]])
        rotated = CityMesh(vertices=mesh.vertices @ rz.T, polygons=mesh.polygons, tags=mesh.tags)
        b = render_cad_view(rotated, seg, self._cfg(pose=pose, yaw=0.0)).segment_id
        assert np.array_equal(a, b)


class TestFileFormats:
    def test_pfm_round_trip(self, tmp_path, rng):
        a = rng.normal(size=(37, 53)).astype(np.float32)
        write_pfm(tmp_path / "a.pfm", a)
        assert np.array_equal(read_pfm(tmp_path / "a.pfm"), a)
        b = rng.normal(size=(16, 9, 3)).astype(np.float32)
        write_pfm(tmp_path / "b.pfm", b)
        assert np.array_equal(read_pfm(tmp_path / "b.pfm"), b)

    def test_depth_sky_sentinel(self, tmp_path):
        d = np.array([[1.5, np.inf], [3.0, np.inf]])
        write_depth_pfm(tmp_path / "d.pfm", d)
        raw = read_pfm(tmp_path / "d.pfm")
        assert raw[0, 1] == 0.0 and raw[1, 1] == 0.0
        back = read_depth_pfm(tmp_path / "d.pfm")
        assert np.isinf(back[0, 1]) and back[0, 0] == np.float32(1.5)

    def test_segment_png_16bit(self, tmp_path):
        seg = np.array([[0, 1], [700, 65535]], dtype=np.uint32)
        write_segment_png(tmp_path / "s.png", seg)
        assert np.array_equal(read_segment_png(tmp_path / "s.png"), seg)

    def test_segment_png_overflow_rejected(self, tmp_path):
        from citypano.errors import DomainError

        with pytest.raises(DomainError):
            write_segment_png(tmp_path / "s.png", np.array([[70000]], dtype=np.uint32))

    def test_semantic_png_round_trip(self, tmp_path):
        lab = np.array([[0, 1, 2], [3, 5, 6]], dtype=np.uint8)
        write_semantic_png(tmp_path / "t.png", lab)
        assert np.array_equal(read_semantic_png(tmp_path / "t.png"), lab)


@pytest.fixture(scope="module")
def scene():
    mesh, _ = generate_city(SceneSpec(seed=7, n_buildings=3, area=4900))
    seg = segmented(mesh)
    pose = cp.CameraPose(location=[1.0, 0.5, 2.5], azimuth=0.2)
    pano = synth_panorama(mesh, seg, pose, width=1024)
    return mesh, seg, pose, pano


class TestViewpointProducts:
    def test_eight_product_sets_with_exact_yaws(self, scene, tmp_path):
        mesh, seg, pose, pano = scene
        results = render_viewpoint_products(mesh, seg, pano, pose, seed=11, pano_id="vp", out_dir=tmp_path)
        assert len(results) == 8
        assert [intr.yaw for intr, _ in results] == [np.radians(45.0 * k) for k in range(8)]
        files = sorted(p.name for p in tmp_path.iterdir())
        assert len(files) == 40
        assert "vp_0_imag.png" in files and "vp_7_segm.png" in files

    def test_bit_identical_re_render(self, scene, tmp_path):
        mesh, seg, pose, pano = scene
        d1 = tmp_path / "run1"
        d2 = tmp_path / "run2"
        for d in (d1, d2):
            render_viewpoint_products(mesh, seg, pano, pose, seed=3, pano_id="vp", out_dir=d)
        for p1 in sorted(d1.iterdir()):
            h1 = hashlib.sha256(p1.read_bytes()).hexdigest()
            h2 = hashlib.sha256((d2 / p1.name).read_bytes()).hexdigest()
            assert h1 == h2, p1.name

    def test_rgb_edges_align_with_segment_edges(self, scene):
        mesh, seg, pose, pano = scene
        # pano rendered from the mesh itself: color edges must sit on id edges
        pano_hi = synth_panorama(mesh, seg, pose, width=2048)
        cfg = RenderConfig(
            intrinsics=cp.PerspectiveIntrinsics(90, 512, 512, yaw=0.3, pitch=0.1), pose=pose
        )
        rgb = resample_pano_to_perspective(pano_hi, cfg)
        ids = render_cad_view(mesh, seg, cfg).segment_id
        rgb_edge = edge_mask(rgb[..., 0].astype(int) * 66000 + rgb[..., 1].astype(int) * 256 + rgb[..., 2])
        id_edge = edge_mask(ids)
        near_id_edge = binary_dilation(id_edge, iterations=1)
        frac = (rgb_edge & near_id_edge).sum() / max(rgb_edge.sum(), 1)
        assert frac >= 0.99
