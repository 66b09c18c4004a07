import json

import numpy as np
import pytest
from click.testing import CliRunner

import citypano as cp
from citypano.cli import main
from citypano.georeg import local_to_latlon
from citypano.imgio import write_depth_pfm
from citypano.dataset import save_records, ViewpointRecord


@pytest.fixture()
def runner():
    return CliRunner()


def run_ok(runner, args):
    result = runner.invoke(main, args, catch_exceptions=False)
    assert result.exit_code == 0, result.output
    return result.output


@pytest.fixture()
def city_files(runner, tmp_path):
    obj = tmp_path / "city.obj"
    labels = tmp_path / "labels.json"
    run_ok(runner, ["synth", "city", "--seed", "3", "--n-buildings", "3",
                    "--out", str(obj), "--labels-out", str(labels)])
    pose = tmp_path / "pose.json"
    pose.write_text(json.dumps({"location": [1.0, -2.0, 2.5], "azimuth": 0.3, "up": [0, 0, 1]}))
    return tmp_path, obj, labels, pose


class TestSynthAndExtract:
    def test_city_segments_pano_render(self, runner, city_files):
        tmp, obj, labels, pose = city_files
        segs = tmp / "segments.json"
        out = run_ok(runner, ["extract", "segments", "--mesh", str(obj),
                              "--max-dihedral-deg", "45", "--out", str(segs)])
        assert "segments" in out
        pano = tmp / "pano.png"
        run_ok(runner, ["synth", "pano", "--mesh", str(obj), "--segments", str(segs),
                        "--pose", str(pose), "--width", "512", "--out", str(pano)])
        products = tmp / "products"
        run_ok(runner, ["render", "viewpoint", "--pano", str(pano), "--pose", str(pose),
                        "--mesh", str(obj), "--segments", str(segs), "--seed", "1",
                        "--pano-id", "vp", "--out-dir", str(products)])
        assert len(list(products.iterdir())) == 40

    def test_vps_and_occurrence(self, runner, city_files, tmp_path):
        tmp, obj, labels, pose = city_files
        segs = tmp / "segments.json"
        run_ok(runner, ["extract", "segments", "--mesh", str(obj),
                        "--max-dihedral-deg", "45", "--out", str(segs)])
        vps = tmp / "vps.json"
        run_ok(runner, ["extract", "vps", "--mesh", str(obj), "--segments", str(segs),
                        "--pose", str(pose), "--size", "128", "--out", str(vps)])
        doc = json.loads(vps.read_text())
        kinds = [v["kind"] for v in doc["vps"]]
        assert kinds.count("vertical") == 1
        poses = tmp / "poses.json"
        poses.write_text(json.dumps([json.loads(pose.read_text())]))
        occ = tmp / "occ.json"
        run_ok(runner, ["extract", "occurrence", "--mesh", str(obj), "--segments", str(segs),
                        "--poses", str(poses), "--size", "128", "--out", str(occ)])
        occ_doc = json.loads(occ.read_text())
        assert set(occ_doc["counts"].values()) <= {0, 1}

    def test_elevation(self, runner, city_files):
        _, obj, _, _ = city_files
        out = run_ok(runner, ["citymodel", "elevation", "--mesh", str(obj), "--x", "1", "--y", "1"])
        assert float(out.strip()) == 0.0


class TestGeoregCli:
    def test_fit_warp_invert(self, runner, tmp_path, rng):
        lat0, lon0 = 51.5, -0.1
        pts = rng.uniform(-300, 300, size=(44, 2))
        t = np.array([12.0, -7.0])
        rows = ["x_cad,y_cad,lat,lon"]
        for p in pts:
            latlon = local_to_latlon(p + t, lat0, lon0)
            rows.append(f"{p[0]},{p[1]},{latlon[0]:.10f},{latlon[1]:.10f}")
        pairs = tmp_path / "pairs.csv"
        pairs.write_text("\n".join(rows) + "\n")
        field = tmp_path / "field.json"
        out = run_ok(runner, ["georeg", "fit", "--pairs", str(pairs),
                              "--lambda-grid", "0.1,1,10", "--out", str(field)])
        assert "lambda" in out
        warped = run_ok(runner, ["georeg", "warp", "--field", str(field), "--x", "0", "--y", "0"])
        wx, wy = (float(s) for s in warped.split())
        # the loader centers the geodetic side on the data centroid, so the
        # fitted translation map becomes x -> x - mean(x_cad)
        mu = pts.mean(axis=0)
        assert abs(wx + mu[0]) < 0.2 and abs(wy + mu[1]) < 0.2
        inv = run_ok(runner, ["georeg", "invert", "--field", str(field),
                              "--x", str(wx), "--y", str(wy)])
        ix, iy = (float(s) for s in inv.split())
        assert abs(ix) < 1e-4 and abs(iy) < 1e-4

    def test_pose_solve_with_geotag_init(self, runner, tmp_path, rng):
        from citypano.synth import SceneSpec, generate_city, sample_correspondences
        from citypano.mesh import save_mesh
        from citypano.geometry import EquirectGrid, ray_to_equirect_pixel

        mesh, _ = generate_city(SceneSpec(seed=4, n_buildings=4))
        obj = tmp_path / "c.obj"
        save_mesh(mesh, obj)
        truth = cp.CameraPose(location=[1.0, -1.0, 2.5], azimuth=0.25)
        corr = sample_correspondences(mesh, truth, 10, seed=0)
        grid = EquirectGrid(2048, 1024)
        pairs = []
        for c in corr:
            u, v = ray_to_equirect_pixel(grid, c.ray)
            pairs.append({"u": u, "v": v, "world": c.world.tolist()})
        lat0, lon0 = 51.5, -0.1
        latlon = local_to_latlon(truth.location[:2] + [1.5, -1.0], lat0, lon0)
        corr_file = tmp_path / "corr.json"
        corr_file.write_text(json.dumps({
            "pano_id": "vp9", "width": 2048, "height": 1024,
            "lat": latlon[0], "lon": latlon[1],
            "azimuth_deg": float(np.degrees(truth.azimuth) + 3.0),
            "pairs": pairs,
        }))
        # identity deformation field over the scene, with geo metadata
        from citypano.georeg import GridSpec, identity_field

        f = identity_field(GridSpec(origin=(-80.0, -80.0), cell=10.0, nx=17, ny=17))
        f.tangent_origin = (lat0, lon0)
        field = tmp_path / "field.json"
        f.save(field)
        out_path = tmp_path / "pose.json"
        out = run_ok(runner, ["pose", "solve", "--corr", str(corr_file), "--field", str(field),
                              "--mesh", str(obj), "--out", str(out_path)])
        assert "median residual" in out
        doc = json.loads(out_path.read_text())
        assert doc["pano_id"] == "vp9"
        assert np.linalg.norm(np.asarray(doc["location"]) - truth.location) < 1e-3


class TestDatasetCli:
    def test_split_stats_sil(self, runner, tmp_path, rng):
        recs = [
            ViewpointRecord(
                pano_id=f"r{i}",
                pose=cp.CameraPose(location=[float(i) * 40, 0.0, 2.5], azimuth=0.0),
                n_annotations=8 + i % 5,
            )
            for i in range(20)
        ]
        records = tmp_path / "records.json"
        save_records(recs, records)
        splits = tmp_path / "splits.json"
        run_ok(runner, ["dataset", "split", "--records", str(records), "--kind", "random",
                        "--seed", "1", "--out", str(splits)])
        labels = json.loads(splits.read_text())
        assert len(labels) == 20
        out = run_ok(runner, ["dataset", "stats", "--records", str(records)])
        assert "histogram" in out
        a = tmp_path / "a.pfm"
        b = tmp_path / "b.pfm"
        depth = rng.uniform(1, 30, size=(8, 8))
        write_depth_pfm(a, depth * 2.0)
        write_depth_pfm(b, depth)
        sil_out = run_ok(runner, ["dataset", "sil", "--pred", str(a), "--gt", str(b)])
        assert float(sil_out.strip()) == pytest.approx(0.0, abs=1e-9)

    def test_manifest(self, runner, tmp_path):
        from citypano.render import PRODUCT_SUFFIXES

        recs = [ViewpointRecord(pano_id="m0", pose=cp.CameraPose(location=[0, 0, 2.5], azimuth=0))]
        records = tmp_path / "records.json"
        save_records(recs, records)
        products = tmp_path / "products"
        products.mkdir()
        for k in range(8):
            for s in PRODUCT_SUFFIXES:
                (products / f"m0_{k}_{s}").write_bytes(b"x")
        manifest = tmp_path / "manifest.json"
        run_ok(runner, ["dataset", "manifest", "--records", str(records),
                        "--products-dir", str(products), "--out", str(manifest)])
        doc = json.loads(manifest.read_text())
        assert doc["n_entries"] == 8 and doc["missing"] == []
