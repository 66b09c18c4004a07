"""Generate the recorded fixtures used by the frontend unit/contract tests.

Writes into tests/fixtures/:
  unproject_cases.json  - view window + pixel -> expected pano-frame ray
  contract.json         - recorded service responses for a scripted flow
  png_cases.json + *.png - small images with expected pixel arrays
"""

import base64
import json
import math
import sys
from pathlib import Path

import numpy as np

FIXTURES = Path(__file__).resolve().parent.parent / "tests" / "fixtures"


def unproject_cases():
    from citypano.geometry import PerspectiveIntrinsics, unproject_pixel, view_rotation

    rng = np.random.default_rng(99)
    cases = []
    for _ in range(40):
        view = {
            "yaw": float(rng.uniform(0, 360)),
            "pitch": float(rng.uniform(-60, 60)),
            "fov": float(rng.uniform(30, 120)),
            "w": int(rng.integers(64, 1024)),
            "h": int(rng.integers(64, 1024)),
        }
        u = float(rng.uniform(0, view["w"]))
        v = float(rng.uniform(0, view["h"]))
        intr = PerspectiveIntrinsics(
            fov_deg=view["fov"],
            width=view["w"],
            height=view["h"],
            yaw=math.radians(view["yaw"]),
            pitch=math.radians(view["pitch"]),
        )
        ray = unproject_pixel(intr, u, v) @ view_rotation(intr).T
        cases.append({"view": view, "u": u, "v": v, "ray": ray.tolist()})
    (FIXTURES / "unproject_cases.json").write_text(json.dumps(cases, indent=1))


def contract_fixture(tmp_root: Path):
    """Record a complete annotate-optimize flow against the real service."""
    from fastapi.testclient import TestClient

    import citypano as cp
    from citypano.extract import polygon_to_segment_array, segment_surfaces
    from citypano.geometry import EquirectGrid, ray_to_equirect_pixel
    from citypano.imgio import write_rgb_png
    from citypano.mesh import build_adjacency, save_mesh
    from citypano.service import ServiceConfig, create_app
    from citypano.synth import SceneSpec, generate_city, sample_correspondences, synth_panorama

    truth = cp.CameraPose(location=[1.0, -2.0, 2.5], azimuth=0.3)
    init = cp.CameraPose(location=[2.2, -1.0, 3.0], azimuth=0.3 + np.radians(2.0))
    mesh, _ = generate_city(SceneSpec(seed=21, n_buildings=5))
    segs = segment_surfaces(mesh, build_adjacency(mesh), 45.0)
    seg_arr = polygon_to_segment_array(segs, mesh.n_polygons)
    pano = synth_panorama(mesh, seg_arr, truth, width=1024)

    data = tmp_root / "contract_data"
    data.mkdir(parents=True, exist_ok=True)
    save_mesh(mesh, data / "city.obj")
    write_rgb_png(data / "vp1.png", pano)
    (data / "viewpoints.json").write_text(
        json.dumps([{"pano_id": "vp1", "pano_file": "vp1.png", "pose": init.to_dict()}])
    )
    app = create_app(ServiceConfig(data_dir=str(data), mesh_path=str(data / "city.obj")))

    corr = sample_correspondences(mesh, truth, 8, seed=5)
    grid = EquirectGrid(1024, 512)
    recorded = {"responses": []}

    def record(method, path, body, resp):
        recorded["responses"].append(
            {
                "method": method,
                "path": path,
                "request": body,
                "status": resp.status_code,
                "body": resp.json(),
            }
        )

    with TestClient(app) as client:
        r = client.get("/session/vp1")
        record("GET", "/session/vp1", None, r)
        for c in corr:
            u, v = ray_to_equirect_pixel(grid, c.ray)
            payload = {"u": float(u), "v": float(v), "world": c.world.tolist()}
            r = client.post("/session/vp1/pairs", json=payload)
            record("POST", "/session/vp1/pairs", payload, r)
        r = client.get("/session/vp1")
        record("GET", "/session/vp1", None, r)
        r = client.post("/session/vp1/optimize", json={})
        record("POST", "/session/vp1/optimize", {}, r)
        r = client.get("/session/vp1")
        record("GET", "/session/vp1", None, r)
    (FIXTURES / "contract.json").write_text(json.dumps(recorded, indent=1))


def png_cases():
    from PIL import Image

    rng = np.random.default_rng(4)
    cases = []
    for name, arr in [
        ("gradient", np.stack(np.meshgrid(np.arange(9) * 28, np.arange(7) * 36), axis=-1)[
            :, :, [0, 1, 0]
        ].astype(np.uint8)),
        ("noise", rng.integers(0, 256, size=(11, 5, 3), dtype=np.uint8)),
        ("gray", (np.arange(48, dtype=np.uint8) * 5).reshape(6, 8)),
    ]:
        img = Image.fromarray(arr)
        path = FIXTURES / f"{name}.png"
        img.save(path)
        cases.append(
            {
                "file": f"{name}.png",
                "width": arr.shape[1],
                "height": arr.shape[0],
                "channels": 1 if arr.ndim == 2 else arr.shape[2],
                "pixels": base64.b64encode(arr.tobytes()).decode(),
            }
        )
    (FIXTURES / "png_cases.json").write_text(json.dumps(cases, indent=1))


def main():
    FIXTURES.mkdir(parents=True, exist_ok=True)
    tmp_root = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("/tmp/citypano-fixtures")
    unproject_cases()
    contract_fixture(tmp_root)
    png_cases()
    print(f"fixtures written to {FIXTURES}")


if __name__ == "__main__":
    main()
