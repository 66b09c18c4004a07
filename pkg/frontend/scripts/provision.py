"""Provision a toy-scene data directory for the frontend end-to-end test.

Usage: python provision.py <out_dir>

Writes mesh, panorama, viewpoints.json (with a perturbed initial pose), and
clicks.json: a recorded human session of 8 model/panorama click pairs that
the scripted browser session replays through the client code paths.
"""

import json
import math
import sys
from pathlib import Path

import numpy as np

import citypano as cp
from citypano.extract import polygon_to_segment_array, segment_surfaces
from citypano.geometry import (
    PerspectiveIntrinsics,
    perspective_project,
    view_rotation,
    world_to_pano,
)
from citypano.imgio import write_rgb_png
from citypano.mesh import build_adjacency, save_mesh
from citypano.synth import SceneSpec, generate_city, sample_correspondences, synth_panorama

PANO_W = 2048
TRUTH = cp.CameraPose(location=[1.0, -2.0, 2.5], azimuth=0.3)
INIT = cp.CameraPose(location=[2.6, -0.9, 3.2], azimuth=0.3 + math.radians(2.5))


def click_for(pose: cp.CameraPose, world: np.ndarray, jitter_px: float, rng) -> dict:
    """View window roughly centered on the point plus its crop pixel."""
    ray = world_to_pano(pose, world)
    yaw = math.degrees(math.atan2(ray[0], ray[1]))
    pitch = max(min(math.degrees(math.asin(float(ray[2]))), 60.0), -45.0)
    view = {"yaw": round(yaw, 3), "pitch": round(pitch, 3), "fov": 90.0, "w": 512, "h": 512}
    intr = PerspectiveIntrinsics(
        fov_deg=90.0, width=512, height=512,
        yaw=math.radians(view["yaw"]), pitch=math.radians(view["pitch"]),
    )
    d_cam = ray @ view_rotation(intr)
    u, v, in_front = perspective_project(intr, d_cam)
    assert in_front and 0 <= u < 512 and 0 <= v < 512
    return {"view": view, "u": float(u + rng.uniform(-jitter_px, jitter_px)),
            "v": float(v + rng.uniform(-jitter_px, jitter_px))}


def main():
    out = Path(sys.argv[1])
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(77)

    mesh, _ = generate_city(SceneSpec(seed=21, n_buildings=5))
    segs = segment_surfaces(mesh, build_adjacency(mesh), 45.0)
    seg_arr = polygon_to_segment_array(segs, mesh.n_polygons)
    pano = synth_panorama(mesh, seg_arr, TRUTH, width=PANO_W)

    save_mesh(mesh, out / "city.obj")
    write_rgb_png(out / "vp1.png", pano)
    (out / "viewpoints.json").write_text(
        json.dumps([{"pano_id": "vp1", "pano_file": "vp1.png", "pose": INIT.to_dict()}])
    )

    # 8 scripted clicks: vertices visible from both poses, model click as
    # seen from the working (initial) pose, panorama click at the true pixel.
    corr = sample_correspondences(mesh, TRUTH, 16, seed=7)
    clicks = []
    for c in corr:
        try:
            model = click_for(INIT, c.world, jitter_px=0.4, rng=rng)
            pano_click = click_for(TRUTH, c.world, jitter_px=0.4, rng=rng)
        except AssertionError:
            continue
        # model-pane visibility from the initial pose is what snap will use
        from citypano.raycast import TriangleSoup, cast_rays

        soup = TriangleSoup.from_mesh(mesh)
        d = c.world - INIT.location
        dist = float(np.linalg.norm(d))
        t, _ = cast_rays(soup, INIT.location, (d / dist)[None, :])
        if dist > t[0] + 0.1:
            continue
        clicks.append({"model": model, "pano": pano_click, "world_hint": c.world.tolist()})
        if len(clicks) == 8:
            break
    assert len(clicks) == 8, f"only {len(clicks)} usable clicks"
    (out / "clicks.json").write_text(json.dumps(clicks, indent=1))

    (out / "meta.json").write_text(
        json.dumps(
            {
                "pano_id": "vp1",
                "truth_location": TRUTH.location.tolist(),
                "overlay_view": {"yaw": 17.0, "pitch": 8.0, "fov": 90.0, "w": 512, "h": 512},
            }
        )
    )
    print(f"provisioned {out}")


if __name__ == "__main__":
    main()
