"""HTTP service powering the human annotation loop.

JSON-over-HTTP, stateless except for one JSON document per session, written
atomically (write-temp-then-rename) so annotation work survives crashes and
restarts. Per-session mutations serialize behind a lock; an optional
expected_revision in mutation bodies enables optimistic concurrency for UI
clients (stale revisions are rejected with 409).

Endpoints:
  GET    /viewpoints
  GET    /pano/{id}/crop?yaw&pitch&fov&w&h
  GET    /mesh/region?xmin&xmax&ymin&ymax
  GET    /session/{id}
  POST   /session/{id}/snap
  POST   /session/{id}/pairs
  DELETE /session/{id}/pairs/{k}
  POST   /session/{id}/optimize
  GET    /session/{id}/overlay?yaw&pitch&fov&w&h
"""

from __future__ import annotations

import io
import json
import math
import os
import tempfile
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Response
from pydantic import BaseModel

from .errors import CityPanoError, InsufficientData
from .extract import polygon_to_segment_array, segment_surfaces
from .geometry import (
    CameraPose,
    EquirectGrid,
    PerspectiveIntrinsics,
    equirect_pixel_to_ray,
    ray_to_equirect_pixel,
    unproject_pixel,
    view_rotation,
    world_to_pano,
)
from .imgio import read_rgb_png
from .mesh import DEFAULT_MERGE_DISTANCE, SemanticTag, build_adjacency, load_mesh
from .pose import Correspondence, solve_pose
from .raycast import TriangleSoup, cast_rays
from .render import RenderConfig, render_cad_view, resample_pano_to_perspective
from . import georeg

DEFAULT_MAX_SNAP_DEG = 0.5  # about the expected alignment error scale
OVERLAY_RGB = (255, 0, 255)
VISIBILITY_SLACK = 0.1  # m of depth tolerance when testing vertex visibility


@dataclass
class ServiceConfig:
    data_dir: str
    mesh_path: str
    field_path: str | None = None
    pano_dir: str | None = None
    max_dihedral_deg: float = 30.0
    merge_distance: float = DEFAULT_MERGE_DISTANCE


def snap_vertex(mesh, soup: TriangleSoup, pose: CameraPose, click_ray, max_snap_deg: float):
    """Nearest visible mesh vertex within max_snap_deg of the click ray.

    Returns (vertex index, world point) or None when nothing qualifies
    (a no-snap result, not an error).
    """
    if max_snap_deg <= 0:
        raise CityPanoError("max_snap_deg must be positive")
    ray = np.asarray(click_ray, dtype=float)
    ray = ray / np.linalg.norm(ray)
    delta = mesh.vertices - pose.location
    dist = np.linalg.norm(delta, axis=1)
    good = dist > 1e-9
    dirs = np.zeros_like(delta)
    dirs[good] = delta[good] / dist[good, None]
    proj = world_to_pano(pose, mesh.vertices[good])
    ang = np.full(len(mesh.vertices), np.inf)
    ang[good] = np.degrees(np.arccos(np.clip(proj @ ray, -1.0, 1.0)))
    candidates = np.nonzero(ang < max_snap_deg)[0]
    if candidates.size == 0:
        return None
    order = candidates[np.argsort(ang[candidates], kind="stable")]
    t, _ = cast_rays(soup, pose.location, dirs[order])
    for k, vi in enumerate(order):
        if dist[vi] <= t[k] + VISIBILITY_SLACK:
            return int(vi), mesh.vertices[vi].copy()
    return None


def overlay_image(pano, mesh, segments, pose: CameraPose, intr: PerspectiveIntrinsics) -> np.ndarray:
    """Resampled crop with segment boundaries painted in the overlay color."""
    cfg = RenderConfig(intrinsics=intr, pose=pose)
    crop = resample_pano_to_perspective(pano, cfg)
    if mesh.n_polygons == 0:
        return crop
    seg = render_cad_view(mesh, segments, cfg).segment_id
    edge = np.zeros(seg.shape, dtype=bool)
    edge[:-1, :] |= seg[:-1, :] != seg[1:, :]
    edge[1:, :] |= seg[:-1, :] != seg[1:, :]
    edge[:, :-1] |= seg[:, :-1] != seg[:, 1:]
    edge[:, 1:] |= seg[:, :-1] != seg[:, 1:]
    out = crop.copy()
    out[edge] = OVERLAY_RGB
    return out


class SessionStore:
    """One JSON document per session, atomic writes, per-session locks."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._locks: dict[str, threading.Lock] = {}
        self._guard = threading.Lock()

    def lock(self, session_id: str) -> threading.Lock:
        with self._guard:
            return self._locks.setdefault(session_id, threading.Lock())

    def path(self, session_id: str) -> Path:
        return self.root / f"{session_id}.json"

    def exists(self, session_id: str) -> bool:
        return self.path(session_id).exists()

    def load(self, session_id: str) -> dict:
        with open(self.path(session_id), "r", encoding="utf-8") as fh:
            return json.load(fh)

    def save(self, session_id: str, doc: dict) -> None:
        target = self.path(session_id)
        fd, tmp = tempfile.mkstemp(dir=self.root, prefix=f".{session_id}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(doc, fh, indent=1, sort_keys=True)
            os.replace(tmp, target)
        finally:
            if os.path.exists(tmp):
                os.unlink(tmp)

    def ids(self) -> list[str]:
        return sorted(p.stem for p in self.root.glob("*.json"))


class SnapBody(BaseModel):
    ray: list[float] | None = None
    view: dict | None = None
    u: float | None = None
    v: float | None = None
    max_snap_deg: float = DEFAULT_MAX_SNAP_DEG


class PairBody(BaseModel):
    u: float
    v: float
    world: list[float]
    view: dict | None = None
    expected_revision: int | None = None


class MutationBody(BaseModel):
    expected_revision: int | None = None


def _view_intrinsics(view: dict) -> PerspectiveIntrinsics:
    return PerspectiveIntrinsics(
        fov_deg=float(view.get("fov", 90.0)),
        width=int(view.get("w", 512)),
        height=int(view.get("h", 512)),
        yaw=math.radians(float(view.get("yaw", 0.0))),
        pitch=math.radians(float(view.get("pitch", 0.0))),
    )


def create_app(config: ServiceConfig) -> FastAPI:
    app = FastAPI(title="citypano annotation service")
    data_dir = Path(config.data_dir)
    store = SessionStore(data_dir / "sessions")

    mesh = load_mesh(config.mesh_path)
    soup = TriangleSoup.from_mesh(mesh)
    adjacency = build_adjacency(mesh, config.merge_distance)
    segments = segment_surfaces(mesh, adjacency, config.max_dihedral_deg)
    seg_array = polygon_to_segment_array(segments, mesh.n_polygons)
    field = georeg.DeformationField.load(config.field_path) if config.field_path else None

    viewpoints_file = data_dir / "viewpoints.json"
    if viewpoints_file.exists():
        with open(viewpoints_file, "r", encoding="utf-8") as fh:
            viewpoints = {v["pano_id"]: v for v in json.load(fh)}
    else:
        viewpoints = {}

    pano_cache: dict[str, np.ndarray] = {}
    pano_lock = threading.Lock()

    def get_pano(pano_id: str) -> np.ndarray:
        with pano_lock:
            if pano_id not in pano_cache:
                entry = viewpoints.get(pano_id)
                name = entry.get("pano_file", f"{pano_id}.png") if entry else f"{pano_id}.png"
                base = Path(config.pano_dir) if config.pano_dir else data_dir
                path = base / name
                if not path.exists():
                    raise HTTPException(404, f"no panorama for {pano_id}")
                pano_cache[pano_id] = read_rgb_png(path)
            return pano_cache[pano_id]

    def get_session(pano_id: str) -> dict:
        if store.exists(pano_id):
            return store.load(pano_id)
        entry = viewpoints.get(pano_id)
        if entry is None:
            raise HTTPException(404, f"unknown viewpoint {pano_id}")
        pano = get_pano(pano_id)
        return {
            "pano_id": pano_id,
            "revision": 0,
            "pose": entry["pose"],
            "pano": {"width": int(pano.shape[1]), "height": int(pano.shape[0])},
            "pairs": [],
        }

    def session_pose(doc: dict) -> CameraPose:
        return CameraPose.from_dict(doc["pose"])

    def session_grid(doc: dict) -> EquirectGrid:
        return EquirectGrid(width=doc["pano"]["width"], height=doc["pano"]["height"])

    def check_revision(doc: dict, expected: int | None):
        if expected is not None and expected != doc["revision"]:
            raise HTTPException(
                409, f"stale revision {expected}, session is at {doc['revision']}"
            )

    def png_response(rgb: np.ndarray) -> Response:
        buf = io.BytesIO()
        from PIL import Image

        Image.fromarray(rgb, mode="RGB").save(buf, format="PNG")
        return Response(content=buf.getvalue(), media_type="image/png")

    @app.get("/viewpoints")
    def list_viewpoints():
        out = []
        for pano_id, entry in sorted(viewpoints.items()):
            item = {"pano_id": pano_id, "pose": entry["pose"]}
            if store.exists(pano_id):
                doc = store.load(pano_id)
                item["revision"] = doc["revision"]
                item["n_pairs"] = len(doc["pairs"])
            else:
                item["revision"] = 0
                item["n_pairs"] = 0
            out.append(item)
        return {"viewpoints": out}

    @app.get("/pano/{pano_id}/crop")
    def pano_crop(pano_id: str, yaw: float = 0.0, pitch: float = 0.0, fov: float = 90.0,
                  w: int = 512, h: int = 512):
        doc = get_session(pano_id)
        intr = _view_intrinsics({"yaw": yaw, "pitch": pitch, "fov": fov, "w": w, "h": h})
        cfg = RenderConfig(intrinsics=intr, pose=session_pose(doc))
        return png_response(resample_pano_to_perspective(get_pano(pano_id), cfg))

    @app.get("/mesh/region")
    def mesh_region(xmin: float, xmax: float, ymin: float, ymax: float):
        keep = []
        for i, ring in enumerate(mesh.polygons):
            pts = mesh.vertices[ring]
            if (
                pts[:, 0].max() >= xmin
                and pts[:, 0].min() <= xmax
                and pts[:, 1].max() >= ymin
                and pts[:, 1].min() <= ymax
            ):
                keep.append(i)
        vids = sorted({int(v) for i in keep for v in mesh.polygons[i]})
        remap = {v: k for k, v in enumerate(vids)}
        return {
            "vertices": mesh.vertices[vids].tolist(),
            "polygons": [[remap[int(v)] for v in mesh.polygons[i]] for i in keep],
            "tags": [SemanticTag(int(mesh.tags[i])).name for i in keep],
            "segment_ids": [int(seg_array[i]) for i in keep],
        }

    @app.get("/session/{pano_id}")
    def read_session(pano_id: str):
        return get_session(pano_id)

    @app.post("/session/{pano_id}/snap")
    def snap(pano_id: str, body: SnapBody):
        doc = get_session(pano_id)
        pose = session_pose(doc)
        if body.ray is not None:
            ray = np.asarray(body.ray, dtype=float)
        elif body.view is not None and body.u is not None and body.v is not None:
            intr = _view_intrinsics(body.view)
            d_cam = unproject_pixel(intr, body.u, body.v)
            ray = d_cam @ view_rotation(intr).T
        else:
            raise HTTPException(422, "snap needs either a ray or view + pixel")
        hit = snap_vertex(mesh, soup, pose, ray, body.max_snap_deg)
        if hit is None:
            return {"snapped": False}
        vi, point = hit
        grid = session_grid(doc)
        u, v = ray_to_equirect_pixel(grid, world_to_pano(pose, point))
        return {
            "snapped": True,
            "vertex_index": vi,
            "world": point.tolist(),
            "pano_uv": [u, v],
        }

    @app.post("/session/{pano_id}/pairs")
    def add_pair(pano_id: str, body: PairBody):
        lock = store.lock(pano_id)
        with lock:
            doc = get_session(pano_id)
            check_revision(doc, body.expected_revision)
            if body.view is not None:
                intr = _view_intrinsics(body.view)
                d_cam = unproject_pixel(intr, body.u, body.v)
                ray = d_cam @ view_rotation(intr).T
                u, v = ray_to_equirect_pixel(session_grid(doc), ray)
            else:
                u, v = body.u, body.v
            doc["pairs"].append({"u": float(u), "v": float(v), "world": list(body.world)})
            doc["revision"] += 1
            store.save(pano_id, doc)
            return {"revision": doc["revision"], "index": len(doc["pairs"]) - 1}

    @app.delete("/session/{pano_id}/pairs/{k}")
    def delete_pair(pano_id: str, k: int, expected_revision: int | None = None):
        lock = store.lock(pano_id)
        with lock:
            doc = get_session(pano_id)
            check_revision(doc, expected_revision)
            if not 0 <= k < len(doc["pairs"]):
                raise HTTPException(404, f"no pair {k}")
            doc["pairs"].pop(k)
            doc["revision"] += 1
            store.save(pano_id, doc)
            return {"revision": doc["revision"], "n_pairs": len(doc["pairs"])}

    @app.post("/session/{pano_id}/optimize")
    def optimize(pano_id: str, body: MutationBody | None = None):
        lock = store.lock(pano_id)
        with lock:
            doc = get_session(pano_id)
            check_revision(doc, body.expected_revision if body else None)
            grid = session_grid(doc)
            try:
                corr = [
                    Correspondence(
                        ray=equirect_pixel_to_ray(grid, p["u"], p["v"]),
                        world=np.asarray(p["world"], dtype=float),
                    )
                    for p in doc["pairs"]
                ]
                solution = solve_pose(session_pose(doc), corr)
            except InsufficientData as e:
                raise HTTPException(422, str(e)) from e
            doc["pose"] = solution.pose.to_dict()
            doc["revision"] += 1
            store.save(pano_id, doc)
            residuals = solution.residuals_deg.tolist()
            return {
                "revision": doc["revision"],
                "pose": doc["pose"],
                "residuals_deg": residuals,
                "median_deg": float(np.median(residuals)),
                "converged": solution.converged,
                "iterations": solution.iterations,
            }

    @app.get("/session/{pano_id}/overlay")
    def overlay(pano_id: str, yaw: float = 0.0, pitch: float = 0.0, fov: float = 90.0,
                w: int = 512, h: int = 512):
        doc = get_session(pano_id)
        intr = _view_intrinsics({"yaw": yaw, "pitch": pitch, "fov": fov, "w": w, "h": h})
        img = overlay_image(get_pano(pano_id), mesh, seg_array, session_pose(doc), intr)
        return png_response(img)

    app.state.store = store
    app.state.mesh = mesh
    app.state.segments = segments
    app.state.field = field
    return app


def write_viewpoints_file(data_dir, entries) -> None:
    """Helper for provisioning: entries are dicts with pano_id, pose, pano_file."""
    path = Path(data_dir)
    path.mkdir(parents=True, exist_ok=True)
    with open(path / "viewpoints.json", "w", encoding="utf-8") as fh:
        json.dump(entries, fh, indent=1)
