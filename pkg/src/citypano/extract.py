"""Holistic ground truth from the CAD mesh: surface segments, vanishing
points, and multi-view occurrence statistics.

Surface segments are grown by BFS over the vertex-proximity adjacency; a
neighbor joins when the dihedral angle between Newell normals is below the
threshold. Because winding in the source models cannot be trusted, the
angle uses the axial metric arccos(|n_i . n_j|), so the test is orientation
independent and caps at 90 degrees.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .geometry import CameraPose, PerspectiveIntrinsics, WORLD_UP, make_view_set, pose_rotation, unit3, view_rotation
from .mesh import CityMesh, PolygonAdjacency, polygon_area
from .render import RenderConfig, render_cad_view

DEFAULT_MAX_DIHEDRAL_DEG = 30.0
VERTICAL_SKIP_DEG = 5.0  # clusters this close to the up axis give no horizontal VP
DEFAULT_OCCURRENCE_MIN_PIXELS = 50


@dataclass
class SurfaceSegment:
    id: int
    polygon_ids: np.ndarray
    mean_normal: np.ndarray
    area: float

    def to_dict(self) -> dict:
        return {"id": self.id, "polygon_ids": np.asarray(self.polygon_ids).tolist()}


@dataclass(frozen=True)
class VanishingPoint:
    """Unit direction in the perspective camera frame, canonicalized so the
    largest-magnitude component is positive."""

    direction: np.ndarray
    kind: str  # "vertical" | "horizontal"

    def to_dict(self) -> dict:
        return {"direction": np.asarray(self.direction).tolist(), "kind": self.kind}


def canonicalize_direction(d) -> np.ndarray:
    d = unit3(d)
    if d[int(np.argmax(np.abs(d)))] < 0:
        d = -d
    return d


def dihedral_deg(n_i: np.ndarray, n_j: np.ndarray) -> float:
    """Orientation-independent angle between polygon normals, in degrees."""
    return float(np.degrees(np.arccos(np.clip(abs(float(n_i @ n_j)), 0.0, 1.0))))


def segment_surfaces(
    mesh: CityMesh, adj: PolygonAdjacency, max_dihedral_deg: float = DEFAULT_MAX_DIHEDRAL_DEG
) -> list[SurfaceSegment]:
    """BFS flood fill from the lowest-index unvisited polygon; ids are
    assigned in discovery order starting at 1."""
    if not 0.0 < max_dihedral_deg < 180.0:
        raise DomainError("max_dihedral_deg must be in (0, 180)")
    n = mesh.n_polygons
    normals = mesh.normals()
    areas = np.array([polygon_area(mesh, i) for i in range(n)])
    labels = np.zeros(n, dtype=np.int64)
    segments = []
    next_id = 1
    for start in range(n):
        if labels[start]:
            continue
        labels[start] = next_id
        members = [start]
        queue = deque([start])
        while queue:
            i = queue.popleft()
            for j in adj[i]:
                if labels[j]:
                    continue
                if dihedral_deg(normals[i], normals[j]) < max_dihedral_deg:
                    labels[j] = next_id
                    members.append(int(j))
                    queue.append(int(j))
        members = np.array(sorted(members), dtype=np.int64)
        w = areas[members]
        mean = (normals[members] * w[:, None]).sum(axis=0)
        norm = np.linalg.norm(mean)
        mean = mean / norm if norm > 1e-12 else normals[members[0]].copy()
        segments.append(
            SurfaceSegment(id=next_id, polygon_ids=members, mean_normal=mean, area=float(w.sum()))
        )
        next_id += 1
    return segments


def polygon_to_segment_array(segments, n_polygons: int) -> np.ndarray:
    """Per-polygon segment id array (0 where unassigned)."""
    out = np.zeros(n_polygons, dtype=np.int64)
    for s in segments:
        out[np.asarray(s.polygon_ids)] = s.id
    return out


def dbscan_directions(dirs, eps_deg: float, min_pts: int) -> np.ndarray:
    """DBSCAN over unit directions with the axial metric
    arccos(|<a, b>|), so antipodal directions cluster together.

    Deterministic: points are visited and core points expanded in index
    order; border points keep the first cluster that reaches them.
    Returns labels (first cluster = 0, noise = -1).
    """
    if eps_deg <= 0 or min_pts < 1:
        raise DomainError("need eps_deg > 0 and min_pts >= 1")
    d = np.asarray(dirs, dtype=float).reshape(-1, 3)
    n = len(d)
    labels = np.full(n, -1, dtype=np.int64)
    if n == 0:
        return labels
    ang = np.degrees(np.arccos(np.clip(np.abs(d @ d.T), 0.0, 1.0)))
    neighbor_lists = [np.nonzero(ang[i] <= eps_deg)[0] for i in range(n)]
    visited = np.zeros(n, dtype=bool)
    cid = 0
    for i in range(n):
        if visited[i]:
            continue
        visited[i] = True
        neigh = neighbor_lists[i]
        if len(neigh) < min_pts:
            continue  # noise unless later claimed as a border point
        labels[i] = cid
        queue = deque(int(j) for j in neigh)
        while queue:
            j = queue.popleft()
            if labels[j] == -1:
                labels[j] = cid
            if visited[j]:
                continue
            visited[j] = True
            jn = neighbor_lists[j]
            if len(jn) >= min_pts:
                queue.extend(int(k) for k in jn)
        cid += 1
    return labels


def extract_vps(
    visible_segments,
    areas,
    pose: CameraPose,
    intr: PerspectiveIntrinsics,
    eps_deg: float = 5.0,
    min_pts: int = 1,
) -> list[VanishingPoint]:
    """Vanishing points of one view.

    Always emits the vertical VP (world up rotated into the camera frame).
    Horizontal VPs come from clustering the visible segments' mean normals;
    each cluster mean n gives the direction normalize(n x up), rotated into
    the camera frame. Clusters within VERTICAL_SKIP_DEG of the up axis are
    skipped. `areas` maps segment id -> visible pixel area (weights).
    """
    r_total = pose_rotation(pose) @ view_rotation(intr)
    vps = [VanishingPoint(direction=canonicalize_direction(r_total.T @ WORLD_UP), kind="vertical")]
    segs = [s for s in visible_segments if areas.get(s.id, 0.0) > 0.0]
    if not segs:
        return vps
    dirs = np.stack([s.mean_normal for s in segs])
    w = np.array([float(areas[s.id]) for s in segs])
    labels = dbscan_directions(dirs, eps_deg, min_pts)
    for cid in sorted(set(labels.tolist()) - {-1}):
        members = np.nonzero(labels == cid)[0]
        ref = dirs[members[0]]
        signs = np.sign(dirs[members] @ ref)
        signs[signs == 0] = 1.0
        nbar = ((dirs[members] * signs[:, None]) * w[members, None]).sum(axis=0)
        norm = np.linalg.norm(nbar)
        if norm < 1e-12:
            continue
        nbar /= norm
        if np.degrees(np.arccos(np.clip(abs(nbar @ WORLD_UP), 0.0, 1.0))) < VERTICAL_SKIP_DEG:
            continue
        h_world = np.cross(nbar, WORLD_UP)
        h_world /= np.linalg.norm(h_world)
        vps.append(
            VanishingPoint(direction=canonicalize_direction(r_total.T @ h_world), kind="horizontal")
        )
    return vps


def visible_segment_areas(segment_layers) -> dict[int, int]:
    """Pixel counts per segment id over one or more segment-id images."""
    totals: dict[int, int] = {}
    for layer in segment_layers:
        ids, counts = np.unique(np.asarray(layer), return_counts=True)
        for i, c in zip(ids.tolist(), counts.tolist()):
            if i == 0:
                continue
            totals[i] = totals.get(i, 0) + c
    return totals


def default_occurrence_render(mesh, seg_array, pose, view_seed, size=512):
    layers = []
    for intr in make_view_set(view_seed, width=size, height=size):
        cfg = RenderConfig(intrinsics=intr, pose=pose)
        layers.append(render_cad_view(mesh, seg_array, cfg).segment_id)
    return layers


def plane_occurrence(
    segments,
    mesh: CityMesh,
    poses,
    render_fn=None,
    min_pixels: int = DEFAULT_OCCURRENCE_MIN_PIXELS,
    seed: int = 0,
    size: int = 512,
) -> dict:
    """Count, per segment, the panoramas in which it is visible.

    A segment occurs in a panorama when its id covers at least min_pixels
    pixels summed over the viewpoint's 8 rendered segment-id layers.
    Returns {"counts": {segment id: panorama count}, "histogram":
    {occurrence count: number of segments}}.
    """
    if len(poses) == 0:
        raise DomainError("need at least one pose")
    seg_array = polygon_to_segment_array(segments, mesh.n_polygons)
    counts = {s.id: 0 for s in segments}
    for vi, pose in enumerate(poses):
        if render_fn is not None:
            layers = render_fn(mesh, seg_array, pose, [seed, vi])
        else:
            layers = default_occurrence_render(mesh, seg_array, pose, [seed, vi], size=size)
        totals = visible_segment_areas(layers)
        for sid, npix in totals.items():
            if npix >= min_pixels and sid in counts:
                counts[sid] += 1
    histogram: dict[int, int] = {}
    for c in counts.values():
        histogram[c] = histogram.get(c, 0) + 1
    return {"counts": counts, "histogram": histogram}


def segments_to_json(segments, params: dict) -> str:
    return json.dumps(
        {"segments": [s.to_dict() for s in segments], "params": params}, indent=1
    )


def segments_from_json(text: str, mesh: CityMesh) -> list[SurfaceSegment]:
    doc = json.loads(text)
    normals = mesh.normals()
    out = []
    for rec in doc["segments"]:
        members = np.asarray(rec["polygon_ids"], dtype=np.int64)
        areas = np.array([polygon_area(mesh, int(i)) for i in members])
        mean = (normals[members] * areas[:, None]).sum(axis=0)
        norm = np.linalg.norm(mean)
        mean = mean / norm if norm > 1e-12 else normals[members[0]].copy()
        out.append(
            SurfaceSegment(id=int(rec["id"]), polygon_ids=members, mean_normal=mean, area=float(areas.sum()))
        )
    return out


def vps_to_json(vps) -> str:
    return json.dumps({"vps": [vp.to_dict() for vp in vps]}, indent=1)
