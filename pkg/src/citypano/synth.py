"""Synthetic toy cities and panoramas for desk-scale testing.

Buildings are axis-aligned boxes whose footprints snap to the terrain grid,
so box bottoms share vertices with the terrain and merge into the ground
segment; each building then contributes 4 walls and a roof as separate
segments. Panoramas are flat per-segment colors obtained by per-pixel ray
casting, which keeps them exactly consistent with the mesh geometry.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .geometry import CameraPose, EquirectGrid, equirect_pixel_to_ray, pose_rotation, world_to_pano
from .mesh import CityMesh, SemanticTag
from .pose import Correspondence
from .raycast import TriangleSoup, cast_rays

SKY_RGB = (135, 206, 235)


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    n_buildings: int = 5
    area: float = 10000.0  # m^2, square footprint
    height_range: tuple[float, float] = (6.0, 20.0)
    terrain_cells: int = 8

    def __post_init__(self):
        if self.n_buildings < 0:
            raise DomainError("n_buildings must be >= 0")
        if self.area <= 0 or self.terrain_cells < 2:
            raise DomainError("need positive area and >= 2 terrain cells")


def generate_city(spec: SceneSpec) -> tuple[CityMesh, np.ndarray]:
    """Deterministic toy city: terrain grid plus box buildings.

    Returns (mesh, ground-truth segment label per polygon). Terrain quads and
    box bottoms share label 1; every wall and roof gets its own label.
    """
    rng = np.random.default_rng(spec.seed)
    side = float(np.sqrt(spec.area))
    k = spec.terrain_cells
    g = side / k
    x0 = -side / 2.0
    y0 = -side / 2.0

    # Choose cell-aligned building footprints without overlap (1-cell gap).
    # The central 2x2 cells stay clear so viewpoints near the origin always
    # have open ground around them.
    occupied = np.zeros((k, k), dtype=bool)
    occupied[k // 2 - 1 : k // 2 + 1, k // 2 - 1 : k // 2 + 1] = True
    footprints = []
    attempts = 0
    while len(footprints) < spec.n_buildings and attempts < 200 * max(spec.n_buildings, 1):
        attempts += 1
        wx = int(rng.integers(1, min(3, k - 1) + 1))
        wy = int(rng.integers(1, min(3, k - 1) + 1))
        cx = int(rng.integers(0, k - wx + 1))
        cy = int(rng.integers(0, k - wy + 1))
        lo_x, hi_x = max(cx - 1, 0), min(cx + wx + 1, k)
        lo_y, hi_y = max(cy - 1, 0), min(cy + wy + 1, k)
        if occupied[lo_y:hi_y, lo_x:hi_x].any():
            continue
        occupied[cy : cy + wy, cx : cx + wx] = True
        h = float(rng.uniform(*spec.height_range))
        footprints.append((cx, cy, wx, wy, h))

    vertices: list[tuple[float, float, float]] = []
    vertex_index: dict[tuple[float, float, float], int] = {}

    def vid(x, y, z):
        key = (round(float(x), 9), round(float(y), 9), round(float(z), 9))
        if key not in vertex_index:
            vertex_index[key] = len(vertices)
            vertices.append(key)
        return vertex_index[key]

    polygons = []
    tags = []
    gt = []

    def add_quad(p0, p1, p2, p3, tag, label):
        polygons.append(np.array([vid(*p0), vid(*p1), vid(*p2), vid(*p3)], dtype=np.int64))
        tags.append(int(tag))
        gt.append(label)

    covered = np.zeros((k, k), dtype=bool)
    for cx, cy, wx, wy, _ in footprints:
        covered[cy : cy + wy, cx : cx + wx] = True

    # Terrain quads everywhere except under buildings (bottoms fill the holes).
    for iy in range(k):
        for ix in range(k):
            if covered[iy, ix]:
                continue
            xa, xb = x0 + ix * g, x0 + (ix + 1) * g
            ya, yb = y0 + iy * g, y0 + (iy + 1) * g
            add_quad((xa, ya, 0), (xb, ya, 0), (xb, yb, 0), (xa, yb, 0), SemanticTag.TERRAIN, 1)

    label = 2
    for cx, cy, wx, wy, h in footprints:
        xa, xb = x0 + cx * g, x0 + (cx + wx) * g
        ya, yb = y0 + cy * g, y0 + (cy + wy) * g
        # bottom face merges with the terrain segment
        add_quad((xa, ya, 0), (xa, yb, 0), (xb, yb, 0), (xb, ya, 0), SemanticTag.BUILDING, 1)
        add_quad((xa, ya, h), (xb, ya, h), (xb, yb, h), (xa, yb, h), SemanticTag.BUILDING, label)
        walls = [
            ((xa, ya), (xb, ya)),
            ((xb, ya), (xb, yb)),
            ((xb, yb), (xa, yb)),
            ((xa, yb), (xa, ya)),
        ]
        for wi, ((px, py), (qx, qy)) in enumerate(walls):
            add_quad((px, py, 0), (qx, qy, 0), (qx, qy, h), (px, py, h), SemanticTag.BUILDING, label + 1 + wi)
        label += 5

    mesh = CityMesh(
        vertices=np.asarray(vertices, dtype=float),
        polygons=polygons,
        tags=np.asarray(tags),
    )
    return mesh, np.asarray(gt, dtype=np.int64)


def segment_color(segment_id: int) -> tuple[int, int, int]:
    """Deterministic distinct flat color per segment id."""
    if segment_id <= 0:
        return SKY_RGB
    return (
        (37 * segment_id + 13) % 256,
        (91 * segment_id + 101) % 256,
        (151 * segment_id + 53) % 256,
    )


def synth_panorama(
    mesh: CityMesh, segments: np.ndarray, pose: CameraPose, width: int = 1024
) -> np.ndarray:
    """Flat-colored equirectangular panorama of the mesh by ray casting."""
    if width % 2:
        raise DomainError("panorama width must be even")
    height = width // 2
    grid = EquirectGrid(width=width, height=height)
    jj, ii = np.meshgrid(np.arange(width), np.arange(height))
    d_pano = equirect_pixel_to_ray(grid, jj + 0.5, ii + 0.5)
    d_world = d_pano.reshape(-1, 3) @ pose_rotation(pose).T
    soup = TriangleSoup.from_mesh(mesh)
    _, poly = cast_rays(soup, pose.location, d_world)
    img = np.empty((height * width, 3), dtype=np.uint8)
    img[:] = SKY_RGB
    hit = poly >= 0
    seg_ids = np.zeros_like(poly)
    seg_ids[hit] = np.asarray(segments)[poly[hit]]
    lut_size = int(seg_ids.max(initial=0)) + 1
    lut = np.array([segment_color(i) for i in range(lut_size)], dtype=np.uint8)
    img[hit] = lut[seg_ids[hit]]
    return img.reshape(height, width, 3)


def sample_correspondences(
    mesh: CityMesh,
    pose: CameraPose,
    n: int,
    seed: int = 0,
    min_distance: float = 2.0,
    noise_deg: float = 0.0,
) -> list[Correspondence]:
    """Visible-vertex correspondences for a known pose (optionally with a
    fixed-magnitude angular perturbation of each ray)."""
    rng = np.random.default_rng(seed)
    soup = TriangleSoup.from_mesh(mesh)
    verts = np.unique(np.concatenate([r for r in mesh.polygons]))
    pts = mesh.vertices[verts]
    delta = pts - pose.location
    dist = np.linalg.norm(delta, axis=1)
    keep = dist > min_distance
    pts, dist = pts[keep], dist[keep]
    dirs = (pts - pose.location) / dist[:, None]
    t, _ = cast_rays(soup, pose.location, dirs)
    visible = dist <= t + 0.1
    pts = pts[visible]
    if len(pts) < n:
        raise DomainError(f"only {len(pts)} visible vertices, need {n}")
    # Spread picks across azimuths for a well-conditioned solve.
    az = np.arctan2(pts[:, 0] - pose.location[0], pts[:, 1] - pose.location[1])
    order = np.argsort(az, kind="stable")
    picks = order[np.linspace(0, len(order) - 1, n).astype(int)]
    corr = []
    for i in picks:
        ray = world_to_pano(pose, pts[i])
        if noise_deg > 0.0:
            axis = np.cross(ray, rng.normal(size=3))
            axis /= np.linalg.norm(axis)
            a = np.radians(noise_deg)
            ray = ray * np.cos(a) + np.cross(axis, ray) * np.sin(a)
            ray /= np.linalg.norm(ray)
        corr.append(Correspondence(ray=ray, world=pts[i]))
    return corr
