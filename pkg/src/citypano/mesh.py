"""Semantically tagged city mesh: OBJ I/O, normals, adjacency, terrain queries.

The mesh is a polygon soup: vertex rings (not pre-triangulated) with one
semantic tag per polygon. Tags ride on OBJ group names; the prefix before
the first underscore is the tag (e.g. "BUILDING_0042").
"""

from __future__ import annotations

import enum
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInput, DomainError, FormatError, NotCovered

PLANARITY_TOL = 1e-3  # m, max vertex distance to best-fit plane
DEFAULT_MERGE_DISTANCE = 0.05  # m, below the 15 cm model accuracy


class SemanticTag(enum.IntEnum):
    BUILDING = 1
    TERRAIN = 2
    BRIDGE = 3
    TREE = 4
    WATER = 5
    OTHER = 6


TAG_NAMES = {t.name: t for t in SemanticTag}


@dataclass
class CityMesh:
    """Polygon soup with per-polygon semantic tags.

    vertices: (n, 3) float array, meters.
    polygons: list of index rings (>= 3 distinct vertices, planar).
    tags: (m,) array of SemanticTag values.
    tag_warnings: number of unknown/missing group tags seen while loading.
    """

    vertices: np.ndarray
    polygons: list[np.ndarray]
    tags: np.ndarray
    tag_warnings: int = 0
    _normals: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        self.polygons = [np.asarray(p, dtype=np.int64) for p in self.polygons]
        self.tags = np.asarray(self.tags, dtype=np.int64)
        if len(self.tags) != len(self.polygons):
            raise DomainError("one tag per polygon required")
        n = len(self.vertices)
        for i, ring in enumerate(self.polygons):
            if np.any(ring < 0) or np.any(ring >= n):
                raise DomainError(f"polygon {i} has out-of-range vertex indices")
            if len(np.unique(ring)) < 3:
                raise DomainError(f"polygon {i} has fewer than 3 distinct vertices")
            if len(ring) > 3 and plane_fit_deviation(self.vertices[ring]) > PLANARITY_TOL:
                raise DomainError(f"polygon {i} is not planar within {PLANARITY_TOL} m")

    @property
    def n_polygons(self) -> int:
        return len(self.polygons)

    def polygon_vertices(self, i: int) -> np.ndarray:
        return self.vertices[self.polygons[i]]

    def normals(self) -> np.ndarray:
        """(m, 3) Newell normals, cached."""
        if self._normals is None:
            self._normals = np.stack(
                [polygon_normal(self, i) for i in range(self.n_polygons)]
            )
        return self._normals


@dataclass
class PolygonAdjacency:
    """Vertex-proximity polygon adjacency: i ~ j iff some vertex of i lies
    within merge_distance of some vertex of j."""

    neighbors: list[np.ndarray]
    merge_distance: float

    def __getitem__(self, i: int) -> np.ndarray:
        return self.neighbors[i]


def plane_fit_deviation(points: np.ndarray) -> float:
    """Max distance from points to their least-squares plane."""
    p = np.asarray(points, dtype=float)
    c = p.mean(axis=0)
    q = p - c
    _, s, vt = np.linalg.svd(q, full_matrices=False)
    normal = vt[-1]
    return float(np.abs(q @ normal).max())


def newell_vector(points: np.ndarray) -> np.ndarray:
    """Newell area vector (norm = 2x polygon area, direction by winding)."""
    p = np.asarray(points, dtype=float)
    q = np.roll(p, -1, axis=0)
    nx = np.sum((p[:, 1] - q[:, 1]) * (p[:, 2] + q[:, 2]))
    ny = np.sum((p[:, 2] - q[:, 2]) * (p[:, 0] + q[:, 0]))
    nz = np.sum((p[:, 0] - q[:, 0]) * (p[:, 1] + q[:, 1]))
    return np.array([nx, ny, nz])


def polygon_normal(mesh: CityMesh, i: int) -> np.ndarray:
    """Unit Newell normal of polygon i, oriented by its winding order."""
    v = newell_vector(mesh.polygon_vertices(i))
    n = np.linalg.norm(v)
    if n < 1e-12:
        raise DegenerateInput(f"polygon {i} has zero area")
    return v / n


def polygon_area(mesh: CityMesh, i: int) -> float:
    return float(np.linalg.norm(newell_vector(mesh.polygon_vertices(i))) / 2.0)


def load_mesh(path) -> CityMesh:
    """Load the OBJ subset (v / f / g statements, 1-based indices).

    The group-name prefix before the first underscore is the semantic tag;
    unknown or missing tags fall back to OTHER and bump tag_warnings.
    Non-planar faces are fan-triangulated.
    """
    vertices: list[list[float]] = []
    polygons: list[np.ndarray] = []
    tags: list[int] = []
    current_tag = SemanticTag.OTHER
    warnings = 0
    saw_group = False
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            kind = parts[0]
            if kind == "v":
                if len(parts) < 4:
                    raise FormatError("vertex needs 3 coordinates", line=lineno)
                try:
                    vertices.append([float(parts[1]), float(parts[2]), float(parts[3])])
                except ValueError as e:
                    raise FormatError(f"bad vertex coordinate: {e}", line=lineno) from e
            elif kind == "g":
                saw_group = True
                name = parts[1] if len(parts) > 1 else ""
                prefix = name.split("_", 1)[0]
                tag = TAG_NAMES.get(prefix)
                if tag is None:
                    warnings += 1
                    tag = SemanticTag.OTHER
                current_tag = tag
            elif kind == "f":
                if len(parts) < 4:
                    raise FormatError("face needs at least 3 vertices", line=lineno)
                idx = []
                for tok in parts[1:]:
                    tok = tok.split("/", 1)[0]
                    try:
                        k = int(tok)
                    except ValueError as e:
                        raise FormatError(f"bad face index {tok!r}", line=lineno) from e
                    if k < 1 or k > len(vertices):
                        raise FormatError(f"face index {k} out of range", line=lineno)
                    idx.append(k - 1)
                ring = np.array(idx, dtype=np.int64)
                if len(np.unique(ring)) < 3:
                    raise FormatError("face has fewer than 3 distinct vertices", line=lineno)
                if not saw_group:
                    warnings += 1
                    saw_group = True  # one warning for all untagged faces
                pts = np.asarray(vertices, dtype=float)[ring]
                if len(ring) > 3 and plane_fit_deviation(pts) > PLANARITY_TOL:
                    for k in range(1, len(ring) - 1):
                        polygons.append(ring[[0, k, k + 1]])
                        tags.append(int(current_tag))
                else:
                    polygons.append(ring)
                    tags.append(int(current_tag))
            # vn/vt/o/s/usemtl/mtllib are ignored
    if not polygons:
        raise FormatError(f"no faces found in {path}")
    return CityMesh(
        vertices=np.asarray(vertices, dtype=float),
        polygons=polygons,
        tags=np.asarray(tags),
        tag_warnings=warnings,
    )


def save_mesh(mesh: CityMesh, path) -> None:
    """Write the OBJ subset understood by load_mesh (tags as group names)."""
    with open(path, "w", encoding="utf-8") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.10g} {v[1]:.10g} {v[2]:.10g}\n")
        last_tag = None
        for i, ring in enumerate(mesh.polygons):
            tag = SemanticTag(int(mesh.tags[i]))
            if tag != last_tag:
                fh.write(f"g {tag.name}_{i:04d}\n")
                last_tag = tag
            fh.write("f " + " ".join(str(k + 1) for k in ring) + "\n")


def build_adjacency(mesh: CityMesh, merge_distance: float = DEFAULT_MERGE_DISTANCE) -> PolygonAdjacency:
    """Exact vertex-proximity adjacency, accelerated by a uniform spatial hash.

    adj(i) contains j iff min over vertex pairs (p in poly_i, q in poly_j)
    of |p - q| < merge_distance (strict).
    """
    if merge_distance <= 0:
        raise DomainError("merge_distance must be positive")
    verts = mesh.vertices
    vert_polys: dict[int, list[int]] = defaultdict(list)
    for pi, ring in enumerate(mesh.polygons):
        for vi in np.unique(ring):
            vert_polys[int(vi)].append(pi)
    used = np.array(sorted(vert_polys), dtype=np.int64)
    cells: dict[tuple[int, int, int], list[int]] = defaultdict(list)
    keys = np.floor(verts[used] / merge_distance).astype(np.int64)
    for vi, key in zip(used, keys):
        cells[tuple(key)].append(int(vi))

    adj: list[set[int]] = [set() for _ in range(mesh.n_polygons)]
    offsets = [(dx, dy, dz) for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)]
    for vi, key in zip(used, keys):
        p = verts[vi]
        for off in offsets:
            bucket = cells.get((key[0] + off[0], key[1] + off[1], key[2] + off[2]))
            if not bucket:
                continue
            for vj in bucket:
                if vj < vi:
                    continue  # each unordered vertex pair once
                if np.linalg.norm(p - verts[vj]) >= merge_distance:
                    continue
                for pi in vert_polys[int(vi)]:
                    for pj in vert_polys[vj]:
                        if pi != pj:
                            adj[pi].add(pj)
                            adj[pj].add(pi)
    neighbors = [np.array(sorted(s), dtype=np.int64) for s in adj]
    return PolygonAdjacency(neighbors=neighbors, merge_distance=merge_distance)


def point_in_ring_2d(ring_xy: np.ndarray, x: float, y: float) -> bool:
    """Even-odd crossing test in the plan (xy) projection."""
    px = ring_xy[:, 0]
    py = ring_xy[:, 1]
    qx = np.roll(px, -1)
    qy = np.roll(py, -1)
    inside = False
    for x0, y0, x1, y1 in zip(px, py, qx, qy):
        if (y0 > y) != (y1 > y):
            xi = x0 + (y - y0) / (y1 - y0) * (x1 - x0)
            if x < xi:
                inside = not inside
    return inside


def terrain_elevation_at(mesh: CityMesh, x: float, y: float) -> float:
    """z of the highest TERRAIN polygon under plan location (x, y)."""
    best = None
    for i, ring in enumerate(mesh.polygons):
        if mesh.tags[i] != SemanticTag.TERRAIN:
            continue
        pts = mesh.vertices[ring]
        if not point_in_ring_2d(pts[:, :2], x, y):
            continue
        n = newell_vector(pts)
        if abs(n[2]) < 1e-12:
            continue  # vertical face, no unique z
        c = pts.mean(axis=0)
        z = c[2] + (n[0] * (c[0] - x) + n[1] * (c[1] - y)) / n[2]
        if best is None or z > best:
            best = z
    if best is None:
        raise NotCovered(f"no terrain polygon under ({x}, {y})")
    return float(best)
