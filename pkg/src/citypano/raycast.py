"""Batch ray casting against the city mesh (fan-triangulated internally).

This is the renderer-independent visibility path: Moller-Trumbore
intersection vectorized over rays x triangles, chunked to bound memory.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import CityMesh

_EPS = 1e-12
_CHUNK_BUDGET = 4_000_000  # ray-triangle pairs per chunk


def fan_triangulate(mesh: CityMesh) -> tuple[np.ndarray, np.ndarray]:
    """(m, 3, 3) triangle coordinates and (m,) source polygon indices."""
    tris = []
    poly_ids = []
    for pi, ring in enumerate(mesh.polygons):
        pts = mesh.vertices[ring]
        for k in range(1, len(ring) - 1):
            tris.append([pts[0], pts[k], pts[k + 1]])
            poly_ids.append(pi)
    if not tris:
        return np.zeros((0, 3, 3)), np.zeros(0, dtype=np.int64)
    return np.asarray(tris, dtype=float), np.asarray(poly_ids, dtype=np.int64)


@dataclass
class TriangleSoup:
    """Triangles with precomputed edges for repeated casts."""

    tris: np.ndarray
    poly_ids: np.ndarray
    e1: np.ndarray
    e2: np.ndarray

    @classmethod
    def from_mesh(cls, mesh: CityMesh) -> "TriangleSoup":
        tris, poly_ids = fan_triangulate(mesh)
        return cls(
            tris=tris,
            poly_ids=poly_ids,
            e1=tris[:, 1] - tris[:, 0],
            e2=tris[:, 2] - tris[:, 0],
        )

    @property
    def empty(self) -> bool:
        return len(self.tris) == 0


def cast_rays(
    soup: TriangleSoup, origin, dirs, t_min: float = 1e-6
) -> tuple[np.ndarray, np.ndarray]:
    """Nearest hit along each ray from a common origin.

    Returns (t, polygon index); t = +inf and index = -1 for misses.
    Ties go to the lowest triangle index, so results are deterministic.
    """
    origin = np.asarray(origin, dtype=float).reshape(3)
    d = np.asarray(dirs, dtype=float).reshape(-1, 3)
    n = len(d)
    t_out = np.full(n, np.inf)
    poly_out = np.full(n, -1, dtype=np.int64)
    if soup.empty or n == 0:
        return t_out, poly_out

    # With a shared origin the per-ray quantities are scalar triple products,
    # so the whole batch collapses into three matrix products:
    #   det = e1.(d x e2) = d.(e2 x e1),  u_num = tvec.(d x e2) = d.(e2 x tvec)
    tvec = origin - soup.tris[:, 0]  # (m, 3)
    qvec = np.cross(tvec, soup.e1)  # (m, 3)
    t_num = np.einsum("mj,mj->m", soup.e2, qvec)  # (m,)
    w_det = np.cross(soup.e2, soup.e1)  # (m, 3)
    w_u = np.cross(soup.e2, tvec)  # (m, 3)
    m = len(soup.tris)
    chunk = max(1, _CHUNK_BUDGET // max(m, 1))
    for lo in range(0, n, chunk):
        dc = d[lo : lo + chunk]  # (c, 3)
        det = dc @ w_det.T
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / det
            u = (dc @ w_u.T) * inv
            v = (dc @ qvec.T) * inv
            t = t_num[None, :] * inv
            ok = (
                (np.abs(det) > _EPS)
                & (u >= -1e-9)
                & (v >= -1e-9)
                & (u + v <= 1.0 + 1e-9)
                & (t > t_min)
            )
        t = np.where(ok, t, np.inf)
        best = np.argmin(t, axis=1)
        rows = np.arange(len(dc))
        tb = t[rows, best]
        hit = np.isfinite(tb)
        t_out[lo : lo + chunk][hit] = tb[hit]
        poly_out[lo : lo + chunk][hit] = soup.poly_ids[best[hit]]
    return t_out, poly_out


def scene_distance(soup: TriangleSoup, origin, dirs) -> np.ndarray:
    """Distance to the nearest surface along each ray (+inf on miss)."""
    t, _ = cast_rays(soup, origin, dirs)
    return t
