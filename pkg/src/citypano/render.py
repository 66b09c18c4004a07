"""Per-view products: perspective RGB resampled from the panorama and
z-buffered depth/normal/semantic/segment layers rasterized from the mesh.

The rasterizer is a deterministic software implementation: triangles are
clipped against the near plane, projected, and filled by screen-space
barycentric coverage with perspective-correct 1/z interpolation. Depth is
z-depth along the optical axis with no far cap; sky pixels are +inf in
memory (0 in depth files). Normals are stored per pixel in the camera frame,
flipped toward the viewer for back-facing polygons.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError, FormatError
from .geometry import (
    CameraPose,
    EquirectGrid,
    PerspectiveIntrinsics,
    make_view_set,
    pose_rotation,
    unproject_pixel,
    view_rotation,
)
from .imgio import (
    SKY_LABEL,
    write_depth_pfm,
    write_pfm,
    write_rgb_png,
    write_segment_png,
    write_semantic_png,
)
from .mesh import CityMesh, newell_vector

PRODUCT_SUFFIXES = ("imag.png", "dpth.pfm", "nrml.pfm", "semt.png", "segm.png")


@dataclass
class RenderConfig:
    intrinsics: PerspectiveIntrinsics
    pose: CameraPose
    near: float = 0.1

    def __post_init__(self):
        if self.near <= 0:
            raise DomainError("near plane must be positive")


@dataclass
class RasterLayers:
    """Co-registered per-view images; rgb is None until resampled."""

    depth: np.ndarray
    normal: np.ndarray
    semantic: np.ndarray
    segment_id: np.ndarray
    poly_id: np.ndarray  # in-memory only, -1 = sky
    rgb: np.ndarray | None = None


def resample_pano_to_perspective(pano: np.ndarray, cfg: RenderConfig) -> np.ndarray:
    """Perspective crop of an equirectangular image by bilinear resampling
    with longitude wrap. Uses only the view's yaw/pitch (the panorama is
    already in its own camera frame)."""
    pano = np.asarray(pano)
    if pano.ndim != 3 or pano.shape[2] != 3:
        raise FormatError("panorama must be (h, w, 3)")
    ph, pw = pano.shape[:2]
    if pw != 2 * ph:
        raise FormatError("panorama must be 2:1 equirectangular")
    grid = EquirectGrid(width=pw, height=ph)
    intr = cfg.intrinsics
    jj, ii = np.meshgrid(np.arange(intr.width), np.arange(intr.height))
    d_cam = unproject_pixel(intr, jj + 0.5, ii + 0.5)
    d_pano = d_cam @ view_rotation(intr).T
    x, y, z = d_pano[..., 0], d_pano[..., 1], d_pano[..., 2]
    phi = np.arctan2(x, y)
    theta = np.arcsin(np.clip(z, -1.0, 1.0))
    pu = pw * (phi / (2.0 * np.pi) + 0.5)
    pv = ph * (0.5 - theta / np.pi)
    # pixel centers at integer + 0.5 -> array index = coordinate - 0.5
    fx = np.mod(pu - 0.5, pw)
    fy = np.clip(pv - 0.5, 0.0, ph - 1.0)
    x0 = np.floor(fx).astype(int)
    y0 = np.floor(fy).astype(int)
    x1 = (x0 + 1) % pw
    y1 = np.minimum(y0 + 1, ph - 1)
    wx = (fx - x0)[..., None]
    wy = (fy - y0)[..., None]
    img = pano.astype(np.float64)
    out = (
        img[y0, x0] * (1 - wx) * (1 - wy)
        + img[y0, x1] * wx * (1 - wy)
        + img[y1, x0] * (1 - wx) * wy
        + img[y1, x1] * wx * wy
    )
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def _clip_near(tri: np.ndarray, near: float) -> list[np.ndarray]:
    """Sutherland-Hodgman clip of one camera-space triangle against z >= near;
    returns 0..2 triangles."""
    poly = list(tri)
    out = []
    n = len(poly)
    for i in range(n):
        a = poly[i]
        b = poly[(i + 1) % n]
        ain = a[2] >= near
        bin_ = b[2] >= near
        if ain:
            out.append(a)
        if ain != bin_:
            t = (near - a[2]) / (b[2] - a[2])
            out.append(a + t * (b - a))
    if len(out) < 3:
        return []
    return [np.stack([out[0], out[k], out[k + 1]]) for k in range(1, len(out) - 1)]


def render_cad_view(mesh: CityMesh, segments: np.ndarray, cfg: RenderConfig) -> RasterLayers:
    """Rasterize depth/normal/semantic/segment layers for one view.

    `segments` maps polygon index -> segment id (>= 1).
    """
    intr = cfg.intrinsics
    h, w = intr.height, intr.width
    zbuf = np.full((h, w), np.inf)
    pbuf = np.full((h, w), -1, dtype=np.int64)

    r_total = pose_rotation(cfg.pose) @ view_rotation(intr)
    loc = cfg.pose.location
    f = intr.focal
    cx, cy = w / 2.0, h / 2.0

    n_poly = mesh.n_polygons
    normals_cam = np.zeros((n_poly, 3))
    for pi in range(n_poly):
        pts = mesh.polygon_vertices(pi)
        nv = newell_vector(pts)
        norm = np.linalg.norm(nv)
        if norm < 1e-12:
            continue
        n_cam = (nv / norm) @ r_total
        v0 = (pts[0] - loc) @ r_total
        if np.dot(n_cam, v0) > 0:  # back-facing: flip toward the viewer
            n_cam = -n_cam
        normals_cam[pi] = n_cam

        cam = (pts - loc) @ r_total
        for k in range(1, len(pts) - 1):
            tri = np.stack([cam[0], cam[k], cam[k + 1]])
            if np.all(tri[:, 2] < cfg.near):
                continue
            for ctri in _clip_near(tri, cfg.near):
                _raster_triangle(ctri, pi, f, cx, cy, zbuf, pbuf)

    sky = pbuf < 0
    depth = zbuf.copy()
    depth[sky] = np.inf
    normal = np.zeros((h, w, 3), dtype=np.float64)
    semantic = np.full((h, w), SKY_LABEL, dtype=np.uint8)
    segment_id = np.zeros((h, w), dtype=np.uint32)
    hitp = pbuf[~sky]
    normal[~sky] = normals_cam[hitp]
    semantic[~sky] = np.asarray(mesh.tags)[hitp].astype(np.uint8)
    segment_id[~sky] = np.asarray(segments)[hitp].astype(np.uint32)
    return RasterLayers(
        depth=depth, normal=normal, semantic=semantic, segment_id=segment_id, poly_id=pbuf
    )


def _raster_triangle(tri, poly_idx, f, cx, cy, zbuf, pbuf):
    z = tri[:, 2]
    su = cx + f * tri[:, 0] / z
    sv = cy + f * tri[:, 1] / z
    h, w = zbuf.shape
    x_lo = max(int(math.floor(su.min() - 0.5)), 0)
    x_hi = min(int(math.ceil(su.max() - 0.5)), w - 1)
    y_lo = max(int(math.floor(sv.min() - 0.5)), 0)
    y_hi = min(int(math.ceil(sv.max() - 0.5)), h - 1)
    if x_lo > x_hi or y_lo > y_hi:
        return
    area2 = (su[1] - su[0]) * (sv[2] - sv[0]) - (sv[1] - sv[0]) * (su[2] - su[0])
    if abs(area2) < 1e-12:
        return
    xs = np.arange(x_lo, x_hi + 1) + 0.5
    ys = np.arange(y_lo, y_hi + 1) + 0.5
    px, py = np.meshgrid(xs, ys)
    l0 = ((su[2] - su[1]) * (py - sv[1]) - (sv[2] - sv[1]) * (px - su[1])) / area2
    l1 = ((su[0] - su[2]) * (py - sv[2]) - (sv[0] - sv[2]) * (px - su[2])) / area2
    l2 = 1.0 - l0 - l1
    eps = -1e-12
    inside = (l0 >= eps) & (l1 >= eps) & (l2 >= eps)
    if not inside.any():
        return
    inv_z = l0 / z[0] + l1 / z[1] + l2 / z[2]
    with np.errstate(divide="ignore"):
        zt = 1.0 / inv_z
    win = zbuf[y_lo : y_hi + 1, x_lo : x_hi + 1]
    pwin = pbuf[y_lo : y_hi + 1, x_lo : x_hi + 1]
    upd = inside & (zt < win)
    win[upd] = zt[upd]
    pwin[upd] = poly_idx


def render_viewpoint_products(
    mesh: CityMesh,
    segments: np.ndarray,
    pano: np.ndarray,
    pose: CameraPose,
    seed,
    pano_id: str = "pano",
    out_dir=None,
    near: float = 0.1,
) -> list[tuple[PerspectiveIntrinsics, RasterLayers]]:
    """Render the standard 8 views (yaws 0..315 deg, seeded pitches) and
    optionally write the product files <pano_id>_<k>_{imag,dpth,nrml,semt,segm}."""
    views = make_view_set(seed)
    results = []
    for k, intr in enumerate(views):
        cfg = RenderConfig(intrinsics=intr, pose=pose, near=near)
        layers = render_cad_view(mesh, segments, cfg)
        layers.rgb = resample_pano_to_perspective(pano, cfg)
        results.append((intr, layers))
        if out_dir is not None:
            write_view_products(out_dir, pano_id, k, layers)
    return results


def write_view_products(out_dir, pano_id: str, k: int, layers: RasterLayers) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{pano_id}_{k}"
    paths = {s: out / f"{stem}_{s}" for s in PRODUCT_SUFFIXES}
    if layers.rgb is not None:
        write_rgb_png(paths["imag.png"], layers.rgb)
    write_depth_pfm(paths["dpth.pfm"], layers.depth)
    write_pfm(paths["nrml.pfm"], layers.normal.astype(np.float32))
    write_semantic_png(paths["semt.png"], layers.semantic)
    write_segment_png(paths["segm.png"], layers.segment_id)
    return {s: str(p) for s, p in paths.items()}
