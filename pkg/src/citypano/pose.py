"""6-DoF panorama pose initialization and refinement from 2D-3D annotations.

The pose is refined by Levenberg-Marquardt on the squared angular
reprojection error sum_i arccos^2 <ray_i, project(world_i)>. Updates live in
a 6-vector chart: 3 location components, azimuth, and a 2D tangent update of
the up direction that is re-normalized each step. Jacobians come from
forward-mode differentiation (see dual.py) and are independently checked
against central finite differences by the test suite.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import georeg
from .dual import Dual, dcross, dmatmul, dnorm, drows_matmul, safe_arccos
from .errors import DegenerateInput, DomainError, InsufficientData
from .geometry import (
    WORLD_UP,
    CameraPose,
    EquirectGrid,
    as_vec3,
    check_unit,
    equirect_pixel_to_ray,
    world_to_pano,
)
from .mesh import CityMesh, terrain_elevation_at

CAMERA_HEIGHT = 2.5  # m above ground, street-view capture rig
MIN_PAIRS = 4
RECOMMENDED_PAIRS = 8  # labeling floor used when annotating
LM_MU0_SCALE = 1e-3
LM_MAX_ITER = 200
LM_STEP_TOL = 1e-10
LM_GRAD_TOL = 1e-10


@dataclass(frozen=True)
class Correspondence:
    """Annotated pair: panorama-frame unit ray and CAD world point (m)."""

    ray: np.ndarray
    world: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "ray", check_unit(self.ray))
        object.__setattr__(self, "world", as_vec3(self.world))


@dataclass
class PoseSolution:
    pose: CameraPose
    residuals_deg: np.ndarray
    iterations: int
    converged: bool
    rank_warning: bool = False

    def to_dict(self) -> dict:
        d = self.pose.to_dict()
        d["residuals_deg"] = np.asarray(self.residuals_deg).tolist()
        d["iterations"] = self.iterations
        d["converged"] = self.converged
        d["rank_warning"] = self.rank_warning
        return d


def up_tangent_basis(up: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic orthonormal basis of the plane perpendicular to up."""
    up = check_unit(up)
    a = np.zeros(3)
    a[int(np.argmin(np.abs(up)))] = 1.0
    e1 = np.cross(up, a)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(up, e1)
    return e1, e2


def apply_chart(pose: CameraPose, delta) -> CameraPose:
    """Pose reached from `pose` by a 6-vector chart step
    (dx, dy, dz, d_azimuth, du1, du2)."""
    d = np.asarray(delta, dtype=float).reshape(6)
    e1, e2 = up_tangent_basis(pose.up)
    up = pose.up + d[4] * e1 + d[5] * e2
    up = up / np.linalg.norm(up)
    return CameraPose(location=pose.location + d[:3], azimuth=pose.azimuth + d[3], up=up)


def _check_points(pose: CameraPose, corr) -> tuple[np.ndarray, np.ndarray]:
    rays = np.stack([c.ray for c in corr])
    pts = np.stack([c.world for c in corr])
    dist = np.linalg.norm(pts - pose.location, axis=1)
    bad = np.nonzero(dist < 1e-9)[0]
    if bad.size:
        raise DegenerateInput(f"world point {bad[0]} coincides with the camera location")
    return rays, pts


def residuals(pose: CameraPose, corr) -> np.ndarray:
    """Per-correspondence angular error (radians)."""
    rays, pts = _check_points(pose, corr)
    proj = world_to_pano(pose, pts)
    c = np.clip(np.sum(rays * proj, axis=1), -1.0, 1.0)
    return np.arccos(c)


def objective(pose: CameraPose, corr) -> float:
    r = residuals(pose, corr)
    return float(r @ r)


def _dual_pose_rotation(loc: Dual, az: Dual, up_raw: Dual) -> tuple[Dual, Dual]:
    """Forward-mode mirror of geometry.pose_rotation; returns (location, R).

    Works on raw (value, gradient) arrays to keep the per-call overhead low;
    the math is identical to the scalar path (minimal tilt I + K + K^2/(1+c),
    compass rotation, one Gram-Schmidt pass).
    """
    nparams = up_raw.grad.shape[-1]
    up = up_raw / dnorm(up_raw)
    uv, ug = up.val, up.grad  # (3,), (3, P)

    # K = skew(z x up) has only four nonzero entries
    kv = np.zeros((3, 3))
    kg = np.zeros((3, 3, nparams))
    kv[0, 2], kv[1, 2], kv[2, 0], kv[2, 1] = uv[0], uv[1], -uv[0], -uv[1]
    kg[0, 2], kg[1, 2], kg[2, 0], kg[2, 1] = ug[0], ug[1], -ug[0], -ug[1]
    k = Dual(kv, kg)
    k2 = dmatmul(k, k)
    inv = 1.0 / (1.0 + uv[2])
    sg = -ug[2] * inv * inv  # gradient of 1/(1+c)
    tilt_v = np.eye(3) + kv + k2.val * inv
    tilt_g = kg + k2.grad * inv + k2.val[..., None] * sg
    tilt = Dual(tilt_v, tilt_g)

    sa_v, ca_v = np.sin(az.val), np.cos(az.val)
    base_v = np.array([[ca_v, sa_v, 0.0], [-sa_v, ca_v, 0.0], [0.0, 0.0, 1.0]])
    base_g = np.zeros((3, 3, nparams))
    base_g[0, 0] = base_g[1, 1] = -sa_v * az.grad
    base_g[0, 1] = ca_v * az.grad
    base_g[1, 0] = -ca_v * az.grad
    r = dmatmul(tilt, Dual(base_v, base_g))

    # Same Gram-Schmidt pass as geometry.pose_rotation.
    upc = Dual(r.val[:, 2], r.grad[:, 2])
    upc = upc / dnorm(upc)
    fwd = Dual(r.val[:, 1], r.grad[:, 1])
    fwd = fwd - upc * (fwd * upc).sum()
    fwd = fwd / dnorm(fwd)
    right = dcross(fwd, upc)
    rot_v = np.column_stack([right.val, fwd.val, upc.val])
    rot_g = np.stack([right.grad, fwd.grad, upc.grad], axis=1)
    return loc, Dual(rot_v, rot_g)


def residual_jacobian(pose: CameraPose, corr) -> tuple[np.ndarray, np.ndarray]:
    """Residuals (radians) and their (n, 6) Jacobian in the chart at `pose`."""
    rays, pts = _check_points(pose, corr)
    e1, e2 = up_tangent_basis(pose.up)
    loc = Dual(pose.location, np.hstack([np.eye(3), np.zeros((3, 3))]))
    az = Dual.seed(pose.azimuth, 3, 6)
    up_grad = np.zeros((3, 6))
    up_grad[:, 4] = e1
    up_grad[:, 5] = e2
    up_raw = Dual(pose.up, up_grad)
    loc, rot = _dual_pose_rotation(loc, az, up_raw)
    d = Dual.constant(pts, 6) - Dual(
        np.broadcast_to(loc.val, pts.shape).copy(),
        np.broadcast_to(loc.grad[None, :, :], pts.shape + (6,)).copy(),
    )
    n = (d * d).sum(axis=1).sqrt()
    dhat = d / Dual(n.val[:, None], n.grad[:, None, :])
    proj = drows_matmul(dhat, rot)
    c = (Dual.constant(rays, 6) * proj).sum(axis=1)
    r = safe_arccos(c)
    return r.val, r.grad


def solve_pose(init: CameraPose, corr, max_iter: int = LM_MAX_ITER) -> PoseSolution:
    """Levenberg-Marquardt refinement from `init`.

    Damping: mu0 = 1e-3 * max diag(J'J); mu /= 3 on accepted steps, mu *= 2
    on rejections. Terminates on step norm < 1e-10, gradient inf-norm
    < 1e-10, or the iteration cap (converged flag set accordingly).
    """
    if len(corr) < MIN_PAIRS:
        raise InsufficientData(f"need at least {MIN_PAIRS} correspondences, got {len(corr)}")
    if len(corr) < RECOMMENDED_PAIRS:
        warnings.warn(
            f"only {len(corr)} correspondences; fewer than the recommended {RECOMMENDED_PAIRS}",
            stacklevel=2,
        )
    pose = init
    r, jac = residual_jacobian(pose, corr)
    cost = float(r @ r)
    jtj = jac.T @ jac
    sv = np.linalg.svd(jtj, compute_uv=False)
    rank_warning = bool(sv[0] <= 0 or sv[-1] / sv[0] < 1e-12)
    mu = LM_MU0_SCALE * float(np.max(np.diag(jtj)))
    if mu <= 0:
        mu = LM_MU0_SCALE
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        grad = jac.T @ r
        if np.max(np.abs(grad)) < LM_GRAD_TOL:
            converged = True
            break
        # Marquardt-scaled damping keeps meter and radian axes comparable.
        damp = np.diag(np.maximum(np.diag(jtj), 1e-12))
        try:
            step = np.linalg.solve(jtj + mu * damp, -grad)
        except np.linalg.LinAlgError:
            mu *= 2.0
            continue
        if np.linalg.norm(step) < LM_STEP_TOL:
            converged = True
            break
        candidate = apply_chart(pose, step)
        new_r = residuals(candidate, corr)
        new_cost = float(new_r @ new_r)
        if new_cost < cost:
            pose = candidate
            cost = new_cost
            r, jac = residual_jacobian(pose, corr)
            jtj = jac.T @ jac
            mu /= 3.0
        else:
            mu *= 2.0
    final = residuals(pose, corr)
    return PoseSolution(
        pose=pose,
        residuals_deg=np.degrees(final),
        iterations=iterations,
        converged=converged,
        rank_warning=rank_warning,
    )


def init_pose(
    lat_lon,
    azimuth: float,
    field: georeg.DeformationField,
    mesh: CityMesh,
    camera_height: float = CAMERA_HEIGHT,
) -> CameraPose:
    """Initial pose from geotags: plan location by inverting the deformation
    field, elevation from the terrain plus the camera height, up = world up."""
    if field.tangent_origin is None:
        raise DomainError("deformation field does not record its tangent-plane origin")
    lat, lon = float(lat_lon[0]), float(lat_lon[1])
    local = georeg.latlon_to_local(lat, lon, *field.tangent_origin)
    xy = georeg.invert_warp(field, local)
    z = terrain_elevation_at(mesh, xy[0], xy[1]) + camera_height
    return CameraPose(location=np.array([xy[0], xy[1], z]), azimuth=azimuth, up=WORLD_UP)


def nearest_rank_percentile(values, p: float) -> float:
    """Nearest-rank percentile: smallest element with cumulative share >= p."""
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        raise DomainError("percentile of empty data")
    k = int(np.ceil(p / 100.0 * v.size))
    return float(v[max(k, 1) - 1])


def reprojection_stats(solutions) -> dict:
    """Per-image median/p95 of residuals plus a pooled summary."""
    if not solutions:
        raise DomainError("no solutions given")
    per_image = []
    medians = []
    p95s = []
    pooled = []
    for s in solutions:
        res = np.asarray(s.residuals_deg, dtype=float)
        if res.size == 0:
            raise DomainError("solution without residuals")
        med = nearest_rank_percentile(res, 50.0)
        p95 = nearest_rank_percentile(res, 95.0)
        per_image.append({"median_deg": med, "p95_deg": p95})
        medians.append(med)
        p95s.append(p95)
        pooled.extend(res.tolist())
    return {
        "per_image": per_image,
        "median_deg_distribution": medians,
        "p95_deg_distribution": p95s,
        "pooled": {
            "median_deg": nearest_rank_percentile(pooled, 50.0),
            "p95_deg": nearest_rank_percentile(pooled, 95.0),
            "n_residuals": len(pooled),
        },
    }


def load_correspondences(path, grid: EquirectGrid | None = None):
    """Read the per-viewpoint JSON: {pano_id, width, height, pairs: [{u, v, world}]}.

    Rays are derived from the pano pixel coordinates. The pano dimensions
    come from the document unless a grid is supplied.
    Returns (pano_id, correspondences, metadata dict).
    """
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if grid is None:
        if "width" not in doc or "height" not in doc:
            raise DomainError("correspondence file lacks pano width/height")
        grid = EquirectGrid(width=int(doc["width"]), height=int(doc["height"]))
    corr = []
    for p in doc["pairs"]:
        ray = equirect_pixel_to_ray(grid, float(p["u"]), float(p["v"]))
        corr.append(Correspondence(ray=ray, world=np.asarray(p["world"], dtype=float)))
    meta = {k: doc[k] for k in doc if k != "pairs"}
    return doc.get("pano_id"), corr, meta
