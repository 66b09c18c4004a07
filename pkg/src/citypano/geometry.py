"""Shared coordinate conventions, spherical/perspective projection, view sampling.

Conventions (fixed once, used everywhere):
  - World frame: z is up. Azimuth is a compass heading: the camera forward
    direction at azimuth a is (sin a, cos a, 0), i.e. +y ("north") at a=0,
    +x ("east") at a=pi/2.
  - Panorama camera-local frame: y forward, z up, x right.
  - Equirectangular pixels: longitude phi = 2*pi*(u/width - 1/2), latitude
    theta = pi*(1/2 - v/height), ray = (cos t*sin p, cos t*cos p, sin t).
    Pixel centers sit at integer + 0.5; public APIs take fractional coords.
  - Perspective camera frame: x right, y down, z forward; square pixels,
    focal f = (width/2)/tan(fov/2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInput, DomainError

WORLD_UP = np.array([0.0, 0.0, 1.0])


def as_vec3(x) -> np.ndarray:
    v = np.asarray(x, dtype=float)
    if v.shape != (3,):
        raise DomainError(f"expected a 3-vector, got shape {v.shape}")
    return v


def unit3(x) -> np.ndarray:
    """Normalize to a unit 3-vector; rejects near-zero input."""
    v = as_vec3(x)
    n = np.linalg.norm(v)
    if n < 1e-12:
        raise DegenerateInput("cannot normalize a near-zero vector")
    return v / n


def check_unit(d, tol: float = 1e-9) -> np.ndarray:
    d = as_vec3(d)
    if abs(np.linalg.norm(d) - 1.0) > tol:
        raise DomainError(f"direction is not unit length: |d| = {np.linalg.norm(d)}")
    return d


@dataclass(frozen=True)
class CameraPose:
    """Panorama camera pose: location (m, world frame), azimuth (rad), up direction.

    Exactly 6 effective degrees of freedom: 3 location + 1 azimuth + 2 up.
    The up direction must point into the upper hemisphere (cameras are
    never upside down).
    """

    location: np.ndarray
    azimuth: float
    up: np.ndarray = field(default_factory=lambda: WORLD_UP.copy())

    def __post_init__(self):
        object.__setattr__(self, "location", as_vec3(self.location))
        object.__setattr__(self, "azimuth", float(self.azimuth))
        up = check_unit(self.up)
        if up @ WORLD_UP <= 0.0:
            raise DomainError("camera up direction must be within 90 deg of world up")
        object.__setattr__(self, "up", up)

    def to_dict(self) -> dict:
        return {
            "location": self.location.tolist(),
            "azimuth": self.azimuth,
            "up": self.up.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraPose":
        return cls(location=d["location"], azimuth=d["azimuth"], up=d.get("up", WORLD_UP))


@dataclass(frozen=True)
class PerspectiveIntrinsics:
    """Square-pixel pinhole view inside a panorama: fov plus yaw/pitch offsets (rad)."""

    fov_deg: float
    width: int
    height: int
    yaw: float = 0.0
    pitch: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.fov_deg < 180.0:
            raise DomainError("fov_deg must be in (0, 180)")
        if self.width < 1 or self.height < 1:
            raise DomainError("image dimensions must be >= 1")

    @property
    def focal(self) -> float:
        return (self.width / 2.0) / math.tan(math.radians(self.fov_deg) / 2.0)


@dataclass(frozen=True)
class EquirectGrid:
    """Pixel dimensions of a 2:1 equirectangular panorama."""

    width: int
    height: int

    def __post_init__(self):
        if self.width != 2 * self.height:
            raise DomainError("equirectangular panoramas must have width = 2 * height")


def equirect_pixel_to_ray(grid: EquirectGrid, u, v) -> np.ndarray:
    """Viewing direction of fractional panorama pixel(s) (u, v).

    Accepts scalars or broadcastable arrays; returns shape (..., 3).
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if np.any(u < 0) or np.any(u >= grid.width) or np.any(v < 0) or np.any(v > grid.height):
        raise DomainError("pixel coordinates outside the panorama")
    phi = 2.0 * np.pi * (u / grid.width - 0.5)
    theta = np.pi * (0.5 - v / grid.height)
    ct = np.cos(theta)
    d = np.stack([ct * np.sin(phi), ct * np.cos(phi), np.sin(theta)], axis=-1)
    return d


def ray_to_equirect_pixel(grid: EquirectGrid, d) -> tuple[np.ndarray, np.ndarray]:
    """Fractional panorama pixel of unit direction(s); u = 0 at the poles."""
    d = np.asarray(d, dtype=float)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    phi = np.arctan2(x, y)
    theta = np.arcsin(np.clip(z, -1.0, 1.0))
    u = grid.width * (phi / (2.0 * np.pi) + 0.5)
    v = grid.height * (0.5 - theta / np.pi)
    at_pole = np.hypot(x, y) < 1e-12
    u = np.where(at_pole, 0.0, u)
    if u.ndim == 0:
        return float(u), float(v)
    return u, v


def minimal_rotation(a, b) -> np.ndarray:
    """Rotation matrix taking unit vector a to unit vector b by the smallest angle."""
    a = unit3(a)
    b = unit3(b)
    c = float(a @ b)
    axis = np.cross(a, b)
    s = np.linalg.norm(axis)
    if s < 1e-15:
        if c > 0.0:
            return np.eye(3)
        raise DegenerateInput("minimal rotation undefined for antipodal vectors")
    axis = axis / s
    k = np.array(
        [
            [0.0, -axis[2], axis[1]],
            [axis[2], 0.0, -axis[0]],
            [-axis[1], axis[0], 0.0],
        ]
    )
    return np.eye(3) + s * k + (1.0 - c) * (k @ k)


def pose_rotation(pose: CameraPose) -> np.ndarray:
    """Camera-to-world rotation for a panorama pose.

    Columns are the camera right/forward/up axes in world coordinates:
    forward is world +y swung by azimuth about world up, then the whole frame
    is tilted by the minimal rotation taking world up onto pose.up. One
    Gram-Schmidt pass re-orthonormalizes against rounding drift.
    """
    sa, ca = math.sin(pose.azimuth), math.cos(pose.azimuth)
    base = np.array(
        [
            [ca, sa, 0.0],
            [-sa, ca, 0.0],
            [0.0, 0.0, 1.0],
        ]
    )  # columns: right, forward, up at zero tilt
    r = minimal_rotation(WORLD_UP, pose.up) @ base
    right, fwd, up = r[:, 0], r[:, 1], r[:, 2]
    up = up / np.linalg.norm(up)
    fwd = fwd - (fwd @ up) * up
    fwd = fwd / np.linalg.norm(fwd)
    right = np.cross(fwd, up)
    return np.column_stack([right, fwd, up])


def world_to_pano(pose: CameraPose, x) -> np.ndarray:
    """Unit direction(s) of world point(s) in the panorama camera frame."""
    x = np.asarray(x, dtype=float)
    d = x - pose.location
    n = np.linalg.norm(d, axis=-1, keepdims=True)
    if np.any(n < 1e-12):
        raise DegenerateInput("world point coincides with the camera location")
    return (d / n) @ pose_rotation(pose)  # row @ R == R.T @ col


def view_rotation(intr: PerspectiveIntrinsics) -> np.ndarray:
    """Perspective-camera-to-panorama rotation for a yaw/pitch view.

    Yaw follows the azimuth compass convention; positive pitch tilts up.
    Columns are the perspective x/y/z axes (right/down/forward) expressed
    in the panorama camera frame.
    """
    sy, cy = math.sin(intr.yaw), math.cos(intr.yaw)
    sp, cp = math.sin(intr.pitch), math.cos(intr.pitch)
    fwd = np.array([cp * sy, cp * cy, sp])
    up = np.array([-sp * sy, -sp * cy, cp])
    right = np.cross(fwd, up)
    return np.column_stack([right, -up, fwd])


def perspective_project(intr: PerspectiveIntrinsics, d_cam) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pinhole projection of camera-frame direction(s); (u, v, in_front).

    u, v may fall outside the image; in_front is False when z <= 0.
    """
    d = np.asarray(d_cam, dtype=float)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    in_front = z > 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intr.width / 2.0 + intr.focal * x / z
        v = intr.height / 2.0 + intr.focal * y / z
    if np.ndim(u) == 0:
        return float(u), float(v), bool(in_front)
    return u, v, in_front


def unproject_pixel(intr: PerspectiveIntrinsics, u, v) -> np.ndarray:
    """Unit camera-frame direction through fractional perspective pixel(s)."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    x = (u - intr.width / 2.0) / intr.focal
    y = (v - intr.height / 2.0) / intr.focal
    d = np.stack([x, y, np.ones_like(x)], axis=-1)
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def make_view_set(
    seed, *, fov_deg: float = 90.0, width: int = 512, height: int = 512
) -> list[PerspectiveIntrinsics]:
    """Standard 8-view sampling: yaws 0..315 deg in 45 deg steps, pitches
    drawn i.i.d. uniform in [0, 45] deg from the seed."""
    rng = np.random.default_rng(seed)
    pitches = rng.uniform(0.0, 45.0, size=8)
    return [
        PerspectiveIntrinsics(
            fov_deg=fov_deg,
            width=width,
            height=height,
            yaw=math.radians(45.0 * k),
            pitch=math.radians(pitches[k]),
        )
        for k in range(8)
    ]
