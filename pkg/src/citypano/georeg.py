"""2D deformation between CAD plan coordinates and geodetic plan coordinates.

The map is a lookup table of absolute target coordinates on a regular grid,
evaluated by bilinear interpolation. Fitting minimizes

    sum_k |interp(values, x_cad_k) - x_wgs_k|^2  +  lam * |Lap(values)|_F^2

as a sparse linear least-squares problem (normal equations, conjugate
gradient). The discrete Laplacian uses centered second differences in the
interior and shifted one-sided ones on the boundary, so affine tables (in
particular pure translations) have exactly zero smoothness energy. Axes with
fewer than 3 nodes contribute no second difference.

Geodetic input is converted to a local metric tangent plane
(equirectangular approximation about the dataset centroid) before fitting.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, cg, factorized

from .errors import ConvergenceError, DomainError, OutOfDomain, RankDeficiencyError

EARTH_RADIUS = 6378137.0  # m, WGS84 equatorial
CG_RTOL = 1e-12
GRADIENT_TOL = 1e-8  # |grad| < tol * (1 + objective) after fitting
CV_TIE_TOL = 1e-9  # ties within tol*(1+best) break toward larger lambda


@dataclass(frozen=True)
class ControlPair:
    """One annotated plan correspondence, both sides in meters."""

    x_cad: np.ndarray
    x_wgs: np.ndarray

    def __post_init__(self):
        for name in ("x_cad", "x_wgs"):
            v = np.asarray(getattr(self, name), dtype=float).reshape(2)
            if not np.all(np.isfinite(v)):
                raise DomainError(f"{name} must be finite")
            object.__setattr__(self, name, v)


def stack_pairs(pairs) -> tuple[np.ndarray, np.ndarray]:
    if len(pairs) == 0:
        raise DomainError("need at least one control pair")
    cad = np.stack([p.x_cad for p in pairs])
    wgs = np.stack([p.x_wgs for p in pairs])
    return cad, wgs


@dataclass(frozen=True)
class GridSpec:
    origin: tuple[float, float]
    cell: float
    nx: int
    ny: int

    def __post_init__(self):
        if self.cell <= 0:
            raise DomainError("cell must be positive")
        if self.nx < 2 or self.ny < 2:
            raise DomainError("grid needs nx, ny >= 2")

    @classmethod
    def from_points(cls, points, cell: float | None = None) -> "GridSpec":
        """Grid covering the points with one cell of margin.

        Default cell is the bounding-box diagonal / 32.
        """
        p = np.asarray(points, dtype=float).reshape(-1, 2)
        lo = p.min(axis=0)
        hi = p.max(axis=0)
        if cell is None:
            diag = float(np.linalg.norm(hi - lo))
            if diag <= 0:
                raise DomainError("cannot infer a cell size from coincident points")
            cell = diag / 32.0
        lo = lo - cell
        hi = hi + cell
        nx = int(math.ceil((hi[0] - lo[0]) / cell)) + 1
        ny = int(math.ceil((hi[1] - lo[1]) / cell)) + 1
        return cls(origin=(float(lo[0]), float(lo[1])), cell=float(cell), nx=max(nx, 2), ny=max(ny, 2))


@dataclass
class DeformationField:
    """Fitted lookup table; values[iy, ix] is the absolute target coordinate
    of grid node (ix, iy)."""

    origin: np.ndarray
    cell: float
    nx: int
    ny: int
    values: np.ndarray
    tangent_origin: tuple[float, float] | None = None  # (lat0, lon0) degrees
    fit_lambda: float | None = field(default=None, repr=False)
    fit_data_term: float | None = field(default=None, repr=False)
    fit_smooth_term: float | None = field(default=None, repr=False)

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float).reshape(2)
        self.values = np.asarray(self.values, dtype=float).reshape(self.ny, self.nx, 2)
        if self.nx < 2 or self.ny < 2 or self.cell <= 0:
            raise DomainError("grid needs nx, ny >= 2 and cell > 0")
        if not np.all(np.isfinite(self.values)):
            raise DomainError("field values must be finite")

    @property
    def fit_objective(self) -> float | None:
        if self.fit_data_term is None:
            return None
        return self.fit_data_term + self.fit_lambda * self.fit_smooth_term

    def node_positions(self) -> np.ndarray:
        """(ny, nx, 2) world positions of the grid nodes."""
        xs = self.origin[0] + self.cell * np.arange(self.nx)
        ys = self.origin[1] + self.cell * np.arange(self.ny)
        gx, gy = np.meshgrid(xs, ys)
        return np.stack([gx, gy], axis=-1)

    def domain(self) -> tuple[np.ndarray, np.ndarray]:
        hi = self.origin + self.cell * np.array([self.nx - 1, self.ny - 1])
        return self.origin.copy(), hi

    def to_dict(self) -> dict:
        d = {
            "origin": self.origin.tolist(),
            "cell": self.cell,
            "nx": self.nx,
            "ny": self.ny,
            "values": self.values.reshape(-1, 2).tolist(),
        }
        if self.tangent_origin is not None:
            d["tangent_origin"] = list(self.tangent_origin)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DeformationField":
        tangent = d.get("tangent_origin")
        return cls(
            origin=d["origin"],
            cell=d["cell"],
            nx=d["nx"],
            ny=d["ny"],
            values=np.asarray(d["values"], dtype=float),
            tangent_origin=tuple(tangent) if tangent is not None else None,
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path) -> "DeformationField":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def identity_field(grid: GridSpec) -> DeformationField:
    f = DeformationField(
        origin=np.asarray(grid.origin),
        cell=grid.cell,
        nx=grid.nx,
        ny=grid.ny,
        values=np.zeros((grid.ny, grid.nx, 2)),
    )
    f.values = f.node_positions()
    return f


def _cell_coords(field: DeformationField, x: np.ndarray):
    """Cell indices and local [0,1]^2 coordinates for in-domain points."""
    t = (x - field.origin) / field.cell
    lo, hi = field.domain()
    eps = 1e-9 * field.cell
    if np.any(x < lo - eps) or np.any(x > hi + eps):
        raise OutOfDomain("query point outside the deformation grid (no extrapolation)")
    ix = np.clip(np.floor(t[..., 0]).astype(int), 0, field.nx - 2)
    iy = np.clip(np.floor(t[..., 1]).astype(int), 0, field.ny - 2)
    tx = t[..., 0] - ix
    ty = t[..., 1] - iy
    return ix, iy, tx, ty


def warp(field: DeformationField, x) -> np.ndarray:
    """Bilinear interpolation of the lookup table at plan point(s) x."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = x.reshape(-1, 2)
    ix, iy, tx, ty = _cell_coords(field, pts)
    v = field.values
    out = (
        (1 - tx)[:, None] * (1 - ty)[:, None] * v[iy, ix]
        + tx[:, None] * (1 - ty)[:, None] * v[iy, ix + 1]
        + (1 - tx)[:, None] * ty[:, None] * v[iy + 1, ix]
        + tx[:, None] * ty[:, None] * v[iy + 1, ix + 1]
    )
    return out[0] if single else out


def _warp_jacobian(field: DeformationField, x: np.ndarray) -> np.ndarray:
    """Exact 2x2 Jacobian of the bilinear patch containing x."""
    ix, iy, tx, ty = _cell_coords(field, x.reshape(-1, 2))
    ix, iy, tx, ty = int(ix[0]), int(iy[0]), float(tx[0]), float(ty[0])
    v = field.values
    dgx = ((1 - ty) * (v[iy, ix + 1] - v[iy, ix]) + ty * (v[iy + 1, ix + 1] - v[iy + 1, ix])) / field.cell
    dgy = ((1 - tx) * (v[iy + 1, ix] - v[iy, ix]) + tx * (v[iy + 1, ix + 1] - v[iy, ix + 1])) / field.cell
    return np.column_stack([dgx, dgy])


def _interp_matrix(grid: GridSpec, points: np.ndarray) -> sp.csr_matrix:
    """Sparse bilinear sampling matrix: rows sum to 1."""
    n = len(points)
    t = (points - np.asarray(grid.origin)) / grid.cell
    eps = 1e-9
    if np.any(t < -eps) or np.any(t[:, 0] > grid.nx - 1 + eps) or np.any(t[:, 1] > grid.ny - 1 + eps):
        raise OutOfDomain("control point outside the grid")
    ix = np.clip(np.floor(t[:, 0]).astype(int), 0, grid.nx - 2)
    iy = np.clip(np.floor(t[:, 1]).astype(int), 0, grid.ny - 2)
    tx = t[:, 0] - ix
    ty = t[:, 1] - iy
    rows = np.repeat(np.arange(n), 4)
    cols = np.concatenate(
        [iy * grid.nx + ix, iy * grid.nx + ix + 1, (iy + 1) * grid.nx + ix, (iy + 1) * grid.nx + ix + 1]
    ).reshape(4, n).T.reshape(-1)
    w = np.stack([(1 - tx) * (1 - ty), tx * (1 - ty), (1 - tx) * ty, tx * ty], axis=1).reshape(-1)
    return sp.csr_matrix((w, (rows, cols)), shape=(n, grid.nx * grid.ny))


def _second_difference_rows(n: int) -> list[tuple[int, list[int], list[float]]]:
    """Per-index 3-point second-difference stencils; shifted at the ends."""
    if n < 3:
        return []
    rows = []
    for i in range(n):
        j = min(max(i, 1), n - 2)  # center of the stencil
        rows.append((i, [j - 1, j, j + 1], [1.0, -2.0, 1.0]))
    return rows


def laplacian_matrix(grid: GridSpec) -> sp.csr_matrix:
    """Discrete Laplacian on the grid (one row per node). Affine tables are
    exactly in its null space."""
    nn = grid.nx * grid.ny
    data, rows, cols = [], [], []
    xstencils = {i: (idx, w) for i, idx, w in _second_difference_rows(grid.nx)}
    ystencils = {i: (idx, w) for i, idx, w in _second_difference_rows(grid.ny)}
    for iy in range(grid.ny):
        for ix in range(grid.nx):
            r = iy * grid.nx + ix
            if ix in xstencils:
                idx, w = xstencils[ix]
                for j, wj in zip(idx, w):
                    rows.append(r)
                    cols.append(iy * grid.nx + j)
                    data.append(wj)
            if iy in ystencils:
                idx, w = ystencils[iy]
                for j, wj in zip(idx, w):
                    rows.append(r)
                    cols.append(j * grid.nx + ix)
                    data.append(wj)
    return sp.csr_matrix((data, (rows, cols)), shape=(nn, nn))


def _normal_preconditioner(m: sp.csr_matrix):
    """Sparse-LU preconditioner: exact on the SPD normal matrix, so CG
    converges in a couple of iterations. Jacobi fallback for singular cases."""
    try:
        solve = factorized(m.tocsc())
        return LinearOperator(m.shape, solve)
    except RuntimeError:
        d = m.diagonal()
        d[d <= 0] = 1.0
        return sp.diags(1.0 / d)


def _solve_normal_cg(m: sp.csr_matrix, rhs: np.ndarray, precond=None) -> np.ndarray:
    """Deterministic preconditioned CG on the (SPSD) normal matrix."""
    if precond is None:
        precond = _normal_preconditioner(m)
    x = np.zeros_like(rhs)
    target = max(CG_RTOL * np.linalg.norm(rhs), 0.25 * GRADIENT_TOL)
    for _ in range(6):
        x, _ = cg(m, rhs, x0=x, rtol=CG_RTOL, atol=0.0, maxiter=20 * len(rhs), M=precond)
        if np.linalg.norm(m @ x - rhs) <= target:
            break
    return x


def fit_field(pairs, grid: GridSpec, lam: float) -> DeformationField:
    """Fit the lookup table to control pairs with Laplacian regularization.

    Raises RankDeficiencyError when lam = 0 leaves free nodes unconstrained.
    The fitted field records its data/smoothness terms so the reported
    objective can be reproduced exactly.
    """
    if lam < 0:
        raise DomainError("lambda must be >= 0")
    cad, wgs = stack_pairs(pairs)
    a = _interp_matrix(grid, cad)
    lap = laplacian_matrix(grid)
    nn = grid.nx * grid.ny
    if lam == 0.0:
        if len(pairs) < nn or np.linalg.matrix_rank(a.toarray()) < nn:
            raise RankDeficiencyError(
                "system is rank-deficient at lambda = 0; use lambda > 0"
            )
    m = (a.T @ a + lam * (lap.T @ lap)).tocsr()
    precond = _normal_preconditioner(m)
    # Centering the targets makes translation equivariance exact.
    mu = wgs.mean(axis=0)
    sol = np.empty((nn, 2))
    for k in range(2):
        sol[:, k] = _solve_normal_cg(m, a.T @ (wgs[:, k] - mu[k]), precond)
    values = sol.reshape(grid.ny, grid.nx, 2) + mu
    f = DeformationField(
        origin=np.asarray(grid.origin),
        cell=grid.cell,
        nx=grid.nx,
        ny=grid.ny,
        values=values,
        fit_lambda=lam,
    )
    resid = warp(f, cad) - wgs
    f.fit_data_term = float(np.sum(resid**2))
    lv = lap @ values.reshape(nn, 2)
    f.fit_smooth_term = float(np.sum(lv**2))
    return f


def field_objective(field: DeformationField, pairs, lam: float) -> tuple[float, float, float]:
    """(objective, data term, smoothness term) of a field against pairs."""
    cad, wgs = stack_pairs(pairs)
    resid = warp(field, cad) - wgs
    data = float(np.sum(resid**2))
    grid = GridSpec(origin=tuple(field.origin), cell=field.cell, nx=field.nx, ny=field.ny)
    lv = laplacian_matrix(grid) @ field.values.reshape(-1, 2)
    smooth = float(np.sum(lv**2))
    return data + lam * smooth, data, smooth


def select_lambda_cv(pairs, grid: GridSpec, lambda_grid) -> tuple[float, list[float]]:
    """Leave-one-out cross-validation over the lambda candidates.

    Returns (best lambda, mean held-out error per candidate). Ties within
    a small tolerance break toward the larger lambda.
    """
    lambda_grid = list(lambda_grid)
    if len(pairs) < 2 or not lambda_grid:
        raise DomainError("need >= 2 pairs and a non-empty lambda grid")
    errors = []
    for lam in lambda_grid:
        errs = []
        for k in range(len(pairs)):
            rest = [p for i, p in enumerate(pairs) if i != k]
            f = fit_field(rest, grid, lam)
            errs.append(float(np.linalg.norm(warp(f, pairs[k].x_cad) - pairs[k].x_wgs)))
        errors.append(float(np.mean(errs)))
    best = min(errors)
    tol = CV_TIE_TOL * (1.0 + best)
    best_lam = max(lam for lam, e in zip(lambda_grid, errors) if e <= best + tol)
    return best_lam, errors


def invert_warp(field: DeformationField, x_wgs, x_init=None, max_iter: int = 100) -> np.ndarray:
    """Gauss-Newton inversion of the warp: find x with warp(x) = x_wgs.

    Iterates are clamped to the grid domain. Raises ConvergenceError (with
    the last iterate and residual attached) after max_iter iterations or
    when the final residual exceeds 1e-6 m.
    """
    y = np.asarray(x_wgs, dtype=float).reshape(2)
    lo, hi = field.domain()
    if x_init is not None:
        x = np.clip(np.asarray(x_init, dtype=float).reshape(2), lo, hi)
    else:
        nodes = field.node_positions().reshape(-1, 2)
        k = int(np.argmin(np.sum((field.values.reshape(-1, 2) - y) ** 2, axis=1)))
        x = nodes[k].copy()
    for _ in range(max_iter):
        r = warp(field, x) - y
        if np.linalg.norm(r) < 1e-9:
            break
        j = _warp_jacobian(field, x)
        try:
            step = np.linalg.solve(j, -r)
        except np.linalg.LinAlgError:
            step, *_ = np.linalg.lstsq(j, -r, rcond=None)
        x = np.clip(x + step, lo, hi)
        if np.linalg.norm(step) < 1e-9:
            break
    resid = float(np.linalg.norm(warp(field, x) - y))
    if resid >= 1e-6:
        raise ConvergenceError(
            f"warp inversion did not converge (residual {resid:.3g} m)",
            last=x,
            residual=resid,
        )
    return x


def latlon_to_local(lat, lon, lat0: float, lon0: float) -> np.ndarray:
    """Equirectangular tangent-plane projection about (lat0, lon0), degrees in."""
    lat = np.asarray(lat, dtype=float)
    lon = np.asarray(lon, dtype=float)
    x = EARTH_RADIUS * math.cos(math.radians(lat0)) * np.radians(lon - lon0)
    y = EARTH_RADIUS * np.radians(lat - lat0)
    return np.stack([x, y], axis=-1)


def local_to_latlon(xy, lat0: float, lon0: float) -> np.ndarray:
    xy = np.asarray(xy, dtype=float)
    lon = lon0 + np.degrees(xy[..., 0] / (EARTH_RADIUS * math.cos(math.radians(lat0))))
    lat = lat0 + np.degrees(xy[..., 1] / EARTH_RADIUS)
    return np.stack([lat, lon], axis=-1)


def load_pairs_csv(path) -> tuple[list[ControlPair], tuple[float, float]]:
    """Read x_cad,y_cad,lat,lon rows; geodetic side is projected to the local
    tangent plane about the centroid. Returns (pairs, (lat0, lon0))."""
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"x_cad", "y_cad", "lat", "lon"}
        if reader.fieldnames is None or not need.issubset(reader.fieldnames):
            raise DomainError(f"pairs CSV must have columns {sorted(need)}")
        for row in reader:
            rows.append(
                (float(row["x_cad"]), float(row["y_cad"]), float(row["lat"]), float(row["lon"]))
            )
    if not rows:
        raise DomainError("pairs CSV has no data rows")
    arr = np.asarray(rows)
    lat0 = float(arr[:, 2].mean())
    lon0 = float(arr[:, 3].mean())
    pairs = [
        ControlPair(x_cad=(r[0], r[1]), x_wgs=latlon_to_local(r[2], r[3], lat0, lon0))
        for r in rows
    ]
    return pairs, (lat0, lon0)
