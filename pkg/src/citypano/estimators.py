"""scikit-learn style estimators for the two fit-shaped algorithms.

These wrap the functional core so the deformation fit and the pose solver
compose with sklearn pipelines and model-selection tooling (get_params /
set_params / clone all work). The rest of the toolkit is not estimator
shaped and keeps its natural API.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import georeg, pose as pose_mod
from .errors import DomainError
from .geometry import CameraPose, world_to_pano


class GridDeformation(BaseEstimator, TransformerMixin):
    """Plan-coordinate deformation fitted from control points.

    Parameters
    ----------
    lam : regularization weight, or "cv" to select it by leave-one-out
        cross-validation over `lambda_grid`.
    cell : grid spacing in meters; None picks bbox diagonal / 32.
    grid : explicit GridSpec overriding `cell`.
    lambda_grid : candidates used when lam="cv".

    After fit, `transform` maps CAD plan coordinates to geodetic plan
    coordinates and `inverse_transform` goes back via Gauss-Newton.
    """

    def __init__(self, lam=1.0, cell=None, grid=None, lambda_grid=(0.01, 0.1, 1.0, 10.0, 100.0)):
        self.lam = lam
        self.cell = cell
        self.grid = grid
        self.lambda_grid = lambda_grid

    def fit(self, X, y):
        X = np.asarray(X, dtype=float).reshape(-1, 2)
        y = np.asarray(y, dtype=float).reshape(-1, 2)
        if len(X) != len(y):
            raise DomainError("X and y must pair up")
        pairs = [georeg.ControlPair(a, b) for a, b in zip(X, y)]
        grid = self.grid or georeg.GridSpec.from_points(X, cell=self.cell)
        if self.lam == "cv":
            lam, errors = georeg.select_lambda_cv(pairs, grid, self.lambda_grid)
            self.cv_errors_ = errors
        else:
            lam = float(self.lam)
        self.lambda_ = lam
        self.field_ = georeg.fit_field(pairs, grid, lam)
        return self

    def transform(self, X):
        check_is_fitted(self, "field_")
        return georeg.warp(self.field_, np.asarray(X, dtype=float).reshape(-1, 2))

    def inverse_transform(self, Y):
        check_is_fitted(self, "field_")
        y = np.asarray(Y, dtype=float).reshape(-1, 2)
        return np.stack([georeg.invert_warp(self.field_, row) for row in y])


class PanoramaPoseEstimator(BaseEstimator):
    """6-DoF panorama pose fitted from 2D-3D correspondences.

    fit(X, y) takes world points X (n, 3) and observed unit rays y (n, 3);
    predict(X) returns the rays the fitted pose would see. The initial pose
    can be passed to fit (keyword) or at construction.
    """

    def __init__(self, init_pose=None, max_iter=pose_mod.LM_MAX_ITER):
        self.init_pose = init_pose
        self.max_iter = max_iter

    def fit(self, X, y, init: CameraPose | None = None):
        X = np.asarray(X, dtype=float).reshape(-1, 3)
        y = np.asarray(y, dtype=float).reshape(-1, 3)
        if len(X) != len(y):
            raise DomainError("X and y must pair up")
        corr = [pose_mod.Correspondence(ray=r, world=w) for r, w in zip(y, X)]
        start = init or self.init_pose
        if start is None:
            start = CameraPose(location=X.mean(axis=0) + [0.0, 0.0, 1.0], azimuth=0.0)
        solution = pose_mod.solve_pose(start, corr, max_iter=self.max_iter)
        self.solution_ = solution
        self.pose_ = solution.pose
        self.residuals_deg_ = solution.residuals_deg
        self.converged_ = solution.converged
        return self

    def predict(self, X):
        check_is_fitted(self, "pose_")
        return world_to_pano(self.pose_, np.asarray(X, dtype=float).reshape(-1, 3))

    def score(self, X, y):
        """Negative mean squared angular error (radians^2), sklearn-style."""
        check_is_fitted(self, "pose_")
        proj = self.predict(X)
        y = np.asarray(y, dtype=float).reshape(-1, 3)
        ang = np.arccos(np.clip(np.sum(proj * y, axis=1), -1.0, 1.0))
        return -float(np.mean(ang**2))
