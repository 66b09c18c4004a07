import numpy as np
import pytest
from sklearn.base import clone

import citypano as cp
from citypano.estimators import GridDeformation, PanoramaPoseEstimator
from citypano.synth import SceneSpec, generate_city, sample_correspondences


def quadratic_points(rng, n=44, scale=600.0):
    pts = rng.uniform(30, scale - 30, size=(n, 2))
    x, y = pts[:, 0] / scale, pts[:, 1] / scale
    wx = pts[:, 0] + 3.0 + 2.0 * (x**2 - 0.3 * y)
    wy = pts[:, 1] - 2.0 + 2.0 * (y**2 + 0.4 * x * y)
    return pts, np.stack([wx, wy], axis=1)


class TestGridDeformation:
    def test_fit_transform_inverse_round_trip(self, rng):
        X, y = quadratic_points(rng)
        est = GridDeformation(lam=1.0).fit(X, y)
        out = est.transform(X)
        assert np.sqrt(np.mean(np.sum((out - y) ** 2, axis=1))) < 0.2
        back = est.inverse_transform(out[:10])
        assert np.max(np.linalg.norm(back - X[:10], axis=1)) < 1e-5

    def test_cv_lambda_selection(self, rng):
        X, y = quadratic_points(rng)
        y = y + rng.normal(0, 0.1, size=y.shape)
        est = GridDeformation(lam="cv", lambda_grid=(0.01, 1.0, 100.0)).fit(X, y)
        assert est.lambda_ in (0.01, 1.0, 100.0)
        assert len(est.cv_errors_) == 3

    def test_sklearn_protocol(self, rng):
        est = GridDeformation(lam=2.0, cell=25.0)
        params = est.get_params()
        assert params["lam"] == 2.0 and params["cell"] == 25.0
        cloned = clone(est)
        assert cloned.get_params() == params
        X, y = quadratic_points(rng, n=12)
        cloned.fit(X, y)
        with pytest.raises(Exception):
            GridDeformation().transform(X)  # unfitted

    def test_fit_transform_shortcut(self, rng):
        X, y = quadratic_points(rng, n=20)
        out = GridDeformation(lam=1.0).fit_transform(X, y)
        assert out.shape == (20, 2)


class TestPanoramaPoseEstimator:
    def test_fit_predict_recovers_pose(self):
        mesh, _ = generate_city(SceneSpec(seed=31, n_buildings=5))
        truth = cp.CameraPose(location=[1.0, 0.0, 2.5], azimuth=0.2)
        corr = sample_correspondences(mesh, truth, 12, seed=0)
        X = np.stack([c.world for c in corr])
        y = np.stack([c.ray for c in corr])
        init = cp.CameraPose(location=truth.location + [3.0, -2.0, 1.0], azimuth=truth.azimuth + 0.1)
        est = PanoramaPoseEstimator(init_pose=init).fit(X, y)
        assert est.converged_
        assert np.linalg.norm(est.pose_.location - truth.location) < 1e-3
        pred = est.predict(X)
        ang = np.degrees(np.arccos(np.clip(np.sum(pred * y, axis=1), -1, 1)))
        assert np.max(ang) < 1e-4
        assert est.score(X, y) > -1e-10

    def test_sklearn_protocol(self):
        est = PanoramaPoseEstimator(max_iter=50)
        assert est.get_params()["max_iter"] == 50
        cloned = clone(est)
        assert cloned.get_params() == est.get_params()
