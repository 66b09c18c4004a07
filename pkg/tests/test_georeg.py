import numpy as np
import pytest

from citypano.errors import ConvergenceError, DomainError, OutOfDomain, RankDeficiencyError
from citypano.georeg import (
    ControlPair,
    DeformationField,
    GridSpec,
    field_objective,
    fit_field,
    identity_field,
    invert_warp,
    latlon_to_local,
    load_pairs_csv,
    local_to_latlon,
    select_lambda_cv,
    warp,
)

GRID = GridSpec(origin=(0.0, 0.0), cell=10.0, nx=12, ny=12)


def translation_pairs(rng, n=10, t=(5.0, -3.0)):
    pts = rng.uniform(5, 95, size=(n, 2))
    return [ControlPair(p, p + np.asarray(t)) for p in pts], pts


def quadratic_warp(xy, scale=600.0):
    """Smooth synthetic ground-truth warp: affine + gentle quadratic bend."""
    x, y = xy[..., 0] / scale, xy[..., 1] / scale
    wx = xy[..., 0] + 3.0 + 1.2 * scale * 0.004 * (x**2 - 0.3 * y)
    wy = xy[..., 1] - 2.0 + 1.2 * scale * 0.004 * (y**2 + 0.4 * x * y)
    return np.stack([wx, wy], axis=-1)


def make_cv_fixture(seed=7, noise=0.1, n_side=7):
    """44 well-spread control pairs from the quadratic warp plus noise."""
    rng = np.random.default_rng(seed)
    scale = 600.0
    g = np.linspace(30, scale - 30, n_side)
    gx, gy = np.meshgrid(g, g)
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    pts = pts[rng.permutation(len(pts))[:44]]
    pts += rng.uniform(-15, 15, size=pts.shape)
    wgs = quadratic_warp(pts, scale) + rng.normal(0, noise, size=pts.shape)
    pairs = [ControlPair(a, b) for a, b in zip(pts, wgs)]
    grid = GridSpec.from_points(pts)
    return pairs, grid, pts


class TestWarp:
    def test_identity_field(self):
        f = identity_field(GRID)
        x = np.array([33.3, 71.2])
        assert np.allclose(warp(f, x), x, atol=1e-12)

    def test_constant_offset_field(self):
        f = identity_field(GRID)
        f = DeformationField(origin=f.origin, cell=f.cell, nx=f.nx, ny=f.ny, values=f.values + [5.0, -3.0])
        assert np.allclose(warp(f, [10.0, 10.0]), [15.0, 7.0], atol=1e-12)

    def test_2x2_ramp_cell_center_averages_corners(self):
        # corner values are pure x/y ramps; the center is the corner average
        f = DeformationField(
            origin=(0.0, 0.0), cell=1.0, nx=2, ny=2,
            values=np.array([[[0, 0], [1, 0]], [[0, 1], [1, 1]]], dtype=float),
        )
        assert np.allclose(warp(f, [0.5, 0.5]), [0.5, 0.5])

    def test_no_extrapolation(self):
        f = identity_field(GRID)
        with pytest.raises(OutOfDomain):
            warp(f, [-1.0, 50.0])
        with pytest.raises(OutOfDomain):
            warp(f, [50.0, 111.0])


class TestFitField:
    def test_translation_with_large_lambda(self, rng):
        pairs, pts = translation_pairs(rng)
        f = fit_field(pairs, GRID, lam=1e4)
        resid = np.linalg.norm(warp(f, pts) - (pts + [5.0, -3.0]), axis=1)
        assert resid.max() < 1e-6

    def test_single_pair_interpolates_exactly(self):
        pair = ControlPair([40.0, 60.0], [140.0, -60.0])
        f = fit_field([pair], GRID, lam=1.0)
        assert np.linalg.norm(warp(f, pair.x_cad) - pair.x_wgs) < 1e-6

    def test_rank_deficiency_at_lambda_zero(self, rng):
        pairs, _ = translation_pairs(rng)
        with pytest.raises(RankDeficiencyError):
            fit_field(pairs, GRID, lam=0.0)

    def test_negative_lambda_rejected(self, rng):
        pairs, _ = translation_pairs(rng)
        with pytest.raises(DomainError):
            fit_field(pairs, GRID, lam=-1.0)

    def test_reported_objective_reproducible(self, rng):
        pairs, grid, _ = make_cv_fixture()
        f = fit_field(pairs, grid, lam=1.0)
        obj, data, smooth = field_objective(f, pairs, 1.0)
        assert abs(data - f.fit_data_term) < 1e-9 * (1 + data)
        assert abs(smooth - f.fit_smooth_term) < 1e-9 * (1 + smooth)
        assert abs(obj - f.fit_objective) < 1e-9 * (1 + obj)

    def test_solution_beats_identity_field(self):
        pairs, grid, _ = make_cv_fixture()
        for lam in (0.01, 1.0, 100.0):
            f = fit_field(pairs, grid, lam)
            obj_fit, _, _ = field_objective(f, pairs, lam)
            obj_id, _, _ = field_objective(identity_field(grid), pairs, lam)
            assert obj_fit <= obj_id + 1e-9

    def test_regularization_path_monotone(self):
        pairs, grid, _ = make_cv_fixture()
        lams = [1e-3, 1e-1, 1e1, 1e3]
        data_terms = []
        smooth_terms = []
        for lam in lams:
            f = fit_field(pairs, grid, lam)
            data_terms.append(f.fit_data_term)
            smooth_terms.append(f.fit_smooth_term)
        for a, b in zip(data_terms, data_terms[1:]):
            assert a <= b + 1e-9
        for a, b in zip(smooth_terms, smooth_terms[1:]):
            assert a >= b - 1e-9

    def test_translation_equivariance(self):
        pairs, grid, _ = make_cv_fixture()
        t = np.array([123.4, -77.7])
        shifted = [ControlPair(p.x_cad, p.x_wgs + t) for p in pairs]
        f0 = fit_field(pairs, grid, lam=1.0)
        f1 = fit_field(shifted, grid, lam=1.0)
        assert np.max(np.abs(f1.values - (f0.values + t))) < 1e-8

    def test_gradient_norm_small_at_solution(self):
        pairs, grid, _ = make_cv_fixture()
        f = fit_field(pairs, grid, lam=0.5)
        # finite-difference directional derivatives of the objective ~ 0
        obj0, _, _ = field_objective(f, pairs, 0.5)
        rng = np.random.default_rng(0)
        for _ in range(5):
            d = rng.normal(size=f.values.shape)
            d /= np.linalg.norm(d)
            h = 1e-6
            fp = DeformationField(origin=f.origin, cell=f.cell, nx=f.nx, ny=f.ny, values=f.values + h * d)
            fm = DeformationField(origin=f.origin, cell=f.cell, nx=f.nx, ny=f.ny, values=f.values - h * d)
            slope = (field_objective(fp, pairs, 0.5)[0] - field_objective(fm, pairs, 0.5)[0]) / (2 * h)
            assert abs(slope) < 1e-6 * (1 + obj0)


class TestSelectLambdaCV:
    def test_translation_ties_break_to_largest(self, rng):
        pairs, _ = translation_pairs(rng, n=8)
        lam, errors = select_lambda_cv(pairs, GRID, [0.1, 1.0, 10.0])
        assert lam == 10.0
        assert max(errors) < 1e-6

    def test_smooth_warp_attains_minimum(self):
        pairs, grid, _ = make_cv_fixture()
        lams = [1e-4, 1e-2, 1e0, 1e2, 1e4]
        lam, errors = select_lambda_cv(pairs, grid, lams)
        chosen = errors[lams.index(lam)]
        assert chosen <= min(errors) + 1e-9 * (1 + min(errors))

    def test_two_pairs_smallest_legal_input(self):
        pairs = [ControlPair([10, 10], [11, 12]), ControlPair([60, 70], [62, 71])]
        lam, errors = select_lambda_cv(pairs, GRID, [1.0])
        assert lam == 1.0
        assert all(np.isfinite(errors))

    def test_cv_accuracy_on_noisy_quadratic_warp(self):
        pairs, grid, _ = make_cv_fixture()
        lam, errors = select_lambda_cv(pairs, grid, [1e-3, 1e-2, 1e-1, 1e0, 1e1, 1e2])
        assert min(errors) <= 0.3  # m, on the 0.1 m noise fixture


class TestInvertWarp:
    def test_identity(self):
        f = identity_field(GRID)
        y = np.array([42.0, 17.0])
        assert np.allclose(invert_warp(f, y), y, atol=1e-9)

    def test_constant_offset(self):
        f = identity_field(GRID)
        f = DeformationField(origin=f.origin, cell=f.cell, nx=f.nx, ny=f.ny, values=f.values + [5.0, -3.0])
        assert np.allclose(invert_warp(f, [20.0, 30.0]), [15.0, 33.0], atol=1e-9)

    def test_round_trip_on_random_smooth_field(self, rng):
        pairs, grid, _ = make_cv_fixture()
        f = fit_field(pairs, grid, lam=1.0)
        lo, hi = f.domain()
        for _ in range(25):
            x = rng.uniform(lo + 1.0, hi - 1.0)
            y = warp(f, x)
            xi = invert_warp(f, y)
            assert np.linalg.norm(warp(f, xi) - y) < 1e-6
            assert np.linalg.norm(xi - x) < 1e-6

    def test_unreachable_target_raises(self):
        f = identity_field(GRID)
        with pytest.raises(ConvergenceError) as exc:
            invert_warp(f, [500.0, 500.0])
        assert exc.value.last is not None
        assert exc.value.residual > 0


class TestGeodetic:
    def test_tangent_round_trip(self):
        lat0, lon0 = 51.5, -0.1
        lat, lon = 51.504, -0.093
        xy = latlon_to_local(lat, lon, lat0, lon0)
        back = local_to_latlon(xy, lat0, lon0)
        assert np.allclose(back, [lat, lon], atol=1e-12)

    def test_pairs_csv(self, tmp_path):
        p = tmp_path / "pairs.csv"
        p.write_text(
            "x_cad,y_cad,lat,lon\n"
            "0,0,51.5000,-0.1000\n"
            "100,50,51.5010,-0.0985\n"
            "200,-20,51.4995,-0.0970\n"
        )
        pairs, (lat0, lon0) = load_pairs_csv(p)
        assert len(pairs) == 3
        assert lat0 == pytest.approx((51.5 + 51.501 + 51.4995) / 3)
        # centroid maps to the local origin on average
        assert np.allclose(np.mean([q.x_wgs for q in pairs], axis=0), 0.0, atol=1e-9)

    def test_field_json_round_trip(self, tmp_path):
        pairs, grid, _ = make_cv_fixture()
        f = fit_field(pairs, grid, lam=1.0)
        f.tangent_origin = (51.5, -0.1)
        path = tmp_path / "field.json"
        f.save(path)
        g = DeformationField.load(path)
        assert np.max(np.abs(g.values - f.values)) == 0.0
        assert g.tangent_origin == (51.5, -0.1)
        assert (g.nx, g.ny, g.cell) == (f.nx, f.ny, f.cell)
