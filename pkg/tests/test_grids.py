import numpy as np
import pytest

from wacyl.grids import GridFn, SpatialGrid, TimeGrid, fornberg_weights


def test_time_grid_geometric():
    tg = TimeGrid(20.0, n_points=64)
    assert tg.points[0] == 1.0
    assert tg.points[-1] >= 20.0 * (1 - 1e-12)
    ratios = tg.points[1:] / tg.points[:-1]
    assert np.allclose(ratios, tg.gamma, rtol=1e-12)
    assert tg.gamma > 1.0


def test_time_grid_rejects_bad_input():
    with pytest.raises(ValueError):
        TimeGrid(0.5, n_points=8)
    with pytest.raises(ValueError):
        TimeGrid(10.0, gamma=0.9)


def test_spatial_grid_invariants():
    with pytest.raises(ValueError):
        SpatialGrid(1, 100)          # not a power of two
    with pytest.raises(ValueError):
        SpatialGrid(1, 64, m=1)      # unsupported window dimension
    sg = SpatialGrid(2, 32, m=2, window_halfwidth=1.5, window_points=9)
    assert sg.shape == (32, 32, 9, 9)
    assert sg.window_axes[0][0] == -1.5 and sg.window_axes[0][-1] == 1.5
    assert sg.window_axes[0][4] == 0.0


def test_gridfn_rejects_nonfinite():
    tg = TimeGrid(4.0, n_points=4)
    sg = SpatialGrid(1, 8)
    vals = np.zeros((4, 8, 1))
    vals[1, 2, 0] = np.inf
    with pytest.raises(ValueError):
        GridFn(sg, tg, vals)


def test_spectral_derivative_exact_for_modes():
    tg = TimeGrid(4.0, n_points=4)
    sg = SpatialGrid(1, 64)
    f = GridFn.from_callable(sg, tg, lambda q, t: np.sin(2 * np.pi * 3 * q))
    df = f.dq(0)
    exact = GridFn.from_callable(
        sg, tg, lambda q, t: 6 * np.pi * np.cos(2 * np.pi * 3 * q))
    assert np.abs(df.values - exact.values).max() < 1e-10


def test_time_derivative_high_order():
    # d/dt of -1/t is 1/t^2; the t^2-weighted error stays tiny
    tg = TimeGrid(20.0, n_points=64)
    sg = SpatialGrid(1, 8)
    f = GridFn.from_callable(sg, tg, lambda q, t: -1.0 / t + 0 * q)
    df = f.dt()
    err = np.abs(df.values[:, 0, 0] - 1.0 / tg.points ** 2)
    assert (err * tg.points ** 2).max() < 1e-9


def test_fornberg_weights_differentiate_polynomials():
    x = np.array([0.0, 0.3, 0.7, 1.1, 1.6])
    w = fornberg_weights(0.7, x, 1)
    coeffs = np.array([2.0, -1.0, 0.5, 0.25, -0.1])
    vals = sum(c * x ** k for k, c in enumerate(coeffs))
    deriv = sum(k * c * 0.7 ** (k - 1)
                for k, c in enumerate(coeffs) if k >= 1)
    assert abs(w @ vals - deriv) < 1e-12


def test_serialization_roundtrip(tmp_path):
    tg = TimeGrid(6.0, n_points=10)
    sg = SpatialGrid(1, 16)
    f = GridFn.from_callable(
        sg, tg, lambda q, t: np.stack(
            [np.sin(2 * np.pi * q) / t, np.cos(2 * np.pi * q) / t ** 2],
            axis=-1))
    path = tmp_path / "f.wgf"
    f.save(path)
    g = GridFn.load(path)
    assert g.components == 2
    assert np.array_equal(g.values, f.values)
    assert np.allclose(g.times.points, f.times.points)
    h = GridFn.from_json(f.to_json())
    assert np.allclose(h.values, f.values)


def test_interpolant_matches_band_limited():
    tg = TimeGrid(8.0, n_points=24)
    sg = SpatialGrid(1, 32)
    f = GridFn.from_callable(
        sg, tg, lambda q, t: np.sin(2 * np.pi * 2 * q) / t)
    interp = f.interpolator()
    rng = np.random.default_rng(0)
    for _ in range(10):
        q = rng.uniform(0, 1, (1, 1))
        t = rng.uniform(1.0, 8.0)
        got = interp(q, t)[0, 0]
        assert abs(got - np.sin(2 * np.pi * 2 * q[0, 0]) / t) < 1e-7
    # derivative path
    got = interp(np.array([[0.2]]), 2.0, derivative=0)[0, 0]
    want = 4 * np.pi * np.cos(2 * np.pi * 2 * 0.2) / 2.0
    assert abs(got - want) < 1e-7
