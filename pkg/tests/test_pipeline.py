import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from volstc.interpolate import slice_samples
from volstc.model import GridSpec, STDataset, STSeries, Station
from volstc.pipeline import build_volume, cross_validate, fit_slice_model
from volstc.smoothing import smooth_series, smooth_volume


def grid_dataset(values, lons, lats, value_range=(0.0, 100.0), t0=0, dt=3600):
    """values: (S, T) array with NaN for missing."""
    values = np.asarray(values, dtype=np.float32)
    S, T = values.shape
    stations = [Station(f"s{i}", float(lons[i]), float(lats[i])) for i in range(S)]
    series = [STSeries(f"s{i}", values[i]) for i in range(S)]
    return STDataset(stations, series, t0=t0, dt=dt, T=T, value_range=value_range)


class TestSmoothing:
    def test_identity_window(self):
        v = np.array([3.0, 1.0, 4.0, 1.0, 5.0])
        np.testing.assert_array_equal(smooth_series(v, 1), v)

    def test_constant_fixed_point(self):
        v = np.full(50, 7.5)
        np.testing.assert_allclose(smooth_series(v, 24), v, atol=1e-12)

    def test_hand_case(self):
        np.testing.assert_allclose(smooth_series([0, 3, 6], 3), [1.5, 3.0, 4.5])

    def test_window_larger_than_series(self):
        v = np.array([1.0, 2.0, 6.0])
        got = smooth_series(v, 99)
        want = smooth_series(v, 3)
        np.testing.assert_allclose(got, want)

    def test_shift_equivariance_exact(self):
        rng = np.random.default_rng(0)
        v = rng.uniform(0, 10, 100)
        a = smooth_series(v + 13.0, 24)
        b = smooth_series(v, 24) + 13.0
        np.testing.assert_allclose(a, b, atol=1e-9)

    @given(st.integers(1, 30), st.integers(2, 40), st.integers(0, 10_000))
    @settings(max_examples=40, deadline=None)
    def test_matches_naive_oracle(self, window, T, seed):
        rng = np.random.default_rng(seed)
        v = rng.uniform(-5, 5, T)
        np.testing.assert_allclose(smooth_series(v, window),
                                   oracles.moving_average_naive(v, window),
                                   atol=1e-10)

    def test_volume_matches_series(self):
        rng = np.random.default_rng(1)
        data = rng.uniform(0, 9, (12, 3, 4))
        out = smooth_volume(data, window=5)
        for y in range(3):
            for x in range(4):
                np.testing.assert_allclose(out[:, y, x],
                                           smooth_series(data[:, y, x], 5),
                                           atol=1e-12)


class TestBuildVolume:
    def test_constant_dataset(self):
        vals = np.full((4, 6), 7.0)
        ds = grid_dataset(vals, lons=[1, 3, 5, 7], lats=[2, 4, 6, 8],
                          value_range=(0, 10))
        grid = GridSpec(extent=(0, 0, 10, 10), m=6, n=6)
        vol = build_volume(ds, grid, window=3)
        np.testing.assert_allclose(vol.data, 7.0, atol=1e-6)
        assert vol.data.dtype == np.float32

    def test_invalid_slice_linear_fill(self):
        # slice 1 has too few samples; neighbors are constant 5 and 9
        vals = np.array([
            [5.0, np.nan, 9.0],
            [5.0, np.nan, 9.0],
            [5.0, np.nan, 9.0],
            [5.0, 1.0, 9.0],
        ])
        ds = grid_dataset(vals, lons=[1, 3, 5, 7], lats=[2, 4, 6, 8],
                          value_range=(0, 10))
        grid = GridSpec(extent=(0, 0, 10, 10), m=5, n=5)
        vol = build_volume(ds, grid, window=1)  # window 1: no smoothing
        np.testing.assert_allclose(vol.data[0], 5.0, atol=1e-6)
        np.testing.assert_allclose(vol.data[1], 7.0, atol=1e-6)
        np.testing.assert_allclose(vol.data[2], 9.0, atol=1e-6)

    def test_boundary_fill_copies_nearest(self):
        vals = np.array([
            [np.nan, 4.0, np.nan],
            [np.nan, 4.0, np.nan],
            [np.nan, 4.0, np.nan],
        ])
        ds = grid_dataset(vals, lons=[1, 5, 9], lats=[1, 5, 9], value_range=(0, 10))
        grid = GridSpec(extent=(0, 0, 10, 10), m=4, n=4)
        vol = build_volume(ds, grid, window=1)
        np.testing.assert_array_equal(vol.data[0], vol.data[1])
        np.testing.assert_array_equal(vol.data[2], vol.data[1])

    def test_zero_valid_slices_error(self):
        vals = np.array([[1.0, np.nan], [np.nan, 2.0]])
        ds = grid_dataset(vals, lons=[1, 5], lats=[1, 5], value_range=(0, 10))
        grid = GridSpec(extent=(0, 0, 10, 10), m=4, n=4)
        with pytest.raises(ValueError, match="no slice"):
            build_volume(ds, grid)

    def test_values_within_range_and_finite(self):
        rng = np.random.default_rng(6)
        S, T = 8, 10
        vals = rng.uniform(0, 100, (S, T))
        vals[rng.random((S, T)) < 0.2] = np.nan
        ds = grid_dataset(vals, lons=rng.uniform(0.5, 9.5, S),
                          lats=rng.uniform(0.5, 9.5, S), value_range=(10.0, 80.0))
        grid = GridSpec(extent=(0, 0, 10, 10), m=8, n=8)
        vol = build_volume(ds, grid, window=5)
        assert np.all(np.isfinite(vol.data))
        assert vol.data.min() >= 10.0 and vol.data.max() <= 80.0

    def test_worker_count_bit_identical(self):
        rng = np.random.default_rng(12)
        S, T = 6, 14
        vals = rng.uniform(0, 50, (S, T))
        vals[rng.random((S, T)) < 0.15] = np.nan
        ds = grid_dataset(vals, lons=rng.uniform(1, 9, S),
                          lats=rng.uniform(1, 9, S), value_range=(0, 50))
        grid = GridSpec(extent=(0, 0, 10, 10), m=6, n=7)
        a = build_volume(ds, grid, window=3, workers=1)
        b = build_volume(ds, grid, window=3, workers=4)
        assert a.data.tobytes() == b.data.tobytes()

    def test_idw_method(self):
        vals = np.tile(np.array([[2.0], [4.0], [9.0]]), (1, 5))
        ds = grid_dataset(vals, lons=[2, 5, 8], lats=[2, 5, 8], value_range=(0, 10))
        grid = GridSpec(extent=(0, 0, 10, 10), m=5, n=5)
        vol = build_volume(ds, grid, method="idw", window=1)
        assert vol.data.min() >= 2.0 - 1e-6 and vol.data.max() <= 9.0 + 1e-6

    def test_unknown_method(self):
        vals = np.full((3, 4), 1.0)
        ds = grid_dataset(vals, lons=[1, 5, 9], lats=[1, 5, 9], value_range=(0, 2))
        grid = GridSpec(extent=(0, 0, 10, 10), m=4, n=4)
        with pytest.raises(ValueError, match="unknown"):
            build_volume(ds, grid, method="bilinear")


class TestCrossValidate:
    def test_constant_dataset_zero_error(self):
        vals = np.full((5, 6), 3.0)
        ds = grid_dataset(vals, lons=[1, 3, 5, 7, 9], lats=[9, 7, 5, 3, 1],
                          value_range=(0, 10))
        grid = GridSpec(extent=(0, 0, 10, 10), m=6, n=6)
        rep = cross_validate(ds, grid)
        assert rep.mae == pytest.approx(0.0, abs=1e-9)
        assert rep.rmse == pytest.approx(0.0, abs=1e-9)

    def test_mae_le_rmse(self):
        rng = np.random.default_rng(3)
        S, T = 8, 6
        vals = rng.uniform(0, 80, (S, T))
        ds = grid_dataset(vals, lons=rng.uniform(1, 9, S), lats=rng.uniform(1, 9, S),
                          value_range=(0, 100))
        grid = GridSpec(extent=(0, 0, 10, 10), m=5, n=5)
        for method in ("kriging", "idw"):
            rep = cross_validate(ds, grid, method=method)
            assert 0.0 <= rep.mae <= rep.rmse

    def test_needs_four_stations(self):
        vals = np.full((3, 4), 1.0)
        ds = grid_dataset(vals, lons=[1, 5, 9], lats=[1, 5, 9], value_range=(0, 2))
        grid = GridSpec(extent=(0, 0, 10, 10), m=4, n=4)
        with pytest.raises(ValueError, match="at least 4"):
            cross_validate(ds, grid)

    def test_matches_dense_oracle_loo(self):
        # smooth synthetic field sampled at 20 stations, one slice
        rng = np.random.default_rng(21)
        S = 20
        lons = rng.uniform(0.5, 9.5, S)
        lats = rng.uniform(0.5, 9.5, S)
        field_vals = 40 + 30 * np.sin(lons / 3.0) + 20 * np.cos(lats / 2.5)
        vals = np.tile(field_vals[:, None], (1, 2))
        ds = grid_dataset(vals, lons=lons, lats=lats, value_range=(0, 100))
        grid = GridSpec(extent=(0, 0, 10, 10), m=10, n=10)
        rep = cross_validate(ds, grid, max_slices=1)

        # brute-force leave-one-out on the same slice with the dense oracle
        pts = slice_samples(ds, grid, 0)
        errs = []
        for hold in range(S):
            keep = np.arange(S) != hold
            from volstc.interpolate import SliceSamples
            rest = SliceSamples(t=0, xs=pts.xs[keep], ys=pts.ys[keep],
                                zs=pts.zs[keep], ids=None)
            model = fit_slice_model(rest)
            pred, _ = oracles.dense_krige_cell(
                rest.xs, rest.ys, rest.zs, pts.xs[hold], pts.ys[hold],
                model.nugget, model.sill, model.range_param)
            errs.append(abs(pred - pts.zs[hold]))
        assert rep.mae == pytest.approx(float(np.mean(errs)), abs=1e-9)


def test_fit_slice_model_tiny_slice_fallback():
    from volstc.interpolate import SliceSamples
    pts = SliceSamples(t=0, xs=np.array([0.0, 1.0, 2.0]),
                       ys=np.array([0.0, 0.0, 0.0]),
                       zs=np.array([1.0, 5.0, 2.0]), ids=None)
    model = fit_slice_model(pts, n_lags=2)  # 2 bins < 3: heuristic fallback
    assert model.sill > 0 and model.range_param > 0
