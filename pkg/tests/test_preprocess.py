import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from poreflow.errors import (ConfigError, DegenerateInputError, InputError,
                             InsufficientDataError)
from poreflow.grids import OccupancyField, Trajectory
from poreflow.preprocess import (CaState, KalmanConfig, euclidean_sdf,
                                 kalman_rts_smooth, resample_sequence,
                                 sdf_interpolate)


def occ(mask):
    return OccupancyField.from_mask(mask)


def ball(center, radius, n):
    zz, yy, xx = np.meshgrid(*[np.arange(n)] * 3, indexing="ij")
    return (xx - center) ** 2 + (yy - center) ** 2 + (zz - center) ** 2 <= radius ** 2


def brute_force_sdf(mask):
    """O(n^2) all-pairs oracle."""
    nz, ny, nx = mask.shape
    coords = np.stack(np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx),
                                  indexing="ij"), -1).reshape(-1, 3).astype(float)
    fg = coords[mask.reshape(-1)]
    bg = coords[~mask.reshape(-1)]

    def mind(pts, q):
        return np.sqrt(((pts[None] - q[:, None]) ** 2).sum(-1).min(1))

    d_in = np.where(mask.reshape(-1), mind(bg, coords), 0.0)
    d_out = np.where(~mask.reshape(-1), mind(fg, coords), 0.0)
    return (d_in - d_out).reshape(mask.shape)


class TestKalman:
    def test_constant_velocity_exact(self):
        t = np.arange(30)
        pos = np.stack([0.5 * t, 2.0 + 0.0 * t, 1.0 - 0.25 * t], axis=1)
        sm = kalman_rts_smooth(Trajectory(0, t, pos))
        assert np.abs(sm.velocities[:, 0] - 0.5).max() < 1e-6
        assert np.abs(sm.velocities[:, 2] + 0.25).max() < 1e-6
        assert np.abs(sm.positions - pos).max() < 1e-6

    def test_quadratic_track_acceleration(self):
        t = np.arange(40)
        pos = np.stack([0.01 * t ** 2, np.zeros(40), np.zeros(40)], axis=1)
        sm = kalman_rts_smooth(Trajectory(0, t, pos))
        # velocity of 0.01 t^2 is 0.02 t; acceleration check via velocity slope
        assert np.abs(sm.velocities[:, 0] - 0.02 * t).max() < 1e-4
        accel = np.diff(sm.velocities[:, 0])
        assert np.abs(accel - 0.02).max() < 1e-4

    def test_noisy_stationary_beats_finite_differences(self):
        rng = np.random.default_rng(42)
        t = np.arange(60)
        pos = rng.normal(0.0, 0.3, (60, 3))
        track = Trajectory(0, t, pos)
        sm = kalman_rts_smooth(track)
        fd = 0.5 * (pos[2:] - pos[:-2])  # central-difference oracle, same realization
        rms_sm = np.sqrt((sm.velocities[1:-1] ** 2).mean())
        rms_fd = np.sqrt((fd ** 2).mean())
        assert rms_sm < rms_fd

    def test_too_short(self):
        with pytest.raises(InsufficientDataError):
            kalman_rts_smooth(Trajectory(0, np.arange(2), np.zeros((2, 3))))

    def test_non_uniform_spacing(self):
        with pytest.raises(InputError):
            kalman_rts_smooth(Trajectory(0, np.array([0, 1, 3]), np.zeros((3, 3))))

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            KalmanConfig(q_jerk=0.0)

    def test_ca_state_validation(self):
        with pytest.raises(InputError):
            CaState(np.zeros(9), -np.eye(9))
        CaState(np.zeros(9), np.eye(9))


class TestEuclideanSdf:
    def test_single_voxel_example(self):
        m = np.zeros((11, 11, 11), bool)
        m[5, 5, 5] = True
        phi = euclidean_sdf(occ(m)).values
        assert phi[8, 5, 5] == pytest.approx(-3.0, abs=1e-9)  # point (5,5,8)

    def test_half_space_profile(self):
        nz = ny = nx = 10
        zz, yy, xx = np.meshgrid(*[np.arange(10)] * 3, indexing="ij")
        m = xx < 5
        phi = euclidean_sdf(occ(m)).values
        assert np.array_equal(phi, brute_force_sdf(m))

    def test_brute_force_random_masks(self):
        rng = np.random.default_rng(7)
        for _ in range(4):
            m = rng.random((8, 9, 10)) < rng.uniform(0.2, 0.8)
            if not m.any() or m.all():
                continue
            phi = euclidean_sdf(occ(m)).values
            assert np.array_equal(phi, brute_force_sdf(m))

    def test_sign_convention(self):
        rng = np.random.default_rng(8)
        m = rng.random((6, 6, 6)) < 0.5
        m[0, 0, 0], m[1, 1, 1] = True, False
        phi = euclidean_sdf(occ(m)).values
        assert np.all(phi[m] >= 1.0)
        assert np.all(phi[~m] <= -1.0)

    def test_uniform_mask_degenerate(self):
        with pytest.raises(DegenerateInputError):
            euclidean_sdf(occ(np.ones((4, 4, 4), bool)))
        with pytest.raises(DegenerateInputError):
            euclidean_sdf(occ(np.zeros((4, 4, 4), bool)))


class TestSdfInterpolate:
    def test_endpoint_identity(self):
        rng = np.random.default_rng(9)
        a = occ(rng.random((7, 7, 7)) < 0.5)
        b = occ(rng.random((7, 7, 7)) < 0.5)
        for m in (a, b):
            vals = m.values
            if vals.min() == vals.max():
                pytest.skip("degenerate draw")
        assert np.array_equal(sdf_interpolate(a, b, 0.0).values, a.values)
        assert np.array_equal(sdf_interpolate(a, b, 1.0).values, b.values)

    def test_nested_spheres_midpoint(self):
        n = 17
        v0 = occ(ball(8, 3, n))
        v1 = occ(ball(8, 7, n))
        mid = sdf_interpolate(v0, v1, 0.5)
        zz, yy, xx = np.meshgrid(*[np.arange(n)] * 3, indexing="ij")
        r = np.sqrt((xx - 8.0) ** 2 + (yy - 8.0) ** 2 + (zz - 8.0) ** 2)
        assert np.all(mid.mask[r <= 4.0])        # radius 5 +- 1 voxel
        assert np.all(~mid.mask[r >= 6.0])

    @settings(max_examples=15, deadline=None)
    @given(st.floats(0.0, 1.0))
    def test_self_interpolation_identity(self, t):
        rng = np.random.default_rng(10)
        v = occ(rng.random((6, 6, 6)) < 0.5)
        if v.values.min() == v.values.max():
            return
        assert np.array_equal(sdf_interpolate(v, v, t).values, v.values)

    def test_nested_volume_monotone(self):
        n = 17
        v0 = occ(ball(8, 3, n))
        v1 = occ(ball(8, 7, n))
        vols = [sdf_interpolate(v0, v1, t).mask.sum() for t in np.linspace(0, 1, 9)]
        assert all(b >= a for a, b in zip(vols, vols[1:]))

    def test_t_out_of_range(self):
        v = occ(ball(8, 3, 17))
        with pytest.raises(InputError):
            sdf_interpolate(v, v, 1.5)


class TestResampleSequence:
    def test_factor_two_counts(self):
        v0 = occ(ball(8, 3, 17))
        v1 = occ(ball(8, 7, 17))
        out = resample_sequence([v0, v1], 2)
        assert len(out) == 3
        mid = sdf_interpolate(v0, v1, 0.5)
        assert np.array_equal(out[1].values, mid.values)

    def test_identical_frames(self):
        v = occ(ball(8, 5, 17))
        out = resample_sequence([v, v], 4)
        assert len(out) == 5
        for o in out:
            assert np.array_equal(o.values, v.values)

    def test_three_frames_factor_four(self):
        v0 = occ(ball(8, 3, 17))
        v1 = occ(ball(8, 5, 17))
        v2 = occ(ball(8, 7, 17))
        out = resample_sequence([v0, v1, v2], 4)
        assert len(out) == 9
        assert np.array_equal(out[0].values, v0.values)
        assert np.array_equal(out[4].values, v1.values)
        assert np.array_equal(out[8].values, v2.values)

    def test_input_validation(self):
        with pytest.raises(InputError):
            resample_sequence([], 2)
        with pytest.raises(InputError):
            resample_sequence([occ(ball(8, 3, 17))] * 2, 1)
