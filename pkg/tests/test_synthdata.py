import numpy as np
import pytest

from poreflow.errors import GenerationError
from poreflow.grids import Trajectory
from poreflow.preprocess import KalmanConfig, kalman_rts_smooth
from poreflow.synthdata import (ScenarioConfig, _adjacent6, cell_centered_velocity,
                                discrete_divergence, generate_geometry,
                                generate_sequence)

SMALL = ScenarioConfig(
    dims=(20, 20, 20), n_grains=30, grain_radius=(3.0, 4.5), base_speed=0.2,
    jump_positions=(8.0,), jump_magnitude=2.2, front_start_frac=0.18,
    perturb_amp=0.8, n_tracers=16, n_frames=24, tracer_clearance=1.5, seed=0,
)


@pytest.fixture(scope="module")
def seq():
    return generate_sequence(SMALL)


class TestGeometry:
    def test_zero_grains_all_pore(self):
        cfg = ScenarioConfig(dims=(8, 8, 8), n_grains=0, n_tracers=4, n_frames=4)
        geo = generate_geometry(cfg)
        assert geo.mask.all()

    def test_single_sphere_volume(self):
        # seed 3 draws a fully interior sphere (boundary-clipped grains would
        # undercount the analytic volume)
        cfg = ScenarioConfig(dims=(32, 32, 32), n_grains=1, grain_radius=(8.0, 8.0),
                             porosity_band=(0.5, 0.999), seed=3)
        geo = generate_geometry(cfg)
        solid = (~geo.mask).sum()
        analytic = 4.0 / 3.0 * np.pi * 8.0 ** 3
        assert abs(solid - analytic) / analytic < 0.05

    def test_porosity_band(self, seq):
        p = seq.geometry.mask.mean()
        assert 0.1 < p < 0.6

    def test_connectivity_inlet_to_outlet(self, seq):
        from poreflow.kernels import flood_fill6

        pore = seq.geometry.mask
        inlet = pore[:, :, 0]
        z, y = np.nonzero(inlet)
        seeds = np.stack([np.zeros_like(z), y, z], axis=1).astype(np.int64)
        reach = flood_fill6(pore, np.ascontiguousarray(seeds))
        assert reach[:, :, -1].any()

    def test_deterministic(self):
        a = generate_geometry(SMALL)
        b = generate_geometry(SMALL)
        assert np.array_equal(a.values, b.values)

    def test_impossible_band_raises(self):
        cfg = ScenarioConfig(dims=(16, 16, 16), n_grains=1, grain_radius=(2.0, 2.0),
                             porosity_band=(0.1, 0.2), max_geometry_attempts=5)
        with pytest.raises(GenerationError):
            generate_geometry(cfg)


class TestSequence:
    def test_bit_exact_reproducibility(self):
        a = generate_sequence(SMALL)
        b = generate_sequence(SMALL)
        assert np.array_equal(a.geometry.values, b.geometry.values)
        for fa, fb in zip(a.occupancy, b.occupancy):
            assert np.array_equal(fa.values, fb.values)
        for va, vb in zip(a.velocities, b.velocities):
            assert np.array_equal(va, vb)
        for ta, tb in zip(a.trajectories, b.trajectories):
            assert np.array_equal(ta.positions, tb.positions)
            assert np.array_equal(ta.velocities, tb.velocities)

    def test_zero_speed_static(self):
        cfg = ScenarioConfig(dims=(16, 16, 16), n_grains=18, grain_radius=(3.0, 4.0),
                             base_speed=0.0, jump_positions=(), n_tracers=8,
                             n_frames=6, seed=0)
        s = generate_sequence(cfg)
        for occ in s.occupancy[1:]:
            assert np.array_equal(occ.values, s.occupancy[0].values)
        for tr in s.trajectories:
            assert np.allclose(tr.positions, tr.positions[0], atol=1e-12)

    def test_interface_advances(self, seq):
        vols = [occ.mask.sum() for occ in seq.occupancy]
        assert vols[-1] > vols[0]
        assert all(b >= a for a, b in zip(vols, vols[1:]))

    def test_jump_frame_displacement(self, seq):
        assert seq.jump_frames, "scenario must contain a jump"
        pos = np.stack([t.positions for t in seq.trajectories], axis=1)
        disp = np.linalg.norm(np.diff(pos, axis=0), axis=-1)
        med = np.median(disp, axis=1)
        for j in seq.jump_frames:
            assert med[j - 1] >= 3.0 * med[j - 2]

    def test_non_jump_displacement_below_one_voxel(self, seq):
        pos = np.stack([t.positions for t in seq.trajectories], axis=1)
        disp = np.linalg.norm(np.diff(pos, axis=0), axis=-1)
        jump_transitions = {j - 1 for j in seq.jump_frames}
        for t in range(disp.shape[0]):
            if t not in jump_transitions:
                assert disp[t].max() < 1.0

    def test_tracers_stay_in_pore(self, seq):
        pore = seq.geometry.mask
        for tr in seq.trajectories:
            vox = np.floor(tr.positions + 0.5).astype(int)
            assert pore[vox[:, 2], vox[:, 1], vox[:, 0]].all()

    def test_tracer_velocities_are_central_differences(self, seq):
        tr = seq.trajectories[0]
        p = tr.positions
        assert np.allclose(tr.velocities[1:-1], 0.5 * (p[2:] - p[:-2]), atol=1e-12)
        assert np.allclose(tr.velocities[0], p[1] - p[0], atol=1e-12)


class TestDivergence:
    def test_matched_divergence_tiny_in_interior(self, seq):
        pore = seq.geometry.mask
        for t in (2, len(seq.velocities) // 2):
            stag = seq.velocities[t]
            occ = seq.occupancy[t].mask
            wet = pore & ~occ
            interior = wet & ~_adjacent6(occ) & ~_adjacent6(~pore)
            a = SMALL.inlet_axis
            sl = [slice(None)] * 3
            sl[2 - a] = slice(-2, None)  # outlet layers excluded
            interior[tuple(sl)] = False
            if not interior.any():
                continue
            div = discrete_divergence(stag)
            cc = cell_centered_velocity(stag).data
            rms_v = np.sqrt((cc ** 2).sum(0)[wet].mean())
            if rms_v < 1e-12:
                continue
            rms_div = np.sqrt((div[interior] ** 2).mean())
            assert rms_div / rms_v < 1e-3

    def test_velocity_zero_in_solid_and_nonwetting(self, seq):
        t = 3
        cc = cell_centered_velocity(seq.velocities[t]).data
        solid = ~seq.geometry.mask
        assert np.all(cc[:, solid] == 0.0)


class TestSmoothingRecovery:
    def test_kalman_recovers_true_velocities(self, seq):
        rng = np.random.default_rng(99)
        errs = []
        for tr in seq.trajectories[:8]:
            noisy = Trajectory(tr.particle_id, tr.frames,
                               tr.positions + rng.normal(0, 0.3, tr.positions.shape))
            sm = kalman_rts_smooth(noisy, KalmanConfig())
            errs.append(sm.velocities[2:-2] - tr.velocities[2:-2])
        rmse = float(np.sqrt(np.mean(np.concatenate(errs) ** 2)))
        assert rmse < 0.1


class TestPersistence:
    def test_save_layout(self, seq, tmp_path):
        out = tmp_path / "ds"
        written = seq.save(out)
        names = {p.split("/")[-1] for p in map(str, written)}
        assert "geometry.vgrid" in names
        assert "tracks.csv" in names
        assert "scenario.json" in names
        assert f"occ_{len(seq.occupancy)-1:04d}.vgrid" in names

    def test_roundtrip_through_dataset(self, seq, tmp_path):
        from poreflow.training import SequenceDataset

        out = tmp_path / "ds"
        seq.save(out)
        ds = SequenceDataset.load(out)
        assert ds.n_frames == len(seq.occupancy)
        assert ds.n_particles == len(seq.trajectories)
        assert ds.jump_frames == seq.jump_frames
        # f32 round trip quantizes positions
        assert np.allclose(ds.positions[0], seq.positions_at(0), atol=1e-12)
        assert np.array_equal(ds.occupancy[3].values, seq.occupancy[3].values)
