"""Deterministic synthetic drainage sequences for training and verification.

A random sphere pack forms the solid phase; a perturbed front translated in
signed-distance fashion advances the non-wetting region each frame, with
jump events triggered when the front crosses configured positions (so the
jump is visible to models through the interface state, not an arbitrary
frame index). Velocities come from a potential-flow (Laplace) solve in the
wetting region driven from the interface toward the outlet, stored on a
face-staggered (MAC) grid whose matched discrete divergence is exactly zero
away from sources; tracers are advected through it with midpoint RK2.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .errors import GenerationError, InputError
from .grids import OccupancyField, Trajectory, VoxelGrid, write_trajectories, write_vgrid

SOR_TOL = 1e-11
SOR_BATCH = 64
SOR_MAX_SWEEPS = 40000


@dataclass(frozen=True)
class ScenarioConfig:
    dims: tuple[int, int, int] = (64, 64, 64)
    n_grains: int = 110
    grain_radius: tuple[float, float] = (5.0, 9.0)
    inlet_axis: int = 0
    porosity_band: tuple[float, float] = (0.1, 0.6)
    base_speed: float = 0.2
    jump_positions: tuple[float, ...] = ()
    jump_magnitude: float = 1.5
    front_start_frac: float = 0.15
    perturb_amp: float = 1.5
    n_tracers: int = 64
    n_frames: int = 80
    tracer_clearance: float = 1.5
    seed: int = 0
    max_geometry_attempts: int = 100

    def __post_init__(self):
        if self.inlet_axis not in (0, 1, 2):
            raise InputError("inlet_axis must be 0, 1, or 2")
        if self.n_frames < 2 or self.n_tracers < 1:
            raise InputError("need at least 2 frames and 1 tracer")


def _coord_grids(dims):
    nx, ny, nz = dims
    zz, yy, xx = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")
    return {0: xx, 1: yy, 2: zz}


def generate_geometry(cfg: ScenarioConfig) -> OccupancyField:
    """Random sphere pack voxelized as solid; pore space (value 1) is verified
    connected from the inlet face to the outlet face.

    Zero grains yields the all-pore field (porosity band applies to packs only).
    """
    nx, ny, nz = cfg.dims
    if cfg.n_grains == 0:
        return OccupancyField.from_mask(np.ones((nz, ny, nx), dtype=bool))
    rng = np.random.default_rng([cfg.seed, 0x47454F])
    coords = _coord_grids(cfg.dims)
    xx, yy, zz = coords[0], coords[1], coords[2]
    a = cfg.inlet_axis
    length = cfg.dims[a]
    lo, hi = cfg.porosity_band
    for _ in range(cfg.max_geometry_attempts):
        centers = rng.uniform([0, 0, 0], [nx, ny, nz], size=(cfg.n_grains, 3))
        radii = rng.uniform(cfg.grain_radius[0], cfg.grain_radius[1], size=cfg.n_grains)
        solid = np.zeros((nz, ny, nx), dtype=bool)
        for c, r in zip(centers, radii):
            solid |= ((xx - c[0]) ** 2 + (yy - c[1]) ** 2 + (zz - c[2]) ** 2) <= r * r
        pore = ~solid
        porosity = pore.mean()
        if not lo < porosity < hi:
            continue
        inlet = pore & (coords[a] == 0)
        outlet = pore & (coords[a] == length - 1)
        if not inlet.any() or not outlet.any():
            continue
        z, y, x = np.nonzero(inlet)
        seeds = np.ascontiguousarray(np.stack([x, y, z], axis=1).astype(np.int64))
        reach = kernels.flood_fill6(pore, seeds)
        if not (reach & outlet).any():
            continue
        return OccupancyField.from_mask(pore)
    raise GenerationError(
        f"no geometry in porosity band {cfg.porosity_band} with connected pore space "
        f"after {cfg.max_geometry_attempts} attempts")


def _front_sequence(cfg: ScenarioConfig) -> tuple[np.ndarray, list[int]]:
    f = cfg.front_start_frac * cfg.dims[cfg.inlet_axis]
    fronts = [f]
    used = [False] * len(cfg.jump_positions)
    jump_frames: list[int] = []
    for t in range(1, cfg.n_frames):
        nxt = fronts[-1] + cfg.base_speed
        for i, pj in enumerate(cfg.jump_positions):
            if not used[i] and fronts[-1] < pj <= nxt:
                nxt += cfg.jump_magnitude
                used[i] = True
                jump_frames.append(t)
        fronts.append(nxt)
    return np.array(fronts), jump_frames


def _adjacent6(mask: np.ndarray) -> np.ndarray:
    out = np.zeros_like(mask)
    out[1:, :, :] |= mask[:-1, :, :]
    out[:-1, :, :] |= mask[1:, :, :]
    out[:, 1:, :] |= mask[:, :-1, :]
    out[:, :-1, :] |= mask[:, 1:, :]
    out[:, :, 1:] |= mask[:, :, :-1]
    out[:, :, :-1] |= mask[:, :, 1:]
    return out


def _solve_potential(wetting: np.ndarray, source: np.ndarray, sink: np.ndarray) -> np.ndarray:
    """Masked 7-point Laplace solve: psi=1 on source, 0 on sink, no-flux at solid."""
    nz, ny, nx = wetting.shape
    pad = lambda m, v=0.0: np.pad(m.astype(np.float64), 1, constant_values=v)
    fluid = pad(wetting)
    update = pad(wetting & ~source & ~sink)
    psi = pad(source)  # 1 on source, 0 elsewhere (incl. sink)
    nnb = np.zeros_like(fluid)
    nnb[1:-1, 1:-1, 1:-1] = (
        fluid[:-2, 1:-1, 1:-1] + fluid[2:, 1:-1, 1:-1]
        + fluid[1:-1, :-2, 1:-1] + fluid[1:-1, 2:, 1:-1]
        + fluid[1:-1, 1:-1, :-2] + fluid[1:-1, 1:-1, 2:]
    )
    inv_nnb = np.where(nnb > 0, 1.0 / np.maximum(nnb, 1.0), 0.0)
    update[nnb == 0] = 0.0
    length = max(nz, ny, nx)
    omega = 2.0 / (1.0 + np.sin(np.pi / length))
    sweeps = 0
    while sweeps < SOR_MAX_SWEEPS:
        kernels.redblack_sor(psi, fluid, update, inv_nnb, omega, SOR_BATCH)
        sweeps += SOR_BATCH
        nbsum = (
            psi[:-2, 1:-1, 1:-1] * fluid[:-2, 1:-1, 1:-1]
            + psi[2:, 1:-1, 1:-1] * fluid[2:, 1:-1, 1:-1]
            + psi[1:-1, :-2, 1:-1] * fluid[1:-1, :-2, 1:-1]
            + psi[1:-1, 2:, 1:-1] * fluid[1:-1, 2:, 1:-1]
            + psi[1:-1, 1:-1, :-2] * fluid[1:-1, 1:-1, :-2]
            + psi[1:-1, 1:-1, 2:] * fluid[1:-1, 1:-1, 2:]
        )
        res = nbsum * inv_nnb[1:-1, 1:-1, 1:-1] - psi[1:-1, 1:-1, 1:-1]
        res = np.abs(res[update[1:-1, 1:-1, 1:-1] > 0])
        if res.size == 0 or res.max() < SOR_TOL:
            break
    return psi[1:-1, 1:-1, 1:-1]


def _staggered_velocity(psi: np.ndarray, fluid: np.ndarray) -> np.ndarray:
    """Face fluxes u_a[i] = psi[i] - psi[i + e_a] between fluid cells ((3,nz,ny,nx),
    component a stored on the +a face of each cell; boundary/solid faces are 0)."""
    nz, ny, nx = psi.shape
    stag = np.zeros((3, nz, ny, nx), dtype=np.float64)
    pairs = ((0, 2), (1, 1), (2, 0))  # (component, array axis)
    for a, ax in pairs:
        sl_lo = [slice(None)] * 3
        sl_hi = [slice(None)] * 3
        sl_lo[ax] = slice(None, -1)
        sl_hi[ax] = slice(1, None)
        both = fluid[tuple(sl_lo)] & fluid[tuple(sl_hi)]
        flux = np.zeros((nz, ny, nx))
        flux[tuple(sl_lo)] = np.where(both, psi[tuple(sl_lo)] - psi[tuple(sl_hi)], 0.0)
        stag[a] = flux
    return stag


def discrete_divergence(stag: np.ndarray) -> np.ndarray:
    """Net outflux per cell under the staggered convention (matched operator)."""
    div = np.zeros(stag.shape[1:], dtype=np.float64)
    for a, ax in ((0, 2), (1, 1), (2, 0)):
        u = stag[a]
        div += u
        sl_hi = [slice(None)] * 3
        sl_lo = [slice(None)] * 3
        sl_hi[ax] = slice(1, None)
        sl_lo[ax] = slice(None, -1)
        div[tuple(sl_hi)] -= u[tuple(sl_lo)]
    return div


def cell_centered_velocity(stag: np.ndarray, spacing: float = 1.0) -> VoxelGrid:
    """Average the two faces of each cell per component (for export/plotting)."""
    out = np.zeros_like(stag)
    for a, ax in ((0, 2), (1, 1), (2, 0)):
        u = stag[a]
        shifted = np.zeros_like(u)
        sl_hi = [slice(None)] * 3
        sl_lo = [slice(None)] * 3
        sl_hi[ax] = slice(1, None)
        sl_lo[ax] = slice(None, -1)
        shifted[tuple(sl_hi)] = u[tuple(sl_lo)]
        out[a] = 0.5 * (u + shifted)
    return VoxelGrid(out, spacing)


def sample_staggered(stag: np.ndarray, pts: np.ndarray, dims) -> np.ndarray:
    """Trilinear sample of the staggered field at (M, 3) xyz points.

    Component a lives at +0.5 along its own axis, so its sample coordinate is
    shifted by -0.5 there; coordinates clamp to the valid lattice.
    """
    nx, ny, nz = dims
    hi = np.array([nx - 1, ny - 1, nz - 1], dtype=np.float64)
    out = np.empty((pts.shape[0], 3), dtype=np.float64)
    for a in range(3):
        q = pts.astype(np.float64).copy()
        q[:, a] -= 0.5
        np.clip(q, 0.0, hi, out=q)
        out[:, a] = kernels.trilinear_gather(stag[a:a + 1], np.ascontiguousarray(q))[:, 0]
    return out


@dataclass
class SyntheticSequence:
    config: ScenarioConfig
    geometry: OccupancyField
    occupancy: list[OccupancyField]
    velocities: list[np.ndarray]          # staggered (3, nz, ny, nx), frame t -> t+1
    trajectories: list[Trajectory]
    jump_frames: list[int] = field(default_factory=list)

    def positions_at(self, frame: int) -> np.ndarray:
        return np.stack([t.positions[frame] for t in self.trajectories])

    def velocities_at(self, frame: int) -> np.ndarray:
        return np.stack([t.velocities[frame] for t in self.trajectories])

    def save(self, outdir) -> list[str]:
        """Write geometry/occupancy/velocity VGRIDs, tracks CSV, and a manifest."""
        import os

        os.makedirs(outdir, exist_ok=True)
        written = []

        def _w(name, fn):
            p = os.path.join(outdir, name)
            fn(p)
            written.append(p)

        _w("geometry.vgrid", lambda p: write_vgrid(p, self.geometry.grid))
        for t, occ in enumerate(self.occupancy):
            _w(f"occ_{t:04d}.vgrid", lambda p, o=occ: write_vgrid(p, o.grid))
        for t, stag in enumerate(self.velocities):
            _w(f"vel_{t:04d}.vgrid", lambda p, s=stag: write_vgrid(p, cell_centered_velocity(s)))
        _w("tracks.csv", lambda p: write_trajectories(p, self.trajectories))
        manifest = {
            "config": asdict(self.config),
            "jump_frames": self.jump_frames,
            "n_frames": len(self.occupancy),
            "n_tracers": len(self.trajectories),
        }
        _w("scenario.json", lambda p: open(p, "w").write(json.dumps(manifest, indent=2, sort_keys=True)))
        return written


def generate_sequence(cfg: ScenarioConfig) -> SyntheticSequence:
    """Full scenario: geometry, advancing interface, flow fields, advected tracers."""
    geometry = generate_geometry(cfg)
    pore = geometry.mask
    nx, ny, nz = cfg.dims
    dims = cfg.dims
    coords = _coord_grids(dims)
    a = cfg.inlet_axis
    length = dims[a]
    rng = np.random.default_rng([cfg.seed, 0x534551])

    axes = [0, 1, 2]
    axes.remove(a)
    u_ax, v_ax = axes
    ph1, ph2 = rng.uniform(0, 2 * np.pi, 2)
    perturb = cfg.perturb_amp * np.sin(2 * np.pi * coords[u_ax] / dims[u_ax] + ph1) \
        * np.cos(2 * np.pi * coords[v_ax] / dims[v_ax] + ph2)

    fronts, jump_frames = _front_sequence(cfg)
    if fronts[-1] + cfg.perturb_amp + 2.0 >= length:
        raise GenerationError("front leaves the domain; reduce speed/jumps or frames")
    level = coords[a] + perturb
    occupancy = [OccupancyField.from_mask(pore & (level <= f)) for f in fronts]
    if not occupancy[0].mask.any():
        raise GenerationError("initial interface empty; increase front_start_frac")

    # flow fields for each transition t -> t+1
    velocities: list[np.ndarray] = []
    outlet_face = coords[a] == length - 1
    for t in range(cfg.n_frames - 1):
        occ = occupancy[t].mask
        wetting = pore & ~occ
        source = wetting & _adjacent6(occ)
        sink = wetting & outlet_face & ~source
        advance = fronts[t + 1] - fronts[t]
        if not source.any() or not sink.any() or advance <= 0:
            velocities.append(np.zeros((3, nz, ny, nx)))
            continue
        psi = _solve_potential(wetting, source, sink)
        stag = _staggered_velocity(psi, wetting)
        cc = cell_centered_velocity(stag).data
        speed = np.sqrt((cc ** 2).sum(axis=0))
        rms = np.sqrt((speed[wetting] ** 2).mean()) if wetting.any() else 0.0
        scalef = advance / rms if rms > 1e-12 else 0.0
        velocities.append(stag * scalef)

    # tracers
    wetting0 = pore & ~occupancy[0].mask
    if (~pore).any():
        dist_solid = np.sqrt(kernels.squared_edt(~pore))
        candidates = wetting0 & (dist_solid >= cfg.tracer_clearance)
    else:
        candidates = wetting0
    z, y, x = np.nonzero(candidates)
    if x.size < cfg.n_tracers:
        raise GenerationError(f"only {x.size} seeding voxels for {cfg.n_tracers} tracers")
    sel = np.sort(rng.choice(x.size, size=cfg.n_tracers, replace=False))
    pos = np.stack([x[sel], y[sel], z[sel]], axis=1).astype(np.float64)
    pos += rng.uniform(-0.25, 0.25, pos.shape)

    hi = np.array([nx - 1, ny - 1, nz - 1], dtype=np.float64)
    all_pos = np.empty((cfg.n_frames, cfg.n_tracers, 3))
    all_pos[0] = pos
    for t in range(cfg.n_frames - 1):
        stag = velocities[t]
        p = all_pos[t]
        k1 = sample_staggered(stag, p, dims)
        mid = np.clip(p + 0.5 * k1, 0.0, hi)
        k2 = sample_staggered(stag, mid, dims)
        cand = np.clip(p + k2, 0.0, hi)
        vox = np.floor(cand + 0.5).astype(np.int64)
        ok = pore[vox[:, 2], vox[:, 1], vox[:, 0]]
        if not ok.all():
            half = np.clip(p + 0.5 * k2, 0.0, hi)
            voxh = np.floor(half + 0.5).astype(np.int64)
            okh = pore[voxh[:, 2], voxh[:, 1], voxh[:, 0]]
            cand = np.where(ok[:, None], cand, np.where(okh[:, None], half, p))
        all_pos[t + 1] = cand

    vels = np.empty_like(all_pos)
    vels[1:-1] = 0.5 * (all_pos[2:] - all_pos[:-2])
    vels[0] = all_pos[1] - all_pos[0]
    vels[-1] = all_pos[-1] - all_pos[-2]

    frames = np.arange(cfg.n_frames, dtype=np.int64)
    trajectories = [
        Trajectory(i, frames.copy(), all_pos[:, i, :].copy(), vels[:, i, :].copy())
        for i in range(cfg.n_tracers)
    ]
    return SyntheticSequence(cfg, geometry, occupancy, velocities, trajectories, jump_frames)
