"""Information exchange between the particle and voxel representations.

Particles -> grid: trilinear splatting of velocities plus zero-velocity
boundary points near walls, nearest-neighbor hole fill, pore masking, then
magnitude-preserving block pooling. Grid -> particles: 2-channel local patches
(pore geometry, current interface) centered on each particle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError, InputError, ShapeError
from .grids import OccupancyField, VoxelGrid, apply_pore_mask, extract_patch


@dataclass(frozen=True)
class PoolConfig:
    """Block-pooling factor for grid downsampling."""

    factor: int = 8

    def __post_init__(self):
        if self.factor <= 0:
            raise ConfigError(f"pool factor must be positive, got {self.factor}")


@dataclass(frozen=True)
class ReconstructionConfig:
    """boundary_ratio: boundary points per particle; dilation_radius in voxels."""

    boundary_ratio: float = 1.0
    dilation_radius: int = 1
    seed: int = 716258

    def __post_init__(self):
        if self.boundary_ratio < 0:
            raise ConfigError("boundary_ratio must be >= 0")
        if self.dilation_radius < 0:
            raise ConfigError("dilation_radius must be >= 0")


def _pad_to_multiple(data: np.ndarray, f: int) -> np.ndarray:
    c, nz, ny, nx = data.shape
    pz = (-nz) % f
    py = (-ny) % f
    px = (-nx) % f
    if pz == py == px == 0:
        return data
    return np.pad(data, ((0, 0), (0, pz), (0, py), (0, px)))


def maxabs_pool(field: VoxelGrid, cfg: PoolConfig) -> VoxelGrid:
    """Downsample each channel over f^3 blocks, keeping the extremum of larger
    absolute value (|max| == |min| ties resolve to the max). Zero-pads to
    divisibility first."""
    data = _pad_to_multiple(field.data, cfg.factor)
    return VoxelGrid(kernels.maxabs_pool3d(np.ascontiguousarray(data), cfg.factor), field.spacing)


def pool_occupancy(occ: OccupancyField, f: int) -> OccupancyField:
    """Binary fields pool to 'any voxel set in the block' (max-abs on 0/1 data)."""
    pooled = maxabs_pool(occ.grid, PoolConfig(f))
    return OccupancyField(pooled)


def upsample_occupancy(occ: OccupancyField, f: int, dims: tuple[int, int, int]) -> OccupancyField:
    """Block-repeat inverse of pool_occupancy, cropped to the original dims."""
    nx, ny, nz = dims
    v = occ.values
    up = v.repeat(f, axis=0).repeat(f, axis=1).repeat(f, axis=2)
    return OccupancyField.from_mask(up[:nz, :ny, :nx] > 0.5, occ.grid.spacing)


def particle_retention(field_sparse: VoxelGrid, f: int, method: str) -> float:
    """Fraction of nonzero markers that survive downsampling by ``method``.

    'slice' keeps every f-th voxel per axis; 'pool' applies max-abs pooling
    (an occupied block survives unless markers collide within it).
    """
    if f <= 0:
        raise ConfigError("factor must be positive")
    markers = int(np.count_nonzero(field_sparse.data))
    if markers == 0:
        raise InputError("no markers in field")
    if method == "slice":
        kept = int(np.count_nonzero(field_sparse.data[:, ::f, ::f, ::f]))
    elif method == "pool":
        kept = int(np.count_nonzero(maxabs_pool(field_sparse, PoolConfig(f)).data))
    else:
        raise ConfigError(f"unknown retention method {method!r}")
    return kept / markers


def dilate_solid(geometry: OccupancyField, radius: int) -> np.ndarray:
    """Voxels within ``radius`` face-connected steps of the solid phase."""
    solid = ~geometry.mask
    out = solid.copy()
    for _ in range(radius):
        grown = out.copy()
        grown[1:, :, :] |= out[:-1, :, :]
        grown[:-1, :, :] |= out[1:, :, :]
        grown[:, 1:, :] |= out[:, :-1, :]
        grown[:, :-1, :] |= out[:, 1:, :]
        grown[:, :, 1:] |= out[:, :, :-1]
        grown[:, :, :-1] |= out[:, :, 1:]
        out = grown
    return out


def boundary_points(geometry: OccupancyField, radius: int) -> np.ndarray:
    """Pore voxels adjacent to the solid (inside its dilation), as (K, 3) xyz."""
    band = dilate_solid(geometry, radius) & geometry.mask
    z, y, x = np.nonzero(band)
    return np.stack([x, y, z], axis=1).astype(np.float64)


def reconstruct_flow(positions, velocities, geometry: OccupancyField,
                     cfg: ReconstructionConfig = ReconstructionConfig()) -> VoxelGrid:
    """Dense 3-channel velocity field from scattered particle velocities.

    No-slip boundary points (zero velocity) are sampled from the pore side of
    the dilated solid at ``boundary_ratio`` points per particle, splatted
    together with the particles using trilinear weights, holes are filled from
    the nearest scattered point, and the result is masked by the pore space.
    """
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    vel = np.asarray(velocities, dtype=np.float64).reshape(-1, 3)
    if pos.shape[0] == 0:
        raise InputError("reconstruct_flow needs at least one particle")
    if pos.shape != vel.shape:
        raise ShapeError("positions/velocities shape mismatch")
    nx, ny, nz = geometry.dims
    hi = np.array([nx - 1, ny - 1, nz - 1], dtype=np.float64)
    pos = np.clip(pos, 0.0, hi)

    n_boundary = int(round(cfg.boundary_ratio * pos.shape[0]))
    pts = pos
    vals = vel
    if n_boundary > 0:
        cand = boundary_points(geometry, cfg.dilation_radius)
        if cand.shape[0] > 0:
            rng = np.random.default_rng(cfg.seed)
            take = min(n_boundary, cand.shape[0])
            sel = np.sort(rng.choice(cand.shape[0], size=take, replace=False))
            bpts = cand[sel]
            pts = np.concatenate([pos, bpts], axis=0)
            vals = np.concatenate([vel, np.zeros((take, 3))], axis=0)

    acc, wacc = kernels.trilinear_splat(np.ascontiguousarray(pts),
                                        np.ascontiguousarray(vals), nx, ny, nz)
    covered = wacc > 0.0
    field = np.zeros_like(acc)
    field[:, covered] = acc[:, covered] / wacc[covered]

    holes = geometry.mask & ~covered
    if holes.any():
        z, y, x = np.nonzero(holes)
        targets = np.ascontiguousarray(np.stack([x, y, z], axis=1).astype(np.int64))
        filled = kernels.nearest_fill(np.ascontiguousarray(pts),
                                      np.ascontiguousarray(vals), targets)
        field[:, z, y, x] = filled.T

    return apply_pore_mask(VoxelGrid(field, geometry.grid.spacing), geometry)


def condition_patches(geometry: OccupancyField, interface: OccupancyField,
                      positions, patch_size: int = 32) -> np.ndarray:
    """Per-particle 2-channel patches [pore geometry, interface], (N, 2, s, s, s)."""
    if geometry.dims != interface.dims:
        raise ShapeError("geometry/interface dims disagree")
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    out = np.empty((pos.shape[0], 2, patch_size, patch_size, patch_size), dtype=np.float64)
    for i in range(pos.shape[0]):
        out[i, 0] = extract_patch(geometry.grid, pos[i], patch_size).data[0]
        out[i, 1] = extract_patch(interface.grid, pos[i], patch_size).data[0]
    return out


def avgpool_patches(patches: np.ndarray, f: int) -> np.ndarray:
    """Average-pool (N, C, s, s, s) patches by factor f (s divisible by f)."""
    n, c, s = patches.shape[0], patches.shape[1], patches.shape[2]
    if s % f:
        raise ShapeError(f"patch size {s} not divisible by pool factor {f}")
    m = s // f
    return patches.reshape(n, c, m, f, m, f, m, f).mean(axis=(3, 5, 7))
