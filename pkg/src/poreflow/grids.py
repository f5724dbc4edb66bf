"""Voxel-grid and particle-track data model.

Canonical storage layout (shared by every module and by the on-disk formats):
arrays are ``float64`` indexed ``[channel, z, y, x]`` with x fastest; position
vectors are ``(x, y, z)`` in voxel units with voxel centers at integer
coordinates. On disk, payloads are 32-bit floats; in memory everything is
64-bit.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DomainError, InputError, ShapeError

VGRID_MAGIC = b"VGRD1\n"


@dataclass(frozen=True)
class VoxelGrid:
    """Dense multi-channel 3D field.

    data: (channels, nz, ny, nx) float64
    spacing: voxels per physical unit, informational only
    """

    data: np.ndarray
    spacing: float = 1.0

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 4:
            raise ShapeError(f"VoxelGrid data must be 4-D (c,z,y,x), got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise ShapeError(f"VoxelGrid dimensions must be positive, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise InputError("VoxelGrid data contains non-finite values")
        object.__setattr__(self, "data", arr)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def dims(self) -> tuple[int, int, int]:
        """(nx, ny, nz)"""
        c, nz, ny, nx = self.data.shape
        return (nx, ny, nz)

    @classmethod
    def from_scalar_field(cls, values, spacing: float = 1.0) -> "VoxelGrid":
        """Wrap a (nz, ny, nx) array as a single-channel grid."""
        values = np.asarray(values, dtype=np.float64)
        return cls(values[None, ...], spacing)


@dataclass(frozen=True)
class OccupancyField:
    """Binary single-channel grid: 1.0 marks occupied/pore, 0.0 marks empty/solid."""

    grid: VoxelGrid

    def __post_init__(self):
        if self.grid.channels != 1:
            raise ShapeError("OccupancyField requires a single channel")
        vals = self.grid.data
        if not np.all((vals == 0.0) | (vals == 1.0)):
            raise InputError("OccupancyField values must be exactly 0 or 1")

    @classmethod
    def from_mask(cls, mask, spacing: float = 1.0) -> "OccupancyField":
        return cls(VoxelGrid.from_scalar_field(np.asarray(mask).astype(np.float64), spacing))

    @property
    def values(self) -> np.ndarray:
        """(nz, ny, nx) float array of 0/1."""
        return self.grid.data[0]

    @property
    def mask(self) -> np.ndarray:
        """(nz, ny, nx) boolean view."""
        return self.grid.data[0] > 0.5

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.grid.dims


@dataclass(frozen=True)
class Trajectory:
    """Time-indexed positions (and optionally velocities) of one tracer.

    frames: (T,) strictly increasing int frame indices
    positions: (T, 3) xyz in voxels
    velocities: (T, 3) in voxels/frame, or None
    """

    particle_id: int
    frames: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray | None = field(default=None)

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.int64)
        pos = np.asarray(self.positions, dtype=np.float64)
        if frames.ndim != 1 or pos.shape != (frames.size, 3):
            raise ShapeError("trajectory frames/positions shapes disagree")
        if frames.size > 1 and not np.all(np.diff(frames) > 0):
            raise InputError(f"frame indices must be strictly increasing (particle {self.particle_id})")
        if not np.all(np.isfinite(pos)):
            raise InputError(f"non-finite positions in particle {self.particle_id}")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "positions", pos)
        if self.velocities is not None:
            vel = np.asarray(self.velocities, dtype=np.float64)
            if vel.shape != pos.shape:
                raise ShapeError("velocities shape must match positions")
            object.__setattr__(self, "velocities", vel)

    def __len__(self) -> int:
        return self.frames.size

    def validate_in_domain(self, dims: tuple[int, int, int]) -> None:
        nx, ny, nz = dims
        hi = np.array([nx, ny, nz], dtype=np.float64)
        if np.any(self.positions < 0.0) or np.any(self.positions >= hi):
            raise DomainError(f"particle {self.particle_id} leaves [0, dims)")


def trilinear_sample(grid: VoxelGrid, point, channel: int) -> float:
    """Trilinear interpolation of one channel at an xyz point.

    Valid sampling domain is [0, n-1] per axis (the hull of voxel centers);
    an exact voxel-center query returns the stored value.
    """
    if not 0 <= channel < grid.channels:
        raise DomainError(f"channel {channel} out of range")
    p = np.asarray(point, dtype=np.float64).reshape(3)
    nx, ny, nz = grid.dims
    hi = np.array([nx - 1, ny - 1, nz - 1], dtype=np.float64)
    if np.any(p < 0.0) or np.any(p > hi) or not np.all(np.isfinite(p)):
        raise DomainError(f"point {p.tolist()} outside sampling domain [0, dims-1]")
    out = kernels.trilinear_gather(grid.data[channel:channel + 1], p[None, :])
    return float(out[0, 0])


def sample_points(grid: VoxelGrid, points) -> np.ndarray:
    """Vectorized trilinear sampling of all channels at (M, 3) xyz points."""
    pts = np.ascontiguousarray(points, dtype=np.float64)
    nx, ny, nz = grid.dims
    hi = np.array([nx - 1, ny - 1, nz - 1], dtype=np.float64)
    if np.any(pts < 0.0) or np.any(pts > hi):
        raise DomainError("points outside sampling domain [0, dims-1]")
    return kernels.trilinear_gather(grid.data, pts)


def containing_voxel(point) -> np.ndarray:
    """Integer xyz index of the voxel containing a point (centers at integers)."""
    p = np.asarray(point, dtype=np.float64)
    return np.floor(p + 0.5).astype(np.int64)


def extract_patch(grid: VoxelGrid, center, size: int) -> VoxelGrid:
    """Cubic patch of ``size``^3 voxels centered on the voxel containing ``center``.

    Regions outside the domain are zero-padded.
    """
    if size <= 0:
        raise InputError("patch size must be positive")
    cx, cy, cz = containing_voxel(center)
    nx, ny, nz = grid.dims
    half = size // 2
    out = np.zeros((grid.channels, size, size, size), dtype=np.float64)
    x0, y0, z0 = cx - half, cy - half, cz - half
    sx0, sy0, sz0 = max(x0, 0), max(y0, 0), max(z0, 0)
    sx1, sy1, sz1 = min(x0 + size, nx), min(y0 + size, ny), min(z0 + size, nz)
    if sx0 < sx1 and sy0 < sy1 and sz0 < sz1:
        out[:, sz0 - z0:sz1 - z0, sy0 - y0:sy1 - y0, sx0 - x0:sx1 - x0] = \
            grid.data[:, sz0:sz1, sy0:sy1, sx0:sx1]
    return VoxelGrid(out, grid.spacing)


def apply_pore_mask(fieldgrid: VoxelGrid, geometry: OccupancyField) -> VoxelGrid:
    """Zero a field on solid voxels (geometry == 0); pore values pass through."""
    if fieldgrid.dims != geometry.dims:
        raise ShapeError(f"field dims {fieldgrid.dims} != geometry dims {geometry.dims}")
    return VoxelGrid(fieldgrid.data * geometry.values[None, ...], fieldgrid.spacing)


def write_vgrid(path, grid: VoxelGrid) -> None:
    """Write the VGRID binary format (f32 payload, c,z,y,x order)."""
    nx, ny, nz = grid.dims
    header = {
        "dims": [nx, ny, nz],
        "channels": grid.channels,
        "dtype": "f32",
        "order": "c,z,y,x",
        "spacing": grid.spacing,
    }
    with open(path, "wb") as fh:
        fh.write(VGRID_MAGIC)
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode("utf-8"))
        fh.write(np.ascontiguousarray(grid.data, dtype="<f4").tobytes())


def read_vgrid(path) -> VoxelGrid:
    with open(path, "rb") as fh:
        magic = fh.read(len(VGRID_MAGIC))
        if magic != VGRID_MAGIC:
            raise InputError(f"{path}: not a VGRID file")
        header = json.loads(fh.readline().decode("utf-8"))
        nx, ny, nz = header["dims"]
        c = header["channels"]
        raw = np.frombuffer(fh.read(4 * c * nx * ny * nz), dtype="<f4")
    if raw.size != c * nx * ny * nz:
        raise InputError(f"{path}: truncated payload")
    data = raw.astype(np.float64).reshape(c, nz, ny, nx)
    return VoxelGrid(data, float(header.get("spacing", 1.0)))


def write_trajectories(path, trajectories) -> None:
    """Write tracks as CSV: particle_id,frame,x,y,z[,vx,vy,vz]."""
    with_vel = all(t.velocities is not None for t in trajectories)
    cols = ["particle_id", "frame", "x", "y", "z"] + (["vx", "vy", "vz"] if with_vel else [])
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(cols)
        for t in sorted(trajectories, key=lambda t: t.particle_id):
            for i, fr in enumerate(t.frames):
                row = [t.particle_id, int(fr)] + [repr(float(v)) for v in t.positions[i]]
                if with_vel:
                    row += [repr(float(v)) for v in t.velocities[i]]
                wr.writerow(row)


def read_trajectories(path) -> list[Trajectory]:
    by_id: dict[int, list] = {}
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if header[:5] != ["particle_id", "frame", "x", "y", "z"]:
            raise InputError(f"{path}: unexpected trajectory CSV header {header}")
        with_vel = len(header) >= 8
        for row in rd:
            if not row:
                continue
            pid = int(row[0])
            rec = [int(row[1])] + [float(v) for v in row[2:8 if with_vel else 5]]
            by_id.setdefault(pid, []).append(rec)
    out = []
    for pid in sorted(by_id):
        recs = sorted(by_id[pid], key=lambda r: r[0])
        frames = np.array([r[0] for r in recs], dtype=np.int64)
        pos = np.array([r[1:4] for r in recs], dtype=np.float64)
        vel = None
        if recs and len(recs[0]) == 7:
            vel = np.array([r[4:7] for r in recs], dtype=np.float64)
        out.append(Trajectory(pid, frames, pos, vel))
    return out
