"""Evaluation metrics for interface fields, velocity fields, and trajectories."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, InsufficientDataError, ShapeError
from .grids import OccupancyField, VoxelGrid


@dataclass(frozen=True)
class InterfaceMetrics:
    volume_rel_err: float  # percent
    surface_rel_err: float  # percent
    dice: float


@dataclass(frozen=True)
class VelocityMetrics:
    rmse: float
    q99: float
    nrmse_p99: float
    mae: float
    trajectory_r2: float | None = None


def dice(pred: OccupancyField, truth: OccupancyField) -> float:
    """2|A∩B| / (|A|+|B|); two empty masks count as a perfect 1.0."""
    if pred.dims != truth.dims:
        raise ShapeError(f"dice: dims {pred.dims} != {truth.dims}")
    a = pred.mask
    b = truth.mask
    denom = int(a.sum()) + int(b.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / denom


def volume(mask: OccupancyField) -> int:
    return int(mask.mask.sum())


def surface_area(mask: OccupancyField) -> int:
    """Exposed foreground faces (6-connectivity); domain boundary counts as exposed."""
    m = mask.mask
    padded = np.pad(m, 1, constant_values=False)
    faces = 0
    for axis in range(3):
        for d in (-1, 1):
            nb = np.roll(padded, d, axis=axis)
            faces += int((padded & ~nb).sum())
    return faces


def volume_rel_err(pred: OccupancyField, truth: OccupancyField) -> float:
    if pred.dims != truth.dims:
        raise ShapeError("volume_rel_err: dim mismatch")
    vt = volume(truth)
    if vt == 0:
        raise DegenerateInputError("truth mask is empty")
    return abs(volume(pred) - vt) / vt * 100.0


def surface_rel_err(pred: OccupancyField, truth: OccupancyField) -> float:
    if pred.dims != truth.dims:
        raise ShapeError("surface_rel_err: dim mismatch")
    st = surface_area(truth)
    if st == 0:
        raise DegenerateInputError("truth mask is empty")
    return abs(surface_area(pred) - st) / st * 100.0


def interface_metrics(pred: OccupancyField, truth: OccupancyField) -> InterfaceMetrics:
    return InterfaceMetrics(
        volume_rel_err=volume_rel_err(pred, truth),
        surface_rel_err=surface_rel_err(pred, truth),
        dice=dice(pred, truth),
    )


def velocity_mae(pred_field: VoxelGrid, truth_field: VoxelGrid, pore: OccupancyField) -> float:
    """Mean magnitude of the vector difference over pore voxels."""
    if pred_field.dims != truth_field.dims or pred_field.dims != pore.dims:
        raise ShapeError("velocity_mae: dim mismatch")
    if pred_field.channels != 3 or truth_field.channels != 3:
        raise ShapeError("velocity_mae expects 3-channel fields")
    m = pore.mask
    if not m.any():
        raise DegenerateInputError("empty pore mask")
    diff = pred_field.data - truth_field.data
    mag = np.sqrt((diff ** 2).sum(axis=0))
    return float(mag[m].mean())


def trajectory_r2(pred_positions, truth_positions) -> float:
    """Coefficient of determination over all particles, frames, and coordinates.

    Residuals are pooled; the total sum of squares is taken about the per-axis
    truth means (which makes the score invariant to a rigid translation applied
    to both inputs).
    """
    pred = np.asarray(pred_positions, dtype=np.float64)
    truth = np.asarray(truth_positions, dtype=np.float64)
    if pred.shape != truth.shape or pred.shape[-1] != 3:
        raise ShapeError("trajectory_r2 expects matching (..., 3) arrays")
    pred = pred.reshape(-1, 3)
    truth = truth.reshape(-1, 3)
    ss_res = float(((pred - truth) ** 2).sum())
    center = truth.mean(axis=0)
    ss_tot = float(((truth - center) ** 2).sum())
    if ss_tot <= 1e-300:
        raise DegenerateInputError("truth positions are all identical (SS_tot = 0)")
    return 1.0 - ss_res / ss_tot


def nrmse_p99(pred_vels, truth_vels) -> VelocityMetrics:
    """Velocity-magnitude RMSE normalised by the 99th-percentile true speed.

    The percentile uses linear interpolation between order statistics.
    """
    pred = np.asarray(pred_vels, dtype=np.float64).reshape(-1, 3)
    truth = np.asarray(truth_vels, dtype=np.float64).reshape(-1, 3)
    if pred.shape != truth.shape:
        raise ShapeError("nrmse_p99: shape mismatch")
    n = pred.shape[0]
    if n < 100:
        raise InsufficientDataError(f"nrmse_p99 needs >= 100 samples, got {n}")
    pm = np.sqrt((pred ** 2).sum(axis=1))
    tm = np.sqrt((truth ** 2).sum(axis=1))
    rmse = float(np.sqrt(((pm - tm) ** 2).mean()))
    q99 = float(np.percentile(tm, 99.0, method="linear"))
    if q99 <= 0.0:
        raise DegenerateInputError("Q99 of ground-truth speeds is zero")
    mae = float(np.sqrt(((pred - truth) ** 2).sum(axis=1)).mean())
    return VelocityMetrics(rmse=rmse, q99=q99, nrmse_p99=rmse / q99, mae=mae)


def in_pore_fraction(positions, geometry: OccupancyField) -> float:
    """Fraction of particles whose nearest voxel is pore; out-of-domain counts as out."""
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    nx, ny, nz = geometry.dims
    vox = np.floor(pos + 0.5).astype(np.int64)
    inside = (
        (vox[:, 0] >= 0) & (vox[:, 0] < nx)
        & (vox[:, 1] >= 0) & (vox[:, 1] < ny)
        & (vox[:, 2] >= 0) & (vox[:, 2] < nz)
    )
    ok = np.zeros(pos.shape[0], dtype=bool)
    v = vox[inside]
    ok[inside] = geometry.mask[v[:, 2], v[:, 1], v[:, 0]]
    return float(ok.mean()) if pos.shape[0] else 0.0
