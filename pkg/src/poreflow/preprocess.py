"""Trajectory denoising and interface-frame interpolation.

Tracks are smoothed with a constant-acceleration Kalman filter (white-jerk
process noise, position-only measurements) followed by a Rauch-Tung-Striebel
backward pass. Interface frames are interpolated linearly in signed-distance
space and re-thresholded.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateInputError, InputError, InsufficientDataError
from .grids import OccupancyField, Trajectory, VoxelGrid
from .kernels import squared_edt


@dataclass(frozen=True)
class KalmanConfig:
    """dt in frames; q_jerk in voxels^2/frame^6; r_meas in voxels^2."""

    dt: float = 1.0
    q_jerk: float = 1e-2
    r_meas: float = 0.25

    def __post_init__(self):
        if self.dt <= 0 or self.q_jerk <= 0 or self.r_meas <= 0:
            raise ConfigError("KalmanConfig values must be positive")


@dataclass(frozen=True)
class CaState:
    """9-state [x, vx, ax, y, vy, ay, z, vz, az] with covariance."""

    state: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.state, dtype=np.float64).reshape(9)
        p = np.asarray(self.covariance, dtype=np.float64).reshape(9, 9)
        if np.abs(p - p.T).max() > 1e-9:
            raise InputError("covariance not symmetric")
        if np.linalg.eigvalsh((p + p.T) / 2).min() < -1e-9:
            raise InputError("covariance not positive semidefinite")
        object.__setattr__(self, "state", s)
        object.__setattr__(self, "covariance", p)


def _ca_matrices(dt: float, q_jerk: float):
    f3 = np.array([[1.0, dt, 0.5 * dt * dt], [0.0, 1.0, dt], [0.0, 0.0, 1.0]])
    q3 = q_jerk * np.array([
        [dt ** 5 / 20.0, dt ** 4 / 8.0, dt ** 3 / 6.0],
        [dt ** 4 / 8.0, dt ** 3 / 3.0, dt ** 2 / 2.0],
        [dt ** 3 / 6.0, dt ** 2 / 2.0, dt],
    ])
    f = np.zeros((9, 9))
    q = np.zeros((9, 9))
    for a in range(3):
        f[3 * a:3 * a + 3, 3 * a:3 * a + 3] = f3
        q[3 * a:3 * a + 3, 3 * a:3 * a + 3] = q3
    h = np.zeros((3, 9))
    h[0, 0] = h[1, 3] = h[2, 6] = 1.0
    return f, q, h


def kalman_rts_smooth(track: Trajectory, cfg: KalmanConfig = KalmanConfig()) -> Trajectory:
    """Smooth one track; returns positions and velocities from the RTS pass.

    Requires >= 3 uniformly spaced frames. The smoother is exact (to rounding)
    for constant-velocity and constant-acceleration motion.
    """
    t = len(track)
    if t < 3:
        raise InsufficientDataError(f"particle {track.particle_id}: need >= 3 frames, got {t}")
    steps = np.diff(track.frames)
    if not np.all(steps == steps[0]):
        raise InputError(f"particle {track.particle_id}: non-uniform frame spacing")
    dt = cfg.dt * float(steps[0])
    f, q, h = _ca_matrices(dt, cfg.q_jerk)
    r = cfg.r_meas * np.eye(3)
    z = track.positions

    s0 = np.zeros(9)
    s0[0::3] = z[0]
    s0[1::3] = (z[1] - z[0]) / dt
    init = CaState(s0, 1e4 * np.eye(9))

    means = np.empty((t, 9))
    covs = np.empty((t, 9, 9))
    pred_means = np.empty((t, 9))
    pred_covs = np.empty((t, 9, 9))
    eye9 = np.eye(9)
    s, p = init.state, init.covariance
    for k in range(t):
        if k > 0:
            s = f @ s
            p = f @ p @ f.T + q
            p = (p + p.T) / 2
        pred_means[k] = s
        pred_covs[k] = p
        innov = z[k] - h @ s
        sk = h @ p @ h.T + r
        gain = np.linalg.solve(sk.T, (p @ h.T).T).T
        s = s + gain @ innov
        ikh = eye9 - gain @ h
        p = ikh @ p @ ikh.T + gain @ r @ gain.T  # Joseph form
        p = (p + p.T) / 2
        means[k] = s
        covs[k] = p

    smoothed = means.copy()
    sp = covs[-1]
    for k in range(t - 2, -1, -1):
        c = np.linalg.solve(pred_covs[k + 1].T, (covs[k] @ f.T).T).T
        smoothed[k] = means[k] + c @ (smoothed[k + 1] - pred_means[k + 1])
        sp = covs[k] + c @ (sp - pred_covs[k + 1]) @ c.T

    pos = smoothed[:, 0::3]
    vel = smoothed[:, 1::3]  # time is measured in frames, so this is voxels/frame
    return Trajectory(track.particle_id, track.frames.copy(), pos, vel)


@dataclass(frozen=True)
class SignedDistanceField:
    """Interior minus exterior Euclidean distance; >= +1 on foreground, <= -1 outside."""

    grid: VoxelGrid

    @property
    def values(self) -> np.ndarray:
        return self.grid.data[0]


def euclidean_sdf(mask: OccupancyField) -> SignedDistanceField:
    """Exact signed Euclidean distance field of a binary mask.

    d_in is measured to the nearest background voxel center (so foreground
    voxels touching the background get d_in = 1); d_out symmetrically.
    """
    fg = mask.mask
    n_fg = int(fg.sum())
    if n_fg == 0 or n_fg == fg.size:
        raise DegenerateInputError("mask must contain both foreground and background")
    d_in = np.sqrt(squared_edt(~fg))   # distance to nearest background; 0 on background
    d_out = np.sqrt(squared_edt(fg))   # distance to nearest foreground; 0 on foreground
    phi = d_in - d_out
    return SignedDistanceField(VoxelGrid.from_scalar_field(phi, mask.grid.spacing))


def sdf_interpolate(v0: OccupancyField, v1: OccupancyField, t: float) -> OccupancyField:
    """Binarize (1-t)*phi0 + t*phi1 at the >= 0 threshold."""
    if v0.dims != v1.dims:
        raise InputError("sdf_interpolate: dim mismatch")
    if not 0.0 <= t <= 1.0:
        raise InputError(f"interpolation parameter t={t} outside [0, 1]")
    phi0 = euclidean_sdf(v0).values
    phi1 = euclidean_sdf(v1).values
    phit = (1.0 - t) * phi0 + t * phi1
    return OccupancyField.from_mask(phit >= 0.0, v0.grid.spacing)


def resample_sequence(frames: list[OccupancyField], factor: int) -> list[OccupancyField]:
    """Insert factor-1 SDF-interpolated frames between each consecutive pair.

    Input frames are passed through bit-exactly.
    """
    if not frames:
        raise InputError("resample_sequence: empty input")
    if factor < 2:
        raise InputError("resample_sequence: factor must be >= 2")
    if len(frames) == 1:
        return list(frames)
    sdfs = [euclidean_sdf(f).values for f in frames]
    out: list[OccupancyField] = []
    for k in range(len(frames) - 1):
        out.append(frames[k])
        for i in range(1, factor):
            t = i / factor
            phit = (1.0 - t) * sdfs[k] + t * sdfs[k + 1]
            out.append(OccupancyField.from_mask(phit >= 0.0, frames[k].grid.spacing))
    out.append(frames[-1])
    return out


__all__ = [
    "KalmanConfig",
    "CaState",
    "SignedDistanceField",
    "kalman_rts_smooth",
    "euclidean_sdf",
    "sdf_interpolate",
    "resample_sequence",
]
