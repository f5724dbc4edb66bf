"""Rollout evaluation: per-frame interface metrics, velocity-field MAE,
pooled trajectory R^2 and NRMSE_p99, and in-pore containment rates."""

from __future__ import annotations

import numpy as np

from .coupling import ReconstructionConfig, pool_occupancy, reconstruct_flow
from .errors import InputError
from .metrics import (dice, in_pore_fraction, nrmse_p99, surface_rel_err,
                      trajectory_r2, velocity_mae, volume_rel_err)
from .training import SequenceDataset


def evaluate_rollout(ds: SequenceDataset, pred_positions, pred_velocities,
                     pred_occupancy, start_frame: int,
                     recon: ReconstructionConfig = ReconstructionConfig(),
                     interface_pool: int = 1) -> dict:
    """Compare a rollout that started at ``start_frame`` against ground truth.

    pred_positions/velocities: (K, N, 3) for steps 1..K (frame start+k holds
    positions at that frame and the velocities predicted one step earlier);
    pred_occupancy: K OccupancyFields at full resolution. Frames beyond the
    ground-truth window are ignored. ``interface_pool`` > 1 scores the
    interface metrics at the surrogate's operating resolution (both masks
    block-pooled by that factor; pooling the block-upsampled prediction
    recovers the interface model's raw output exactly).
    """
    pred_positions = np.asarray(pred_positions, dtype=np.float64)
    pred_velocities = np.asarray(pred_velocities, dtype=np.float64)
    k_total = pred_positions.shape[0]
    if k_total == 0:
        raise InputError("empty rollout")
    k_eval = min(k_total, ds.n_frames - 1 - start_frame)
    if k_eval <= 0:
        raise InputError("rollout starts at or beyond the last ground-truth frame")

    frames = []
    for k in range(k_eval):
        t = start_frame + 1 + k
        truth_occ = ds.occupancy[t]
        pred_occ = pred_occupancy[k]
        if interface_pool > 1:
            truth_occ = pool_occupancy(truth_occ, interface_pool)
            pred_occ = pool_occupancy(pred_occ, interface_pool)
        pred_field = reconstruct_flow(pred_positions[k], pred_velocities[k], ds.geometry, recon)
        truth_field = reconstruct_flow(ds.positions[t], ds.velocities[t - 1], ds.geometry, recon)
        frames.append({
            "frame": t,
            "dice": dice(pred_occ, truth_occ),
            "volume_rel_err": volume_rel_err(pred_occ, truth_occ),
            "surface_rel_err": surface_rel_err(pred_occ, truth_occ),
            "velocity_mae": velocity_mae(pred_field, truth_field, ds.geometry),
            "in_pore_fraction": in_pore_fraction(pred_positions[k], ds.geometry),
            "position_rmse": float(np.sqrt(
                ((pred_positions[k] - ds.positions[t]) ** 2).sum(axis=1).mean())),
        })

    truth_pos = np.stack([ds.positions[start_frame + 1 + k] for k in range(k_eval)])
    truth_vel = np.stack([ds.velocities[start_frame + k] for k in range(k_eval)])
    r2 = trajectory_r2(pred_positions[:k_eval], truth_pos)
    pooled = k_eval * ds.n_particles
    vm = None
    if pooled >= 100:  # percentile needs enough samples
        vm = nrmse_p99(pred_velocities[:k_eval].reshape(-1, 3), truth_vel.reshape(-1, 3))

    agg = {
        "frames_evaluated": k_eval,
        "dice": float(np.mean([f["dice"] for f in frames])),
        "volume_rel_err": float(np.mean([f["volume_rel_err"] for f in frames])),
        "surface_rel_err": float(np.mean([f["surface_rel_err"] for f in frames])),
        "velocity_mae": float(np.mean([f["velocity_mae"] for f in frames])),
        "in_pore_fraction": float(np.mean([f["in_pore_fraction"] for f in frames])),
        "final_in_pore_fraction": frames[-1]["in_pore_fraction"],
        "trajectory_r2": r2,
        "nrmse_p99": vm.nrmse_p99 if vm else None,
        "velocity_rmse": vm.rmse if vm else None,
        "velocity_q99": vm.q99 if vm else None,
    }
    return {"start_frame": start_frame, "frames": frames, "aggregate": agg}


def jump_window_frames(jump_frames, start_frame: int, last_frame: int,
                       halo: int = 1) -> list[int]:
    """Evaluation frames around each jump inside (start_frame, last_frame]."""
    out = set()
    for j in jump_frames:
        if start_frame < j <= last_frame:
            for t in range(j - halo, j + halo + 1):
                if start_frame < t <= last_frame:
                    out.add(t)
    return sorted(out)


def mean_dice_over(report: dict, frames: list[int]) -> float:
    sel = [f["dice"] for f in report["frames"] if f["frame"] in frames]
    if not sel:
        raise InputError("no report frames inside the requested window")
    return float(np.mean(sel))
