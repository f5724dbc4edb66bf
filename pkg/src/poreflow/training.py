"""Dataset assembly and training loops for both networks.

A dataset is a directory written by the synthetic generator (or converted
experimental data in the same layout): geometry.vgrid, occ_*.vgrid frames,
tracks.csv with per-frame velocities, scenario.json. Training is one-step
teacher forcing; the temporal split keeps the final 25% of frames for testing.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .autodiff import AdamState, cosine_lr
from .coupling import PoolConfig, ReconstructionConfig, maxabs_pool, pool_occupancy, reconstruct_flow
from .errors import InputError
from .gns import GnsConfig, GnsModel, GnsTrainSample, NoiseConfig, gns_train_step
from .graph import (VELOCITY_HISTORY, assemble_edge_features, assemble_node_features,
                    build_radius_graph, fit_norm_stats)
from .grids import OccupancyField, read_trajectories, read_vgrid
from .unet import UNetConfig, UNetModel, build_input_stack, unet_train_step

TRAIN_FRACTION = 0.75


@dataclass
class SequenceDataset:
    """In-memory view of one drainage sequence."""

    geometry: OccupancyField
    occupancy: list[OccupancyField]
    positions: np.ndarray        # (T, N, 3)
    velocities: np.ndarray       # (T, N, 3)
    jump_frames: list[int] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def n_frames(self) -> int:
        return len(self.occupancy)

    @property
    def n_particles(self) -> int:
        return self.positions.shape[1]

    def positions_at(self, frame: int) -> np.ndarray:
        return self.positions[frame]

    def velocities_at(self, frame: int) -> np.ndarray:
        return self.velocities[frame]

    @property
    def n_train(self) -> int:
        return int(np.floor(TRAIN_FRACTION * self.n_frames))

    @classmethod
    def from_sequence(cls, seq) -> "SequenceDataset":
        t = len(seq.occupancy)
        pos = np.stack([seq.positions_at(k) for k in range(t)])
        vel = np.stack([seq.velocities_at(k) for k in range(t)])
        return cls(seq.geometry, list(seq.occupancy), pos, vel,
                   list(seq.jump_frames), {"config": seq.config})

    @classmethod
    def load(cls, datadir) -> "SequenceDataset":
        geom_path = os.path.join(datadir, "geometry.vgrid")
        if not os.path.exists(geom_path):
            raise FileNotFoundError(f"{datadir}: missing geometry.vgrid")
        geometry = OccupancyField(read_vgrid(geom_path))
        occ = []
        t = 0
        while True:
            p = os.path.join(datadir, f"occ_{t:04d}.vgrid")
            if not os.path.exists(p):
                break
            occ.append(OccupancyField(read_vgrid(p)))
            t += 1
        if not occ:
            raise FileNotFoundError(f"{datadir}: no occupancy frames")
        tracks = read_trajectories(os.path.join(datadir, "tracks.csv"))
        if any(tr.velocities is None for tr in tracks):
            raise InputError(f"{datadir}: tracks.csv lacks velocity columns")
        frames = tracks[0].frames
        if any(not np.array_equal(tr.frames, frames) for tr in tracks):
            raise InputError(f"{datadir}: trajectories cover different frames")
        pos = np.stack([tr.positions for tr in tracks], axis=1)
        vel = np.stack([tr.velocities for tr in tracks], axis=1)
        jump_frames: list[int] = []
        meta = {}
        man = os.path.join(datadir, "scenario.json")
        if os.path.exists(man):
            meta = json.loads(open(man).read())
            jump_frames = list(meta.get("jump_frames", []))
        return cls(geometry, occ, pos, vel, jump_frames, meta)


# ---------------------------------------------------------------------------
# GNS training

def gns_sample_frames(ds: SequenceDataset, lo: int, hi: int) -> list[int]:
    """Frames t in [lo, hi) usable as one-step samples (need C-history and t+1)."""
    c = VELOCITY_HISTORY
    return [t for t in range(max(lo, c), min(hi, ds.n_frames - 1))]


def make_gns_sample(ds: SequenceDataset, t: int) -> GnsTrainSample:
    hist = tuple(ds.velocities[t - 1 - k] for k in range(VELOCITY_HISTORY))
    return GnsTrainSample(
        pos_prev=ds.positions[t - 1],
        pos_curr=ds.positions[t],
        velocity_history=hist,
        target_velocity=ds.velocities[t],
        interface=ds.occupancy[t],
    )


def fit_dataset_stats(ds: SequenceDataset, frames: list[int], radius: float,
                      max_neighbors: int):
    nodes, edges, targets = [], [], []
    for t in frames:
        s = make_gns_sample(ds, t)
        e = build_radius_graph(s.pos_curr, radius, max_neighbors)
        nodes.append(assemble_node_features(s.pos_prev, s.pos_curr, s.velocity_history))
        edges.append(assemble_edge_features(s.pos_curr, s.pos_prev, e))
        targets.append(s.target_velocity)
    return fit_norm_stats(nodes, edges, targets)


def train_gns(ds: SequenceDataset, cfg: dict, seed: int,
              log_fn=None) -> tuple[GnsModel, list[dict]]:
    """Train on the first 75% of frames with the settings in ``cfg`` (see
    config defaults); returns (model, per-epoch log records)."""
    frames = gns_sample_frames(ds, 0, ds.n_train)
    if not frames:
        raise InputError("no trainable frames (sequence too short)")
    model_cfg = GnsConfig(
        hidden=cfg["hidden"], layers=cfg["layers"], radius=cfg["radius"],
        max_neighbors=cfg["max_neighbors"], patch_size=cfg["patch_size"],
        patch_pool=cfg["patch_pool"], cnn_channels=tuple(cfg["cnn_channels"]),
        no_geometry=cfg.get("no_geometry", False),
    )
    stats = fit_dataset_stats(ds, frames, model_cfg.radius, model_cfg.max_neighbors)
    model = GnsModel(model_cfg, stats, seed=seed)
    adam = AdamState(lr=cfg["lr"], weight_decay=cfg["weight_decay"])
    noise = NoiseConfig(cfg["noise_std"])
    rng = np.random.default_rng([seed, 0x474E53])
    log: list[dict] = []
    geometry = ds.geometry
    for epoch in range(cfg["epochs"]):
        lr = float(cosine_lr(cfg["lr"], epoch, cfg["t_max"]))
        order = rng.permutation(len(frames))
        losses = []
        for i in order:
            sample = make_gns_sample(ds, frames[i])
            losses.append(gns_train_step(model, sample, geometry, noise, adam, rng, lr))
        rec = {"epoch": epoch, "loss": float(np.mean(losses)), "lr": lr}
        log.append(rec)
        if log_fn:
            log_fn(rec)
    return model, log


# ---------------------------------------------------------------------------
# U-Net training

def make_unet_sample(ds: SequenceDataset, t: int, pool_factor: int,
                     recon: ReconstructionConfig, no_velocity: bool,
                     pooled_geo: OccupancyField, n_in: int = 2,
                     velocity_noise_std: float = 0.0, rng=None):
    """Input stack predicting S(t+1) from history ending at t (teacher forced).

    ``velocity_noise_std`` perturbs the particle velocities feeding the
    reconstructed field, hardening the interface model against the imperfect
    predicted velocities it sees during rollout (the target stays clean).
    """
    hist = [pool_occupancy(ds.occupancy[t - k], pool_factor) for k in range(n_in - 1, -1, -1)]
    vel = None
    if not no_velocity:
        v = ds.velocities[t]
        if velocity_noise_std > 0:
            v = v + rng.normal(0.0, velocity_noise_std, v.shape)
        field3 = reconstruct_flow(ds.positions[t + 1], v, ds.geometry, recon)
        vel = maxabs_pool(field3, PoolConfig(pool_factor))
    stack = build_input_stack(hist, vel, pooled_geo, no_velocity)
    target = pool_occupancy(ds.occupancy[t + 1], pool_factor).values[None, ...]
    return stack, target


def unet_sample_frames(ds: SequenceDataset, n_in: int = 2) -> list[int]:
    """Frames t with full history and a train-window target t+1."""
    return list(range(n_in - 1, ds.n_train - 1))


def train_unet(ds: SequenceDataset, cfg: dict, rollout_cfg: dict, seed: int,
               log_fn=None) -> tuple[UNetModel, list[dict]]:
    model_cfg = UNetConfig(
        n_in=cfg["n_in"], base_channels=cfg["base_channels"], depth=cfg["depth"],
        no_velocity=cfg.get("no_velocity", False),
    )
    pool_factor = rollout_cfg["pool_factor"]
    recon = ReconstructionConfig(rollout_cfg["boundary_ratio"], rollout_cfg["dilation_radius"])
    frames = unet_sample_frames(ds, model_cfg.n_in)
    if not frames:
        raise InputError("no trainable frames for the interface model")
    pooled_geo = pool_occupancy(ds.geometry, pool_factor)
    vel_noise = float(cfg.get("velocity_noise_std", 0.0))
    rng = np.random.default_rng([seed, 0x554E45])

    def build(t):
        return make_unet_sample(ds, t, pool_factor, recon, model_cfg.no_velocity,
                                pooled_geo, model_cfg.n_in, vel_noise, rng)

    renoise = vel_noise > 0 and not model_cfg.no_velocity
    samples = [build(t) for t in frames]
    model = UNetModel(model_cfg, seed=seed)
    adam = AdamState(lr=cfg["lr"], weight_decay=cfg["weight_decay"])
    batch = max(1, int(cfg["batch_size"]))
    log: list[dict] = []
    for epoch in range(cfg["epochs"]):
        if renoise and epoch > 0:  # fresh velocity noise each epoch
            samples = [build(t) for t in frames]
        order = rng.permutation(len(samples))
        losses = []
        for lo in range(0, len(order), batch):
            idx = order[lo:lo + batch]
            stacks = np.stack([samples[i][0] for i in idx])
            targets = np.stack([samples[i][1] for i in idx])
            losses.append(unet_train_step(model, stacks, targets, adam, cfg["lr"]))
        rec = {"epoch": epoch, "loss": float(np.mean(losses)), "lr": cfg["lr"]}
        log.append(rec)
        if log_fn:
            log_fn(rec)
    return model, log
