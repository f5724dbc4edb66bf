"""Coupled autoregressive rollout of particle states and interface fields.

Each step, in order: predict particle velocities from the current graph,
advance positions by the central-difference rule, rebuild the radius graph on
the new positions, reconstruct and pool the velocity field at those positions,
assemble the U-Net input stack, predict and binarize the next interface, then
push the new interface and velocity into their ring buffers. Steps are pure:
a failed step leaves the previous state untouched, and the work per step does
not depend on the step index.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .coupling import (PoolConfig, ReconstructionConfig, maxabs_pool,
                       pool_occupancy, reconstruct_flow, upsample_occupancy)
from .errors import InputError
from .gns import update_positions
from .graph import VELOCITY_HISTORY, FlowGraph, build_flow_graph
from .grids import OccupancyField
from .unet import binarize, build_input_stack


@dataclass(frozen=True)
class RolloutConfig:
    radius: float = 32.0
    max_neighbors: int = 64
    pool_factor: int = 8
    reconstruction: ReconstructionConfig = ReconstructionConfig()
    n_in: int = 2


@dataclass(frozen=True)
class RolloutState:
    """Ring-buffered histories advanced by each step (sizes never change)."""

    pos_prev: np.ndarray                       # p(t-1), (N, 3)
    pos_curr: np.ndarray                       # p(t), (N, 3)
    velocity_history: tuple[np.ndarray, ...]   # v(t-1)..v(t-C), most recent first
    interface_history: tuple[OccupancyField, ...]  # oldest..newest, len N_in
    geometry: OccupancyField
    step_index: int = 0
    out_of_domain: np.ndarray | None = None
    graph: FlowGraph | None = None             # cached graph built on pos_curr

    def __post_init__(self):
        if len(self.velocity_history) != VELOCITY_HISTORY:
            raise InputError(f"velocity history must hold {VELOCITY_HISTORY} frames")
        if not np.all(np.isfinite(self.pos_curr)) or not np.all(np.isfinite(self.pos_prev)):
            raise InputError("non-finite particle positions")
        if self.out_of_domain is None:
            object.__setattr__(self, "out_of_domain",
                               np.zeros(self.pos_curr.shape[0], dtype=bool))


@dataclass(frozen=True)
class RolloutFrame:
    """Outputs of one step: state at t+1 plus the velocities predicted at t."""

    step: int
    positions: np.ndarray
    velocities: np.ndarray
    occupancy: OccupancyField


def _clamp_to_domain(positions: np.ndarray, dims) -> tuple[np.ndarray, np.ndarray]:
    nx, ny, nz = dims
    hi = np.array([nx - 1, ny - 1, nz - 1], dtype=np.float64)
    clamped = np.clip(positions, 0.0, hi)
    flagged = np.any(positions != clamped, axis=1)
    return clamped, flagged


def rollout_step(state: RolloutState, gns_model, unet_model,
                 cfg: RolloutConfig) -> tuple[RolloutState, RolloutFrame]:
    """Advance one coupled step; returns (new state, emitted frame).

    ``gns_model`` needs ``predict_velocities(graph, geometry, interface)`` and
    ``unet_model`` needs ``predict_logits(stack)`` plus a ``config`` carrying
    ``no_velocity``, so trained models and test oracles are interchangeable.
    """
    interface_now = state.interface_history[-1]

    graph = state.graph
    if graph is None:
        graph = build_flow_graph(state.pos_prev, state.pos_curr, state.velocity_history,
                                 cfg.radius, cfg.max_neighbors)
    v_hat = gns_model.predict_velocities(graph, state.geometry, interface_now)

    vel_history = (v_hat,) + state.velocity_history[:-1]
    pos_next_raw = update_positions(state.pos_prev, v_hat)
    pos_next, newly_out = _clamp_to_domain(pos_next_raw, state.geometry.dims)
    graph_next = build_flow_graph(state.pos_curr, pos_next, vel_history,
                                  cfg.radius, cfg.max_neighbors)

    vel_field = reconstruct_flow(pos_next, v_hat, state.geometry, cfg.reconstruction)
    pooled_vel = maxabs_pool(vel_field, PoolConfig(cfg.pool_factor))
    pooled_geo = pool_occupancy(state.geometry, cfg.pool_factor)
    pooled_hist = [pool_occupancy(occ, cfg.pool_factor) for occ in state.interface_history]

    no_velocity = bool(getattr(unet_model.config, "no_velocity", False))
    stack = build_input_stack(pooled_hist, None if no_velocity else pooled_vel,
                              pooled_geo, no_velocity)
    logits = unet_model.predict_logits(stack)
    interface_next = upsample_occupancy(binarize(logits), cfg.pool_factor,
                                        state.geometry.dims)

    new_state = replace(
        state,
        pos_prev=state.pos_curr,
        pos_curr=pos_next,
        velocity_history=vel_history,
        interface_history=state.interface_history[1:] + (interface_next,),
        step_index=state.step_index + 1,
        out_of_domain=state.out_of_domain | newly_out,
        graph=graph_next,
    )
    frame = RolloutFrame(step=state.step_index + 1, positions=pos_next,
                         velocities=v_hat, occupancy=interface_next)
    return new_state, frame


def rollout(state: RolloutState, gns_model, unet_model, n_steps: int,
            cfg: RolloutConfig) -> tuple[list[RolloutFrame], RolloutState]:
    """n_steps sequential applications of rollout_step, emitting every frame."""
    if n_steps < 1:
        raise InputError("n_steps must be >= 1")
    frames: list[RolloutFrame] = []
    for _ in range(n_steps):
        state, fr = rollout_step(state, gns_model, unet_model, cfg)
        frames.append(fr)
    return frames, state


def initial_state_from_sequence(seq, start_frame: int) -> RolloutState:
    """Build the rollout state at ``start_frame`` from ground-truth history.

    Uses positions at t-1 and t, ground-truth velocities v(t-1)..v(t-C), and
    the last N_in interface frames.
    """
    c = VELOCITY_HISTORY
    if start_frame < c or start_frame >= len(seq.occupancy):
        raise InputError(f"start_frame must lie in [{c}, {len(seq.occupancy)})")
    vel_history = tuple(seq.velocities_at(start_frame - 1 - k) for k in range(c))
    return RolloutState(
        pos_prev=seq.positions_at(start_frame - 1),
        pos_curr=seq.positions_at(start_frame),
        velocity_history=vel_history,
        interface_history=(seq.occupancy[start_frame - 1], seq.occupancy[start_frame]),
        geometry=seq.geometry,
    )
