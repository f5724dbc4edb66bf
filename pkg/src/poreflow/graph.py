"""Radius-graph construction and feature assembly for the particle network.

Node features (21 = 3C+6 with C=5): [p(t-1), p(t), v(t-1), ..., v(t-C)], most
recent velocity first. Edge features (7): receiver-minus-sender displacements
at t and t-1, then the l2 norm of that 6-vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import InputError, ShapeError

VELOCITY_HISTORY = 5                      # C
NODE_FEATURE_DIM = 3 * VELOCITY_HISTORY + 6
EDGE_FEATURE_DIM = 7
DEFAULT_RADIUS = 32.0
DEFAULT_MAX_NEIGHBORS = 64
STD_FLOOR = 1e-8


@dataclass(frozen=True)
class FlowGraph:
    """One time step's particle graph: positions, features, directed edges (src->dst)."""

    node_positions: np.ndarray  # (N, 3)
    node_features: np.ndarray   # (N, 21)
    edge_index: np.ndarray      # (E, 2) int64, columns (src j, dst i)
    edge_features: np.ndarray   # (E, 7)

    def __post_init__(self):
        n = self.node_positions.shape[0]
        if self.node_features.shape != (n, NODE_FEATURE_DIM):
            raise ShapeError(f"node features must be (N, {NODE_FEATURE_DIM})")
        if self.edge_index.ndim != 2 or self.edge_index.shape[1] != 2:
            raise ShapeError("edge_index must be (E, 2)")
        if self.edge_features.shape != (self.edge_index.shape[0], EDGE_FEATURE_DIM):
            raise ShapeError(f"edge features must be (E, {EDGE_FEATURE_DIM})")
        if self.edge_index.size and (self.edge_index.min() < 0 or self.edge_index.max() >= n):
            raise InputError("edge_index out of range")

    @property
    def num_nodes(self) -> int:
        return self.node_positions.shape[0]

    @property
    def num_edges(self) -> int:
        return self.edge_index.shape[0]


def build_radius_graph(positions, r: float = DEFAULT_RADIUS,
                       max_neighbors: int = DEFAULT_MAX_NEIGHBORS) -> np.ndarray:
    """Directed edges (src, dst) for all pairs with ||p_dst - p_src|| < r, strictly.

    Receivers over the neighbor cap keep the max_neighbors nearest senders,
    distance ties broken by lower sender index. Output is in canonical
    (dst, src) lexicographic order.
    """
    pos = np.asarray(positions, dtype=np.float64)
    if pos.ndim != 2 or pos.shape[1] != 3:
        raise ShapeError("positions must be (N, 3)")
    if not np.all(np.isfinite(pos)):
        raise InputError("positions must be finite")
    return kernels.radius_edges(pos, r, max_neighbors)


def assemble_node_features(pos_prev, pos_curr, velocity_history) -> np.ndarray:
    """Concatenate [p(t-1), p(t), v(t-1) ... v(t-C)] per particle.

    ``velocity_history`` is a sequence of exactly C (N, 3) arrays ordered most
    recent first.
    """
    pos_prev = np.asarray(pos_prev, dtype=np.float64)
    pos_curr = np.asarray(pos_curr, dtype=np.float64)
    vels = [np.asarray(v, dtype=np.float64) for v in velocity_history]
    if len(vels) != VELOCITY_HISTORY:
        raise InputError(f"need exactly {VELOCITY_HISTORY} velocity frames, got {len(vels)}")
    n = pos_curr.shape[0]
    if pos_prev.shape != (n, 3) or any(v.shape != (n, 3) for v in vels):
        raise InputError("history shapes disagree")
    return np.concatenate([pos_prev, pos_curr] + vels, axis=1)


def unpack_node_features(features) -> tuple[np.ndarray, np.ndarray, list[np.ndarray]]:
    """Inverse of assemble_node_features."""
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2 or f.shape[1] != NODE_FEATURE_DIM:
        raise ShapeError(f"expected (N, {NODE_FEATURE_DIM}) features")
    vels = [f[:, 6 + 3 * k:9 + 3 * k] for k in range(VELOCITY_HISTORY)]
    return f[:, 0:3], f[:, 3:6], vels


def assemble_edge_features(pos_curr, pos_prev, edge_index) -> np.ndarray:
    """Per edge: [p_i - p_j at t, p_i - p_j at t-1, ||.||_2 of the 6-vector]."""
    pos_curr = np.asarray(pos_curr, dtype=np.float64)
    pos_prev = np.asarray(pos_prev, dtype=np.float64)
    src = edge_index[:, 0]
    dst = edge_index[:, 1]
    d_curr = pos_curr[dst] - pos_curr[src]
    d_prev = pos_prev[dst] - pos_prev[src]
    disp = np.concatenate([d_curr, d_prev], axis=1)
    norm = np.sqrt((disp ** 2).sum(axis=1, keepdims=True))
    return np.concatenate([disp, norm], axis=1)


def build_flow_graph(pos_prev, pos_curr, velocity_history,
                     r: float = DEFAULT_RADIUS,
                     max_neighbors: int = DEFAULT_MAX_NEIGHBORS) -> FlowGraph:
    pos_curr = np.asarray(pos_curr, dtype=np.float64)
    pos_prev = np.asarray(pos_prev, dtype=np.float64)
    edges = build_radius_graph(pos_curr, r, max_neighbors)
    return FlowGraph(
        node_positions=pos_curr,
        node_features=assemble_node_features(pos_prev, pos_curr, velocity_history),
        edge_index=edges,
        edge_features=assemble_edge_features(pos_curr, pos_prev, edges),
    )


@dataclass(frozen=True)
class NormStats:
    """Per-dimension zero-mean/unit-variance statistics (population std, floored)."""

    node_mean: np.ndarray
    node_std: np.ndarray
    edge_mean: np.ndarray
    edge_std: np.ndarray
    velocity_mean: np.ndarray
    velocity_std: np.ndarray

    def __post_init__(self):
        for name, dim in (("node", NODE_FEATURE_DIM), ("edge", EDGE_FEATURE_DIM), ("velocity", 3)):
            m = np.asarray(getattr(self, f"{name}_mean"), dtype=np.float64).reshape(dim)
            s = np.asarray(getattr(self, f"{name}_std"), dtype=np.float64).reshape(dim)
            if np.any(s < STD_FLOOR):
                raise InputError(f"{name}_std below floor")
            object.__setattr__(self, f"{name}_mean", m)
            object.__setattr__(self, f"{name}_std", s)

    def as_arrays(self) -> dict[str, np.ndarray]:
        return {
            "norm.node_mean": self.node_mean, "norm.node_std": self.node_std,
            "norm.edge_mean": self.edge_mean, "norm.edge_std": self.edge_std,
            "norm.velocity_mean": self.velocity_mean, "norm.velocity_std": self.velocity_std,
        }

    @classmethod
    def from_arrays(cls, arrays) -> "NormStats":
        return cls(
            node_mean=arrays["norm.node_mean"], node_std=arrays["norm.node_std"],
            edge_mean=arrays["norm.edge_mean"], edge_std=arrays["norm.edge_std"],
            velocity_mean=arrays["norm.velocity_mean"], velocity_std=arrays["norm.velocity_std"],
        )


def _mean_std(rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = rows.mean(axis=0)
    std = rows.std(axis=0)  # population std
    return mean, np.maximum(std, STD_FLOOR)


def fit_norm_stats(node_features, edge_features, target_velocities) -> NormStats:
    """Fit statistics over concatenated training frames (lists of arrays)."""
    node_features = list(node_features)
    if not node_features or not list(target_velocities):
        raise InputError("fit_norm_stats: empty dataset")
    nodes = np.concatenate([np.asarray(a, dtype=np.float64) for a in node_features], axis=0)
    edges = np.concatenate([np.asarray(a, dtype=np.float64) for a in edge_features], axis=0)
    vels = np.concatenate([np.asarray(a, dtype=np.float64) for a in target_velocities], axis=0)
    if nodes.size == 0 or vels.size == 0:
        raise InputError("fit_norm_stats: empty dataset")
    if edges.size == 0:
        edges = np.zeros((1, EDGE_FEATURE_DIM))
    nm, ns = _mean_std(nodes)
    em, es = _mean_std(edges)
    vm, vs = _mean_std(vels)
    return NormStats(nm, ns, em, es, vm, vs)


def normalize(x, mean, std) -> np.ndarray:
    return (np.asarray(x, dtype=np.float64) - mean) / std


def denormalize(x, mean, std) -> np.ndarray:
    return np.asarray(x, dtype=np.float64) * std + mean
