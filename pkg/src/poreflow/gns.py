"""Graph-network velocity predictor.

Encoders for node/edge features, a CNN encoder for per-particle geometry and
interface patches, 10 residual message-passing layers at hidden width 128, and
a velocity decoder. Training is one-step prediction with Gaussian position
noise; the loss lives in normalized velocity space.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, Tensor, adam_step, backward, zero_grads
from .coupling import avgpool_patches, condition_patches
from .errors import ConfigError, InputError
from .graph import (FlowGraph, NormStats, build_flow_graph, denormalize, normalize)
from .grids import OccupancyField


@dataclass(frozen=True)
class GnsConfig:
    hidden: int = 128
    layers: int = 10
    radius: float = 32.0
    max_neighbors: int = 64
    patch_size: int = 32
    patch_pool: int = 2
    cnn_channels: tuple[int, int, int] = (8, 16, 32)
    no_geometry: bool = False          # ablation: drop the patch encoder entirely
    mask_abs_positions: bool = False   # test mode: zero the absolute-position features

    def __post_init__(self):
        if self.hidden <= 0 or self.layers <= 0:
            raise ConfigError("hidden width and layer count must be positive")
        if self.patch_size % self.patch_pool:
            raise ConfigError("patch_size must be divisible by patch_pool")


@dataclass(frozen=True)
class NoiseConfig:
    """Std of the Gaussian position noise injected during training (voxels)."""

    position_noise_std: float = 0.067

    def __post_init__(self):
        if self.position_noise_std < 0:
            raise ConfigError("noise std must be >= 0")


def _init_mlp(rng, params, prefix, dims, zero_last: bool = False):
    for i in range(len(dims) - 1):
        if zero_last and i == len(dims) - 2:
            # residual branches start as identity; keeps the 10-layer stack
            # bounded at init while every weight still receives gradient
            w = np.zeros((dims[i], dims[i + 1]))
        else:
            w = ad.he_uniform(rng, (dims[i], dims[i + 1]), dims[i])
        params[f"{prefix}.w{i}"] = Tensor(w, requires_grad=True)
        params[f"{prefix}.b{i}"] = Tensor(np.zeros(dims[i + 1]), requires_grad=True)


def _apply_mlp(params, prefix, x: Tensor, n_linear: int) -> Tensor:
    for i in range(n_linear):
        x = ad.add(ad.matmul(x, params[f"{prefix}.w{i}"]), params[f"{prefix}.b{i}"])
        if i < n_linear - 1:
            x = ad.relu(x)
    return x


class GnsModel:
    """Holds parameters, normalization statistics, and the forward pass."""

    def __init__(self, config: GnsConfig = GnsConfig(),
                 norm_stats: NormStats | None = None, seed: int = 0):
        self.config = config
        self.norm_stats = norm_stats
        self.params: dict[str, Tensor] = {}
        rng = np.random.default_rng(seed)
        h = config.hidden
        from .graph import EDGE_FEATURE_DIM, NODE_FEATURE_DIM

        _init_mlp(rng, self.params, "node_enc", [NODE_FEATURE_DIM, h, h, h])
        _init_mlp(rng, self.params, "edge_enc", [EDGE_FEATURE_DIM, h, h, h])
        c0, c1, c2 = config.cnn_channels
        for name, cin, cout in (("img.conv0", 2, c0), ("img.conv1", c0, c1), ("img.conv2", c1, c2)):
            fan = cin * 27
            self.params[f"{name}.w"] = Tensor(ad.he_uniform(rng, (cout, cin, 3, 3, 3), fan),
                                              requires_grad=True)
            self.params[f"{name}.b"] = Tensor(np.zeros(cout), requires_grad=True)
        # the patch encoding enters through a residual add; start it at zero too
        _init_mlp(rng, self.params, "img.fc", [c2, h], zero_last=True)
        for l in range(config.layers):
            _init_mlp(rng, self.params, f"mp{l}.edge", [3 * h, h, h, h], zero_last=True)
            _init_mlp(rng, self.params, f"mp{l}.node", [2 * h, h, h, h], zero_last=True)
        _init_mlp(rng, self.params, "decode", [h, h, h, 3])

    # -- forward ------------------------------------------------------------

    def _params_view(self, train: bool) -> dict[str, Tensor]:
        if train:
            return self.params
        return {k: Tensor(v.data) for k, v in self.params.items()}

    def _patch_encoding(self, params, positions, geometry, interface) -> Tensor:
        patches = condition_patches(geometry, interface, positions, self.config.patch_size)
        if self.config.patch_pool > 1:
            patches = avgpool_patches(patches, self.config.patch_pool)
        t = Tensor(patches)
        for name in ("img.conv0", "img.conv1", "img.conv2"):
            t = ad.conv3d(t, params[f"{name}.w"], params[f"{name}.b"])
            t = ad.slice_(t, (slice(None), slice(None),
                              slice(None, None, 2), slice(None, None, 2), slice(None, None, 2)))
            t = ad.relu(t)
        t = ad.spatial_mean(t)
        return _apply_mlp(params, "img.fc", t, 1)

    def forward_tape(self, graph: FlowGraph, geometry: OccupancyField | None,
                     interface: OccupancyField | None, train: bool = False,
                     grad_inputs: bool = False):
        """Run the network; returns (normalized velocity Tensor, input Tensors).

        ``grad_inputs`` marks the normalized feature tensors as differentiable
        so input-sensitivity (receptive field) checks can backpropagate to them.
        """
        stats = self.norm_stats
        if stats is None:
            raise ConfigError("model has no normalization statistics")
        params = self._params_view(train)
        raw_nodes = graph.node_features
        if self.config.mask_abs_positions:
            raw_nodes = raw_nodes.copy()
            raw_nodes[:, :6] = 0.0
        node_in = Tensor(normalize(raw_nodes, stats.node_mean, stats.node_std),
                         requires_grad=grad_inputs)
        edge_in = Tensor(normalize(graph.edge_features, stats.edge_mean, stats.edge_std),
                         requires_grad=grad_inputs)

        h = _apply_mlp(params, "node_enc", node_in, 3)
        if not self.config.no_geometry:
            if geometry is None or interface is None:
                raise InputError("geometry and interface required unless no_geometry is set")
            h = ad.add(h, self._patch_encoding(params, graph.node_positions, geometry, interface))
        e = _apply_mlp(params, "edge_enc", edge_in, 3)

        src = graph.edge_index[:, 0]
        dst = graph.edge_index[:, 1]
        n = graph.num_nodes
        for l in range(self.config.layers):
            hi = ad.gather(h, dst)
            hj = ad.gather(h, src)
            e = ad.add(e, _apply_mlp(params, f"mp{l}.edge", ad.concat([hi, hj, e], 1), 3))
            agg = ad.segment_sum(e, dst, n)
            h = ad.add(h, _apply_mlp(params, f"mp{l}.node", ad.concat([h, agg], 1), 3))
        v = _apply_mlp(params, "decode", h, 3)
        return v, {"node": node_in, "edge": edge_in}

    def predict_velocities(self, graph: FlowGraph, geometry: OccupancyField | None,
                           interface: OccupancyField | None) -> np.ndarray:
        """Physical-unit velocities (voxels/frame) for every particle."""
        v, _ = self.forward_tape(graph, geometry, interface, train=False)
        stats = self.norm_stats
        return denormalize(v.data, stats.velocity_mean, stats.velocity_std)

    # -- persistence ----------------------------------------------------------

    def save(self, path) -> None:
        arrays = {f"gns.{k}": v.data for k, v in self.params.items()}
        if self.norm_stats is not None:
            arrays.update(self.norm_stats.as_arrays())
        meta = {"kind": "gns", "config": asdict(self.config)}
        ad.save_checkpoint(path, arrays, meta)

    @classmethod
    def load(cls, path) -> "GnsModel":
        arrays, meta = ad.load_checkpoint(path)
        if meta.get("kind") != "gns":
            raise InputError(f"{path}: not a gns checkpoint")
        cfgdict = dict(meta["config"])
        cfgdict["cnn_channels"] = tuple(cfgdict["cnn_channels"])
        model = cls(GnsConfig(**cfgdict),
                    NormStats.from_arrays(arrays) if "norm.node_mean" in arrays else None)
        for k, p in model.params.items():
            p.data = arrays[f"gns.{k}"]
        return model

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.params.values())


@dataclass(frozen=True)
class GnsTrainSample:
    """One-step training sample at time t (velocity history most recent first)."""

    pos_prev: np.ndarray
    pos_curr: np.ndarray
    velocity_history: tuple[np.ndarray, ...]
    target_velocity: np.ndarray
    interface: OccupancyField | None = None


def gns_train_step(model: GnsModel, sample: GnsTrainSample, geometry: OccupancyField | None,
                   noise: NoiseConfig, adam: AdamState, rng: np.random.Generator,
                   lr: float | None = None) -> float:
    """Noise-injected one-step training update; returns the (normalized) MSE loss.

    Noise perturbs only the input positions; the graph and all position-derived
    features are rebuilt from the noised positions, the target stays clean.
    """
    std = noise.position_noise_std
    pos_prev = sample.pos_prev
    pos_curr = sample.pos_curr
    if std > 0:
        pos_prev = pos_prev + rng.normal(0.0, std, pos_prev.shape)
        pos_curr = pos_curr + rng.normal(0.0, std, pos_curr.shape)
    graph = build_flow_graph(pos_prev, pos_curr, sample.velocity_history,
                             model.config.radius, model.config.max_neighbors)
    vnorm, _ = model.forward_tape(graph, geometry, sample.interface, train=True)
    stats = model.norm_stats
    target = normalize(sample.target_velocity, stats.velocity_mean, stats.velocity_std)
    loss = ad.mse_loss(vnorm, target)
    zero_grads(model.params)
    backward(loss)
    adam_step(model.params, adam, lr)
    return float(loss.data)


def update_positions(p_prev, v_hat) -> np.ndarray:
    """Central-difference advance: p(t+1) = p(t-1) + 2 v(t)."""
    p_prev = np.asarray(p_prev, dtype=np.float64)
    v_hat = np.asarray(v_hat, dtype=np.float64)
    if p_prev.shape != v_hat.shape:
        raise InputError("update_positions: shape mismatch")
    return p_prev + 2.0 * v_hat


def gns_forward(model: GnsModel, graph: FlowGraph, geometry: OccupancyField | None,
                interface: OccupancyField | None) -> np.ndarray:
    """Predicted per-particle velocities in physical units (voxels/frame)."""
    return model.predict_velocities(graph, geometry, interface)


def ablated(model_config: GnsConfig) -> GnsConfig:
    """The geometry-stripped variant used by the ablation runs."""
    return replace(model_config, no_geometry=True)
