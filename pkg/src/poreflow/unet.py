"""3D U-Net interface predictor.

Input stack (channel order, recorded in checkpoints): interface history oldest
to newest (N_in frames), velocity components Vx, Vy, Vz, pore geometry. The
``no_velocity`` ablation drops the three velocity channels. Encoder levels
double the channel count; decoding mirrors with transposed convolutions and
skip concatenation; output is one logit channel at the input resolution.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, BatchNormState, Tensor, adam_step, backward, zero_grads
from .errors import ConfigError, InputError, ShapeError
from .grids import OccupancyField, VoxelGrid

CHANNEL_ORDER_NOTE = "S(t-N_in+1)..S(t), Vx, Vy, Vz, G"


@dataclass(frozen=True)
class UNetConfig:
    n_in: int = 2
    base_channels: int = 16
    depth: int = 3
    no_velocity: bool = False

    def __post_init__(self):
        if self.n_in < 1 or self.base_channels < 1 or self.depth < 1:
            raise ConfigError("n_in, base_channels, depth must be positive")

    @property
    def in_channels(self) -> int:
        return self.n_in + (0 if self.no_velocity else 3) + 1


class UNetModel:
    def __init__(self, config: UNetConfig = UNetConfig(), seed: int = 0):
        self.config = config
        self.params: dict[str, Tensor] = {}
        self.bn: dict[str, BatchNormState] = {}
        rng = np.random.default_rng(seed)
        b = config.base_channels
        enc_out = [b * (2 ** k) for k in range(config.depth + 1)]
        chain: list[tuple[str, int, int]] = []
        cin = config.in_channels
        for k, cout in enumerate(enc_out):
            chain.append((f"enc{k}.conv0", cin, cout))
            chain.append((f"enc{k}.conv1", cout, cout))
            cin = cout
        for k in range(config.depth - 1, -1, -1):
            cout = enc_out[k]
            self._init_conv(rng, f"dec{k}.up", 2 * cout, cout, kernel=2, transposed=True)
            chain.append((f"dec{k}.conv0", 2 * cout, cout))
            chain.append((f"dec{k}.conv1", cout, cout))
        for name, ci, co in chain:
            self._init_conv(rng, name, ci, co, kernel=3)
            self.params[f"{name}.gamma"] = Tensor(np.ones(co), requires_grad=True)
            self.params[f"{name}.beta"] = Tensor(np.zeros(co), requires_grad=True)
            self.bn[name] = BatchNormState.for_channels(co)
        self._init_conv(rng, "head", enc_out[0], 1, kernel=1)

    def _init_conv(self, rng, name, cin, cout, kernel, transposed=False):
        if transposed:
            shape = (cin, cout, kernel, kernel, kernel)
        else:
            shape = (cout, cin, kernel, kernel, kernel)
        fan = cin * kernel ** 3
        self.params[f"{name}.w"] = Tensor(ad.he_uniform(rng, shape, fan), requires_grad=True)
        self.params[f"{name}.b"] = Tensor(np.zeros(cout), requires_grad=True)

    def encoder_channels(self) -> list[int]:
        return [self.config.base_channels * (2 ** k) for k in range(self.config.depth + 1)]

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.params.values())

    # -- forward --------------------------------------------------------------

    def _params_view(self, train: bool) -> dict[str, Tensor]:
        if train:
            return self.params
        return {k: Tensor(v.data) for k, v in self.params.items()}

    def _double_conv(self, params, prefix, t: Tensor, training: bool) -> Tensor:
        for i in (0, 1):
            name = f"{prefix}.conv{i}"
            t = ad.conv3d(t, params[f"{name}.w"], params[f"{name}.b"])
            t = ad.batchnorm3d(t, params[f"{name}.gamma"], params[f"{name}.beta"],
                               self.bn[name], training)
            t = ad.relu(t)
        return t

    def forward_tape(self, stack: np.ndarray, training: bool = False) -> Tensor:
        """Logits with the spatial shape of the input.

        ``stack`` is (C, D, H, W) or (N, C, D, H, W); spatial dims are padded
        with zeros to a multiple of 2^depth and the logits cropped back.
        """
        x = np.asarray(stack, dtype=np.float64)
        if x.ndim == 4:
            x = x[None]
        if x.ndim != 5:
            raise ShapeError(f"expected (N, C, D, H, W) input, got {x.shape}")
        if x.shape[1] != self.config.in_channels:
            raise ShapeError(f"expected {self.config.in_channels} channels "
                             f"({'no-velocity' if self.config.no_velocity else 'full'} model), "
                             f"got {x.shape[1]}")
        mult = 2 ** self.config.depth
        n, c, d, h, w = x.shape
        pd, ph, pw = (-d) % mult, (-h) % mult, (-w) % mult
        if pd or ph or pw:
            x = np.pad(x, ((0, 0), (0, 0), (0, pd), (0, ph), (0, pw)))
        params = self._params_view(training)

        t = Tensor(x)
        cur = self._double_conv(params, "enc0", t, training)
        skips = []
        for k in range(1, self.config.depth + 1):
            skips.append(cur)
            cur = ad.maxpool3d(cur)
            cur = self._double_conv(params, f"enc{k}", cur, training)
        for k in range(self.config.depth - 1, -1, -1):
            cur = ad.transposed_conv3d(cur, params[f"dec{k}.up.w"], params[f"dec{k}.up.b"])
            cur = ad.concat([skips[k], cur], axis=1)
            cur = self._double_conv(params, f"dec{k}", cur, training)
        logits = ad.conv3d(cur, params["head.w"], params["head.b"])
        if pd or ph or pw:
            logits = ad.slice_(logits, (slice(None), slice(None), slice(0, d), slice(0, h), slice(0, w)))
        return logits

    def predict_logits(self, stack: np.ndarray) -> np.ndarray:
        """Eval-mode logits as a (D, H, W) array for a single input stack."""
        out = self.forward_tape(stack, training=False)
        return out.data[0, 0]

    # -- persistence ----------------------------------------------------------

    def save(self, path) -> None:
        arrays = {f"unet.{k}": v.data for k, v in self.params.items()}
        for name, st in self.bn.items():
            arrays[f"bnstate.{name}.mean"] = st.running_mean
            arrays[f"bnstate.{name}.var"] = st.running_var
        meta = {"kind": "unet", "config": asdict(self.config),
                "channel_order": CHANNEL_ORDER_NOTE}
        ad.save_checkpoint(path, arrays, meta)

    @classmethod
    def load(cls, path) -> "UNetModel":
        arrays, meta = ad.load_checkpoint(path)
        if meta.get("kind") != "unet":
            raise InputError(f"{path}: not a unet checkpoint")
        model = cls(UNetConfig(**meta["config"]))
        for k, p in model.params.items():
            p.data = arrays[f"unet.{k}"]
        for name, st in model.bn.items():
            st.running_mean = arrays[f"bnstate.{name}.mean"]
            st.running_var = arrays[f"bnstate.{name}.var"]
        return model


def build_input_stack(occupancy_history, velocity: VoxelGrid | None,
                      geometry: OccupancyField, no_velocity: bool = False) -> np.ndarray:
    """Assemble the input channels in the canonical order.

    occupancy_history: N_in OccupancyFields, oldest first, at model resolution.
    velocity: 3-channel VoxelGrid at model resolution (ignored if no_velocity).
    """
    layers = [occ.values for occ in occupancy_history]
    if not no_velocity:
        if velocity is None:
            raise InputError("velocity grid required for the full model")
        if velocity.channels != 3:
            raise ShapeError("velocity grid must have 3 channels")
        layers.extend(velocity.data)
    layers.append(geometry.values)
    return np.stack(layers, axis=0)


def unet_forward(model: UNetModel, stack: np.ndarray, training: bool = False):
    """Logit field for an input stack (see build_input_stack for channel order)."""
    return model.forward_tape(stack, training)


def binarize(logits) -> OccupancyField:
    """Threshold logits at 0 (sigmoid >= 0.5, boundary included)."""
    arr = np.asarray(logits, dtype=np.float64)
    arr = arr.reshape(arr.shape[-3:])
    if not np.all(np.isfinite(arr)):
        raise InputError("non-finite logits")
    return OccupancyField.from_mask(arr >= 0.0)


def unet_train_step(model: UNetModel, stacks: np.ndarray, targets: np.ndarray,
                    adam: AdamState, lr: float | None = None) -> float:
    """BCE-with-logits step on a batch of stacks; targets must be binary."""
    t = np.asarray(targets, dtype=np.float64)
    if not np.all((t == 0.0) | (t == 1.0)):
        raise InputError("targets must be binary")
    logits = model.forward_tape(stacks, training=True)
    if t.shape != logits.data.shape:
        t = t.reshape(logits.data.shape)
    loss = ad.bce_with_logits_loss(logits, t)
    zero_grads(model.params)
    backward(loss)
    adam_step(model.params, adam, lr)
    return float(loss.data)
