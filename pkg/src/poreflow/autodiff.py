"""Minimal reverse-mode autodiff over dense float64 numpy tensors.

Implements exactly the operator set the particle network and the U-Net need:
matmul, add (with trailing-axis bias broadcast), scale, relu, sigmoid, concat,
slice, segment_sum, gather, conv3d (stride 1, 'same'), transposed_conv3d
(stride 2, kernel 2), maxpool3d (2^3), batchnorm3d, mse_loss,
bce_with_logits_loss, plus two private glue ops (reshape, spatial_mean).

The tape is a DAG of Tensor nodes; ``backward`` visits each node exactly once
in reverse topological order. Everything is deterministic for fixed inputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import InputError, ShapeError

CHECKPOINT_MAGIC = b"PGNS1\n"


class Tensor:
    """A node in the backpropagation DAG."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._backward = None
        self._parents: tuple[Tensor, ...] = ()

    @property
    def shape(self):
        return self.data.shape

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)  # copy: g may be shared upstream
        else:
            self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _node(data, parents, backward_fn) -> Tensor:
    out = Tensor(data)
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def backward(root: Tensor, seed=None) -> None:
    """Backpropagate from ``root``; seed defaults to ones (scalar roots)."""
    if seed is None:
        seed = np.ones_like(root.data)
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    root._accumulate(np.asarray(seed, dtype=np.float64))
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# operators

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: {a.data.shape} @ {b.data.shape}")
    out_data = a.data @ b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _node(out_data, (a, b), bwd)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise add; ``b`` may be a trailing-axis vector (bias broadcast)."""
    if a.data.shape != b.data.shape:
        if b.data.ndim != 1 or a.data.shape[-1] != b.data.shape[0]:
            raise ShapeError(f"add: {a.data.shape} + {b.data.shape}")
    out_data = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            if b.data.shape == a.data.shape:
                b._accumulate(g)
            else:
                b._accumulate(g.reshape(-1, b.data.shape[0]).sum(axis=0))

    return _node(out_data, (a, b), bwd)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(c * g)

    return _node(a.data * c, (a,), bwd)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0.0

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * mask)

    return _node(a.data * mask, (a,), bwd)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                 np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * s * (1.0 - s))

    return _node(s, (a,), bwd)


def concat(tensors, axis: int) -> Tensor:
    datas = [t.data for t in tensors]
    out_data = np.concatenate(datas, axis=axis)
    sizes = [d.shape[axis] for d in datas]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        parts = np.split(g, splits, axis=axis)
        for t, p in zip(tensors, parts):
            if t.requires_grad:
                t._accumulate(p)

    return _node(out_data, tuple(tensors), bwd)


def slice_(a: Tensor, key) -> Tensor:
    """Basic slicing (slices/ints/ellipsis); supports strided steps."""
    out_data = a.data[key]

    def bwd(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[key] = g
            a._accumulate(full)

    return _node(np.ascontiguousarray(out_data), (a,), bwd)


def reshape(a: Tensor, shape) -> Tensor:
    orig = a.data.shape

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g.reshape(orig))

    return _node(a.data.reshape(shape), (a,), bwd)


def gather(a: Tensor, idx) -> Tensor:
    """Row gather: (N, F)[idx] -> (E, F)."""
    idx = np.asarray(idx, dtype=np.int64)
    out_data = a.data[idx]

    def bwd(g):
        if a.requires_grad:
            acc = np.zeros_like(a.data)
            np.add.at(acc, idx, g)
            a._accumulate(acc)

    return _node(out_data, (a,), bwd)


def segment_sum(a: Tensor, idx, num_segments: int) -> Tensor:
    """Scatter-add rows of (E, F) into (num_segments, F) by index."""
    idx = np.asarray(idx, dtype=np.int64)
    if a.data.ndim != 2 or idx.shape != (a.data.shape[0],):
        raise ShapeError("segment_sum expects (E, F) data and (E,) indices")
    out_data = np.zeros((num_segments, a.data.shape[1]), dtype=np.float64)
    np.add.at(out_data, idx, a.data)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g[idx])

    return _node(out_data, (a,), bwd)


def conv3d(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """3D convolution, stride 1, zero 'same' padding, odd kernel.

    x: (N, Cin, D, H, W); w: (Cout, Cin, k, k, k); b: (Cout,) or None.
    """
    n, cin, d, h, wd = x.data.shape
    cout, cin_w, k = w.data.shape[0], w.data.shape[1], w.data.shape[2]
    if cin != cin_w or w.data.shape[2:] != (k, k, k) or k % 2 != 1:
        raise ShapeError(f"conv3d: x {x.data.shape} w {w.data.shape}")
    cols, _ = kernels.conv3d_cols(x.data, k)  # (N, Cin*k^3, V)
    wmat = w.data.reshape(cout, -1)
    out_data = np.matmul(wmat, cols).reshape(n, cout, d, h, wd)
    if b is not None:
        out_data = out_data + b.data[None, :, None, None, None]

    def bwd(g):
        gmat = np.ascontiguousarray(g.reshape(n, cout, -1))
        if b is not None and b.requires_grad:
            b._accumulate(gmat.sum(axis=(0, 2)))
        if w.requires_grad:
            dw = np.matmul(gmat, cols.transpose(0, 2, 1)).sum(axis=0)
            w._accumulate(dw.reshape(w.data.shape))
        if x.requires_grad:
            dcols = np.matmul(wmat.T, gmat)
            x._accumulate(kernels.conv3d_fold(np.ascontiguousarray(dcols), k, d, h, wd))

    parents = (x, w) if b is None else (x, w, b)
    return _node(out_data, parents, bwd)


def transposed_conv3d(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Transposed 3D convolution with kernel 2, stride 2 (each input voxel
    paints a disjoint 2^3 output block).

    x: (N, Cin, D, H, W); w: (Cin, Cout, 2, 2, 2) -> (N, Cout, 2D, 2H, 2W).
    """
    n, cin, d, h, wd = x.data.shape
    if w.data.shape[0] != cin or w.data.shape[2:] != (2, 2, 2):
        raise ShapeError(f"transposed_conv3d: x {x.data.shape} w {w.data.shape}")
    cout = w.data.shape[1]
    out = np.einsum("nizyx,ioabc->nozaybxc", x.data, w.data, optimize=True)
    out_data = out.reshape(n, cout, 2 * d, 2 * h, 2 * wd)
    if b is not None:
        out_data = out_data + b.data[None, :, None, None, None]

    def bwd(g):
        g8 = g.reshape(n, cout, d, 2, h, 2, wd, 2)
        if b is not None and b.requires_grad:
            b._accumulate(g.sum(axis=(0, 2, 3, 4)))
        if w.requires_grad:
            w._accumulate(np.einsum("nizyx,nozaybxc->ioabc", x.data, g8, optimize=True))
        if x.requires_grad:
            x._accumulate(np.einsum("nozaybxc,ioabc->nizyx", g8, w.data, optimize=True))

    parents = (x, w) if b is None else (x, w, b)
    return _node(out_data, parents, bwd)


def maxpool3d(x: Tensor) -> Tensor:
    """2x2x2 max pooling, stride 2; ties resolve to the first corner in
    (dz, dy, dx) order."""
    n, c, d, h, w = x.data.shape
    if d % 2 or h % 2 or w % 2:
        raise ShapeError(f"maxpool3d needs even spatial dims, got {(d, h, w)}")
    d2, h2, w2 = d // 2, h // 2, w // 2
    blocks = x.data.reshape(n, c, d2, 2, h2, 2, w2, 2).transpose(0, 1, 2, 4, 6, 3, 5, 7)
    blocks = np.ascontiguousarray(blocks).reshape(n, c, d2, h2, w2, 8)
    arg = blocks.argmax(axis=-1)
    out_data = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def bwd(g):
        if x.requires_grad:
            gb = np.zeros((n, c, d2, h2, w2, 8), dtype=np.float64)
            np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
            gb = gb.reshape(n, c, d2, h2, w2, 2, 2, 2).transpose(0, 1, 2, 5, 3, 6, 4, 7)
            x._accumulate(gb.reshape(n, c, d, h, w))

    return _node(out_data, (x,), bwd)


@dataclass
class BatchNormState:
    """Running statistics for one batchnorm3d layer (eval mode uses these)."""

    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.9

    @classmethod
    def for_channels(cls, c: int, momentum: float = 0.9) -> "BatchNormState":
        return cls(np.zeros(c), np.ones(c), momentum)


def batchnorm3d(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState,
                training: bool, eps: float = 1e-5) -> Tensor:
    """Per-channel normalization over (N, D, H, W); batch statistics while
    training (running averages updated in place), running statistics in eval."""
    n, c = x.data.shape[0], x.data.shape[1]
    axes = (0, 2, 3, 4)
    if training:
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)  # population variance
        state.running_mean *= state.momentum
        state.running_mean += (1.0 - state.momentum) * mean
        state.running_var *= state.momentum
        state.running_var += (1.0 - state.momentum) * var
    else:
        mean = state.running_mean
        var = state.running_var
    ivar = 1.0 / np.sqrt(var + eps)
    xmu = x.data - mean[None, :, None, None, None]
    xhat = xmu * ivar[None, :, None, None, None]
    out_data = gamma.data[None, :, None, None, None] * xhat + beta.data[None, :, None, None, None]
    m = x.data.size // c

    def bwd(g):
        if beta.requires_grad:
            beta._accumulate(g.sum(axis=axes))
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).sum(axis=axes))
        if x.requires_grad:
            dxhat = g * gamma.data[None, :, None, None, None]
            if training:
                iv = ivar[None, :, None, None, None]
                dvar = (dxhat * xmu).sum(axis=axes) * (-0.5) * ivar ** 3
                dmean = (-dxhat * iv).sum(axis=axes) + dvar * (-2.0 / m) * xmu.sum(axis=axes)
                dx = (dxhat * iv
                      + dvar[None, :, None, None, None] * 2.0 * xmu / m
                      + dmean[None, :, None, None, None] / m)
            else:
                dx = dxhat * ivar[None, :, None, None, None]
            x._accumulate(dx)

    return _node(out_data, (x, gamma, beta), bwd)


def spatial_mean(x: Tensor) -> Tensor:
    """Global average pool: (N, C, D, H, W) -> (N, C)."""
    n, c = x.data.shape[0], x.data.shape[1]
    m = x.data.size // (n * c)
    out_data = x.data.reshape(n, c, -1).mean(axis=2)

    def bwd(g):
        if x.requires_grad:
            x._accumulate(np.broadcast_to((g / m)[:, :, None], (n, c, m)).reshape(x.data.shape))

    return _node(out_data, (x,), bwd)


def mse_loss(pred: Tensor, target) -> Tensor:
    t = np.asarray(target, dtype=np.float64)
    if t.shape != pred.data.shape:
        raise ShapeError(f"mse_loss: {pred.data.shape} vs {t.shape}")
    diff = pred.data - t
    m = diff.size

    def bwd(g):
        if pred.requires_grad:
            pred._accumulate(g * 2.0 * diff / m)

    return _node(np.array((diff ** 2).mean()), (pred,), bwd)


def bce_with_logits_loss(logits: Tensor, target) -> Tensor:
    """Mean binary cross-entropy on raw logits (numerically stable form)."""
    t = np.asarray(target, dtype=np.float64)
    if t.shape != logits.data.shape:
        raise ShapeError(f"bce_with_logits_loss: {logits.data.shape} vs {t.shape}")
    z = logits.data
    loss = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))
    m = z.size
    s = np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))),
                 np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))

    def bwd(g):
        if logits.requires_grad:
            logits._accumulate(g * (s - t) / m)

    return _node(np.array(loss.mean()), (logits,), bwd)


# ---------------------------------------------------------------------------
# parameters, initialization, optimizer

def he_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


def zero_grads(params: dict[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None


@dataclass
class AdamState:
    """Adam with decoupled weight decay; one slot pair per parameter name."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], state: AdamState, lr: float | None = None) -> None:
    """One optimizer step over every parameter that has a gradient."""
    if lr is None:
        lr = state.lr
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = p.grad
        if g is None:
            continue
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        if state.weight_decay:
            update = update + state.weight_decay * p.data
        p.data = p.data - lr * update


def cosine_lr(base_lr: float, epoch: int, t_max: int) -> float:
    """Cosine annealing from base_lr to 0 over t_max epochs (periodic beyond)."""
    return 0.5 * base_lr * (1.0 + np.cos(np.pi * epoch / t_max))


# ---------------------------------------------------------------------------
# checkpoint container

def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """PGNS1 container: magic, one-line JSON manifest, little-endian f32 payload."""
    names = sorted(arrays)
    entries = []
    offset = 0
    blobs = []
    for name in names:
        arr = np.ascontiguousarray(arrays[name], dtype="<f4")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += len(blobs[-1])
    manifest = {"meta": meta or {}, "tensors": entries}
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write((json.dumps(manifest, sort_keys=True) + "\n").encode("utf-8"))
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise InputError(f"{path}: not a model checkpoint")
        manifest = json.loads(fh.readline().decode("utf-8"))
        payload = fh.read()
    arrays = {}
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=start)
        arrays[entry["name"]] = arr.astype(np.float64).reshape(shape)
    return arrays, manifest.get("meta", {})
