"""Hot numeric kernels with a numba backend and a pure-numpy fallback.

The backend is picked once at import from the ``POREFLOW_BACKEND`` environment
variable: ``auto`` (default; numba when importable), ``numba``, or ``numpy``.
``POREFLOW_THREADS`` caps numba's thread pool. ``benchmarks/bench_kernels.py``
times the two backends side by side.

The functions re-exported here keep raw kernel signatures; higher-level
wrappers (padding, canonical edge order, 3D EDT composition) live below.
"""

import os

import numpy as np

_requested = os.environ.get("POREFLOW_BACKEND", "auto").lower()
if _requested not in ("auto", "numba", "numpy"):
    raise ValueError(f"POREFLOW_BACKEND must be auto|numba|numpy, got {_requested!r}")

if _requested in ("auto", "numba"):
    try:
        from . import _numba as _impl

        BACKEND = "numba"
        import numba as _nb

        _threads = os.environ.get("POREFLOW_THREADS")
        if _threads:
            try:
                _nb.set_num_threads(max(1, min(int(_threads), _nb.config.NUMBA_NUM_THREADS)))
            except ValueError:
                pass
    except ImportError:
        if _requested == "numba":
            raise
        from . import _numpy as _impl

        BACKEND = "numpy"
else:
    from . import _numpy as _impl

    BACKEND = "numpy"

im2col3d = _impl.im2col3d
col2im3d = _impl.col2im3d
maxabs_pool3d = _impl.maxabs_pool3d
sqedt_pass = _impl.sqedt_pass
trilinear_gather = _impl.trilinear_gather
trilinear_splat = _impl.trilinear_splat
nearest_fill = _impl.nearest_fill
redblack_sor = _impl.redblack_sor
flood_fill6 = _impl.flood_fill6

EDT_INF = 1e18


def radius_edges(pos, r, max_nb):
    """Directed radius-graph edges in canonical (dst, src) lexicographic order.

    Strict ``||p_i - p_j|| < r``; receivers keep at most ``max_nb`` nearest
    senders, distance ties broken by lower source index.
    """
    pos = np.ascontiguousarray(pos, dtype=np.float64)
    if not np.all(np.isfinite(pos)):
        raise ValueError("positions must be finite")
    if r <= 0 or max_nb <= 0:
        raise ValueError("radius and max_neighbors must be positive")
    edges = _impl.radius_edges(pos, float(r), int(max_nb))
    if edges.shape[0] == 0:
        return edges.reshape(0, 2)
    order = np.lexsort((edges[:, 0], edges[:, 1]))
    return np.ascontiguousarray(edges[order])


def squared_edt(seed_mask):
    """Exact squared Euclidean distance to the nearest seed voxel.

    ``seed_mask`` is a (nz, ny, nx) boolean array; voxels with no seed anywhere
    would stay at EDT_INF, so callers must pass at least one seed.
    """
    nz, ny, nx = seed_mask.shape
    f = np.where(seed_mask, 0.0, EDT_INF)
    # pass along x
    f = sqedt_pass(np.ascontiguousarray(f.reshape(nz * ny, nx))).reshape(nz, ny, nx)
    # pass along y
    f = np.ascontiguousarray(f.transpose(0, 2, 1))
    f = sqedt_pass(f.reshape(nz * nx, ny)).reshape(nz, nx, ny).transpose(0, 2, 1)
    # pass along z
    f = np.ascontiguousarray(f.transpose(1, 2, 0))
    f = sqedt_pass(f.reshape(ny * nx, nz)).reshape(ny, nx, nz).transpose(2, 0, 1)
    return np.ascontiguousarray(f)


def conv3d_cols(x, k):
    """Zero-pad for 'same' conv and unfold: returns (cols, (d, h, w))."""
    n, c, d, h, w = x.shape
    p = k // 2
    xp = np.zeros((n, c, d + 2 * p, h + 2 * p, w + 2 * p), dtype=np.float64)
    xp[:, :, p:p + d, p:p + h, p:p + w] = x
    return im2col3d(xp, k, d, h, w), (d, h, w)


def conv3d_fold(dcols, k, d, h, w):
    """Adjoint of conv3d_cols: fold columns and crop the padding halo."""
    p = k // 2
    dxp = col2im3d(dcols, k, d, h, w)
    return np.ascontiguousarray(dxp[:, :, p:p + d, p:p + h, p:p + w])
