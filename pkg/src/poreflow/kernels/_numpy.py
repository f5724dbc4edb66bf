"""Pure-numpy reference implementations of the hot kernels.

Every function here has a numba twin in ``_numba.py`` with the same signature
and bit-identical output (same arithmetic, same accumulation order). Keep the
two files in sync; the equivalence tests compare them element-for-element.

Conventions: grids are indexed ``[channel, z, y, x]``; point and voxel
coordinate triples are ``(x, y, z)``.
"""

import numpy as np

_INF = 1e18


def im2col3d(xp, k, d, h, w):
    """Unfold a zero-padded (N, C, d+k-1, h+k-1, w+k-1) array into conv columns.

    Returns (N, C*k^3, d*h*w) with column index ((c*k+dz)*k+dy)*k+dx and
    voxel index (z*h+y)*w+x.
    """
    n, c = xp.shape[0], xp.shape[1]
    cols = np.empty((n, c, k * k * k, d * h * w), dtype=np.float64)
    off = 0
    for dz in range(k):
        for dy in range(k):
            for dx in range(k):
                cols[:, :, off, :] = xp[:, :, dz:dz + d, dy:dy + h, dx:dx + w].reshape(n, c, -1)
                off += 1
    return cols.reshape(n, c * k * k * k, d * h * w)


def col2im3d(dcols, k, d, h, w):
    """Adjoint of im2col3d: fold columns back onto the padded input shape."""
    n = dcols.shape[0]
    c = dcols.shape[1] // (k * k * k)
    dc4 = dcols.reshape(n, c, k * k * k, d, h, w)
    dxp = np.zeros((n, c, d + k - 1, h + k - 1, w + k - 1), dtype=np.float64)
    off = 0
    for dz in range(k):
        for dy in range(k):
            for dx in range(k):
                dxp[:, :, dz:dz + d, dy:dy + h, dx:dx + w] += dc4[:, :, off]
                off += 1
    return dxp


def maxabs_pool3d(x, f):
    """Block-pool (C, D, H, W) by factor f keeping the larger-|value| extremum.

    Ties (|max| == |min|) resolve to the max.
    """
    c, d, h, w = x.shape
    blk = x.reshape(c, d // f, f, h // f, f, w // f, f)
    mx = blk.max(axis=(2, 4, 6))
    mn = blk.min(axis=(2, 4, 6))
    return np.where(np.abs(mx) >= np.abs(mn), mx, mn)


def sqedt_pass(f):
    """One separable squared-EDT pass: d[m,i] = min_j (i-j)^2 + f[m,j].

    Brute-force broadcast over j, chunked over rows. Exact for integer-valued
    squared distances; _INF marks "no seed yet".
    """
    m, n = f.shape
    i = np.arange(n, dtype=np.float64)
    q = (i[:, None] - i[None, :]) ** 2  # (n, n): (i-j)^2
    out = np.empty_like(f)
    step = max(1, (1 << 22) // (n * n))
    for lo in range(0, m, step):
        hi = min(m, lo + step)
        out[lo:hi] = (q[None, :, :] + f[lo:hi, None, :]).min(axis=2)
    return out


def radius_edges(pos, r, max_nb):
    """Directed edges (src j, dst i) with ||p_i - p_j|| < r strictly, j != i.

    Receivers with more than max_nb in-radius candidates keep the max_nb
    nearest, ties broken by lower source index. Output order is unspecified;
    callers canonicalize.
    """
    n = pos.shape[0]
    r2 = r * r
    src = []
    dst = []
    if n == 0:
        return np.empty((0, 2), dtype=np.int64)
    # chunked pairwise distances; desk-scale N keeps this comfortably in memory
    step = max(1, (1 << 20) // max(n, 1))
    idx = np.arange(n)
    for lo in range(0, n, step):
        hi = min(n, lo + step)
        diff = pos[lo:hi, None, :] - pos[None, :, :]
        d2 = (diff[..., 0] ** 2 + diff[..., 1] ** 2) + diff[..., 2] ** 2
        for i in range(lo, hi):
            row = d2[i - lo]
            mask = row < r2
            mask[i] = False
            cand = idx[mask]
            if cand.size > max_nb:
                order = np.lexsort((cand, row[mask]))
                cand = cand[order[:max_nb]]
            src.append(cand)
            dst.append(np.full(cand.size, i, dtype=np.int64))
    src = np.concatenate(src) if src else np.empty(0, dtype=np.int64)
    dst = np.concatenate(dst) if dst else np.empty(0, dtype=np.int64)
    return np.stack([src.astype(np.int64), dst], axis=1)


def trilinear_gather(grid, pts):
    """Sample an (F, nz, ny, nx) grid at (M, 3) xyz points in [0, n-1]^3."""
    f, nz, ny, nx = grid.shape
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    ix0 = np.floor(x).astype(np.int64)
    iy0 = np.floor(y).astype(np.int64)
    iz0 = np.floor(z).astype(np.int64)
    fx = x - ix0
    fy = y - iy0
    fz = z - iz0
    ix1 = np.minimum(ix0 + 1, nx - 1)
    iy1 = np.minimum(iy0 + 1, ny - 1)
    iz1 = np.minimum(iz0 + 1, nz - 1)
    out = np.zeros((pts.shape[0], f), dtype=np.float64)
    for dz, (iz, wz) in enumerate(((iz0, 1.0 - fz), (iz1, fz))):
        for dy, (iy, wy) in enumerate(((iy0, 1.0 - fy), (iy1, fy))):
            for dx, (ix, wx) in enumerate(((ix0, 1.0 - fx), (ix1, fx))):
                w = wz * wy * wx
                out += w[:, None] * grid[:, iz, iy, ix].T
    return out


def trilinear_splat(pts, vals, nx, ny, nz):
    """Scatter (M, F) values at (M, 3) xyz points onto a grid with trilinear weights.

    Returns (acc, wacc): weighted value sums (F, nz, ny, nx) and weight sums
    (nz, ny, nx). Accumulation is point-major, corner-minor, matching the
    numba twin bit for bit.
    """
    m, f = vals.shape
    acc = np.zeros((f, nz, ny, nx), dtype=np.float64)
    wacc = np.zeros((nz, ny, nx), dtype=np.float64)
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    ix0 = np.floor(x).astype(np.int64)
    iy0 = np.floor(y).astype(np.int64)
    iz0 = np.floor(z).astype(np.int64)
    fx = x - ix0
    fy = y - iy0
    fz = z - iz0
    ix1 = np.minimum(ix0 + 1, nx - 1)
    iy1 = np.minimum(iy0 + 1, ny - 1)
    iz1 = np.minimum(iz0 + 1, nz - 1)
    zs = (iz0, iz1)
    ys = (iy0, iy1)
    xs = (ix0, ix1)
    wzs = (1.0 - fz, fz)
    wys = (1.0 - fy, fy)
    wxs = (1.0 - fx, fx)
    # flatten corners in (point, corner) order so np.add.at replays the same
    # addition sequence as the scalar loop
    ws = []
    lin = []
    for dz in range(2):
        for dy in range(2):
            for dx in range(2):
                ws.append(wzs[dz] * wys[dy] * wxs[dx])
                lin.append((zs[dz] * ny + ys[dy]) * nx + xs[dx])
    ws = np.stack(ws, axis=1).reshape(-1)          # (M*8,) point-major
    lin = np.stack(lin, axis=1).reshape(-1)
    np.add.at(wacc.reshape(-1), lin, ws)
    accf = acc.reshape(f, -1)
    for ch in range(f):
        vrep = np.repeat(vals[:, ch], 8)
        np.add.at(accf[ch], lin, ws * vrep)
    return acc, wacc


def nearest_fill(pts, vals, targets):
    """Value of the nearest point (first index on ties) for each integer xyz target."""
    k = targets.shape[0]
    out = np.empty((k, vals.shape[1]), dtype=np.float64)
    step = max(1, (1 << 21) // max(1, pts.shape[0]))
    t = targets.astype(np.float64)
    for lo in range(0, k, step):
        hi = min(k, lo + step)
        diff = t[lo:hi, None, :] - pts[None, :, :]
        d2 = (diff[..., 0] ** 2 + diff[..., 1] ** 2) + diff[..., 2] ** 2
        out[lo:hi] = vals[np.argmin(d2, axis=1)]
    return out


def redblack_sor(psi, fluid, update, inv_nnb, omega, sweeps):
    """Red-black SOR sweeps of the masked 7-point Laplace stencil, in place.

    All arrays carry a 1-voxel halo (fluid = 0 there). ``fluid`` flags cells
    carrying a potential value, ``update`` flags unknowns, ``inv_nnb`` holds
    1/(fluid-neighbor count). Solid (non-fluid) neighbors contribute no flux.
    """
    nz, ny, nx = psi.shape
    z, y, x = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")
    parity = (z + y + x) % 2
    for _ in range(sweeps):
        for color in (0, 1):
            m = (update > 0) & (parity == color)
            nbsum = np.zeros_like(psi)
            nbsum[1:-1, 1:-1, 1:-1] = (
                psi[:-2, 1:-1, 1:-1] * fluid[:-2, 1:-1, 1:-1]
                + psi[2:, 1:-1, 1:-1] * fluid[2:, 1:-1, 1:-1]
                + psi[1:-1, :-2, 1:-1] * fluid[1:-1, :-2, 1:-1]
                + psi[1:-1, 2:, 1:-1] * fluid[1:-1, 2:, 1:-1]
                + psi[1:-1, 1:-1, :-2] * fluid[1:-1, 1:-1, :-2]
                + psi[1:-1, 1:-1, 2:] * fluid[1:-1, 1:-1, 2:]
            )
            upd = psi + omega * (nbsum * inv_nnb - psi)
            psi[m] = upd[m]


def flood_fill6(mask, seeds):
    """6-connected reachability inside a (nz, ny, nx) boolean mask from xyz seeds."""
    reach = np.zeros_like(mask, dtype=bool)
    for s in range(seeds.shape[0]):
        x, y, z = seeds[s]
        if mask[z, y, x]:
            reach[z, y, x] = True
    while True:
        grown = reach.copy()
        grown[1:, :, :] |= reach[:-1, :, :]
        grown[:-1, :, :] |= reach[1:, :, :]
        grown[:, 1:, :] |= reach[:, :-1, :]
        grown[:, :-1, :] |= reach[:, 1:, :]
        grown[:, :, 1:] |= reach[:, :, :-1]
        grown[:, :, :-1] |= reach[:, :, 1:]
        grown &= mask
        if np.array_equal(grown, reach):
            return reach
        reach = grown
