"""Numba-compiled twins of the kernels in ``_numpy.py``.

Same signatures, same arithmetic, same accumulation order: outputs are
bit-identical to the reference implementations (the equivalence tests enforce
this). Grids are ``[channel, z, y, x]``; coordinate triples are ``(x, y, z)``.
"""

import numpy as np
from numba import njit

_INF = 1e18


@njit(cache=True)
def im2col3d(xp, k, d, h, w):
    n, c = xp.shape[0], xp.shape[1]
    cols = np.empty((n, c * k * k * k, d * h * w), dtype=np.float64)
    for t in range(n * c):
        ni = t // c
        ci = t % c
        for dz in range(k):
            for dy in range(k):
                for dx in range(k):
                    row = ((ci * k + dz) * k + dy) * k + dx
                    v = 0
                    for z in range(d):
                        for y in range(h):
                            for x in range(w):
                                cols[ni, row, v] = xp[ni, ci, z + dz, y + dy, x + dx]
                                v += 1
    return cols


@njit(cache=True)
def col2im3d(dcols, k, d, h, w):
    n = dcols.shape[0]
    c = dcols.shape[1] // (k * k * k)
    dxp = np.zeros((n, c, d + k - 1, h + k - 1, w + k - 1), dtype=np.float64)
    for t in range(n * c):  # offset order fixed per element (matches numpy twin)
        ni = t // c
        ci = t % c
        for dz in range(k):
            for dy in range(k):
                for dx in range(k):
                    row = ((ci * k + dz) * k + dy) * k + dx
                    v = 0
                    for z in range(d):
                        for y in range(h):
                            for x in range(w):
                                dxp[ni, ci, z + dz, y + dy, x + dx] += dcols[ni, row, v]
                                v += 1
    return dxp


@njit(cache=True)
def maxabs_pool3d(x, f):
    c, d, h, w = x.shape
    out = np.empty((c, d // f, h // f, w // f), dtype=np.float64)
    for ci in range(c):
        for bz in range(d // f):
            for by in range(h // f):
                for bx in range(w // f):
                    mx = -_INF
                    mn = _INF
                    for z in range(bz * f, bz * f + f):
                        for y in range(by * f, by * f + f):
                            for xx in range(bx * f, bx * f + f):
                                v = x[ci, z, y, xx]
                                if v > mx:
                                    mx = v
                                if v < mn:
                                    mn = v
                    out[ci, bz, by, bx] = mx if abs(mx) >= abs(mn) else mn
    return out


@njit(cache=True)
def sqedt_pass(f):
    m, n = f.shape
    out = np.empty_like(f)
    v = np.empty(n, dtype=np.int64)       # parabola sites
    zlo = np.empty(n + 1, dtype=np.float64)  # envelope boundaries
    for row in range(m):
        kk = -1
        for q in range(n):
            fq = f[row, q]
            if fq >= _INF:
                continue
            if kk < 0:
                kk = 0
                v[0] = q
                zlo[0] = -_INF
                zlo[1] = _INF
                continue
            while True:
                p = v[kk]
                s = ((fq + q * q) - (f[row, p] + p * p)) / (2.0 * (q - p))
                if s <= zlo[kk]:
                    kk -= 1
                    if kk < 0:
                        break
                else:
                    break
            kk += 1
            v[kk] = q
            zlo[kk] = s if kk > 0 else -_INF
            zlo[kk + 1] = _INF
        if kk < 0:
            for i in range(n):
                out[row, i] = _INF
            continue
        j = 0
        for i in range(n):
            while zlo[j + 1] < i:
                j += 1
            p = v[j]
            q = np.float64(i) - np.float64(p)
            out[row, i] = q * q + f[row, p]
    return out


@njit(cache=True)
def radius_edges(pos, r, max_nb):
    n = pos.shape[0]
    r2 = r * r
    if n == 0:
        return np.empty((0, 2), dtype=np.int64)
    # uniform cell binning at cell size r: candidates live in the 27-cell hood
    mins = np.empty(3, dtype=np.float64)
    for a in range(3):
        mn = pos[0, a]
        for i in range(1, n):
            if pos[i, a] < mn:
                mn = pos[i, a]
        mins[a] = mn
    ncx = 1
    ncy = 1
    ncz = 1
    cix = np.empty(n, dtype=np.int64)
    ciy = np.empty(n, dtype=np.int64)
    ciz = np.empty(n, dtype=np.int64)
    for i in range(n):
        cix[i] = np.int64((pos[i, 0] - mins[0]) / r)
        ciy[i] = np.int64((pos[i, 1] - mins[1]) / r)
        ciz[i] = np.int64((pos[i, 2] - mins[2]) / r)
        if cix[i] + 1 > ncx:
            ncx = cix[i] + 1
        if ciy[i] + 1 > ncy:
            ncy = ciy[i] + 1
        if ciz[i] + 1 > ncz:
            ncz = ciz[i] + 1
    ncell = ncx * ncy * ncz
    counts = np.zeros(ncell + 1, dtype=np.int64)
    for i in range(n):
        cid = (ciz[i] * ncy + ciy[i]) * ncx + cix[i]
        counts[cid + 1] += 1
    for cidx in range(ncell):
        counts[cidx + 1] += counts[cidx]
    order = np.empty(n, dtype=np.int64)
    fill = counts[:ncell].copy()
    for i in range(n):
        cid = (ciz[i] * ncy + ciy[i]) * ncx + cix[i]
        order[fill[cid]] = i
        fill[cid] += 1

    src = np.empty(n * max_nb, dtype=np.int64)
    dst = np.empty(n * max_nb, dtype=np.int64)
    ne = 0
    best_j = np.empty(max_nb, dtype=np.int64)
    best_d = np.empty(max_nb, dtype=np.float64)
    for i in range(n):
        nb = 0  # entries in the sorted (d2, j) buffer
        for oz in range(-1, 2):
            zc = ciz[i] + oz
            if zc < 0 or zc >= ncz:
                continue
            for oy in range(-1, 2):
                yc = ciy[i] + oy
                if yc < 0 or yc >= ncy:
                    continue
                for ox in range(-1, 2):
                    xc = cix[i] + ox
                    if xc < 0 or xc >= ncx:
                        continue
                    cid = (zc * ncy + yc) * ncx + xc
                    for t in range(counts[cid], counts[cid + 1]):
                        j = order[t]
                        if j == i:
                            continue
                        dx = pos[i, 0] - pos[j, 0]
                        dy = pos[i, 1] - pos[j, 1]
                        dz = pos[i, 2] - pos[j, 2]
                        d2 = dx * dx + dy * dy + dz * dz
                        if d2 >= r2:
                            continue
                        # insertion keeping (d2, j) ascending, capped at max_nb
                        if nb == max_nb:
                            if d2 > best_d[nb - 1] or (d2 == best_d[nb - 1] and j > best_j[nb - 1]):
                                continue
                            nb -= 1
                        p = nb
                        while p > 0 and (best_d[p - 1] > d2 or (best_d[p - 1] == d2 and best_j[p - 1] > j)):
                            best_d[p] = best_d[p - 1]
                            best_j[p] = best_j[p - 1]
                            p -= 1
                        best_d[p] = d2
                        best_j[p] = j
                        nb += 1
        for t in range(nb):
            src[ne] = best_j[t]
            dst[ne] = i
            ne += 1
    out = np.empty((ne, 2), dtype=np.int64)
    for t in range(ne):
        out[t, 0] = src[t]
        out[t, 1] = dst[t]
    return out


@njit(cache=True)
def trilinear_gather(grid, pts):
    f, nz, ny, nx = grid.shape
    m = pts.shape[0]
    out = np.zeros((m, f), dtype=np.float64)
    for i in range(m):
        x = pts[i, 0]
        y = pts[i, 1]
        z = pts[i, 2]
        ix0 = np.int64(np.floor(x))
        iy0 = np.int64(np.floor(y))
        iz0 = np.int64(np.floor(z))
        fx = x - ix0
        fy = y - iy0
        fz = z - iz0
        ix1 = ix0 + 1 if ix0 + 1 < nx else nx - 1
        iy1 = iy0 + 1 if iy0 + 1 < ny else ny - 1
        iz1 = iz0 + 1 if iz0 + 1 < nz else nz - 1
        for dz in range(2):
            iz = iz0 if dz == 0 else iz1
            wz = (1.0 - fz) if dz == 0 else fz
            for dy in range(2):
                iy = iy0 if dy == 0 else iy1
                wy = (1.0 - fy) if dy == 0 else fy
                for dx in range(2):
                    ix = ix0 if dx == 0 else ix1
                    wx = (1.0 - fx) if dx == 0 else fx
                    w = wz * wy * wx
                    for ch in range(f):
                        out[i, ch] += w * grid[ch, iz, iy, ix]
    return out


@njit(cache=True)
def trilinear_splat(pts, vals, nx, ny, nz):
    m, f = vals.shape
    acc = np.zeros((f, nz, ny, nx), dtype=np.float64)
    wacc = np.zeros((nz, ny, nx), dtype=np.float64)
    for i in range(m):
        x = pts[i, 0]
        y = pts[i, 1]
        z = pts[i, 2]
        ix0 = np.int64(np.floor(x))
        iy0 = np.int64(np.floor(y))
        iz0 = np.int64(np.floor(z))
        fx = x - ix0
        fy = y - iy0
        fz = z - iz0
        ix1 = ix0 + 1 if ix0 + 1 < nx else nx - 1
        iy1 = iy0 + 1 if iy0 + 1 < ny else ny - 1
        iz1 = iz0 + 1 if iz0 + 1 < nz else nz - 1
        for dz in range(2):
            iz = iz0 if dz == 0 else iz1
            wz = (1.0 - fz) if dz == 0 else fz
            for dy in range(2):
                iy = iy0 if dy == 0 else iy1
                wy = (1.0 - fy) if dy == 0 else fy
                for dx in range(2):
                    ix = ix0 if dx == 0 else ix1
                    wx = (1.0 - fx) if dx == 0 else fx
                    w = wz * wy * wx
                    wacc[iz, iy, ix] += w
                    for ch in range(f):
                        acc[ch, iz, iy, ix] += w * vals[i, ch]
    return acc, wacc


@njit(cache=True)
def nearest_fill(pts, vals, targets):
    k = targets.shape[0]
    m = pts.shape[0]
    out = np.empty((k, vals.shape[1]), dtype=np.float64)
    for t in range(k):
        tx = np.float64(targets[t, 0])
        ty = np.float64(targets[t, 1])
        tz = np.float64(targets[t, 2])
        bi = 0
        bd = _INF
        for i in range(m):
            dx = tx - pts[i, 0]
            dy = ty - pts[i, 1]
            dz = tz - pts[i, 2]
            d2 = dx * dx + dy * dy + dz * dz
            if d2 < bd:
                bd = d2
                bi = i
        for ch in range(vals.shape[1]):
            out[t, ch] = vals[bi, ch]
    return out


@njit(cache=True)
def redblack_sor(psi, fluid, update, inv_nnb, omega, sweeps):
    nz, ny, nx = psi.shape
    for _ in range(sweeps):
        for color in range(2):
            for z in range(1, nz - 1):
                for y in range(1, ny - 1):
                    for x in range(1, nx - 1):
                        if update[z, y, x] <= 0 or (z + y + x) % 2 != color:
                            continue
                        nbsum = (
                            psi[z - 1, y, x] * fluid[z - 1, y, x]
                            + psi[z + 1, y, x] * fluid[z + 1, y, x]
                            + psi[z, y - 1, x] * fluid[z, y - 1, x]
                            + psi[z, y + 1, x] * fluid[z, y + 1, x]
                            + psi[z, y, x - 1] * fluid[z, y, x - 1]
                            + psi[z, y, x + 1] * fluid[z, y, x + 1]
                        )
                        psi[z, y, x] = psi[z, y, x] + omega * (nbsum * inv_nnb[z, y, x] - psi[z, y, x])


@njit(cache=True)
def flood_fill6(mask, seeds):
    nz, ny, nx = mask.shape
    reach = np.zeros((nz, ny, nx), dtype=np.bool_)
    stack = np.empty((nz * ny * nx, 3), dtype=np.int64)
    top = 0
    for s in range(seeds.shape[0]):
        x, y, z = seeds[s, 0], seeds[s, 1], seeds[s, 2]
        if mask[z, y, x] and not reach[z, y, x]:
            reach[z, y, x] = True
            stack[top, 0] = x
            stack[top, 1] = y
            stack[top, 2] = z
            top += 1
    while top > 0:
        top -= 1
        x = stack[top, 0]
        y = stack[top, 1]
        z = stack[top, 2]
        for d in range(6):
            xx, yy, zz = x, y, z
            if d == 0:
                xx = x - 1
            elif d == 1:
                xx = x + 1
            elif d == 2:
                yy = y - 1
            elif d == 3:
                yy = y + 1
            elif d == 4:
                zz = z - 1
            else:
                zz = z + 1
            if xx < 0 or xx >= nx or yy < 0 or yy >= ny or zz < 0 or zz >= nz:
                continue
            if mask[zz, yy, xx] and not reach[zz, yy, xx]:
                reach[zz, yy, xx] = True
                stack[top, 0] = xx
                stack[top, 1] = yy
                stack[top, 2] = zz
                top += 1
    return reach
