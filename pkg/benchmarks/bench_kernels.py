"""Time the numba kernels against their pure-numpy fallbacks.

Run: python benchmarks/bench_kernels.py [--repeat N]
The same inputs go through both backends; outputs are checked for bitwise
equality while timing, so this doubles as a consistency smoke test.
"""

import argparse
import time

import numpy as np

from poreflow.kernels import _numba, _numpy


def timeit(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench(name, make_args, call, repeat):
    args = make_args()
    numba_args = tuple(np.ascontiguousarray(a) if isinstance(a, np.ndarray) else a
                       for a in args)
    call(_numba, *numba_args)  # JIT warmup
    t_np, out_np = timeit(lambda: call(_numpy, *args), repeat)
    t_nb, out_nb = timeit(lambda: call(_numba, *numba_args), repeat)
    if isinstance(out_np, tuple):
        same = all(np.array_equal(a, b) for a, b in zip(out_np, out_nb))
    else:
        same = np.array_equal(out_np, out_nb)
    speedup = t_np / t_nb if t_nb > 0 else float("inf")
    print(f"{name:<28} numpy {t_np * 1e3:8.2f} ms   numba {t_nb * 1e3:8.2f} ms "
          f"  x{speedup:5.1f}   bitwise={'yes' if same else 'NO'}")
    return same


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    ok = True

    def conv_args():
        x = rng.normal(size=(2, 16, 34, 34, 34))
        return (x, 3, 32, 32, 32)

    ok &= bench("im2col3d (2,16,32^3)", conv_args,
                lambda m, x, k, d, h, w: m.im2col3d(x, k, d, h, w), args.repeat)

    cols = rng.normal(size=(2, 16 * 27, 32 ** 3))
    ok &= bench("col2im3d (2,432,32^3)", lambda: (cols, 3, 32, 32, 32),
                lambda m, c, k, d, h, w: m.col2im3d(c, k, d, h, w), args.repeat)

    field = rng.normal(size=(3, 64, 64, 64))
    ok &= bench("maxabs_pool3d f=8 (64^3)", lambda: (field, 8),
                lambda m, f, k: m.maxabs_pool3d(f, k), args.repeat)

    seeds = rng.random((64 * 64, 64)) < 0.05
    f0 = np.where(seeds, 0.0, 1e18)
    ok &= bench("sqedt_pass (4096x64)", lambda: (f0,),
                lambda m, f: m.sqedt_pass(f), args.repeat)

    pos = rng.uniform(0, 128, (4000, 3))
    ok &= bench("radius_edges N=4000 r=8", lambda: (pos, 8.0, 32),
                lambda m, p, r, k: _canon(m.radius_edges(p, r, k)), args.repeat)

    pts = rng.uniform(0, 63, (4000, 3))
    vals = rng.normal(size=(4000, 3))
    ok &= bench("trilinear_splat N=4000", lambda: (pts, vals),
                lambda m, p, v: m.trilinear_splat(p, v, 64, 64, 64), args.repeat)

    grid = rng.normal(size=(3, 64, 64, 64))
    ok &= bench("trilinear_gather N=4000", lambda: (grid, pts),
                lambda m, g, p: m.trilinear_gather(g, p), args.repeat)

    targets = rng.integers(0, 64, (20000, 3)).astype(np.int64)
    ok &= bench("nearest_fill 20000x400", lambda: (pts[:400], vals[:400], targets),
                lambda m, p, v, t: m.nearest_fill(p, v, t), args.repeat)

    shape = (34, 34, 34)
    fluid = (rng.random(shape) < 0.9).astype(np.float64)
    for axis in range(3):
        sl = [slice(None)] * 3
        for edge in (0, -1):
            sl[axis] = edge
            fluid[tuple(sl)] = 0.0
    psi0 = rng.normal(size=shape) * fluid
    inv = np.full(shape, 1.0 / 6.0)

    def sor_call(m, p, f, u, i):
        q = p.copy()
        m.redblack_sor(q, f, u, i, 1.7, 50)
        return q

    ok &= bench("redblack_sor 50 sweeps 32^3", lambda: (psi0, fluid, fluid.copy(), inv),
                sor_call, args.repeat)

    mask = rng.random((64, 64, 64)) < 0.6
    mask[0, 0, 0] = True
    seeds2 = np.array([[0, 0, 0]], dtype=np.int64)
    ok &= bench("flood_fill6 (64^3)", lambda: (mask, seeds2),
                lambda m, ma, s: m.flood_fill6(ma, s), args.repeat)

    if not ok:
        raise SystemExit("backend outputs diverged")


def _canon(edges):
    order = np.lexsort((edges[:, 0], edges[:, 1]))
    return edges[order]


if __name__ == "__main__":
    main()
