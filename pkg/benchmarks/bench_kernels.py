"""Time the compiled and numpy ray kernels on the same batch.

    python3 benchmarks/bench_kernels.py [--rays 8192] [--samples 128] [--repeat 3]

Prints one line per backend and kernel with the best wall time, and checks
that both backends agree.
"""

import argparse
import time

import numpy as np

from specvox import _kernels
from specvox.field import init_field
from specvox.model import initial_head
from specvox.render import ray_box_interval, sample_t
from specvox.spectral import SYNTHETIC_GRID, database_basis


def make_batch(n_rays, n_samples, res, seed):
    rng = np.random.default_rng(seed)
    aabb = np.array([[-1.0, -1.0, -1.0], [1.0, 1.0, 1.0]])
    field = init_field((res,) * 3, aabb, SYNTHETIC_GRID, seed, density_bias=-1.0,
                       color_noise=2.0)
    field.density_raw += rng.normal(0, 1.5, field.density_raw.shape)
    o = rng.normal(size=(n_rays, 3))
    o = 3.5 * o / np.linalg.norm(o, axis=1, keepdims=True)
    tgt = rng.uniform(-0.5, 0.5, (n_rays, 3))
    d = tgt - o
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    near, far = ray_box_interval(o, d, aabb)
    t = sample_t(near, far, n_samples)
    basis, _ = database_basis(SYNTHETIC_GRID)
    head = initial_head(basis)
    filt = rng.uniform(0, 1, (n_rays, SYNTHETIC_GRID.count))
    target = rng.uniform(0, 0.3, (n_rays, 3))
    return field, o, d, t, near, far, filt, head.response(), target


def run(kern, batch, kernel):
    field, o, d, t, near, far, filt, resp, target = batch
    inv = (np.array(field.resolution) - 1) / (field.aabb[1] - field.aabb[0])
    if kernel == "render":
        return kern.render_rays(field.density_raw, field.color_raw, field.aabb[0], inv, o, d, t,
                                far)
    gd = np.zeros_like(field.density_raw)
    gc = np.zeros_like(field.color_raw)
    gr = np.zeros_like(resp)
    yh = np.zeros_like(target)
    losses = kern.train_rays(field.density_raw, field.color_raw, field.aabb[0], inv, o, d, t,
                             near, far, filt, resp, target, 0.01, 0.1, gd, gc, gr, yh)
    return losses, gd, gc, gr, yh


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rays", type=int, default=8192)
    ap.add_argument("--samples", type=int, default=128)
    ap.add_argument("--resolution", type=int, default=32)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    batch = make_batch(args.rays, args.samples, args.resolution, args.seed)
    print(f"{args.rays} rays x {args.samples} samples, {args.resolution}^3 x "
          f"{SYNTHETIC_GRID.count} field")
    results = {}
    for name, kern in sorted(_kernels.BACKENDS.items()):
        for kernel in ("render", "train"):
            best = np.inf
            for _ in range(args.repeat):
                t0 = time.perf_counter()
                out = run(kern, batch, kernel)
                best = min(best, time.perf_counter() - t0)
            results[name, kernel] = (best, out)
            rate = args.rays * args.samples / best / 1e6
            print(f"{name:8s} {kernel:7s} {best * 1e3:9.1f} ms  {rate:7.2f} M samples/s")
    if "cython" in _kernels.BACKENDS:
        for kernel in ("render", "train"):
            a = results["python", kernel][1]
            b = results["cython", kernel][1]
            flat_a = np.concatenate([np.ravel(x) for x in _flatten(a)])
            flat_b = np.concatenate([np.ravel(x) for x in _flatten(b)])
            err = np.max(np.abs(flat_a - flat_b)) / max(np.max(np.abs(flat_a)), 1e-300)
            speed = results["python", kernel][0] / results["cython", kernel][0]
            print(f"{kernel}: cython is {speed:.1f}x faster, max relative difference {err:.2e}")
    else:
        print("compiled backend not built; only the numpy kernels were timed")


def _flatten(x):
    if isinstance(x, (tuple, list)):
        for y in x:
            yield from _flatten(y)
    else:
        yield np.asarray(x, dtype=float)


if __name__ == "__main__":
    main()
