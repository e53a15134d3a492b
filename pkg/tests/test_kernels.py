"""Both kernel backends agree with each other and with the per-ray reference path."""

import numpy as np
import pytest

from specvox import _kernels
from specvox.field import VoxelField, occupancy_grid, sample
from specvox.render import RaySamples, composite, ray_box_interval, sample_t
from specvox.spectral import WavelengthGrid

GRID = WavelengthGrid(450, 30, 6)
AABB = np.array([[-1.0, -1.0, -0.5], [1.0, 1.0, 0.5]])
BACKENDS = sorted(_kernels.BACKENDS)


def make_case(seed, n_rays=40, n=24, res=(6, 5, 4), sparse=False):
    rng = np.random.default_rng(seed)
    dens = rng.normal(0, 2.5, res)
    if sparse:
        dens[:, :, :res[2] // 2 + 1] = -30.0
    field = VoxelField(res, AABB, dens, rng.normal(0, 1.5, res + (GRID.count,)), GRID)
    origins = rng.normal(0, 0.3, (n_rays, 3)) + [0, 0, 3.0]
    target = rng.uniform(-0.8, 0.8, (n_rays, 3)) * [1, 1, 0] + [0, 0, -0.5]
    dirs = target - origins
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    t0, t1 = ray_box_interval(origins, dirs, AABB)
    near, far = np.maximum(t0, 0.1), t1
    keep = far > near
    origins, dirs, near, far = origins[keep], dirs[keep], near[keep], far[keep]
    t = sample_t(near, far, n, rng)
    inv_cell = (np.array(res) - 1) / (AABB[1] - AABB[0])
    return field, origins, dirs, near, far, t, inv_cell


def call_render(kern, field, origins, dirs, t, far, inv_cell, stop_T=0.0, occ=None):
    return kern.render_rays(field.density_raw, field.color_raw, field.aabb[0], inv_cell, origins,
                            dirs, t, far, stop_T, occ)


def call_train(kern, field, origins, dirs, t, near, far, inv_cell, filt, ssf, target, eps=0.01,
               beta=0.1, stop_T=0.0, occ=None):
    gd = np.zeros_like(field.density_raw)
    gc = np.zeros_like(field.color_raw)
    gr = np.zeros_like(ssf)
    y = np.zeros((len(origins), ssf.shape[1]))
    losses = kern.train_rays(field.density_raw, field.color_raw, field.aabb[0], inv_cell, origins,
                             dirs, t, near, far, filt, ssf, target, eps, beta, gd, gc, gr, y,
                             stop_T, occ)
    return losses, gd, gc, gr, y


def degradation(seed, n_rays):
    rng = np.random.default_rng(seed + 100)
    return (rng.uniform(0.05, 1, (n_rays, GRID.count)), rng.uniform(0, 1, (GRID.count, 3)),
            rng.uniform(0, 0.5, (n_rays, 3)))


def test_python_backend_always_available():
    assert "python" in _kernels.BACKENDS
    assert _kernels.get_backend() is _kernels.BACKENDS[_kernels.BACKEND]


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_render_matches_per_sample_reference(backend, seed):
    field, o, d, near, far, t, inv_cell = make_case(seed, n_rays=12)
    rad, depth, opac = call_render(_kernels.get_backend(backend), field, o, d, t, far, inv_cell)
    for r in range(len(o)):
        pts = [sample(field, o[r] + tv * d[r]) for tv in t[r]]
        ref = composite(RaySamples.from_t(t[r], far[r], [p.sigma for p in pts],
                                          [p.color for p in pts]))
        np.testing.assert_allclose(rad[r], ref.radiance, rtol=1e-10, atol=1e-13)
        assert depth[r] == pytest.approx(ref.depth, rel=1e-10, abs=1e-13)
        assert opac[r] == pytest.approx(ref.opacity, rel=1e-10, abs=1e-13)


@pytest.mark.skipif("cython" not in _kernels.BACKENDS, reason="extension not built")
@pytest.mark.parametrize("stop_T", [0.0, 1e-3])
@pytest.mark.parametrize("use_occ", [False, True])
def test_backends_agree(stop_T, use_occ):
    field, o, d, near, far, t, inv_cell = make_case(5, n_rays=60, res=(6, 5, 8), sparse=use_occ)
    occ = occupancy_grid(field, 1e-3) if use_occ else None
    if use_occ:
        assert 0 < occ.sum() < occ.size
    py, cy = _kernels.get_backend("python"), _kernels.get_backend("cython")
    for a, b in zip(call_render(py, field, o, d, t, far, inv_cell, stop_T, occ),
                    call_render(cy, field, o, d, t, far, inv_cell, stop_T, occ)):
        np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-13)
    filt, ssf, target = degradation(5, len(o))
    ra = call_train(py, field, o, d, t, near, far, inv_cell, filt, ssf, target, stop_T=stop_T,
                    occ=occ)
    rb = call_train(cy, field, o, d, t, near, far, inv_cell, filt, ssf, target, stop_T=stop_T,
                    occ=occ)
    np.testing.assert_allclose(ra[0], rb[0], rtol=1e-10)
    for a, b in zip(ra[1:], rb[1:]):
        np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-12)


@pytest.mark.parametrize("backend", BACKENDS)
def test_empty_occupancy_renders_nothing(backend):
    field, o, d, near, far, t, inv_cell = make_case(3)
    occ = np.zeros(tuple(r - 1 for r in field.resolution), np.uint8)
    rad, depth, opac = call_render(_kernels.get_backend(backend), field, o, d, t, far, inv_cell,
                                   occ=occ)
    assert np.all(rad == 0) and np.all(opac == 0)


@pytest.mark.parametrize("backend", BACKENDS)
def test_early_stop_changes_little(backend):
    field, o, d, near, far, t, inv_cell = make_case(4)
    kern = _kernels.get_backend(backend)
    full = call_render(kern, field, o, d, t, far, inv_cell)
    cut = call_render(kern, field, o, d, t, far, inv_cell, stop_T=1e-4)
    # dropped samples carry at most the remaining transmittance
    assert np.max(np.abs(full[0] - cut[0])) <= 1e-4
    assert np.max(np.abs(full[2] - cut[2])) <= 1e-4


def _loss(field, o, d, t, near, far, inv_cell, filt, ssf, target, eps, beta, denom):
    # the relative-error denominator is held fixed (stop-gradient)
    (_, dist), _, _, _, y = call_train(_kernels.get_backend("python"), field, o, d, t, near, far,
                                       inv_cell, filt, ssf, target, eps, beta)
    return 0.5 * np.sum(((target - y) / denom) ** 2) + beta * dist


@pytest.mark.parametrize("backend", BACKENDS)
def test_train_gradients_match_finite_differences(backend):
    field, o, d, near, far, t, inv_cell = make_case(7, n_rays=8, n=12, res=(3, 3, 3))
    filt, ssf, target = degradation(7, len(o))
    args = (o, d, t, near, far, inv_cell, filt, ssf, target, 0.01, 0.1)
    _, gd, gc, gr, y0 = call_train(_kernels.get_backend(backend), field, *args)
    args = args + (y0 + 0.01,)
    h = 1e-6
    rng = np.random.default_rng(0)
    for flat in rng.choice(field.density_raw.size, 8, replace=False):
        key = np.unravel_index(flat, field.resolution)
        fp, fm = field.copy(), field.copy()
        fp.density_raw[key] += h
        fm.density_raw[key] -= h
        fd = (_loss(fp, *args) - _loss(fm, *args)) / (2 * h)
        assert abs(gd[key] - fd) <= 1e-5 * max(abs(fd), 1e-3)
    for flat in rng.choice(field.color_raw.size, 8, replace=False):
        key = np.unravel_index(flat, field.color_raw.shape)
        fp, fm = field.copy(), field.copy()
        fp.color_raw[key] += h
        fm.color_raw[key] -= h
        fd = (_loss(fp, *args) - _loss(fm, *args)) / (2 * h)
        assert abs(gc[key] - fd) <= 1e-5 * max(abs(fd), 1e-3)
    for key in [(0, 0), (3, 1), (5, 2)]:
        sp, sm = ssf.copy(), ssf.copy()
        sp[key] += h
        sm[key] -= h
        fd = (_loss(field, *args[:7], sp, *args[8:])
              - _loss(field, *args[:7], sm, *args[8:])) / (2 * h)
        assert abs(gr[key] - fd) <= 1e-5 * max(abs(fd), 1e-3)
