import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from specvox.errors import ArgumentError, ConfigurationError, DataError
from specvox.field import VoxelField, init_field, softplus
from specvox.model import (FilterBank, FilterProfile, LossConfig, SSFHead, degrade,
                           distortion_loss, forward_pixel, initial_head, relative_mse,
                           spectral_curvature, total_loss)
from specvox.render import RaySamples, composite, generate_rays, look_at, Camera
from specvox.spectral import SSF, SSFBasis, SYNTHETIC_GRID, SpectralVector, WavelengthGrid

GRID = WavelengthGrid(500, 50, 5)


def filt(values, fid="f", grid=GRID):
    return FilterProfile(fid, SpectralVector(grid, np.asarray(values, dtype=float), "transmittance"))


def random_basis(seed, grid=GRID, s=3):
    b = np.random.default_rng(seed).uniform(0.05, 1, (grid.count, s))
    return SSFBasis(grid, b / np.linalg.norm(b, axis=0))


# -- filters


def test_filter_bank_rank_and_lookup(tmp_path):
    eye = np.eye(5)
    bank = FilterBank(GRID, tuple(filt(eye[i] * 0.9 + 0.05, str(i)) for i in range(3)))
    rep = bank.rank_report()
    assert rep["rank"] == 3 and rep["filters"] == 3
    assert bank.index("2") == 2
    with pytest.raises(ArgumentError):
        bank.index("9")
    back = FilterBank.load(bank.save(tmp_path))
    np.testing.assert_array_equal(back.matrix(), bank.matrix())
    assert back.ids == bank.ids


def test_filter_bank_rejects_duplicates_and_mixed_grids():
    with pytest.raises(ArgumentError):
        FilterBank(GRID, (filt(np.ones(5), "a"), filt(np.ones(5), "a")))
    with pytest.raises(ArgumentError):
        FilterBank(GRID, (filt(np.ones(15), "a", SYNTHETIC_GRID),))
    with pytest.raises(DataError):
        FilterBank.load([])


# -- degrade


def test_degrade_band_selection():
    x = np.array([0.1, 0.2, 0.3, 0.4, 0.5])
    r = np.zeros((5, 1))
    r[3] = 1.0
    assert degrade(x, filt(np.ones(5)), SSF(GRID, r))[0] == pytest.approx(0.4)


def test_degrade_hand_example():
    g = WavelengthGrid(500, 10, 3)
    out = degrade([1.0, 2.0, 3.0], filt([0.5, 0.5, 0.5], grid=g), SSF(g, np.ones((3, 1))))
    assert out[0] == pytest.approx(3.0, rel=1e-15)


def test_degrade_grid_mismatch():
    with pytest.raises(ArgumentError):
        degrade(np.ones(15), filt(np.ones(5)), SSF(SYNTHETIC_GRID, np.ones((15, 3))))
    with pytest.raises(ArgumentError):
        degrade(np.ones(4), filt(np.ones(5)), np.ones((5, 3)))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0, 10), st.floats(0, 10))
def test_degrade_linear_and_homogeneous(seed, a, b):
    rng = np.random.default_rng(seed)
    x1, x2 = rng.uniform(0, 1, 5), rng.uniform(0, 1, 5)
    f = rng.uniform(0, 1, 5)
    r = rng.uniform(0, 1, (5, 3))
    d = lambda x, ff=f, rr=r: degrade(x, filt(ff), rr)
    np.testing.assert_allclose(d(a * x1 + b * x2), a * d(x1) + b * d(x2), rtol=1e-12, atol=1e-12)
    sc = a / 10  # keeps the scaled filter a valid transmittance
    np.testing.assert_allclose(degrade(x1, filt(f * sc), r), sc * d(x1), rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(degrade(x1, filt(f), r * a), a * d(x1), rtol=1e-12, atol=1e-15)
    assert np.all(d(x1) >= 0)


def test_degrade_applied_after_compositing():
    rng = np.random.default_rng(0)
    s = RaySamples.from_t(np.linspace(0, 1, 12), 1.1, rng.exponential(1, 12), rng.uniform(0, 1, (12, 5)))
    f = filt(rng.uniform(0, 1, 5))
    r = rng.uniform(0, 1, (5, 3))
    post = degrade(composite(s).radiance, f, r)
    pre = composite(RaySamples(s.t_values, s.deltas, s.sigmas,
                               (s.colors * f.transmittance.values) @ r)).radiance
    np.testing.assert_allclose(post, pre, rtol=1e-9)


# -- losses


def test_relative_mse_examples():
    loss, g = relative_mse([0.3, 0.2], [0.3, 0.2])
    assert loss == 0 and np.all(g == 0)
    loss, _ = relative_mse([1.0], [0.0], 0.01)
    assert loss == pytest.approx(5000.0, rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_relative_mse_stop_gradient(seed):
    rng = np.random.default_rng(seed)
    y, y_hat = rng.uniform(0, 1, 3), rng.uniform(0, 1, 3)
    loss, g = relative_mse(y, y_hat)
    assert loss >= 0
    den = y_hat + 0.01
    h = 1e-6
    for c in range(3):
        yp, ym = y_hat.copy(), y_hat.copy()
        yp[c] += h
        ym[c] -= h
        # perturb the numerator only
        fd = (0.5 * np.sum(((y - yp) / den) ** 2) - 0.5 * np.sum(((y - ym) / den) ** 2)) / (2 * h)
        assert abs(g[c] - fd) <= 1e-7 * max(abs(fd), 1.0)


def test_distortion_examples():
    assert distortion_loss(np.zeros(4), np.linspace(0, 1, 4), np.full(4, 0.25))[0] == 0
    loss, _ = distortion_loss([0, 0.7, 0], [0.1, 0.5, 0.9], [0.2, 0.3, 0.2])
    assert loss == pytest.approx(0.7 ** 2 * 0.3 / 3, rel=1e-14)
    w, s1, s2, d = 0.4, 0.2, 0.7, 0.1
    loss, _ = distortion_loss([w, w], [s1, s2], [d, d])
    assert loss == pytest.approx(2 * w * w * abs(s1 - s2) + 2 * w * w * d / 3, rel=1e-14)


def _dist_prefix(w, s, d):
    # O(n) prefix-sum form, evaluated independently of the O(n^2) reference
    w_lt = np.concatenate([[0.0], np.cumsum(w)[:-1]])
    ws_lt = np.concatenate([[0.0], np.cumsum(w * s)[:-1]])
    return float(np.sum(2 * w * (s * w_lt - ws_lt)) + np.sum(w * w * d) / 3)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_distortion_properties(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 30))
    w = rng.uniform(0, 0.2, n)
    s = np.sort(rng.uniform(0, 1, n))
    d = rng.uniform(0.01, 0.1, n)
    loss, g = distortion_loss(w, s, d)
    assert loss >= 0
    assert loss == pytest.approx(_dist_prefix(w, s, d), rel=1e-12, abs=1e-15)
    perm = rng.permutation(n)
    assert distortion_loss(w[perm], s[perm], d[perm])[0] == pytest.approx(loss, rel=1e-12)
    h = 1e-6
    for i in range(min(n, 5)):
        wp, wm = w.copy(), w.copy()
        wp[i] += h
        wm[i] -= h
        fd = (distortion_loss(wp, s, d)[0] - distortion_loss(wm, s, d)[0]) / (2 * h)
        assert abs(g[i] - fd) <= 1e-6 * max(abs(fd), 1e-3)


def test_total_loss():
    rng = np.random.default_rng(1)
    pred, targ = rng.uniform(0, 1, (4, 3)), rng.uniform(0, 1, (4, 3))
    stats = [(rng.uniform(0, 0.3, 6), np.sort(rng.uniform(0, 1, 6)), np.full(6, 0.1)) for _ in range(4)]
    loss0 = total_loss(pred, targ, stats, LossConfig(beta=0.0))[0]
    assert loss0 == pytest.approx(np.mean([relative_mse(t, p)[0] for p, t in zip(pred, targ)]),
                                  rel=1e-12)
    cfg = LossConfig()
    loss, recon, dist, _, _ = total_loss(pred, targ, stats, cfg)
    # independent scalar re-evaluation
    ref_recon = np.mean([0.5 * np.sum(((t - p) / (p + 0.01)) ** 2) for p, t in zip(pred, targ)])
    ref_dist = np.mean([sum(w[i] * w[j] * abs(s[i] - s[j]) for i in range(6) for j in range(6))
                        + np.sum(w * w * d) / 3 for w, s, d in stats])
    assert loss == pytest.approx(ref_recon + 0.1 * ref_dist, rel=1e-12)
    perfect = total_loss(targ, targ, stats, cfg)
    assert perfect[0] == pytest.approx(0.1 * ref_dist, rel=1e-12) and perfect[1] == 0
    assert total_loss(pred, targ, stats, LossConfig(use_distortion=False))[0] == pytest.approx(ref_recon)
    with pytest.raises(ArgumentError):
        total_loss(pred, targ[:2], None, cfg)


def test_loss_config_validation():
    with pytest.raises(ConfigurationError):
        LossConfig(epsilon=0.0)
    with pytest.raises(ConfigurationError):
        LossConfig(beta=-1.0)


# -- SSF head


def test_ssf_head_basics():
    basis = random_basis(0)
    head = SSFHead.from_coeffs(basis, np.array([[0.5, 0.0, 1.0], [0.2, 0.3, 0.0], [0.1, 0.1, 0.1]]))
    assert np.all(head.coeffs >= 0)
    assert head.channels == 3
    frozen = SSFHead(basis, head.coeffs_raw, frozen=True)
    assert np.all(frozen.raw_grad(np.ones((5, 3))) == 0)
    with pytest.raises(ArgumentError):
        SSFHead(basis, np.zeros((2, 3)))
    with pytest.raises(ArgumentError):
        SSFHead(basis, np.zeros((3, 2)))


def test_initial_head_fits_reference_in_span():
    basis = random_basis(1)
    ref = basis.basis @ np.array([[1.0, 0.2, 0.0], [0.0, 1.0, 0.3], [0.5, 0.0, 1.0]])
    head = initial_head(basis, ref)
    r = head.response()
    assert r.sum(axis=0).max() == pytest.approx(1.0, rel=1e-9)
    np.testing.assert_allclose(r / r.sum(axis=0).max(), ref / ref.sum(axis=0).max(), atol=1e-9)


# -- curvature prior


def test_spectral_curvature():
    raw = np.zeros((2, 2, 2, 5))
    assert spectral_curvature(raw, 1.0)[0] == 0.0
    rng = np.random.default_rng(0)
    raw = rng.normal(size=(3, 2, 2, 6))
    loss, g = spectral_curvature(raw, 0.3)
    h = 1e-6
    for key in [(0, 0, 0, 0), (1, 1, 0, 3), (2, 1, 1, 5)]:
        rp, rm = raw.copy(), raw.copy()
        rp[key] += h
        rm[key] -= h
        fd = (spectral_curvature(rp, 0.3)[0] - spectral_curvature(rm, 0.3)[0]) / (2 * h)
        assert abs(g[key] - fd) <= 1e-6 * max(abs(fd), 1e-3)
    # linear spectra are free
    c = np.linspace(0.2, 0.8, 6)
    assert spectral_curvature(np.log(c / (1 - c)), 1.0)[0] == pytest.approx(0, abs=1e-20)


# -- end-to-end pixel


def _pixel_setup(seed):
    rng = np.random.default_rng(seed)
    res = (3, 3, 3)
    field = VoxelField(res, [[-1, -1, -1], [1, 1, 1]], rng.normal(0, 1.5, res),
                       rng.normal(0, 1, res + (5,)), GRID)
    cam = Camera(4, 4, 4.0, 4.0, 2.0, 2.0, look_at([0.3, -0.2, 3.0]), [0.3, -0.2, 3.0], 0.5, 5.0)
    (ray,) = generate_rays(cam, [(1, 2)])
    head = SSFHead(random_basis(seed), rng.normal(0, 1, (3, 3)))
    return field, ray, filt(rng.uniform(0.1, 1, 5)), head


def test_forward_pixel_empty_field_is_zero():
    field = init_field((3, 3, 3), [[-1, -1, -1], [1, 1, 1]], GRID, density_bias=-60.0)
    _, ray, f, head = _pixel_setup(0)
    y, _ = forward_pixel(field, ray, f, SSFHead(head.basis, head.coeffs_raw, True), 32,
                         near=1.0, far=5.0)
    assert np.all(np.abs(y) < 1e-20)


def test_forward_pixel_grid_mismatch():
    field, ray, _, head = _pixel_setup(0)
    with pytest.raises(ArgumentError):
        forward_pixel(field, ray, filt(np.ones(15), grid=SYNTHETIC_GRID), head, 8, near=1, far=5)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_forward_pixel_gradients_match_finite_differences(seed):
    field, ray, f, head = _pixel_setup(seed)
    target = np.array([0.2, 0.1, 0.3])
    cfg = LossConfig()

    def loss_of(fld, hd, denom=None):
        y, tape = forward_pixel(fld, ray, f, hd, 24, near=1.0, far=5.0)
        den = y + cfg.epsilon if denom is None else denom
        w, s, d = tape.distortion_inputs()
        return 0.5 * np.sum(((target - y) / den) ** 2) + cfg.beta * distortion_loss(w, s, d)[0], y

    y, tape = forward_pixel(field, ray, f, head, 24, near=1.0, far=5.0)
    _, g_y = relative_mse(target, y, cfg.epsilon)
    w, s, d = tape.distortion_inputs()
    grads = tape.backward(g_y, cfg.beta * distortion_loss(w, s, d)[1])
    denom = y + cfg.epsilon
    h = 1e-6
    hit = np.flatnonzero(np.abs(grads.density_raw) > 1e-8)
    assert hit.size
    for flat in hit[:6]:
        key = np.unravel_index(flat, field.resolution)
        fp, fm = field.copy(), field.copy()
        fp.density_raw[key] += h
        fm.density_raw[key] -= h
        fd = (loss_of(fp, head, denom)[0] - loss_of(fm, head, denom)[0]) / (2 * h)
        assert abs(grads.density_raw[key] - fd) <= 1e-4 * abs(fd) + 1e-9
    for key in [(0, 0), (1, 2), (2, 1)]:
        hp, hm = head.copy(), head.copy()
        hp.coeffs_raw[key] += h
        hm.coeffs_raw[key] -= h
        fd = (loss_of(field, hp, denom)[0] - loss_of(field, hm, denom)[0]) / (2 * h)
        assert abs(grads.coeffs_raw[key] - fd) <= 1e-4 * abs(fd) + 1e-9
