import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from specvox.errors import ArgumentError
from specvox.eval import (MetricReport, checker_scores, psnr, spectral_metrics, ssf_error, ssim,
                          write_report, write_spectra_curves)
from specvox.spectral import SSF, SYNTHETIC_GRID, SpectralImage, WavelengthGrid

ORTHO_10PCT = 0.09950371902099892  # sqrt(0.01 / 1.01)


def img(seed, shape=(16, 20)):
    return np.random.default_rng(seed).uniform(0, 1, shape)


# -- PSNR


def test_psnr_examples():
    a = img(0)
    assert psnr(a, a) == math.inf
    assert psnr(np.full((4, 4), 0.3), np.full((4, 4), 0.4)) == pytest.approx(20.0, rel=1e-12)
    b = img(1)
    assert psnr(3 * a, 3 * b, peak=3.0) == pytest.approx(psnr(a, b), rel=1e-12)
    with pytest.raises(ArgumentError):
        psnr(a, a[:-1])
    with pytest.raises(ArgumentError):
        psnr(a, b, peak=0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_psnr_symmetric_and_permutation_invariant(seed):
    a, b = img(seed), img(seed + 1)
    assert psnr(a, b) == psnr(b, a)
    perm = np.random.default_rng(seed).permutation(a.size)
    assert psnr(a.reshape(-1)[perm], b.reshape(-1)[perm]) == pytest.approx(psnr(a, b), rel=1e-12)


# -- SSIM


def test_ssim_identity_and_inversion():
    a = (img(2) > 0.5).astype(float)
    assert ssim(a, a) == 1.0
    assert ssim(a, 1 - a) < 0.5


def test_ssim_offset_is_pure_luminance():
    a = img(3)
    b = a + 0.05
    c1 = (0.01) ** 2
    win = np.lib.stride_tricks.sliding_window_view(a, (8, 8)).mean(axis=(-1, -2))
    lum = (2 * win * (win + 0.05) + c1) / (win ** 2 + (win + 0.05) ** 2 + c1)
    val = ssim(a, b)
    assert lum.min() <= val < 1.0
    assert val == pytest.approx(lum.mean(), rel=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_ssim_symmetries(seed):
    a, b = img(seed), img(seed + 7)
    v = ssim(a, b)
    assert -1 <= v <= 1
    assert ssim(b, a) == pytest.approx(v, rel=1e-12)
    # flips and transposes map the sliding windows onto themselves
    assert ssim(a[::-1], b[::-1]) == pytest.approx(v, rel=1e-12)
    assert ssim(a.T, b.T) == pytest.approx(v, rel=1e-12)


def test_ssim_multichannel_and_errors():
    a, b = img(4, (12, 12, 3)), img(5, (12, 12, 3))
    assert ssim(a, b) == pytest.approx(np.mean([ssim(a[..., c], b[..., c]) for c in range(3)]))
    with pytest.raises(ArgumentError):
        ssim(a, b[:, :-1])
    with pytest.raises(ArgumentError):
        ssim(np.zeros((4, 4)), np.zeros((4, 4)))


# -- spectral metrics


def test_spectral_metrics_examples():
    x = SpectralImage(SYNTHETIC_GRID, img(6, (15, 4, 5)))
    assert spectral_metrics(x, x) == (0.0, 0.0)
    rmse, sam = spectral_metrics(SpectralImage(SYNTHETIC_GRID, 2 * x.planes), x)
    assert sam == pytest.approx(0.0, abs=1e-12) and rmse > 0
    _, sam = spectral_metrics(np.array([[0.0, 1.0]]), np.array([[1.0, 0.0]]))
    assert sam == pytest.approx(math.pi / 2, rel=1e-15)
    other = SpectralImage(WavelengthGrid(450, 20, 15), x.planes)
    with pytest.raises(ArgumentError):
        spectral_metrics(other, x)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_sam_ignores_per_pixel_scale(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(0.01, 1, (20, 6)), rng.uniform(0.01, 1, (20, 6))
    s = rng.uniform(0.1, 10, (20, 1))
    assert spectral_metrics(a * s, b)[1] == pytest.approx(spectral_metrics(a, b)[1], abs=1e-12)
    assert spectral_metrics(a, b * s)[1] == pytest.approx(spectral_metrics(a, b)[1], abs=1e-12)


def test_sam_skips_dark_truth_pixels():
    x_hat = np.array([[1.0, 0.0], [0.0, 1.0]])
    x = np.array([[1.0, 0.0], [0.0, 0.0]])
    assert spectral_metrics(x_hat, x)[1] == 0.0


# -- SSF error


def _truth():
    return np.random.default_rng(8).uniform(0.1, 1, (15, 3))


def test_ssf_error_examples():
    t = _truth()
    assert ssf_error(t, t) == pytest.approx(0.0, abs=1e-15)
    assert ssf_error(2 * t, t) == pytest.approx(0.0, abs=1e-15)
    rng = np.random.default_rng(9)
    est = t.copy()
    for c in range(3):
        p = rng.normal(size=15)
        p -= (p @ t[:, c]) / (t[:, c] @ t[:, c]) * t[:, c]
        est[:, c] += 0.1 * np.linalg.norm(t[:, c]) * p / np.linalg.norm(p)
    assert ssf_error(est, t) == pytest.approx(ORTHO_10PCT, rel=1e-9)


def test_ssf_error_validation():
    t = _truth()
    z = t.copy()
    z[:, 1] = 0
    with pytest.raises(ArgumentError):
        ssf_error(t, z)
    with pytest.raises(ArgumentError):
        ssf_error(t[:, :2], t)
    with pytest.raises(ArgumentError):
        ssf_error(SSF(SYNTHETIC_GRID, t), SSF(WavelengthGrid(450, 20, 15), t))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_ssf_error_per_channel_scale_invariance(seed):
    rng = np.random.default_rng(seed)
    t, e = rng.uniform(0.1, 1, (15, 3)), rng.uniform(0.1, 1, (15, 3))
    s = rng.uniform(0.01, 100, 3)
    assert abs(ssf_error(e * s, t) - ssf_error(e, t)) <= 1e-9


# -- checker and reports


def test_checker_scores_scale_alignment():
    t = np.random.default_rng(10).uniform(0.05, 0.9, (24, 15))
    sc = checker_scores(0.5 * t, t)
    assert sc["scale"] == pytest.approx(2.0, rel=1e-12)
    assert sc["rmse_aligned"] == pytest.approx(0.0, abs=1e-12)
    assert sc["sam"] == pytest.approx(0.0, abs=1e-12)
    assert sc["rmse"] > 0


def test_metric_report(tmp_path):
    with pytest.raises(ArgumentError):
        MetricReport(30.0, 1.5, 0.1, 0.1)
    rep = MetricReport(math.inf, 1.0, 0.0, 0.0, None,
                       [{"view": 3, "psnr_db": math.inf, "ssim": 1.0}])
    text = rep.summary()
    assert "inf" in text and "absent" in text
    csv_path, txt_path = write_report(tmp_path, rep)
    lines = csv_path.read_text().splitlines()
    assert lines[0] == "view,psnr_db,ssim,spectral_rmse,sam_radians,ssf_rel_l2"
    assert lines[1].startswith("3,inf,1.0") and lines[-1].startswith("mean,inf")
    assert txt_path.read_text() == text


def test_spectra_curves(tmp_path):
    write_spectra_curves(tmp_path / "c.csv", [440.0, 460.0], [[0.1, 0.2]], [[0.15, 0.25]], ["p1"])
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines == ["label,wavelength_nm,truth,estimate", "p1,440.0,0.1,0.15", "p1,460.0,0.2,0.25"]
