"""Image and spectral quality metrics plus report output."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ._io import atomic_write_text
from .errors import ArgumentError
from .render import render_rays
from .spectral import SSF, SpectralImage

__all__ = [
    "MetricReport",
    "psnr",
    "ssim",
    "spectral_metrics",
    "ssf_error",
    "probe_spectra",
    "checker_scores",
    "write_report",
    "write_spectra_curves",
]


def psnr(a, b, peak: float = 1.0) -> float:
    """``10 log10(peak^2 / MSE)``; identical images give ``inf``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ArgumentError(f"shape mismatch {a.shape} vs {b.shape}")
    if not peak > 0:
        raise ArgumentError("peak must be positive")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def ssim(a, b, window: int = 8, k1: float = 0.01, k2: float = 0.03, peak: float = 1.0) -> float:
    """Mean SSIM over all ``window x window`` positions (stride 1, uniform weights).

    Multi-channel images ``(H, W, C)`` average the per-channel maps.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ArgumentError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if a.shape[0] < window or a.shape[1] < window:
        raise ArgumentError(f"image smaller than the {window}x{window} window")
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2
    wa = sliding_window_view(a, (window, window), axis=(0, 1))
    wb = sliding_window_view(b, (window, window), axis=(0, 1))
    mu_a = wa.mean(axis=(-1, -2))
    mu_b = wb.mean(axis=(-1, -2))
    # same formula for variance and covariance so ssim(a, a) is exactly 1
    var_a = (wa * wa).mean(axis=(-1, -2)) - mu_a * mu_a
    var_b = (wb * wb).mean(axis=(-1, -2)) - mu_b * mu_b
    cov = (wa * wb).mean(axis=(-1, -2)) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def _pixels(x):
    if isinstance(x, SpectralImage):
        return x.pixels().reshape(-1, x.grid.count), x.grid
    arr = np.asarray(x, dtype=float)
    return arr.reshape(-1, arr.shape[-1]), None


def spectral_metrics(x_hat, x_true):
    """Mean per-pixel band RMSE and mean spectral angle (radians)."""
    p_hat, g_hat = _pixels(x_hat)
    p_true, g_true = _pixels(x_true)
    if g_hat is not None and g_true is not None and g_hat != g_true:
        raise ArgumentError("spectral images are on different wavelength grids")
    if p_hat.shape != p_true.shape:
        raise ArgumentError("spectral images differ in shape")
    rmse = float(np.mean(np.sqrt(np.mean((p_hat - p_true) ** 2, axis=1))))
    n_true = np.linalg.norm(p_true, axis=1)
    n_hat = np.linalg.norm(p_hat, axis=1)
    valid = n_true > 1e-8
    if not valid.any():
        return rmse, 0.0
    u_true = p_true[valid] / n_true[valid, None]
    ang = np.full(valid.sum(), np.pi / 2)  # a zero estimate counts as orthogonal
    nz = n_hat[valid] > 0
    u_hat = p_hat[valid][nz] / n_hat[valid][nz, None]
    # half-angle form stays exact near 0 where arccos loses precision
    ang[nz] = 2.0 * np.arctan2(np.linalg.norm(u_hat - u_true[nz], axis=1),
                               np.linalg.norm(u_hat + u_true[nz], axis=1))
    sam = float(np.mean(ang))
    return rmse, sam


def ssf_error(estimated, truth) -> float:
    """Channel-mean relative L2 after the best positive per-channel scale."""
    est = estimated.response if isinstance(estimated, SSF) else np.asarray(estimated, dtype=float)
    tru = truth.response if isinstance(truth, SSF) else np.asarray(truth, dtype=float)
    if isinstance(estimated, SSF) and isinstance(truth, SSF) and estimated.grid != truth.grid:
        raise ArgumentError("SSFs are on different wavelength grids")
    est = est.reshape(est.shape[0], -1)
    tru = tru.reshape(tru.shape[0], -1)
    if est.shape != tru.shape:
        raise ArgumentError("SSF shapes differ")
    errs = []
    for c in range(tru.shape[1]):
        t, e = tru[:, c], est[:, c]
        tn = np.linalg.norm(t)
        if tn == 0:
            raise ArgumentError(f"truth channel {c} has zero norm")
        ee = float(e @ e)
        scale = max(float(e @ t) / ee, 0.0) if ee > 0 else 0.0
        errs.append(float(np.linalg.norm(scale * e - t) / tn))
    return float(np.mean(errs))


def probe_spectra(field, points, height: float | None = None, n_samples: int = 256):
    """Render straight-down rays onto ``points``; returns ``(N, k)`` spectra."""
    points = np.asarray(points, dtype=float)
    top = float(field.aabb[1, 2]) + 0.5 if height is None else height
    o = points.copy()
    o[:, 2] = top
    d = np.tile([0.0, 0.0, -1.0], (len(points), 1))
    rad, _, _ = render_rays(field, o, d, 0.1, top - float(field.aabb[0, 2]) + 0.1, n_samples)
    return rad


def checker_scores(estimated, truth) -> dict:
    """SAM and scale-aligned RMSE over checker patch spectra ``(24, k)``.

    RMSE uses one least-squares scale over all patches, since a field
    recovered jointly with an SSF is fixed only up to a global factor.
    """
    est = np.asarray(estimated, dtype=float)
    tru = np.asarray(truth, dtype=float)
    _, sam = spectral_metrics(est, tru)
    denom = float(np.sum(est * est))
    scale = float(np.sum(est * tru)) / denom if denom > 0 else 0.0
    rmse, _ = spectral_metrics(scale * est, tru)
    raw_rmse, _ = spectral_metrics(est, tru)
    return {"sam": sam, "rmse_aligned": rmse, "rmse": raw_rmse, "scale": scale}


@dataclass
class MetricReport:
    psnr_db: float
    ssim: float
    spectral_rmse: float
    sam_radians: float
    ssf_rel_l2: float | None = None
    per_view: list = dc_field(default_factory=list)

    def __post_init__(self):
        if not -1.0 <= self.ssim <= 1.0 + 1e-12:
            raise ArgumentError(f"ssim out of range: {self.ssim}")

    def summary(self) -> str:
        def fmt(x):
            return "inf" if x is not None and math.isinf(x) else ("absent" if x is None else f"{x:.6g}")
        lines = [
            f"PSNR (dB)        {fmt(self.psnr_db)}",
            f"SSIM             {fmt(self.ssim)}",
            f"spectral RMSE    {fmt(self.spectral_rmse)}",
            f"SAM (rad)        {fmt(self.sam_radians)}",
            f"SSF rel. L2      {fmt(self.ssf_rel_l2)}",
            f"views evaluated  {len(self.per_view)}",
        ]
        return "\n".join(lines) + "\n"


def write_report(directory, report: MetricReport, stem: str = "report") -> tuple:
    """Write ``<stem>.csv`` (per view + mean row) and ``<stem>.txt``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["view", "psnr_db", "ssim", "spectral_rmse", "sam_radians", "ssf_rel_l2"])

    def cell(x):
        return "" if x is None else repr(float(x))

    for row in report.per_view:
        w.writerow([row["view"], cell(row["psnr_db"]), cell(row["ssim"]),
                    cell(row.get("spectral_rmse")), cell(row.get("sam_radians")), ""])
    w.writerow(["mean", cell(report.psnr_db), cell(report.ssim), cell(report.spectral_rmse),
                cell(report.sam_radians), cell(report.ssf_rel_l2)])
    csv_path, txt_path = d / f"{stem}.csv", d / f"{stem}.txt"
    atomic_write_text(csv_path, buf.getvalue())
    atomic_write_text(txt_path, report.summary())
    return csv_path, txt_path


def write_spectra_curves(path, wavelengths, truth, estimate, labels) -> None:
    """Long-format CSV ``label,wavelength_nm,truth,estimate`` for plotting."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["label", "wavelength_nm", "truth", "estimate"])
    for lab, t, e in zip(labels, np.asarray(truth), np.asarray(estimate)):
        for wl, tv, ev in zip(wavelengths, t, e):
            w.writerow([lab, repr(float(wl)), repr(float(tv)), repr(float(ev))])
    atomic_write_text(path, buf.getvalue())
