"""Filters, the low-rank SSF head, the degradation map and training losses."""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .errors import ArgumentError, ConfigurationError, DataError
from .field import VoxelField, sample as field_sample, sample_grad, sigmoid, softplus, softplus_inv
from .render import Ray, RaySamples, composite, composite_grad, sample_ray
from .spectral import (SSF, SSFBasis, SpectralVector, WavelengthGrid, read_spectra_csv,
                       write_spectra_csv)

__all__ = [
    "FilterProfile",
    "FilterBank",
    "SSFHead",
    "LossConfig",
    "degrade",
    "relative_mse",
    "distortion_loss",
    "total_loss",
    "forward_pixel",
    "PixelTape",
    "PixelGrads",
    "initial_head",
    "spectral_curvature",
]


@dataclass(frozen=True)
class FilterProfile:
    id: str
    transmittance: SpectralVector

    def __post_init__(self):
        if self.transmittance.role != "transmittance":
            object.__setattr__(self, "transmittance", SpectralVector(
                self.transmittance.grid, self.transmittance.values, "transmittance"))


@dataclass(frozen=True)
class FilterBank:
    grid: WavelengthGrid
    filters: tuple

    def __post_init__(self):
        filters = tuple(self.filters)
        ids = [f.id for f in filters]
        if len(set(ids)) != len(ids):
            raise ArgumentError("filter ids must be unique")
        for f in filters:
            if f.transmittance.grid != self.grid:
                raise ArgumentError(f"filter {f.id!r} is on a different wavelength grid")
        object.__setattr__(self, "filters", filters)

    def __len__(self):
        return len(self.filters)

    @property
    def ids(self) -> list:
        return [f.id for f in self.filters]

    def index(self, filter_id: str) -> int:
        try:
            return self.ids.index(filter_id)
        except ValueError:
            raise ArgumentError(f"unknown filter id {filter_id!r}") from None

    def __getitem__(self, filter_id: str) -> FilterProfile:
        return self.filters[self.index(filter_id)]

    def matrix(self) -> np.ndarray:
        """Stacked transmittances, ``(n_filters, k)``."""
        if not self.filters:
            return np.zeros((0, self.grid.count))
        return np.stack([f.transmittance.values for f in self.filters])

    def rank_report(self, tol: float = 1e-8) -> dict:
        m = self.matrix()
        if m.size == 0:
            return {"filters": 0, "rank": 0, "condition_number": float("inf")}
        sv = np.linalg.svd(m, compute_uv=False)
        rank = int(np.sum(sv > tol * sv[0])) if sv[0] > 0 else 0
        cond = float(sv[0] / sv[rank - 1]) if rank else float("inf")
        return {"filters": len(self), "rank": rank, "condition_number": cond,
                "singular_values": sv.tolist()}

    def save(self, directory) -> list:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = []
        for f in self.filters:
            p = directory / f"filter_{f.id}.csv"
            write_spectra_csv(p, self.grid, f.transmittance.values)
            paths.append(p)
        return paths

    @classmethod
    def load(cls, paths, ids=None) -> "FilterBank":
        filters, grid = [], None
        for i, p in enumerate(paths):
            g, vals = read_spectra_csv(p)
            if vals.shape[1] != 1:
                raise DataError(f"{p}: filter CSV must have exactly one value column")
            if grid is None:
                grid = g
            elif g != grid:
                raise DataError(f"{p}: wavelength grid differs from the first filter")
            fid = ids[i] if ids is not None else Path(p).stem.removeprefix("filter_")
            filters.append(FilterProfile(fid, SpectralVector(g, vals[:, 0], "transmittance")))
        if grid is None:
            raise DataError("no filter files given")
        return cls(grid, tuple(filters))


@dataclass
class SSFHead:
    """Trainable SSF ``R = basis @ softplus(coeffs_raw)``."""

    basis: SSFBasis
    coeffs_raw: np.ndarray
    frozen: bool = False

    def __post_init__(self):
        self.coeffs_raw = np.array(self.coeffs_raw, dtype=float)
        if self.coeffs_raw.ndim != 2 or self.coeffs_raw.shape[0] != self.basis.s:
            raise ArgumentError(f"coeffs_raw must be ({self.basis.s}, channels)")
        if self.coeffs_raw.shape[1] not in (1, 3):
            raise ArgumentError("channels must be 1 or 3")

    @classmethod
    def from_coeffs(cls, basis: SSFBasis, coeffs, frozen: bool = False) -> "SSFHead":
        coeffs = np.maximum(np.asarray(coeffs, dtype=float), 1e-12)
        if coeffs.ndim == 1:
            coeffs = coeffs[:, None]
        return cls(basis, softplus_inv(coeffs), frozen)

    @property
    def channels(self) -> int:
        return self.coeffs_raw.shape[1]

    @property
    def coeffs(self) -> np.ndarray:
        return softplus(self.coeffs_raw)

    def response(self) -> np.ndarray:
        return self.basis.basis @ self.coeffs

    def ssf(self) -> SSF:
        return SSF(self.basis.grid, self.response())

    def raw_grad(self, d_response) -> np.ndarray:
        """Chain dL/dR through ``R = b softplus(raw)``; zero when frozen."""
        if self.frozen:
            return np.zeros_like(self.coeffs_raw)
        return (self.basis.basis.T @ np.asarray(d_response, dtype=float)) * sigmoid(self.coeffs_raw)

    def copy(self) -> "SSFHead":
        return SSFHead(self.basis, self.coeffs_raw.copy(), self.frozen)


@dataclass(frozen=True)
class LossConfig:
    epsilon: float = 0.01
    beta: float = 0.1
    use_distortion: bool = True

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ConfigurationError("epsilon must be > 0")
        if not self.beta >= 0:
            raise ConfigurationError("beta must be >= 0")

    @property
    def effective_beta(self) -> float:
        return self.beta if self.use_distortion else 0.0


def _ssf_matrix(ssf) -> np.ndarray:
    if isinstance(ssf, SSF):
        return ssf.response
    if isinstance(ssf, SSFHead):
        return ssf.response()
    return np.atleast_2d(np.asarray(ssf, dtype=float).T).T


def degrade(spectrum, filt: FilterProfile, ssf) -> np.ndarray:
    """Observed channels ``(spectrum * transmittance) @ R``."""
    f = filt.transmittance
    if isinstance(ssf, (SSF, SSFHead)):
        grid = ssf.grid if isinstance(ssf, SSF) else ssf.basis.grid
        if grid != f.grid:
            raise ArgumentError("filter and SSF are on different wavelength grids")
    if isinstance(spectrum, SpectralVector):
        if spectrum.grid != f.grid:
            raise ArgumentError("spectrum and filter are on different wavelength grids")
        spectrum = spectrum.values
    x = np.asarray(spectrum, dtype=float)
    if x.shape[-1] != f.grid.count:
        raise ArgumentError("spectrum length does not match the filter grid")
    return (x * f.values) @ _ssf_matrix(ssf)


def relative_mse(y, y_hat, epsilon: float = 0.01):
    """Loss ``0.5 * sum(((y - y_hat) / (sg(y_hat) + eps))**2)`` and dL/dy_hat.

    The denominator is treated as a constant when differentiating.
    """
    y = np.asarray(y, dtype=float)
    y_hat = np.asarray(y_hat, dtype=float)
    den = y_hat + epsilon
    r = (y - y_hat) / den
    return 0.5 * float(np.sum(r * r)), -(y - y_hat) / den ** 2


def distortion_loss(weights, midpoints, deltas):
    """Interval-compactness regularizer on normalized ray coordinates.

    ``sum_ij w_i w_j |s_i - s_j| + 1/3 sum_i w_i^2 delta_i``; returns
    ``(loss, dL/dweights)``. Direct O(n^2) evaluation.
    """
    w = np.asarray(weights, dtype=float)
    s = np.asarray(midpoints, dtype=float)
    d = np.asarray(deltas, dtype=float)
    dist = np.abs(s[:, None] - s[None, :])
    loss = float(w @ dist @ w + np.sum(w * w * d) / 3.0)
    grad = 2.0 * dist @ w + (2.0 / 3.0) * w * d
    return loss, grad


def total_loss(predictions, targets, weight_stats, cfg: LossConfig):
    """Batch loss: mean relative MSE + beta * mean distortion.

    ``weight_stats`` is a sequence of ``(weights, midpoints, deltas)`` per ray
    (may be None when distortion is off). Returns
    ``(loss, loss_recon, loss_dist, d_predictions, d_weights)``.
    """
    predictions = np.atleast_2d(np.asarray(predictions, dtype=float))
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    if predictions.shape != targets.shape:
        raise ArgumentError("prediction and target shapes differ")
    n = len(predictions)
    recon, d_pred = 0.0, np.zeros_like(predictions)
    for i in range(n):
        l, g = relative_mse(targets[i], predictions[i], cfg.epsilon)
        recon += l
        d_pred[i] = g / n
    recon /= n
    dist, d_w = 0.0, []
    if weight_stats is not None:
        if len(weight_stats) != n:
            raise ArgumentError("need one weight record per ray")
        for w, s, d in weight_stats:
            l, g = distortion_loss(w, s, d)
            dist += l
            d_w.append(cfg.effective_beta * g / n)
        dist /= n
    beta = cfg.effective_beta
    return recon + beta * dist, recon, dist, d_pred, d_w


# --------------------------------------------------------------------------
# single-pixel forward with a tape for exact reverse mode

@dataclass
class PixelGrads:
    density_raw: np.ndarray
    color_raw: np.ndarray
    coeffs_raw: np.ndarray


@dataclass
class PixelTape:
    field: VoxelField
    points: np.ndarray
    samples: RaySamples
    radiance: np.ndarray
    transmittance: np.ndarray
    response: np.ndarray
    head: SSFHead
    near: float
    far: float
    extras: dict = dc_field(default_factory=dict)

    def distortion_inputs(self):
        """``(weights, normalized midpoints, normalized deltas)`` for this ray."""
        span = self.far - self.near
        t, d = self.samples.t_values, self.samples.deltas
        w = composite(self.samples).weights
        return w, (t + 0.5 * d - self.near) / span, d / span

    def backward(self, d_y_hat, d_weights=None) -> PixelGrads:
        d_y = np.asarray(d_y_hat, dtype=float)
        d_rad = self.transmittance * (self.response @ d_y)
        d_resp = np.outer(self.radiance * self.transmittance, d_y)
        d_sigma, d_color = composite_grad(self.samples, d_rad, d_weights)
        g_d = np.zeros_like(self.field.density_raw)
        g_c = np.zeros_like(self.field.color_raw)
        for p, ds, dc in zip(self.points, d_sigma, d_color):
            sample_grad(self.field, p, ds, dc).accumulate(g_d, g_c)
        return PixelGrads(g_d, g_c, self.head.raw_grad(d_resp))


def forward_pixel(field: VoxelField, ray: Ray, filt: FilterProfile, head: SSFHead,
                  n_samples: int = 256, mode: str = "deterministic", *, near: float,
                  far: float, seed=None):
    """Predict the observed channels for one ray and keep a tape for backprop."""
    if filt.transmittance.grid != field.grid or head.basis.grid != field.grid:
        raise ArgumentError("field, filter and SSF head must share a wavelength grid")
    t = sample_ray(ray, near, far, n_samples, stratified=(mode == "stratified"), seed=seed)
    pts = ray.origin[None, :] + t[:, None] * ray.direction[None, :]
    fs = [field_sample(field, p) for p in pts]
    samples = RaySamples.from_t(t, far, [s.sigma for s in fs], [s.color for s in fs])
    comp = composite(samples)
    resp = head.response()
    trans = filt.transmittance.values
    y_hat = (comp.radiance * trans) @ resp
    return y_hat, PixelTape(field, pts, samples, comp.radiance, trans, resp, head, near, far)


def initial_head(basis: SSFBasis, reference=None, channels: int = 3, frozen: bool = False) -> SSFHead:
    """Head started at the NNLS fit of ``reference`` (default: surrogate database mean).

    The fitted response is scaled so its largest channel sums to 1 over the bands.
    """
    from scipy.optimize import nnls

    from .spectral import surrogate_ssf_database

    if reference is None:
        db = surrogate_ssf_database(basis.grid, basis.n_fit // channels if basis.n_fit else 25)
        reference = np.mean([d.response for d in db], axis=0)[:, :channels]
    ref = np.asarray(reference.response if isinstance(reference, SSF) else reference, dtype=float)
    if ref.ndim == 1:
        ref = ref[:, None]
    coeffs = np.stack([nnls(basis.basis, ref[:, c])[0] for c in range(ref.shape[1])], axis=1)
    scale = (basis.basis @ coeffs).sum(axis=0).max()
    if not scale > 0:
        raise ArgumentError("reference SSF projects to zero on the basis")
    return SSFHead.from_coeffs(basis, coeffs / scale, frozen)


def spectral_curvature(color_raw, weight: float):
    """``weight * sum((c[b+1] - 2 c[b] + c[b-1])**2)`` over voxels, ``c = sigmoid(raw)``.

    A smoothness prior across bands for spectra the filters cannot resolve.
    Returns ``(loss, dL/dcolor_raw)``.
    """
    raw = np.asarray(color_raw, dtype=float)
    if weight == 0.0 or raw.shape[-1] < 3:
        return 0.0, np.zeros_like(raw)
    c = sigmoid(raw)
    d2 = c[..., 2:] - 2.0 * c[..., 1:-1] + c[..., :-2]
    g = np.zeros_like(c)
    g[..., 2:] += d2
    g[..., 1:-1] -= 2.0 * d2
    g[..., :-2] += d2
    return weight * float(np.sum(d2 * d2)), (2.0 * weight) * g * c * (1.0 - c)
