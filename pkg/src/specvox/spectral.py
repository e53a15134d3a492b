"""Spectral axis types, resampling, CSV spectra and NMF basis extraction."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._io import atomic_write_text
from .errors import ArgumentError, DataError, DomainError, RangeError

__all__ = [
    "WavelengthGrid",
    "SpectralVector",
    "SSF",
    "SSFBasis",
    "SpectralImage",
    "REAL_GRID",
    "SYNTHETIC_GRID",
    "resample",
    "nmf_factorize",
    "nmf_best_of",
    "ssf_from_coeffs",
    "surrogate_ssf_database",
    "database_basis",
    "read_spectra_csv",
    "write_spectra_csv",
]


@dataclass(frozen=True)
class WavelengthGrid:
    start_nm: float
    step_nm: float
    count: int

    def __post_init__(self):
        if not self.step_nm > 0:
            raise ArgumentError(f"step_nm must be positive, got {self.step_nm}")
        if int(self.count) != self.count or self.count < 2:
            raise ArgumentError(f"count must be an integer >= 2, got {self.count}")
        object.__setattr__(self, "count", int(self.count))
        object.__setattr__(self, "start_nm", float(self.start_nm))
        object.__setattr__(self, "step_nm", float(self.step_nm))

    @property
    def wavelengths(self) -> np.ndarray:
        return self.start_nm + self.step_nm * np.arange(self.count)

    @property
    def end_nm(self) -> float:
        return self.start_nm + self.step_nm * (self.count - 1)

    def nearest_index(self, nm: float) -> int:
        return int(np.argmin(np.abs(self.wavelengths - nm)))

    @classmethod
    def from_wavelengths(cls, wl) -> "WavelengthGrid":
        wl = np.asarray(wl, dtype=float)
        if wl.ndim != 1 or wl.size < 2:
            raise ArgumentError("need at least two wavelengths")
        steps = np.diff(wl)
        if np.any(steps <= 0):
            raise DataError("wavelengths must be strictly increasing")
        step = float(steps.mean())
        if np.max(np.abs(steps - step)) > 1e-6 * max(1.0, step):
            raise DataError("wavelength grid is not uniform")
        return cls(float(wl[0]), step, wl.size)


REAL_GRID = WavelengthGrid(430.0, 10.0, 31)
SYNTHETIC_GRID = WavelengthGrid(440.0, 20.0, 15)


def _as_finite(values, what) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ArgumentError(f"{what} contains non-finite values")
    return arr


@dataclass(frozen=True)
class SpectralVector:
    grid: WavelengthGrid
    values: np.ndarray
    role: str = "radiance"

    def __post_init__(self):
        v = _as_finite(self.values, "spectral vector")
        if v.shape != (self.grid.count,):
            raise ArgumentError(
                f"expected {self.grid.count} values, got shape {v.shape}")
        if self.role == "transmittance" and (v.min() < 0 or v.max() > 1):
            raise ArgumentError("transmittance must lie in [0, 1]")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class SSF:
    """Camera spectral sensitivity, ``response[k, channels]``."""

    grid: WavelengthGrid
    response: np.ndarray

    def __post_init__(self):
        r = _as_finite(self.response, "SSF")
        if r.ndim == 1:
            r = r[:, None]
        if r.ndim != 2 or r.shape[0] != self.grid.count or r.shape[1] not in (1, 3):
            raise ArgumentError(f"SSF must be ({self.grid.count}, 1|3), got {r.shape}")
        if np.any(r < 0):
            raise ArgumentError("SSF entries must be nonnegative")
        r.setflags(write=False)
        object.__setattr__(self, "response", r)

    @property
    def channels(self) -> int:
        return self.response.shape[1]


@dataclass(frozen=True)
class SSFBasis:
    grid: WavelengthGrid
    basis: np.ndarray
    n_fit: int | None = field(default=None, compare=False)

    def __post_init__(self):
        b = _as_finite(self.basis, "basis")
        if b.ndim != 2 or b.shape[0] != self.grid.count:
            raise ArgumentError(f"basis must be ({self.grid.count}, s), got {b.shape}")
        if np.any(b < 0):
            raise ArgumentError("basis entries must be nonnegative")
        norms = np.linalg.norm(b, axis=0)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise ArgumentError("basis columns must have unit L2 norm")
        if self.n_fit is not None and b.shape[1] > self.n_fit:
            raise ArgumentError("more basis vectors than fitted spectra")
        b.setflags(write=False)
        object.__setattr__(self, "basis", b)

    @property
    def s(self) -> int:
        return self.basis.shape[1]


def resample(v: SpectralVector, target: WavelengthGrid) -> SpectralVector:
    """Linear interpolation onto ``target``; clamps outside the source support."""
    src = v.grid
    if target.end_nm < src.start_nm or target.start_nm > src.end_nm:
        raise RangeError(
            f"wavelength ranges [{src.start_nm}, {src.end_nm}] and "
            f"[{target.start_nm}, {target.end_nm}] do not overlap")
    if target == src:
        return v
    values = np.interp(target.wavelengths, src.wavelengths, v.values)
    return SpectralVector(target, values, v.role)


# --------------------------------------------------------------------------
# NMF

def _frobenius(data, w, h):
    return float(np.linalg.norm(data - w @ h))


def nmf_factorize(data, s: int, iters: int = 2000, seed: int = 0, *,
                  grid: WavelengthGrid | None = None, history: list | None = None,
                  tiny: float = 1e-300):
    """Lee-Seung multiplicative-update NMF under the Frobenius objective.

    Returns ``(SSFBasis, coeffs)`` with unit-norm basis columns; the column
    norms are moved into the coefficient rows so ``basis @ coeffs`` is
    unchanged. When ``history`` is a list it receives the residual
    ``||data - W H||_F`` before the first update and after every update.
    """
    v = _as_finite(data, "data")
    if v.ndim != 2:
        raise ArgumentError("data must be a 2-D matrix")
    if np.any(v < 0):
        raise DomainError("NMF data must be nonnegative")
    k, p = v.shape
    if int(s) != s or not 1 <= s <= min(k, p):
        raise ArgumentError(f"s must be in [1, {min(k, p)}], got {s}")
    if iters < 0:
        raise ArgumentError("iters must be >= 0")
    if grid is None:
        grid = WavelengthGrid(0.0, 1.0, k)
    elif grid.count != k:
        raise ArgumentError("grid does not match data rows")

    rng = np.random.default_rng(seed)
    scale = np.sqrt(max(v.mean(), tiny) / s)
    w = rng.uniform(0.0, 1.0, (k, s)) * scale + tiny
    h = rng.uniform(0.0, 1.0, (s, p)) * scale + tiny
    if history is not None:
        history.append(_frobenius(v, w, h))
    for _ in range(iters):
        h *= (w.T @ v) / np.maximum(w.T @ w @ h, tiny)
        w *= (v @ h.T) / np.maximum(w @ (h @ h.T), tiny)
        if history is not None:
            history.append(_frobenius(v, w, h))

    norms = np.linalg.norm(w, axis=0)
    norms[norms == 0] = 1.0
    w = w / norms
    h = h * norms[:, None]
    return SSFBasis(grid, w, n_fit=p), h


def nmf_best_of(data, s: int, iters: int = 2000, seeds=range(8), *,
                grid: WavelengthGrid | None = None):
    """Run several seeded restarts; keep the lowest residual (ties: lowest seed)."""
    best = None
    for seed in sorted(seeds):
        basis, coeffs = nmf_factorize(data, s, iters, seed, grid=grid)
        err = _frobenius(np.asarray(data, float), basis.basis, coeffs)
        if best is None or err < best[0]:
            best = (err, seed, basis, coeffs)
    if best is None:
        raise ArgumentError("no seeds given")
    return best[2], best[3]


def ssf_from_coeffs(basis: SSFBasis, coeffs) -> SSF:
    c = _as_finite(coeffs, "coefficients")
    if c.ndim == 1:
        c = c[:, None]
    if c.shape[0] != basis.s:
        raise ArgumentError(f"coeffs need {basis.s} rows, got {c.shape[0]}")
    if np.any(c < 0):
        raise ArgumentError("coefficients must be nonnegative")
    return SSF(basis.grid, basis.basis @ c)


# --------------------------------------------------------------------------
# Surrogate camera database

def surrogate_ssf_database(grid: WavelengthGrid, n: int = 28, seed: int = 2024):
    """Camera-like 3-channel SSFs built from sums of Gaussian lobes.

    Each channel has one dominant lobe near a typical B/G/R peak plus one or
    two weaker side lobes; every SSF is scaled to unit maximum.
    """
    rng = np.random.default_rng(seed)
    wl = grid.wavelengths
    peaks = (455.0, 540.0, 605.0)
    widths = (22.0, 28.0, 25.0)
    out = []
    for _ in range(n):
        resp = np.zeros((grid.count, 3))
        for ch in range(3):
            mu = peaks[ch] + rng.normal(0, 12)
            sd = widths[ch] * rng.uniform(0.8, 1.25)
            resp[:, ch] = np.exp(-0.5 * ((wl - mu) / sd) ** 2)
            for _ in range(rng.integers(1, 3)):
                mu2 = mu + rng.choice([-1, 1]) * rng.uniform(35, 80)
                sd2 = rng.uniform(15, 35)
                resp[:, ch] += rng.uniform(0.05, 0.3) * np.exp(-0.5 * ((wl - mu2) / sd2) ** 2)
            resp[:, ch] *= rng.uniform(0.6, 1.0)
        out.append(SSF(grid, resp / resp.max()))
    return out


# --------------------------------------------------------------------------
# CSV spectra: header ``wavelength_nm,v1[,v2,v3]``

def write_spectra_csv(path, grid: WavelengthGrid, values) -> None:
    vals = np.asarray(values, dtype=float)
    if vals.ndim == 1:
        vals = vals[:, None]
    if vals.shape[0] != grid.count:
        raise ArgumentError("values do not match grid")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["wavelength_nm"] + [f"v{j + 1}" for j in range(vals.shape[1])])
    for wl, row in zip(grid.wavelengths, vals):
        writer.writerow([repr(float(wl))] + [repr(float(x)) for x in row])
    atomic_write_text(path, buf.getvalue())


def read_spectra_csv(path):
    """Return ``(grid, values[k, columns])``; rejects non-monotone wavelengths."""
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from exc
    if not rows or not rows[0] or rows[0][0].strip() != "wavelength_nm":
        raise DataError(f"{path}:1: expected header starting with 'wavelength_nm'")
    ncol = len(rows[0]) - 1
    if ncol < 1:
        raise DataError(f"{path}:1: no value columns")
    wl, vals = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != ncol + 1:
            raise DataError(f"{path}:{lineno}: expected {ncol + 1} fields, got {len(row)}")
        try:
            nums = [float(x) for x in row]
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
        wl.append(nums[0])
        vals.append(nums[1:])
    if len(wl) >= 2 and np.any(np.diff(wl) <= 0):
        raise DataError(f"{path}: wavelengths are not strictly increasing")
    grid = WavelengthGrid.from_wavelengths(wl)
    return grid, np.array(vals, dtype=float)


@dataclass(frozen=True)
class SpectralImage:
    """``planes[k, height, width]`` of nonnegative radiance on ``grid``."""

    grid: WavelengthGrid
    planes: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.planes, dtype=float)
        if p.ndim != 3 or p.shape[0] != self.grid.count:
            raise ArgumentError(f"planes must be ({self.grid.count}, H, W), got {p.shape}")
        if not np.all(np.isfinite(p)):
            raise ArgumentError("spectral image contains non-finite values")
        if np.any(p < 0):
            raise ArgumentError("spectral image must be nonnegative")
        object.__setattr__(self, "planes", p)

    @property
    def height(self) -> int:
        return self.planes.shape[1]

    @property
    def width(self) -> int:
        return self.planes.shape[2]

    def pixels(self) -> np.ndarray:
        """View as ``(height, width, k)``."""
        return np.moveaxis(self.planes, 0, -1)


def database_basis(grid: WavelengthGrid, s: int = 6, n_fit: int = 25, n_total: int = 28,
                   seed: int = 2024, iters: int = 2000, restarts=range(8)):
    """NMF basis over the first ``n_fit`` surrogate SSFs; the rest are held out.

    Returns ``(basis, held_out)`` where ``held_out`` is a list of SSFs.
    """
    db = surrogate_ssf_database(grid, n_total, seed)
    if not 1 <= n_fit < n_total:
        raise ArgumentError("need 1 <= n_fit < n_total")
    data = np.concatenate([d.response for d in db[:n_fit]], axis=1)
    basis, _ = nmf_best_of(data, s, iters, restarts, grid=grid)
    return basis, db[n_fit:]
