"""Dense voxel grid holding raw density and per-band color parameters.

Grid nodes sit on the box corners: node ``(i, j, l)`` is at
``lo + (i, j, l) * (hi - lo) / (resolution - 1)``. Raw values are
interpolated trilinearly and then activated (softplus for density, sigmoid
for color).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._io import atomic_write_bytes
from .errors import ArgumentError, DataError
from .spectral import WavelengthGrid

__all__ = [
    "occupancy_grid",
    "VoxelField",
    "FieldSample",
    "FieldGrad",
    "softplus",
    "sigmoid",
    "softplus_inv",
    "init_field",
    "sample",
    "sample_grad",
    "save_checkpoint",
    "load_checkpoint",
]

MAGIC = b"SPECFLD1"
SSF_MAGIC = b"SSFHEAD1"


def softplus(x):
    x = np.asarray(x, dtype=float)
    return np.logaddexp(0.0, x)


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    return np.exp(-np.logaddexp(0.0, -x))


def softplus_inv(y):
    y = np.asarray(y, dtype=float)
    # log(expm1(y)) without overflow for large y
    return np.where(y > 30.0, y + np.log1p(-np.exp(-np.minimum(y, 700.0))),
                    np.log(np.expm1(np.minimum(y, 30.0))))


@dataclass
class VoxelField:
    resolution: tuple
    aabb: np.ndarray  # (2, 3): lo, hi
    density_raw: np.ndarray  # (nx, ny, nz)
    color_raw: np.ndarray  # (nx, ny, nz, k)
    grid: WavelengthGrid

    def __post_init__(self):
        self.resolution = tuple(int(r) for r in self.resolution)
        if len(self.resolution) != 3 or min(self.resolution) < 2:
            raise ArgumentError(f"resolution must be 3 integers >= 2, got {self.resolution}")
        self.aabb = np.array(self.aabb, dtype=float).reshape(2, 3)
        if not np.all(self.aabb[1] - self.aabb[0] > 0):
            raise ArgumentError(f"degenerate aabb {self.aabb.tolist()}")
        self.density_raw = np.ascontiguousarray(self.density_raw, dtype=float)
        self.color_raw = np.ascontiguousarray(self.color_raw, dtype=float)
        if self.density_raw.shape != self.resolution:
            raise ArgumentError("density_raw shape does not match resolution")
        if self.color_raw.shape != self.resolution + (self.grid.count,):
            raise ArgumentError("color_raw shape does not match resolution and grid")

    @property
    def k(self) -> int:
        return self.grid.count

    @property
    def voxel_size(self) -> np.ndarray:
        return (self.aabb[1] - self.aabb[0]) / (np.array(self.resolution) - 1)

    def node_position(self, i, j, l) -> np.ndarray:
        return self.aabb[0] + np.array([i, j, l], dtype=float) * self.voxel_size

    def copy(self) -> "VoxelField":
        return VoxelField(self.resolution, self.aabb.copy(), self.density_raw.copy(),
                          self.color_raw.copy(), self.grid)

    def sigma(self) -> np.ndarray:
        return softplus(self.density_raw)

    def color(self) -> np.ndarray:
        return sigmoid(self.color_raw)


@dataclass(frozen=True)
class FieldSample:
    sigma: float
    color: np.ndarray


@dataclass
class FieldGrad:
    """Gradient contributions on at most 8 grid nodes.

    ``index`` holds flat node indices into ``density_raw.ravel()``;
    ``color`` rows pair with the same nodes.
    """

    index: np.ndarray
    density: np.ndarray
    color: np.ndarray

    def accumulate(self, grad_density: np.ndarray, grad_color: np.ndarray) -> None:
        k = grad_color.shape[-1]
        np.add.at(grad_density.reshape(-1), self.index, self.density)
        np.add.at(grad_color.reshape(-1, k), self.index, self.color)


def _locate(field: VoxelField, p):
    """Corner indices and trilinear weights, or None outside the box."""
    p = np.asarray(p, dtype=float)
    if p.shape != (3,) or not np.all(np.isfinite(p)):
        raise ArgumentError(f"point must be 3 finite coordinates, got {p!r}")
    res = np.array(field.resolution)
    u = (p - field.aabb[0]) / (field.aabb[1] - field.aabb[0]) * (res - 1)
    if np.any(u < 0) or np.any(u > res - 1):
        return None
    i0 = np.minimum(np.floor(u).astype(int), res - 2)
    f = u - i0
    corners, weights = [], []
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                w = ((f[0] if dx else 1 - f[0]) * (f[1] if dy else 1 - f[1])
                     * (f[2] if dz else 1 - f[2]))
                corners.append(np.ravel_multi_index(
                    (i0[0] + dx, i0[1] + dy, i0[2] + dz), field.resolution))
                weights.append(w)
    return np.array(corners), np.array(weights)


def sample(field: VoxelField, p, direction=None) -> FieldSample:
    """Query activated density and color at world point ``p``.

    ``direction`` is accepted for API symmetry and ignored (colors are
    view-independent). Points outside the box give zero density and the
    color of a zero raw value.
    """
    loc = _locate(field, p)
    if loc is None:
        return FieldSample(0.0, np.full(field.k, 0.5))
    idx, w = loc
    z = w @ field.density_raw.reshape(-1)[idx]
    zc = w @ field.color_raw.reshape(-1, field.k)[idx]
    return FieldSample(float(softplus(z)), sigmoid(zc))


def sample_grad(field: VoxelField, p, d_sigma: float, d_color) -> FieldGrad:
    """Backpropagate ``dL/dsigma`` and ``dL/dcolor`` onto the raw parameters."""
    loc = _locate(field, p)
    d_color = np.asarray(d_color, dtype=float)
    if loc is None:
        return FieldGrad(np.zeros(0, dtype=int), np.zeros(0), np.zeros((0, field.k)))
    idx, w = loc
    z = w @ field.density_raw.reshape(-1)[idx]
    zc = w @ field.color_raw.reshape(-1, field.k)[idx]
    g_z = d_sigma * sigmoid(z)
    c = sigmoid(zc)
    g_zc = d_color * c * (1.0 - c)
    return FieldGrad(idx, w * g_z, w[:, None] * g_zc[None, :])


def occupancy_grid(field: VoxelField, alpha: float = 1e-4, dilate: int = 1) -> np.ndarray:
    """Per-cell mask of cells that may hold visible density.

    A cell counts as occupied when its densest corner would give opacity of
    at least ``alpha`` across the cell diagonal; the mask is then grown by
    ``dilate`` cells so surfaces can still move.
    """
    from scipy import ndimage

    z = field.density_raw
    corner = np.maximum.reduce([z[dx:z.shape[0] - 1 + dx, dy:z.shape[1] - 1 + dy,
                                  dz:z.shape[2] - 1 + dz]
                                for dx in (0, 1) for dy in (0, 1) for dz in (0, 1)])
    diag = float(np.linalg.norm(field.voxel_size))
    occ = -np.expm1(-softplus(corner) * diag) >= alpha
    if dilate > 0 and occ.any():
        occ = ndimage.binary_dilation(occ, np.ones((3, 3, 3), bool), iterations=dilate)
    return occ.astype(np.uint8)


def init_field(resolution, aabb, grid: WavelengthGrid, seed: int = 0,
               density_bias: float = -3.0, color_noise: float = 0.0) -> VoxelField:
    res = tuple(int(r) for r in resolution)
    if len(res) != 3 or min(res) < 2:
        raise ArgumentError(f"resolution must be >= 2 per axis, got {resolution}")
    rng = np.random.default_rng(seed)
    density = np.full(res, float(density_bias))
    color = rng.uniform(-color_noise, color_noise, res + (grid.count,))
    return VoxelField(res, aabb, density, color, grid)


# --------------------------------------------------------------------------
# SPECFLD1 container
#
# header: magic, u32 nx ny nz, f64 aabb[6], u32 k, f64 start_nm, f64 step_nm
# body:   f32 density_raw, f32 color_raw (C order)
# optional section: magic SSFHEAD1, u32 s, u32 channels, f64 basis[k*s],
#                   f64 coeffs_raw[s*channels], u8 frozen

_HEADER = struct.Struct("<8s3I6dIdd")
_SSF_HEADER = struct.Struct("<8sII")


def encode_checkpoint(field: VoxelField, ssf=None) -> bytes:
    """Serialize; ``ssf`` is an optional ``(basis, coeffs_raw, frozen)`` triple."""
    parts = [_HEADER.pack(MAGIC, *field.resolution, *field.aabb.reshape(-1),
                          field.k, field.grid.start_nm, field.grid.step_nm),
             field.density_raw.astype("<f4").tobytes(),
             field.color_raw.astype("<f4").tobytes()]
    if ssf is not None:
        basis, coeffs_raw, frozen = ssf
        basis = np.asarray(basis, dtype="<f8")
        coeffs_raw = np.asarray(coeffs_raw, dtype="<f8")
        if basis.shape[0] != field.k or coeffs_raw.shape[0] != basis.shape[1]:
            raise ArgumentError("SSF section does not match the field")
        parts += [_SSF_HEADER.pack(SSF_MAGIC, basis.shape[1], coeffs_raw.shape[1]),
                  basis.tobytes(), coeffs_raw.tobytes(), struct.pack("<B", bool(frozen))]
    return b"".join(parts)


def decode_checkpoint(data: bytes, source: str = "<bytes>"):
    if len(data) < _HEADER.size or data[:8] != MAGIC:
        raise DataError(f"{source}: not a SPECFLD1 checkpoint")
    magic, nx, ny, nz, *rest = _HEADER.unpack_from(data, 0)
    aabb = np.array(rest[:6]).reshape(2, 3)
    k, start_nm, step_nm = rest[6], rest[7], rest[8]
    off = _HEADER.size
    n = nx * ny * nz
    need = off + 4 * n * (1 + k)
    if len(data) < need:
        raise DataError(f"{source}: truncated field body")
    density = np.frombuffer(data, "<f4", n, off).astype(float).reshape(nx, ny, nz)
    off += 4 * n
    color = np.frombuffer(data, "<f4", n * k, off).astype(float).reshape(nx, ny, nz, k)
    off += 4 * n * k
    field = VoxelField((nx, ny, nz), aabb, density, color,
                       WavelengthGrid(start_nm, step_nm, k))
    ssf = None
    if off < len(data):
        if data[off:off + 8] != SSF_MAGIC:
            raise DataError(f"{source}: unknown trailing section at byte {off}")
        _, s, ch = _SSF_HEADER.unpack_from(data, off)
        off += _SSF_HEADER.size
        if len(data) != off + 8 * (k * s + s * ch) + 1:
            raise DataError(f"{source}: malformed SSF section")
        basis = np.frombuffer(data, "<f8", k * s, off).reshape(k, s).copy()
        off += 8 * k * s
        coeffs = np.frombuffer(data, "<f8", s * ch, off).reshape(s, ch).copy()
        off += 8 * s * ch
        ssf = (basis, coeffs, bool(data[off]))
    return field, ssf


def save_checkpoint(path, field: VoxelField, ssf=None) -> None:
    atomic_write_bytes(path, encode_checkpoint(field, ssf))


def load_checkpoint(path):
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from exc
    return decode_checkpoint(data, str(path))
