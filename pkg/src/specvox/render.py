"""Pinhole rays, sampling along rays, and front-to-back volume compositing."""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from ._io import atomic_write_text
from .errors import ArgumentError
from .field import VoxelField
from .spectral import SpectralImage

__all__ = [
    "Camera",
    "Ray",
    "RaySamples",
    "CompositeResult",
    "look_at",
    "generate_rays",
    "camera_rays",
    "ray_box_interval",
    "sample_ray",
    "sample_t",
    "composite",
    "composite_grad",
    "render_rays",
    "render_image",
    "write_map_png",
]


@dataclass(frozen=True)
class Camera:
    """Pinhole camera; ``rotation``/``translation`` map camera to world.

    Camera axes: +x right, +y down, +z forward (viewing direction).
    """

    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray
    translation: np.ndarray
    near: float
    far: float

    def __post_init__(self):
        rot = np.array(self.rotation, dtype=float).reshape(3, 3)
        trans = np.array(self.translation, dtype=float).reshape(3)
        if not (0 < self.near < self.far):
            raise ArgumentError(f"need 0 < near < far, got {self.near}, {self.far}")
        if not (self.fx > 0 and self.fy > 0):
            raise ArgumentError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ArgumentError("image size must be positive")
        if np.linalg.norm(rot.T @ rot - np.eye(3)) >= 1e-9:
            raise ArgumentError("rotation is not orthonormal")
        rot.setflags(write=False)
        trans.setflags(write=False)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    @property
    def pose12(self) -> list:
        """Row-major 3x4 ``[R | t]`` as 12 floats."""
        return np.hstack([self.rotation, self.translation[:, None]]).reshape(-1).tolist()

    @classmethod
    def from_pose12(cls, pose, **intrinsics) -> "Camera":
        m = np.asarray(pose, dtype=float).reshape(3, 4)
        return cls(rotation=m[:, :3], translation=m[:, 3], **intrinsics)

    def intrinsics(self) -> dict:
        return dict(width=self.width, height=self.height, fx=self.fx, fy=self.fy,
                    cx=self.cx, cy=self.cy, near=self.near, far=self.far)

    def moved(self, rotation=None, translation=None) -> "Camera":
        return Camera(rotation=self.rotation if rotation is None else rotation,
                      translation=self.translation if translation is None else translation,
                      **self.intrinsics())


def look_at(eye, target=(0.0, 0.0, 0.0), up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Camera-to-world rotation whose +z axis points from ``eye`` to ``target``."""
    eye = np.asarray(eye, dtype=float)
    fwd = np.asarray(target, dtype=float) - eye
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, np.asarray(up, dtype=float))
    if np.linalg.norm(right) < 1e-12:
        right = np.cross(fwd, np.array([0.0, 1.0, 0.0]))
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    return np.stack([right, down, fwd], axis=1)


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    pixel: tuple

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float)
        if abs(np.linalg.norm(d) - 1.0) >= 1e-9:
            raise ArgumentError("ray direction must be unit length")
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float))
        object.__setattr__(self, "direction", d)


def camera_rays(cam: Camera, rows, cols):
    """Vectorized ray origins and unit directions for pixel centers."""
    rows = np.asarray(rows, dtype=float)
    cols = np.asarray(cols, dtype=float)
    if np.any(rows < 0) or np.any(rows >= cam.height) or np.any(cols < 0) or np.any(cols >= cam.width):
        raise ArgumentError("pixel outside the image")
    d_cam = np.stack([(cols + 0.5 - cam.cx) / cam.fx,
                      (rows + 0.5 - cam.cy) / cam.fy,
                      np.ones_like(cols)], axis=-1)
    d = d_cam @ cam.rotation.T
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    o = np.broadcast_to(cam.translation, d.shape).copy()
    return o, d


def generate_rays(cam: Camera, pixels) -> list:
    pixels = list(pixels)
    for r, c in pixels:
        if not (0 <= r < cam.height and 0 <= c < cam.width):
            raise ArgumentError(f"pixel {(r, c)} outside {cam.height}x{cam.width} image")
    if not pixels:
        return []
    rows, cols = np.array(pixels, dtype=float).T
    o, d = camera_rays(cam, rows, cols)
    return [Ray(o[i], d[i], tuple(pixels[i])) for i in range(len(pixels))]


def ray_box_interval(origins, dirs, aabb):
    """Slab test; returns ``(t_enter, t_exit)`` (``t_exit < t_enter`` on a miss)."""
    lo, hi = np.asarray(aabb, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t0 = (lo - origins) * inv
        t1 = (hi - origins) * inv
    tmin = np.minimum(t0, t1)
    tmax = np.maximum(t0, t1)
    # axis-parallel rays: inside the slab -> unbounded, outside -> empty
    par = dirs == 0
    inside = (origins >= lo) & (origins <= hi)
    tmin = np.where(par, np.where(inside, -np.inf, np.inf), tmin)
    tmax = np.where(par, np.where(inside, np.inf, -np.inf), tmax)
    return tmin.max(axis=-1), tmax.min(axis=-1)


def sample_t(near, far, n: int, rng=None) -> np.ndarray:
    """Per-ray sample distances, shape ``(R, n)``.

    Bin midpoints when ``rng`` is None, otherwise one uniform draw per bin.
    """
    near = np.atleast_1d(np.asarray(near, dtype=float))
    far = np.atleast_1d(np.asarray(far, dtype=float))
    if n < 1:
        raise ArgumentError("need at least one sample")
    if np.any(near >= far):
        raise ArgumentError("near must be < far")
    width = (far - near) / n
    if rng is None:
        u = np.broadcast_to(np.arange(n) + 0.5, (near.size, n))
    else:
        u = np.arange(n) + rng.random((near.size, n))
    t = near[:, None] + u * width[:, None]
    # guard the half-open bin against rounding up to the next edge
    return np.minimum(t, np.nextafter(near[:, None] + (np.arange(n) + 1) * width[:, None], -np.inf))


def sample_ray(ray: Ray, near: float, far: float, n: int, stratified: bool = False,
               seed=None) -> np.ndarray:
    if not near < far:
        raise ArgumentError(f"near ({near}) must be < far ({far})")
    rng = np.random.default_rng(seed) if stratified else None
    return sample_t(near, far, n, rng)[0]


@dataclass(frozen=True)
class RaySamples:
    t_values: np.ndarray
    deltas: np.ndarray
    sigmas: np.ndarray
    colors: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t_values, dtype=float)
        if t.ndim != 1 or (t.size > 1 and np.any(np.diff(t) <= 0)):
            raise ArgumentError("t_values must be strictly increasing")
        if np.any(np.asarray(self.deltas) <= 0):
            raise ArgumentError("deltas must be positive")
        object.__setattr__(self, "t_values", t)
        object.__setattr__(self, "deltas", np.asarray(self.deltas, dtype=float))
        object.__setattr__(self, "sigmas", np.asarray(self.sigmas, dtype=float))
        object.__setattr__(self, "colors", np.atleast_2d(np.asarray(self.colors, dtype=float)))

    @classmethod
    def from_t(cls, t_values, far, sigmas, colors) -> "RaySamples":
        t = np.asarray(t_values, dtype=float)
        return cls(t, np.diff(t, append=far), sigmas, colors)


@dataclass(frozen=True)
class CompositeResult:
    radiance: np.ndarray
    weights: np.ndarray
    transmittances: np.ndarray  # T_1..T_n
    final_transmittance: float  # T_{n+1}
    depth: float
    opacity: float


def composite(samples: RaySamples) -> CompositeResult:
    a = samples.deltas * samples.sigmas
    alpha = -np.expm1(-a)
    trans = np.concatenate([[1.0], np.cumprod(np.exp(-a))])
    w = trans[:-1] * alpha
    opacity = float(w.sum())
    depth = float(w @ samples.t_values / max(opacity, 1e-10))
    return CompositeResult(w @ samples.colors, w, trans[:-1], float(trans[-1]), depth, opacity)


def composite_grad(samples: RaySamples, d_radiance, d_weights=None):
    """Reverse-mode derivative of :func:`composite`.

    ``d_radiance`` is dL/d(radiance); optional ``d_weights`` adds a direct
    dL/dw term (used by the distortion loss). Returns ``(d_sigmas, d_colors)``.
    """
    res = composite(samples)
    d_rad = np.asarray(d_radiance, dtype=float)
    w = res.weights
    g = samples.colors @ d_rad
    if d_weights is not None:
        g = g + np.asarray(d_weights, dtype=float)
    t_next = np.append(res.transmittances[1:], res.final_transmittance)
    gw = g * w
    suffix = np.cumsum(gw[::-1])[::-1] - gw
    d_a = g * t_next - suffix
    return d_a * samples.deltas, np.outer(w, d_rad)


# --------------------------------------------------------------------------
# batched rendering through the kernels

def render_rays(field: VoxelField, origins, dirs, near, far, n_samples: int, *, rng=None,
                clip_to_aabb: bool = True, stop_T: float = 0.0, backend=None):
    """Render arbitrary rays; returns ``(radiance[R, k], depth[R], opacity[R])``.

    With ``clip_to_aabb`` the ``[near, far]`` interval of each ray is
    intersected with the field box, so no samples are spent outside it.
    """
    kern = _kernels.get_backend(backend)
    origins = np.ascontiguousarray(origins, dtype=float).reshape(-1, 3)
    dirs = np.ascontiguousarray(dirs, dtype=float).reshape(-1, 3)
    n_rays = len(origins)
    near = np.broadcast_to(np.asarray(near, dtype=float), (n_rays,)).copy()
    far = np.broadcast_to(np.asarray(far, dtype=float), (n_rays,)).copy()
    if clip_to_aabb:
        t0, t1 = ray_box_interval(origins, dirs, field.aabb)
        near = np.maximum(near, t0)
        far = np.minimum(far, t1)
    hit = far > near
    radiance = np.zeros((n_rays, field.k))
    depth = np.zeros(n_rays)
    opacity = np.zeros(n_rays)
    if hit.any():
        t = sample_t(near[hit], far[hit], n_samples, rng)
        inv_cell = (np.array(field.resolution) - 1) / (field.aabb[1] - field.aabb[0])
        rad, dep, opa = kern.render_rays(field.density_raw, field.color_raw, field.aabb[0],
                                         inv_cell, origins[hit], dirs[hit], t, far[hit], stop_T)
        radiance[hit], depth[hit], opacity[hit] = rad, dep, opa
    return radiance, depth, opacity


def render_image(field: VoxelField, cam: Camera, n_samples: int = 256,
                 mode: str = "deterministic", seed: int = 0, *, clip_to_aabb: bool = True,
                 stop_T: float = 0.0, threads: int = 1, chunk: int = 4096, backend=None):
    """Render a full frame; returns ``(SpectralImage, depth[H, W], opacity[H, W])``.

    Deterministic mode uses bin midpoints and gives identical pixels for any
    ``threads``; stratified mode draws one seeded jitter per bin.
    """
    if mode not in ("deterministic", "stratified"):
        raise ArgumentError(f"unknown mode {mode!r}")
    rows, cols = np.mgrid[0:cam.height, 0:cam.width]
    o, d = camera_rays(cam, rows.reshape(-1), cols.reshape(-1))
    n_pix = len(o)
    starts = list(range(0, n_pix, chunk))
    if mode == "stratified":
        # one child stream per chunk keeps results independent of threading
        rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(len(starts))]
    else:
        rngs = [None] * len(starts)

    def work(i):
        s = starts[i]
        return render_rays(field, o[s:s + chunk], d[s:s + chunk], cam.near, cam.far, n_samples,
                           rng=rngs[i], clip_to_aabb=clip_to_aabb, stop_T=stop_T,
                           backend=backend)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(work, range(len(starts))))
    else:
        parts = [work(i) for i in range(len(starts))]
    rad = np.concatenate([p[0] for p in parts]).reshape(cam.height, cam.width, field.k)
    depth = np.concatenate([p[1] for p in parts]).reshape(cam.height, cam.width)
    opac = np.concatenate([p[2] for p in parts]).reshape(cam.height, cam.width)
    return SpectralImage(field.grid, np.moveaxis(rad, -1, 0)), depth, opac


def write_map_png(path, values, max_value: float | None = None) -> dict:
    """Write a 16-bit grayscale PNG with linear scaling; sidecar JSON records it.

    Pixel = round(value / max_value * 65535). Returns the metadata dict.
    """
    from PIL import Image

    values = np.asarray(values, dtype=float)
    if max_value is None:
        max_value = float(values.max()) if values.size and values.max() > 0 else 1.0
    q = np.clip(np.round(values / max_value * 65535.0), 0, 65535).astype(np.uint16)
    path = Path(path)
    Image.fromarray(q).save(path)
    meta = {"file": path.name, "scale": "linear", "max_value": max_value, "bits": 16}
    atomic_write_text(path.with_suffix(".json"), json.dumps(meta, indent=2))
    return meta
