"""Synthetic scenes, filtered captures, dataset persistence and subsetting."""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field as dc_field, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from ._io import atomic_write_bytes, atomic_write_text
from .errors import ArgumentError, ConfigurationError, DataError
from .field import VoxelField, load_checkpoint, save_checkpoint
from .model import FilterBank, FilterProfile
from .render import Camera, look_at, render_image, write_map_png
from .spectral import (SSF, SpectralImage, SpectralVector, WavelengthGrid, read_spectra_csv,
                       write_spectra_csv)

log = logging.getLogger(__name__)

__all__ = [
    "Box",
    "Sphere",
    "ColorChecker",
    "SceneSpec",
    "View",
    "CaptureSet",
    "SpectralImage",
    "default_scene",
    "generate_scene",
    "hemisphere_cameras",
    "synthesize_captures",
    "select_training_subset",
    "generate_filter_bank",
    "write_msif",
    "read_msif",
    "save_dataset",
    "ToyConfig",
    "degrade_image",
    "build_toy_dataset",
    "view_assignment",
    "normalize_ssf",
    "regrade_captures",
    "load_dataset",
]

EMPTY_RAW = -20.0
SOLID_RAW = 200.0


@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple
    reflectance: SpectralVector

    def contains(self, pts):
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        return np.all((pts >= lo) & (pts <= hi), axis=-1)


@dataclass(frozen=True)
class Sphere:
    center: tuple
    radius: float
    reflectance: SpectralVector

    def contains(self, pts):
        return np.linalg.norm(pts - np.asarray(self.center), axis=-1) <= self.radius


@dataclass(frozen=True)
class ColorChecker:
    """4 x 6 patch chart lying flat, top face at ``z_top``.

    Patch ``id`` runs 1..24 left to right (+x), top to bottom (-y).
    """

    origin: tuple  # (x_left, y_top)
    z_top: float
    patch_size: float
    thickness: float
    spectra: tuple  # 24 SpectralVectors

    rows = 4
    cols = 6

    def __post_init__(self):
        if len(self.spectra) != self.rows * self.cols:
            raise ArgumentError("a color checker needs 24 patch spectra")

    def patch_box(self, pid: int) -> Box:
        r, c = divmod(pid - 1, self.cols)
        x0 = self.origin[0] + c * self.patch_size
        y1 = self.origin[1] - r * self.patch_size
        return Box((x0, y1 - self.patch_size, self.z_top - self.thickness),
                   (x0 + self.patch_size, y1, self.z_top), self.spectra[pid - 1])

    def patch_center(self, pid: int) -> np.ndarray:
        b = self.patch_box(pid)
        return np.array([(b.lo[0] + b.hi[0]) / 2, (b.lo[1] + b.hi[1]) / 2, self.z_top])

    def patch_centers(self) -> np.ndarray:
        return np.stack([self.patch_center(i) for i in range(1, 25)])

    def boxes(self) -> list:
        return [self.patch_box(i) for i in range(1, 25)]


@dataclass(frozen=True)
class SceneSpec:
    grid: WavelengthGrid
    objects: tuple = ()
    color_checker: ColorChecker | None = None
    illuminant: SpectralVector | None = None
    aabb: tuple = ((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0))
    seed: int = 0

    def all_boxes(self) -> list:
        shapes = list(self.objects)
        if self.color_checker is not None:
            shapes += self.color_checker.boxes()
        return shapes

    def albedo(self, reflectance: SpectralVector) -> np.ndarray:
        """Per-band color of a surface: reflectance x illuminant, kept in (0, 1)."""
        if reflectance.grid != self.grid:
            raise ArgumentError("reflectance is on a different wavelength grid")
        r = reflectance.values
        if r.min() < 0 or r.max() > 1:
            raise ArgumentError("reflectance must lie in [0, 1]")
        illum = np.ones(self.grid.count) if self.illuminant is None else self.illuminant.values
        return np.clip(r * illum / illum.max(), 1e-3, 1.0 - 1e-3)


def smooth_spectrum(grid: WavelengthGrid, rng, lobes=(1, 2), floor=(0.03, 0.15)) -> np.ndarray:
    """Smooth reflectance-like curve: baseline plus 1-2 Gaussian lobes, in [0, 1]."""
    wl = grid.wavelengths
    v = np.full(grid.count, rng.uniform(*floor))
    for _ in range(rng.integers(lobes[0], lobes[1] + 1)):
        mu = rng.uniform(grid.start_nm - 40, grid.end_nm + 40)
        sd = rng.uniform(30, 90)
        v += rng.uniform(0.3, 0.8) * np.exp(-0.5 * ((wl - mu) / sd) ** 2)
    return np.clip(v, 0.0, 0.95)


def default_scene(grid: WavelengthGrid, seed: int = 0, illuminant=None) -> SceneSpec:
    """Color checker on the floor of the box plus two colored boxes behind it."""
    rng = np.random.default_rng(seed)
    spectra = []
    for pid in range(1, 25):
        if pid > 18:  # neutral row, like a real chart
            level = np.linspace(0.9, 0.05, 6)[pid - 19]
            spectra.append(SpectralVector(grid, np.full(grid.count, level)))
        else:
            spectra.append(SpectralVector(grid, smooth_spectrum(grid, rng)))
    checker = ColorChecker(origin=(-0.75, 0.15), z_top=-0.6, patch_size=0.25,
                           thickness=0.15, spectra=tuple(spectra))
    boxes = (
        Box((-0.7, 0.35, -0.75), (-0.25, 0.8, 0.05), SpectralVector(grid, smooth_spectrum(grid, rng))),
        Box((0.2, 0.4, -0.75), (0.65, 0.85, -0.25), SpectralVector(grid, smooth_spectrum(grid, rng))),
    )
    return SceneSpec(grid, boxes, checker, illuminant, seed=seed)


def generate_scene(spec: SceneSpec, resolution=48) -> VoxelField:
    """Rasterize the scene onto grid nodes.

    Nodes inside an object get a large raw density and the object's color;
    empty nodes take the color of the nearest occupied node so that
    interpolation near surfaces does not blend in a background color.
    """
    res = (resolution,) * 3 if np.isscalar(resolution) else tuple(resolution)
    aabb = np.asarray(spec.aabb, dtype=float)
    axes = [np.linspace(aabb[0, a], aabb[1, a], res[a]) for a in range(3)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    k = spec.grid.count
    occupied = np.zeros(res, dtype=bool)
    color = np.full(res + (k,), 0.5)
    for obj in spec.all_boxes():
        inside = obj.contains(pts)
        color[inside] = spec.albedo(obj.reflectance)
        occupied |= inside
    density = np.where(occupied, SOLID_RAW, EMPTY_RAW)
    if occupied.any() and not occupied.all():
        _, nearest = ndimage.distance_transform_edt(~occupied, return_indices=True)
        color = color[nearest[0], nearest[1], nearest[2]]
    color_raw = np.log(color) - np.log1p(-color)
    return VoxelField(res, aabb, density, color_raw, spec.grid)


def hemisphere_cameras(count: int, radius: float = 3.5, width: int = 64, height: int = 64,
                       fov_deg: float = 40.0, jitter: float = 0.0, seed: int = 0,
                       center=(0.0, 0.0, 0.0), elevation_deg=(20.0, 70.0),
                       depth_margin: float = 1.8) -> list:
    """Cameras on a golden-angle spiral over the upper hemisphere, looking at ``center``."""
    rng = np.random.default_rng(seed)
    fx = 0.5 * width / np.tan(np.radians(fov_deg) / 2)
    fy = 0.5 * height / np.tan(np.radians(fov_deg) / 2)
    center = np.asarray(center, dtype=float)
    cams = []
    golden = np.pi * (3.0 - np.sqrt(5.0))
    lo, hi = np.radians(elevation_deg)
    for i in range(count):
        frac = (i + 0.5) / count
        elev = np.arcsin(np.sin(lo) + frac * (np.sin(hi) - np.sin(lo)))
        azim = i * golden
        if jitter:
            elev += rng.normal(0, jitter)
            azim += rng.normal(0, jitter)
        eye = center + radius * np.array([np.cos(elev) * np.cos(azim),
                                          np.cos(elev) * np.sin(azim), np.sin(elev)])
        cams.append(Camera(width, height, fx, fy, width / 2, height / 2, look_at(eye, center),
                           eye, max(radius - depth_margin, 1e-3), radius + depth_margin))
    return cams


@dataclass
class View:
    camera: int
    filter_id: str
    image: np.ndarray  # (H, W, channels)
    split: str = "train"


@dataclass
class CaptureSet:
    grid: WavelengthGrid
    cameras: list
    views: list
    filter_bank: FilterBank
    ssf_truth: SSF | None = None
    spectral_truth: dict = dc_field(default_factory=dict)  # camera index -> SpectralImage
    seed: int = 0

    def __post_init__(self):
        for i, v in enumerate(self.views):
            if v.filter_id not in self.filter_bank.ids:
                raise ArgumentError(f"view {i} uses unknown filter {v.filter_id!r}")
            if not 0 <= v.camera < len(self.cameras):
                raise ArgumentError(f"view {i} references missing camera {v.camera}")
            if v.split not in ("train", "test"):
                raise ArgumentError(f"view {i} has bad split {v.split!r}")

    @property
    def train_indices(self) -> list:
        return [i for i, v in enumerate(self.views) if v.split == "train"]

    @property
    def test_indices(self) -> list:
        return [i for i, v in enumerate(self.views) if v.split == "test"]

    @property
    def channels(self) -> int:
        return self.views[0].image.shape[-1] if self.views else 0


def degrade_image(x, transmittance, response) -> np.ndarray:
    """``(X o f) R`` for an ``(H, W, k)`` spectral image; returns ``(H, W, channels)``.

    Every code path that forms observed images goes through here so the
    arithmetic (and its rounding) is identical.
    """
    x = np.asarray(x, dtype=float)
    flat = x.reshape(-1, x.shape[-1])
    return ((flat * transmittance) @ response).reshape(x.shape[:-1] + (response.shape[1],))


def synthesize_captures(truth_field: VoxelField, cameras, filter_bank: FilterBank, ssf_truth: SSF,
                        assignment, seed: int = 0, n_samples: int = 256,
                        threads: int = 1) -> CaptureSet:
    """Render the true spectra per camera and apply the degradation per view.

    ``assignment`` lists ``(camera_index, filter_id)`` or
    ``(camera_index, filter_id, split)`` per view. Spectra are rounded to
    float32 first so the stored truth reproduces every view exactly.
    """
    if filter_bank.grid != truth_field.grid or ssf_truth.grid != truth_field.grid:
        raise ArgumentError("field, filters and SSF must share a wavelength grid")
    entries = []
    for a in assignment:
        cam_i, fid = int(a[0]), str(a[1])
        split = a[2] if len(a) > 2 else "train"
        filter_bank.index(fid)
        if not 0 <= cam_i < len(cameras):
            raise ArgumentError(f"camera index {cam_i} out of range")
        entries.append((cam_i, fid, split))
    truth = {}
    for cam_i in sorted({e[0] for e in entries}):
        img, _, _ = render_image(truth_field, cameras[cam_i], n_samples, threads=threads)
        truth[cam_i] = SpectralImage(truth_field.grid, img.planes.astype(np.float32).astype(float))
    views = []
    for cam_i, fid, split in entries:
        y = degrade_image(truth[cam_i].pixels(), filter_bank[fid].transmittance.values,
                          ssf_truth.response)
        views.append(View(cam_i, fid, y, split))
    return CaptureSet(truth_field.grid, list(cameras), views, filter_bank, ssf_truth, truth, seed)


def select_training_subset(captures: CaptureSet, proportion: float, seed: int = 0) -> CaptureSet:
    """Seeded subsample of the training views; test views are kept.

    When the kept count allows it, every filter present among the training
    views keeps at least one view.
    """
    if not 0 < proportion <= 1:
        raise ConfigurationError(f"proportion must be in (0, 1], got {proportion}")
    train = captures.train_indices
    m = int(round(proportion * len(train)))
    if m < 1:
        raise ConfigurationError("subset would contain no training views")
    if m == len(train):
        return replace(captures, views=list(captures.views))
    rng = np.random.default_rng(seed)
    order = [train[i] for i in rng.permutation(len(train))]
    filters = sorted({captures.views[i].filter_id for i in train})
    chosen = []
    if m >= len(filters):
        for fid in filters:
            chosen.append(next(i for i in order if captures.views[i].filter_id == fid))
    else:
        log.warning("keeping %d views cannot cover all %d filters", m, len(filters))
    for i in order:
        if len(chosen) == m:
            break
        if i not in chosen:
            chosen.append(i)
    keep = set(chosen) | set(captures.test_indices)
    views = [v for i, v in enumerate(captures.views) if i in keep]
    return replace(captures, views=views)


def generate_filter_bank(grid: WavelengthGrid, count: int, family: str = "gaussian",
                         seed: int = 0, width_scale: float = 0.6,
                         peak=(0.75, 0.95)) -> FilterBank:
    """Band-pass (``gaussian``) or edge (``longpass``) filters spread over the grid.

    Gaussian widths are ``width_scale`` times the center spacing so that
    neighbouring passbands overlap and the union covers the whole range.
    """
    if count < 1:
        raise ArgumentError("need at least one filter")
    rng = np.random.default_rng(seed)
    wl = grid.wavelengths
    span = grid.end_nm - grid.start_nm
    filters = []
    if count == 1:
        centers = np.array([(grid.start_nm + grid.end_nm) / 2])
        spacing = span
    else:
        centers = np.linspace(grid.start_nm, grid.end_nm, count)
        spacing = span / (count - 1)
    for i, mu in enumerate(centers):
        top = rng.uniform(*peak)
        if family == "gaussian":
            sd = width_scale * spacing
            t = top * np.exp(-0.5 * ((wl - mu) / sd) ** 2)
        elif family == "longpass":
            edge = grid.start_nm + (i + 0.5) * span / (count + 1)
            t = 0.05 + (top - 0.05) / (1.0 + np.exp(-(wl - edge) / (0.15 * spacing)))
        else:
            raise ArgumentError(f"unknown filter family {family!r}")
        filters.append(FilterProfile(f"F{i:02d}", SpectralVector(grid, t, "transmittance")))
    bank = FilterBank(grid, tuple(filters))
    rep = bank.rank_report()
    log.info("filter bank: %d filters, rank %d, condition %.3g", count, rep["rank"],
             rep["condition_number"])
    return bank


# --------------------------------------------------------------------------
# MSIF: magic, u32 width, height, bands, f32 start_nm, step_nm, f32 planes

_MSIF = struct.Struct("<8s3I2f")


def encode_msif(img: SpectralImage) -> bytes:
    head = _MSIF.pack(b"MSIF0001", img.width, img.height, img.grid.count,
                      img.grid.start_nm, img.grid.step_nm)
    return head + np.ascontiguousarray(img.planes, dtype="<f4").tobytes()


def decode_msif(data: bytes, source="<bytes>") -> SpectralImage:
    if len(data) < _MSIF.size or data[:8] != b"MSIF0001":
        raise DataError(f"{source}: not an MSIF image")
    _, w, h, bands, start, step = _MSIF.unpack_from(data, 0)
    n = w * h * bands
    if len(data) != _MSIF.size + 4 * n:
        raise DataError(f"{source}: expected {n} float32 values")
    planes = np.frombuffer(data, "<f4", n, _MSIF.size).reshape(bands, h, w).astype(float)
    return SpectralImage(WavelengthGrid(float(start), float(step), bands), planes)


def write_msif(path, img: SpectralImage) -> None:
    atomic_write_bytes(path, encode_msif(img))


def read_msif(path) -> SpectralImage:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from exc
    return decode_msif(data, str(path))


def export_band_pngs(directory, stem: str, img: SpectralImage) -> dict:
    """One 16-bit PNG per band; returns ``{file name: max value}``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    out = {}
    for b, wl in enumerate(img.grid.wavelengths):
        name = f"{stem}_{int(round(wl))}nm.png"
        plane = img.planes[b]
        vmax = float(plane.max()) if plane.max() > 0 else 1.0
        write_map_png(directory / name, plane, vmax)
        (directory / name).with_suffix(".json").unlink()
        out[name] = vmax
    return out


# --------------------------------------------------------------------------
# dataset directory

MANIFEST = "manifest.json"


def save_dataset(captures: CaptureSet, directory, truth_field: VoxelField | None = None,
                 export_png: bool = False, extra: dict | None = None) -> Path:
    d = Path(directory)
    for sub in ("views", "filters", "truth"):
        (d / sub).mkdir(parents=True, exist_ok=True)
    filter_paths = captures.filter_bank.save(d / "filters")
    manifest = {
        "format": "specvox-dataset/1",
        "seed": captures.seed,
        "grid": {"start_nm": captures.grid.start_nm, "step_nm": captures.grid.step_nm,
                 "count": captures.grid.count},
        "cameras": [{"intrinsics": c.intrinsics(), "pose": c.pose12} for c in captures.cameras],
        "filters": [{"id": fid, "path": str(p.relative_to(d))}
                    for fid, p in zip(captures.filter_bank.ids, filter_paths)],
        "views": [],
        "ssf_truth": None,
        "spectral_truth": [],
        "truth_field": None,
        "png": {},
    }
    for i, v in enumerate(captures.views):
        rel = f"views/view_{i:03d}.npy"
        np.save(d / rel, np.asarray(v.image, dtype=np.float64), allow_pickle=False)
        manifest["views"].append({"image": rel, "camera": v.camera, "filter": v.filter_id,
                                  "split": v.split})
    if captures.ssf_truth is not None:
        write_spectra_csv(d / "ssf_truth.csv", captures.grid, captures.ssf_truth.response)
        manifest["ssf_truth"] = "ssf_truth.csv"
    for cam_i, img in sorted(captures.spectral_truth.items()):
        rel = f"truth/x_cam{cam_i:03d}.msif"
        write_msif(d / rel, img)
        manifest["spectral_truth"].append({"camera": cam_i, "path": rel})
        if export_png:
            manifest["png"].update(export_band_pngs(d / "png", f"x_cam{cam_i:03d}", img))
    if truth_field is not None:
        save_checkpoint(d / "truth_field.specfld", truth_field)
        manifest["truth_field"] = "truth_field.specfld"
    if extra:
        manifest["extra"] = extra
    atomic_write_text(d / MANIFEST, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return d / MANIFEST


def _need(obj, key, where):
    try:
        return obj[key]
    except (KeyError, TypeError, IndexError):
        raise DataError(f"{where}: missing key {key!r}") from None


def load_manifest(directory) -> dict:
    path = Path(directory) / MANIFEST
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc


def load_dataset(directory, with_truth_field: bool = False):
    """Read a dataset directory; returns a CaptureSet (and the truth field if asked)."""
    d = Path(directory)
    m = load_manifest(d)
    where = str(d / MANIFEST)
    g = _need(m, "grid", where)
    grid = WavelengthGrid(_need(g, "start_nm", where), _need(g, "step_nm", where),
                          _need(g, "count", where))
    cams = []
    for i, c in enumerate(_need(m, "cameras", where)):
        try:
            cams.append(Camera.from_pose12(_need(c, "pose", f"{where} camera {i}"),
                                           **_need(c, "intrinsics", f"{where} camera {i}")))
        except (TypeError, ArgumentError) as exc:
            raise DataError(f"{where}: camera {i}: {exc}") from exc
    fl = _need(m, "filters", where)
    bank = FilterBank.load([d / _need(f, "path", where) for f in fl],
                           ids=[_need(f, "id", where) for f in fl])
    if bank.grid != grid:
        raise DataError(f"{where}: filter grid differs from manifest grid")
    views = []
    for i, v in enumerate(_need(m, "views", where)):
        p = d / _need(v, "image", f"{where} view {i}")
        try:
            img = np.load(p, allow_pickle=False)
        except (OSError, ValueError) as exc:
            raise DataError(f"{p}: {exc}") from exc
        views.append(View(int(_need(v, "camera", where)), str(_need(v, "filter", where)), img,
                          v.get("split", "train")))
    ssf = None
    if m.get("ssf_truth"):
        sg, vals = read_spectra_csv(d / m["ssf_truth"])
        ssf = SSF(sg, vals)
    truth = {}
    for t in m.get("spectral_truth", []):
        truth[int(_need(t, "camera", where))] = read_msif(d / _need(t, "path", where))
    try:
        cs = CaptureSet(grid, cams, views, bank, ssf, truth, int(m.get("seed", 0)))
    except ArgumentError as exc:
        raise DataError(f"{where}: {exc}") from exc
    if with_truth_field:
        tf = None
        if m.get("truth_field"):
            tf, _ = load_checkpoint(d / m["truth_field"])
        return cs, tf
    return cs


# --------------------------------------------------------------------------
# toy dataset: checker + two boxes seen by a hemisphere rig

def normalize_ssf(ssf: SSF) -> SSF:
    """Scale so the largest channel sums to 1 over the bands (keeps Y <= 1)."""
    return SSF(ssf.grid, ssf.response / ssf.response.sum(axis=0).max())


@dataclass(frozen=True)
class ToyConfig:
    grid: WavelengthGrid = WavelengthGrid(440.0, 20.0, 15)
    n_views: int = 40
    n_test: int = 4
    n_filters: int = 8
    filter_family: str = "gaussian"
    truth_resolution: int = 48
    image_size: int = 64
    radius: float = 3.5
    fov_deg: float = 40.0
    render_samples: int = 256
    ssf_basis: int = 6
    ssf_truth_index: int = 0
    exposure: float = 0.95
    seed: int = 0

    def __post_init__(self):
        if self.n_views < 1 or self.n_test < 0 or self.n_filters < 1:
            raise ConfigurationError("need n_views >= 1, n_test >= 0, n_filters >= 1")
        if not 0 <= self.ssf_truth_index < 3:
            raise ConfigurationError("ssf_truth_index must be 0, 1 or 2")


def view_assignment(n_views: int, n_test: int, filter_ids, seed: int = 0) -> list:
    """Cameras for train and test interleaved along the spiral; filters balanced.

    Returns ``(camera_index, filter_id, split)`` triples. Training views get a
    seeded permutation of ``i mod n_filters`` so every filter is used about
    equally; test views cycle through the filters.
    """
    total = n_views + n_test
    test = set()
    if n_test:
        stride = total / n_test
        test = {int(stride * (j + 0.5)) for j in range(n_test)}
    rng = np.random.default_rng(seed)
    nf = len(filter_ids)
    train_f = rng.permutation(np.arange(n_views) % nf)
    out, ti, si = [], 0, 0
    for cam in range(total):
        if cam in test:
            out.append((cam, filter_ids[si % nf], "test"))
            si += 1
        else:
            out.append((cam, filter_ids[int(train_f[ti])], "train"))
            ti += 1
    return out


def build_toy_dataset(cfg: ToyConfig = ToyConfig(), threads: int = 1):
    """Scene, truth field and captures for the reference reconstruction task.

    Returns ``(captures, truth_field, scene, basis)``; ``basis`` is the NMF
    SSF basis fitted on the surrogate database without the truth SSF.
    """
    from .spectral import database_basis

    scene = default_scene(cfg.grid, cfg.seed)
    truth = generate_scene(scene, cfg.truth_resolution)
    # raw values that survive a float32 round trip keep the saved truth exact
    truth.density_raw = truth.density_raw.astype(np.float32).astype(float)
    truth.color_raw = truth.color_raw.astype(np.float32).astype(float)
    bank = generate_filter_bank(cfg.grid, cfg.n_filters, cfg.filter_family, cfg.seed)
    basis, held_out = database_basis(cfg.grid, cfg.ssf_basis)
    ssf = normalize_ssf(held_out[cfg.ssf_truth_index])
    cams = hemisphere_cameras(cfg.n_views + cfg.n_test, cfg.radius, cfg.image_size,
                              cfg.image_size, cfg.fov_deg, seed=cfg.seed)
    assign = view_assignment(cfg.n_views, cfg.n_test, bank.ids, cfg.seed)
    caps = synthesize_captures(truth, cams, bank, ssf, assign, cfg.seed, cfg.render_samples,
                               threads=threads)
    if cfg.exposure:
        # scale the sensor so the brightest observed value sits at ``exposure``
        peak = max(float(v.image.max()) for v in caps.views)
        if peak > 0:
            caps = regrade_captures(caps, SSF(cfg.grid, ssf.response * (cfg.exposure / peak)))
    return caps, truth, scene, basis


def regrade_captures(captures: CaptureSet, ssf: SSF) -> CaptureSet:
    """Recompute every view from the stored spectra with a different SSF."""
    views = []
    for v in captures.views:
        y = degrade_image(captures.spectral_truth[v.camera].pixels(),
                          captures.filter_bank[v.filter_id].transmittance.values, ssf.response)
        views.append(View(v.camera, v.filter_id, y, v.split))
    return replace(captures, views=views, ssf_truth=ssf)
