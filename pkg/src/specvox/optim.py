"""Adam, the two-phase training loop and SSF-only fitting."""

from __future__ import annotations

import csv
import io
import logging
import math
import warnings
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from . import _kernels
from ._io import atomic_write_text
from .dataio import CaptureSet, degrade_image
from .errors import ArgumentError, ConfigurationError, TrainingError
from .field import VoxelField, occupancy_grid, softplus_inv
from .model import LossConfig, SSFHead, spectral_curvature
from .render import camera_rays, ray_box_interval, render_rays, sample_t
from .spectral import SSF, SSFBasis

log = logging.getLogger(__name__)

__all__ = [
    "TrainConfig",
    "AdamState",
    "adam_step",
    "RayTable",
    "train",
    "TrainResult",
    "predict_view",
    "fit_ssf_only",
    "write_history_csv",
]


@dataclass
class TrainConfig:
    batch_rays: int = 8192
    epochs: int = 3000
    batches_per_epoch: int = 1
    lr_field: float = 0.05
    lr_ssf: float = 0.02
    warmup_epochs: int = 240  # 2000 of 25000 scaled to 3000
    lr_bump: float = 1.2
    seed: int = 0
    loss: LossConfig = dc_field(default_factory=LossConfig)
    n_samples: int = 96
    stop_T: float = 1e-4
    warmup_filter: str | None = None
    freeze_ssf_in_warmup: bool = True
    eval_every: int = 100
    threads: int = 1
    occ_every: int = 16
    occ_alpha: float = 1e-3
    smooth_weight: float = 3e-3

    def __post_init__(self):
        if isinstance(self.loss, dict):
            self.loss = LossConfig(**self.loss)
        if self.batch_rays < 1:
            raise ConfigurationError("batch_rays must be >= 1")
        if not self.lr_bump > 0:
            raise ConfigurationError("lr_bump must be > 0")
        if self.epochs < 0 or self.warmup_epochs < 0 or self.batches_per_epoch < 1:
            raise ConfigurationError("epochs, warmup_epochs must be >= 0, batches_per_epoch >= 1")
        if self.n_samples < 1:
            raise ConfigurationError("n_samples must be >= 1")

    def lr_multiplier(self, epoch: int) -> float:
        return 1.0 if epoch < self.warmup_epochs else self.lr_bump


@dataclass
class AdamState:
    m: dict = dc_field(default_factory=dict)
    v: dict = dc_field(default_factory=dict)
    steps: dict = dc_field(default_factory=dict)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @property
    def step(self) -> int:
        return max(self.steps.values(), default=0)


def adam_step(params: dict, grads: dict, state: AdamState, lr) -> tuple:
    """Bias-corrected Adam, in place, one independent moment pair per block.

    ``lr`` is a float or a per-block dict. Blocks missing from ``grads`` are
    left untouched.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            bad = np.flatnonzero(~np.isfinite(np.asarray(g).reshape(-1)))[:5].tolist()
            raise TrainingError(f"non-finite gradient in parameter block {name!r} at {bad}")
    for name, g in grads.items():
        p = params[name]
        if p.shape != np.shape(g):
            raise ArgumentError(f"gradient shape mismatch for {name!r}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
            state.steps[name] = 0
        t = state.steps[name] = state.steps[name] + 1
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        rate = lr[name] if isinstance(lr, dict) else lr
        step = rate / (1.0 - state.beta1 ** t)
        p -= step * m / (np.sqrt(v / (1.0 - state.beta2 ** t)) + state.eps)
    return params, state


# --------------------------------------------------------------------------

@dataclass
class RayTable:
    """Every pixel of a set of views as a flat ray list."""

    origins: np.ndarray
    dirs: np.ndarray
    near: np.ndarray
    far: np.ndarray
    hit: np.ndarray
    target: np.ndarray
    filt: np.ndarray  # (n_filters, k) stacked transmittances
    filt_index: np.ndarray
    view_index: np.ndarray

    @classmethod
    def build(cls, captures: CaptureSet, view_ids, aabb) -> "RayTable":
        bank = captures.filter_bank.matrix()
        parts = []
        for vi in view_ids:
            v = captures.views[vi]
            cam = captures.cameras[v.camera]
            rows, cols = np.mgrid[0:cam.height, 0:cam.width]
            o, d = camera_rays(cam, rows.reshape(-1), cols.reshape(-1))
            t0, t1 = ray_box_interval(o, d, aabb)
            near = np.maximum(cam.near, t0)
            far = np.minimum(cam.far, t1)
            n = len(o)
            parts.append((o, d, near, far, v.image.reshape(n, -1),
                          np.full(n, captures.filter_bank.index(v.filter_id)), np.full(n, vi)))
        o, d, near, far, y, fi, vi = (np.concatenate(x) for x in zip(*parts))
        return cls(o, d, near, far, far > near, y, bank, fi, vi)

    def __len__(self):
        return len(self.origins)


@dataclass
class TrainResult:
    field: VoxelField
    head: SSFHead
    history: list
    state: AdamState
    epoch: int = 0
    rng_state: dict | None = None


def _batch_grad(field, head, table: RayTable, sel, cfg: TrainConfig, rng, kern, occ=None):
    """Mean loss and gradients over the rays ``sel``."""
    loss_cfg = cfg.loss
    n = len(sel)
    k = field.k
    resp = head.response()
    gd = np.zeros_like(field.density_raw)
    gc = np.zeros_like(field.color_raw)
    g_resp = np.zeros_like(resp)
    recon = dist = 0.0
    hit = sel[table.hit[sel]]
    miss = sel[~table.hit[sel]]
    if len(miss):
        # rays that never enter the box predict exactly zero
        r = table.target[miss] / loss_cfg.epsilon
        recon += 0.5 * float(np.sum(r * r))
    if len(hit):
        t = sample_t(table.near[hit], table.far[hit], cfg.n_samples, rng)
        inv_cell = (np.array(field.resolution) - 1) / (field.aabb[1] - field.aabb[0])
        y_hat = np.zeros((len(hit), resp.shape[1]))
        chunks = np.array_split(np.arange(len(hit)), max(cfg.threads, 1))

        def run(ix, gd_, gc_, gr_):
            h = hit[ix]
            return kern.train_rays(field.density_raw, field.color_raw, field.aabb[0], inv_cell,
                                   table.origins[h], table.dirs[h], t[ix], table.near[h],
                                   table.far[h], table.filt[table.filt_index[h]], resp,
                                   table.target[h], loss_cfg.epsilon, loss_cfg.effective_beta,
                                   gd_, gc_, gr_, y_hat_view(ix), cfg.stop_T, occ)

        def y_hat_view(ix):
            return y_hat[ix[0]:ix[-1] + 1] if len(ix) else y_hat[:0]

        if cfg.threads > 1:
            from concurrent.futures import ThreadPoolExecutor

            bufs = [(np.zeros_like(gd), np.zeros_like(gc), np.zeros_like(g_resp)) for _ in chunks]
            with ThreadPoolExecutor(cfg.threads) as pool:
                outs = list(pool.map(lambda a: run(a[0], *a[1]), zip(chunks, bufs)))
            # fixed-order reduction keeps results deterministic for a given thread count
            for (b_d, b_c, b_r), (lr_, ld_) in zip(bufs, outs):
                gd += b_d
                gc += b_c
                g_resp += b_r
                recon += lr_
                dist += ld_
        else:
            lr_, ld_ = run(np.arange(len(hit)), gd, gc, g_resp)
            recon += lr_
            dist += ld_
        if not np.all(np.isfinite(y_hat)):
            bad = int(hit[np.flatnonzero(~np.all(np.isfinite(y_hat), axis=1))[0]])
            raise TrainingError(f"non-finite prediction for ray {bad}")
    scale = 1.0 / n
    grads = {"density_raw": gd * scale, "color_raw": gc * scale}
    if not head.frozen:
        grads["coeffs_raw"] = head.raw_grad(g_resp * scale)
    return recon * scale, dist * scale, grads


def predict_view(field: VoxelField, head_or_ssf, captures: CaptureSet, view_id: int,
                 n_samples: int, stop_T: float = 0.0) -> np.ndarray:
    """Deterministic degraded rendering of one view, ``(H, W, channels)``."""
    v = captures.views[view_id]
    cam = captures.cameras[v.camera]
    rows, cols = np.mgrid[0:cam.height, 0:cam.width]
    o, d = camera_rays(cam, rows.reshape(-1), cols.reshape(-1))
    rad, _, _ = render_rays(field, o, d, cam.near, cam.far, n_samples, stop_T=stop_T)
    # stored spectra are float32, so round the same way before degrading
    rad = rad.astype(np.float32).astype(float).reshape(cam.height, cam.width, -1)
    resp = head_or_ssf.response() if isinstance(head_or_ssf, SSFHead) else head_or_ssf.response
    return degrade_image(rad, captures.filter_bank[v.filter_id].transmittance.values, resp)


def _val_psnr(field, head, captures, cfg):
    from .eval import psnr

    ids = captures.test_indices
    if not ids:
        return float("nan")
    vals = [psnr(predict_view(field, head, captures, i, cfg.n_samples), captures.views[i].image)
            for i in ids]
    return float(np.mean(vals))


def _pick_warmup_filter(captures, train_ids, requested):
    ids = [captures.views[i].filter_id for i in train_ids]
    if requested is not None:
        if requested not in ids:
            raise ConfigurationError(f"no training view uses warm-up filter {requested!r}")
        return requested
    counts = {fid: ids.count(fid) for fid in captures.filter_bank.ids if fid in ids}
    return max(counts, key=lambda f: (counts[f], -captures.filter_bank.index(f)))


def train(dataset: CaptureSet, field: VoxelField, head: SSFHead, cfg: TrainConfig, *,
          state: AdamState | None = None, start_epoch: int = 0, rng_state=None,
          stop_epoch: int | None = None, on_batch=None, on_epoch=None,
          backend=None) -> TrainResult:
    """Jointly fit the field and SSF head to the training views.

    Epochs below ``cfg.warmup_epochs`` draw rays only from views taken with
    the warm-up filter (optionally with the SSF head frozen); from the phase
    boundary on every training view is used and both learning rates are
    multiplied by ``cfg.lr_bump``. Parameters are updated in place.
    """
    train_ids = dataset.train_indices
    if not train_ids:
        raise ConfigurationError("dataset has no training views")
    if field.grid != dataset.grid or head.basis.grid != dataset.grid:
        raise ConfigurationError("field, SSF basis and dataset grids differ")
    if head.channels != dataset.channels:
        raise ConfigurationError(f"SSF head has {head.channels} channels, images {dataset.channels}")
    kern = _kernels.get_backend(backend)
    table = RayTable.build(dataset, train_ids, field.aabb)
    all_rays = np.arange(len(table))
    warm_rays = all_rays
    if cfg.warmup_epochs > 0:
        fid = _pick_warmup_filter(dataset, train_ids, cfg.warmup_filter)
        warm_rays = all_rays[table.filt_index == dataset.filter_bank.index(fid)]
        log.info("warm-up on filter %s (%d rays) for %d epochs", fid, len(warm_rays),
                 cfg.warmup_epochs)
    rng = np.random.default_rng(cfg.seed)
    if rng_state is not None:
        rng.bit_generator.state = rng_state
    state = state or AdamState()
    params = {"density_raw": field.density_raw, "color_raw": field.color_raw,
              "coeffs_raw": head.coeffs_raw}
    base_frozen = head.frozen
    history = []
    end = cfg.epochs if stop_epoch is None else min(stop_epoch, cfg.epochs)
    occ = None
    for epoch in range(start_epoch, end):
        if cfg.occ_every and cfg.occ_alpha > 0 and epoch % cfg.occ_every == 0:
            occ = occupancy_grid(field, cfg.occ_alpha)
        elif occ is None and cfg.occ_every and cfg.occ_alpha > 0:
            occ = occupancy_grid(field, cfg.occ_alpha)
        warm = epoch < cfg.warmup_epochs
        pool = warm_rays if warm else all_rays
        head.frozen = base_frozen or (warm and cfg.freeze_ssf_in_warmup)
        mult = cfg.lr_multiplier(epoch)
        lrs = {"density_raw": cfg.lr_field * mult, "color_raw": cfg.lr_field * mult,
               "coeffs_raw": cfg.lr_ssf * mult}
        recon_sum = dist_sum = 0.0
        for _ in range(cfg.batches_per_epoch):
            sel = np.sort(pool[rng.integers(0, len(pool), cfg.batch_rays)])
            if on_batch is not None:
                on_batch(epoch, table.view_index[sel], table.filt_index[sel])
            recon, dist, grads = _batch_grad(field, head, table, sel, cfg, rng, kern, occ)
            if cfg.smooth_weight:
                _, g_smooth = spectral_curvature(field.color_raw, cfg.smooth_weight)
                grads["color_raw"] += g_smooth
            if not (math.isfinite(recon) and math.isfinite(dist)):
                raise TrainingError(f"non-finite loss at epoch {epoch}")
            adam_step(params, grads, state, lrs)
            recon_sum += recon
            dist_sum += dist
        psnr_val = float("nan")
        if cfg.eval_every and ((epoch + 1) % cfg.eval_every == 0 or epoch + 1 == cfg.epochs):
            psnr_val = _val_psnr(field, head, dataset, cfg)
        row = {"epoch": epoch, "loss_recon": recon_sum / cfg.batches_per_epoch,
               "loss_dist": dist_sum / cfg.batches_per_epoch, "lr": lrs["density_raw"],
               "psnr_val": psnr_val}
        history.append(row)
        if on_epoch is not None:
            on_epoch(row)
    head.frozen = base_frozen
    return TrainResult(field, head, history, state, end, rng.bit_generator.state)


def write_history_csv(path, history, append: bool = False) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    path = Path(path)
    existing = path.read_text() if append and path.exists() else ""
    if not existing:
        w.writerow(["epoch", "loss_recon", "loss_dist", "lr", "psnr_val"])
    for r in history:
        w.writerow([r["epoch"], repr(r["loss_recon"]), repr(r["loss_dist"]), repr(r["lr"]),
                    "" if math.isnan(r["psnr_val"]) else repr(r["psnr_val"])])
    atomic_write_text(path, existing + buf.getvalue())


# --------------------------------------------------------------------------

def _design(dataset: CaptureSet, spectra, basis: SSFBasis, view_ids):
    rows, ys = [], []
    b = basis.basis
    for vi in view_ids:
        v = dataset.views[vi]
        x = spectra[v.camera]
        x = x.pixels() if hasattr(x, "pixels") else np.asarray(x)
        f = dataset.filter_bank[v.filter_id].transmittance.values
        rows.append((x.reshape(-1, x.shape[-1]) * f) @ b)
        ys.append(v.image.reshape(-1, v.image.shape[-1]))
    return np.concatenate(rows), np.concatenate(ys)


def fit_ssf_only(dataset: CaptureSet, spectra=None, basis: SSFBasis | None = None,
                 seed: int = 0, max_iter: int = 200000, tol: float = 1e-13,
                 report: dict | None = None) -> SSF:
    """Fit only the SSF coefficients with the spectra held fixed.

    Minimizes ``sum ||(X o f) b alpha - Y||^2`` over ``alpha >= 0`` per
    channel by accelerated projected gradient from a seeded positive start.
    ``spectra`` maps camera index to the true spectral image (defaults to the
    dataset's stored truth).
    """
    if basis is None:
        raise ArgumentError("an SSF basis is required")
    if len(dataset.filter_bank) == 0:
        raise ConfigurationError("no filters: the system is empty")
    spectra = dataset.spectral_truth if spectra is None else spectra
    view_ids = dataset.train_indices or list(range(len(dataset.views)))
    if not view_ids:
        raise ConfigurationError("no views to fit")
    a, y = _design(dataset, spectra, basis, view_ids)
    gram = a.T @ a
    rhs = a.T @ y
    eig = np.linalg.eigvalsh(gram)
    cond = float(eig[-1] / eig[0]) if eig[0] > 0 else float("inf")
    if not eig[0] > 1e-12 * eig[-1]:
        warnings.warn(f"SSF system is rank deficient (condition number {cond:.3g})",
                      RuntimeWarning, stacklevel=2)
    step = 1.0 / eig[-1]
    rng = np.random.default_rng(seed)
    alpha = rng.uniform(0.5, 1.5, rhs.shape) * (np.abs(rhs).max() / eig[-1])
    z, alpha_prev, theta = alpha.copy(), alpha.copy(), 1.0
    it = 0
    for it in range(1, max_iter + 1):
        alpha = np.maximum(z - step * (gram @ z - rhs), 0.0)
        # restart momentum when the objective direction turns
        if np.sum((z - alpha) * (alpha - alpha_prev)) > 0:
            theta = 1.0
        theta_next = (1 + math.sqrt(1 + 4 * theta * theta)) / 2
        z = alpha + ((theta - 1) / theta_next) * (alpha - alpha_prev)
        delta = np.abs(alpha - alpha_prev).max()
        alpha_prev, theta = alpha, theta_next
        if delta <= tol * max(alpha.max(), 1e-300):
            break
    if report is not None:
        report.update(condition_number=cond, iterations=it, coeffs=alpha,
                      coeffs_raw=softplus_inv(np.maximum(alpha, 1e-300)))
    return SSF(basis.grid, basis.basis @ alpha)
