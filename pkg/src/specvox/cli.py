"""Command-line entry point: ``specvox {generate,train,render,eval,export-ssf}``.

Every command takes ``--config <json>``; keys are the long option names with
dashes replaced by underscores. Explicit flags override the file, and each
run writes its fully resolved configuration next to its outputs so it can be
replayed with ``--config``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from ._io import atomic_write_text
from .errors import ArgumentError, ConfigurationError, DataError, SpecvoxError

log = logging.getLogger("specvox")

# per-command defaults; anything not listed here is rejected in a config file
DEFAULTS = {
    "generate": {
        "out": None, "seed": 0, "views": 40, "test_views": 4, "filters": 8,
        "family": "gaussian", "truth_resolution": 48, "image_size": 64, "samples": 256,
        "ssf_basis": 6, "ssf_truth_index": 0, "exposure": 0.95, "png": False,
        "threads": 1, "force": False, "deterministic": False,
    },
    "train": {
        "data": None, "out": None, "seed": 0, "resolution": 32, "epochs": 3000,
        "batch_rays": 8192, "batches_per_epoch": 1, "lr_field": 0.05, "lr_ssf": 0.02,
        "warmup_epochs": 240, "lr_bump": 1.2, "warmup_filter": None,
        "freeze_ssf_in_warmup": True, "epsilon": 0.01, "beta": 0.1, "distortion": True,
        "samples": 96, "stop_t": 1e-4, "occ_every": 16, "occ_alpha": 1e-3,
        "smooth_weight": 3e-3, "density_bias": -3.0, "color_noise": 0.0, "proportion": 1.0, "eval_every": 500,
        "checkpoint_every": 500, "stop_after": None, "resume": False, "threads": 1,
        "force": False, "deterministic": False,
    },
    "render": {
        "checkpoint": None, "out": None, "data": None, "view": None, "pose": None,
        "width": 64, "height": 64, "fov": 40.0, "near": 1.7, "far": 5.3, "samples": 256,
        "mode": "deterministic", "band": None, "ssf": False, "filter": None, "seed": 0,
        "threads": 1, "force": False, "deterministic": False,
    },
    "eval": {
        "checkpoint": None, "data": None, "out": None, "samples": None, "ssf_csv": None,
        "threads": 1, "seed": 0, "force": False, "deterministic": False,
    },
    "export-ssf": {
        "checkpoint": None, "out": None, "seed": 0, "threads": 1, "force": False,
        "deterministic": False,
    },
}


# --------------------------------------------------------------------------
# configuration plumbing

def _load_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if not isinstance(cfg, dict):
        raise ConfigurationError(f"{path}: top level must be an object")
    return cfg


def resolve_config(command: str, args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then explicit flags."""
    cfg = dict(DEFAULTS[command])
    if args.config:
        file_cfg = _load_config(args.config)
        file_cfg.pop("command", None)
        unknown = sorted(set(file_cfg) - set(cfg))
        if unknown:
            raise ConfigurationError(f"{args.config}: unknown keys {unknown}")
        cfg.update(file_cfg)
    for key in cfg:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if cfg["deterministic"]:
        cfg["threads"] = 1
    if int(cfg["threads"]) < 1:
        raise ConfigurationError("--threads must be >= 1")
    return cfg


def _write_resolved(directory: Path, command: str, cfg: dict) -> None:
    out = {"command": command, **cfg}
    atomic_write_text(directory / "config.json", json.dumps(out, indent=2, sort_keys=True) + "\n")


def _prepare_out(path, force: bool, allow_existing: bool = False) -> Path:
    if path is None:
        raise ConfigurationError("--out is required")
    d = Path(path)
    if d.exists() and not d.is_dir():
        raise ConfigurationError(f"{d} exists and is not a directory")
    if d.exists() and any(d.iterdir()) and not (force or allow_existing):
        raise ConfigurationError(f"{d} is not empty; pass --force to overwrite")
    d.mkdir(parents=True, exist_ok=True)
    return d


def _need(cfg, key):
    if cfg.get(key) is None:
        raise ConfigurationError(f"--{key.replace('_', '-')} is required")
    return cfg[key]


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# --------------------------------------------------------------------------
# generate

def cmd_generate(cfg: dict) -> int:
    from .dataio import ToyConfig, build_toy_dataset, save_dataset
    from .spectral import write_spectra_csv

    out = _prepare_out(cfg["out"], cfg["force"])
    from .spectral import SYNTHETIC_GRID

    toy = ToyConfig(grid=SYNTHETIC_GRID, n_views=int(cfg["views"]), n_test=int(cfg["test_views"]),
                    n_filters=int(cfg["filters"]), filter_family=cfg["family"],
                    truth_resolution=int(cfg["truth_resolution"]),
                    image_size=int(cfg["image_size"]), render_samples=int(cfg["samples"]),
                    ssf_basis=int(cfg["ssf_basis"]), ssf_truth_index=int(cfg["ssf_truth_index"]),
                    exposure=float(cfg["exposure"]), seed=int(cfg["seed"]))
    caps, truth, scene, basis = build_toy_dataset(toy, threads=int(cfg["threads"]))
    rep = caps.filter_bank.rank_report()
    print(f"filter matrix: {rep['filters']} filters, rank {rep['rank']}, "
          f"condition number {rep['condition_number']:.4g}")
    if rep["rank"] < min(caps.channels, caps.grid.count):
        msg = (f"filter matrix has rank {rep['rank']} (< {caps.channels} SSF channels); "
               "spectra will be poorly constrained")
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        print(f"warning: {msg}", file=sys.stderr)
    write_spectra_csv(out / "ssf_basis.csv", basis.grid, basis.basis)
    checker = scene.color_checker
    write_spectra_csv(out / "checker_truth.csv", caps.grid,
                      np.stack([scene.albedo(s) for s in checker.spectra], axis=1))
    extra = {
        "render_samples": int(cfg["samples"]),
        "ssf_basis": "ssf_basis.csv",
        "ssf_basis_n_fit": basis.n_fit,
        "checker": {"truth": "checker_truth.csv",
                    "centers": checker.patch_centers().tolist()},
        "rank_report": {k: rep[k] for k in ("filters", "rank", "condition_number")},
    }
    save_dataset(caps, out, truth_field=truth, export_png=bool(cfg["png"]), extra=extra)
    _write_resolved(out, "generate", cfg)
    print(f"wrote {len(caps.views)} views ({len(caps.test_indices)} test) to {out}")
    return 0


# --------------------------------------------------------------------------
# train

def _dataset_basis(data_dir: Path, manifest: dict):
    from .spectral import SSFBasis, read_spectra_csv

    extra = manifest.get("extra", {})
    rel = extra.get("ssf_basis")
    if not rel:
        raise DataError(f"{data_dir / 'manifest.json'}: dataset has no SSF basis")
    grid, vals = read_spectra_csv(data_dir / rel)
    return SSFBasis(grid, vals, n_fit=int(extra.get("ssf_basis_n_fit", 0)))


def _train_config(cfg: dict):
    from .model import LossConfig
    from .optim import TrainConfig

    return TrainConfig(
        batch_rays=int(cfg["batch_rays"]), epochs=int(cfg["epochs"]),
        batches_per_epoch=int(cfg["batches_per_epoch"]), lr_field=float(cfg["lr_field"]),
        lr_ssf=float(cfg["lr_ssf"]), warmup_epochs=int(cfg["warmup_epochs"]),
        lr_bump=float(cfg["lr_bump"]), seed=int(cfg["seed"]),
        loss=LossConfig(float(cfg["epsilon"]), float(cfg["beta"]), bool(cfg["distortion"])),
        n_samples=int(cfg["samples"]), stop_T=float(cfg["stop_t"]),
        warmup_filter=cfg["warmup_filter"], freeze_ssf_in_warmup=bool(cfg["freeze_ssf_in_warmup"]),
        eval_every=int(cfg["eval_every"]), threads=int(cfg["threads"]),
        occ_every=int(cfg["occ_every"]), occ_alpha=float(cfg["occ_alpha"]),
        smooth_weight=float(cfg["smooth_weight"]))


def _save_state(path: Path, field, head, state, epoch: int, rng_state) -> None:
    arrays = {"density_raw": field.density_raw, "color_raw": field.color_raw,
              "coeffs_raw": head.coeffs_raw, "epoch": np.array(epoch),
              "rng_state": np.array(json.dumps(rng_state))}
    for name in state.m:
        arrays[f"m_{name}"] = state.m[name]
        arrays[f"v_{name}"] = state.v[name]
        arrays[f"steps_{name}"] = np.array(state.steps[name])
    tmp = path.with_name(path.name + ".tmp.npz")
    np.savez(tmp, **arrays)
    tmp.replace(path)


def _load_state(path: Path, field, head):
    from .optim import AdamState

    try:
        z = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise DataError(f"{path}: {exc}") from exc
    field.density_raw[...] = z["density_raw"]
    field.color_raw[...] = z["color_raw"]
    head.coeffs_raw[...] = z["coeffs_raw"]
    state = AdamState()
    for key in z.files:
        if key.startswith("m_"):
            name = key[2:]
            state.m[name] = z[key].copy()
            state.v[name] = z[f"v_{name}"].copy()
            state.steps[name] = int(z[f"steps_{name}"])
    return state, int(z["epoch"]), json.loads(str(z["rng_state"]))


def cmd_train(cfg: dict) -> int:
    from .dataio import load_dataset, load_manifest, select_training_subset
    from .field import init_field, save_checkpoint
    from .model import initial_head
    from .optim import train, write_history_csv

    data = Path(_need(cfg, "data"))
    manifest = load_manifest(data)
    caps = load_dataset(data)
    if float(cfg["proportion"]) < 1.0:
        caps = select_training_subset(caps, float(cfg["proportion"]), int(cfg["seed"]))
    out = _prepare_out(cfg["out"], cfg["force"], allow_existing=bool(cfg["resume"]))
    tcfg = _train_config(cfg)
    basis = _dataset_basis(data, manifest)
    aabb = np.array([[-1.0, -1.0, -1.0], [1.0, 1.0, 1.0]])
    if manifest.get("truth_field"):
        from .field import load_checkpoint

        aabb = load_checkpoint(data / manifest["truth_field"])[0].aabb
    res = int(cfg["resolution"])
    field = init_field((res, res, res), aabb, caps.grid, int(cfg["seed"]),
                       float(cfg["density_bias"]), float(cfg["color_noise"]))
    head = initial_head(basis, channels=caps.channels)
    state, start, rng_state = None, 0, None
    state_path = out / "trainer_state.npz"
    history_path = out / "history.csv"
    if cfg["resume"]:
        if not state_path.exists():
            raise DataError(f"{state_path}: nothing to resume from")
        state, start, rng_state = _load_state(state_path, field, head)
        print(f"resuming at epoch {start}")
    elif history_path.exists():
        history_path.unlink()
    _write_resolved(out, "train", cfg)

    stop = tcfg.epochs if cfg["stop_after"] is None else min(int(cfg["stop_after"]), tcfg.epochs)
    every = int(cfg["checkpoint_every"]) or stop
    epoch = start
    last = None
    while epoch < stop:
        seg_end = min(stop, (epoch // every + 1) * every)
        res_ = train(caps, field, head, tcfg, state=state, start_epoch=epoch,
                     rng_state=rng_state, stop_epoch=seg_end)
        state, rng_state, epoch = res_.state, res_.rng_state, res_.epoch
        write_history_csv(history_path, res_.history, append=True)
        save_checkpoint(out / "field.specfld", field,
                        (basis.basis, head.coeffs_raw, head.frozen))
        _save_state(state_path, field, head, state, epoch, rng_state)
        if res_.history:
            last = res_.history[-1]
            print(f"epoch {last['epoch'] + 1}/{tcfg.epochs} loss {last['loss_recon']:.6g} "
                  f"dist {last['loss_dist']:.6g} psnr_val {last['psnr_val']:.4g}")
    if last is None:
        save_checkpoint(out / "field.specfld", field, (basis.basis, head.coeffs_raw, head.frozen))
    return 0


# --------------------------------------------------------------------------
# render

def parse_pose(text: str) -> np.ndarray:
    """``eye=x,y,z[;target=x,y,z][;up=x,y,z]`` or 12 comma-separated floats.

    Returns a 3x4 camera-to-world matrix.
    """
    from .render import look_at

    text = text.strip()
    try:
        if "=" in text:
            parts = {}
            for item in text.split(";"):
                if not item.strip():
                    continue
                key, _, val = item.partition("=")
                vec = [float(v) for v in val.split(",")]
                if key.strip() not in ("eye", "target", "up") or len(vec) != 3:
                    raise ValueError(item)
                parts[key.strip()] = np.array(vec)
            if "eye" not in parts:
                raise ValueError("eye missing")
            target = parts.get("target", np.zeros(3))
            rot = look_at(parts["eye"], target, parts.get("up", (0.0, 0.0, 1.0)))
            return np.hstack([rot, parts["eye"][:, None]])
        vals = [float(v) for v in text.replace(";", ",").split(",")]
        if len(vals) != 12:
            raise ValueError("need 12 values")
        return np.asarray(vals).reshape(3, 4)
    except ValueError as exc:
        raise ArgumentError(f"cannot parse pose {text!r}: {exc}") from None


def _load_model(path):
    from .field import load_checkpoint
    from .model import SSFHead
    from .spectral import SSFBasis

    field, ssf = load_checkpoint(path)
    head = None
    if ssf is not None:
        basis, coeffs_raw, frozen = ssf
        head = SSFHead(SSFBasis(field.grid, basis), coeffs_raw, frozen)
    return field, head


def cmd_render(cfg: dict) -> int:
    from .dataio import degrade_image, load_dataset, write_msif, export_band_pngs
    from .render import Camera, render_image, write_map_png
    from .spectral import SpectralImage

    field, head = _load_model(_need(cfg, "checkpoint"))
    caps = None
    if cfg["data"] is not None:
        caps = load_dataset(cfg["data"])
    if cfg["view"] is not None:
        if caps is None:
            raise ConfigurationError("--view needs --data")
        vi = int(cfg["view"])
        if not 0 <= vi < len(caps.views):
            raise ArgumentError(f"view {vi} out of range")
        cam = caps.cameras[caps.views[vi].camera]
        filter_id = cfg["filter"] or caps.views[vi].filter_id
    elif cfg["pose"] is not None:
        pose = parse_pose(cfg["pose"])
        w, h = int(cfg["width"]), int(cfg["height"])
        f = 0.5 * w / math.tan(math.radians(float(cfg["fov"])) / 2)
        cam = Camera(w, h, f, f, w / 2, h / 2, pose[:, :3], pose[:, 3],
                     float(cfg["near"]), float(cfg["far"]))
        filter_id = cfg["filter"]
    else:
        raise ConfigurationError("give --view (with --data) or --pose")
    if cfg["ssf"] and cfg["band"] is not None:
        raise ConfigurationError("--ssf needs all bands; drop --band")
    out = _prepare_out(cfg["out"], cfg["force"])
    img, depth, opacity = render_image(field, cam, int(cfg["samples"]), cfg["mode"],
                                       int(cfg["seed"]), threads=int(cfg["threads"]))
    img = SpectralImage(img.grid, img.planes.astype(np.float32).astype(float))
    if cfg["band"] is not None:
        # one band is not a spectral image; store the plane alone
        b = img.grid.nearest_index(float(cfg["band"]))
        wl = img.grid.wavelengths[b]
        np.save(out / f"render_{wl:g}nm.npy", img.planes[b], allow_pickle=False)
        write_map_png(out / f"render_{wl:g}nm.png", img.planes[b], 1.0)
        print(f"band {cfg['band']} nm -> grid node {wl:g} nm")
    else:
        write_msif(out / "render.msif", img)
        export_band_pngs(out / "png", "render", img)
    write_map_png(out / "depth.png", depth)
    write_map_png(out / "opacity.png", opacity, 1.0)
    if cfg["ssf"]:
        if head is None:
            raise DataError(f"{cfg['checkpoint']}: checkpoint has no SSF section")
        trans = np.ones(field.k)
        if filter_id is not None:
            if caps is None:
                raise ConfigurationError("--filter needs --data")
            trans = caps.filter_bank[filter_id].transmittance.values
        y = degrade_image(img.pixels(), trans, head.response())
        np.save(out / "degraded.npy", y, allow_pickle=False)
        for c in range(y.shape[-1]):
            write_map_png(out / f"degraded_c{c}.png", y[..., c], 1.0)
    _write_resolved(out, "render", cfg)
    print(f"wrote rendering to {out}")
    return 0


# --------------------------------------------------------------------------
# eval

def evaluate(field, ssf, caps, manifest: dict, data_dir: Path, n_samples: int, out: Path):
    """Metric report over the test views plus spectral curve exports."""
    from .eval import (MetricReport, checker_scores, probe_spectra, psnr, spectral_metrics,
                       ssf_error, ssim, write_report, write_spectra_curves)
    from .optim import predict_view
    from .render import render_image
    from .spectral import read_spectra_csv

    test = caps.test_indices
    if not test:
        raise ConfigurationError("dataset has no test views")
    rows = []
    for vi in test:
        v = caps.views[vi]
        y_hat = predict_view(field, ssf, caps, vi, n_samples)
        row = {"view": vi, "psnr_db": psnr(y_hat, v.image), "ssim": ssim(y_hat, v.image)}
        x_true = caps.spectral_truth.get(v.camera)
        if x_true is not None:
            img, _, _ = render_image(field, caps.cameras[v.camera], n_samples)
            x_hat = img.planes.astype(np.float32).astype(float)
            from .spectral import SpectralImage

            row["spectral_rmse"], row["sam_radians"] = spectral_metrics(
                SpectralImage(img.grid, x_hat), x_true)
        rows.append(row)
    finite = [r["psnr_db"] for r in rows]
    psnr_mean = math.inf if all(math.isinf(p) for p in finite) else float(
        np.mean([p for p in finite if not math.isinf(p)]))
    spec = [r for r in rows if "spectral_rmse" in r]
    report = MetricReport(
        psnr_db=psnr_mean, ssim=float(np.mean([r["ssim"] for r in rows])),
        spectral_rmse=float(np.mean([r["spectral_rmse"] for r in spec])) if spec else math.nan,
        sam_radians=float(np.mean([r["sam_radians"] for r in spec])) if spec else math.nan,
        ssf_rel_l2=ssf_error(ssf.ssf() if hasattr(ssf, "ssf") else ssf, caps.ssf_truth)
        if caps.ssf_truth is not None else None,
        per_view=rows)
    write_report(out, report)
    extra = manifest.get("extra", {})
    checker = None
    if extra.get("checker"):
        _, truth = read_spectra_csv(data_dir / extra["checker"]["truth"])
        centers = np.asarray(extra["checker"]["centers"])
        est = probe_spectra(field, centers, n_samples=n_samples)
        checker = checker_scores(est, truth.T)
        write_spectra_curves(out / "checker_curves.csv", caps.grid.wavelengths, truth.T, est,
                             [f"patch{i + 1:02d}" for i in range(len(centers))])
        atomic_write_text(out / "checker.json", json.dumps(
            {k: float(v) for k, v in checker.items()}, indent=2, sort_keys=True) + "\n")
    if caps.ssf_truth is not None:
        est_r = ssf.response() if hasattr(ssf, "response") and callable(ssf.response) \
            else ssf.response
        labels = [f"channel{c}" for c in range(est_r.shape[1])]
        write_spectra_curves(out / "ssf_curves.csv", caps.grid.wavelengths,
                             caps.ssf_truth.response.T, est_r.T, labels)
    return report, checker


def cmd_eval(cfg: dict) -> int:
    from .dataio import load_dataset, load_manifest
    from .spectral import SSF, read_spectra_csv

    data = Path(_need(cfg, "data"))
    manifest = load_manifest(data)
    caps = load_dataset(data)
    if not caps.test_indices:
        raise ConfigurationError(f"{data}: dataset has no test split")
    field, head = _load_model(_need(cfg, "checkpoint"))
    ssf = head
    if cfg["ssf_csv"] is not None:
        g, vals = read_spectra_csv(cfg["ssf_csv"])
        ssf = SSF(g, vals)
    if ssf is None:
        raise DataError(f"{cfg['checkpoint']}: no SSF in checkpoint; pass --ssf-csv")
    n = cfg["samples"] or manifest.get("extra", {}).get("render_samples", 256)
    out = _prepare_out(cfg["out"], cfg["force"])
    report, checker = evaluate(field, ssf, caps, manifest, data, int(n), out)
    _write_resolved(out, "eval", cfg)
    print(report.summary(), end="")
    if checker is not None:
        print(f"checker SAM (rad) {checker['sam']:.6g}  aligned RMSE {checker['rmse_aligned']:.6g}")
    return 0


def cmd_export_ssf(cfg: dict) -> int:
    from .spectral import write_spectra_csv

    field, head = _load_model(_need(cfg, "checkpoint"))
    if head is None:
        raise DataError(f"{cfg['checkpoint']}: checkpoint has no SSF section")
    out = Path(_need(cfg, "out"))
    if out.exists() and not cfg["force"]:
        raise ConfigurationError(f"{out} exists; pass --force to overwrite")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_spectra_csv(out, field.grid, head.response())
    print(f"wrote SSF ({head.channels} channels) to {out}")
    return 0


# --------------------------------------------------------------------------

def _bool_flag(p, name, help_):
    p.add_argument(f"--{name}", dest=name.replace("-", "_"), action="store_const", const=True,
                   default=None, help=help_)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="specvox", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON file with option values")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int)
        _bool_flag(p, "force", "overwrite a non-empty output")
        _bool_flag(p, "deterministic", "single-threaded, bit-reproducible")

    g = sub.add_parser("generate", help="build a synthetic dataset")
    common(g)
    g.add_argument("--out")
    g.add_argument("--views", type=int, help="training views")
    g.add_argument("--test-views", type=int)
    g.add_argument("--filters", type=int)
    g.add_argument("--family", choices=["gaussian", "longpass"])
    g.add_argument("--truth-resolution", type=int)
    g.add_argument("--image-size", type=int)
    g.add_argument("--samples", type=int)
    g.add_argument("--ssf-basis", type=int)
    g.add_argument("--ssf-truth-index", type=int)
    g.add_argument("--exposure", type=float)
    _bool_flag(g, "png", "also export per-band PNGs")

    t = sub.add_parser("train", help="fit field and SSF to a dataset")
    common(t)
    t.add_argument("--data")
    t.add_argument("--out")
    for name, typ in (("resolution", int), ("epochs", int), ("batch-rays", int),
                      ("batches-per-epoch", int), ("lr-field", float), ("lr-ssf", float),
                      ("warmup-epochs", int), ("lr-bump", float), ("warmup-filter", str),
                      ("epsilon", float), ("beta", float), ("samples", int),
                      ("stop-t", float), ("occ-every", int), ("occ-alpha", float),
                      ("smooth-weight", float),
                      ("density-bias", float), ("color-noise", float), ("proportion", float),
                      ("eval-every", int), ("checkpoint-every", int), ("stop-after", int)):
        t.add_argument(f"--{name}", type=typ)
    t.add_argument("--no-distortion", dest="distortion", action="store_const", const=False,
                   default=None)
    t.add_argument("--train-ssf-in-warmup", dest="freeze_ssf_in_warmup", action="store_const",
                   const=False, default=None)
    _bool_flag(t, "resume", "continue from trainer_state.npz in --out")

    r = sub.add_parser("render", help="render a checkpoint")
    common(r)
    r.add_argument("--checkpoint")
    r.add_argument("--out")
    r.add_argument("--data")
    r.add_argument("--view", type=int, help="use this dataset view's camera")
    r.add_argument("--pose", help="'eye=x,y,z;target=x,y,z' or 12 floats (row-major [R|t])")
    for name, typ in (("width", int), ("height", int), ("fov", float), ("near", float),
                      ("far", float), ("samples", int), ("band", float), ("filter", str)):
        r.add_argument(f"--{name}", type=typ)
    r.add_argument("--mode", choices=["deterministic", "stratified"])
    _bool_flag(r, "ssf", "also write the degraded rendering")

    e = sub.add_parser("eval", help="metrics on the test views")
    common(e)
    e.add_argument("--checkpoint")
    e.add_argument("--data")
    e.add_argument("--out")
    e.add_argument("--samples", type=int)
    e.add_argument("--ssf-csv", help="use this SSF instead of the checkpoint's")

    x = sub.add_parser("export-ssf", help="write the checkpoint SSF as CSV")
    common(x)
    x.add_argument("--checkpoint")
    x.add_argument("--out")
    return parser


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "render": cmd_render,
            "eval": cmd_eval, "export-ssf": cmd_export_ssf}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args.command, args)
        return COMMANDS[args.command](cfg)
    except SpecvoxError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
