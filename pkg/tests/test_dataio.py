import json
from collections import Counter

import numpy as np
import pytest

from specvox.dataio import (Box, CaptureSet, SceneSpec, SpectralImage, ToyConfig, View,
                            default_scene, degrade_image, generate_filter_bank, generate_scene,
                            hemisphere_cameras, load_dataset, read_msif, save_dataset,
                            select_training_subset, synthesize_captures, view_assignment,
                            write_msif)
from specvox.errors import ArgumentError, ConfigurationError, DataError
from specvox.model import FilterBank, FilterProfile
from specvox.render import Camera, look_at, render_image, render_rays
from specvox.spectral import SSF, SYNTHETIC_GRID, SpectralVector, WavelengthGrid

G = SYNTHETIC_GRID


# -- scenes


def test_empty_scene_renders_black():
    field = generate_scene(SceneSpec(G), 8)
    cam = hemisphere_cameras(1, width=8, height=8)[0]
    img, _, opac = render_image(field, cam, 64)
    assert img.planes.max() < 1e-6 and opac.max() < 1e-6


def test_single_box_spectrum():
    refl = SpectralVector(G, np.linspace(0.2, 0.8, G.count))
    illum = SpectralVector(G, np.linspace(1.0, 0.5, G.count))
    spec = SceneSpec(G, (Box((-1, -1, -1), (1, 1, 0), refl),), illuminant=illum)
    field = generate_scene(spec, 24)
    cam = Camera(8, 8, 20.0, 20.0, 4.0, 4.0, look_at([0, 0, 3], up=(0, 1, 0)), [0, 0, 3], 0.5, 6.0)
    img, _, _ = render_image(field, cam, 256)
    expected = refl.values * illum.values / illum.values.max()
    np.testing.assert_allclose(img.pixels()[2:6, 2:6], np.broadcast_to(expected, (4, 4, G.count)),
                               atol=1e-3)


def test_checker_patch_one_center():
    spec = default_scene(G, 0)
    field = generate_scene(spec, 48)
    center = spec.color_checker.patch_center(1)
    o = np.array([[center[0], center[1], 2.0]])
    rad, _, _ = render_rays(field, o, np.array([[0.0, 0.0, -1.0]]), 0.1, 4.0, 512)
    np.testing.assert_allclose(rad[0], spec.albedo(spec.color_checker.spectra[0]), atol=1e-3)


def test_scene_validation():
    other = WavelengthGrid(400, 10, 5)
    spec = SceneSpec(G, (Box((0, 0, 0), (1, 1, 1), SpectralVector(other, np.ones(5) * 0.5)),))
    with pytest.raises(ArgumentError):
        generate_scene(spec, 4)
    assert len(default_scene(G).color_checker.boxes()) == 24


# -- filters


def test_filter_bank_rank_and_coverage():
    assert generate_filter_bank(G, 1).rank_report()["rank"] == 1
    bank = generate_filter_bank(G, 8)
    assert bank.rank_report()["rank"] == 8
    assert np.all(bank.matrix().max(axis=0) >= 0.05)
    assert np.all((bank.matrix() >= 0) & (bank.matrix() <= 1))
    with pytest.raises(ArgumentError):
        generate_filter_bank(G, 0)
    with pytest.raises(ArgumentError):
        generate_filter_bank(G, 3, family="notch")


# -- captures


def _bank_and_ssf():
    ones = FilterProfile("all", SpectralVector(G, np.ones(G.count), "transmittance"))
    half = FilterProfile("half", SpectralVector(G, np.linspace(0.1, 0.9, G.count), "transmittance"))
    r = np.zeros((G.count, 3))
    r[4, 0] = r[7, 1] = r[11, 2] = 1.0
    return FilterBank(G, (ones, half)), SSF(G, r)


def test_band_selection_and_shared_truth(tiny):
    _, truth, _ = tiny
    bank, ssf = _bank_and_ssf()
    cams = hemisphere_cameras(2, width=8, height=8)
    caps = synthesize_captures(truth, cams, bank, ssf, [(0, "all"), (0, "half"), (1, "all")],
                               n_samples=32)
    x = caps.spectral_truth[0].pixels()
    np.testing.assert_array_equal(caps.views[0].image, x[..., [4, 7, 11]])
    # same pose, different filter: one spectral image, different observations
    assert caps.views[0].camera == caps.views[1].camera
    assert not np.array_equal(caps.views[0].image, caps.views[1].image)
    with pytest.raises(ArgumentError):
        synthesize_captures(truth, cams, bank, ssf, [(0, "missing")], n_samples=8)
    with pytest.raises(ArgumentError):
        synthesize_captures(truth, cams, bank, ssf, [(5, "all")], n_samples=8)


def test_observations_follow_degradation(tiny):
    caps, _, _ = tiny
    for v in caps.views:
        x = caps.spectral_truth[v.camera].pixels()
        f = caps.filter_bank[v.filter_id].transmittance.values
        explicit = np.einsum("hwk,k,kc->hwc", x, f, caps.ssf_truth.response)
        np.testing.assert_allclose(v.image, explicit, rtol=1e-9, atol=1e-15)
        np.testing.assert_array_equal(v.image, degrade_image(x, f, caps.ssf_truth.response))


def test_dataset_round_trip(tiny, tmp_path):
    caps, truth, _ = tiny
    save_dataset(caps, tmp_path / "ds", truth, export_png=True, extra={"note": 1})
    back, tf = load_dataset(tmp_path / "ds", with_truth_field=True)
    assert len(back.views) == len(caps.views)
    for a, b in zip(caps.views, back.views):
        assert (a.camera, a.filter_id, a.split) == (b.camera, b.filter_id, b.split)
        np.testing.assert_array_equal(a.image, b.image)
    for cam, img in caps.spectral_truth.items():
        np.testing.assert_array_equal(back.spectral_truth[cam].planes, img.planes)
    np.testing.assert_array_equal(back.ssf_truth.response, caps.ssf_truth.response)
    np.testing.assert_array_equal(back.filter_bank.matrix(), caps.filter_bank.matrix())
    for a, b in zip(caps.cameras, back.cameras):
        np.testing.assert_array_equal(a.rotation, b.rotation)
        np.testing.assert_array_equal(a.translation, b.translation)
    np.testing.assert_array_equal(tf.density_raw, truth.density_raw.astype(np.float32))
    m = json.loads((tmp_path / "ds" / "manifest.json").read_text())
    assert m["extra"] == {"note": 1} and m["png"]


def test_load_dataset_errors(tiny, tmp_path):
    with pytest.raises(DataError):
        load_dataset(tmp_path / "nowhere")
    caps, _, _ = tiny
    save_dataset(caps, tmp_path / "ds")
    mpath = tmp_path / "ds" / "manifest.json"
    m = json.loads(mpath.read_text())
    del m["grid"]
    mpath.write_text(json.dumps(m))
    with pytest.raises(DataError, match="grid"):
        load_dataset(tmp_path / "ds")
    mpath.write_text("{ not json")
    with pytest.raises(DataError, match=":1:"):
        load_dataset(tmp_path / "ds")


def test_msif_round_trip(tmp_path):
    img = SpectralImage(G, np.random.default_rng(0).uniform(0, 1, (G.count, 5, 7)).astype(np.float32))
    write_msif(tmp_path / "x.msif", img)
    back = read_msif(tmp_path / "x.msif")
    assert back.grid == G and (back.width, back.height) == (7, 5)
    np.testing.assert_array_equal(back.planes, img.planes)
    (tmp_path / "bad.msif").write_bytes((tmp_path / "x.msif").read_bytes()[:-4])
    with pytest.raises(DataError):
        read_msif(tmp_path / "bad.msif")


# -- subsets and assignment


def _many_views(n=140, n_filters=8, seed=0):
    bank = generate_filter_bank(G, n_filters)
    cam = hemisphere_cameras(1, width=1, height=1)[0]
    rng = np.random.default_rng(seed)
    ids = [bank.ids[i] for i in rng.permutation(np.arange(n) % n_filters)]
    views = [View(0, fid, np.zeros((1, 1, 3))) for fid in ids]
    return CaptureSet(G, [cam], views, bank)


def test_subset_identity_and_determinism():
    caps = _many_views()
    assert len(select_training_subset(caps, 1.0).views) == 140
    a = select_training_subset(caps, 0.5, seed=3)
    b = select_training_subset(caps, 0.5, seed=3)
    assert len(a.views) == 70
    assert [id(v) for v in a.views] == [id(v) for v in b.views]
    with pytest.raises(ConfigurationError):
        select_training_subset(caps, 0.0)
    with pytest.raises(ConfigurationError):
        select_training_subset(caps, 0.001)


def test_subset_filter_histogram_is_proportional():
    caps = _many_views()
    totals = Counter()
    for seed in range(50):
        totals.update(v.filter_id for v in select_training_subset(caps, 0.3, seed).views)
    expected = 50 * 0.3 * 140 / 8
    for fid in caps.filter_bank.ids:
        assert abs(totals[fid] - expected) <= 0.2 * expected


def test_subset_covers_filters_and_keeps_test_views():
    caps = _many_views()
    caps.views[0].split = "test"
    sub = select_training_subset(caps, 0.06, seed=1)
    train = [v for v in sub.views if v.split == "train"]
    assert len(train) == round(0.06 * 139)
    assert {v.filter_id for v in train} == set(caps.filter_bank.ids)
    assert caps.views[0] in sub.views


def test_default_view_assignment():
    cfg = ToyConfig()
    ids = [f"F{i:02d}" for i in range(cfg.n_filters)]
    a = view_assignment(cfg.n_views, cfg.n_test, ids, cfg.seed)
    assert [c for c, _, s in a if s == "test"] == [5, 16, 27, 38]
    counts = Counter(f for _, f, s in a if s == "train")
    assert set(counts.values()) == {5}


def test_capture_set_validation(tiny):
    caps, _, _ = tiny
    with pytest.raises(ArgumentError):
        CaptureSet(G, caps.cameras, [View(0, "nope", np.zeros((1, 1, 3)))], caps.filter_bank)
    with pytest.raises(ArgumentError):
        CaptureSet(G, caps.cameras, [View(0, caps.filter_bank.ids[0], np.zeros((1, 1, 3)), "val")],
                   caps.filter_bank)
