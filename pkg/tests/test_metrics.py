"""Metric oracles and split evaluation tests."""

import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from s2sr.dataset import Landscape, build_manifest, extract_crops, write_crop
from s2sr.errors import DataError, ShapeMismatchError
from s2sr.metrics import (
    MetricReport,
    ergas,
    ergas_excluded_bands,
    evaluate_split,
    predict_sample,
    psnr,
    sam,
    ssim,
    ssim_window,
    write_report,
)
from s2sr.network import ModelConfig, init_model
from s2sr.synthetic import generate_scene


def rnd(shape, seed=0, lo=0.05, hi=0.95):
    return np.random.default_rng(seed).uniform(lo, hi, shape).astype(np.float64)


# ------------------------------------------------------------------- psnr


def test_psnr_closed_form():
    ref = np.zeros((1, 10, 10))
    pred = np.full((1, 10, 10), 0.01)  # MSE 1e-4
    assert abs(psnr(pred, ref) - 40.0) < 1e-12


def test_psnr_identical_hits_cap():
    x = rnd((6, 8, 8))
    assert psnr(x, x) == 99.0


def test_psnr_log_law():
    ref = np.zeros((1, 8, 8))
    a = psnr(ref + 0.01, ref)
    b = psnr(ref + 0.01 * math.sqrt(2.0), ref)  # doubles the MSE
    assert abs((a - b) - 10.0 * math.log10(2.0)) < 1e-9


def test_psnr_per_band_variant():
    ref = np.zeros((2, 4, 4))
    pred = np.stack([np.full((4, 4), 0.1), np.full((4, 4), 0.01)])
    joint = 10.0 * math.log10(1.0 / np.mean(pred**2))
    per_band = (20.0 + 40.0) / 2.0
    assert abs(psnr(pred, ref) - joint) < 1e-9
    assert abs(psnr(pred, ref, per_band=True) - per_band) < 1e-9


def test_psnr_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        psnr(np.zeros((1, 4, 4)), np.zeros((1, 4, 5)))


def test_psnr_data_range():
    ref = np.zeros((1, 4, 4))
    pred = ref + 0.01
    assert abs(psnr(pred, ref, data_range=2.0) - (40.0 + 10 * math.log10(4.0))) < 1e-9


# ------------------------------------------------------------------- ssim


def test_ssim_window_normalized():
    w = ssim_window()
    assert w.shape == (11, 11)
    assert abs(w.sum() - 1.0) < 1e-12
    assert np.array_equal(w, w.T)
    assert w[5, 5] == w.max()


def test_ssim_identical_is_one():
    x = rnd((6, 16, 16))
    assert abs(ssim(x, x) - 1.0) < 1e-12


def test_ssim_constant_offset_below_one():
    x = rnd((1, 16, 16))
    assert ssim(x + 0.5, x) < 0.9


def test_ssim_symmetry():
    a, b = rnd((2, 16, 16), 1), rnd((2, 16, 16), 2)
    assert abs(ssim(a, b) - ssim(b, a)) < 1e-12


def brute_ssim_band(p, r):
    # direct windowed formula, all loops explicit
    half = 5
    g = np.exp(-((np.arange(11) - half) ** 2) / (2 * 1.5**2))
    w = np.outer(g, g)
    w /= w.sum()
    c1, c2 = 0.01**2, 0.03**2
    vals = []
    for y in range(p.shape[0] - 10):
        for x in range(p.shape[1] - 10):
            wp = p[y : y + 11, x : x + 11]
            wr = r[y : y + 11, x : x + 11]
            mp, mr = (w * wp).sum(), (w * wr).sum()
            vp = (w * wp * wp).sum() - mp * mp
            vr = (w * wr * wr).sum() - mr * mr
            cov = (w * wp * wr).sum() - mp * mr
            vals.append(
                ((2 * mp * mr + c1) * (2 * cov + c2))
                / ((mp * mp + mr * mr + c1) * (vp + vr + c2))
            )
    return float(np.mean(vals))


def test_ssim_matches_brute_force():
    p, r = rnd((2, 16, 16), 3), rnd((2, 16, 16), 4)
    want = np.mean([brute_ssim_band(p[c], r[c]) for c in range(2)])
    assert abs(ssim(p, r) - want) <= 1e-6


def test_ssim_rejects_small_images():
    with pytest.raises(DataError):
        ssim(np.zeros((1, 8, 8)), np.zeros((1, 8, 8)))


# -------------------------------------------------------------------- sam


def test_sam_scale_invariant():
    ref = rnd((6, 4, 4), 5)
    assert sam(2.0 * ref, ref) <= 1e-6


def test_sam_orthogonal_is_ninety():
    pred = np.zeros((2, 1, 1))
    ref = np.zeros((2, 1, 1))
    pred[0] = 1.0
    ref[1] = 1.0
    assert abs(sam(pred, ref) - 90.0) < 1e-9


def test_sam_zero_norm_contributes_zero():
    ref = np.ones((2, 1, 2))
    assert sam(np.zeros((2, 1, 2)), ref) == 0.0  # all pixels zero-norm
    pred = np.ones((2, 1, 2))
    pred[:, 0, 1] = 0.0  # one zero pixel; other pixel angle ~0
    assert sam(pred, ref) <= 1e-5
    # a zero pixel dilutes the mean rather than poisoning it
    pred[0, 0, 0] = 0.0  # first pixel now (0,1) vs (1,1): 45 degrees
    assert abs(sam(pred, ref) - 22.5) < 1e-5


def test_sam_brute_force_four_pixels():
    pred, ref = rnd((6, 2, 2), 6), rnd((6, 2, 2), 7)
    angles = []
    for y in range(2):
        for x in range(2):
            p, r = pred[:, y, x], ref[:, y, x]
            cos = np.dot(p, r) / (np.linalg.norm(p) * np.linalg.norm(r))
            angles.append(math.degrees(math.acos(np.clip(cos, -1.0, 1.0))))
    assert abs(sam(pred, ref) - np.mean(angles)) <= 1e-6


@settings(max_examples=30, deadline=None)
@given(st.floats(min_value=0.1, max_value=50.0), st.integers(0, 100))
def test_sam_positive_scaling_property(scale, seed):
    pred, ref = rnd((6, 3, 3), seed), rnd((6, 3, 3), seed + 1)
    assert abs(sam(scale * pred, ref) - sam(pred, ref)) <= 1e-6


# ------------------------------------------------------------------ ergas


def test_ergas_identical_zero():
    x = rnd((6, 8, 8), 8)
    assert ergas(x, x) == 0.0


def test_ergas_closed_form():
    ref = np.full((1, 10, 10), 0.2)
    pred = ref + 0.01  # RMSE exactly 0.01, band mean 0.2
    assert abs(ergas(pred, ref, s=2) - 2.5) < 1e-12


def test_ergas_scale_invariance():
    pred, ref = rnd((6, 8, 8), 9), rnd((6, 8, 8), 10)
    assert abs(ergas(3.7 * pred, 3.7 * ref) - ergas(pred, ref)) < 1e-9


def test_ergas_excludes_zero_mean_bands():
    ref = np.zeros((2, 6, 6))
    ref[1] = 0.2
    pred = ref.copy()
    pred[1] += 0.01
    assert ergas_excluded_bands(ref) == [0]
    assert abs(ergas(pred, ref) - 2.5) < 1e-12  # band 0 plays no part


def test_ergas_all_zero_mean_rejected():
    with pytest.raises(DataError):
        ergas(np.ones((1, 4, 4)), np.zeros((1, 4, 4)))


# --------------------------------------------------------- split evaluation


def make_dataset(tmp_path, kinds=("urban", "rural"), splits=(2, 1)):
    crops_dir = tmp_path / "crops"
    crops_dir.mkdir()
    for i, kind in enumerate(kinds):
        hr10, lr20 = generate_scene(Landscape(kind), size10=48, seed=40 + i)
        for crop in extract_crops(hr10, lr20, crop_px=24, landscape=Landscape(kind), id_prefix=f"{kind}_s{i}"):
            write_crop(crop, crops_dir)
    return build_manifest([crops_dir], splits, seed=0, root=tmp_path)


def tiny_model(seed=0):
    cfg = ModelConfig.from_variant(
        "ginet+",
        stages=1,
        resnl_width=8,
    )
    model = init_model(cfg, seed=seed)
    for stage in model.stages:
        stage.tail_w.data[:] = 0.01
    return model


def test_single_crop_split_mean_equals_value(tmp_path):
    manifest = make_dataset(tmp_path, kinds=("urban",), splits=(3, 1))
    report = evaluate_split(None, manifest, tmp_path, "val")
    assert len(report.crops) == 1
    crop = report.crops[0]
    for field in ("ergas", "psnr", "ssim", "sam"):
        assert report.mean(field) == getattr(crop, field)


def test_zero_weight_model_reproduces_bicubic_row(tmp_path):
    manifest = make_dataset(tmp_path)
    zeroed = tiny_model()
    for t in zeroed.named_params().values():
        t.data[...] = 0
    a = evaluate_split(zeroed, manifest, tmp_path, "val")
    b = evaluate_split(None, manifest, tmp_path, "val")
    for ca, cb in zip(a.crops, b.crops):
        assert ca == cb


def test_evaluate_deterministic(tmp_path):
    manifest = make_dataset(tmp_path)
    model = tiny_model()
    a = evaluate_split(model, manifest, tmp_path, "train")
    b = evaluate_split(model, manifest, tmp_path, "train")
    assert a == b


def test_evaluate_empty_split(tmp_path):
    manifest = make_dataset(tmp_path, kinds=("urban",), splits=(4, 0))
    with pytest.raises(DataError):
        evaluate_split(None, manifest, tmp_path, "val")


def test_model_prediction_differs_from_bicubic(tmp_path):
    manifest = make_dataset(tmp_path, kinds=("urban",), splits=(1, 0))
    from s2sr.dataset import load_sample, split_entries

    sample = load_sample(tmp_path, split_entries(manifest, "train")[0])
    base = predict_sample(None, sample)
    out = predict_sample(tiny_model(), sample)
    assert out.shape == base.shape
    assert not np.array_equal(out, base)


def test_report_fields_and_filters(tmp_path):
    manifest = make_dataset(tmp_path, kinds=("urban", "coastal"), splits=(4, 4))
    report = evaluate_split(None, manifest, tmp_path, "val")
    scapes = report.landscapes()
    assert all(isinstance(s, Landscape) for s in scapes)
    overall = report.mean("psnr")
    per_scape = [report.mean("psnr", s) for s in scapes]
    counts = [sum(1 for c in report.crops if c.landscape is s) for s in scapes]
    weighted = sum(m * n for m, n in zip(per_scape, counts)) / sum(counts)
    assert abs(overall - weighted) < 1e-9
    with pytest.raises(DataError):
        report.mean("mse")
    with pytest.raises(DataError):
        report.mean("psnr", Landscape.RURAL)


def test_report_csv_layout(tmp_path):
    manifest = make_dataset(tmp_path, kinds=("urban", "rural"), splits=(4, 4))
    report = evaluate_split(None, manifest, tmp_path, "val")
    out = tmp_path / "report.csv"
    write_report(report, out)
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["crop_id", "landscape", "ergas", "psnr", "ssim", "sam"]
    body = rows[1 : 1 + len(report.crops)]
    assert [r[0] for r in body] == [c.crop_id for c in report.crops]
    summaries = rows[1 + len(report.crops) :]
    assert summaries[0][:2] == ["summary", "all"]
    assert float(summaries[0][3]) == pytest.approx(report.mean("psnr"), abs=1e-6)
    assert {r[1] for r in summaries[1:]} == {s.value for s in report.landscapes()}


def test_metric_ideal_values_align():
    x = rnd((6, 16, 16), 11)
    assert ergas(x, x) == 0.0
    assert psnr(x, x) == 99.0
    assert abs(ssim(x, x) - 1.0) < 1e-12
    assert sam(x, x) <= 1e-6
