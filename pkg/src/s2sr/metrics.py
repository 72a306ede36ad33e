"""Quantitative evaluation: PSNR, SSIM, SAM, ERGAS, and split reports.

All metrics take [C,H,W] float arrays and compute in float64.  PSNR is
computed jointly over bands by default (a per-band mean variant is
available), SSIM uses the canonical 11x11 Gaussian window constants,
SAM treats each pixel as a C-vector, and ERGAS uses ratio factor 1/s
for the scale-s task.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .dataset import Landscape, Manifest, load_sample, split_entries
from .errors import DataError, ShapeMismatchError
from .network import UnfoldedModel, forward
from .nnops import bicubic_up2

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


def _pair(pred, ref):
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if pred.shape != ref.shape:
        raise ShapeMismatchError(f"metric operands differ: {pred.shape} vs {ref.shape}")
    if pred.ndim != 3:
        raise ShapeMismatchError("metrics expect [C,H,W] arrays")
    return pred, ref


def _psnr_from_mse(mse: float, data_range: float) -> float:
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(data_range * data_range / mse))


def psnr(pred, ref, data_range: float = 1.0, per_band: bool = False) -> float:
    """Peak signal-to-noise ratio in dB, capped at 99 for identical inputs."""
    pred, ref = _pair(pred, ref)
    if per_band:
        values = [
            _psnr_from_mse(float(np.mean((p - r) ** 2)), data_range)
            for p, r in zip(pred, ref)
        ]
        return float(np.mean(values))
    return _psnr_from_mse(float(np.mean((pred - ref) ** 2)), data_range)


def ssim_window() -> np.ndarray:
    """Normalized 11x11 Gaussian window, sigma 1.5."""
    half = SSIM_WINDOW // 2
    x = np.arange(SSIM_WINDOW, dtype=np.float64) - half
    g = np.exp(-(x**2) / (2.0 * SSIM_SIGMA**2))
    w = np.outer(g, g)
    return w / w.sum()


def _windowed_mean(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    views = np.lib.stride_tricks.sliding_window_view(x, w.shape)
    return np.tensordot(views, w, axes=([2, 3], [0, 1]))


def ssim(pred, ref, data_range: float = 1.0) -> float:
    """Mean structural similarity over valid window positions, band-averaged."""
    pred, ref = _pair(pred, ref)
    if pred.shape[1] < SSIM_WINDOW or pred.shape[2] < SSIM_WINDOW:
        raise DataError("image smaller than the ssim window")
    w = ssim_window()
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    scores = []
    for p, r in zip(pred, ref):
        mu_p = _windowed_mean(p, w)
        mu_r = _windowed_mean(r, w)
        var_p = _windowed_mean(p * p, w) - mu_p**2
        var_r = _windowed_mean(r * r, w) - mu_r**2
        cov = _windowed_mean(p * r, w) - mu_p * mu_r
        num = (2.0 * mu_p * mu_r + c1) * (2.0 * cov + c2)
        den = (mu_p**2 + mu_r**2 + c1) * (var_p + var_r + c2)
        scores.append(float(np.mean(num / den)))
    return float(np.mean(scores))


def sam(pred, ref) -> float:
    """Mean spectral angle in degrees; zero-norm pixels contribute zero."""
    pred, ref = _pair(pred, ref)
    dots = np.sum(pred * ref, axis=0)
    norms = np.linalg.norm(pred, axis=0) * np.linalg.norm(ref, axis=0)
    cos = np.zeros_like(dots)
    ok = norms > 0
    cos[ok] = np.clip(dots[ok] / norms[ok], -1.0, 1.0)
    angles = np.zeros_like(dots)
    angles[ok] = np.degrees(np.arccos(cos[ok]))
    return float(np.mean(angles))


def ergas_excluded_bands(ref) -> list:
    """Indices of reference bands with zero mean (skipped by ERGAS)."""
    ref = np.asarray(ref, dtype=np.float64)
    return [c for c in range(ref.shape[0]) if ref[c].mean() == 0.0]


def ergas(pred, ref, s: int = 2) -> float:
    """Relative global dimensionless error; ratio factor 1/s."""
    pred, ref = _pair(pred, ref)
    terms = []
    for p, r in zip(pred, ref):
        mu = r.mean()
        if mu == 0.0:
            continue
        rmse = math.sqrt(float(np.mean((p - r) ** 2)))
        terms.append((rmse / mu) ** 2)
    if not terms:
        raise DataError("every reference band has zero mean")
    return 100.0 / s * math.sqrt(sum(terms) / len(terms))


# ------------------------------------------------------------- split reports


@dataclass(frozen=True)
class CropMetrics:
    crop_id: str
    landscape: Landscape
    ergas: float
    psnr: float
    ssim: float
    sam: float


@dataclass(frozen=True)
class MetricReport:
    split: str
    crops: tuple

    _FIELDS = ("ergas", "psnr", "ssim", "sam")

    def mean(self, field: str, landscape: Landscape | None = None) -> float:
        if field not in self._FIELDS:
            raise DataError(f"unknown metric field {field!r}")
        values = [
            getattr(c, field)
            for c in self.crops
            if landscape is None or c.landscape is landscape
        ]
        if not values:
            raise DataError("no crops match the requested landscape")
        return float(np.mean(values))

    def landscapes(self):
        seen = sorted({c.landscape.value for c in self.crops})
        return [Landscape(v) for v in seen]


def predict_sample(model: UnfoldedModel | None, sample) -> np.ndarray:
    """Model output for a sample; a missing model means plain bicubic."""
    if model is None:
        return bicubic_up2(sample.input_f.data)
    with ad.no_grad():
        result = forward(
            model,
            Tensor(sample.input_f.data),
            Tensor(sample.guide_src.data),
            soft_guide=False,
        )
    return result.output.data


def evaluate_entries(
    model,
    root,
    entries,
    split: str,
    data_range: float = 1.0,
    per_band_psnr: bool = False,
) -> MetricReport:
    if not entries:
        raise DataError(f"split {split!r} has no crops")
    crops = []
    for entry in entries:
        sample = load_sample(root, entry)
        pred = predict_sample(model, sample)
        ref = sample.ref.data
        crops.append(
            CropMetrics(
                crop_id=Path(entry.path).name,
                landscape=entry.landscape,
                ergas=ergas(pred, ref),
                psnr=psnr(pred, ref, data_range, per_band=per_band_psnr),
                ssim=ssim(pred, ref, data_range),
                sam=sam(pred, ref),
            )
        )
    return MetricReport(split=split, crops=tuple(crops))


def evaluate_split(
    model,
    manifest: Manifest,
    root,
    split: str,
    data_range: float = 1.0,
    per_band_psnr: bool = False,
) -> MetricReport:
    """Run the model over one split and collect all four metrics per crop."""
    return evaluate_entries(
        model, root, split_entries(manifest, split), split, data_range, per_band_psnr
    )


def write_report(report: MetricReport, path) -> None:
    """CSV with one row per crop, then overall and per-landscape summaries."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["crop_id", "landscape", "ergas", "psnr", "ssim", "sam"])
        for c in report.crops:
            writer.writerow(
                [c.crop_id, c.landscape.value]
                + [f"{getattr(c, f):.6f}" for f in report._FIELDS]
            )
        writer.writerow(
            ["summary", "all"]
            + [f"{report.mean(f):.6f}" for f in report._FIELDS]
        )
        for scape in report.landscapes():
            writer.writerow(
                ["summary", scape.value]
                + [f"{report.mean(f, scape):.6f}" for f in report._FIELDS]
            )
