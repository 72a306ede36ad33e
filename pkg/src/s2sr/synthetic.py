"""Procedural multispectral test scenes.

Real Sentinel-2 acquisitions are not shipped with this repository, so
experiments and the self-test suite run on procedurally generated
scenes.  Each scene is built from a few latent geometry fields shared
across bands: the 20m bands are therefore genuinely correlated with the
10m bands, which is the structural assumption the guided model exploits.
"""

from __future__ import annotations

import numpy as np

from .dataset import Landscape, degrade_wald
from .errors import DataError
from .raster import TEN_M_BANDS, TWENTY_M_BANDS, BandId, BandStack

# latent amplitude per landscape: (blobs, waves, blocks, detail)
_KIND_WEIGHTS = {
    Landscape.URBAN: (0.25, 0.20, 1.00, 0.30),
    Landscape.RURAL: (1.00, 0.45, 0.10, 0.25),
    Landscape.COASTAL: (0.80, 0.30, 0.25, 0.25),
    Landscape.MIXED: (0.70, 0.40, 0.50, 0.30),
}

# reflectance of open water per band, roughly: visible > NIR > SWIR
_WATER_LEVELS = {
    BandId.B2: 0.30,
    BandId.B3: 0.28,
    BandId.B4: 0.18,
    BandId.B8: 0.05,
    BandId.B5: 0.12,
    BandId.B6: 0.08,
    BandId.B7: 0.06,
    BandId.B8A: 0.05,
    BandId.B11: 0.03,
    BandId.B12: 0.02,
}


def _minmax01(field: np.ndarray) -> np.ndarray:
    lo, hi = field.min(), field.max()
    if hi - lo < 1e-12:
        return np.zeros_like(field)
    return (field - lo) / (hi - lo)


def _blob_field(rng, size: int, n: int = 12) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    out = np.zeros((size, size), dtype=np.float64)
    for _ in range(n):
        cy, cx = rng.uniform(0, 1, 2)
        width = rng.uniform(0.04, 0.22)
        amp = rng.uniform(-1.0, 1.0)
        out += amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * width**2))
    return _minmax01(out)


def _wave_field(rng, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    out = np.zeros((size, size), dtype=np.float64)
    for _ in range(3):
        fy, fx = rng.uniform(2.0, 11.0, 2)
        phase = rng.uniform(0, 2 * np.pi)
        out += rng.uniform(0.3, 1.0) * np.sin(2 * np.pi * (fy * yy + fx * xx) + phase)
    return _minmax01(out)


def _block_field(rng, size: int, n: int = 30) -> np.ndarray:
    out = np.zeros((size, size), dtype=np.float64)
    for _ in range(n):
        h = int(rng.integers(size // 24 + 1, size // 6 + 2))
        w = int(rng.integers(size // 24 + 1, size // 6 + 2))
        r = int(rng.integers(0, size - h + 1))
        c = int(rng.integers(0, size - w + 1))
        out[r : r + h, c : c + w] = rng.uniform(0.0, 1.0)
    return out


def _detail_field(rng, size: int) -> np.ndarray:
    noise = rng.standard_normal((size, size))
    # light 3x3 binomial smoothing keeps detail while killing checkerboarding
    k = np.array([0.25, 0.5, 0.25])
    padded = np.pad(noise, 1, mode="reflect")
    rows = sum(k[i] * padded[i : i + size, :] for i in range(3))
    out = sum(k[i] * rows[:, i : i + size] for i in range(3))
    return _minmax01(out)


def _band_archetypes(rng):
    vis = rng.normal(0.0, 1.0, 4)
    nir = rng.normal(0.0, 1.0, 4)
    swir = rng.normal(0.0, 1.0, 4)
    red_edge = 0.5 * (vis + nir)
    return {
        BandId.B2: vis,
        BandId.B3: vis,
        BandId.B4: vis,
        BandId.B8: nir,
        BandId.B5: red_edge,
        BandId.B6: red_edge,
        BandId.B7: red_edge,
        BandId.B8A: nir,
        BandId.B11: swir,
        BandId.B12: swir,
    }


def generate_scene(
    kind: Landscape, size10: int, seed: int
) -> tuple[BandStack, BandStack]:
    """Build one scene pair: 4 bands at 10m and 6 bands at 20m.

    `size10` is the edge length on the 10m grid and must be divisible
    by 4 (the 20m bands are produced by degrading fine-grid fields).
    """
    if size10 < 16 or size10 % 4:
        raise DataError("scene size must be at least 16 and divisible by 4")
    rng = np.random.default_rng(seed)
    amps = _KIND_WEIGHTS[kind]
    latents = np.stack(
        [
            amps[0] * _blob_field(rng, size10),
            amps[1] * _wave_field(rng, size10),
            amps[2] * _block_field(rng, size10),
            amps[3] * _detail_field(rng, size10),
        ]
    )
    archetypes = _band_archetypes(rng)
    water = None
    if kind is Landscape.COASTAL:
        shore = _blob_field(rng, size10)
        water = 1.0 / (1.0 + np.exp(-(shore - 0.55) * 30.0))

    def band_plane(band: BandId) -> np.ndarray:
        w = archetypes[band] + 0.15 * rng.normal(0.0, 1.0, 4)
        raw = np.tensordot(w, latents, axes=1)
        plane = 0.05 + 0.9 * _minmax01(raw)
        if water is not None:
            plane = water * _WATER_LEVELS[band] + (1.0 - water) * plane
        return plane.astype(np.float32)

    hr10 = BandStack(
        bands=TEN_M_BANDS,
        data=np.stack([band_plane(b) for b in TEN_M_BANDS]),
        gsd=10.0,
    )
    fine20 = BandStack(
        bands=TWENTY_M_BANDS,
        data=np.stack([band_plane(b) for b in TWENTY_M_BANDS]),
        gsd=10.0,
    )
    return hr10, degrade_wald(fine20)
