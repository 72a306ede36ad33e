"""Crop extraction, resolution degradation, and manifest-driven splits.

Training follows the reduced-resolution protocol: both band groups are
degraded by a factor of two, so the original 20m bands become the
references and the degraded copies (40m inputs, 20m guide source) form
the network inputs.  Crops are stored as paired raster files
``<base>.hr10.s2sr`` / ``<base>.lr20.s2sr``; a JSON manifest assigns
each crop to a split.
"""

from __future__ import annotations

import enum
import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DataError,
    DuplicatePathError,
    ManifestError,
    NonDivisibleError,
    ShapeMismatchError,
    UnsupportedVersionError,
)
from .raster import (
    TEN_M_BANDS,
    TWENTY_M_BANDS,
    BandStack,
    read_raster,
    write_raster,
)

MANIFEST_VERSION = 1
DEGRADE_SIGMA = 1.0
DEGRADE_TAPS = 7


class Landscape(enum.Enum):
    URBAN = "urban"
    RURAL = "rural"
    COASTAL = "coastal"
    MIXED = "mixed"


SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class SceneCrop:
    """One training unit: 4-band 10m patch plus the matching 6-band 20m patch."""

    hr10: BandStack
    lr20: BandStack
    id: str
    landscape: Landscape

    def __post_init__(self):
        if tuple(self.hr10.bands) != TEN_M_BANDS:
            raise ShapeMismatchError("hr10 must hold the four 10m bands in order")
        if tuple(self.lr20.bands) != TWENTY_M_BANDS:
            raise ShapeMismatchError("lr20 must hold the six 20m bands in order")
        if (self.hr10.height, self.hr10.width) != (
            2 * self.lr20.height,
            2 * self.lr20.width,
        ):
            raise ShapeMismatchError("hr10 grid must be exactly twice the lr20 grid")


@dataclass(frozen=True)
class SampleTriple:
    """Degraded input, degraded guide source, and the untouched reference."""

    input_f: BandStack  # 6 bands, half the reference grid
    guide_src: BandStack  # 4 bands, on the reference grid
    ref: BandStack  # 6 bands, the original 20m crop

    def __post_init__(self):
        if (self.ref.height, self.ref.width) != (
            2 * self.input_f.height,
            2 * self.input_f.width,
        ):
            raise ShapeMismatchError("reference grid must be twice the input grid")
        if (self.guide_src.height, self.guide_src.width) != (
            self.ref.height,
            self.ref.width,
        ):
            raise ShapeMismatchError("guide source must live on the reference grid")


@dataclass(frozen=True)
class ManifestEntry:
    path: str  # crop base path, relative to the manifest directory, posix style
    split: str
    landscape: Landscape


@dataclass(frozen=True)
class Manifest:
    seed: int
    entries: tuple


def gaussian_taps(sigma: float = DEGRADE_SIGMA, taps: int = DEGRADE_TAPS) -> np.ndarray:
    """Normalized 1-D Gaussian kernel in float64."""
    if taps % 2 != 1 or taps < 1:
        raise DataError("tap count must be odd and positive")
    x = np.arange(taps, dtype=np.float64) - taps // 2
    g = np.exp(-(x**2) / (2.0 * sigma * sigma))
    return g / g.sum()


def _blur_reflect(data: np.ndarray, taps: np.ndarray) -> np.ndarray:
    # separable correlation, reflect border, all in float64
    r = len(taps) // 2
    c, h, w = data.shape
    padded = np.pad(data, ((0, 0), (r, r), (r, r)), mode="reflect")
    rows = np.zeros((c, h, w + 2 * r), dtype=np.float64)
    for i, t in enumerate(taps):
        rows += t * padded[:, i : i + h, :]
    out = np.zeros((c, h, w), dtype=np.float64)
    for i, t in enumerate(taps):
        out += t * rows[:, :, i : i + w]
    return out


def degrade_wald(stack: BandStack, sigma: float = DEGRADE_SIGMA) -> BandStack:
    """Halve a stack's resolution: Gaussian blur then 2-fold decimation.

    Blur uses a separable 7-tap Gaussian with reflect padding; decimation
    keeps the top-left sample of every 2x2 block.  The arithmetic runs in
    float64 so constant images survive the round trip to float32 exactly.
    """
    h, w = stack.height, stack.width
    if h % 2 or w % 2:
        raise NonDivisibleError("degradation needs even height and width")
    r = DEGRADE_TAPS // 2
    if h <= r or w <= r:
        raise DataError(f"image too small for a {DEGRADE_TAPS}-tap blur")
    taps = gaussian_taps(sigma)
    blurred = _blur_reflect(stack.data.astype(np.float64), taps)
    low = blurred[:, ::2, ::2].astype(np.float32)
    return BandStack(bands=stack.bands, data=low, gsd=stack.gsd * 2)


def extract_crops(
    hr10_scene: BandStack,
    lr20_scene: BandStack,
    crop_px: int = 240,
    landscape: Landscape = Landscape.MIXED,
    id_prefix: str = "",
) -> list:
    """Tile a scene pair into non-overlapping crops, row-major.

    `crop_px` is the crop edge on the 10m grid; the 20m grid uses half
    that.  Ids are "row_col", optionally prefixed.
    """
    if crop_px < 2 or crop_px % 2:
        raise DataError("crop size must be even and at least 2")
    if hr10_scene.height % crop_px or hr10_scene.width % crop_px:
        raise NonDivisibleError(
            f"10m scene {hr10_scene.height}x{hr10_scene.width} not divisible "
            f"by crop size {crop_px}"
        )
    if (hr10_scene.height, hr10_scene.width) != (
        2 * lr20_scene.height,
        2 * lr20_scene.width,
    ):
        raise ShapeMismatchError("scene grids must differ by exactly a factor 2")
    half = crop_px // 2
    crops = []
    for r in range(hr10_scene.height // crop_px):
        for c in range(hr10_scene.width // crop_px):
            hr = BandStack(
                bands=hr10_scene.bands,
                data=hr10_scene.data[
                    :, r * crop_px : (r + 1) * crop_px, c * crop_px : (c + 1) * crop_px
                ].copy(),
                gsd=hr10_scene.gsd,
            )
            lr = BandStack(
                bands=lr20_scene.bands,
                data=lr20_scene.data[
                    :, r * half : (r + 1) * half, c * half : (c + 1) * half
                ].copy(),
                gsd=lr20_scene.gsd,
            )
            cid = f"{id_prefix}{r}_{c}"
            crops.append(SceneCrop(hr10=hr, lr20=lr, id=cid, landscape=landscape))
    return crops


def make_sample(crop: SceneCrop) -> SampleTriple:
    """Degrade a crop into the training triple; the reference is untouched."""
    return SampleTriple(
        input_f=degrade_wald(crop.lr20),
        guide_src=degrade_wald(crop.hr10),
        ref=crop.lr20,
    )


def _landscape_from_name(name: str) -> Landscape:
    head = name.split("_", 1)[0].lower()
    for kind in Landscape:
        if kind.value == head:
            return kind
    return Landscape.MIXED


def write_crop(crop: SceneCrop, directory) -> str:
    """Write the crop's raster pair; returns the base path."""
    base = Path(directory) / crop.id
    write_raster(crop.hr10, Path(str(base) + ".hr10.s2sr"))
    write_raster(crop.lr20, Path(str(base) + ".lr20.s2sr"))
    return str(base)


def load_crop(root, entry: ManifestEntry) -> SceneCrop:
    base = Path(root) / entry.path
    hr10 = read_raster(Path(str(base) + ".hr10.s2sr"))
    lr20 = read_raster(Path(str(base) + ".lr20.s2sr"))
    return SceneCrop(
        hr10=hr10, lr20=lr20, id=Path(entry.path).name, landscape=entry.landscape
    )


def materialize_sample(root, entry: ManifestEntry) -> None:
    """Precompute and store the degraded pair next to the crop files."""
    sample = make_sample(load_crop(root, entry))
    base = Path(root) / entry.path
    write_raster(sample.input_f, Path(str(base) + ".in40.s2sr"))
    write_raster(sample.guide_src, Path(str(base) + ".gd20.s2sr"))


def load_sample(root, entry: ManifestEntry) -> SampleTriple:
    """Load a crop's training triple, reusing materialized files when present."""
    base = Path(root) / entry.path
    in_path = Path(str(base) + ".in40.s2sr")
    gd_path = Path(str(base) + ".gd20.s2sr")
    lr20 = read_raster(Path(str(base) + ".lr20.s2sr"))
    if in_path.exists() and gd_path.exists():
        return SampleTriple(
            input_f=read_raster(in_path), guide_src=read_raster(gd_path), ref=lr20
        )
    hr10 = read_raster(Path(str(base) + ".hr10.s2sr"))
    return SampleTriple(
        input_f=degrade_wald(lr20), guide_src=degrade_wald(hr10), ref=lr20
    )


def build_manifest(crop_dirs, split_spec, seed: int, root) -> Manifest:
    """Assign every crop under `crop_dirs` to a split, shuffled by seed.

    `split_spec` is (train count, val count); remaining crops become the
    test split.  Paths are stored relative to `root`, where the manifest
    will live.
    """
    n_train, n_val = split_spec
    if n_train < 0 or n_val < 0:
        raise ManifestError("split counts must be nonnegative")
    bases = []
    seen = set()
    for d in crop_dirs:
        d = Path(d)
        if not d.is_dir():
            raise ManifestError(f"crop directory not found: {d}")
        for hr_path in sorted(d.glob("*.hr10.s2sr")):
            base = str(hr_path)[: -len(".hr10.s2sr")]
            if not Path(base + ".lr20.s2sr").exists():
                raise ManifestError(f"crop {base} lacks its 20m file")
            rel = Path(os.path.relpath(base, root)).as_posix()
            if rel in seen:
                raise DuplicatePathError(f"crop listed twice: {rel}")
            seen.add(rel)
            bases.append(rel)
    if n_train + n_val > len(bases):
        raise ManifestError(
            f"split spec {n_train}+{n_val} exceeds crop count {len(bases)}"
        )
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(bases))
    entries = []
    for rank, idx in enumerate(order):
        split = "train" if rank < n_train else "val" if rank < n_train + n_val else "test"
        path = bases[idx]
        entries.append(
            ManifestEntry(
                path=path,
                split=split,
                landscape=_landscape_from_name(Path(path).name),
            )
        )
    return Manifest(seed=seed, entries=tuple(entries))


def save_manifest(manifest: Manifest, path) -> None:
    doc = {
        "version": MANIFEST_VERSION,
        "seed": manifest.seed,
        "entries": [
            {"path": e.path, "split": e.split, "landscape": e.landscape.value}
            for e in manifest.entries
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_manifest(path) -> Manifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot parse manifest {path}: {exc}") from exc
    if not isinstance(doc, dict) or "version" not in doc:
        raise ManifestError("manifest lacks a version field")
    if doc["version"] != MANIFEST_VERSION:
        raise UnsupportedVersionError(f"manifest version {doc['version']} unsupported")
    try:
        seed = int(doc["seed"])
        raw_entries = doc["entries"]
    except KeyError as exc:
        raise ManifestError(f"manifest lacks field {exc}") from exc
    entries = []
    seen = set()
    root = path.parent
    for raw in raw_entries:
        try:
            rel, split, scape = raw["path"], raw["split"], raw["landscape"]
        except (TypeError, KeyError) as exc:
            raise ManifestError(f"malformed manifest entry: {raw!r}") from exc
        if split not in SPLITS:
            raise ManifestError(f"unknown split {split!r}")
        if rel in seen:
            raise DuplicatePathError(f"crop listed twice: {rel}")
        seen.add(rel)
        for suffix in (".hr10.s2sr", ".lr20.s2sr"):
            if not (root / (rel + suffix)).exists():
                raise ManifestError(f"missing crop file: {rel}{suffix}")
        entries.append(
            ManifestEntry(path=rel, split=split, landscape=Landscape(scape))
        )
    return Manifest(seed=seed, entries=tuple(entries))


def split_entries(manifest: Manifest, split: str):
    if split not in SPLITS:
        raise ManifestError(f"unknown split {split!r}")
    return [e for e in manifest.entries if e.split == split]
