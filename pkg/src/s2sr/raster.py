"""Band stacks and the binary raster container.

A :class:`BandStack` is an immutable multi-band image: surface
reflectance in [0, 1] (already divided by the 10000 quantification
factor), planar float32, all bands at one ground sample distance.

On disk a stack is an "S2SR" container (little-endian):

    magic   4 bytes  b"S2SR"
    version u32      1
    bands   u32      band count C
    height  u32
    width   u32
    gsd     u32      ground sample distance in decimeters
    codes   C x u8   band codes (see BandId values)
    data    C*H*W f32, band-major, row-major

Round trips are bit-exact.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    MissingBandError,
    MixedResolutionError,
    NonFiniteError,
    ShapeMismatchError,
    TruncatedFileError,
    UnknownBandError,
    UnsupportedVersionError,
)

MAGIC = b"S2SR"
VERSION = 1
_HEADER = struct.Struct("<4sIIIII")


class BandId(enum.Enum):
    """Sentinel-2 band identities with their container codes."""

    B2 = 2
    B3 = 3
    B4 = 4
    B5 = 5
    B6 = 6
    B7 = 7
    B8 = 8
    B8A = 9
    B11 = 11
    B12 = 12

    @property
    def native_gsd(self) -> float:
        """Acquisition resolution in meters (10 or 20)."""
        return 10.0 if self in TEN_M_BANDS else 20.0


# Canonical orders. The 20m tuple fixes the channel order used by every
# 6-channel tensor in the model (guide image, error maps, outputs).
TEN_M_BANDS = (BandId.B2, BandId.B3, BandId.B4, BandId.B8)
TWENTY_M_BANDS = (BandId.B5, BandId.B6, BandId.B7, BandId.B8A, BandId.B11, BandId.B12)

_CODE_TO_BAND = {b.value: b for b in BandId}


@dataclass(frozen=True)
class BandStack:
    """Multi-band raster at a single resolution.

    ``data`` has shape (C, H, W) float32 and is treated as immutable;
    operations return new stacks and never write into it.
    """

    bands: tuple[BandId, ...]
    data: np.ndarray
    gsd: float

    def __post_init__(self):
        bands = tuple(self.bands)
        object.__setattr__(self, "bands", bands)
        if len(set(bands)) != len(bands):
            raise ShapeMismatchError("duplicate bands in stack")
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 3 or arr.shape[0] != len(bands):
            raise ShapeMismatchError(
                f"data shape {arr.shape} does not match {len(bands)} bands"
            )
        if not np.isfinite(arr).all():
            raise NonFiniteError("stack contains non-finite values")
        if self.gsd <= 0:
            raise ShapeMismatchError("gsd must be positive")
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    def has_band(self, band: BandId) -> bool:
        return band in self.bands

    def band(self, band: BandId) -> np.ndarray:
        """2D view of one band; raises MissingBandError if absent."""
        try:
            idx = self.bands.index(band)
        except ValueError:
            raise MissingBandError(f"stack has no band {band.name}") from None
        return self.data[idx]

    def select(self, bands: tuple[BandId, ...]) -> "BandStack":
        """New stack holding the requested bands in the requested order."""
        planes = np.stack([self.band(b) for b in bands])
        return BandStack(bands=tuple(bands), data=planes, gsd=self.gsd)


def merge_stacks(a: BandStack, b: BandStack) -> BandStack:
    """Concatenate two stacks on a common grid.

    Refuses stacks at different resolutions; callers must resample first.
    """
    if a.gsd != b.gsd:
        raise MixedResolutionError(f"cannot merge gsd {a.gsd} with gsd {b.gsd}")
    if a.data.shape[1:] != b.data.shape[1:]:
        raise ShapeMismatchError("stacks have different pixel grids")
    return BandStack(
        bands=a.bands + b.bands,
        data=np.concatenate([a.data, b.data], axis=0),
        gsd=a.gsd,
    )


def write_raster(stack: BandStack, path) -> None:
    """Write a stack to an S2SR container file."""
    gsd_dm = round(stack.gsd * 10.0)
    header = _HEADER.pack(
        MAGIC, VERSION, len(stack.bands), stack.height, stack.width, gsd_dm
    )
    codes = bytes(b.value for b in stack.bands)
    payload = np.ascontiguousarray(stack.data, dtype="<f4").tobytes()
    Path(path).write_bytes(header + codes + payload)


def read_raster(path) -> BandStack:
    """Read an S2SR container file; inverse of :func:`write_raster`."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise TruncatedFileError(f"{path}: file shorter than header")
    magic, version, nbands, height, width, gsd_dm = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported version {version}")
    offset = _HEADER.size
    if len(raw) < offset + nbands:
        raise TruncatedFileError(f"{path}: band code table truncated")
    bands = []
    for code in raw[offset : offset + nbands]:
        band = _CODE_TO_BAND.get(code)
        if band is None:
            raise UnknownBandError(f"{path}: unknown band code {code}")
        bands.append(band)
    offset += nbands
    expected = nbands * height * width * 4
    if len(raw) != offset + expected:
        raise TruncatedFileError(
            f"{path}: payload has {len(raw) - offset} bytes, expected {expected}"
        )
    data = np.frombuffer(raw, dtype="<f4", offset=offset).reshape(nbands, height, width)
    if not np.isfinite(data).all():
        raise NonFiniteError(f"{path}: non-finite values in payload")
    return BandStack(bands=tuple(bands), data=data.copy(), gsd=gsd_dm / 10.0)
