"""Exception hierarchy shared across the toolkit.

Two families matter to callers: ``DataError`` for anything wrong with
files, bands, or shapes (CLI exit code 3) and ``NumericError`` for
NaN/Inf escapes and failed numeric invariants (CLI exit code 4).
"""


class S2SRError(Exception):
    """Base class for all toolkit errors."""


class DataError(S2SRError):
    """Invalid or inconsistent input data."""


class BadMagicError(DataError):
    """File does not start with the expected magic bytes."""


class UnsupportedVersionError(DataError):
    """File format version is not understood."""


class TruncatedFileError(DataError):
    """File ends before the declared payload is complete."""


class UnknownBandError(DataError):
    """Band code in a file is not a known band."""


class NonFiniteError(DataError):
    """Raster values contain NaN or Inf."""


class MissingBandError(DataError):
    """A required band is absent from the stack."""


class MixedResolutionError(DataError):
    """Bands at different ground sample distances were combined."""


class ShapeMismatchError(DataError):
    """Array shapes or band lists do not line up."""


class NonDivisibleError(DataError):
    """Scene dimensions are not divisible by the crop size."""


class DuplicatePathError(DataError):
    """The same crop path was listed twice."""


class ManifestError(DataError):
    """Manifest is malformed or references missing files."""


class NumericError(S2SRError):
    """A numeric invariant was violated (NaN loss, failed check)."""


class AutodiffError(S2SRError):
    """Misuse of the differentiable compute graph."""
