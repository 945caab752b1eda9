"""Exception hierarchy used across the toolkit.

Every failure mode that callers are expected to branch on gets its own
class; generic misuse raises ValueError/TypeError as usual.
"""

from __future__ import annotations


class KmgptError(Exception):
    """Base class for all toolkit-specific errors."""


# --- image preparation ---------------------------------------------------


class DegenerateImage(KmgptError):
    """Image too small to enhance (min dimension <= 4 px)."""


class EditOutOfBounds(KmgptError):
    """An edit mask falls outside the image (or current crop window).

    Carries the index of the offending mask in the submitted list.
    """

    def __init__(self, index: int, message: str):
        super().__init__(f"edit #{index}: {message}")
        self.index = index


# --- plot geometry --------------------------------------------------------


class NoAxisFound(KmgptError):
    """No column/row exceeds the ink-density threshold."""


class InsufficientTicks(KmgptError):
    """Fewer than two numeric tick tokens after deduplication."""


class DegenerateTicks(KmgptError):
    """All tick values equal; no usable gap."""


class DegenerateAxis(KmgptError):
    """Zero-length axis span in pixels or data units."""


# --- curve extraction -----------------------------------------------------


class NoCurvePixels(KmgptError):
    """Plot interior contains no foreground pixels after filtering."""


class TooFewPixels(KmgptError):
    """Requested more clusters than available pixels."""


class InsufficientNeighbors(KmgptError):
    """Fewer than k+1 points for k-NN consensus scoring."""


class UnresolvableOverlap(KmgptError):
    """A trace has no confident points to interpolate from."""


# --- metadata / providers / OCR -------------------------------------------


class ProviderError(KmgptError):
    """Metadata provider unreachable after retries."""


class OcrUnavailable(KmgptError):
    """The configured OCR engine cannot run (e.g. binary missing)."""


class MetadataSchemaError(KmgptError):
    """Provider response failed schema validation even after one repair."""


class MetadataConflict(KmgptError):
    """Provider metadata contradicts OCR-derived values or its own invariants."""


# --- reconstruction -------------------------------------------------------


class InvalidRiskTable(KmgptError):
    """Risk counts increase over time or are otherwise unusable."""


class ReconstructionDiverged(KmgptError):
    """Risk-set matching failed within the iteration cap.

    ``records`` holds the best iterate; ``diagnostic`` describes the
    residual mismatch per anchor.
    """

    def __init__(self, message: str, records=None, diagnostic=None):
        super().__init__(message)
        self.records = records if records is not None else []
        self.diagnostic = diagnostic


# --- benchmarking / metrics -----------------------------------------------


class InvalidHorizon(KmgptError):
    """score() called with a non-positive horizon."""


# --- meta-analysis --------------------------------------------------------


class GridTooShort(KmgptError):
    """A record or evaluation time lies beyond the last interval cut."""


class SamplerFailure(KmgptError):
    """A chain produced a non-finite state; carries the offending trace."""

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace


# --- pipeline / service ---------------------------------------------------


class PipelineStageError(KmgptError):
    """Wraps a failure with the name of the pipeline stage it occurred in."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
