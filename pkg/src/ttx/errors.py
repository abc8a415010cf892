"""Domain errors.

Every error carries a stable machine-readable ``code`` so the CLI and the
HTTP service can surface failures without leaking stack traces.
"""

from __future__ import annotations


class TtxError(Exception):
    """Base class for all domain errors."""

    code = "error"

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


# --- dataset ---------------------------------------------------------------

class EmptyDirectoryError(TtxError):
    code = "empty_directory"


class UnknownKeywordDirectoryError(TtxError):
    code = "unknown_keyword_directory"


class CaptionerFailureError(TtxError):
    code = "captioner_failure"


class NonCanonicalKeywordError(TtxError):
    code = "non_canonical_keyword"


class InvalidSpecError(TtxError):
    code = "invalid_spec"


class TooFewRecordsError(TtxError):
    code = "too_few_records"


# --- diffusion core ----------------------------------------------------------

class InvalidBoundsError(TtxError):
    code = "invalid_bounds"


class StepOutOfRangeError(TtxError):
    code = "step_out_of_range"


class StepOrderViolationError(TtxError):
    code = "step_order_violation"


class ShapeMismatchError(TtxError):
    code = "shape_mismatch"


class IncompatibleCheckpointError(TtxError):
    code = "incompatible_checkpoint"


class InvalidRequestError(TtxError):
    code = "invalid_request"


# --- trainer / checkpoints ---------------------------------------------------

class EmptyBatchError(TtxError):
    code = "empty_batch"


class ShapeIncompatibilityError(TtxError):
    code = "shape_incompatibility"


class NonFiniteLossError(TtxError):
    code = "non_finite_loss"

    def __init__(self, message: str, last_good_checkpoint=None):
        super().__init__(message)
        self.last_good_checkpoint = last_good_checkpoint


class VersionMismatchError(TtxError):
    code = "version_mismatch"


class DigestMismatchError(TtxError):
    code = "digest_mismatch"


class CorruptCheckpointError(TtxError):
    code = "corrupt_checkpoint"


# --- evaluation ---------------------------------------------------------------

class UnknownKeywordError(TtxError):
    code = "unknown_keyword"


class NoRecordsForKeywordError(TtxError):
    code = "no_records_for_keyword"


class EmptyImageSetError(TtxError):
    code = "empty_image_set"


class EmptySetError(TtxError):
    code = "empty_set"


# --- service -------------------------------------------------------------------

class UnknownCheckpointError(TtxError):
    code = "unknown_checkpoint"
