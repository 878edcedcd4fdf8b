"""Exception types shared across the toolkit.

Every error carries a stable machine-readable ``code`` so that CLI and HTTP
layers can surface structured diagnostics without string matching.
"""
from __future__ import annotations


class VirreqError(Exception):
    """Base class for all toolkit errors."""

    code = "error"

    def __init__(self, message: str, **detail: object) -> None:
        super().__init__(message)
        self.detail = detail

    def payload(self) -> dict:
        return {"code": self.code, "message": str(self), "detail": self.detail}


class DimensionMismatch(VirreqError):
    code = "dimension_mismatch"


class BothEmpty(VirreqError):
    """IoU of two empty masks is undefined; the caller must decide."""

    code = "both_empty"


class EmptyMask(VirreqError):
    code = "empty_mask"


class MalformedRle(VirreqError):
    code = "malformed_rle"


class UnknownConcept(VirreqError):
    code = "unknown_concept"


class DuplicateLabel(VirreqError):
    code = "duplicate_label"


class UnknownKbVersion(VirreqError):
    code = "unknown_kb_version"


class MalformedKb(VirreqError):
    code = "malformed_kb"


class AlternationViolation(VirreqError):
    code = "alternation_violation"


class NotASubclass(VirreqError):
    code = "not_a_subclass"


class OverlapViolation(VirreqError):
    code = "overlap_violation"


class MalformedTree(VirreqError):
    code = "malformed_tree"


class InvalidTree(VirreqError):
    code = "invalid_tree"


class WrongKind(VirreqError):
    code = "wrong_kind"


class EmptyRegion(VirreqError):
    code = "empty_region"


class DimMismatch(VirreqError):
    code = "dim_mismatch"


class UnknownLabel(VirreqError):
    code = "unknown_label"


class MissingPrediction(VirreqError):
    code = "missing_prediction"


class BackendError(VirreqError):
    code = "backend_error"


class NoCandidate(VirreqError):
    code = "no_candidate"


class SessionClosed(VirreqError):
    code = "session_closed"


class ClassMismatch(VirreqError):
    code = "class_mismatch"


class VersionMismatch(VirreqError):
    code = "version_mismatch"


class DepthExceeded(VirreqError):
    code = "depth_exceeded"


class InfeasibleSpec(VirreqError):
    code = "infeasible_spec"


class MalformedBlob(VirreqError):
    code = "malformed_blob"
