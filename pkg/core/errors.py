#!/usr/bin/env python3
"""
Exception types for the video pointing toolkit
"""


class ToolkitError(Exception):
    """Base class for every error raised on purpose by the toolkit."""


class InvalidInputError(ToolkitError, ValueError):
    """Rejected input: mismatched dimensions or rosters, out-of-range indices, bad shapes."""


class MalformedDataError(ToolkitError, ValueError):
    """A file or byte container that does not decode to a consistent value."""


class AnnotationError(ToolkitError, RuntimeError):
    """The segment oracle failed for one (frame, object) annotation task."""


class VerificationError(ToolkitError, RuntimeError):
    """A numerical check ran to completion but did not pass its threshold."""
