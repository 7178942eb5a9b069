# -*- coding: utf-8 -*-

"""
This module contains the set of ah_detect exceptions.
"""

from typing import Iterable, Optional


class AhDetectError(Exception):
    """Base class for exceptions in this module."""

    pass


class DomainError(AhDetectError, ValueError):
    """
    Exception raised when a value falls outside its permitted domain
    (labels, durations, strategies, accuracies)
    """

    pass


class PreconditionError(AhDetectError):
    """
    Exception raised when an operation is called on input that has not
    gone through a required earlier step
    """

    pass


class ManifestParseError(AhDetectError):
    """
    Exception raised when an annotation manifest record cannot be parsed
    """

    def __init__(self, message: str, line: Optional[int] = None) -> None:
        self.line = line
        if line is not None:
            message = f"Line {line}: {message}"
        super().__init__(message)


class DuplicateVideoError(ManifestParseError):
    """
    Exception raised when two manifest records share a `video_id`
    """

    pass


class InconsistentAnnotationError(AhDetectError):
    """
    Exception raised when a positive video has no annotated segment left
    after validation
    """

    pass


class MediaToolError(AhDetectError):
    """
    Exceptions raised when ffmpeg/ffprobe is missing or exits with an error
    """

    def __init__(
        self, message: str, returncode: Optional[int] = None, stderr: str = ""
    ) -> None:
        self.returncode = returncode
        self.stderr = stderr
        if stderr:
            message = f"{message}. Tool diagnostics: {stderr.strip()[-500:]}"
        super().__init__(message)


class MediaFormatError(AhDetectError):
    """
    Exception raised when a media file cannot be understood by the prober
    """

    pass


class ModalityMissingError(AhDetectError):
    """
    Exception raised when a required stream (audio) is absent
    """

    pass


class EndpointError(AhDetectError):
    """
    Exceptions raised on HTTP errors returned by a model endpoint
    """

    def __init__(self, message: str, status_code: Optional[int] = None) -> None:
        self.status_code = status_code
        super().__init__(message)


class TransportError(AhDetectError):
    """
    Exception raised when a model endpoint cannot be reached or retries
    are exhausted
    """

    pass


class TieError(AhDetectError):
    """
    Exception raised when a majority vote ends in a tie and ties are not allowed
    """

    pass


class CoverageError(AhDetectError):
    """
    Exception raised when predictions and ground truth cover different videos
    """

    def __init__(self, missing: Iterable[str], extra: Iterable[str]) -> None:
        self.missing = sorted(missing)
        self.extra = sorted(extra)
        super().__init__(
            f"Predictions do not cover ground truth. Missing: {self.missing}; "
            f"extra: {self.extra}."
        )


class ConfigError(AhDetectError):
    """
    Exception raised when the run configuration is invalid
    """

    pass
