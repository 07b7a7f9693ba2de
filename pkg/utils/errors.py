"""
Exception hierarchy shared by every package
"""
from typing import Any, Dict, Optional

from config.constants import EXIT_FAILURE, EXIT_IO, EXIT_USAGE


class MocoError(Exception):
    """Base class for all engine errors"""

    exit_code = EXIT_FAILURE

    def to_dict(self) -> Dict[str, Any]:
        return {"error": type(self).__name__, "message": str(self)}


class ConfigError(MocoError):
    exit_code = EXIT_USAGE


class IoFailureError(MocoError):
    exit_code = EXIT_IO


class TensorFormatError(MocoError):
    """Malformed tensor container; carries the byte offset of the problem"""

    exit_code = EXIT_IO

    def __init__(self, message: str, offset: int, path: Optional[str] = None):
        location = f" in {path}" if path else ""
        super().__init__(f"{message} at byte {offset}{location}")
        self.offset = offset
        self.path = path

    def to_dict(self) -> Dict[str, Any]:
        payload = super().to_dict()
        payload["offset"] = self.offset
        return payload


class BadMagicError(TensorFormatError):
    pass


class VersionMismatchError(TensorFormatError):
    pass


class KindMismatchError(TensorFormatError):
    pass


class TruncatedPayloadError(TensorFormatError):
    pass


class NonFiniteDataError(TensorFormatError):
    pass


class InvalidContainerError(MocoError):
    pass


class GridMismatchError(MocoError):
    pass


class GridTooSmallError(MocoError):
    pass


class DegenerateImageError(MocoError):
    pass


class NoLabelsError(MocoError):
    pass


class EmptyMaskError(MocoError):
    pass


class BadSeriesError(MocoError):
    pass


class NonFiniteLossError(MocoError):
    pass


class InvalidSpecError(MocoError):
    exit_code = EXIT_USAGE
