"""
Binary tensor container: "T1MC" | version u8 | kind u8 | ndim u8 | reserved u8 |
dims u32 LE | little-endian row-major payload
"""
import struct
from pathlib import Path
from typing import Optional, Union

import numpy as np

from config.constants import (
    HEADER_PREFIX_SIZE, KIND_FIELD, KIND_IMAGE, KIND_MASK, KIND_NAMES, TENSOR_MAGIC, TENSOR_VERSION
)
from imaging.containers import DisplacementField, Image2D, LabelMask
from utils.errors import (
    BadMagicError, InvalidContainerError, IoFailureError, KindMismatchError, NonFiniteDataError,
    TruncatedPayloadError, VersionMismatchError
)
from utils.logger import moco_logger

Tensor = Union[Image2D, DisplacementField, LabelMask]

_PAYLOAD_DTYPES = {
    KIND_IMAGE: np.dtype("<f4"),
    KIND_FIELD: np.dtype("<f4"),
    KIND_MASK: np.dtype("u1"),
}
_EXPECTED_NDIM = {KIND_IMAGE: 2, KIND_FIELD: 3, KIND_MASK: 2}


class TensorCodec:
    """Encodes and decodes tensor containers to and from bytes"""

    @staticmethod
    def kind_of(obj: Tensor) -> int:
        if isinstance(obj, Image2D):
            return KIND_IMAGE
        if isinstance(obj, DisplacementField):
            return KIND_FIELD
        if isinstance(obj, LabelMask):
            return KIND_MASK
        raise InvalidContainerError(f"Cannot serialize {type(obj).__name__}")

    def encode(self, obj: Tensor) -> bytes:
        """
        Serialize a container

        Args:
            obj: Image2D, DisplacementField or LabelMask

        Returns:
            Header followed by the payload
        """
        kind = self.kind_of(obj)
        if kind == KIND_IMAGE:
            array, reserved = obj.data, 0
        elif kind == KIND_FIELD:
            array, reserved = obj.u, 0
        else:
            array, reserved = obj.labels, obj.num_classes

        payload = np.ascontiguousarray(array, dtype=_PAYLOAD_DTYPES[kind])
        if kind != KIND_MASK:
            finite = np.isfinite(payload)
            if not finite.all():
                index = int(np.flatnonzero(~finite.ravel())[0])
                offset = HEADER_PREFIX_SIZE + 4 * payload.ndim + index * payload.itemsize
                raise NonFiniteDataError("Refusing to write non-finite value", offset)

        header = TENSOR_MAGIC + struct.pack("<BBBB", TENSOR_VERSION, kind, payload.ndim, reserved)
        header += struct.pack(f"<{payload.ndim}I", *payload.shape)
        return header + payload.tobytes(order="C")

    def decode(self, blob: bytes, expected_kind: Optional[int] = None, path: Optional[str] = None) -> Tensor:
        """
        Parse a container, validating every header field

        Args:
            blob: File contents
            expected_kind: Required kind, or None to accept any
            path: Source path for error messages

        Returns:
            Decoded container
        """
        if len(blob) < 4 or blob[:4] != TENSOR_MAGIC:
            raise BadMagicError(f"Expected magic {TENSOR_MAGIC!r}, found {bytes(blob[:4])!r}", 0, path)
        if len(blob) < HEADER_PREFIX_SIZE:
            raise TruncatedPayloadError("Header shorter than 8 bytes", len(blob), path)

        version, kind, ndim, reserved = struct.unpack_from("<BBBB", blob, 4)
        if version != TENSOR_VERSION:
            raise VersionMismatchError(f"Unsupported version {version}", 4, path)
        if kind not in _PAYLOAD_DTYPES:
            raise KindMismatchError(f"Unknown kind {kind}", 5, path)
        if expected_kind is not None and kind != expected_kind:
            raise KindMismatchError(
                f"Expected {KIND_NAMES[expected_kind]}, found {KIND_NAMES[kind]}", 5, path
            )
        if ndim != _EXPECTED_NDIM[kind]:
            raise KindMismatchError(f"{KIND_NAMES[kind]} needs ndim {_EXPECTED_NDIM[kind]}, found {ndim}", 6, path)

        dims_end = HEADER_PREFIX_SIZE + 4 * ndim
        if len(blob) < dims_end:
            raise TruncatedPayloadError("Dimension block truncated", len(blob), path)
        shape = struct.unpack_from(f"<{ndim}I", blob, HEADER_PREFIX_SIZE)
        if kind == KIND_FIELD and shape[2] != 2:
            raise KindMismatchError(f"Field needs 2 channels, found {shape[2]}", HEADER_PREFIX_SIZE + 8, path)

        dtype = _PAYLOAD_DTYPES[kind]
        expected_end = dims_end + int(np.prod(shape)) * dtype.itemsize
        if len(blob) < expected_end:
            raise TruncatedPayloadError(
                f"Payload needs {expected_end - dims_end} bytes, found {len(blob) - dims_end}", len(blob), path
            )
        if len(blob) > expected_end:
            raise TruncatedPayloadError("Trailing bytes after payload", expected_end, path)

        array = np.frombuffer(blob, dtype=dtype, count=int(np.prod(shape)), offset=dims_end).reshape(shape)
        if kind != KIND_MASK:
            finite = np.isfinite(array)
            if not finite.all():
                index = int(np.flatnonzero(~finite.ravel())[0])
                raise NonFiniteDataError("Non-finite value in payload", dims_end + index * dtype.itemsize, path)

        if kind == KIND_IMAGE:
            return Image2D(data=array)
        if kind == KIND_FIELD:
            return DisplacementField(u=array)
        num_classes = reserved if reserved > 0 else int(array.max(initial=0)) + 1
        return LabelMask(labels=array, num_classes=num_classes)


codec = TensorCodec()


def save_tensor(obj: Tensor, path: Union[str, Path]):
    """Write a container to path (bit-exact little-endian format)"""
    blob = codec.encode(obj)
    try:
        Path(path).write_bytes(blob)
    except OSError as e:
        raise IoFailureError(f"Cannot write {path}: {e}") from e
    moco_logger.log_tensor_io("write", str(path), KIND_NAMES[codec.kind_of(obj)], obj.shape)


def load_tensor(path: Union[str, Path], kind: Optional[int] = None) -> Tensor:
    """Read a container from path, optionally requiring a kind"""
    try:
        blob = Path(path).read_bytes()
    except OSError as e:
        raise IoFailureError(f"Cannot read {path}: {e}") from e
    obj = codec.decode(blob, expected_kind=kind, path=str(path))
    moco_logger.log_tensor_io("read", str(path), KIND_NAMES[codec.kind_of(obj)], obj.shape)
    return obj


def load_image(path: Union[str, Path]) -> Image2D:
    return load_tensor(path, KIND_IMAGE)


def load_field(path: Union[str, Path]) -> DisplacementField:
    return load_tensor(path, KIND_FIELD)


def load_mask(path: Union[str, Path]) -> LabelMask:
    return load_tensor(path, KIND_MASK)
