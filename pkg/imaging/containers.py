"""
Grid containers shared by every module

Conventions: row-major arrays, origin at the top-left, x = column index,
y = row index. Images and fields are float32, masks uint8. All arrays are
copied and made read-only on construction.
"""
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from config.constants import HEADER_PREFIX_SIZE
from utils.errors import BadSeriesError, GridMismatchError, InvalidContainerError, NonFiniteDataError


def _frozen(array: np.ndarray, dtype) -> np.ndarray:
    out = np.array(array, dtype=dtype, copy=True, order="C")
    out.setflags(write=False)
    return out


def _check_finite(array: np.ndarray, ndim: int):
    finite = np.isfinite(array)
    if not finite.all():
        index = int(np.flatnonzero(~finite.ravel())[0])
        offset = HEADER_PREFIX_SIZE + 4 * ndim + index * array.itemsize
        raise NonFiniteDataError(f"Non-finite value at element {index}", offset)


class Image2D(BaseModel):
    """Single-channel scalar image on a regular pixel grid"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    data: np.ndarray

    @field_validator("data", mode="before")
    @classmethod
    def _validate_data(cls, v):
        array = np.asarray(v)
        if array.ndim != 2:
            raise InvalidContainerError(f"Image2D needs a 2-D array, got shape {array.shape}")
        if array.shape[0] < 2 or array.shape[1] < 2:
            raise InvalidContainerError(f"Image2D needs at least 2x2 pixels, got {array.shape}")
        array = _frozen(array, np.float32)
        _check_finite(array, 2)
        return array

    @property
    def height(self) -> int:
        return int(self.data.shape[0])

    @property
    def width(self) -> int:
        return int(self.data.shape[1])

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.height, self.width)

    @classmethod
    def zeros(cls, height: int, width: int) -> "Image2D":
        return cls(data=np.zeros((height, width), dtype=np.float32))


class LabelMask(BaseModel):
    """Integer segmentation mask (0 = background)"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    labels: np.ndarray
    num_classes: int = 2

    @field_validator("labels", mode="before")
    @classmethod
    def _validate_labels(cls, v):
        array = np.asarray(v)
        if array.ndim != 2:
            raise InvalidContainerError(f"LabelMask needs a 2-D array, got shape {array.shape}")
        if array.size and (array.min() < 0 or array.max() > 255):
            raise InvalidContainerError("LabelMask ids must fit in uint8")
        return _frozen(array, np.uint8)

    @model_validator(mode="after")
    def _check_classes(self):
        if self.num_classes < 1 or self.num_classes > 255:
            raise InvalidContainerError(f"num_classes must be in [1, 255], got {self.num_classes}")
        if self.labels.size and int(self.labels.max()) >= self.num_classes:
            raise InvalidContainerError(
                f"Label id {int(self.labels.max())} not below num_classes={self.num_classes}"
            )
        return self

    @property
    def height(self) -> int:
        return int(self.labels.shape[0])

    @property
    def width(self) -> int:
        return int(self.labels.shape[1])

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.height, self.width)

    def binary(self, class_id: int) -> np.ndarray:
        """Boolean map of one class"""
        return self.labels == class_id

    def one_hot(self, include_background: bool = False) -> np.ndarray:
        """(K, H, W) float64 stack over foreground classes (or all classes)"""
        start = 0 if include_background else 1
        classes = np.arange(start, self.num_classes)
        return (self.labels[None, :, :] == classes[:, None, None]).astype(np.float64)


class DisplacementField(BaseModel):
    """Dense per-pixel displacement (ux, uy) in pixel units, shape (H, W, 2)"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    u: np.ndarray

    @field_validator("u", mode="before")
    @classmethod
    def _validate_u(cls, v):
        array = np.asarray(v)
        if array.ndim != 3 or array.shape[2] != 2:
            raise InvalidContainerError(f"DisplacementField needs shape (H, W, 2), got {array.shape}")
        if array.shape[0] < 2 or array.shape[1] < 2:
            raise InvalidContainerError(f"DisplacementField needs at least 2x2 pixels, got {array.shape}")
        array = _frozen(array, np.float32)
        _check_finite(array, 3)
        return array

    @property
    def height(self) -> int:
        return int(self.u.shape[0])

    @property
    def width(self) -> int:
        return int(self.u.shape[1])

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.height, self.width)

    @classmethod
    def zeros(cls, height: int, width: int) -> "DisplacementField":
        return cls(u=np.zeros((height, width, 2), dtype=np.float32))

    @classmethod
    def constant(cls, height: int, width: int, ux: float, uy: float) -> "DisplacementField":
        u = np.empty((height, width, 2), dtype=np.float32)
        u[..., 0] = ux
        u[..., 1] = uy
        return cls(u=u)

    def max_displacement(self) -> float:
        return float(np.sqrt((self.u.astype(np.float64) ** 2).sum(axis=-1)).max())


class AffineParams(BaseModel):
    """2x3 linear map acting on coordinates normalized to [-1, 1] per axis"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    theta: np.ndarray

    @field_validator("theta", mode="before")
    @classmethod
    def _validate_theta(cls, v):
        array = np.asarray(v, dtype=np.float64)
        if array.shape != (2, 3):
            raise InvalidContainerError(f"AffineParams needs a 2x3 matrix, got {array.shape}")
        if not np.isfinite(array).all():
            raise InvalidContainerError("AffineParams entries must be finite")
        return _frozen(array, np.float64)

    @classmethod
    def identity(cls) -> "AffineParams":
        return cls(theta=np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))


class T1Series(BaseModel):
    """Ordered inversion-recovery frames sharing one grid"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    frames: List[Image2D]
    inversion_times: List[float]
    masks: Optional[List[LabelMask]] = None
    reference_index: Optional[int] = None

    @model_validator(mode="after")
    def _check_series(self):
        count = len(self.frames)
        if count < 2:
            raise BadSeriesError(f"A series needs at least 2 frames, got {count}")
        if len(self.inversion_times) != count:
            raise BadSeriesError(
                f"{len(self.inversion_times)} inversion times for {count} frames"
            )
        tis = np.asarray(self.inversion_times, dtype=np.float64)
        if not np.isfinite(tis).all() or np.any(np.diff(tis) <= 0):
            raise BadSeriesError("Inversion times must be finite and strictly increasing")
        shape = self.frames[0].shape
        if any(frame.shape != shape for frame in self.frames):
            raise GridMismatchError("All frames of a series must share one grid")
        if self.masks is not None:
            if len(self.masks) != count:
                raise BadSeriesError(f"{len(self.masks)} masks for {count} frames")
            if any(mask.shape != shape for mask in self.masks):
                raise GridMismatchError("Masks must share the frame grid")
        if self.reference_index is not None and not 0 <= self.reference_index < count:
            raise BadSeriesError(f"reference_index {self.reference_index} outside [0, {count})")
        return self

    @property
    def num_frames(self) -> int:
        return len(self.frames)

    @property
    def reference(self) -> int:
        """Reference frame index (defaults to the last frame)"""
        return self.num_frames - 1 if self.reference_index is None else self.reference_index

    @property
    def shape(self) -> Tuple[int, int]:
        return self.frames[0].shape

    def stack(self) -> np.ndarray:
        """(F, H, W) float64 signal stack"""
        return np.stack([frame.data for frame in self.frames]).astype(np.float64)


def check_same_grid(*shapes: Tuple[int, int]):
    """Raise GridMismatchError unless all shapes agree"""
    if any(shape != shapes[0] for shape in shapes[1:]):
        raise GridMismatchError(f"Grid mismatch: {', '.join(f'{h}x{w}' for h, w in shapes)}")
