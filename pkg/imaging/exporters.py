"""
Human-readable exports: PGM previews, CSV tables and JSON documents
"""
import json
from pathlib import Path
from typing import Any, Dict, List, Mapping, Sequence, Union

import numpy as np
import pandas as pd

from imaging.containers import Image2D
from utils.errors import IoFailureError
from utils.logger import moco_logger

Table = Union[pd.DataFrame, Mapping[str, Any], Sequence[Mapping[str, Any]]]


def window_to_uint8(img: Image2D) -> np.ndarray:
    """
    Min-max window an image to 0..255

    A constant image has no range and maps to mid-gray 128.
    """
    data = img.data.astype(np.float64)
    lo, hi = float(data.min()), float(data.max())
    if hi <= lo:
        moco_logger.debug("Constant image exported as mid-gray")
        return np.full(data.shape, 128, dtype=np.uint8)
    scaled = np.round((data - lo) / (hi - lo) * 255.0)
    return np.clip(scaled, 0, 255).astype(np.uint8)


def export_pgm(img: Image2D, path: Union[str, Path]):
    """Write a binary (P5) PGM with maxval 255"""
    pixels = window_to_uint8(img)
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    try:
        Path(path).write_bytes(header + pixels.tobytes(order="C"))
    except OSError as e:
        raise IoFailureError(f"Cannot write {path}: {e}") from e


def _as_frame(table: Table) -> pd.DataFrame:
    if isinstance(table, pd.DataFrame):
        return table
    if isinstance(table, Mapping):
        return pd.DataFrame([dict(table)])
    return pd.DataFrame([dict(row) for row in table])


def export_csv(table: Table, path: Union[str, Path], columns: List[str] = None):
    """Write a CSV with a header row, '.' decimals and LF line endings"""
    frame = _as_frame(table)
    if columns is not None:
        frame = frame.reindex(columns=columns)
    try:
        frame.to_csv(path, index=False, lineterminator="\n", float_format=None)
    except OSError as e:
        raise IoFailureError(f"Cannot write {path}: {e}") from e


def export_json(document: Dict[str, Any], path: Union[str, Path]):
    """Write a JSON document with sorted keys (stable across runs); NaN and infinities become null"""
    text = json.dumps(_finite(document), indent=2, sort_keys=True, default=_json_default, allow_nan=False)
    try:
        Path(path).write_text(text + "\n")
    except OSError as e:
        raise IoFailureError(f"Cannot write {path}: {e}") from e


def _finite(value: Any) -> Any:
    if isinstance(value, (float, np.floating)):
        return float(value) if np.isfinite(value) else None
    if isinstance(value, np.ndarray):
        return _finite(value.tolist())
    if isinstance(value, Mapping):
        return {key: _finite(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_finite(item) for item in value]
    return value


def _json_default(value: Any):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"{type(value).__name__} is not JSON serializable")
