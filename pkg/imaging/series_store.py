"""
Series directories: manifest.json plus one tensor file per frame and mask
"""
import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from config.constants import TENSOR_SUFFIX
from imaging.containers import T1Series
from imaging.exporters import export_json
from imaging.tensor_store import load_image, load_mask, save_tensor
from utils.errors import BadSeriesError, IoFailureError

MANIFEST_NAME = "manifest.json"


class SeriesManifest(BaseModel):
    """Index of a series directory"""
    model_config = ConfigDict(extra="forbid")

    inversion_times: List[float]
    reference_index: int
    frames: List[str]
    masks: Optional[List[str]] = None
    ground_truth: Dict[str, Any] = Field(default_factory=dict)
    seed: Optional[int] = None


def frame_name(index: int) -> str:
    return f"frame_{index:02d}{TENSOR_SUFFIX}"


def mask_name(index: int) -> str:
    return f"mask_{index:02d}{TENSOR_SUFFIX}"


def save_series(series: T1Series, directory: Union[str, Path], ground_truth: Optional[Dict[str, Any]] = None,
                seed: Optional[int] = None) -> SeriesManifest:
    """
    Write a series directory

    Args:
        series: Series to write
        directory: Target directory, created if missing
        ground_truth: Extra manifest entries (relative paths of ground-truth files)
        seed: Seed echoed into the manifest

    Returns:
        The written manifest
    """
    root = Path(directory)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise IoFailureError(f"Cannot create {root}: {e}") from e

    frames = []
    for index, frame in enumerate(series.frames):
        save_tensor(frame, root / frame_name(index))
        frames.append(frame_name(index))
    masks = None
    if series.masks is not None:
        masks = []
        for index, mask in enumerate(series.masks):
            save_tensor(mask, root / mask_name(index))
            masks.append(mask_name(index))

    manifest = SeriesManifest(
        inversion_times=list(series.inversion_times),
        reference_index=series.reference,
        frames=frames,
        masks=masks,
        ground_truth=ground_truth or {},
        seed=seed,
    )
    export_json(manifest.model_dump(), root / MANIFEST_NAME)
    return manifest


def read_manifest(directory: Union[str, Path]) -> SeriesManifest:
    path = Path(directory) / MANIFEST_NAME
    try:
        document = json.loads(path.read_text())
    except OSError as e:
        raise IoFailureError(f"Cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise BadSeriesError(f"Malformed manifest {path}: {e}") from e
    try:
        return SeriesManifest.model_validate(document)
    except ValidationError as e:
        raise BadSeriesError(f"Invalid manifest {path}: {e}") from e


def load_series(directory: Union[str, Path]) -> T1Series:
    """Read a series directory written by save_series"""
    root = Path(directory)
    manifest = read_manifest(root)
    frames = [load_image(root / name) for name in manifest.frames]
    masks = [load_mask(root / name) for name in manifest.masks] if manifest.masks else None
    return T1Series(
        frames=frames,
        inversion_times=manifest.inversion_times,
        masks=masks,
        reference_index=manifest.reference_index,
    )
