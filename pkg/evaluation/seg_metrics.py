"""
Segmentation overlap and contour distance metrics
"""
from typing import Tuple

import numpy as np
from scipy import ndimage
from scipy.spatial.distance import directed_hausdorff

from config.constants import LABEL_MYOCARDIUM
from imaging.containers import LabelMask, check_same_grid
from utils.errors import EmptyMaskError

FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)


def dsc(a: LabelMask, b: LabelMask, class_id: int = LABEL_MYOCARDIUM) -> float:
    """2|A∩B| / (|A| + |B|) for one class; 1.0 when the class is absent from both"""
    check_same_grid(a.shape, b.shape)
    in_a, in_b = a.binary(class_id), b.binary(class_id)
    total = int(in_a.sum()) + int(in_b.sum())
    if total == 0:
        return 1.0
    return 2.0 * float(np.logical_and(in_a, in_b).sum()) / total


def boundary(region: np.ndarray) -> np.ndarray:
    """Region pixels with at least one 4-neighbour outside the region (grid edge counts as outside)"""
    region = region.astype(bool)
    interior = ndimage.binary_erosion(region, structure=FOUR_CONNECTED, border_value=0)
    return region & ~interior


def _points(pixels: np.ndarray) -> np.ndarray:
    return np.argwhere(pixels).astype(np.float64)


def hausdorff_points(a: np.ndarray, b: np.ndarray) -> float:
    """Symmetric Hausdorff distance between two non-empty (N, 2) point sets"""
    return max(directed_hausdorff(a, b)[0], directed_hausdorff(b, a)[0])


def hausdorff(a: LabelMask, b: LabelMask, class_id: int = LABEL_MYOCARDIUM) -> float:
    """
    Hausdorff distance in pixels between the boundaries of one class

    Raises:
        EmptyMaskError: if either mask lacks the class
    """
    check_same_grid(a.shape, b.shape)
    in_a, in_b = a.binary(class_id), b.binary(class_id)
    if not in_a.any() or not in_b.any():
        raise EmptyMaskError(f"Class {class_id} is empty in {'first' if not in_a.any() else 'second'} mask")
    return hausdorff_points(_points(boundary(in_a)), _points(boundary(in_b)))


def annulus_contours(mask: LabelMask, class_id: int = LABEL_MYOCARDIUM) -> Tuple[np.ndarray, np.ndarray]:
    """
    Split the boundary of an annular class into endocardial and epicardial parts

    The complement of the class is labeled into connected components; the
    components touching the grid edge are outside, the rest form the cavity.
    Boundary pixels adjacent to the cavity are endocardial, those adjacent to
    the outside epicardial.

    Returns:
        (endo, epi) boolean maps; either may be empty
    """
    region = mask.binary(class_id)
    edge = boundary(region)
    components, count = ndimage.label(~region, structure=FOUR_CONNECTED)
    border_ids = np.unique(np.concatenate([
        components[0, :], components[-1, :], components[:, 0], components[:, -1]
    ]))
    border_ids = border_ids[border_ids > 0]
    outside = np.isin(components, border_ids)
    cavity = (components > 0) & ~outside

    endo = edge & ndimage.binary_dilation(cavity, structure=FOUR_CONNECTED)
    epi = edge & ndimage.binary_dilation(outside, structure=FOUR_CONNECTED)
    return endo, epi


def contour_hausdorff(a: LabelMask, b: LabelMask, class_id: int = LABEL_MYOCARDIUM) -> Tuple[float, float]:
    """
    (HD_endo, HD_epi) between two annular masks

    A contour missing from either mask yields NaN for that contour.
    """
    check_same_grid(a.shape, b.shape)
    if not a.binary(class_id).any() or not b.binary(class_id).any():
        raise EmptyMaskError(f"Class {class_id} is empty")
    endo_a, epi_a = annulus_contours(a, class_id)
    endo_b, epi_b = annulus_contours(b, class_id)

    def _distance(x: np.ndarray, y: np.ndarray) -> float:
        if not x.any() or not y.any():
            return float("nan")
        return hausdorff_points(_points(x), _points(y))

    return _distance(endo_a, endo_b), _distance(epi_a, epi_b)
