"""
Image pyramids for coarse-to-fine solving
"""
from typing import List, Sequence

import torch
import torch.nn.functional as F

from registration.warp import DTYPE, identity_grid, t_sample


def downsample(img: torch.Tensor) -> torch.Tensor:
    """3x3 box prefilter with replicate padding, then every second pixel; (..., H, W)"""
    leading = img.shape[:-2]
    flat = img.reshape(-1, 1, img.shape[-2], img.shape[-1])
    padded = F.pad(flat, (1, 1, 1, 1), mode="replicate")
    kernel = torch.full((1, 1, 3, 3), 1.0 / 9.0, dtype=DTYPE)
    smoothed = F.conv2d(padded, kernel)[:, :, ::2, ::2]
    return smoothed.reshape(*leading, smoothed.shape[-2], smoothed.shape[-1])


def level_shapes(height: int, width: int, levels: int, min_size: int) -> List[tuple]:
    """
    Grid shapes from finest to coarsest

    Halving stops early once a further level would drop below min_size on
    either axis, so short pyramids are returned for small grids.
    """
    shapes = [(height, width)]
    while len(shapes) < levels:
        h, w = shapes[-1]
        nh, nw = (h + 1) // 2, (w + 1) // 2
        if nh < min_size or nw < min_size:
            break
        shapes.append((nh, nw))
    return shapes


def build_pyramid(img: torch.Tensor, levels: int, min_size: int) -> List[torch.Tensor]:
    """Images from coarsest to finest"""
    shapes = level_shapes(img.shape[-2], img.shape[-1], levels, min_size)
    pyramid = [img]
    for _ in shapes[1:]:
        pyramid.append(downsample(pyramid[-1]))
    return pyramid[::-1]


def upsample_field(field: torch.Tensor, height: int, width: int) -> torch.Tensor:
    """
    Bilinearly resample a coarse (h, w, 2) field onto a (height, width) grid

    Fine pixel x maps to coarse coordinate x/2 and displacements double.
    """
    grid_x, grid_y = identity_grid(height, width)
    components = t_sample(field.permute(2, 0, 1), grid_x / 2.0, grid_y / 2.0)
    return 2.0 * components.permute(1, 2, 0)


def iterations_for(levels: int, iters_per_level: Sequence[int]) -> List[int]:
    """Per-level iteration counts, coarse to fine, for a pyramid of the given depth"""
    counts = list(iters_per_level)
    if len(counts) >= levels:
        return counts[len(counts) - levels:]
    return [counts[0]] * (levels - len(counts)) + counts
