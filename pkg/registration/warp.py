"""
Displacement-field algebra: bilinear warping, composition, approximate
inversion, Jacobian determinants and folding statistics.

Tensor-level functions (prefixed ``t_``) work on float64 torch tensors and
are differentiable; the public functions wrap them for the grid containers.
Images are (H, W) or (C, H, W) tensors, fields are (H, W, 2) with channel 0
holding ux and channel 1 holding uy. Sampling clamps coordinates to the grid
rectangle (border replication).
"""
from typing import Tuple

import numpy as np
import torch

from imaging.containers import AffineParams, DisplacementField, Image2D, LabelMask, check_same_grid
from utils.errors import GridMismatchError, GridTooSmallError, InvalidContainerError

DTYPE = torch.float64


def to_tensor(array: np.ndarray) -> torch.Tensor:
    """float64 tensor on a private copy; container arrays are read-only"""
    return torch.from_numpy(np.array(array, dtype=np.float64, copy=True))


def identity_grid(height: int, width: int) -> Tuple[torch.Tensor, torch.Tensor]:
    """Pixel coordinate grids (x, y), each (H, W)"""
    ys = torch.arange(height, dtype=DTYPE)
    xs = torch.arange(width, dtype=DTYPE)
    grid_y, grid_x = torch.meshgrid(ys, xs, indexing="ij")
    return grid_x, grid_y


def t_sample(src: torch.Tensor, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """
    Bilinear sampling of src at pixel coordinates (x, y) with clamp-to-edge

    Interpolation is written as nested lerps so that equal neighbours
    reproduce their value exactly and integer coordinates return the stored
    sample bit-for-bit.

    Args:
        src: (H, W) or (C, H, W) tensor
        x, y: (h, w) sample coordinates in pixels

    Returns:
        (h, w) or (C, h, w) tensor
    """
    height, width = src.shape[-2], src.shape[-1]
    x = x.clamp(0.0, width - 1.0)
    y = y.clamp(0.0, height - 1.0)
    x0 = torch.floor(x).detach()
    y0 = torch.floor(y).detach()
    wx = x - x0
    wy = y - y0
    ix0 = x0.long()
    iy0 = y0.long()
    ix1 = (ix0 + 1).clamp(max=width - 1)
    iy1 = (iy0 + 1).clamp(max=height - 1)

    v00 = src[..., iy0, ix0]
    v01 = src[..., iy0, ix1]
    v10 = src[..., iy1, ix0]
    v11 = src[..., iy1, ix1]
    top = v00 + wx * (v01 - v00)
    bottom = v10 + wx * (v11 - v10)
    return top + wy * (bottom - top)


def t_warp(src: torch.Tensor, field: torch.Tensor) -> torch.Tensor:
    """out(p) = src(p + u(p)); src (H, W) or (C, H, W), field (H, W, 2)"""
    height, width = field.shape[0], field.shape[1]
    if src.shape[-2:] != (height, width):
        raise GridMismatchError(f"Grid mismatch: {tuple(src.shape[-2:])} vs {(height, width)}")
    grid_x, grid_y = identity_grid(height, width)
    return t_sample(src, grid_x + field[..., 0], grid_y + field[..., 1])


def t_warp_field(inner: torch.Tensor, by: torch.Tensor) -> torch.Tensor:
    """Resample each component of inner at p + by(p)"""
    if inner.shape != by.shape:
        raise GridMismatchError(f"Grid mismatch: {tuple(inner.shape)} vs {tuple(by.shape)}")
    warped = t_warp(inner.permute(2, 0, 1), by)
    return warped.permute(1, 2, 0)


def t_approx_inverse(field: torch.Tensor) -> torch.Tensor:
    """inv(p) = -u(p + u(p)): the field warped by itself, negated"""
    return -t_warp_field(field, field)


def t_compose(f: torch.Tensor, g: torch.Tensor) -> torch.Tensor:
    """(f ⊕ g)(p) = g(p) + f(p + g(p))"""
    return g + t_warp_field(f, g)


def t_spatial_gradient(values: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    d/dx and d/dy of a (..., H, W) tensor

    Central differences in the interior, one-sided at the borders, so both
    are exact for linear functions.
    """
    d_dy, d_dx = torch.gradient(values, dim=(-2, -1), edge_order=1)
    return d_dx, d_dy


def t_jacobian_det(field: torch.Tensor) -> torch.Tensor:
    """Per-pixel det(I + grad u) of a (H, W, 2) field"""
    if field.shape[0] < 3 or field.shape[1] < 3:
        raise GridTooSmallError(f"Jacobian needs a grid of at least 3x3, got {field.shape[0]}x{field.shape[1]}")
    dux_dx, dux_dy = t_spatial_gradient(field[..., 0])
    duy_dx, duy_dy = t_spatial_gradient(field[..., 1])
    return (1.0 + dux_dx) * (1.0 + duy_dy) - dux_dy * duy_dx


def t_affine_to_field(theta: torch.Tensor, width: int, height: int) -> torch.Tensor:
    """
    Displacement realizing the affine map theta on normalized coordinates

    A pixel (x, y) is normalized to x_n = 2x/(W-1) - 1, y_n = 2y/(H-1) - 1,
    mapped by theta, and converted back to pixels; the displacement is the
    difference to (x, y).
    """
    grid_x, grid_y = identity_grid(height, width)
    xn = 2.0 * grid_x / (width - 1) - 1.0
    yn = 2.0 * grid_y / (height - 1) - 1.0
    xn_t = theta[0, 0] * xn + theta[0, 1] * yn + theta[0, 2]
    yn_t = theta[1, 0] * xn + theta[1, 1] * yn + theta[1, 2]
    x_t = (xn_t + 1.0) * (width - 1) / 2.0
    y_t = (yn_t + 1.0) * (height - 1) / 2.0
    return torch.stack([x_t - grid_x, y_t - grid_y], dim=-1)


def t_one_hot(labels: np.ndarray, num_classes: int, include_background: bool = True) -> torch.Tensor:
    start = 0 if include_background else 1
    classes = np.arange(start, num_classes)
    return to_tensor((labels[None, :, :] == classes[:, None, None]).astype(np.float64))


def _image(values: torch.Tensor) -> Image2D:
    return Image2D(data=values.detach().cpu().numpy())


def _field(values: torch.Tensor) -> DisplacementField:
    return DisplacementField(u=values.detach().cpu().numpy())


def warp_image(img: Image2D, field: DisplacementField) -> Image2D:
    """Warp an image: out(p) = img(p + u(p)), bilinear with border clamping"""
    check_same_grid(img.shape, field.shape)
    return _image(t_warp(to_tensor(img.data), to_tensor(field.u)))


def warp_field(inner: DisplacementField, by: DisplacementField) -> DisplacementField:
    """Resample every component of inner at p + by(p)"""
    check_same_grid(inner.shape, by.shape)
    return _field(t_warp_field(to_tensor(inner.u), to_tensor(by.u)))


def approx_inverse(field: DisplacementField) -> DisplacementField:
    """One-step inverse: the field warped by itself, negated (exact for constants)"""
    return _field(t_approx_inverse(to_tensor(field.u)))


def compose(f: DisplacementField, g: DisplacementField) -> DisplacementField:
    """(f ⊕ g)(p) = g(p) + f(p + g(p)); warping by f ⊕ g equals warping by f then g"""
    check_same_grid(f.shape, g.shape)
    return _field(t_compose(to_tensor(f.u), to_tensor(g.u)))


def jacobian_det(field: DisplacementField) -> Image2D:
    """Per-pixel Jacobian determinant of p -> p + u(p)"""
    return _image(t_jacobian_det(to_tensor(field.u)))


def folding_count(field: DisplacementField) -> int:
    """Number of pixels with a non-positive Jacobian determinant"""
    return int((t_jacobian_det(to_tensor(field.u)) <= 0).sum().item())


def affine_to_field(a: AffineParams, width: int, height: int) -> DisplacementField:
    """Displacement field equivalent of the affine map a on a width x height grid"""
    if width < 2 or height < 2:
        raise InvalidContainerError(f"Affine grid needs at least 2x2 pixels, got {height}x{width}")
    return _field(t_affine_to_field(to_tensor(a.theta), width, height))


def warp_labels(mask: LabelMask, field: DisplacementField) -> LabelMask:
    """Warp a mask through its one-hot encoding and take the arg-max class"""
    check_same_grid(mask.shape, field.shape)
    soft = t_warp(t_one_hot(mask.labels, mask.num_classes), to_tensor(field.u))
    labels = torch.argmax(soft, dim=0).cpu().numpy().astype(np.uint8)
    return LabelMask(labels=labels, num_classes=mask.num_classes)
