import warnings

import numpy as np
import pytest
import torch

from imaging.containers import AffineParams, DisplacementField, Image2D, LabelMask
from registration.warp import (
    DTYPE, affine_to_field, approx_inverse, compose, folding_count, jacobian_det, t_warp, to_tensor, warp_field,
    warp_image, warp_labels
)
from utils.errors import GridMismatchError, GridTooSmallError


def _bump_field(size: int, amplitude: float, sigma: float = 12.0) -> DisplacementField:
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    centre = (size - 1) / 2.0
    bump = amplitude * np.exp(-((xs - centre) ** 2 + (ys - centre) ** 2) / (2.0 * sigma ** 2))
    return DisplacementField(u=np.stack([bump, np.zeros_like(bump)], axis=-1))


def _interior_residual(field: DisplacementField) -> float:
    residual = compose(field, approx_inverse(field)).u.astype(np.float64)
    return float(np.sqrt((residual ** 2).sum(axis=-1)).max())


def test_zero_field_is_identity(blob_image):
    moved = warp_image(blob_image, DisplacementField.zeros(*blob_image.shape))
    np.testing.assert_array_equal(moved.data, blob_image.data)


def test_integer_shift_moves_pixels(blob_image):
    moved = warp_image(blob_image, DisplacementField.constant(*blob_image.shape, 2.0, -1.0))
    np.testing.assert_allclose(moved.data[1:, :-2], blob_image.data[:-1, 2:], atol=1e-6)


def test_half_pixel_shift_averages_neighbours():
    img = Image2D(data=np.array([[0.0, 2.0, 4.0], [0.0, 2.0, 4.0]]))
    moved = warp_image(img, DisplacementField.constant(2, 3, 0.5, 0.0))
    np.testing.assert_allclose(moved.data, [[1.0, 3.0, 4.0], [1.0, 3.0, 4.0]])


def test_border_is_clamped():
    img = Image2D(data=np.array([[1.0, 2.0], [3.0, 4.0]]))
    moved = warp_image(img, DisplacementField.constant(2, 2, -5.0, 9.0))
    np.testing.assert_array_equal(moved.data, [[3.0, 3.0], [3.0, 3.0]])


def test_constant_image_stays_constant(rng):
    img = Image2D(data=np.full((8, 9), 0.25))
    moved = warp_image(img, DisplacementField(u=rng.normal(scale=2.0, size=(8, 9, 2))))
    assert (moved.data == np.float32(0.25)).all()


def test_grid_mismatch():
    with pytest.raises(GridMismatchError):
        warp_image(Image2D.zeros(4, 4), DisplacementField.zeros(4, 5))


def test_compose_matches_sequential_warps(blob_image):
    f = DisplacementField.constant(*blob_image.shape, 1.0, 0.0)
    g = DisplacementField.constant(*blob_image.shape, 0.0, 2.0)
    direct = warp_image(blob_image, compose(f, g))
    sequential = warp_image(warp_image(blob_image, f), g)
    np.testing.assert_allclose(direct.data[:-3, :-2], sequential.data[:-3, :-2], atol=1e-6)


def test_warp_field_resamples_components():
    inner = DisplacementField.constant(5, 5, 1.5, -0.5)
    by = DisplacementField.constant(5, 5, 1.0, 1.0)
    np.testing.assert_array_equal(warp_field(inner, by).u, inner.u)


def test_linear_field_jacobian():
    ys, xs = np.mgrid[0:10, 0:12].astype(np.float64)
    a, b = 0.1, -0.2
    field = DisplacementField(u=np.stack([a * xs, b * ys], axis=-1))
    det = jacobian_det(field).data
    np.testing.assert_allclose(det[1:-1, 1:-1], (1 + a) * (1 + b), atol=1e-6)


def test_zero_field_jacobian_and_folding():
    field = DisplacementField.zeros(6, 6)
    assert (jacobian_det(field).data == 1.0).all()
    assert folding_count(field) == 0


def test_folding_detected_for_reversal():
    xs = np.mgrid[0:8, 0:8][1].astype(np.float64)
    field = DisplacementField(u=np.stack([-2.0 * xs, np.zeros_like(xs)], axis=-1))
    assert folding_count(field) == 64


def test_jacobian_needs_three_pixels():
    with pytest.raises(GridTooSmallError):
        jacobian_det(DisplacementField.zeros(2, 5))


def test_constant_field_inverts_exactly():
    field = DisplacementField.constant(16, 16, 1.25, -0.75)
    np.testing.assert_array_equal(approx_inverse(field).u, -field.u)
    assert _interior_residual(field) == 0.0


def test_inverse_residual_grows_with_amplitude():
    residuals = [_interior_residual(_bump_field(64, d)) for d in (0.5, 1.0, 2.0)]
    assert residuals[0] < residuals[1] < residuals[2]
    assert residuals[1] <= 0.15


def test_identity_affine_gives_zero_field():
    field = affine_to_field(AffineParams.identity(), 9, 7)
    assert field.shape == (7, 9)
    assert field.max_displacement() < 1e-5


def test_affine_translation_in_pixels():
    theta = np.array([[1.0, 0.0, 0.5], [0.0, 1.0, -0.25]])
    field = affine_to_field(AffineParams(theta=theta), 11, 9)
    np.testing.assert_allclose(field.u[..., 0], 0.5 * 10 / 2, atol=1e-5)
    np.testing.assert_allclose(field.u[..., 1], -0.25 * 8 / 2, atol=1e-5)


def test_warp_labels_keeps_ids():
    labels = np.zeros((10, 10), dtype=np.uint8)
    labels[3:7, 3:7] = 2
    labels[4:6, 4:6] = 1
    mask = LabelMask(labels=labels, num_classes=3)
    moved = warp_labels(mask, DisplacementField.constant(10, 10, -1.0, 0.0))
    assert moved.num_classes == 3
    np.testing.assert_array_equal(moved.labels[:, 1:], labels[:, :-1])


def test_warp_is_differentiable_in_field(rng):
    src = to_tensor(rng.normal(size=(6, 6)))
    field = to_tensor(rng.uniform(0.1, 0.9, size=(6, 6, 2))).requires_grad_(True)
    t_warp(src, field).sum().backward()
    assert torch.isfinite(field.grad).all()
    assert field.grad.abs().sum() > 0


def test_to_tensor_copies_read_only_arrays(blob_image):
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        tensor = to_tensor(blob_image.data)
    assert tensor.dtype == DTYPE
    tensor += 1.0
    assert np.allclose(blob_image.data + 1.0, tensor.numpy())
