import numpy as np
import pytest
import torch

from imaging.containers import DisplacementField, Image2D, LabelMask
from registration.losses import (
    BREAKDOWN_TERMS, LossWeights, RegistrationLoss, affine_loss, anti_folding_loss, bidirectional_sim_loss,
    semi_supervised_seg_loss, smoothness_loss, soft_dice, total_reg_loss, weak_supervision_loss
)
from registration.similarity import WlsWeights, wls
from registration.warp import t_one_hot, to_tensor
from utils.errors import NoLabelsError

from tests.helpers import disk_mask, smooth_image


def _mask(pixels, shape=(4, 4)):
    labels = np.zeros(shape, dtype=np.uint8)
    for y, x in pixels:
        labels[y, x] = 1
    return LabelMask(labels=labels)


def _reversal_field(size: int = 8) -> DisplacementField:
    xs = np.mgrid[0:size, 0:size][1].astype(np.float64)
    return DisplacementField(u=np.stack([-2.0 * xs, np.zeros_like(xs)], axis=-1))


def test_soft_dice_identities():
    a = _mask([(0, 0), (0, 1), (1, 0), (1, 1), (2, 2)])
    assert soft_dice(a, a) == 0.0
    assert soft_dice(_mask([(0, 0)]), _mask([(3, 3)])) == 1.0


def test_soft_dice_half_overlap_case():
    a = _mask([(0, 0), (0, 1), (0, 2), (0, 3), (1, 0)])
    b = _mask([(0, 0), (0, 1), (0, 2), (0, 3), (2, 0)])
    assert soft_dice(a, b) == pytest.approx(0.2, abs=1e-12)
    assert soft_dice(a, b, unscaled=True) == pytest.approx(0.6, abs=1e-12)


def test_soft_dice_class_absent_from_both_counts_as_overlap():
    labels = np.zeros((4, 4), dtype=np.uint8)
    labels[0, 0] = 1
    a = LabelMask(labels=labels, num_classes=3)
    assert soft_dice(a, a) == 0.0


def test_anti_folding_and_smoothness_on_known_fields():
    zero = DisplacementField.zeros(8, 8)
    assert anti_folding_loss(zero, zero) == 0.0
    assert anti_folding_loss(_reversal_field(), zero) == pytest.approx(1.0)

    ys, xs = np.mgrid[0:8, 0:8].astype(np.float64)
    linear = DisplacementField(u=np.stack([0.1 * xs, -0.2 * ys], axis=-1))
    assert smoothness_loss(linear) == pytest.approx(0.01 + 0.04, rel=1e-5)
    assert smoothness_loss(linear, linear) == pytest.approx(2 * 0.05, rel=1e-5)
    assert smoothness_loss(DisplacementField.constant(8, 8, 1.0, 2.0)) == 0.0


def test_bidirectional_terms_for_identical_images(blob_image):
    zero = DisplacementField.zeros(*blob_image.shape)
    terms = bidirectional_sim_loss(blob_image, blob_image, zero, zero)
    expected = -wls(blob_image, blob_image, with_grad=False).score
    assert set(terms) == {"sim_fwd", "sim_bwd", "sim_inv_fwd", "sim_inv_bwd"}
    for value in terms.values():
        assert value == pytest.approx(expected, rel=1e-9)
    assert affine_loss(blob_image, blob_image) == pytest.approx(expected, rel=1e-9)


def test_total_breakdown_sums_its_terms(blob_image, other_blob_image):
    field = DisplacementField.constant(*blob_image.shape, 0.4, -0.3)
    breakdown = total_reg_loss(blob_image, other_blob_image, field, field)
    assert set(breakdown.terms) == set(BREAKDOWN_TERMS)
    assert breakdown.total == pytest.approx(breakdown.recomputed_total(), rel=1e-9)
    assert breakdown.coefficients["jdet"] == 1000.0
    assert breakdown.coefficients["smooth"] == 8.0


def test_inverse_consistency_switch(blob_image, other_blob_image):
    field = DisplacementField.constant(*blob_image.shape, 0.4, -0.3)
    off = total_reg_loss(blob_image, other_blob_image, field, field, lw=LossWeights(inverse_consistency=False))
    assert off.coefficients["sim_inv_fwd"] == 0.0
    assert off.terms["sim_inv_fwd"] == 0.0
    assert off.total == pytest.approx(off.recomputed_total(), rel=1e-9)


def test_folding_weight_scales_total():
    img = Image2D(data=smooth_image(16, 16))
    folded, zero = _reversal_field(16), DisplacementField.zeros(16, 16)
    low = total_reg_loss(img, img, folded, zero, lw=LossWeights(lambda1=0.0))
    high = total_reg_loss(img, img, folded, zero, lw=LossWeights(lambda1=1000.0))
    assert high.total - low.total == pytest.approx(1000.0 * high.terms["jdet"], rel=1e-9)


def test_weak_supervision_zero_for_matching_masks():
    mask = disk_mask(16, 16, 8, 8, 4)
    zero = DisplacementField.zeros(16, 16)
    assert weak_supervision_loss(mask, mask, zero, zero) == 0.0
    shifted = disk_mask(16, 16, 10, 8, 4)
    assert weak_supervision_loss(mask, shifted, zero, zero) > 0.0


def test_semi_supervised_branches():
    xl = disk_mask(16, 16, 8, 8, 4)
    yl = disk_mask(16, 16, 9, 8, 4)
    zero = DisplacementField.zeros(16, 16)
    with pytest.raises(NoLabelsError):
        semi_supervised_seg_loss(xl, yl, None, None, zero, zero)
    assert semi_supervised_seg_loss(xl, xl, xl, None, zero, zero) == 0.0
    only_y = semi_supervised_seg_loss(xl, yl, None, yl, zero, zero)
    assert only_y == pytest.approx(soft_dice(yl, xl), abs=1e-12)
    both = semi_supervised_seg_loss(xl, yl, xl, yl, zero, zero)
    assert both == pytest.approx(only_y, abs=1e-12)
    weighted = semi_supervised_seg_loss(xl, yl, None, yl, zero, zero, LossWeights(lambda_r=2.0, lambda_s=0.0))
    assert weighted == pytest.approx(2.0 * only_y, abs=1e-12)


def test_total_loss_gradients_match_central_differences(rng):
    size, step = 16, 1e-6
    loss = RegistrationLoss()
    ax, y = to_tensor(smooth_image(size, size, seed=4)), to_tensor(smooth_image(size, size, seed=5))
    sx = t_one_hot(disk_mask(size, size, 8, 8, 4).labels, 2, include_background=False)
    sy = t_one_hot(disk_mask(size, size, 9, 7, 4).labels, 2, include_background=False)
    phi_xy = to_tensor(rng.uniform(0.2, 0.8, size=(size, size, 2)) * 0.5 + 0.3)
    phi_yx = to_tensor(-rng.uniform(0.2, 0.8, size=(size, size, 2)) * 0.5 - 0.3)

    def evaluate(fxy, fyx):
        return loss.total(ax, y, fxy, fyx, sx, sy)[0]

    fxy = phi_xy.clone().requires_grad_(True)
    fyx = phi_yx.clone().requires_grad_(True)
    grad_xy, grad_yx = torch.autograd.grad(evaluate(fxy, fyx), (fxy, fyx))

    fields = (phi_xy, phi_yx)
    grads = (grad_xy, grad_yx)
    for _ in range(20):
        y0, x0 = rng.integers(2, size - 2, size=2)
        channel, which = int(rng.integers(0, 2)), int(rng.integers(0, 2))
        plus = [f.clone() for f in fields]
        minus = [f.clone() for f in fields]
        plus[which][y0, x0, channel] += step
        minus[which][y0, x0, channel] -= step
        with torch.no_grad():
            fd = (evaluate(*plus) - evaluate(*minus)).item() / (2 * step)
        np.testing.assert_allclose(grads[which][y0, x0, channel].item(), fd, rtol=1e-3, atol=1e-7)


def test_bidirectional_loss_is_symmetric_under_swap(blob_image, other_blob_image):
    ys, xs = np.mgrid[0:32, 0:32].astype(np.float64)
    phi_xy = DisplacementField(u=np.stack([0.8 * np.sin(ys / 5.0), 0.5 * np.cos(xs / 7.0)], axis=-1))
    phi_yx = DisplacementField.constant(32, 32, -0.6, 0.3)
    forward = bidirectional_sim_loss(blob_image, other_blob_image, phi_xy, phi_yx)
    swapped = bidirectional_sim_loss(other_blob_image, blob_image, phi_yx, phi_xy)
    assert swapped["sim_fwd"] == pytest.approx(forward["sim_bwd"], rel=1e-12)
    assert swapped["sim_bwd"] == pytest.approx(forward["sim_fwd"], rel=1e-12)
    assert swapped["sim_inv_fwd"] == pytest.approx(forward["sim_inv_bwd"], rel=1e-12)
    assert swapped["sim_inv_bwd"] == pytest.approx(forward["sim_inv_fwd"], rel=1e-12)
    assert sum(swapped.values()) == pytest.approx(sum(forward.values()), rel=1e-12)


def test_constant_fields_recover_both_images_exactly():
    size, shift = 16, 2
    xs = np.mgrid[0:size, 0:size][1].astype(np.float64)
    # flat within `shift` of both borders so clamped samples lose nothing
    ax = Image2D(data=np.clip(xs, shift, size - 1 - shift))
    y = Image2D(data=np.clip(xs + shift, shift, size - 1 - shift))
    ncc_only = WlsWeights(a=1.0, b=0.0, c=0.0, d=0.0)
    terms = bidirectional_sim_loss(
        ax, y, DisplacementField.constant(size, size, shift, 0.0),
        DisplacementField.constant(size, size, -shift, 0.0), w=ncc_only
    )
    assert terms["sim_inv_fwd"] == pytest.approx(-1.0, abs=1e-12)
    assert terms["sim_inv_bwd"] == pytest.approx(-1.0, abs=1e-12)


def test_all_terms_are_minus_one_for_aligned_pair_under_ncc(blob_image):
    zero = DisplacementField.zeros(*blob_image.shape)
    terms = bidirectional_sim_loss(blob_image, blob_image, zero, zero, w=WlsWeights(a=1.0, b=0.0, c=0.0, d=0.0))
    assert sum(terms.values()) == pytest.approx(-4.0, abs=1e-12)


def test_dice_paper_literal_switch_drops_the_factor_two():
    a = _mask([(0, 0), (0, 1), (0, 2), (0, 3), (1, 0)])
    b = _mask([(0, 0), (0, 1), (0, 2), (0, 3), (2, 0)])
    zero = DisplacementField.zeros(4, 4)
    assert LossWeights().dice_paper_literal is False
    literal = RegistrationLoss(weights=LossWeights(dice_paper_literal=True))
    sa, sb = t_one_hot(a.labels, 2, include_background=False), t_one_hot(b.labels, 2, include_background=False)
    assert literal.soft_dice(sa, sb).item() == pytest.approx(0.6, abs=1e-12)
    assert weak_supervision_loss(a, b, zero, zero) == pytest.approx(0.4, abs=1e-12)
