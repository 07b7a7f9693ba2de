"""
Registration objectives: affine loss, bidirectional similarity with the
inverse-consistency terms, soft dice, weak supervision, local anti-folding,
smoothness, the composite deformable loss and the semi-supervised
segmentation loss.
"""
from typing import Dict, Optional, Tuple

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field

from config.constants import DEFAULT_LAMBDA1, DEFAULT_LAMBDA2
from imaging.containers import DisplacementField, Image2D, LabelMask, check_same_grid
from registration.similarity import MetricParams, SimilarityEngine, WlsWeights
from registration.warp import (
    DTYPE, t_approx_inverse, t_jacobian_det, t_one_hot, t_spatial_gradient, t_warp, to_tensor
)
from utils.errors import GridMismatchError, GridTooSmallError, NoLabelsError

SIM_TERMS = ("sim_fwd", "sim_bwd", "sim_inv_fwd", "sim_inv_bwd")
BREAKDOWN_TERMS = SIM_TERMS + ("dice_weak", "jdet", "smooth")


class LossWeights(BaseModel):
    """Weights of the regularizers and of the semi-supervised segmentation loss"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    lambda1: float = Field(default=DEFAULT_LAMBDA1, ge=0.0)
    lambda2: float = Field(default=DEFAULT_LAMBDA2, ge=0.0)
    lambda_r: float = Field(default=1.0, ge=0.0)
    lambda_s: float = Field(default=1.0, ge=0.0)
    dice_paper_literal: bool = False
    inverse_consistency: bool = True

    def coefficients(self) -> Dict[str, float]:
        """Multiplier of every breakdown term in the total"""
        coefficients = {name: 1.0 for name in SIM_TERMS}
        if not self.inverse_consistency:
            coefficients["sim_inv_fwd"] = 0.0
            coefficients["sim_inv_bwd"] = 0.0
        coefficients.update({"dice_weak": 1.0, "jdet": self.lambda1, "smooth": self.lambda2})
        return coefficients


class LossBreakdown(BaseModel):
    """Total loss and its named terms"""
    model_config = ConfigDict(frozen=True)

    total: float
    terms: Dict[str, float]
    coefficients: Dict[str, float]

    def recomputed_total(self) -> float:
        return sum(self.coefficients[name] * value for name, value in self.terms.items())


# ==================== TENSOR-LEVEL LOSSES ====================

class RegistrationLoss:
    """
    Tensor-level objectives sharing one similarity engine
    """

    def __init__(self, metric: Optional[MetricParams] = None, weights: Optional[LossWeights] = None):
        self.metric = metric or MetricParams()
        self.weights = weights or LossWeights()
        self.similarity = SimilarityEngine(self.metric)

    def affine(self, ax: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        """-WLs(A_X, Y)"""
        return -self.similarity.wls(ax, y)

    def bidirectional(self, ax: torch.Tensor, y: torch.Tensor,
                      phi_xy: torch.Tensor, phi_yx: torch.Tensor,
                      with_inverse: bool = True) -> Dict[str, torch.Tensor]:
        """
        The four negated WLs terms of the bidirectional similarity loss

        Args:
            ax: Affine-aligned moving image
            y: Fixed image
            phi_xy: Field registering ax to y
            phi_yx: Field registering y to ax
            with_inverse: Compute the inverse-consistency terms (zeros otherwise)

        Returns:
            Dict with sim_fwd, sim_bwd, sim_inv_fwd, sim_inv_bwd
        """
        m_xy = t_warp(ax, phi_xy)
        m_yx = t_warp(y, phi_yx)
        terms = {
            "sim_fwd": -self.similarity.wls(y, m_xy),
            "sim_bwd": -self.similarity.wls(ax, m_yx),
        }
        if with_inverse:
            m_xy_inv = t_warp(m_xy, t_approx_inverse(phi_xy))
            m_yx_inv = t_warp(m_yx, t_approx_inverse(phi_yx))
            terms["sim_inv_fwd"] = -self.similarity.wls(ax, m_xy_inv)
            terms["sim_inv_bwd"] = -self.similarity.wls(y, m_yx_inv)
        else:
            terms["sim_inv_fwd"] = torch.zeros((), dtype=DTYPE)
            terms["sim_inv_bwd"] = torch.zeros((), dtype=DTYPE)
        return terms

    def soft_dice(self, sa: torch.Tensor, sb: torch.Tensor) -> torch.Tensor:
        return t_soft_dice(sa, sb, unscaled=self.weights.dice_paper_literal)

    def weak_supervision(self, sx: torch.Tensor, sy: torch.Tensor,
                         phi_xy: torch.Tensor, phi_yx: torch.Tensor) -> torch.Tensor:
        """D(S_X ∘ Φxy, S_Y) + D(S_Y ∘ Φyx, S_X) on (K, H, W) soft stacks"""
        forward = self.soft_dice(t_warp(sx, phi_xy), sy)
        backward = self.soft_dice(t_warp(sy, phi_yx), sx)
        return forward + backward

    def total(self, ax: torch.Tensor, y: torch.Tensor, phi_xy: torch.Tensor, phi_yx: torch.Tensor,
              sx: Optional[torch.Tensor] = None, sy: Optional[torch.Tensor] = None
              ) -> Tuple[torch.Tensor, Dict[str, torch.Tensor]]:
        """Composite deformable loss and its terms"""
        terms = self.bidirectional(ax, y, phi_xy, phi_yx, with_inverse=self.weights.inverse_consistency)
        if sx is not None and sy is not None:
            terms["dice_weak"] = self.weak_supervision(sx, sy, phi_xy, phi_yx)
        else:
            terms["dice_weak"] = torch.zeros((), dtype=DTYPE)
        terms["jdet"] = t_anti_folding(phi_xy, phi_yx)
        terms["smooth"] = t_smoothness(phi_xy, phi_yx)

        coefficients = self.weights.coefficients()
        total = torch.zeros((), dtype=DTYPE)
        for name in BREAKDOWN_TERMS:
            if coefficients[name] != 0.0:
                total = total + coefficients[name] * terms[name]
        return total, terms

    def breakdown(self, total: torch.Tensor, terms: Dict[str, torch.Tensor]) -> LossBreakdown:
        return LossBreakdown(
            total=float(total.item()),
            terms={name: float(terms[name].item()) for name in BREAKDOWN_TERMS},
            coefficients=self.weights.coefficients(),
        )


def t_soft_dice(sa: torch.Tensor, sb: torch.Tensor, unscaled: bool = False) -> torch.Tensor:
    """
    Soft multi-class dice loss over (K, H, W) class-score stacks

    A class absent from both stacks counts as perfect overlap. With
    unscaled the numerator omits the factor 2.
    """
    if sa.shape != sb.shape:
        raise GridMismatchError(f"Mask stacks differ: {tuple(sa.shape)} vs {tuple(sb.shape)}")
    classes = sa.shape[0]
    if classes == 0:
        return torch.zeros((), dtype=DTYPE)
    numerator = (sa * sb).sum(dim=(1, 2))
    if not unscaled:
        numerator = 2.0 * numerator
    denominator = sa.sum(dim=(1, 2)) + sb.sum(dim=(1, 2))
    empty = denominator <= 0
    ratio = torch.where(empty, torch.ones_like(denominator),
                        numerator / torch.where(empty, torch.ones_like(denominator), denominator))
    return 1.0 - ratio.sum() / classes


def t_anti_folding(*fields: torch.Tensor) -> torch.Tensor:
    """Sum over fields of mean(max(0, -det J))"""
    total = torch.zeros((), dtype=DTYPE)
    for field in fields:
        total = total + torch.relu(-t_jacobian_det(field)).mean()
    return total


def t_smoothness(*fields: torch.Tensor) -> torch.Tensor:
    """Sum over fields of the mean squared spatial-gradient magnitude"""
    total = torch.zeros((), dtype=DTYPE)
    for field in fields:
        if field.shape[0] < 3 or field.shape[1] < 3:
            raise GridTooSmallError(f"Smoothness needs a grid of at least 3x3, got {field.shape[0]}x{field.shape[1]}")
        d_dx, d_dy = t_spatial_gradient(field.permute(2, 0, 1))
        total = total + (d_dx ** 2 + d_dy ** 2).sum(dim=0).mean()
    return total


# ==================== CONTAINER-LEVEL LOSSES ====================

def _soft_stack(mask: LabelMask) -> torch.Tensor:
    return t_one_hot(mask.labels, mask.num_classes, include_background=False)


def _as_stack(mask) -> torch.Tensor:
    if isinstance(mask, LabelMask):
        return _soft_stack(mask)
    array = np.asarray(mask, dtype=np.float64)
    if array.ndim == 2:
        array = array[None]
    return to_tensor(array)


def affine_loss(ax: Image2D, y: Image2D, w: Optional[WlsWeights] = None,
                params: Optional[MetricParams] = None) -> float:
    """-WLs(A_X, Y)"""
    check_same_grid(ax.shape, y.shape)
    metric = params or MetricParams()
    if w is not None:
        metric = metric.model_copy(update={"weights": w})
    return float(RegistrationLoss(metric).affine(to_tensor(ax.data), to_tensor(y.data)).item())


def bidirectional_sim_loss(ax: Image2D, y: Image2D, phi_xy: DisplacementField, phi_yx: DisplacementField,
                           w: Optional[WlsWeights] = None, params: Optional[MetricParams] = None
                           ) -> Dict[str, float]:
    """The four similarity terms of the bidirectional loss (sum = Lreg_s)"""
    check_same_grid(ax.shape, y.shape, phi_xy.shape, phi_yx.shape)
    metric = params or MetricParams()
    if w is not None:
        metric = metric.model_copy(update={"weights": w})
    terms = RegistrationLoss(metric).bidirectional(
        to_tensor(ax.data), to_tensor(y.data), to_tensor(phi_xy.u), to_tensor(phi_yx.u)
    )
    return {name: float(value.item()) for name, value in terms.items()}


def soft_dice(sa, sb, unscaled: bool = False) -> float:
    """
    Soft dice loss between two masks or (K, H, W) score stacks

    LabelMask inputs are one-hot encoded over their foreground classes.
    """
    return float(t_soft_dice(_as_stack(sa), _as_stack(sb), unscaled).item())


def weak_supervision_loss(sx: LabelMask, sy: LabelMask, phi_xy: DisplacementField, phi_yx: DisplacementField,
                          unscaled: bool = False) -> float:
    """D(S_X ∘ Φxy, S_Y) + D(S_Y ∘ Φyx, S_X) with bilinearly warped one-hot labels"""
    check_same_grid(sx.shape, sy.shape, phi_xy.shape, phi_yx.shape)
    loss = RegistrationLoss(weights=LossWeights(dice_paper_literal=unscaled))
    value = loss.weak_supervision(_soft_stack(sx), _soft_stack(sy), to_tensor(phi_xy.u), to_tensor(phi_yx.u))
    return float(value.item())


def anti_folding_loss(phi_xy: DisplacementField, phi_yx: DisplacementField) -> float:
    """mean(max(0, -det J_Φxy)) + mean(max(0, -det J_Φyx))"""
    return float(t_anti_folding(to_tensor(phi_xy.u), to_tensor(phi_yx.u)).item())


def smoothness_loss(phi: DisplacementField, phi_other: Optional[DisplacementField] = None) -> float:
    """Mean squared gradient magnitude, summed over the given fields"""
    fields = [to_tensor(phi.u)]
    if phi_other is not None:
        check_same_grid(phi.shape, phi_other.shape)
        fields.append(to_tensor(phi_other.u))
    return float(t_smoothness(*fields).item())


def total_reg_loss(ax: Image2D, y: Image2D, phi_xy: DisplacementField, phi_yx: DisplacementField,
                   masks: Optional[Tuple[LabelMask, LabelMask]] = None,
                   w: Optional[WlsWeights] = None, lw: Optional[LossWeights] = None,
                   params: Optional[MetricParams] = None) -> LossBreakdown:
    """Lreg_s + Lreg_a + λ1·L_Jdet + λ2·L_smooth with its breakdown"""
    check_same_grid(ax.shape, y.shape, phi_xy.shape, phi_yx.shape)
    metric = params or MetricParams()
    if w is not None:
        metric = metric.model_copy(update={"weights": w})
    loss = RegistrationLoss(metric, lw)
    sx = sy = None
    if masks is not None:
        check_same_grid(ax.shape, masks[0].shape, masks[1].shape)
        sx, sy = _soft_stack(masks[0]), _soft_stack(masks[1])
    total, terms = loss.total(to_tensor(ax.data), to_tensor(y.data), to_tensor(phi_xy.u), to_tensor(phi_yx.u), sx, sy)
    return loss.breakdown(total, terms)


def semi_supervised_seg_loss(pred_x, pred_y, xl: Optional[LabelMask], yl: Optional[LabelMask],
                             phi_xy: DisplacementField, phi_yx: DisplacementField,
                             lw: Optional[LossWeights] = None) -> float:
    """
    Semi-supervised segmentation loss on provided mask arrays

    Branches:
        only X labeled: λr·D(X_l ∘ Φxy, S_Y) + λs·D(S_X, X_l)
        only Y labeled: λr·D(Y_l ∘ Φyx, S_X) + λs·D(S_Y, Y_l)
        both labeled:   the Y-labeled expression

    Args:
        pred_x, pred_y: Soft (K, H, W) stacks or LabelMasks for A_X and Y
        xl, yl: Manual labels, at least one present
        phi_xy, phi_yx: Registration fields
        lw: Loss weights (λr, λs, dice form)
    """
    lw = lw or LossWeights()
    if xl is None and yl is None:
        raise NoLabelsError("Semi-supervised loss needs at least one labeled image")
    sx, sy = _as_stack(pred_x), _as_stack(pred_y)

    def _dice(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
        return t_soft_dice(a, b, unscaled=lw.dice_paper_literal)

    if yl is not None:
        labels = _soft_stack(yl)
        registered = _dice(t_warp(labels, to_tensor(phi_yx.u)), sx)
        supervised = _dice(sy, labels)
    else:
        labels = _soft_stack(xl)
        registered = _dice(t_warp(labels, to_tensor(phi_xy.u)), sy)
        supervised = _dice(sx, labels)
    return float((lw.lambda_r * registered + lw.lambda_s * supervised).item())
