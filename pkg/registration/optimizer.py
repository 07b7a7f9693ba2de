"""
Direct variational registration: an affine stage minimizing -WLs over the six
affine parameters, then a deformable stage jointly optimizing the forward and
backward fields under the composite loss. Both stages run coarse-to-fine with
Adam steps guarded by a backtracking check.
"""
import copy
import math
import time
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field, field_validator

from config.constants import (
    DEFAULT_AFFINE_STEP, DEFAULT_CONVERGENCE_TOL, DEFAULT_FIELD_STEP, DEFAULT_ITERS_PER_LEVEL, DEFAULT_LEVELS
)
from imaging.containers import AffineParams, DisplacementField, Image2D, LabelMask, check_same_grid
from registration.losses import LossBreakdown, LossWeights, RegistrationLoss
from registration.pyramid import build_pyramid, iterations_for, upsample_field
from registration.similarity import MetricParams, WlsWeights
from registration.warp import (
    DTYPE, affine_to_field, folding_count, t_affine_to_field, t_one_hot, t_warp, to_tensor, warp_image, warp_labels
)
from utils.errors import DegenerateImageError, NonFiniteLossError
from utils.logger import moco_logger

Closure = Callable[[], Tuple[torch.Tensor, Dict[str, torch.Tensor]]]


class SolveOptions(BaseModel):
    """Solver schedule, as found in the "solve" section of a run configuration"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    levels: int = Field(default=DEFAULT_LEVELS, ge=1)
    iters_per_level: List[int] = Field(default_factory=lambda: list(DEFAULT_ITERS_PER_LEVEL), min_length=1)
    affine_step: float = Field(default=DEFAULT_AFFINE_STEP, gt=0.0)
    field_step: float = Field(default=DEFAULT_FIELD_STEP, gt=0.0)
    seed: int = 0
    convergence_tol: float = Field(default=DEFAULT_CONVERGENCE_TOL, ge=0.0)
    patience: int = Field(default=5, ge=1)
    max_halvings: int = Field(default=5, ge=0)
    skip_affine: bool = False
    use_masks: bool = False
    backtracking: bool = True
    min_level_size: int = Field(default=16, ge=3)

    @field_validator("iters_per_level")
    @classmethod
    def _positive_iterations(cls, v: List[int]) -> List[int]:
        if any(count <= 0 for count in v):
            raise ValueError("iters_per_level entries must be positive")
        return v


class SolveConfig(SolveOptions):
    """Solver schedule plus the objective it minimizes"""

    metric: MetricParams = Field(default_factory=MetricParams)
    loss_weights: LossWeights = Field(default_factory=LossWeights)

    @property
    def weights(self) -> WlsWeights:
        return self.metric.weights


class RegistrationResult(BaseModel):
    """Outputs of one pair registration"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    affine: AffineParams
    field_xy: DisplacementField
    field_yx: DisplacementField
    moved: Image2D
    loss_trace: List[LossBreakdown]
    affine_trace: List[float] = Field(default_factory=list)
    level_traces: List[List[float]] = Field(default_factory=list)
    folding: int
    seconds: float = 0.0
    low_signal: bool = False

    def final_loss(self) -> float:
        return self.loss_trace[-1].total if self.loss_trace else float("nan")


# ==================== DESCENT ====================

class BacktrackingDescent:
    """
    Adam steps that are kept only when the loss does not increase

    A rejected step restores the parameters and the moment estimates and
    halves the step size. More than max_halvings consecutive non-finite
    trials raise NonFiniteLossError. A loss without a graph path to the
    parameters (constant images) raises DegenerateImageError before any step.
    With backtracking off every finite step is kept, as in plain Adam training.
    """

    def __init__(self, step: float, tol: float, patience: int, max_halvings: int, backtracking: bool = True):
        self.step = step
        self.tol = tol
        self.patience = patience
        self.max_halvings = max_halvings
        self.backtracking = backtracking

    def run(self, params: List[torch.Tensor], closure: Closure, iterations: int,
            on_accept: Optional[Callable[[torch.Tensor, Dict[str, torch.Tensor]], None]] = None) -> List[float]:
        """
        Minimize closure over params

        Args:
            params: Leaf tensors with requires_grad
            closure: Returns (total, terms) at the current params
            iterations: Number of trial steps
            on_accept: Called with (total, terms) for the start point and every accepted step

        Returns:
            Accepted loss totals, starting with the initial value
        """
        optimizer = torch.optim.Adam(params, lr=self.step)
        lr = self.step

        loss, terms = closure()
        current = float(loss.item())
        if not math.isfinite(current):
            raise NonFiniteLossError(f"Initial loss is not finite ({current})")
        if not loss.requires_grad:
            raise DegenerateImageError("Loss does not depend on the parameters")
        optimizer.zero_grad()
        loss.backward()
        accepted = [current]
        if on_accept is not None:
            on_accept(loss, terms)

        non_finite = 0
        quiet = 0
        for _ in range(iterations):
            saved = [p.detach().clone() for p in params]
            state = copy.deepcopy(optimizer.state_dict())
            optimizer.step()

            trial, trial_terms = closure()
            value = float(trial.item())
            if math.isfinite(value) and (value <= current or not self.backtracking):
                non_finite = 0
                change = abs(current - value) / max(abs(current), 1e-12)
                current = value
                accepted.append(value)
                if on_accept is not None:
                    on_accept(trial, trial_terms)
                quiet = quiet + 1 if change < self.tol else 0
                if quiet >= self.patience:
                    break
                optimizer.zero_grad()
                trial.backward()
                continue

            with torch.no_grad():
                for p, s in zip(params, saved):
                    p.copy_(s)
            optimizer.load_state_dict(state)
            lr *= 0.5
            for group in optimizer.param_groups:
                group["lr"] = lr
            if not math.isfinite(value):
                non_finite += 1
                moco_logger.warning(f"Non-finite loss, step halved to {lr:.3g}")
                if non_finite > self.max_halvings:
                    raise NonFiniteLossError(f"Loss stayed non-finite after {self.max_halvings} halvings")
            else:
                moco_logger.debug(f"Loss increased to {value:.6g}, step halved to {lr:.3g}")
        return accepted


# ==================== STAGES ====================

def _descent(cfg: SolveConfig, step: float) -> BacktrackingDescent:
    return BacktrackingDescent(step, cfg.convergence_tol, cfg.patience, cfg.max_halvings,
                               backtracking=cfg.backtracking)


def _descend(stage: str, level: int, descent: BacktrackingDescent, params: List[torch.Tensor], closure: Closure,
             iterations: int, on_accept=None) -> List[float]:
    """Run the descent; a degenerate level keeps its parameters and counts as converged"""
    try:
        return descent.run(params, closure, iterations, on_accept)
    except DegenerateImageError as e:
        moco_logger.log_degenerate_stage(stage, level, str(e))
        with torch.no_grad():
            loss, terms = closure()
        if on_accept is not None:
            on_accept(loss, terms)
        return [float(loss.item())]


def solve_affine(moving: Image2D, fixed: Image2D, cfg: Optional[SolveConfig] = None,
                 trace: Optional[List[float]] = None) -> AffineParams:
    """
    Affine stage: minimize -WLs(A(moving), fixed) over theta, coarse to fine

    Args:
        moving: Image to align
        fixed: Target image
        cfg: Solver configuration
        trace: Receives the accepted losses of every level when given

    Returns:
        Affine parameters on normalized coordinates
    """
    cfg = cfg or SolveConfig()
    check_same_grid(moving.shape, fixed.shape)
    loss = RegistrationLoss(cfg.metric, cfg.loss_weights)

    moving_levels = build_pyramid(to_tensor(moving.data), cfg.levels, cfg.min_level_size)
    fixed_levels = build_pyramid(to_tensor(fixed.data), cfg.levels, cfg.min_level_size)
    schedule = iterations_for(len(moving_levels), cfg.iters_per_level)

    theta = to_tensor(AffineParams.identity().theta).clone().requires_grad_(True)
    descent = _descent(cfg, cfg.affine_step)
    for level, (mov, fix, iterations) in enumerate(zip(moving_levels, fixed_levels, schedule)):
        height, width = fix.shape
        moco_logger.log_level_start("affine", level, (height, width), iterations, cfg.affine_step)

        def closure(mov=mov, fix=fix, height=height, width=width):
            value = loss.affine(t_warp(mov, t_affine_to_field(theta, width, height)), fix)
            return value, {"affine": value}

        accepted = _descend("affine", level, descent, [theta], closure, iterations)
        if trace is not None:
            trace.extend(accepted)

    return AffineParams(theta=theta.detach().cpu().numpy())


def _soft_masks(masks: Optional[Tuple[LabelMask, LabelMask]], cfg: SolveConfig):
    if masks is None or not cfg.use_masks:
        return None
    sx = t_one_hot(masks[0].labels, masks[0].num_classes, include_background=False)
    sy = t_one_hot(masks[1].labels, masks[1].num_classes, include_background=False)
    return (build_pyramid(sx, cfg.levels, cfg.min_level_size),
            build_pyramid(sy, cfg.levels, cfg.min_level_size))


def solve_deformable(ax: Image2D, fixed: Image2D, masks: Optional[Tuple[LabelMask, LabelMask]] = None,
                     cfg: Optional[SolveConfig] = None) -> RegistrationResult:
    """
    Deformable stage: jointly optimize Φxy and Φyx under the composite loss

    Fields start at zero on the coarsest level and are upsampled (values
    doubled) between levels. The loss trace holds the accepted totals of the
    finest level; it never increases while backtracking is on.

    Args:
        ax: Affine-aligned moving image
        fixed: Target image
        masks: (mask of ax, mask of fixed), used when cfg.use_masks is set
        cfg: Solver configuration

    Returns:
        RegistrationResult with an identity affine
    """
    cfg = cfg or SolveConfig()
    check_same_grid(ax.shape, fixed.shape)
    if masks is not None:
        check_same_grid(ax.shape, masks[0].shape, masks[1].shape)
    started = time.perf_counter()
    loss = RegistrationLoss(cfg.metric, cfg.loss_weights)

    ax_levels = build_pyramid(to_tensor(ax.data), cfg.levels, cfg.min_level_size)
    fixed_levels = build_pyramid(to_tensor(fixed.data), cfg.levels, cfg.min_level_size)
    mask_levels = _soft_masks(masks, cfg)
    schedule = iterations_for(len(ax_levels), cfg.iters_per_level)

    phi_xy = phi_yx = None
    level_traces: List[List[float]] = []
    breakdowns: List[LossBreakdown] = []
    descent = _descent(cfg, cfg.field_step)
    for level, (a_img, f_img, iterations) in enumerate(zip(ax_levels, fixed_levels, schedule)):
        height, width = f_img.shape
        moco_logger.log_level_start("deformable", level, (height, width), iterations, cfg.field_step)
        if phi_xy is None:
            phi_xy = torch.zeros((height, width, 2), dtype=DTYPE)
            phi_yx = torch.zeros((height, width, 2), dtype=DTYPE)
        else:
            phi_xy = upsample_field(phi_xy.detach(), height, width)
            phi_yx = upsample_field(phi_yx.detach(), height, width)
        phi_xy.requires_grad_(True)
        phi_yx.requires_grad_(True)

        sx = sy = None
        if mask_levels is not None:
            sx, sy = mask_levels[0][level], mask_levels[1][level]

        def closure(a_img=a_img, f_img=f_img, sx=sx, sy=sy, fields=(phi_xy, phi_yx)):
            return loss.total(a_img, f_img, fields[0], fields[1], sx, sy)

        finest = level == len(ax_levels) - 1
        level_breakdowns: List[LossBreakdown] = []

        def record(total, terms):
            if finest:
                level_breakdowns.append(loss.breakdown(total, terms))

        level_traces.append(_descend("deformable", level, descent, [phi_xy, phi_yx], closure, iterations, record))
        breakdowns = level_breakdowns

    field_xy = DisplacementField(u=phi_xy.detach().cpu().numpy())
    field_yx = DisplacementField(u=phi_yx.detach().cpu().numpy())
    return RegistrationResult(
        affine=AffineParams.identity(),
        field_xy=field_xy,
        field_yx=field_yx,
        moved=warp_image(ax, field_xy),
        loss_trace=breakdowns,
        level_traces=level_traces,
        folding=folding_count(field_xy),
        seconds=time.perf_counter() - started,
    )


def register_pair(moving: Image2D, fixed: Image2D, masks: Optional[Tuple[LabelMask, LabelMask]] = None,
                  cfg: Optional[SolveConfig] = None) -> RegistrationResult:
    """
    Affine stage followed by the deformable stage

    The moved image is warp(warp(moving, affine field), field_xy), computed
    with the public warp functions so it is recomputable from the parts.

    Args:
        moving: Image to align
        fixed: Target image
        masks: (moving mask, fixed mask); the moving mask is carried through the affine stage
        cfg: Solver configuration

    Returns:
        RegistrationResult
    """
    cfg = cfg or SolveConfig()
    check_same_grid(moving.shape, fixed.shape)
    started = time.perf_counter()

    affine_trace: List[float] = []
    if cfg.skip_affine:
        affine = AffineParams.identity()
    else:
        affine = solve_affine(moving, fixed, cfg, trace=affine_trace)
    affine_field = affine_to_field(affine, moving.width, moving.height)
    ax = warp_image(moving, affine_field)

    stage_masks = None
    if masks is not None:
        stage_masks = (warp_labels(masks[0], affine_field), masks[1])
    deformable = solve_deformable(ax, fixed, stage_masks, cfg)

    return deformable.model_copy(update={
        "affine": affine,
        "affine_trace": affine_trace,
        "seconds": time.perf_counter() - started,
    })


def moved_mask(mask: LabelMask, result: RegistrationResult) -> LabelMask:
    """Carry a moving-image mask through the affine and deformable warps"""
    affine_field = affine_to_field(result.affine, mask.width, mask.height)
    return warp_labels(warp_labels(mask, affine_field), result.field_xy)


def image_variance(img: Image2D) -> float:
    return float(np.var(img.data.astype(np.float64)))
