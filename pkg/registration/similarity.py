"""
Image similarity metrics and their weighted combination (WLs)

Every metric is oriented so that larger means more similar and is computed
on images min-max normalized to [0, 1]. Scores are exact torch expressions;
gradients with respect to the first image come from reverse-mode
differentiation of those expressions.
"""
import math
from typing import Callable, Dict, Optional, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, Field, model_validator

from config.constants import (
    DEFAULT_MI_BINS, DEFAULT_MIND_ABS_EPS, DEFAULT_MIND_PATCH_RADIUS, DEFAULT_MIND_SIGMA,
    DEFAULT_MIND_VARIANCE_FLOOR, DEFAULT_NGF_EPS, DEFAULT_WLS_WEIGHTS
)
from imaging.containers import Image2D, check_same_grid
from registration.warp import DTYPE, t_spatial_gradient, to_tensor
from utils.errors import ConfigError
from utils.logger import moco_logger

# (dy, dx) neighbourhood of the 2-D self-similarity descriptor
MIND_SHIFTS = ((0, 1), (0, -1), (1, 0), (-1, 0))
# Soft-minimum temperature relative to the local variance
MIND_SOFTMIN_TEMPERATURE = 0.1
# Keeps sqrt differentiable at zero
TINY = 1e-24


class WlsWeights(BaseModel):
    """Weights of NCC, MI, NGF and MIND"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    a: float = Field(default=DEFAULT_WLS_WEIGHTS[0], ge=0.0)
    b: float = Field(default=DEFAULT_WLS_WEIGHTS[1], ge=0.0)
    c: float = Field(default=DEFAULT_WLS_WEIGHTS[2], ge=0.0)
    d: float = Field(default=DEFAULT_WLS_WEIGHTS[3], ge=0.0)

    @model_validator(mode="after")
    def _at_least_one(self):
        if max(self.a, self.b, self.c, self.d) <= 0.0:
            raise ConfigError("At least one similarity weight must be positive")
        return self

    @classmethod
    def from_tuple(cls, values: Tuple[float, float, float, float]) -> "WlsWeights":
        a, b, c, d = values
        return cls(a=a, b=b, c=c, d=d)

    def as_dict(self) -> Dict[str, float]:
        return {"ncc": self.a, "mi": self.b, "ngf": self.c, "mind": self.d}


class MetricParams(BaseModel):
    """Similarity weights plus the parameters of each component"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    weights: WlsWeights = Field(default_factory=WlsWeights)
    mi_bins: int = Field(default=DEFAULT_MI_BINS, ge=2)
    ngf_eps: float = Field(default=DEFAULT_NGF_EPS, gt=0.0)
    mind_patch_radius: int = Field(default=DEFAULT_MIND_PATCH_RADIUS, ge=0)
    mind_sigma: float = Field(default=DEFAULT_MIND_SIGMA, gt=0.0)
    mind_variance_floor: float = Field(default=DEFAULT_MIND_VARIANCE_FLOOR, gt=0.0)
    mind_abs_eps: float = Field(default=DEFAULT_MIND_ABS_EPS, gt=0.0)


class MetricValue(BaseModel):
    """Similarity score plus optional per-pixel gradient w.r.t. the first image"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    score: float
    grad: Optional[np.ndarray] = None


def t_normalize(img: torch.Tensor) -> Tuple[torch.Tensor, bool]:
    """Min-max normalize to [0, 1]; a constant image maps to zeros and is flagged degenerate"""
    lo = img.amin()
    rng = img.amax() - lo
    if rng.item() <= 0.0:
        return torch.zeros_like(img).detach(), True
    return (img - lo) / rng, False


def _plogp(p: torch.Tensor) -> torch.Tensor:
    safe = torch.where(p > 0, p, torch.ones_like(p))
    return (p * torch.log(safe)).sum()


class SimilarityEngine:
    """
    Computes the four similarity components and WLs on float64 tensors
    """

    def __init__(self, params: Optional[MetricParams] = None):
        """
        Args:
            params: Metric parameters (defaults: default weights, 32 bins,
                NGF ε = 1e-2 of the mean gradient magnitude, 3x3 patches with σ = 0.5)
        """
        self.params = params or MetricParams()
        self._kernel = self._gaussian_patch_kernel(self.params.mind_patch_radius, self.params.mind_sigma)

    @staticmethod
    def _gaussian_patch_kernel(radius: int, sigma: float) -> torch.Tensor:
        offsets = torch.arange(-radius, radius + 1, dtype=DTYPE)
        dy, dx = torch.meshgrid(offsets, offsets, indexing="ij")
        kernel = torch.exp(-(dx ** 2 + dy ** 2) / (2.0 * sigma ** 2))
        return (kernel / kernel.sum())[None, None]

    # ==================== COMPONENTS ON NORMALIZED IMAGES ====================

    @staticmethod
    def ncc_normalized(i: torch.Tensor, j: torch.Tensor) -> torch.Tensor:
        di = i - i.mean()
        dj = j - j.mean()
        var_i = (di * di).mean()
        var_j = (dj * dj).mean()
        if var_i.item() <= 0.0 or var_j.item() <= 0.0:
            return torch.zeros((), dtype=DTYPE)
        return (di * dj).mean() / torch.sqrt(var_i * var_j)

    def _soft_bins(self, v: torch.Tensor) -> torch.Tensor:
        bins = self.params.mi_bins
        position = v.reshape(-1, 1) * (bins - 1)
        centers = torch.arange(bins, dtype=DTYPE).reshape(1, -1)
        return torch.clamp(1.0 - torch.abs(position - centers), min=0.0)

    def mi_normalized(self, i: torch.Tensor, j: torch.Tensor) -> torch.Tensor:
        wi = self._soft_bins(i)
        wj = self._soft_bins(j)
        joint = wi.T @ wj / wi.shape[0]
        return _plogp(joint) - _plogp(wi.mean(dim=0)) - _plogp(wj.mean(dim=0))

    def _ngf_eps2(self, gx: torch.Tensor, gy: torch.Tensor) -> torch.Tensor:
        """Squared edge threshold: ngf_eps times the mean gradient magnitude of the image"""
        magnitude = torch.sqrt(gx * gx + gy * gy + TINY).mean()
        return (self.params.ngf_eps * magnitude) ** 2 + TINY

    def ngf_normalized(self, i: torch.Tensor, j: torch.Tensor) -> torch.Tensor:
        gix, giy = t_spatial_gradient(i)
        gjx, gjy = t_spatial_gradient(j)
        inner = gix * gjx + giy * gjy
        norm_i = gix * gix + giy * giy + self._ngf_eps2(gix, giy)
        norm_j = gjx * gjx + gjy * gjy + self._ngf_eps2(gjx, gjy)
        return (inner * inner / (norm_i * norm_j)).mean()

    def mind_descriptor(self, img: torch.Tensor) -> torch.Tensor:
        """
        (4, H, W) self-similarity descriptor

        Patch distances D are scaled by the local variance V (their channel
        mean plus the floor) and shifted by a soft minimum over the channels,
        -τ·logsumexp(-D/τ) with τ = 0.1·V. Entries stay in (0, 1] and the
        largest one per pixel is at least 4^-0.1, without the kinks of a hard
        minimum.
        """
        height, width = img.shape
        radius = self.params.mind_patch_radius
        padded = F.pad(img[None, None], (1, 1, 1, 1), mode="replicate")[0, 0]
        distances = []
        for dy, dx in MIND_SHIFTS:
            shifted = padded[1 + dy:1 + dy + height, 1 + dx:1 + dx + width]
            diff2 = (img - shifted) ** 2
            if radius > 0:
                diff2 = F.pad(diff2[None, None], (radius,) * 4, mode="replicate")
                diff2 = F.conv2d(diff2, self._kernel)[0, 0]
            distances.append(diff2)
        dist = torch.stack(distances)
        variance = dist.mean(dim=0) + self.params.mind_variance_floor
        tau = MIND_SOFTMIN_TEMPERATURE * variance
        soft_min = -tau * torch.logsumexp(-dist / tau, dim=0)
        return torch.exp(-(dist - soft_min) / variance)

    def mind_normalized(self, i: torch.Tensor, j: torch.Tensor) -> torch.Tensor:
        eps = self.params.mind_abs_eps
        diff = self.mind_descriptor(i) - self.mind_descriptor(j)
        # smooth |diff|, exactly 0 at diff = 0
        return -(torch.sqrt(diff * diff + eps) - math.sqrt(eps)).mean()

    # ==================== RAW-IMAGE ENTRY POINTS ====================

    def _pair(self, i: torch.Tensor, j: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor, bool]:
        ni, degenerate_i = t_normalize(i)
        nj, degenerate_j = t_normalize(j)
        return ni, nj, degenerate_i or degenerate_j

    def ncc(self, i: torch.Tensor, j: torch.Tensor) -> torch.Tensor:
        ni, nj, _ = self._pair(i, j)
        return self.ncc_normalized(ni, nj)

    def mi(self, i: torch.Tensor, j: torch.Tensor) -> torch.Tensor:
        ni, nj, degenerate = self._pair(i, j)
        if degenerate:
            return torch.zeros((), dtype=DTYPE)
        return self.mi_normalized(ni, nj)

    def ngf(self, i: torch.Tensor, j: torch.Tensor) -> torch.Tensor:
        ni, nj, _ = self._pair(i, j)
        return self.ngf_normalized(ni, nj)

    def mind(self, i: torch.Tensor, j: torch.Tensor) -> torch.Tensor:
        ni, nj, _ = self._pair(i, j)
        return self.mind_normalized(ni, nj)

    def components(self, i: torch.Tensor, j: torch.Tensor,
                   weights: Optional[WlsWeights] = None) -> Dict[str, torch.Tensor]:
        """Component scores with a positive weight, keyed ncc/mi/ngf/mind"""
        weights = weights or self.params.weights
        ni, nj, degenerate = self._pair(i, j)
        functions: Dict[str, Callable] = {
            "ncc": self.ncc_normalized,
            "mi": self.mi_normalized,
            "ngf": self.ngf_normalized,
            "mind": self.mind_normalized,
        }
        scores = {}
        for name, weight in weights.as_dict().items():
            if weight <= 0.0:
                continue
            if name == "mi" and degenerate:
                scores[name] = torch.zeros((), dtype=DTYPE)
            else:
                scores[name] = functions[name](ni, nj)
        return scores

    def wls(self, i: torch.Tensor, j: torch.Tensor, weights: Optional[WlsWeights] = None) -> torch.Tensor:
        """a·NCC + b·MI + c·NGF + d·MIND over the positively weighted components"""
        weights = weights or self.params.weights
        coefficients = weights.as_dict()
        total = None
        for name, score in self.components(i, j, weights).items():
            term = coefficients[name] * score
            total = term if total is None else total + term
        return total


def _is_constant(img: Image2D) -> bool:
    return float(img.data.max()) <= float(img.data.min())


def _evaluate(name: str, fn: Callable[[torch.Tensor, torch.Tensor], torch.Tensor],
              img_i: Image2D, img_j: Image2D, with_grad: bool) -> MetricValue:
    check_same_grid(img_i.shape, img_j.shape)
    if _is_constant(img_i) or _is_constant(img_j):
        both = _is_constant(img_i) and _is_constant(img_j)
        if name in ("ncc", "mi") or both:
            moco_logger.log_degenerate_metric(name, "constant image")
    i = to_tensor(img_i.data).requires_grad_(with_grad)
    j = to_tensor(img_j.data)
    score = fn(i, j)
    grad = None
    if with_grad:
        if score.requires_grad:
            (g,) = torch.autograd.grad(score, i)
            grad = g.detach().numpy()
        else:
            grad = np.zeros(img_i.shape, dtype=np.float64)
    return MetricValue(score=float(score.item()), grad=grad)


def ncc(img_i: Image2D, img_j: Image2D, with_grad: bool = True) -> MetricValue:
    """Global zero-normalized cross-correlation in [-1, 1]"""
    return _evaluate("ncc", SimilarityEngine().ncc, img_i, img_j, with_grad)


def mi(img_i: Image2D, img_j: Image2D, bins: int = DEFAULT_MI_BINS, with_grad: bool = True) -> MetricValue:
    """Mutual information (nats) of a partial-volume joint histogram"""
    engine = SimilarityEngine(MetricParams(mi_bins=bins))
    return _evaluate("mi", engine.mi, img_i, img_j, with_grad)


def ngf(img_i: Image2D, img_j: Image2D, eps: float = DEFAULT_NGF_EPS, with_grad: bool = True) -> MetricValue:
    """Mean squared cosine between gradients regularized by eps times their mean magnitude, in [0, 1]"""
    engine = SimilarityEngine(MetricParams(ngf_eps=eps))
    return _evaluate("ngf", engine.ngf, img_i, img_j, with_grad)


def mind(img_i: Image2D, img_j: Image2D, patch_radius: int = DEFAULT_MIND_PATCH_RADIUS,
         sigma: float = DEFAULT_MIND_SIGMA, with_grad: bool = True) -> MetricValue:
    """Negated mean absolute difference of self-similarity descriptors (≤ 0)"""
    engine = SimilarityEngine(MetricParams(mind_patch_radius=patch_radius, mind_sigma=sigma))
    return _evaluate("mind", engine.mind, img_i, img_j, with_grad)


def wls(img_i: Image2D, img_j: Image2D, w: Optional[WlsWeights] = None,
        params: Optional[MetricParams] = None, with_grad: bool = True) -> MetricValue:
    """Weighted similarity a·NCC + b·MI + c·NGF + d·MIND"""
    params = params or MetricParams()
    engine = SimilarityEngine(params)
    weights = w or params.weights
    return _evaluate("wls", lambda i, j: engine.wls(i, j, weights), img_i, img_j, with_grad)
