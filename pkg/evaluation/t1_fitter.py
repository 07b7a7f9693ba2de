"""
Pixel-wise three-parameter inversion-recovery fit

Model: S(TI) = A - B exp(-TI / T1*), T1 = T1* (B/A - 1)
"""
from typing import Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from config.constants import (
    FIT_GAUSS_NEWTON_STEPS, FIT_GRID_SIZE, FIT_MIN_B_OVER_A, FIT_T1STAR_MAX_MS, FIT_T1STAR_MIN_MS
)
from imaging.containers import Image2D, LabelMask, T1Series
from utils.errors import BadSeriesError
from utils.logger import moco_logger


class T1FitResult(BaseModel):
    """Per-pixel fit outputs; t1_map is 0 where fail_mask is 1"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    t1_map: Image2D
    a_map: Image2D
    b_map: Image2D
    t1_star_map: Image2D
    residual_map: Image2D
    fail_mask: LabelMask

    def region_median(self, region: np.ndarray) -> float:
        """Median T1 over the non-failed pixels of a boolean region"""
        valid = region & (self.fail_mask.labels == 0)
        if not valid.any():
            return float("nan")
        return float(np.median(self.t1_map.data[valid]))


class ThreeParameterFitter:
    """
    Grid search over T1* with closed-form (A, B), refined by Gauss-Newton
    """

    def __init__(self, grid_size: int = FIT_GRID_SIZE, steps: int = FIT_GAUSS_NEWTON_STEPS,
                 t1_star_range: Tuple[float, float] = (FIT_T1STAR_MIN_MS, FIT_T1STAR_MAX_MS)):
        self.grid = np.geomspace(t1_star_range[0], t1_star_range[1], grid_size)
        self.steps = steps

    @staticmethod
    def _sse(signal: np.ndarray, tis: np.ndarray, a, b, t) -> np.ndarray:
        model = a[None, :] - b[None, :] * np.exp(-tis[:, None] / t[None, :])
        return ((signal - model) ** 2).sum(axis=0)

    def grid_search(self, signal: np.ndarray, tis: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Best (A, B, T1*) per pixel over the T1* grid

        Args:
            signal: (F, N) samples
            tis: (F,) inversion times

        Returns:
            a, b, t1_star arrays of shape (N,)
        """
        count = signal.shape[1]
        best_sse = np.full(count, np.inf)
        best = np.zeros((3, count))
        for t1_star in self.grid:
            design = np.stack([np.ones_like(tis), -np.exp(-tis / t1_star)], axis=1)
            coef = np.linalg.pinv(design) @ signal
            sse = ((signal - design @ coef) ** 2).sum(axis=0)
            better = sse < best_sse
            best_sse[better] = sse[better]
            best[0, better] = coef[0, better]
            best[1, better] = coef[1, better]
            best[2, better] = t1_star
        return best[0], best[1], best[2]

    def refine(self, signal: np.ndarray, tis: np.ndarray, a: np.ndarray, b: np.ndarray, t: np.ndarray):
        """Gauss-Newton steps on (A, B, T1*), each kept only where it lowers the residual"""
        sse = self._sse(signal, tis, a, b, t)
        for _ in range(self.steps):
            decay = np.exp(-tis[:, None] / t[None, :])
            residual = signal - (a[None, :] - b[None, :] * decay)
            jac = np.stack([
                np.ones_like(decay),
                -decay,
                -b[None, :] * decay * tis[:, None] / t[None, :] ** 2,
            ], axis=-1).transpose(1, 0, 2)
            normal = np.einsum("nfi,nfj->nij", jac, jac)
            normal += (1e-12 * (1.0 + np.abs(normal).max(axis=(1, 2))))[:, None, None] * np.eye(3)
            rhs = np.einsum("nfi,fn->ni", jac, residual)
            delta = np.linalg.solve(normal, rhs[..., None])[..., 0]

            a_new, b_new, t_new = a + delta[:, 0], b + delta[:, 1], t + delta[:, 2]
            positive = t_new > 0
            t_safe = np.where(positive, t_new, t)
            sse_new = self._sse(signal, tis, a_new, b_new, t_safe)
            accept = positive & np.isfinite(sse_new) & (sse_new < sse)
            if not accept.any():
                break
            a = np.where(accept, a_new, a)
            b = np.where(accept, b_new, b)
            t = np.where(accept, t_new, t)
            sse = np.where(accept, sse_new, sse)
        return a, b, t, sse

    def fit(self, series: T1Series) -> T1FitResult:
        if series.num_frames < 3:
            raise BadSeriesError(f"Three-parameter fit needs at least 3 frames, got {series.num_frames}")
        height, width = series.shape
        tis = np.asarray(series.inversion_times, dtype=np.float64)
        signal = series.stack().reshape(series.num_frames, -1)

        a, b, t = self.grid_search(signal, tis)
        a, b, t, sse = self.refine(signal, tis, a, b, t)

        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = b / a
            t1 = t * (ratio - 1.0)
        failed = (a <= 0) | ~(ratio > FIT_MIN_B_OVER_A) | ~np.isfinite(sse) | ~np.isfinite(t1) | (t1 <= 0)
        t1 = np.where(failed, 0.0, t1)
        residual = np.sqrt(np.where(np.isfinite(sse), sse, 0.0) / series.num_frames)

        def _image(values: np.ndarray) -> Image2D:
            return Image2D(data=np.nan_to_num(values, nan=0.0, posinf=0.0, neginf=0.0).reshape(height, width))

        result = T1FitResult(
            t1_map=_image(t1),
            a_map=_image(a),
            b_map=_image(b),
            t1_star_map=_image(t),
            residual_map=_image(residual),
            fail_mask=LabelMask(labels=failed.reshape(height, width).astype(np.uint8), num_classes=2),
        )
        good = t1[~failed]
        moco_logger.log_fit_summary(t1.size, int(failed.sum()), float(np.median(good)) if good.size else float("nan"))
        return result


def fit_t1(series: T1Series, fitter: Optional[ThreeParameterFitter] = None) -> T1FitResult:
    """Fit T1 per pixel; BadSeriesError for fewer than 3 frames"""
    return (fitter or ThreeParameterFitter()).fit(series)
