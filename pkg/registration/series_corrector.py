"""
Series-level motion correction: every non-reference frame is registered to
the reference frame independently
"""
import time
from typing import List, Optional

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict

from config.constants import LOW_SIGNAL_VARIANCE_FRACTION
from config.settings import settings
from imaging.containers import T1Series
from registration.optimizer import RegistrationResult, SolveConfig, image_variance, moved_mask, register_pair
from utils.errors import BadSeriesError
from utils.logger import moco_logger
from utils.parallel import ordered_map


class FrameOutcome(BaseModel):
    """Registration outcome of one frame"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    frame: int
    result: Optional[RegistrationResult] = None
    error: Optional[str] = None
    low_signal: bool = False
    reference: bool = False

    @property
    def failed(self) -> bool:
        return self.error is not None


class SeriesCorrection(BaseModel):
    """Corrected series plus per-frame outcomes in frame order"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    series: T1Series
    outcomes: List[FrameOutcome]

    @property
    def results(self) -> List[Optional[RegistrationResult]]:
        return [outcome.result for outcome in self.outcomes]

    @property
    def failed_frames(self) -> List[int]:
        return [outcome.frame for outcome in self.outcomes if outcome.failed]


class SeriesCorrector:
    """
    Registers the frames of a series to its reference frame
    """

    def __init__(self, cfg: Optional[SolveConfig] = None, max_workers: Optional[int] = None):
        """
        Initialize the corrector

        Args:
            cfg: Solver configuration shared by every frame
            max_workers: Frame-level worker cap (default from settings)
        """
        self.cfg = cfg or SolveConfig()
        self.max_workers = max_workers

    def _is_low_signal(self, series: T1Series, index: int) -> bool:
        ref = series.frames[series.reference].data
        value_range = float(ref.max()) - float(ref.min())
        threshold = LOW_SIGNAL_VARIANCE_FRACTION * value_range ** 2
        return image_variance(series.frames[index]) < threshold

    def _register_frame(self, series: T1Series, index: int) -> FrameOutcome:
        ref = series.reference
        low_signal = self._is_low_signal(series, index)
        if low_signal:
            moco_logger.warning(f"Frame {index} is near-constant; its fields are regularization-dominated")

        masks = None
        if series.masks is not None and self.cfg.use_masks:
            masks = (series.masks[index], series.masks[ref])
        try:
            result = register_pair(series.frames[index], series.frames[ref], masks, self.cfg)
        except Exception as e:
            moco_logger.log_frame_failure(index, f"{type(e).__name__}: {e}")
            return FrameOutcome(frame=index, error=f"{type(e).__name__}: {e}", low_signal=low_signal)

        result = result.model_copy(update={"low_signal": low_signal})
        moco_logger.log_registration_done(index, result.final_loss(), result.folding, result.seconds)
        return FrameOutcome(frame=index, result=result, low_signal=low_signal)

    def correct(self, series: T1Series) -> SeriesCorrection:
        """
        Motion-correct a series

        Failed frames keep their original image and mask; the reference frame
        is passed through untouched.

        Args:
            series: Input series (F >= 2)

        Returns:
            SeriesCorrection with frames in input order
        """
        if series.num_frames < 2:
            raise BadSeriesError(f"Motion correction needs at least 2 frames, got {series.num_frames}")
        torch.set_num_threads(settings.TORCH_INTRAOP_THREADS)
        started = time.perf_counter()
        ref = series.reference
        moving = [index for index in range(series.num_frames) if index != ref]

        computed = ordered_map(lambda index: self._register_frame(series, index), moving, self.max_workers)
        by_frame = {outcome.frame: outcome for outcome in computed}
        by_frame[ref] = FrameOutcome(frame=ref, reference=True)
        outcomes = [by_frame[index] for index in range(series.num_frames)]

        frames, masks = [], [] if series.masks is not None else None
        for outcome in outcomes:
            index = outcome.frame
            if outcome.result is None:
                frames.append(series.frames[index])
            else:
                frames.append(outcome.result.moved)
            if masks is not None:
                if outcome.result is None:
                    masks.append(series.masks[index])
                else:
                    masks.append(moved_mask(series.masks[index], outcome.result))

        corrected = T1Series(
            frames=frames,
            inversion_times=list(series.inversion_times),
            masks=masks,
            reference_index=series.reference_index,
        )
        failed = sum(outcome.failed for outcome in outcomes)
        moco_logger.info(
            f"Series corrected - Frames: {series.num_frames}, Failed: {failed}, "
            f"Time: {time.perf_counter() - started:.2f}s"
        )
        return SeriesCorrection(series=corrected, outcomes=outcomes)


def motion_correct_series(series: T1Series, cfg: Optional[SolveConfig] = None,
                          max_workers: Optional[int] = None) -> SeriesCorrection:
    """Register every non-reference frame of series to its reference frame"""
    return SeriesCorrector(cfg, max_workers).correct(series)


def mean_field_magnitude(correction: SeriesCorrection) -> float:
    """Mean |u| of the forward fields of all registered frames"""
    magnitudes = [
        float(np.sqrt((o.result.field_xy.u.astype(np.float64) ** 2).sum(axis=-1)).mean())
        for o in correction.outcomes if o.result is not None
    ]
    return float(np.mean(magnitudes)) if magnitudes else 0.0
