"""
Before/after evaluation of a motion correction run
"""
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from config.constants import LABEL_MYOCARDIUM, METHOD_CORRECTED, METHOD_UNCORRECTED, REPORT_CSV_COLUMNS
from evaluation.seg_metrics import contour_hausdorff, dsc
from evaluation.t1_fitter import fit_t1
from imaging.containers import Image2D, LabelMask, T1Series, check_same_grid
from imaging.exporters import export_csv, export_json
from registration.optimizer import RegistrationResult, moved_mask
from utils.errors import BadSeriesError
from utils.logger import moco_logger


class T1Error(BaseModel):
    """Myocardial T1 error against a ground-truth map"""
    model_config = ConfigDict(frozen=True)

    median_rel_error_before: float
    median_rel_error_after: float
    rmse_before: float
    rmse_after: float


class FrameStats(BaseModel):
    """Per-frame registration statistics as stored next to a corrected series"""
    model_config = ConfigDict(frozen=True)

    frame: int
    folding: int = 0
    seconds: float = 0.0
    low_signal: bool = False


FrameResult = Union[RegistrationResult, FrameStats]


class EvalReport(BaseModel):
    """Aggregated metrics; the unsuffixed fields describe the corrected series"""
    model_config = ConfigDict(frozen=True)

    dsc: float
    hd_endo: float
    hd_epi: float
    dsc_before: float
    hd_endo_before: float
    hd_epi_before: float
    folding_mean: float
    runtime: float
    rows: List[Dict[str, Any]]
    t1_error: Optional[T1Error] = None
    low_signal_frames: List[int] = Field(default_factory=list)
    failed_frames: List[int] = Field(default_factory=list)
    config: Dict[str, Any] = Field(default_factory=dict)

    def table(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=REPORT_CSV_COLUMNS)


def _nanmean(values: Sequence[float]) -> float:
    array = np.asarray(values, dtype=np.float64)
    if array.size == 0 or np.isnan(array).all():
        return float("nan")
    return float(np.nanmean(array))


def _frame_rows(method: str, masks: List[LabelMask], reference: int,
                results: Optional[Sequence[Optional[FrameResult]]]) -> List[Dict[str, Any]]:
    ref_mask = masks[reference]
    rows = []
    for index, mask in enumerate(masks):
        if index == reference:
            continue
        hd_endo, hd_epi = contour_hausdorff(mask, ref_mask)
        result = results[index] if results is not None else None
        rows.append({
            "method": method,
            "frame": index,
            "dsc": dsc(mask, ref_mask, LABEL_MYOCARDIUM),
            "hd_endo": hd_endo,
            "hd_epi": hd_epi,
            "folding": result.folding if result is not None else 0,
            "seconds": result.seconds if result is not None else 0.0,
        })
    return rows


def _t1_error(before: T1Series, after: T1Series, truth: Image2D, region: np.ndarray) -> T1Error:
    def _errors(series: T1Series):
        fit = fit_t1(series)
        valid = region & (fit.fail_mask.labels == 0)
        if not valid.any():
            return float("nan"), float("nan")
        estimate = fit.t1_map.data[valid].astype(np.float64)
        reference = truth.data[valid].astype(np.float64)
        relative = np.abs(estimate - reference) / reference
        return float(np.median(relative)), float(np.sqrt(np.mean((estimate - reference) ** 2)))

    median_before, rmse_before = _errors(before)
    median_after, rmse_after = _errors(after)
    return T1Error(
        median_rel_error_before=median_before,
        median_rel_error_after=median_after,
        rmse_before=rmse_before,
        rmse_after=rmse_after,
    )


def evaluate_correction(before: T1Series, after: T1Series, gt_masks: Optional[List[LabelMask]] = None,
                        results: Optional[Sequence[Optional[FrameResult]]] = None,
                        runtime: float = 0.0, t1_truth: Optional[Image2D] = None,
                        config: Optional[Dict[str, Any]] = None) -> EvalReport:
    """
    Compare a series before and after motion correction

    Frame masks are scored against the reference-frame mask. Corrected masks
    come from the corrected series, or are carried through the results when
    the corrected series has none.

    Args:
        before: Uncorrected series
        after: Corrected series
        gt_masks: Per-frame ground-truth masks of the uncorrected series (default: before.masks)
        results: Per-frame registration results (None for the reference or failed frames)
        runtime: Wall-clock seconds of the correction
        t1_truth: Ground-truth T1 map in reference geometry, enabling the T1 error
        config: Configuration echoed into the report

    Returns:
        EvalReport
    """
    if before.num_frames != after.num_frames:
        raise BadSeriesError(f"Series differ in length: {before.num_frames} vs {after.num_frames}")
    check_same_grid(before.shape, after.shape)
    masks_before = list(gt_masks) if gt_masks is not None else before.masks
    if masks_before is None:
        raise BadSeriesError("Evaluation needs masks for the uncorrected series")
    if len(masks_before) != before.num_frames:
        raise BadSeriesError(f"{len(masks_before)} masks for {before.num_frames} frames")
    if results is not None and len(results) != before.num_frames:
        raise BadSeriesError(f"{len(results)} results for {before.num_frames} frames")

    reference = before.reference
    if after.masks is not None:
        masks_after = list(after.masks)
    else:
        masks_after = [
            moved_mask(mask, results[index])
            if results is not None and isinstance(results[index], RegistrationResult) else mask
            for index, mask in enumerate(masks_before)
        ]

    rows_before = _frame_rows(METHOD_UNCORRECTED, list(masks_before), reference, None)
    rows_after = _frame_rows(METHOD_CORRECTED, masks_after, reference, results)

    registered = [r for r in (results or []) if r is not None]
    t1_error = None
    if t1_truth is not None and before.num_frames >= 3:
        region = masks_before[reference].binary(LABEL_MYOCARDIUM)
        t1_error = _t1_error(before, after, t1_truth, region)

    report = EvalReport(
        dsc=_nanmean([row["dsc"] for row in rows_after]),
        hd_endo=_nanmean([row["hd_endo"] for row in rows_after]),
        hd_epi=_nanmean([row["hd_epi"] for row in rows_after]),
        dsc_before=_nanmean([row["dsc"] for row in rows_before]),
        hd_endo_before=_nanmean([row["hd_endo"] for row in rows_before]),
        hd_epi_before=_nanmean([row["hd_epi"] for row in rows_before]),
        folding_mean=float(np.mean([r.folding for r in registered])) if registered else 0.0,
        runtime=runtime,
        rows=rows_before + rows_after,
        t1_error=t1_error,
        low_signal_frames=[i for i, r in enumerate(results or []) if r is not None and r.low_signal],
        failed_frames=[
            i for i, r in enumerate(results or []) if r is None and i != reference
        ],
        config=config or {},
    )
    moco_logger.info(
        f"Evaluation - DSC: {report.dsc_before:.3f} -> {report.dsc:.3f}, "
        f"HD endo: {report.hd_endo_before:.2f} -> {report.hd_endo:.2f}, "
        f"HD epi: {report.hd_epi_before:.2f} -> {report.hd_epi:.2f}, Folding: {report.folding_mean:.2f}"
    )
    return report


def write_report(report: EvalReport, csv_path: Union[str, Path]) -> Path:
    """Write the per-frame CSV and its JSON mirror next to it; returns the JSON path"""
    csv_path = Path(csv_path)
    export_csv(report.table(), csv_path, columns=REPORT_CSV_COLUMNS)
    json_path = csv_path.with_suffix(".json")
    export_json(report.model_dump(), json_path)
    return json_path
