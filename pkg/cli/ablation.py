"""
Ablation sweeps: similarity metric x anti-folding weight x pipeline variant
"""
import time
from typing import Any, Dict, List, Optional, Tuple

import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator

from config.constants import ABLATION_LAMBDA1, ABLATION_METRICS, ABLATION_VARIANTS
from config.run_config import RunConfig
from evaluation.report import evaluate_correction
from imaging.containers import T1Series
from registration.series_corrector import motion_correct_series
from registration.similarity import WlsWeights
from utils.logger import moco_logger
from utils.parallel import ordered_map

ABLATION_COLUMNS = [
    "variant", "metric", "lambda1", "dsc_before", "dsc", "hd_endo", "hd_epi", "folding_mean", "seconds"
]


class AblationGrid(BaseModel):
    """Sweep definition read from the grid JSON"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    metrics: List[str] = Field(default_factory=lambda: list(ABLATION_METRICS))
    lambda1: List[float] = Field(default_factory=lambda: list(ABLATION_LAMBDA1))
    variants: List[str] = Field(default_factory=lambda: ["full"])
    field_step: Optional[float] = Field(default=None, gt=0.0)
    lambda2: Optional[float] = Field(default=None, ge=0.0)
    backtracking: Optional[bool] = None

    @field_validator("metrics")
    @classmethod
    def _known_metrics(cls, v: List[str]) -> List[str]:
        unknown = [name for name in v if name not in ABLATION_METRICS]
        if unknown:
            raise ValueError(f"Unknown metrics {unknown}; choose from {list(ABLATION_METRICS)}")
        return v

    @field_validator("variants")
    @classmethod
    def _known_variants(cls, v: List[str]) -> List[str]:
        unknown = [name for name in v if name not in ABLATION_VARIANTS]
        if unknown:
            raise ValueError(f"Unknown variants {unknown}; choose from {ABLATION_VARIANTS}")
        return v

    @field_validator("lambda1")
    @classmethod
    def _non_negative(cls, v: List[float]) -> List[float]:
        if any(value < 0 for value in v):
            raise ValueError("lambda1 values must be non-negative")
        return v

    def runs(self) -> List[Tuple[str, str, float]]:
        """Distinct (variant, metric, lambda1) triples in sweep order"""
        seen, runs = set(), []
        for variant in self.variants:
            for metric in self.metrics:
                for lambda1 in self.lambda1:
                    key = (variant, metric, 0.0 if variant == "no_bloc" else float(lambda1))
                    if key not in seen:
                        seen.add(key)
                        runs.append(key)
        return runs


def configure_run(base: RunConfig, variant: str, metric: str, lambda1: float,
                  field_step: Optional[float] = None, lambda2: Optional[float] = None,
                  backtracking: Optional[bool] = None) -> RunConfig:
    """Run configuration of one sweep cell; None keeps the base value"""
    weights = WlsWeights.from_tuple(ABLATION_METRICS[metric])
    cfg = base.override("metric", weights=weights.model_dump())
    cfg = cfg.override("loss", lambda1=lambda1, lambda2=lambda2)
    cfg = cfg.override("solve", field_step=field_step, backtracking=backtracking)
    if variant == "no_affine":
        cfg = cfg.override("solve", skip_affine=True)
    elif variant == "no_bloc":
        cfg = cfg.override("loss", lambda1=0.0, inverse_consistency=False)
    elif variant == "weak_supervision":
        cfg = cfg.override("solve", use_masks=True)
    return cfg


def run_ablation(series: T1Series, grid: AblationGrid, base: Optional[RunConfig] = None,
                 max_workers: Optional[int] = None) -> pd.DataFrame:
    """
    Correct and evaluate the series once per sweep cell

    Args:
        series: Series with per-frame masks
        grid: Sweep definition
        base: Configuration every cell starts from
        max_workers: Run-level worker cap; frames inside a run are processed serially

    Returns:
        One row per run, in sweep order
    """
    base = base or RunConfig()
    runs = grid.runs()
    moco_logger.info(f"Ablation sweep - Runs: {len(runs)}, Frames: {series.num_frames}")

    def _run(cell: Tuple[str, str, float]) -> Dict[str, Any]:
        variant, metric, lambda1 = cell
        cfg = configure_run(base, variant, metric, lambda1, grid.field_step, grid.lambda2, grid.backtracking)
        started = time.perf_counter()
        correction = motion_correct_series(series, cfg.solve_config(), max_workers=1)
        seconds = time.perf_counter() - started
        report = evaluate_correction(series, correction.series, results=correction.results, runtime=seconds)
        moco_logger.info(
            f"Ablation run {variant}/{metric}/λ1={lambda1:g} - DSC: {report.dsc:.3f}, "
            f"Folding: {report.folding_mean:.2f}"
        )
        return {
            "variant": variant,
            "metric": metric,
            "lambda1": lambda1,
            "dsc_before": report.dsc_before,
            "dsc": report.dsc,
            "hd_endo": report.hd_endo,
            "hd_epi": report.hd_epi,
            "folding_mean": report.folding_mean,
            "seconds": seconds,
        }

    rows = ordered_map(_run, runs, max_workers)
    return pd.DataFrame(rows, columns=ABLATION_COLUMNS)
