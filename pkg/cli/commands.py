"""
Command-line interface: phantom, register, correct, fit, eval and ablate
"""
import json
import time
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import click
import pandas as pd
import torch
from pydantic import ValidationError

from cli.ablation import ABLATION_COLUMNS, AblationGrid, run_ablation
from config.constants import EXIT_FAILURE, EXIT_OK, EXIT_USAGE, LABEL_MYOCARDIUM, TENSOR_SUFFIX
from config.run_config import RunConfig
from config.settings import settings
from evaluation.report import FrameStats, evaluate_correction, write_report
from evaluation.seg_metrics import dsc
from evaluation.t1_fitter import ThreeParameterFitter
from imaging.exporters import export_csv, export_json, export_pgm
from imaging.series_store import MANIFEST_NAME, load_series, read_manifest, save_series
from imaging.tensor_store import load_image, load_mask, save_tensor
from phantom.generator import PhantomSpec, generate
from registration.optimizer import moved_mask, register_pair
from registration.series_corrector import motion_correct_series
from utils.errors import ConfigError, IoFailureError, MocoError
from utils.logger import moco_logger

CONFIG_NAME = "resolved_config.json"
TIMING_NAME = "timing.json"
RESULTS_NAME = "results.json"

EXISTING_FILE = click.Path(exists=True, dir_okay=False, file_okay=True, path_type=Path)
EXISTING_DIR = click.Path(exists=True, dir_okay=True, file_okay=False, path_type=Path)


# ==================== HELPERS ====================

def _prepare_out(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise IoFailureError(f"Cannot create {path}: {e}") from e
    return path


def _parse_size(ctx, param, value: str) -> Tuple[int, int]:
    try:
        height, width = (int(part) for part in value.lower().split("x"))
    except ValueError:
        raise click.BadParameter(f"expected HxW, got {value!r}")
    if height <= 0 or width <= 0:
        raise click.BadParameter(f"sizes must be positive, got {value!r}")
    return height, width


def _load_config(path: Optional[Path], seed: Optional[int]) -> RunConfig:
    return RunConfig.from_json(path).override("solve", seed=seed)


def _load_json(path: Path) -> Any:
    try:
        return json.loads(path.read_text())
    except OSError as e:
        raise IoFailureError(f"Cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path} is not valid JSON: {e}") from e


def _frame_stats(after: Path, frames: int) -> Tuple[Optional[List[Optional[FrameStats]]], float]:
    """Per-frame statistics written by correct, or (None, 0) when absent"""
    results_path, timing_path = after / RESULTS_NAME, after / TIMING_NAME
    if not results_path.exists():
        return None, 0.0
    results = _load_json(results_path)["frames"]
    timing = _load_json(timing_path) if timing_path.exists() else {"frames": [], "total_seconds": 0.0}
    seconds = {entry["frame"]: entry["seconds"] for entry in timing.get("frames", [])}
    stats: List[Optional[FrameStats]] = [None] * frames
    for entry in results:
        if entry.get("reference") or entry.get("error"):
            continue
        stats[entry["frame"]] = FrameStats(
            frame=entry["frame"],
            folding=entry["folding"],
            seconds=seconds.get(entry["frame"], 0.0),
            low_signal=entry["low_signal"],
        )
    return stats, float(timing.get("total_seconds", 0.0))


# ==================== COMMANDS ====================

@click.group("t1moco")
@click.option("--log-level", type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False),
              default=None, help="Override LOG_LEVEL")
def cli(log_level: Optional[str]):
    """Motion correction for inversion-recovery T1 mapping series."""
    if log_level:
        moco_logger.set_level(log_level)
    torch.set_num_threads(settings.TORCH_INTRAOP_THREADS)


@cli.command("phantom")
@click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path), required=True)
@click.option("--size", default="144x160", callback=_parse_size, show_default=True, help="Grid as HxW")
@click.option("--frames", type=int, default=11, show_default=True)
@click.option("--motion", type=float, default=3.0, show_default=True, help="Motion amplitude in pixels")
@click.option("--noise", type=float, default=0.0, show_default=True, help="Noise sigma as a fraction of B")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--pgm/--no-pgm", default=True, show_default=True, help="Write PGM previews")
def cmd_phantom(out_dir: Path, size: Tuple[int, int], frames: int, motion: float, noise: float, seed: int,
                pgm: bool):
    """Generate a synthetic phantom series with ground truth."""
    spec = PhantomSpec(height=size[0], width=size[1], frames=frames, motion_amplitude=motion,
                       noise_sigma=noise, seed=seed)
    case = generate(spec)
    out = _prepare_out(out_dir)

    field_names = [f"motion_{index:02d}{TENSOR_SUFFIX}" for index in range(spec.frames)]
    for name, field in zip(field_names, case.fields):
        save_tensor(field, out / name)
    save_tensor(case.t1_map, out / f"t1_map{TENSOR_SUFFIX}")
    save_tensor(case.reference_mask, out / f"reference_mask{TENSOR_SUFFIX}")
    ground_truth = {
        "t1_map": f"t1_map{TENSOR_SUFFIX}",
        "reference_mask": f"reference_mask{TENSOR_SUFFIX}",
        "fields": field_names,
    }
    save_series(case.series, out, ground_truth=ground_truth, seed=seed)
    if pgm:
        for index, frame in enumerate(case.series.frames):
            export_pgm(frame, out / f"frame_{index:02d}.pgm")
        export_pgm(case.t1_map, out / "t1_map.pgm")
    export_json({"phantom": spec.model_dump(mode="json")}, out / CONFIG_NAME)
    click.echo(f"Phantom written to {out}")


@cli.command("register")
@click.option("--moving", type=EXISTING_FILE, required=True)
@click.option("--fixed", type=EXISTING_FILE, required=True)
@click.option("--moving-mask", type=EXISTING_FILE, default=None)
@click.option("--fixed-mask", type=EXISTING_FILE, default=None)
@click.option("--config", "config_path", type=EXISTING_FILE, default=None)
@click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path), required=True)
@click.option("--seed", type=int, default=None)
def cmd_register(moving: Path, fixed: Path, moving_mask: Optional[Path], fixed_mask: Optional[Path],
                 config_path: Optional[Path], out_dir: Path, seed: Optional[int]):
    """Register one image pair (affine then deformable)."""
    if (moving_mask is None) != (fixed_mask is None):
        raise click.UsageError("--moving-mask and --fixed-mask must be given together")
    cfg = _load_config(config_path, seed)
    out = _prepare_out(out_dir)
    export_json(cfg.resolved(), out / CONFIG_NAME)

    moving_img, fixed_img = load_image(moving), load_image(fixed)
    masks = None
    if moving_mask is not None:
        masks = (load_mask(moving_mask), load_mask(fixed_mask))
    result = register_pair(moving_img, fixed_img, masks, cfg.solve_config())

    save_tensor(result.moved, out / f"moved{TENSOR_SUFFIX}")
    if cfg.io.save_fields:
        save_tensor(result.field_xy, out / f"field_xy{TENSOR_SUFFIX}")
        save_tensor(result.field_yx, out / f"field_yx{TENSOR_SUFFIX}")
    if cfg.io.export_pgm:
        export_pgm(result.moved, out / "moved.pgm")

    trace = pd.DataFrame([{"iteration": i, "total": b.total, **b.terms} for i, b in enumerate(result.loss_trace)])
    export_csv(trace, out / "loss_trace.csv")
    summary: Dict[str, Any] = {
        "affine": result.affine.theta.tolist(),
        "folding": result.folding,
        "final_loss": result.final_loss(),
        "low_signal": result.low_signal,
    }
    if masks is not None:
        warped = moved_mask(masks[0], result)
        summary["dsc_before"] = dsc(masks[0], masks[1])
        summary["dsc_after"] = dsc(warped, masks[1])
        save_tensor(warped, out / f"moved_mask{TENSOR_SUFFIX}")
    export_json(summary, out / "summary.json")
    export_json({"total_seconds": result.seconds}, out / TIMING_NAME)
    click.echo(f"Registered {moving.name} -> {fixed.name}: folding {result.folding}")


@cli.command("correct")
@click.option("--series", "series_dir", type=EXISTING_DIR, required=True)
@click.option("--config", "config_path", type=EXISTING_FILE, default=None)
@click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path), required=True)
@click.option("--seed", type=int, default=None)
@click.option("--threads", type=int, default=None, help="Frame-level workers (default T1MOCO_THREADS)")
@click.pass_context
def cmd_correct(ctx: click.Context, series_dir: Path, config_path: Optional[Path], out_dir: Path,
                seed: Optional[int], threads: Optional[int]):
    """Motion-correct every frame of a series to its reference frame."""
    cfg = _load_config(config_path, seed)
    series = load_series(series_dir)
    out = _prepare_out(out_dir)
    export_json(cfg.resolved(), out / CONFIG_NAME)

    started = time.perf_counter()
    correction = motion_correct_series(series, cfg.solve_config(), max_workers=threads)
    total = time.perf_counter() - started

    save_series(correction.series, out, seed=cfg.solve.seed)
    fields_dir = _prepare_out(out / "fields") if cfg.io.save_fields else None
    frames, timing = [], []
    for outcome in correction.outcomes:
        entry: Dict[str, Any] = {"frame": outcome.frame, "reference": outcome.reference, "error": outcome.error,
                                 "low_signal": outcome.low_signal}
        result = outcome.result
        if result is not None:
            entry.update({"folding": result.folding, "final_loss": result.final_loss(),
                          "affine": result.affine.theta.tolist()})
            timing.append({"frame": outcome.frame, "seconds": result.seconds})
            if fields_dir is not None:
                save_tensor(result.field_xy, fields_dir / f"field_xy_{outcome.frame:02d}{TENSOR_SUFFIX}")
                save_tensor(result.field_yx, fields_dir / f"field_yx_{outcome.frame:02d}{TENSOR_SUFFIX}")
        frames.append(entry)
    if cfg.io.export_pgm:
        for index, frame in enumerate(correction.series.frames):
            export_pgm(frame, out / f"frame_{index:02d}.pgm")
    export_json({"frames": frames}, out / RESULTS_NAME)
    export_json({"total_seconds": total, "frames": timing}, out / TIMING_NAME)

    failed = correction.failed_frames
    click.echo(f"Corrected {series.num_frames} frames into {out} ({len(failed)} failed)")
    if failed:
        ctx.exit(EXIT_FAILURE)


@cli.command("fit")
@click.option("--series", "series_dir", type=EXISTING_DIR, required=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path), required=True)
@click.option("--pgm/--no-pgm", default=True, show_default=True)
def cmd_fit(series_dir: Path, out_dir: Path, pgm: bool):
    """Fit a T1 map to a series."""
    fitter = ThreeParameterFitter()
    series = load_series(series_dir)
    out = _prepare_out(out_dir)
    export_json({"fit": {
        "grid_size": len(fitter.grid),
        "t1_star_range": [float(fitter.grid[0]), float(fitter.grid[-1])],
        "gauss_newton_steps": fitter.steps,
    }}, out / CONFIG_NAME)

    fit = fitter.fit(series)
    for name in ("t1_map", "a_map", "b_map", "t1_star_map", "residual_map", "fail_mask"):
        save_tensor(getattr(fit, name), out / f"{name}{TENSOR_SUFFIX}")
    if pgm:
        export_pgm(fit.t1_map, out / "t1_map.pgm")

    valid = fit.fail_mask.labels == 0
    summary: Dict[str, Any] = {
        "pixels": int(valid.size),
        "failed": int((~valid).sum()),
        "median_t1": fit.region_median(valid),
    }
    if series.masks is not None:
        summary["myocardium_median_t1"] = fit.region_median(series.masks[series.reference].binary(LABEL_MYOCARDIUM))
    truth_name = read_manifest(series_dir).ground_truth.get("t1_map")
    if truth_name:
        truth = load_image(series_dir / truth_name).data
        region = valid & (truth > 0)
        summary["rmse"] = float(((fit.t1_map.data[region] - truth[region]) ** 2).mean() ** 0.5)
    export_json(summary, out / "summary.json")
    click.echo(f"T1 map written to {out} ({summary['failed']} failed pixels)")


@cli.command("eval")
@click.option("--before", "before_dir", type=EXISTING_DIR, required=True)
@click.option("--after", "after_dir", type=EXISTING_DIR, required=True)
@click.option("--gt", "gt_dir", type=EXISTING_DIR, default=None, help="Ground-truth series (default --before)")
@click.option("--out", "out_path", type=click.Path(dir_okay=False, path_type=Path), required=True)
def cmd_eval(before_dir: Path, after_dir: Path, gt_dir: Optional[Path], out_path: Path):
    """Compare a series before and after correction."""
    gt_dir = gt_dir or before_dir
    before, after, gt = load_series(before_dir), load_series(after_dir), load_series(gt_dir)
    truth_name = read_manifest(gt_dir).ground_truth.get("t1_map")
    t1_truth = load_image(gt_dir / truth_name) if truth_name else None
    results, runtime = _frame_stats(after_dir, after.num_frames)
    echoed = _load_json(after_dir / CONFIG_NAME) if (after_dir / CONFIG_NAME).exists() else {}

    report = evaluate_correction(before, after, gt_masks=gt.masks, results=results, runtime=runtime,
                                 t1_truth=t1_truth, config=echoed)
    _prepare_out(out_path.parent)
    write_report(report, out_path)
    export_json({"eval": {"before": str(before_dir), "after": str(after_dir), "gt": str(gt_dir)},
                 "correction": echoed}, out_path.parent / CONFIG_NAME)
    click.echo(f"DSC {report.dsc_before:.3f} -> {report.dsc:.3f}; report written to {out_path}")


@cli.command("ablate")
@click.option("--series", "series_dir", type=EXISTING_DIR, required=True)
@click.option("--grid", "grid_path", type=EXISTING_FILE, default=None, help="Sweep definition JSON")
@click.option("--config", "config_path", type=EXISTING_FILE, default=None)
@click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path), default=Path("ablation"),
              show_default=True)
@click.option("--seed", type=int, default=None)
@click.option("--threads", type=int, default=None, help="Run-level workers (default T1MOCO_THREADS)")
def cmd_ablate(series_dir: Path, grid_path: Optional[Path], config_path: Optional[Path], out_dir: Path,
               seed: Optional[int], threads: Optional[int]):
    """Sweep similarity metrics, anti-folding weights and pipeline variants."""
    cfg = _load_config(config_path, seed)
    try:
        grid = AblationGrid.model_validate(_load_json(grid_path)) if grid_path else AblationGrid()
    except ValidationError as e:
        raise ConfigError(f"Invalid ablation grid: {e}") from e
    series = load_series(series_dir)
    if series.masks is None:
        raise click.UsageError(f"{series_dir / MANIFEST_NAME} lists no masks; ablation needs them")
    out = _prepare_out(out_dir)
    export_json({**cfg.resolved(), "grid": grid.model_dump(mode="json")}, out / CONFIG_NAME)

    table = run_ablation(series, grid, cfg, max_workers=threads)
    export_csv(table, out / "ablation.csv", columns=ABLATION_COLUMNS)
    export_json({"rows": table.to_dict(orient="records"), "grid": grid.model_dump(mode="json")},
                out / "ablation.json")
    click.echo(table.to_string(index=False))


# ==================== ENTRY ====================

def _report_error(payload: Dict[str, Any]):
    click.echo(json.dumps(payload, sort_keys=True), err=True)


def run(argv: Optional[Sequence[str]] = None) -> int:
    """
    Run the CLI and map failures to exit codes

    Errors are written to stderr as one JSON object.

    Returns:
        0 on success, 2 for usage errors, 3 for I/O and format errors, 1 otherwise
    """
    try:
        rv = cli.main(args=list(argv) if argv is not None else None, prog_name="t1moco", standalone_mode=False)
    except MocoError as e:
        moco_logger.error(f"{type(e).__name__}: {e}")
        _report_error(e.to_dict())
        return e.exit_code
    except click.UsageError as e:
        _report_error({"error": type(e).__name__, "message": e.format_message()})
        return EXIT_USAGE
    except ValidationError as e:
        _report_error({"error": "ValidationError", "message": str(e)})
        return EXIT_USAGE
    except (click.ClickException, click.Abort) as e:
        _report_error({"error": type(e).__name__, "message": str(e)})
        return EXIT_FAILURE
    except Exception as e:
        moco_logger.critical(f"Unexpected failure: {e}", exc_info=True)
        _report_error({"error": type(e).__name__, "message": str(e)})
        return EXIT_FAILURE
    return rv if isinstance(rv, int) else EXIT_OK
