import numpy as np
import pytest

from evaluation.report import evaluate_correction
from imaging.containers import Image2D, T1Series
from phantom.generator import PhantomSpec, generate
from registration import series_corrector
from registration.optimizer import SolveConfig
from registration.series_corrector import SeriesCorrector, mean_field_magnitude, motion_correct_series

from tests.helpers import disk_mask, smooth_image

FAST = SolveConfig(levels=1, iters_per_level=[5], min_level_size=8)


def _series(frames, masks=None, reference_index=None) -> T1Series:
    return T1Series(
        frames=frames,
        inversion_times=[100.0 * (i + 1) for i in range(len(frames))],
        masks=masks,
        reference_index=reference_index,
    )


def test_reference_frame_passes_through_untouched():
    frames = [Image2D(data=smooth_image(24, 24, seed=s)) for s in range(3)]
    correction = motion_correct_series(_series(frames), FAST, max_workers=2)
    assert [o.frame for o in correction.outcomes] == [0, 1, 2]
    assert correction.outcomes[2].reference
    assert correction.outcomes[2].result is None
    assert np.array_equal(correction.series.frames[2].data, frames[2].data)
    assert correction.failed_frames == []


def test_explicit_reference_index():
    frames = [Image2D(data=smooth_image(24, 24, seed=s)) for s in range(3)]
    correction = motion_correct_series(_series(frames, reference_index=0), FAST)
    assert correction.outcomes[0].reference
    assert np.array_equal(correction.series.frames[0].data, frames[0].data)
    assert correction.series.reference_index == 0


def test_motionless_series_stays_put():
    frame = Image2D(data=smooth_image(24, 24, seed=2))
    mask = disk_mask(24, 24, 12, 12, 5)
    correction = motion_correct_series(_series([frame] * 3, masks=[mask] * 3), FAST)
    for result in correction.results[:2]:
        assert result.folding == 0
    assert mean_field_magnitude(correction) < 1.0
    for corrected in correction.series.masks:
        assert (corrected.labels != mask.labels).mean() < 0.05


def test_failed_frame_keeps_its_input(monkeypatch):
    frames = [Image2D(data=smooth_image(24, 24, seed=s)) for s in range(4)]
    masks = [disk_mask(24, 24, 12, 12, 5)] * 4
    real = series_corrector.register_pair

    def flaky(moving, fixed, masks=None, cfg=None):
        if moving is frames[1]:
            raise RuntimeError("solver exploded")
        return real(moving, fixed, masks, cfg)

    monkeypatch.setattr(series_corrector, "register_pair", flaky)
    correction = SeriesCorrector(FAST, max_workers=1).correct(_series(frames, masks=masks))
    assert correction.failed_frames == [1]
    assert "solver exploded" in correction.outcomes[1].error
    assert correction.series.frames[1] is frames[1]
    assert np.array_equal(correction.series.masks[1].labels, masks[1].labels)
    assert correction.outcomes[0].result is not None
    assert correction.outcomes[2].result is not None


def test_near_constant_frame_is_flagged():
    frames = [Image2D(data=np.full((24, 24), 0.5)), Image2D(data=smooth_image(24, 24, seed=1))]
    correction = motion_correct_series(_series(frames), FAST)
    assert correction.outcomes[0].low_signal
    assert correction.outcomes[0].result is not None
    assert correction.outcomes[0].result.low_signal


@pytest.mark.slow
def test_phantom_series_correction(small_phantom):
    cfg = SolveConfig(levels=2, iters_per_level=[30, 30], min_level_size=16)
    correction = motion_correct_series(small_phantom.series, cfg)
    assert correction.failed_frames == []
    assert all(result.folding == 0 for result in correction.results if result is not None)
    assert correction.series.num_frames == small_phantom.series.num_frames
    ref = small_phantom.series.reference
    assert np.array_equal(correction.series.frames[ref].data, small_phantom.series.frames[ref].data)
    report = evaluate_correction(small_phantom.series, correction.series, results=correction.results)
    assert report.dsc > report.dsc_before


@pytest.mark.slow
def test_default_solver_restores_ring_overlap():
    case = generate(PhantomSpec(height=144, width=160, frames=5, motion_amplitude=3.0, seed=1))
    correction = motion_correct_series(case.series, SolveConfig())
    assert correction.failed_frames == []
    ref = case.series.reference
    assert np.array_equal(correction.series.frames[ref].data, case.series.frames[ref].data)
    report = evaluate_correction(case.series, correction.series, results=correction.results)
    assert report.dsc_before < 0.80
    assert report.dsc >= 0.90
    assert report.hd_endo < report.hd_endo_before
    assert report.hd_epi < report.hd_epi_before
