import numpy as np
import pytest

from evaluation.t1_fitter import ThreeParameterFitter, fit_t1
from imaging.containers import Image2D, T1Series
from phantom.generator import default_inversion_times, generate
from utils.errors import BadSeriesError


def _ir_series(a: np.ndarray, b: np.ndarray, t1_star: np.ndarray, tis) -> T1Series:
    frames = [Image2D(data=a - b * np.exp(-ti / t1_star)) for ti in tis]
    return T1Series(frames=frames, inversion_times=list(tis))


def test_noiseless_fit_recovers_t1(rng):
    shape = (6, 7)
    a = rng.uniform(0.5, 1.5, size=shape)
    b = a * rng.uniform(1.6, 2.4, size=shape)
    t1_star = rng.uniform(300.0, 1500.0, size=shape)
    truth = t1_star * (b / a - 1.0)

    result = fit_t1(_ir_series(a, b, t1_star, default_inversion_times(11)))
    assert not result.fail_mask.labels.any()
    np.testing.assert_allclose(result.t1_map.data, truth, rtol=1e-3)
    np.testing.assert_allclose(result.t1_star_map.data, t1_star, rtol=1e-3)
    assert float(result.residual_map.data.max()) < 1e-4


def test_constant_pixels_are_flagged():
    frames = [Image2D(data=np.full((3, 3), 0.7)) for _ in range(5)]
    series = T1Series(frames=frames, inversion_times=[100.0, 300.0, 700.0, 1500.0, 3000.0])
    result = fit_t1(series)
    assert result.fail_mask.labels.all()
    assert not result.t1_map.data.any()


def test_mixed_pixels_fail_independently():
    tis = [100.0, 300.0, 700.0, 1500.0, 3000.0]
    a = np.ones((2, 2))
    b = np.array([[2.0, 0.0], [2.0, 2.0]])
    t1_star = np.full((2, 2), 800.0)
    result = fit_t1(_ir_series(a, b, t1_star, tis))
    assert result.fail_mask.labels.tolist() == [[0, 1], [0, 0]]
    assert result.t1_map.data[0, 0] == pytest.approx(800.0, rel=1e-3)
    assert result.region_median(np.ones((2, 2), dtype=bool)) == pytest.approx(800.0, rel=1e-3)


def test_two_frames_are_rejected():
    frames = [Image2D(data=np.zeros((3, 3))), Image2D(data=np.ones((3, 3)))]
    with pytest.raises(BadSeriesError):
        fit_t1(T1Series(frames=frames, inversion_times=[100.0, 200.0]))


def test_grid_search_lands_near_the_truth():
    tis = np.asarray(default_inversion_times(8))
    signal = (1.0 - 2.0 * np.exp(-tis / 900.0))[:, None]
    a, b, t = ThreeParameterFitter(grid_size=50).grid_search(signal, tis)
    assert t[0] == pytest.approx(900.0, rel=0.1)
    assert a[0] == pytest.approx(1.0, rel=0.05)


@pytest.mark.slow
def test_motionless_phantom_myocardium(small_phantom_spec):
    case = generate(small_phantom_spec.model_copy(update={"motion_amplitude": 0.0}))
    result = fit_t1(case.series)
    region = case.reference_mask.labels == 1
    assert result.region_median(region) == pytest.approx(1100.0, rel=1e-3)
