import numpy as np
import pytest

from config.constants import LABEL_BLOOD, LABEL_MYOCARDIUM
from phantom.generator import PhantomGenerator, PhantomSpec, blood_null_ti, default_inversion_times, generate
from registration.warp import folding_count
from utils.errors import InvalidSpecError

STILL = dict(height=48, width=48, frames=4, ring_radii=(6.0, 11.0), motion_amplitude=0.0)


def test_same_seed_is_bit_identical(small_phantom_spec, small_phantom):
    again = generate(small_phantom_spec)
    for a, b in zip(small_phantom.series.frames, again.series.frames):
        assert np.array_equal(a.data, b.data)
    for a, b in zip(small_phantom.fields, again.fields):
        assert np.array_equal(a.u, b.u)


def test_different_seed_changes_motion(small_phantom_spec, small_phantom):
    other = generate(small_phantom_spec.model_copy(update={"seed": 4}))
    assert not np.array_equal(other.fields[0].u, small_phantom.fields[0].u)


def test_reference_frame_is_unmoved(small_phantom):
    ref = small_phantom.series.reference
    assert ref == small_phantom.spec.frames - 1
    assert not small_phantom.fields[ref].u.any()
    assert np.array_equal(small_phantom.masks[ref].labels, small_phantom.reference_mask.labels)


def test_motion_fields_do_not_fold(small_phantom):
    assert all(folding_count(field) == 0 for field in small_phantom.fields)
    moving = [f.max_displacement() for f in small_phantom.fields[:-1]]
    assert all(0.0 < value <= 2.0 * small_phantom.spec.motion_amplitude for value in moving)


def test_labels_form_a_ring():
    spec = PhantomSpec(**STILL)
    labels = PhantomGenerator(spec).labels()
    assert labels[24, 24] == LABEL_BLOOD
    assert labels[24, 24 + 8] == LABEL_MYOCARDIUM
    assert labels[0, 0] == 0


def test_without_motion_masks_match_reference():
    case = generate(PhantomSpec(**STILL))
    for mask in case.masks:
        assert np.array_equal(mask.labels, case.reference_mask.labels)


def test_signal_rises_with_inversion_time():
    case = generate(PhantomSpec(**STILL, inversion_times=[100.0, 400.0, 1200.0, 4000.0]))
    stack = case.series.stack()
    assert np.all(np.diff(stack, axis=0) > 0)


def test_signal_approaches_a_for_long_inversion_times():
    case = generate(PhantomSpec(**STILL, inversion_times=[100.0, 1000.0, 10000.0, 100000.0]))
    np.testing.assert_allclose(case.series.frames[-1].data, 1.0, atol=1e-6)


def test_blood_nulls_at_its_crossing_time():
    spec = PhantomSpec(**STILL)
    null = blood_null_ti(spec)
    assert null == pytest.approx(1700.0 * np.log(2.0))
    case = generate(spec.model_copy(update={"inversion_times": [100.0, null, 2000.0, 3000.0]}))
    blood = case.reference_mask.labels == LABEL_BLOOD
    np.testing.assert_allclose(case.series.frames[1].data[blood], 0.0, atol=1e-6)


def test_ground_truth_t1_map():
    case = generate(PhantomSpec(**STILL))
    labels = case.reference_mask.labels
    assert np.all(case.t1_map.data[labels == LABEL_MYOCARDIUM] == 1100.0)
    assert np.all(case.t1_map.data[labels == LABEL_BLOOD] == 1700.0)
    assert case.spec.t1_star(1100.0) == pytest.approx(1100.0)


def test_noise_is_added_per_frame():
    clean = generate(PhantomSpec(**STILL))
    noisy = generate(PhantomSpec(**STILL, noise_sigma=0.02))
    diff = noisy.series.frames[0].data.astype(np.float64) - clean.series.frames[0].data
    assert 0.02 < diff.std() < 0.06


def test_default_inversion_times():
    tis = default_inversion_times(11)
    assert tis[0] == 100.0 and tis[-1] == 3000.0
    assert all(b > a for a, b in zip(tis, tis[1:]))


@pytest.mark.parametrize("overrides", [
    {"height": 8},
    {"frames": 1},
    {"ring_radii": (11.0, 6.0)},
    {"ring_radii": (6.0, 30.0)},
    {"motion_amplitude": -1.0},
    {"noise_sigma": -0.1},
    {"t1_myo": 0.0},
    {"signal_a": 2.0, "signal_b": 1.0},
    {"inversion_times": [100.0, 100.0, 200.0, 300.0]},
    {"inversion_times": [100.0, 200.0]},
])
def test_invalid_specs(overrides):
    with pytest.raises(InvalidSpecError):
        PhantomSpec(**{**STILL, **overrides})


def test_default_radii_scale_with_grid():
    assert PhantomSpec().radii() == pytest.approx((20.0, 26.0))
    inner, outer = PhantomSpec(height=32, width=40, frames=3).radii()
    assert inner == pytest.approx(32 * 20.0 / 144.0)
    assert outer < 16.0
