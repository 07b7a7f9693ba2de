import json

import numpy as np
import pytest

from imaging.containers import Image2D, LabelMask, T1Series
from imaging.series_store import MANIFEST_NAME, load_series, read_manifest, save_series
from utils.errors import BadSeriesError


def test_series_round_trip(tmp_path, rng):
    frames = [Image2D(data=rng.normal(size=(6, 7))) for _ in range(3)]
    masks = [LabelMask(labels=rng.integers(0, 3, size=(6, 7)), num_classes=3) for _ in range(3)]
    series = T1Series(frames=frames, inversion_times=[100.0, 400.0, 900.0], masks=masks, reference_index=1)

    manifest = save_series(series, tmp_path, ground_truth={"t1_map": "t1.t1mc"}, seed=5)
    assert manifest.frames == ["frame_00.t1mc", "frame_01.t1mc", "frame_02.t1mc"]

    loaded = load_series(tmp_path)
    assert loaded.reference == 1
    assert loaded.inversion_times == [100.0, 400.0, 900.0]
    for a, b in zip(loaded.frames, series.frames):
        np.testing.assert_array_equal(a.data, b.data)
    for a, b in zip(loaded.masks, series.masks):
        np.testing.assert_array_equal(a.labels, b.labels)
        assert a.num_classes == 3
    assert read_manifest(tmp_path).ground_truth == {"t1_map": "t1.t1mc"}


def test_manifest_rejects_unknown_keys(tmp_path):
    (tmp_path / MANIFEST_NAME).write_text(json.dumps({
        "inversion_times": [1.0, 2.0], "reference_index": 1, "frames": [], "colour": "red"
    }))
    with pytest.raises(BadSeriesError):
        read_manifest(tmp_path)
