import json

import numpy as np
import pandas as pd

from imaging.containers import Image2D
from imaging.exporters import export_csv, export_json, export_pgm, window_to_uint8


def test_pgm_ramp(tmp_path):
    img = Image2D(data=np.array([[0.0, 1.0, 2.0, 3.0], [3.0, 2.0, 1.0, 0.0]]))
    path = tmp_path / "ramp.pgm"
    export_pgm(img, path)
    blob = path.read_bytes()
    header = b"P5\n4 2\n255\n"
    assert blob.startswith(header)
    assert list(blob[len(header):]) == [0, 85, 170, 255, 255, 170, 85, 0]


def test_constant_image_is_mid_gray():
    pixels = window_to_uint8(Image2D(data=np.full((3, 3), 7.0)))
    assert (pixels == 128).all()


def test_csv_uses_lf_and_column_order(tmp_path):
    path = tmp_path / "table.csv"
    export_csv([{"b": 1, "a": 0.5}], path, columns=["a", "b"])
    assert path.read_bytes() == b"a,b\n0.5,1\n"
    assert list(pd.read_csv(path).columns) == ["a", "b"]


def test_json_sorted_with_numpy_values(tmp_path):
    path = tmp_path / "doc.json"
    export_json({"z": np.float32(1.5), "a": np.arange(3)}, path)
    text = path.read_text()
    assert text.index('"a"') < text.index('"z"')
    assert json.loads(text) == {"a": [0, 1, 2], "z": 1.5}


def test_json_writes_non_finite_numbers_as_null(tmp_path):
    path = tmp_path / "doc.json"
    export_json({"hd": float("nan"), "values": np.array([1.0, np.inf]), "n": np.int64(3)}, path)
    document = json.loads(path.read_text())
    assert document == {"hd": None, "n": 3, "values": [1.0, None]}
    assert "NaN" not in path.read_text()
