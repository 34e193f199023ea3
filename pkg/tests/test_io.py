import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sparse_diffusion import io
from sparse_diffusion.plot import Figure, Series, _nice_ticks, render


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_float_round_trip(x):
    assert float(io.format_float(x)) == x


def test_float_special_values():
    assert io.format_float(1.0) == "1.0"
    assert io.format_float(1e-5) == "1.0000000000000001e-05"
    assert io.format_float(math.nan) == "NaN"
    assert io.format_float(-math.inf) == "-Infinity"


def test_json_round_trip_with_numpy():
    doc = {"a": np.float64(0.1), "b": [1, 2, np.int64(3)], "c": {"d": True, "e": None},
           "f": np.array([[1.5, 2.0]]), "g": [], "h": {}}
    back = json.loads(io.dumps(doc))
    assert back == {"a": 0.1, "b": [1, 2, 3], "c": {"d": True, "e": None}, "f": [[1.5, 2.0]],
                    "g": [], "h": {}}
    assert io.dumps(doc) == io.dumps(doc)
    with pytest.raises(TypeError):
        io.dumps({"x": object()})


def test_csv_comment_and_read(tmp_path):
    p = tmp_path / "t.csv"
    io.write_csv(p, ["ns", "msd"], [(3, 0.25), (6, np.float64(1e-6))], "config_hash=abc seed=1")
    text = p.read_text()
    assert text.splitlines()[0] == "# config_hash=abc seed=1"
    header, rows = io.read_csv(p)
    assert header == ["ns", "msd"]
    assert rows == [["3", "0.25"], ["6", "9.9999999999999995e-07"]]


def test_config_hash_ignores_key_order():
    assert io.config_hash({"a": 1, "b": [2.0]}) == io.config_hash({"b": [2.0], "a": 1})
    assert io.config_hash({"a": 1}) != io.config_hash({"a": 2})


def test_nice_ticks_cover_range():
    ticks = _nice_ticks(-63.4, -57.9)
    assert ticks == sorted(ticks) and len(ticks) >= 3
    assert ticks[0] >= -63.4 and ticks[-1] <= -57.9


def test_svg_series_and_markers():
    fig = Figure("t", "x", "y", comment="config_hash=h seed=2")
    fig.series.append(Series("a", [0, 1, 2], [1.0, 0.5, 0.7], marker=(1, 0.5)))
    fig.series.append(Series("b&c", [0, 2], [0.2, -math.inf], points=False))
    svg = render(fig)
    assert svg.count("<polyline") == 2
    assert "<!-- config_hash=h seed=2 -->" in svg
    assert "b&amp;c" in svg
    assert svg == render(fig)
