import math

import numpy as np
import pytest

from wsls_commons.metrics import (
    SeriesBundle,
    artifact_name,
    equalization_spread,
    smooth,
    tail_mean,
)
from wsls_commons.queueing import ParameterError


def test_smooth_examples():
    assert np.all(smooth([0.3] * 20) == 0.3)
    x = np.random.default_rng(0).random(50)
    assert np.array_equal(smooth(x, 1.0), x)
    step = np.r_[0.0, np.ones(40)]
    y = smooth(step, 0.05)
    t = np.arange(41)
    assert np.allclose(y, 1 - 0.95**t, atol=1e-14)


def test_smooth_errors_and_gaps():
    for a in (0.0, -0.1, 1.5):
        with pytest.raises(ParameterError):
            smooth([1.0], a)
    with pytest.raises(ParameterError):
        smooth([])
    y = smooth([1.0, np.nan, 0.0], 0.5)
    assert list(y) == [1.0, 1.0, 0.5]
    # leading gaps stay NaN until the first observation
    y = smooth([np.nan, 2.0, 2.0], 0.5)
    assert math.isnan(y[0]) and y[1] == 2.0


def test_tail_mean_examples():
    assert tail_mean([4.0] * 10, 0.3) == 4.0
    assert tail_mean([0.0] * 9 + [1.0], 0.1) == 1.0
    ramp = np.linspace(0, 1, 101)
    top = ramp[-11:]  # ceil(0.1 * 101) = 11 samples
    assert tail_mean(ramp, 0.1) == pytest.approx(sum(top) / len(top), abs=1e-15)
    x = np.random.default_rng(2).random(37)
    assert tail_mean(x, 1.0) == pytest.approx(x.mean(), abs=1e-15)
    with pytest.raises(ParameterError):
        tail_mean([], 0.5)


def test_spread():
    assert equalization_spread([0.2, 0.2, 0.2]) == 0.0
    assert equalization_spread([0.1, 0.2, 0.3]) == pytest.approx(1.0)
    assert equalization_spread([0.0, 0.0]) == 0.0
    with pytest.raises(ParameterError):
        equalization_spread([0.1])


def test_artifact_name():
    assert artifact_name("fig3_rho1", 4, "sim") == "fig3_rho1_4_sim.csv"
    assert artifact_name("x", 0, "ifd", "json") == "x_0_ifd.json"


def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(9)
    cols = {
        "time": np.arange(1, 51) * 0.1,
        "n_1": rng.integers(0, 1000, 50),
        "p": rng.random(50) * 1e-7,
        "big": rng.normal(size=50) * 1e12,
    }
    b = SeriesBundle(cols, {"config_digest": "abc", "seed": 1})
    path = tmp_path / "x.csv"
    b.write_csv(path)
    back = SeriesBundle.read_csv(path)
    assert back.names == ["time", "n_1", "p", "big"]
    assert back.columns["n_1"].dtype.kind == "i"
    for k, v in cols.items():
        assert np.allclose(back.columns[k], v, rtol=1e-15, atol=0)
    # header first, time first, dot decimal separator
    first = path.read_text().splitlines()[0]
    assert first == "time,n_1,p,big"


def test_json_round_trip_with_gaps(tmp_path):
    b = SeriesBundle({"time": [1.0, 2.0], "p": [np.nan, 0.5]}, {"module": "t"})
    b.write_json(tmp_path / "x.json")
    back = SeriesBundle.read_json(tmp_path / "x.json")
    assert math.isnan(back.columns["p"][0]) and back.columns["p"][1] == 0.5
    assert back.provenance == {"module": "t"}


def test_bundle_invariants():
    with pytest.raises(ParameterError):
        SeriesBundle({"time": [1.0, 2.0], "x": [1.0]})
    with pytest.raises(ParameterError):
        SeriesBundle({"time": [1.0, 1.0]})


def test_time_column_is_written_first(tmp_path):
    b = SeriesBundle({"x": [1, 2], "time": [0.5, 1.5]})
    b.write_csv(tmp_path / "a.csv")
    assert (tmp_path / "a.csv").read_text().startswith("time,x\n")
