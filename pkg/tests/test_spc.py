import numpy as np
import pandas as pd
import pytest

from ratiodecomp.errors import InsufficientDataError
from ratiodecomp.spc import MR_FACTOR, detect_signals, ix_mr_limits, write_spc


def test_hand_example():
    lim = ix_mr_limits([0, 1, 0, 1, 0])
    assert lim.r_bar == pytest.approx(0.4)
    assert lim.mr_bar == pytest.approx(1.0)
    assert lim.lcl == pytest.approx(-2.26)
    assert lim.ucl == pytest.approx(3.06)


def test_constant_series():
    lim = ix_mr_limits([0.7] * 6)
    assert lim.lcl == lim.ucl == lim.r_bar == 0.7
    assert detect_signals([0.7] * 6, lim) == []


def test_too_short():
    with pytest.raises(InsufficientDataError):
        ix_mr_limits([1.0])


def test_single_upper_signal():
    x = np.zeros(20)
    x[1::2] = 0.1
    x[7] = 5.0
    sig = detect_signals(x, ix_mr_limits(x))
    assert [(s.t, s.side) for s in sig] == [(7, "upper")]


def test_in_control_is_empty():
    x = np.sin(np.arange(30))
    assert detect_signals(x, ix_mr_limits(x)) == []


def test_boundary_counts_as_in_control():
    lim = ix_mr_limits([0, 1, 0, 1, 0])
    assert detect_signals([lim.lcl, lim.ucl], lim) == []


def test_brute_force_complement():
    rng = np.random.default_rng(0)
    for _ in range(50):
        x = rng.standard_t(3, size=int(rng.integers(2, 60)))
        lim = ix_mr_limits(x)
        mean = sum(x) / len(x)
        mr = sum(abs(x[i] - x[i - 1]) for i in range(1, len(x))) / (len(x) - 1)
        assert lim.ucl == pytest.approx(mean + MR_FACTOR * mr, abs=1e-12)
        flagged = {s.t for s in detect_signals(x, lim)}
        assert flagged == {t for t, v in enumerate(x) if not lim.lcl <= v <= lim.ucl}


def test_shift_and_scale_equivariance():
    rng = np.random.default_rng(1)
    x = rng.standard_t(2, size=40)
    base = ix_mr_limits(x)
    sig = [s.t for s in detect_signals(x, base)]
    shifted = ix_mr_limits(x + 3.5)
    assert shifted.lcl == pytest.approx(base.lcl + 3.5) and shifted.ucl == pytest.approx(base.ucl + 3.5)
    assert [s.t for s in detect_signals(x + 3.5, shifted)] == sig
    scaled = ix_mr_limits(x * 7.0)
    assert scaled.mr_bar == pytest.approx(7 * base.mr_bar) and scaled.ucl == pytest.approx(7 * base.ucl)
    assert [s.t for s in detect_signals(x * 7.0, scaled)] == sig


def test_model_residuals_center_on_zero(default_run):
    res, _, _ = default_run
    assert abs(ix_mr_limits(res.model.residuals).r_bar) < 1e-10


def test_csv_columns(tmp_path):
    p = write_spc([0, 1, 0, 1, 0, 9], tmp_path / "s.csv")
    df = pd.read_csv(p)
    assert list(df.columns) == ["t", "value", "lcl", "ucl", "signal"]
    assert df["signal"].tolist() == [0, 0, 0, 0, 0, 1]
