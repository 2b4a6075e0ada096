"""Individuals and moving-range (IX & MR) control charts."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .errors import InsufficientDataError

MR_FACTOR = 2.66


@dataclass(frozen=True)
class ControlLimits:
    r_bar: float
    mr_bar: float
    lcl: float
    ucl: float

    def to_dict(self) -> dict:
        return {"r_bar": self.r_bar, "mr_bar": self.mr_bar, "lcl": self.lcl, "ucl": self.ucl}


@dataclass(frozen=True)
class Signal:
    t: int
    value: float
    side: str  # "lower" or "upper"


def ix_mr_limits(series: Sequence[float]) -> ControlLimits:
    """Center line at the series mean, limits at +-2.66 times the mean moving range."""
    x = np.asarray(series, dtype=float)
    if x.ndim != 1 or x.shape[0] < 2:
        raise InsufficientDataError("control limits need at least two observations")
    r_bar = float(x.mean())
    # second pass removes rounding, so a constant series returns its value
    r_bar += float(np.mean(x - r_bar))
    mr_bar = float(np.abs(np.diff(x)).mean())
    return ControlLimits(r_bar, mr_bar, r_bar - MR_FACTOR * mr_bar, r_bar + MR_FACTOR * mr_bar)


def detect_signals(series: Sequence[float], limits: ControlLimits) -> list[Signal]:
    """Points strictly outside [LCL, UCL]; values on a limit count as in control."""
    x = np.asarray(series, dtype=float)
    out = []
    for t in np.flatnonzero((x < limits.lcl) | (x > limits.ucl)):
        out.append(Signal(int(t), float(x[t]), "lower" if x[t] < limits.lcl else "upper"))
    return out


def spc_frame(series: Sequence[float], limits: ControlLimits | None = None) -> pd.DataFrame:
    x = np.asarray(series, dtype=float)
    limits = limits or ix_mr_limits(x)
    flagged = {s.t for s in detect_signals(x, limits)}
    return pd.DataFrame(
        {
            "t": np.arange(x.shape[0]),
            "value": x,
            "lcl": limits.lcl,
            "ucl": limits.ucl,
            "signal": [int(t in flagged) for t in range(x.shape[0])],
        }
    )


def write_spc(series: Sequence[float], path: str | Path, limits: ControlLimits | None = None) -> Path:
    path = Path(path)
    spc_frame(series, limits).to_csv(path, index=False, lineterminator="\n", float_format="%.17g")
    return path
