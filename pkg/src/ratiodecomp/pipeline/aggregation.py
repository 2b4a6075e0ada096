"""Step 4: aggregate transformed element values into per-period series."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import AggregationError, ConfigError, InsufficientDataError
from ..panel import ElementPanel


@dataclass(frozen=True)
class AggregatedFeatureSeries:
    """Per-period series G_hat_j(t).

    ``offset`` is the mean removed by normalization, so ``values + offset``
    recovers the raw aggregate.
    """

    feature: str
    values: np.ndarray
    weighting: str = "simple"
    offset: float = 0.0
    normalized: bool = False

    @property
    def raw(self) -> np.ndarray:
        return self.values + self.offset

    @property
    def T(self) -> int:
        return int(self.values.shape[0])


def parse_weighting(weighting: str | tuple | None, default_column: str = "balance") -> tuple[str, str | None]:
    """Normalize a weighting spec to ``(mode, column)``.

    Accepts ``"simple"``, ``"sum"``, ``"weighted"`` (uses ``default_column``),
    ``"weighted(col)"`` or ``("weighted", col)``.
    """
    if weighting is None or weighting == "simple":
        return "simple", None
    if weighting == "sum":
        return "sum", None
    if isinstance(weighting, (tuple, list)):
        mode, col = weighting
        if mode != "weighted":
            raise ConfigError(f"unknown weighting {weighting!r}")
        return "weighted", col
    if weighting == "weighted":
        return "weighted", default_column
    if isinstance(weighting, str) and weighting.startswith("weighted(") and weighting.endswith(")"):
        return "weighted", weighting[len("weighted("):-1]
    raise ConfigError(f"unknown weighting {weighting!r}")


def aggregate_transformed(
    values: np.ndarray,
    panel: ElementPanel,
    weighting: str | tuple | None = "simple",
    feature: str = "",
    weights: np.ndarray | None = None,
) -> AggregatedFeatureSeries:
    """Per-period mean (simple), weighted mean, or sum of element values.

    ``weighted`` uses a panel column (``weighted(balance)``) or an explicit
    ``weights`` array aligned with panel rows.
    """
    values = np.asarray(values, dtype=float)
    T = panel.T
    mode, col = parse_weighting(weighting)
    if mode == "sum":
        out = np.bincount(panel.t, weights=values, minlength=T)
        return AggregatedFeatureSeries(feature, out, "sum")
    if mode == "simple":
        w = np.ones_like(values)
        label = "simple"
    else:
        w = np.asarray(weights, dtype=float) if weights is not None else panel.column(col)
        if np.any(w < 0):
            raise AggregationError("weights must be non-negative")
        label = f"weighted({col})" if weights is None else "weighted"
    peak = np.zeros(T)
    np.maximum.at(peak, panel.t, w)
    zero = np.flatnonzero(peak <= 0)
    if zero.size:
        raise AggregationError(f"total weight is zero at t={int(zero[0])}", t=int(zero[0]))
    # scale by the per-period maximum: equal weights become exactly 1
    w = w / peak[panel.t]
    tot = np.bincount(panel.t, weights=w, minlength=T)
    out = np.bincount(panel.t, weights=w * values, minlength=T) / tot
    return AggregatedFeatureSeries(feature, out, label)


def normalize_series(series: AggregatedFeatureSeries) -> AggregatedFeatureSeries:
    """Center the series on its mean over all periods (idempotent)."""
    if series.T < 2:
        raise InsufficientDataError("normalization needs at least two periods")
    if series.normalized:
        return series
    raw = series.raw
    mean = float(raw.mean())
    centered = raw - mean
    # second pass removes the rounding left by the first
    residual = float(centered.mean())
    centered = centered - residual
    return AggregatedFeatureSeries(series.feature, centered, series.weighting, mean + residual, True)
