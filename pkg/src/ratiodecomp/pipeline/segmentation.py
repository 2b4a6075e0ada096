"""Step 1: segment (element, period) rows and aggregate the metric per segment."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..errors import ConfigError, DataError, DegenerateSegmentationError
from ..panel import ElementPanel, MetricSpec, group_reduce

SCHEMES = ("percentile", "equal_range", "generalized_grid")
DEFAULT_BINS = 10
DEFAULT_N_MIN = 30
DEFAULT_MAX_CATEGORIES = 20


@dataclass(frozen=True, eq=False)
class SegmentTable:
    """Assignment of every panel row to one segment.

    ``assignment`` is aligned with the panel's row order. ``bin_edges`` holds
    the inner cut points per dimension; a value ``v`` lands in bin
    ``searchsorted(edges, v, side="right")``.
    """

    scheme: str
    dims: tuple[str, ...]
    assignment: np.ndarray
    n_segments: int
    bin_edges: dict[str, np.ndarray]
    shape: tuple[int, ...]
    categorical: bool = False
    zero_bins: dict[str, bool] = field(default_factory=dict)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.n_segments)


def _percentile_edges(values: np.ndarray, bins: int) -> np.ndarray:
    """Cut points between order statistics at multiples of n/bins, deduplicated."""
    s = np.sort(values)
    n = s.shape[0]
    pos = np.unique(np.rint(np.arange(1, bins) * n / bins).astype(np.int64))
    pos = pos[(pos > 0) & (pos < n)]
    edges = 0.5 * (s[pos - 1] + s[pos])
    edges = np.unique(edges)
    # an edge at the minimum would leave the bottom bin empty
    return edges[edges > s[0]] if edges.size else edges


def _equal_range_edges(values: np.ndarray, bins: int) -> np.ndarray:
    lo, hi = float(values.min()), float(values.max())
    return np.linspace(lo, hi, bins + 1)[1:-1]


def _category_edges(values: np.ndarray) -> np.ndarray:
    u = np.unique(values)
    return 0.5 * (u[1:] + u[:-1])


def _assign(values: np.ndarray, edges: np.ndarray) -> np.ndarray:
    return np.searchsorted(edges, values, side="right").astype(np.int64)


def segment_values(
    values: np.ndarray,
    scheme: str = "percentile",
    bins: int = DEFAULT_BINS,
    max_categories: int = DEFAULT_MAX_CATEGORIES,
    name: str = "feature",
) -> SegmentTable:
    """Univariate segmentation of a raw value array (one entry per panel row)."""
    values = np.asarray(values, dtype=float)
    if scheme not in ("percentile", "equal_range"):
        raise ConfigError(f"univariate scheme must be percentile or equal_range, got {scheme!r}")
    if bins < 2:
        raise ConfigError("bins must be >= 2")
    distinct = np.unique(values)
    if distinct.size < 2:
        raise DegenerateSegmentationError(f"feature {name!r} is constant; cannot segment")
    categorical = distinct.size <= max_categories
    if categorical:
        edges = _category_edges(distinct)
    elif scheme == "percentile":
        edges = _percentile_edges(values, bins)
    else:
        edges = _equal_range_edges(values, bins)
    assignment = _assign(values, edges)
    return SegmentTable(
        scheme=scheme,
        dims=(name,),
        assignment=assignment,
        n_segments=edges.size + 1,
        bin_edges={name: edges},
        shape=(edges.size + 1,),
        categorical=categorical,
    )


def segment_univariate(
    panel: ElementPanel,
    feature: str,
    scheme: str = "percentile",
    bins: int = DEFAULT_BINS,
    max_categories: int = DEFAULT_MAX_CATEGORIES,
    values: np.ndarray | None = None,
) -> SegmentTable:
    """Segment rows by one feature.

    ``percentile`` gives equal-count bins over the pooled (i, t) values,
    ``equal_range`` equal-width bins over [min, max]. Features with at most
    ``max_categories`` distinct values get one segment per value. ``values``
    overrides the panel column (used for lagged features).
    """
    if values is None:
        values = panel.feature(feature)
    return segment_values(values, scheme, bins, max_categories, name=feature)


def segment_cross(tables: Sequence[SegmentTable]) -> SegmentTable:
    """Cross-product of several segmentations of the same panel rows."""
    if not tables:
        raise ConfigError("segment_cross needs at least one table")
    shape = tuple(t.n_segments for t in tables)
    assignment = np.ravel_multi_index(tuple(t.assignment for t in tables), shape).astype(np.int64)
    edges = {}
    for t in tables:
        edges.update(t.bin_edges)
    return SegmentTable(
        scheme="cross",
        dims=tuple(d for t in tables for d in t.dims),
        assignment=assignment,
        n_segments=int(np.prod(shape)),
        bin_edges=edges,
        shape=shape,
    )


def segment_generalized(
    panel: ElementPanel,
    grid: Mapping[str, int] | None = None,
) -> SegmentTable:
    """Cross-product quantile grid over underlying variables.

    An underlying whose share of exact zeros is at least ``1/bins`` gets a
    dedicated zero bin plus ``bins - 1`` quantile bins of its positive values.
    Constant underlyings collapse to a single bin.
    """
    if grid is None:
        grid = {name: DEFAULT_BINS for name in panel.underlyings}
    dims, edges, zero_bins, codes, shape = [], {}, {}, [], []
    for name, bins in grid.items():
        v = panel.underlying(name)
        dims.append(name)
        if np.unique(v).size < 2:
            edges[name] = np.empty(0)
            zero_bins[name] = False
            codes.append(np.zeros(v.shape[0], dtype=np.int64))
            shape.append(1)
            continue
        if bins < 2:
            raise ConfigError(f"grid count for {name!r} must be >= 2")
        zero = v == 0
        if zero.mean() >= 1.0 / bins and (~zero).sum() > 0:
            pos = v[~zero]
            if np.unique(pos).size > 1 and bins > 2:
                inner = _percentile_edges(pos, bins - 1)
            else:
                inner = np.empty(0)
            e = np.concatenate([[0.0], inner])
            zero_bins[name] = True
            code = np.where(zero, 0, 1 + _assign(v, inner))
        else:
            e = _percentile_edges(v, bins)
            zero_bins[name] = False
            code = _assign(v, e)
        edges[name] = e
        codes.append(code)
        shape.append(e.size + 1)
    if all(s == 1 for s in shape):
        raise DegenerateSegmentationError("all underlyings are constant; cannot segment")
    assignment = np.ravel_multi_index(tuple(codes), tuple(shape)).astype(np.int64)
    return SegmentTable(
        scheme="generalized_grid",
        dims=tuple(dims),
        assignment=assignment,
        n_segments=int(np.prod(shape)),
        bin_edges=edges,
        shape=tuple(shape),
        zero_bins=zero_bins,
    )


@dataclass(frozen=True, eq=False)
class SegmentAggregates:
    """Per-segment summaries for retained segments.

    ``z_var`` is the delta-method sampling variance of the segment ratio
    (zero when the metric operators do not admit one).
    """

    segments: np.ndarray
    n: np.ndarray
    x_hat: dict[str, np.ndarray]
    y_hat: dict[str, np.ndarray]
    z: np.ndarray
    z_var: np.ndarray
    filtered: list[tuple[int, int, str]]
    spec: MetricSpec | None = None

    @classmethod
    def from_arrays(cls, x: Mapping[str, np.ndarray], z, n, z_var=None, spec=None) -> "SegmentAggregates":
        z = np.asarray(z, dtype=float)
        return cls(
            segments=np.arange(z.shape[0]),
            n=np.asarray(n, dtype=float),
            x_hat={k: np.asarray(v, dtype=float) for k, v in x.items()},
            y_hat={},
            z=z,
            z_var=np.zeros_like(z) if z_var is None else np.asarray(z_var, dtype=float),
            filtered=[],
            spec=spec,
        )

    def __len__(self) -> int:
        return int(self.segments.shape[0])


def aggregate_segments(
    panel: ElementPanel,
    table: SegmentTable,
    spec: MetricSpec,
    n_min: int = DEFAULT_N_MIN,
    features: Mapping[str, np.ndarray] | None = None,
) -> SegmentAggregates:
    """Mean features, aggregated underlyings, and Z(s) per segment.

    Segments smaller than ``n_min`` rows, or whose denominator aggregate is
    zero, are dropped and listed in ``filtered`` as ``(segment, n, reason)``.
    ``features`` replaces panel feature columns (e.g. lagged values).
    """
    if table.assignment.shape[0] != panel.n_rows:
        raise DataError("segment table does not match panel rows")
    g, S = table.assignment, table.n_segments
    n = np.bincount(g, minlength=S).astype(float)
    num, den = spec.aggregate(panel, g, S)
    feats = dict(panel.features)
    if features:
        feats.update(features)
    x_hat = {k: group_reduce(v, g, S, "mean") for k, v in feats.items()}
    y_hat = {}
    for name, col in panel.underlyings.items():
        op = spec.numerator[1] if name == spec.numerator[0] else (
            spec.denominator[1] if name == spec.denominator[0] else "sum"
        )
        y_hat[name] = group_reduce(col, g, S, op)

    filtered: list[tuple[int, int, str]] = []
    keep = np.ones(S, dtype=bool)
    for s in range(S):
        if n[s] < n_min or n[s] == 0:
            keep[s] = False
            filtered.append((s, int(n[s]), "size"))
        elif den[s] == 0:
            keep[s] = False
            filtered.append((s, int(n[s]), "zero_denominator"))
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(keep, num / np.where(den == 0, 1, den), np.nan)

    ratio_ops = {(spec.numerator[1], spec.denominator[1])} & {("sum", "sum"), ("mean", "mean")}
    if ratio_ops:
        y1 = panel.underlying(spec.numerator[0])
        y2 = panel.underlying(spec.denominator[0])
        zr = np.nan_to_num(z)[g]
        resid_sq = np.bincount(g, weights=(y1 - zr * y2) ** 2, minlength=S)
        den_sum = np.bincount(g, weights=y2, minlength=S)
        with np.errstate(divide="ignore", invalid="ignore"):
            z_var = np.where(keep, resid_sq / np.where(den_sum == 0, 1, den_sum) ** 2, np.nan)
    else:
        z_var = np.zeros(S)

    if spec.bounds is not None:
        lo, hi = spec.bounds
        zk = z[keep]
        if np.any(zk < lo) or np.any(zk > hi):
            raise DataError(f"segment metric outside bounds {spec.bounds}")

    idx = np.flatnonzero(keep)
    return SegmentAggregates(
        segments=idx,
        n=n[idx],
        x_hat={k: v[idx] for k, v in x_hat.items()},
        y_hat={k: v[idx] for k, v in y_hat.items()},
        z=z[idx],
        z_var=z_var[idx],
        filtered=filtered,
        spec=spec,
    )
