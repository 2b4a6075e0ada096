"""First-order linearization of a ratio metric Z = Y1_hat / Y2_hat.

Period-to-period changes are approximated as

    dZ(t) ~= C1 * dY1_hat(t) - C2 * dY2_hat(t)

which, summed back over time and over elements, turns the metric into a sum
of element-level linear forms L(i, t) = C1 * Y1(i, t) - C2 * Y2(i, t) plus an
alignment constant. L is additive over elements, so features can be fitted
against it directly on element rows.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .decomposition import DecompositionModel, fit_constrained
from .errors import ContractError, InsufficientDataError
from .nnls import nnls_with_intercept
from .panel import ElementPanel, MetricSeries, MetricSpec, compute_metric_series
from .pipeline.aggregation import AggregatedFeatureSeries, aggregate_transformed, normalize_series
from .pipeline.fitting import (
    FeatureOptions,
    FittedTransform,
    apply_transform,
    fit_quality,
    fit_univariate,
    lagged_feature,
    screen_features,
)
from .pipeline.segmentation import DEFAULT_N_MIN, SegmentAggregates, segment_univariate

MODES = ("mean_based", "fitted")


@dataclass(frozen=True)
class LinearizationConstants:
    c1: float
    c2: float
    z0_star: float
    mode: str = "mean_based"
    notes: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {"c1": self.c1, "c2": self.c2, "z0_star": self.z0_star, "mode": self.mode, "notes": list(self.notes)}

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")
        return path


def _mean_based(y1: np.ndarray, y2: np.ndarray) -> tuple[float, float]:
    T = y1.shape[0]
    s2 = float(y2.sum())
    return T / s2, T * float(y1.sum()) / s2**2


def linearization_constants(
    y1_hat: Sequence[float],
    y2_hat: Sequence[float],
    mode: str = "mean_based",
    z: Sequence[float] | None = None,
) -> LinearizationConstants:
    """C1, C2 and the alignment intercept for the ratio of two aggregate series.

    ``mean_based`` uses C1 = T / sum Y2_hat and C2 = T sum Y1_hat / (sum Y2_hat)^2.
    ``fitted`` regresses dZ on (dY1_hat, -dY2_hat) without intercept; a
    regressor whose differences are all zero (or that is collinear with the
    other) keeps its mean-based value. ``z0_star`` minimizes the mean squared
    gap between C1 Y1_hat - C2 Y2_hat + z0_star and the exact Z.
    """
    y1 = np.asarray(y1_hat, dtype=float)
    y2 = np.asarray(y2_hat, dtype=float)
    if y1.shape != y2.shape or y1.ndim != 1:
        raise ContractError("Y1 and Y2 series must be 1-d and of equal length")
    if y1.shape[0] < 2:
        raise InsufficientDataError("linearization needs at least two periods")
    if np.any(y2 <= 0):
        raise ContractError("denominator aggregate must be positive at every t")
    if mode not in MODES:
        raise ContractError(f"mode must be one of {MODES}")
    zz = y1 / y2 if z is None else np.asarray(z, dtype=float)
    c1, c2 = _mean_based(y1, y2)
    notes: list[str] = []
    if mode == "fitted":
        dz, d1, d2 = np.diff(zz), np.diff(y1), -np.diff(y2)
        scale1 = np.abs(d1).max(initial=0.0)
        scale2 = np.abs(d2).max(initial=0.0)
        deg1 = scale1 <= 1e-12 * max(np.abs(y1).max(initial=0.0), 1e-300)
        deg2 = scale2 <= 1e-12 * max(np.abs(y2).max(initial=0.0), 1e-300)
        if not deg1 and not deg2:
            A = np.column_stack([d1, d2])
            if np.linalg.matrix_rank(A) == 2:
                c1, c2 = (float(v) for v in np.linalg.lstsq(A, dz, rcond=None)[0])
            else:
                deg2 = True
                notes.append("collinear differences; C2 kept at mean-based value")
        if deg2 and not deg1:
            if not notes:
                notes.append("denominator differences vanish; C2 kept at mean-based value")
            c1 = float(d1 @ (dz - c2 * d2) / (d1 @ d1))
        elif deg1 and not deg2:
            notes.append("numerator differences vanish; C1 kept at mean-based value")
            c2 = float(d2 @ (dz - c1 * d1) / (d2 @ d2))
        elif deg1 and deg2:
            notes.append("both aggregates constant; mean-based constants kept")
    z0_star = float(np.mean(zz - (c1 * y1 - c2 * y2)))
    return LinearizationConstants(float(c1), float(c2), z0_star, mode, tuple(notes))


@dataclass(frozen=True)
class ElementLinearForm:
    """L(i, t) per panel row, aligned with the panel's row order."""

    values: np.ndarray = field(repr=False)
    constants: LinearizationConstants

    def period_sums(self, panel: ElementPanel) -> np.ndarray:
        return np.bincount(panel.t, weights=self.values, minlength=panel.T)

    def approximation(self, panel: ElementPanel) -> np.ndarray:
        """z0_star + sum over P(t) of L(i, t)."""
        return self.constants.z0_star + self.period_sums(panel)


def _ratio_columns(panel: ElementPanel, spec: MetricSpec) -> tuple[np.ndarray, np.ndarray]:
    if spec.numerator[1] != "sum" or spec.denominator[1] != "sum":
        raise ContractError("linearization is defined for sum/sum ratio metrics only")
    return panel.underlying(spec.numerator[0]), panel.underlying(spec.denominator[0])


def aggregate_series(panel: ElementPanel, spec: MetricSpec) -> tuple[np.ndarray, np.ndarray]:
    """Y1_hat(t) and Y2_hat(t)."""
    return spec.aggregate(panel, panel.t, panel.T)


def element_linear_form(
    panel: ElementPanel, constants: LinearizationConstants, spec: MetricSpec
) -> ElementLinearForm:
    y1, y2 = _ratio_columns(panel, spec)
    return ElementLinearForm(constants.c1 * y1 - constants.c2 * y2, constants)


def reconstruct_metric(
    z0: float, y1_hat: Sequence[float], y2_hat: Sequence[float], constants: LinearizationConstants
) -> MetricSeries:
    """Z(0) plus the cumulated linearized changes."""
    y1 = np.asarray(y1_hat, dtype=float)
    y2 = np.asarray(y2_hat, dtype=float)
    if y1.shape[0] < 2:
        raise InsufficientDataError("reconstruction needs at least two periods")
    steps = constants.c1 * np.diff(y1) - constants.c2 * np.diff(y2)
    return MetricSeries(np.concatenate([[z0], z0 + np.cumsum(steps)]))


def element_flows(panel: ElementPanel, form: ElementLinearForm) -> np.ndarray:
    """Per-period totals of element-level changes dL(i, t).

    An element entering at t contributes its full L (change from an implicit
    zero); an element leaving after t-1 contributes -L(i, t-1) at t. The
    cumulative sum of the result equals the per-period sum of L.
    """
    L = form.values
    codes, t = panel.element_codes, panel.t
    T = panel.T
    same_prev = np.zeros(panel.n_rows, dtype=bool)
    same_prev[1:] = (codes[1:] == codes[:-1]) & (t[1:] == t[:-1] + 1)
    prev = np.concatenate([[0.0], L[:-1]])
    delta = L - np.where(same_prev, prev, 0.0)
    flows = np.bincount(t, weights=delta, minlength=T)
    # exits: row not followed by the same element at t+1
    has_next = np.zeros(panel.n_rows, dtype=bool)
    has_next[:-1] = same_prev[1:]
    exiting = (~has_next) & (t + 1 <= T - 1)
    flows -= np.bincount(t[exiting] + 1, weights=L[exiting], minlength=T)[:T]
    return flows


def fit_element_transform(
    form: ElementLinearForm | np.ndarray,
    panel: ElementPanel,
    feature: str,
    scheme: str = "percentile",
    bins: int = 10,
    monotonicity: str = "none",
    n_min: int = DEFAULT_N_MIN,
    lag: int = 0,
    max_categories: int = 20,
) -> FittedTransform:
    """Fit segment means of L(i, t) against segment means of one feature."""
    L = form.values if isinstance(form, ElementLinearForm) else np.asarray(form, dtype=float)
    values = lagged_feature(panel, feature, lag)
    table = segment_univariate(panel, feature, scheme, bins, max_categories, values=values)
    g, S = table.assignment, table.n_segments
    n = np.bincount(g, minlength=S).astype(float)
    keep = n >= max(n_min, 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_l = np.bincount(g, weights=L, minlength=S) / n
        mean_x = np.bincount(g, weights=values, minlength=S) / n
        sq = np.bincount(g, weights=L**2, minlength=S) / n
        var_mean = np.maximum(sq - mean_l**2, 0.0) / np.maximum(n - 1, 1)
    agg = SegmentAggregates.from_arrays({feature: mean_x[keep]}, mean_l[keep], n[keep], var_mean[keep])
    return fit_univariate(agg, feature, monotonicity, "identity", lag=lag)


@dataclass(frozen=True)
class LinearizationResult:
    constants: LinearizationConstants
    form: ElementLinearForm
    exact: np.ndarray
    reconstruction: np.ndarray
    approximation: np.ndarray
    transforms: dict[str, FittedTransform]
    screened: list[str]
    ghat: dict[str, AggregatedFeatureSeries]
    model: DecompositionModel
    element_joint: dict
    notes: tuple[str, ...] = ()

    @property
    def approximation_correlation(self) -> float:
        return float(np.corrcoef(self.approximation, self.exact)[0, 1])


def element_joint_fit(panel: ElementPanel, form: ElementLinearForm, transforms: Mapping[str, FittedTransform]) -> dict:
    """Non-negative element-level stacking L(i,t) ~ b0 + sum b_j G_j(X_j(i,t))."""
    names = list(transforms)
    if not names:
        return {"beta0": float(form.values.mean()), "betas": {}, "r2": 0.0}
    X = np.column_stack([apply_transform(panel, transforms[n]) for n in names])
    b0, b, _ = nnls_with_intercept(X, form.values)
    fitted = b0 + X @ b
    r2, _ = fit_quality(form.values, fitted, np.ones(panel.n_rows))
    return {"beta0": float(b0), "betas": {n: float(v) for n, v in zip(names, b)}, "r2": float(r2)}


def run_linearization_path(
    panel: ElementPanel,
    spec: MetricSpec,
    features: Mapping[str, FeatureOptions],
    mode: str = "mean_based",
    n_min: int = DEFAULT_N_MIN,
    screen_threshold: float = 0.05,
    elim_threshold: float = 0.005,
    aggregation: str | None = None,
) -> LinearizationResult:
    """Element-level fits against L, aggregation to series, constrained final model.

    By default each transform is aggregated with its feature's own weighting,
    as in the five-step path. ``aggregation="sum"`` instead follows the
    additive structure of L; those totals scale with portfolio size, so
    volume-driven features can leak into the final model.
    """
    y1, y2 = aggregate_series(panel, spec)
    exact = compute_metric_series(panel, spec).values
    constants = linearization_constants(y1, y2, mode, z=exact)
    form = element_linear_form(panel, constants, spec)
    recon = reconstruct_metric(float(exact[0]), y1, y2, constants).values

    transforms: dict[str, FittedTransform] = {}
    for name, opt in features.items():
        transforms[name] = fit_element_transform(
            form, panel, name, opt.scheme, opt.bins, opt.monotonicity, n_min,
            max_categories=opt.max_categories,
        )
    screened = screen_features(transforms, screen_threshold)
    ghat = {}
    for name in screened:
        agg_mode = aggregation or features[name].weighting
        raw = aggregate_transformed(apply_transform(panel, transforms[name]), panel, agg_mode, name)
        ghat[name] = normalize_series(raw)
    model = fit_constrained(exact, ghat, elim_threshold)
    joint = element_joint_fit(panel, form, {n: transforms[n] for n in screened})
    return LinearizationResult(
        constants=constants,
        form=form,
        exact=exact,
        reconstruction=recon,
        approximation=form.approximation(panel),
        transforms=transforms,
        screened=screened,
        ghat=ghat,
        model=model,
        element_joint=joint,
    )
