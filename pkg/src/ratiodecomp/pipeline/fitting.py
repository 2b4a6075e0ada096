"""Steps 2-3: univariate/joint fits of the metric on segments and element transforms."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.special import ndtr, ndtri
from scipy.stats import chi2

from ..errors import ConfigError, ContractError, PipelineError, UnfittableFeatureError
from ..nnls import nnls_with_intercept
from ..panel import ElementPanel, MetricSpec
from .segmentation import (
    DEFAULT_BINS,
    DEFAULT_MAX_CATEGORIES,
    DEFAULT_N_MIN,
    SegmentAggregates,
    aggregate_segments,
    segment_univariate,
)

MONOTONICITY = ("none", "increasing", "decreasing")
LINK_EPS = 1e-6
NOISE_LEVEL = 0.95


# -- links -------------------------------------------------------------------

def _unit(z, bounds):
    lo, hi = bounds if bounds is not None else (0.0, 1.0)
    return (np.asarray(z, dtype=float) - lo) / (hi - lo)


def link_forward(z, link: str, bounds=None, eps: float = LINK_EPS) -> np.ndarray:
    """Map metric values to the unbounded fitting scale.

    Values at or beyond the bounds are clipped ``eps`` inside them first.
    """
    if link == "identity":
        return np.asarray(z, dtype=float)
    p = np.clip(_unit(z, bounds), eps, 1 - eps)
    if link == "logit":
        return np.log(p) - np.log1p(-p)
    if link == "probit":
        return ndtri(p)
    raise ConfigError(f"unknown link {link!r}")


def link_inverse(g, link: str, bounds=None) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    if link == "identity":
        return g
    lo, hi = bounds if bounds is not None else (0.0, 1.0)
    p = 1.0 / (1.0 + np.exp(-g)) if link == "logit" else ndtr(g)
    return lo + (hi - lo) * p


def link_derivative(z, link: str, bounds=None, eps: float = LINK_EPS) -> np.ndarray:
    """d link(z) / dz, used to carry sampling variance onto the link scale."""
    if link == "identity":
        return np.ones_like(np.asarray(z, dtype=float))
    lo, hi = bounds if bounds is not None else (0.0, 1.0)
    p = np.clip(_unit(z, bounds), eps, 1 - eps)
    if link == "logit":
        return 1.0 / (p * (1 - p) * (hi - lo))
    dens = np.exp(-0.5 * ndtri(p) ** 2) / np.sqrt(2 * np.pi)
    return 1.0 / (dens * (hi - lo))


# -- isotonic regression -----------------------------------------------------

def pava(y: Sequence[float], w: Sequence[float] | None = None, increasing: bool = True) -> np.ndarray:
    """Weighted least-squares monotone fit by pool-adjacent-violators."""
    y = np.asarray(y, dtype=float)
    w = np.ones_like(y) if w is None else np.asarray(w, dtype=float)
    if not increasing:
        return -pava(-y, w, True)
    means, weights, counts = [], [], []
    for yi, wi in zip(y, w):
        means.append(yi)
        weights.append(wi)
        counts.append(1)
        while len(means) > 1 and means[-2] > means[-1]:
            m2, w2, c2 = means.pop(), weights.pop(), counts.pop()
            m1, w1, c1 = means.pop(), weights.pop(), counts.pop()
            wt = w1 + w2
            means.append((m1 * w1 + m2 * w2) / wt if wt > 0 else 0.5 * (m1 + m2))
            weights.append(wt)
            counts.append(c1 + c2)
    return np.repeat(means, counts)


# -- transforms --------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FittedTransform:
    """Piecewise-linear map from feature value to metric scale.

    ``knots_g`` are on the link scale; evaluation interpolates there, clamps
    outside the knot range, then inverts the link.
    """

    feature: str
    knots_x: np.ndarray
    knots_g: np.ndarray
    monotonicity: str = "none"
    link: str = "identity"
    lag: int = 0
    fit_r2: float = 0.0
    bounds: tuple[float, float] | None = None
    n_segments: int = 0
    r2_in_sample: float = 0.0

    def __post_init__(self):
        kx = np.asarray(self.knots_x, dtype=float)
        kg = np.asarray(self.knots_g, dtype=float)
        if kx.ndim != 1 or kx.shape != kg.shape or kx.size < 1:
            raise ContractError("knots must be matching 1-d arrays")
        if np.any(np.diff(kx) <= 0):
            raise ContractError("knot x-values must be strictly increasing")
        if self.lag < 0:
            raise ContractError("lag must be >= 0")
        object.__setattr__(self, "knots_x", kx)
        object.__setattr__(self, "knots_g", kg)

    def link_scale(self, x) -> np.ndarray:
        return np.interp(np.asarray(x, dtype=float), self.knots_x, self.knots_g)

    def __call__(self, x) -> np.ndarray:
        return link_inverse(self.link_scale(x), self.link, self.bounds)

    @property
    def knot_values(self) -> np.ndarray:
        return self(self.knots_x)

    def to_dict(self) -> dict:
        return {
            "feature": self.feature,
            "knots": [[float(a), float(b)] for a, b in zip(self.knots_x, self.knots_g)],
            "monotonicity": self.monotonicity,
            "link": self.link,
            "lag": int(self.lag),
            "fit_r2": float(self.fit_r2),
            "r2_in_sample": float(self.r2_in_sample),
            "bounds": list(self.bounds) if self.bounds is not None else None,
            "n_segments": int(self.n_segments),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "FittedTransform":
        knots = np.asarray(d["knots"], dtype=float).reshape(-1, 2)
        return cls(
            feature=d["feature"],
            knots_x=knots[:, 0],
            knots_g=knots[:, 1],
            monotonicity=d.get("monotonicity", "none"),
            link=d.get("link", "identity"),
            lag=int(d.get("lag", 0)),
            fit_r2=float(d.get("fit_r2", 0.0)),
            bounds=tuple(d["bounds"]) if d.get("bounds") is not None else None,
            n_segments=int(d.get("n_segments", 0)),
            r2_in_sample=float(d.get("r2_in_sample", 0.0)),
        )

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "FittedTransform":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def fit_quality(y, fitted, w, var=None, level: float = NOISE_LEVEL) -> tuple[float, float]:
    """Weighted R^2 of ``fitted`` against ``y``, and its noise-discounted version.

    The discounted value removes the between-segment variation that
    sampling noise alone could produce (``var`` per segment, on the same
    scale as ``y``). The noise sum of squares is taken at its ``level``
    quantile, a chi-square with ``k - 1`` degrees of freedom for ``k``
    segments, so a saturated fit of pure noise scores 0 with probability
    about ``level``. Without ``var`` both numbers coincide. Constant targets
    score 0.
    """
    y, fitted, w = (np.asarray(a, dtype=float) for a in (y, fitted, w))
    W = w.sum()
    ybar = float(w @ y) / W
    ss_tot = float(w @ (y - ybar) ** 2)
    # relative test so a constant target with rounding noise still scores 0
    if ss_tot <= W * (1e-12 * max(abs(ybar), 1e-300)) ** 2:
        return 0.0, 0.0
    ss_res = float(w @ (y - fitted) ** 2)
    r2 = 1.0 - ss_res / ss_tot
    if var is None:
        return r2, r2
    var = np.nan_to_num(np.asarray(var, dtype=float))
    dof = max(y.size - 1, 1)
    noise = float(np.sum(w * var * (1 - w / W))) * chi2.ppf(level, dof) / dof
    r2_adj = max(0.0, ss_tot - ss_res - noise) / ss_tot
    return r2, min(r2_adj, r2)


def fit_univariate(
    agg: SegmentAggregates,
    feature: str,
    monotonicity: str = "none",
    link: str = "identity",
    lag: int = 0,
    bounds: tuple[float, float] | None = None,
    eps: float = LINK_EPS,
) -> FittedTransform:
    """Fit Z(s) ~ G(X_hat(s)) on segment aggregates.

    Monotone fits use n(s)-weighted PAVA on the link scale; otherwise the
    knots are the (merged) segment points themselves. ``fit_r2`` is the
    n-weighted R^2 on the link scale, discounted for sampling noise when the
    aggregates carry ``z_var``.
    """
    if monotonicity not in MONOTONICITY:
        raise ConfigError(f"monotonicity must be one of {MONOTONICITY}")
    if bounds is None and agg.spec is not None:
        bounds = agg.spec.bounds
    if feature not in agg.x_hat:
        raise UnfittableFeatureError(f"feature {feature!r} missing from segment aggregates")
    x = agg.x_hat[feature]
    ok = np.isfinite(x) & np.isfinite(agg.z)
    x, z, w, var = x[ok], agg.z[ok], agg.n[ok], agg.z_var[ok]
    ux, inv = np.unique(x, return_inverse=True)
    if ux.size < 2:
        raise UnfittableFeatureError(f"feature {feature!r} has fewer than 2 distinct segment means")

    y = link_forward(z, link, bounds, eps)
    var_link = var * link_derivative(z, link, bounds, eps) ** 2
    # merge segments sharing a mean feature value
    wk = np.bincount(inv, weights=w)
    yk = np.bincount(inv, weights=w * y) / wk
    if monotonicity == "none":
        gk = yk
    else:
        gk = pava(yk, wk, increasing=monotonicity == "increasing")
    fitted = gk[inv]
    r2, r2_noise = fit_quality(y, fitted, w, var_link)
    return FittedTransform(
        feature=feature,
        knots_x=ux,
        knots_g=gk,
        monotonicity=monotonicity,
        link=link,
        lag=lag,
        fit_r2=r2_noise,
        bounds=bounds if link != "identity" else bounds,
        n_segments=int(ux.size),
        r2_in_sample=r2,
    )


# -- lags --------------------------------------------------------------------

def is_entity_level(panel: ElementPanel, feature: str) -> bool:
    """True if the feature takes one value per period (e.g. a macro series)."""
    v = panel.feature(feature)
    T = panel.T
    lo = np.full(T, np.inf)
    hi = np.full(T, -np.inf)
    np.minimum.at(lo, panel.t, v)
    np.maximum.at(hi, panel.t, v)
    return bool(np.all(lo == hi))


def lagged_feature(panel: ElementPanel, feature: str, lag: int) -> np.ndarray:
    """Feature value at t - lag for every row.

    Entity-level features shift the period series, clamping at t=0.
    Element-level features use the element's own earlier row, falling back
    to its earliest available value when it was not yet present.
    """
    v = panel.feature(feature)
    if lag == 0:
        return v
    if lag < 0:
        raise ContractError("lag must be >= 0")
    t = panel.t
    if is_entity_level(panel, feature):
        series = np.empty(panel.T)
        series[t] = v
        return series[np.maximum(t - lag, 0)]
    codes = panel.element_codes
    # rows are sorted by (element, t); locate (code, t - lag) by searchsorted
    keys = codes * (panel.T + 1) + t
    target = codes * (panel.T + 1) + (t - lag)
    pos = np.searchsorted(keys, target)
    pos = np.minimum(pos, keys.shape[0] - 1)
    found = keys[pos] == target
    first = np.searchsorted(codes, codes, side="left")
    return np.where(found, v[pos], v[first])


@dataclass(frozen=True)
class FeatureOptions:
    scheme: str = "percentile"
    bins: int = DEFAULT_BINS
    monotonicity: str = "none"
    link: str = "identity"
    max_lag: int = 0
    weighting: str = "weighted"
    max_categories: int = DEFAULT_MAX_CATEGORIES

    @classmethod
    def from_dict(cls, d: Mapping | None) -> "FeatureOptions":
        d = dict(d or {})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown feature option keys {sorted(unknown)}")
        return cls(**d)


def search_lag(
    panel: ElementPanel,
    feature: str,
    spec: MetricSpec,
    max_lag: int = 0,
    scheme: str = "percentile",
    bins: int = DEFAULT_BINS,
    n_min: int = DEFAULT_N_MIN,
    monotonicity: str = "none",
    link: str | None = None,
    max_categories: int = DEFAULT_MAX_CATEGORIES,
) -> tuple[int, FittedTransform]:
    """Pick the lag in 0..max_lag whose segment fit has the highest fit_r2.

    Ties go to the smallest lag.
    """
    if max_lag < 0 or (max_lag > 0 and not max_lag < panel.T / 2):
        raise ContractError(f"max_lag must satisfy 0 <= max_lag < T/2, got {max_lag}")
    link = link or spec.link
    best: tuple[int, FittedTransform] | None = None
    for lag in range(max_lag + 1):
        values = lagged_feature(panel, feature, lag)
        table = segment_univariate(panel, feature, scheme, bins, max_categories, values=values)
        agg = aggregate_segments(panel, table, spec, n_min, features={feature: values})
        fit = fit_univariate(agg, feature, monotonicity, link, lag=lag)
        if best is None or fit.fit_r2 > best[1].fit_r2:
            best = (lag, fit)
    return best


def screen_features(
    fits: Mapping[str, FittedTransform] | Sequence[FittedTransform], threshold: float = 0.05
) -> list[str]:
    """Names of features with fit_r2 >= threshold, best first."""
    if not 0 <= threshold < 1:
        raise ConfigError("screening threshold must lie in [0, 1)")
    items = list(fits.values()) if isinstance(fits, Mapping) else list(fits)
    keep = [f for f in items if f.fit_r2 >= threshold]
    keep.sort(key=lambda f: (-f.fit_r2, f.feature))
    if not keep:
        raise PipelineError(
            f"no feature reached the screening threshold {threshold}; review the threshold"
        )
    return [f.feature for f in keep]


def apply_transform(panel: ElementPanel, transform: FittedTransform) -> np.ndarray:
    """G_j(X_j(i, t - lag)) for every panel row."""
    return transform(lagged_feature(panel, transform.feature, transform.lag))


# -- joint model -------------------------------------------------------------

@dataclass(frozen=True)
class JointModel:
    gamma0: float
    gammas: dict[str, float]
    fit_r2: float
    fitted: np.ndarray = field(repr=False, default=None)
    notes: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "gamma0": self.gamma0,
            "gammas": dict(self.gammas),
            "fit_r2": self.fit_r2,
            "notes": list(self.notes),
        }


def fit_joint(agg: SegmentAggregates, transforms: Sequence[FittedTransform]) -> JointModel:
    """Non-negative stacking Z(s) ~ gamma0 + sum_j gamma_j G_j(X_hat_j(s)), weighted by n(s)."""
    if len(transforms) < 1:
        raise ContractError("fit_joint needs at least one transform")
    names = [tr.feature for tr in transforms]
    X = np.column_stack([tr(agg.x_hat[tr.feature]) for tr in transforms])
    gamma0, gammas, _ = nnls_with_intercept(X, agg.z, agg.n)
    fitted = gamma0 + X @ gammas
    r2, _ = fit_quality(agg.z, fitted, agg.n)
    notes = []
    active = gammas > 0
    if active.sum() and np.linalg.matrix_rank(X[:, active] - X[:, active].mean(0)) < active.sum():
        notes.append("rank-deficient design among positive-weight transforms")
    return JointModel(
        gamma0=float(gamma0),
        gammas={n: float(g) for n, g in zip(names, gammas)},
        fit_r2=float(r2),
        fitted=fitted,
        notes=tuple(notes),
    )
