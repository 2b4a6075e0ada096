"""Step 5: constrained linear model of Z(t) on aggregated feature series.

Also covers element-level contributions, effects against a reference period,
and scenario evaluation of the fitted model.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ContractError, InsufficientDataError, UndefinedStatisticError
from .nnls import NNLSResult, nnls_with_intercept
from .panel import MetricSeries
from .pipeline.aggregation import AggregatedFeatureSeries

DEFAULT_ELIM_THRESHOLD = 0.005
BACKWARD_LOOKING_NOTE = (
    "backward-looking extrapolation: levels outside the fitted monitoring period "
    "are not validated by the decomposition"
)


def adjusted_r2(actual, fitted, k: int) -> float:
    """1 - (1 - R^2)(T - 1)/(T - k - 1) for ``k`` regressors plus intercept."""
    y = np.asarray(actual, dtype=float)
    f = np.asarray(fitted, dtype=float)
    T = y.shape[0]
    if not T > k + 1:
        raise InsufficientDataError(f"adjusted R^2 needs T > k + 1 (T={T}, k={k})")
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0:
        raise UndefinedStatisticError("actual series has zero variance")
    r2 = 1.0 - float(np.sum((y - f) ** 2)) / ss_tot
    return 1.0 - (1.0 - r2) * (T - 1) / (T - k - 1)


def _as_matrix(ghat, names: Sequence[str] | None = None) -> tuple[np.ndarray, list[str]]:
    """Accept a mapping of series/arrays or a 2-D array with names."""
    if isinstance(ghat, Mapping):
        names = list(ghat) if names is None else list(names)
        missing = [n for n in names if n not in ghat]
        if missing:
            raise ContractError(f"ghat lacks series for {missing}")
        cols = []
        for n in names:
            s = ghat[n]
            cols.append(s.values if isinstance(s, AggregatedFeatureSeries) else np.asarray(s, dtype=float))
        X = np.column_stack(cols) if cols else np.empty((0, 0))
        return X, names
    X = np.asarray(ghat, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if names is None:
        names = [f"g{j + 1}" for j in range(X.shape[1])]
    if len(names) != X.shape[1]:
        raise ContractError("names do not match ghat columns")
    return X, list(names)


@dataclass(frozen=True)
class DecompositionModel:
    beta0: float
    betas: dict[str, float]
    survivors: tuple[str, ...]
    r2_adj: float
    residuals: np.ndarray = field(repr=False)
    fitted: np.ndarray = field(repr=False)
    elim_trace: tuple[dict, ...] = ()
    candidates: tuple[str, ...] = ()
    gradient: dict[str, float] = field(default_factory=dict)
    warnings: tuple[str, ...] = ()

    @property
    def r2(self) -> float:
        y = self.fitted + self.residuals
        return 1.0 - float(self.residuals @ self.residuals) / float(np.sum((y - y.mean()) ** 2))

    def to_dict(self) -> dict:
        return {
            "beta0": self.beta0,
            "betas": {k: self.betas[k] for k in self.survivors},
            "survivors": list(self.survivors),
            "candidates": list(self.candidates),
            "r2_adj": self.r2_adj,
            "elim_trace": list(self.elim_trace),
            "warnings": list(self.warnings),
        }

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")
        return path

    @classmethod
    def from_dict(cls, d: Mapping, actual=None, ghat=None) -> "DecompositionModel":
        """Rebuild from ``model.json``; residuals need ``actual`` and ``ghat``."""
        survivors = tuple(d["survivors"])
        betas = {k: float(v) for k, v in d["betas"].items()}
        fitted = np.empty(0)
        residuals = np.empty(0)
        if actual is not None and ghat is not None:
            X, _ = _as_matrix(ghat, survivors)
            fitted = float(d["beta0"]) + (X @ np.array([betas[s] for s in survivors]) if survivors else 0.0)
            residuals = np.asarray(actual, dtype=float) - fitted
        return cls(
            beta0=float(d["beta0"]),
            betas=betas,
            survivors=survivors,
            r2_adj=float(d.get("r2_adj", float("nan"))),
            residuals=residuals,
            fitted=np.asarray(fitted, dtype=float),
            elim_trace=tuple(d.get("elim_trace", ())),
            candidates=tuple(d.get("candidates", survivors)),
            warnings=tuple(d.get("warnings", ())),
        )


def _fit_subset(y: np.ndarray, X: np.ndarray, cols: list[int]) -> tuple[float, np.ndarray, np.ndarray, NNLSResult]:
    beta0, beta, res = nnls_with_intercept(X[:, cols], y)
    fitted = beta0 + X[:, cols] @ beta
    return beta0, beta, fitted, res


def fit_constrained(
    Z,
    ghat,
    elim_threshold: float = DEFAULT_ELIM_THRESHOLD,
    names: Sequence[str] | None = None,
) -> DecompositionModel:
    """Fit Z(t) = beta0 + sum_j beta_j G_hat_j(t) with beta_j >= 0, then eliminate backwards.

    Each round drops the feature whose removal lowers adjusted R^2 the least,
    provided that loss is below ``elim_threshold`` (zero-coefficient features
    always qualify, since removing them cannot lower adjusted R^2). The model
    is refitted after every drop.
    """
    y = np.asarray(Z.values if isinstance(Z, MetricSeries) else Z, dtype=float)
    X, names = _as_matrix(ghat, names)
    T, K = y.shape[0], X.shape[1]
    if not T > K + 1:
        raise InsufficientDataError(f"need T > K + 1 periods (T={T}, K={K})")
    if X.shape[0] != T:
        raise ContractError("ghat length differs from metric series")

    active = list(range(K))
    beta0, beta, fitted, res = _fit_subset(y, X, active)
    score = adjusted_r2(y, fitted, len(active))
    trace = [{"step": 0, "action": "fit", "features": [names[j] for j in active], "r2_adj": score}]
    step = 0
    while active:
        best = None
        for pos, j in enumerate(active):
            rest = active[:pos] + active[pos + 1:]
            b0, b, f, r = _fit_subset(y, X, rest)
            s = adjusted_r2(y, f, len(rest))
            loss = score - s
            if best is None or loss < best[0]:
                best = (loss, j, rest, (b0, b, f, r), s, beta[pos])
        loss, j, rest, fit_rest, s, bj = best
        if not (loss < elim_threshold or bj == 0):
            break
        step += 1
        trace.append(
            {
                "step": step,
                "action": "drop",
                "feature": names[j],
                "beta": float(bj),
                "r2_adj_loss": float(loss),
                "r2_adj": float(s),
            }
        )
        active = rest
        beta0, beta, fitted, res = fit_rest
        score = s

    notes = []
    if not active:
        msg = "no feature attained a positive coefficient; intercept-only model"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)
    survivors = tuple(names[j] for j in active)
    residuals = y - fitted
    return DecompositionModel(
        beta0=float(beta0),
        betas={n: float(b) for n, b in zip(survivors, beta)},
        survivors=survivors,
        r2_adj=float(score),
        residuals=residuals,
        fitted=fitted,
        elim_trace=tuple(trace),
        candidates=tuple(names),
        gradient={n: float(g) for n, g in zip(survivors, res.gradient)},
        warnings=tuple(notes),
    )


def predict_series(model: DecompositionModel, ghat) -> MetricSeries:
    X, _ = _as_matrix(ghat, model.survivors)
    if not model.survivors:
        n = next(iter(ghat.values())).shape[0] if isinstance(ghat, Mapping) and ghat else len(model.fitted)
        return MetricSeries(np.full(n, model.beta0))
    return MetricSeries(model.beta0 + X @ np.array([model.betas[s] for s in model.survivors]))


def element_contribution(model: DecompositionModel, transformed: Mapping[str, np.ndarray]) -> np.ndarray:
    """H(i, t) = beta0 + sum_j beta_j G_j(X_j(i, t)) per panel row (un-normalized G)."""
    missing = [s for s in model.survivors if s not in transformed]
    if missing:
        raise ContractError(f"transformed values missing for survivors {missing}")
    if transformed:
        n = len(next(iter(transformed.values())))
    else:
        raise ContractError("no transformed series supplied")
    h = np.full(n, model.beta0, dtype=float)
    for s in model.survivors:
        h = h + model.betas[s] * np.asarray(transformed[s], dtype=float)
    return h


@dataclass(frozen=True)
class EffectReport:
    t_ref: int
    t: int
    effects: dict[str, float]
    total: float

    def rows(self) -> list[tuple[str, float]]:
        return [*self.effects.items(), ("total", self.total)]


def effect_vs_reference(model: DecompositionModel, ghat, t_ref: int, t: int) -> EffectReport:
    """Eff_j = beta_j (G_hat_j(t) - G_hat_j(t_ref)) for each survivor."""
    X, _ = _as_matrix(ghat, model.survivors) if model.survivors else (None, [])
    T = X.shape[0] if X is not None else len(model.fitted)
    if not (0 <= t_ref < t <= T - 1):
        raise ContractError(f"need 0 <= t_ref < t <= T-1, got t_ref={t_ref}, t={t}, T={T}")
    effects = {
        s: model.betas[s] * (float(X[t, k]) - float(X[t_ref, k])) for k, s in enumerate(model.survivors)
    }
    pred = predict_series(model, ghat).values if model.survivors else np.full(T, model.beta0)
    return EffectReport(t_ref=t_ref, t=t, effects=effects, total=float(pred[t] - pred[t_ref]))


def scenario_predict(model: DecompositionModel, overrides: Mapping[str, Sequence[float]]) -> MetricSeries:
    """Evaluate the fitted model on assumed (normalized) levels of each survivor."""
    missing = [s for s in model.survivors if s not in overrides]
    if missing:
        raise ContractError(f"scenario lacks levels for survivors {missing}")
    lengths = {len(overrides[s]) for s in model.survivors}
    if len(lengths) > 1:
        raise ContractError("scenario levels must cover the same periods for every survivor")
    n = lengths.pop() if lengths else max((len(v) for v in overrides.values()), default=1)
    z = np.full(n, model.beta0, dtype=float)
    for s in model.survivors:
        z = z + model.betas[s] * np.asarray(overrides[s], dtype=float)
    return MetricSeries(z, notes=(BACKWARD_LOOKING_NOTE,))


def centered_level(raw_level: float, series: AggregatedFeatureSeries) -> float:
    """Put an aggregated (un-normalized) level on the normalized scale of ``series``."""
    return float(raw_level) - series.offset
