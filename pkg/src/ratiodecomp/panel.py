"""Element x time panel storage, CSV ingestion, and the ratio metric Z(t)."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import (
    ConfigError,
    DataError,
    DegenerateMetricError,
    IntegrityError,
    ParseError,
    SchemaError,
)

FEATURE_PREFIX = "x_"
UNDERLYING_PREFIX = "y_"
AGG_OPS = ("sum", "mean", "count", "min", "max")
LINKS = ("identity", "logit", "probit")


def group_reduce(values: np.ndarray, groups: np.ndarray, n_groups: int, op: str) -> np.ndarray:
    """Reduce ``values`` within integer ``groups`` (0..n_groups-1).

    Empty groups yield 0 for sum/count and NaN for mean/min/max.
    """
    groups = np.asarray(groups, dtype=np.int64)
    if op == "count":
        return np.bincount(groups, minlength=n_groups).astype(float)
    values = np.asarray(values, dtype=float)
    if op == "sum":
        return np.bincount(groups, weights=values, minlength=n_groups)
    if op == "mean":
        s = np.bincount(groups, weights=values, minlength=n_groups)
        c = np.bincount(groups, minlength=n_groups)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(c > 0, s / np.maximum(c, 1), np.nan)
    if op in ("min", "max"):
        fill = np.inf if op == "min" else -np.inf
        out = np.full(n_groups, fill)
        ufunc = np.minimum if op == "min" else np.maximum
        ufunc.at(out, groups, values)
        out[np.isinf(out) & (np.bincount(groups, minlength=n_groups) == 0)] = np.nan
        return out
    raise ConfigError(f"unknown aggregation operator {op!r}; expected one of {AGG_OPS}")


@dataclass(frozen=True, eq=False)
class ElementPanel:
    """Long-format panel: one row per (element_id, t), sorted by element then period.

    ``features`` and ``underlyings`` map bare column names (no ``x_``/``y_``
    prefix) to float arrays aligned with ``element_id`` and ``t``.
    Membership P(t) is row presence.
    """

    element_id: np.ndarray
    t: np.ndarray
    features: dict[str, np.ndarray]
    underlyings: dict[str, np.ndarray]
    _codes: np.ndarray = field(repr=False, default=None)

    @classmethod
    def from_arrays(
        cls,
        element_id: Sequence,
        t: Sequence[int],
        features: Mapping[str, Sequence[float]],
        underlyings: Mapping[str, Sequence[float]],
        validate: bool = True,
    ) -> "ElementPanel":
        eid = np.asarray(element_id).astype(str)
        tt = np.asarray(t)
        if tt.size and not np.issubdtype(tt.dtype, np.integer):
            if not np.all(np.mod(tt, 1) == 0):
                raise DataError("period index t must be integer")
        tt = tt.astype(np.int64)
        n = eid.shape[0]
        feats = {k: np.asarray(v, dtype=float) for k, v in features.items()}
        unds = {k: np.asarray(v, dtype=float) for k, v in underlyings.items()}
        for name, col in {**feats, **unds}.items():
            if col.shape != (n,):
                raise SchemaError(f"column {name!r} has {col.shape[0]} values, expected {n}")
        order = np.lexsort((tt, eid))
        eid, tt = eid[order], tt[order]
        feats = {k: v[order] for k, v in feats.items()}
        unds = {k: v[order] for k, v in unds.items()}
        _, codes = np.unique(eid, return_inverse=True)
        for arr in (eid, tt, codes, *feats.values(), *unds.values()):
            arr.setflags(write=False)
        panel = cls(eid, tt, feats, unds, codes.astype(np.int64))
        if validate:
            validate_panel(panel)
        return panel

    @property
    def n_rows(self) -> int:
        return int(self.t.shape[0])

    @property
    def T(self) -> int:
        return int(self.t.max()) + 1 if self.n_rows else 0

    @property
    def K(self) -> int:
        return len(self.features)

    @property
    def M(self) -> int:
        return len(self.underlyings)

    @property
    def element_codes(self) -> np.ndarray:
        """Dense integer code per row, ordered like the sorted unique ids."""
        return self._codes

    @property
    def n_elements(self) -> int:
        return int(self._codes.max()) + 1 if self.n_rows else 0

    def n_per_period(self) -> np.ndarray:
        return np.bincount(self.t, minlength=self.T)

    def feature(self, name: str) -> np.ndarray:
        try:
            return self.features[name]
        except KeyError:
            raise SchemaError(f"unknown feature {name!r}; have {sorted(self.features)}") from None

    def underlying(self, name: str) -> np.ndarray:
        try:
            return self.underlyings[name]
        except KeyError:
            raise SchemaError(
                f"unknown underlying {name!r}; have {sorted(self.underlyings)}"
            ) from None

    def column(self, name: str) -> np.ndarray:
        """Look a column up by bare name, trying underlyings then features."""
        if name in self.underlyings:
            return self.underlyings[name]
        if name in self.features:
            return self.features[name]
        raise SchemaError(f"unknown column {name!r}")

    def select(self, mask: np.ndarray, validate: bool = True) -> "ElementPanel":
        mask = np.asarray(mask, dtype=bool)
        return ElementPanel.from_arrays(
            self.element_id[mask],
            self.t[mask],
            {k: v[mask] for k, v in self.features.items()},
            {k: v[mask] for k, v in self.underlyings.items()},
            validate=validate,
        )

    def to_frame(self) -> pd.DataFrame:
        """Long-format frame with prefixed columns; integral columns become int64."""
        data: dict[str, np.ndarray] = {"element_id": self.element_id, "t": self.t}
        for prefix, group in ((FEATURE_PREFIX, self.features), (UNDERLYING_PREFIX, self.underlyings)):
            for k, v in group.items():
                integral = np.all(np.abs(v) < 2**53) and np.array_equal(v, np.round(v))
                data[prefix + k] = v.astype(np.int64) if integral else v
        return pd.DataFrame(data)

    def equals(self, other: "ElementPanel") -> bool:
        if self.n_rows != other.n_rows:
            return False
        if list(self.features) != list(other.features):
            return False
        if list(self.underlyings) != list(other.underlyings):
            return False
        if not (np.array_equal(self.element_id, other.element_id) and np.array_equal(self.t, other.t)):
            return False
        cols = [(self.features, other.features), (self.underlyings, other.underlyings)]
        return all(np.array_equal(a[k], b[k]) for a, b in cols for k in a)


def validate_panel(panel: ElementPanel) -> None:
    """Raise if the panel breaks a structural invariant."""
    if panel.n_rows == 0:
        raise DataError("panel is empty")
    eid, t = panel.element_id, panel.t
    dup = (eid[1:] == eid[:-1]) & (t[1:] == t[:-1])
    if dup.any():
        k = int(np.flatnonzero(dup)[0]) + 1
        raise IntegrityError(f"duplicate key (element_id={eid[k]!r}, t={int(t[k])})")
    if t.min() != 0:
        raise DataError(f"period index must start at 0, got min t={int(t.min())}")
    counts = panel.n_per_period()
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise DataError(f"empty period t={int(empty[0])} inside range [0, {panel.T - 1}]")
    for name, col in {**panel.features, **panel.underlyings}.items():
        bad = ~np.isfinite(col)
        if bad.any():
            k = int(np.flatnonzero(bad)[0])
            raise DataError(f"non-finite value in {name!r} at (element_id={eid[k]!r}, t={int(t[k])})")


@dataclass(frozen=True)
class PanelSchema:
    """CSV column naming. Feature/underlying lists default to prefix discovery."""

    element_id: str = "element_id"
    t: str = "t"
    features: tuple[str, ...] | None = None
    underlyings: tuple[str, ...] | None = None

    @classmethod
    def from_mapping(cls, mapping: Mapping | None) -> "PanelSchema":
        if mapping is None:
            return cls()
        m = dict(mapping)
        for key in ("features", "underlyings"):
            if m.get(key) is not None:
                m[key] = tuple(m[key])
        unknown = set(m) - {"element_id", "t", "features", "underlyings"}
        if unknown:
            raise ConfigError(f"unknown schema keys {sorted(unknown)}")
        return cls(**m)


def load_panel(path: str | Path, schema: PanelSchema | Mapping | None = None) -> ElementPanel:
    """Read a long-format panel CSV.

    Parameters
    ----------
    path : str or Path
        UTF-8 CSV with a header row. Feature columns carry the ``x_`` prefix
        and underlying columns the ``y_`` prefix unless ``schema`` lists them.
    schema : PanelSchema or mapping, optional
        Column naming overrides.

    Raises
    ------
    SchemaError
        A required column is missing.
    ParseError
        A numeric cell does not parse as a finite real; ``row`` is the
        1-based line number in the file (header is line 1).
    IntegrityError
        Two rows share the same (element_id, t).
    """
    if not isinstance(schema, PanelSchema):
        schema = PanelSchema.from_mapping(schema)
    path = Path(path)
    if not path.exists():
        raise DataError(f"panel file not found: {path}")
    df = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    cols = list(df.columns)
    for req in (schema.element_id, schema.t):
        if req not in cols:
            raise SchemaError(f"missing required column {req!r}")
    feat_cols = (
        [FEATURE_PREFIX + f for f in schema.features]
        if schema.features is not None
        else [c for c in cols if c.startswith(FEATURE_PREFIX)]
    )
    und_cols = (
        [UNDERLYING_PREFIX + u for u in schema.underlyings]
        if schema.underlyings is not None
        else [c for c in cols if c.startswith(UNDERLYING_PREFIX)]
    )
    for c in feat_cols + und_cols:
        if c not in cols:
            raise SchemaError(f"missing column {c!r}")
    if not und_cols:
        raise SchemaError("no underlying (y_) columns found")

    def numeric(col: str, integer: bool = False) -> np.ndarray:
        raw = df[col]
        stripped = raw.str.strip().to_numpy(dtype=str)
        try:
            # numpy's conversion is correctly rounded; pandas' fast parser can be off by an ulp
            vals = stripped.astype(np.float64)
        except ValueError:
            vals = pd.to_numeric(pd.Series(stripped), errors="coerce").to_numpy(dtype=float)
        bad = ~np.isfinite(vals)
        if integer:
            bad |= np.mod(np.where(bad, 0.0, vals), 1) != 0
        if bad.any():
            k = int(np.flatnonzero(bad)[0])
            raise ParseError(
                f"row {k + 2}: column {col!r} value {raw.iloc[k]!r} is not a finite "
                + ("integer" if integer else "real"),
                row=k + 2,
            )
        return vals

    eid = df[schema.element_id].to_numpy(dtype=str)
    if (eid == "").any():
        k = int(np.flatnonzero(eid == "")[0])
        raise ParseError(f"row {k + 2}: empty element_id", row=k + 2)
    t = numeric(schema.t, integer=True).astype(np.int64)
    feats = {c[len(FEATURE_PREFIX):]: numeric(c) for c in feat_cols}
    unds = {c[len(UNDERLYING_PREFIX):]: numeric(c) for c in und_cols}
    return ElementPanel.from_arrays(eid, t, feats, unds)


def write_panel(panel: ElementPanel, path: str | Path) -> Path:
    path = Path(path)
    panel.to_frame().to_csv(path, index=False, encoding="utf-8", lineterminator="\n")
    return path


@dataclass(frozen=True)
class MetricSpec:
    """Z = agg_num(numerator) / agg_den(denominator) per period or segment."""

    numerator: tuple[str, str]
    denominator: tuple[str, str]
    link: str = "identity"
    bounds: tuple[float, float] | None = None

    def __post_init__(self):
        for part in (self.numerator, self.denominator):
            if len(part) != 2 or part[1] not in AGG_OPS:
                raise ConfigError(f"bad metric term {part!r}; operator must be one of {AGG_OPS}")
        if self.link not in LINKS:
            raise ConfigError(f"unknown link {self.link!r}")
        if self.bounds is not None:
            lo, hi = self.bounds
            if not lo < hi:
                raise ConfigError(f"metric bounds must satisfy lower < upper, got {self.bounds}")

    @classmethod
    def from_dict(cls, d: Mapping) -> "MetricSpec":
        def term(v) -> tuple[str, str]:
            if isinstance(v, str):
                return (v, "sum")
            if isinstance(v, Mapping):
                return (v["column"], v.get("agg", "sum"))
            return (str(v[0]), str(v[1]))

        try:
            bounds = d.get("bounds")
            return cls(
                numerator=term(d["numerator"]),
                denominator=term(d["denominator"]),
                link=d.get("link", "identity"),
                bounds=tuple(bounds) if bounds is not None else None,
            )
        except (KeyError, TypeError, IndexError) as exc:
            raise ConfigError(f"malformed metric spec: {exc}") from None

    @classmethod
    def from_json(cls, path: str | Path) -> "MetricSpec":
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None

    def to_dict(self) -> dict:
        return {
            "numerator": {"column": self.numerator[0], "agg": self.numerator[1]},
            "denominator": {"column": self.denominator[0], "agg": self.denominator[1]},
            "link": self.link,
            "bounds": list(self.bounds) if self.bounds is not None else None,
        }

    def check(self, panel: ElementPanel) -> None:
        for name, _ in (self.numerator, self.denominator):
            if name not in panel.underlyings:
                raise ConfigError(
                    f"metric references unknown underlying {name!r}; have {sorted(panel.underlyings)}"
                )

    def aggregate(self, panel: ElementPanel, groups: np.ndarray, n_groups: int) -> tuple[np.ndarray, np.ndarray]:
        """Numerator and denominator aggregates per group."""
        self.check(panel)
        num = group_reduce(panel.underlying(self.numerator[0]), groups, n_groups, self.numerator[1])
        den = group_reduce(panel.underlying(self.denominator[0]), groups, n_groups, self.denominator[1])
        return num, den


LOSS_RATE = MetricSpec(numerator=("loss", "sum"), denominator=("balance", "sum"), bounds=(0.0, 1.0))


@dataclass(frozen=True)
class MetricSeries:
    values: np.ndarray
    notes: tuple[str, ...] = ()

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)

    @property
    def T(self) -> int:
        return int(self.values.shape[0])

    def __len__(self) -> int:
        return self.T

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)


def compute_metric_series(panel: ElementPanel, spec: MetricSpec) -> MetricSeries:
    """Z(t) = Agg_num(t) / Agg_den(t) over the elements present at t."""
    num, den = spec.aggregate(panel, panel.t, panel.T)
    zero = np.flatnonzero(den == 0)
    if zero.size:
        t0 = int(zero[0])
        raise DegenerateMetricError(f"denominator aggregate is zero at t={t0}", t=t0)
    return MetricSeries(num / den)


def panel_summary(panel: ElementPanel) -> dict:
    validate_panel(panel)
    cols = {}
    for prefix, group in ((FEATURE_PREFIX, panel.features), (UNDERLYING_PREFIX, panel.underlyings)):
        for k, v in group.items():
            cols[prefix + k] = {"min": float(v.min()), "max": float(v.max()), "mean": float(v.mean())}
    return {
        "T": panel.T,
        "K": panel.K,
        "M": panel.M,
        "n_rows": panel.n_rows,
        "n_elements": panel.n_elements,
        "N": panel.n_per_period().tolist(),
        "columns": cols,
    }
