"""Synthetic retail credit portfolio.

Accounts belong to one of three acquisition segments (A, B, C, increasingly
risky). Each month an active account defaults with probability

    h = logistic(a[segment] + b * U(t) + f(tenure))

where ``U`` is the unemployment path and ``f`` a piecewise-linear tenure
curve that keeps brand-new accounts nearly risk-free. Loss equals the balance
in the default month, after which the account leaves the portfolio. Two
acquisition interventions cut volumes: segment C after ``t1`` and segments B
and C after ``t2``.

Randomness comes from one SplitMix64 stream per account (see ``rng``); draw
``3 * tenure`` decides default and draws ``3 * tenure + 1, + 2`` feed the
balance noise, so the panel does not depend on loop order.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from . import rng
from .errors import ConfigError
from .panel import ElementPanel

SEGMENTS = ("A", "B", "C")
FEATURES = ("unemployment", "segment", "tenure", "managerial", "regulatory", "seasonality")

_DEFAULT_SEASON = (0.96, 0.94, 0.97, 0.99, 1.0, 1.01, 1.0, 1.01, 1.0, 1.01, 1.04, 1.07)


@dataclass(frozen=True)
class SimConfig:
    """Parameters of the synthetic portfolio.

    Acquisition counts per month are ``base + slope * t`` per segment, scaled
    by ``1 - c_cut`` for C after ``t1`` and by ``1 - reg_cut`` for B and C
    after ``t2``. ``initial_book`` accounts are acquired uniformly over the
    ``initial_span`` months before t=0 with ``segment_mix`` shares.
    """

    T: int = 72
    t1: int = 24
    t2: int = 48
    seed: int = 20240917
    segment_mix: tuple[float, float, float] = (0.5, 0.3, 0.2)
    initial_book: int = 7500
    initial_span: int = 6
    growth_base: tuple[float, float, float] = (75.0, 75.0, 105.0)
    growth_slope: tuple[float, float, float] = (0.75, 1.5, 6.0)
    c_cut: float = 0.6
    reg_cut: float = 0.6
    # U(t) = u_base + u_cycle_amp * sin(2 pi (t - u_cycle_phase) / u_cycle_period) + ramp
    u_base: float = 5.0
    u_cycle_amp: float = 0.5
    u_cycle_period: float = 28.0
    u_cycle_phase: float = 0.0
    u_downturn_rise: float = 2.5
    u_downturn_months: int = 9
    seasonality: tuple[float, ...] = _DEFAULT_SEASON
    hazard_a: tuple[float, float, float] = (-6.15, -5.55, -4.75)
    hazard_b: float = 0.3
    # f(tenure) knots; tenure 0 is floored to FLOOR (no default in acquisition month)
    tenure_knots: tuple[tuple[float, float], ...] = (
        (1.0, -3.5),
        (4.0, -2.6),
        (6.0, -1.3),
        (10.0, 0.0),
        (16.0, 0.0),
        (28.0, -0.9),
        (40.0, -1.1),
    )
    balance_base: tuple[float, float, float] = (3000.0, 2500.0, 2000.0)
    balance_growth: float = 0.6
    balance_growth_scale: float = 8.0
    balance_sigma: float = 0.25

    FLOOR = -40.0

    def __post_init__(self):
        validate_config(self)

    def unemployment(self, t: np.ndarray | int) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        cycle = self.u_cycle_amp * np.sin(2 * np.pi * (t - self.u_cycle_phase) / self.u_cycle_period)
        ramp_len = max(self.u_downturn_months, 1)
        ramp = self.u_downturn_rise * np.clip((t - self.t2) / ramp_len, 0.0, 1.0)
        return self.u_base + cycle + ramp

    def tenure_curve(self, tenure: np.ndarray | float) -> np.ndarray:
        tenure = np.asarray(tenure, dtype=float)
        xs = [k[0] for k in self.tenure_knots]
        ys = [k[1] for k in self.tenure_knots]
        return np.where(tenure < 1, self.FLOOR, np.interp(tenure, xs, ys))

    def hazard(self, segment: np.ndarray, unemployment: np.ndarray, tenure: np.ndarray) -> np.ndarray:
        a = np.asarray(self.hazard_a)[np.asarray(segment, dtype=np.int64)]
        eta = a + self.hazard_b * np.asarray(unemployment, dtype=float) + self.tenure_curve(tenure)
        return 1.0 / (1.0 + np.exp(-eta))

    def balance_mean(self, segment: np.ndarray, tenure: np.ndarray, month: np.ndarray) -> np.ndarray:
        base = np.asarray(self.balance_base)[np.asarray(segment, dtype=np.int64)]
        g = (1 - self.balance_growth) + self.balance_growth * (
            1 - np.exp(-np.asarray(tenure, dtype=float) / self.balance_growth_scale)
        )
        season = np.asarray(self.seasonality)[np.mod(np.asarray(month, dtype=np.int64), 12)]
        return base * g * season

    def acquisitions(self, t: int) -> np.ndarray:
        """Number of new accounts per segment acquired in month ``t`` (t >= 0)."""
        counts = np.asarray(self.growth_base) + np.asarray(self.growth_slope) * t
        if t > self.t1:
            counts[2] *= 1 - self.c_cut
        if t > self.t2:
            counts[1:] *= 1 - self.reg_cut
        return np.rint(counts).astype(np.int64)

    def trend_acquisitions(self, t: int) -> np.ndarray:
        """Acquisitions had the regulatory cut not happened."""
        return replace(self, reg_cut=0.0).acquisitions(t)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tenure_knots"] = [list(k) for k in self.tenure_knots]
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "SimConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown simulator config keys {sorted(unknown)}")
        kw = {}
        for k, v in d.items():
            if k == "tenure_knots":
                v = tuple(tuple(float(x) for x in knot) for knot in v)
            elif isinstance(v, list):
                v = tuple(v)
            kw[k] = v
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_json(cls, path: str | Path) -> "SimConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None


def validate_config(cfg: SimConfig) -> None:
    if not 0 < cfg.t1 < cfg.t2 < cfg.T:
        raise ConfigError(f"need 0 < t1 < t2 < T, got t1={cfg.t1}, t2={cfg.t2}, T={cfg.T}")
    mix = np.asarray(cfg.segment_mix, dtype=float)
    if mix.shape != (3,) or np.any(mix <= 0) or abs(mix.sum() - 1) > 1e-9:
        raise ConfigError(f"segment_mix must be three positive shares summing to 1, got {cfg.segment_mix}")
    if not (cfg.hazard_a[0] < cfg.hazard_a[1] < cfg.hazard_a[2]):
        raise ConfigError("hazard intercepts must satisfy a_A < a_B < a_C")
    if cfg.hazard_b < 0:
        raise ConfigError("unemployment slope must be non-negative")
    if len(cfg.seasonality) != 12 or min(cfg.seasonality) <= 0:
        raise ConfigError("seasonality needs 12 positive multipliers")
    xs = [k[0] for k in cfg.tenure_knots]
    if len(xs) < 1 or any(b <= a for a, b in zip(xs, xs[1:])) or xs[0] < 1:
        raise ConfigError("tenure knots must have strictly increasing tenures starting at >= 1")
    if not (0 <= cfg.c_cut < 1 and 0 <= cfg.reg_cut < 1):
        raise ConfigError("acquisition cuts must lie in [0, 1)")
    if cfg.initial_book < 0 or cfg.initial_span < 1:
        raise ConfigError("initial_book must be >= 0 and initial_span >= 1")
    if cfg.balance_sigma < 0 or min(cfg.balance_base) <= 0:
        raise ConfigError("balance parameters must be positive")
    if any(g < 0 for g in cfg.growth_base) or not (0 <= cfg.seed < 2**64):
        raise ConfigError("growth_base must be non-negative and seed a 64-bit unsigned integer")


def default_scenario() -> SimConfig:
    return SimConfig()


def _accounts(cfg: SimConfig) -> tuple[np.ndarray, np.ndarray]:
    """Acquisition month and segment code of every account, in id order."""
    acq, seg = [], []
    if cfg.initial_book:
        shares = np.asarray(cfg.segment_mix)
        per_seg = np.floor(shares * cfg.initial_book).astype(np.int64)
        per_seg[0] += cfg.initial_book - per_seg.sum()
        for s, n in enumerate(per_seg):
            # spread each segment evenly over the pre-sample months
            months = -cfg.initial_span + (np.arange(n) * cfg.initial_span) // max(n, 1)
            acq.append(months)
            seg.append(np.full(n, s))
    for t in range(cfg.T):
        for s, n in enumerate(cfg.acquisitions(t)):
            acq.append(np.full(n, t))
            seg.append(np.full(n, s))
    acq_arr = np.concatenate(acq).astype(np.int64)
    seg_arr = np.concatenate(seg).astype(np.int64)
    order = np.lexsort((seg_arr, acq_arr))
    return acq_arr[order], seg_arr[order]


def simulate_portfolio(config: SimConfig | None = None) -> ElementPanel:
    """Generate the account panel for ``config`` (default scenario if omitted).

    Features: unemployment U(t), segment code (0=A, 1=B, 2=C), tenure in
    months, managerial and regulatory vintage flags (acquired after t1 / t2),
    seasonality as calendar month 1..12. Underlyings: loss, balance.
    """
    cfg = config or default_scenario()
    acq, seg = _accounts(cfg)
    n = acq.shape[0]
    states = rng.stream_states(cfg.seed, np.arange(n, dtype=np.uint64))
    alive = np.ones(n, dtype=bool)

    out_idx, out_t, out_bal, out_loss = [], [], [], []
    for month in range(int(acq.min()), cfg.T):
        active = np.flatnonzero(alive & (acq <= month))
        if active.size == 0:
            continue
        tenure = month - acq[active]
        k = (3 * tenure).astype(np.uint64)
        u = rng.uniform(states[active], k)
        h = cfg.hazard(seg[active], cfg.unemployment(month), tenure)
        default = u < h
        if month >= 0:
            xi = rng.standard_normal(states[active], k + np.uint64(1))
            bal = cfg.balance_mean(seg[active], tenure, month) * np.exp(cfg.balance_sigma * xi)
            out_idx.append(active)
            out_t.append(np.full(active.size, month))
            out_bal.append(bal)
            out_loss.append(np.where(default, bal, 0.0))
        alive[active[default]] = False

    idx = np.concatenate(out_idx)
    t = np.concatenate(out_t).astype(np.int64)
    bal = np.concatenate(out_bal)
    loss = np.concatenate(out_loss)
    tenure = (t - acq[idx]).astype(float)
    width = max(6, len(str(n)))
    ids = np.char.add("a", np.char.zfill(idx.astype(str), width))
    features = {
        "unemployment": cfg.unemployment(t),
        "segment": seg[idx].astype(float),
        "tenure": tenure,
        "managerial": (acq[idx] > cfg.t1).astype(float),
        "regulatory": (acq[idx] > cfg.t2).astype(float),
        "seasonality": (np.mod(t, 12) + 1).astype(float),
    }
    return ElementPanel.from_arrays(ids, t, features, {"loss": loss, "balance": bal})


def acquisition_table(panel: ElementPanel) -> np.ndarray:
    """Accounts first observed at tenure 0 per (t, segment), shape (T, 3)."""
    new = panel.feature("tenure") == 0
    seg = panel.feature("segment")[new].astype(np.int64)
    t = panel.t[new]
    out = np.zeros((panel.T, 3), dtype=np.int64)
    np.add.at(out, (t, seg), 1)
    return out


def write_config(cfg: SimConfig, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
