"""Static report: chart data as CSV and, optionally, hand-written SVG charts."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np
import pandas as pd

from .errors import ContractError, ReportError

WIDTH, HEIGHT = 640, 360
MARGIN = (48, 16, 24, 64)  # top, right, bottom, left
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")
POS_FILL, NEG_FILL = "#f4a6a6", "#a6d8a6"


def _num(v: float) -> str:
    return f"{v:.2f}"


class _Canvas:
    """Maps data coordinates to SVG pixels and collects elements."""

    def __init__(self, title: str, x_range: tuple[float, float], y_values: Sequence[float]):
        y = np.asarray(y_values, dtype=float)
        lo, hi = float(np.min(y)), float(np.max(y))
        if hi == lo:
            lo, hi = lo - 1.0, hi + 1.0
        pad = 0.05 * (hi - lo)
        self.y0, self.y1 = lo - pad, hi + pad
        self.x0, self.x1 = x_range
        if self.x1 == self.x0:
            self.x1 = self.x0 + 1
        self.parts: list[str] = []
        self.title = title

    def px(self, x) -> np.ndarray:
        top, right, bottom, left = MARGIN
        return left + (np.asarray(x, dtype=float) - self.x0) / (self.x1 - self.x0) * (WIDTH - left - right)

    def py(self, y) -> np.ndarray:
        top, right, bottom, left = MARGIN
        return top + (self.y1 - np.asarray(y, dtype=float)) / (self.y1 - self.y0) * (HEIGHT - top - bottom)

    def _points(self, x, y) -> str:
        return " ".join(f"{_num(a)},{_num(b)}" for a, b in zip(self.px(x), self.py(y)))

    def polyline(self, x, y, color: str, label: str) -> None:
        self.parts.append(
            f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
            f'points="{self._points(x, y)}"><title>{escape(label)}</title></polyline>'
        )

    def polygon(self, x, y, fill: str) -> None:
        self.parts.append(f'<polygon fill="{fill}" stroke="none" points="{self._points(x, y)}"/>')

    def hline(self, y: float, color: str, dash: bool = False, label: str = "") -> None:
        top, right, bottom, left = MARGIN
        yy = _num(float(self.py(y)))
        style = ' stroke-dasharray="4,3"' if dash else ""
        self.parts.append(
            f'<line x1="{left}" y1="{yy}" x2="{WIDTH - right}" y2="{yy}" stroke="{color}"{style}>'
            f"<title>{escape(label)}</title></line>"
        )

    def rect(self, x0: float, x1: float, y0: float, y1: float, fill: str, label: str) -> None:
        xa, xb = sorted((float(self.px(x0)), float(self.px(x1))))
        ya, yb = sorted((float(self.py(y0)), float(self.py(y1))))
        self.parts.append(
            f'<rect x="{_num(xa)}" y="{_num(ya)}" width="{_num(xb - xa)}" height="{_num(yb - ya)}" '
            f'fill="{fill}"><title>{escape(label)}</title></rect>'
        )

    def render(self, x_ticks=None, x_labels=None, legend: Sequence[tuple[str, str]] = ()) -> str:
        top, right, bottom, left = MARGIN
        axis = [
            f'<line x1="{left}" y1="{HEIGHT - bottom}" x2="{WIDTH - right}" y2="{HEIGHT - bottom}" stroke="#333"/>',
            f'<line x1="{left}" y1="{top}" x2="{left}" y2="{HEIGHT - bottom}" stroke="#333"/>',
        ]
        for v in np.linspace(self.y0, self.y1, 5):
            yy = _num(float(self.py(v)))
            axis.append(f'<line x1="{left - 4}" y1="{yy}" x2="{left}" y2="{yy}" stroke="#333"/>')
            axis.append(
                f'<text x="{left - 6}" y="{yy}" font-size="10" text-anchor="end" '
                f'dominant-baseline="middle">{v:.3g}</text>'
            )
        if x_ticks is None:
            x_ticks = np.unique(np.round(np.linspace(self.x0, self.x1, 7)))
            x_labels = [f"{v:g}" for v in x_ticks]
        for v, lab in zip(x_ticks, x_labels):
            xx = _num(float(self.px(v)))
            axis.append(f'<line x1="{xx}" y1="{HEIGHT - bottom}" x2="{xx}" y2="{HEIGHT - bottom + 4}" stroke="#333"/>')
            axis.append(
                f'<text x="{xx}" y="{HEIGHT - bottom + 14}" font-size="10" text-anchor="middle">{escape(lab)}</text>'
            )
        for k, (color, label) in enumerate(legend):
            y, x = 30, left + 140 * k
            axis.append(f'<rect x="{x}" y="{y - 8}" width="10" height="10" fill="{color}"/>')
            axis.append(f'<text x="{x + 14}" y="{y}" font-size="11">{escape(label)}</text>')
        title = f'<text x="{WIDTH / 2:.1f}" y="18" font-size="14" text-anchor="middle">{escape(self.title)}</text>'
        body = "\n".join([title, *axis, *self.parts])
        return (
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}">\n<rect width="100%" height="100%" fill="white"/>\n{body}\n</svg>\n'
        )


def _split_at_zero(t: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Insert zero crossings so positive and negative areas can be filled separately."""
    xs, ys = [t[0]], [y[0]]
    for k in range(1, t.shape[0]):
        if y[k - 1] * y[k] < 0:
            xs.append(t[k - 1] + (t[k] - t[k - 1]) * y[k - 1] / (y[k - 1] - y[k]))
            ys.append(0.0)
        xs.append(t[k])
        ys.append(y[k])
    return np.asarray(xs), np.asarray(ys)


def fit_chart(t, actual, fitted, title: str = "Metric: actual and fitted") -> str:
    c = _Canvas(title, (float(t[0]), float(t[-1])), np.concatenate([actual, fitted]))
    c.polyline(t, actual, COLORS[0], "actual")
    c.polyline(t, fitted, COLORS[1], "fitted")
    return c.render(legend=[(COLORS[0], "actual"), (COLORS[1], "fitted")])


def ghat_chart(t, values, feature: str) -> str:
    t = np.asarray(t, dtype=float)
    v = np.asarray(values, dtype=float)
    c = _Canvas(f"Normalized feature series: {feature}", (float(t[0]), float(t[-1])), np.append(v, 0.0))
    xs, ys = _split_at_zero(t, v)
    edge_x = np.concatenate([[xs[0]], xs, [xs[-1]]])
    c.polygon(edge_x, np.concatenate([[0.0], np.maximum(ys, 0.0), [0.0]]), POS_FILL)
    c.polygon(edge_x, np.concatenate([[0.0], np.minimum(ys, 0.0), [0.0]]), NEG_FILL)
    c.hline(0.0, "#666")
    c.polyline(t, v, COLORS[0], feature)
    return c.render(legend=[(POS_FILL, "above zero"), (NEG_FILL, "below zero")])


def effects_chart(labels: Sequence[str], effects: Sequence[float], title: str) -> str:
    e = np.asarray(effects, dtype=float)
    n = len(labels)
    c = _Canvas(title, (-0.5, n - 0.5), np.append(e, 0.0))
    for k, (lab, val) in enumerate(zip(labels, e)):
        c.rect(k - 0.35, k + 0.35, 0.0, float(val), POS_FILL if val >= 0 else NEG_FILL, f"{lab}: {val:.6g}")
    c.hline(0.0, "#666")
    return c.render(x_ticks=list(range(n)), x_labels=list(labels))


def spc_chart(t, values, lcl: float, ucl: float, center: float, title: str) -> str:
    v = np.asarray(values, dtype=float)
    c = _Canvas(title, (float(t[0]), float(t[-1])), np.concatenate([v, [lcl, ucl]]))
    c.hline(ucl, COLORS[1], dash=True, label="UCL")
    c.hline(lcl, COLORS[1], dash=True, label="LCL")
    c.hline(center, "#666", label="center")
    c.polyline(t, v, COLORS[0], "series")
    out = (v < lcl) | (v > ucl)
    for tt, vv in zip(np.asarray(t)[out], v[out]):
        c.parts.append(
            f'<circle cx="{_num(float(c.px(tt)))}" cy="{_num(float(c.py(vv)))}" r="3" fill="{COLORS[1]}"/>'
        )
    return c.render(legend=[(COLORS[0], "series"), (COLORS[1], "control limits")])


def _need(out: Path, name: str) -> Path:
    p = out / name
    if not p.exists():
        raise ReportError(f"report input missing: {p}")
    return p


def emit_report(results_dir: str | Path, fmt: str = "svg", register: bool = True) -> list[Path]:
    """Write chart data (always) and SVG charts (``fmt="svg"``) under ``<results_dir>/report``.

    Charts: actual vs fitted metric, one normalized series per survivor,
    effects against the reference period, and the residual control chart.
    Returns the written paths.
    """
    if fmt not in ("csv", "svg"):
        raise ContractError(f"report format must be csv or svg, got {fmt!r}")
    out = Path(results_dir)
    residuals = pd.read_csv(_need(out, "residuals.csv"))
    model = json.loads(_need(out, "model.json").read_text(encoding="utf-8"))
    ghat = pd.read_csv(_need(out, "ghat.csv"))
    effects = pd.read_csv(_need(out, "effects.csv"))
    spc = pd.read_csv(_need(out, "spc.csv"))

    rep = out / "report"
    rep.mkdir(exist_ok=True)
    written: list[Path] = []

    def save_csv(df: pd.DataFrame, name: str) -> None:
        p = rep / name
        df.to_csv(p, index=False, encoding="utf-8", lineterminator="\n")
        written.append(p)

    def save_svg(text: str, name: str) -> None:
        if fmt == "svg":
            p = rep / name
            p.write_text(text, encoding="utf-8")
            written.append(p)

    t = residuals["t"].to_numpy()
    save_csv(residuals[["t", "actual", "fitted"]], "fit.csv")
    save_svg(fit_chart(t, residuals["actual"].to_numpy(), residuals["fitted"].to_numpy()), "fit.svg")

    for name in model["survivors"]:
        if name not in ghat.columns:
            raise ReportError(f"ghat.csv lacks a column for survivor {name!r}")
        save_csv(ghat[["t", name]], f"ghat_{name}.csv")
        save_svg(ghat_chart(ghat["t"].to_numpy(), ghat[name].to_numpy(), name), f"ghat_{name}.svg")

    feats = effects[effects["feature"] != "total"]
    save_csv(effects, "effects.csv")
    t_ref, t_end = int(effects["t_ref"].iloc[0]), int(effects["t"].iloc[0])
    save_svg(
        effects_chart(list(feats["feature"]), feats["effect"].to_numpy(), f"Effects at t={t_end} vs t={t_ref}"),
        "effects.svg",
    )

    lcl, ucl = float(spc["lcl"].iloc[0]), float(spc["ucl"].iloc[0])
    spc_out = spc.assign(center=0.5 * (lcl + ucl))
    save_csv(spc_out, "spc_residuals.csv")
    save_svg(
        spc_chart(spc["t"].to_numpy(), spc["value"].to_numpy(), lcl, ucl, 0.5 * (lcl + ucl), "Residual IX chart"),
        "spc_residuals.svg",
    )
    if register:
        from .runner import register_artifacts

        register_artifacts(out, written)
    return written
