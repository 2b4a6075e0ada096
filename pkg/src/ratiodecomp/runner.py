"""End-to-end runs: simulate or load, decompose, monitor, and write artifacts."""

from __future__ import annotations

import hashlib
import json
import platform
import time
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import pandas as pd

from . import __version__
from .decomposition import (
    DecompositionModel,
    effect_vs_reference,
    element_contribution,
    fit_constrained,
)
from .errors import ConfigError, DecompError
from .linearization import LinearizationResult, run_linearization_path
from .panel import LOSS_RATE, ElementPanel, MetricSpec, PanelSchema, compute_metric_series, load_panel, write_panel
from .pipeline import (
    FeatureOptions,
    FittedTransform,
    aggregate_segments,
    aggregate_transformed,
    apply_transform,
    fit_joint,
    lagged_feature,
    normalize_series,
    screen_features,
    search_lag,
    segment_cross,
    segment_univariate,
)
from .pipeline.segmentation import DEFAULT_N_MIN
from .simulator import SimConfig, default_scenario, simulate_portfolio, write_config
from .spc import detect_signals, ix_mr_limits, write_spc

PATHS = ("five_step", "differentiation", "both")
REPORT_FORMATS = ("csv", "svg")

# feature options matching the simulated portfolio
SIMULATION_FEATURES: dict[str, dict] = {
    "unemployment": {"monotonicity": "increasing"},
    "segment": {},
    "tenure": {},
    "managerial": {},
    "regulatory": {},
    "seasonality": {},
}


def _read_json(source: str | Path | Mapping | None, what: str) -> dict | None:
    if source is None or isinstance(source, Mapping):
        return None if source is None else dict(source)
    path = Path(source)
    if not path.exists():
        raise ConfigError(f"{what} file not found: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


@dataclass(frozen=True)
class PipelineConfig:
    """Per-feature fitting options plus global thresholds.

    An empty ``features`` mapping means every panel feature with default
    options.
    """

    features: dict[str, FeatureOptions] = field(default_factory=dict)
    n_min: int = DEFAULT_N_MIN
    screen_threshold: float = 0.05
    elim_threshold: float = 0.005
    linearization_mode: str = "mean_based"
    t_ref: int | None = None
    t: int | None = None

    @classmethod
    def from_dict(cls, d: Mapping | None) -> "PipelineConfig":
        d = dict(d or {})
        known = {"features", "n_min", "screen_threshold", "elim_threshold", "linearization_mode", "effects"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown pipeline config keys {sorted(unknown)}")
        feats = {name: FeatureOptions.from_dict(opts) for name, opts in (d.get("features") or {}).items()}
        eff = d.get("effects") or {}
        try:
            return cls(
                features=feats,
                n_min=int(d.get("n_min", DEFAULT_N_MIN)),
                screen_threshold=float(d.get("screen_threshold", 0.05)),
                elim_threshold=float(d.get("elim_threshold", 0.005)),
                linearization_mode=str(d.get("linearization_mode", "mean_based")),
                t_ref=eff.get("t_ref"),
                t=eff.get("t"),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"malformed pipeline config: {exc}") from None

    @classmethod
    def for_simulation(cls) -> "PipelineConfig":
        return cls.from_dict({"features": SIMULATION_FEATURES})

    def to_dict(self) -> dict:
        return {
            "features": {k: vars(v).copy() for k, v in self.features.items()},
            "n_min": self.n_min,
            "screen_threshold": self.screen_threshold,
            "elim_threshold": self.elim_threshold,
            "linearization_mode": self.linearization_mode,
            "effects": {"t_ref": self.t_ref, "t": self.t},
        }

    def resolve_features(self, panel: ElementPanel) -> dict[str, FeatureOptions]:
        if not self.features:
            return {name: FeatureOptions() for name in panel.features}
        missing = [f for f in self.features if f not in panel.features]
        if missing:
            raise ConfigError(f"pipeline config names features absent from the panel: {missing}")
        return dict(self.features)


@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs. Without ``panel`` the portfolio is simulated."""

    out_dir: Path
    panel: Path | None = None
    schema: PanelSchema = field(default_factory=PanelSchema)
    simulation: SimConfig | None = None
    seed: int | None = None
    metric: MetricSpec = LOSS_RATE
    pipeline: PipelineConfig | None = None
    path: str = "five_step"
    report: str | None = None
    write_contributions: bool = True

    def __post_init__(self):
        if self.path not in PATHS:
            raise ConfigError(f"path must be one of {PATHS}, got {self.path!r}")
        if self.report is not None and self.report not in REPORT_FORMATS:
            raise ConfigError(f"report format must be one of {REPORT_FORMATS}")
        if self.panel is not None and not Path(self.panel).exists():
            raise ConfigError(f"panel file not found: {self.panel}")

    @classmethod
    def from_dict(cls, d: Mapping, out_dir: str | Path | None = None, base_dir: Path | None = None) -> "RunConfig":
        """Build from a JSON-style mapping; relative paths resolve against ``base_dir``."""
        d = dict(d)
        known = {
            "out_dir", "panel", "schema", "simulation", "seed", "metric", "pipeline",
            "path", "report", "write_contributions",
        }
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown run config keys {sorted(unknown)}")
        base = base_dir or Path.cwd()

        def resolve(p):
            if p is None:
                return None
            p = Path(p)
            return p if p.is_absolute() else base / p

        metric = d.get("metric")
        if isinstance(metric, str):
            metric = _read_json(resolve(metric), "metric spec")
        pipeline = d.get("pipeline")
        if isinstance(pipeline, str):
            pipeline = _read_json(resolve(pipeline), "pipeline config")
        sim = d.get("simulation")
        if isinstance(sim, str):
            sim = _read_json(resolve(sim), "simulator config")
        out = out_dir if out_dir is not None else d.get("out_dir", "out")
        return cls(
            out_dir=Path(out),
            panel=resolve(d.get("panel")),
            schema=PanelSchema.from_mapping(d.get("schema")),
            simulation=None if sim is None else SimConfig.from_dict(sim),
            seed=d.get("seed"),
            metric=LOSS_RATE if metric is None else MetricSpec.from_dict(metric),
            pipeline=None if pipeline is None else PipelineConfig.from_dict(pipeline),
            path=d.get("path", "five_step"),
            report=d.get("report"),
            write_contributions=bool(d.get("write_contributions", True)),
        )

    @classmethod
    def from_json(cls, path: str | Path, out_dir: str | Path | None = None) -> "RunConfig":
        path = Path(path)
        return cls.from_dict(_read_json(path, "run config"), out_dir, base_dir=path.parent)

    def simulation_config(self) -> SimConfig:
        cfg = self.simulation or default_scenario()
        return cfg if self.seed is None else replace(cfg, seed=int(self.seed))

    def pipeline_config(self) -> PipelineConfig:
        if self.pipeline is not None:
            return self.pipeline
        return PipelineConfig.for_simulation() if self.panel is None else PipelineConfig()

    def to_dict(self) -> dict:
        """Canonical content used for the config hash (output location excluded)."""
        return {
            "panel": None if self.panel is None else _sha256(Path(self.panel)),
            "schema": vars(self.schema).copy(),
            "simulation": None if self.panel is not None else self.simulation_config().to_dict(),
            "metric": self.metric.to_dict(),
            "pipeline": self.pipeline_config().to_dict(),
            "path": self.path,
            "report": self.report,
            "write_contributions": self.write_contributions,
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=list).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _dump_json(obj: Any, path: Path) -> Path:
    path.write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")
    return path


def _dump_csv(df: pd.DataFrame, path: Path) -> Path:
    df.to_csv(path, index=False, encoding="utf-8", lineterminator="\n")
    return path


@dataclass
class RunResult:
    """In-memory products of a run, alongside the manifest."""

    manifest: dict
    panel: ElementPanel
    metric: np.ndarray
    transforms: dict[str, FittedTransform]
    screened: list[str]
    ghat: dict
    model: DecompositionModel
    linearization: LinearizationResult | None = None


class _Recorder:
    """Tracks written files and stage timings for the manifest."""

    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self.files: list[Path] = []
        self.timings: dict[str, float] = {}
        self.stage: str | None = None

    def add(self, path: Path) -> Path:
        self.files.append(path)
        return path

    @contextmanager
    def run(self, name: str):
        self.stage = name
        start = time.perf_counter()
        yield
        self.timings[name] = round(time.perf_counter() - start, 6)
        self.stage = None

    def abandon(self) -> None:
        for p in self.files:
            if p.exists():
                p.replace(p.with_name(p.name + ".partial"))


def _segments_frame(panel: ElementPanel, feature: str, opts: FeatureOptions, lag: int, spec, n_min: int) -> pd.DataFrame:
    values = lagged_feature(panel, feature, lag)
    table = segment_univariate(panel, feature, opts.scheme, opts.bins, opts.max_categories, values=values)
    agg = aggregate_segments(panel, table, spec, n_min, features={feature: values})
    rows = []
    for k, s in enumerate(agg.segments):
        rows.append((int(s), int(agg.n[k]), float(agg.x_hat[feature][k]), float(agg.z[k]), float(agg.z_var[k]), 1))
    for s, n, reason in agg.filtered:
        rows.append((int(s), int(n), float("nan"), float("nan"), float("nan"), 0))
    rows.sort()
    return pd.DataFrame(rows, columns=["segment", "n", "x_mean", "z", "z_var", "retained"])


def run_pipeline(config: RunConfig) -> RunResult:
    """Execute every stage and write artifacts plus ``manifest.json`` into ``config.out_dir``.

    On failure every file written so far is renamed with a ``.partial``
    suffix and the exception is re-raised with a ``stage`` attribute.
    """
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rec = _Recorder(out)
    pipe = config.pipeline_config()
    spec = config.metric
    lin: LinearizationResult | None = None
    try:
        if config.panel is None:
            with rec.run("simulate"):
                sim = config.simulation_config()
                panel = simulate_portfolio(sim)
                rec.add(write_panel(panel, out / "panel.csv"))
                rec.add(write_config(sim, out / "panel_config.json"))
            seed = sim.seed
        else:
            with rec.run("load"):
                panel = load_panel(config.panel, config.schema)
            seed = config.seed

        with rec.run("metric"):
            spec.check(panel)
            z = compute_metric_series(panel, spec).values
            num, den = spec.aggregate(panel, panel.t, panel.T)
            rec.add(_dump_csv(pd.DataFrame({"t": np.arange(panel.T), "z": z, "numerator": num, "denominator": den}),
                              out / "metric.csv"))

        features = pipe.resolve_features(panel)
        transforms: dict[str, FittedTransform] = {}
        if config.path in ("five_step", "both"):
            with rec.run("segment_fit"):
                for name, opts in features.items():
                    lag, fit = search_lag(
                        panel, name, spec, opts.max_lag, opts.scheme, opts.bins, pipe.n_min,
                        opts.monotonicity, opts.link if opts.link != "identity" else None,
                        opts.max_categories,
                    )
                    transforms[name] = fit
                    rec.add(_dump_csv(_segments_frame(panel, name, opts, lag, spec, pipe.n_min),
                                      out / f"segments_{name}.csv"))
                    rec.add(fit.save(out / f"transform_{name}.json"))
            with rec.run("screen"):
                screened = screen_features(transforms, pipe.screen_threshold)
                rec.add(_dump_csv(pd.DataFrame(
                    [(n, t.lag, t.fit_r2, t.r2_in_sample, t.n_segments, int(n in screened)) for n, t in transforms.items()],
                    columns=["feature", "lag", "fit_r2", "r2_in_sample", "n_segments", "screened"],
                ), out / "screening.csv"))
            with rec.run("joint"):
                # informational stacking on the cross grid of screened features
                tables = [
                    segment_univariate(panel, n, features[n].scheme, features[n].bins, features[n].max_categories,
                                       values=lagged_feature(panel, n, transforms[n].lag))
                    for n in screened
                ]
                lagged = {n: lagged_feature(panel, n, transforms[n].lag) for n in screened}
                gagg = aggregate_segments(panel, segment_cross(tables), spec, pipe.n_min, features=lagged)
                joint = fit_joint(gagg, [transforms[n] for n in screened])
                rec.add(_dump_json(joint.to_dict(), out / "joint_model.json"))
            with rec.run("aggregate"):
                ghat = {}
                for n in screened:
                    raw = aggregate_transformed(apply_transform(panel, transforms[n]), panel, features[n].weighting, n)
                    ghat[n] = normalize_series(raw)
            with rec.run("decompose"):
                model = fit_constrained(z, ghat, pipe.elim_threshold)
        if config.path in ("differentiation", "both"):
            with rec.run("linearization"):
                lin = run_linearization_path(
                    panel, spec, features, pipe.linearization_mode, pipe.n_min,
                    pipe.screen_threshold, pipe.elim_threshold,
                )
                rec.add(lin.constants.save(out / "lin_constants.json"))
                rec.add(_dump_csv(pd.DataFrame({
                    "element_id": panel.element_id, "t": panel.t, "L": lin.form.values,
                }), out / "lform.csv"))
                rec.add(_dump_csv(pd.DataFrame({
                    "t": np.arange(panel.T),
                    "exact": lin.exact,
                    "reconstructed": lin.reconstruction,
                    "abs_error": np.abs(lin.reconstruction - lin.exact),
                    "element_sum": lin.approximation,
                }), out / "reconstruction.csv"))
                for n, tr in lin.transforms.items():
                    rec.add(tr.save(out / f"lin_transform_{n}.json"))
                rec.add(_dump_json({
                    "model": lin.model.to_dict(),
                    "screened": lin.screened,
                    "element_fit_r2": {n: t.fit_r2 for n, t in lin.transforms.items()},
                    "element_joint": lin.element_joint,
                    "approximation_correlation": lin.approximation_correlation,
                    "max_reconstruction_error": float(np.max(np.abs(lin.reconstruction - lin.exact))),
                }, out / "lin_model.json"))
            if config.path == "differentiation":
                transforms, screened, ghat, model = lin.transforms, lin.screened, lin.ghat, lin.model
            else:
                with rec.run("compare"):
                    rec.add(_dump_csv(path_comparison(model, ghat, lin), out / "path_comparison.csv"))

        with rec.run("model"):
            rec.add(model.save(out / "model.json"))
            rec.add(_dump_csv(pd.DataFrame(
                {"t": np.arange(panel.T), **{n: ghat[n].values for n in model.survivors}}
            ), out / "ghat.csv"))
            rec.add(_dump_csv(pd.DataFrame({
                "t": np.arange(panel.T), "actual": z, "fitted": model.fitted, "residual": model.residuals,
            }), out / "residuals.csv"))

        with rec.run("spc"):
            res_limits = ix_mr_limits(model.residuals)
            z_limits = ix_mr_limits(z)
            rec.add(write_spc(model.residuals, out / "spc.csv", res_limits))
            rec.add(write_spc(z, out / "spc_metric.csv", z_limits))
            rec.add(_dump_json({
                "residuals": {**res_limits.to_dict(), "signals": [vars(s) for s in detect_signals(model.residuals, res_limits)]},
                "metric": {**z_limits.to_dict(), "signals": [vars(s) for s in detect_signals(z, z_limits)]},
            }, out / "spc_summary.json"))

        with rec.run("effects"):
            t_ref = 0 if pipe.t_ref is None else int(pipe.t_ref)
            t_end = panel.T - 1 if pipe.t is None else int(pipe.t)
            rec.add(write_effects(effect_vs_reference(model, ghat, t_ref, t_end), out / "effects.csv"))
            if config.write_contributions and model.survivors:
                h = element_contribution(model, {n: apply_transform(panel, transforms[n]) for n in model.survivors})
                rec.add(_dump_csv(pd.DataFrame({"element_id": panel.element_id, "t": panel.t, "H": h}),
                                  out / "contributions.csv"))

        if config.report is not None:
            from .report import emit_report

            with rec.run("report"):
                for p in emit_report(out, config.report, register=False):
                    rec.add(p)
    except BaseException as exc:
        stage = rec.stage or "setup"
        rec.abandon()
        if isinstance(exc, DecompError):
            exc.stage = stage
        raise

    manifest = {
        "package": "ratiodecomp",
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "pandas": pd.__version__,
        "seed": seed,
        "config_hash": config.config_hash(),
        "path": config.path,
        "stage_seconds": rec.timings,
        "files": {p.name if p.parent == out else str(p.relative_to(out)): _sha256(p) for p in rec.files},
    }
    _dump_json(manifest, out / "manifest.json")
    return RunResult(manifest, panel, z, transforms, screened, ghat, model, lin)


def write_effects(report, path: Path) -> Path:
    df = pd.DataFrame(report.rows(), columns=["feature", "effect"])
    df.insert(0, "t", report.t)
    df.insert(0, "t_ref", report.t_ref)
    return _dump_csv(df, path)


def path_comparison(model: DecompositionModel, ghat: Mapping, lin: LinearizationResult) -> pd.DataFrame:
    """Survivor membership, coefficients, and G_hat correlation per candidate feature."""
    names = list(dict.fromkeys([*model.candidates, *lin.model.candidates]))
    rows = []
    for n in names:
        corr = float("nan")
        if n in ghat and n in lin.ghat:
            a, b = ghat[n].values, lin.ghat[n].values
            if a.std() > 0 and b.std() > 0:
                corr = float(np.corrcoef(a, b)[0, 1])
        rows.append((
            n,
            int(n in model.survivors),
            int(n in lin.model.survivors),
            model.betas.get(n, 0.0),
            lin.model.betas.get(n, 0.0),
            corr,
        ))
    return pd.DataFrame(rows, columns=[
        "feature", "five_step_survivor", "linearization_survivor", "five_step_beta", "linearization_beta",
        "ghat_correlation",
    ])


def register_artifacts(out_dir: str | Path, paths) -> None:
    """Add files written after a run to its manifest (no-op without one)."""
    out = Path(out_dir)
    mpath = out / "manifest.json"
    if not mpath.exists():
        return
    manifest = json.loads(mpath.read_text(encoding="utf-8"))
    for p in paths:
        p = Path(p)
        manifest["files"][str(p.relative_to(out))] = _sha256(p)
    _dump_json(manifest, mpath)
