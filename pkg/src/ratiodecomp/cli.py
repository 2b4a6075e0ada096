"""Command-line entry point (``ratiodecomp``).

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from . import __version__
from .decomposition import DecompositionModel, effect_vs_reference, scenario_predict
from .errors import ConfigError, DataError, DecompError
from .panel import panel_summary, write_panel
from .runner import RunConfig, register_artifacts, run_pipeline, write_effects, _read_json
from .simulator import SimConfig, default_scenario, simulate_portfolio, write_config
from .spc import detect_signals, ix_mr_limits, write_spc


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    parser.add_argument("--out-dir", default=argparse.SUPPRESS if suppress else "out",
                        help="output directory (default: out)")
    parser.add_argument("--seed", type=int, default=d, help="simulation seed override")
    parser.add_argument("--config", default=d, help="JSON configuration file")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)

    p = argparse.ArgumentParser(prog="ratiodecomp", description="Decompose a ratio metric into feature contributions.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _global_flags(p, suppress=False)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="generate the synthetic portfolio panel")
    s.add_argument("--out", help="panel CSV path (default: <out-dir>/panel.csv)")

    d = sub.add_parser("decompose", parents=[common], help="run the full decomposition")
    d.add_argument("--panel", help="panel CSV; omit to simulate")
    d.add_argument("--metric", help="metric spec JSON")
    d.add_argument("--pipeline", help="pipeline config JSON")
    d.add_argument("--path", choices=("five_step", "differentiation", "both"))
    d.add_argument("--report", choices=("csv", "svg"), help="also emit the report")
    d.add_argument("--no-contributions", action="store_true", help="skip contributions.csv")

    c = sub.add_parser("spc", parents=[common], help="IX & MR control chart for one series")
    c.add_argument("--input", help="CSV with a t column (default: <out-dir>/residuals.csv)")
    c.add_argument("--column", help="series column (default: residual, or the only non-t column)")
    c.add_argument("--output", help="output CSV (default: <out-dir>/spc.csv)")

    e = sub.add_parser("effects", parents=[common], help="feature effects of period t against t_ref")
    e.add_argument("--t-ref", type=int, required=True)
    e.add_argument("--t", type=int, required=True)

    sc = sub.add_parser("scenario", parents=[common], help="evaluate the model on assumed feature levels")
    sc.add_argument("--overrides", required=True,
                    help="JSON object or file: {feature: level or [levels]} on the normalized scale")

    r = sub.add_parser("report", parents=[common], help="emit charts and chart data")
    r.add_argument("--format", choices=("csv", "svg"), default="svg")
    return p


def _print_json(obj) -> None:
    print(json.dumps(obj, indent=2))


def _cmd_simulate(args) -> int:
    cfg = default_scenario()
    if args.config:
        raw = _read_json(args.config, "simulator config")
        # accept a bare simulator config or a run config with a "simulation" block
        cfg = SimConfig.from_dict(raw["simulation"] if isinstance(raw.get("simulation"), dict) else raw)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    out = Path(args.out) if args.out else Path(args.out_dir) / "panel.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    panel = simulate_portfolio(cfg)
    write_panel(panel, out)
    echo = write_config(cfg, out.with_name(out.stem + "_config.json"))
    summary = panel_summary(panel)
    _print_json({"panel": str(out), "config": str(echo), "rows": summary["n_rows"],
                 "elements": summary["n_elements"], "T": summary["T"]})
    return 0


def _cmd_decompose(args) -> int:
    if args.config:
        raw = _read_json(args.config, "run config")
        base = Path(args.config).parent
    else:
        raw, base = {}, Path.cwd()
    for key in ("panel", "metric", "pipeline", "path", "report"):
        v = getattr(args, key)
        if v is not None:
            raw[key] = str(Path(v).resolve()) if key in ("panel", "metric", "pipeline") else v
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.no_contributions:
        raw["write_contributions"] = False
    cfg = RunConfig.from_dict(raw, out_dir=args.out_dir, base_dir=base)
    res = run_pipeline(cfg)
    m = res.model
    summary = {
        "out_dir": str(cfg.out_dir),
        "survivors": list(m.survivors),
        "betas": {k: m.betas[k] for k in m.survivors},
        "r2_adj": m.r2_adj,
        "residual_signals": len(detect_signals(m.residuals, ix_mr_limits(m.residuals))),
    }
    if res.linearization is not None:
        summary["linearization_survivors"] = list(res.linearization.model.survivors)
    _print_json(summary)
    return 0


def _load_model(out: Path) -> tuple[DecompositionModel, pd.DataFrame]:
    mpath, gpath = out / "model.json", out / "ghat.csv"
    for p in (mpath, gpath):
        if not p.exists():
            raise DataError(f"{p} not found; run `decompose` first")
    ghat = pd.read_csv(gpath)
    model = DecompositionModel.from_dict(json.loads(mpath.read_text(encoding="utf-8")))
    return model, ghat


def _cmd_spc(args) -> int:
    out = Path(args.out_dir)
    src = Path(args.input) if args.input else out / "residuals.csv"
    if not src.exists():
        raise DataError(f"input not found: {src}")
    df = pd.read_csv(src)
    if "t" not in df.columns:
        raise DataError(f"{src} lacks a t column")
    col = args.column
    if col is None:
        others = [c for c in df.columns if c != "t"]
        col = "residual" if "residual" in others else (others[0] if len(others) == 1 else None)
        if col is None:
            raise ConfigError(f"{src} has several series columns; choose one with --column")
    if col not in df.columns:
        raise DataError(f"{src} has no column {col!r}")
    values = pd.to_numeric(df.sort_values("t")[col], errors="coerce").to_numpy(dtype=float)
    if not np.all(np.isfinite(values)):
        raise DataError(f"column {col!r} contains non-numeric or non-finite values")
    limits = ix_mr_limits(values)
    dest = Path(args.output) if args.output else out / "spc.csv"
    dest.parent.mkdir(parents=True, exist_ok=True)
    write_spc(values, dest, limits)
    signals = detect_signals(values, limits)
    _print_json({**limits.to_dict(), "signals": [vars(s) for s in signals], "output": str(dest)})
    return 0


def _cmd_effects(args) -> int:
    out = Path(args.out_dir)
    model, ghat = _load_model(out)
    rep = effect_vs_reference(model, {s: ghat[s].to_numpy() for s in model.survivors}, args.t_ref, args.t)
    dest = write_effects(rep, out / f"effects_{args.t_ref}_{args.t}.csv")
    register_artifacts(out, [dest])
    _print_json({"t_ref": rep.t_ref, "t": rep.t, "effects": rep.effects, "total": rep.total})
    return 0


def _parse_overrides(text: str) -> dict:
    p = Path(text)
    if p.exists():
        return _read_json(p, "overrides")
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"--overrides is neither a file nor valid JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise ConfigError("--overrides must be a JSON object")
    return obj


def _cmd_scenario(args) -> int:
    out = Path(args.out_dir)
    model, ghat = _load_model(out)
    raw = _parse_overrides(args.overrides)
    unknown = set(raw) - set(model.survivors)
    if unknown:
        raise ConfigError(f"overrides name non-surviving features {sorted(unknown)}")
    lengths = [len(v) for v in raw.values() if isinstance(v, list)]
    horizon = max(lengths, default=1)
    levels = {}
    for s in model.survivors:
        # unspecified survivors stay at their last observed level
        v = raw.get(s, float(ghat[s].iloc[-1]))
        levels[s] = v if isinstance(v, list) else [float(v)] * horizon
    pred = scenario_predict(model, levels)
    dest = out / "scenario.csv"
    pd.DataFrame({"h": np.arange(1, pred.T + 1), "z": pred.values, **levels}).to_csv(
        dest, index=False, lineterminator="\n"
    )
    register_artifacts(out, [dest])
    _print_json({"z": pred.values.tolist(), "notes": list(pred.notes), "output": str(dest)})
    return 0


def _cmd_report(args) -> int:
    from .report import emit_report

    written = emit_report(Path(args.out_dir), args.format)
    _print_json({"files": [str(p) for p in written]})
    return 0


COMMANDS = {
    "simulate": _cmd_simulate,
    "decompose": _cmd_decompose,
    "spc": _cmd_spc,
    "effects": _cmd_effects,
    "scenario": _cmd_scenario,
    "report": _cmd_report,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except DecompError as exc:
        stage = getattr(exc, "stage", None)
        where = f" [stage {stage}]" if stage else ""
        print(f"error{where}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
