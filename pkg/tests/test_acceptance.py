"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The default scenario is run once per session (``default_run`` fixture) on
both decomposition paths; criterion 10 runs it a second time.
"""

import numpy as np
import pandas as pd
import pytest

from conftest import make_panel
from oracles import best_monotone_step_sse, centered_sse, grid_min_sse
from ratiodecomp.decomposition import effect_vs_reference, predict_series
from ratiodecomp.linearization import aggregate_series, linearization_constants, reconstruct_metric
from ratiodecomp.nnls import kkt_violations, nnls_with_intercept
from ratiodecomp.panel import LOSS_RATE, compute_metric_series
from ratiodecomp.pipeline import AggregatedFeatureSeries, aggregate_transformed, normalize_series, pava
from ratiodecomp.runner import RunConfig, run_pipeline
from ratiodecomp.spc import detect_signals, ix_mr_limits

EXPECTED = {"unemployment", "segment", "tenure"}
REJECTED = {"managerial", "regulatory", "seasonality"}

# tolerances
R2_ADJ_MIN = 0.80
RUNTIME_MAX_S = 60.0
GHAT_CORR_MIN = 0.9
IDENTITY_TOL = 1e-12
KKT_TOL = 1e-8
EXACT_TOL = 1e-12
CENTER_TOL = 1e-10
RESCALE_TOL = 1e-12
TENURE_NEW = 5.0
TENURE_SHARE_MAX = 0.20


def test_c01_fit_quality_and_runtime(default_run, criterion):
    res, _, seconds = default_run
    ok = res.model.r2_adj >= R2_ADJ_MIN and seconds < RUNTIME_MAX_S
    criterion(1, ok, f"r2_adj={res.model.r2_adj:.3f} (>= {R2_ADJ_MIN}), end-to-end {seconds:.1f}s (< {RUNTIME_MAX_S:.0f}s)")
    assert ok


def test_c02_survivor_set(default_run, criterion):
    res, _, _ = default_run
    got = set(res.model.survivors)
    rejected = set(res.model.candidates) - got
    ok = got == EXPECTED and REJECTED <= rejected
    criterion(2, ok, f"survivors={sorted(got)}, rejected={sorted(rejected)}")
    assert ok


def test_c03_cross_path_agreement(default_run, criterion):
    res, _, _ = default_run
    lin = res.linearization
    same = set(lin.model.survivors) == set(res.model.survivors)
    corr = {
        s: float(np.corrcoef(res.ghat[s].values, lin.ghat[s].values)[0, 1])
        for s in res.model.survivors
        if s in lin.ghat
    }
    ok = same and len(corr) == len(res.model.survivors) and min(corr.values()) > GHAT_CORR_MIN
    shown = ", ".join(f"{k}={v:.3f}" for k, v in sorted(corr.items()))
    criterion(3, ok, f"linearization survivors={sorted(lin.model.survivors)}, G-hat correlations {shown} (> {GHAT_CORR_MIN})")
    assert ok


def test_c04_spc_contrast(default_run, criterion):
    res, _, _ = default_run
    z = res.metric
    raw = detect_signals(z, ix_mr_limits(z))
    lim = ix_mr_limits(res.model.residuals)
    resid = detect_signals(res.model.residuals, lim)
    ok = len(raw) >= 1 and len(resid) == 0
    where = ", ".join(f"t={s.t} ({s.value / (lim.ucl if s.side == 'upper' else lim.lcl):.2f}x limit)" for s in resid)
    criterion(4, ok, f"raw Z signals={len(raw)} (>= 1), residual signals={len(resid)} (== 0){': ' + where if where else ''}")
    assert ok


def test_c05_effect_identity(default_run, criterion):
    res, _, _ = default_run
    g = {s: res.ghat[s].values for s in res.model.survivors}
    pred = predict_series(res.model, g).values
    T = pred.shape[0]
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(100):
        t_ref, t = sorted(int(v) for v in rng.choice(T, size=2, replace=False))
        rep = effect_vs_reference(res.model, g, t_ref, t)
        worst = max(worst, abs(pred[t_ref] + sum(rep.effects.values()) - pred[t]))
    ok = worst <= IDENTITY_TOL
    criterion(5, ok, f"max |Z~(t_ref) + sum Eff - Z~(t)| = {worst:.2e} over 100 pairs (<= {IDENTITY_TOL:g})")
    assert ok


def test_c06_nnls_oracle(criterion):
    rng = np.random.default_rng(6)
    worst_gap, kkt_fail = -np.inf, 0
    for _ in range(200):
        k, T = int(rng.integers(1, 4)), int(rng.integers(5, 13))
        X = rng.normal(size=(T, k))
        y = X @ rng.uniform(-0.5, 1.0, size=k) + 0.3 * rng.normal(size=T)
        _, b, res = nnls_with_intercept(X, y)
        sse = float(centered_sse(X, y, b[None, :])[0])
        worst_gap = max(worst_gap, sse - grid_min_sse(X, y))
        kkt_fail += bool(kkt_violations(res.gradient, res.x, KKT_TOL))
    # grid points are feasible, so the exact optimum can never exceed the grid minimum
    ok = worst_gap <= 1e-9 and kkt_fail == 0
    criterion(6, ok, f"max(SSE - grid min) = {worst_gap:.2e} over 200 instances, KKT failures={kkt_fail}")
    assert ok


def test_c07_pava_oracle(criterion):
    rng = np.random.default_rng(7)
    worst = -np.inf
    for _ in range(200):
        n = int(rng.integers(1, 7))
        y, w = rng.normal(size=n), rng.uniform(0.1, 5.0, size=n)
        inc = bool(rng.integers(0, 2))
        sse = float(w @ (y - pava(y, w, inc)) ** 2)
        worst = max(worst, sse - best_monotone_step_sse(y, w, inc))
    ok = worst <= 1e-12
    criterion(7, ok, f"max(PAVA SSE - best enumerated monotone SSE) = {worst:.2e} over 200 instances")
    assert ok


def constant_denominator_panel(rng, n=25, T=30):
    # balances rotate among elements but every period totals the same
    rows = []
    base = rng.uniform(10, 100, size=n)
    for t in range(T):
        bal = np.roll(base, t)
        loss = np.where(rng.random(n) < 0.1, bal, 0.0)
        rows += [(f"e{i:02d}", t, 0.0, loss[i], bal[i]) for i in range(n)]
    return make_panel(rows)


def test_c08_linearization_exactness(criterion):
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(20):
        panel = constant_denominator_panel(rng)
        y1, y2 = aggregate_series(panel, LOSS_RATE)
        z = compute_metric_series(panel, LOSS_RATE).values
        rec = reconstruct_metric(z[0], y1, y2, linearization_constants(y1, y2)).values
        worst = max(worst, float(np.max(np.abs(rec - z))))
    ok = worst <= EXACT_TOL
    criterion(8, ok, f"max |reconstruction - Z| = {worst:.2e} on 20 constant-denominator panels (<= {EXACT_TOL:g})")
    assert ok


def test_c09_aggregation_identities(default_run, criterion):
    res, _, _ = default_run
    panel = res.panel
    rng = np.random.default_rng(9)
    g = rng.normal(size=panel.n_rows)
    simple = aggregate_transformed(g, panel, "simple").values
    equal = aggregate_transformed(g, panel, "weighted", weights=np.full(panel.n_rows, 3.7)).values
    exact = bool(np.array_equal(simple, equal))
    w = panel.underlying("balance")
    base = aggregate_transformed(g, panel, "weighted", weights=w).values
    rescale = max(
        float(np.max(np.abs(aggregate_transformed(g, panel, "weighted", weights=k * w).values - base)))
        for k in (1e-3, 0.5, 7.0, 1e6)
    )
    series = list(res.ghat.values()) + list(res.linearization.ghat.values())
    series += [normalize_series(AggregatedFeatureSeries("r", rng.lognormal(size=72))) for _ in range(20)]
    centered = max(abs(float(s.values.sum())) for s in series)
    ok = exact and centered <= CENTER_TOL and rescale <= RESCALE_TOL
    criterion(9, ok, f"equal weights exact={exact}, max |sum G-hat|={centered:.1e} (<= {CENTER_TOL:g}), "
                     f"rescale drift={rescale:.1e} (<= {RESCALE_TOL:g})")
    assert ok


def test_c10_determinism(default_run, tmp_path, criterion):
    _, first, _ = default_run
    second = tmp_path / "rerun"
    run_pipeline(RunConfig(out_dir=second, path="both", report="svg"))

    def files(root):
        # manifest.json carries wall-clock timings; every other byte must match
        return sorted(p.relative_to(root).as_posix() for p in root.rglob("*") if p.is_file() and p.name != "manifest.json")

    names = files(first)
    same_names = names == files(second)
    differing = [n for n in names if same_names and (first / n).read_bytes() != (second / n).read_bytes()]
    ok = same_names and not differing
    criterion(10, ok, f"{len(names)} artifacts compared, differing={differing if same_names else 'file sets differ'}")
    assert ok


def test_c11_tenure_shape(default_run, criterion):
    _, out, _ = default_run
    seg = pd.read_csv(out / "segments_tenure.csv")
    seg = seg[seg.retained == 1]
    peak = float(seg.z.max())
    young = float(seg.z[seg.x_mean < TENURE_NEW].max())
    share = young / peak
    ok = share < TENURE_SHARE_MAX
    criterion(11, ok, f"max Z(s) for mean tenure < {TENURE_NEW:g} is {share:.3f} of peak (< {TENURE_SHARE_MAX})")
    assert ok
