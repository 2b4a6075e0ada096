# %% [markdown]
# Monitoring with IX & MR control charts
#
# The raw loss rate is full of out-of-limit months because the drivers move
# it. Residuals of the fitted decomposition should mostly sit inside the
# limits; a residual signal points at something the drivers do not explain.

# %%
import numpy as np

from ratiodecomp.decomposition import scenario_predict
from ratiodecomp.runner import RunConfig, run_pipeline
from ratiodecomp.spc import detect_signals, ix_mr_limits

# writes every artifact under demo_out/
res = run_pipeline(RunConfig(out_dir="demo_out", write_contributions=False))
z, resid = res.metric, res.model.residuals

for label, series in (("raw Z", z), ("residuals", resid)):
    lim = ix_mr_limits(series)
    sig = detect_signals(series, lim)
    print(f"{label:>9}: centre {lim.r_bar * 1e3:+.3f}, limits [{lim.lcl * 1e3:+.3f}, {lim.ucl * 1e3:+.3f}] "
          f"per mille, {len(sig)} signals")
    for s in sig[:5]:
        print(f"           t={s.t:2d} {s.side}")

# %% [markdown]
# Scenario: hold the other drivers at their last level and raise the
# unemployment series by one standard deviation of its history.

# %%
last = {s: float(res.ghat[s].values[-1]) for s in res.model.survivors}
bump = float(np.std(res.ghat["unemployment"].values))
levels = {s: [v, v] for s, v in last.items()}
levels["unemployment"] = [last["unemployment"], last["unemployment"] + bump]
out = scenario_predict(res.model, levels)
print(f"fitted rate now {out.values[0] * 1e3:.2f}, stressed {out.values[1] * 1e3:.2f} per mille")
print(out.notes[0])
