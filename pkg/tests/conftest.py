import time

import numpy as np
import pytest

from ratiodecomp.panel import ElementPanel
from ratiodecomp.runner import RunConfig, run_pipeline
from ratiodecomp.simulator import SimConfig, simulate_portfolio


def make_panel(rows, features=("x",), underlyings=("loss", "balance")):
    """Panel from (element_id, t, *feature values, *underlying values) tuples."""
    rows = list(rows)
    eid = np.array([r[0] for r in rows])
    t = np.array([r[1] for r in rows], dtype=np.int64)
    k = len(features)
    feats = {f: np.array([r[2 + j] for r in rows], dtype=float) for j, f in enumerate(features)}
    unds = {u: np.array([r[2 + k + j] for r in rows], dtype=float) for j, u in enumerate(underlyings)}
    return ElementPanel.from_arrays(eid, t, feats, unds)


@pytest.fixture(scope="session")
def small_config():
    return SimConfig(
        T=36,
        t1=12,
        t2=24,
        initial_book=1500,
        growth_base=(20.0, 20.0, 30.0),
        growth_slope=(0.2, 0.4, 1.5),
        seed=7,
    )


@pytest.fixture(scope="session")
def small_panel(small_config):
    return simulate_portfolio(small_config)


@pytest.fixture(scope="session")
def default_run(tmp_path_factory):
    """Full default simulate-and-decompose run on both paths, with its wall time."""
    out = tmp_path_factory.mktemp("default_run")
    start = time.perf_counter()
    result = run_pipeline(RunConfig(out_dir=out, path="both", report="svg"))
    return result, out, time.perf_counter() - start


ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    """Record and print the outcome of one acceptance criterion."""

    def record(number: int, ok: bool, detail: str) -> None:
        ACCEPTANCE[number] = (bool(ok), detail)
        print(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
