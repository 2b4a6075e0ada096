import numpy as np
import pytest

from conftest import make_panel
from ratiodecomp.errors import ContractError, InsufficientDataError
from ratiodecomp.linearization import (
    ElementLinearForm,
    LinearizationConstants,
    aggregate_series,
    element_flows,
    element_linear_form,
    fit_element_transform,
    linearization_constants,
    reconstruct_metric,
)
from ratiodecomp.panel import LOSS_RATE


def test_constant_series_constants():
    c = linearization_constants([1, 1, 1], [2, 2, 2])
    assert c.c1 == pytest.approx(0.5) and c.c2 == pytest.approx(0.25)


def test_fitted_mode_constant_denominator():
    y2 = np.full(12, 40.0)
    y1 = np.array([1.0, 3.0, 2.0, 5.0, 4.0, 4.5, 6.0, 3.0, 2.5, 1.0, 2.0, 3.5])
    c = linearization_constants(y1, y2, "fitted")
    mean_c2 = linearization_constants(y1, y2).c2
    assert c.c1 == pytest.approx(1 / 40.0, abs=1e-10)
    assert c.c2 == mean_c2
    assert c.notes


def test_fitted_mode_recovers_linear_truth():
    rng = np.random.default_rng(0)
    y1 = 10 + rng.normal(size=30)
    y2 = 200 + 5 * rng.normal(size=30)
    z = 0.3 + 0.02 * y1 - 0.001 * y2
    c = linearization_constants(y1, y2, "fitted", z=z)
    assert c.c1 == pytest.approx(0.02, rel=1e-10)
    assert c.c2 == pytest.approx(0.001, rel=1e-10)


def test_constants_guards():
    with pytest.raises(InsufficientDataError):
        linearization_constants([1.0], [2.0])
    with pytest.raises(ContractError):
        linearization_constants([1.0, 1.0], [2.0, 0.0])
    with pytest.raises(ContractError):
        linearization_constants([1.0, 1.0], [2.0, 2.0], mode="other")


def test_z0_star_minimizes_gap():
    rng = np.random.default_rng(1)
    y1, y2 = rng.uniform(1, 2, 20), rng.uniform(50, 60, 20)
    c = linearization_constants(y1, y2)
    gap = lambda z0: np.mean((y1 / y2 - (c.c1 * y1 - c.c2 * y2 + z0)) ** 2)
    assert gap(c.z0_star) <= min(gap(c.z0_star + d) for d in (-1e-6, 1e-6))


def test_element_form_examples():
    panel = make_panel([("a", 0, 0.0, 0.0, 100.0), ("b", 0, 0.0, 0.0, 0.0)])
    form = element_linear_form(panel, LinearizationConstants(0.5, 0.25, 0.0), LOSS_RATE)
    np.testing.assert_array_equal(form.values, [-25.0, 0.0])


def test_reconstruction_example():
    c = linearization_constants([1, 2, 3], [2, 2, 2])
    assert (c.c1, c.c2) == (0.5, 0.5)
    rec = reconstruct_metric(0.5, [1, 2, 3], [2, 2, 2], c).values
    np.testing.assert_array_equal(rec, [0.5, 1.0, 1.5])


def test_flat_reconstruction():
    c = LinearizationConstants(0.3, 0.2, 0.0)
    np.testing.assert_array_equal(reconstruct_metric(0.07, [4, 4, 4, 4], [9, 9, 9, 9], c).values, 0.07)


def test_exact_for_constant_denominator():
    rng = np.random.default_rng(2)
    for _ in range(50):
        T = int(rng.integers(2, 80))
        y2 = np.full(T, rng.uniform(1, 1e6))
        y1 = rng.uniform(0, 1, T) * y2
        z = y1 / y2
        c = linearization_constants(y1, y2)
        rec = reconstruct_metric(z[0], y1, y2, c).values
        assert np.max(np.abs(rec - z)) <= 1e-12


def test_first_difference_consistency():
    rng = np.random.default_rng(3)
    y1, y2 = rng.uniform(0, 5, 15), rng.uniform(50, 100, 15)
    c = linearization_constants(y1, y2)
    rec = reconstruct_metric(0.1, y1, y2, c).values
    np.testing.assert_allclose(np.diff(rec), c.c1 * np.diff(y1) - c.c2 * np.diff(y2), rtol=0, atol=1e-15)


def test_sign_contract():
    c = linearization_constants([1, 2, 1.5], [50, 60, 55])
    assert c.c1 > 0 and c.c2 > 0
    base = reconstruct_metric(0.0, [1, 1], [10, 10], c).values[-1]
    assert reconstruct_metric(0.0, [1, 2], [10, 10], c).values[-1] > base
    assert reconstruct_metric(0.0, [1, 1], [10, 12], c).values[-1] < base


def test_flows_cumulate_to_period_sums(small_panel):
    y1, y2 = aggregate_series(small_panel, LOSS_RATE)
    c = linearization_constants(y1, y2)
    form = element_linear_form(small_panel, c, LOSS_RATE)
    flows = element_flows(small_panel, form)
    sums = form.period_sums(small_panel)
    np.testing.assert_allclose(np.cumsum(flows), sums, rtol=0, atol=1e-10 * np.abs(sums).max())


def test_fixed_membership_flows():
    rows = [(e, t, 0.0, float(t % 2), 10.0 + t) for e in "abc" for t in range(4)]
    panel = make_panel(rows)
    form = ElementLinearForm(np.arange(panel.n_rows, dtype=float), LinearizationConstants(1, 1, 0))
    np.testing.assert_allclose(np.cumsum(element_flows(panel, form)), form.period_sums(panel), atol=1e-10)


def test_linear_form_tracks_metric(small_panel):
    y1, y2 = aggregate_series(small_panel, LOSS_RATE)
    c = linearization_constants(y1, y2)
    approx = element_linear_form(small_panel, c, LOSS_RATE).approximation(small_panel)
    np.testing.assert_allclose(approx, c.z0_star + c.c1 * y1 - c.c2 * y2, rtol=1e-10)


def test_element_transform_constant_target():
    rows = [(f"e{i:03d}", 0, float(i % 40), 0.0, 1.0) for i in range(400)]
    panel = make_panel(rows)
    fit = fit_element_transform(np.full(panel.n_rows, 3.0), panel, "x", max_categories=0)
    assert fit.fit_r2 == 0.0
    np.testing.assert_allclose(fit.knots_g, 3.0)


def test_element_transform_linear_target():
    rows = [(f"e{i:03d}", 0, float(i % 20), 0.0, 1.0) for i in range(800)]
    panel = make_panel(rows)
    L = 2.0 * panel.feature("x") - 1.0
    # one segment per distinct value: no within-segment spread
    fit = fit_element_transform(L, panel, "x")
    np.testing.assert_allclose(fit(fit.knots_x), 2.0 * fit.knots_x - 1.0, atol=1e-12)
    assert fit.fit_r2 == pytest.approx(1.0)


def test_element_transform_binned_linear_target():
    rows = [(f"e{i:03d}", 0, float(i % 40), 0.0, 1.0) for i in range(400)]
    panel = make_panel(rows)
    x = panel.feature("x")
    fit = fit_element_transform(2.0 * x - 1.0, panel, "x", max_categories=0)
    # knots sit at segment means of x, so the line is reproduced there
    np.testing.assert_allclose(fit(fit.knots_x), 2.0 * fit.knots_x - 1.0, atol=1e-12)
    assert fit.r2_in_sample == pytest.approx(1.0)
