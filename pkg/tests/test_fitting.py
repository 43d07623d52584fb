"""
Fitting Tests
Regression helpers and local-exponent recovery
"""

import numpy as np
import pytest

from casimir_cusp.errors import FitFailureError, InvalidParameterError, WindowError
from casimir_cusp.exponents import LocalExponents, fit_local_exponents
from casimir_cusp.fitting import (
    best_window_fit,
    decade_windows,
    dyadic_windows,
    linear_fit,
    local_intercept,
    log_log_fit,
)


def _geometric_samples(cmap, n=20_000):
    """Points clustering at 0, 1 and both sides of the cusp"""
    d = np.geomspace(1e-9, 1.0, n)
    x0 = cmap.x0
    x = np.unique(np.r_[d * x0, x0 - d * x0, x0 + d * (1.0 - x0), 1.0 - d * (1.0 - x0)])
    x = x[(x > 0.0) & (x < 1.0) & (x != x0)]
    return x, cmap.eval(x)


def test_linear_fit_exact_line():
    """Tests slope, intercept and R² on an exact line"""
    x = np.arange(10.0)
    slope, intercept, r2 = linear_fit(x, 2.0 * x + 1.0)
    assert slope == pytest.approx(2.0) and intercept == pytest.approx(1.0)
    assert r2 == pytest.approx(1.0)


def test_log_log_fit_power_law():
    """Tests coefficient and exponent of an exact power law"""
    d = np.geomspace(1e-3, 1.0, 50)
    fit = log_log_fit(d, 3.0 * d**0.7)
    assert fit.exponent == pytest.approx(0.7, abs=1e-10)
    assert fit.coef == pytest.approx(3.0, rel=1e-10)
    assert fit.n == 50


def test_log_log_fit_needs_positive_points():
    """Tests that fewer than two usable points raise WindowError"""
    with pytest.raises(WindowError):
        log_log_fit([1.0], [1.0])
    with pytest.raises(WindowError):
        log_log_fit([1.0, 2.0, 3.0], [0.0, -1.0, 0.0])


def test_best_window_prefers_clean_power_law():
    """Tests that the window with the straightest log-log data wins"""
    d = np.geomspace(1e-5, 1.0, 500)
    r = d**0.5 * np.where(d < 1e-3, 1.0, 1.0 + 0.3 * np.sin(50.0 * np.log(d)))
    fit = best_window_fit(d, r, [(1e-2, 1e-1), (1e-4, 1e-3)])
    assert fit.window == (1e-4, 1e-3), f"picked window {fit.window}"
    assert fit.exponent == pytest.approx(0.5, abs=1e-8)
    with pytest.raises(WindowError):
        best_window_fit(d, r, [(2.0, 3.0)])


def test_window_families():
    """Tests decade and dyadic window generators"""
    windows = decade_windows(1e-3, 1.0)
    assert windows[0] == (0.1, 1.0)
    assert all(lo >= 1e-3 * (1 - 1e-12) and hi <= 1.0 for lo, hi in windows)
    assert len(windows) >= 4, f"only {len(windows)} windows"
    assert dyadic_windows(4, 6) == [(1 / 16, 1.0), (1 / 32, 0.5), (1 / 64, 0.25)]


def test_local_intercept_recovers_linear_coefficient():
    """Tests the boundary intercept on an exact linear ratio"""
    x = np.linspace(1e-6, 0.5, 5000)
    intercept, window, n = local_intercept(x, 1.5 + 2.0 * x)
    assert intercept == pytest.approx(1.5, abs=1e-10)
    assert n >= 16 and window[1] <= 0.25


def test_published_exponents():
    """Tests the published constants and B*"""
    e = LocalExponents.published()
    assert (e.alpha_prime, e.alpha, e.b_prime, e.b) == (1.113, 0.4603, 0.3095, 0.2856)
    assert e.b_star == 0.3095, "B* is the larger cusp exponent"
    with pytest.raises(InvalidParameterError):
        LocalExponents.checked(alpha_prime=1.1, alpha=1.2, b_prime=0.3, b=0.3)


def test_exponent_recovery_on_analytic_map(published_map):
    """Tests that fitted exponents match the analytic map within ±0.02"""
    x, y = _geometric_samples(published_map)
    exps, report = fit_local_exponents(x, y, published_map.x0)
    truth = published_map.exponents
    for name in ("alpha_prime", "alpha", "b_prime", "b"):
        got, want = getattr(exps, name), getattr(truth, name)
        assert got == pytest.approx(want, abs=0.02), f"{name}: fitted {got}, true {want}"
    assert exps.a_prime == pytest.approx(truth.a_prime, rel=0.02)
    assert exps.a == pytest.approx(truth.a, rel=0.02)
    assert set(report) >= {"alpha_prime", "alpha", "b_prime", "b"}


def test_exponent_fit_needs_boundary_points():
    """Tests that missing boundary samples make the fit fail"""
    x = np.array([0.2, 0.3, 0.7, 0.8])
    with pytest.raises(FitFailureError):
        fit_local_exponents(x, x, 0.5)
