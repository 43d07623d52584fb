"""
Density Tests
Invariant density estimators, transfer operator checks and the ansatz fit
"""

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.special import iv

from casimir_cusp.density import (
    DensityEstimate,
    FitResult,
    Grid,
    boundary_exponent,
    constants_relation,
    cusp_continuity,
    density_argmax,
    fit_ansatz,
    fixed_point_residual,
    histogram_density,
    l1_distance,
    lipschitz_off_cusp,
    pf_iterate,
    resample,
    sample_density,
    ulam_density,
)
from casimir_cusp.errors import FitError, GridError, PreconditionError
from casimir_cusp.exponents import LocalExponents
from casimir_cusp.lattice import build_lattice
from casimir_cusp.special import ansatz_density, ansatz_normalizer, bessel_iv

GAMMA, DELTA = 4.26, 0.6


@pytest.fixture(scope="module")
def ansatz_4096():
    """The density ansatz sampled at the centers of 2^12 bins"""
    grid = Grid(4096)
    return DensityEstimate(grid, ansatz_density(grid.centers, GAMMA, DELTA), "ansatz")


@pytest.fixture(scope="module")
def ansatz_512():
    grid = Grid(512)
    return DensityEstimate.normalized(grid, ansatz_density(grid.centers, GAMMA, DELTA), "ansatz")


def test_grid_must_be_power_of_two():
    """Tests grid size validation"""
    with pytest.raises(GridError):
        Grid(500)
    with pytest.raises(GridError):
        Grid(256)
    assert Grid(1024).width == pytest.approx(1.0 / 1024)


def test_density_values_validated():
    """Tests shape and sign checks on density values"""
    grid = Grid(512)
    with pytest.raises(GridError):
        DensityEstimate(grid, np.ones(100), "bad")
    values = np.ones(512)
    values[3] = -1.0
    with pytest.raises(PreconditionError):
        DensityEstimate(grid, values, "bad")


def test_ulam_full_tent_is_uniform(tent):
    """Tests that the doubly stochastic tent Ulam matrix gives the uniform density"""
    est = ulam_density(tent, Grid(512), mc_per_bin=64)
    assert np.allclose(est.values, 1.0, atol=1e-10), "tent density should be uniform"
    assert est.diagnostics["eigenvalue"] == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(PreconditionError):
        ulam_density(tent, Grid(512), mc_per_bin=16)


def test_histogram_golden_tent(golden_tent, uniform_512):
    """Tests the orbit histogram of the golden tent against the uniform density"""
    est = histogram_density(golden_tent, 1_000_000, Grid(512), seed=11)
    assert est.integral == pytest.approx(1.0)
    assert est.count >= 1_000_000
    assert l1_distance(est, uniform_512) < 0.05


def test_histogram_needs_enough_iterations(golden_tent):
    """Tests the minimum orbit length"""
    with pytest.raises(PreconditionError):
        histogram_density(golden_tent, 1000, Grid(512))


def test_transfer_operator_fixes_uniform(golden_tent, uniform_512):
    """Tests that the golden tent transfer operator leaves the uniform density fixed"""
    assert fixed_point_residual(golden_tent, uniform_512) < 1e-6
    est = pf_iterate(golden_tent, uniform_512, n_steps=50)
    assert np.allclose(est.values, 1.0, atol=1e-6)


def test_pf_needs_normalized_start(golden_tent):
    """Tests that PF iteration rejects an unnormalized start"""
    grid = Grid(512)
    with pytest.raises(PreconditionError):
        pf_iterate(golden_tent, DensityEstimate(grid, np.full(512, 2.0), "twice"))


def test_pf_agrees_with_ulam(published_map, uniform_512):
    """Tests that two estimators of the analytic map density agree"""
    ulam = ulam_density(published_map, Grid(512), mc_per_bin=64)
    pf = pf_iterate(published_map, uniform_512, n_steps=1000)
    gap = l1_distance(ulam, pf)
    assert gap < 0.05, f"PF and Ulam differ by {gap}"
    assert fixed_point_residual(published_map, pf) < 1e-3


def test_cusp_continuity_golden_tent(golden_tent, uniform_512):
    """Tests the cusp relation on the uniform tent density"""
    lhs, rhs = cusp_continuity(golden_tent, uniform_512, build_lattice(golden_tent, 3))
    assert lhs == pytest.approx(1.0)
    assert rhs == pytest.approx(1.0)


def test_bessel_series_matches_scipy():
    """Tests the ascending series against scipy.special.iv"""
    for nu in (0.5, 1.1, 3.7):
        for z in (0.1, 2.13, 10.0, 50.0):
            assert bessel_iv(nu, z) == pytest.approx(float(iv(nu, z)), rel=1e-10), f"I_{nu}({z})"
    with pytest.raises(ValueError):
        bessel_iv(1.0, 0.0)


def test_ansatz_normalizer_by_quadrature():
    """Tests that the closed-form normalizer integrates the ansatz to one"""
    total, _ = quad(lambda x: float(ansatz_density(x, GAMMA, DELTA)), 0.0, 1.0, limit=200)
    assert total == pytest.approx(1.0, abs=1e-8)
    assert ansatz_normalizer(GAMMA, DELTA) > 0


def test_boundary_exponents_of_ansatz(ansatz_4096):
    """Tests that both boundary exponents equal δ"""
    assert boundary_exponent(ansatz_4096, "zero") == pytest.approx(DELTA, abs=0.05)
    assert boundary_exponent(ansatz_4096, "one") == pytest.approx(DELTA, abs=0.05)


def test_boundary_exponent_needs_fine_grid(uniform_512):
    """Tests the minimum grid for boundary fits"""
    with pytest.raises(PreconditionError):
        boundary_exponent(uniform_512, "zero")


def test_fit_ansatz_recovers_parameters(ansatz_512):
    """Tests ansatz recovery from exact samples"""
    fit = fit_ansatz(ansatz_512)
    assert fit.gamma == pytest.approx(GAMMA, rel=1e-3), f"γ = {fit.gamma}"
    assert fit.delta == pytest.approx(DELTA, rel=1e-3), f"δ = {fit.delta}"
    assert fit.residual < 1e-2
    assert fit.normalizer == pytest.approx(ansatz_normalizer(fit.gamma, fit.delta))


def test_fit_ansatz_scale_invariant(ansatz_512):
    """Tests that scaling the estimate leaves the fit unchanged"""
    scaled = DensityEstimate(ansatz_512.grid, 3.0 * ansatz_512.values, "scaled")
    a, b = fit_ansatz(ansatz_512), fit_ansatz(scaled)
    assert b.gamma == pytest.approx(a.gamma, rel=1e-6)
    assert b.delta == pytest.approx(a.delta, rel=1e-6)


def test_fit_ansatz_without_starts(ansatz_512):
    """Tests that a fit with no converged start raises FitError"""
    with pytest.raises(FitError):
        fit_ansatz(ansatz_512, starts=[])


def test_constants_relation_published():
    """Tests the boundary constants relation at γ = 4.26"""
    fit = FitResult(gamma=4.26, delta=1.0, normalizer=1.0, residual=0.0)
    value = constants_relation(fit, LocalExponents.published())
    assert value == pytest.approx(0.8806, abs=1e-3)


def test_l1_distance_example(uniform_512):
    """Tests ‖ρ - 1‖₁ = 1 for ρ = 2 on [0, ½)"""
    grid = Grid(512)
    half = DensityEstimate(grid, np.r_[np.full(256, 2.0), np.zeros(256)], "half")
    assert l1_distance(half, uniform_512) == pytest.approx(1.0)
    assert l1_distance(uniform_512, uniform_512) == 0.0


def test_resample_preserves_integral(ansatz_4096):
    """Tests bin-averaging to a coarser grid"""
    coarse = resample(ansatz_4096, 512)
    assert coarse.grid.n_bins == 512
    assert coarse.integral == pytest.approx(ansatz_4096.integral)
    with pytest.raises(GridError):
        resample(ansatz_4096, 3072)


def test_argmax_and_lipschitz(uniform_512, ansatz_512):
    """Tests the density peak and the off-cusp slope bound"""
    assert lipschitz_off_cusp(uniform_512, 0.5) == 0.0
    peak = density_argmax(ansatz_512)
    expected = 0.5 * (1.0 + 2.0 * DELTA / GAMMA - np.sqrt(1.0 + 4.0 * DELTA**2 / GAMMA**2))
    assert peak == pytest.approx(expected, abs=2.0 / 512)


def test_sample_density_and_frame_round_trip():
    """Tests sample histograms and the density CSV frame"""
    samples = np.random.default_rng(5).uniform(0.0, 1.0, 10_000)
    est = sample_density(samples, Grid(512))
    assert est.integral == pytest.approx(1.0)
    assert est.count == 10_000
    again = DensityEstimate.from_frame(est.to_frame())
    assert np.array_equal(again.values, est.values)
    assert again.method == "histogram"
