"""
Inducing Scheme Tests
Cylinders, first returns, symbolic coding, return times and density reconstruction
"""

import math

import numpy as np
import pandas as pd
import pytest

from casimir_cusp.density import DensityEstimate, Grid, histogram_density, l1_distance
from casimir_cusp.errors import (
    CodingAbortError,
    DepthError,
    NonReturningError,
    PreconditionError,
)
from casimir_cusp.inducing import (
    build_cylinders,
    encode,
    first_return_map,
    grammar_violations,
    induced_density,
    induced_expansion,
    kac_check,
    make_domain,
    pianigiani_reconstruct,
    return_constant,
    return_time_stats,
    return_times,
    symbol_of,
    tail_fit,
    total_variation,
    tower_measures,
)
from casimir_cusp.lattice import build_lattice


GOLDEN = 0.6180339887498949
GOLDEN_KAC = 1.0 / (1.0 - GOLDEN)


@pytest.fixture(scope="module")
def lattice(published_map):
    return build_lattice(published_map, 12)


@pytest.fixture(scope="module")
def golden_lattice(golden_tent):
    return build_lattice(golden_tent, 40)


@pytest.fixture(scope="module")
def uniform_on_i(golden_lattice):
    """Induced density of the golden tent: uniform on I = (a′0, a0)"""
    grid = Grid(4096)
    x = grid.centers
    inside = (x > golden_lattice.a_prime[0]) & (x < golden_lattice.a[0])
    return DensityEstimate.normalized(grid, inside.astype(float), "induced_exact")


def test_grammar_violations():
    """Tests admissible and forbidden symbol transitions"""
    assert grammar_violations([3, -2, -1, 0, 1, 0]) == 0
    assert grammar_violations([3, -1]) == 1
    assert grammar_violations([-2, 0]) == 1, "-2 must be followed by -1"
    assert grammar_violations([0, -1]) == 1, "0 cannot be followed by a negative symbol"
    assert grammar_violations([5]) == 0


def test_symbol_of(published_map, lattice):
    """Tests the coding intervals around I"""
    a, ap = lattice.a, lattice.a_prime
    assert symbol_of(0.45, lattice, 0.5) == 0
    assert symbol_of(0.5 * (a[0] + a[1]), lattice, 0.5) == 1
    assert symbol_of(0.5 * (a[2] + a[3]), lattice, 0.5) == 3
    assert symbol_of(0.5 * (ap[0] + ap[1]), lattice, 0.5) == -1
    with pytest.raises(CodingAbortError):
        symbol_of(0.5 + 1e-14, lattice, 0.5)
    with pytest.raises(CodingAbortError):
        symbol_of(1e-9, lattice, 0.5)


def test_cylinders_tile_the_domain(lattice):
    """Tests that cylinders are disjoint and cover I up to the central remainder"""
    part = build_cylinders(lattice, 10)
    assert len(part.cylinders) == 20
    covered = sum(c.right - c.left for c in part.cylinders)
    remainder = lattice.b_at(10) - lattice.b_prime_at(10)
    assert covered + remainder == pytest.approx(lattice.a[0] - lattice.a_prime[0], abs=1e-12)
    assert len(part.to_frame()) == 20
    with pytest.raises(DepthError):
        build_cylinders(lattice, 13)


def test_cylinder_return_times(published_map, lattice):
    """Tests that midpoints of Z_p return to I in exactly p steps"""
    part = build_cylinders(lattice, 8)
    domain = make_domain(published_map, "I", lattice)
    for c in part.cylinders:
        y, tau = first_return_map(published_map, domain, c.midpoint())
        assert tau == c.p, f"Z_{c.p} side {c.side} returned after {tau}"
        assert domain.contains(y)


def test_first_return_errors(published_map, lattice):
    """Tests the cap, membership and domain-kind checks"""
    domain = make_domain(published_map, "I", lattice)
    z3 = build_cylinders(lattice, 3).of(3)[0]
    with pytest.raises(NonReturningError):
        first_return_map(published_map, domain, z3.midpoint(), cap=1)
    with pytest.raises(PreconditionError):
        first_return_map(published_map, domain, 0.1)
    with pytest.raises(PreconditionError):
        make_domain(published_map, "rectangle", lattice, n=0)
    with pytest.raises(PreconditionError):
        make_domain(published_map, "disc", lattice)


def test_alternative_domains(published_map, lattice):
    """Tests the right half and rectangle inducing sets"""
    half = make_domain(published_map, "right_half")
    assert half.contains(0.75) and not half.contains(0.5) and not half.contains(0.25)
    rect = make_domain(published_map, "rectangle", lattice, n=2)
    assert rect.contains(0.5 * (lattice.a_prime[2] + lattice.a_prime[1]))
    assert rect.contains(0.5 * (lattice.a[2] + lattice.a[3]))
    assert not rect.contains(0.45)


def test_induced_map_is_expanding(published_map, lattice):
    """Tests |D(T^τ)| > 1 on every cylinder"""
    frame = induced_expansion(published_map, build_cylinders(lattice, 8), n_points=5, seed=1)
    assert len(frame) == 16 * 5
    assert frame["expansion"].min() > 1.0, f"weakest expansion {frame['expansion'].min()}"
    assert (frame["tau"] == frame["p"]).all(), "return time should equal the cylinder index"


def test_encode_golden_tent(golden_tent):
    """Tests that coded tent orbits respect the grammar"""
    code = encode(golden_tent, 0.3, 500)
    assert len(code) == 500
    assert code.violations() == 0
    assert (code.symbols == 0).any(), "the orbit should visit I"


def test_encode_analytic_map(published_map):
    """Tests that a coded orbit of the analytic map respects the grammar"""
    code = encode(published_map, 0.3, 100)
    assert code.violations() == 0


def test_kac_on_golden_tent(golden_tent, golden_lattice):
    """Tests the mean return time to I against 1/μ(I)"""
    taus = return_times(golden_tent, 20_000, "I", seed=3, lattice=golden_lattice)
    assert taus.size == 20_000
    assert taus.min() >= 1
    assert taus.mean() == pytest.approx(GOLDEN_KAC, rel=0.02), f"mean return {taus.mean()}"


def test_return_time_tail(published_map):
    """Tests the tail slope of P(τ ≥ n) against -log α′/B′"""
    stats = return_time_stats(published_map, 20_000, "I", seed=0)
    expected = -math.log(1.113) / 0.3095
    assert -0.45 < stats.tail_slope < -0.28, f"slope {stats.tail_slope}, expected ≈ {expected}"
    assert stats.tail_rate == pytest.approx(math.exp(stats.tail_slope))
    assert stats.to_dict()["n_samples"] == 20_000


def test_return_time_sample_minimum(published_map):
    """Tests the minimum sample count"""
    with pytest.raises(PreconditionError):
        return_time_stats(published_map, 500)


def test_tail_fit_geometric_table():
    """Tests the tail slope of an exact geometric table"""
    n = np.arange(1, 16)
    table = pd.DataFrame({"n": n, "count": np.full(n.size, 100), "cumprob": 0.5 ** (n - 1)})
    slope, window = tail_fit(table)
    assert slope == pytest.approx(math.log(0.5))
    assert window == (2, 15)


def test_total_variation():
    """Tests TV distance on disjoint and identical tables"""
    a = pd.DataFrame({"n": [1, 2], "prob": [0.5, 0.5]})
    b = pd.DataFrame({"n": [3], "prob": [1.0]})
    assert total_variation(a, a) == 0.0
    assert total_variation(a, b) == pytest.approx(1.0)


def test_reconstruction_golden_tent(golden_tent, golden_lattice, uniform_on_i):
    """Tests that uniform induced density reconstructs the uniform global density"""
    rho = pianigiani_reconstruct(golden_tent, uniform_on_i, lattice=golden_lattice)
    uniform = DensityEstimate.normalized(Grid(4096), np.ones(4096), "uniform")
    assert l1_distance(rho, uniform) < 0.02
    assert rho.diagnostics["raw_integral"] == pytest.approx(1.0, abs=0.01)
    assert rho.diagnostics["c_r"] == pytest.approx(1.0 - GOLDEN, rel=0.01)


def test_tower_identities_golden_tent(golden_tent, golden_lattice, uniform_on_i):
    """Tests interval masses against the tower formula"""
    rho = pianigiani_reconstruct(golden_tent, uniform_on_i, lattice=golden_lattice)
    part = build_cylinders(golden_lattice)
    c_r, _, _ = return_constant(part, uniform_on_i)
    frame = tower_measures(rho, uniform_on_i, part, c_r, n_max=6)
    assert len(frame) == 6
    assert np.allclose(frame["mu_right"], frame["tower_right"], atol=2e-3)
    assert np.allclose(frame["mu_left"], frame["tower_left"], atol=2e-3)
    lhs, rhs = kac_check(part, uniform_on_i, rho)
    assert lhs == pytest.approx(GOLDEN_KAC, rel=0.01)
    assert rhs == pytest.approx(GOLDEN_KAC, rel=0.01)


def test_reconstruction_needs_normalized_input(golden_tent, golden_lattice, uniform_on_i):
    """Tests that an unnormalized induced density is rejected"""
    doubled = DensityEstimate(uniform_on_i.grid, 2.0 * uniform_on_i.values, "doubled")
    with pytest.raises(PreconditionError):
        pianigiani_reconstruct(golden_tent, doubled, lattice=golden_lattice)


def test_reconstruction_cusp_map(slow, published_map):
    """Tests reconstruction and tower identities on the published map against a long orbit"""
    grid = Grid(512)
    deep = build_lattice(published_map, 40)
    rho_hat = induced_density(published_map, grid, 4_000_000, seed=5, lattice=deep)
    rho = pianigiani_reconstruct(published_map, rho_hat, grid, deep)
    reference = histogram_density(published_map, 4_000_000, grid, seed=6)
    assert rho.diagnostics["series_depth"] > 2, "left-side chain series never iterated"
    distance = l1_distance(rho, reference)
    assert distance < 0.05, f"L1 to the orbit histogram {distance:.4f}"

    part = build_cylinders(deep)
    frame = tower_measures(rho, rho_hat, part, rho.diagnostics["c_r"], n_max=6)
    assert np.allclose(frame["mu_right"], frame["tower_right"], atol=5e-3)
    assert np.allclose(frame["mu_left"], frame["tower_left"], atol=5e-3)
    lhs, rhs = kac_check(part, rho_hat, rho)
    assert lhs == pytest.approx(rhs, rel=0.02), f"Kac sum {lhs} vs 1/μ(I) {rhs}"
