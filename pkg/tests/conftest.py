"""
Shared Fixtures
Reference maps, densities and pair data used across the test modules
"""

import os

import numpy as np
import pytest

from casimir_cusp.cusp_map import build_analytic, skew_tent
from casimir_cusp.density import DensityEstimate, Grid
from casimir_cusp.exponents import LocalExponents
from casimir_cusp.section import NormalizedPairs

GOLDEN = 0.6180339887498949


@pytest.fixture(scope="session")
def published_map():
    """Analytic cusp map carrying the published local exponents"""
    return build_analytic(LocalExponents.published(), 0.5)


@pytest.fixture(scope="session")
def tent():
    return skew_tent(0.5)


@pytest.fixture(scope="session")
def golden_tent():
    """Skew tent with an irrational cusp, so float orbits never collapse onto 0"""
    return skew_tent(GOLDEN)


@pytest.fixture
def uniform_512():
    grid = Grid(512)
    return DensityEstimate.normalized(grid, np.ones(grid.n_bins), "uniform")


@pytest.fixture(scope="session")
def analytic_pairs(published_map):
    """40k uniform points paired with their images under the published map"""
    rng = np.random.default_rng(7)
    s = rng.uniform(0.0, 1.0, 40_000)
    return NormalizedPairs(s=s, s_next=published_map.eval(s))


@pytest.fixture
def slow():
    """Desk-scale runs are opt-in"""
    if os.getenv("CASIMIR_CUSP_SLOW") != "1":
        pytest.skip("set CASIMIR_CUSP_SLOW=1 to run desk-scale checks")
