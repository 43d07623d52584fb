"""
Integrator Tests
Dormand-Prince stepping, dense output and trajectory handling
"""

import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from casimir_cusp.errors import InvalidInputError, PreconditionError
from casimir_cusp.flow import (
    NO_PERTURBATION,
    FlowParams,
    apply_involution,
    casimir,
    critical_points,
    hamiltonian,
    make_rhs,
)
from casimir_cusp.integrator import (
    DormandPrince54,
    Trajectory,
    default_initial_condition,
    integrate,
    integrate_ensemble,
)


@pytest.fixture
def params():
    return FlowParams.classical()


def test_linear_decay_accuracy():
    """Tests the stepper on a decoupled linear system with known solution"""

    def rhs(u1, u2, u3):
        return (-u1, -2.0 * u2, 0.0)

    stepper = DormandPrince54(rhs, tol=1e-10)
    last = None
    for step in stepper.steps(0.0, (1.0, 1.0, 1.0), 2.0):
        last = step
    assert last.t1 == 2.0, f"integration stopped at {last.t1}"
    expected = (math.exp(-2.0), math.exp(-4.0), 1.0)
    assert np.allclose(last.y1, expected, atol=1e-8), f"got {last.y1}, expected {expected}"


def test_local_error_is_absolute(params):
    """Tests every accepted step against a tight reference solve over the same interval"""
    rhs = make_rhs(params, NO_PERTURBATION)
    tol = 1e-8
    stepper = DormandPrince54(rhs, tol=tol)
    worst = 0.0
    for step in stepper.steps(0.0, (10.0, 15.0, -5.0), 1.0):
        ref = solve_ivp(
            lambda t, u: rhs(*u),
            (step.t0, step.t1),
            step.y0,
            method="DOP853",
            rtol=1e-13,
            atol=1e-13,
        )
        worst = max(worst, float(np.max(np.abs(ref.y[:, -1] - np.asarray(step.y1)))))
    assert worst <= tol, f"local error {worst:.3e} above tol {tol:.0e}"


def test_tolerance_range_enforced():
    """Tests that tolerances outside (1e-14, 1e-3) are rejected"""
    rhs = lambda u1, u2, u3: (0.0, 0.0, 0.0)  # noqa: E731
    for tol in (1e-15, 1e-2):
        with pytest.raises(PreconditionError):
            DormandPrince54(rhs, tol=tol)


def test_equilibrium_stays_put(params):
    """Tests that an orbit started at c1 does not move"""
    _, c1, _ = critical_points(params)
    traj = integrate(params, NO_PERTURBATION, c1, 20.0, tol=1e-10)
    drift = np.max(np.abs(traj.y - c1))
    assert drift < 1e-8, f"orbit left c1 by {drift}"


def test_involution_symmetry_of_orbits(params):
    """Tests that the orbit of Ru0 is the R-image of the orbit of u0"""
    u0 = np.array([1.0, 1.0, -20.0])
    traj = integrate(params, NO_PERTURBATION, u0, 5.0, tol=1e-10)
    mirror = integrate(params, NO_PERTURBATION, apply_involution(u0), 5.0, tol=1e-10)
    assert np.array_equal(traj.t, mirror.t), "step sequences should coincide"
    reflected = np.column_stack([-mirror.y[:, 0], -mirror.y[:, 1], mirror.y[:, 2]])
    assert np.max(np.abs(reflected - traj.y)) < 1e-9, "R-equivariance broken along the orbit"


def test_conservative_variant_preserves_first_integrals(params):
    """Tests that C and H are conserved by the divergence-free part"""
    u0 = np.array([1.0, 1.0, -20.0])
    t_end = 5.0
    traj = integrate(params, NO_PERTURBATION, u0, t_end, tol=1e-12, conservative=True)
    c_drift = abs(casimir(traj.y[-1]) - casimir(u0)) / casimir(u0) / t_end
    h_drift = abs(hamiltonian(params, traj.y[-1]) - hamiltonian(params, u0))
    h_drift /= abs(hamiltonian(params, u0)) * t_end
    assert c_drift < 1e-8, f"Casimir drift {c_drift} per unit time"
    assert h_drift < 1e-8, f"Hamiltonian drift {h_drift} per unit time"


def test_dense_output_hits_step_endpoints(params):
    """Tests that interpolation reproduces the accepted states"""
    traj = integrate(params, NO_PERTURBATION, (1.0, 1.0, -20.0), 2.0, tol=1e-9)
    for i in (0, len(traj.t) // 2, len(traj.t) - 1):
        assert np.allclose(traj.interpolate(traj.t[i]), traj.y[i], atol=1e-12)
    with pytest.raises(PreconditionError):
        traj.interpolate(3.0)


def test_frame_round_trip(params):
    """Tests rebuilding a trajectory from its CSV frame"""
    traj = integrate(params, NO_PERTURBATION, (1.0, 1.0, -20.0), 1.0, tol=1e-9)
    again = Trajectory.from_frame(traj.to_frame(), params)
    assert np.array_equal(again.t, traj.t)
    assert np.allclose(again.f, traj.f, rtol=1e-12, atol=1e-12), "derivatives re-evaluated wrongly"


def test_invalid_inputs(params):
    """Tests initial-state and horizon validation"""
    with pytest.raises(InvalidInputError):
        integrate(params, NO_PERTURBATION, (1.0, float("inf"), 0.0), 1.0)
    with pytest.raises(PreconditionError):
        integrate(params, NO_PERTURBATION, (1.0, 1.0, -20.0), 0.0)


def test_seeded_initial_conditions():
    """Tests that seeded nudges are reproducible and small"""
    a = default_initial_condition(5)
    b = default_initial_condition(5)
    c = default_initial_condition(6)
    assert np.array_equal(a, b), "same seed should give the same state"
    assert not np.array_equal(a, c), "different seeds should differ"
    assert np.max(np.abs(a - np.array([1.0, 1.0, -20.0]))) < 1e-2
    assert np.array_equal(default_initial_condition(), np.array([1.0, 1.0, -20.0]))


def test_ensemble_matches_single_runs(params):
    """Tests that ensemble members equal individual integrations"""
    u0s = [default_initial_condition(s) for s in (1, 2)]
    runs = integrate_ensemble(params, NO_PERTURBATION, u0s, 1.0, tol=1e-9, n_jobs=1)
    for u0, traj in zip(u0s, runs):
        single = integrate(params, NO_PERTURBATION, u0, 1.0, tol=1e-9)
        assert np.array_equal(traj.y, single.y), "ensemble member differs from a single run"
