"""
Lorenz Flow Core
Lorenz '63 field in original and shifted (rigid-body) coordinates, its energy-Casimir decomposition
and the quantities derived from it (Casimir, Hamiltonian, their rates, critical points)
"""

import math
from dataclasses import dataclass
from typing import Literal, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from casimir_cusp.errors import InvalidInputError
from casimir_cusp.logging_utils import get_logger

logger = get_logger(__name__)

TWO_PI = 2.0 * math.pi


class FlowParams(BaseModel):
    """Lorenz parameters (σ, ρ, β)"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    sigma: float = Field(10.0, gt=0, description="Prandtl number σ")
    rho: float = Field(28.0, gt=0, description="Rayleigh number ρ")
    beta: float = Field(8.0 / 3.0, gt=0, description="Geometric factor β")

    @classmethod
    def classical(cls):
        return cls(sigma=10.0, rho=28.0, beta=8.0 / 3.0)

    @property
    def shift(self):
        """ρ + σ, the vertical offset between original and shifted coordinates"""
        return self.rho + self.sigma


class PerturbationSpec(BaseModel):
    """Constant additive forcing on top of the shifted field"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["none", "axial_forcing", "planar_forcing"] = Field(
        "none", description="none | axial_forcing | planar_forcing"
    )
    epsilon: float = Field(0.0, ge=0, description="Forcing amplitude ε")
    theta: float = Field(0.0, ge=0, lt=TWO_PI, description="Planar forcing angle θ in radians")

    @field_validator("epsilon")
    @classmethod
    def _finite_epsilon(cls, value):
        if not math.isfinite(value):
            raise ValueError("epsilon must be finite")
        return value

    @classmethod
    def none(cls):
        return cls()

    @classmethod
    def axial(cls, epsilon):
        return cls(kind="axial_forcing", epsilon=epsilon)

    @classmethod
    def planar(cls, epsilon, theta_deg):
        return cls(kind="planar_forcing", epsilon=epsilon, theta=math.radians(theta_deg) % TWO_PI)

    def with_epsilon(self, epsilon):
        return self.model_copy(update={"epsilon": float(epsilon)})

    def forcing(self, p: FlowParams) -> Tuple[float, float, float]:
        """Additive term (g1, g2, g3) of the perturbed field"""
        if self.kind == "axial_forcing":
            return (0.0, 0.0, -self.epsilon * p.beta * p.shift)
        if self.kind == "planar_forcing":
            return (self.epsilon * math.cos(self.theta), self.epsilon * math.sin(self.theta), 0.0)
        return (0.0, 0.0, 0.0)

    @property
    def is_identity(self):
        return self.kind == "none" or self.epsilon == 0.0

    @property
    def preserves_involution(self):
        return self.kind != "planar_forcing" or self.epsilon == 0.0


NO_PERTURBATION = PerturbationSpec()


@dataclass(frozen=True)
class VectorFieldDecomposition:
    """Hamiltonian part v = {u, H} and gradient part w = Λu − f, field = v − w"""

    hamiltonian_part: np.ndarray
    gradient_part: np.ndarray

    @property
    def field(self):
        return self.hamiltonian_part - self.gradient_part


def as_state(u):
    """Validates and returns u as a float array of shape (3,)"""
    arr = np.asarray(u, dtype=float)
    if arr.shape != (3,):
        raise InvalidInputError(f"state must have 3 components, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"non-finite state {arr.tolist()}")
    return arr


def to_shifted(p: FlowParams, x):
    x = as_state(x)
    return np.array([x[0], x[1], x[2] - p.shift])


def to_original(p: FlowParams, u):
    u = as_state(u)
    return np.array([u[0], u[1], u[2] + p.shift])


def make_rhs(p: FlowParams, pert: PerturbationSpec = NO_PERTURBATION, conservative=False):
    """
    Builds the scalar right-hand side used by the integrator

    The closure works on plain floats; R-equivariance holds bit for bit because every
    term is a product or a sum of sign-symmetric operations.

    Args:
        p (FlowParams): Lorenz parameters
        pert (PerturbationSpec): additive forcing
        conservative (bool): return the divergence-free part v only

    Returns:
        callable: rhs(u1, u2, u3) -> (du1, du2, du3)
    """
    s = p.sigma
    b = p.beta
    bm = p.beta * p.shift
    if conservative:

        def rhs_v(u1, u2, u3):
            return (s * u2, -u1 * u3 - s * u1, u1 * u2)

        return rhs_v

    g1, g2, g3 = pert.forcing(p)

    def rhs(u1, u2, u3):
        return (
            s * (u2 - u1) + g1,
            -u1 * u3 - s * u1 - u2 + g2,
            u1 * u2 - b * u3 - bm + g3,
        )

    return rhs


def make_casimir_rate(p: FlowParams, pert: PerturbationSpec = NO_PERTURBATION):
    """Scalar dC/dt(u1, u2, u3) for event detection, matching casimir_rate"""
    if pert.is_identity:
        s, b, half, level = p.sigma, p.beta, 0.5 * p.shift, ellipsoid_level(p)

        def rate(u1, u2, u3):
            z = u3 + half
            return -2.0 * (s * u1 * u1 + u2 * u2 + b * z * z - level)

        return rate

    rhs = make_rhs(p, pert)

    def rate_forced(u1, u2, u3):
        f1, f2, f3 = rhs(u1, u2, u3)
        return 2.0 * (u1 * f1 + u2 * f2 + u3 * f3)

    return rate_forced


def shifted_field(p: FlowParams, pert: PerturbationSpec, u):
    """Shifted Lorenz field plus the perturbation's additive term"""
    u = as_state(u)
    return np.array(make_rhs(p, pert)(*u))


def original_field(p: FlowParams, pert: PerturbationSpec, x):
    """Lorenz field in the original coordinates (x3 not shifted)"""
    x1, x2, x3 = as_state(x)
    g1, g2, g3 = pert.forcing(p)
    return np.array(
        [
            p.sigma * (x2 - x1) + g1,
            x1 * (p.rho - x3) - x2 + g2,
            x1 * x2 - p.beta * x3 + g3,
        ]
    )


def conservative_field(p: FlowParams, u):
    """The Λ=0, f=0 variant: pure rigid-body motion, C and H are first integrals"""
    u = as_state(u)
    return np.array(make_rhs(p, conservative=True)(*u))


def field_jacobian(p: FlowParams, u):
    u1, u2, u3 = as_state(u)
    s, b = p.sigma, p.beta
    return np.array([[-s, s, 0.0], [-u3 - s, -1.0, -u1], [u2, u1, -b]])


def hamiltonian_jacobian(p: FlowParams, u):
    u1, u2, u3 = as_state(u)
    return np.array([[0.0, p.sigma, 0.0], [-u3 - p.sigma, 0.0, -u1], [u2, u1, 0.0]])


def hamiltonian_gradient(p: FlowParams, u):
    u = as_state(u)
    return np.array([2.0 * u[0], u[1], u[2] - p.sigma])


def decompose(p: FlowParams, u):
    """Splits the unperturbed field into v = ∇H × u and w = ∇K = Λu − f"""
    u = as_state(u)
    v = np.cross(hamiltonian_gradient(p, u), u)
    lam = np.array([p.sigma, 1.0, p.beta])
    f = np.array([0.0, 0.0, -p.beta * p.shift])
    return VectorFieldDecomposition(hamiltonian_part=v, gradient_part=lam * u - f)


def casimir(u):
    u = as_state(u)
    return float(u @ u)


def hamiltonian(p: FlowParams, u):
    u = as_state(u)
    return float(0.5 * (2.0 * u[0] ** 2 + u[1] ** 2 + u[2] ** 2) - p.sigma * u[2])


def dissipation_potential(p: FlowParams, u):
    """K(u) = ½ u·Λu − f·u"""
    u = as_state(u)
    quad = p.sigma * u[0] ** 2 + u[1] ** 2 + p.beta * u[2] ** 2
    return float(0.5 * quad + p.beta * p.shift * u[2])


def ellipsoid_energy(p: FlowParams, u):
    """E(u) = σu1² + u2² + β(u3 + (ρ+σ)/2)²"""
    u = as_state(u)
    z = u[2] + 0.5 * p.shift
    return float(p.sigma * u[0] ** 2 + u[1] ** 2 + p.beta * z * z)


def ellipsoid_level(p: FlowParams):
    return p.beta * p.shift**2 / 4.0


def casimir_rate(p: FlowParams, u, pert: PerturbationSpec = None):
    """dC/dt; closed form along the unperturbed flow, 2u·F along a perturbed one"""
    u = as_state(u)
    if pert is None or pert.is_identity:
        return float(-2.0 * (ellipsoid_energy(p, u) - ellipsoid_level(p)))
    return float(2.0 * u @ shifted_field(p, pert, u))


def casimir_rate2(p: FlowParams, u, pert: PerturbationSpec = None):
    """d²C/dt²; the quartic closed form when unperturbed, 2(F·F + u·JF) otherwise"""
    u = as_state(u)
    if pert is None or pert.is_identity:
        s, b, half = p.sigma, p.beta, 0.5 * p.shift
        z = u[2] + half
        k = s * (s - 1.0) + (b - 1.0) * z + half
        quartic = (
            s * s * u[0] ** 2
            + u[1] ** 2
            - k * u[0] * u[1]
            + b * b * z * z
            + b * b * half * z
        )
        return float(4.0 * quartic)
    return _casimir_rate2_general(p, pert, u)


def _casimir_rate2_general(p, pert, u):
    f = shifted_field(p, pert, u)
    return float(2.0 * (f @ f + u @ (field_jacobian(p, u) @ f)))


def quadratic_form_eigenvalues(p: FlowParams, z):
    """Eigenvalues (λ1 ≥ λ2) of the u1-u2 quadratic form of d²C/dt² at height z"""
    s, b = p.sigma, p.beta
    k = 0.5 * p.shift + s * (s - 1.0) + (b - 1.0) * z
    root = math.sqrt((s * s - 1.0) ** 2 + k * k)
    return 0.5 * (s * s + 1.0 + root), 0.5 * (s * s + 1.0 - root)


def apply_involution(u):
    u = as_state(u)
    return np.array([-u[0], -u[1], u[2]])


def critical_points(p: FlowParams):
    """Returns (c0, c1, c2) in shifted coordinates"""
    c0 = np.array([0.0, 0.0, -p.shift])
    if p.rho <= 1.0:
        return c0, None, None
    r = math.sqrt(p.beta * (p.rho - 1.0))
    c1 = np.array([r, r, -(p.sigma + 1.0)])
    return c0, c1, apply_involution(c1)


def ellipsoid_point(p: FlowParams, theta, phi):
    """Point of the ellipsoid where dC/dt vanishes, in spherical-like parameters"""
    k = ellipsoid_level(p)
    u1 = math.sqrt(k / p.sigma) * math.sin(theta) * math.cos(phi)
    u2 = math.sqrt(k) * math.sin(theta) * math.sin(phi)
    z = math.sqrt(k / p.beta) * math.cos(theta)
    return np.array([u1, u2, z - 0.5 * p.shift])


def report_casimir_bounds(p: FlowParams, c_values):
    """Logs the empirical sup of C next to the two candidate theoretical bounds"""
    c_sup = float(np.max(c_values)) if len(c_values) else float("nan")
    lam_min = min(p.sigma, 1.0, p.beta)
    f_norm = p.beta * p.shift
    bounds = {
        "event": "casimir_bound_check",
        "empirical_sup_c": c_sup,
        "rho_plus_sigma": p.shift,
        "f_norm_over_sqrt_lambda": f_norm / math.sqrt(lam_min),
    }
    logger.info(bounds)
    return bounds
