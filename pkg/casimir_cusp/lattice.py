"""
Preimage Lattice
Preimages of the cusp (a_p, a′_p, b_p, b′_p) and the expansion conditions of the induced map
"""

import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.optimize import minimize_scalar

from casimir_cusp.cusp_map import Branch, CuspMap
from casimir_cusp.errors import DepthError, LatticeError, PreconditionError
from casimir_cusp.fitting import linear_fit
from casimir_cusp.logging_utils import get_logger

logger = get_logger(__name__)

MIN_DEPTH = 3
RELATION_TOL = 1e-9


@dataclass(frozen=True)
class PreimageLattice:
    """
    a[p] = a_p and a_prime[p] = a′_p for p = 0..P; b[p-1] = b_p and b_prime[p-1] = b′_p for p = 1..P
    """

    x0: float
    a: np.ndarray
    a_prime: np.ndarray
    b: np.ndarray
    b_prime: np.ndarray

    @property
    def depth(self):
        return len(self.a) - 1

    def b_at(self, p):
        return float(self.b[p - 1])

    def b_prime_at(self, p):
        return float(self.b_prime[p - 1])

    def to_frame(self):
        return pd.DataFrame(
            {
                "p": np.arange(self.depth + 1),
                "a": self.a,
                "a_prime": self.a_prime,
                "b": np.r_[np.nan, self.b],
                "b_prime": np.r_[np.nan, self.b_prime],
            }
        )

    def endpoints(self):
        """Every lattice point together with x0, sorted"""
        return np.sort(np.r_[self.a, self.a_prime, self.b, self.b_prime, self.x0])

    def asymptotics(self, p_min=None, p_max=None):
        """
        Tail rates of the four families

        Returns:
            dict: ratio_a_prime (a′_p/a′_{p+1}), ratio_a ((1-a_p)/(1-a_{p+1})) and the log-spacing
            slopes of x0 - b′_p and b_p - x0 against p
        """
        p_max = self.depth if p_max is None else p_max
        p_min = max(1, p_max // 2) if p_min is None else p_min
        idx = np.arange(p_min, p_max)
        ratio_a_prime = self.a_prime[idx] / self.a_prime[idx + 1]
        ratio_a = (1.0 - self.a[idx]) / (1.0 - self.a[idx + 1])
        ps = np.arange(p_min, p_max + 1)
        slope_left, _, _ = linear_fit(ps, np.log(self.x0 - self.b_prime[ps - 1]))
        slope_right, _, _ = linear_fit(ps, np.log(self.b[ps - 1] - self.x0))
        return {
            "ratio_a_prime": float(np.mean(ratio_a_prime)),
            "ratio_a": float(np.mean(ratio_a)),
            "slope_b_prime": slope_left,
            "slope_b": slope_right,
            "window": [int(p_min), int(p_max)],
        }


def build_lattice(cmap: CuspMap, depth):
    """
    Builds the preimage families by repeated branch inversion

    Args:
        cmap (CuspMap): the map
        depth (int): P ≥ 3

    Returns:
        PreimageLattice
    """
    if depth < MIN_DEPTH:
        raise PreconditionError(f"lattice depth must be ≥ {MIN_DEPTH}, got {depth}")
    x0 = cmap.x0
    a = np.empty(depth + 1)
    a_prime = np.empty(depth + 1)
    a[0] = cmap.invert_branch(Branch.RIGHT, x0)
    a_prime[0] = cmap.invert_branch(Branch.LEFT, x0)
    for p in range(1, depth + 1):
        a_prime[p] = cmap.invert_branch(Branch.LEFT, a_prime[p - 1])
        a[p] = cmap.invert_branch(Branch.RIGHT, a_prime[p - 1])
    b = np.asarray(cmap.invert_branch(Branch.RIGHT, a[:depth]))
    b_prime = np.asarray(cmap.invert_branch(Branch.LEFT, a[:depth]))

    lattice = PreimageLattice(x0=x0, a=a, a_prime=a_prime, b=b, b_prime=b_prime)
    _validate(cmap, lattice)
    logger.info({"event": "lattice_built", "depth": depth, "a0": a[0], "a0_prime": a_prime[0]})
    return lattice


def _validate(cmap, lat):
    x0 = lat.x0
    problems = []
    if not (np.all(np.diff(lat.a_prime) < 0) and lat.a_prime[-1] > 0):
        problems.append("a′_p not strictly decreasing in (0, x0)")
    if not (np.all(np.diff(lat.a) > 0) and lat.a[-1] < 1):
        problems.append("a_p not strictly increasing in (x0, 1)")
    if not (np.all(np.diff(lat.b) < 0) and lat.b[-1] > x0 and lat.b[0] < lat.a[0]):
        problems.append("b_p not strictly decreasing in (x0, a0)")
    if not (np.all(np.diff(lat.b_prime) > 0) and lat.b_prime[-1] < x0):
        problems.append("b′_p not strictly increasing towards x0")
    if not lat.b_prime[0] > lat.a_prime[0]:
        problems.append("b′_1 must lie right of a′_0")
    if problems:
        raise LatticeError("; ".join(problems))

    checks = {
        "T(a0)": (np.atleast_1d(lat.a[0]), x0),
        "T(a0′)": (np.atleast_1d(lat.a_prime[0]), x0),
        "T(a′_p)": (lat.a_prime[1:], lat.a_prime[:-1]),
        "T(a_p)": (lat.a[1:], lat.a_prime[:-1]),
        "T(b_p)": (lat.b, lat.a[:-1]),
        "T(b′_p)": (lat.b_prime, lat.a[:-1]),
    }
    eps = np.finfo(float).eps
    for name, (points, want) in checks.items():
        err = np.abs(cmap.eval(points) - want)
        # one ulp of the preimage moves T by |DT| ulps
        allowed = RELATION_TOL + 8.0 * eps * np.abs(cmap.deriv(points))
        if np.any(err > allowed):
            raise LatticeError(f"defining relation {name} off by {float(np.max(err)):.3e}")


def min_abs_derivative(cmap: CuspMap, lattice: PreimageLattice = None):
    """d_(1,0) = inf of |DT| over (b1, a0): bounded Brent plus both endpoints"""
    lattice = lattice or build_lattice(cmap, MIN_DEPTH)
    lo, hi = lattice.b_at(1), float(lattice.a[0])
    res = minimize_scalar(
        lambda t: abs(cmap.deriv(t)), bounds=(lo, hi), method="bounded", options={"xatol": 1e-8}
    )
    return float(min(res.fun, abs(cmap.deriv(lo)), abs(cmap.deriv(hi))))


def p_star(alpha_double_prime, alpha, alpha_prime):
    return int(math.floor(1.0 + math.log(alpha_double_prime / alpha) / math.log(alpha_prime)))


@dataclass
class Lemma1Report:
    d10: float
    check_i: bool
    check_ii: bool
    check_iii: bool
    alpha_double_prime: float
    p_star: int
    products: list = field(default_factory=list)

    @property
    def passed(self):
        return self.check_i and self.check_ii and self.check_iii

    def to_dict(self):
        return {
            "d10": self.d10,
            "check_i": self.check_i,
            "check_ii": self.check_ii,
            "check_iii": self.check_iii,
            "alpha_double_prime": self.alpha_double_prime,
            "p_star": self.p_star,
            "products": self.products,
            "passed": self.passed,
        }


def check_lemma1(cmap: CuspMap, alpha_double_prime=1.01, lattice: PreimageLattice = None):
    """
    Verifies the three expansion conditions of the induced map

    (i) d_(1,0) > 1; (ii) |DT(b1)| ≥ DT(a′_0); (iii) |DT(a_{p-1})|·DT(a′_{p-2})···DT(a′_0) > α″
    for every p ≤ p*.
    """
    exps = cmap.exponents
    if exps is None:
        raise PreconditionError("check_lemma1 needs the map's local exponents")
    if not alpha_double_prime > 1.0:
        raise PreconditionError(f"α″ must exceed 1, got {alpha_double_prime}")
    ps = p_star(alpha_double_prime, exps.alpha, exps.alpha_prime)
    if lattice is None:
        lattice = build_lattice(cmap, max(ps, MIN_DEPTH))
    if lattice.depth < ps:
        raise DepthError(f"lattice depth {lattice.depth} is shallower than p* = {ps}")

    d10 = min_abs_derivative(cmap, lattice)
    if alpha_double_prime > min(d10, exps.alpha_prime):
        raise PreconditionError(
            f"α″ = {alpha_double_prime} exceeds min(d_(1,0), α′) = {min(d10, exps.alpha_prime):.6g}"
        )

    check_ii = abs(cmap.deriv(lattice.b_at(1))) >= cmap.deriv(float(lattice.a_prime[0]))
    products = []
    for p in range(1, ps + 1):
        prod = abs(cmap.deriv(float(lattice.a[p - 1])))
        if p >= 2:
            prod *= float(np.prod(cmap.deriv(lattice.a_prime[: p - 1])))
        products.append(prod)
    report = Lemma1Report(
        d10=d10,
        check_i=d10 > 1.0,
        check_ii=bool(check_ii),
        check_iii=all(v > alpha_double_prime for v in products),
        alpha_double_prime=alpha_double_prime,
        p_star=ps,
        products=products,
    )
    logger.info({"event": "lemma1_checked", **report.to_dict()})
    return report


def preimage_signature_convergence(cmap: CuspMap, other: CuspMap, depth=8):
    """Distances between the lattices of two maps, one row per p"""
    lat = build_lattice(cmap, depth)
    lat_other = build_lattice(other, depth)
    frame = pd.DataFrame(
        {
            "p": np.arange(1, depth + 1),
            "a": np.abs(lat.a[1:] - lat_other.a[1:]),
            "a_prime": np.abs(lat.a_prime[1:] - lat_other.a_prime[1:]),
            "b": np.abs(lat.b - lat_other.b),
            "b_prime": np.abs(lat.b_prime - lat_other.b_prime),
        }
    )
    return frame
