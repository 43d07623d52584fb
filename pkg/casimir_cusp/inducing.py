"""
Inducing Scheme
First-return dynamics on I = (a′0, a0) minus the cusp: cylinders of constant return time,
symbolic coding, return-time statistics and the reconstruction of the global invariant density
from the induced one
"""

import math
from dataclasses import dataclass, field
from typing import List

import numpy as np
import pandas as pd

from casimir_cusp.cusp_map import Branch, CuspMap
from casimir_cusp.density import (
    N_ORBITS,
    TRANSIENT_STEPS,
    DensityEstimate,
    Grid,
    jitter_stuck,
    orbit_counts,
)
from casimir_cusp.errors import (
    CodingAbortError,
    DepthError,
    NonReturningError,
    PartitionError,
    PreconditionError,
    TruncationError,
)
from casimir_cusp.fitting import linear_fit
from casimir_cusp.lattice import PreimageLattice, build_lattice
from casimir_cusp.logging_utils import get_logger
from casimir_cusp.section import count_distribution

logger = get_logger(__name__)

RETURN_CAP = 10_000
CUSP_GUARD = 1e-12
ENDPOINT_GUARD = 1e-12
MIN_SAMPLES = 10_000
STRIDE = 7
SERIES_RTOL = 1e-12
SERIES_CAP = 200
CODING_DEPTH = 60


@dataclass(frozen=True)
class Cylinder:
    p: int
    left: float
    right: float
    side: int

    def midpoint(self):
        return 0.5 * (self.left + self.right)


@dataclass
class CylinderPartition:
    """Z_p as two intervals each (side 1 left of x0, side 2 right of x0), p = 1..depth"""

    cylinders: List[Cylinder]
    depth: int
    lattice: PreimageLattice

    def of(self, p):
        return [c for c in self.cylinders if c.p == p]

    def to_frame(self):
        return pd.DataFrame(
            [{"p": c.p, "left": c.left, "right": c.right, "side": c.side} for c in self.cylinders]
        )

    def masses(self, rho_hat: DensityEstimate):
        """μ_I(Z_p) per p by quadrature of the induced density"""
        out = np.zeros(self.depth)
        for c in self.cylinders:
            out[c.p - 1] += rho_hat.mass(c.left, c.right)
        return out


def build_cylinders(lattice: PreimageLattice, depth=None):
    depth = lattice.depth if depth is None else depth
    if depth > lattice.depth:
        raise DepthError(f"partition depth {depth} exceeds lattice depth {lattice.depth}")
    a0, a0p = float(lattice.a[0]), float(lattice.a_prime[0])
    cylinders = [
        Cylinder(1, a0p, lattice.b_prime_at(1), 1),
        Cylinder(1, lattice.b_at(1), a0, 2),
    ]
    for p in range(2, depth + 1):
        cylinders.append(Cylinder(p, lattice.b_prime_at(p - 1), lattice.b_prime_at(p), 1))
        cylinders.append(Cylinder(p, lattice.b_at(p), lattice.b_at(p - 1), 2))

    ordered = sorted(cylinders, key=lambda c: c.left)
    for c in ordered:
        if not c.left < c.right:
            raise PartitionError(f"empty cylinder Z_{c.p} side {c.side}")
    for prev, nxt in zip(ordered, ordered[1:]):
        if prev.right > nxt.left:
            raise PartitionError(f"Z_{prev.p} and Z_{nxt.p} overlap")
    return CylinderPartition(cylinders=cylinders, depth=depth, lattice=lattice)


class InducingDomain:
    """I, (x0, 1) or the rectangle (a′_n, a′_{n-1}) ∪ (a_n, a_{n+1})"""

    def __init__(self, kind, intervals, x0):
        self.kind = kind
        self.intervals = intervals
        self.x0 = x0

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        inside = np.zeros(x.shape, dtype=bool)
        for lo, hi in self.intervals:
            inside |= (x > lo) & (x < hi)
        return inside & (x != self.x0)

    def __repr__(self):
        return f"InducingDomain({self.kind}, {self.intervals})"


def make_domain(cmap: CuspMap, kind="I", lattice: PreimageLattice = None, n=None):
    x0 = cmap.x0
    if kind == "right_half":
        return InducingDomain(kind, [(x0, 1.0)], x0)
    lattice = lattice or build_lattice(cmap, max(3, (n or 0) + 1))
    if kind == "I":
        return InducingDomain(kind, [(float(lattice.a_prime[0]), float(lattice.a[0]))], x0)
    if kind == "rectangle":
        if n is None or n < 1:
            raise PreconditionError("rectangle domain needs n ≥ 1")
        if lattice.depth < n + 1:
            raise DepthError(f"rectangle({n}) needs lattice depth {n + 1}")
        intervals = [
            (float(lattice.a_prime[n]), float(lattice.a_prime[n - 1])),
            (float(lattice.a[n]), float(lattice.a[n + 1])),
        ]
        return InducingDomain(f"rectangle({n})", intervals, x0)
    raise PreconditionError(f"unknown domain kind '{kind}'")


def first_return_map(cmap: CuspMap, domain: InducingDomain, x, cap=RETURN_CAP):
    """
    Iterates T from x until the orbit re-enters domain

    Returns:
        tuple: (image, return time)
    """
    if not domain.contains(x):
        raise PreconditionError(f"x = {x} is not in {domain}")
    y = cmap.eval(float(x))
    tau = 1
    while not domain.contains(y):
        if tau >= cap:
            raise NonReturningError(f"no return to {domain.kind} within {cap} iterations")
        y = cmap.eval(y)
        tau += 1
    return float(y), tau


def induced_expansion(cmap: CuspMap, partition: CylinderPartition, n_points=20, seed=0):
    """
    |D(T^τ)| at random points of every cylinder

    Returns:
        pd.DataFrame: p, side, x, tau, expansion
    """
    rng = np.random.default_rng(seed)
    domain = make_domain(cmap, "I", partition.lattice)
    rows = []
    for c in partition.cylinders:
        for x in rng.uniform(c.left, c.right, n_points):
            y, prod, tau = float(x), 1.0, 0
            while True:
                prod *= abs(cmap.deriv(y))
                y = cmap.eval(y)
                tau += 1
                if domain.contains(y) or tau >= RETURN_CAP:
                    break
            rows.append({"p": c.p, "side": c.side, "x": float(x), "tau": tau, "expansion": prod})
    return pd.DataFrame(rows)


@dataclass
class SymbolicCode:
    symbols: np.ndarray

    def __len__(self):
        return len(self.symbols)

    def violations(self):
        return grammar_violations(self.symbols)


def grammar_violations(symbols):
    """Transitions breaking n ⇒ -(n-1), -n ⇒ -(n-1), 0 ⇒ n ≥ 0"""
    s = np.asarray(symbols)
    if s.size < 2:
        return 0
    cur, nxt = s[:-1], s[1:]
    ok = np.where(cur > 0, nxt == -(cur - 1), np.where(cur < 0, nxt == cur + 1, nxt >= 0))
    return int((~ok).sum())


def symbol_of(y, lattice: PreimageLattice, x0):
    """0 on I, n on (a_{n-1}, a_n), -n on (a′_n, a′_{n-1})"""
    if abs(y - x0) < CUSP_GUARD:
        raise CodingAbortError(f"orbit within {CUSP_GUARD} of the cusp")
    a0p, a0 = lattice.a_prime[0], lattice.a[0]
    if a0p < y < a0:
        return 0
    if y >= a0:
        n = int(np.count_nonzero(lattice.a < y))
    else:
        n = -int(np.count_nonzero(lattice.a_prime > y))
    if abs(n) > lattice.depth:
        raise CodingAbortError(f"orbit point {y:.3e} lies beyond lattice depth {lattice.depth}")
    return n


def encode(cmap: CuspMap, x, length, lattice: PreimageLattice = None):
    """Symbol sequence of the orbit of x; raises on any grammar violation"""
    lattice = lattice or build_lattice(cmap, CODING_DEPTH)
    symbols = np.empty(length, dtype=int)
    y = float(x)
    for i in range(length):
        symbols[i] = symbol_of(y, lattice, cmap.x0)
        y = cmap.eval(y)
    bad = grammar_violations(symbols)
    if bad:
        raise CodingAbortError(f"{bad} grammar violations in the coded orbit")
    return SymbolicCode(symbols)


@dataclass
class ReturnTimeStats:
    table: pd.DataFrame
    tail_slope: float
    tail_rate: float
    n_samples: int
    set_kind: str
    fit_window: tuple = field(default=(0, 0))

    def to_dict(self):
        return {
            "tail_slope": self.tail_slope,
            "tail_rate": self.tail_rate,
            "n_samples": self.n_samples,
            "set": self.set_kind,
            "fit_window": list(self.fit_window),
        }


def tail_fit(table, min_count=10):
    """Slope of log P(τ ≥ n) against n from n = 2 to the last n with min_count samples"""
    usable = table[(table["n"] >= 2) & (table["count"] >= min_count) & (table["cumprob"] > 0)]
    if len(usable) < 3:
        usable = table[(table["n"] >= 1) & (table["cumprob"] > 0)]
    n = usable["n"].to_numpy(dtype=float)
    slope, _, _ = linear_fit(n, np.log(usable["cumprob"].to_numpy()))
    return slope, (int(n.min()), int(n.max()))


def return_times(
    cmap: CuspMap,
    n_samples,
    set_kind="I",
    seed=0,
    lattice: PreimageLattice = None,
    n_orbits=N_ORBITS,
    stride=STRIDE,
):
    """
    Return times sampled along lockstep ergodic orbits, every stride-th visit per orbit

    Visits closer than 1e-12 to a lattice point are never used as sample starts.
    """
    lattice = lattice or build_lattice(cmap, 40)
    domain = make_domain(cmap, set_kind, lattice)
    endpoints = lattice.endpoints()
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 1.0, n_orbits)
    for _ in range(TRANSIENT_STEPS):
        x, _ = jitter_stuck(cmap.eval(x), cmap.x0, rng)

    last_visit = np.full(n_orbits, -1, dtype=np.int64)
    pending = np.zeros(n_orbits, dtype=bool)
    visit_count = np.zeros(n_orbits, dtype=np.int64)
    taus = []
    step = 0
    while len(taus) < n_samples:
        step += 1
        x, restarted = jitter_stuck(cmap.eval(x), cmap.x0, rng)
        pending[restarted] = False
        last_visit[restarted] = -1
        inside = domain.contains(x)
        if not inside.any():
            continue
        idx = np.flatnonzero(inside)
        closing = idx[pending[idx]]
        taus.extend((step - last_visit[closing]).tolist())
        last_visit[idx] = step
        visit_count[idx] += 1
        pos = np.searchsorted(endpoints, x[idx])
        lo = endpoints[np.clip(pos - 1, 0, endpoints.size - 1)]
        hi = endpoints[np.clip(pos, 0, endpoints.size - 1)]
        clear = (np.abs(x[idx] - lo) > ENDPOINT_GUARD) & (np.abs(hi - x[idx]) > ENDPOINT_GUARD)
        pending[idx] = (visit_count[idx] % stride == 0) & clear
    return np.asarray(taus[:n_samples], dtype=int)


def return_time_stats(cmap: CuspMap, n_samples, set_kind="I", seed=0, lattice=None):
    if n_samples < MIN_SAMPLES:
        raise PreconditionError(f"n_samples must be ≥ {MIN_SAMPLES}, got {n_samples}")
    taus = return_times(cmap, n_samples, set_kind, seed, lattice)
    table = count_distribution(taus)
    slope, window = tail_fit(table)
    stats = ReturnTimeStats(
        table=table,
        tail_slope=slope,
        tail_rate=float(math.exp(slope)),
        n_samples=int(taus.size),
        set_kind=set_kind,
        fit_window=window,
    )
    logger.info({"event": "return_times", **stats.to_dict()})
    return stats


def total_variation(table_a, table_b):
    """TV distance between two n/prob tables"""
    merged = pd.merge(
        table_a[["n", "prob"]], table_b[["n", "prob"]], on="n", how="outer", suffixes=("_a", "_b")
    ).fillna(0.0)
    return float(0.5 * np.abs(merged["prob_a"] - merged["prob_b"]).sum())


def induced_density(cmap: CuspMap, grid: Grid, n_iters, seed=0, lattice=None):
    """Orbit histogram restricted to I, normalized to integrate to 1 on I"""
    lattice = lattice or build_lattice(cmap, 3)
    domain = make_domain(cmap, "I", lattice)
    counts, visits, restarts = orbit_counts(cmap, grid, n_iters, seed, keep=domain.contains)
    return DensityEstimate.normalized(
        grid, counts, "induced_histogram", visits, {"restarts": restarts, "seed": seed}
    )


def return_constant(partition: CylinderPartition, rho_hat: DensityEstimate):
    """
    C_r from 1 = C_r Σ_p p μ_I(Z_p)

    Mass of I beyond the partition depth is charged return time depth + 1.
    """
    masses = partition.masses(rho_hat)
    p = np.arange(1, partition.depth + 1)
    lat = partition.lattice
    remainder = max(
        0.0,
        float(rho_hat.mass(lat.b_prime_at(partition.depth), lat.b_at(partition.depth))),
    )
    total = float(np.sum(p * masses)) + (partition.depth + 1) * remainder
    return 1.0 / total, masses, remainder


def pianigiani_reconstruct(
    cmap: CuspMap, rho_hat: DensityEstimate, grid: Grid = None, lattice=None, depth=40
):
    """
    Global invariant density from the induced density on I

    On I the density is C_r·ρ̂; on (a0, 1) it is the sum over the two preimages in I; on
    (0, a′0) it is the series over inverse-branch chains through (a0, 1). The result is
    renormalized and the raw integral kept in diagnostics.
    """
    grid = grid or rho_hat.grid
    if rho_hat.grid.n_bins != grid.n_bins:
        raise PreconditionError("rho_hat must live on the reconstruction grid")
    if abs(rho_hat.integral - 1.0) > 1e-6:
        raise PreconditionError("rho_hat must be normalized on I")
    lattice = lattice or build_lattice(cmap, depth)
    partition = build_cylinders(lattice)
    c_r, _, remainder = return_constant(partition, rho_hat)

    a0, a0p = float(lattice.a[0]), float(lattice.a_prime[0])
    x = grid.centers
    rho = np.zeros(grid.n_bins)
    on_i = (x > a0p) & (x < a0)
    rho[on_i] = c_r * rho_hat.values[on_i]

    def pulled_back(z):
        """Σ over both branches of ρ̂(w)/|DT(w)| with T w = z"""
        total = np.zeros_like(z)
        for branch in Branch:
            w = cmap.invert_branch(branch, z)
            with np.errstate(divide="ignore"):
                total += rho_hat.at(w) / np.abs(cmap.deriv(w))
        return total

    right = x >= a0
    rho[right] = c_r * pulled_back(x[right])

    left = x <= a0p
    series_depth = 0
    if left.any():
        y = x[left]
        chain = np.ones_like(y)
        acc = np.zeros_like(y)
        for m in range(2, SERIES_CAP + 2):
            z = cmap.invert_branch(Branch.RIGHT, y)
            with np.errstate(divide="ignore"):
                term = pulled_back(z) / (np.abs(cmap.deriv(z)) * chain)
            acc += term
            series_depth = m
            if np.all(term <= SERIES_RTOL * np.maximum(acc, np.finfo(float).tiny)):
                break
            y_next = cmap.invert_branch(Branch.LEFT, y)
            chain = chain * cmap.deriv(y_next)
            y = y_next
        else:
            raise TruncationError(
                f"chain series not below {SERIES_RTOL} relative after {SERIES_CAP} terms"
            )
        rho[left] = c_r * acc

    raw = float(rho.sum() * grid.width)
    est = DensityEstimate.normalized(
        grid,
        rho,
        "reconstruction",
        rho_hat.count,
        {
            "c_r": c_r,
            "raw_integral": raw,
            "series_depth": series_depth,
            "beyond_depth_mass": remainder,
        },
    )
    logger.info(
        {
            "event": "reconstruction_done",
            "c_r": c_r,
            "raw_integral": raw,
            "series_depth": series_depth,
        }
    )
    return est


def tower_measures(rho: DensityEstimate, rho_hat: DensityEstimate, partition, c_r, n_max=6):
    """
    Tower identities against the global density

    μ(a_{n-1}, a_n) = C_r μ_I(Z_{n+1}) and μ(a′_n, a′_{n-1}) = C_r Σ_{p ≥ n+2} μ_I(Z_p)
    """
    lat = partition.lattice
    masses = partition.masses(rho_hat)
    rows = []
    for n in range(1, min(n_max, partition.depth - 1) + 1):
        rows.append(
            {
                "n": n,
                "mu_right": float(rho.mass(lat.a[n - 1], lat.a[n])),
                "tower_right": c_r * float(masses[n]),
                "mu_left": float(rho.mass(lat.a_prime[n], lat.a_prime[n - 1])),
                "tower_left": c_r * float(masses[n + 1 :].sum()),
            }
        )
    return pd.DataFrame(rows)


def kac_check(partition: CylinderPartition, rho_hat: DensityEstimate, rho: DensityEstimate):
    """(Σ_p p μ_I(Z_p), 1/μ(I))"""
    masses = partition.masses(rho_hat)
    p = np.arange(1, partition.depth + 1)
    lat = partition.lattice
    mu_i = float(rho.mass(lat.a_prime[0], lat.a[0]))
    return float(np.sum(p * masses)), 1.0 / mu_i
