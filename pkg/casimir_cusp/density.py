"""
Invariant Density
Histogram, Ulam and Perron-Frobenius estimates of the invariant density of a cusp map, boundary
scaling, the Bessel-normalized ansatz fit and the checks built on them
"""

import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy import sparse
from scipy.optimize import minimize

from casimir_cusp.cusp_map import Branch, CuspMap
from casimir_cusp.errors import ConvergenceError, FitError, GridError, PreconditionError
from casimir_cusp.fitting import best_window_fit, dyadic_windows
from casimir_cusp.logging_utils import get_logger
from casimir_cusp.special import ansatz_density, ansatz_normalizer

logger = get_logger(__name__)

MIN_BINS = 2**9
MIN_ITERS = 100_000
MIN_MC = 64
N_ORBITS = 32
TRANSIENT_STEPS = 1000
GUARD = 1e-14
POWER_TOL = 1e-12
POWER_CAP = 10_000
PF_TOL = 1e-10
ANSATZ_STARTS = [(4.0, 2.0), (1.0, 1.0), (8.0, 3.0), (2.0, 0.5), (6.0, 2.5)]
ANSATZ_MAXITER = 500
ANSATZ_THRESHOLD = 1e-2


@dataclass(frozen=True)
class Grid:
    """n_bins uniform bins on [0, 1]; n_bins is a power of two ≥ 2^9"""

    n_bins: int

    def __post_init__(self):
        n = self.n_bins
        if n < MIN_BINS or n & (n - 1):
            raise GridError(f"n_bins must be a power of two ≥ {MIN_BINS}, got {n}")

    @property
    def width(self):
        return 1.0 / self.n_bins

    @property
    def edges(self):
        return np.linspace(0.0, 1.0, self.n_bins + 1)

    @property
    def centers(self):
        return (np.arange(self.n_bins) + 0.5) / self.n_bins

    def bin_of(self, x):
        return np.minimum((np.asarray(x) * self.n_bins).astype(int), self.n_bins - 1)


@dataclass
class DensityEstimate:
    grid: Grid
    values: np.ndarray
    method: str
    count: int = 0
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n_bins,):
            raise GridError(f"expected {self.grid.n_bins} values, got {self.values.shape}")
        if np.any(self.values < 0) or not np.all(np.isfinite(self.values)):
            raise PreconditionError("density values must be finite and non-negative")

    @classmethod
    def normalized(cls, grid, raw, method, count=0, diagnostics=None):
        raw = np.asarray(raw, dtype=float)
        total = raw.sum() * grid.width
        if not total > 0:
            raise PreconditionError("cannot normalize an all-zero density")
        return cls(grid, raw / total, method, count, dict(diagnostics or {}))

    @property
    def integral(self):
        return float(self.values.sum() * self.grid.width)

    def at(self, x):
        """Linear interpolation between bin centers"""
        return np.interp(x, self.grid.centers, self.values)

    def mass(self, lo, hi):
        """Measure of (lo, hi) under the piecewise-constant density"""
        edges = self.grid.edges
        cdf = np.r_[0.0, np.cumsum(self.values) * self.grid.width]
        return np.interp(hi, edges, cdf) - np.interp(lo, edges, cdf)

    def to_frame(self):
        return pd.DataFrame(
            {"bin_center": self.grid.centers, "value": self.values, "method": self.method}
        )

    @classmethod
    def from_frame(cls, df):
        grid = Grid(len(df))
        return cls(grid, df["value"].to_numpy(dtype=float), str(df["method"].iloc[0]))


def jitter_stuck(x, x0, rng):
    """Replaces orbit points stuck at the cusp or the fixed boundary by fresh uniforms"""
    bad = (np.abs(x - x0) < GUARD) | (x < GUARD) | (x > 1.0 - GUARD)
    if bad.any():
        x = x.copy()
        x[bad] = rng.uniform(0.0, 1.0, int(bad.sum()))
    return x, bad


def orbit_counts(cmap: CuspMap, grid: Grid, n_iters, seed, n_orbits=N_ORBITS, keep=None):
    """
    Bin counts along n_orbits orbits advanced in lockstep after a transient

    keep(x) -> bool mask restricts which visits are counted.

    Returns:
        tuple: (counts, visits, restarts)
    """
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 1.0, n_orbits)
    restarts = 0
    for _ in range(TRANSIENT_STEPS):
        x, bad = jitter_stuck(cmap.eval(x), cmap.x0, rng)
        restarts += int(bad.sum())
    steps = int(math.ceil(n_iters / n_orbits))
    counts = np.zeros(grid.n_bins, dtype=np.int64)
    visits = 0
    chunk = 1024
    done = 0
    while done < steps:
        n = min(chunk, steps - done)
        block = np.empty((n, n_orbits))
        for i in range(n):
            x, bad = jitter_stuck(cmap.eval(x), cmap.x0, rng)
            restarts += int(bad.sum())
            block[i] = x
        flat = block.ravel()
        if keep is not None:
            flat = flat[keep(flat)]
        counts += np.bincount(grid.bin_of(flat), minlength=grid.n_bins)
        visits += flat.size
        done += n
    if restarts:
        logger.info({"event": "orbit_restarts", "count": restarts})
    return counts, visits, restarts


def histogram_density(cmap: CuspMap, n_iters, grid: Grid, seed=0, n_orbits=N_ORBITS):
    """Birkhoff histogram over lockstep orbit segments"""
    if n_iters < MIN_ITERS:
        raise PreconditionError(f"n_iters must be ≥ {MIN_ITERS}, got {n_iters}")
    counts, visits, restarts = orbit_counts(cmap, grid, n_iters, seed, n_orbits)
    return DensityEstimate.normalized(
        grid, counts, "histogram", visits, {"restarts": restarts, "seed": seed}
    )


def sample_density(samples, grid: Grid, method="histogram"):
    """Normalized histogram of samples in [0, 1]"""
    samples = np.asarray(samples, dtype=float)
    counts = np.bincount(grid.bin_of(np.clip(samples, 0.0, 1.0)), minlength=grid.n_bins)
    return DensityEstimate.normalized(grid, counts, method, int(samples.size))


def _ulam_rows(cmap, grid, rows, mc_per_bin):
    offsets = (np.arange(mc_per_bin) + 0.5) / mc_per_bin
    x = ((rows[:, None] + offsets[None, :]) * grid.width).ravel()
    targets = grid.bin_of(cmap.eval(x))
    return np.repeat(rows, mc_per_bin), targets


def ulam_matrix(cmap: CuspMap, grid: Grid, mc_per_bin=MIN_MC, n_jobs=1):
    """Row-stochastic transition matrix from stratified samples in every bin"""
    if mc_per_bin < MIN_MC:
        raise PreconditionError(f"mc_per_bin must be ≥ {MIN_MC}")
    chunks = np.array_split(np.arange(grid.n_bins), max(1, n_jobs))
    parts = Parallel(n_jobs=n_jobs)(
        delayed(_ulam_rows)(cmap, grid, rows, mc_per_bin) for rows in chunks if rows.size
    )
    rows = np.concatenate([p[0] for p in parts])
    cols = np.concatenate([p[1] for p in parts])
    data = np.full(rows.size, 1.0 / mc_per_bin)
    return sparse.coo_matrix((data, (rows, cols)), shape=(grid.n_bins, grid.n_bins)).tocsr()


def ulam_density(cmap: CuspMap, grid: Grid, mc_per_bin=MIN_MC, n_jobs=1):
    """Leading left eigenvector of the Ulam matrix by power iteration"""
    matrix = ulam_matrix(cmap, grid, mc_per_bin, n_jobs)
    transposed = matrix.T.tocsr()
    pi = np.full(grid.n_bins, 1.0 / grid.n_bins)
    for it in range(1, POWER_CAP + 1):
        nxt = transposed @ pi
        eigenvalue = nxt.sum() / pi.sum()
        nxt /= nxt.sum()
        residual = float(np.abs(nxt - pi).sum())
        pi = nxt
        if residual < POWER_TOL:
            break
    else:
        raise ConvergenceError(f"power iteration stalled at residual {residual:.3e}")
    logger.info(
        {"event": "ulam_converged", "iterations": it, "eigenvalue": eigenvalue, "bins": grid.n_bins}
    )
    return DensityEstimate.normalized(
        grid,
        pi,
        "ulam",
        it,
        {"eigenvalue": float(eigenvalue), "mc_per_bin": mc_per_bin, "residual": residual},
    )


class TransferOperator:
    """Perron-Frobenius operator on bin-center nodes with precomputed inverse branches"""

    def __init__(self, cmap: CuspMap, grid: Grid):
        self.cmap = cmap
        self.grid = grid
        nodes = grid.centers
        self.pre = {}
        self.weight = {}
        with np.errstate(divide="ignore"):
            for branch in Branch:
                y = cmap.invert_branch(branch, nodes)
                self.pre[branch] = y
                self.weight[branch] = 1.0 / np.abs(cmap.deriv(y))
        finite = np.isfinite(self.weight[Branch.LEFT]) & np.isfinite(self.weight[Branch.RIGHT])
        self.excluded = np.flatnonzero(~finite)
        self.cusp_bin = int(grid.bin_of(cmap.x0))
        if self.excluded.size:
            logger.info({"event": "pf_nodes_excluded", "nodes": self.excluded.tolist()})

    def apply(self, values):
        centers = self.grid.centers
        out = np.zeros_like(values)
        for branch in Branch:
            w = np.where(np.isfinite(self.weight[branch]), self.weight[branch], 0.0)
            out += np.interp(self.pre[branch], centers, values) * w
        return self._fill(out)

    def _fill(self, out):
        bad = np.zeros(out.size, dtype=bool)
        bad[self.excluded] = True
        k = self.cusp_bin
        if 2 <= k < out.size - 2:
            # one-sided linear extrapolation from each side, averaged
            out[k] = max(0.0, 0.5 * ((2 * out[k - 1] - out[k - 2]) + (2 * out[k + 1] - out[k + 2])))
        if bad.any():
            good = np.flatnonzero(~bad)
            out[bad] = np.interp(np.flatnonzero(bad), good, out[good])
        return out


def pf_iterate(cmap: CuspMap, init: DensityEstimate, n_steps=1000, tol=PF_TOL):
    """Iterates the transfer operator from init, renormalizing every step"""
    if abs(init.integral - 1.0) > 1e-6:
        raise PreconditionError("initial density must be normalized")
    op = TransferOperator(cmap, init.grid)
    h = init.grid.width
    rho = init.values.copy()
    change = math.inf
    steps = 0
    for steps in range(1, n_steps + 1):
        nxt = op.apply(rho)
        nxt /= nxt.sum() * h
        change = float(np.abs(nxt - rho).sum() * h)
        rho = nxt
        if change < tol:
            break
    logger.info({"event": "pf_done", "steps": steps, "l1_change": change})
    return DensityEstimate(init.grid, rho, "pf_iteration", steps, {"l1_change": change})


def fixed_point_residual(cmap: CuspMap, est: DensityEstimate):
    """‖Pρ - ρ‖₁ for one application of the transfer operator, renormalized to unit mass"""
    op = TransferOperator(cmap, est.grid)
    image = op.apply(est.values)
    mass = image.sum() * est.grid.width
    if mass <= 0:
        raise PreconditionError("transfer operator image has no mass")
    return float(np.abs(image / mass - est.values).sum() * est.grid.width)


def cusp_continuity(cmap: CuspMap, est: DensityEstimate, lattice):
    """Both sides of ρ(x0) = ρ(a′0)/|DT(a′0)| + ρ(a0)/|DT(a0)|"""
    a0 = float(lattice.a[0])
    a0p = float(lattice.a_prime[0])
    lhs = float(est.at(cmap.x0))
    rhs = float(est.at(a0p) / abs(cmap.deriv(a0p)) + est.at(a0) / abs(cmap.deriv(a0)))
    return lhs, rhs


@dataclass(frozen=True)
class BoundaryFit:
    exponent: float
    coef: float
    r2: float
    window: tuple


def boundary_fit(est: DensityEstimate, side, min_bins=8):
    """Log-log slope of the density against the distance to 0 ("zero") or 1 ("one")"""
    if est.grid.n_bins < 2**11:
        raise PreconditionError("boundary exponent needs at least 2^11 bins")
    dist = est.grid.centers if side == "zero" else 1.0 - est.grid.centers
    k_max = int(math.log2(est.grid.n_bins))
    fit = best_window_fit(dist, est.values, dyadic_windows(4, k_max), min_bins)
    logger.info(
        {"event": "boundary_fit", "side": side, "exponent": fit.exponent, "window": fit.window}
    )
    return BoundaryFit(exponent=fit.exponent, coef=fit.coef, r2=fit.r2, window=fit.window)


def boundary_exponent(est: DensityEstimate, side):
    return boundary_fit(est, side).exponent


@dataclass
class FitResult:
    gamma: float
    delta: float
    normalizer: float
    residual: float
    window: tuple = (0.0, 1.0)
    start: int = 0
    trace: list = field(default_factory=list)

    def density(self, x):
        return ansatz_density(x, self.gamma, self.delta)

    def to_dict(self):
        return {
            "gamma": self.gamma,
            "delta": self.delta,
            "N": self.normalizer,
            "residual": self.residual,
            "window": list(self.window),
        }


def fit_ansatz(est: DensityEstimate, starts=ANSATZ_STARTS, threshold=ANSATZ_THRESHOLD):
    """
    Least squares fit of N(γ,δ)e^(-γx)x^δ(1-x)^δ over (log γ, log δ), multistart Nelder-Mead

    The first start that converges with residual below threshold wins; otherwise the best
    converged start. The estimate is renormalized first, so scaling it changes nothing.
    """
    target = est.values / est.integral
    x = est.grid.centers
    h = est.grid.width

    def objective(theta):
        g, d = np.exp(theta)
        return float(np.sum((ansatz_density(x, g, d) - target) ** 2) * h)

    trace, chosen = [], None
    for i, (g0, d0) in enumerate(starts):
        res = minimize(
            objective,
            x0=np.log([g0, d0]),
            method="Nelder-Mead",
            options={"maxiter": ANSATZ_MAXITER, "xatol": 1e-10, "fatol": 1e-14},
        )
        entry = {
            "start": [g0, d0],
            "gamma": float(np.exp(res.x[0])),
            "delta": float(np.exp(res.x[1])),
            "residual": float(res.fun),
            "converged": bool(res.success),
            "iterations": int(res.nit),
        }
        trace.append(entry)
        if not res.success:
            continue
        if chosen is None or entry["residual"] < chosen[1]["residual"]:
            chosen = (i, entry)
        if entry["residual"] < threshold:
            chosen = (i, entry)
            break
    if chosen is None:
        raise FitError("density ansatz fit did not converge from any start", trace)
    i, best = chosen
    result = FitResult(
        gamma=best["gamma"],
        delta=best["delta"],
        normalizer=ansatz_normalizer(best["gamma"], best["delta"]),
        residual=best["residual"],
        start=i,
        trace=trace,
    )
    logger.info({"event": "ansatz_fitted", **result.to_dict()})
    return result


def constants_relation(fit: FitResult, exps):
    """(1/α′)^(1/B*) + (1/(α e^(γB*)))^(1/B*); the boundary constants relation predicts 1"""
    b_star = exps.b_star
    value = (1.0 / exps.alpha_prime) ** (1.0 / b_star) + (
        1.0 / (exps.alpha * math.exp(fit.gamma * b_star))
    ) ** (1.0 / b_star)
    logger.info({"event": "constants_relation", "value": value, "residual": abs(value - 1.0)})
    return value


def resample(est: DensityEstimate, n_bins):
    """Bin-averages a finer estimate down to n_bins"""
    if n_bins == est.grid.n_bins:
        return est
    factor, rem = divmod(est.grid.n_bins, n_bins)
    if rem or factor < 1:
        raise GridError(f"cannot resample {est.grid.n_bins} bins to {n_bins}")
    values = est.values.reshape(n_bins, factor).mean(axis=1)
    return DensityEstimate(Grid(n_bins), values, est.method, est.count, dict(est.diagnostics))


def l1_distance(a: DensityEstimate, b: DensityEstimate):
    n = min(a.grid.n_bins, b.grid.n_bins)
    a, b = resample(a, n), resample(b, n)
    return float(np.abs(a.values - b.values).sum() * a.grid.width)


def density_argmax(est: DensityEstimate):
    return float(est.grid.centers[int(np.argmax(est.values))])


def lipschitz_off_cusp(est: DensityEstimate, x0, guard_bins=3):
    """Largest slope between adjacent bins outside guard_bins of the cusp bin"""
    slopes = np.abs(np.diff(est.values)) / est.grid.width
    k = int(est.grid.bin_of(x0))
    left_index = np.arange(slopes.size)
    mask = (left_index + 1 < k - guard_bins) | (left_index > k + guard_bins)
    return float(slopes[mask].max())
