"""
Cusp Maps
One-dimensional maps of [0, 1] with a single cusp at x0: an increasing branch T1 on [0, x0]
and a decreasing branch T2 on [x0, 1], both onto [0, 1], with derivatives blowing up at x0.

Three representations share one interface:
    analytic          closed-form family with prescribed local behaviours (test oracle)
    empirical         monotone interpolation of binned (s_k, s_{k+1}) data
    piecewise_linear  skew tent, whose invariant density is Lebesgue (estimator calibration)
"""

import math
from abc import ABC, abstractmethod
from enum import Enum

import numpy as np
import pandas as pd
from scipy.interpolate import PchipInterpolator
from scipy.optimize import least_squares
from scipy.special import gammaln

from casimir_cusp.errors import (
    ConvergenceError,
    DomainError,
    FitFailureError,
    InvalidParameterError,
    PreconditionError,
    WindowError,
)
from casimir_cusp.exponents import LocalExponents, fit_local_exponents
from casimir_cusp.fitting import log_log_fit
from casimir_cusp.logging_utils import get_logger

logger = get_logger(__name__)

SHAPE_GRID = 10_000
MIN_PAIRS = 10_000
MIN_KNOTS = 32
MIN_PER_BIN = 5
MAD_CUT = 5.0
CUSP_WINDOW_BINS = 8
TAIL_TERMS = 64
MAX_BISECT = 200
CUSP_BRACKETS = 1e3


class Branch(str, Enum):
    LEFT = "left"
    RIGHT = "right"


def _as_points(x):
    arr = np.asarray(x, dtype=float)
    scalar = arr.ndim == 0
    arr = np.atleast_1d(arr)
    if np.any(~np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise DomainError("points must lie in [0, 1]")
    return arr, scalar


class CuspMap(ABC):
    """Immutable two-branch cusp map; eval/deriv/invert_branch accept scalars or arrays"""

    representation = None

    def __init__(self, x0, exponents=None, diagnostics=None):
        if not 0.0 < x0 < 1.0:
            raise InvalidParameterError(f"cusp location must lie in (0, 1), got {x0}")
        self.x0 = float(x0)
        self.exponents = exponents
        self.diagnostics = dict(diagnostics or {})

    @abstractmethod
    def _value(self, branch, x):
        """Branch value on points of that branch's domain"""

    @abstractmethod
    def _slope(self, branch, x):
        """Branch derivative on points of that branch's domain"""

    @abstractmethod
    def _payload(self):
        """Representation-specific part of to_dict"""

    def eval(self, x):
        arr, scalar = _as_points(x)
        out = np.empty_like(arr)
        left = arr <= self.x0
        out[left] = self._value(Branch.LEFT, arr[left])
        out[~left] = self._value(Branch.RIGHT, arr[~left])
        np.clip(out, 0.0, 1.0, out=out)
        return float(out[0]) if scalar else out

    __call__ = eval

    def deriv(self, x):
        """DT(x); +inf at x0 itself (the left-limit sign)"""
        arr, scalar = _as_points(x)
        out = np.empty_like(arr)
        left = arr < self.x0
        right = arr > self.x0
        out[left] = self._slope(Branch.LEFT, arr[left])
        out[right] = self._slope(Branch.RIGHT, arr[right])
        out[arr == self.x0] = np.inf
        return float(out[0]) if scalar else out

    def invert_branch(self, branch, y, tol=1e-12):
        """
        Preimage of y on one branch by bracketed bisection with a Newton polish

        Args:
            branch (Branch | str): "left" returns points in [0, x0], "right" in [x0, 1]
            y: target value(s) in [0, 1]
            tol (float): bound on |T(x) - y|

        Returns:
            float or array: preimage(s)
        """
        branch = Branch(branch)
        y_arr, scalar = _as_points(y)
        if branch is Branch.LEFT:
            lo, hi = np.zeros_like(y_arr), np.full_like(y_arr, self.x0)
        else:
            lo, hi = np.full_like(y_arr, self.x0), np.ones_like(y_arr)
        increasing = branch is Branch.LEFT

        for _ in range(MAX_BISECT):
            mid = 0.5 * (lo + hi)
            val = self._value(branch, mid)
            move_lo = val < y_arr if increasing else val > y_arr
            lo = np.where(move_lo, mid, lo)
            hi = np.where(move_lo, hi, mid)
            if np.all(hi - lo <= 4.0 * np.finfo(float).eps * np.maximum(1.0, np.abs(mid))):
                break
        x = 0.5 * (lo + hi)

        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            for _ in range(2):
                res = self._value(branch, x) - y_arr
                step = res / self._slope(branch, x)
                cand = np.clip(x - step, lo, hi)
                better = np.isfinite(cand) & (
                    np.abs(self._value(branch, cand) - y_arr) < np.abs(res)
                )
                x = np.where(better, cand, x)

        # onto endpoints are exact
        x = np.where(y_arr == 1.0, self.x0, x)
        x = np.where(y_arr == 0.0, 0.0 if increasing else 1.0, x)
        interior = (y_arr > 0.0) & (y_arr < 1.0)
        if np.any(interior):
            self._check_inverse(branch, x[interior], y_arr[interior], tol)
        return float(x[0]) if scalar else x

    def _check_inverse(self, branch, x, y, tol):
        """
        The root lies inside the final bisection bracket, so the residual is bounded by the
        branch change across it: |slope|·width on smooth parts, the value jump near the cusp
        """
        edge_lo, edge_hi = (0.0, self.x0) if branch is Branch.LEFT else (self.x0, 1.0)
        width = 4.0 * np.finfo(float).eps * np.maximum(1.0, np.abs(x))
        value = self._value(branch, x)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            jump = np.maximum(
                np.abs(self._value(branch, np.clip(x - width, edge_lo, edge_hi)) - value),
                np.abs(self._value(branch, np.clip(x + width, edge_lo, edge_hi)) - value),
            )
            smooth = 4.0 * np.abs(self._slope(branch, x)) * width
        allowed = np.where(np.abs(x - self.x0) <= CUSP_BRACKETS * width, jump, smooth)
        residual = np.abs(value - y)
        bad = residual > np.maximum(max(tol, 1e-12), allowed)
        if np.any(bad):
            i = int(np.argmax(np.where(bad, residual, -np.inf)))
            raise ConvergenceError(
                f"{branch.value} branch not invertible at y = {y[i]:.17g}: "
                f"residual {residual[i]:.3e} at x = {x[i]:.17g}"
            )

    def check_shape(self, n=SHAPE_GRID, error=InvalidParameterError):
        """Onto and strictly monotone branches on an n-point grid per branch"""
        left = np.linspace(0.0, self.x0, n)
        right = np.linspace(self.x0, 1.0, n)
        v_left = self._value(Branch.LEFT, left)
        v_right = self._value(Branch.RIGHT, right)
        problems = []
        if not np.all(np.diff(v_left) > 0):
            problems.append("left branch not strictly increasing")
        if not np.all(np.diff(v_right) < 0):
            problems.append("right branch not strictly decreasing")
        ends = {
            "T(0)": (v_left[0], 0.0),
            "T1(x0)": (v_left[-1], 1.0),
            "T2(x0)": (v_right[0], 1.0),
            "T(1)": (v_right[-1], 0.0),
        }
        for name, (got, want) in ends.items():
            if abs(got - want) > 1e-9:
                problems.append(f"{name} = {got:.12g}, expected {want}")
        if problems:
            raise error("; ".join(problems))

    def to_dict(self):
        data = {
            "representation": self.representation,
            "x0": self.x0,
            "exponents": self.exponents.to_dict() if self.exponents else None,
            "diagnostics": self.diagnostics,
        }
        data.update(self._payload())
        return data

    def __repr__(self):
        return f"{type(self).__name__}(x0={self.x0:.6g})"


class _GermBranch:
    """
    g(r) = slope·r + coef·r^power + cusp·R(r) + closing·r^m on r ∈ [0, span], g(0)=0, g(span)=1

    R is the remainder of -(span - r)^b after its Taylor polynomial of degree k = ⌊power - 1⌋ + 1
    at r = 0, so R = O(r^(k+1)) leaves the germ at 0 untouched while carrying the
    -(span - r)^b singularity at r = span. closing·r^m (m = k + 1) fixes g(span) = 1.
    """

    def __init__(self, slope, coef, power, cusp_exp, span, cusp_coef=None):
        self.slope = slope
        self.coef = coef
        self.power = power
        self.b = cusp_exp
        self.span = span
        self.k = int(math.floor(power - 1.0)) + 1
        self.m = self.k + 1

        b = cusp_exp
        j = np.arange(1, self.k + 1)
        self._taylor = b * np.exp(gammaln(j - b) - gammaln(1.0 - b) - gammaln(j + 1.0))
        jt = np.arange(self.k + 1, self.k + 1 + TAIL_TERMS)
        self._tail = b * np.exp(gammaln(jt - b) - gammaln(1.0 - b) - gammaln(jt + 1.0))

        r_end = float(self.remainder(np.array([span]), np.array([0.0]))[0])
        base = slope * span + coef * span**power
        if cusp_coef is None:
            cusp_coef = (1.0 - base) / r_end
            closing = 0.0
            if cusp_coef <= 0.0:
                raise InvalidParameterError(
                    f"linear and correction terms reach {base:.4g} ≥ 1 before the cusp"
                )
        else:
            closing = (1.0 - base - cusp_coef * r_end) / span**self.m
        self.cusp = float(cusp_coef)
        self.closing = float(closing)

    def _horner(self, coeffs, t):
        acc = np.zeros_like(t)
        for c in coeffs[::-1]:
            acc = acc * t + c
        return acc

    def remainder(self, r, d):
        t = r / self.span
        near = t < 0.5
        out = np.empty_like(t)
        sb = self.span**self.b
        tn = t[near]
        out[near] = sb * tn ** (self.k + 1) * self._horner(self._tail, tn)
        tf = t[~near]
        poly = tf * self._horner(self._taylor, tf) if self.k else 0.0
        out[~near] = sb * (1.0 - (d[~near] / self.span) ** self.b - poly)
        return out

    def remainder_slope(self, r, d):
        t = r / self.span
        near = t < 0.5
        out = np.empty_like(t)
        sb1 = self.span ** (self.b - 1.0)
        jt = np.arange(self.k + 1, self.k + 1 + TAIL_TERMS)
        tn = t[near]
        out[near] = sb1 * tn**self.k * self._horner(self._tail * jt, tn)
        tf = t[~near]
        j = np.arange(1, self.k + 1)
        dpoly = self._horner(self._taylor * j, tf)
        with np.errstate(divide="ignore"):
            out[~near] = sb1 * (self.b * (d[~near] / self.span) ** (self.b - 1.0) - dpoly)
        return out

    def value(self, r, d):
        return (
            self.slope * r
            + self.coef * r**self.power
            + self.cusp * self.remainder(r, d)
            + self.closing * r**self.m
        )

    def slope_at(self, r, d):
        return (
            self.slope
            + self.coef * self.power * r ** (self.power - 1.0)
            + self.cusp * self.remainder_slope(r, d)
            + self.closing * self.m * r ** (self.m - 1.0)
        )


class AnalyticCuspMap(CuspMap):
    """Closed-form family matching all four local behaviours of LocalExponents exactly"""

    representation = "analytic"

    def __init__(self, exponents: LocalExponents, x0, diagnostics=None):
        missing = [
            name
            for name in ("psi", "beta_prime", "kappa", "beta_tilde")
            if getattr(exponents, name) is None
        ]
        if missing:
            raise InvalidParameterError(f"analytic family needs {', '.join(missing)}")
        super().__init__(x0, diagnostics=diagnostics)
        e = exponents
        self._left = _GermBranch(
            e.alpha_prime, e.beta_prime, 1.0 + e.psi, e.b_prime, self.x0, e.a_prime
        )
        self._right = _GermBranch(e.alpha, e.beta_tilde, 1.0 + e.kappa, e.b, 1.0 - self.x0, e.a)
        self.exponents = e.model_copy(update={"a_prime": self._left.cusp, "a": self._right.cusp})
        self.diagnostics.update(
            {"closing_left": self._left.closing, "closing_right": self._right.closing}
        )
        self.check_shape()

    def _value(self, branch, x):
        if branch is Branch.LEFT:
            out = self._left.value(x, self.x0 - x)
        else:
            out = self._right.value(1.0 - x, x - self.x0)
        return np.where(x == self.x0, 1.0, out)

    def _slope(self, branch, x):
        if branch is Branch.LEFT:
            return self._left.slope_at(x, self.x0 - x)
        return -self._right.slope_at(1.0 - x, x - self.x0)

    def _payload(self):
        return {}


class EmpiricalCuspMap(CuspMap):
    """
    Each branch stored as φ = (1 - T)^(1/B) through monotone PCHIP knots

    φ vanishes linearly at x0, so T = 1 - φ^B carries the fitted cusp germ in both value and
    derivative without special-casing the cusp neighbourhood.
    """

    representation = "empirical"

    def __init__(self, x0, knots, cusp_exponents, exponents=None, diagnostics=None):
        super().__init__(x0, exponents=exponents, diagnostics=diagnostics)
        self.knots = {
            side: (np.asarray(k[0], dtype=float), np.asarray(k[1], dtype=float))
            for side, k in knots.items()
        }
        self.cusp_exponents = {side: float(b) for side, b in cusp_exponents.items()}
        self._phi = {}
        for side in (Branch.LEFT, Branch.RIGHT):
            xs, phis = self.knots[side.value]
            if len(xs) < 2 or not np.all(np.diff(xs) > 0):
                raise FitFailureError(f"{side.value} knots must be strictly increasing in x")
            self._phi[side] = PchipInterpolator(xs, phis, extrapolate=True)
        self.check_shape(error=FitFailureError)

    def _value(self, branch, x):
        phi = np.clip(self._phi[branch](x), 0.0, None)
        return 1.0 - phi ** self.cusp_exponents[branch.value]

    def _slope(self, branch, x):
        b = self.cusp_exponents[branch.value]
        phi = np.clip(self._phi[branch](x), 0.0, None)
        with np.errstate(divide="ignore", invalid="ignore"):
            return -b * phi ** (b - 1.0) * self._phi[branch].derivative()(x)

    def _payload(self):
        return {
            "knots": {
                side: {"x": xs.tolist(), "phi": phis.tolist()}
                for side, (xs, phis) in self.knots.items()
            },
            "cusp_exponents": self.cusp_exponents,
        }


class PiecewiseLinearCuspMap(CuspMap):
    """Skew tent T1 = x/x0, T2 = (1-x)/(1-x0); x0 = 1/2 is the full tent"""

    representation = "piecewise_linear"

    def _value(self, branch, x):
        if branch is Branch.LEFT:
            return x / self.x0
        return (1.0 - x) / (1.0 - self.x0)

    def _slope(self, branch, x):
        if branch is Branch.LEFT:
            return np.full_like(x, 1.0 / self.x0)
        return np.full_like(x, -1.0 / (1.0 - self.x0))

    def _payload(self):
        return {}


def build_analytic(exponents: LocalExponents, x0=0.5):
    """Closed-form cusp map; InvalidParameterError when ranges or shape fail"""
    cmap = AnalyticCuspMap(exponents, x0)
    logger.info(
        {
            "event": "analytic_map_built",
            "x0": cmap.x0,
            "a_prime": cmap.exponents.a_prime,
            "a": cmap.exponents.a,
        }
    )
    return cmap


def skew_tent(x0=0.5):
    return PiecewiseLinearCuspMap(x0)


def locate_cusp(x, y, n_coarse):
    """
    Cusp location from pairs

    Starts at the argmax bin of the binned-median curve, then fits
    1 - y = A d^B + L d + Q d² separately on each side (d = distance to the cusp, with the
    cusp as a free parameter) over points outside the argmax neighbourhood. A second pass
    zooms in around the first estimate when the two sides agree closely enough.

    Returns:
        dict: x0, x0_left, x0_right, b_left, b_right, coarse, bin_width, passes
    """
    frame = pd.DataFrame({"x": x, "y": y})
    frame["bin"] = np.minimum((frame["x"] * n_coarse).astype(int), n_coarse - 1)
    medians = frame.groupby("bin")["y"].median()
    k = int(medians.idxmax())
    bw = 1.0 / n_coarse
    coarse = (k + 0.5) * bw

    fits = _fit_sides(x, y, coarse, 1.5 * bw, CUSP_WINDOW_BINS * bw, bw)
    passes = 1
    gap = abs(fits["left"][0] - fits["right"][0])
    inner, outer = max(8.0 * gap, 2e-4), 2.0 * bw
    if inner < 0.5 * outer:
        center = 0.5 * (fits["left"][0] + fits["right"][0])
        try:
            fits = _fit_sides(x, y, center, inner, outer, 0.5 * inner)
            passes = 2
        except FitFailureError as e:
            logger.debug({"event": "cusp_zoom_skipped", "reason": str(e)})

    x0_left, b_left = fits["left"]
    x0_right, b_right = fits["right"]
    if abs(x0_left - x0_right) > bw:
        raise FitFailureError(
            f"cusp estimates disagree by more than one bin: {x0_left:.6f} vs {x0_right:.6f}"
        )
    result = {
        "x0": 0.5 * (x0_left + x0_right),
        "x0_left": x0_left,
        "x0_right": x0_right,
        "b_left": b_left,
        "b_right": b_right,
        "coarse": coarse,
        "bin_width": bw,
        "passes": passes,
    }
    logger.info({"event": "cusp_located", **result})
    return result


def _fit_sides(x, y, center, inner, outer, radius):
    fits = {}
    for side, sign in (("left", -1.0), ("right", 1.0)):
        dist = sign * (x - center)
        mask = (dist >= inner) & (dist <= outer) & (y < 1.0)
        if mask.sum() < 16:
            raise FitFailureError(f"too few points on the {side} of the cusp ({int(mask.sum())})")
        fits[side] = _side_fit(x[mask], y[mask], sign, center, radius)
    return fits


def _side_fit(xs, ys, sign, center, radius):
    try:
        guess = log_log_fit(sign * (xs - center), 1.0 - ys)
        b0 = float(np.clip(guess.exponent, 0.05, 0.95))
        a0 = float(np.clip(np.log(max(guess.coef, 1e-6)), -19.0, 19.0))
    except WindowError:
        b0, a0 = 0.3, 0.0

    def residuals(params):
        c, log_a, b, lin, quad = params
        d = sign * (xs - c)
        return ys - (1.0 - np.exp(log_a) * d**b - lin * d - quad * d * d)

    fit = least_squares(
        residuals,
        x0=[center, a0, b0, 0.0, 0.0],
        bounds=(
            [center - radius, -20.0, 0.01, -np.inf, -np.inf],
            [center + radius, 20.0, 0.99, np.inf, np.inf],
        ),
        x_scale="jac",
        xtol=1e-14,
        ftol=1e-14,
        gtol=1e-14,
        max_nfev=2000,
    )
    return float(fit.x[0]), float(fit.x[2])


def chebyshev_edges(lo, hi, n_bins):
    u = np.linspace(0.0, 1.0, n_bins + 1)
    edges = lo + (hi - lo) * 0.5 * (1.0 - np.cos(np.pi * u))
    edges[0], edges[-1] = lo, hi
    return edges


def binned_medians(x, y, edges, min_count=MIN_PER_BIN):
    """
    Median (x, y) per bin after MAD outlier rejection, sparse neighbours merged

    Returns:
        pd.DataFrame: columns x, y, count ordered by x
    """
    n_bins = len(edges) - 1
    frame = pd.DataFrame({"x": x, "y": y})
    frame["bin"] = np.clip(np.searchsorted(edges, frame["x"], side="right") - 1, 0, n_bins - 1)
    med = frame.groupby("bin")["y"].transform("median")
    dev = (frame["y"] - med).abs()
    mad = dev.groupby(frame["bin"]).transform("median")
    keep = (mad == 0) | (dev <= MAD_CUT * 1.4826 * mad)
    frame = frame[keep]

    counts = frame.groupby("bin").size()
    labels, current, acc = {}, 0, 0
    for b, c in counts.items():
        labels[b] = current
        acc += c
        if acc >= min_count:
            current += 1
            acc = 0
    if acc and current > 0:
        labels = {b: (lab - 1 if lab == current else lab) for b, lab in labels.items()}
    frame = frame.assign(group=frame["bin"].map(labels))
    out = frame.groupby("group").agg(x=("x", "median"), y=("y", "median"), count=("y", "size"))
    return out.sort_values("x").reset_index(drop=True)


def build_empirical(pairs, knots_per_branch=64, min_pairs=MIN_PAIRS):
    """
    Fits a cusp map to normalized successive-maxima pairs

    Args:
        pairs (NormalizedPairs): (s_k, s_{k+1}) data
        knots_per_branch (int): Chebyshev bins per branch (≥ 32)

    Returns:
        EmpiricalCuspMap
    """
    if pairs.count < min_pairs:
        raise PreconditionError(f"need at least {min_pairs} pairs, got {pairs.count}")
    if knots_per_branch < MIN_KNOTS:
        raise PreconditionError(f"knots_per_branch must be ≥ {MIN_KNOTS}")
    x = np.asarray(pairs.s, dtype=float)
    y = np.asarray(pairs.s_next, dtype=float)

    cusp = locate_cusp(x, y, 2 * knots_per_branch)
    x0 = cusp["x0"]
    b = {"left": cusp["b_left"], "right": cusp["b_right"]}

    knots = {}
    for side, lo, hi in (("left", 0.0, x0), ("right", x0, 1.0)):
        mask = (x > lo) & (x < hi)
        table = binned_medians(x[mask], y[mask], chebyshev_edges(lo, hi, knots_per_branch))
        ys = table["y"].to_numpy()
        step = np.diff(ys)
        if not (np.all(step > 0) if side == "left" else np.all(step < 0)):
            raise FitFailureError(f"non-monotone binned data on the {side} branch")
        phi = np.clip(1.0 - ys, 1e-300, 1.0) ** (1.0 / b[side])
        xs = table["x"].to_numpy()
        if side == "left":
            xs, phi = np.r_[0.0, xs, x0], np.r_[1.0, phi, 0.0]
        else:
            xs, phi = np.r_[x0, xs, 1.0], np.r_[0.0, phi, 1.0]
        keep = np.r_[True, np.diff(xs) > 0]
        knots[side] = (xs[keep], phi[keep])
        if len(knots[side][0]) < 4:
            raise FitFailureError(f"only {len(knots[side][0])} usable knots on the {side} branch")

    exps, windows = fit_local_exponents(x, y, x0)
    diagnostics = {"n_pairs": pairs.count, "cusp": cusp, "fit_windows": windows}
    cmap = EmpiricalCuspMap(x0, knots, b, exponents=exps, diagnostics=diagnostics)
    logger.info(
        {
            "event": "empirical_map_built",
            "x0": x0,
            "knots_left": len(knots["left"][0]),
            "knots_right": len(knots["right"][0]),
        }
    )
    return cmap


def cusp_map_from_dict(data):
    """Inverse of CuspMap.to_dict"""
    kind = data.get("representation")
    exps = LocalExponents(**data["exponents"]) if data.get("exponents") else None
    diagnostics = data.get("diagnostics") or {}
    if kind == AnalyticCuspMap.representation:
        return AnalyticCuspMap(exps, data["x0"], diagnostics=diagnostics)
    if kind == EmpiricalCuspMap.representation:
        knots = {side: (k["x"], k["phi"]) for side, k in data["knots"].items()}
        return EmpiricalCuspMap(
            data["x0"], knots, data["cusp_exponents"], exponents=exps, diagnostics=diagnostics
        )
    if kind == PiecewiseLinearCuspMap.representation:
        return PiecewiseLinearCuspMap(data["x0"], diagnostics=diagnostics)
    raise InvalidParameterError(f"unknown map representation '{kind}'")
