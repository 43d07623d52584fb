"""
Casimir Section
Local maxima of C(t) along orbits, lobe labels, normalized successive-maxima pairs, winding counts
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np
import pandas as pd
from scipy.stats import ks_2samp

from casimir_cusp.errors import (
    AmbiguousLobeError,
    DegenerateRangeError,
    EmptySectionError,
    PreconditionError,
)
from casimir_cusp.flow import (
    NO_PERTURBATION,
    FlowParams,
    PerturbationSpec,
    as_state,
    casimir_rate,
    casimir_rate2,
    make_casimir_rate,
    make_rhs,
)
from casimir_cusp.integrator import DEFAULT_TOL, DormandPrince54
from casimir_cusp.logging_utils import get_logger

logger = get_logger(__name__)

DEFAULT_REFINE_TOL = 1e-8
DEFAULT_TRANSIENT = 100.0
MERGE_GAP = 1e-3


class Lobe(str, Enum):
    PLUS = "plus"
    MINUS = "minus"

    @property
    def sign(self):
        return 1 if self is Lobe.PLUS else -1


def lobe_label(u):
    """Σ₊ for u1 > 0 (the half space containing c₁), Σ₋ for u1 < 0"""
    u = as_state(u)
    if u[0] == 0.0:
        raise AmbiguousLobeError("u1 = 0 lies on the symmetry plane")
    return Lobe.PLUS if u[0] > 0 else Lobe.MINUS


@dataclass(frozen=True)
class CasimirEvent:
    t: float
    u: tuple
    c_value: float
    lobe: Lobe


@dataclass
class MaximaSeries:
    """Time-ordered maxima; lobe is stored as +1/-1"""

    t: np.ndarray
    u: np.ndarray
    c: np.ndarray
    lobe: np.ndarray
    z_min: Optional[float] = None
    z_max: Optional[float] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.u = np.asarray(self.u, dtype=float).reshape(-1, 3)
        self.c = np.asarray(self.c, dtype=float)
        self.lobe = np.asarray(self.lobe, dtype=np.int8)
        if len(self.t) > 1 and not np.all(np.diff(self.t) > 0):
            raise PreconditionError("maxima must be strictly increasing in time")
        if len(self.c):
            self.z_min = float(self.c.min()) if self.z_min is None else self.z_min
            self.z_max = float(self.c.max()) if self.z_max is None else self.z_max

    def __len__(self):
        return len(self.t)

    @property
    def events(self):
        return [
            CasimirEvent(
                t=float(self.t[i]),
                u=tuple(self.u[i]),
                c_value=float(self.c[i]),
                lobe=Lobe.PLUS if self.lobe[i] > 0 else Lobe.MINUS,
            )
            for i in range(len(self))
        ]

    def shifted(self, offset):
        """Same events with every c_value (and the range) moved by offset"""
        return MaximaSeries(
            t=self.t,
            u=self.u,
            c=self.c + offset,
            lobe=self.lobe,
            z_min=self.z_min + offset,
            z_max=self.z_max + offset,
            meta=dict(self.meta),
        )

    def to_frame(self):
        return pd.DataFrame(
            {
                "t": self.t,
                "c_value": self.c,
                "lobe": np.where(self.lobe > 0, Lobe.PLUS.value, Lobe.MINUS.value),
                "u1": self.u[:, 0],
                "u2": self.u[:, 1],
                "u3": self.u[:, 2],
            }
        )

    @classmethod
    def from_frame(cls, df, z_min=None, z_max=None):
        lobe = np.where(df["lobe"].to_numpy() == Lobe.PLUS.value, 1, -1)
        return cls(
            t=df["t"].to_numpy(dtype=float),
            u=df[["u1", "u2", "u3"]].to_numpy(dtype=float),
            c=df["c_value"].to_numpy(dtype=float),
            lobe=lobe,
            z_min=z_min,
            z_max=z_max,
        )


@dataclass
class NormalizedPairs:
    """(s_k, s_{k+1}) data of the normalized map on [0, 1]"""

    s: np.ndarray
    s_next: np.ndarray
    z_min: float = 0.0
    z_max: float = 1.0

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=float)
        self.s_next = np.asarray(self.s_next, dtype=float)
        if self.s.shape != self.s_next.shape:
            raise PreconditionError("pair columns must have equal length")
        for arr in (self.s, self.s_next):
            if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
                raise PreconditionError("normalized values must lie in [0, 1]")

    @property
    def count(self):
        return int(self.s.size)

    def to_frame(self):
        return pd.DataFrame({"s_k": self.s, "s_next": self.s_next})

    @classmethod
    def from_frame(cls, df, z_min=0.0, z_max=1.0):
        return cls(
            s=df["s_k"].to_numpy(dtype=float),
            s_next=df["s_next"].to_numpy(dtype=float),
            z_min=z_min,
            z_max=z_max,
        )


class MaximaDetector:
    """
    Incremental + to − sign-change detector for dC/dt over accepted integrator steps

    Each crossing is refined by bisection in the step fraction on the Hermite interpolant,
    then accepted only if |dC/dt| < refine_tol and d²C/dt² < 0.
    """

    def __init__(
        self,
        p: FlowParams,
        pert: PerturbationSpec = NO_PERTURBATION,
        refine_tol=DEFAULT_REFINE_TOL,
        transient=DEFAULT_TRANSIENT,
        t_start=0.0,
        merge_gap=MERGE_GAP,
    ):
        self.p = p
        self.pert = pert
        self.refine_tol = refine_tol
        self.t_min = t_start + transient
        self.merge_gap = merge_gap
        self._rate = make_casimir_rate(p, pert)
        self._g_prev = None
        self._t, self._u, self._c, self._lobe = [], [], [], []
        self.dropped = {
            "transient": 0,
            "flat": 0,
            "not_maximum": 0,
            "unrefined": 0,
            "merged": 0,
            "axis": 0,
        }

    def __len__(self):
        return len(self._t)

    def feed(self, step):
        """Consumes one accepted step; returns True when an event was recorded"""
        g0 = self._rate(*step.y0) if self._g_prev is None else self._g_prev
        g1 = self._rate(*step.y1)
        self._g_prev = g1
        if not (g0 > 0.0 and g1 <= 0.0):
            return False
        # swings below refine_tol are rounding noise, e.g. along an equilibrium
        if g0 - g1 < self.refine_tol:
            self.dropped["flat"] += 1
            return False
        if step.t1 < self.t_min:
            self.dropped["transient"] += 1
            return False

        theta, u = self._refine(step, g0)
        t_event = step.t0 + theta * step.h
        if t_event < self.t_min:
            self.dropped["transient"] += 1
            return False
        u = np.array(u)
        if abs(casimir_rate(self.p, u, self.pert)) >= self.refine_tol:
            self.dropped["unrefined"] += 1
            logger.debug({"event": "maximum_unrefined", "t": t_event})
            return False
        if casimir_rate2(self.p, u, self.pert) >= 0.0:
            self.dropped["not_maximum"] += 1
            return False
        if u[0] == 0.0:
            self.dropped["axis"] += 1
            return False
        if self._t and t_event - self._t[-1] < self.merge_gap:
            self.dropped["merged"] += 1
            logger.debug({"event": "maximum_merged", "t": t_event})
            return False

        self._t.append(t_event)
        self._u.append(u)
        self._c.append(float(u @ u))
        self._lobe.append(1 if u[0] > 0 else -1)
        return True

    def _refine(self, step, g_lo):
        lo, hi = 0.0, 1.0
        best_theta, best_u, best_g = 1.0, step.y1, abs(self._rate(*step.y1))
        if abs(g_lo) < best_g:
            best_theta, best_u, best_g = 0.0, step.y0, abs(g_lo)
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if mid <= lo or mid >= hi:
                break
            u_mid = step.at(mid)
            g_mid = self._rate(*u_mid)
            if abs(g_mid) < best_g:
                best_theta, best_u, best_g = mid, u_mid, abs(g_mid)
            if g_mid > 0.0:
                lo = mid
            else:
                hi = mid
            if best_g < 0.1 * self.refine_tol and (hi - lo) * step.h < 1e-10:
                break
        return best_theta, best_u

    def series(self):
        return MaximaSeries(
            t=np.array(self._t),
            u=np.array(self._u).reshape(-1, 3),
            c=np.array(self._c),
            lobe=np.array(self._lobe, dtype=np.int8),
            meta={
                "params": self.p.model_dump(),
                "perturbation": self.pert.model_dump(),
                "refine_tol": self.refine_tol,
                "dropped": dict(self.dropped),
            },
        )


def extract_maxima(
    traj,
    refine_tol=DEFAULT_REFINE_TOL,
    transient=DEFAULT_TRANSIENT,
    p: FlowParams = None,
    pert: PerturbationSpec = None,
):
    """
    Detects the local maxima of C(t) along a stored trajectory

    Args:
        traj (Trajectory): integrated orbit (params taken from its meta when p is None)
        refine_tol (float): bound on |dC/dt| at accepted events
        transient (float): initial time span whose events are discarded

    Returns:
        MaximaSeries: accepted events
    """
    if p is None:
        p = FlowParams(**traj.meta.get("params", {}))
    if pert is None:
        pert = PerturbationSpec(**traj.meta.get("perturbation", {}))
    if traj.t_end - traj.t_start < transient + 10.0:
        raise PreconditionError(
            f"trajectory spans {traj.t_end - traj.t_start:.3g} time units, "
            f"need more than transient + 10 = {transient + 10.0:.3g}"
        )
    detector = MaximaDetector(p, pert, refine_tol, transient, t_start=traj.t_start)
    for step in traj.iter_steps():
        detector.feed(step)
    if len(detector) == 0:
        raise EmptySectionError("no Casimir maxima found after the transient")
    series = detector.series()
    logger.info({"event": "maxima_extracted", "count": len(series), "dropped": detector.dropped})
    return series


def scan_maxima(
    p: FlowParams,
    pert: PerturbationSpec,
    u0,
    n_maxima=None,
    t_end=None,
    tol=DEFAULT_TOL,
    refine_tol=DEFAULT_REFINE_TOL,
    transient=DEFAULT_TRANSIENT,
    max_time=None,
):
    """
    Integrates and detects maxima on the fly without storing the orbit

    Stops after n_maxima accepted events or at t_end, whichever is given (n_maxima wins).
    """
    if n_maxima is None and t_end is None:
        raise PreconditionError("either n_maxima or t_end is required")
    u0 = as_state(u0)
    if n_maxima is not None:
        horizon = max_time if max_time is not None else transient + 10.0 * n_maxima + 100.0
    else:
        horizon = float(t_end)
    stepper = DormandPrince54(make_rhs(p, pert), tol)
    detector = MaximaDetector(p, pert, refine_tol, transient)
    for step in stepper.steps(0.0, u0, horizon):
        if detector.feed(step) and n_maxima is not None and len(detector) >= n_maxima:
            break
    if len(detector) == 0:
        raise EmptySectionError("no Casimir maxima found after the transient")
    series = detector.series()
    series.meta.update({"tol": tol, "steps": stepper.n_steps, "rejected": stepper.n_rejected})
    logger.info(
        {
            "event": "maxima_scanned",
            "count": len(series),
            "steps": stepper.n_steps,
            "rejected": stepper.n_rejected,
            "dropped": detector.dropped,
        }
    )
    return series


def normalize(series: MaximaSeries):
    """Maps c-values to [0, 1] with the series' own [z_min, z_max] and pairs consecutive maxima"""
    if len(series) < 2:
        raise PreconditionError("normalization needs at least 2 events")
    z_min, z_max = series.z_min, series.z_max
    if not z_max > z_min:
        raise DegenerateRangeError(f"z_max == z_min == {z_min}")
    s = np.clip((series.c - z_min) / (z_max - z_min), 0.0, 1.0)
    return NormalizedPairs(s=s[:-1], s_next=s[1:], z_min=z_min, z_max=z_max)


def lobe_pairs(series: MaximaSeries, lobe: Lobe):
    """Pairs whose first maximum lies on the given lobe (full-series normalization)"""
    pairs = normalize(series)
    mask = series.lobe[:-1] == Lobe(lobe).sign
    return NormalizedPairs(
        s=pairs.s[mask], s_next=pairs.s_next[mask], z_min=pairs.z_min, z_max=pairs.z_max
    )


def winding_counts(series: MaximaSeries):
    """
    Return times of the lobe label

    For every event with a later event on the same lobe, the number of events until that
    next same-lobe event (1 when the orbit stays, k+1 after k events on the other lobe).
    """
    if not np.any(series.lobe > 0):
        raise PreconditionError("winding counts need at least one plus-lobe event")
    counts = [np.diff(np.flatnonzero(series.lobe == sign)) for sign in (1, -1)]
    return np.concatenate(counts).astype(int)


def count_distribution(values):
    """Empirical distribution table with columns n, count, prob, cumprob (P(X ≥ n))"""
    values = np.asarray(values, dtype=int)
    n_max = int(values.max()) if values.size else 0
    counts = np.bincount(values, minlength=n_max + 1)[1:]
    n = np.arange(1, n_max + 1)
    prob = counts / max(values.size, 1)
    tail = prob[::-1].cumsum()[::-1]
    return pd.DataFrame({"n": n, "count": counts, "prob": prob, "cumprob": tail})


def mean_gap(series: MaximaSeries):
    if len(series) < 2:
        raise PreconditionError("mean gap needs at least 2 events")
    return float(np.mean(np.diff(series.t)))


def shortest_period_estimate(series: MaximaSeries):
    """Two inter-maximum gaps: the shortest periodic orbit visits both lobes once"""
    return 2.0 * mean_gap(series)


def lobe_symmetry(series: MaximaSeries):
    """Two-sample KS statistic between plus- and minus-lobe c-values"""
    plus = series.c[series.lobe > 0]
    minus = series.c[series.lobe < 0]
    if plus.size == 0 or minus.size == 0:
        return math.nan
    return float(ks_2samp(plus, minus).statistic)
