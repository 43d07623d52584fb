"""
Adaptive Integrator
Dormand-Prince 5(4) pair with cubic Hermite dense output, trajectories and ensembles
"""

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from casimir_cusp.errors import DivergenceError, PreconditionError, StiffnessError
from casimir_cusp.flow import NO_PERTURBATION, FlowParams, PerturbationSpec, as_state, make_rhs
from casimir_cusp.logging_utils import get_logger

logger = get_logger(__name__)

DEFAULT_TOL = 1e-10
DEFAULT_U0 = (1.0, 1.0, -20.0)

# Dormand-Prince tableau
C2, C3, C4, C5 = 1 / 5, 3 / 10, 4 / 5, 8 / 9
A21 = 1 / 5
A31, A32 = 3 / 40, 9 / 40
A41, A42, A43 = 44 / 45, -56 / 15, 32 / 9
A51, A52, A53, A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
A61, A62, A63, A64, A65 = 9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656
B1, B3, B4, B5, B6 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84

# 5th minus embedded 4th order weights
E1, E3, E4, E5, E6, E7 = (
    71 / 57600,
    -71 / 16695,
    71 / 1920,
    -17253 / 339200,
    22 / 525,
    -1 / 40,
)

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 5.0


class Step(NamedTuple):
    """One accepted step: endpoints and their derivatives"""

    t0: float
    y0: tuple
    f0: tuple
    t1: float
    y1: tuple
    f1: tuple

    @property
    def h(self):
        return self.t1 - self.t0

    def at(self, theta):
        """State at the fraction theta ∈ [0, 1] of the step"""
        return hermite(self.y0, self.f0, self.y1, self.f1, self.h, theta)

    def interpolate(self, t):
        return self.at((t - self.t0) / self.h)


def hermite(y0, f0, y1, f1, h, th):
    """Cubic Hermite interpolant over one step, parametrized by th ∈ [0, 1]"""
    th2 = th * th
    th3 = th2 * th
    h00 = 2.0 * th3 - 3.0 * th2 + 1.0
    h10 = th3 - 2.0 * th2 + th
    h01 = -2.0 * th3 + 3.0 * th2
    h11 = th3 - th2
    return tuple(
        h00 * y0[i] + h10 * h * f0[i] + h01 * y1[i] + h11 * h * f1[i] for i in range(3)
    )


class DormandPrince54:
    """
    Embedded Runge-Kutta 5(4) stepper working on three scalar floats

    The 5th order solution is propagated; a step is accepted when the embedded error estimate
    of every component is at most tol in absolute terms.
    """

    def __init__(self, rhs, tol=DEFAULT_TOL, max_step=math.inf, first_step=None):
        if not (1e-14 < tol < 1e-3):
            raise PreconditionError(f"tol must lie in (1e-14, 1e-3), got {tol}")
        self.rhs = rhs
        self.tol = tol
        self.max_step = max_step
        self.first_step = first_step
        self.n_steps = 0
        self.n_rejected = 0

    def _initial_step(self, y, f):
        if self.first_step is not None:
            return min(self.first_step, self.max_step)
        scale = max(1.0, max(abs(c) for c in y))
        fnorm = max(1e-10, max(abs(c) for c in f))
        return min(self.max_step, 0.01 * scale / fnorm * (self.tol / 1e-6) ** 0.2)

    def steps(self, t0, y0, t_end):
        """Generator of accepted steps from t0 until t_end (inclusive)"""
        rhs = self.rhs
        tol = self.tol
        t = float(t0)
        y = tuple(float(c) for c in y0)
        k1 = rhs(*y)
        h = self._initial_step(y, k1)
        rejected_last = False

        tiny = 16.0 * np.finfo(float).eps
        while True:
            remaining = t_end - t
            if remaining <= tiny * max(1.0, abs(t)):
                break
            h = min(h, self.max_step)
            last = h >= remaining
            if last:
                h = remaining
            elif h <= tiny * max(1.0, abs(t)):
                raise StiffnessError(f"step size underflow at t={t:.6g} (h={h:.3e})")

            y1, y2, y3 = y
            k2 = rhs(y1 + h * A21 * k1[0], y2 + h * A21 * k1[1], y3 + h * A21 * k1[2])
            k3 = rhs(
                *[y[i] + h * (A31 * k1[i] + A32 * k2[i]) for i in range(3)]
            )
            k4 = rhs(
                *[y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]) for i in range(3)]
            )
            k5 = rhs(
                *[
                    y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i])
                    for i in range(3)
                ]
            )
            k6 = rhs(
                *[
                    y[i]
                    + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i])
                    for i in range(3)
                ]
            )
            y_new = tuple(
                y[i] + h * (B1 * k1[i] + B3 * k3[i] + B4 * k4[i] + B5 * k5[i] + B6 * k6[i])
                for i in range(3)
            )
            k7 = rhs(*y_new)

            err = 0.0
            for i in range(3):
                e = h * (
                    E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]
                )
                err = max(err, abs(e) / tol)

            if not (math.isfinite(err) and all(math.isfinite(c) for c in y_new)):
                raise DivergenceError(f"non-finite state near t={t:.6g}")

            if err <= 1.0:
                t_new = t_end if last else t + h
                self.n_steps += 1
                yield Step(t, y, k1, t_new, y_new, k7)
                t, y, k1 = t_new, y_new, k7
                factor = MAX_FACTOR if err == 0.0 else SAFETY * err ** -0.2
                factor = min(MAX_FACTOR, max(MIN_FACTOR, factor))
                if rejected_last:
                    factor = min(1.0, factor)
                rejected_last = False
                h *= factor
            else:
                self.n_rejected += 1
                rejected_last = True
                h *= max(MIN_FACTOR, SAFETY * err ** -0.2)


@dataclass
class Trajectory:
    """Accepted steps of one orbit with derivative samples for Hermite dense output"""

    t: np.ndarray
    y: np.ndarray
    f: np.ndarray
    n_steps: int = 0
    n_rejected: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.t) > 1 and not np.all(np.diff(self.t) > 0):
            raise PreconditionError("trajectory times must be strictly increasing")

    @property
    def t_start(self):
        return float(self.t[0])

    @property
    def t_end(self):
        return float(self.t[-1])

    def step(self, i):
        """Step i spans [t[i], t[i+1]]"""
        return Step(
            float(self.t[i]),
            tuple(self.y[i]),
            tuple(self.f[i]),
            float(self.t[i + 1]),
            tuple(self.y[i + 1]),
            tuple(self.f[i + 1]),
        )

    def iter_steps(self):
        for i in range(len(self.t) - 1):
            yield self.step(i)

    def interpolate(self, t):
        """Dense-output state at time t"""
        if not (self.t[0] <= t <= self.t[-1]):
            raise PreconditionError(f"t={t} outside [{self.t[0]}, {self.t[-1]}]")
        i = int(np.searchsorted(self.t, t, side="right")) - 1
        i = min(max(i, 0), len(self.t) - 2)
        return np.array(self.step(i).interpolate(t))

    def to_frame(self):
        return pd.DataFrame(
            {"t": self.t, "u1": self.y[:, 0], "u2": self.y[:, 1], "u3": self.y[:, 2]}
        )

    @classmethod
    def from_frame(cls, df, p: FlowParams, pert: PerturbationSpec = NO_PERTURBATION):
        """Rebuilds a trajectory from its CSV export; derivatives are re-evaluated"""
        rhs = make_rhs(p, pert)
        y = df[["u1", "u2", "u3"]].to_numpy(dtype=float)
        f = np.array([rhs(*row) for row in y])
        return cls(t=df["t"].to_numpy(dtype=float), y=y, f=f, n_steps=len(y) - 1)


def integrate(
    p: FlowParams,
    pert: PerturbationSpec,
    u0,
    t_end,
    tol=DEFAULT_TOL,
    max_step=math.inf,
    conservative=False,
):
    """
    Integrates the shifted field from t=0 to t_end

    Args:
        p (FlowParams): Lorenz parameters
        pert (PerturbationSpec): additive forcing
        u0: initial state (3 finite floats)
        t_end (float): final time, > 0
        tol (float): local error tolerance in (1e-14, 1e-3)
        conservative (bool): integrate the divergence-free part only

    Returns:
        Trajectory: accepted steps with dense output
    """
    u0 = as_state(u0)
    if not t_end > 0:
        raise PreconditionError(f"t_end must be positive, got {t_end}")
    stepper = DormandPrince54(make_rhs(p, pert, conservative=conservative), tol, max_step)
    ts, ys, fs = [0.0], [tuple(u0)], [stepper.rhs(*u0)]
    for step in stepper.steps(0.0, u0, float(t_end)):
        ts.append(step.t1)
        ys.append(step.y1)
        fs.append(step.f1)

    logger.info(
        {
            "event": "integration_done",
            "t_end": float(t_end),
            "steps": stepper.n_steps,
            "rejected": stepper.n_rejected,
            "tol": tol,
        }
    )
    return Trajectory(
        t=np.array(ts),
        y=np.array(ys),
        f=np.array(fs),
        n_steps=stepper.n_steps,
        n_rejected=stepper.n_rejected,
        meta={"params": p.model_dump(), "perturbation": pert.model_dump(), "tol": tol},
    )


def default_initial_condition(seed=None, scale=1e-3):
    """(1, 1, -20), optionally nudged by a seeded Gaussian of the given scale"""
    u0 = np.array(DEFAULT_U0)
    if seed is None:
        return u0
    rng = np.random.default_rng(seed)
    return u0 + scale * rng.standard_normal(3)


def integrate_ensemble(p, pert, u0s, t_end, tol=DEFAULT_TOL, n_jobs=1):
    """Integrates independent initial conditions in parallel"""
    return Parallel(n_jobs=n_jobs)(delayed(integrate)(p, pert, u0, t_end, tol) for u0 in u0s)
