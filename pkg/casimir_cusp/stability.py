"""
Statistical Stability
Perturbed pipelines (flow -> maxima -> map -> density), checks of the perturbed-map assumptions
and L1 deviation sweeps against a bootstrap noise floor
"""

import math
from contextlib import contextmanager
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, Field

from casimir_cusp.artifacts import run_dir, write_csv, write_json, write_manifest
from casimir_cusp.cusp_map import CuspMap, build_empirical
from casimir_cusp.density import DensityEstimate, Grid, l1_distance, sample_density
from casimir_cusp.errors import (
    AssumptionError,
    CasimirCuspError,
    PipelineError,
    PreconditionError,
    WindowError,
)
from casimir_cusp.fitting import log_log_fit
from casimir_cusp.flow import NO_PERTURBATION, FlowParams, PerturbationSpec
from casimir_cusp.integrator import default_initial_condition
from casimir_cusp.lattice import min_abs_derivative, preimage_signature_convergence
from casimir_cusp.logging_utils import get_logger
from casimir_cusp.section import (
    Lobe,
    MaximaSeries,
    NormalizedPairs,
    lobe_pairs,
    lobe_symmetry,
    normalize,
    scan_maxima,
)

logger = get_logger(__name__)

C0_GRID = 10_000
DERIV_SAMPLES = 1_000
CUSP_EXCLUSION = 1e-3
CUSP_RATIO_K = range(4, 21)
HOLDER_K = range(6, 17)
HOLDER_POINTS = 64
MIN_SWEEP_POINTS = 4


class LobeChoice(str, Enum):
    PLUS = "plus"
    MINUS = "minus"
    ALL = "all"


class PipelineBudget(BaseModel):
    """Sample sizes and tolerances shared by every point of a sweep"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    n_maxima: int = Field(100_000, ge=100, description="Casimir maxima per run")
    tol: float = Field(1e-10, gt=0, description="Integrator tolerance")
    refine_tol: float = Field(1e-8, gt=0, description="Event refinement tolerance")
    transient: float = Field(100.0, ge=0, description="Discarded initial time")
    knots_per_branch: int = Field(64, ge=32, description="Chebyshev bins per map branch")
    n_bins: int = Field(512, ge=512, description="Density bins (power of two)")
    seed: int = Field(42, description="Seed of the reference run; sweep points use seed + 1")
    min_pairs: int = Field(10_000, ge=1, description="Pairs required to build a map")

    def scaled(self, factor):
        return self.model_copy(update={"n_maxima": int(self.n_maxima * factor)})


@contextmanager
def _stage(name):
    try:
        yield
    except PipelineError:
        raise
    except CasimirCuspError as e:
        logger.warning({"event": "pipeline_stage_failed", "stage": name, "error": str(e)})
        raise PipelineError(name, e) from e


@dataclass
class AssumptionReport:
    """Distances between an unperturbed map T and a perturbed map T_ε"""

    c0_distance: float
    derivative_gap: float
    derivative_gap_mean: float
    cusp_ratios: list
    holder: dict
    d10: float
    d_eps: float
    shape_ok: bool
    preimage_gaps: dict = field(default_factory=dict)

    @property
    def d_gap(self):
        return abs(self.d10 - self.d_eps)

    @property
    def assumption_d(self):
        return self.d_eps > 1.0

    @property
    def finite(self):
        values = [self.c0_distance, self.derivative_gap, self.derivative_gap_mean, self.d_eps]
        values += [r[side] for r in self.cusp_ratios for side in ("left", "right")]
        return all(math.isfinite(v) for v in values)

    @property
    def passes(self):
        return self.shape_ok and self.finite and self.assumption_d

    def to_dict(self):
        return {
            "c0_distance": self.c0_distance,
            "derivative_gap": self.derivative_gap,
            "derivative_gap_mean": self.derivative_gap_mean,
            "cusp_ratios": self.cusp_ratios,
            "holder": self.holder,
            "d10": self.d10,
            "d_eps": self.d_eps,
            "d_gap": self.d_gap,
            "shape_ok": self.shape_ok,
            "assumption_d": self.assumption_d,
            "preimage_gaps": self.preimage_gaps,
            "passes": self.passes,
        }


def _off_cusp(x, *cusps):
    keep = np.ones(x.shape, dtype=bool)
    for c in cusps:
        keep &= np.abs(x - c) > CUSP_EXCLUSION
    return x[keep]


def holder_proxy(cmap: CuspMap):
    """
    Hölder constant and exponent of DT on compact pieces of both branches

    Fits max |DT(x+h) - DT(x)| ≈ C_h·h^ι over dyadic h; a piecewise constant derivative gives
    C_h = 0, ι = 1.
    """
    x0 = cmap.x0
    pieces = [(0.05 * x0, 0.9 * x0), (x0 + 0.1 * (1.0 - x0), 1.0 - 0.05 * (1.0 - x0))]
    hs, gaps = [], []
    for k in HOLDER_K:
        h = 2.0**-k
        worst = 0.0
        for lo, hi in pieces:
            x = np.linspace(lo, hi - h, HOLDER_POINTS)
            worst = max(worst, float(np.max(np.abs(cmap.deriv(x + h) - cmap.deriv(x)))))
        hs.append(h)
        gaps.append(worst)
    gaps = np.asarray(gaps)
    scale = float(np.max(np.abs(cmap.deriv(np.linspace(*pieces[0], HOLDER_POINTS)))))
    if np.all(gaps <= 1e-12 * max(scale, 1.0)):
        return {"C_h": 0.0, "iota": 1.0}
    try:
        fit = log_log_fit(hs, gaps)
    except WindowError:
        return {"C_h": math.nan, "iota": math.nan}
    return {"C_h": fit.coef, "iota": fit.exponent}


def cusp_ratios(T: CuspMap, T_eps: CuspMap):
    """|DT_ε(x0_ε ± 2^-k)| / |DT(x0 ± 2^-k)| for k where both points stay inside (0, 1)"""
    rows = []
    for k in CUSP_RATIO_K:
        h = 2.0**-k
        if min(T.x0, T_eps.x0) - h <= 0.0 or max(T.x0, T_eps.x0) + h >= 1.0:
            continue
        left = abs(T_eps.deriv(T_eps.x0 - h)) / abs(T.deriv(T.x0 - h))
        right = abs(T_eps.deriv(T_eps.x0 + h)) / abs(T.deriv(T.x0 + h))
        rows.append({"k": k, "left": float(left), "right": float(right)})
    return rows


def check_assumptions(T: CuspMap, T_eps: CuspMap, strict=False, seed=0):
    """
    Compares a perturbed map against the unperturbed one

    Args:
        T (CuspMap): unperturbed map
        T_eps (CuspMap): perturbed map
        strict (bool): raise AssumptionError when d_(ε,1,0) ≤ 1

    Returns:
        AssumptionReport
    """
    grid = _off_cusp(np.linspace(0.0, 1.0, C0_GRID), T.x0, T_eps.x0)
    c0 = float(np.max(np.abs(T_eps.eval(grid) - T.eval(grid))))

    rng = np.random.default_rng(seed)
    xs = _off_cusp(rng.uniform(0.0, 1.0, DERIV_SAMPLES), T.x0, T_eps.x0)
    # points between the two cusps sit on different branches of the two maps
    lo, hi = sorted((T.x0, T_eps.x0))
    xs = xs[(xs < lo) | (xs > hi)]
    gaps = np.abs(T_eps.deriv(xs) - T.deriv(xs))

    try:
        T_eps.check_shape()
        shape_ok = True
    except CasimirCuspError:
        shape_ok = False

    try:
        frame = preimage_signature_convergence(T, T_eps)
        families = ("a", "a_prime", "b", "b_prime")
        preimage_gaps = {col: float(frame[col].max()) for col in families}
    except CasimirCuspError as e:
        preimage_gaps = {"error": str(e)}

    report = AssumptionReport(
        c0_distance=c0,
        derivative_gap=float(gaps.max()) if gaps.size else 0.0,
        derivative_gap_mean=float(gaps.mean()) if gaps.size else 0.0,
        cusp_ratios=cusp_ratios(T, T_eps),
        holder={"T": holder_proxy(T), "T_eps": holder_proxy(T_eps)},
        d10=min_abs_derivative(T),
        d_eps=min_abs_derivative(T_eps),
        shape_ok=shape_ok,
        preimage_gaps=preimage_gaps,
    )
    logger.info(
        {
            "event": "assumptions_checked",
            "c0_distance": report.c0_distance,
            "derivative_gap": report.derivative_gap,
            "d_eps": report.d_eps,
            "passes": report.passes,
        }
    )
    if strict and not report.assumption_d:
        raise AssumptionError(
            f"d_(ε,1,0) = {report.d_eps:.6g} ≤ 1: the perturbed map is not expanding enough "
            "on (b_1, a_0) and the density comparison is not covered"
        )
    return report


@dataclass
class PerturbedPipelineResult:
    pert: PerturbationSpec
    lobe: LobeChoice
    seed: int
    series: MaximaSeries
    pairs: NormalizedPairs
    cmap: CuspMap
    density: DensityEstimate
    assumptions: Optional[AssumptionReport] = None
    l1_deviation: Optional[float] = None

    @property
    def exponents(self):
        return self.cmap.exponents

    def summary(self):
        return {
            "perturbation": self.pert.model_dump(),
            "lobe": self.lobe.value,
            "seed": self.seed,
            "n_maxima": len(self.series),
            "n_pairs": self.pairs.count,
            "z_min": self.pairs.z_min,
            "z_max": self.pairs.z_max,
            "x0": self.cmap.x0,
            "exponents": self.exponents.to_dict() if self.exponents else None,
            "l1_deviation": self.l1_deviation,
            "assumptions": self.assumptions.to_dict() if self.assumptions else None,
        }

    def save(self, out_dir):
        out_dir = Path(out_dir)
        outputs = [
            write_csv(out_dir / "density.csv", self.density.to_frame()),
            write_json(out_dir / "map.json", self.cmap.to_dict()),
            write_json(out_dir / "summary.json", self.summary()),
        ]
        return outputs


def _pairs_for(series, lobe):
    if lobe is LobeChoice.ALL:
        return normalize(series)
    return lobe_pairs(series, Lobe(lobe.value))


def run_perturbed_pipeline(
    p: FlowParams,
    pert: PerturbationSpec = NO_PERTURBATION,
    lobe="all",
    budget: PipelineBudget = None,
    reference: PerturbedPipelineResult = None,
    seed=None,
    series: MaximaSeries = None,
):
    """
    Runs flow -> maxima -> map -> density under the perturbed field

    Args:
        p (FlowParams): Lorenz parameters
        pert (PerturbationSpec): forcing; ε = 0 reproduces the unperturbed run exactly
        lobe (str): "plus" or "minus" selects the maxima of one lobe (T_ε⁺ / T_ε⁻), "all" both
        budget (PipelineBudget): sample sizes and tolerances
        reference (PerturbedPipelineResult): when given, the result carries the assumption
            report against reference.cmap and the L1 deviation from reference.density
        seed (int): overrides budget.seed for the initial condition
        series (MaximaSeries): reuse already detected maxima instead of integrating

    Returns:
        PerturbedPipelineResult

    Raises:
        PipelineError: stage is one of flow, section, map, density, assumptions
    """
    budget = budget or PipelineBudget()
    lobe = LobeChoice(lobe)
    seed = budget.seed if seed is None else seed
    if series is None:
        with _stage("flow"):
            series = scan_maxima(
                p,
                pert,
                default_initial_condition(seed),
                n_maxima=budget.n_maxima,
                tol=budget.tol,
                refine_tol=budget.refine_tol,
                transient=budget.transient,
            )
    with _stage("section"):
        pairs = _pairs_for(series, lobe)
    with _stage("map"):
        cmap = build_empirical(pairs, budget.knots_per_branch, budget.min_pairs)
    with _stage("density"):
        density = sample_density(pairs.s, Grid(budget.n_bins), "section_histogram")

    result = PerturbedPipelineResult(
        pert=pert, lobe=lobe, seed=seed, series=series, pairs=pairs, cmap=cmap, density=density
    )
    if reference is not None:
        with _stage("assumptions"):
            result.assumptions = check_assumptions(reference.cmap, cmap, strict=True)
        result.l1_deviation = l1_distance(reference.density, density)
    logger.info(
        {
            "event": "perturbed_pipeline_done",
            "kind": pert.kind,
            "epsilon": pert.epsilon,
            "lobe": lobe.value,
            "x0": cmap.x0,
            "l1_deviation": result.l1_deviation,
        }
    )
    return result


def noise_floor(p: FlowParams, budget: PipelineBudget = None, lobe="all"):
    """L1 distance between two unperturbed runs with seeds s and s + 1"""
    budget = budget or PipelineBudget()
    first = run_perturbed_pipeline(p, NO_PERTURBATION, lobe, budget, seed=budget.seed)
    second = run_perturbed_pipeline(p, NO_PERTURBATION, lobe, budget, seed=budget.seed + 1)
    return l1_distance(first.density, second.density)


def check_eps_grid(eps_grid):
    eps = [float(e) for e in eps_grid]
    if len(eps) < MIN_SWEEP_POINTS:
        raise PreconditionError(f"ε grid needs at least {MIN_SWEEP_POINTS} points, got {len(eps)}")
    if any(e < 0 for e in eps) or not all(a > b for a, b in zip(eps, eps[1:])):
        raise PreconditionError(f"ε grid must be non-negative and strictly decreasing: {eps}")
    return eps


def _sweep_point(p, pert, lobe, budget, reference, out_dir):
    row = {"epsilon": pert.epsilon, "l1_deviation": math.nan, "failed": False, "error": ""}
    try:
        result = run_perturbed_pipeline(p, pert, lobe, budget, reference, seed=budget.seed + 1)
        row["l1_deviation"] = result.l1_deviation
        if out_dir is not None:
            config = {
                "params": p.model_dump(),
                "perturbation": pert.model_dump(),
                "lobe": LobeChoice(lobe).value,
                "budget": budget.model_dump(),
            }
            point_dir = run_dir(out_dir, config)
            outputs = result.save(point_dir)
            write_manifest(point_dir, "stability-point", config, outputs=outputs)
            row["run_dir"] = str(point_dir)
    except PipelineError as e:
        row.update(failed=True, error=f"{e.stage}: {e.cause}")
    return row


def stability_sweep(
    p: FlowParams,
    pert_family: PerturbationSpec,
    eps_grid,
    budget: PipelineBudget = None,
    lobe="all",
    n_jobs=1,
    out_dir=None,
):
    """
    L1 deviation of ρ_ε from ρ along a decreasing ε grid

    The reference uses seed s; the noise-floor run and every ε point use seed s + 1 with the
    same budget, so an ε = 0 point reproduces the noise floor exactly.

    Returns:
        pd.DataFrame: epsilon, l1_deviation, noise_floor, failed, error (grid order)
    """
    eps = check_eps_grid(eps_grid)
    budget = budget or PipelineBudget()
    reference = run_perturbed_pipeline(p, NO_PERTURBATION, lobe, budget, seed=budget.seed)
    twin = run_perturbed_pipeline(p, NO_PERTURBATION, lobe, budget, seed=budget.seed + 1)
    floor = l1_distance(reference.density, twin.density)
    logger.info({"event": "noise_floor", "value": floor, "n_maxima": budget.n_maxima})

    rows = Parallel(n_jobs=n_jobs)(
        delayed(_sweep_point)(p, pert_family.with_epsilon(e), lobe, budget, reference, out_dir)
        for e in eps
    )
    frame = pd.DataFrame(rows)
    frame.insert(2, "noise_floor", floor)
    cols = ["epsilon", "l1_deviation", "noise_floor", "failed", "error"]
    frame = frame[cols + [c for c in frame.columns if c not in cols]]
    logger.info(
        {"event": "sweep_done", "points": len(frame), "failed": int(frame["failed"].sum())}
    )
    return frame


def sweep_summary(frame: pd.DataFrame):
    """Monotone decrease within the noise band and the last point against 2x the floor"""
    ok = frame[~frame["failed"]]
    dev = ok["l1_deviation"].to_numpy()
    floor = float(frame["noise_floor"].iloc[0]) if len(frame) else math.nan
    monotone = bool(np.all(np.diff(dev) <= floor)) if dev.size > 1 else True
    return {
        "points": int(len(frame)),
        "failed": int(frame["failed"].sum()),
        "noise_floor": floor,
        "monotone_within_noise": monotone,
        "final_within_2x_noise": bool(dev.size and dev[-1] <= 2.0 * floor),
    }


def map_distance(T: CuspMap, other: CuspMap):
    """Sup distance on the shared grid outside both cusp neighbourhoods"""
    grid = _off_cusp(np.linspace(0.0, 1.0, C0_GRID), T.x0, other.x0)
    return float(np.max(np.abs(T.eval(grid) - other.eval(grid))))


def symmetry_report(p: FlowParams, pert: PerturbationSpec, budget: PipelineBudget = None):
    """
    Plus/minus symmetry of a perturbed run against the unperturbed one

    Reports the KS distance between plus- and minus-lobe maxima for both runs and, when each
    lobe has enough pairs, the sup distance between T_ε⁺ and T_ε⁻ built from the same series.
    """
    budget = budget or PipelineBudget()
    u0 = default_initial_condition(budget.seed)
    kwargs = dict(tol=budget.tol, refine_tol=budget.refine_tol, transient=budget.transient)
    with _stage("flow"):
        perturbed = scan_maxima(p, pert, u0, n_maxima=budget.n_maxima, **kwargs)
        unperturbed = scan_maxima(p, NO_PERTURBATION, u0, n_maxima=budget.n_maxima, **kwargs)
    report = {
        "perturbation": pert.model_dump(),
        "ks_perturbed": lobe_symmetry(perturbed),
        "ks_unperturbed": lobe_symmetry(unperturbed),
        "map_sup_distance": None,
    }
    try:
        plus = run_perturbed_pipeline(p, pert, "plus", budget, series=perturbed)
        minus = run_perturbed_pipeline(p, pert, "minus", budget, series=perturbed)
        report["map_sup_distance"] = map_distance(plus.cmap, minus.cmap)
        report["x0_plus"], report["x0_minus"] = plus.cmap.x0, minus.cmap.x0
    except PipelineError as e:
        report["lobe_maps_error"] = str(e)
    logger.info(
        {"event": "symmetry_report", **{k: v for k, v in report.items() if k != "perturbation"}}
    )
    return report
