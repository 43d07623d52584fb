"""
Run Configuration
Sectioned YAML config validated by pydantic; CLI flags override file values
"""

import math
from pathlib import Path
from typing import List, Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from casimir_cusp.errors import ConfigError
from casimir_cusp.flow import FlowParams, PerturbationSpec
from casimir_cusp.stability import PipelineBudget


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PerturbationConfig(_Section):
    kind: Literal["none", "axial_forcing", "planar_forcing"] = Field(
        "none", description="Forcing family"
    )
    epsilon: float = Field(0.0, ge=0, description="Forcing amplitude ε")
    theta_deg: float = Field(0.0, ge=0, lt=360, description="Planar forcing angle in degrees")

    def spec(self):
        return PerturbationSpec(
            kind=self.kind, epsilon=self.epsilon, theta=math.radians(self.theta_deg)
        )


class IntegrationConfig(_Section):
    t_end: float = Field(2000.0, gt=0, description="Integration time of `integrate`")
    tol: float = Field(1e-10, gt=1e-14, lt=1e-3, description="Local error tolerance")


class SectionConfig(_Section):
    refine_tol: float = Field(1e-8, gt=0, description="Bound on |dC/dt| at accepted maxima")
    transient: float = Field(100.0, ge=0, description="Discarded initial time span")
    n_maxima: int = Field(
        100_000, ge=2, description="Maxima streamed by reproduce-paper (no stored orbit)"
    )


class MapConfig(_Section):
    representation: Literal["empirical", "analytic", "piecewise_linear"] = Field(
        "empirical", description="Map representation built by build-map"
    )
    knots_per_branch: int = Field(64, ge=32, description="Chebyshev bins per branch")
    min_pairs: int = Field(10_000, ge=1, description="Pairs required by the empirical fit")
    x0: float = Field(0.5, gt=0, lt=1, description="Cusp location of analytic / tent maps")


class LatticeConfig(_Section):
    depth: int = Field(40, ge=3, description="Preimage lattice depth P")
    alpha_double_prime: float = Field(1.01, gt=1, description="Expansion threshold α″")


class DensityConfig(_Section):
    n_bins: int = Field(4096, ge=512, description="Density grid bins (power of two)")
    method: Literal["histogram", "ulam", "pf"] = Field(
        "histogram", description="Estimator used by `density`"
    )
    n_iters: int = Field(10_000_000, ge=100_000, description="Orbit iterations (histogram)")
    mc_per_bin: int = Field(64, ge=64, description="Monte-Carlo points per Ulam bin")
    pf_steps: int = Field(1000, ge=1, description="Maximum PF iterations")


class InducingConfig(_Section):
    n_samples: int = Field(100_000, ge=10_000, description="Return-time samples")
    set: Literal["I", "right_half"] = Field("I", description="Return set")


class StabilityConfig(_Section):
    kind: Literal["axial_forcing", "planar_forcing"] = Field(
        "axial_forcing", description="Forcing family swept over ε"
    )
    theta_deg: float = Field(70.0, ge=0, lt=360, description="Planar forcing angle in degrees")
    eps_grid: List[float] = Field(
        [0.5, 0.25, 0.1, 0.05], description="Strictly decreasing ε values, at least 4"
    )
    lobe: Literal["plus", "minus", "all"] = Field("all", description="Maxima used for T_ε")
    n_maxima: int = Field(100_000, ge=100, description="Maxima per sweep point")
    n_bins: int = Field(512, ge=512, description="Density bins per sweep point")
    knots_per_branch: int = Field(64, ge=32, description="Chebyshev bins per branch")

    @field_validator("eps_grid")
    @classmethod
    def _decreasing(cls, value):
        if len(value) < 4 or any(a <= b for a, b in zip(value, value[1:])):
            raise ValueError("eps_grid must hold at least 4 strictly decreasing values")
        return value

    def family(self):
        return PerturbationSpec(kind=self.kind, theta=math.radians(self.theta_deg))


class RunConfig(_Section):
    flow: FlowParams = Field(default_factory=FlowParams, description="Lorenz parameters")
    perturbation: PerturbationConfig = Field(default_factory=PerturbationConfig)
    integration: IntegrationConfig = Field(default_factory=IntegrationConfig)
    section: SectionConfig = Field(default_factory=SectionConfig)
    map: MapConfig = Field(default_factory=MapConfig)
    lattice: LatticeConfig = Field(default_factory=LatticeConfig)
    density: DensityConfig = Field(default_factory=DensityConfig)
    inducing: InducingConfig = Field(default_factory=InducingConfig)
    stability: StabilityConfig = Field(default_factory=StabilityConfig)
    seed: int = Field(42, description="Master seed")
    threads: int = Field(1, ge=1, description="Worker cap for joblib")
    out: str = Field("out", description="Output directory")

    def budget(self):
        """Pipeline budget of the stability sweep"""
        return PipelineBudget(
            n_maxima=self.stability.n_maxima,
            tol=self.integration.tol,
            refine_tol=self.section.refine_tol,
            transient=self.section.transient,
            knots_per_branch=self.stability.knots_per_branch,
            n_bins=self.stability.n_bins,
            seed=self.seed,
            min_pairs=self.map.min_pairs,
        )


def _field_path(error):
    return ".".join(str(part) for part in error["loc"]) or "<root>"


def validate_config(data: dict):
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        raise ConfigError(f"invalid config at '{_field_path(first)}': {first['msg']}") from e


def load_config(path=None, overrides=None):
    """
    Reads a YAML config and applies CLI overrides

    Args:
        path (str): YAML file, or None for all defaults
        overrides (dict): dotted keys ("seed", "density.n_bins"); None entries are ignored

    Returns:
        RunConfig
    """
    data = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file '{path}' not found")
        try:
            data = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"config file '{path}' is not valid YAML: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError(f"config file '{path}' must hold a mapping of sections")
    for key, value in (overrides or {}).items():
        if value is not None:
            _set_dotted(data, key, value)
    return validate_config(data)


def _set_dotted(data, key, value):
    *sections, leaf = key.split(".")
    node = data
    for name in sections:
        node = node.setdefault(name, {})
        if not isinstance(node, dict):
            raise ConfigError(f"config section '{name}' must be a mapping")
    node[leaf] = value


def default_of(key):
    """Default value of a dotted config key, for help texts"""
    node = RunConfig()
    for name in key.split("."):
        node = getattr(node, name)
    return node
