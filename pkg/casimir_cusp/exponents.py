"""
Local Exponents
The four local behaviours of the cusp map and their estimation from (x, T(x)) samples
"""

from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from casimir_cusp.errors import FitFailureError, InvalidParameterError, WindowError
from casimir_cusp.fitting import best_window_fit, decade_windows, local_intercept
from casimir_cusp.logging_utils import get_logger

logger = get_logger(__name__)


class LocalExponents(BaseModel):
    """
    T ≈ α′x + β′x^(1+ψ) near 0, T ≈ α(1-x) + β̃(1-x)^(1+κ) near 1,
    1 - T ≈ A′(x0-x)^B′ left of the cusp and 1 - T ≈ A(x-x0)^B right of it
    """

    model_config = ConfigDict(frozen=True, extra="ignore")

    alpha_prime: float = Field(..., gt=1, description="slope α′ at 0")
    psi: Optional[float] = Field(None, gt=1, description="correction exponent ψ at 0")
    beta_prime: Optional[float] = Field(None, gt=0, description="correction coefficient β′ at 0")
    alpha: float = Field(..., gt=0, lt=1, description="slope α at 1")
    kappa: Optional[float] = Field(None, gt=1, description="correction exponent κ at 1")
    beta_tilde: Optional[float] = Field(None, gt=0, description="correction coefficient β̃ at 1")
    a_prime: Optional[float] = Field(None, gt=0, description="cusp coefficient A′ (left)")
    b_prime: float = Field(..., gt=0, lt=1, description="cusp exponent B′ (left)")
    a: Optional[float] = Field(None, gt=0, description="cusp coefficient A (right)")
    b: float = Field(..., gt=0, lt=1, description="cusp exponent B (right)")

    @property
    def b_star(self):
        return max(self.b, self.b_prime)

    @classmethod
    def checked(cls, **values):
        """Validates ranges, raising InvalidParameterError instead of pydantic's error"""
        try:
            return cls(**values)
        except ValidationError as e:
            raise InvalidParameterError(f"local exponents out of range: {e.errors()}") from e

    @classmethod
    def published(cls):
        """Fitted constants of the Lorenz Casimir map, with mild shape corrections"""
        return cls(
            alpha_prime=1.113,
            psi=1.5,
            beta_prime=0.2,
            alpha=0.4603,
            kappa=1.5,
            beta_tilde=0.2,
            b_prime=0.3095,
            b=0.2856,
        )

    def to_dict(self):
        data = self.model_dump()
        data["b_star"] = self.b_star
        return data


def fit_local_exponents(x, y, x0, min_points=8):
    """
    Estimates LocalExponents from samples of a cusp map

    Args:
        x (array): points in [0, 1]
        y (array): images T(x)
        x0 (float): cusp location

    Returns:
        tuple: (LocalExponents, dict of fit windows and R² per quantity)
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    windows = decade_windows(1e-12, 1.0)
    report = {}

    left = (x > 0) & (x < x0)
    right = (x > x0) & (x < 1)

    try:
        alpha_prime, win, n = local_intercept(x[left], y[left] / x[left])
        report["alpha_prime"] = {"window": list(win), "n": n}
        r = 1.0 - x[right]
        alpha, win, n = local_intercept(r, y[right] / r)
        report["alpha"] = {"window": list(win), "n": n}

        d_left = x0 - x[left]
        cusp_left = best_window_fit(d_left, 1.0 - y[left], windows, min_points)
        d_right = x[right] - x0
        cusp_right = best_window_fit(d_right, 1.0 - y[right], windows, min_points)
    except WindowError as e:
        raise FitFailureError(f"exponent fit failed: {e}") from e
    report["b_prime"] = cusp_left.to_dict()
    report["b"] = cusp_right.to_dict()

    psi, beta_prime = _correction(x[left], y[left] - alpha_prime * x[left], windows, min_points)
    kappa, beta_tilde = _correction(
        1.0 - x[right], y[right] - alpha * (1.0 - x[right]), windows, min_points
    )
    report["psi"] = {"value": psi, "coef": beta_prime}
    report["kappa"] = {"value": kappa, "coef": beta_tilde}

    try:
        exps = LocalExponents(
            alpha_prime=alpha_prime,
            psi=psi,
            beta_prime=beta_prime,
            alpha=alpha,
            kappa=kappa,
            beta_tilde=beta_tilde,
            a_prime=cusp_left.coef,
            b_prime=cusp_left.exponent,
            a=cusp_right.coef,
            b=cusp_right.exponent,
        )
    except ValidationError as e:
        raise FitFailureError(f"fitted exponents out of range: {e.errors()}") from e
    logger.info({"event": "exponents_fitted", **exps.to_dict()})
    return exps, report


def _correction(d, residual, windows, min_points):
    """Power law of the residual after the linear term; None when unresolvable"""
    try:
        fit = best_window_fit(d, residual, windows, min_points)
    except WindowError:
        return None, None
    # ψ, κ > 1; anything smaller is the linear-term residual
    if fit.exponent - 1.0 <= 1.0:
        return None, None
    return fit.exponent - 1.0, fit.coef
