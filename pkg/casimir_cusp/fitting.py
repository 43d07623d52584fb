"""
Regression Helpers
Log-log power-law fits over auto-selected windows, scored by R²
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from sklearn.linear_model import LinearRegression

from casimir_cusp.errors import WindowError

MIN_POINTS = 8


@dataclass(frozen=True)
class PowerLawFit:
    """r ≈ coef · d^exponent over window"""

    coef: float
    exponent: float
    r2: float
    n: int
    window: Optional[Tuple[float, float]] = None

    def to_dict(self):
        return {
            "coef": self.coef,
            "exponent": self.exponent,
            "r2": self.r2,
            "n": self.n,
            "window": list(self.window) if self.window else None,
        }


def linear_fit(x, y):
    """
    Ordinary least squares y ≈ intercept + slope·x

    Returns:
        tuple: (slope, intercept, r2)
    """
    x = np.asarray(x, dtype=float).reshape(-1, 1)
    y = np.asarray(y, dtype=float)
    model = LinearRegression().fit(x, y)
    return float(model.coef_[0]), float(model.intercept_), float(model.score(x, y))


def log_log_fit(d, r, window=None):
    d = np.asarray(d, dtype=float)
    r = np.asarray(r, dtype=float)
    ok = (d > 0) & (r > 0) & np.isfinite(d) & np.isfinite(r)
    if ok.sum() < 2:
        raise WindowError(f"log-log fit needs at least 2 positive points, got {int(ok.sum())}")
    slope, intercept, r2 = linear_fit(np.log(d[ok]), np.log(r[ok]))
    return PowerLawFit(
        coef=float(np.exp(intercept)), exponent=slope, r2=r2, n=int(ok.sum()), window=window
    )


def decade_windows(d_min=1e-10, d_max=1.0):
    """Decade windows [10^(k-1), 10^k] and their half-decade shifts inside [d_min, d_max]"""
    windows = []
    hi = d_max
    while hi / 10.0 >= d_min:
        windows.append((hi / 10.0, hi))
        shifted = hi / np.sqrt(10.0)
        if shifted / 10.0 >= d_min:
            windows.append((shifted / 10.0, shifted))
        hi /= 10.0
    return windows


def dyadic_windows(k_min, k_max):
    """Windows [2^-k, 2^(-k+4)], widest first"""
    return [(2.0**-k, 2.0 ** (-k + 4)) for k in range(k_min, k_max + 1)]


def best_window_fit(d, r, windows, min_points=MIN_POINTS):
    """
    Log-log fit on every window with enough usable points, keeping the highest R²

    Ties are resolved in favour of the earlier (wider) window.
    """
    d = np.asarray(d, dtype=float)
    r = np.asarray(r, dtype=float)
    best = None
    for lo, hi in windows:
        mask = (d >= lo) & (d <= hi) & (r > 0) & np.isfinite(r)
        if mask.sum() < min_points:
            continue
        fit = log_log_fit(d[mask], r[mask], window=(float(lo), float(hi)))
        if best is None or fit.r2 > best.r2 + 1e-12:
            best = fit
    if best is None:
        raise WindowError(f"no window holds {min_points} usable points")
    return best


def local_intercept(x, ratio, min_points=16, k_min=2, k_max=40):
    """
    Intercept of ratio ≈ c0 + c1·x on the narrowest dyadic window (0, 2^-k] near x = 0

    Used for the linear coefficients α′ (ratio y/x) and α (ratio y/(1-x)).
    """
    x = np.asarray(x, dtype=float)
    ratio = np.asarray(ratio, dtype=float)
    chosen = None
    for k in range(k_min, k_max + 1):
        mask = (x > 0) & (x <= 2.0**-k) & np.isfinite(ratio)
        if mask.sum() < min_points:
            break
        chosen = (k, mask)
    if chosen is None:
        raise WindowError(f"fewer than {min_points} points near the boundary")
    k, mask = chosen
    _, intercept, _ = linear_fit(x[mask], ratio[mask])
    return intercept, (0.0, 2.0**-k), int(mask.sum())
