"""
Special Functions
Modified Bessel function of the first kind by its ascending series, and the density ansatz
N(γ,δ)·e^(-γx)·x^δ·(1-x)^δ with its closed-form normalizer
"""

import math

import numpy as np
from scipy.special import gammaln, logsumexp

SERIES_TOL = 1e-12
MAX_TERMS = 2000


def log_bessel_iv(nu, z, tol=SERIES_TOL):
    """log I_ν(z) for ν ≥ 0, z > 0 from Σ (z/2)^(2m+ν) / (m! Γ(m+ν+1)), summed in log space"""
    if z <= 0.0:
        raise ValueError(f"z must be positive, got {z}")
    log_half = math.log(0.5 * z)
    m = np.arange(MAX_TERMS, dtype=float)
    log_terms = (2.0 * m + nu) * log_half - gammaln(m + 1.0) - gammaln(m + nu + 1.0)
    # terms peak near m ≈ z/2 and decay monotonically afterwards
    peak = int(np.argmax(log_terms))
    running = np.logaddexp.accumulate(log_terms)
    small = np.flatnonzero((m > peak) & (log_terms - running < math.log(tol)))
    stop = int(small[0]) + 1 if small.size else MAX_TERMS
    return float(logsumexp(log_terms[:stop]))


def bessel_iv(nu, z, tol=SERIES_TOL):
    return math.exp(log_bessel_iv(nu, z, tol))


def log_ansatz_normalizer(gamma, delta):
    """log N(γ,δ) with N = γ^(δ+½) e^(γ/2) / (√π Γ(1+δ) I_(δ+½)(γ/2))"""
    return (
        (delta + 0.5) * math.log(gamma)
        + 0.5 * gamma
        - 0.5 * math.log(math.pi)
        - float(gammaln(1.0 + delta))
        - log_bessel_iv(delta + 0.5, 0.5 * gamma)
    )


def ansatz_normalizer(gamma, delta):
    return math.exp(log_ansatz_normalizer(gamma, delta))


def ansatz_density(x, gamma, delta):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_body = -gamma * x + delta * (np.log(x) + np.log1p(-x))
    out = np.exp(log_ansatz_normalizer(gamma, delta) + log_body)
    return np.where((x <= 0.0) | (x >= 1.0), 0.0, out)
