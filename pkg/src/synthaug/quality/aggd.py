"""Moment matching for (asymmetric) generalized Gaussian distributions.

The shape parameter solves rho(alpha) = R_hat, where

    rho(alpha) = Gamma(2/alpha)^2 / (Gamma(1/alpha) * Gamma(3/alpha))

is strictly increasing in alpha, and R_hat is the empirical moment ratio
(mean |x|)^2 / mean(x^2) corrected for asymmetry by the left/right scale
ratio. Since no closed-form inverse exists, alpha is found by golden-section
search over log-alpha.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from ..exceptions import DegenerateInputError

ALPHA_MIN = 0.2
ALPHA_MAX = 10.0
_LOG_TOL = 1e-4
_MIN_SAMPLES = 100


@dataclass(frozen=True, slots=True)
class AggdParams:
    alpha: float
    sigma_left: float
    sigma_right: float
    mean_offset: float

    def __post_init__(self):
        vals = (self.alpha, self.sigma_left, self.sigma_right, self.mean_offset)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite AGGD parameters: {vals}")
        if not (ALPHA_MIN <= self.alpha <= ALPHA_MAX):
            raise ValueError(f"alpha {self.alpha} outside [{ALPHA_MIN}, {ALPHA_MAX}]")
        if self.sigma_left <= 0 or self.sigma_right <= 0:
            raise ValueError("scale parameters must be positive")


def moment_ratio(alpha: float) -> float:
    """rho(alpha); computed via log-gamma for stability at small alpha."""
    a = float(alpha)
    return math.exp(2.0 * gammaln(2.0 / a) - gammaln(1.0 / a) - gammaln(3.0 / a))


def solve_alpha(target: float) -> float:
    """Invert rho by golden-section search on log-alpha (1e-4 ratio tolerance)."""
    lo_val, hi_val = moment_ratio(ALPHA_MIN), moment_ratio(ALPHA_MAX)
    if target <= lo_val:
        return ALPHA_MIN
    if target >= hi_val:
        return ALPHA_MAX

    def residual(t: float) -> float:
        return (moment_ratio(math.exp(t)) - target) ** 2

    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    lo, hi = math.log(ALPHA_MIN), math.log(ALPHA_MAX)
    x1 = hi - inv_phi * (hi - lo)
    x2 = lo + inv_phi * (hi - lo)
    f1, f2 = residual(x1), residual(x2)
    while hi - lo > _LOG_TOL:
        if f1 < f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - inv_phi * (hi - lo)
            f1 = residual(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + inv_phi * (hi - lo)
            f2 = residual(x2)
    return math.exp((lo + hi) / 2.0)


def _check_samples(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size < _MIN_SAMPLES:
        raise ValueError(f"need at least {_MIN_SAMPLES} samples, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples contain non-finite values")
    if np.ptp(x) == 0.0:
        raise DegenerateInputError("samples have zero variance")
    return x


def fit_ggd(samples) -> tuple[float, float]:
    """Symmetric fit; returns (alpha, sigma_squared = mean square)."""
    x = _check_samples(samples)
    mean_sq = float(np.mean(x * x))
    ratio = float(np.mean(np.abs(x))) ** 2 / mean_sq
    return solve_alpha(ratio), mean_sq


def fit_aggd(samples) -> AggdParams:
    """Asymmetric fit of (alpha, sigma_left, sigma_right, mean_offset)."""
    x = _check_samples(samples)
    left = x[x < 0]
    right = x[x >= 0]
    if left.size == 0 or right.size == 0:
        raise DegenerateInputError("one-sided samples cannot be fit asymmetrically")
    sigma_l = float(np.sqrt(np.mean(left * left)))
    sigma_r = float(np.sqrt(np.mean(right * right)))
    if sigma_l == 0.0 or sigma_r == 0.0:
        raise DegenerateInputError("a side of the sample set has zero energy")

    gamma_hat = sigma_l / sigma_r
    r_hat = float(np.mean(np.abs(x))) ** 2 / float(np.mean(x * x))
    R_hat = (r_hat * (gamma_hat ** 3 + 1.0) * (gamma_hat + 1.0)
             / (gamma_hat ** 2 + 1.0) ** 2)
    alpha = solve_alpha(R_hat)

    # mean of the fitted AGGD: (sigma_r - sigma_l) * G(2/a)/G(1/a) * sqrt(G(1/a)/G(3/a))
    log_factor = (gammaln(2.0 / alpha) - 0.5 * gammaln(1.0 / alpha)
                  - 0.5 * gammaln(3.0 / alpha))
    mean_offset = (sigma_r - sigma_l) * math.exp(log_factor)
    return AggdParams(alpha=alpha, sigma_left=sigma_l, sigma_right=sigma_r,
                      mean_offset=mean_offset)
