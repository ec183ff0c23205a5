"""Observation-noise models on the discretization grid, with KL utilities.

Grid convention: the observation space pairs functions through the cell
measure 1/N.  ``sample_noise`` returns the cell-integrated white-noise
surrogate, i.e. the pairing of the noise field with the cell indicators, so
each entry has variance sigma^2/N.  When such a draw is added to signal
*values* on the grid it must first be divided by the cell measure (see
``estimators.simulate_dataset``); that keeps the weak-form pairing variance
at exactly sigma^2 * ||y||_Y^2, matching the second-moment contract the
estimator analysis relies on.

The KL helpers operate on the unit-scale coordinate distribution (Gaussian
with variance sigma^2 per component, or the unit logistic), independent of
any grid refinement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .errors import NumericError

GAUSSIAN = "gaussian"
LOGISTIC = "logistic"

LOGISTIC_SIGMA_SQ = math.pi**2 / 3.0
LOGISTIC_TAU = 25.0 / 6.0


@dataclass(frozen=True)
class NoiseModel:
    """Noise family plus its derived moment and KL-curvature constants.

    Gaussian of scale sigma: second moment sigma^2, tau = 1/sigma^2.
    Unit logistic: second moment pi^2/3, tau = 25/6.
    """

    kind: str
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in (GAUSSIAN, LOGISTIC):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.kind == GAUSSIAN and self.scale < 0.0:
            raise ValueError(f"gaussian scale must be >= 0, got {self.scale}")
        if self.kind == LOGISTIC and self.scale != 1.0:
            raise ValueError("the logistic noise model is unit-scale only")

    @classmethod
    def gaussian(cls, sigma: float) -> "NoiseModel":
        return cls(GAUSSIAN, sigma)

    @classmethod
    def logistic(cls) -> "NoiseModel":
        return cls(LOGISTIC, 1.0)

    @property
    def sigma_sq(self) -> float:
        return self.scale**2 if self.kind == GAUSSIAN else LOGISTIC_SIGMA_SQ

    @property
    def tau(self) -> float:
        if self.kind == GAUSSIAN:
            if self.scale == 0.0:
                raise ValueError("tau is undefined for zero-scale noise")
            return 1.0 / self.scale**2
        return LOGISTIC_TAU


def sample_noise(model: NoiseModel, n: int, rng: np.random.Generator,
                 size: int | None = None) -> np.ndarray:
    """Cell-integrated noise draws of length n (variance sigma^2/n per cell).

    Gaussian: independent N(0, sigma^2/n).  Logistic: independent unit
    logistic scaled by 1/sqrt(n), so both kinds honour the same grid
    second-moment contract.  Pass size for a (size, n) batch.
    """
    if n < 1:
        raise ValueError(f"grid size must be >= 1, got {n}")
    shape = (n,) if size is None else (size, n)
    if model.kind == GAUSSIAN:
        if model.scale == 0.0:
            return np.zeros(shape)
        return rng.normal(0.0, model.scale / math.sqrt(n), shape)
    return rng.logistic(0.0, 1.0, shape) / math.sqrt(n)


def kl_shift_bound(model: NoiseModel, v: np.ndarray) -> float:
    """Curvature bound (tau/2)||v||^2 on KL(p, p(. + v))."""
    v = np.asarray(v, dtype=np.float64)
    return 0.5 * model.tau * float(np.sum(v**2))


def _logistic_log_pdf(x: np.ndarray) -> np.ndarray:
    ax = np.abs(x)
    return -ax - 2.0 * np.log1p(np.exp(-ax))


def _logistic_pdf(x: np.ndarray) -> np.ndarray:
    return np.exp(_logistic_log_pdf(x))


def _logistic_kl_1d(v: float, rel_tol: float = 1e-10) -> float:
    if v == 0.0:
        return 0.0

    def integrand(x):
        return (_logistic_log_pdf(x) - _logistic_log_pdf(x + v)) * _logistic_pdf(x)

    value, err = integrate.quad(integrand, -np.inf, np.inf, epsabs=0.0, epsrel=rel_tol,
                                limit=200)
    if not np.isfinite(value) or (value > 0 and err > 1e-8 * max(abs(value), 1e-300)):
        raise NumericError(f"logistic KL quadrature did not converge for shift {v}")
    return float(value)


def kl_shift_exact(model: NoiseModel, v: np.ndarray) -> float:
    """Exact KL(p, p(. + v)) of the N-dimensional product noise density.

    Gaussian: ||v||^2 / (2 sigma^2), the mean-shift identity (equal to
    kl_shift_bound).  Logistic: per-coordinate adaptive quadrature on the
    real line, summed over coordinates.
    """
    v = np.atleast_1d(np.asarray(v, dtype=np.float64))
    if model.kind == GAUSSIAN:
        if model.scale == 0.0:
            raise ValueError("KL is undefined for zero-scale noise")
        return float(np.sum(v**2)) / (2.0 * model.scale**2)
    return float(sum(_logistic_kl_1d(float(vi)) for vi in v))
