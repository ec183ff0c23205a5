"""Spectral decay profiles, eigensystems, Sobolev classes and rate formulas.

Everything here is finite-dimensional: eigensystems are truncated at K modes
(default 512) and kernels are coefficient vectors in the eigenbasis of the
normal operator.  Rate and dimension formulas are evaluated from the decay
envelope parameters (kind, r, a, b).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

DEFAULT_TRUNCATION = 512

POLYNOMIAL = "polynomial"
EXPONENTIAL = "exponential"


class DimensionWarning(UserWarning):
    """Raised when the dimension formula lands below 1 (sample count too small)."""


@dataclass(frozen=True)
class SpectralDecay:
    """Two-sided eigenvalue envelope a*g(k) <= lambda_k <= b*g(k).

    kind 'polynomial' uses g(k) = k**(-2r) and requires r > 1/4; kind
    'exponential' uses g(k) = exp(-r*k) and requires r > 0.
    """

    kind: str
    r: float
    a: float = 1.0
    b: float = 1.0

    def __post_init__(self):
        if self.kind not in (POLYNOMIAL, EXPONENTIAL):
            raise ValueError(f"unknown decay kind {self.kind!r}")
        if self.kind == POLYNOMIAL and not self.r > 0.25:
            raise ValueError(f"polynomial decay requires r > 1/4, got r={self.r}")
        if self.kind == EXPONENTIAL and not self.r > 0.0:
            raise ValueError(f"exponential decay requires r > 0, got r={self.r}")
        if not (0.0 < self.a <= self.b):
            raise ValueError(f"envelope constants need 0 < a <= b, got a={self.a}, b={self.b}")

    def profile(self, k) -> np.ndarray:
        """g(k) for index array k (1-based)."""
        k = np.asarray(k, dtype=np.float64)
        if self.kind == POLYNOMIAL:
            return k ** (-2.0 * self.r)
        return np.exp(-self.r * k)


def eigenvalue_envelope(decay: SpectralDecay, k: int) -> tuple[float, float]:
    """Lower and upper admissible eigenvalue at index k (1-based)."""
    if k < 1:
        raise IndexError(f"eigenvalue index must be >= 1, got {k}")
    g = float(decay.profile(k))
    return decay.a * g, decay.b * g


@dataclass(frozen=True)
class FourierModeBasis:
    """Analytic eigenbasis of the periodic integral model.

    Index k=2j-1 is sqrt(2)*cos(2*pi*j*s), k=2j is sqrt(2)*sin(2*pi*j*s); the
    constant mode (the null space of the normal operator) is excluded.  Ties
    inside an eigenvalue pair are broken cosine-first.
    """

    size: int

    @property
    def n_pairs(self) -> int:
        return (self.size + 1) // 2

    def frequencies(self) -> np.ndarray:
        """Frequency j of each basis index (1-based, length size)."""
        return (np.arange(self.size) // 2) + 1

    def is_sine(self) -> np.ndarray:
        return (np.arange(self.size) % 2) == 1

    def evaluate(self, s) -> np.ndarray:
        """Basis values at points s, shape (len(s), size)."""
        s = np.atleast_1d(np.asarray(s, dtype=np.float64))
        freq = self.frequencies()
        angles = 2.0 * np.pi * np.outer(s, freq)
        out = np.where(self.is_sine()[None, :], np.sin(angles), np.cos(angles))
        return math.sqrt(2.0) * out


@dataclass(frozen=True)
class GridBasis:
    """Eigenfunctions tabulated on a quadrature grid with density weights.

    nodes/weights define the quadrature for plain ds integrals; density holds
    the exploration-measure density at the nodes, so L2_rho inner products of
    tabulated functions f, g are sum(f * g * density * weights).
    """

    nodes: np.ndarray
    weights: np.ndarray
    density: np.ndarray
    values: np.ndarray  # (len(nodes), size)

    @property
    def size(self) -> int:
        return self.values.shape[1]

    def evaluate(self, s) -> np.ndarray:
        s = np.atleast_1d(np.asarray(s, dtype=np.float64))
        idx = _match_nodes(self.nodes, s)
        return self.values[idx]


def _match_nodes(nodes: np.ndarray, s: np.ndarray) -> np.ndarray:
    idx = np.searchsorted(nodes, s)
    idx = np.clip(idx, 0, len(nodes) - 1)
    left = np.clip(idx - 1, 0, len(nodes) - 1)
    idx = np.where(np.abs(nodes[left] - s) < np.abs(nodes[idx] - s), left, idx)
    if not np.allclose(nodes[idx], s, atol=1e-12):
        raise ValueError("tabulated basis can only be evaluated at its quadrature nodes")
    return idx


@dataclass(frozen=True)
class EigenSystem:
    """Ordered positive eigenvalues plus an eigenfunction representation."""

    eigenvalues: np.ndarray
    basis: FourierModeBasis | GridBasis

    def __post_init__(self):
        lam = np.asarray(self.eigenvalues, dtype=np.float64)
        object.__setattr__(self, "eigenvalues", lam)
        if lam.ndim != 1 or lam.size == 0:
            raise ValueError("eigenvalues must be a non-empty 1-d sequence")
        if not np.all(lam > 0.0):
            raise ValueError("eigenvalues must be strictly positive")
        if np.any(np.diff(lam) > 0.0):
            raise ValueError("eigenvalues must be non-increasing")
        if self.basis.size < lam.size:
            raise ValueError("basis provides fewer modes than eigenvalues")

    @property
    def truncation(self) -> int:
        return int(self.eigenvalues.size)

    def gram(self) -> np.ndarray:
        """Quadrature Gram matrix <psi_j, psi_k>_rho of the stored basis."""
        if isinstance(self.basis, GridBasis):
            v = self.basis.values[:, : self.truncation]
            w = self.basis.density * self.basis.weights
            return v.T @ (v * w[:, None])
        nodes = midpoint_grid(max(1024, 4 * self.truncation + 2))
        v = self.basis.evaluate(nodes)[:, : self.truncation]
        return v.T @ v / len(nodes)


def midpoint_grid(n: int) -> np.ndarray:
    """Midpoints of n equal cells of [0, 1]."""
    return (np.arange(n) + 0.5) / n


def synthetic_eigensystem(decay: SpectralDecay, k_trunc: int = DEFAULT_TRUNCATION,
                          envelope: str = "upper") -> EigenSystem:
    """Eigen system sitting exactly on one envelope, with the Fourier basis.

    Useful for sampling Sobolev-class kernels against a prescribed spectrum
    without going through a forward model.
    """
    c = decay.b if envelope == "upper" else decay.a
    lam = c * decay.profile(np.arange(1, k_trunc + 1))
    return EigenSystem(lam, FourierModeBasis(k_trunc))


@dataclass(frozen=True)
class SobolevClass:
    """Smoothness ball: sum_k lambda_k**(-beta) * theta_k**2 <= L**2."""

    beta: float
    radius: float

    def __post_init__(self):
        if self.beta < 0.0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if self.radius <= 0.0:
            raise ValueError(f"radius must be > 0, got {self.radius}")


@dataclass(frozen=True)
class KernelFunction:
    """A kernel as coefficients in the eigenbasis of the normal operator."""

    coeffs: np.ndarray = field()

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.float64)
        object.__setattr__(self, "coeffs", c)
        if c.ndim != 1 or c.size == 0:
            raise ValueError("kernel coefficients must be a non-empty 1-d sequence")
        if not np.all(np.isfinite(c)):
            raise ValueError("kernel coefficients must be finite")

    @property
    def truncation(self) -> int:
        return int(self.coeffs.size)

    def l2_norm_sq(self) -> float:
        """Squared L2_rho norm (Parseval in the eigenbasis)."""
        return float(np.dot(self.coeffs, self.coeffs))

    def values_on(self, eig: EigenSystem, s) -> np.ndarray:
        """Point values of the kernel through the eigensystem basis."""
        _check_match(self, eig)
        return eig.basis.evaluate(s)[:, : self.truncation] @ self.coeffs


def _check_match(phi: KernelFunction, eig: EigenSystem):
    if phi.truncation != eig.truncation:
        raise ValueError(
            f"kernel has {phi.truncation} coefficients but eigensystem holds "
            f"{eig.truncation} modes"
        )


def sobolev_norm_sq(phi: KernelFunction, beta: float, eig: EigenSystem) -> float:
    """sum_k lambda_k**(-beta) theta_k**2, evaluated overflow-safely."""
    _check_match(phi, eig)
    scaled = phi.coeffs * eig.eigenvalues ** (-beta / 2.0)
    return float(np.dot(scaled, scaled))


def tail_energy(phi: KernelFunction, n: int) -> float:
    """Energy above mode n (inclusive, 1-based): sum_{k>=n} theta_k**2."""
    if not 1 <= n <= phi.truncation:
        raise IndexError(f"tail index must lie in [1, {phi.truncation}], got {n}")
    tail = phi.coeffs[n - 1:]
    return float(np.dot(tail, tail))


def sample_kernel(sclass: SobolevClass, eig: EigenSystem, profile: str = "near-boundary",
                  delta: float = 0.05, rng: np.random.Generator | None = None) -> KernelFunction:
    """Draw a kernel from the Sobolev ball.

    Coefficients are theta_k = L * lambda_k**(beta/2) * c_k with the unit
    vector c depending on the profile:

    * 'boundary':       c_k = sqrt(6)/(pi*k), so the class norm approaches L
                        from below as K grows (sum 6/(pi*k)**2 -> 1),
    * 'near-boundary':  c_k proportional to k**(-1/2-delta), normalized; the
                        default, whose tail energy shrinks only slowly so the
                        kernel stays nearly extremal at every truncation level,
    * 'random':         signed standard normal draws, normalized (needs rng).
    """
    k = np.arange(1, eig.truncation + 1, dtype=np.float64)
    if profile == "boundary":
        c = math.sqrt(6.0) / (math.pi * k)
    elif profile == "near-boundary":
        if delta <= 0.0:
            raise ValueError(f"near-boundary profile needs delta > 0, got {delta}")
        c = k ** (-0.5 - delta)
        c /= math.sqrt(float(np.dot(c, c)))
    elif profile == "random":
        if rng is None:
            raise ValueError("random profile requires an rng")
        c = rng.standard_normal(eig.truncation)
        c /= math.sqrt(float(np.dot(c, c)))
    else:
        raise ValueError(f"unknown kernel profile {profile!r}")
    theta = sclass.radius * eig.eigenvalues ** (sclass.beta / 2.0) * c
    phi = KernelFunction(theta)
    norm_sq = sobolev_norm_sq(phi, sclass.beta, eig)
    if norm_sq > sclass.radius**2 * (1.0 + 1e-9):
        raise AssertionError("sampled kernel left the Sobolev ball")
    return phi


def optimal_dimension(decay: SpectralDecay, beta: float, radius: float, sigma: float,
                      m_samples: int, k_max: int | None = None) -> int:
    """Projection dimension balancing bias and variance at sample count M.

    Polynomial decay: ceil(((a * b**beta * beta * r * L**2) /
    (2 * sigma**2 * (1 + 2r)) * M) ** (1 / (2*beta*r + 2*r + 1))).
    Exponential decay: floor(log(c1**-1 * b**beta * beta * L**2 * M) /
    (beta*r + r)) with c1 = 4*sigma**2*e**r / (a*(e**r - 1)); here n and n+1
    are treated as one continuous variable, matching the trade-off function
    being minimized.  The result is clamped to [1, k_max].
    """
    if m_samples < 1:
        raise ValueError(f"sample count must be >= 1, got {m_samples}")
    if beta <= 0.0:
        raise ValueError(f"beta must be > 0, got {beta}")
    if sigma <= 0.0:
        raise ValueError(f"sigma must be > 0 for the dimension formula, got {sigma}")
    l_sq = radius**2
    if decay.kind == POLYNOMIAL:
        num = decay.a * decay.b**beta * beta * decay.r * l_sq
        den = 2.0 * sigma**2 * (1.0 + 2.0 * decay.r)
        raw = (num / den * m_samples) ** (1.0 / (2.0 * beta * decay.r + 2.0 * decay.r + 1.0))
        n = math.ceil(raw - 1e-12)
    else:
        c1 = 4.0 * sigma**2 * math.exp(decay.r) / (decay.a * (math.exp(decay.r) - 1.0))
        arg = decay.b**beta * beta * l_sq * m_samples / c1
        if arg <= 1.0:
            n = 0
        else:
            n = math.floor(math.log(arg) / (beta * decay.r + decay.r) + 1e-12)
    if n < 1:
        warnings.warn(
            f"dimension formula gave n={n} at M={m_samples}; sample count is below "
            "the asymptotic regime, clamping to 1",
            DimensionWarning,
            stacklevel=2,
        )
        n = 1
    if k_max is not None:
        n = min(n, k_max)
    return int(n)


def theoretical_exponent(decay: SpectralDecay, beta: float) -> float:
    """Mean-squared-error decay exponent in the sample count.

    2*beta*r / (2*beta*r + 2*r + 1) for polynomial decay; beta / (beta + 1)
    for exponential decay (independent of r).
    """
    if beta <= 0.0:
        raise ValueError(f"beta must be > 0, got {beta}")
    if decay.kind == POLYNOMIAL:
        br = 2.0 * beta * decay.r
        return br / (br + 2.0 * decay.r + 1.0)
    return beta / (beta + 1.0)
