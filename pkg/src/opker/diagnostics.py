"""Empirical validation of the probabilistic machinery: eigenvalue left-tail
bounds, trace concentration, fourth-moment ratios, and the hypercube
(Assouad-style) lower-bound quantities with their KL/TV bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .estimators import sample_normal_matrix
from .models import ForwardModel, InputEnsemble, forward_norm_sq_batch, kernel_mode_rep, \
    sample_input_batch
from .spectral import EigenSystem, KernelFunction, EXPONENTIAL, POLYNOMIAL

GAUSSIAN_LINEAR_KAPPA = 3.0


@dataclass(frozen=True)
class TailBoundReport:
    """One Monte Carlo check of an analytic probability bound."""

    event: str  # 'smallest-eigenvalue' | 'all-eigenvalues' | 'trace'
    n: int
    m_samples: int
    kappa: float
    trials: int
    analytic_bound: float
    empirical_probability: float
    lambda_source: str = "exact"
    lambdas: np.ndarray | None = None

    @property
    def clamped_bound(self) -> float:
        return min(1.0, self.analytic_bound)

    @property
    def binomial_se(self) -> float:
        p = self.empirical_probability
        return math.sqrt(max(p * (1.0 - p), 1.0 / self.trials) / self.trials)

    def respects_bound(self, n_se: float = 3.0) -> bool:
        return self.empirical_probability <= self.analytic_bound + n_se * self.binomial_se


def left_tail_bound(lambdas: np.ndarray, n: int, m_samples: int, kappa: float,
                    epsilon: float = 1.0) -> float:
    """Bound on P{lambda_min(A_{n,M}) <= (3 - eps) lambda_n / 8}:

    kappa*lambda_1^2/M
    + exp(n log(20(lambda_1 + 1)/lambda_n) - eps*M*lambda_n/(4 kappa (lambda_n + lambda_1))).

    May exceed 1 (vacuous regime); callers clamp for display only.
    """
    if n < 1 or m_samples < 1:
        raise ValueError("n and M must be >= 1")
    if kappa < 1.0:
        raise ValueError(f"kappa must be >= 1, got {kappa}")
    if not 0.0 < epsilon < 3.0:
        raise ValueError(f"epsilon must lie in (0, 3), got {epsilon}")
    lam = np.asarray(lambdas, dtype=np.float64)
    lam1, lamn = float(lam[0]), float(lam[n - 1])
    exponent = n * math.log(20.0 * (lam1 + 1.0) / lamn) \
        - epsilon * m_samples * lamn / (4.0 * kappa * (lamn + lam1))
    return kappa * lam1**2 / m_samples + math.exp(min(exponent, 700.0))


def left_tail_bound_all(lambdas: np.ndarray, n: int, m_samples: int, kappa: float) -> float:
    """Union bound on P{exists k <= n with lambda_k(A_{n,M}) <= lambda_k/4}:

    n*kappa*lambda_1^2/M
    + sum_k exp(k log(20(lambda_1 + 1)/lambda_k) - M lambda_k/(4 kappa (lambda_k + lambda_1))).
    """
    if n < 1 or m_samples < 1:
        raise ValueError("n and M must be >= 1")
    if kappa < 1.0:
        raise ValueError(f"kappa must be >= 1, got {kappa}")
    lam = np.asarray(lambdas, dtype=np.float64)
    lam1 = float(lam[0])
    total = n * kappa * lam1**2 / m_samples
    for k in range(1, n + 1):
        lamk = float(lam[k - 1])
        exponent = k * math.log(20.0 * (lam1 + 1.0) / lamk) \
            - m_samples * lamk / (4.0 * kappa * (lamk + lam1))
        total += math.exp(min(exponent, 700.0))
    return total


def _cutoff_violated(a: np.ndarray, lambdas: np.ndarray, n: int, decay_kind: str) -> bool:
    evals = np.linalg.eigvalsh(a)[::-1]
    if decay_kind == POLYNOMIAL:
        return bool(evals[-1] <= lambdas[n - 1] / 4.0)
    if decay_kind == EXPONENTIAL:
        return bool(np.any(evals <= lambdas[:n] / 4.0))
    raise ValueError(f"unknown decay kind {decay_kind!r}")


def mc_left_tail(model: ForwardModel, ens: InputEnsemble, eig: EigenSystem, decay_kind: str,
                 n: int, m_samples: int, trials: int, rng: np.random.Generator,
                 kappa: float = GAUSSIAN_LINEAR_KAPPA) -> TailBoundReport:
    """Empirical frequency of the tamed-estimator cutoff event vs the bound.

    Polynomial decay uses the smallest-eigenvalue bound at eps = 1 (threshold
    lambda_n/4); exponential decay uses the all-eigenvalues union bound.
    """
    if trials < 100:
        raise ValueError(f"need at least 100 trials, got {trials}")
    lam = eig.eigenvalues
    hits = 0
    for t in range(trials):
        a = sample_normal_matrix(model, ens, eig, n, m_samples, rng)
        if _cutoff_violated(a, lam, n, decay_kind):
            hits += 1
    if decay_kind == POLYNOMIAL:
        bound = left_tail_bound(lam, n, m_samples, kappa, epsilon=1.0)
        event = "smallest-eigenvalue"
    else:
        bound = left_tail_bound_all(lam, n, m_samples, kappa)
        event = "all-eigenvalues"
    return TailBoundReport(event, n, m_samples, kappa, trials, bound, hits / trials,
                           lambdas=lam[:n].copy())


def trace_tail_check(model: ForwardModel, ens: InputEnsemble, eig: EigenSystem, n: int,
                     m_samples: int, trials: int, rng: np.random.Generator,
                     kappa: float = GAUSSIAN_LINEAR_KAPPA) -> TailBoundReport:
    """Frequency of {Tr(A_{n,M})/n >= lambda_1 + 1} against kappa*lambda_1^2/M."""
    if trials < 100:
        raise ValueError(f"need at least 100 trials, got {trials}")
    lam1 = float(eig.eigenvalues[0])
    hits = 0
    for t in range(trials):
        a = sample_normal_matrix(model, ens, eig, n, m_samples, rng)
        if np.trace(a) / n >= lam1 + 1.0:
            hits += 1
    bound = kappa * lam1**2 / m_samples
    return TailBoundReport("trace", n, m_samples, kappa, trials, bound, hits / trials,
                           lambdas=eig.eigenvalues[:n].copy())


class MomentRatio(NamedTuple):
    kappa_hat: float
    stderr: float


def fourth_moment_ratio(model: ForwardModel, ens: InputEnsemble, phi: KernelFunction,
                        eig: EigenSystem, trials: int, rng: np.random.Generator,
                        chunk: int = 4096) -> MomentRatio:
    """Monte Carlo E||R_phi[u]||^4 / (E||R_phi[u]||^2)^2 with a jackknife SE.

    The ratio is bounded by 3 for Gaussian inputs with operators linear in u,
    with equality when the forward image concentrates on one input mode.
    """
    if trials < 1000:
        raise ValueError(f"need at least 1000 trials, got {trials}")
    rep = kernel_mode_rep(model, phi, ens, eig=eig)
    sq = np.empty(trials)
    for lo in range(0, trials, chunk):
        hi = min(lo + chunk, trials)
        coeffs = sample_input_batch(ens, rng, hi - lo)
        sq[lo:hi] = forward_norm_sq_batch(model, ens, rep, coeffs)
    s2, s4 = float(np.sum(sq)), float(np.sum(sq**2))
    if s2 <= 0.0:
        raise ValueError("forward image has zero second moment (kernel in the null space?)")
    t = trials
    kappa_hat = (s4 / t) / (s2 / t) ** 2
    loo = ((s4 - sq**2) / (t - 1)) / ((s2 - sq) / (t - 1)) ** 2
    se = math.sqrt((t - 1) / t * float(np.sum((loo - np.mean(loo)) ** 2)))
    return MomentRatio(kappa_hat, se)


@dataclass(frozen=True)
class AssouadSet:
    """All 2^{l_m} kernels with binary coefficients on a window of modes.

    Member k-th coefficients lie in {0, L * lambda_k^{beta/2} / sqrt(l_m)}
    for k in [n_m, n_m + l_m - 1] (1-based), zero elsewhere.
    """

    n_m: int
    l_m: int
    beta: float
    radius: float
    eigenvalues: np.ndarray
    members: np.ndarray = field(repr=False)  # (2**l_m, K)

    @property
    def size(self) -> int:
        return int(self.members.shape[0])

    def member(self, index: int) -> KernelFunction:
        return KernelFunction(self.members[index])

    def flip(self, index: int, k: int) -> int:
        """Index of the member with coordinate k (1-based) flipped."""
        offset = k - self.n_m
        if not 0 <= offset < self.l_m:
            raise IndexError(f"coordinate {k} outside the window")
        return index ^ (1 << offset)


def assouad_set(eig: EigenSystem, beta: float, radius: float, n_m: int, l_m: int) -> AssouadSet:
    if l_m < 1 or l_m > 16:
        raise ValueError(f"window length must lie in [1, 16] (enumeration cap), got {l_m}")
    if n_m < 1 or n_m + l_m - 1 > eig.truncation:
        raise ValueError(
            f"window [{n_m}, {n_m + l_m - 1}] exceeds the eigensystem truncation "
            f"{eig.truncation}"
        )
    lam = eig.eigenvalues
    amplitude = radius * lam[n_m - 1: n_m - 1 + l_m] ** (beta / 2.0) / math.sqrt(l_m)
    count = 1 << l_m
    members = np.zeros((count, eig.truncation))
    for idx in range(count):
        bits = (idx >> np.arange(l_m)) & 1
        members[idx, n_m - 1: n_m - 1 + l_m] = bits * amplitude
    return AssouadSet(n_m, l_m, beta, radius, lam, members)


class FlipBound(NamedTuple):
    kl: float
    tv: float


def kl_flip_bound(k: int, beta: float, radius: float, l_m: int, lambdas: np.ndarray,
                  tau: float, m_samples: int) -> FlipBound:
    """KL and TV bounds between the sample laws of two single-flip neighbours.

    KL <= (tau M / 2) L^2 lambda_k^{beta+1} / l_m, and the induced total
    variation bound is half the square root of twice... precisely
    tv = sqrt(kl / 2) <= (1/2) sqrt(tau M L^2 lambda_k^{beta+1} / l_m).
    For Gaussian noise the KL expression is an identity (mean-shift KL).
    """
    lam = np.asarray(lambdas, dtype=np.float64)
    if not 1 <= k <= lam.size:
        raise IndexError(f"coordinate {k} outside the spectrum")
    kl = 0.5 * tau * m_samples * radius**2 * lam[k - 1] ** (beta + 1.0) / l_m
    return FlipBound(kl, 0.5 * math.sqrt(tau * m_samples * radius**2
                                         * lam[k - 1] ** (beta + 1.0) / l_m))


def mc_flip_kl(model: ForwardModel, ens: InputEnsemble, eig: EigenSystem, k: int,
               beta: float, radius: float, l_m: int, tau: float, m_samples: int,
               trials: int, rng: np.random.Generator) -> float:
    """Monte Carlo plug-in of the Gaussian-noise KL between flip neighbours.

    Per-sample mean-shift KL contribution is tau/2 * ||R_delta[u]||_Y^2 with
    delta the single-coordinate difference kernel; the plug-in averages the
    forward norms over fresh input draws and scales by tau*M/2.
    """
    delta = np.zeros(eig.truncation)
    delta[k - 1] = radius * eig.eigenvalues[k - 1] ** (beta / 2.0) / math.sqrt(l_m)
    rep = kernel_mode_rep(model, KernelFunction(delta), ens, eig=eig)
    coeffs = sample_input_batch(ens, rng, trials)
    norms = forward_norm_sq_batch(model, ens, rep, coeffs)
    return 0.5 * tau * m_samples * float(np.mean(norms))


@dataclass(frozen=True)
class LowerRateCertificate:
    """Window choice and rate value for the hypercube lower-bound argument.

    verify_lhs is tau*M*L^2*lambda_{n_m}^{beta+1}/l_m evaluated on the upper
    envelope; verified means it is <= 1, which keeps the average test error
    of the flip hypotheses at least 1/2.
    """

    n_m: int
    l_m: int
    rate_value: float
    verify_lhs: float
    verified: bool
    below_regime: bool


def lower_rate_certificate(decay, beta: float, radius: float, tau: float,
                           m_samples: int) -> LowerRateCertificate:
    """Window sizes for the lower-bound construction at sample count M.

    Polynomial decay: l_m = n_m = ceil((tau M L^2 b^(beta+1))^(1/(2 beta r +
    2 r + 1))).  Exponential decay: l_m = 1, n_m = ceil(log(tau M L^2
    b^(beta+1)) / ((beta + 1) r)).  The rate value is
    L^2/l_m * sum over the window of the envelope eigenvalue to the beta.
    """
    if beta <= 0.0 or radius <= 0.0 or tau <= 0.0 or m_samples < 1:
        raise ValueError("need beta > 0, radius > 0, tau > 0 and M >= 1")
    base = tau * m_samples * radius**2 * decay.b ** (beta + 1.0)
    below = False
    if decay.kind == POLYNOMIAL:
        raw = base ** (1.0 / (2.0 * beta * decay.r + 2.0 * decay.r + 1.0))
        n_m = math.ceil(raw - 1e-12)
        if n_m < 1:
            below, n_m = True, 1
        l_m = n_m
    else:
        if base <= 1.0:
            below, n_m = True, 1
        else:
            n_m = math.ceil(math.log(base) / ((beta + 1.0) * decay.r) - 1e-12)
            if n_m < 1:
                below, n_m = True, 1
        l_m = 1
    ks = np.arange(n_m, n_m + l_m)
    lam_env = decay.b * decay.profile(ks)
    rate_value = radius**2 / l_m * float(np.sum(lam_env**beta))
    verify_lhs = tau * m_samples * radius**2 * float(lam_env[0] ** (beta + 1.0)) / l_m
    return LowerRateCertificate(n_m, l_m, rate_value, verify_lhs,
                                verified=bool(verify_lhs <= 1.0 + 1e-12) and not below,
                                below_regime=below)
