"""Empirical normal systems, the tamed least-squares estimator, baselines,
losses and oracle error metrics.

The tamed solver inverts the empirical normal matrix only on the
well-conditioning event

* polynomial decay:   lambda_min(A) > lambda_n / 4,
* exponential decay:  lambda_k(A) > lambda_k / 4 for every k <= n
  (sorted eigenvalues compared index by index),

and returns the zero vector otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import linalg as sla

from . import _accel
from .errors import NumericError
from .models import (
    ForwardModel,
    InputEnsemble,
    KernelModeRep,
    basis_forward_batch,
    check_pairing,
    forward_signal_batch,
    gram_identity,
    kernel_mode_rep,
    sample_input_batch,
)
from .noise import NoiseModel, sample_noise
from .spectral import EigenSystem, KernelFunction, EXPONENTIAL, POLYNOMIAL

ASSEMBLY_CHUNK = 256


@dataclass(frozen=True)
class Dataset:
    """M sampled input-output pairs on a shared output grid.

    input_coeffs holds the Fourier coefficient draws (M, K_u); outputs holds
    the observed grid functions (M, N), i.e. signal values plus the
    cell-averaged noise.  true_kernel is optional and only used by oracle
    diagnostics.
    """

    model: ForwardModel
    ensemble: InputEnsemble
    noise: NoiseModel
    input_coeffs: np.ndarray
    outputs: np.ndarray
    true_kernel: KernelFunction | None = None
    seed_path: str = ""

    def __post_init__(self):
        if self.input_coeffs.ndim != 2 or self.outputs.ndim != 2:
            raise ValueError("input coefficients and outputs must be 2-d arrays")
        if self.input_coeffs.shape[0] != self.outputs.shape[0]:
            raise ValueError("inputs and outputs disagree on the sample count")
        if self.input_coeffs.shape[0] < 1:
            raise ValueError("a dataset needs at least one sample")

    @property
    def m_samples(self) -> int:
        return int(self.input_coeffs.shape[0])

    @property
    def n_grid(self) -> int:
        return int(self.outputs.shape[1])


def simulate_dataset(model: ForwardModel, ens: InputEnsemble, noise: NoiseModel,
                     eig: EigenSystem, true_kernel: KernelFunction, m_samples: int,
                     n_grid: int, rng: np.random.Generator, seed_path: str = "") -> Dataset:
    """Draw inputs, push them through the true kernel and add grid noise.

    The noise draw is cell-integrated (variance sigma^2/N per cell), so it is
    divided by the cell measure 1/N before being added to the signal values;
    the resulting outputs pair against grid functions with the exact
    second-moment contract sigma^2 ||y||_Y^2.
    """
    check_pairing(model, ens)
    if n_grid < 8 * ens.n_modes:
        raise ValueError(f"grid size {n_grid} too small for {ens.n_modes} input modes")
    coeffs = sample_input_batch(ens, rng, m_samples)
    rep = kernel_mode_rep(model, true_kernel, ens, eig=eig)
    signal = forward_signal_batch(model, ens, rep, coeffs, n_grid)
    eps = sample_noise(noise, n_grid, rng, size=m_samples)
    outputs = signal + n_grid * eps
    return Dataset(model, ens, noise, coeffs, outputs, true_kernel=true_kernel,
                   seed_path=seed_path)


@dataclass(frozen=True)
class NormalSystem:
    """Empirical normal matrix and vector at projection dimension n."""

    a: np.ndarray
    b: np.ndarray
    n: int
    m_samples: int

    def __post_init__(self):
        if self.a.shape != (self.n, self.n) or self.b.shape != (self.n,):
            raise ValueError("normal system shapes are inconsistent with n")
        if not np.allclose(self.a, self.a.T, atol=1e-12):
            raise ValueError("normal matrix must be symmetric")


def assemble_normal_system(data: Dataset, eig: EigenSystem, n: int,
                           chunk: int = ASSEMBLY_CHUNK) -> NormalSystem:
    """A(k,l) = mean_m <R_psi_k[u_m], R_psi_l[u_m]>_Y and b(k) = mean_m
    <f_m, R_psi_k[u_m]>_Y, accumulated over sample chunks in index order."""
    if not 1 <= n <= eig.truncation:
        raise ValueError(f"projection dimension must lie in [1, {eig.truncation}], got {n}")
    m, n_x = data.m_samples, data.n_grid
    a_sum = np.zeros((n, n))
    b_sum = np.zeros(n)
    for lo in range(0, m, chunk):
        hi = min(lo + chunk, m)
        values = basis_forward_batch(data.model, eig, n, data.input_coeffs[lo:hi], n_x,
                                     data.ensemble)
        _accel.normal_accumulate(values, data.outputs[lo:hi], a_sum, b_sum)
    a = a_sum / (m * n_x)
    a = (a + a.T) / 2.0
    b = b_sum / (m * n_x)
    return NormalSystem(a, b, n, m)


def sample_normal_matrix(model: ForwardModel, ens: InputEnsemble, eig: EigenSystem, n: int,
                         m_samples: int, rng: np.random.Generator, n_grid: int | None = None,
                         chunk: int = ASSEMBLY_CHUNK) -> np.ndarray:
    """Draw fresh inputs and return just the empirical normal matrix.

    Monte Carlo campaigns assemble thousands of these; where the grid inner
    products collapse to exact mode-space identities (integral and nonlocal
    models on admissible grids) the identity is used, otherwise the matrix is
    accumulated on the grid.
    """
    coeffs = sample_input_batch(ens, rng, m_samples)
    direct = gram_identity(model, eig, n, coeffs, ens)
    if direct is not None:
        return (direct + direct.T) / 2.0
    n_x = n_grid or max(8 * ens.n_modes, 256)
    a_sum = np.zeros((n, n))
    for lo in range(0, m_samples, chunk):
        hi = min(lo + chunk, m_samples)
        values = basis_forward_batch(model, eig, n, coeffs[lo:hi], n_x, ens)
        _accel.gram_accumulate(values, a_sum)
    a = a_sum / (m_samples * n_x)
    return (a + a.T) / 2.0


class ErrorSplit(NamedTuple):
    variance: float
    bias: float
    total: float


@dataclass(frozen=True)
class EstimateResult:
    """Solved coefficients plus the conditioning diagnostics of the solve."""

    coeffs: np.ndarray
    cutoff_triggered: bool
    method: str
    diagnostics: dict = field(default_factory=dict)


def _cutoff_event_holds(a_eigvals_desc: np.ndarray, lambdas: np.ndarray, n: int,
                        decay_kind: str) -> bool:
    if decay_kind == POLYNOMIAL:
        return bool(a_eigvals_desc[-1] > lambdas[n - 1] / 4.0)
    if decay_kind == EXPONENTIAL:
        return bool(np.all(a_eigvals_desc > lambdas[:n] / 4.0))
    raise ValueError(f"unknown decay kind {decay_kind!r}")


def tlse_solve(sys: NormalSystem, lambdas: np.ndarray, decay_kind: str) -> EstimateResult:
    """Tamed least squares: SPD solve on the conditioning event, zero off it."""
    lambdas = np.asarray(lambdas, dtype=np.float64)
    if lambdas.size < sys.n:
        raise ValueError("need reference eigenvalues for every projected mode")
    evals = np.linalg.eigvalsh(sys.a)[::-1]
    diags = {"lambda_min": float(evals[-1]), "a_eigenvalues": evals.copy()}
    if not _cutoff_event_holds(evals, lambdas, sys.n, decay_kind):
        return EstimateResult(np.zeros(sys.n), True, "tlse", diags)
    try:
        theta = sla.solve(sys.a, sys.b, assume_a="pos")
    except np.linalg.LinAlgError as exc:  # pragma: no cover - event makes A PD
        raise NumericError(f"SPD solve failed despite conditioning event: {exc}") from exc
    return EstimateResult(theta, False, "tlse", diags)


def lse_pinv_solve(sys: NormalSystem) -> EstimateResult:
    """Moore-Penrose least squares (singular values below 1e-12 of the largest
    treated as zero)."""
    theta = np.linalg.pinv(sys.a, rcond=1e-12) @ sys.b
    evals = np.linalg.eigvalsh(sys.a)[::-1]
    return EstimateResult(theta, False, "lse-pinv",
                          {"lambda_min": float(evals[-1]), "a_eigenvalues": evals})


def tsvd_solve(sys: NormalSystem, threshold: float) -> EstimateResult:
    """Truncated eigendecomposition: invert only components above threshold."""
    if threshold <= 0.0:
        raise ValueError(f"threshold must be > 0, got {threshold}")
    evals, evecs = np.linalg.eigh(sys.a)
    keep = evals > threshold
    inv = np.where(keep, 1.0 / np.where(keep, evals, 1.0), 0.0)
    theta = evecs @ (inv * (evecs.T @ sys.b))
    return EstimateResult(theta, False, "tsvd",
                          {"kept": int(np.sum(keep)), "threshold": threshold})


def empirical_loss(phi_coeffs: np.ndarray, data: Dataset, eig: EigenSystem) -> float:
    """Quadratic data misfit mean_m(||R_phi[u_m]||_Y^2 - 2 <f_m, R_phi[u_m]>).

    phi_coeffs live in the leading eigenbasis modes; the loss is evaluated
    directly on the grid (it equals theta^T A theta - 2 b^T theta for the
    assembled system at the same dimension).
    """
    phi_coeffs = np.asarray(phi_coeffs, dtype=np.float64)
    padded = np.zeros(eig.truncation)
    padded[: phi_coeffs.size] = phi_coeffs
    rep = kernel_mode_rep(data.model, KernelFunction(padded), data.ensemble, eig=eig)
    signal = forward_signal_batch(data.model, data.ensemble, rep, data.input_coeffs,
                                  data.n_grid)
    norms = np.mean(signal**2, axis=1)
    inner = np.mean(signal * data.outputs, axis=1)
    return float(np.mean(norms - 2.0 * inner))


def estimation_error(result: EstimateResult, true_kernel: KernelFunction,
                     n: int) -> ErrorSplit:
    """Split squared L2_rho error into in-span variance and tail bias."""
    theta_hat = np.asarray(result.coeffs, dtype=np.float64)
    if theta_hat.size != n:
        raise ValueError("estimate length disagrees with the projection dimension")
    theta_star = true_kernel.coeffs
    if theta_star.size < n:
        raise ValueError("true kernel holds fewer modes than the projection dimension")
    variance = float(np.sum((theta_hat - theta_star[:n]) ** 2))
    bias = float(np.sum(theta_star[n:] ** 2))
    return ErrorSplit(variance, bias, variance + bias)


def decompose_normal_vector(data: Dataset, true_kernel: KernelFunction, eig: EigenSystem,
                            n: int, chunk: int = ASSEMBLY_CHUNK) -> tuple[np.ndarray, np.ndarray]:
    """Oracle split b = A theta*_n + c + d of the empirical normal vector.

    c(k) collects leakage of the out-of-span kernel tail through the sampled
    inputs; d(k) collects the noise pairings.  Both are computed directly
    from their definitions (not by subtraction), so the reconstruction
    identity is a genuine cross-check.
    """
    if not 1 <= n <= eig.truncation:
        raise ValueError(f"projection dimension must lie in [1, {eig.truncation}], got {n}")
    tail_coeffs = true_kernel.coeffs.copy()
    tail_coeffs[:n] = 0.0
    tail_rep = kernel_mode_rep(data.model, KernelFunction(tail_coeffs), data.ensemble, eig=eig)
    full_rep = kernel_mode_rep(data.model, true_kernel, data.ensemble, eig=eig)
    m, n_x = data.m_samples, data.n_grid
    c_sum = np.zeros(n)
    d_sum = np.zeros(n)
    for lo in range(0, m, chunk):
        hi = min(lo + chunk, m)
        batch = data.input_coeffs[lo:hi]
        values = basis_forward_batch(data.model, eig, n, batch, n_x, data.ensemble)
        tail_signal = forward_signal_batch(data.model, data.ensemble, tail_rep, batch, n_x)
        noise_part = data.outputs[lo:hi] - forward_signal_batch(
            data.model, data.ensemble, full_rep, batch, n_x)
        c_sum += np.einsum("mik,mi->k", values, tail_signal)
        d_sum += np.einsum("mik,mi->k", values, noise_part)
    return c_sum / (m * n_x), d_sum / (m * n_x)
