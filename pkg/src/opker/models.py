"""Input ensembles, the three forward operators, exploration measures and
Mercer kernels, plus eigendecomposition of the normal operator.

Conventions shared by every model:

* outputs live on the midpoint grid x_i = (i - 1/2)/N of [0, 1] with cell
  measure 1/N, so ||f||_Y^2 = mean(f_i^2) and <f, g>_Y = mean(f_i g_i);
* kernels are supported on S = [0, 1]; plain ds integrals over S use the
  uniform midpoint grid with weights 1/N_s;
* random input functions are truncated Fourier series, so forward values
  are evaluated exactly in coefficient space (no differentiation, no
  x-quadrature error beyond the grid inner product itself).

Model catalogue (operator applied to a kernel phi and input u):

* 'integral'      g[u](x, s) = u(x - s), Gaussian Fourier inputs;
* 'nonlocal'      g[u](x, s) = u(x+s) + u(x-s) - 2u(x), Gaussian inputs,
                  g[u](x, s) = 2 sum_k X_k cos(2 pi k x)(cos(2 pi k s) - 1);
* 'aggregation'   g[u](x, s) = d/dx[u(x+s)u(x)] - d/dx[u(x-s)u(x)] with
                  Rademacher-sign inputs u = 1 + sum_n a_n zeta_n cos(2 pi n x).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import RankError
from .spectral import (
    EigenSystem,
    FourierModeBasis,
    GridBasis,
    KernelFunction,
    midpoint_grid,
)

INTEGRAL = "integral"
NONLOCAL = "nonlocal"
AGGREGATION = "aggregation"

GAUSSIAN_FOURIER = "gaussian-fourier"
RADEMACHER_FOURIER = "rademacher-fourier"

DEFAULT_GRID = 1024
DEFAULT_S_GRID = 512


@dataclass(frozen=True)
class InputEnsemble:
    """Distribution of random input functions.

    Gaussian kind: u(x) = sum_k X_k cos(2 pi k x), X_k ~ N(0, sigma_k^2).
    Rademacher kind: u(x) = 1 + sum_n a_n zeta_n cos(2 pi n x) with
    independent signs zeta_n; sum_n n*a_n < 1 keeps u(x) inside (0, 2).
    """

    kind: str
    sigmas: np.ndarray | None = None
    amps: np.ndarray | None = None

    def __post_init__(self):
        if self.kind == GAUSSIAN_FOURIER:
            if self.sigmas is None:
                raise ValueError("gaussian-fourier ensemble needs mode standard deviations")
            s = np.asarray(self.sigmas, dtype=np.float64)
            if s.ndim != 1 or s.size == 0 or np.any(s < 0):
                raise ValueError("sigmas must be a non-empty 1-d sequence of non-negatives")
            object.__setattr__(self, "sigmas", s)
        elif self.kind == RADEMACHER_FOURIER:
            if self.amps is None:
                raise ValueError("rademacher-fourier ensemble needs mode amplitudes")
            a = np.asarray(self.amps, dtype=np.float64)
            if a.ndim != 1 or a.size == 0 or np.any(a <= 0):
                raise ValueError("amps must be a non-empty 1-d sequence of positives")
            moment = float(np.sum(np.arange(1, a.size + 1) * a))
            if moment >= 1.0:
                raise ValueError(
                    f"sum of n*a_n must stay below 1 to keep inputs positive, got {moment:.4f}"
                )
            object.__setattr__(self, "amps", a)
        else:
            raise ValueError(f"unknown ensemble kind {self.kind!r}")

    @property
    def n_modes(self) -> int:
        arr = self.sigmas if self.kind == GAUSSIAN_FOURIER else self.amps
        return int(arr.size)

    @property
    def offset(self) -> float:
        return 0.0 if self.kind == GAUSSIAN_FOURIER else 1.0


def gaussian_preset(name: str, n_modes: int, r: float = 1.0) -> InputEnsemble:
    """Named variance profiles for the Gaussian ensemble.

    'sobolev'  sigma_k^2 = 4/(2 pi k)^2 (eigenvalues 1/(2 pi k)^2; the
               classical periodic first-order Sobolev case),
    'poly'     sigma_k^2 = 4 (2k)^(-2r) (eigenvalues hit (2k)^(-2r)),
    'exp'      sigma_k^2 = 4 exp(-2 r k) (eigenvalues hit exp(-r * 2k)).
    """
    k = np.arange(1, n_modes + 1, dtype=np.float64)
    if name == "sobolev":
        sig = 2.0 / (2.0 * math.pi * k)
    elif name == "poly":
        sig = 2.0 * (2.0 * k) ** (-r)
    elif name == "exp":
        sig = 2.0 * np.exp(-r * k)
    else:
        raise ValueError(f"unknown gaussian preset {name!r}")
    return InputEnsemble(GAUSSIAN_FOURIER, sigmas=sig)


def rademacher_preset(n_modes: int, scale: float = 0.5, power: float = 3.0) -> InputEnsemble:
    """Amplitudes a_n = scale * n**(-power); scale must keep sum n*a_n < 1."""
    n = np.arange(1, n_modes + 1, dtype=np.float64)
    return InputEnsemble(RADEMACHER_FOURIER, amps=scale * n ** (-power))


@dataclass(frozen=True)
class InputFunction:
    """One realized input: cosine coefficients plus a constant offset."""

    coeffs: np.ndarray
    offset: float = 0.0

    def values_on(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        k = np.arange(1, self.coeffs.size + 1)
        return self.offset + np.cos(2.0 * np.pi * np.outer(x, k)) @ self.coeffs


@dataclass(frozen=True)
class OutputFunction:
    """Grid values of a forward image, with the exact Fourier form when known.

    fourier, when present, is the pair (cos_coeffs, sin_coeffs) of the
    trigonometric expansion (integral model only).
    """

    values: np.ndarray
    fourier: tuple[np.ndarray, np.ndarray] | None = None

    @property
    def n_grid(self) -> int:
        return int(self.values.size)

    def norm_y_sq(self) -> float:
        return float(np.mean(self.values**2))

    def norm_y_sq_exact(self) -> float:
        if self.fourier is None:
            raise ValueError("no exact representation stored for this output")
        ac, bs = self.fourier
        return float(np.dot(ac, ac) + np.dot(bs, bs)) / 2.0


def y_inner(f: np.ndarray, g: np.ndarray) -> float:
    """Grid inner product with cell measure 1/N."""
    return float(np.mean(f * g))


@dataclass(frozen=True)
class ForwardModel:
    kind: str

    def __post_init__(self):
        if self.kind not in (INTEGRAL, NONLOCAL, AGGREGATION):
            raise ValueError(f"unknown forward model {self.kind!r}")


def check_pairing(model: ForwardModel, ens: InputEnsemble):
    """Aggregation needs Rademacher inputs; the linear models need Gaussian."""
    wants = RADEMACHER_FOURIER if model.kind == AGGREGATION else GAUSSIAN_FOURIER
    if ens.kind != wants:
        raise ValueError(f"model {model.kind!r} requires ensemble kind {wants!r}")


def sample_input(ens: InputEnsemble, rng: np.random.Generator) -> InputFunction:
    return InputFunction(sample_input_batch(ens, rng, 1)[0], ens.offset)


def sample_input_batch(ens: InputEnsemble, rng: np.random.Generator, m: int) -> np.ndarray:
    """Coefficient draws, shape (m, n_modes)."""
    if ens.kind == GAUSSIAN_FOURIER:
        return rng.standard_normal((m, ens.n_modes)) * ens.sigmas
    signs = rng.integers(0, 2, size=(m, ens.n_modes)) * 2.0 - 1.0
    return signs * ens.amps


# --------------------------------------------------------------------------
# Forward evaluation.
#
# Every model reduces R_phi[u](x) to a short mode expansion whose x-profiles
# are trigonometric, so batched evaluation is a handful of matrix products.


@dataclass(frozen=True)
class KernelModeRep:
    """Integrals of a kernel against the s-profiles of one forward model.

    integral:     cos_w[j] = int phi(s) cos(2 pi j s) ds,
                  sin_w[j] = int phi(s) sin(2 pi j s) ds,
                  R_phi[u](x) = sum_j X_j (cos_w[j] cos + sin_w[j] sin)(2 pi j x)
    nonlocal:     cos_w[j] = 2 int phi(s)(cos(2 pi j s) - 1) ds,
                  R_phi[u](x) = sum_j X_j cos_w[j] cos(2 pi j x)
    aggregation:  sin_w[n] = int phi(s) sin(2 pi n s) ds,
                  R_phi[u](x) = sum_n X_n sin_w[n] *
                      (-2)(2 pi n cos(2 pi n x) u(x) + sin(2 pi n x) u'(x))
    """

    model: str
    cos_w: np.ndarray | None = None
    sin_w: np.ndarray | None = None


def _kernel_values_on_quad(phi, eig: EigenSystem | None, squad: np.ndarray) -> np.ndarray:
    if isinstance(phi, KernelFunction):
        if eig is None:
            raise ValueError("a KernelFunction needs its eigensystem to be evaluated")
        return phi.values_on(eig, squad)
    if callable(phi):
        return np.asarray(phi(squad), dtype=np.float64)
    arr = np.asarray(phi, dtype=np.float64)
    if arr.shape != squad.shape:
        raise ValueError("tabulated kernel values do not match the quadrature grid")
    return arr


def kernel_mode_rep(model: ForwardModel, phi, ens: InputEnsemble,
                    eig: EigenSystem | None = None, n_s: int = DEFAULT_S_GRID) -> KernelModeRep:
    """Reduce a kernel to its per-mode action under the given model.

    phi may be a KernelFunction (paired with its eigensystem), a callable
    s -> phi(s), or values tabulated on the model quadrature grid.  For the
    integral model with the analytic Fourier basis the reduction is exact;
    otherwise the s-integrals use midpoint quadrature with N_s nodes (for a
    tabulated basis, its own nodes).
    """
    k_u = ens.n_modes
    j = np.arange(1, k_u + 1, dtype=np.float64)
    if (
        model.kind == INTEGRAL
        and isinstance(phi, KernelFunction)
        and eig is not None
        and isinstance(eig.basis, FourierModeBasis)
    ):
        theta = phi.coeffs
        n_pairs = (theta.size + 1) // 2
        cos_w = np.zeros(k_u)
        sin_w = np.zeros(k_u)
        upto = min(n_pairs, k_u)
        cos_w[:upto] = theta[0:2 * upto:2] / math.sqrt(2.0)
        sin_part = theta[1:2 * upto:2]
        sin_w[:len(sin_part)] = sin_part / math.sqrt(2.0)
        return KernelModeRep(INTEGRAL, cos_w=cos_w, sin_w=sin_w)

    if isinstance(eig, EigenSystem) and isinstance(eig.basis, GridBasis):
        squad = eig.basis.nodes
    else:
        squad = midpoint_grid(n_s)
    vals = _kernel_values_on_quad(phi, eig, squad)
    w = 1.0 / squad.size
    cos_tab = np.cos(2.0 * np.pi * np.outer(squad, j))
    sin_tab = np.sin(2.0 * np.pi * np.outer(squad, j))
    if model.kind == INTEGRAL:
        return KernelModeRep(INTEGRAL, cos_w=cos_tab.T @ vals * w, sin_w=sin_tab.T @ vals * w)
    if model.kind == NONLOCAL:
        return KernelModeRep(NONLOCAL, cos_w=2.0 * (cos_tab - 1.0).T @ vals * w)
    return KernelModeRep(AGGREGATION, sin_w=sin_tab.T @ vals * w)


@lru_cache(maxsize=8)
def _trig_tables(n_x: int, k_u: int) -> tuple[np.ndarray, np.ndarray]:
    angles = 2.0 * np.pi * np.outer(midpoint_grid(n_x), np.arange(1, k_u + 1))
    return np.cos(angles), np.sin(angles)


def forward_signal_batch(model: ForwardModel, ens: InputEnsemble, rep: KernelModeRep,
                         coeffs: np.ndarray, n_x: int) -> np.ndarray:
    """R_phi[u] on the output grid for a batch of inputs, shape (m, n_x)."""
    if rep.model != model.kind:
        raise ValueError("mode representation was built for a different model")
    k_u = ens.n_modes
    j = np.arange(1, k_u + 1, dtype=np.float64)
    cos_x, sin_x = _trig_tables(n_x, k_u)
    if model.kind == INTEGRAL:
        return (coeffs * rep.cos_w) @ cos_x.T + (coeffs * rep.sin_w) @ sin_x.T
    if model.kind == NONLOCAL:
        return (coeffs * rep.cos_w) @ cos_x.T
    u_vals = ens.offset + coeffs @ cos_x.T
    du_vals = -(coeffs * (2.0 * np.pi * j)) @ sin_x.T
    p = coeffs * rep.sin_w
    term_c = (p * (2.0 * np.pi * j)) @ cos_x.T
    term_s = p @ sin_x.T
    return -2.0 * (term_c * u_vals + term_s * du_vals)


def forward_norm_sq_batch(model: ForwardModel, ens: InputEnsemble, rep: KernelModeRep,
                          coeffs: np.ndarray, n_x: int | None = None) -> np.ndarray:
    """||R_phi[u]||_Y^2 for a batch of inputs, shape (m,).

    For the linear Gaussian models the grid norm collapses exactly to the
    mode sum sum_j X_j^2 w_j^2 / 2 by trigonometric orthogonality on
    admissible grids; the aggregation model evaluates on the grid.
    """
    if rep.model != model.kind:
        raise ValueError("mode representation was built for a different model")
    if model.kind == INTEGRAL:
        return (coeffs**2) @ ((rep.cos_w**2 + rep.sin_w**2) / 2.0)
    if model.kind == NONLOCAL:
        return (coeffs**2) @ (rep.cos_w**2 / 2.0)
    n_x = n_x or max(8 * ens.n_modes, 256)
    vals = forward_signal_batch(model, ens, rep, coeffs, n_x)
    return np.mean(vals**2, axis=1)


def apply_forward(model: ForwardModel, phi, u: InputFunction, n_x: int = DEFAULT_GRID,
                  ens: InputEnsemble | None = None, eig: EigenSystem | None = None,
                  n_s: int = DEFAULT_S_GRID) -> OutputFunction:
    """Forward image of one input on the output grid.

    The ensemble is only needed to size the mode expansion; when omitted it
    is inferred from the input function itself.
    """
    if ens is None:
        if u.offset != 0.0:
            raise ValueError("offset (Rademacher) inputs need their ensemble passed explicitly")
        # sizing-only stand-in; forward evaluation never reads the variances
        ens = InputEnsemble(GAUSSIAN_FOURIER, sigmas=np.ones(u.coeffs.size))
    check_pairing(model, ens)
    if n_x < 8 * ens.n_modes:
        raise ValueError(f"grid size {n_x} too small for {ens.n_modes} input modes (need >= 8x)")
    rep = kernel_mode_rep(model, phi, ens, eig=eig, n_s=n_s)
    vals = forward_signal_batch(model, ens, rep, u.coeffs[None, :], n_x)[0]
    fourier = None
    if model.kind == INTEGRAL:
        fourier = (u.coeffs * rep.cos_w, u.coeffs * rep.sin_w)
    return OutputFunction(vals, fourier=fourier)


def basis_forward_batch(model: ForwardModel, eig: EigenSystem, n: int,
                        coeffs: np.ndarray, n_x: int, ens: InputEnsemble) -> np.ndarray:
    """Forward values of the first n eigenfunctions, shape (m, n_x, n).

    Used when assembling empirical normal systems: column k holds
    R_{psi_k}[u^m] on the output grid.
    """
    if n > eig.truncation:
        raise ValueError(f"requested {n} basis modes but eigensystem holds {eig.truncation}")
    k_u = ens.n_modes
    j = np.arange(1, k_u + 1, dtype=np.float64)
    cos_x, sin_x = _trig_tables(n_x, k_u)
    if model.kind == INTEGRAL and isinstance(eig.basis, FourierModeBasis):
        freq = eig.basis.frequencies()[:n]
        sine = eig.basis.is_sine()[:n]
        t = np.where(sine[None, :], sin_x[:, freq - 1], cos_x[:, freq - 1]) / math.sqrt(2.0)
        c = coeffs[:, freq - 1]
        return c[:, None, :] * t[None, :, :]
    if model.kind == NONLOCAL:
        w = _nonlocal_basis_weights(eig, n, k_u)
        mixed = coeffs[:, None, :] * w[None, :, :]  # (m, n, k_u)
        return np.swapaxes(mixed @ cos_x.T, 1, 2)
    if model.kind == AGGREGATION:
        w = _aggregation_basis_weights(eig, n, k_u)
        u_vals = ens.offset + coeffs @ cos_x.T
        du_vals = -(coeffs * (2.0 * np.pi * j)) @ sin_x.T
        # q[m, n_mode, i] = -2 X_n (2 pi n cos u + sin u')
        q = -2.0 * (
            (coeffs * (2.0 * np.pi * j))[:, :, None] * cos_x.T[None, :, :] * u_vals[:, None, :]
            + coeffs[:, :, None] * sin_x.T[None, :, :] * du_vals[:, None, :]
        )
        return np.swapaxes(np.einsum("kn,mni->mki", w, q), 1, 2)
    raise ValueError("integral model requires the analytic Fourier eigenbasis")


def _nonlocal_basis_weights(eig: EigenSystem, n: int, k_u: int) -> np.ndarray:
    """(n, k_u) matrix of 2 * int psi_k(s)(cos(2 pi j s) - 1) ds."""
    basis = eig.basis
    if not isinstance(basis, GridBasis):
        raise ValueError("nonlocal model expects a tabulated (Nystrom) eigenbasis")
    j = np.arange(1, k_u + 1, dtype=np.float64)
    cos_tab = np.cos(2.0 * np.pi * np.outer(basis.nodes, j))
    return 2.0 * basis.values[:, :n].T @ ((cos_tab - 1.0) * basis.weights[:, None])


def _aggregation_basis_weights(eig: EigenSystem, n: int, k_u: int) -> np.ndarray:
    """(n, k_u) matrix of int psi_k(s) sin(2 pi n s) ds."""
    basis = eig.basis
    if not isinstance(basis, GridBasis):
        raise ValueError("aggregation model expects a tabulated (Nystrom) eigenbasis")
    j = np.arange(1, k_u + 1, dtype=np.float64)
    sin_tab = np.sin(2.0 * np.pi * np.outer(basis.nodes, j))
    return basis.values[:, :n].T @ (sin_tab * basis.weights[:, None])


def gram_identity(model: ForwardModel, eig: EigenSystem, n: int,
                  coeffs: np.ndarray, ens: InputEnsemble) -> np.ndarray | None:
    """Empirical normal matrix via mode-space identities where available.

    On midpoint grids with n_x >= 8 * n_modes, distinct trigonometric modes
    are exactly orthogonal, so the grid normal matrix collapses: for the
    integral model A is diagonal with entries mean(X_j^2)/4, for the nonlocal
    model A = W diag(mean X_j^2) W^T / 2.  Returns None when no identity
    applies (aggregation); callers then fall back to grid accumulation.
    """
    m, k_u = coeffs.shape
    if model.kind == INTEGRAL and isinstance(eig.basis, FourierModeBasis):
        freq = eig.basis.frequencies()[:n]
        mean_sq = np.mean(coeffs**2, axis=0)
        return np.diag(mean_sq[freq - 1] / 4.0)
    if model.kind == NONLOCAL:
        w = _nonlocal_basis_weights(eig, n, k_u)
        mean_sq = np.mean(coeffs**2, axis=0)
        return (w * mean_sq[None, :] / 2.0) @ w.T
    return None


# --------------------------------------------------------------------------
# Exploration measure and Mercer kernels.


def mercer_kernel(model: ForwardModel, ens: InputEnsemble, s, sp) -> np.ndarray:
    """Closed-form covariance G(s, s') = E int g[u](x,s) g[u](x,s') dx.

    integral:     sum_k sigma_k^2/2 * cos(2 pi k (s - s'))
    nonlocal:     2 sum_k sigma_k^2 (cos(2 pi k s) - 1)(cos(2 pi k s') - 1)
    aggregation:  sum_n gamma_n sin(2 pi n s) sin(2 pi n s')
                  + 8 pi^2 W(s) W(s'),
                  gamma_n = 8 pi^2 n^2 a_n^2
                            + 4 pi^2 a_n^2 sum_{m != n} a_m^2 (n^2 + m^2),
                  W(s) = sum_n n a_n^2 sin(2 pi n s)
    """
    check_pairing(model, ens)
    s = np.atleast_1d(np.asarray(s, dtype=np.float64))
    sp = np.atleast_1d(np.asarray(sp, dtype=np.float64))
    k = np.arange(1, ens.n_modes + 1, dtype=np.float64)
    if model.kind == INTEGRAL:
        # cos(2 pi k (s - s')) expanded so large grids stay rank-2K products
        half_var = ens.sigmas**2 / 2.0
        cs, ss = np.cos(2.0 * np.pi * np.outer(s, k)), np.sin(2.0 * np.pi * np.outer(s, k))
        cp, sq = np.cos(2.0 * np.pi * np.outer(sp, k)), np.sin(2.0 * np.pi * np.outer(sp, k))
        return (cs * half_var) @ cp.T + (ss * half_var) @ sq.T
    if model.kind == NONLOCAL:
        cs = np.cos(2.0 * np.pi * np.outer(s, k)) - 1.0
        csp = np.cos(2.0 * np.pi * np.outer(sp, k)) - 1.0
        return 2.0 * (cs * ens.sigmas**2) @ csp.T
    a_sq = ens.amps**2
    cross = np.sum(a_sq * (k**2)) + k**2 * np.sum(a_sq) - 2.0 * a_sq * k**2
    gamma = 8.0 * math.pi**2 * k**2 * a_sq + 4.0 * math.pi**2 * a_sq * cross
    sn_s = np.sin(2.0 * np.pi * np.outer(s, k))
    sn_sp = np.sin(2.0 * np.pi * np.outer(sp, k))
    w_s = sn_s @ (k * a_sq)
    w_sp = sn_sp @ (k * a_sq)
    return (sn_s * gamma) @ sn_sp.T + 8.0 * math.pi**2 * np.outer(w_s, w_sp)


def exploration_density(model: ForwardModel, ens: InputEnsemble, s,
                        n_s: int = DEFAULT_S_GRID) -> np.ndarray:
    """Density of the exploration measure at points s (normalized on [0,1]).

    The integral model has constant density 1 by periodicity; the others are
    G(s, s)/Z with Z fixed by midpoint quadrature so the density integrates
    to one.
    """
    check_pairing(model, ens)
    s = np.atleast_1d(np.asarray(s, dtype=np.float64))
    if model.kind == INTEGRAL:
        return np.ones_like(s)
    squad = midpoint_grid(n_s)
    diag_quad = _mercer_diag(model, ens, squad)
    z = float(np.mean(diag_quad))
    return _mercer_diag(model, ens, s) / z


def _mercer_diag(model: ForwardModel, ens: InputEnsemble, s: np.ndarray) -> np.ndarray:
    k = np.arange(1, ens.n_modes + 1, dtype=np.float64)
    if model.kind == NONLOCAL:
        cs = np.cos(2.0 * np.pi * np.outer(s, k)) - 1.0
        return 2.0 * (cs**2) @ ens.sigmas**2
    a_sq = ens.amps**2
    cross = np.sum(a_sq * (k**2)) + k**2 * np.sum(a_sq) - 2.0 * a_sq * k**2
    gamma = 8.0 * math.pi**2 * k**2 * a_sq + 4.0 * math.pi**2 * a_sq * cross
    sn = np.sin(2.0 * np.pi * np.outer(s, k))
    w = sn @ (k * a_sq)
    return (sn**2) @ gamma + 8.0 * math.pi**2 * w**2


# --------------------------------------------------------------------------
# Eigendecomposition of the normal operator.


def eigendecompose_normal(model: ForwardModel, ens: InputEnsemble, k_trunc: int,
                          n_s: int = DEFAULT_S_GRID) -> EigenSystem:
    """Leading eigenpairs of the normal operator on L2_rho.

    The integral model is analytic: eigenvalue pairs sigma_k^2/4 with the
    cos/sin Fourier eigenfunctions (constant mode excluded as the null
    space).  The other models build the density-weighted Nystrom matrix
    G(s_i, s_j) * w / sqrt(rho(s_i) rho(s_j)) on the midpoint grid,
    eigendecompose it, and keep the top k_trunc eigenvalues above 1e-12.
    """
    check_pairing(model, ens)
    if model.kind == INTEGRAL:
        if k_trunc > 2 * ens.n_modes:
            raise RankError(
                f"integral model with {ens.n_modes} input modes supports at most "
                f"{2 * ens.n_modes} eigenmodes, requested {k_trunc}",
                usable_rank=2 * ens.n_modes,
            )
        lam_pairs = ens.sigmas**2 / 4.0
        if np.any(np.diff(lam_pairs) > 0):
            raise ValueError("sigma profile must be non-increasing for an ordered spectrum")
        lam = np.repeat(lam_pairs, 2)[:k_trunc]
        return EigenSystem(lam, FourierModeBasis(k_trunc))

    squad = midpoint_grid(n_s)
    g = mercer_kernel(model, ens, squad, squad)
    z = float(np.mean(np.diag(g)))
    rho = np.diag(g) / z
    scale = 1.0 / np.sqrt(rho * n_s)
    b = g * np.outer(scale, scale)
    b = (b + b.T) / 2.0
    evals, evecs = np.linalg.eigh(b)
    order = np.argsort(evals)[::-1]
    evals = evals[order]
    evecs = evecs[:, order]
    usable = int(np.sum(evals > 1e-12))
    if usable < k_trunc:
        raise RankError(
            f"normal operator has {usable} eigenvalues above 1e-12, requested {k_trunc}",
            usable_rank=usable,
        )
    lam = evals[:k_trunc]
    vecs = evecs[:, :k_trunc]
    # eigenfunction values in L2_rho coordinates: psi_k(s_i) = v_k(i)/sqrt(rho_i w)
    psi = vecs * scale[:, None]
    # deterministic sign: largest-magnitude node value positive
    anchor = np.argmax(np.abs(psi), axis=0)
    signs = np.sign(psi[anchor, np.arange(psi.shape[1])])
    signs[signs == 0.0] = 1.0
    psi = psi * signs
    # quadrature re-normalization in L2_rho kills residual drift
    norms = np.sqrt(np.sum(psi**2 * (rho / n_s)[:, None], axis=0))
    psi = psi / norms
    basis = GridBasis(nodes=squad, weights=np.full(n_s, 1.0 / n_s), density=rho, values=psi)
    return EigenSystem(lam, basis)


def apply_normal_operator(model: ForwardModel, ens: InputEnsemble, eig: EigenSystem,
                          f_vals: np.ndarray) -> np.ndarray:
    """Quadrature image of the normal operator on tabulated node values."""
    basis = eig.basis
    if not isinstance(basis, GridBasis):
        raise ValueError("normal-operator quadrature needs a tabulated eigensystem")
    g = mercer_kernel(model, ens, basis.nodes, basis.nodes)
    # (L f)(s_i) = int Gbar(s_i, s') f(s') rho(s') ds' = sum_j G_ij f_j w / rho_i
    return (g @ (f_vals * basis.weights)) / basis.density
