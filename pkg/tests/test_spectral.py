import math
import warnings

import numpy as np
import pytest

from opker.spectral import (
    DimensionWarning,
    EigenSystem,
    FourierModeBasis,
    KernelFunction,
    SobolevClass,
    SpectralDecay,
    eigenvalue_envelope,
    midpoint_grid,
    optimal_dimension,
    sample_kernel,
    sobolev_norm_sq,
    synthetic_eigensystem,
    tail_energy,
    theoretical_exponent,
)


def poly_decay(r=1.0, a=1.0, b=1.0):
    return SpectralDecay("polynomial", r, a, b)


def exp_decay(r=1.0, a=1.0, b=1.0):
    return SpectralDecay("exponential", r, a, b)


class TestSpectralDecay:
    def test_envelope_direct_formula(self):
        assert eigenvalue_envelope(poly_decay(r=1.0), 2) == (0.25, 0.25)

    def test_envelope_hand_values(self):
        # a*k**(-2r), b*k**(-2r) at r=0.5, k=4 evaluated by hand
        lo, hi = eigenvalue_envelope(poly_decay(r=0.5, a=0.5, b=2.0), 4)
        assert lo == pytest.approx(0.125)
        assert hi == pytest.approx(0.5)

    def test_exponential_profile(self):
        lo, hi = eigenvalue_envelope(exp_decay(r=2.0, a=0.5, b=1.0), 3)
        assert lo == pytest.approx(0.5 * math.exp(-6.0))
        assert hi == pytest.approx(math.exp(-6.0))

    def test_rejects_zero_rate_exponential(self):
        with pytest.raises(ValueError):
            exp_decay(r=0.0)

    def test_rejects_shallow_polynomial(self):
        with pytest.raises(ValueError):
            poly_decay(r=0.25)

    def test_rejects_bad_envelope_constants(self):
        with pytest.raises(ValueError):
            SpectralDecay("polynomial", 1.0, a=2.0, b=1.0)
        with pytest.raises(ValueError):
            SpectralDecay("polynomial", 1.0, a=0.0, b=1.0)

    def test_rejects_bad_index(self):
        with pytest.raises(IndexError):
            eigenvalue_envelope(poly_decay(), 0)

    def test_synthetic_system_inside_envelope(self):
        decay = poly_decay(r=0.75, a=0.3, b=1.7)
        eig = synthetic_eigensystem(decay, 64)
        for k in range(1, 65):
            lo, hi = eigenvalue_envelope(decay, k)
            assert lo - 1e-15 <= eig.eigenvalues[k - 1] <= hi + 1e-15


class TestEigenSystem:
    def test_rejects_increasing_values(self):
        with pytest.raises(ValueError):
            EigenSystem(np.array([0.5, 1.0]), FourierModeBasis(2))

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            EigenSystem(np.array([1.0, 0.0]), FourierModeBasis(2))

    def test_fourier_gram_is_identity(self):
        eig = synthetic_eigensystem(poly_decay(), 16)
        np.testing.assert_allclose(eig.gram(), np.eye(16), atol=1e-8)

    def test_fourier_ordering_cosine_first(self):
        basis = FourierModeBasis(6)
        s = midpoint_grid(64)
        vals = basis.evaluate(s)
        np.testing.assert_allclose(vals[:, 0], math.sqrt(2) * np.cos(2 * np.pi * s))
        np.testing.assert_allclose(vals[:, 1], math.sqrt(2) * np.sin(2 * np.pi * s))
        np.testing.assert_allclose(vals[:, 4], math.sqrt(2) * np.cos(2 * np.pi * 3 * s))


class TestSobolevNorm:
    def test_single_mode(self):
        eig = EigenSystem(np.array([0.5, 0.25]), FourierModeBasis(2))
        phi = KernelFunction(np.array([1.0, 0.0]))
        assert sobolev_norm_sq(phi, 1.0, eig) == pytest.approx(2.0)

    def test_beta_zero_is_l2(self):
        eig = synthetic_eigensystem(poly_decay(), 8)
        phi = KernelFunction(np.arange(1.0, 9.0))
        assert sobolev_norm_sq(phi, 0.0, eig) == pytest.approx(phi.l2_norm_sq())

    def test_telescoped_unit_norm(self):
        # theta_k = lambda_k**(beta/2) c_k with sum c_k^2 = 1 gives norm 1
        rng = np.random.default_rng(3)
        eig = synthetic_eigensystem(exp_decay(r=0.5), 32)
        c = rng.standard_normal(32)
        c /= np.linalg.norm(c)
        beta = 1.7
        phi = KernelFunction(eig.eigenvalues ** (beta / 2) * c)
        assert sobolev_norm_sq(phi, beta, eig) == pytest.approx(1.0)

    def test_length_mismatch(self):
        eig = synthetic_eigensystem(poly_decay(), 8)
        with pytest.raises(ValueError):
            sobolev_norm_sq(KernelFunction(np.ones(4)), 1.0, eig)


class TestTailEnergy:
    def test_full_sum(self):
        phi = KernelFunction(np.array([3.0, 4.0]))
        assert tail_energy(phi, 1) == pytest.approx(25.0)

    def test_equality_case(self):
        # all mass on one coefficient theta_n = L lambda_n^(beta/2)
        eig = synthetic_eigensystem(poly_decay(), 8)
        L, beta, n = 2.0, 1.5, 5
        coeffs = np.zeros(8)
        coeffs[n - 1] = L * eig.eigenvalues[n - 1] ** (beta / 2)
        phi = KernelFunction(coeffs)
        assert tail_energy(phi, n) == pytest.approx(L**2 * eig.eigenvalues[n - 1] ** beta)

    def test_out_of_range(self):
        phi = KernelFunction(np.ones(4))
        with pytest.raises(IndexError):
            tail_energy(phi, 5)
        with pytest.raises(IndexError):
            tail_energy(phi, 0)


class TestSampleKernel:
    def test_boundary_norm_partial_zeta2(self):
        # sum 6/(pi k)^2 over k <= K computed independently
        eig = synthetic_eigensystem(poly_decay(), 100)
        L = 3.0
        phi = sample_kernel(SobolevClass(1.0, L), eig, profile="boundary")
        expected = L**2 * sum(6.0 / (math.pi * k) ** 2 for k in range(1, 101))
        assert sobolev_norm_sq(phi, 1.0, eig) == pytest.approx(expected, rel=1e-12)
        assert expected < L**2

    def test_tail_bound_holds_for_all_profiles_and_indices(self):
        rng = np.random.default_rng(11)
        for decay in (poly_decay(r=0.6, a=0.5, b=1.0), exp_decay(r=1.2, a=0.2, b=0.9)):
            eig = synthetic_eigensystem(decay, 40)
            for beta, L in ((0.5, 1.0), (1.0, 4.0), (2.5, 0.3)):
                for profile in ("boundary", "near-boundary", "random"):
                    phi = sample_kernel(SobolevClass(beta, L), eig, profile=profile, rng=rng)
                    norm = sobolev_norm_sq(phi, beta, eig)
                    assert norm <= L**2 * (1 + 1e-9)
                    for n in range(1, 41):
                        bound = norm * eig.eigenvalues[n - 1] ** beta
                        assert tail_energy(phi, n) <= bound * (1 + 1e-9)

    def test_near_boundary_matches_direct_summation(self):
        # independent oracle: build theta_k^2 = lambda_k^beta c_k^2 from the
        # profile formulas and sum the tails directly
        K = 100
        k = np.arange(1, K + 1, dtype=float)
        c_sq = k ** (-1.1)
        c_sq /= c_sq.sum()
        theta_sq = k ** (-2.0) * c_sq  # beta=1, L=1, lambda_k = k^-2
        eig = synthetic_eigensystem(poly_decay(r=1.0), K)
        phi = sample_kernel(SobolevClass(1.0, 1.0), eig, profile="near-boundary", delta=0.05)
        for n in range(1, K + 1):
            assert tail_energy(phi, n) == pytest.approx(theta_sq[n - 1:].sum(), abs=1e-14)

    def test_near_boundary_tail_ratio_decay(self):
        # with lambda_k = k^-2 and beta = 1 the ratio tail/lambda_n decays
        # like n^(-2 delta); fit the exponent over an asymptotic dyadic range
        eig = synthetic_eigensystem(poly_decay(r=1.0), 4096)
        phi = sample_kernel(SobolevClass(1.0, 1.0), eig, profile="near-boundary", delta=0.05)
        ns = np.array([32, 64, 128, 256, 512])
        ratios = np.array([
            tail_energy(phi, int(n)) / eig.eigenvalues[n - 1] ** 1.0 for n in ns
        ])
        slope = np.polyfit(np.log(ns), np.log(ratios), 1)[0]
        assert -slope == pytest.approx(0.1, abs=0.05)

    def test_zero_radius_rejected(self):
        with pytest.raises(ValueError):
            SobolevClass(1.0, 0.0)

    def test_random_profile_needs_rng(self):
        eig = synthetic_eigensystem(poly_decay(), 8)
        with pytest.raises(ValueError):
            sample_kernel(SobolevClass(1.0, 1.0), eig, profile="random")


class TestOptimalDimension:
    def test_polynomial_hand_value(self):
        # (0.5 * 8 / (2 * 2) * 1000)^(1/3) = 10
        decay = poly_decay(r=0.5)
        n = optimal_dimension(decay, beta=1.0, radius=math.sqrt(8.0), sigma=1.0,
                              m_samples=1000)
        assert n == 10

    def test_polynomial_scaling_homogeneity(self):
        # radius chosen so the pre-ceiling value is an exact integer power,
        # making the doubling law visible through the ceiling
        decay = poly_decay(r=1.0)
        beta = 1.0
        factor = 2 ** (2 * beta * decay.r + 2 * decay.r + 1)  # = 32
        radius = math.sqrt(6.0)  # inner constant becomes exactly M
        n1 = optimal_dimension(decay, beta, radius=radius, sigma=1.0, m_samples=10**5)
        n2 = optimal_dimension(decay, beta, radius=radius, sigma=1.0,
                               m_samples=int(10**5 * factor))
        assert (n1, n2) == (10, 20)

    def test_exponential_hand_value(self):
        # floor(0.5 * log(1e6 / c1)) with c1 = 4e/(e-1), evaluated numerically
        decay = exp_decay(r=1.0)
        c1 = 4.0 * math.e / (math.e - 1.0)
        expected = math.floor(0.5 * math.log(1e6 / c1))
        n = optimal_dimension(decay, beta=1.0, radius=1.0, sigma=1.0, m_samples=10**6)
        assert n == expected == 5

    def test_small_m_warns_and_clamps(self):
        with pytest.warns(DimensionWarning):
            n = optimal_dimension(exp_decay(r=1.0), beta=1.0, radius=0.1, sigma=1.0,
                                  m_samples=2)
        assert n == 1

    def test_monotone_in_m(self):
        decay = poly_decay(r=0.8, a=0.5, b=1.0)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DimensionWarning)
            dims = [optimal_dimension(decay, 1.2, 2.0, 1.0, m) for m in
                    (10, 100, 1000, 10_000, 100_000)]
        assert dims == sorted(dims)

    def test_k_max_clamp(self):
        n = optimal_dimension(poly_decay(r=0.5), 1.0, 100.0, 0.1, 10**6, k_max=12)
        assert n == 12


class TestTheoreticalExponent:
    def test_polynomial_value(self):
        assert theoretical_exponent(poly_decay(r=1.0), 1.0) == pytest.approx(0.4)

    def test_exponential_independent_of_rate(self):
        assert theoretical_exponent(exp_decay(r=0.3), 1.0) == pytest.approx(0.5)
        assert theoretical_exponent(exp_decay(r=7.0), 1.0) == pytest.approx(0.5)

    def test_small_beta_limit(self):
        for decay in (poly_decay(), exp_decay()):
            assert theoretical_exponent(decay, 1e-9) < 1e-8

    def test_increasing_in_beta_and_below_one(self):
        betas = np.linspace(0.1, 20.0, 50)
        for decay in (poly_decay(r=0.6), exp_decay(r=2.0)):
            vals = [theoretical_exponent(decay, b) for b in betas]
            assert all(v2 > v1 for v1, v2 in zip(vals, vals[1:]))
            assert all(v < 1.0 for v in vals)
