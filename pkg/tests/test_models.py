import math

import numpy as np
import pytest

from opker.errors import RankError
from opker.models import (
    ForwardModel,
    InputEnsemble,
    InputFunction,
    apply_forward,
    apply_normal_operator,
    basis_forward_batch,
    check_pairing,
    eigendecompose_normal,
    exploration_density,
    forward_norm_sq_batch,
    forward_signal_batch,
    gaussian_preset,
    gram_identity,
    kernel_mode_rep,
    mercer_kernel,
    midpoint_grid,
    rademacher_preset,
    sample_input,
    sample_input_batch,
    y_inner,
)
from opker.spectral import KernelFunction

INTEGRAL = ForwardModel("integral")
NONLOCAL = ForwardModel("nonlocal")
AGGREGATION = ForwardModel("aggregation")


def unit_kernel(eig, index=0):
    coeffs = np.zeros(eig.truncation)
    coeffs[index] = 1.0
    return KernelFunction(coeffs)


class TestEnsembles:
    def test_gaussian_presets_hit_target_variances(self):
        ens = gaussian_preset("sobolev", 5)
        np.testing.assert_allclose(ens.sigmas**2, [4.0 / (2 * math.pi * k) ** 2
                                                   for k in range(1, 6)])
        ens = gaussian_preset("poly", 4, r=1.5)
        np.testing.assert_allclose(ens.sigmas**2, [4.0 * (2 * k) ** -3.0 for k in range(1, 5)])
        ens = gaussian_preset("exp", 3, r=0.7)
        np.testing.assert_allclose(ens.sigmas**2, [4.0 * math.exp(-1.4 * k)
                                                   for k in range(1, 4)])

    def test_rademacher_positivity_constraint(self):
        with pytest.raises(ValueError):
            InputEnsemble("rademacher-fourier", amps=np.array([0.6, 0.3]))

    def test_zero_variance_ensemble_gives_zero_input(self):
        ens = InputEnsemble("gaussian-fourier", sigmas=np.zeros(4))
        u = sample_input(ens, np.random.default_rng(0))
        assert np.all(u.coeffs == 0.0)
        assert np.all(u.values_on(midpoint_grid(16)) == 0.0)

    def test_gaussian_moments_match(self):
        ens = gaussian_preset("poly", 6)
        draws = sample_input_batch(ens, np.random.default_rng(5), 100_000)
        emp = np.mean(draws**2, axis=0)
        se = np.sqrt(2.0 / 100_000) * ens.sigmas**2
        assert np.all(np.abs(emp - ens.sigmas**2) <= 3.0 * se)

    def test_rademacher_inputs_stay_positive(self):
        ens = rademacher_preset(8, scale=0.5)
        rng = np.random.default_rng(2)
        x = midpoint_grid(512)
        for _ in range(50):
            u = sample_input(ens, rng)
            vals = u.values_on(x)
            assert np.all(vals > 0.0) and np.all(vals < 2.0)
            assert set(np.unique(np.abs(u.coeffs))) <= set(ens.amps)

    def test_pairing_rules(self):
        gauss = gaussian_preset("poly", 4)
        rad = rademacher_preset(4)
        check_pairing(INTEGRAL, gauss)
        check_pairing(AGGREGATION, rad)
        with pytest.raises(ValueError):
            check_pairing(AGGREGATION, gauss)
        with pytest.raises(ValueError):
            check_pairing(NONLOCAL, rad)


class TestForward:
    def test_zero_kernel_gives_zero_output(self):
        ens = gaussian_preset("poly", 8)
        u = sample_input(ens, np.random.default_rng(1))
        out = apply_forward(INTEGRAL, lambda s: np.zeros_like(s), u, n_x=128, ens=ens)
        assert np.all(out.values == 0.0)

    def test_one_mode_convolution_oracle(self):
        # phi = sqrt(2) cos(2 pi s), u = cos(2 pi x):
        # int sqrt(2) cos(2 pi s) cos(2 pi (x - s)) ds = cos(2 pi x)/sqrt(2)
        ens = gaussian_preset("poly", 4)
        eig = eigendecompose_normal(INTEGRAL, ens, 8)
        u = InputFunction(np.array([1.0, 0.0, 0.0, 0.0]))
        out = apply_forward(INTEGRAL, unit_kernel(eig), u, n_x=64, ens=ens, eig=eig)
        x = midpoint_grid(64)
        np.testing.assert_allclose(out.values, np.cos(2 * np.pi * x) / math.sqrt(2),
                                   atol=1e-12)

    def test_linearity_in_kernel(self):
        rng = np.random.default_rng(3)
        for model, ens in ((INTEGRAL, gaussian_preset("poly", 8)),
                           (NONLOCAL, gaussian_preset("sobolev", 8)),
                           (AGGREGATION, rademacher_preset(6))):
            u = sample_input(ens, rng)
            phi1 = lambda s: np.sin(2 * np.pi * s) ** 2
            phi2 = lambda s: np.cos(6 * np.pi * s) - 0.3 * s
            both = lambda s: phi1(s) + phi2(s)
            o1 = apply_forward(model, phi1, u, n_x=128, ens=ens)
            o2 = apply_forward(model, phi2, u, n_x=128, ens=ens)
            o12 = apply_forward(model, both, u, n_x=128, ens=ens)
            np.testing.assert_allclose(o12.values, o1.values + o2.values, atol=1e-12)

    def test_integral_grid_norm_matches_exact_fourier(self):
        ens = gaussian_preset("poly", 16)
        rng = np.random.default_rng(4)
        u = sample_input(ens, rng)
        out = apply_forward(INTEGRAL, lambda s: np.exp(np.sin(2 * np.pi * s)) - 1.0, u,
                            n_x=8 * 16, ens=ens)
        assert out.norm_y_sq() == pytest.approx(out.norm_y_sq_exact(), abs=1e-8)

    def test_grid_too_small_rejected(self):
        ens = gaussian_preset("poly", 16)
        u = sample_input(ens, np.random.default_rng(0))
        with pytest.raises(ValueError):
            apply_forward(INTEGRAL, lambda s: s, u, n_x=64, ens=ens)

    def test_aggregation_forward_matches_direct_g_quadrature(self):
        # independent oracle: evaluate g[u](x, s) from u and u' directly and
        # quadrature against phi(s); compare with the series evaluation
        ens = rademacher_preset(6, scale=0.4)
        rng = np.random.default_rng(8)
        u = sample_input(ens, rng)
        n = np.arange(1, 7)

        def u_val(y):
            return 1.0 + np.cos(2 * np.pi * np.outer(y, n)) @ u.coeffs

        def du_val(y):
            return -np.sin(2 * np.pi * np.outer(y, n)) @ (2 * np.pi * n * u.coeffs)

        phi = lambda s: np.sin(2 * np.pi * s) + 0.5 * np.sin(4 * np.pi * s)
        n_x, n_s = 128, 512
        x = midpoint_grid(n_x)
        s = midpoint_grid(n_s)
        g = (du_val(x[:, None] + s[None, :]) - du_val(x[:, None] - s[None, :])) \
            * u_val(x)[:, None] \
            + (u_val(x[:, None] + s[None, :]) - u_val(x[:, None] - s[None, :])) \
            * du_val(x)[:, None]
        direct = g @ phi(s) / n_s
        out = apply_forward(AGGREGATION, phi, u, n_x=n_x, ens=ens, n_s=n_s)
        np.testing.assert_allclose(out.values, direct, atol=1e-10)

    def test_forward_norm_batch_matches_grid(self):
        rng = np.random.default_rng(9)
        for model, ens in ((INTEGRAL, gaussian_preset("poly", 8)),
                           (NONLOCAL, gaussian_preset("sobolev", 8)),
                           (AGGREGATION, rademacher_preset(6))):
            phi = lambda s: np.sin(2 * np.pi * s) + 0.2
            rep = kernel_mode_rep(model, phi, ens)
            coeffs = sample_input_batch(ens, rng, 32)
            fast = forward_norm_sq_batch(model, ens, rep, coeffs)
            grid = np.mean(forward_signal_batch(model, ens, rep, coeffs, 256) ** 2, axis=1)
            np.testing.assert_allclose(fast, grid, rtol=1e-12, atol=1e-14)


class TestExplorationDensity:
    def test_integral_constant_one(self):
        ens = gaussian_preset("sobolev", 8)
        s = midpoint_grid(33)
        np.testing.assert_array_equal(exploration_density(INTEGRAL, ens, s), np.ones(33))

    def test_nonlocal_zero_at_origin(self):
        ens = gaussian_preset("sobolev", 8)
        assert exploration_density(NONLOCAL, ens, np.array([0.0]))[0] == pytest.approx(0.0)

    def test_normalization_all_models(self):
        fine = midpoint_grid(4096)
        for model, ens in ((INTEGRAL, gaussian_preset("poly", 8)),
                           (NONLOCAL, gaussian_preset("sobolev", 8)),
                           (AGGREGATION, rademacher_preset(6))):
            rho = exploration_density(model, ens, fine, n_s=4096)
            assert np.mean(rho) == pytest.approx(1.0, abs=1e-8)


class TestMercerKernel:
    def test_integral_diagonal_partial_zeta_sum(self):
        # sigma_k^2 = 4/(2 pi k)^2 gives G(s, s) = sum 1/(2 pi^2 k^2) -> 1/12
        ens = gaussian_preset("sobolev", 4000)
        val = mercer_kernel(INTEGRAL, ens, np.array([0.3]), np.array([0.3]))[0, 0]
        assert val == pytest.approx(1.0 / 12.0, abs=2e-5)
        # partial-sum oracle at finite truncation
        direct = sum(1.0 / (2 * math.pi**2 * k**2) for k in range(1, 4001))
        assert val == pytest.approx(direct, rel=1e-12)

    def test_nonlocal_vanishes_at_zero(self):
        ens = gaussian_preset("sobolev", 16)
        s = np.array([0.0])
        sp = midpoint_grid(17)
        np.testing.assert_allclose(mercer_kernel(NONLOCAL, ens, s, sp), 0.0, atol=1e-15)

    def test_aggregation_vanishes_at_zero(self):
        ens = rademacher_preset(6)
        vals = mercer_kernel(AGGREGATION, ens, np.array([0.0]), midpoint_grid(9))
        np.testing.assert_allclose(vals, 0.0, atol=1e-12)

    def test_symmetry(self):
        rng = np.random.default_rng(10)
        s = rng.uniform(0, 1, 12)
        for model, ens in ((INTEGRAL, gaussian_preset("poly", 8)),
                           (NONLOCAL, gaussian_preset("sobolev", 8)),
                           (AGGREGATION, rademacher_preset(6))):
            g = mercer_kernel(model, ens, s, s)
            np.testing.assert_array_equal(g, g.T)

    def test_psd_on_random_sets(self):
        rng = np.random.default_rng(11)
        for model, ens in ((INTEGRAL, gaussian_preset("poly", 8)),
                           (NONLOCAL, gaussian_preset("sobolev", 8)),
                           (AGGREGATION, rademacher_preset(6))):
            s = rng.uniform(0, 1, 32)
            g = mercer_kernel(model, ens, s, s)
            g = (g + g.T) / 2
            assert np.linalg.eigvalsh(g).min() >= -1e-8

    def test_nonlocal_matches_monte_carlo(self):
        # dual path: empirical covariance of g[u](., s) over input draws
        ens = gaussian_preset("sobolev", 6)
        rng = np.random.default_rng(12)
        s_pts = np.array([0.21, 0.43, 0.77])
        k = np.arange(1, 7)
        x = midpoint_grid(512)
        n_mc = 4000
        acc = np.zeros((3, 3))
        for _ in range(n_mc):
            coeffs = sample_input_batch(ens, rng, 1)[0]
            g = 2.0 * np.cos(2 * np.pi * np.outer(x, k)) @ (
                coeffs[:, None] * (np.cos(2 * np.pi * np.outer(k, s_pts)) - 1.0))
            acc += g.T @ g / x.size
        acc /= n_mc
        expected = mercer_kernel(NONLOCAL, ens, s_pts, s_pts)
        assert np.max(np.abs(acc - expected)) <= 0.05 * np.max(np.abs(expected))

    def test_aggregation_matches_monte_carlo(self):
        # dual path through the raw series for g built from u and u'
        ens = rademacher_preset(5, scale=0.45)
        rng = np.random.default_rng(13)
        s_pts = np.array([0.13, 0.37, 0.61])
        n = np.arange(1, 6)
        x = midpoint_grid(1024)
        n_mc = 3000
        acc = np.zeros((3, 3))
        for _ in range(n_mc):
            coeffs = sample_input_batch(ens, rng, 1)[0]

            def u_val(y):
                return 1.0 + np.cos(2 * np.pi * np.outer(y, n)) @ coeffs

            def du_val(y):
                return -np.sin(2 * np.pi * np.outer(y, n)) @ (2 * np.pi * n * coeffs)

            g = np.empty((3, x.size))
            for i, s in enumerate(s_pts):
                g[i] = (du_val(x + s) - du_val(x - s)) * u_val(x) \
                    + (u_val(x + s) - u_val(x - s)) * du_val(x)
            acc += g @ g.T / x.size
        acc /= n_mc
        expected = mercer_kernel(AGGREGATION, ens, s_pts, s_pts)
        assert np.max(np.abs(acc - expected)) <= 0.05 * np.max(np.abs(expected))


class TestEigendecomposition:
    def test_integral_analytic_values(self):
        ens = gaussian_preset("sobolev", 8)
        eig = eigendecompose_normal(INTEGRAL, ens, 16)
        assert eig.eigenvalues[0] == pytest.approx(1.0 / (2 * math.pi) ** 2)
        np.testing.assert_allclose(eig.eigenvalues[0::2], ens.sigmas**2 / 4)
        np.testing.assert_allclose(eig.eigenvalues[0::2], eig.eigenvalues[1::2])

    def test_integral_rank_cap(self):
        ens = gaussian_preset("sobolev", 4)
        with pytest.raises(RankError) as err:
            eigendecompose_normal(INTEGRAL, ens, 9)
        assert err.value.usable_rank == 8

    def test_nystrom_rank_cap_matches_mode_count(self):
        ens = gaussian_preset("sobolev", 6)
        with pytest.raises(RankError) as err:
            eigendecompose_normal(NONLOCAL, ens, 10, n_s=128)
        assert err.value.usable_rank <= 6

    def test_orthonormality_tolerances(self):
        ens = gaussian_preset("sobolev", 16)
        eig = eigendecompose_normal(INTEGRAL, ens, 24)
        np.testing.assert_allclose(eig.gram(), np.eye(24), atol=1e-8)
        eig_n = eigendecompose_normal(NONLOCAL, ens, 12, n_s=512)
        np.testing.assert_allclose(eig_n.gram(), np.eye(12), atol=1e-6)

    def test_eigen_identity_by_quadrature(self):
        for model, ens in ((NONLOCAL, gaussian_preset("sobolev", 12)),
                           (AGGREGATION, rademacher_preset(6))):
            eig = eigendecompose_normal(model, ens, 6, n_s=512)
            for k in (0, 2, 5):
                psi = eig.basis.values[:, k]
                image = apply_normal_operator(model, ens, eig, psi)
                rayleigh = np.sum(image * psi * eig.basis.density * eig.basis.weights)
                assert rayleigh == pytest.approx(eig.eigenvalues[k], abs=1e-6)

    def test_nystrom_grid_refinement(self):
        ens = gaussian_preset("sobolev", 32)
        eig_a = eigendecompose_normal(NONLOCAL, ens, 20, n_s=256)
        eig_b = eigendecompose_normal(NONLOCAL, ens, 20, n_s=512)
        np.testing.assert_allclose(eig_a.eigenvalues, eig_b.eigenvalues, atol=1e-5)

    def test_empirical_normal_matrix_limit(self):
        # mean of <R_psi_j[u], R_psi_k[u]>_Y over draws approaches
        # lambda_k delta_jk at the Monte Carlo rate
        ens = gaussian_preset("poly", 8)
        eig = eigendecompose_normal(INTEGRAL, ens, 8)
        rng = np.random.default_rng(14)
        t = 10_000
        coeffs = sample_input_batch(ens, rng, t)
        a = gram_identity(INTEGRAL, eig, 8, coeffs, ens)
        dev = np.max(np.abs(a - np.diag(eig.eigenvalues[:8])))
        assert dev <= 5.0 / math.sqrt(t)

    def test_gram_identity_equals_grid_accumulation(self):
        rng = np.random.default_rng(15)
        for model, ens, k in ((INTEGRAL, gaussian_preset("poly", 8), 6),
                              (NONLOCAL, gaussian_preset("sobolev", 8), 5)):
            eig = eigendecompose_normal(model, ens, k, n_s=256)
            coeffs = sample_input_batch(ens, rng, 40)
            ident = gram_identity(model, eig, k, coeffs, ens)
            values = basis_forward_batch(model, eig, k, coeffs, 256, ens)
            grid = np.einsum("mik,mil->kl", values, values) / (40 * 256)
            np.testing.assert_allclose(ident, grid, atol=1e-13)

    def test_aggregation_has_no_identity_path(self):
        ens = rademacher_preset(6)
        eig = eigendecompose_normal(AGGREGATION, ens, 4, n_s=256)
        coeffs = sample_input_batch(ens, np.random.default_rng(0), 8)
        assert gram_identity(AGGREGATION, eig, 4, coeffs, ens) is None


class TestYInner:
    def test_cell_measure_weighting(self):
        f = np.array([2.0, 0.0, -2.0, 4.0])
        g = np.array([1.0, 1.0, 1.0, 0.5])
        assert y_inner(f, g) == pytest.approx((2.0 + 0.0 - 2.0 + 2.0) / 4.0)
