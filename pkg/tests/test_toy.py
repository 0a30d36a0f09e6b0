"""Closed-form toy posterior machinery, checked against independent oracles.

Expected values come from hand-evaluated formulas, adaptive quadrature,
and samplers built from nothing but the forward model.
"""

import numpy as np
import pytest
from scipy import integrate, stats

from hnpe.toy import (
    ToyObservation,
    ToyPosteriorOracle,
    ToySimulator,
    alpha_support_multi,
    joint_density_single,
    marginal_alpha_multi,
    marginal_alpha_single,
    marginal_beta_multi,
    marginal_beta_single,
    mu_concentration_probability,
    sample_posterior_multi,
    sample_posterior_single,
    simulate_toy,
    toy_prior,
)


def beta_cdf_multi(beta, oracle):
    """Reference CDF (mu^-N - beta^-N) / (mu^-N - 1), clipped to [0, 1]."""
    n, mu = oracle.n_extra, oracle.mu
    beta = np.clip(np.asarray(beta, dtype=float), mu, 1.0)
    return (mu**-n - beta**-n) / (mu**-n - 1.0)


class TestSimulateToy:
    def test_noiseless_product(self):
        assert simulate_toy(0.5, 0.5, 0.0) == 0.25

    def test_identity_in_beta(self):
        for x in (0.1, 0.37, 0.99):
            assert simulate_toy(1.0, x, 0.0) == x

    def test_monte_carlo_moments(self):
        rng = np.random.default_rng(11)
        draws = np.array([simulate_toy(0.5, 0.5, 0.01, rng) for _ in range(10**5)])
        assert abs(draws.mean() - 0.25) < 3e-4
        assert abs(draws.std() - 0.01) < 3e-4

    def test_box_violation_rejected(self):
        with pytest.raises(ValueError):
            simulate_toy(1.5, 0.5, 0.0)
        with pytest.raises(ValueError):
            simulate_toy(0.5, -0.1, 0.0)
        with pytest.raises(ValueError):
            simulate_toy(0.5, 0.5, -1.0)

    def test_noise_requires_generator(self):
        with pytest.raises(ValueError):
            simulate_toy(0.5, 0.5, 0.01)


class TestToyObservation:
    def test_noiseless_range_enforced(self):
        ToyObservation(x=0.25, sigma=0.0)
        with pytest.raises(ValueError):
            ToyObservation(x=1.25, sigma=0.0)

    def test_noisy_range_free(self):
        ToyObservation(x=1.25, sigma=0.1)


class TestJointDensitySingle:
    def test_indicator_zero(self):
        assert joint_density_single(1.5, 0.5, 0.25, 0.01) == 0.0

    def test_closed_form_value(self):
        want = (1.0 / np.sqrt(2.0 * np.pi * 1e-4)) / np.log(4.0)
        assert joint_density_single(0.5, 0.5, 0.25, 0.01) == pytest.approx(want, rel=1e-12)

    def test_normalization_quadrature(self):
        total, _ = integrate.dblquad(
            lambda a, b: joint_density_single(a, b, 0.25, 0.01),
            0.0, 1.0, 0.0, 1.0, epsabs=1e-10,
        )
        assert total == pytest.approx(1.0, abs=1e-3)

    def test_x0_out_of_range(self):
        with pytest.raises(ValueError):
            joint_density_single(0.5, 0.5, 1.5, 0.01)
        with pytest.raises(ValueError):
            joint_density_single(0.5, 0.5, 0.25, 0.0)


class TestSingleMarginals:
    def test_beta_value(self):
        assert marginal_beta_single(0.5, 0.5) == pytest.approx(2.0 / np.log(2.0), rel=1e-12)

    def test_beta_below_support(self):
        assert marginal_beta_single(0.3, 0.5) == 0.0

    def test_beta_normalization(self):
        total, _ = integrate.quad(lambda b: marginal_beta_single(b, 0.2), 0.2, 1.0, epsabs=1e-12)
        assert total == pytest.approx(1.0, abs=1e-9)

    def test_alpha_symmetry(self):
        assert marginal_alpha_single(0.5, 0.5) == pytest.approx(2.0 / np.log(2.0), rel=1e-12)
        assert marginal_alpha_single(0.1, 0.5) == 0.0

    def test_alpha_normalization(self):
        total, _ = integrate.quad(lambda a: marginal_alpha_single(a, 0.7), 0.7, 1.0, epsabs=1e-12)
        assert total == pytest.approx(1.0, abs=1e-9)


class TestOracleConstruction:
    def test_sorted_extras_and_mu(self):
        o = ToyPosteriorOracle(x0=0.5, extras=[0.7, 0.3, 0.6])
        assert o.extras == (0.3, 0.6, 0.7)
        assert o.mu == 0.7
        assert o.n_extra == 3
        assert not o.degenerate

    def test_mu_includes_x0(self):
        o = ToyPosteriorOracle(x0=0.9, extras=[0.2, 0.3])
        assert o.mu == 0.9

    def test_zero_member_rejected(self):
        with pytest.raises(ValueError):
            ToyPosteriorOracle(x0=0.0, extras=[0.5])
        with pytest.raises(ValueError):
            ToyPosteriorOracle(x0=0.5, extras=[0.0])

    def test_above_one_rejected(self):
        with pytest.raises(ValueError):
            ToyPosteriorOracle(x0=0.5, extras=[1.2])

    def test_degenerate_flag(self):
        assert ToyPosteriorOracle(x0=1.0, extras=[0.5]).degenerate
        assert ToyPosteriorOracle(x0=0.5, extras=[1.0]).degenerate


class TestMultiMarginals:
    def test_beta_value(self):
        o = ToyPosteriorOracle(x0=0.5, extras=[0.6])
        want = 1.0 / ((1.0 / 0.6 - 1.0) * 0.8**2)
        assert want == pytest.approx(2.34375, rel=1e-12)
        assert marginal_beta_multi(0.8, o) == pytest.approx(want, rel=1e-12)

    def test_beta_support_indicator(self):
        o = ToyPosteriorOracle(x0=0.5, extras=[0.6])
        assert marginal_beta_multi(0.5, o) == 0.0
        assert marginal_beta_multi(1.01, o) == 0.0

    def test_beta_normalization(self):
        rng = np.random.default_rng(5)
        x0 = rng.uniform(0.1, 0.9)
        extras = rng.uniform(0.1, 0.9, size=5)
        o = ToyPosteriorOracle(x0=x0, extras=extras)
        total, _ = integrate.quad(lambda b: marginal_beta_multi(b, o), o.mu, 1.0, epsabs=1e-12)
        assert total == pytest.approx(1.0, abs=1e-9)

    def test_alpha_value_constant_density(self):
        o = ToyPosteriorOracle(x0=0.5, extras=[0.6])
        assert alpha_support_multi(o) == pytest.approx((0.5, 0.5 / 0.6))
        assert marginal_alpha_multi(0.7, o) == pytest.approx(3.0, rel=1e-12)
        assert marginal_alpha_multi(0.6, o) == pytest.approx(3.0, rel=1e-12)

    def test_alpha_below_support(self):
        o = ToyPosteriorOracle(x0=0.5, extras=[0.6])
        assert marginal_alpha_multi(0.4, o) == 0.0

    def test_alpha_normalization(self):
        rng = np.random.default_rng(8)
        extras = rng.uniform(0.1, 0.9, size=10)
        o = ToyPosteriorOracle(x0=0.35, extras=extras)
        lo, hi = alpha_support_multi(o)
        total, _ = integrate.quad(lambda a: marginal_alpha_multi(a, o), lo, hi, epsabs=1e-12)
        assert total == pytest.approx(1.0, abs=1e-9)

    def test_n_zero_rejected(self):
        empty = ToyPosteriorOracle(x0=0.5, extras=[])
        with pytest.raises(ValueError):
            marginal_beta_multi(0.8, empty)
        with pytest.raises(ValueError):
            marginal_alpha_multi(0.6, empty)

    def test_continuity_at_duplicate(self):
        # X = {x0} keeps mu = x0; the N=1 formula must agree on a grid.
        o = ToyPosteriorOracle(x0=0.5, extras=[0.5])
        for b in np.linspace(0.5, 1.0, 7):
            want = 1.0 / ((1.0 / 0.5 - 1.0) * b**2)
            assert marginal_beta_multi(b, o) == pytest.approx(want, rel=1e-12)

    def test_degenerate_point_mass(self):
        o = ToyPosteriorOracle(x0=0.5, extras=[1.0])
        assert marginal_beta_multi(1.0, o) == np.inf
        assert marginal_beta_multi(0.9, o) == 0.0
        assert marginal_alpha_multi(0.5, o) == np.inf
        assert marginal_alpha_multi(0.6, o) == 0.0


class TestSamplePosteriorMulti:
    def test_inverse_cdf_endpoints(self):
        # beta(u) = (mu^-N - u (mu^-N - 1))^(-1/N) hits the support edges
        mu, n = 0.6, 3
        beta_at = lambda u: (mu**-n - u * (mu**-n - 1.0)) ** (-1.0 / n)
        assert beta_at(0.0) == pytest.approx(mu, rel=1e-14)
        assert beta_at(1.0) == pytest.approx(1.0, rel=1e-14)

    def test_ridge_constraint(self):
        o = ToyPosteriorOracle(x0=0.5, extras=[0.6, 0.55, 0.7])
        pairs = sample_posterior_multi(o, 1000, np.random.default_rng(0))
        assert pairs.shape == (1000, 2)
        assert np.max(np.abs(pairs[:, 0] * pairs[:, 1] - 0.5)) < 1e-12

    def test_support(self):
        o = ToyPosteriorOracle(x0=0.5, extras=[0.6])
        pairs = sample_posterior_multi(o, 10**4, np.random.default_rng(1))
        assert pairs[:, 1].min() >= o.mu
        assert pairs[:, 1].max() <= 1.0

    def test_ks_against_closed_form_cdf(self):
        o = ToyPosteriorOracle(x0=0.5, extras=[0.6, 0.8, 0.55])
        pairs = sample_posterior_multi(o, 10**5, np.random.default_rng(2))
        stat = stats.kstest(pairs[:, 1], lambda b: beta_cdf_multi(b, o)).statistic
        assert stat < 0.01

    def test_rejection_sampler_cross_check(self):
        # Independent sampler built from the forward model alone: propose
        # beta uniformly on [mu, 1], accept iff N+1 fresh simulations all
        # land at or below mu (probability (mu/beta)^(N+1)).
        o = ToyPosteriorOracle(x0=0.5, extras=[0.6, 0.7])
        rng = np.random.default_rng(3)
        target = 10**4
        kept = []
        while sum(len(k) for k in kept) < target:
            beta = rng.uniform(o.mu, 1.0, size=2000)
            sims = np.array(
                [
                    max(simulate_toy(a, b, 0.0) for a in rng.uniform(size=o.n_extra + 1))
                    for b in beta
                ]
            )
            kept.append(beta[sims <= o.mu])
        reference = np.concatenate(kept)[:target]
        pairs = sample_posterior_multi(o, target, np.random.default_rng(4))
        p = stats.ks_2samp(pairs[:, 1], reference).pvalue
        assert p > 0.01

    def test_degenerate_returns_atoms(self):
        o = ToyPosteriorOracle(x0=0.5, extras=[1.0])
        pairs = sample_posterior_multi(o, 10, np.random.default_rng(0))
        assert np.all(pairs[:, 0] == 0.5)
        assert np.all(pairs[:, 1] == 1.0)

    def test_support_width_shrinks_with_n(self):
        rng = np.random.default_rng(6)
        beta0 = 0.7
        medians = []
        for n in (1, 5, 25):
            widths = []
            for _ in range(400):
                alphas = rng.uniform(size=n + 1)
                xs = alphas * beta0
                widths.append(1.0 - max(xs))
            medians.append(np.median(widths))
        assert medians[0] > medians[1] > medians[2]


class TestSamplePosteriorSingle:
    def test_support_and_ridge(self):
        pairs = sample_posterior_single(0.3, 10**4, np.random.default_rng(0))
        assert np.max(np.abs(pairs[:, 0] * pairs[:, 1] - 0.3)) < 1e-12
        assert pairs[:, 1].min() >= 0.3 and pairs[:, 1].max() <= 1.0

    def test_ks_against_log_uniform_cdf(self):
        x0 = 0.3
        pairs = sample_posterior_single(x0, 10**5, np.random.default_rng(1))
        cdf = lambda b: np.log(np.clip(b, x0, 1.0) / x0) / np.log(1.0 / x0)
        stat = stats.kstest(pairs[:, 1], cdf).statistic
        assert stat < 0.01


class TestMuConcentration:
    def test_direct_value(self):
        assert mu_concentration_probability(0.1, 10) == pytest.approx(0.34867844, rel=1e-7)

    def test_empty_set(self):
        assert mu_concentration_probability(0.37, 0) == 1.0

    def test_monte_carlo(self):
        rng = np.random.default_rng(9)
        beta0 = 0.8
        hits = 0
        reps = 10**5
        alphas = rng.uniform(size=(reps, 10))
        mus = (alphas * beta0).max(axis=1)
        hits = np.sum(mus < beta0 * (1.0 - 0.1))
        assert hits / reps == pytest.approx(0.3487, abs=0.005)

    def test_validation(self):
        with pytest.raises(ValueError):
            mu_concentration_probability(0.0, 5)
        with pytest.raises(ValueError):
            mu_concentration_probability(1.0, 5)
        with pytest.raises(ValueError):
            mu_concentration_probability(0.1, -1)


class TestToySimulator:
    def test_protocol_shapes(self):
        sim = ToySimulator(sigma=0.0)
        out = sim.simulate(np.array([0.5]), np.array([0.5]), np.random.default_rng(0))
        assert out.shape == (1,)
        assert out[0] == 0.25

    def test_batch_shapes_and_mask(self):
        sim = ToySimulator(sigma=0.01)
        alphas = np.full((50, 1), 0.5)
        betas = np.full((50, 1), 0.5)
        x, ok = sim.simulate_batch(alphas, betas, seed=0)
        assert x.shape == (50, 1)
        assert ok.all()

    def test_batch_determinism(self):
        sim = ToySimulator(sigma=0.01)
        alphas = np.random.default_rng(0).uniform(size=(20, 1))
        betas = np.random.default_rng(1).uniform(size=(20, 1))
        x1, _ = sim.simulate_batch(alphas, betas, seed=5)
        x2, _ = sim.simulate_batch(alphas, betas, seed=5)
        assert np.array_equal(x1, x2)

    def test_prior_box(self):
        p = toy_prior()
        assert p.dim_local == 1 and p.dim_global == 1
        assert p.bounds.tolist() == [[0.0, 1.0], [0.0, 1.0]]
