import math

import numpy as np
import pytest
from scipy.stats import poisson

from kaclab.gaussian import TWO_PI, GaussianMixture, entropy_information, ou_evolve
from kaclab.model import CollisionMeasure, derive_params, local_params
from kaclab.series import (SeriesConfig, _components, _enumerate, evolve_marginal, resolve_kmax,
                           second_moment, second_moment_flow, verify_bounds, verify_entropy_bound,
                           verify_information_bound)
from kaclab.sumrule import BudgetExceeded, brute_force_K, decay_bound_gauss

F0 = GaussianMixture.scaled_standard(2.0)


def poisson_energy_oracle(params, a, t, kmax=20):
    """E|v|^2 from sum_k Poisson(k) tr E[A^T A] a/2pi + tr E[B B^T]/2pi, K by enumeration."""
    M = params.M
    total = 0.0
    for k in range(kmax + 1):
        K = brute_force_K(params, k) if k <= 4 else None
        ck = K[0, 0] if K is not None else None
        if ck is None:
            # beyond k=4 enumeration is slow; use the recursion through the 2x2 P matrix
            ck = params_C(params, k)
        total += poisson.pmf(k, params.Lambda * t) * (M / TWO_PI) * (1 + ck * (a - 1))
    return total


def params_C(params, k):
    M, N = params.M, params.N
    g = params.mu_nu / (params.Lambda * N)
    P = np.array([[1 - N * g, N * g], [M * g, 1 - M * g]])
    return (np.linalg.matrix_power(P, k) @ [1.0, 0.0])[0]


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            SeriesConfig(t=-1.0)
        with pytest.raises(ValueError):
            SeriesConfig(t=1.0, mode="bogus")
        with pytest.raises(ValueError):
            SeriesConfig(t=1.0, tail_epsilon=0.0)

    def test_kmax_tail(self):
        p = local_params(1.0, 1, 2)
        k = resolve_kmax(p, SeriesConfig(t=1.0))
        assert poisson.sf(k, 3.0) <= 1e-10 < poisson.sf(k - 1, 3.0)

    def test_kmax_too_small(self):
        p = local_params(1.0, 1, 2)
        with pytest.raises(ValueError):
            evolve_marginal(p, F0, SeriesConfig(t=1.0, k_max=3))


class TestEvolve:
    def test_time_zero(self):
        ev = evolve_marginal(local_params(1.0, 1, 2), F0, SeriesConfig(t=0.0))
        assert ev.mixture is F0 and ev.covered_mass == 1.0

    def test_uncoupled_system(self):
        p = derive_params(1, 3, 0, 1, 0)
        ev = evolve_marginal(p, F0, SeriesConfig(t=2.0))
        assert np.allclose(ev.mixture.covs, F0.covs, atol=1e-14)
        assert np.allclose(ev.mixture.means, F0.means, atol=1e-14)

    @pytest.mark.parametrize("t", [0.25, 1.0, 2.0])
    def test_second_moment_matches_oracle(self, t):
        p = local_params(1.0, 1, 2)
        ev = evolve_marginal(p, F0, SeriesConfig(t=t))
        oracle = poisson_energy_oracle(p, 2.0, t, kmax=60)
        assert second_moment(ev.mixture) == pytest.approx(oracle, abs=1e-10)
        assert second_moment_flow(p, 2.0 / TWO_PI, t) == pytest.approx(oracle, abs=1e-12)

    def test_mass_accounting(self):
        p = local_params(1.0, 2, 2)
        cfg = SeriesConfig(t=0.5, prune_weight=1e-9)
        U, w, covered, tail, pruned, hist = _enumerate(p, GaussianMixture.standard(2), cfg, resolve_kmax(p, cfg))
        assert abs(covered + tail + pruned - 1) < 1e-12
        assert covered >= 1 - cfg.tail_epsilon - pruned - 1e-15
        assert abs(math.fsum(w) - covered) < 1e-12

    def test_budget(self):
        p = local_params(1.0, 2, 3, CollisionMeasure.atoms([math.pi / 3, -math.pi / 3]))
        with pytest.raises(BudgetExceeded):
            evolve_marginal(p, GaussianMixture.standard(2), SeriesConfig(t=2.0, state_budget=1000))

    def test_reservoir_exchangeability(self):
        p = local_params(1.0, 1, 3)
        f0 = GaussianMixture([0.4, 0.6], [[0.3], [-0.2]], [[[0.1]], [[0.25]]])
        cfg = SeriesConfig(t=0.5)
        U, w, *_ = _enumerate(p, f0, cfg, resolve_kmax(p, cfg))
        perm = [0, 3, 1, 2]
        a = _components(1, U, w, f0)
        b = _components(1, U[:, :, perm], w, f0)
        for x, y in zip(a, b):
            assert np.allclose(x, y, atol=1e-12)

    def test_sample_vs_enumerate_second_moment(self):
        p = local_params(1.0, 1, 2)
        enum = second_moment(evolve_marginal(p, F0, SeriesConfig(t=0.5)).mixture)
        ev = evolve_marginal(p, F0, SeriesConfig(t=0.5, mode="sample", histories=40000, seed=3))
        vals = np.array([second_moment(m) for m in ev.batch_mixtures])
        se = vals.std(ddof=1) / math.sqrt(len(vals))
        assert abs(vals.mean() - enum) < 3 * se + 1e-12

    def test_sample_deterministic(self):
        p = local_params(1.0, 1, 2)
        cfg = SeriesConfig(t=0.5, mode="sample", histories=2000, seed=5)
        a = evolve_marginal(p, F0, cfg).mixture
        b = evolve_marginal(p, F0, cfg).mixture
        assert np.array_equal(a.covs, b.covs) and np.array_equal(a.weights, b.weights)

    def test_commutes_with_ou(self):
        p = local_params(1.0, 1, 2)
        f0 = GaussianMixture([0.5, 0.5], [[0.4], [-0.3]], [[[0.05]], [[0.2]]])
        s, t = 0.3, 0.5
        cfg = SeriesConfig(t=t, tail_epsilon=1e-13)
        a = ou_evolve(evolve_marginal(p, f0, cfg).mixture, s)
        b = evolve_marginal(p, ou_evolve(f0, s), cfg).mixture
        x = np.linspace(-2, 2, 401)[:, None]
        assert np.max(np.abs(a.pdf(x) - b.pdf(x))) < 1e-10


class TestSecondMomentFlow:
    def test_equilibrium(self):
        p = local_params(1.0, 2, 3)
        assert second_moment_flow(p, 2 / TWO_PI, 3.0) == pytest.approx(2 / TWO_PI, abs=1e-15)

    def test_time_zero(self):
        p = local_params(1.0, 1, 2)
        assert second_moment_flow(p, 0.7, 0.0) == 0.7

    def test_example_value(self):
        p = derive_params(1, 2, 0, 1, 1, CollisionMeasure.uniform())
        val = second_moment_flow(p, 2 / TWO_PI, 1.0)
        oracle = poisson_energy_oracle(p, 2.0, 1.0, kmax=40)
        assert val == pytest.approx(oracle, abs=1e-12)
        assert val == pytest.approx((1 + decay_bound_gauss(p, 1.0)) / TWO_PI, abs=1e-15)
        # the quoted 0.23435 keeps only the exponential part of the decay factor
        assert (1 + math.exp(-0.75)) / TWO_PI == pytest.approx(0.23435, abs=1e-4)
        assert abs(val - 0.23435) > 0.02

    def test_energy_shared_over_all_particles(self):
        p = local_params(1.0, 1, 4)
        e_inf = second_moment_flow(p, 2 / TWO_PI, 1e3)
        # excess energy 1/(2pi) ends up spread over M+N = 5 particles
        assert e_inf == pytest.approx((1 + 1 / 5) / TWO_PI, abs=1e-12)


class TestBounds:
    def test_t0_tight(self):
        p = local_params(1.0, 1, 2)
        rep = verify_bounds(p, F0, SeriesConfig(t=0.0), [0.0])
        for r in rep.values():
            assert abs(r.rows[0].value - r.rows[0].bound) < 1e-9

    @pytest.mark.parametrize("N", [2, 4])
    def test_entropy_sweep(self, N):
        rep = verify_entropy_bound(local_params(1.0, 1, N), F0, SeriesConfig(t=0.0), [0.25, 0.5, 1, 2])
        assert rep.passed
        assert all(r.tolerance < 1e-4 for r in rep.rows)

    def test_information_sweep(self):
        rep = verify_information_bound(local_params(1.0, 1, 2), F0, SeriesConfig(t=0.0), [0.25, 0.5, 1, 2])
        assert rep.passed

    def test_reference_initial(self):
        rep = verify_bounds(local_params(1.0, 1, 2), GaussianMixture.standard(1), SeriesConfig(t=0.0), [0.5, 1])
        assert all(abs(r.value) < 1e-9 for r in rep["entropy"].rows)

    def test_no_coupling_equality(self):
        p = derive_params(1, 2, 0, 1, 0)
        rep = verify_information_bound(p, F0, SeriesConfig(t=0.0), [1.0])
        row = rep.rows[0]
        assert row.factor == 1.0 and abs(row.value - row.bound) < 1e-9

    def test_sample_mode(self):
        cfg = SeriesConfig(t=0.0, mode="sample", histories=5000, seed=1)
        rep = verify_bounds(local_params(1.0, 1, 2), F0, cfg, [0.5, 1.0])
        assert rep["entropy"].passed and rep["information"].passed

    def test_two_dimensional_system(self):
        f0 = GaussianMixture.gaussian([0.2, -0.1], [[0.3, 0.05], [0.05, 0.1]])
        rep = verify_bounds(local_params(1.0, 2, 2), f0, SeriesConfig(t=0.0, tail_epsilon=1e-8), [0.25])
        assert rep["entropy"].passed and rep["information"].passed
