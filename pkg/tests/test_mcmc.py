"""Sampler correctness tests: stationary distributions, equivalences,
reproducibility, and a Kalman-filter oracle for the particle filter step."""

from __future__ import annotations

import math

import numpy as np
import pytest

from scenebp.graphs import FactorGraph, FiniteDomain, brute_force_marginals
from scenebp.mcmc import (
    ProposalKernel,
    RngStream,
    as_generator,
    gaussian_walk,
    gibbs_sweep,
    metropolis_hastings,
    particle_filter_step,
    simulated_annealing,
)


def flip_proposal():
    """Symmetric proposal on {0,1}: always propose the other point."""
    return ProposalKernel(sample=lambda x, rng: 1 - x, symmetric=True)


class TestMetropolisHastings:
    def test_independent_exact_sampler_always_accepts(self):
        # proposal draws from the target itself; the MH ratio is exactly 1
        probs = np.array([0.3, 0.7])
        target = lambda x: math.log(probs[int(x)])
        kernel = ProposalKernel(
            sample=lambda x, rng: int(rng.uniform() < probs[1]),
            log_density=lambda x_from, x_to: math.log(probs[int(x_to)]),
            symmetric=False,
        )
        _, rate = metropolis_hastings(target, kernel, 0, 2000, RngStream(1))
        assert rate == 1.0

    def test_two_point_stationary_frequency(self):
        target = lambda x: math.log(1.0 if x == 0 else 3.0)
        samples, _ = metropolis_hastings(target, flip_proposal(), 0, 50_000,
                                         RngStream(2))
        freq1 = np.mean([s == 1 for s in samples])
        assert 0.72 <= freq1 <= 0.78

    def test_gaussian_target_mean(self):
        target = lambda x: -0.5 * float(x) ** 2
        samples, rate = metropolis_hastings(target, gaussian_walk(1.0),
                                            0.0, 100_000, RngStream(3))
        mean = float(np.mean(samples))
        # random-walk chains are autocorrelated; 3 standard errors with an
        # integrated autocorrelation time of ~10 gives about 0.03
        assert abs(mean) < 0.05
        assert 0.2 < rate < 0.9

    def test_invalid_start_rejected(self):
        target = lambda x: -np.inf if x == 0 else 0.0
        with pytest.raises(ValueError):
            metropolis_hastings(target, flip_proposal(), 0, 10, RngStream(0))

    def test_symmetric_proposal_never_evaluates_density(self):
        def poisoned(x_from, x_to):
            raise AssertionError("log_density must not be called for symmetric kernels")

        kernel = ProposalKernel(sample=lambda x, rng: 1 - x,
                                log_density=poisoned, symmetric=True)
        target = lambda x: math.log(1.0 if x == 0 else 2.0)
        samples, _ = metropolis_hastings(target, kernel, 0, 500, RngStream(4))
        assert len(samples) == 500

    def test_asymmetric_without_density_rejected(self):
        kernel = ProposalKernel(sample=lambda x, rng: 1 - x, symmetric=False)
        with pytest.raises(ValueError):
            metropolis_hastings(lambda x: 0.0, kernel, 0, 10, RngStream(0))

    def test_reproducible_from_stream(self):
        target = lambda x: -0.5 * float(x) ** 2
        a, _ = metropolis_hastings(target, gaussian_walk(0.5), 0.0, 200, RngStream(9))
        b, _ = metropolis_hastings(target, gaussian_walk(0.5), 0.0, 200, RngStream(9))
        assert np.array_equal(np.asarray(a, dtype=float), np.asarray(b, dtype=float))

    def test_detailed_balance_counts(self):
        # 3-state target sampled by single-site symmetric proposals
        probs = np.array([0.2, 0.3, 0.5])
        target = lambda x: math.log(probs[int(x)])
        kernel = ProposalKernel(
            sample=lambda x, rng: int((x + rng.integers(1, 3)) % 3),
            symmetric=True,
        )
        samples, _ = metropolis_hastings(target, kernel, 0, 200_000, RngStream(7))
        counts = np.zeros((3, 3))
        for a, b in zip(samples[:-1], samples[1:]):
            counts[int(a), int(b)] += 1
        for i in range(3):
            for j in range(i + 1, 3):
                diff = abs(counts[i, j] - counts[j, i])
                se = math.sqrt(counts[i, j] + counts[j, i])
                assert diff <= 3.0 * se

    def test_three_state_stationary_tv(self):
        probs = np.array([0.2, 0.3, 0.5])
        target = lambda x: math.log(probs[int(x)])
        kernel = ProposalKernel(
            sample=lambda x, rng: int((x + rng.integers(1, 3)) % 3),
            symmetric=True,
        )
        samples, _ = metropolis_hastings(target, kernel, 0, 100_000, RngStream(8))
        emp = np.bincount(np.asarray(samples, dtype=int), minlength=3) / len(samples)
        tv = 0.5 * np.abs(emp - probs).sum()
        assert tv <= 0.02


class TestSimulatedAnnealing:
    def test_unit_temperature_equals_mh_step_for_step(self):
        # both runs draw from the same (seed, stream); the sequence of states
        # the target is evaluated at (init + every candidate, which depends on
        # all earlier accept decisions) must match exactly
        target = lambda x: -0.5 * float(x) ** 2
        trace_mh, trace_sa = [], []

        def t_mh(x):
            trace_mh.append(float(x))
            return target(x)

        def t_sa(x):
            trace_sa.append(float(x))
            return target(x)

        metropolis_hastings(t_mh, gaussian_walk(1.0), 0.0, 300, RngStream(11))
        simulated_annealing(t_sa, gaussian_walk(1.0), 0.0, 300, RngStream(11),
                            schedule=lambda t: 1.0)
        assert trace_mh == trace_sa

    def test_two_mode_target_finds_higher_mode(self):
        # overlapping modes at -1 and +1; the +1 mode is 5x taller
        def target(x):
            x = float(x)
            return float(np.logaddexp(-0.5 * (x + 1) ** 2,
                                      math.log(5.0) - 0.5 * (x - 1) ** 2))

        hits = 0
        for seed in range(100):
            best = simulated_annealing(target, gaussian_walk(2.0), -1.0, 300,
                                       RngStream(seed, stream=5))
            if float(best) > 0:
                hits += 1
        assert hits >= 90

    def test_single_point_space(self):
        kernel = ProposalKernel(sample=lambda x, rng: x, symmetric=True)
        best = simulated_annealing(lambda x: 0.0, kernel, 42, 50, RngStream(0))
        assert best == 42

    def test_nonpositive_temperature_rejected(self):
        with pytest.raises(ValueError):
            simulated_annealing(lambda x: 0.0, flip_proposal(), 0, 10, RngStream(0),
                                schedule=lambda t: 0.0)

    def test_increasing_schedule_rejected(self):
        with pytest.raises(ValueError):
            simulated_annealing(lambda x: 0.0, flip_proposal(), 0, 10, RngStream(0),
                                schedule=lambda t: 1.0 + t)


class TestGibbs:
    def test_independent_coordinates_match_marginals(self):
        p0, p1 = 0.3, 0.8

        def cond0(state, rng):
            return int(rng.uniform() < p0)

        def cond1(state, rng):
            return int(rng.uniform() < p1)

        rng = as_generator(RngStream(21))
        state = [0, 0]
        hits = np.zeros(2)
        sweeps = 20_000
        for _ in range(sweeps):
            state = gibbs_sweep([cond0, cond1], state, rng)
            hits += state
        freq = hits / sweeps
        assert abs(freq[0] - p0) < 0.02
        assert abs(freq[1] - p1) < 0.02

    def test_two_variable_mrf_long_run_joint(self):
        # x,y binary with coupling; exact conditionals from the table
        w = np.array([[0.5, 1.5], [2.0, 1.0]])
        g = FactorGraph(
            [FiniteDomain((0, 1))] * 2,
            pairwise={(0, 1): lambda a, b: math.log(w[int(a), int(b)])},
        )
        marg = brute_force_marginals(g)
        joint = w / w.sum()

        def cond0(state, rng):
            col = w[:, state[1]]
            return int(rng.uniform() < col[1] / col.sum())

        def cond1(state, rng):
            row = w[state[0], :]
            return int(rng.uniform() < row[1] / row.sum())

        rng = as_generator(RngStream(22))
        state = [0, 0]
        counts = np.zeros((2, 2))
        for _ in range(100_000):
            state = gibbs_sweep([cond0, cond1], state, rng)
            counts[state[0], state[1]] += 1
        emp = counts / counts.sum()
        tv = 0.5 * np.abs(emp - joint).sum()
        assert tv <= 0.02
        assert np.allclose(emp.sum(axis=1), marg[0], atol=0.02)

    def test_deterministic_conditionals_fixed_point(self):
        conds = [lambda s, rng: 1, lambda s, rng: 0]
        rng = as_generator(RngStream(23))
        s1 = gibbs_sweep(conds, [0, 1], rng)
        s2 = gibbs_sweep(conds, s1, rng)
        assert s1 == [1, 0] and s2 == s1


class TestParticleFilter:
    def test_identity_transition_uniform_likelihood(self):
        particles = [0.0, 1.0, 2.0, 3.0]
        w = np.full(4, 0.25)
        new_p, new_w = particle_filter_step(particles, w, lambda p, rng: p,
                                            lambda p: 1.0, RngStream(31))
        assert set(new_p) <= set(particles)
        assert np.allclose(new_w, 0.25)

    def test_concentrated_likelihood_collapses(self):
        particles = [0.0, 1.0, 2.0]
        w = np.full(3, 1.0 / 3.0)
        new_p, _ = particle_filter_step(particles, w, lambda p, rng: p,
                                        lambda p: 1.0 if p == 2.0 else 0.0,
                                        RngStream(32))
        assert all(p == 2.0 for p in new_p)

    def test_degenerate_weights_error(self):
        with pytest.raises(ValueError):
            particle_filter_step([0.0, 1.0], [0.5, 0.5], lambda p, rng: p,
                                 lambda p: 0.0, RngStream(0))

    def test_unnormalized_input_weights_error(self):
        with pytest.raises(ValueError):
            particle_filter_step([0.0, 1.0], [0.5, 0.9], lambda p, rng: p,
                                 lambda p: 1.0, RngStream(0))

    def test_linear_gaussian_tracks_kalman_oracle(self):
        # x_t = a x_{t-1} + w, y_t = x_t + v; scalar Kalman recursion oracle
        a, q, r = 0.9, 0.5**2, 0.4**2
        rng = as_generator(RngStream(33))
        x = 0.0
        ys = []
        for _ in range(5):
            x = a * x + rng.normal(0.0, math.sqrt(q))
            ys.append(x + rng.normal(0.0, math.sqrt(r)))

        mean, var = 0.0, 1.0
        for y in ys:
            pm, pv = a * mean, a * a * var + q
            k = pv / (pv + r)
            mean, var = pm + k * (y - pm), (1 - k) * pv

        n = 10_000
        prng = as_generator(RngStream(34))
        particles = list(prng.normal(0.0, 1.0, size=n))
        weights = np.full(n, 1.0 / n)
        for y in ys:
            transition = lambda p, rg: a * p + rg.normal(0.0, math.sqrt(q))
            likelihood = lambda p: math.exp(-0.5 * (y - p) ** 2 / r)
            particles, weights = particle_filter_step(particles, weights,
                                                      transition, likelihood, prng)
        pf_mean = float(np.mean(particles))
        assert abs(pf_mean - mean) <= 3.0 * math.sqrt(var) / math.sqrt(n) * 10
