"""Generic MCMC samplers: Metropolis-Hastings, simulated annealing, Gibbs,
and one particle-filter iteration.

Targets are unnormalized log-densities.  Every sampler takes an explicit
RNG so runs are reproducible; an `RngStream` names a (seed, stream) pair
and always reproduces the same draw sequence.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class RngStream:
    """Named random stream; identical (seed, stream) gives identical draws."""

    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(self.seed, spawn_key=(self.stream,))
        return np.random.default_rng(seq)


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngStream):
        return rng.generator()
    return np.random.default_rng(rng)


@dataclass
class ProposalKernel:
    """Proposal q(x'|x): a sampler plus an optional transition log-density.

    `log_density(x_from, x_to)` evaluates log q(x_to | x_from).  Symmetric
    kernels never need it: the acceptance ratio drops the q terms, and this
    implementation never calls `log_density` when `symmetric` is set.
    """

    sample: Callable
    log_density: Callable | None = None
    symmetric: bool = False


def gaussian_walk(step_std) -> ProposalKernel:
    """Symmetric Gaussian random-walk proposal."""
    step_std = np.asarray(step_std, dtype=float)

    def sample(x, rng):
        x = np.asarray(x, dtype=float)
        return x + rng.normal(0.0, 1.0, size=x.shape) * step_std

    return ProposalKernel(sample=sample, symmetric=True)


def _mh_chain(target, proposal, init, steps, rng, temperature):
    """Shared MH / annealing loop.

    temperature(t) scales the log acceptance ratio by 1/T; with T == 1 this
    is plain Metropolis-Hastings.  One proposal draw and one uniform draw
    are consumed per step regardless of the acceptance decision, so chains
    with different temperature schedules stay aligned on a shared stream.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    rng = as_generator(rng)
    if not proposal.symmetric and proposal.log_density is None:
        raise ValueError("asymmetric proposal requires a log_density evaluator")

    current = init
    lf_current = float(target(current))
    if not np.isfinite(lf_current):
        raise ValueError("initial state has non-finite log-density")

    samples = []
    accepted = 0
    best_state, best_lf = current, lf_current
    prev_temp = np.inf
    for t in range(steps):
        temp = float(temperature(t))
        if temp <= 0.0:
            raise ValueError(f"temperature must be positive, got {temp} at step {t}")
        if temp > prev_temp + 1e-12:
            raise ValueError("temperature schedule must be non-increasing")
        prev_temp = temp

        candidate = proposal.sample(current, rng)
        lf_candidate = float(target(candidate))
        log_ratio = lf_candidate - lf_current
        if not proposal.symmetric:
            log_ratio += float(proposal.log_density(candidate, current))
            log_ratio -= float(proposal.log_density(current, candidate))
        u = rng.uniform()
        if np.log(u) < log_ratio / temp:
            current, lf_current = candidate, lf_candidate
            accepted += 1
            if lf_current > best_lf:
                best_state, best_lf = current, lf_current
        samples.append(current)
    return samples, accepted / steps, best_state, best_lf


def metropolis_hastings(target, proposal, init, steps, rng):
    """Run an MH chain; returns (samples, acceptance_rate).

    Acceptance uses min(f(x*) q(x*->x) / (f(x) q(x->x*)), 1); rejected
    proposals repeat the current state in the sample list.
    """
    samples, rate, _, _ = _mh_chain(target, proposal, init, steps, rng, lambda t: 1.0)
    return samples, rate


def geometric_schedule(t0: float = 1.0, gamma: float = 0.95):
    return lambda t: t0 * gamma**t


def simulated_annealing(target, proposal, init, steps, rng, schedule=None):
    """Annealed MH; returns the state with the highest observed log-density.

    With schedule T == 1 the transition rule is exactly Metropolis-Hastings.
    Default schedule is geometric: T(t) = 1.0 * 0.95^t.
    """
    if schedule is None:
        schedule = geometric_schedule()
    _, _, best_state, _ = _mh_chain(target, proposal, init, steps, rng, schedule)
    return best_state


def gibbs_sweep(conditionals, state, rng):
    """One Gibbs sweep: resample each coordinate in index order.

    `conditionals[i]` is an exact sampler `f(state, rng) -> value` for
    coordinate i given all others; each draw sees the updates made earlier
    in the same sweep.  Equivalent to MH with acceptance probability 1.
    """
    rng = as_generator(rng)
    state = list(state)
    for i, sampler in enumerate(conditionals):
        state[i] = sampler(state, rng)
    return state


def particle_filter_step(particles, weights, transition, likelihood, rng):
    """One SIR iteration: propose, reweight, resample, reset weights.

    transition(particle, rng) draws from the proposal; likelihood(particle)
    is the observation density up to a constant.  Returns (particles,
    weights) with uniform weights 1/P after proportional resampling.
    """
    rng = as_generator(rng)
    particles = list(particles)
    weights = np.asarray(weights, dtype=float)
    if abs(weights.sum() - 1.0) > 1e-9:
        raise ValueError("input weights must sum to 1")

    proposed = [transition(p, rng) for p in particles]
    new_w = weights * np.array([float(likelihood(p)) for p in proposed])
    total = new_w.sum()
    if total <= 0.0:
        raise ValueError("degenerate weights: likelihood zero for all particles")
    new_w = new_w / total

    n = len(proposed)
    idx = rng.choice(n, size=n, p=new_w)
    resampled = [proposed[i] for i in idx]
    return resampled, np.full(n, 1.0 / n)
