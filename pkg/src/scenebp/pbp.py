"""Particle belief propagation on factor graphs with continuous domains.

Each node carries one particle set (values plus positive sampling weights
W_s evaluated at the particles).  Messages are Monte Carlo estimates of the
BP integrals, importance-corrected by the sampling weights:

    m_hat[i, t->s] = (1/n) sum_j Psi_ts(x_t^j, x_s^i) Psi_t(x_t^j)
                       * prod_{u in nbrs(t), u != s} m_hat[j, u->t] / w_t^j

computed in log-space with log-sum-exp.  Beliefs are evaluable at any
query point, not only at particles, by substituting the query into the
same estimate.  Resampling runs a short Metropolis chain per particle
targeting the current belief.  The max-product variant replaces the
(1/n)-average with a max over source particles.
"""

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp

from .graphs import FactorGraph
from .mcmc import ProposalKernel, as_generator


class ParticleSet:
    """Particles for one node with positive sampling weights.

    particles: array of shape (n,) for scalar domains or (n, d) for vector
    domains.  Weights may be given linearly (`weights`) or as logs
    (`log_weights`); they must all be positive.
    """

    def __init__(self, node: int, particles, weights=None, log_weights=None):
        self.node = node
        self.particles = np.asarray(particles, dtype=float)
        n = self.particles.shape[0]
        if n < 1:
            raise ValueError("particle set must contain at least one particle")
        if (weights is None) == (log_weights is None):
            if weights is None:
                log_weights = np.zeros(n)
            else:
                raise ValueError("give either weights or log_weights, not both")
        if log_weights is None:
            w = np.asarray(weights, dtype=float)
            if np.any(w <= 0.0):
                raise ValueError("sampling weights must be positive")
            log_weights = np.log(w)
        self.log_weights = np.asarray(log_weights, dtype=float)
        if self.log_weights.shape != (n,):
            raise ValueError("weights shape does not match particle count")
        if np.any(~np.isfinite(self.log_weights)):
            raise ValueError("sampling weights must be positive and finite")

    @property
    def n(self) -> int:
        return self.particles.shape[0]

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)


def uniform_particle_set(node: int, particles) -> ParticleSet:
    return ParticleSet(node, particles)


def _normalize(vec: np.ndarray) -> np.ndarray:
    return vec - logsumexp(vec)


def _unary_log(graph: FactorGraph, s: int, values: np.ndarray) -> np.ndarray:
    """Unary log-potential at each row of `values`; zeros when absent."""
    fn = graph.unary_fn(s)
    n = values.shape[0]
    if fn is None:
        return np.zeros(n)
    if getattr(fn, "vectorized", False):
        return np.asarray(fn(values), dtype=float)
    return np.array([float(fn(values[j])) for j in range(n)])


def _pair_log_matrix(graph, t: int, s: int, xt: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """(n_t, n_s) matrix of pairwise log-potentials for edge {t,s}."""
    fn = graph.pairwise_fn(t, s)
    if getattr(fn, "vectorized", False):
        if xt.ndim == 1:
            return np.asarray(fn(xt[:, None], xs[None, :]), dtype=float)
        return np.asarray(fn(xt[:, None, :], xs[None, :, :]), dtype=float)
    out = np.empty((xt.shape[0], xs.shape[0]))
    for j in range(xt.shape[0]):
        for i in range(xs.shape[0]):
            out[j, i] = float(fn(xt[j], xs[i]))
    return out


def _source_premessage(graph, particle_sets, messages, t: int, exclude: int) -> np.ndarray:
    """log [ Psi_t(x_t^j) prod_{u != exclude} m_hat[j, u->t] / w_t^j ] per j."""
    ps_t = particle_sets[t]
    pre = _unary_log(graph, t, ps_t.particles) - ps_t.log_weights
    for u in graph.neighbors(t):
        if u != exclude:
            pre = pre + messages[(u, t)]
    return pre


def init_particle_messages(graph, particle_sets) -> dict[tuple[int, int], np.ndarray]:
    msgs = {}
    for s, t in graph.edges:
        msgs[(s, t)] = np.full(particle_sets[t].n, -np.log(particle_sets[t].n))
        msgs[(t, s)] = np.full(particle_sets[s].n, -np.log(particle_sets[s].n))
    return msgs


def pbp_message_update(graph, particle_sets, messages, edge, mode: str = "sum") -> np.ndarray:
    """Updated message vector over the target's particles for edge (t, s)."""
    t, s = edge
    pair = _pair_log_matrix(graph, t, s, particle_sets[t].particles,
                            particle_sets[s].particles)
    pre = _source_premessage(graph, particle_sets, messages, t, exclude=s)
    scores = pair + pre[:, None]
    if mode == "sum":
        out = logsumexp(scores, axis=0) - np.log(particle_sets[t].n)
    else:
        out = np.max(scores, axis=0)
    return _normalize(out)


def pbp_belief_many(graph, particle_sets, messages, s: int, queries) -> np.ndarray:
    """Unnormalized log-beliefs of node s at arbitrary query points.

    Each incoming message is re-estimated at the query by the same
    importance sum used on particles, so beliefs are defined everywhere.
    """
    queries = np.asarray(queries, dtype=float)
    vals = _unary_log(graph, s, queries)
    for t in graph.neighbors(s):
        pair = _pair_log_matrix(graph, t, s, particle_sets[t].particles, queries)
        pre = _source_premessage(graph, particle_sets, messages, t, exclude=s)
        vals = vals + logsumexp(pair + pre[:, None], axis=0) - np.log(particle_sets[t].n)
    return vals


def pbp_belief(graph, particle_sets, messages, s: int, x) -> float:
    """Unnormalized log-belief of node s at a single query point."""
    x = np.asarray(x, dtype=float)
    return float(pbp_belief_many(graph, particle_sets, messages, s, x[None])[0])


def belief_at_particles(graph, particle_sets, messages, s: int) -> np.ndarray:
    """Normalized log-belief over the stored particles of node s."""
    ps = particle_sets[s]
    acc = _unary_log(graph, s, ps.particles)
    for t in graph.neighbors(s):
        acc = acc + messages[(t, s)]
    return _normalize(acc)


def run_messages(graph, particle_sets, messages=None, iters: int = 10,
                 mode: str = "sum") -> dict[tuple[int, int], np.ndarray]:
    """Synchronous message iterations over all directed edges."""
    if messages is None:
        messages = init_particle_messages(graph, particle_sets)
    directed = sorted(messages)
    for _ in range(iters):
        snapshot = dict(messages)
        for edge in directed:
            messages[edge] = pbp_message_update(graph, particle_sets, snapshot,
                                                edge, mode)
    return messages


def pbp_resample(graph, particle_sets, messages, node: int, mh_steps: int, rng,
                 proposal: ProposalKernel | None = None,
                 step_std=1.0) -> ParticleSet:
    """Replace a node's particles by short MH chains on its current belief.

    All chains advance in lockstep (one vectorized proposal per step).  New
    sampling weights are the belief values at the accepted points.  With a
    `proposal` kernel given, its sampler is applied row-wise; otherwise a
    Gaussian random walk with `step_std` is used.
    """
    if mh_steps < 1:
        raise ValueError("mh_steps must be >= 1")
    rng = as_generator(rng)
    ps = particle_sets[node]
    state = ps.particles.copy()
    lb = pbp_belief_many(graph, particle_sets, messages, node, state)
    if not np.any(np.isfinite(lb)):
        raise ValueError(f"degenerate belief at node {node}: all particles have zero belief")

    for _ in range(mh_steps):
        if proposal is not None:
            cand = np.stack([np.asarray(proposal.sample(state[i], rng), dtype=float)
                             for i in range(ps.n)])
            cand = cand.reshape(state.shape)
        else:
            cand = state + rng.normal(0.0, 1.0, size=state.shape) * step_std
        lb_cand = pbp_belief_many(graph, particle_sets, messages, node, cand)
        log_u = np.log(rng.uniform(size=ps.n))
        accept = log_u < (lb_cand - lb)
        state[accept] = cand[accept]
        lb[accept] = lb_cand[accept]

    if not np.any(np.isfinite(lb)):
        raise ValueError(f"degenerate belief at node {node} after resampling")
    return ParticleSet(node, state, log_weights=lb - logsumexp(lb))


def pbp_run(graph, particle_sets, rounds: int, mode: str, rng,
            mh_steps: int = 5, msg_iters: int = 10, step_std=1.0,
            proposal: ProposalKernel | None = None):
    """Alternate message passing and per-node MCMC resampling.

    mode="sum": returns (particle_sets, messages, beliefs) where beliefs
    are normalized log-beliefs over each node's final particles.
    mode="max": returns (assignment, energy, history); the assignment is
    the best-energy per-node argmax seen across rounds and history is the
    retained best energy after each round (non-increasing by construction).

    step_std may be a scalar, a per-dimension array, or a dict keyed by
    node id for per-node proposal scales.
    """
    if mode not in ("sum", "max"):
        raise ValueError(f"unknown mode {mode!r}")
    rng = as_generator(rng)
    particle_sets = dict(particle_sets)

    def node_std(s):
        if isinstance(step_std, dict):
            return step_std[s]
        return step_std

    best_assignment = None
    best_energy = np.inf
    history: list[float] = []

    def harvest(messages):
        nonlocal best_assignment, best_energy
        values = []
        for s in range(graph.n_variables):
            b = belief_at_particles(graph, particle_sets, messages, s)
            values.append(particle_sets[s].particles[int(np.argmax(b))])
        e = graph.energy(values)
        if e < best_energy:
            best_energy = e
            best_assignment = values
        history.append(best_energy)

    messages = run_messages(graph, particle_sets, iters=msg_iters, mode=mode)
    if mode == "max":
        harvest(messages)
    for _ in range(rounds):
        for s in range(graph.n_variables):
            particle_sets[s] = pbp_resample(graph, particle_sets, messages, s,
                                            mh_steps, rng, proposal=proposal,
                                            step_std=node_std(s))
        messages = run_messages(graph, particle_sets, iters=msg_iters, mode=mode)
        if mode == "max":
            harvest(messages)

    if mode == "max":
        return best_assignment, best_energy, history
    beliefs = [belief_at_particles(graph, particle_sets, messages, s)
               for s in range(graph.n_variables)]
    return particle_sets, messages, beliefs
