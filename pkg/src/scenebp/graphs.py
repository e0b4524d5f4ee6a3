"""Pairwise Markov random field representation and brute-force oracles.

A factor graph here is a set of variables with finite or particle
(continuous, vector-valued) domains, unary log-potentials, and pairwise
log-potentials on an undirected edge set.  Everything is stored in
log-space: the unnormalized joint is

    log P(x) + log Z = sum_s U_s(x_s) + sum_{s,t} P_st(x_s, x_t)

and the energy of an assignment is the negative of that sum, so
exp(-energy) is proportional to the joint probability.

Graphs are immutable after construction; all operations are pure.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.special import logsumexp

# Brute-force enumeration refuses joint state spaces larger than this.
MAX_ORACLE_STATES = 10**7


@dataclass(frozen=True)
class FiniteDomain:
    """Finite label set; label index order fixes the lexicographic order."""

    labels: tuple

    def __post_init__(self):
        if len(self.labels) == 0:
            raise ValueError("finite domain must have at least one label")

    @property
    def size(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class ParticleDomain:
    """Continuous vector domain of fixed dimension, represented by particles."""

    dimension: int

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("particle domain dimension must be >= 1")


Domain = FiniteDomain | ParticleDomain
LogPotential = Callable


class FactorGraph:
    """Immutable pairwise MRF.

    Parameters
    ----------
    domains:
        One domain per variable; variable ids are 0..N-1.
    unary:
        Map variable id -> log-potential evaluator ``f(x) -> float``.
        Variables without an entry have an implicit zero log-potential.
    pairwise:
        Map edge (s, t) -> log-potential evaluator ``f(x_s, x_t) -> float``
        called in the key's order.  Edges are undirected: (s, t) and (t, s)
        denote the same edge and may be given either way, but only once.
    """

    def __init__(
        self,
        domains: Sequence[Domain],
        unary: Mapping[int, LogPotential] | None = None,
        pairwise: Mapping[tuple[int, int], LogPotential] | None = None,
    ):
        self._domains = tuple(domains)
        n = len(self._domains)
        unary = dict(unary or {})
        for s in unary:
            if not 0 <= s < n:
                raise ValueError(f"unary potential references unknown variable {s}")
        self._unary = unary

        canonical: dict[tuple[int, int], LogPotential] = {}
        for (s, t), fn in (pairwise or {}).items():
            if not (0 <= s < n and 0 <= t < n):
                raise ValueError(f"edge ({s},{t}) references unknown variable")
            if s == t:
                raise ValueError(f"self-edge ({s},{t}) not allowed")
            key = (s, t) if s < t else (t, s)
            if key in canonical:
                raise ValueError(f"duplicate edge {key}")
            canonical[key] = fn if s < t else _flip(fn)
        # Sorted edge order makes every downstream iteration independent of
        # the insertion order of the input mapping.
        self._pairwise = {k: canonical[k] for k in sorted(canonical)}

        nbrs: list[list[int]] = [[] for _ in range(n)]
        for s, t in self._pairwise:
            nbrs[s].append(t)
            nbrs[t].append(s)
        self._neighbors = tuple(tuple(sorted(v)) for v in nbrs)

        self._unary_tables: dict[int, np.ndarray] = {}
        self._pairwise_tables: dict[tuple[int, int], np.ndarray] = {}
        self._label_index = {
            s: {lab: i for i, lab in enumerate(d.labels)}
            for s, d in enumerate(self._domains)
            if isinstance(d, FiniteDomain)
        }

    # ------------------------------------------------------------------
    # structure
    # ------------------------------------------------------------------

    @property
    def n_variables(self) -> int:
        return len(self._domains)

    @property
    def domains(self) -> tuple[Domain, ...]:
        return self._domains

    def domain(self, s: int) -> Domain:
        return self._domains[s]

    @property
    def edges(self) -> tuple[tuple[int, int], ...]:
        """Canonical (s < t) edges in sorted order."""
        return tuple(self._pairwise)

    def neighbors(self, s: int) -> tuple[int, ...]:
        return self._neighbors[s]

    def all_finite(self) -> bool:
        return all(isinstance(d, FiniteDomain) for d in self._domains)

    def label_index(self, s: int, value) -> int:
        return self._label_index[s][value]

    # ------------------------------------------------------------------
    # potential evaluation
    # ------------------------------------------------------------------

    def log_unary(self, s: int, x) -> float:
        fn = self._unary.get(s)
        return 0.0 if fn is None else float(fn(x))

    def log_pairwise(self, s: int, t: int, xs, xt) -> float:
        """Pairwise log-potential for edge {s,t} evaluated at (x_s, x_t)."""
        if s < t:
            return float(self._pairwise[(s, t)](xs, xt))
        return float(self._pairwise[(t, s)](xt, xs))

    def has_unary(self, s: int) -> bool:
        return s in self._unary

    def unary_fn(self, s: int) -> LogPotential | None:
        return self._unary.get(s)

    def pairwise_fn(self, s: int, t: int) -> LogPotential:
        """Evaluator for edge {s,t} taking arguments in (x_s, x_t) order."""
        if s < t:
            return self._pairwise[(s, t)]
        return _flip(self._pairwise[(t, s)])

    def unary_table(self, s: int) -> np.ndarray:
        """Unary log-potentials tabulated over the finite domain of s."""
        tab = self._unary_tables.get(s)
        if tab is None:
            dom = self._domains[s]
            if not isinstance(dom, FiniteDomain):
                raise ValueError(f"variable {s} has no finite domain to tabulate")
            tab = np.array([self.log_unary(s, lab) for lab in dom.labels])
            self._unary_tables[s] = tab
        return tab

    def pairwise_table(self, s: int, t: int) -> np.ndarray:
        """Pairwise log-potentials tabulated as an |X_s| x |X_t| array."""
        if s > t:
            return self.pairwise_table(t, s).T
        tab = self._pairwise_tables.get((s, t))
        if tab is None:
            ds, dt = self._domains[s], self._domains[t]
            if not (isinstance(ds, FiniteDomain) and isinstance(dt, FiniteDomain)):
                raise ValueError(f"edge ({s},{t}) has a non-finite endpoint")
            fn = self._pairwise[(s, t)]
            tab = np.array(
                [[float(fn(a, b)) for b in dt.labels] for a in ds.labels]
            )
            self._pairwise_tables[(s, t)] = tab
        return tab

    # ------------------------------------------------------------------
    # energy
    # ------------------------------------------------------------------

    def energy(self, assignment) -> float:
        """Negative log of the unnormalized joint at `assignment`.

        `assignment` is a sequence of values indexed by variable id (or a
        mapping with exactly those keys).  exp(-energy) is proportional to
        the joint probability.
        """
        values = _assignment_values(self, assignment)
        e = 0.0
        for s, x in enumerate(values):
            e -= self.log_unary(s, x)
        for s, t in self._pairwise:
            e -= self.log_pairwise(s, t, values[s], values[t])
        return e


def _flip(fn: LogPotential) -> LogPotential:
    def flipped(a, b):
        return fn(b, a)

    flipped.vectorized = getattr(fn, "vectorized", False)
    return flipped


def vectorized_potential(fn: LogPotential) -> LogPotential:
    """Mark a log-potential as accepting broadcastable arrays of values."""
    fn.vectorized = True
    return fn


def _assignment_values(graph: FactorGraph, assignment) -> list:
    n = graph.n_variables
    if isinstance(assignment, Mapping):
        missing = [s for s in range(n) if s not in assignment]
        if missing:
            raise ValueError(f"assignment missing variables {missing}")
        values = [assignment[s] for s in range(n)]
    else:
        values = list(assignment)
        if len(values) != n:
            raise ValueError(
                f"assignment has {len(values)} values, graph has {n} variables"
            )
    for s, x in enumerate(values):
        dom = graph.domain(s)
        if isinstance(dom, FiniteDomain):
            if x not in graph._label_index[s]:
                raise ValueError(f"value {x!r} not in domain of variable {s}")
    return values


def energy(graph: FactorGraph, assignment) -> float:
    return graph.energy(assignment)


# ----------------------------------------------------------------------
# brute-force oracles
# ----------------------------------------------------------------------


def _check_enumerable(graph: FactorGraph) -> tuple[int, ...]:
    if not graph.all_finite():
        raise ValueError("brute-force oracle requires all domains finite")
    sizes = tuple(d.size for d in graph.domains)
    count = 1
    for k in sizes:
        count *= k
        if count > MAX_ORACLE_STATES:
            raise ValueError(
                f"joint state space exceeds oracle cutoff {MAX_ORACLE_STATES}"
            )
    return sizes


def joint_log_potential(graph: FactorGraph) -> np.ndarray:
    """Unnormalized joint log-potential tensor, one axis per variable."""
    sizes = _check_enumerable(graph)
    n = graph.n_variables
    joint = np.zeros(sizes)
    for s in range(n):
        shape = [1] * n
        shape[s] = sizes[s]
        joint = joint + graph.unary_table(s).reshape(shape)
    for s, t in graph.edges:
        shape = [1] * n
        shape[s] = sizes[s]
        shape[t] = sizes[t]
        joint = joint + graph.pairwise_table(s, t).reshape(shape)
    return joint


def brute_force_marginals(graph: FactorGraph) -> list[np.ndarray]:
    """Exact per-variable marginals by full enumeration."""
    joint = joint_log_potential(graph)
    log_z = logsumexp(joint)
    n = graph.n_variables
    out = []
    for s in range(n):
        axes = tuple(a for a in range(n) if a != s)
        marg = np.exp(logsumexp(joint, axis=axes) - log_z)
        out.append(marg / marg.sum())
    return out


def brute_force_map(graph: FactorGraph) -> list:
    """Exact MAP assignment; ties broken by lexicographic label-index order."""
    joint = joint_log_potential(graph)
    idx = np.unravel_index(np.argmax(joint), joint.shape)
    return [graph.domain(s).labels[i] for s, i in enumerate(idx)]


def enumerate_assignments(graph: FactorGraph):
    """Yield all joint assignments (as lists of labels) in lexicographic order."""
    _check_enumerable(graph)
    label_sets = [d.labels for d in graph.domains]
    for combo in itertools.product(*label_sets):
        yield list(combo)
