"""Discrete belief propagation: sum-product, max-product, efficient updates.

Messages are kept in log-space and normalized after every update so that
their exponentials sum to one.  Three schedules are provided:

  * ``tree-order``: one exact leaves-to-root-to-leaves pass (trees only).
  * ``synchronous``: Jacobi rounds from a snapshot of the previous round,
    so results do not depend on edge iteration order.
  * ``sequential``: Gauss-Seidel in sorted directed-edge order.

A vectorized min-sum solver for 4-connected pixel grids with truncated
linear smoothness lives here too; the truncated-linear message is computed
with the lower-envelope (distance transform) recursion, linear in the
label count.
"""

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp

from .graphs import FactorGraph, FiniteDomain


class DivisionUnsafeError(ValueError):
    """Raised when the division-form update would divide by a zero message."""


def _directed_edges(graph: FactorGraph) -> list[tuple[int, int]]:
    out = []
    for s, t in graph.edges:
        out.append((s, t))
        out.append((t, s))
    return sorted(out)


def init_messages(graph: FactorGraph) -> dict[tuple[int, int], np.ndarray]:
    """Uniform normalized messages for every directed edge (t, s)."""
    msgs = {}
    for t, s in _directed_edges(graph):
        size = graph.domain(s).size
        msgs[(t, s)] = np.full(size, -np.log(size))
    return msgs


def _normalize(vec: np.ndarray) -> np.ndarray:
    return vec - logsumexp(vec)


def _premessage(graph, messages, t: int, exclude: int) -> np.ndarray:
    """log of Psi_t(x_t) * prod_{u in nbrs(t) minus exclude} m_{u->t}(x_t)."""
    acc = graph.unary_table(t).astype(float).copy()
    for u in graph.neighbors(t):
        if u != exclude:
            acc = acc + messages[(u, t)]
    return acc

def direct_message_update(graph, messages, edge, mode: str = "sum") -> np.ndarray:
    """Recompute message t->s from scratch (the defining recursion)."""
    t, s = edge
    pre = _premessage(graph, messages, t, exclude=s)
    # pairwise_table(t, s) rows run over x_t, columns over x_s
    tab = graph.pairwise_table(t, s)
    scores = tab + pre[:, None]
    if mode == "sum":
        out = logsumexp(scores, axis=0)
    else:
        out = np.max(scores, axis=0)
    return _normalize(out)


def message_update_division(graph, beliefs, messages, edge) -> np.ndarray:
    """Efficient message t->s using the stored belief at t.

    Computes sum_{x_t} Psi_ts(x_t, x_s) * B_t(x_t) / m_{s->t}(x_t) in
    log-space.  The result is identical to `direct_message_update` whenever
    the reverse message is strictly positive.

    Raises
    ------
    DivisionUnsafeError
        If any entry of the reverse message m_{s->t} is zero (-inf in log
        space); the caller should fall back to the direct update.
    """
    t, s = edge
    reverse = messages[(s, t)]
    if not np.all(np.isfinite(reverse)):
        raise DivisionUnsafeError(f"zero message entry on reverse edge ({s},{t})")
    tab = graph.pairwise_table(t, s)
    scores = tab + (beliefs[t] - reverse)[:, None]
    return _normalize(logsumexp(scores, axis=0))


def beliefs_from_messages(graph, messages) -> list[np.ndarray]:
    """Normalized log-beliefs B_s = Psi_s * prod_t m_{t->s}."""
    out = []
    for s in range(graph.n_variables):
        acc = graph.unary_table(s).astype(float).copy()
        for t in graph.neighbors(s):
            acc = acc + messages[(t, s)]
        out.append(_normalize(acc))
    return out


def _check_finite(graph: FactorGraph) -> None:
    if not graph.all_finite():
        raise ValueError("discrete BP requires finite domains")


def _tree_order(graph: FactorGraph) -> tuple[list[tuple[int, int]], list[int]]:
    """BFS edge order (parent->child) per component; errors on cycles."""
    n = graph.n_variables
    parent = [-1] * n
    seen = [False] * n
    order: list[tuple[int, int]] = []
    roots: list[int] = []
    for root in range(n):
        if seen[root]:
            continue
        roots.append(root)
        seen[root] = True
        queue = [root]
        while queue:
            v = queue.pop(0)
            for u in graph.neighbors(v):
                if u == parent[v]:
                    continue
                if seen[u]:
                    raise ValueError("graph has a cycle; tree-order schedule invalid")
                seen[u] = True
                parent[u] = v
                order.append((v, u))
                queue.append(u)
    return order, roots


def _run_schedule(graph, schedule, max_iters, tol, damping, mode, division):
    messages = init_messages(graph)
    if schedule == "tree-order":
        down, _ = _tree_order(graph)
        # child-to-root sweep, then root-to-child sweep: exact in one pass
        for v, u in reversed(down):
            messages[(u, v)] = direct_message_update(graph, messages, (u, v), mode)
        for v, u in down:
            messages[(v, u)] = direct_message_update(graph, messages, (v, u), mode)
        return messages
    if schedule not in ("synchronous", "sequential"):
        raise ValueError(f"unknown schedule {schedule!r}")

    edges = _directed_edges(graph)
    for _ in range(max_iters):
        source = dict(messages) if schedule == "synchronous" else messages
        delta = 0.0
        updates = {}
        for edge in edges:
            if division and mode == "sum":
                try:
                    beliefs = beliefs_from_messages(graph, source)
                    new = message_update_division(graph, beliefs, source, edge)
                except DivisionUnsafeError:
                    new = direct_message_update(graph, source, edge, mode)
            else:
                new = direct_message_update(graph, source, edge, mode)
            if damping > 0.0:
                new = _normalize(damping * messages[edge] + (1.0 - damping) * new)
            delta = max(delta, float(np.max(np.abs(new - messages[edge]))))
            if schedule == "synchronous":
                updates[edge] = new
            else:
                messages[edge] = new
        if schedule == "synchronous":
            messages.update(updates)
        if delta < tol:
            break
    return messages


def sum_product(
    graph: FactorGraph,
    schedule: str = "synchronous",
    max_iters: int = 100,
    tol: float = 1e-5,
    damping: float = 0.0,
    division: bool = False,
) -> list[np.ndarray]:
    """Normalized log-beliefs per variable; exact on trees with tree-order."""
    _check_finite(graph)
    messages = _run_schedule(graph, schedule, max_iters, tol, damping, "sum", division)
    return beliefs_from_messages(graph, messages)


def max_product(
    graph: FactorGraph,
    schedule: str = "synchronous",
    max_iters: int = 100,
    tol: float = 1e-5,
    damping: float = 0.0,
) -> list:
    """MAP assignment (list of labels); exact on trees with tree-order."""
    _check_finite(graph)
    messages = _run_schedule(graph, schedule, max_iters, tol, damping, "max", None)
    if schedule == "tree-order":
        return _decode_tree(graph, messages)
    beliefs = beliefs_from_messages(graph, messages)
    return [graph.domain(s).labels[int(np.argmax(b))] for s, b in enumerate(beliefs)]


def _decode_tree(graph, messages) -> list:
    """Backtracking MAP decode; consistent joint argmax even under ties."""
    down, roots = _tree_order(graph)
    choice = [-1] * graph.n_variables
    for r in roots:
        acc = graph.unary_table(r).astype(float).copy()
        for t in graph.neighbors(r):
            acc = acc + messages[(t, r)]
        choice[r] = int(np.argmax(acc))
    for v, u in down:
        pre = _premessage(graph, messages, u, exclude=v)
        tab = graph.pairwise_table(v, u)  # rows x_v, cols x_u
        scores = tab[choice[v], :] + pre
        choice[u] = int(np.argmax(scores))
    return [graph.domain(s).labels[choice[s]] for s in range(graph.n_variables)]


# ----------------------------------------------------------------------
# vectorized min-sum BP on a 4-connected pixel grid
# ----------------------------------------------------------------------


def _envelope_truncated_linear(h: np.ndarray, lam: float, tau: float) -> np.ndarray:
    """min over l' of h[..., l'] + min(lam*|l - l'|, tau), vectorized over pixels.

    Two-pass lower-envelope recursion for the linear part, then a cap at
    min(h) + tau for the truncation.  Requires lam > 0 and tau > 0.
    """
    m = h.copy()
    n_labels = m.shape[-1]
    for l in range(1, n_labels):
        np.minimum(m[..., l], m[..., l - 1] + lam, out=m[..., l])
    for l in range(n_labels - 2, -1, -1):
        np.minimum(m[..., l], m[..., l + 1] + lam, out=m[..., l])
    cap = np.min(h, axis=-1, keepdims=True) + tau
    np.minimum(m, cap, out=m)
    return m


def grid_max_product(
    data_cost: np.ndarray,
    lam: float,
    tau: float,
    iters: int = 30,
) -> np.ndarray:
    """MAP labels on an H x W 4-connected grid by synchronous min-sum BP.

    data_cost: (H, W, L) per-pixel label costs.
    Pairwise cost between 4-neighbors is min(lam * |l - l'|, tau).
    Returns (H, W) int array of labels; ties pick the smallest label.
    """
    data_cost = np.asarray(data_cost, dtype=float)
    # messages arriving at each pixel from the 4 directions
    from_up = np.zeros_like(data_cost)
    from_down = np.zeros_like(data_cost)
    from_left = np.zeros_like(data_cost)
    from_right = np.zeros_like(data_cost)

    # lam <= 0 or tau <= 0 makes the pairwise cost identically zero, so
    # messages stay zero and the result is the per-pixel argmin
    if lam > 0.0 and tau > 0.0:
        for _ in range(iters):
            base = data_cost + from_up + from_down + from_left + from_right
            # message each pixel sends in a direction excludes what it
            # received from that direction
            send_down = _envelope_truncated_linear(base - from_down, lam, tau)
            send_up = _envelope_truncated_linear(base - from_up, lam, tau)
            send_right = _envelope_truncated_linear(base - from_right, lam, tau)
            send_left = _envelope_truncated_linear(base - from_left, lam, tau)
            # shift into the receiving pixel's frame
            new_up = np.empty_like(data_cost)
            new_up[1:, :, :] = send_down[:-1, :, :]
            new_up[0, :, :] = 0.0
            new_down = np.empty_like(data_cost)
            new_down[:-1, :, :] = send_up[1:, :, :]
            new_down[-1, :, :] = 0.0
            new_left = np.empty_like(data_cost)
            new_left[:, 1:, :] = send_right[:, :-1, :]
            new_left[:, 0, :] = 0.0
            new_right = np.empty_like(data_cost)
            new_right[:, :-1, :] = send_left[:, 1:, :]
            new_right[:, -1, :] = 0.0
            # normalize so the smallest entry is zero (argmin unaffected)
            for msg in (new_up, new_down, new_left, new_right):
                msg -= msg.min(axis=-1, keepdims=True)
            from_up, from_down = new_up, new_down
            from_left, from_right = new_left, new_right

    belief = data_cost + from_up + from_down + from_left + from_right
    return np.argmin(belief, axis=-1)
