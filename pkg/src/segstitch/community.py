"""Community detection on weighted pixel graphs.

A deterministic Leiden-style optimizer: queue-based local moving, a
refinement pass constrained to the current communities, and graph
aggregation, iterated to a fixed point.  Two quality objectives are
supported, both with a resolution parameter:

  cpm:  sum_c [ W_c - gamma * M_c (M_c - 1) / 2 ]
  rb:   sum_c [ W_c / W - gamma * (s_c / 2W)^2 * 2W ]

with W_c the internal weight of community c, M_c its node mass (count of
original nodes), s_c its total strength, and W the total graph weight.
Both objectives share one move-gain kernel: the gain of moving node i from
community a to c is (w_ic - w_ia') - gamma * m_i * (M_c - M_a') with node
masses m equal to counts (cpm) or strengths (rb); for rb this equals the
exact objective change scaled by the constant W.

Determinism: node visit order comes from a seeded permutation, gain ties
break toward the lower community id, and output labels are canonicalized
by first occurrence, so results are reproducible regardless of any thread
schedule upstream.
"""
from __future__ import annotations

import numpy as np
from numba import njit

from .errors import ParameterError

_GAIN_EPS = 1e-12


@njit(cache=True)
def _local_move_kernel(indptr, indices, weights, masses, gamma,
                       comm, comm_mass, comm_count, order):
    """Queue-based greedy moving; mutates comm/comm_mass/comm_count in place."""
    n = order.size
    in_queue = np.ones(n, np.bool_)
    queue = np.empty(n, np.int64)
    for idx in range(n):
        queue[idx] = order[idx]
    head = 0
    tail = 0  # ring buffer; full at start
    count = n
    w_to = np.zeros(n, np.float64)
    touched = np.empty(n, np.int64)
    free_ids = np.empty(n, np.int64)
    n_free = 0
    moves = 0
    while count > 0:
        i = queue[head]
        head = (head + 1) % n
        count -= 1
        in_queue[i] = False
        a = comm[i]
        n_touched = 0
        for e in range(indptr[i], indptr[i + 1]):
            j = indices[e]
            if j == i:
                continue
            c = comm[j]
            if w_to[c] == 0.0:
                touched[n_touched] = c
                n_touched += 1
            w_to[c] += weights[e]
        m_i = masses[i]
        mass_a_rest = comm_mass[a] - m_i
        w_a = w_to[a]
        best_c = a
        best_gain = 0.0
        for t in range(n_touched):
            c = touched[t]
            if c == a:
                continue
            gain = (w_to[c] - w_a) - gamma * m_i * (comm_mass[c] - mass_a_rest)
            if gain > best_gain + _GAIN_EPS or (
                gain > best_gain - _GAIN_EPS and best_c != a and c < best_c
            ):
                best_gain = gain
                best_c = c
        # leaving for a fresh empty community can pay when gamma is large
        if comm_count[a] > 1 and n_free > 0:
            gain = -w_a + gamma * m_i * mass_a_rest
            if gain > best_gain + _GAIN_EPS:
                best_gain = gain
                best_c = free_ids[n_free - 1]
        if best_c != a and best_gain > _GAIN_EPS:
            if n_free > 0 and best_c == free_ids[n_free - 1]:
                n_free -= 1
            comm[i] = best_c
            comm_mass[a] -= m_i
            comm_mass[best_c] += m_i
            comm_count[a] -= 1
            comm_count[best_c] += 1
            if comm_count[a] == 0:
                free_ids[n_free] = a
                n_free += 1
            moves += 1
            # revisit neighbors that might now prefer a different community
            for e in range(indptr[i], indptr[i + 1]):
                j = indices[e]
                if j != i and comm[j] != best_c and not in_queue[j]:
                    in_queue[j] = True
                    queue[tail] = j
                    tail = (tail + 1) % n
                    count += 1
        for t in range(n_touched):
            w_to[touched[t]] = 0.0
    return moves


@njit(cache=True)
def _refine_kernel(indptr, indices, weights, masses, gamma, parent, order):
    """Constrained local move: from singletons, merging only inside the
    parent community of each node.  Returns the refined membership."""
    n = order.size
    ref = np.empty(n, np.int64)
    ref_mass = np.zeros(n, np.float64)
    for i in range(n):
        ref[i] = i
        ref_mass[i] = masses[i]
    w_to = np.zeros(n, np.float64)
    touched = np.empty(n, np.int64)
    improved = True
    sweeps = 0
    while improved and sweeps < 16:
        improved = False
        sweeps += 1
        for idx in range(n):
            i = order[idx]
            a = ref[i]
            n_touched = 0
            for e in range(indptr[i], indptr[i + 1]):
                j = indices[e]
                if j == i or parent[j] != parent[i]:
                    continue
                c = ref[j]
                if w_to[c] == 0.0:
                    touched[n_touched] = c
                    n_touched += 1
                w_to[c] += weights[e]
            m_i = masses[i]
            mass_a_rest = ref_mass[a] - m_i
            w_a = w_to[a]
            best_c = a
            best_gain = 0.0
            for t in range(n_touched):
                c = touched[t]
                if c == a:
                    continue
                gain = (w_to[c] - w_a) - gamma * m_i * (ref_mass[c] - mass_a_rest)
                if gain > best_gain + _GAIN_EPS or (
                    gain > best_gain - _GAIN_EPS and best_c != a and c < best_c
                ):
                    best_gain = gain
                    best_c = c
            if best_c != a and best_gain > _GAIN_EPS:
                ref[i] = best_c
                ref_mass[a] -= m_i
                ref_mass[best_c] += m_i
                improved = True
            for t in range(n_touched):
                w_to[touched[t]] = 0.0
    return ref


def _compact(labels: np.ndarray) -> tuple[np.ndarray, int]:
    """Relabel to 0..k-1 in order of first occurrence."""
    _, first_pos, inverse = np.unique(labels, return_index=True, return_inverse=True)
    rank = np.empty_like(first_pos)
    rank[np.argsort(first_pos, kind="stable")] = np.arange(first_pos.size)
    return rank[inverse].astype(np.int64), first_pos.size


def _to_csr(n: int, pairs: np.ndarray, vals: np.ndarray):
    """Symmetric CSR from canonical undirected edges."""
    if pairs.size == 0:
        return np.zeros(n + 1, np.int64), np.zeros(0, np.int64), np.zeros(0, np.float64)
    src = np.concatenate([pairs[:, 0], pairs[:, 1]])
    dst = np.concatenate([pairs[:, 1], pairs[:, 0]])
    dup = np.concatenate([vals, vals])
    order = np.argsort(src, kind="stable")
    indices = dst[order]
    weights = dup[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=n), out=indptr[1:])
    return indptr, indices.astype(np.int64), weights.astype(np.float64)


def _aggregate(pairs, vals, self_w, masses, strengths, groups, n_groups):
    """Collapse refined groups into single nodes, accumulating self-loops."""
    agg_self = np.bincount(groups, weights=self_w, minlength=n_groups)
    agg_mass = np.bincount(groups, weights=masses, minlength=n_groups)
    agg_strength = np.bincount(groups, weights=strengths, minlength=n_groups)
    if pairs.size:
        gi = groups[pairs[:, 0]]
        gj = groups[pairs[:, 1]]
        internal = gi == gj
        if internal.any():
            agg_self += np.bincount(gi[internal], weights=vals[internal], minlength=n_groups)
        a = np.minimum(gi[~internal], gj[~internal])
        b = np.maximum(gi[~internal], gj[~internal])
        w = vals[~internal]
        key = a * np.int64(n_groups) + b
        uniq, inverse = np.unique(key, return_inverse=True)
        merged = np.bincount(inverse, weights=w)
        new_pairs = np.stack([uniq // n_groups, uniq % n_groups], axis=1)
        new_vals = merged
    else:
        new_pairs = np.zeros((0, 2), dtype=np.int64)
        new_vals = np.zeros(0)
    return new_pairs.astype(np.int64), new_vals, agg_self, agg_mass, agg_strength


def partition_objective(pairs, vals, membership, gamma: float, objective: str = "cpm",
                        masses=None, self_w=None) -> float:
    """Exact objective value of a partition on an undirected edge list.

    ``pairs`` is (m, 2) node pairs with positive weights ``vals``;
    ``membership`` maps node -> community.  ``masses`` (original-node
    counts) and ``self_w`` (collapsed internal weight) matter only for
    aggregated graphs.
    """
    membership = np.asarray(membership, dtype=np.int64)
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    vals = np.asarray(vals, dtype=np.float64)
    n = membership.size
    masses = np.ones(n) if masses is None else np.asarray(masses, dtype=np.float64)
    self_w = np.zeros(n) if self_w is None else np.asarray(self_w, dtype=np.float64)
    n_comm = int(membership.max()) + 1 if n else 0
    internal = np.bincount(membership, weights=self_w, minlength=n_comm)
    if pairs.size:
        ci = membership[pairs[:, 0]]
        cj = membership[pairs[:, 1]]
        same = ci == cj
        internal += np.bincount(ci[same], weights=vals[same], minlength=n_comm)
    comm_mass = np.bincount(membership, weights=masses, minlength=n_comm)
    if objective == "cpm":
        return float(internal.sum() - gamma * (0.5 * (comm_mass**2 - comm_mass)).sum())
    if objective == "rb":
        strengths = 2 * self_w
        if pairs.size:
            strengths = strengths + np.bincount(pairs[:, 0], weights=vals, minlength=n) \
                + np.bincount(pairs[:, 1], weights=vals, minlength=n)
        total_w = float(vals.sum() + self_w.sum())
        if total_w <= 0:
            raise ParameterError("rb objective needs positive total weight")
        comm_strength = np.bincount(membership, weights=strengths, minlength=n_comm)
        return float(
            (internal / total_w).sum()
            - gamma * ((comm_strength / (2 * total_w)) ** 2).sum() * 2 * total_w
        )
    raise ParameterError(f"unknown objective {objective!r}")


def leiden(pairs, vals, n_nodes: int, gamma: float, objective: str = "cpm",
           seed: int = 0, n_restarts: int = 2, max_levels: int = 32) -> np.ndarray:
    """Partition a weighted undirected graph; returns node -> community.

    Labels are contiguous from 0 in order of first occurrence by node id.
    Deterministic for fixed inputs and seed; restarts differ only in their
    visit orders and the best objective wins (earliest restart on ties).
    """
    if objective not in ("cpm", "rb"):
        raise ParameterError(f"unknown objective {objective!r}")
    if gamma <= 0:
        raise ParameterError("gamma must be positive")
    if n_nodes == 0:
        raise ParameterError("graph has no nodes")
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    vals = np.asarray(vals, dtype=np.float64)
    if (vals <= 0).any():
        raise ParameterError("edge weights must be positive")

    best_membership = None
    best_obj = -np.inf
    for restart in range(max(1, n_restarts)):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(restart,)))
        membership = _leiden_single(pairs, vals, n_nodes, gamma, objective, rng, max_levels)
        obj = partition_objective(pairs, vals, membership, gamma, objective)
        if obj > best_obj + 1e-12:
            best_obj = obj
            best_membership = membership
    out, _ = _compact(best_membership)
    return out


def _leiden_single(pairs, vals, n_nodes, gamma, objective, rng, max_levels):
    # For both objectives the move gain below is the exact objective change
    # (scaled by the constant W for rb), so gamma passes through unscaled.
    move_gamma = gamma

    self_w = np.zeros(n_nodes)
    masses = np.ones(n_nodes)
    strengths = np.zeros(n_nodes)
    if pairs.size:
        strengths += np.bincount(pairs[:, 0], weights=vals, minlength=n_nodes)
        strengths += np.bincount(pairs[:, 1], weights=vals, minlength=n_nodes)

    node_of_orig = np.arange(n_nodes)  # original node -> current-level node
    comm = np.arange(n_nodes)
    final = comm.copy()
    for _ in range(max_levels):
        indptr, indices, weights = _to_csr(
            int(masses.size), pairs, vals
        )
        n = masses.size
        # the tracked strengths already fold collapsed internal edges
        move_masses = strengths if objective == "rb" else masses
        move_masses = move_masses.astype(np.float64).copy()
        comm = comm.astype(np.int64)
        comm_mass = np.bincount(comm, weights=move_masses, minlength=n).astype(np.float64)
        comm_count = np.bincount(comm, minlength=n).astype(np.int64)
        order = rng.permutation(n).astype(np.int64)
        moves = _local_move_kernel(
            indptr, indices, weights, move_masses, move_gamma,
            comm, comm_mass, comm_count, order,
        )
        final = comm[node_of_orig]
        comm_compact, n_comm = _compact(comm)
        if n_comm == n:
            break  # all singletons survived: no structure to aggregate
        order2 = rng.permutation(n).astype(np.int64)
        refined = _refine_kernel(indptr, indices, weights, move_masses, move_gamma,
                                 comm_compact, order2)
        refined, n_ref = _compact(refined)
        if n_ref == n and moves == 0:
            break
        pairs, vals, self_w, masses, strengths = _aggregate(
            pairs, vals, self_w, masses, strengths, refined, n_ref
        )
        parent_of_group = np.zeros(n_ref, dtype=np.int64)
        parent_of_group[refined] = comm_compact
        node_of_orig = refined[node_of_orig]
        comm = parent_of_group
        if n_ref == n:
            final = comm[node_of_orig]
            break
    return final
