"""Compiled tree traversals.

Both kernels walk the tree breadth first: parents before children, siblings
in birth order.  Random draws come from the counter-based streams in
:mod:`gwedges.rng`, keyed by the particle's path counter, so a particle's
lifetime and offspring count never depend on the horizon or on the traversal.

Edge classes are indexed 0 = pendant, 1 = interior, 2 = all.  Census
accumulators are flat per replicate: ``counts[(g*3 + c)*L + j]`` and
``top[(g*3 + c)*K + i]``.
"""

import numpy as np
from numba import njit

from .rng import (
    LIFETIME_SALT,
    OFFSPRING_SALT,
    ROOT_NODE,
    child_node,
    draw_exponential,
    draw_unit,
    stream_key,
)

OVERFLOW = -1
SKIPPED = -2


@njit(cache=True, nogil=True, inline="always")
def _draw_offspring(cdf, u):
    # smallest k with cdf[k] > u; zero-weight counts are never selected
    n = cdf.shape[0]
    if n <= 16:
        k = 0
        for j in range(n - 1):
            k += cdf[j] <= u
        return k
    return np.searchsorted(cdf, u, side="right")


@njit(cache=True, nogil=True)
def _grow_u64(a, n):
    b = np.empty(max(n, 2 * a.shape[0]), np.uint64)
    b[: a.shape[0]] = a
    return b


@njit(cache=True, nogil=True)
def _grow_f64(a, n):
    b = np.empty(max(n, 2 * a.shape[0]), np.float64)
    b[: a.shape[0]] = a
    return b


@njit(cache=True, nogil=True)
def _grow_i64(a, n):
    b = np.empty(max(n, 2 * a.shape[0]), np.int64)
    b[: a.shape[0]] = a
    return b


@njit(cache=True, nogil=True)
def _grow_bool(a, n):
    b = np.empty(max(n, 2 * a.shape[0]), np.bool_)
    b[: a.shape[0]] = a
    return b


@njit(cache=True, nogil=True)
def simulate_records(beta, cdf, key, horizon, cap):
    """Full edge list of one tree, indexed by particle id.

    The record arrays double as the FIFO work queue, so ids follow queue
    order.  Returns ``(n, parent, birth, end, censored, offspring)``; ``n`` is
    ``OVERFLOW`` when more than ``cap`` particles would be created.
    """
    inv_beta = 1.0 / beta
    size = 256
    node = np.empty(size, np.uint64)
    parent = np.empty(size, np.int64)
    birth = np.empty(size, np.float64)
    end = np.empty(size, np.float64)
    censored = np.empty(size, np.bool_)
    offspring = np.empty(size, np.int64)
    node[0] = ROOT_NODE
    parent[0] = -1
    birth[0] = 0.0
    created = 1

    p = 0
    while p < created:
        b = birth[p]
        e = b + draw_exponential(key, node[p], LIFETIME_SALT, inv_beta)
        if e > horizon:
            end[p] = horizon
            censored[p] = True
            offspring[p] = 0
            p += 1
            continue
        k = _draw_offspring(cdf, draw_unit(key, node[p], OFFSPRING_SALT))
        end[p] = e
        censored[p] = False
        offspring[p] = k
        if created + k > cap:
            return OVERFLOW, parent[:0], birth[:0], end[:0], censored[:0], offspring[:0]
        if created + k > size:
            size = max(2 * size, created + k)
            node = _grow_u64(node, size)
            parent = _grow_i64(parent, size)
            birth = _grow_f64(birth, size)
            end = _grow_f64(end, size)
            censored = _grow_bool(censored, size)
            offspring = _grow_i64(offspring, size)
        for i in range(k):
            node[created + i] = child_node(node[p], np.uint64(i))
            parent[created + i] = p
            birth[created + i] = e
        created += k
        p += 1

    n = created
    return n, parent[:n], birth[:n], end[:n], censored[:n], offspring[:n]


@njit(cache=True, nogil=True, inline="always")
def _tally(cell, length, thresholds, counts, top, kmax):
    nthr = thresholds.shape[0]
    base = cell * nthr
    for j in range(nthr):
        counts[base + j] += length >= thresholds[j]
    if kmax > 0:
        o = cell * kmax
        if length > top[o + kmax - 1]:
            i = kmax - 1
            while i > 0 and top[o + i - 1] < length:
                top[o + i] = top[o + i - 1]
                i -= 1
            top[o + i] = length


@njit(cache=True, nogil=True)
def census_tree(beta, cdf, key, times, thresholds, kmax, cap, alive, counts, top):
    """Simulate one tree to ``times[-1]`` and census it at every snapshot time.

    Processes the tree one generation at a time (the same particles in the
    same queue order as :func:`simulate_records`, without keeping them).
    ``times`` and ``thresholds`` ascending.  Accumulates into ``alive[G]``,
    ``counts[G*3*L]`` and ``top[G*3*K]`` (the latter pre-filled with -1).
    Returns the number of particles created, or ``OVERFLOW``.
    """
    inv_beta = 1.0 / beta
    G = times.shape[0]
    horizon = times[G - 1]
    cur_node = np.empty(64, np.uint64)
    cur_birth = np.empty(64, np.float64)
    nxt_node = np.empty(64, np.uint64)
    nxt_birth = np.empty(64, np.float64)
    cur_node[0] = ROOT_NODE
    cur_birth[0] = 0.0
    n = 1
    created = 1

    while n > 0:
        w = 0
        for p in range(n):
            node = cur_node[p]
            b = cur_birth[p]
            life = draw_exponential(key, node, LIFETIME_SALT, inv_beta)
            e = b + life
            for g in range(G):
                s = times[g]
                if b > s:
                    continue
                # alive at s iff b <= s < e; lengths are end minus birth, as in the edge records
                a = e > s
                alive[g] += a
                length = min(s, e) - b
                _tally(g * 3 + 1 - a, length, thresholds, counts, top, kmax)
                _tally(g * 3 + 2, length, thresholds, counts, top, kmax)
            k = _draw_offspring(cdf, draw_unit(key, node, OFFSPRING_SALT)) * (e <= horizon)
            if w + k > nxt_node.shape[0]:
                if created + w + k > cap:
                    return OVERFLOW
                nxt_node = _grow_u64(nxt_node, w + k)
                nxt_birth = _grow_f64(nxt_birth, w + k)
            for i in range(k):
                nxt_node[w + i] = child_node(node, np.uint64(i))
                nxt_birth[w + i] = e
            w += k
        created += w
        if created > cap:
            return OVERFLOW
        cur_node, nxt_node = nxt_node, cur_node
        cur_birth, nxt_birth = nxt_birth, cur_birth
        n = w
    return created


@njit(cache=True, nogil=True)
def census_chunk(beta, cdf, seed, rep_lo, rep_hi, times, thresholds, kmax, cap,
                 abort, alive, counts, top, created):
    """Run replicates ``rep_lo..rep_hi-1`` into rows ``0..`` of the outputs.

    ``abort[0]`` is set on overflow so other chunks stop early; replicates
    skipped that way are marked ``SKIPPED`` in ``created``.
    """
    for r in range(rep_lo, rep_hi):
        row = r - rep_lo
        if abort[0] != 0:
            created[row] = SKIPPED
            continue
        key = stream_key(seed, np.uint64(r))
        n = census_tree(beta, cdf, key, times, thresholds, kmax, cap,
                        alive[row], counts[row], top[row])
        created[row] = n
        if n == OVERFLOW:
            abort[0] = 1
