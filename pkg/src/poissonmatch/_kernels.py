"""Hot loops, numba-compiled when available.

Every function here is plain Python operating on numpy arrays and plain
floats/ints, written inside the numba nopython subset; at import time each is
wrapped with ``numba.njit(cache=True)`` if numba is importable, otherwise the
Python version runs as-is (identical semantics, just slower).

The splitmix64 arithmetic must match ``rng.py`` bit for bit; a unit test
cross-checks the two implementations.
"""

from __future__ import annotations

import math

import numpy as np

_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_CHILD_GAMMA = np.uint64(0xC2B2AE3D27D4EB4F)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_ONE = np.uint64(1)
_U53 = 2.0**-53


def _mix64(z):
    z = np.uint64(z) & _MASK
    z = ((z ^ (z >> _S30)) * _M1) & _MASK
    z = ((z ^ (z >> _S27)) * _M2) & _MASK
    return (z ^ (z >> _S31)) & _MASK


def _draw_unit(key, n):
    # n-th uniform in [0,1) of the stream with the given key
    z = _mix64((np.uint64(key) + _GOLDEN * (np.uint64(n) + _ONE)) & _MASK)
    return float(z >> _S11) * _U53


def _child_key(key, j):
    return _mix64((np.uint64(key) + _CHILD_GAMMA * np.uint64(j)) & _MASK)


def greedy_match(ei, ej, n):
    """Greedy matching over edges pre-sorted by increasing weight.

    Returns partner indices with -1 for unmatched.  With distinct weights the
    result is the unique stable matching: the cheapest surviving edge is
    always a mutually closest pair.
    """
    partner = np.full(n, -1, dtype=np.int64)
    left = n
    for k in range(ei.shape[0]):
        if left < 2:
            break
        a = ei[k]
        b = ej[k]
        if partner[a] < 0 and partner[b] < 0:
            partner[a] = b
            partner[b] = a
            left -= 2
    return partner


def generate_tree(root_key, bound, cum_probs, node_cap):
    """Sample the descending tree of the Poisson-weighted infinite tree.

    Nodes are produced in BFS order (parent index < child index).  A node
    entered along an edge of weight t generates children at the arrival times
    of a unit-rate Poisson process on [0, t); the root uses [0, bound).  Each
    node owns a hash-derived stream: draw 0 is its color, draws 1.. are the
    exponential increments of its child arrivals, so a tree regenerated with a
    larger bound extends the smaller one.

    Returns (parent, weight, color, count, capped); arrays are oversized,
    valid up to ``count``.  ``capped`` means node_cap was hit and the tree is
    incomplete.
    """
    cap = 256
    parent = np.empty(cap, dtype=np.int64)
    weight = np.empty(cap, dtype=np.float64)
    color = np.empty(cap, dtype=np.int64)
    keys = np.empty(cap, dtype=np.uint64)
    k = len(cum_probs)

    parent[0] = -1
    weight[0] = np.inf
    keys[0] = np.uint64(root_key)
    u0 = _draw_unit(np.uint64(root_key), 0)
    c0 = k - 1
    for c in range(k):
        if u0 < cum_probs[c]:
            c0 = c
            break
    color[0] = c0

    count = 1
    head = 0
    capped = False
    while head < count:
        key = keys[head]
        node_bound = bound if head == 0 else weight[head]
        s = 0.0
        j = 1
        while True:
            u = _draw_unit(key, j)
            s += -math.log1p(-u)
            if s >= node_bound:
                break
            if count >= node_cap:
                capped = True
                break
            if count == cap:
                new_cap = cap * 2
                np_parent = np.empty(new_cap, dtype=np.int64)
                np_weight = np.empty(new_cap, dtype=np.float64)
                np_color = np.empty(new_cap, dtype=np.int64)
                np_keys = np.empty(new_cap, dtype=np.uint64)
                np_parent[:cap] = parent
                np_weight[:cap] = weight
                np_color[:cap] = color
                np_keys[:cap] = keys
                parent, weight, color, keys = np_parent, np_weight, np_color, np_keys
                cap = new_cap
            ck = _child_key(key, j)
            cu = _draw_unit(ck, 0)
            cc = k - 1
            for c in range(k):
                if cu < cum_probs[c]:
                    cc = c
                    break
            parent[count] = head
            weight[count] = s
            color[count] = cc
            keys[count] = ck
            count += 1
            j += 1
        if capped:
            break
        head += 1
    return parent[:count], weight[:count], color[:count], count, capped


def subtree_match_dist(parent, weight, color, allowed):
    """Weight at which each node is matched within its own subtree (inf if not).

    Bottom-up availability pass: a node matches the least-weight child that
    has a compatible color and is itself unmatched within its subtree below
    that edge.  Requires parent[i] < i (BFS order).
    """
    n = parent.shape[0]
    dist = np.full(n, np.inf, dtype=np.float64)
    for u in range(n - 1, 0, -1):
        if dist[u] >= weight[u]:
            p = parent[u]
            if allowed[color[p], color[u]]:
                if weight[u] < dist[p]:
                    dist[p] = weight[u]
    return dist


def excess_from_levels(cells, signs, n_levels):
    """Bottom-up dyadic excess recursion from single-point cells.

    ``cells``: sorted distinct int64 cell indices at the base level, one per
    point; ``signs``: +1 blue / -1 red per point.  Applies one halving step
    ``n_levels`` times, combining sibling cells through
    g(a, b) = 0 if a == b == -1 else a + b (absent siblings count 0).
    Returns flat arrays (level, cell, value) for every occupied cell at every
    level above the base.
    """
    m = cells.shape[0]
    cur_cells = cells.copy()
    cur_vals = signs.astype(np.int64)
    out_level = np.empty(m * (n_levels + 1), dtype=np.int64)
    out_cell = np.empty(m * (n_levels + 1), dtype=np.int64)
    out_val = np.empty(m * (n_levels + 1), dtype=np.int64)
    pos = 0
    for lev in range(1, n_levels + 1):
        cnt = cur_cells.shape[0]
        new_cells = np.empty(cnt, dtype=np.int64)
        new_vals = np.empty(cnt, dtype=np.int64)
        w = 0
        i = 0
        while i < cnt:
            pc = cur_cells[i] >> 1
            a = cur_vals[i]
            if i + 1 < cnt and (cur_cells[i + 1] >> 1) == pc:
                b = cur_vals[i + 1]
                if a == -1 and b == -1:
                    v = 0
                else:
                    v = a + b
                i += 2
            else:
                v = a  # g(a, 0) = a ; g(-1, 0) = -1
                i += 1
            new_cells[w] = pc
            new_vals[w] = v
            w += 1
        cur_cells = new_cells[:w]
        cur_vals = new_vals[:w]
        for t in range(w):
            out_level[pos] = lev
            out_cell[pos] = cur_cells[t]
            out_val[pos] = cur_vals[t]
            pos += 1
    return out_level[:pos], out_cell[:pos], out_val[:pos]


try:  # pragma: no cover - exercised implicitly everywhere
    import numba

    _jit = numba.njit(cache=True)
    _mix64 = _jit(_mix64)
    _draw_unit = _jit(_draw_unit)
    _child_key = _jit(_child_key)
    greedy_match = _jit(greedy_match)
    generate_tree = _jit(generate_tree)
    subtree_match_dist = _jit(subtree_match_dist)
    excess_from_levels = _jit(excess_from_levels)
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False


def mix64_py(z: int) -> int:
    """Reference splitmix64 finalizer (plain ints) for cross-checking."""
    mask = (1 << 64) - 1
    z &= mask
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
    return z ^ (z >> 31)
