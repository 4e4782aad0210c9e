"""Stable matching engine on finite weighted graphs.

A weighted instance is a symmetric weight function on a finite vertex set,
with ``inf`` marking forbidden pairs (and the diagonal).  Provided no vertex
sees two equal finite weights, a unique stable matching exists: no pair of
vertices may be closer to each other than both are to their current partners.
The engine constructs it by matching mutually closest pairs greedily in
increasing weight order, which is equivalent to the round-based
mutually-closest-pair iteration but runs in O(n^2 log n).

The module also implements descending closures: the finite neighborhood of
descending-weight paths from a vertex, which is exactly the information needed
to decide whether that vertex is matched below a given weight.  Closures work
against lazy views so that infinite models (the random tree sampler) can reuse
the same decision procedure.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

import numpy as np

from . import _kernels
from . import rng as _rng

INF = float("inf")


class DegenerateWeightsError(ValueError):
    """Raised when some vertex has two equal finite incident weights.

    Carries the offending triple so callers can report or jitter the input.
    Silent tie-breaking is never performed: with ties, the stable matching
    need not be unique, and results would be unfalsifiable.
    """

    def __init__(self, vertex, first, second, weight):
        self.vertex = vertex
        self.first = first
        self.second = second
        self.weight = weight
        super().__init__(
            f"equal finite weights at vertex {vertex!r}: "
            f"w({vertex!r},{first!r}) = w({vertex!r},{second!r}) = {weight!r}"
        )


class ClosureCapError(RuntimeError):
    """Descending closure exceeded its vertex cap (non-termination guard)."""


class WeightedInstance:
    """Finite vertex set with a symmetric extended-real weight matrix.

    ``weights[i, j]`` is the weight between vertices i and j, ``inf`` when the
    pair is incompatible; the diagonal is ``inf``.  Finite weights must be
    strictly positive.  Instances are immutable once built.
    """

    def __init__(self, weights, ids=None, colors=None, validate=True):
        w = np.asarray(weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValueError("weight matrix must be square")
        n = w.shape[0]
        self.weights = w
        self.ids = tuple(range(n)) if ids is None else tuple(ids)
        if len(self.ids) != n:
            raise ValueError("ids length does not match weight matrix")
        self.colors = None if colors is None else np.asarray(colors, dtype=np.int64)
        if self.colors is not None and self.colors.shape != (n,):
            raise ValueError("colors length does not match weight matrix")
        self._index = {v: i for i, v in enumerate(self.ids)}
        if len(self._index) != n:
            raise ValueError("vertex ids must be unique")
        if validate and n > 0:
            if not np.all(np.isinf(np.diagonal(w))):
                raise ValueError("diagonal weights must be +inf")
            if not np.array_equal(w, w.T):
                raise ValueError("weight matrix must be symmetric")
            finite = np.isfinite(w)
            if finite.any() and w[finite].min() <= 0.0:
                raise ValueError("finite weights must be strictly positive")

    @property
    def n(self) -> int:
        return len(self.ids)

    def index(self, vertex) -> int:
        return self._index[vertex]

    @classmethod
    def from_weight_map(cls, ids, pairs, colors=None) -> "WeightedInstance":
        """Build from {(a, b): w} or [(a, b, w)]; missing pairs are inf."""
        ids = tuple(ids)
        index = {v: i for i, v in enumerate(ids)}
        w = np.full((len(ids), len(ids)), INF)
        items = pairs.items() if isinstance(pairs, dict) else ((p[:2], p[2]) for p in pairs)
        for (a, b), wt in items:
            i, j = index[a], index[b]
            w[i, j] = wt
            w[j, i] = wt
        np.fill_diagonal(w, INF)
        color_arr = None
        if colors is not None:
            color_arr = np.array([colors[v] for v in ids], dtype=np.int64)
        return cls(w, ids=ids, colors=color_arr)

    def check_distinct_weights(self) -> None:
        """Raise DegenerateWeightsError if condition (i) fails at any vertex."""
        w = self.weights
        if self.n < 3:
            return
        order = np.argsort(w, axis=1, kind="stable")
        ws = np.take_along_axis(w, order, axis=1)
        dup = (ws[:, :-1] == ws[:, 1:]) & np.isfinite(ws[:, :-1])
        if dup.any():
            i, pos = np.argwhere(dup)[0]
            a, b = order[i, pos], order[i, pos + 1]
            raise DegenerateWeightsError(
                self.ids[i], self.ids[a], self.ids[b], float(ws[i, pos])
            )

    def neighbors_below(self, i: int, bound: float):
        """All (j, w) with w(i, j) < bound, by vertex index."""
        row = self.weights[i]
        js = np.nonzero(row < bound)[0]
        return [(int(j), float(row[j])) for j in js]

    def rescaled(self, f: Callable[[float], float]) -> "WeightedInstance":
        """Apply a strictly increasing map to every finite weight."""
        w = self.weights.copy()
        finite = np.isfinite(w)
        w[finite] = [f(x) for x in w[finite]]
        return WeightedInstance(w, ids=self.ids, colors=self.colors)

    def perturbed(self, scale: float, seed: int) -> "WeightedInstance":
        """Jitter finite weights by i.i.d. Uniform(0, scale) noise.

        This deliberately changes the instance; it is the documented escape
        hatch for file inputs rejected by the distinct-weights check.
        """
        gen = _rng.generator(seed, "tie-jitter")
        w = self.weights.copy()
        iu, ju = np.triu_indices(self.n, 1)
        finite = np.isfinite(w[iu, ju])
        noise = gen.uniform(0.0, scale, size=int(finite.sum()))
        w[iu[finite], ju[finite]] += noise
        w[ju[finite], iu[finite]] = w[iu[finite], ju[finite]]
        return WeightedInstance(w, ids=self.ids, colors=self.colors)


@dataclass
class Matching:
    """Involution on vertex indices with per-vertex match weights.

    ``partner[i] == i`` marks an unmatched vertex, in which case
    ``match_weight[i] == inf``; otherwise ``match_weight[i]`` equals the
    instance weight between i and its partner.
    """

    partner: np.ndarray
    match_weight: np.ndarray

    def __post_init__(self):
        self.partner = np.asarray(self.partner, dtype=np.int64)
        self.match_weight = np.asarray(self.match_weight, dtype=np.float64)

    @property
    def n(self) -> int:
        return self.partner.shape[0]

    def is_matched(self) -> np.ndarray:
        return self.partner != np.arange(self.n)

    def pairs(self):
        """Matched index pairs (i, j) with i < j."""
        idx = np.arange(self.n)
        sel = (self.partner > idx)
        return list(zip(idx[sel].tolist(), self.partner[sel].tolist()))

    def unmatched(self):
        idx = np.arange(self.n)
        return idx[self.partner == idx].tolist()

    def partner_map(self, instance: WeightedInstance) -> dict:
        return {instance.ids[i]: instance.ids[int(p)] for i, p in enumerate(self.partner)}


def _matching_from_partner(instance: WeightedInstance, partner: np.ndarray) -> Matching:
    idx = np.arange(instance.n)
    partner = np.where(partner < 0, idx, partner)  # -1 convention -> involution
    mw = instance.weights[idx, partner]  # diagonal is inf, so unmatched -> inf
    return Matching(partner, mw)


def stable_match(instance: WeightedInstance) -> Matching:
    """The unique stable matching of a distinct-weights instance.

    Greedy over candidate pairs in increasing weight order: the globally
    closest compatible pair is mutually closest, hence forced; removing it
    preserves the invariant.  Rejects degenerate (tied) inputs.
    """
    instance.check_distinct_weights()
    n = instance.n
    if n == 0:
        return Matching(np.empty(0, np.int64), np.empty(0, np.float64))
    iu, ju = np.triu_indices(n, 1)
    w = instance.weights[iu, ju]
    finite = np.isfinite(w)
    iu, ju, w = iu[finite], ju[finite], w[finite]
    order = np.argsort(w, kind="stable")
    partner = _kernels.greedy_match(
        iu[order].astype(np.int64), ju[order].astype(np.int64), n
    )
    return _matching_from_partner(instance, partner)


def verify_stable(instance: WeightedInstance, m: Matching):
    """Check stability; returns (True, None) or (False, witness_index_pair).

    A witness is a pair (i, j) with w(i, j) < min(match_weight(i),
    match_weight(j)).  Structural defects (not an involution, inconsistent
    match weights) raise ValueError instead.
    """
    n = instance.n
    if m.n != n:
        raise ValueError("matching size does not match instance")
    idx = np.arange(n)
    p = m.partner
    if np.any((p < 0) | (p >= n)) or not np.array_equal(p[p], idx):
        raise ValueError("partner map is not an involution on the vertex set")
    expect = np.where(p != idx, instance.weights[idx, np.where(p != idx, p, 0)], INF)
    same = (m.match_weight == expect) | (np.isinf(m.match_weight) & np.isinf(expect))
    if not same.all():
        raise ValueError("match_weight inconsistent with weights and partner map")
    if np.any(np.isinf(m.match_weight[p != idx])):
        raise ValueError("matched pair with infinite weight")
    thr = np.minimum.outer(m.match_weight, m.match_weight)
    bad = instance.weights < thr
    if not bad.any():
        return True, None
    i, j = np.argwhere(bad)[0]
    return False, (int(i), int(j))


@dataclass
class DescendingClosure:
    """Union of all descending paths from ``root`` with weights below ``radius``.

    ``adjacency[v]`` lists (u, w) pairs for every closure edge at v sorted by
    weight; an edge appears under both endpoints.
    """

    root: int
    radius: float
    vertices: set
    edges: dict = field(repr=False)  # {frozenset-like (a, b) sorted tuple: w}
    adjacency: dict = field(repr=False)

    @property
    def size(self) -> int:
        return len(self.vertices)


def descending_closure(view, root: int, radius: float, cap: int = 10_000_000) -> DescendingClosure:
    """Explore descending paths from ``root`` with weights < ``radius``.

    ``view`` must provide ``neighbors_below(v, bound)`` enumerating all
    neighbors of v at weight strictly below ``bound``; a WeightedInstance
    works directly, lazy generators implement the same method.  Exploration
    never queries above the incoming edge weight, and aborts with
    ClosureCapError past ``cap`` vertices (condition (iii) of the uniqueness
    result cannot be pre-checked on a lazy view).
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    explored = {}  # vertex -> largest bound already expanded
    edges = {}
    vertices = {root}
    stack = [(root, float(radius))]
    while stack:
        v, bound = stack.pop()
        if explored.get(v, 0.0) >= bound:
            continue
        explored[v] = bound
        for u, w in view.neighbors_below(v, bound):
            key = (v, u) if v <= u else (u, v)
            edges.setdefault(key, w)
            if u not in vertices:
                vertices.add(u)
                if len(vertices) > cap:
                    raise ClosureCapError(
                        f"descending closure exceeded cap of {cap} vertices"
                    )
            stack.append((u, w))
    adjacency = {v: [] for v in vertices}
    for (a, b), w in edges.items():
        adjacency[a].append((b, w))
        adjacency[b].append((a, w))
    for v in adjacency:
        adjacency[v].sort(key=lambda e: e[1])
    return DescendingClosure(root, radius, vertices, edges, adjacency)


def matched_within(closure: DescendingClosure) -> bool:
    """Decide whether the root is matched below ``radius`` in the full stable
    matching, from the closure alone.

    Uses the characterization d(x) < R iff some neighbor y with w(x,y) < R is
    itself not matched below w(x,y); the recursion descends strictly in
    weight, so it terminates, and every sub-question it asks is answered by
    closure edges.  Evaluated iteratively with memoization on (vertex, bound).
    """
    adj = closure.adjacency
    memo = {}

    def job(v, bound):
        return ("q", v, bound)

    stack = [job(closure.root, closure.radius)]
    while stack:
        tag, v, bound = stack[-1]
        key = (v, bound)
        if key in memo:
            stack.pop()
            continue
        pending = []
        result = False
        for u, w in adj.get(v, ()):
            if w >= bound:
                break
            sub = memo.get((u, w))
            if sub is None:
                pending.append(job(u, w))
            elif sub is False:
                result = True  # u is free at w, so v grabs the edge
                break
        if result:
            memo[key] = True
            stack.pop()
        elif pending:
            stack.extend(pending)
        else:
            # all sub-questions answered, none free
            memo[key] = any(
                memo[(u, w)] is False for u, w in adj.get(v, ()) if w < bound
            )
            stack.pop()
    return memo[(closure.root, closure.radius)]


def check_rescale_invariance(instance: WeightedInstance, f: Callable[[float], float]) -> bool:
    """True iff stable matchings of the instance and of f(instance) agree.

    ``f`` must be strictly increasing on the positive reals (f(inf) = inf is
    implicit: infinite weights are left untouched).  Stability depends only on
    the relative order of weights, so this should hold for every valid f.
    """
    base = stable_match(instance)
    mapped = stable_match(instance.rescaled(f))
    return bool(np.array_equal(base.partner, mapped.partner))
