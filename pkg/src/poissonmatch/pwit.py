"""Descending-tree sampling on the Poisson-weighted infinite tree and the
availability recursion for the root matching decision.

Only the descending fragment is ever generated: all paths from the root whose
edge weights strictly decrease, starting below a bound T.  That fragment is
finite (mean size e^T) and is exactly the information needed to decide whether
the root is matched along an edge of weight below T, so the infinite tree
never has to be materialized.

Each node owns a hash-derived random stream keyed by (seed, node label), so
trees are reproducible, independent across replicates, and consistent under
extension of T (the tree at T' > T contains the tree at T).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from . import rng as _rng
from .matching import WeightedInstance
from .points import ColorRule, _check_probs


@dataclass
class DescendingTree:
    """Sampled descending fragment, BFS order (parent index < child index).

    ``weight[i]`` is the edge weight to the parent (inf at the root).
    ``capped`` flags that node_cap was hit; such trees are incomplete and are
    treated as censored replicates by the estimators, never silently used.
    """

    bound: float
    parent: np.ndarray
    weight: np.ndarray
    color: np.ndarray
    capped: bool

    @property
    def node_count(self) -> int:
        return self.parent.shape[0]

    def depths(self) -> np.ndarray:
        d = np.zeros(self.node_count, dtype=np.int64)
        for i in range(1, self.node_count):
            d[i] = d[self.parent[i]] + 1
        return d

    def as_instance(self, rule: ColorRule) -> WeightedInstance:
        """Materialize the fragment as a finite weighted instance (test-scale)."""
        n = self.node_count
        w = np.full((n, n), np.inf)
        for i in range(1, n):
            p = int(self.parent[i])
            if rule.compatible(int(self.color[p]), int(self.color[i])):
                w[i, p] = w[p, i] = self.weight[i]
        return WeightedInstance(w, colors=self.color, validate=False)

    def view(self, rule: ColorRule) -> "TreeView":
        return TreeView(self, rule)


class TreeView:
    """Lazy-closure adapter: neighbors under the rule-restricted weights."""

    def __init__(self, tree: DescendingTree, rule: ColorRule):
        self._tree = tree
        self._rule = rule
        n = tree.node_count
        children = [[] for _ in range(n)]
        for i in range(1, n):
            children[int(tree.parent[i])].append(i)
        self._children = children

    def neighbors_below(self, v: int, bound: float):
        t = self._tree
        out = []
        if v != 0 and t.weight[v] < bound:
            p = int(t.parent[v])
            if self._rule.compatible(int(t.color[p]), int(t.color[v])):
                out.append((p, float(t.weight[v])))
        for c in self._children[v]:
            if t.weight[c] < bound and self._rule.compatible(
                int(t.color[v]), int(t.color[c])
            ):
                out.append((int(c), float(t.weight[c])))
        return out


def generate_descending_tree(
    T: float, color_probs, seed: int, node_cap: int = 10_000_000
) -> DescendingTree:
    """Exact-distribution sample of the descending tree below weight T.

    Child edge weights of a node entered at weight t are the points of a
    unit-rate Poisson process on [0, t) (partial sums of unit exponentials,
    stopped at the bound); colors are i.i.d. ``color_probs``.  Deterministic
    per seed.  If ``node_cap`` is exceeded the tree is returned flagged
    ``capped`` rather than raising.
    """
    if T <= 0:
        raise ValueError("T must be positive")
    p = _check_probs(color_probs)
    cum = np.cumsum(p)
    cum[-1] = 1.0
    parent, weight, color, count, capped = _kernels.generate_tree(
        _rng.derive_key(seed), float(T), cum, int(node_cap)
    )
    return DescendingTree(float(T), parent.copy(), weight.copy(), color.copy(), bool(capped))


def match_distances(tree: DescendingTree, rule: ColorRule) -> np.ndarray:
    """Per-node weight of the match within the node's own subtree (inf if none).

    Bottom-up: a node is matched to its least-weight child that is color
    compatible and itself unmatched within its subtree below that edge.
    """
    return _kernels.subtree_match_dist(
        tree.parent, tree.weight, tree.color, rule.allowed.astype(np.uint8)
    )


def root_matched_within(tree: DescendingTree, rule: ColorRule, t: Optional[float] = None) -> bool:
    """Whether the stable matching gives the root a partner below weight t (<= T).

    A single tree at bound T answers the question for every t <= T: the
    availability of a child decided below its edge weight does not change
    when the tree is extended.
    """
    if tree.capped:
        raise ValueError("tree was capped; replicate must be treated as censored")
    bound = tree.bound if t is None else t
    if bound > tree.bound:
        raise ValueError("t exceeds the generation bound")
    d = match_distances(tree, rule)
    return bool(d[0] < bound)


@dataclass
class RootEstimate:
    """Monte Carlo estimates of P(root has color i and is unmatched below t).

    ``estimate[i, j]`` is the estimate for color i at ``t_grid[j]``;
    ``se`` the binomial standard errors.  Censored (capped) replicates are
    excluded from the point estimates and counted separately.
    """

    t_grid: np.ndarray
    estimate: np.ndarray
    se: np.ndarray
    replicates: int
    censored: int
    colors: int

    @property
    def censored_fraction(self) -> float:
        return self.censored / self.replicates if self.replicates else 0.0


def _estimate_chunk(args):
    rule_kind, k, probs, T, seed, start, stop, node_cap = args
    from .points import rule_by_name

    rule = rule_by_name(rule_kind, k)
    allowed = rule.allowed.astype(np.uint8)
    cum = np.cumsum(probs)
    cum[-1] = 1.0
    n = stop - start
    dist = np.empty(n, dtype=np.float64)
    col = np.empty(n, dtype=np.int64)
    cens = np.zeros(n, dtype=bool)
    for r in range(start, stop):
        parent, weight, color, count, capped = _kernels.generate_tree(
            _rng.derive_key(seed, "pwit", r), float(T), cum, int(node_cap)
        )
        i = r - start
        if capped:
            cens[i] = True
            dist[i] = np.nan
            col[i] = -1
            continue
        d = _kernels.subtree_match_dist(parent, weight, color, allowed)
        dist[i] = d[0]
        col[i] = color[0]
    return dist, col, cens


def estimate_root_probabilities(
    rule: ColorRule,
    color_probs,
    T: float,
    replicates: int,
    seed: int,
    node_cap: int = 10_000_000,
    t_grid=None,
    workers: int = 1,
) -> RootEstimate:
    """Unbiased MC estimates of the per-color unmatched-below-t probabilities.

    Replicate r uses the stream keyed by (seed, "pwit", r); the result is
    independent of ``workers`` and of scheduling.  One tree per replicate
    yields the whole curve on ``t_grid`` (nested thresholds share the tree,
    coupling the variance across t).
    """
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    p = _check_probs(color_probs)
    if len(p) != rule.k:
        raise ValueError("color_probs length must match the rule's color count")
    grid = np.asarray(
        [T] if t_grid is None else t_grid, dtype=np.float64
    )
    if (grid < 0).any() or (grid > T).any():
        raise ValueError("t_grid values must lie in [0, T]")

    chunks = []
    step = max(1, (replicates + max(1, workers) - 1) // max(1, workers))
    for start in range(0, replicates, step):
        stop = min(replicates, start + step)
        chunks.append((rule.kind, rule.k, p, T, seed, start, stop, node_cap))
    if workers > 1 and len(chunks) > 1:
        import multiprocessing as mp

        with mp.get_context("fork").Pool(workers) as pool:
            parts = pool.map(_estimate_chunk, chunks)
    else:
        parts = [_estimate_chunk(c) for c in chunks]
    dist = np.concatenate([q[0] for q in parts])
    col = np.concatenate([q[1] for q in parts])
    cens = np.concatenate([q[2] for q in parts])

    ok = ~cens
    n_ok = int(ok.sum())
    est = np.zeros((rule.k, grid.size))
    se = np.zeros_like(est)
    if n_ok:
        for c in range(rule.k):
            hits = (col[ok] == c)[:, None] & (dist[ok][:, None] >= grid[None, :])
            ph = hits.mean(axis=0)
            est[c] = ph
            se[c] = np.sqrt(ph * (1.0 - ph) / n_ok)
    return RootEstimate(grid, est, se, replicates, int(cens.sum()), rule.k)


def mean_tree_size(T: float, replicates: int, seed: int, node_cap: int = 10_000_000):
    """Sample mean/SE of |V_T| plus tail frequency P(|V| > e^{2T}).

    The exact mean is e^T and Markov gives P(|V| > e^{2T}) <= e^{-T}; both are
    checked by the verification suite.
    """
    sizes = np.empty(replicates, dtype=np.float64)
    cum = np.array([1.0])
    for r in range(replicates):
        parent, weight, color, count, capped = _kernels.generate_tree(
            _rng.derive_key(seed, "size", r), float(T), cum, int(node_cap)
        )
        if capped:
            raise RuntimeError("node_cap hit while measuring tree sizes")
        sizes[r] = count
    mean = sizes.mean()
    se = sizes.std(ddof=1) / math.sqrt(replicates) if replicates > 1 else math.inf
    tail_freq = float((sizes > math.exp(2 * T)).mean())
    tail_se = math.sqrt(max(tail_freq * (1 - tail_freq), 1.0 / replicates) / replicates)
    return mean, se, tail_freq, tail_se, sizes
