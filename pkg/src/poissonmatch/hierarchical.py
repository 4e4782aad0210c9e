"""Dyadic excess analysis for the asymmetric model under the hierarchical metric.

For a dyadic interval of length 2^k, let N be the blue-minus-red count among
its points that are not matched within the interval (equivalently, not matched
at distance <= 2^k).  Stability forces N in {-1, 0, 1, 2, ...}, the value is
the same for every stable matching, and merging sibling intervals evolves N by

    g(a, b) = 0 if a == b == -1 else a + b,

with the two siblings independent.  This module iterates the law of N exactly
with one-sided certified bounds, and cross-checks it against Monte Carlo
segments matched by the generic engine under the tie-broken weight rho+|x-y|.

Certification scheme
--------------------
A pmf is stored as certified lower bounds: ``r[v]`` for v != 0, the mass at 0
as a *deficit* upper bound d0 (mass >= 1 - d0; the complement form survives
the deep-base regime where the mass at 0 is within an ulp of 1), and a lower
bound on the tail beyond the support.  The unassigned remainder

    slack = d0 - sum(r) - tail_lo

may sit anywhere, so every upper bound adds slack.  Scalar steps are evaluated
exactly over dyadic rationals (fractions) and rounded outward; array
convolutions run in float64 and are deflated by an a-priori relative error
bound (n terms of standard float arithmetic err by < n * 2^-52 relative).
The parity marginal is tracked separately through q(u) = 2u(1-u) (parity of a
sum is the sum of parities; the g exception maps even to even), which keeps
the even-mass lower bound at exactly 1/2 where the pmf-side sums would drift
below it by rounding noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import List, Optional, Sequence

import numpy as np

from . import _kernels
from . import rng as _rng
from .matching import Matching, stable_match, verify_stable
from .points import (
    MetricKind,
    PointConfig,
    asymmetric_two_type,
    build_instance,
    sample_config,
    _QBITS,
)

RED, BLUE = 0, 1


def g(a: int, b: int) -> int:
    """Excess merge rule: 0 if both sides are a lone red, else the sum."""
    if a < -1 or b < -1:
        raise ValueError("g is defined on {-1, 0, 1, ...}^2")
    if a == -1 and b == -1:
        return 0
    return a + b


def _float_dn(x: Fraction) -> float:
    f = float(x)
    return f if Fraction(f) <= x else math.nextafter(f, -math.inf)


def _float_up(x: Fraction) -> float:
    f = float(x)
    return f if Fraction(f) >= x else math.nextafter(f, math.inf)


def _deflate(arr: np.ndarray, n_terms: int) -> np.ndarray:
    """Sound lower bounds for sums of <= n_terms nonnegative float products."""
    return arr * (1.0 - (n_terms + 4) * 2.0**-52)


@dataclass
class ExcessPmf:
    """Certified interval pmf of the excess N at one level.

    Support is -1..n_max; ``mass_lo``/``mass_hi`` give per-value bounds, the
    tail interval bounds P(N > n_max).  ``level`` is k for cells of length
    2^k.  Internal state is the complement representation described in the
    module docstring.
    """

    level: int
    n_max: int
    r: np.ndarray  # lower bounds, index i <-> value i-1; index 1 (value 0) unused
    d0: float  # upper bound on 1 - P(N = 0)
    tail_lo: float
    odd_lo: float  # certified bounds on P(N odd), parity side-track
    odd_hi: float

    @property
    def values(self) -> np.ndarray:
        return np.arange(-1, self.n_max + 1)

    @property
    def slack(self) -> float:
        total = Fraction(self.d0) - Fraction(self.tail_lo)
        total -= sum(Fraction(x) for x in self.r.tolist())
        return max(0.0, _float_up(total))

    def mass_lo(self, v: int) -> float:
        if v == 0:
            return _float_dn(1 - Fraction(self.d0))
        if v < -1 or v > self.n_max:
            raise ValueError("value outside support")
        return float(self.r[v + 1])

    def mass_hi(self, v: int) -> float:
        return min(1.0, _float_up(Fraction(self.mass_lo(v)) + Fraction(self.slack)))

    def mass_lo_array(self) -> np.ndarray:
        out = self.r.copy()
        out[1] = self.mass_lo(0)
        return out

    @property
    def tail_hi(self) -> float:
        return min(1.0, _float_up(Fraction(self.tail_lo) + Fraction(self.slack)))

    def check_consistency(self) -> None:
        assert (self.r >= 0).all() and self.tail_lo >= 0
        total = sum(Fraction(x) for x in self.r.tolist()) + Fraction(self.tail_lo)
        assert total <= Fraction(self.d0), "certified masses exceed the deficit"
        assert Fraction(self.odd_lo) <= Fraction(self.odd_hi)


def base_pmf(lam: float, eps: float, depth_j: int, n_max: int = 256) -> ExcessPmf:
    """Certified pmf at dyadic cells of length 2^-depth_j.

    A cell holds 0 points (N = 0), 1 point (N = -1 with the red probability,
    +1 with the blue), or >= 2 points; the last event's probability
    1 - e^-ls (1 + ls) is left as slack since those cells can produce any
    excess.  Rejects bases so coarse that this slack would not be small
    ((lam * 2^-depth_j)^2 / 2 must stay below 0.5).
    """
    if not 0.0 <= eps <= 1.0:
        raise ValueError("eps must be a probability")
    if lam <= 0:
        raise ValueError("lam must be positive")
    ls = lam * 2.0**-depth_j
    if ls * ls / 2.0 >= 0.5:
        raise ValueError("base cells too coarse: (lam * 2^-j)^2 / 2 must be < 0.5")
    # exp/expm1 are assumed faithful to 1 ulp; pad by 2 ulps outward.
    p1 = (math.exp(-ls) * ls) * (1.0 - 2.0**-51)
    d0 = -math.expm1(-ls) * (1.0 + 2.0**-51)
    r = np.zeros(n_max + 2)
    r[0] = _float_dn(Fraction(p1) * (1 - Fraction(eps)))
    r[2] = _float_dn(Fraction(p1) * Fraction(eps))
    pmf = ExcessPmf(
        level=-depth_j,
        n_max=n_max,
        r=r,
        d0=min(1.0, d0),
        tail_lo=0.0,
        odd_lo=_float_dn(Fraction(float(r[0])) + Fraction(float(r[2]))),
        odd_hi=0.0,  # fixed below
    )
    odd_hi = _float_up(Fraction(float(r[0])) + Fraction(float(r[2])) + Fraction(pmf.slack))
    pmf.odd_hi = min(1.0, odd_hi)
    pmf.check_consistency()
    return pmf


_CONV_CACHE = {}


def _conv_indices(n_max: int):
    """Flat bincount targets for value sums, with the (-1,-1) cell excluded."""
    if n_max in _CONV_CACHE:
        return _CONV_CACHE[n_max]
    vals = np.arange(-1, n_max + 1)
    s = vals[:, None] + vals[None, :]
    land_zero = np.zeros_like(s, dtype=bool)
    land_zero[0, 0] = True  # (-1,-1) -> 0, handled through the deficit
    land_zero[0, 2] = land_zero[2, 0] = True  # (-1,+1) -> 0
    zero_row_col = np.zeros_like(s, dtype=bool)
    zero_row_col[1, :] = True  # value-0 mass handled through the deficit
    zero_row_col[:, 1] = True
    active = ~(land_zero | zero_row_col)
    inside = active & (s <= n_max)
    beyond = active & (s > n_max)
    idx_inside = (s + 1)[inside]
    _CONV_CACHE[n_max] = (inside, beyond, idx_inside)
    return _CONV_CACHE[n_max]


def _parity_step(odd_lo: float, odd_hi: float):
    """Interval image of u -> 2u(1-u) on [0,1]; exact lower 1/2 is preserved."""
    q = lambda u: 2 * Fraction(u) * (1 - Fraction(u))
    lo = _float_dn(min(q(odd_lo), q(odd_hi)))
    if odd_lo <= 0.5 <= odd_hi:
        hi = 0.5
    else:
        hi = _float_up(max(q(odd_lo), q(odd_hi)))
    return max(0.0, lo), min(0.5, hi)


def level_up(pmf: ExcessPmf) -> ExcessPmf:
    """Pushforward of pmf (x) pmf under g, one level coarser.

    Interval-sound: support masses stay lower bounds, the deficit an upper
    bound, tail contributions that certainly exceed the support go to the
    tail, anything uncertain (including a tail partnered with -1, which could
    land exactly on n_max) is released into slack.
    """
    n_max = pmf.n_max
    inside, beyond, idx_inside = _conv_indices(n_max)
    r = pmf.r
    one_minus_d0 = _float_dn(1 - Fraction(pmf.d0))

    prod = np.outer(r, r)
    conv = np.bincount(idx_inside, weights=prod[inside], minlength=n_max + 2)
    new_r = conv + 2.0 * one_minus_d0 * r
    new_r[1] = 0.0
    new_r = _deflate(new_r, n_max + 8)

    # deficit: mass at zero gains (1-d0)^2 and the two small-small landings
    f_d0, f_rm1, f_rp1 = Fraction(pmf.d0), Fraction(float(r[0])), Fraction(float(r[2]))
    new_d0 = 2 * f_d0 - f_d0 * f_d0 - (f_rm1 * f_rm1 + 2 * f_rm1 * f_rp1)
    new_d0_f = min(1.0, _float_up(new_d0))

    pos_mass = float(r[2:].sum())  # values >= 1
    new_tail = (
        float(prod[beyond].sum())
        + 2.0 * pmf.tail_lo * (one_minus_d0 + pos_mass)
        + pmf.tail_lo * pmf.tail_lo
    )
    new_tail = float(_deflate(np.float64(new_tail), n_max + 8))

    odd_lo, odd_hi = _parity_step(pmf.odd_lo, pmf.odd_hi)
    out = ExcessPmf(
        level=pmf.level + 1,
        n_max=n_max,
        r=new_r,
        d0=new_d0_f,
        tail_lo=max(0.0, new_tail),
        odd_lo=odd_lo,
        odd_hi=odd_hi,
    )
    out.check_consistency()
    return out


@dataclass
class LevelStats:
    """Certified beta/gamma/delta intervals and a mean lower bound at level k."""

    k: int
    beta_lo: float
    beta_hi: float
    gamma_lo: float
    gamma_hi: float
    delta_lo: float
    delta_hi: float
    en_lo: float


def stats(pmf: ExcessPmf) -> LevelStats:
    """Parity/sign aggregation with the tail assigned adversarially.

    beta = P(N even), gamma = P(N odd and positive), delta = P(N even and
    positive).  The even-mass bounds intersect the pmf-side sums with the
    parity side-track, which is what keeps beta_lo at exactly 1/2 once the
    parity interval has contracted there.
    """
    vals = pmf.values
    r_list = [Fraction(float(x)) for x in pmf.r.tolist()]
    slack = Fraction(pmf.slack)
    tail_lo = Fraction(pmf.tail_lo)
    mass0 = 1 - Fraction(pmf.d0)

    even_pos = sum(r_list[i] for i in range(len(vals)) if vals[i] > 0 and vals[i] % 2 == 0)
    odd_pos = sum(r_list[i] for i in range(len(vals)) if vals[i] > 0 and vals[i] % 2 != 0)

    beta_lo_pmf = mass0 + even_pos
    beta_hi_pmf = beta_lo_pmf + slack + tail_lo
    beta_lo = max(_float_dn(beta_lo_pmf), _float_dn(1 - Fraction(pmf.odd_hi)))
    beta_hi = min(_float_up(beta_hi_pmf), _float_up(1 - Fraction(pmf.odd_lo)), 1.0)

    gamma_lo = _float_dn(odd_pos)
    gamma_hi = min(_float_up(odd_pos + slack + tail_lo), pmf.odd_hi, 1.0)
    delta_lo = _float_dn(even_pos)
    delta_hi = min(_float_up(even_pos + slack + tail_lo), 1.0)

    mean = sum(Fraction(int(vals[i])) * r_list[i] for i in range(len(vals)))
    mean += -slack + (pmf.n_max + 1) * tail_lo
    return LevelStats(
        k=pmf.level,
        beta_lo=beta_lo,
        beta_hi=beta_hi,
        gamma_lo=gamma_lo,
        gamma_hi=gamma_hi,
        delta_lo=delta_lo,
        delta_hi=delta_hi,
        en_lo=_float_dn(mean),
    )


def run_level_recursion(
    lam: float,
    eps: float,
    base_depth: int = 80,
    top_level: int = 11,
    n_max: int = 256,
    quality_stop: float = 0.25,
):
    """Iterate the certified recursion from depth 2^-base_depth up to top_level.

    Returns (pmfs, stats_list) for every level from the base upward.  Stops
    early once slack + tail exceeds ``quality_stop`` (the distribution has
    outgrown the support and intervals are no longer informative).
    """
    pmf = base_pmf(lam, eps, base_depth, n_max=n_max)
    pmfs = [pmf]
    stats_list = [stats(pmf)]
    while pmf.level < top_level:
        nxt = level_up(pmf)
        if nxt.slack + nxt.tail_lo > quality_stop:
            break  # support outgrown; further intervals are uninformative
        pmf = nxt
        pmfs.append(pmf)
        stats_list.append(stats(pmf))
    return pmfs, stats_list


PASS, FAIL, INCONCLUSIVE = "PASS", "FAIL", "INCONCLUSIVE"


@dataclass
class CheckResult:
    name: str
    k: int
    status: str
    detail: str


@dataclass
class Section6Report:
    checks: List[CheckResult]
    first_k_gamma_third: Optional[int]
    k0_reference: float  # 3e/eps, the small-eps asymptotic level count

    @property
    def ok(self) -> bool:
        return all(c.status != FAIL for c in self.checks)

    def failures(self):
        return [c for c in self.checks if c.status == FAIL]


def _cmp_ge(lhs_lo, lhs_hi, rhs_lo, rhs_hi) -> str:
    """Three-valued certificate for 'lhs >= rhs' between intervals."""
    if lhs_lo >= rhs_hi:
        return PASS
    if lhs_hi < rhs_lo:
        return FAIL
    return INCONCLUSIVE


def verify_section6_inequalities(
    stats_seq: Sequence[LevelStats], eps: float, k0_margin: float = 2.0
) -> Section6Report:
    """Certify the level-statistics inequalities on the computed sequence.

    Checks, all on certified interval bounds (inconclusive when slack
    straddles a bound, never false): beta_k >= 1/2 from the first merged
    level; gamma non-decreasing; delta_{k+1} >= gamma_k^2; the growth
    inequality gamma_{k+2} >= gamma_k + gamma_k^2/3 whenever gamma_{k+1} is
    certified <= 1/3; and the identity
    gamma_{k+1} = 2 gamma_k beta_k + 2 delta_k (1 - beta_k - gamma_k) as an
    interval-overlap consistency check.  Reports the first level whose gamma
    lower bound reaches 1/3, the mean bound E N >= 1/6 there, and an
    order-of-magnitude comparison of that level against 3e/eps (asymptotic as
    eps -> 0, hence checked only up to ``k0_margin``).
    """
    checks: List[CheckResult] = []
    seq = list(stats_seq)
    first_third: Optional[int] = None

    for i, st in enumerate(seq):
        if i >= 1:
            checks.append(
                CheckResult(
                    "beta_ge_half",
                    st.k,
                    PASS if st.beta_lo >= 0.5 else (FAIL if st.beta_hi < 0.5 else INCONCLUSIVE),
                    f"beta in [{st.beta_lo:.17g}, {st.beta_hi:.17g}]",
                )
            )
        if first_third is None and st.gamma_lo >= 1.0 / 3.0:
            first_third = st.k

    for prev, cur in zip(seq, seq[1:]):
        checks.append(
            CheckResult(
                "gamma_monotone",
                cur.k,
                _cmp_ge(cur.gamma_lo, cur.gamma_hi, prev.gamma_lo, prev.gamma_hi),
                f"gamma_k+1 >= gamma_k: [{cur.gamma_lo:.6g},{cur.gamma_hi:.6g}] vs"
                f" [{prev.gamma_lo:.6g},{prev.gamma_hi:.6g}]",
            )
        )
        sq_lo = _float_dn(Fraction(prev.gamma_lo) ** 2)
        sq_hi = _float_up(Fraction(prev.gamma_hi) ** 2)
        checks.append(
            CheckResult(
                "delta_ge_gamma_sq",
                cur.k,
                _cmp_ge(cur.delta_lo, cur.delta_hi, sq_lo, sq_hi),
                f"delta_k+1 >= gamma_k^2: [{cur.delta_lo:.6g},{cur.delta_hi:.6g}] vs"
                f" [{sq_lo:.6g},{sq_hi:.6g}]",
            )
        )
        # identity consistency: recomputed gamma interval must overlap
        rhs_lo = _float_dn(
            2 * Fraction(prev.gamma_lo) * Fraction(prev.beta_lo)
            + 2 * Fraction(prev.delta_lo)
            * max(Fraction(0), 1 - Fraction(prev.beta_hi) - Fraction(prev.gamma_hi))
        )
        rhs_hi = _float_up(
            2 * Fraction(prev.gamma_hi) * Fraction(prev.beta_hi)
            + 2 * Fraction(prev.delta_hi)
            * max(Fraction(0), 1 - Fraction(prev.beta_lo) - Fraction(prev.gamma_lo))
        )
        overlap = not (cur.gamma_hi < rhs_lo or cur.gamma_lo > rhs_hi)
        checks.append(
            CheckResult(
                "gamma_identity_consistent",
                cur.k,
                PASS if overlap else FAIL,
                f"gamma interval [{cur.gamma_lo:.6g},{cur.gamma_hi:.6g}] vs recursion"
                f" [{rhs_lo:.6g},{rhs_hi:.6g}]",
            )
        )

    for a, b, c in zip(seq, seq[1:], seq[2:]):
        if b.gamma_hi <= 1.0 / 3.0:
            rhs_hi = _float_up(Fraction(a.gamma_hi) + Fraction(a.gamma_hi) ** 2 / 3)
            rhs_lo = _float_dn(Fraction(a.gamma_lo) + Fraction(a.gamma_lo) ** 2 / 3)
            checks.append(
                CheckResult(
                    "gamma_growth",
                    c.k,
                    _cmp_ge(c.gamma_lo, c.gamma_hi, rhs_lo, rhs_hi),
                    "gamma_k+2 >= gamma_k + gamma_k^2/3 (gamma_k+1 <= 1/3 certified)",
                )
            )

    if first_third is not None:
        for st in seq:
            if st.k == first_third:
                checks.append(
                    CheckResult(
                        "mean_ge_sixth",
                        st.k,
                        PASS if st.en_lo >= 1.0 / 6.0 else INCONCLUSIVE,
                        f"E N lower bound {st.en_lo:.6g} at first gamma >= 1/3 level",
                    )
                )
    k0_ref = 3.0 * math.e / eps
    if first_third is not None:
        base_k = seq[0].k
        n_levels = first_third - base_k  # levels consumed since the base
        # order-of-magnitude only: the 3e/eps count is asymptotic as eps -> 0,
        # and counts levels above unit length; compare against levels above 0.
        status = PASS if first_third <= k0_margin * k0_ref else FAIL
        checks.append(
            CheckResult(
                "k0_order_of_magnitude",
                first_third,
                status,
                f"first gamma >= 1/3 at level {first_third} (from base {base_k}, "
                f"{n_levels} merges); reference 3e/eps = {k0_ref:.2f}, margin x{k0_margin}",
            )
        )
    return Section6Report(checks, first_third, k0_ref)


# ---------------------------------------------------------------------------
# Monte Carlo segments


@dataclass
class SegmentSample:
    """One simulated segment [0, 2^K) with its matching and excess tables.

    ``recursion`` and ``from_matching`` map level k to (cells, values) arrays
    over the occupied dyadic cells; the two routes must agree (``agree``),
    which is asserted for every sample by the bulk driver.
    """

    K: int
    config: PointConfig
    matching: Matching
    recursion: dict
    from_matching: dict
    agree: bool
    unmatched_blue: int
    n_top: int  # N_K(0)
    tie_retries: int


def _segment_tables(u: np.ndarray, signs: np.ndarray, match_level: np.ndarray, K: int):
    """Excess tables by both routes for all dyadic levels above the point grid.

    ``u`` sorted quantized coordinates, ``signs`` +1 blue / -1 red,
    ``match_level`` the level at which each point is matched within its cell
    (large sentinel when unmatched).
    """
    base_level = K - _QBITS
    lev, cell, val = _kernels.excess_from_levels(u, signs.astype(np.int64), _QBITS)
    recursion = {}
    for step in range(1, _QBITS + 1):
        sel = lev == step
        recursion[base_level + step] = (cell[sel], val[sel])
    from_match = {}
    for step in range(1, _QBITS + 1):
        k = base_level + step
        cells = u >> step
        starts = np.flatnonzero(np.diff(cells, prepend=cells[0] - 1))
        alive = (match_level > k) * signs
        sums = np.add.reduceat(alive, starts)
        from_match[k] = (cells[starts], sums.astype(np.int64))
    return recursion, from_match


def mc_segment(lam: float, eps: float, K: int, seed: int, max_tie_retries: int = 8) -> SegmentSample:
    """Simulate one segment and compute N_k(m) by recursion and by matching.

    The colored Poisson process is sampled on [0, 2^K) (dyadically quantized),
    matched by the generic engine under rho-tilde weights, and the excess
    tables are computed (a) bottom-up from single-point cells through g and
    (b) from the matching, counting points not matched within each cell.  The
    whole-window unmatched-blue count is max(N_K(0), 0); treating the window
    as the whole space is a reporting convention.
    """
    if K < 0:
        raise ValueError("K must be >= 0")
    rule = asymmetric_two_type()
    attempt = 0
    while True:
        config = sample_config(
            lam, 1, float(2**K), (1.0 - eps, eps), _rng.derive_key(seed, "segment", attempt), dyadic=True
        )
        if config.n == 0:
            empty = {k: (np.empty(0, np.int64), np.empty(0, np.int64)) for k in range(K - _QBITS + 1, K + 1)}
            return SegmentSample(
                K, config, Matching(np.empty(0, np.int64), np.empty(0)), empty, empty, True, 0, 0, attempt
            )
        try:
            inst = build_instance(config, rule, MetricKind.HIERARCHICAL_RHO_TILDE)
            break
        except Exception:
            attempt += 1  # quantization tie; resample deterministically
            if attempt > max_tie_retries:
                raise
    m = stable_match(inst)
    u = np.round(config.points[:, 0] / config.side * 2.0**_QBITS).astype(np.int64)
    signs = np.where(config.colors == BLUE, 1, -1).astype(np.int64)

    xor = u ^ u[m.partner]
    lengths = np.frexp(xor.astype(np.float64))[1]  # bit length, exact
    match_level = np.where(
        m.partner != np.arange(config.n), lengths + (K - _QBITS), np.int64(10**9)
    )
    recursion, from_match = _segment_tables(u, signs, match_level, K)
    agree = all(
        np.array_equal(recursion[k][0], from_match[k][0])
        and np.array_equal(recursion[k][1], from_match[k][1])
        for k in recursion
    )
    n_top = int(recursion[K][1][0]) if recursion[K][0].size else 0
    unmatched_blue = max(n_top, 0)
    # the windowed matching leaves exactly the top-level survivors unmatched
    assert unmatched_blue == int(
        ((m.partner == np.arange(config.n)) & (config.colors == BLUE)).sum()
    )
    return SegmentSample(K, config, m, recursion, from_match, agree, unmatched_blue, n_top, attempt)


@dataclass
class McExcessResult:
    """Pooled MC law of N_k over many segments.

    ``counts[k]`` is a histogram over values -1..v_max at level k (0..K);
    ``n_cells[k]`` the number of cells pooled (empty cells included as value
    0).  ``unmatched_blue`` is the per-segment count, ``all_agree`` that the
    recursion/matching tables matched on every sample.
    """

    K: int
    levels: np.ndarray
    v_max: int
    counts: dict
    n_cells: dict
    overflow: dict
    unmatched_blue: np.ndarray
    all_agree: bool
    tie_retries: int
    segments: int

    def pmf(self, k: int):
        c = self.counts[k]
        n = self.n_cells[k]
        p = c / n
        se = np.sqrt(p * (1 - p) / n)
        return p, se


def _mc_chunk(args):
    lam, eps, K, seed, start, stop, v_max, verify_first = args
    counts = {k: np.zeros(v_max + 2, dtype=np.int64) for k in range(0, K + 1)}
    n_cells = {k: 0 for k in range(0, K + 1)}
    overflow = {k: 0 for k in range(0, K + 1)}
    ub = np.empty(stop - start, dtype=np.int64)
    agree = True
    ties = 0
    for rseg in range(start, stop):
        sample = mc_segment(lam, eps, K, _rng.derive_key(seed, "hier-mc", rseg))
        ties += sample.tie_retries
        agree = agree and sample.agree
        ub[rseg - start] = sample.unmatched_blue
        if rseg - start < verify_first and sample.config.n > 1:
            inst = build_instance(
                sample.config, asymmetric_two_type(), MetricKind.HIERARCHICAL_RHO_TILDE
            )
            ok, _w = verify_stable(inst, sample.matching)
            assert ok, "emitted matching failed the stability check"
        for k in range(0, K + 1):
            cells, vals = sample.recursion.get(k, (np.empty(0, np.int64), np.empty(0, np.int64)))
            inside = vals <= v_max
            np.add.at(counts[k], vals[inside] + 1, 1)
            overflow[k] += int((~inside).sum())
            total = 1 << (K - k)
            counts[k][1] += total - cells.size  # empty cells carry N = 0
            n_cells[k] += total
    return counts, n_cells, overflow, ub, agree, ties


def mc_excess(
    lam: float,
    eps: float,
    K: int,
    segments: int,
    seed: int,
    v_max: int = 512,
    workers: int = 1,
    verify_first: int = 20,
) -> McExcessResult:
    """Pool the MC law of N_k over independent segments (k = 0..K).

    Deterministic in (seed, segments) regardless of ``workers``.  The
    recursion/matching agreement is asserted on every sample; the first
    ``verify_first`` matchings per chunk also run the full stability check.
    """
    chunks = []
    step = max(1, (segments + max(1, workers) - 1) // max(1, workers))
    for start in range(0, segments, step):
        chunks.append((lam, eps, K, seed, start, min(segments, start + step), v_max, verify_first))
    if workers > 1 and len(chunks) > 1:
        import multiprocessing as mp

        with mp.get_context("fork").Pool(workers) as pool:
            parts = pool.map(_mc_chunk, chunks)
    else:
        parts = [_mc_chunk(c) for c in chunks]
    counts = {k: np.zeros(v_max + 2, dtype=np.int64) for k in range(0, K + 1)}
    n_cells = {k: 0 for k in range(0, K + 1)}
    overflow = {k: 0 for k in range(0, K + 1)}
    ubs = []
    agree = True
    ties = 0
    for c, n, o, ub, ag, t in parts:
        for k in counts:
            counts[k] += c[k]
            n_cells[k] += n[k]
            overflow[k] += o[k]
        ubs.append(ub)
        agree = agree and ag
        ties += t
    return McExcessResult(
        K,
        np.arange(0, K + 1),
        v_max,
        counts,
        n_cells,
        overflow,
        np.concatenate(ubs) if ubs else np.empty(0, np.int64),
        agree,
        ties,
        segments,
    )
