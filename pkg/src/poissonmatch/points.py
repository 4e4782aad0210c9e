"""Point-process generators and weight functions for the spatial models.

Three weight kinds are supported on sampled configurations:

* ``EUCLIDEAN_TORUS``: minimum-image distance on a flat torus of side L (the
  wrap-around convention eliminates boundary bias in unmatched-fraction
  estimates).
* ``HIERARCHICAL_RHO``: the dyadic ultrametric rho(x, y) = 2^(-k*) where k* is
  the largest k with floor(2^k x) == floor(2^k y).
* ``HIERARCHICAL_RHO_TILDE``: rho + |x - y|, the tie-broken refinement whose
  stable matchings are also stable for rho.

Hierarchical weights are evaluated exactly: the segment has dyadic length
2^K and coordinates are quantized to multiples of 2^(K-53) at sampling time,
so rho reduces to the bit length of an integer xor.  The sup over k in the
definition is then exact rather than tolerance-based.

Color rules encode which pairs may match; forbidden pairs get weight +inf.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import rng as _rng
from .matching import WeightedInstance

_QBITS = 53  # coordinate quantization: 2^-53 of the window


class MetricKind(enum.Enum):
    EUCLIDEAN_TORUS = "euclidean_torus"
    HIERARCHICAL_RHO = "hierarchical_rho"
    HIERARCHICAL_RHO_TILDE = "hierarchical_rho_tilde"


@dataclass(frozen=True)
class ColorRule:
    """Symmetric compatibility structure over color indices."""

    kind: str
    k: int
    allowed: np.ndarray = field(compare=False)

    def compatible(self, a: int, b: int) -> bool:
        return bool(self.allowed[a, b])

    def pair_mask(self, colors: np.ndarray) -> np.ndarray:
        """Boolean (n, n) matrix: may colors[i] match colors[j]?"""
        return self.allowed[colors[:, None], colors[None, :]]


def one_type() -> ColorRule:
    return ColorRule("one_type", 1, np.ones((1, 1), dtype=bool))


def asymmetric_two_type() -> ColorRule:
    """Color 0 = red, color 1 = blue; blue-blue forbidden."""
    allowed = np.array([[True, True], [True, False]])
    return ColorRule("asymmetric_two_type", 2, allowed)


def symmetric_k_type(k: int) -> ColorRule:
    """k >= 2 colors, matching allowed iff colors differ."""
    if k < 2:
        raise ValueError("symmetric rule needs k >= 2")
    return ColorRule("symmetric_k_type", k, ~np.eye(k, dtype=bool))


def rule_by_name(name: str, k: int = 2) -> ColorRule:
    if name == "one_type":
        return one_type()
    if name == "asymmetric_two_type":
        return asymmetric_two_type()
    if name == "symmetric_k_type":
        return symmetric_k_type(k)
    raise ValueError(f"unknown color rule {name!r}")


@dataclass
class PointConfig:
    """A sampled colored configuration on [0, side)^dimension.

    ``palm_origin`` marks point 0 as an added point at the origin ("the
    process seen from a typical point"); for a Poisson process the palm
    version is exactly the original plus one independent point.
    """

    dimension: int
    side: float
    points: np.ndarray  # (n, dimension) float64
    colors: np.ndarray  # (n,) int64
    palm_origin: bool = False

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, self.dimension)
        self.colors = np.asarray(self.colors, dtype=np.int64)
        if self.colors.shape[0] != self.points.shape[0]:
            raise ValueError("points and colors length mismatch")
        if self.points.size and (self.points.min() < 0 or self.points.max() >= self.side):
            raise ValueError("coordinates must lie in [0, side)")

    @property
    def n(self) -> int:
        return self.points.shape[0]


def _check_probs(color_probs) -> np.ndarray:
    p = np.asarray(color_probs, dtype=np.float64)
    if p.ndim != 1 or p.size == 0 or (p < 0).any() or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError("color_probs must be a probability vector")
    return p


def sample_config(rate, dimension, side, color_probs, seed, dyadic=False) -> PointConfig:
    """Poisson(rate * side^dimension) points, i.i.d. uniform, i.i.d. colors.

    With ``dyadic=True`` (required by the hierarchical metrics) the dimension
    must be 1, the side a power of two, and coordinates are drawn on the
    2^-53 grid of the window (distinct by construction).
    """
    if rate < 0 or side < 0:
        raise ValueError("rate and side must be nonnegative")
    p = _check_probs(color_probs)
    gen = _rng.generator(seed, "config")
    n = int(gen.poisson(rate * side**dimension))
    if dyadic:
        if dimension != 1:
            raise ValueError("dyadic sampling requires dimension 1")
        if side <= 0 or 2.0 ** round(math.log2(side)) != side:
            raise ValueError("dyadic sampling requires a power-of-two side")
        grid = gen.integers(0, 1 << _QBITS, size=n, dtype=np.int64)
        while len(np.unique(grid)) < n:  # quantization collisions: resample
            grid = np.unique(grid)
            extra = gen.integers(0, 1 << _QBITS, size=n - len(grid), dtype=np.int64)
            grid = np.concatenate([grid, extra])
        grid = np.sort(grid)
        pts = grid.astype(np.float64) * (side * 2.0**-_QBITS)
    else:
        pts = gen.uniform(0.0, side, size=(n, dimension))
        pts = np.minimum(pts, np.nextafter(side, 0.0))  # guard half-open range
    colors = gen.choice(len(p), size=n, p=p)
    return PointConfig(dimension, float(side), pts, colors)


def palm_version(config: PointConfig, color_probs, seed) -> PointConfig:
    """Insert one point at the origin with an independently drawn color.

    The added point becomes index 0 and ``palm_origin`` is set; the original
    configuration is untouched.
    """
    p = _check_probs(color_probs)
    gen = _rng.generator(seed, "palm")
    c0 = int(gen.choice(len(p), p=p))
    origin = np.zeros((1, config.dimension))
    return PointConfig(
        config.dimension,
        config.side,
        np.vstack([origin, config.points]),
        np.concatenate([[c0], config.colors]),
        palm_origin=True,
    )


def _quantized(config: PointConfig) -> np.ndarray:
    """Coordinates as integers on the 2^-53 grid of the window."""
    u = np.round(config.points[:, 0] / config.side * 2.0**_QBITS).astype(np.int64)
    if not np.allclose(u * (config.side * 2.0**-_QBITS), config.points[:, 0], rtol=0, atol=0):
        raise ValueError(
            "hierarchical metrics need dyadically quantized coordinates; "
            "sample with dyadic=True"
        )
    return u


def torus_distances(points: np.ndarray, side: float) -> np.ndarray:
    """Pairwise minimum-image distances on the torus [0, side)^d."""
    delta = np.abs(points[:, None, :] - points[None, :, :])
    delta = np.minimum(delta, side - delta)
    return np.sqrt((delta**2).sum(axis=2))


def rho_pairwise(config: PointConfig) -> np.ndarray:
    """Exact pairwise dyadic ultrametric on a quantized 1-d configuration.

    With u, v the quantized coordinates, floor(2^k x) == floor(2^k y) holds
    iff the shift 53 - log2(side) - k clears all bits of u xor v, so
    rho = 2^(bitlength(u xor v) + log2(side) - 53).  frexp gives the bit
    length exactly (xor < 2^53 is exact in float64).  The diagonal is 0.
    """
    u = _quantized(config)
    x = np.bitwise_xor(u[:, None], u[None, :]).astype(np.float64)
    _, expo = np.frexp(x)
    logside = round(math.log2(config.side))
    out = np.ldexp(1.0, expo + (logside - _QBITS))
    out[x == 0] = 0.0
    return out


def rho(x: float, y: float, side: float = 1.0) -> float:
    """Scalar dyadic ultrametric 2^(-sup{k: floor(2^k x) == floor(2^k y)}).

    Inputs are quantized to the 2^-53 grid of the window, matching the
    sampler's convention, so the sup over k is evaluated exactly.
    """
    u = int(round(x / side * 2.0**_QBITS))
    v = int(round(y / side * 2.0**_QBITS))
    xor = u ^ v
    if xor == 0:
        return 0.0
    return 2.0 ** (xor.bit_length() + round(math.log2(side)) - _QBITS)


def rho_tilde(x: float, y: float, side: float = 1.0) -> float:
    return rho(x, y, side) + abs(x - y)


def base_distances(config: PointConfig, metric: MetricKind) -> np.ndarray:
    if metric is MetricKind.EUCLIDEAN_TORUS:
        return torus_distances(config.points, config.side)
    if config.dimension != 1:
        raise ValueError("hierarchical metrics require dimension 1")
    r = rho_pairwise(config)
    if metric is MetricKind.HIERARCHICAL_RHO:
        return r
    if metric is MetricKind.HIERARCHICAL_RHO_TILDE:
        d = np.abs(config.points[:, 0][:, None] - config.points[:, 0][None, :])
        return r + d
    raise ValueError(f"unknown metric {metric!r}")


def weight_matrix(config: PointConfig, rule: ColorRule, metric: MetricKind) -> np.ndarray:
    """Full pairwise weight matrix: metric distance, inf where incompatible."""
    w = base_distances(config, metric)
    w[~rule.pair_mask(config.colors)] = np.inf
    np.fill_diagonal(w, np.inf)
    return w


def weight(config: PointConfig, rule: ColorRule, metric: MetricKind, i: int, j: int) -> float:
    """Weight between points i and j (symmetric; inf iff colors incompatible)."""
    if i == j:
        raise ValueError("weight is defined for distinct points")
    if not rule.compatible(config.colors[i], config.colors[j]):
        return math.inf
    if metric is MetricKind.EUCLIDEAN_TORUS:
        delta = np.abs(config.points[i] - config.points[j])
        delta = np.minimum(delta, config.side - delta)
        return float(np.sqrt((delta**2).sum()))
    if config.dimension != 1:
        raise ValueError("hierarchical metrics require dimension 1")
    x, y = float(config.points[i, 0]), float(config.points[j, 0])
    r = rho(x, y, config.side)
    if metric is MetricKind.HIERARCHICAL_RHO:
        return r
    return r + abs(x - y)


def build_instance(config: PointConfig, rule: ColorRule, metric: MetricKind) -> WeightedInstance:
    """Materialize the weighted instance and check the distinct-weights condition.

    Euclidean and rho-tilde weights pass almost surely; plain rho fires the
    tie detector for generic configurations (points are equidistant from many
    others under an ultrametric).
    """
    if config.n == 0:
        raise ValueError("empty configuration")
    inst = WeightedInstance(
        weight_matrix(config, rule, metric), colors=config.colors, validate=False
    )
    inst.check_distinct_weights()
    return inst
