"""The three availability ODE systems and their closed forms.

One-type:      x' = -x^2,                   x(0) = 1,        x(t) = 1/(1+t).
Asymmetric:    r' = -r(r+b), b' = -b r,     r(0) = 1-eps, b(0) = eps,
               b(inf) = eps * e^(1 - 1/eps).
Symmetric k:   x_i' = -x_i * sum_{j != i} x_j,  x_i(0) = p_i; for
               p_1 > p_2 = ... = p_k the limit is
               x_1(inf) = (p_1 - p_2)^(k-1) * p_1^(-(k-2)).

Integration uses an embedded Dormand-Prince 5(4) pair with adaptive steps;
steps whose proposed state leaves the positive orthant are rejected and
halved, so trajectories stay strictly positive and componentwise
non-increasing.  The closed forms double as the integrator's validation
oracles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np


class OdeError(RuntimeError):
    pass


class InsufficientHorizonError(OdeError):
    """The certified plateau bound at t_max exceeds the requested accuracy."""


@dataclass(frozen=True)
class OdeSystem:
    """One of the three availability systems; ``params`` are the initial
    color probabilities (dimension = state dimension)."""

    kind: str  # "one_type" | "asymmetric" | "symmetric"
    params: tuple

    @property
    def dim(self) -> int:
        return len(self.params)

    def initial_state(self) -> np.ndarray:
        return np.asarray(self.params, dtype=np.float64)

    def rhs(self, t: float, y: np.ndarray) -> np.ndarray:
        if self.kind == "one_type":
            return -y * y
        if self.kind == "asymmetric":
            r, b = y
            return np.array([-r * (r + b), -b * r])
        # symmetric: x_i' = -x_i (S - x_i)
        s = y.sum()
        return -y * (s - y)


def one_type_system() -> OdeSystem:
    return OdeSystem("one_type", (1.0,))


def asymmetric_system(eps: float) -> OdeSystem:
    if not 0.0 < eps < 1.0:
        raise ValueError("eps must be in (0, 1)")
    return OdeSystem("asymmetric", (1.0 - eps, eps))


def symmetric_system(probs: Sequence[float]) -> OdeSystem:
    p = tuple(float(q) for q in probs)
    if len(p) < 2 or any(q <= 0 for q in p) or abs(sum(p) - 1.0) > 1e-9:
        raise ValueError("probs must be a probability vector of length >= 2")
    return OdeSystem("symmetric", p)


@dataclass
class OdeTrajectory:
    system: OdeSystem
    times: np.ndarray
    states: np.ndarray  # (len(times), dim)
    n_steps: int
    n_rejected: int
    max_error_estimate: float

    def at_end(self) -> np.ndarray:
        return self.states[-1]

    def interp(self, t):
        """Linear interpolation onto arbitrary times within the span."""
        t = np.asarray(t, dtype=np.float64)
        out = np.empty(t.shape + (self.states.shape[1],))
        for c in range(self.states.shape[1]):
            out[..., c] = np.interp(t, self.times, self.states[:, c])
        return out


# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array(
    [5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40]
)


def integrate(
    system: OdeSystem,
    t_max: float,
    tolerance: float = 1e-9,
    max_step: Optional[float] = None,
    min_step: float = 1e-12,
) -> OdeTrajectory:
    """Adaptive Dormand-Prince integration on [0, t_max].

    ``tolerance`` is used as both absolute and relative local error target.
    Positivity is enforced by step rejection; if the step size collapses to
    ``min_step`` without achieving a positive accepted state, OdeError is
    raised.  For long plateau runs pass ``max_step`` to keep the grid dense
    enough that the certified analytic bound, not the solver, dominates the
    reported uncertainty.
    """
    if t_max <= 0 or tolerance <= 0:
        raise ValueError("t_max and tolerance must be positive")
    y = system.initial_state()
    t = 0.0
    h = min(0.01, t_max / 10.0)
    if max_step is not None:
        h = min(h, max_step)
    times = [0.0]
    states = [y.copy()]
    n_steps = 0
    n_rejected = 0
    max_err = 0.0
    k = np.empty((7, system.dim))
    while t < t_max:
        h = min(h, t_max - t)
        k[0] = system.rhs(t, y)
        for s in range(1, 7):
            k[s] = system.rhs(t + _C[s] * h, y + h * (_A[s] @ k[:s]))
        y5 = y + h * (_B5 @ k)
        y4 = y + h * (_B4 @ k)
        err = np.max(np.abs(y5 - y4) / (tolerance + tolerance * np.abs(y)))
        if err <= 1.0 and (y5 > 0.0).all():
            t += h
            y = y5
            times.append(t)
            states.append(y.copy())
            n_steps += 1
            max_err = max(max_err, float(np.max(np.abs(y5 - y4))))
            grow = 0.9 * err ** -0.2 if err > 0 else 5.0
            h *= min(5.0, max(0.2, grow))
        else:
            n_rejected += 1
            h *= 0.5 if not (y5 > 0.0).all() else max(0.2, 0.9 * err ** -0.2)
        if max_step is not None:
            h = min(h, max_step)
        if h < min_step:
            raise OdeError("step size collapsed; cannot maintain positivity/accuracy")
    return OdeTrajectory(
        system, np.array(times), np.array(states), n_steps, n_rejected, max_err
    )


def closed_form_one_type(t: float) -> float:
    """x(t) = 1/(1+t) for x' = -x^2, x(0) = 1."""
    if t < 0:
        raise ValueError("t must be >= 0")
    return 1.0 / (1.0 + t)


def closed_form_b_infinity(eps: float) -> float:
    """Limit of the blue component: eps * e^(-1/eps + 1).

    Equivalently eps * e^(-(1-eps)/eps), the unmatched-blue intensity limit of
    the asymmetric model.
    """
    if not 0.0 < eps <= 1.0:
        raise ValueError("eps must be in (0, 1]")
    return eps * math.exp(-1.0 / eps + 1.0)


def closed_form_x1_infinity(p1: float, p2: float, k: int) -> float:
    """(p1 - p2)^(k-1) * p1^(-(k-2)) for p_2 = ... = p_k."""
    if k < 2:
        raise ValueError("k must be >= 2")
    if not (p1 > p2 > 0):
        raise ValueError("requires p1 > p2 > 0")
    if abs(p1 + (k - 1) * p2 - 1.0) > 1e-9:
        raise ValueError("probabilities must satisfy p1 + (k-1) p2 = 1")
    return (p1 - p2) ** (k - 1) * p1 ** (-(k - 2))


class SmallGapRatio(NamedTuple):
    exact: float
    leading: float


def small_gap_asymptotic(k: int, delta: float) -> SmallGapRatio:
    """Unmatched fraction x1(inf)/x1(0) for p1 = 1/k + (k-1)delta, p2 = 1/k - delta.

    Returns the exact ratio (k^2 delta / (1 + k(k-1) delta))^(k-1) and its
    small-delta leading term k^(2(k-1)) delta^(k-1).
    """
    if k < 2 or delta <= 0:
        raise ValueError("k >= 2 and delta > 0 required")
    exact = (k * k * delta / (1.0 + k * (k - 1) * delta)) ** (k - 1)
    leading = float(k) ** (2 * (k - 1)) * delta ** (k - 1)
    return SmallGapRatio(exact, leading)


class PlateauEstimate(NamedTuple):
    value: float
    bound: float  # certified |value - limit| bound
    t_end: float


def plateau_detect(
    trajectory: OdeTrajectory, component: int = 0, accuracy: Optional[float] = None
) -> PlateauEstimate:
    """Terminal value of a component with a certified distance to its limit.

    Asymmetric system, blue component: b(t) - b(inf) <= r(t) (b - r is
    non-decreasing and r -> 0).  Symmetric system, leading component:
    x1(t) - x1(inf) <= sum_{j>=2} x_j(t) (the difference has non-negative
    derivative).  One-type: the limit is 0 and x(t) itself is the bound.
    If ``accuracy`` is given and the bound exceeds it, raises
    InsufficientHorizonError (integrate further rather than trust the value).
    """
    y = trajectory.at_end()
    kind = trajectory.system.kind
    if kind == "one_type":
        if component != 0:
            raise ValueError("one_type has a single component")
        value, bound = float(y[0]), float(y[0])
    elif kind == "asymmetric":
        if component != 1:
            raise ValueError("plateau of the asymmetric system is its blue component (1)")
        value, bound = float(y[1]), float(y[0])
    elif kind == "symmetric":
        if component != 0:
            raise ValueError("plateau of the symmetric system is its leading component (0)")
        value, bound = float(y[0]), float(y[1:].sum())
    else:  # pragma: no cover
        raise ValueError(f"unknown system {kind!r}")
    if accuracy is not None and bound > accuracy:
        raise InsufficientHorizonError(
            f"certified bound {bound:.3e} exceeds requested accuracy {accuracy:.3e}; "
            "increase t_max"
        )
    return PlateauEstimate(value, bound, float(trajectory.times[-1]))
