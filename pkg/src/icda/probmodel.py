"""Discrete probability machinery for the binary (X1, X2, Y) approximation.

Two input signals X1 (target) and X2 (spurious) are modeled as symmetric
binary channels around a uniform label Y: X_i agrees with Y with probability
``p_y_given_xi``. Under uniform marginals Bayes inversion returns the same
number, so the agreement probability and the conditional P(Y|X_i) coincide.
All information quantities are in bits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import xlogy

from ._rng import coerce_generator

PROB_TOL = 1e-9
_LN2 = math.log(2.0)


def _check_prob(value: float, name: str) -> float:
    """Validate a probability, tolerating 1e-9 of parsing slack."""
    v = float(value)
    if math.isnan(v) or v < -PROB_TOL or v > 1.0 + PROB_TOL:
        raise ValueError(f"{name} must be a probability in [0, 1], got {value!r}")
    return min(max(v, 0.0), 1.0)


@dataclass(frozen=True)
class ThetaSpec:
    """Initial conditional and marginal probabilities of (X1, X2, Y)."""

    p_y_given_x1: float
    p_y_given_x2: float
    p_y: float = 0.5
    p_x1: float = 0.5
    p_x2: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "p_y_given_x1", _check_prob(self.p_y_given_x1, "p_y_given_x1"))
        object.__setattr__(self, "p_y_given_x2", _check_prob(self.p_y_given_x2, "p_y_given_x2"))
        for name in ("p_y", "p_x1", "p_x2"):
            v = _check_prob(getattr(self, name), name)
            if abs(v - 0.5) > PROB_TOL:
                raise ValueError(f"{name} must equal 1/2 (uniform marginals), got {v!r}")
            object.__setattr__(self, name, 0.5)

    def swapped(self) -> "ThetaSpec":
        return ThetaSpec(self.p_y_given_x2, self.p_y_given_x1)


@dataclass(frozen=True)
class BinaryJoint:
    """Explicit 2x2x2 joint over (x1, x2, y); entries sum to 1."""

    table: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.table, dtype=float)
        if t.shape != (2, 2, 2):
            raise ValueError(f"joint table must have shape (2, 2, 2), got {t.shape}")
        if np.any(t < -1e-15):
            raise ValueError("joint table entries must be nonnegative")
        total = float(t.sum())
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"joint table must sum to 1 within 1e-12, got {total!r}")
        t = np.clip(t, 0.0, None)
        t.setflags(write=False)
        object.__setattr__(self, "table", t)

    def cell(self, x1: int, x2: int, y: int) -> float:
        return float(self.table[x1, x2, y])

    def marginal_xy(self, which: int) -> np.ndarray:
        """2x2 marginal of (x_which, y), which in {1, 2}."""
        if which == 1:
            return self.table.sum(axis=1)
        if which == 2:
            return self.table.sum(axis=0)
        raise ValueError("which must be 1 or 2")


@dataclass(frozen=True)
class Observation:
    x1: int
    x2: int
    y: int


def binary_entropy(p):
    """H(p) = -p log2 p - (1-p) log2 (1-p), with 0 log 0 = 0. Bits."""
    arr = np.asarray(p, dtype=float)
    if np.any(np.isnan(arr)) or np.any(arr < -PROB_TOL) or np.any(arr > 1.0 + PROB_TOL):
        raise ValueError(f"probability out of [0, 1]: {p!r}")
    arr = np.clip(arr, 0.0, 1.0)
    h = -(xlogy(arr, arr) + xlogy(1.0 - arr, 1.0 - arr)) / _LN2
    if np.isscalar(p) or arr.ndim == 0:
        return float(h)
    return h


def mutual_information_symmetric(p_y_given_x):
    """I(X;Y) for a symmetric binary channel with uniform inputs: 1 - H(p)."""
    h = binary_entropy(p_y_given_x)
    return 1.0 - h


def make_joint(theta: ThetaSpec) -> BinaryJoint:
    """Joint with Y ~ Bernoulli(1/2), X1 and X2 conditionally independent
    given Y, each agreeing with Y at its theta rate."""
    p1, p2 = theta.p_y_given_x1, theta.p_y_given_x2
    t = np.empty((2, 2, 2), dtype=float)
    for y in (0, 1):
        for x1 in (0, 1):
            q1 = p1 if x1 == y else 1.0 - p1
            for x2 in (0, 1):
                q2 = p2 if x2 == y else 1.0 - p2
                t[x1, x2, y] = 0.5 * q1 * q2
    return BinaryJoint(t)


def delta_info(theta: ThetaSpec) -> float:
    """Informativeness gap I(X1,Y) - I(X2,Y) in bits."""
    return mutual_information_symmetric(theta.p_y_given_x1) - mutual_information_symmetric(
        theta.p_y_given_x2
    )


def sample_observations(joint: BinaryJoint, n: int, rng) -> list[Observation]:
    """n i.i.d. draws from the joint; fully determined by the stream."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    gen = coerce_generator(rng)
    flat = joint.table.reshape(-1)
    idx = gen.choice(8, size=n, p=flat)
    x1 = (idx >> 2) & 1
    x2 = (idx >> 1) & 1
    y = idx & 1
    return [Observation(int(a), int(b), int(c)) for a, b, c in zip(x1, x2, y)]


__all__ = [
    "PROB_TOL",
    "ThetaSpec",
    "BinaryJoint",
    "Observation",
    "binary_entropy",
    "mutual_information_symmetric",
    "make_joint",
    "delta_info",
    "sample_observations",
]
