"""Information-theoretic operators of the iterative CDA fixed point.

The augmentation map takes the original conditionals to the augmented ones
under a selection-error rate alpha and a correct-aspect-insertion rate beta:

    P(Y^a|X1^a) = (a/2 + 1/2 - b/2) P(Y) + (-a/2 + 1/2 + b/2) P(Y|X1)
    P(Y^a|X2^a) = (-a/2 + 1/2 + b/2) P(Y) + (a/2 + 1/2 - b/2) P(Y|X2)

``augmented_info_gap`` maps (alpha, theta) to the augmented dataset's
informativeness gap (beta tied to 1 - alpha), ``selection_error`` estimates by
Monte Carlo the probability a max-agreement selector with n observations picks
the spurious variable, and ``iteration_step`` composes the two. Iterating the
composition from a small enough starting error converges to the no-spurious
floor; starting above the threshold located by ``find_threshold_alpha`` it
diverges to the opposite fixed point.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import binom

from ._rng import Seed, derive, generator
from .probmodel import ThetaSpec, _check_prob, mutual_information_symmetric

# Trials per chunk of the Monte-Carlo loop. Chunking is by fixed size with a
# per-chunk derived stream, so any partition of chunks over workers aggregates
# to identical integer counts.
MC_CHUNK = 8192

# Stream tags (arbitrary distinct constants).
_TAG_STEP = 101
_TAG_LIMIT = 102
_TAG_GRID = 103
_TAG_BISECT = 104


@dataclass(frozen=True)
class ErrorRates:
    """Selection error alpha and correct-aspect-insertion rate beta."""

    alpha: float
    beta: float

    def __post_init__(self):
        object.__setattr__(self, "alpha", _check_prob(self.alpha, "alpha"))
        object.__setattr__(self, "beta", _check_prob(self.beta, "beta"))


@dataclass(frozen=True)
class AugmentedConditionals:
    p_ya_given_x1a: float
    p_ya_given_x2a: float


@dataclass(frozen=True)
class SimConfig:
    """Observation budget and Monte-Carlo settings for the selector model."""

    n: int
    trials: int = 60_000
    tie_break: str = "random"

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if self.trials < 1:
            raise ValueError(f"trials must be >= 1, got {self.trials}")
        if self.tie_break != "random":
            raise ValueError(f"only random tie-breaking is supported, got {self.tie_break!r}")


@dataclass(frozen=True)
class IterationStep:
    k: int
    alpha: float
    delta_a: float
    aug: AugmentedConditionals


@dataclass
class IterationTrace:
    steps: list[IterationStep] = field(default_factory=list)
    converged: bool = False
    limit_alpha: float = float("nan")

    @property
    def alphas(self) -> list[float]:
        return [s.alpha for s in self.steps]


@dataclass(frozen=True)
class ThresholdResult:
    alpha_t: float
    bracket_width: float

    def __post_init__(self):
        if not 0.0 <= self.alpha_t <= 1.0:
            raise ValueError(f"alpha_t must be in [0, 1], got {self.alpha_t!r}")
        if not self.bracket_width > 0.0:
            raise ValueError(f"bracket_width must be positive, got {self.bracket_width!r}")


class NoCrossingError(RuntimeError):
    """The iteration map stays below the identity on the whole search grid."""


def augment_conditionals(theta: ThetaSpec, err: ErrorRates) -> AugmentedConditionals:
    """Conditional probabilities in the augmented dataset."""
    c_noise = err.alpha / 2.0 + 0.5 - err.beta / 2.0
    c_keep = 1.0 - c_noise
    p1a = c_noise * theta.p_y + c_keep * theta.p_y_given_x1
    p2a = c_keep * theta.p_y + c_noise * theta.p_y_given_x2
    return AugmentedConditionals(p1a, p2a)


def cda_benefit(theta: ThetaSpec, err: ErrorRates) -> float:
    """Net bits of spurious information removed beyond target information lost.

    Positive values mean the augmentation helps: the spurious signal loses
    more mutual information with the label than the target signal does.
    """
    aug = augment_conditionals(theta, err)
    drop_spurious = mutual_information_symmetric(theta.p_y_given_x2) - mutual_information_symmetric(
        aug.p_ya_given_x2a
    )
    drop_target = mutual_information_symmetric(theta.p_y_given_x1) - mutual_information_symmetric(
        aug.p_ya_given_x1a
    )
    return drop_spurious - drop_target


def augmented_info_gap(theta: ThetaSpec, alpha: float) -> float:
    """Gap I(X1^a,Y^a) - I(X2^a,Y^a) of the augmented dataset, with the
    insertion quality tied to the selector: beta = 1 - alpha."""
    alpha = _check_prob(alpha, "alpha")
    aug = augment_conditionals(theta, ErrorRates(alpha, 1.0 - alpha))
    return mutual_information_symmetric(aug.p_ya_given_x1a) - mutual_information_symmetric(
        aug.p_ya_given_x2a
    )


def selection_error(theta_effective: ThetaSpec, cfg: SimConfig, seed: Seed | None) -> float:
    """Monte-Carlo estimate of the max-agreement selector's error rate.

    Per trial, each variable's agreement count with the label over n
    observations is an independent Binomial(n, p_i) draw (the variables are
    conditionally independent given the label and the channels are symmetric,
    so sampling counts directly is an exact simulation of sampling
    observations). The trial selects the variable with the higher count,
    breaking ties uniformly at random; the estimate is the fraction of trials
    selecting the spurious variable X2.
    """
    p1 = theta_effective.p_y_given_x1
    p2 = theta_effective.p_y_given_x2
    n, trials = cfg.n, cfg.trials
    picked_x2 = 0
    done = 0
    chunk_index = 0
    while done < trials:
        m = min(MC_CHUNK, trials - done)
        gen = generator(seed, chunk_index)
        a1 = gen.binomial(n, p1, size=m)
        a2 = gen.binomial(n, p2, size=m)
        u = gen.random(m)
        picked_x2 += int(np.sum(a2 > a1)) + int(np.sum((a2 == a1) & (u < 0.5)))
        done += m
        chunk_index += 1
    return picked_x2 / trials


def exact_selection_error(p1: float, p2: float, n: int) -> float:
    """Closed-form P(A2 > A1) + P(A2 = A1)/2 for independent binomial
    agreement counts; the enumeration oracle for the Monte-Carlo path."""
    p1 = _check_prob(p1, "p1")
    p2 = _check_prob(p2, "p2")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    k = np.arange(n + 1)
    f1 = binom.pmf(k, n, p1)
    f2 = binom.pmf(k, n, p2)
    sf2 = binom.sf(k, n, p2)  # P(A2 > k)
    return float(np.sum(f1 * sf2) + 0.5 * np.sum(f1 * f2))


def iteration_step(
    theta: ThetaSpec, alpha_k: float, cfg: SimConfig, seed: Seed | None
) -> tuple[float, float, AugmentedConditionals]:
    """One pass of the iteration: augment at the current error rate, then
    re-estimate the selection error on the augmented conditional pair.

    The Monte-Carlo stage consumes ``seed`` directly, so composing
    ``augment_conditionals`` and ``selection_error`` by hand with the same
    seed reproduces the result bit for bit.
    """
    alpha_k = _check_prob(alpha_k, "alpha_k")
    aug = augment_conditionals(theta, ErrorRates(alpha_k, 1.0 - alpha_k))
    delta_a = mutual_information_symmetric(aug.p_ya_given_x1a) - mutual_information_symmetric(
        aug.p_ya_given_x2a
    )
    theta_eff = ThetaSpec(aug.p_ya_given_x1a, aug.p_ya_given_x2a)
    alpha_next = selection_error(theta_eff, cfg, seed)
    return alpha_next, delta_a, aug


def run_fixed_point(
    theta: ThetaSpec,
    alpha0: float,
    cfg: SimConfig,
    max_iters: int = 25,
    eps: float = 0.005,
    seed: Seed | None = None,
) -> IterationTrace:
    """Iterate the error-rate map from alpha0 until successive values move
    by less than eps or max_iters is hit. Non-convergence is reported in the
    flag, not raised. ``limit_alpha`` estimates the no-spurious floor: the
    selection error when the spurious conditional is fully flattened to 1/2.
    """
    alpha0 = _check_prob(alpha0, "alpha0")
    if max_iters < 1:
        raise ValueError(f"max_iters must be >= 1, got {max_iters}")
    trace = IterationTrace()
    alpha = alpha0
    converged = False
    k = 0
    for k in range(max_iters):
        alpha_next, delta_a, aug = iteration_step(theta, alpha, cfg, derive(seed, _TAG_STEP, k))
        trace.steps.append(IterationStep(k, alpha, delta_a, aug))
        moved = abs(alpha_next - alpha)
        alpha = alpha_next
        if moved < eps:
            converged = True
            break
    # record the final alpha with its own augmentation outputs
    aug_final = augment_conditionals(theta, ErrorRates(alpha, 1.0 - alpha))
    delta_final = mutual_information_symmetric(
        aug_final.p_ya_given_x1a
    ) - mutual_information_symmetric(aug_final.p_ya_given_x2a)
    trace.steps.append(IterationStep(k + 1, alpha, delta_final, aug_final))
    trace.converged = converged
    trace.limit_alpha = selection_error(
        ThetaSpec(theta.p_y_given_x1, 0.5), cfg, derive(seed, _TAG_LIMIT)
    )
    return trace


def find_threshold_alpha(
    theta: ThetaSpec,
    cfg: SimConfig,
    seed: Seed | None = None,
    grid_points: int = 24,
    bisect_rounds: int = 8,
) -> ThresholdResult:
    """Locate the error rate where the iteration map crosses the identity
    from below, i.e. the boundary between the converging and diverging
    regimes. Uses 10x the configured trial count per map evaluation for sign
    stability, scans a grid above the no-spurious floor for the first sign
    change, then bisects. Raises NoCrossingError when the map stays below the
    identity everywhere on the grid (benign regime)."""
    cfg10 = SimConfig(cfg.n, cfg.trials * 10, cfg.tie_break)
    limit = selection_error(ThetaSpec(theta.p_y_given_x1, 0.5), cfg10, derive(seed, _TAG_LIMIT))

    def g(alpha: float, tag: int, idx: int) -> float:
        a_next, _, _ = iteration_step(theta, alpha, cfg10, derive(seed, tag, idx))
        return a_next - alpha

    lo = min(limit + 1e-3, 1.0)
    grid = np.linspace(lo, 1.0, grid_points)
    values = [g(float(a), _TAG_GRID, i) for i, a in enumerate(grid)]
    bracket = None
    for i in range(len(grid) - 1):
        if values[i] < 0.0 <= values[i + 1]:
            bracket = (float(grid[i]), float(grid[i + 1]))
            break
    if bracket is None:
        raise NoCrossingError(
            "iteration map does not cross the identity above the no-spurious floor"
        )
    a_lo, a_hi = bracket
    for i in range(bisect_rounds):
        mid = 0.5 * (a_lo + a_hi)
        if g(mid, _TAG_BISECT, i) < 0.0:
            a_lo = mid
        else:
            a_hi = mid
    return ThresholdResult(alpha_t=0.5 * (a_lo + a_hi), bracket_width=a_hi - a_lo)


def beta_sweep(theta: ThetaSpec, alphas, betas) -> list[tuple[float, float, float]]:
    """Benefit table over an (alpha, beta) grid; rows ordered beta-major so
    each beta forms one plot curve. Closed form, no randomness."""
    rows = []
    for b in betas:
        b = _check_prob(b, "beta")
        for a in alphas:
            a = _check_prob(a, "alpha")
            rows.append((float(a), float(b), cda_benefit(theta, ErrorRates(a, b))))
    return rows


def mc_standard_error(estimate: float, trials: int) -> float:
    """Binomial standard error of a Monte-Carlo proportion estimate."""
    return float(np.sqrt(max(estimate * (1.0 - estimate), 0.0) / trials))


def inverse_mi_symmetric(mi_bits: float) -> float:
    """Agreement probability p >= 1/2 whose symmetric-channel mutual
    information equals mi_bits; bisection on the monotone branch."""
    if not 0.0 <= mi_bits <= 1.0:
        raise ValueError(f"mutual information must be in [0, 1] bits, got {mi_bits!r}")
    lo, hi = 0.5, 1.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if mutual_information_symmetric(mid) < mi_bits:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


__all__ = [
    "MC_CHUNK",
    "ErrorRates",
    "AugmentedConditionals",
    "SimConfig",
    "IterationStep",
    "IterationTrace",
    "ThresholdResult",
    "NoCrossingError",
    "augment_conditionals",
    "cda_benefit",
    "augmented_info_gap",
    "selection_error",
    "exact_selection_error",
    "iteration_step",
    "run_fixed_point",
    "find_threshold_alpha",
    "beta_sweep",
    "mc_standard_error",
    "inverse_mi_symmetric",
]
