"""Loss-mapping defenses and the input-noise pre-processor.

Post-processing defenses remap the predicted-label margin after inference:
the dashed-line map (deterministic and randomized), the two sawtooth
baselines (linear and sine), and the identity map.  The score adjustment is
label-preserving: only the top score is rewritten so that the top-two margin
equals the mapped value.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field

import numpy as np

from .margin import as_score_vector, margin_loss_predicted, predicted_label

__all__ = [
    "IntervalSet",
    "DldParams",
    "RandomDldParams",
    "AaaParams",
    "RndParams",
    "LossMap",
    "loss_bias",
    "loss_high",
    "loss_low",
    "dld_map",
    "random_dld_map",
    "aaa_linear_map",
    "aaa_sine_map",
    "apply_postprocess",
    "rnd_preprocess",
    "build_interval_set",
    "default_interval_set",
]

VARIANTS = ("identity", "dld", "random-dld", "aaa-linear", "aaa-sine")


@dataclass(frozen=True)
class IntervalSet:
    """Disjoint half-open intervals (lo, hi], each within [0, 1], sorted ascending."""

    intervals: tuple[tuple[float, float], ...]

    def __post_init__(self):
        prev_hi = 0.0
        for lo, hi in self.intervals:
            if not (0.0 <= lo < hi <= 1.0):
                raise ValueError(f"bad interval ({lo}, {hi}]")
            if lo < prev_hi:
                raise ValueError("intervals must be disjoint and sorted")
            prev_hi = hi
        # precomputed bounds for bisect-based membership
        object.__setattr__(self, "_los", [lo for lo, _ in self.intervals])
        object.__setattr__(self, "_his", [hi for _, hi in self.intervals])

    def measure(self) -> float:
        return float(sum(hi - lo for lo, hi in self.intervals))

    def __contains__(self, x: float) -> bool:
        # exact comparison on purpose: the boundary set has measure zero
        i = bisect.bisect_left(self._his, x)
        if i == len(self.intervals):
            return False
        return self._los[i] < x <= self._his[i]


def build_interval_set(step: float, ratio: float) -> IntervalSet:
    """Union of evenly spaced intervals ((k - ratio) * step, k * step] within (0, 1).

    When 1/step is an integer the total measure equals ratio.
    """
    if not 0.0 < step <= 1.0:
        raise ValueError("step must be in (0, 1]")
    if not 0.0 <= ratio <= 1.0:
        raise ValueError("ratio must be in [0, 1]")
    if ratio == 0.0:
        return IntervalSet(())
    intervals = []
    k = 1
    while (k - ratio) * step < 1.0:
        lo = max((k - ratio) * step, 0.0)
        hi = min(k * step, 1.0)
        if lo < hi:
            if intervals and intervals[-1][1] == lo:
                intervals[-1] = (intervals[-1][0], hi)  # merge contiguous (ratio = 1)
            else:
                intervals.append((lo, hi))
        k += 1
    return IntervalSet(tuple(intervals))


def default_interval_set() -> IntervalSet:
    """The evaluation default S = (0, 0.02] u (0.04, 0.06] u ... u (0.96, 0.98]."""
    return IntervalSet(tuple((0.04 * k, 0.04 * k + 0.02) for k in range(25)))


@dataclass(frozen=True)
class DldParams:
    tau: float = 6.0
    h: float = 0.3
    s: IntervalSet = field(default_factory=default_interval_set)

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be > 0")
        if not 0.0 <= self.h <= 1.0:
            raise ValueError("h must be in [0, 1]")


@dataclass(frozen=True)
class RandomDldParams:
    tau: float = 6.0
    h: float = 0.3
    p: float = 0.5

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be > 0")
        if not 0.0 <= self.h <= 1.0:
            raise ValueError("h must be in [0, 1]")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("p must be in [0, 1]")


@dataclass(frozen=True)
class AaaParams:
    tau: float = 6.0
    alpha: float = 0.7  # sine variant only

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be > 0")


@dataclass(frozen=True)
class RndParams:
    """Additive Gaussian input noise with per-coordinate std nu."""

    nu: float = 0.01

    def __post_init__(self):
        if self.nu < 0:
            raise ValueError("nu must be >= 0")


def loss_bias(L: float, tau: float) -> float:
    """Start of the tau-length interval containing L (floor toward -inf)."""
    return math.floor(L / tau) * tau


def loss_high(L: float, tau: float, h: float) -> float:
    """Rising branch: bias + h*tau + (1 - h) * (L - bias)."""
    b = loss_bias(L, tau)
    return b + h * tau + (1.0 - h) * (L - b)


def loss_low(L: float, tau: float, h: float) -> float:
    """Falling branch: bias + h*tau - h * (L - bias)."""
    b = loss_bias(L, tau)
    return b + h * tau - h * (L - b)


def dld_map(L: float, params: DldParams) -> float:
    """Deterministic dashed-line map: branch chosen by the fractional position in S."""
    b = loss_bias(L, params.tau)
    frac = (L - b) / params.tau
    if frac in params.s:
        return loss_high(L, params.tau, params.h)
    return loss_low(L, params.tau, params.h)


def random_dld_map(L: float, params: RandomDldParams, rng: np.random.Generator) -> float:
    """Randomized dashed-line map: high branch with probability p, one draw per call."""
    if rng.random() < params.p:
        return loss_high(L, params.tau, params.h)
    return loss_low(L, params.tau, params.h)


def aaa_linear_map(L: float, tau: float) -> float:
    """Sawtooth baseline, strictly decreasing with slope -1 on each interval."""
    return 2.0 * math.floor(L / tau) * tau + tau - L


def aaa_sine_map(L: float, tau: float, alpha: float) -> float:
    """Sine baseline mixing rising and falling arcs; fixed point at each interval midpoint."""
    k = math.floor(L / tau)
    return L - alpha * tau * math.sin(math.pi * (1.0 - (2.0 * L - (2.0 * k + 1.0) * tau) / tau))


@dataclass(frozen=True)
class LossMap:
    """A defense's margin-remapping function: variant tag plus matching parameters."""

    variant: str = "identity"
    dld: DldParams | None = None
    random_dld: RandomDldParams | None = None
    aaa: AaaParams | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        needed = {
            "dld": self.dld,
            "random-dld": self.random_dld,
            "aaa-linear": self.aaa,
            "aaa-sine": self.aaa,
        }
        if self.variant != "identity" and needed[self.variant] is None:
            raise ValueError(f"variant {self.variant!r} requires matching parameters")

    @property
    def is_random(self) -> bool:
        return self.variant == "random-dld"

    def __call__(self, L: float, rng: np.random.Generator | None = None) -> float:
        if self.variant == "identity":
            return L
        if self.variant == "dld":
            return dld_map(L, self.dld)
        if self.variant == "random-dld":
            if rng is None:
                raise ValueError("random-dld requires a random stream")
            return random_dld_map(L, self.random_dld, rng)
        if self.variant == "aaa-linear":
            return aaa_linear_map(L, self.aaa.tau)
        return aaa_sine_map(L, self.aaa.tau, self.aaa.alpha)


def apply_postprocess(
    s, loss_map: LossMap, rng: np.random.Generator | None = None
) -> np.ndarray:
    """Rewrite the top score so the top-two margin equals the mapped margin.

    Only the (tie-broken) top entry changes; the predicted label is preserved
    whenever the mapped margin is positive.
    """
    s = as_score_vector(s)
    if loss_map.variant == "identity":
        return s.copy()
    top = predicted_label(s)
    m = margin_loss_predicted(s)
    m_new = loss_map(m, rng)
    out = s.copy()
    second = np.delete(s, top).max()
    out[top] = second + m_new
    return out


def rnd_preprocess(
    x, params: RndParams, rng: np.random.Generator, input_range: tuple[float, float]
) -> np.ndarray:
    """Add i.i.d. Gaussian noise (std nu) to the input, clamped to the valid range."""
    x = np.asarray(x, dtype=float)
    if params.nu == 0.0:
        return x.copy()
    noisy = x + rng.normal(0.0, params.nu, size=x.shape)
    lo, hi = input_range
    return np.clip(noisy, lo, hi)
