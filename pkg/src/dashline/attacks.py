"""Candidate generators and query-budgeted attack tactics.

Generators propose candidates inside the noise-budget neighborhood of the
clean input: a random-search square-patch generator (the usual strong
score-based attack) and an idealized monotone generator that walks the
verification landscape's known descent direction.  Tactics wrap a generator
in an acceptance rule: plain minimization, direction reversal on stagnation,
fixed-probability exploration, and simulated annealing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .margin import margin_loss, predicted_label
from .victims import DefendedModel

__all__ = [
    "GeneratorSpec",
    "TacticSpec",
    "FixedProb",
    "SaSchedule",
    "AttackRun",
    "BypassResult",
    "make_generator",
    "square_generate",
    "idealized_generate",
    "run_standard",
    "run_reverse",
    "run_randomized",
    "run_bypass",
    "run_tactic",
    "bypass_random_dld",
    "sa_accept_probability",
]


class PreconditionError(ValueError):
    """Attack started from a misclassified input or an invalid configuration."""


@dataclass(frozen=True)
class GeneratorSpec:
    kind: str = "square-linf"  # square-linf | square-l2 | idealized
    epsilon_n: float = 0.05
    norm: str = "linf"
    p_init: float = 0.05  # initial fraction of coordinates in the square patch
    r: float = 0.0  # idealized per-step movement bound

    def __post_init__(self):
        if self.kind not in ("square-linf", "square-l2", "idealized"):
            raise ValueError(f"unknown generator kind {self.kind!r}")
        if self.kind == "idealized" and self.r <= 0:
            raise ValueError("idealized generator requires r > 0")


@dataclass(frozen=True)
class FixedProb:
    prob: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.prob <= 1.0:
            raise ValueError("prob must be in [0, 1]")


@dataclass(frozen=True)
class SaSchedule:
    initial_temp: float = 25.0
    decay: float = 0.997
    stagnation_reset: int = 20

    def __post_init__(self):
        if self.initial_temp <= 0:
            raise ValueError("initial_temp must be > 0")
        if not 0.0 < self.decay <= 1.0:
            raise ValueError("decay must be in (0, 1]")


@dataclass(frozen=True)
class TacticSpec:
    kind: str = "standard"  # none | standard | reverse | explore | sa
    t: int = 23
    prob: float = 0.5
    sa: SaSchedule = field(default_factory=SaSchedule)

    def __post_init__(self):
        if self.kind not in ("none", "standard", "reverse", "explore", "sa", "bypass"):
            raise ValueError(f"unknown tactic kind {self.kind!r}")
        if self.t < 1:
            raise ValueError("t must be >= 1")


@dataclass
class AttackRun:
    """One attack episode: best candidate, accounting, and the observed-loss trace."""

    best_x: np.ndarray
    observed_loss: float
    queries_used: int
    outcome: str  # success | budget_exhausted | trapped
    y0: int
    success_query: int | None = None
    loss_trace: list[tuple[int, float]] | None = None
    reversal_count: int = 0
    final_true_margin: float | None = None

    @property
    def succeeded(self) -> bool:
        return self.outcome == "success"

    def to_record(self, config_hash: str = "", seed: int | None = None) -> dict:
        return {
            "config_hash": config_hash,
            "seed": seed,
            "outcome": self.outcome,
            "queries_used": self.queries_used,
            "success_query": self.success_query,
            "reversal_count": self.reversal_count,
            "observed_loss": self.observed_loss,
            "loss_trace": self.loss_trace,
        }


def sa_accept_probability(loss_new: float, loss: float, temp: float) -> float:
    """Annealing acceptance probability exp(-(loss_new - loss) / temp) for a worse candidate."""
    return math.exp(-(loss_new - loss) / temp)


def _grid_shape(dims: int) -> tuple[int, int]:
    """Factor a flat input into the most square (rows, cols) grid."""
    best = (1, dims)
    for r in range(1, int(math.isqrt(dims)) + 1):
        if dims % r == 0:
            best = (r, dims // r)
    return best


def _patch_fraction(p_init: float, it: int, n_iters: int) -> float:
    """Piecewise-constant halving schedule for the patch-size fraction."""
    frac_done = 10000 * it / max(n_iters, 1)
    p = p_init
    for threshold in (10, 50, 200, 500, 1000, 2000, 4000, 6000, 8000):
        if frac_done > threshold:
            p /= 2.0
    return p


def square_generate(best_x, x0, spec: GeneratorSpec, it: int, n_iters: int,
                    rng: np.random.Generator,
                    input_range: tuple[float, float]) -> np.ndarray:
    """Perturb one randomly placed square patch of the current best candidate.

    The result is projected into the noise-budget neighborhood of the clean
    input and clamped to the model's input range.
    """
    x0 = np.asarray(x0, dtype=float)
    best_x = np.asarray(best_x, dtype=float)
    eps = spec.epsilon_n
    lo, hi = input_range
    dims = x0.size
    rows, cols = _grid_shape(dims)

    if spec.kind == "square-linf":
        if it == 0:
            # stripe initialization: full-budget sign per column
            signs = rng.choice([-1.0, 1.0], size=cols)
            x_new = x0.reshape(rows, cols) + eps * signs[None, :]
            x_new = x_new.ravel()
        else:
            p = _patch_fraction(spec.p_init, it, n_iters)
            side = max(1, round(math.sqrt(p * dims)))
            side = min(side, rows, cols)
            r0 = rng.integers(0, rows - side + 1)
            c0 = rng.integers(0, cols - side + 1)
            sign = rng.choice([-1.0, 1.0])
            grid = best_x.reshape(rows, cols).copy()
            grid[r0:r0 + side, c0:c0 + side] = \
                x0.reshape(rows, cols)[r0:r0 + side, c0:c0 + side] + sign * eps
            x_new = grid.ravel()
        x_new = np.clip(x_new, x0 - eps, x0 + eps)
        return np.clip(x_new, lo, hi)

    if spec.kind == "square-l2":
        p = _patch_fraction(spec.p_init, max(it, 1), n_iters)
        side = max(1, round(math.sqrt(p * dims)))
        side = min(side, rows, cols)
        r0 = rng.integers(0, rows - side + 1)
        c0 = rng.integers(0, cols - side + 1)
        grid = best_x.reshape(rows, cols).copy()
        grid[r0:r0 + side, c0:c0 + side] += rng.normal(
            0.0, eps / math.sqrt(dims), size=(side, side))
        delta = grid.ravel() - x0
        nrm = np.linalg.norm(delta)
        if nrm > eps:
            delta *= eps / nrm
        return np.clip(x0 + delta, lo, hi)

    raise ValueError(f"square_generate cannot handle kind {spec.kind!r}")


def idealized_generate(best_x, spec: GeneratorSpec, landscape) -> np.ndarray:
    """Move along the landscape's known descent direction by at most r.

    The true margin is non-increasing by construction and the per-step score
    drift is bounded by lipschitz * r / 2.
    """
    if not hasattr(landscape, "descent_direction"):
        raise PreconditionError("idealized generator requires a landscape oracle")
    best_x = np.asarray(best_x, dtype=float)
    d = landscape.descent_direction()
    if landscape.norm == "linf":
        step = spec.r * np.ones_like(d)  # inf-norm r, margin drop lipschitz * r
    else:
        step = spec.r * d
    return best_x + step


def make_generator(spec: GeneratorSpec, x0, budget: int,
                   input_range: tuple[float, float], landscape=None):
    """Bind a generator spec into a callable (best_x, it, rng) -> candidate."""
    if spec.kind == "idealized":
        if landscape is None:
            raise PreconditionError("idealized generator requires a landscape oracle")
        return lambda best_x, it, rng: idealized_generate(best_x, spec, landscape)
    return lambda best_x, it, rng: square_generate(
        best_x, x0, spec, it, budget, rng, input_range)


class _Episode:
    """Shared query/accounting state for one attack run."""

    def __init__(self, model: DefendedModel, x0, budget: int,
                 rng: np.random.Generator, record_trace: bool):
        if budget < 1:
            raise PreconditionError("budget must be >= 1")
        self.model = model
        self.rng = rng
        self.budget = budget
        self.queries = 0
        self.trace: list[tuple[int, float]] | None = [] if record_trace else None
        self.success_query: int | None = None

        s0 = self._raw_query(np.asarray(x0, dtype=float))
        self.y0 = predicted_label(s0)
        self.loss0 = margin_loss(s0, self.y0)
        if self.loss0 <= 0:
            raise PreconditionError("x0 must be correctly classified (margin > 0)")

    def _raw_query(self, x) -> np.ndarray:
        self.queries += 1
        return self.model.query(x, self.rng)

    def observe(self, x) -> float:
        """Query a candidate, record the reference-label margin, flag success."""
        s = self._raw_query(x)
        loss = margin_loss(s, self.y0)
        if self.trace is not None:
            self.trace.append((self.queries, loss))
        if loss < 0 and self.success_query is None:
            self.success_query = self.queries
        return loss

    def exhausted(self) -> bool:
        return self.queries >= self.budget

    def finish(self, best_x, observed_loss, outcome=None, reversal_count=0) -> AttackRun:
        if outcome is None:
            outcome = "success" if self.success_query is not None else "budget_exhausted"
        return AttackRun(
            best_x=np.asarray(best_x, dtype=float),
            observed_loss=observed_loss,
            queries_used=self.queries,
            outcome=outcome,
            y0=self.y0,
            success_query=self.success_query,
            loss_trace=self.trace,
            reversal_count=reversal_count,
        )


def run_standard(model: DefendedModel, x0, gen: GeneratorSpec, budget: int,
                 rng: np.random.Generator, *, landscape=None,
                 trap_detector=None, record_trace: bool = False) -> AttackRun:
    """Plain minimization: accept a candidate iff its observed loss strictly decreases.

    The initial query of x0 (fixing the reference label) counts against the
    budget.  trap_detector, when given, is called on each accepted candidate
    and ends the run as 'trapped' if it returns True (harness-side use).
    """
    ep = _Episode(model, x0, budget, rng, record_trace)
    generate = make_generator(gen, x0, budget, model.input_range, landscape)
    best_x, loss = np.asarray(x0, dtype=float), ep.loss0
    it = 0
    while loss > 0 and not ep.exhausted():
        cand = generate(best_x, it, rng)
        loss_new = ep.observe(cand)
        if loss_new < loss:
            best_x, loss = cand, loss_new
            if loss > 0 and trap_detector is not None and trap_detector(best_x, loss):
                return ep.finish(best_x, loss, outcome="trapped")
        it += 1
    return ep.finish(best_x, loss)


def run_reverse(model: DefendedModel, x0, gen: GeneratorSpec, budget: int,
                t: int, rng: np.random.Generator, *, landscape=None,
                record_trace: bool = False) -> AttackRun:
    """Direction-reversing tactic: flip between minimization and maximization
    after t consecutive non-accepting iterations."""
    if t < 1:
        raise PreconditionError("t must be >= 1")
    ep = _Episode(model, x0, budget, rng, record_trace)
    generate = make_generator(gen, x0, budget, model.input_range, landscape)
    best_x, loss = np.asarray(x0, dtype=float), ep.loss0
    reverse = False
    cnt = 0
    reversals = 0
    it = 0
    while loss > 0 and not ep.exhausted():
        cand = generate(best_x, it, rng)
        loss_new = ep.observe(cand)
        if not ((loss_new < loss) ^ reverse):
            cnt += 1
        if cnt > t:
            cnt = 0
            reverse = not reverse
            reversals += 1
        if (loss_new < loss) ^ reverse:
            cnt = 0
            best_x, loss = cand, loss_new
        it += 1
    return ep.finish(best_x, loss, reversal_count=reversals)


def run_randomized(model: DefendedModel, x0, gen: GeneratorSpec, budget: int,
                   schedule, rng: np.random.Generator, *, landscape=None,
                   record_trace: bool = False) -> AttackRun:
    """Randomized acceptance: always take improvements, sometimes take worse
    candidates (fixed probability, or a decaying annealing temperature)."""
    ep = _Episode(model, x0, budget, rng, record_trace)
    generate = make_generator(gen, x0, budget, model.input_range, landscape)
    best_x, loss = np.asarray(x0, dtype=float), ep.loss0
    annealing = isinstance(schedule, SaSchedule)
    temp = schedule.initial_temp if annealing else None
    stagnation = 0
    it = 0
    while loss > 0 and not ep.exhausted():
        cand = generate(best_x, it, rng)
        loss_new = ep.observe(cand)
        if loss_new < loss:
            accept = True
        elif annealing:
            accept = rng.random() < sa_accept_probability(loss_new, loss, temp)
        else:
            accept = rng.random() < schedule.prob
        if accept:
            best_x, loss = cand, loss_new
            stagnation = 0
        else:
            stagnation += 1
            if annealing and stagnation >= schedule.stagnation_reset:
                temp = schedule.initial_temp
                stagnation = 0
        if annealing:
            temp *= schedule.decay
        it += 1
    return ep.finish(best_x, loss)


@dataclass
class BypassResult:
    recovered_high: float
    probes_used: int
    conclusive: bool
    flipped: bool = False  # a probe already showed a negative reference margin


def bypass_random_dld(model: DefendedModel, x, y0: int, max_probes: int,
                      rng: np.random.Generator) -> BypassResult:
    """Repeat-query one input until two distinct observed margins appear.

    The larger value is the rising branch of the randomized map and can be
    minimized safely.  Against a deterministic defense the outputs never
    differ and the result is flagged inconclusive.
    """
    if max_probes < 2:
        raise PreconditionError("max_probes must be >= 2")
    first = margin_loss(model.query(x, rng), y0)
    probes = 1
    if first < 0:
        return BypassResult(first, probes, True, flipped=True)
    while probes < max_probes:
        v = margin_loss(model.query(x, rng), y0)
        probes += 1
        if v < 0:
            return BypassResult(v, probes, True, flipped=True)
        if v != first:
            return BypassResult(max(first, v), probes, True)
    return BypassResult(first, probes, False)


def run_bypass(model: DefendedModel, x0, gen: GeneratorSpec, budget: int,
               max_probes: int, rng: np.random.Generator, *,
               landscape=None, record_trace: bool = False) -> AttackRun:
    """Adaptive attack on the randomized defense: recover each candidate's
    rising-branch value by repeated probing and minimize that."""
    ep = _Episode(model, x0, budget, rng, record_trace)
    generate = make_generator(gen, x0, budget, model.input_range, landscape)
    best_x = np.asarray(x0, dtype=float)

    def probe(x) -> BypassResult:
        first = ep.observe(x)
        probes = 1
        if first < 0:
            return BypassResult(first, probes, True, flipped=True)
        while probes < max_probes and not ep.exhausted():
            v = ep.observe(x)
            probes += 1
            if v < 0:
                return BypassResult(v, probes, True, flipped=True)
            if v != first:
                return BypassResult(max(first, v), probes, True)
        return BypassResult(first, probes, False)

    res = probe(best_x)
    if res.flipped:
        return ep.finish(best_x, res.recovered_high)
    best_high = res.recovered_high
    it = 0
    while not ep.exhausted():
        cand = generate(best_x, it, rng)
        res = probe(cand)
        if res.flipped:
            return ep.finish(cand, res.recovered_high)
        if res.conclusive and res.recovered_high < best_high:
            best_x, best_high = cand, res.recovered_high
        it += 1
    return ep.finish(best_x, best_high)


def run_tactic(tactic: TacticSpec, model: DefendedModel, x0, gen: GeneratorSpec,
               budget: int, rng: np.random.Generator, *, landscape=None,
               max_probes: int = 50, record_trace: bool = False) -> AttackRun:
    """Dispatch one attack episode according to the tactic spec."""
    kw = dict(landscape=landscape, record_trace=record_trace)
    if tactic.kind == "standard":
        return run_standard(model, x0, gen, budget, rng, **kw)
    if tactic.kind == "reverse":
        return run_reverse(model, x0, gen, budget, tactic.t, rng, **kw)
    if tactic.kind == "explore":
        return run_randomized(model, x0, gen, budget, FixedProb(tactic.prob), rng, **kw)
    if tactic.kind == "sa":
        return run_randomized(model, x0, gen, budget, tactic.sa, rng, **kw)
    if tactic.kind == "bypass":
        return run_bypass(model, x0, gen, budget, max_probes, rng, **kw)
    raise PreconditionError(f"tactic {tactic.kind!r} is not runnable")
