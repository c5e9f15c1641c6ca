"""Experiment orchestration and Monte-Carlo verification of the analytic bounds.

Everything here is reproducible from a root seed: per-cell and per-trial
random streams are derived with keyed seed sequences, so results are
bit-identical across reruns and independent of execution order.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .attacks import GeneratorSpec, TacticSpec, run_bypass, run_standard, run_tactic
from .defenses import (
    AaaParams,
    DldParams,
    IntervalSet,
    LossMap,
    RandomDldParams,
    RndParams,
    build_interval_set,
    default_interval_set,
    loss_high,
    loss_low,
    random_dld_map,
)
from .margin import margin_loss_predicted, predicted_label
from .victims import DefendedModel, RobustLandscapeModel, SyntheticClassifier

__all__ = [
    "ConfigError",
    "VictimSpec",
    "DefenseSpec",
    "ExperimentConfig",
    "ExperimentResult",
    "BoundCheck",
    "run_matrix",
    "asr_curve",
    "verify_theorem1",
    "verify_theorem2",
    "branch_proportion",
    "sweep",
    "expected_bypass_probes",
    "two_distinct_expectation",
    "theorem1_bound",
    "theorem2_bound",
]

DEFAULT_SEED = 19260817


class ConfigError(ValueError):
    """Invalid experiment configuration."""


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class VictimSpec:
    kind: str = "synthetic"  # synthetic | landscape
    input_dims: int = 32
    num_classes: int = 10
    seed: int = 0
    hidden: int = 64
    out_scale: float = 6.0
    L0: float = 6.0
    lipschitz: float = 1.0
    norm: str = "linf"

    def build(self):
        if self.kind == "synthetic":
            return SyntheticClassifier(self.input_dims, self.num_classes,
                                       self.seed, hidden=self.hidden,
                                       out_scale=self.out_scale)
        if self.kind == "landscape":
            return RobustLandscapeModel(self.L0, self.lipschitz,
                                        self.input_dims, norm=self.norm)
        raise ConfigError(f"unknown victim kind {self.kind!r}")


@dataclass(frozen=True)
class DefenseSpec:
    name: str
    variant: str  # none | rnd | dld | random-dld | aaa-linear | aaa-sine
    nu: float = 0.01
    tau: float = 6.0
    h: float = 0.3
    alpha: float = 0.7
    p: float = 0.5
    step: float | None = None
    ratio: float | None = None
    intervals: tuple[tuple[float, float], ...] | None = None

    def interval_set(self) -> IntervalSet:
        if self.intervals is not None:
            return IntervalSet(self.intervals)
        if self.step is not None and self.ratio is not None:
            return build_interval_set(self.step, self.ratio)
        return default_interval_set()

    def build(self) -> tuple[RndParams | None, LossMap]:
        if self.variant == "none":
            return None, LossMap("identity")
        if self.variant == "rnd":
            return RndParams(self.nu), LossMap("identity")
        if self.variant == "dld":
            return None, LossMap("dld", dld=DldParams(self.tau, self.h, self.interval_set()))
        if self.variant == "random-dld":
            return None, LossMap("random-dld",
                                 random_dld=RandomDldParams(self.tau, self.h, self.p))
        if self.variant in ("aaa-linear", "aaa-sine"):
            return None, LossMap(self.variant, aaa=AaaParams(self.tau, self.alpha))
        raise ConfigError(f"unknown defense variant {self.variant!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    victim: VictimSpec = field(default_factory=VictimSpec)
    defenses: tuple[DefenseSpec, ...] = ()
    tactics: tuple[TacticSpec, ...] = ()
    generator: GeneratorSpec = field(default_factory=GeneratorSpec)
    sample_count: int = 100
    budget: int = 2500
    root_seed: int = DEFAULT_SEED
    trials: int = 10000
    record_curves: bool = True
    threads: int = 1

    def __post_init__(self):
        if self.sample_count < 1 or self.budget < 1 or self.trials < 1:
            raise ConfigError("sample_count, budget, and trials must be positive")
        if not self.defenses or not self.tactics:
            raise ConfigError("at least one defense and one tactic are required")


@dataclass
class ExperimentResult:
    defense_names: list[str]
    tactic_names: list[str]
    accuracy: dict[tuple[str, str], float]
    success_queries: dict[tuple[str, str], list[int | None]]
    reversal_stats: dict[tuple[str, str], tuple[float, float]]
    budget: int

    def asr_curve(self, defense: str, tactic: str) -> np.ndarray:
        return asr_curve(self.success_queries[(defense, tactic)], self.budget)

    def accuracy_rows(self) -> list[list]:
        """Table rows (tactics down, defenses across), plot/CSV-ready."""
        rows = [["tactic"] + self.defense_names]
        for t in self.tactic_names:
            rows.append([t] + [self.accuracy[(d, t)] for d in self.defense_names])
        return rows


@dataclass
class BoundCheck:
    name: str
    empirical: float
    bound: float
    sigma: float
    kind: str  # upper | lower | interval
    passed: bool
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "empirical": self.empirical,
            "bound": self.bound,
            "sigma": self.sigma,
            "kind": self.kind,
            "passed": self.passed,
            "details": self.details,
        }


# ---------------------------------------------------------------------------
# attack/defense accuracy matrix


def _cell_rng(root_seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([root_seed, *key]))


def _draw_clean_samples(cfg: ExperimentConfig):
    """Clean inputs that the undefended victim classifies with positive margin."""
    victim = cfg.victim.build()
    rng = _cell_rng(cfg.root_seed, 0xC1EA)
    lo, hi = victim.input_range
    lo, hi = max(lo, -10.0), min(hi, 10.0)
    xs, labels = [], []
    attempts = 0
    while len(xs) < cfg.sample_count:
        x = rng.uniform(lo, hi, size=victim.input_dims)
        s = victim.query(x)
        if margin_loss_predicted(s) > 0:
            xs.append(x)
            labels.append(predicted_label(s))
        attempts += 1
        if attempts > 1000 * cfg.sample_count:
            raise ConfigError("could not draw correctly classified samples")
    return xs, labels


def _run_cell(cfg: ExperimentConfig, d_idx: int, t_idx: int, xs, labels):
    defense = cfg.defenses[d_idx]
    tactic = cfg.tactics[t_idx]
    pre, post = defense.build()
    correct = 0
    successes: list[int | None] = []
    reversals: list[int] = []
    for k, (x0, label) in enumerate(zip(xs, labels)):
        rng = _cell_rng(cfg.root_seed, d_idx + 1, t_idx + 1, k)
        model = DefendedModel(cfg.victim.build(), post, pre)
        if tactic.kind == "none":
            s = model.query(x0, rng)
            correct += int(predicted_label(s) == label)
            successes.append(None)
            continue
        landscape = model.inner if isinstance(model.inner, RobustLandscapeModel) else None
        run = run_tactic(tactic, model, x0, cfg.generator, cfg.budget, rng,
                         landscape=landscape)
        correct += int(run.y0 == label and not run.succeeded)
        successes.append(run.success_query if run.y0 == label else 0)
        reversals.append(run.reversal_count)
    acc = correct / len(xs)
    if reversals:
        rmean = float(np.mean(reversals))
        rstd = float(np.std(reversals))
    else:
        rmean = rstd = 0.0
    return (defense.name, tactic.kind), acc, successes, (rmean, rstd)


def _cell_star(args):
    return _run_cell(*args)


def run_matrix(cfg: ExperimentConfig) -> ExperimentResult:
    """Under-attack accuracy for every (defense, tactic) cell.

    Each cell attacks the same pre-filtered clean samples independently; a
    sample counts as correct when the attacker never drove its reference
    margin negative (and, for noisy pre-processing, the first query still
    returned the clean label).
    """
    xs, labels = _draw_clean_samples(cfg)
    jobs = [(cfg, d, t, xs, labels)
            for d in range(len(cfg.defenses)) for t in range(len(cfg.tactics))]
    if cfg.threads > 1:
        with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
            outputs = list(pool.map(_cell_star, jobs))
    else:
        outputs = [_run_cell(*job) for job in jobs]

    accuracy, success_queries, reversal_stats = {}, {}, {}
    for key, acc, successes, rstats in outputs:
        accuracy[key] = acc
        success_queries[key] = successes
        reversal_stats[key] = rstats
    return ExperimentResult(
        defense_names=[d.name for d in cfg.defenses],
        tactic_names=[t.kind for t in cfg.tactics],
        accuracy=accuracy,
        success_queries=success_queries,
        reversal_stats=reversal_stats,
        budget=cfg.budget,
    )


def asr_curve(success_queries: list[int | None], budget: int) -> np.ndarray:
    """Cumulative success fraction by query index (length budget + 1).

    success_queries holds, per run, the query index of success (None if the
    run never succeeded; 0 counts as an immediate failure of the defense-side
    label, treated as success at index 0).
    """
    if not success_queries:
        raise ValueError("success_queries must be nonempty")
    curve = np.zeros(budget + 1)
    for q in success_queries:
        if q is not None:
            curve[min(q, budget):] += 1
    return curve / len(success_queries)


# ---------------------------------------------------------------------------
# bound verification


def theorem1_bound(tau: float, p: float, eps: float) -> float:
    return p ** math.floor((tau - eps) / eps)


def theorem2_bound(tau: float, p: float, eps: float) -> float:
    return 2.0 * math.floor((tau - 2.0 * eps) / eps) * p * (1.0 - p)


def _identify_low_branch(observed: float, true_margin: float,
                         tau: float, h: float) -> bool:
    lo = loss_low(true_margin, tau, h)
    hi = loss_high(true_margin, tau, h)
    return abs(observed - lo) < abs(observed - hi)


def verify_theorem1(tau: float, h: float, p: float, eps: float, trials: int,
                    rng: np.random.Generator) -> BoundCheck:
    """Empirical success rate of plain minimization against the randomized
    defense on the constructed landscape, checked against the analytic cap.

    A trial ends as trapped once an accepted sample sits on the falling
    branch with true margin >= eps: from there no candidate can be accepted,
    so burning the remaining budget is pointless.
    """
    if eps <= 0 or eps >= tau:
        raise ConfigError("need 0 < eps < tau")
    delta = 0.999 * eps  # per-step true-margin drop, strictly below eps
    steps = math.ceil(tau / delta) + 2
    budget = 4 * steps + 20
    gen = GeneratorSpec(kind="idealized", epsilon_n=math.inf, norm="linf", r=delta)
    post = LossMap("random-dld", random_dld=RandomDldParams(tau, h, p))
    landscape = RobustLandscapeModel(tau, 1.0, dims=4, norm="linf", floor=-1.0)

    def trapped(x, observed):
        lr = landscape.true_margin(x)
        return lr >= eps and _identify_low_branch(observed, lr, tau, h)

    successes = 0
    x0 = landscape.x0
    for _ in range(trials):
        landscape.query_count = 0
        model = DefendedModel(landscape, post)
        run = run_standard(model, x0, gen, budget, rng,
                           landscape=landscape, trap_detector=trapped)
        successes += int(run.succeeded)
    empirical = successes / trials
    bound = theorem1_bound(tau, p, eps)
    sigma = math.sqrt(bound * (1.0 - bound) / trials)
    return BoundCheck(
        name=f"theorem1(tau={tau}, h={h}, p={p}, eps={eps})",
        empirical=empirical, bound=bound, sigma=sigma, kind="upper",
        passed=empirical <= bound + 3.0 * sigma,
        details={"trials": trials, "step": delta},
    )


def verify_theorem2(tau: float, h: float, p: float, eps: float, t: int,
                    trials: int, rng: np.random.Generator) -> BoundCheck:
    """Mean direction reversals on the forced-acceptance chain vs. the lower bound.

    Every candidate on the descending landscape chain is accepted; a reversal
    is implied whenever two consecutive accepted samples land on different
    branches of the randomized map.
    """
    if eps <= 0 or 2 * eps > tau:
        raise ConfigError("need 0 < 2*eps <= tau")
    delta = 0.999 * eps
    n_accepted = math.floor((tau - eps) / eps)
    params = RandomDldParams(tau, h, p)
    counts = np.empty(trials)
    for trial in range(trials):
        prev_low = None
        reversals = 0
        for j in range(1, n_accepted + 1):
            lr = tau - j * delta
            observed = random_dld_map(lr, params, rng)
            is_low = _identify_low_branch(observed, lr, tau, h)
            if prev_low is not None and is_low != prev_low:
                reversals += 1
            prev_low = is_low
        counts[trial] = reversals
    mean = float(counts.mean())
    bound = theorem2_bound(tau, p, eps)
    sigma = float(counts.std() / math.sqrt(trials))
    return BoundCheck(
        name=f"theorem2(tau={tau}, h={h}, p={p}, eps={eps}, t={t})",
        empirical=mean, bound=bound, sigma=sigma, kind="lower",
        passed=mean >= bound - 3.0 * sigma,
        details={"trials": trials, "chain_length": n_accepted},
    )


def branch_proportion(params: DldParams, num_samples: int, K: int,
                      rng: np.random.Generator) -> float:
    """Fraction of uniformly drawn margins over [0, K*tau) routed to the rising branch."""
    if num_samples < 1:
        raise ConfigError("num_samples must be >= 1")
    if K < 1:
        raise ConfigError("K must be a positive integer")
    L = rng.uniform(0.0, K * params.tau, size=num_samples)
    frac = (L - np.floor(L / params.tau) * params.tau) / params.tau
    if not params.s.intervals:
        return 0.0
    los = np.array([lo for lo, _ in params.s.intervals])
    his = np.array([hi for _, hi in params.s.intervals])
    idx = np.searchsorted(his, frac, side="left")
    idx_clipped = np.minimum(idx, len(his) - 1)
    member = (idx < len(his)) & (los[idx_clipped] < frac) & (frac <= his[idx_clipped])
    return float(member.mean())


def two_distinct_expectation(p: float) -> float:
    """Exact mean of the first time both branches have been observed."""
    return 1.0 / (p * (1.0 - p)) - 1.0


def expected_bypass_probes(p: float, trials: int,
                           rng: np.random.Generator) -> tuple[float, float]:
    """Simulate the stopping time until two distinct randomized outputs appear.

    Returns the sample mean and its standard error.
    """
    if not 0.0 < p < 1.0:
        raise ConfigError("p must lie strictly inside (0, 1)")
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    counts = np.empty(trials)
    for i in range(trials):
        first = rng.random() < p
        n = 1
        while (rng.random() < p) == first:
            n += 1
        counts[i] = n + 1
    return float(counts.mean()), float(counts.std() / math.sqrt(trials))


def undefended_query_cost(tau: float, eps: float) -> int:
    """Queries the idealized descent needs on the clean landscape: the initial
    query plus one accepted step per margin decrement."""
    delta = 0.999 * eps
    return math.ceil(tau / delta) + 1


def bypass_demo(tau: float, h: float, p: float, eps: float, trials: int,
                max_probes: int, budget_factor: float,
                rng: np.random.Generator) -> list[BoundCheck]:
    """Full repeat-query bypass story on the randomized-defense landscape.

    Three checks: the mean probe count to two distinct outputs, the success
    rate of the bypass-driven attack at a budget a small multiple of the
    undefended cost, and the (near-zero) success rate of plain minimization
    under the same defense.
    """
    probe_mean, probe_stderr = expected_bypass_probes(p, trials, rng)
    probe_expect = two_distinct_expectation(p)
    checks = [BoundCheck(
        name=f"bypass-probes(p={p})",
        empirical=probe_mean, bound=probe_expect, sigma=probe_stderr,
        kind="interval",
        passed=abs(probe_mean - probe_expect) <= 3.0 * probe_stderr,
        details={"trials": trials},
    )]

    delta = 0.999 * eps
    budget = int(budget_factor * undefended_query_cost(tau, eps))
    gen = GeneratorSpec(kind="idealized", epsilon_n=math.inf, norm="linf", r=delta)
    post = LossMap("random-dld", random_dld=RandomDldParams(tau, h, p))
    landscape = RobustLandscapeModel(tau, 1.0, dims=4, norm="linf", floor=-1.0)
    successes = 0
    for _ in range(trials):
        landscape.query_count = 0
        model = DefendedModel(landscape, post)
        run = run_bypass(model, landscape.x0, gen, budget, max_probes, rng,
                         landscape=landscape)
        successes += int(run.succeeded)
    rate = successes / trials
    sigma = math.sqrt(max(rate * (1.0 - rate), 1e-12) / trials)
    checks.append(BoundCheck(
        name=f"bypass-attack(p={p}, budget={budget})",
        empirical=rate, bound=0.95, sigma=sigma, kind="lower",
        passed=rate > 0.95,
        details={"trials": trials, "budget": budget, "max_probes": max_probes},
    ))

    checks.append(verify_theorem1(tau, h, p, eps, trials, rng))
    return checks


# ---------------------------------------------------------------------------
# hyperparameter sweeps


def sweep(cfg: ExperimentConfig, axis: str, values) -> list[tuple[float, ExperimentResult]]:
    """Re-run the matrix for each value of a dashed-line parameter, all else fixed."""
    if axis not in ("ratio", "step", "tau"):
        raise ConfigError(f"unknown sweep axis {axis!r}")
    values = list(values)
    if not values:
        raise ConfigError("sweep values must be nonempty")
    results = []
    for v in values:
        defenses = []
        for d in cfg.defenses:
            if axis == "tau" and d.variant in ("dld", "random-dld", "aaa-linear", "aaa-sine"):
                d = replace(d, tau=float(v))
            elif axis in ("ratio", "step") and d.variant == "dld":
                step = d.step if d.step is not None else 0.04
                ratio = d.ratio if d.ratio is not None else 0.5
                if axis == "ratio":
                    ratio = float(v)
                else:
                    step = float(v)
                d = replace(d, step=step, ratio=ratio, intervals=None)
            defenses.append(d)
        results.append((float(v), run_matrix(replace(cfg, defenses=tuple(defenses)))))
    return results
