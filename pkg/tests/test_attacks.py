import math

import numpy as np
import pytest

from dashline.attacks import (
    FixedProb,
    GeneratorSpec,
    PreconditionError,
    SaSchedule,
    TacticSpec,
    bypass_random_dld,
    run_bypass,
    run_randomized,
    run_reverse,
    run_standard,
    run_tactic,
    sa_accept_probability,
    square_generate,
)
from dashline.defenses import (
    DldParams,
    LossMap,
    RandomDldParams,
    loss_high,
    loss_low,
)
from dashline.victims import (
    DefendedModel,
    make_robust_landscape,
    make_synthetic_classifier,
)


def undefended(inner):
    return DefendedModel(inner, LossMap())


def landscape_model(L0=6.0, lip=1.0, dims=4, variant="identity", **kw):
    inner = make_robust_landscape(L0, lip, dims)
    if variant == "identity":
        post = LossMap()
    elif variant == "dld":
        post = LossMap("dld", dld=DldParams(**kw))
    else:
        post = LossMap("random-dld", random_dld=RandomDldParams(**kw))
    return inner, DefendedModel(inner, post)


def test_sa_accept_probability():
    assert sa_accept_probability(5.0, 5.0, 10.0) == 1.0
    assert sa_accept_probability(15.0, 5.0, 10.0) == pytest.approx(math.exp(-1.0))
    assert sa_accept_probability(4.0, 5.0, 10.0) > 1.0  # improvements always pass


def test_spec_validation():
    with pytest.raises(ValueError):
        GeneratorSpec(kind="nope")
    with pytest.raises(ValueError):
        GeneratorSpec(kind="idealized", r=0.0)
    with pytest.raises(ValueError):
        FixedProb(1.5)
    with pytest.raises(ValueError):
        SaSchedule(initial_temp=0.0)
    with pytest.raises(ValueError):
        TacticSpec(kind="wat")
    with pytest.raises(ValueError):
        TacticSpec(t=0)


def test_square_generate_respects_budget():
    spec = GeneratorSpec("square-linf", epsilon_n=0.1)
    rng = np.random.default_rng(0)
    x0 = np.full(36, 0.5)
    best = x0.copy()
    for it in range(40):
        cand = square_generate(best, x0, spec, it, 1000, rng, (0.0, 1.0))
        assert np.abs(cand - x0).max() <= 0.1 + 1e-12
        assert cand.min() >= 0.0 and cand.max() <= 1.0
        best = cand


def test_square_generate_stripe_init():
    spec = GeneratorSpec("square-linf", epsilon_n=0.1)
    rng = np.random.default_rng(1)
    x0 = np.full(36, 0.5)
    cand = square_generate(x0, x0, spec, 0, 1000, rng, (0.0, 1.0))
    # iteration 0 pushes every coordinate to the full budget
    np.testing.assert_allclose(np.abs(cand - x0), 0.1)


def test_square_generate_l2_respects_budget():
    spec = GeneratorSpec("square-l2", epsilon_n=0.5, norm="l2")
    rng = np.random.default_rng(2)
    x0 = np.full(36, 0.5)
    best = x0.copy()
    for it in range(40):
        cand = square_generate(best, x0, spec, it, 1000, rng, (0.0, 1.0))
        assert np.linalg.norm(cand - x0) <= 0.5 + 1e-9
        best = cand


def test_attack_requires_positive_budget():
    inner, model = landscape_model()
    with pytest.raises(PreconditionError):
        run_standard(model, np.zeros(4), GeneratorSpec("idealized", r=1.0), 0,
                     np.random.default_rng(0), landscape=inner)


def test_standard_idealized_succeeds_undefended():
    inner, model = landscape_model(L0=6.5, lip=1.0)
    gen = GeneratorSpec("idealized", r=1.0)
    run = run_standard(model, np.zeros(4), gen, 100,
                       np.random.default_rng(0), landscape=inner)
    assert run.succeeded
    # margin 6.5 with per-step drop 1 crosses zero on the 7th step;
    # +1 for the initial query
    assert run.queries_used == 8
    assert run.success_query == 8
    assert run.observed_loss < 0
    assert run.y0 == 0


def test_budget_exhaustion():
    inner, model = landscape_model(L0=6.5, lip=1.0)
    gen = GeneratorSpec("idealized", r=1.0)
    run = run_standard(model, np.zeros(4), gen, 4,
                       np.random.default_rng(0), landscape=inner)
    assert run.outcome == "budget_exhausted"
    assert run.queries_used == 4
    assert not run.succeeded


def test_trace_recording():
    inner, model = landscape_model(L0=3.5, lip=1.0)
    gen = GeneratorSpec("idealized", r=1.0)
    run = run_standard(model, np.zeros(4), gen, 100, np.random.default_rng(0),
                       landscape=inner, record_trace=True)
    # trace excludes the initial reference query
    assert [q for q, _ in run.loss_trace] == list(range(2, run.queries_used + 1))
    losses = [v for _, v in run.loss_trace]
    assert losses == sorted(losses, reverse=True)
    rec = run.to_record(seed=7)
    assert rec["outcome"] == "success" and rec["seed"] == 7


def test_trap_detector_ends_run():
    inner, model = landscape_model(L0=6.0, lip=1.0)
    gen = GeneratorSpec("idealized", r=1.0)
    run = run_standard(model, np.zeros(4), gen, 100, np.random.default_rng(0),
                       landscape=inner, trap_detector=lambda x, loss: True)
    assert run.outcome == "trapped"
    assert not run.succeeded


def test_standard_blocked_by_dld_low_branch():
    # tau = L0 = 6: every idealized step lands on the low branch of the
    # deterministic map whenever its fraction falls outside S, so the
    # observed loss is non-informative and the attack stalls
    inner, model = landscape_model(L0=6.0, lip=1.0, variant="dld")
    gen = GeneratorSpec("idealized", r=0.999)
    run = run_standard(model, np.zeros(4), gen, 60,
                       np.random.default_rng(0), landscape=inner)
    assert not run.succeeded


def test_reverse_counts_reversals():
    # a defense that always reverses order (pure low branch) forces the
    # reverse tactic to flip direction after t stagnant steps
    inner = make_robust_landscape(6.0, 1.0, 4)
    model = DefendedModel(inner, LossMap("random-dld",
                                         random_dld=RandomDldParams(6.0, 0.3, p=0.0)))
    gen = GeneratorSpec("idealized", r=0.5)
    run = run_reverse(model, np.zeros(4), gen, 200, 10, np.random.default_rng(0),
                      landscape=inner)
    assert run.reversal_count >= 1


def test_reverse_beats_monotone_decreasing_defense():
    # sawtooth-like pure reversal: minimizing the observed loss maximizes the
    # true one, so the standard tactic fails while reverse succeeds
    from dashline.defenses import AaaParams
    inner = make_robust_landscape(6.0, 1.0, 4)
    model = DefendedModel(inner, LossMap("aaa-linear", aaa=AaaParams(tau=100.0)))
    gen = GeneratorSpec("idealized", r=1.0)
    std = run_standard(model, np.zeros(4), gen, 100,
                       np.random.default_rng(0), landscape=inner)
    assert not std.succeeded
    rev = run_reverse(model, np.zeros(4), gen, 100, 5,
                      np.random.default_rng(0), landscape=inner)
    assert rev.succeeded


def test_randomized_fixed_prob_succeeds():
    inner, model = landscape_model(L0=3.5, lip=1.0)
    gen = GeneratorSpec("idealized", r=1.0)
    run = run_randomized(model, np.zeros(4), gen, 100, FixedProb(0.5),
                         np.random.default_rng(0), landscape=inner)
    assert run.succeeded


def test_randomized_sa_succeeds():
    inner, model = landscape_model(L0=3.5, lip=1.0)
    gen = GeneratorSpec("idealized", r=1.0)
    run = run_randomized(model, np.zeros(4), gen, 100, SaSchedule(),
                         np.random.default_rng(0), landscape=inner)
    assert run.succeeded


def test_bypass_probe_recovers_high_branch():
    inner, model = landscape_model(L0=7.0, lip=1.0, variant="random",
                                   tau=6.0, h=0.3, p=0.5)
    res = bypass_random_dld(model, np.zeros(4), 0, 50, np.random.default_rng(0))
    assert res.conclusive and not res.flipped
    assert res.recovered_high == pytest.approx(loss_high(7.0, 6.0, 0.3))
    assert res.probes_used >= 2


def test_bypass_probe_inconclusive_on_deterministic():
    inner, model = landscape_model(L0=7.0, lip=1.0, variant="dld")
    res = bypass_random_dld(model, np.zeros(4), 0, 10, np.random.default_rng(0))
    assert not res.conclusive
    assert res.probes_used == 10


def test_bypass_attack_beats_random_dld():
    inner, model = landscape_model(L0=6.5, lip=1.0, variant="random",
                                   tau=6.0, h=0.3, p=0.5)
    gen = GeneratorSpec("idealized", r=1.0)
    run = run_bypass(model, np.zeros(4), gen, 200, 50,
                     np.random.default_rng(0), landscape=inner)
    assert run.succeeded


def test_run_tactic_dispatch():
    inner, model = landscape_model(L0=3.5, lip=1.0)
    gen = GeneratorSpec("idealized", r=1.0)
    for kind in ("standard", "reverse", "explore", "sa"):
        run = run_tactic(TacticSpec(kind), model, np.zeros(4), gen, 100,
                         np.random.default_rng(0), landscape=inner)
        assert run.succeeded, kind
    # bypass needs a randomized defense to find the rising branch
    inner_r, model_r = landscape_model(L0=3.5, lip=1.0, variant="random",
                                       tau=6.0, h=0.3, p=0.5)
    run = run_tactic(TacticSpec("bypass"), model_r, np.zeros(4), gen, 200,
                     np.random.default_rng(0), landscape=inner_r)
    assert run.succeeded
    with pytest.raises(PreconditionError):
        run_tactic(TacticSpec("none"), model, np.zeros(4), gen, 100,
                   np.random.default_rng(0), landscape=inner)


def test_square_attack_on_synthetic():
    inner = make_synthetic_classifier(seed=0)
    model = undefended(inner)
    gen = GeneratorSpec("square-linf", epsilon_n=0.2)
    rng = np.random.default_rng(3)
    # find a confidently classified start
    x0 = rng.uniform(0.2, 0.8, size=32)
    run = run_standard(model, x0, gen, 300, rng)
    assert run.succeeded
    assert np.abs(run.best_x - x0).max() <= 0.2 + 1e-12


def test_attack_is_deterministic_given_seed():
    inner = make_synthetic_classifier(seed=0)
    gen = GeneratorSpec("square-linf", epsilon_n=0.1)
    x0 = np.full(32, 0.5)
    runs = []
    for _ in range(2):
        model = undefended(make_synthetic_classifier(seed=0))
        runs.append(run_standard(model, x0, gen, 200, np.random.default_rng(42)))
    assert runs[0].queries_used == runs[1].queries_used
    assert runs[0].observed_loss == runs[1].observed_loss
    np.testing.assert_array_equal(runs[0].best_x, runs[1].best_x)
