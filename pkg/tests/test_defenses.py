import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dashline.defenses import (
    AaaParams,
    DldParams,
    IntervalSet,
    LossMap,
    RandomDldParams,
    RndParams,
    aaa_linear_map,
    aaa_sine_map,
    apply_postprocess,
    build_interval_set,
    default_interval_set,
    dld_map,
    loss_bias,
    loss_high,
    loss_low,
    random_dld_map,
    rnd_preprocess,
)
from dashline.margin import margin_loss_predicted, predicted_label

finite_loss = st.floats(min_value=-50.0, max_value=50.0,
                        allow_nan=False, allow_infinity=False)
tau_st = st.floats(min_value=0.5, max_value=20.0)
h_open = st.floats(min_value=0.01, max_value=0.99)


# --- interval sets ---

def test_interval_set_membership_half_open():
    s = IntervalSet(((0.1, 0.2), (0.3, 0.4)))
    assert 0.2 in s
    assert 0.1 not in s
    assert 0.15 in s
    assert 0.35 in s
    assert 0.25 not in s
    assert 0.4 in s
    assert 0.4 + 1e-9 not in s


def test_interval_set_validation():
    with pytest.raises(ValueError):
        IntervalSet(((0.2, 0.1),))
    with pytest.raises(ValueError):
        IntervalSet(((0.1, 0.3), (0.2, 0.4)))
    with pytest.raises(ValueError):
        IntervalSet(((-0.1, 0.2),))


def test_build_interval_set_measure():
    for step in (0.04, 0.1, 0.2):
        for ratio in (0.1, 0.25, 0.5, 0.9, 1.0):
            s = build_interval_set(step, ratio)
            assert s.measure() == pytest.approx(ratio, abs=1e-12)
    assert build_interval_set(0.04, 0.0).measure() == 0.0


def test_build_interval_set_shape():
    s = build_interval_set(0.1, 0.5)
    assert s.intervals[0] == pytest.approx((0.05, 0.1))
    assert s.intervals[-1][1] == pytest.approx(1.0)
    assert len(s.intervals) == 10
    # ratio 1 collapses to a single interval covering (0, 1]
    full = build_interval_set(0.1, 1.0)
    assert len(full.intervals) == 1
    assert full.measure() == pytest.approx(1.0)


def test_default_interval_set():
    s = default_interval_set()
    assert len(s.intervals) == 25
    assert s.intervals[0] == (0.0, 0.02)
    assert s.intervals[-1] == pytest.approx((0.96, 0.98))
    assert s.measure() == pytest.approx(0.5)
    assert 0.01 in s
    assert 0.03 not in s
    assert 0.05 in s
    assert 0.99 not in s


def test_default_set_complements_built_set():
    # the two published parameterizations of S are complements of each other
    default = default_interval_set()
    built = build_interval_set(0.04, 0.5)
    rng = np.random.default_rng(3)
    for x in rng.uniform(1e-6, 1.0 - 1e-6, size=2000):
        assert (x in default) != (x in built)


# --- branch maps ---

def test_loss_bias_values():
    assert loss_bias(7.0, 6.0) == 6.0
    assert loss_bias(5.9, 6.0) == 0.0
    assert loss_bias(-0.1, 6.0) == -6.0
    assert loss_bias(12.0, 6.0) == 12.0


def test_branch_values_at_reference_point():
    # tau = 6, h = 0.3, L = 7: bias 6, offset 1
    assert loss_high(7.0, 6.0, 0.3) == pytest.approx(8.5)
    assert loss_low(7.0, 6.0, 0.3) == pytest.approx(7.5)


@given(finite_loss, tau_st, st.floats(min_value=0.0, max_value=1.0))
def test_branches_stay_within_interval(L, tau, h):
    b = loss_bias(L, tau)
    assert b <= L < b + tau
    for v in (loss_high(L, tau, h), loss_low(L, tau, h)):
        assert b - 1e-9 <= v <= b + tau + 1e-9


@given(finite_loss, finite_loss, tau_st, h_open)
def test_low_never_exceeds_high_same_bias(L1, L2, tau, h):
    if loss_bias(L1, tau) != loss_bias(L2, tau):
        return
    assert loss_low(L1, tau, h) <= loss_high(L2, tau, h) + 1e-9


same_bias_pair = st.tuples(
    st.integers(min_value=-3, max_value=5),
    st.floats(min_value=0.0, max_value=1.0, exclude_max=True),
    st.floats(min_value=0.0, max_value=1.0, exclude_max=True),
)


def _pair(bias_k, f1, f2, tau):
    """Two margins in the same tau-interval, separated enough for floats."""
    f1, f2 = sorted((f1, f2))
    L1, L2 = (bias_k + f1) * tau, (bias_k + f2) * tau
    if L2 - L1 < 1e-9 * tau or loss_bias(L1, tau) != loss_bias(L2, tau):
        return None
    return L1, L2


@given(same_bias_pair, tau_st, h_open)
def test_low_branch_reverses_order(pair, tau, h):
    got = _pair(*pair, tau)
    if got is None:
        return
    L1, L2 = got
    assert loss_low(L1, tau, h) > loss_low(L2, tau, h)


@given(same_bias_pair, tau_st, h_open)
def test_high_branch_preserves_order(pair, tau, h):
    got = _pair(*pair, tau)
    if got is None:
        return
    L1, L2 = got
    assert loss_high(L1, tau, h) < loss_high(L2, tau, h)


@given(finite_loss, tau_st, st.floats(min_value=0.0, max_value=1.0))
def test_distortion_bounded_by_tau(L, tau, h):
    params = DldParams(tau, h, default_interval_set())
    assert abs(L - dld_map(L, params)) <= tau + 1e-9
    assert abs(L - loss_high(L, tau, h)) <= tau + 1e-9
    assert abs(L - loss_low(L, tau, h)) <= tau + 1e-9


def test_dld_map_branch_selection():
    params = DldParams(6.0, 0.3, default_interval_set())
    # frac 0.01 is inside S -> high branch
    assert dld_map(0.06, params) == pytest.approx(loss_high(0.06, 6.0, 0.3))
    # frac 0.03 is outside S -> low branch
    assert dld_map(0.18, params) == pytest.approx(loss_low(0.18, 6.0, 0.3))


def test_random_dld_map_extremes():
    rng = np.random.default_rng(0)
    hi = RandomDldParams(6.0, 0.3, p=1.0)
    lo = RandomDldParams(6.0, 0.3, p=0.0)
    for L in (-3.0, 0.5, 7.0, 13.2):
        assert random_dld_map(L, hi, rng) == pytest.approx(loss_high(L, 6.0, 0.3))
        assert random_dld_map(L, lo, rng) == pytest.approx(loss_low(L, 6.0, 0.3))


def test_random_dld_branch_frequency():
    rng = np.random.default_rng(1)
    params = RandomDldParams(6.0, 0.3, p=0.3)
    L = 2.0
    hi = loss_high(L, 6.0, 0.3)
    n = 20000
    hits = sum(random_dld_map(L, params, rng) == hi for _ in range(n))
    assert hits / n == pytest.approx(0.3, abs=0.01)


def test_aaa_linear_values():
    assert aaa_linear_map(7.0, 6.0) == pytest.approx(11.0)
    assert aaa_linear_map(2.0, 6.0) == pytest.approx(4.0)
    assert aaa_linear_map(0.0, 6.0) == pytest.approx(6.0)


@given(finite_loss, tau_st)
def test_aaa_linear_slope(L, tau):
    # strictly decreasing with slope -1 inside each interval
    b = loss_bias(L, tau)
    d = min(0.25 * tau, (b + tau - L) / 2)
    if d <= 1e-6:
        return
    assert aaa_linear_map(L + d, tau) == pytest.approx(aaa_linear_map(L, tau) - d)


def test_aaa_sine_fixed_point_at_midpoint():
    for tau in (2.0, 6.0, 9.0):
        mid = tau / 2
        assert aaa_sine_map(mid, tau, 0.7) == pytest.approx(mid)


@given(finite_loss, tau_st, st.floats(min_value=0.1, max_value=1.0))
def test_aaa_sine_distortion_bounded(L, tau, alpha):
    assert abs(aaa_sine_map(L, tau, alpha) - L) <= alpha * tau + 1e-9


# --- parameter validation ---

def test_param_validation():
    with pytest.raises(ValueError):
        DldParams(tau=-1.0)
    with pytest.raises(ValueError):
        DldParams(h=1.5)
    with pytest.raises(ValueError):
        RandomDldParams(p=-0.2)
    with pytest.raises(ValueError):
        AaaParams(tau=0.0)
    with pytest.raises(ValueError):
        RndParams(nu=-0.1)
    with pytest.raises(ValueError):
        LossMap("no-such-variant")
    with pytest.raises(ValueError):
        LossMap("dld")  # missing params


def test_loss_map_dispatch():
    m = LossMap("dld", dld=DldParams())
    assert m(7.0) == dld_map(7.0, DldParams())
    assert not m.is_random
    r = LossMap("random-dld", random_dld=RandomDldParams())
    assert r.is_random
    with pytest.raises(ValueError):
        r(7.0)  # needs a random stream
    assert LossMap()(3.3) == 3.3


# --- score adjustment ---

def test_apply_postprocess_identity_copies():
    s = np.array([3.0, 1.0, 0.5])
    out = apply_postprocess(s, LossMap())
    assert out is not s
    np.testing.assert_array_equal(out, s)


def test_apply_postprocess_rewrites_only_top():
    s = np.array([0.5, 3.0, 1.0])
    m = LossMap("dld", dld=DldParams())
    out = apply_postprocess(s, m)
    assert out[0] == s[0] and out[2] == s[2]
    assert out[1] == pytest.approx(1.0 + dld_map(2.0, DldParams()))


@settings(max_examples=300)
@given(st.lists(st.floats(min_value=-20, max_value=20), min_size=2, max_size=10),
       st.sampled_from(["dld", "aaa-linear", "aaa-sine"]))
def test_apply_postprocess_preserves_label(scores, variant):
    s = np.asarray(scores)
    m = LossMap(variant, dld=DldParams(), aaa=AaaParams())
    out = apply_postprocess(s, m)
    assert predicted_label(out) == predicted_label(s)
    # the defended margin equals the mapped margin
    assert margin_loss_predicted(out) == pytest.approx(
        m(margin_loss_predicted(s)), abs=1e-9)


def test_rnd_preprocess():
    rng = np.random.default_rng(5)
    x = np.full(100, 0.5)
    noisy = rnd_preprocess(x, RndParams(0.05), rng, (0.0, 1.0))
    assert noisy.shape == x.shape
    assert not np.array_equal(noisy, x)
    assert noisy.min() >= 0.0 and noisy.max() <= 1.0
    # zero noise returns an unmodified copy
    same = rnd_preprocess(x, RndParams(0.0), rng, (0.0, 1.0))
    np.testing.assert_array_equal(same, x)
    assert same is not x


def test_rnd_preprocess_clamps():
    rng = np.random.default_rng(6)
    x = np.ones(50)
    noisy = rnd_preprocess(x, RndParams(0.5), rng, (0.0, 1.0))
    assert noisy.max() <= 1.0
