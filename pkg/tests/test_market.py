import itertools
import math
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spectrum_oligopoly.errors import UndefinedStateError, ValidationError
from spectrum_oligopoly.market import (
    DemandModel,
    MarketParams,
    PenaltyFamily,
    additive_cubic,
    check_assumption1,
    expected_payoff_at,
    family_from_name,
    keep_prob,
    keep_prob_inverse,
    penalty_cdf,
    penalty_quantile,
    quadratic_cubic,
    sample_penalty,
    solve_single_location,
    win_prob,
    win_prob_inverse,
)


def brute_win_prob(x, l, pmf):
    """Enumerate every competitor activity pattern; win if active count >= demand."""
    total = 0.0
    for pattern in itertools.product((0, 1), repeat=l - 1):
        k = sum(pattern)
        weight = x**k * (1 - x) ** (l - 1 - k)
        total += weight * sum(p for idx, p in enumerate(pmf) if idx + 1 <= k)
    return total


def test_win_prob_small_case():
    # two competitors, one buyer: lose only if both are idle
    params = MarketParams.create(l=3, n=1, v=10, c=0, m=1)
    assert win_prob(0.5, params) == pytest.approx(0.75, abs=1e-15)
    assert keep_prob(0.5, params) == pytest.approx(0.25, abs=1e-15)


@settings(max_examples=60, deadline=None)
@given(
    l=st.integers(2, 8),
    x=st.floats(0, 1),
    raw=st.lists(st.floats(0.01, 1), min_size=1, max_size=8),
)
def test_win_prob_matches_enumeration(l, x, raw):
    pmf = list(np.asarray(raw) / sum(raw))  # pmf[k] is P(demand = k + 1)
    params = MarketParams.create(l=l, n=1, v=10, c=0, demand_pmf=pmf)
    expected = brute_win_prob(x, l, pmf)
    assert win_prob(x, params) == pytest.approx(expected, abs=1e-12)
    assert win_prob(x, params) + keep_prob(x, params) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(l=st.integers(2, 30), m=st.integers(1, 30), y=st.floats(0, 1))
def test_win_prob_inverse_roundtrip(l, m, y):
    params = MarketParams.create(l=l, n=1, v=10, c=0, m=m)
    if params.degenerate:
        return
    y = y * win_prob(1.0, params)
    x = win_prob_inverse(y, params)
    assert 0.0 <= x <= 1.0
    assert win_prob(x, params) == pytest.approx(y, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(l=st.integers(3, 25), m=st.integers(1, 10), a=st.floats(0, 1), b=st.floats(0, 1))
def test_win_prob_monotone(l, m, a, b):
    params = MarketParams.create(l=l, n=1, v=10, c=0, m=m)
    lo, hi = sorted((a, b))
    assert win_prob(lo, params) <= win_prob(hi, params) + 1e-15


def test_keep_prob_precision_near_zero():
    params = MarketParams.create(l=21, n=1, v=10, c=0, m=10)
    # W is tiny here; summing the survival side keeps relative accuracy
    x = 0.999
    direct = keep_prob(x, params)
    assert 0 < direct < 1e-20
    assert keep_prob_inverse(direct, params) == pytest.approx(x, rel=1e-6)


def test_win_prob_rejects_out_of_range():
    params = MarketParams.create(l=3, n=1, v=10, c=0, m=1)
    with pytest.raises(ValidationError):
        win_prob(1.2, params)
    # demand 2 or 3 against two competitors: w tops out at 0.5
    with pytest.raises(ValidationError):
        win_prob_inverse(0.75, MarketParams.create(l=3, n=1, v=10, c=0, demand_pmf=[0.0, 0.5, 0.5]))


def test_demand_model_validation():
    with pytest.raises(ValidationError):
        DemandModel.from_pmf([0.5, 0.4])
    with pytest.raises(ValidationError):
        DemandModel.fixed(-1)
    d = DemandModel.from_pmf({2: 0.5, 4: 0.5})
    assert not d.is_fixed
    assert d.cdf(3) == pytest.approx(0.5)
    assert DemandModel.fixed(3).m == 3


def test_market_params_validation():
    with pytest.raises(ValidationError):
        MarketParams.create(l=1, n=1, v=10, c=0, m=1)
    with pytest.raises(ValidationError):
        MarketParams.create(l=3, n=1, v=10, c=-1, m=1)
    with pytest.raises(ValidationError):
        solve_single_location(MarketParams.create(l=3, n=1, v=1, c=2, m=1), additive_cubic(1), (0.5,))
    assert MarketParams.create(l=3, n=1, v=10, c=0, m=5).degenerate


def test_demand_sampling_frequencies():
    d = DemandModel.from_pmf([0.0, 0.25, 0.75])
    draws = d.sample(np.random.default_rng(4), 40_000)
    assert np.mean(draws == 2) == pytest.approx(0.25, abs=0.01)


# 19 competitors, ten buyers, three states at 0.2 each
REF = dict(l=20, m=10, n=3, v=100, c=1)
REF_L = (22.864012, 17.345002, 17.276555)


def ref_solution():
    params = MarketParams.create(**REF)
    family = additive_cubic(3)
    return params, family, solve_single_location(params, family, (0.2, 0.2, 0.2))


def test_reference_support_endpoints():
    t0 = time.perf_counter()
    params, family, sol = ref_solution()
    assert time.perf_counter() - t0 < 1.0
    assert sol.L == pytest.approx(REF_L, abs=1e-5)
    assert sol.U[0] == 100
    assert sol.U[1] == pytest.approx(sol.L[0], abs=1e-12)
    assert sol.U[2] == pytest.approx(sol.L[1], abs=1e-12)


def test_recursion_oracle():
    # independent downward recursion using the enumerated win probability
    params, family, sol = ref_solution()
    pmf = [0.0] * 9 + [1.0]
    W = lambda x: 1.0 - brute_win_prob(x, 20, pmf)
    alpha = (0.2, 0.2, 0.2)
    upper = 100.0
    for j in range(1, 4):
        above = sum(alpha[j - 1:])
        below = sum(alpha[j:])
        p = (upper + j**3 - 1) * W(above) + 1
        lower = (p - 1) / W(below) + 1 - j**3
        assert sol.p[j - 1] == pytest.approx(p, rel=1e-9)
        assert sol.L[j - 1] == pytest.approx(lower, rel=1e-9)
        upper = lower


def test_payoff_constant_on_support():
    params, family, sol = ref_solution()
    for j in (1, 2, 3):
        L, U = sol.support(j)
        vals = [expected_payoff_at(x, j, sol, params, family) for x in np.linspace(L, U, 50)]
        target = sol.p[j - 1] - params.c
        assert max(abs(v - target) for v in vals) < 1e-9 * target


def test_cdf_and_quantile_agree():
    params, family, sol = ref_solution()
    for j in (1, 2, 3):
        L, U = sol.support(j)
        assert penalty_cdf(L, j, sol, params, family) == pytest.approx(0.0, abs=1e-9)
        assert penalty_cdf(U, j, sol, params, family) == pytest.approx(1.0, abs=1e-9)
        # state 3 starts where W is within 1e-12 of one, so inverting it is ill-conditioned
        tol = 1e-5 if j == 3 else 1e-8
        for u in (0.1, 0.37, 0.5, 0.9):
            x = penalty_quantile(u, j, sol, params, family)
            assert penalty_cdf(x, j, sol, params, family) == pytest.approx(u, abs=tol)


def test_sampled_penalties_follow_cdf():
    params, family, sol = ref_solution()
    rng = np.random.default_rng(11)
    draws = np.sort(sample_penalty(2, sol, params, family, rng, 20_000))
    L, U = sol.support(2)
    assert draws.min() >= L and draws.max() <= U
    grid = np.linspace(L, U, 9)[1:-1]
    for x in grid:
        assert np.mean(draws <= x) == pytest.approx(penalty_cdf(x, 2, sol, params, family), abs=0.015)


def test_unoffered_state_rejected():
    params = MarketParams.create(**REF)
    sol = solve_single_location(params, additive_cubic(3), (0.2, 0.0, 0.2))
    with pytest.raises(UndefinedStateError):
        penalty_cdf(50.0, 2, sol, params, additive_cubic(3))


def test_degenerate_market_prices_at_v():
    params = MarketParams.create(l=3, n=2, v=50, c=1, m=4)
    sol = solve_single_location(params, additive_cubic(2), (0.3, 0.3))
    assert sol.degenerate
    assert sol.L == (50, 50)


def test_offer_probabilities_summing_to_one_warn():
    params = MarketParams.create(l=5, n=2, v=50, c=1, m=2)
    with pytest.warns(UserWarning):
        solve_single_location(params, additive_cubic(2), (0.5, 0.5))


@settings(max_examples=40, deadline=None)
@given(
    l=st.integers(3, 15),
    m=st.integers(1, 6),
    raw=st.lists(st.floats(0.02, 1), min_size=3, max_size=3),
    scale=st.floats(0.1, 0.95),
    quad=st.booleans(),
)
def test_support_nesting(l, m, raw, scale, quad):
    alpha = tuple(scale * np.asarray(raw) / sum(raw))
    params = MarketParams.create(l=l, n=3, v=100, c=1, m=m)
    family = quadratic_cubic(3) if quad else additive_cubic(3)
    sol = solve_single_location(params, family, alpha)
    if sol.degenerate:
        return
    for j in range(1, 3):
        assert sol.U[j] == pytest.approx(sol.L[j - 1], abs=1e-12)
    for j in range(1, 4):
        assert sol.L[j - 1] <= sol.U[j - 1] + 1e-12
    mid = 0.5 * (sol.L[1] + sol.U[1])
    assert expected_payoff_at(mid, 2, sol, params, family) == pytest.approx(sol.p[1] - 1, rel=1e-8)


def test_builtin_families_pass_ratio_check():
    for name in ("additive-cubic", "quadratic-cubic"):
        fam = family_from_name(name, 3)
        report = check_assumption1(fam, 1.0, samples=2000, rng=np.random.default_rng(2))
        assert report.passed and report.checked == 2000


def test_ratio_check_catches_violation():
    fam = PenaltyFamily("bad", 2, lambda i, p: p - 5 if i == 1 else (p - 5) / 2,
                        lambda i, x: x + 5 if i == 1 else 2 * x + 5)
    grid = [(x, y, 1, 2) for y in (1.0, 2.0, 3.0) for x in (y + 1, y + 4)]
    report = check_assumption1(fam, 1.0, grid=grid)
    assert not report.passed
    assert report.violation == grid[0]


def test_family_lookup():
    with pytest.raises(ValidationError):
        family_from_name("linear-nonsense", 3)
    fam = quadratic_cubic(2)
    assert fam.f(2, fam.g(2, 7.0)) == pytest.approx(7.0)
    assert math.isclose(additive_cubic(3).g(3, 30.0), 3.0)
